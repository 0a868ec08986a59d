//! Sliding-window inference and connected-component postprocessing.

use std::collections::VecDeque;

use crate::cohort::{CtVolume, LabelMap, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::unet3d::{Network, Tensor};
use crate::volume::Volume;

/// Window starts along one axis: multiples of `window / 2` while the window
/// fits strictly inside, then a final start clamped to `extent - window`.
pub fn window_starts(extent: usize, window: usize) -> Vec<usize> {
    assert!(extent >= window && window > 0);
    let stride = (window / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + window < extent).collect();
    starts.push(extent - window);
    starts.dedup();
    starts
}

/// Separable Gaussian centre weight with σ = window / 8 per axis.
pub fn gaussian_importance(window: [usize; 3]) -> Volume<f32> {
    let axis = |n: usize| -> Vec<f64> {
        let sigma = n as f64 / 8.0;
        let c = (n as f64 - 1.0) / 2.0;
        (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect()
    };
    let (gz, gy, gx) = (axis(window[0]), axis(window[1]), axis(window[2]));
    Volume::from_fn(window, |z, y, x| (gz[z] * gy[y] * gx[x]) as f32)
}

/// Fuses per-window class probabilities over the whole volume. `predict`
/// maps one window of intensities to `NUM_CLASSES` probability channels
/// (channel-major, window voxel order). Volumes smaller than the window are
/// padded symmetrically with their minimum and the result is cropped back.
pub fn sliding_window_probs(
    image: &Volume<f32>,
    window: [usize; 3],
    mut predict: impl FnMut(&Volume<f32>) -> Result<Vec<f32>>,
) -> Result<Vec<Volume<f32>>> {
    if window.contains(&0) {
        return Err(Error::invalid("window must be non-empty"));
    }
    let dims = image.dims();
    let fill = image.as_slice().iter().copied().fold(f32::INFINITY, f32::min);
    let padded_dims: [usize; 3] = std::array::from_fn(|k| dims[k].max(window[k]));
    let offset: [usize; 3] = std::array::from_fn(|k| (padded_dims[k] - dims[k]) / 2);
    let padded = image.crop_padded(std::array::from_fn(|k| -(offset[k] as isize)), padded_dims, fill);

    let weight = gaussian_importance(window);
    let nw = weight.len();
    let mut acc = vec![vec![0.0f32; padded.len()]; NUM_CLASSES];
    let mut norm = vec![0.0f32; padded.len()];
    let starts: Vec<Vec<usize>> = (0..3).map(|k| window_starts(padded_dims[k], window[k])).collect();
    for &sz in &starts[0] {
        for &sy in &starts[1] {
            for &sx in &starts[2] {
                let patch = padded.crop_padded([sz as isize, sy as isize, sx as isize], window, fill);
                let probs = predict(&patch)?;
                if probs.len() != NUM_CLASSES * nw {
                    return Err(Error::Shape(format!("predictor returned {} values", probs.len())));
                }
                for z in 0..window[0] {
                    for y in 0..window[1] {
                        let src = (z * window[1] + y) * window[2];
                        let dst = padded.index(sz + z, sy + y, sx);
                        for x in 0..window[2] {
                            let g = weight.as_slice()[src + x];
                            norm[dst + x] += g;
                            for (c, a) in acc.iter_mut().enumerate() {
                                a[dst + x] += g * probs[c * nw + src + x];
                            }
                        }
                    }
                }
            }
        }
    }
    let start = offset.map(|o| o as isize);
    acc.into_iter()
        .map(|a| {
            let fused: Vec<f32> = a.iter().zip(&norm).map(|(v, n)| v / n).collect();
            Ok(Volume::new(padded_dims, fused)?.crop_padded(start, dims, 0.0))
        })
        .collect()
}

/// Per-voxel argmax; ties go to the lower label.
pub fn argmax_labels(probs: &[Volume<f32>]) -> Volume<u8> {
    let dims = probs[0].dims();
    let mut out = Volume::filled(dims, 0u8);
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        let mut best = 0;
        for c in 1..probs.len() {
            if probs[c].as_slice()[i] > probs[best].as_slice()[i] {
                best = c;
            }
        }
        *o = best as u8;
    }
    out
}

/// Sliding-window segmentation of a preprocessed volume with the network.
pub fn sliding_window_predict(net: &Network<f32>, image: &CtVolume, window: [usize; 3]) -> Result<LabelMap> {
    net.check_input(window, 1)?;
    let probs = sliding_window_probs(&image.voxels, window, |patch| {
        let x = Tensor::new([1, 1, window[0], window[1], window[2]], patch.as_slice().to_vec())?;
        Ok(net.forward(&x)?.probs.data)
    })?;
    let mut out = LabelMap::new(image.case_id.clone(), 0, argmax_labels(&probs), image.spacing)?;
    out.origin = image.origin;
    Ok(out)
}

/// 26-connected components of `mask` as voxel index lists, in order of
/// first appearance.
pub fn connected_components(mask: &Volume<bool>) -> Vec<Vec<usize>> {
    let [d, h, w] = mask.dims();
    let m = mask.as_slice();
    let mut seen = vec![false; m.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..m.len() {
        if !m[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let [z, y, x] = mask.coords(i);
            for nz in z.saturating_sub(1)..=(z + 1).min(d - 1) {
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let j = (nz * h + ny) * w + nx;
                        if m[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Keeps the two largest 26-connected foreground components (by voxel
/// count, earlier component wins ties); everything else becomes background.
pub fn postprocess(prediction: &LabelMap) -> LabelMap {
    let fg = prediction.voxels.map(|l| l > 0);
    let mut comps = connected_components(&fg);
    comps.sort_by(|a, b| b.len().cmp(&a.len()));
    let mut out = prediction.clone();
    for comp in comps.iter().skip(2) {
        for &i in comp {
            out.voxels.as_mut_slice()[i] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_examples() {
        assert_eq!(window_starts(96, 96), vec![0]);
        assert_eq!(window_starts(138, 96), vec![0, 42]);
        assert_eq!(window_starts(160, 160), vec![0]);
        assert_eq!(window_starts(250, 96), vec![0, 48, 96, 144, 154]);
        assert_eq!(window_starts(192, 96), vec![0, 48, 96]);
    }

    #[test]
    fn gaussian_peaks_in_centre() {
        let g = gaussian_importance([8, 8, 8]);
        assert!(g.get(3, 3, 3) > g.get(0, 0, 0));
        assert_eq!(g.get(3, 3, 3), g.get(4, 4, 4));
    }

    #[test]
    fn constant_predictor_is_unchanged_by_fusion() {
        let img = Volume::from_fn([20, 11, 37], |z, y, x| (z + y + x) as f32);
        let window = [8, 16, 16];
        let nw = 8 * 16 * 16;
        let probs = sliding_window_probs(&img, window, |_| {
            let mut p = vec![0.1f32; 4 * nw];
            p[2 * nw..3 * nw].iter_mut().for_each(|v| *v = 0.7);
            Ok(p)
        })
        .unwrap();
        assert_eq!(probs[0].dims(), [20, 11, 37]);
        for v in probs[2].as_slice() {
            assert!((v - 0.7).abs() < 1e-6);
        }
        assert!(argmax_labels(&probs).as_slice().iter().all(|&l| l == 2));
    }

    #[test]
    fn window_content_lines_up_with_the_volume() {
        // predictor echoes its input into channel 1; fused result must equal the image
        let img = Volume::from_fn([12, 20, 9], |z, y, x| (z * 100 + y * 10 + x) as f32);
        let window = [8, 8, 8];
        let probs = sliding_window_probs(&img, window, |p| {
            let mut out = vec![0.0f32; 4 * p.len()];
            out[p.len()..2 * p.len()].copy_from_slice(p.as_slice());
            Ok(out)
        })
        .unwrap();
        for (a, b) in probs[1].as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-2 * b.abs().max(1.0));
        }
    }

    fn blob(v: &mut Volume<u8>, z0: usize, y0: usize, x0: usize, size: [usize; 3], label: u8) {
        for z in z0..z0 + size[0] {
            for y in y0..y0 + size[1] {
                for x in x0..x0 + size[2] {
                    v.set(z, y, x, label);
                }
            }
        }
    }

    #[test]
    fn postprocess_drops_the_smallest_blob() {
        let mut v = Volume::filled([12, 12, 30], 0u8);
        blob(&mut v, 0, 0, 0, [5, 5, 4], 1); // 100
        blob(&mut v, 0, 0, 10, [4, 4, 5], 2); // 80
        blob(&mut v, 8, 8, 25, [1, 1, 5], 3); // 5
        let lm = LabelMap::new("c", 0, v.clone(), [1.0; 3]).unwrap();
        let out = postprocess(&lm);
        let sizes: Vec<usize> = connected_components(&v.map(|l| l > 0)).iter().map(|c| c.len()).collect();
        assert_eq!(sizes, vec![100, 80, 5]);
        for i in 0..v.len() {
            let [z, y, x] = v.coords(i);
            if z == 8 && y == 8 && x >= 25 {
                assert_eq!(out.voxels.as_slice()[i], 0);
            } else {
                assert_eq!(out.voxels.as_slice()[i], v.as_slice()[i]);
            }
        }
        let single = LabelMap::new("c", 0, Volume::filled([3, 3, 3], 1), [1.0; 3]).unwrap();
        assert_eq!(postprocess(&single), single);
        let empty = LabelMap::new("c", 0, Volume::filled([3, 3, 3], 0), [1.0; 3]).unwrap();
        assert_eq!(postprocess(&empty), empty);
    }

    #[test]
    fn diagonal_neighbours_are_connected() {
        let mut v = Volume::filled([3, 3, 3], false);
        v.set(0, 0, 0, true);
        v.set(1, 1, 1, true);
        v.set(2, 2, 2, true);
        assert_eq!(connected_components(&v).len(), 1);
    }
}
