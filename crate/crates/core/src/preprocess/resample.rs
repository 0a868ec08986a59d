use std::f64::consts::PI;

use crate::cohort::{same_spacing, CtVolume, LabelMap, Spacing};
use crate::error::{Error, Result};
use crate::volume::Volume;

const LANCZOS_A: f64 = 3.0;

/// Windowed sinc with a three-lobe window.
pub fn lanczos3(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if t.abs() >= LANCZOS_A {
        0.0
    } else {
        let pt = PI * t;
        LANCZOS_A * pt.sin() * (pt / LANCZOS_A).sin() / (pt * pt)
    }
}

fn check_target(target: Spacing) -> Result<()> {
    if target.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!("target spacing must be positive, got {target:?}")))
    }
}

/// `round(n * spacing / target)` per axis, at least 1.
pub fn resampled_shape(dims: [usize; 3], spacing: Spacing, target: Spacing) -> [usize; 3] {
    std::array::from_fn(|k| ((dims[k] as f64 * spacing[k] / target[k]).round() as usize).max(1))
}

/// Input coordinate of output voxel `j`; voxel centres of the two grids
/// share the same physical extent.
#[inline]
fn source_coord(j: usize, ratio: f64) -> f64 {
    (j as f64 + 0.5) * ratio - 0.5
}

fn shifted_origin(origin: [f64; 3], spacing: Spacing, target: Spacing) -> [f64; 3] {
    std::array::from_fn(|k| origin[k] + 0.5 * (target[k] - spacing[k]))
}

/// Per output index: first input index and normalized tap weights.
fn lanczos_taps(n_in: usize, n_out: usize, ratio: f64) -> Vec<(Vec<usize>, Vec<f64>)> {
    (0..n_out)
        .map(|j| {
            let x = source_coord(j, ratio);
            let base = x.floor();
            let frac = x - base;
            if frac == 0.0 {
                let i = (base.max(0.0) as usize).min(n_in - 1);
                return (vec![i], vec![1.0]);
            }
            let mut idx = Vec::with_capacity(6);
            let mut w = Vec::with_capacity(6);
            for k in -2..=3i64 {
                let src = base as i64 + k;
                let wt = lanczos3(x - src as f64);
                idx.push(src.clamp(0, n_in as i64 - 1) as usize);
                w.push(wt);
            }
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= sum);
            (idx, w)
        })
        .collect()
}

fn resample_axis(v: &Volume<f32>, axis: usize, n_out: usize, ratio: f64) -> Volume<f32> {
    let dims = v.dims();
    if dims[axis] == n_out && ratio == 1.0 {
        return v.clone();
    }
    let taps = lanczos_taps(dims[axis], n_out, ratio);
    let mut out_dims = dims;
    out_dims[axis] = n_out;
    Volume::from_fn(out_dims, |z, y, x| {
        let p = [z, y, x];
        let (idx, w) = &taps[p[axis]];
        let mut acc = 0.0f64;
        for (&i, &wt) in idx.iter().zip(w) {
            let mut q = p;
            q[axis] = i;
            acc += wt * v.get(q[0], q[1], q[2]) as f64;
        }
        acc as f32
    })
}

/// Separable Lanczos-3 resampling of an image to `target` spacing.
pub fn resample_image(image: &CtVolume, target: Spacing) -> Result<CtVolume> {
    check_target(target)?;
    if same_spacing(image.spacing, target) {
        let mut out = image.clone();
        out.spacing = target;
        return Ok(out);
    }
    let out_dims = resampled_shape(image.dims(), image.spacing, target);
    let mut v = image.voxels.clone();
    for axis in [2, 1, 0] {
        v = resample_axis(&v, axis, out_dims[axis], target[axis] / image.spacing[axis]);
    }
    let mut out = CtVolume::new(image.case_id.clone(), v, target)?;
    out.origin = shifted_origin(image.origin, image.spacing, target);
    Ok(out)
}

/// Nearest-neighbour resampling of a label map; never invents labels.
pub fn resample_labels(labels: &LabelMap, target: Spacing) -> Result<LabelMap> {
    check_target(target)?;
    if same_spacing(labels.spacing, target) {
        let mut out = labels.clone();
        out.spacing = target;
        return Ok(out);
    }
    let dims = labels.dims();
    let out_dims = resampled_shape(dims, labels.spacing, target);
    let maps: [Vec<usize>; 3] = std::array::from_fn(|k| {
        let ratio = target[k] / labels.spacing[k];
        (0..out_dims[k]).map(|j| ((source_coord(j, ratio) + 0.5).floor().max(0.0) as usize).min(dims[k] - 1)).collect()
    });
    let v = Volume::from_fn(out_dims, |z, y, x| labels.voxels.get(maps[0][z], maps[1][y], maps[2][x]));
    let mut out = LabelMap::new(labels.case_id.clone(), labels.annotation_group, v, target)?;
    out.origin = shifted_origin(labels.origin, labels.spacing, target);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_formula() {
        let s = resampled_shape([80, 512, 512], [5.0, 0.78125, 0.78125], [3.0, 1.5625, 1.5625]);
        assert_eq!(s, [133, 256, 256]);
        assert_eq!(resampled_shape([1, 2, 3], [0.1, 0.1, 0.1], [10.0, 10.0, 10.0]), [1, 1, 1]);
    }

    #[test]
    fn label_resample_to_target_shape() {
        let lab = LabelMap::new(
            "a",
            0,
            Volume::from_fn([80, 512, 512], |z, _, x| if z > 40 && x < 100 { 2 } else { 0 }),
            [5.0, 0.78125, 0.78125],
        )
        .unwrap();
        let out = resample_labels(&lab, [3.0, 1.5625, 1.5625]).unwrap();
        assert_eq!(out.dims(), [133, 256, 256]);
        assert!(out.voxels.as_slice().iter().all(|&l| l == 0 || l == 2));
        assert!(out.voxels.as_slice().contains(&2));
    }

    #[test]
    fn identity_at_target_spacing() {
        let img = CtVolume::new("a", Volume::from_fn([5, 6, 7], |z, y, x| (z * 7 + y * 3 + x) as f32), [3.0, 1.5, 1.5])
            .unwrap();
        let out = resample_image(&img, [3.0, 1.5, 1.5]).unwrap();
        assert_eq!(out.voxels, img.voxels);
        let lab = LabelMap::new("a", 0, Volume::from_fn([5, 6, 7], |z, _, _| (z % 4) as u8), [3.0, 1.5, 1.5]).unwrap();
        assert_eq!(resample_labels(&lab, [3.0, 1.5, 1.5]).unwrap().voxels, lab.voxels);
    }

    #[test]
    fn lanczos_preserves_constants_and_linear_ramps() {
        let img =
            CtVolume::new("a", Volume::from_fn([12, 20, 20], |_, _, x| 2.0 * x as f32 + 1.0), [3.0, 1.0, 1.0]).unwrap();
        let out = resample_image(&img, [2.0, 0.75, 0.75]).unwrap();
        assert_eq!(out.dims(), [18, 27, 27]);
        // interior samples of a ramp stay on the ramp
        let ratio = 0.75;
        for x in 5..20 {
            let want = 2.0 * source_coord(x, ratio) + 1.0;
            let got = out.voxels.get(9, 13, x) as f64;
            assert!((got - want).abs() < 0.05, "x={x} got={got} want={want}");
        }
        let flat = CtVolume::new("a", Volume::filled([8, 8, 8], 42.0), [1.0; 3]).unwrap();
        let out = resample_image(&flat, [0.7, 1.3, 2.1]).unwrap();
        assert!(out.voxels.as_slice().iter().all(|v| (v - 42.0).abs() < 1e-4));
    }

    #[test]
    fn rejects_bad_target() {
        let img = CtVolume::new("a", Volume::filled([2, 2, 2], 0.0), [1.0; 3]).unwrap();
        assert!(resample_image(&img, [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn round_trip_shape_within_one_voxel() {
        for (dims, sp, tgt) in [
            ([37usize, 41, 29], [2.7, 0.9, 1.1], [3.0, 1.56, 1.56]),
            ([80, 64, 64], [5.0, 0.7, 0.7], [3.0, 1.56, 1.56]),
            ([33, 50, 70], [1.6, 1.7, 0.9], [3.0, 1.56, 1.56]),
        ] {
            let there = resampled_shape(dims, sp, tgt);
            let back = resampled_shape(there, tgt, sp);
            for k in 0..3 {
                assert!((back[k] as i64 - dims[k] as i64).abs() <= 1, "{dims:?} -> {there:?} -> {back:?}");
            }
        }
    }

    proptest::proptest! {
        // Holds whenever each axis changes by at most a factor of two.
        #[test]
        fn round_trip_shape_property(
            dims in proptest::array::uniform3(8usize..300),
            ratio in proptest::array::uniform3(0.5f64..2.0),
        ) {
            let sp = [3.0 * ratio[0], 1.56 * ratio[1], 1.56 * ratio[2]];
            let tgt = [3.0, 1.56, 1.56];
            let back = resampled_shape(resampled_shape(dims, sp, tgt), tgt, sp);
            for k in 0..3 {
                proptest::prop_assert!((back[k] as i64 - dims[k] as i64).abs() <= 1);
            }
        }
    }
}
