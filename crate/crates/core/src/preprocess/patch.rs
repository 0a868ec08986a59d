use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::PatchSpec;
use crate::volume::Volume;

/// Pads symmetrically (extra voxel after) up to `size` where needed.
fn pad_to<T: Copy>(v: &Volume<T>, size: [usize; 3], fill: T) -> Volume<T> {
    let dims = v.dims();
    if (0..3).all(|k| dims[k] >= size[k]) {
        return v.clone();
    }
    let out: [usize; 3] = std::array::from_fn(|k| dims[k].max(size[k]));
    let start: [isize; 3] = std::array::from_fn(|k| -(((out[k] - dims[k]) / 2) as isize));
    v.crop_padded(start, out, fill)
}

/// Draws one training patch. With probability `foreground_bias` the patch
/// is centred on a uniformly drawn foreground voxel, otherwise on a uniform
/// voxel; the window is then shifted to stay inside the (padded) volume.
pub fn extract_patch(
    image: &Volume<f32>,
    label: &Volume<u8>,
    spec: &PatchSpec,
    rng: &mut ChaCha8Rng,
    foreground_bias: f64,
) -> (Volume<f32>, Volume<u8>) {
    assert_eq!(image.dims(), label.dims(), "image and label must be aligned");
    let size = spec.size;
    let image = pad_to(image, size, 0.0);
    let label = pad_to(label, size, 0);
    let dims = image.dims();

    let use_fg = foreground_bias > 0.0 && rng.random::<f64>() < foreground_bias;
    let centre = if use_fg {
        let n_fg = label.as_slice().iter().filter(|&&l| l > 0).count();
        if n_fg > 0 {
            let pick = rng.random_range(0..n_fg);
            let flat = label.as_slice().iter().enumerate().filter(|(_, &l)| l > 0).nth(pick).map(|(i, _)| i).unwrap();
            Some(label.coords(flat))
        } else {
            None
        }
    } else {
        None
    };
    let centre = centre.unwrap_or_else(|| std::array::from_fn(|k| rng.random_range(0..dims[k])));
    let start: [isize; 3] =
        std::array::from_fn(|k| (centre[k] as isize - (size[k] / 2) as isize).clamp(0, (dims[k] - size[k]) as isize));
    (image.crop_padded(start, size, 0.0), label.crop_padded(start, size, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn exact_size_volume_is_the_only_patch() {
        let spec = PatchSpec::new([96, 160, 160]).unwrap();
        let img = Volume::from_fn([96, 160, 160], |z, y, x| (z + y + x) as f32);
        let lab = Volume::from_fn([96, 160, 160], |z, _, _| (z % 3) as u8);
        for seed in 0..3 {
            let (a, b) = extract_patch(&img, &lab, &spec, &mut ChaCha8Rng::seed_from_u64(seed), 0.5);
            assert_eq!(a, img);
            assert_eq!(b, lab);
        }
    }

    #[test]
    fn small_volume_is_padded_symmetrically() {
        let spec = PatchSpec::new([96, 160, 160]).unwrap();
        let img = Volume::filled([48, 80, 80], 5.0f32);
        let lab = Volume::filled([48, 80, 80], 1u8);
        let (a, b) = extract_patch(&img, &lab, &spec, &mut ChaCha8Rng::seed_from_u64(0), 0.5);
        assert_eq!(a.dims(), [96, 160, 160]);
        // 24 slices before and after along z, 40 along y and x
        assert_eq!(a.get(23, 80, 80), 0.0);
        assert_eq!(a.get(24, 40, 40), 5.0);
        assert_eq!(a.get(71, 119, 119), 5.0);
        assert_eq!(a.get(72, 119, 119), 0.0);
        assert_eq!(b.get(80, 80, 39), 0);
        assert_eq!(b.get(60, 80, 40), 1);
        assert_eq!(b.as_slice().iter().filter(|&&l| l == 1).count(), 48 * 80 * 80);
    }

    #[test]
    fn full_bias_always_contains_the_single_foreground_voxel() {
        let spec = PatchSpec::new([16, 16, 16]).unwrap();
        let img = Volume::filled([40, 50, 60], 0.0f32);
        let mut lab = Volume::filled([40, 50, 60], 0u8);
        lab.set(37, 2, 31, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (_, b) = extract_patch(&img, &lab, &spec, &mut rng, 1.0);
            assert_eq!(b.as_slice().iter().filter(|&&l| l == 2).count(), 1);
        }
    }
}
