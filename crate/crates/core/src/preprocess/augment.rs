use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::volume::Volume;

/// Probabilities and magnitude ranges of the training augmentations.
/// Intensity ranges are in standardized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_gamma: f64,
    pub gamma: (f64, f64),
    pub p_contrast: f64,
    pub contrast: (f64, f64),
    pub p_brightness: f64,
    pub brightness: (f64, f64),
    pub p_noise: f64,
    pub noise_sigma: (f64, f64),
    pub p_blur: f64,
    pub blur_sigma: (f64, f64),
    pub p_scale: f64,
    pub scale: (f64, f64),
    pub p_rotate: f64,
    pub rotate_deg: f64,
    /// Per axis.
    pub p_mirror: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_gamma: 0.15,
            gamma: (0.7, 1.5),
            p_contrast: 0.15,
            contrast: (0.75, 1.25),
            p_brightness: 0.15,
            brightness: (-0.2, 0.2),
            p_noise: 0.15,
            noise_sigma: (0.0, 0.1),
            p_blur: 0.15,
            blur_sigma: (0.5, 1.0),
            p_scale: 0.15,
            scale: (0.85, 1.15),
            p_rotate: 0.15,
            rotate_deg: 15.0,
            p_mirror: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            p_gamma: 0.0,
            p_contrast: 0.0,
            p_brightness: 0.0,
            p_noise: 0.0,
            p_blur: 0.0,
            p_scale: 0.0,
            p_rotate: 0.0,
            p_mirror: 0.0,
            ..Default::default()
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    p > 0.0 && rng.random::<f64>() < p
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn rotation(axis: usize, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    m[i][i] = c;
    m[j][j] = c;
    m[i][j] = -s;
    m[j][i] = s;
    m
}

/// Resamples both patches through `inv` (output → input offsets about the
/// patch centre): trilinear for the image, nearest neighbour for labels.
fn warp(image: &Volume<f32>, label: &Volume<u8>, inv: &Mat3) -> (Volume<f32>, Volume<u8>) {
    let dims = image.dims();
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let fill = image.as_slice().iter().cloned().fold(f32::INFINITY, f32::min);
    let mut out_img = Volume::filled(dims, fill);
    let mut out_lab = Volume::filled(dims, 0u8);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let o = [z as f64 - centre[0], y as f64 - centre[1], x as f64 - centre[2]];
                let src: [f64; 3] = std::array::from_fn(|i| centre[i] + (0..3).map(|k| inv[i][k] * o[k]).sum::<f64>());
                let inside = (0..3).all(|k| src[k] > -0.5 && src[k] < dims[k] as f64 - 0.5);
                if !inside {
                    continue;
                }
                let nn = src.map(|s| s.round().max(0.0) as usize);
                out_lab.set(z, y, x, label.get(nn[0].min(dims[0] - 1), nn[1].min(dims[1] - 1), nn[2].min(dims[2] - 1)));

                let base = src.map(|s| s.floor());
                let frac = [src[0] - base[0], src[1] - base[1], src[2] - base[2]];
                let mut acc = 0.0f64;
                for corner in 0..8 {
                    let mut w = 1.0;
                    let mut q = [0usize; 3];
                    for k in 0..3 {
                        let hi = (corner >> k) & 1 == 1;
                        w *= if hi { frac[k] } else { 1.0 - frac[k] };
                        let idx = base[k] as i64 + hi as i64;
                        q[k] = idx.clamp(0, dims[k] as i64 - 1) as usize;
                    }
                    if w != 0.0 {
                        acc += w * image.get(q[0], q[1], q[2]) as f64;
                    }
                }
                out_img.set(z, y, x, acc as f32);
            }
        }
    }
    (out_img, out_lab)
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(v: &Volume<f32>, sigma: [f64; 3]) -> Volume<f32> {
    let mut cur = v.clone();
    for axis in 0..3 {
        if sigma[axis] <= 0.0 {
            continue;
        }
        let r = (3.0 * sigma[axis]).ceil() as i64;
        let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma[axis].powi(2))).exp()).collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|w| *w /= s);
        let dims = cur.dims();
        let src = cur;
        cur = Volume::from_fn(dims, |z, y, x| {
            let p = [z, y, x];
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let mut q = p;
                q[axis] = (p[axis] as i64 + t as i64 - r).clamp(0, dims[axis] as i64 - 1) as usize;
                acc += w * src.get(q[0], q[1], q[2]) as f64;
            }
            acc as f32
        });
    }
    cur
}

/// Applies each augmentation independently with its own probability.
/// Spatial transforms move image and label together; the result depends
/// only on the incoming rng state.
pub fn augment(
    image: &Volume<f32>,
    label: &Volume<u8>,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> (Volume<f32>, Volume<u8>) {
    assert_eq!(image.dims(), label.dims(), "augment needs aligned patches");
    let mut img = image.clone();
    let mut lab = label.clone();

    let mut inv: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut spatial = false;
    if coin(rng, config.p_rotate) {
        let max = config.rotate_deg.to_radians();
        for axis in 0..3 {
            let a = uniform(rng, (-max, max));
            inv = matmul(&inv, &rotation(axis, -a));
        }
        spatial = true;
    }
    if coin(rng, config.p_scale) {
        let s = uniform(rng, config.scale);
        for row in inv.iter_mut() {
            row.iter_mut().for_each(|v| *v /= s);
        }
        spatial = true;
    }
    if spatial {
        (img, lab) = warp(&img, &lab, &inv);
    }
    for axis in 0..3 {
        if coin(rng, config.p_mirror) {
            img = img.flip(axis);
            lab = lab.flip(axis);
        }
    }

    if coin(rng, config.p_noise) {
        let sigma = uniform(rng, config.noise_sigma);
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).unwrap();
            for v in img.as_mut_slice() {
                *v += n.sample(rng) as f32;
            }
        }
    }
    if coin(rng, config.p_blur) {
        let s = uniform(rng, config.blur_sigma);
        img = gaussian_blur(&img, [s; 3]);
    }
    if coin(rng, config.p_brightness) {
        let b = uniform(rng, config.brightness) as f32;
        img.as_mut_slice().iter_mut().for_each(|v| *v += b);
    }
    if coin(rng, config.p_contrast) {
        let f = uniform(rng, config.contrast);
        let mean = img.as_slice().iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
        img.as_mut_slice().iter_mut().for_each(|v| *v = ((*v as f64 - mean) * f + mean) as f32);
    }
    if coin(rng, config.p_gamma) {
        let g = uniform(rng, config.gamma);
        let (lo, hi) =
            img.as_slice().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = (hi - lo) as f64;
        if range > 0.0 {
            img.as_mut_slice().iter_mut().for_each(|v| {
                let u = (*v - lo) as f64 / range;
                *v = (u.powf(g) * range + lo as f64) as f32;
            });
        }
    }
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn patches() -> (Volume<f32>, Volume<u8>) {
        let img = Volume::from_fn([8, 12, 10], |z, y, x| (z as f32 * 0.3 - y as f32 * 0.1 + x as f32 * 0.05).sin());
        let lab = Volume::from_fn([8, 12, 10], |z, y, x| {
            if (3..6).contains(&z) && (4..9).contains(&y) && x > 4 {
                if x > 7 {
                    2
                } else {
                    1
                }
            } else {
                0
            }
        });
        (img, lab)
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let (img, lab) = patches();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = augment(&img, &lab, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(a, img);
        assert_eq!(b, lab);
    }

    #[test]
    fn deterministic_given_rng_state() {
        let (img, lab) = patches();
        let cfg = AugmentConfig {
            p_gamma: 1.0,
            p_contrast: 1.0,
            p_brightness: 1.0,
            p_noise: 1.0,
            p_blur: 1.0,
            p_scale: 1.0,
            p_rotate: 1.0,
            p_mirror: 0.5,
            ..Default::default()
        };
        let rng = ChaCha8Rng::seed_from_u64(99);
        let first = augment(&img, &lab, &cfg, &mut rng.clone());
        let second = augment(&img, &lab, &cfg, &mut rng.clone());
        assert_eq!(first, second);
        assert_eq!(first.0.dims(), img.dims());
        assert!(first.1.as_slice().iter().all(|&l| l <= 3));
    }

    #[test]
    fn mirror_flips_both() {
        let (img, lab) = patches();
        let cfg = AugmentConfig { p_mirror: 1.0, ..AugmentConfig::disabled() };
        let (a, b) = augment(&img, &lab, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(a, img.flip(0).flip(1).flip(2));
        assert_eq!(b, lab.flip(0).flip(1).flip(2));
        let (a2, b2) = augment(&a, &b, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((a2, b2), (img, lab));
    }

    #[test]
    fn intensity_only_never_touches_labels() {
        let img = Volume::from_fn([6, 6, 6], |z, y, x| (z + y * x) as f32 * 0.1);
        let lab = Volume::filled([6, 6, 6], 0u8);
        let cfg = AugmentConfig {
            p_gamma: 1.0,
            p_contrast: 1.0,
            p_brightness: 1.0,
            p_noise: 1.0,
            p_blur: 1.0,
            ..AugmentConfig::disabled()
        };
        for seed in 0..10 {
            let (_, b) = augment(&img, &lab, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(b.as_slice().iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn spatial_keeps_label_domain() {
        let (img, lab) = patches();
        let cfg = AugmentConfig { p_scale: 1.0, p_rotate: 1.0, ..AugmentConfig::disabled() };
        for seed in 0..10 {
            let (_, b) = augment(&img, &lab, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(b.as_slice().iter().all(|&l| l <= 2));
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let v = Volume::filled([5, 5, 5], 3.5f32);
        let b = gaussian_blur(&v, [1.0, 0.5, 0.8]);
        assert!(b.as_slice().iter().all(|x| (x - 3.5).abs() < 1e-5));
    }
}
