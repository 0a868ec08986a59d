//! Overlap and surface metrics on binary masks.

use crate::cohort::Spacing;
use crate::error::{Error, Result};
use crate::volume::Volume;

fn check_shapes(a: &Volume<bool>, b: &Volume<bool>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("mask shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// 2|A∩B| / (|A| + |B|); 1.0 when both masks are empty.
pub fn dice(a: &Volume<bool>, b: &Volume<bool>) -> Result<f64> {
    check_shapes(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Boundary voxels of a mask with the area of their exposed faces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Surface {
    pub voxels: Vec<usize>,
    pub areas: Vec<f64>,
}

impl Surface {
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }
}

/// A foreground voxel is on the boundary when one of its 6 neighbours is
/// background or outside the volume. Each exposed face contributes the
/// product of the two in-plane spacings.
pub fn surface_elements(mask: &Volume<bool>, spacing: Spacing) -> Surface {
    let [d, h, w] = mask.dims();
    let face = [spacing[1] * spacing[2], spacing[0] * spacing[2], spacing[0] * spacing[1]];
    let m = mask.as_slice();
    let mut s = Surface::default();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if !m[i] {
                    continue;
                }
                let mut area = 0.0;
                let pos = [z, y, x];
                let strides = [h * w, w, 1];
                let ext = [d, h, w];
                for ax in 0..3 {
                    if pos[ax] == 0 || !m[i - strides[ax]] {
                        area += face[ax];
                    }
                    if pos[ax] + 1 == ext[ax] || !m[i + strides[ax]] {
                        area += face[ax];
                    }
                }
                if area > 0.0 {
                    s.voxels.push(i);
                    s.areas.push(area);
                }
            }
        }
    }
    s
}

/// Squared Euclidean distance (mm²) from every voxel centre to the nearest
/// seed voxel centre; infinite when there are no seeds. Exact separable
/// transform (lower envelope of parabolas along each axis).
pub fn squared_distance_transform(seeds: &Volume<bool>, spacing: Spacing) -> Vec<f64> {
    let dims = seeds.dims();
    let mut f: Vec<f64> = seeds.as_slice().iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for ax in 0..3 {
        let n = dims[ax];
        let (o1, o2) = [(1, 2), (0, 2), (0, 1)][ax];
        for a in 0..dims[o1] {
            for b in 0..dims[o2] {
                let base = a * strides[o1] + b * strides[o2];
                line.clear();
                line.extend((0..n).map(|k| f[base + k * strides[ax]]));
                envelope_1d(&line, spacing[ax], &mut out);
                for k in 0..n {
                    f[base + k * strides[ax]] = out[k];
                }
            }
        }
    }
    f
}

fn envelope_1d(f: &[f64], step: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        return;
    }
    let pos = |i: usize| i as f64 * step;
    let cross = |p: usize, q: usize| {
        let (xp, xq) = (pos(p), pos(q));
        ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp))
    };
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        while let Some(&last) = v.last() {
            let s = cross(last, q);
            if v.len() > 1 && s <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.clear();
        }
        v.push(q);
    }
    // z[k] is the left boundary of parabola v[k + 1]
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = pos(i);
        while k < z.len() && z[k] < x {
            k += 1;
        }
        let p = v[k];
        let dx = x - pos(p);
        *o = dx * dx + f[p];
    }
}

/// Normalized surface Dice: the share of both surfaces' area lying within
/// `tolerance` mm of the other surface. 1.0 if both masks are empty, 0.0 if
/// exactly one is.
pub fn surface_dice(a: &Volume<bool>, b: &Volume<bool>, spacing: Spacing, tolerance: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(tolerance >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let sa = surface_elements(a, spacing);
    let sb = surface_elements(b, spacing);
    match (sa.voxels.is_empty(), sb.voxels.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let tol2 = tolerance * tolerance;
    let within = |from: &Surface, to: &Surface| {
        let mut seeds = Volume::filled(a.dims(), false);
        for &i in &to.voxels {
            seeds.as_mut_slice()[i] = true;
        }
        let dt = squared_distance_transform(&seeds, spacing);
        from.voxels.iter().zip(&from.areas).filter(|(&i, _)| dt[i] <= tol2).map(|(_, &a)| a).sum::<f64>()
    };
    let num = within(&sa, &sb) + within(&sb, &sa);
    Ok(num / (sa.total_area() + sb.total_area()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_sq(seeds: &Volume<bool>, spacing: Spacing) -> Vec<f64> {
        let pts: Vec<usize> = (0..seeds.len()).filter(|&i| seeds.as_slice()[i]).collect();
        (0..seeds.len())
            .map(|i| {
                let c = seeds.coords(i);
                pts.iter()
                    .map(|&j| {
                        let p = seeds.coords(j);
                        (0..3).map(|k| ((c[k] as f64 - p[k] as f64) * spacing[k]).powi(2)).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn dice_examples() {
        let a = Volume::new([1, 1, 6], vec![true, true, false, false, false, false]).unwrap();
        let b = Volume::new([1, 1, 6], vec![true, true, true, true, false, false]).unwrap();
        assert!((dice(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let e = Volume::filled([1, 1, 6], false);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let c = Volume::new([1, 1, 6], vec![false, false, false, false, true, true]).unwrap();
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert!(dice(&a, &Volume::filled([1, 2, 3], false)).is_err());
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let dims = [rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7)];
            let spacing = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
            let p = rng.random_range(0.02..0.3);
            let seeds = Volume::from_fn(dims, |_, _, _| rng.random::<f64>() < p);
            let fast = squared_distance_transform(&seeds, spacing);
            let slow = brute_sq(&seeds, spacing);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(a == b || (a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shifted_cube() {
        let cube = |off: usize| {
            Volume::from_fn([5, 5, 5], move |z, y, x| {
                (1..4).contains(&z) && (1..4).contains(&y) && (off..off + 3).contains(&x)
            })
        };
        let (a, b) = (cube(1), cube(2));
        assert_eq!(surface_dice(&a, &b, [1.0; 3], 1.5).unwrap(), 1.0);
        let partial = surface_dice(&a, &b, [1.0; 3], 0.25).unwrap();
        assert!(partial < 1.0 && partial > 0.0);
        assert_eq!(surface_dice(&a, &a, [1.0; 3], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn empty_conventions() {
        let e = Volume::filled([3, 3, 3], false);
        let mut f = e.clone();
        f.set(1, 1, 1, true);
        assert_eq!(surface_dice(&e, &e, [1.0; 3], 1.0).unwrap(), 1.0);
        assert_eq!(surface_dice(&e, &f, [1.0; 3], 1.0).unwrap(), 0.0);
        assert!(surface_dice(&f, &f, [1.0; 3], -1.0).is_err());
    }

    #[test]
    fn single_voxel_surface_area() {
        let mut m = Volume::filled([3, 3, 3], false);
        m.set(1, 1, 1, true);
        let s = surface_elements(&m, [2.0, 3.0, 5.0]);
        assert_eq!(s.voxels, vec![13]);
        assert!((s.total_area() - 2.0 * (15.0 + 10.0 + 6.0)).abs() < 1e-12);
    }
}
