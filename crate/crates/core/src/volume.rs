use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 3D array in (z, y, x) order, x fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if n == 0 {
            return Err(Error::Shape(format!("empty volume {dims:?}")));
        }
        if data.len() != n {
            return Err(Error::Shape(format!("volume {dims:?} needs {n} voxels, got {}", data.len())));
        }
        Ok(Volume { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        let n = dims.iter().product::<usize>();
        assert!(n > 0, "empty volume {dims:?}");
        Volume { dims, data: vec![value; n] }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Volume::new(dims, data).expect("from_fn dims")
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    /// Coordinates of a flat index.
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[2];
        let r = i / self.dims[2];
        [r / self.dims[1], r % self.dims[1], x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Copies the box `[start, start + size)`; voxels outside the volume
    /// take `fill`.
    pub fn crop_padded(&self, start: [isize; 3], size: [usize; 3], fill: T) -> Volume<T> {
        let mut out = Volume::filled(size, fill);
        for z in 0..size[0] {
            let sz = start[0] + z as isize;
            if sz < 0 || sz >= self.dims[0] as isize {
                continue;
            }
            for y in 0..size[1] {
                let sy = start[1] + y as isize;
                if sy < 0 || sy >= self.dims[1] as isize {
                    continue;
                }
                let x0 = start[2].max(0);
                let x1 = (start[2] + size[2] as isize).min(self.dims[2] as isize);
                if x0 >= x1 {
                    continue;
                }
                let src = self.index(sz as usize, sy as usize, x0 as usize);
                let dst = out.index(z, y, (x0 - start[2]) as usize);
                let n = (x1 - x0) as usize;
                out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
            }
        }
        out
    }

    /// Reverses the order along `axis` (0 = z, 1 = y, 2 = x).
    pub fn flip(&self, axis: usize) -> Volume<T> {
        let [d, h, w] = self.dims;
        Volume::from_fn(self.dims, |z, y, x| match axis {
            0 => self.get(d - 1 - z, y, x),
            1 => self.get(z, h - 1 - y, x),
            _ => self.get(z, y, w - 1 - x),
        })
    }
}
