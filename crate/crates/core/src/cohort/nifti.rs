//! Minimal NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! Only what the pipeline needs: 3D scalar volumes, the common integer and
//! float datatypes, `scl_slope`/`scl_inter`, voxel spacing from `pixdim` and
//! the origin from the sform (or qform offsets). The on-disk axis order
//! (x fastest) matches [`Volume`]'s (z, y, x) layout, so no transposition
//! is needed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{CtVolume, LabelMap, Spacing, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::volume::Volume;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

/// Decoded volume with header geometry.
#[derive(Clone, Debug)]
pub struct RawVolume {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub origin: [f64; 3],
    pub data: Vec<f64>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.bytes(at))
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    BufReader::new(file).read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn read_raw(path: &Path) -> Result<RawVolume> {
    let buf = read_all(path)?;
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if buf.len() < HEADER_SIZE {
        return Err(bad(format!("{} bytes, header needs {HEADER_SIZE}", buf.len())));
    }
    let le = i32::from_le_bytes(buf[0..4].try_into().unwrap());
    let big_endian = match le {
        348 => false,
        _ if i32::from_be_bytes(buf[0..4].try_into().unwrap()) == 348 => true,
        other => return Err(bad(format!("sizeof_hdr {other} is not 348"))),
    };
    if &buf[344..347] != b"n+1" && &buf[344..347] != b"ni1" {
        return Err(bad("missing NIfTI-1 magic".into()));
    }
    let c = Cursor { buf: &buf, big_endian };

    let ndim = c.i16(40);
    if !(3..=7).contains(&ndim) {
        return Err(bad(format!("dim[0] = {ndim}")));
    }
    let mut dims_xyz = [0usize; 3];
    for (k, d) in dims_xyz.iter_mut().enumerate() {
        let v = c.i16(42 + 2 * k);
        if v <= 0 {
            return Err(bad(format!("dim[{}] = {v}", k + 1)));
        }
        *d = v as usize;
    }
    for k in 3..ndim as usize {
        if c.i16(42 + 2 * k) > 1 {
            return Err(bad("only single 3D volumes are supported".into()));
        }
    }
    let datatype = c.i16(70);
    let pix = [c.f32(80) as f64, c.f32(84) as f64, c.f32(88) as f64];
    let vox_offset = c.f32(108) as usize;
    let slope = c.f32(112) as f64;
    let inter = c.f32(116) as f64;
    let sform = c.i16(254);
    let origin_xyz = if sform > 0 {
        [c.f32(280 + 12) as f64, c.f32(296 + 12) as f64, c.f32(312 + 12) as f64]
    } else {
        [c.f32(268) as f64, c.f32(272) as f64, c.f32(276) as f64]
    };

    let n: usize = dims_xyz.iter().product();
    let width = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(bad(format!("unsupported datatype {other}"))),
    };
    let end = vox_offset + n * width;
    if buf.len() < end {
        return Err(bad(format!("truncated data: need {end} bytes, have {}", buf.len())));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let at = vox_offset + i * width;
        let v = match datatype {
            DT_UINT8 => buf[at] as f64,
            DT_INT8 => buf[at] as i8 as f64,
            DT_INT16 => c.i16(at) as f64,
            DT_UINT16 => u16::from_le_bytes(c.bytes(at)) as f64,
            DT_INT32 => c.i32(at) as f64,
            DT_UINT32 => u32::from_le_bytes(c.bytes(at)) as f64,
            DT_FLOAT32 => c.f32(at) as f64,
            _ => c.f64(at),
        };
        data.push(v);
    }
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let spacing = [pix[2].abs(), pix[1].abs(), pix[0].abs()];
    if spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(bad(format!("non-positive pixdim {pix:?}")));
    }
    Ok(RawVolume {
        dims: [dims_xyz[2], dims_xyz[1], dims_xyz[0]],
        spacing,
        origin: [origin_xyz[2], origin_xyz[1], origin_xyz[0]],
        data,
    })
}

pub fn read_image(path: &Path, case_id: &str) -> Result<CtVolume> {
    let raw = read_raw(path)?;
    let voxels = Volume::new(raw.dims, raw.data.iter().map(|&v| v as f32).collect())?;
    let mut img = CtVolume::new(case_id, voxels, raw.spacing)?;
    img.origin = raw.origin;
    Ok(img)
}

pub fn read_labels(path: &Path, case_id: &str, group: usize) -> Result<LabelMap> {
    let raw = read_raw(path)?;
    let mut labels = Vec::with_capacity(raw.data.len());
    for &v in &raw.data {
        let r = v.round();
        if (v - r).abs() > 1e-6 || r < 0.0 || r >= NUM_CLASSES as f64 {
            return Err(Error::LabelDomain { value: r as i64, context: format!("{} ({})", case_id, path.display()) });
        }
        labels.push(r as u8);
    }
    let mut map = LabelMap::new(case_id, group, Volume::new(raw.dims, labels)?, raw.spacing)?;
    map.origin = raw.origin;
    Ok(map)
}

fn header(dims: [usize; 3], spacing: Spacing, origin: [f64; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    put(&mut h, 38, b"r");
    let dim: [i16; 8] = [3, dims[2] as i16, dims[1] as i16, dims[0] as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * k, &d.to_le_bytes());
    }
    put(&mut h, 70, &datatype.to_le_bytes());
    put(&mut h, 72, &bitpix.to_le_bytes());
    let pixdim: [f32; 8] = [1.0, spacing[2] as f32, spacing[1] as f32, spacing[0] as f32, 1.0, 0.0, 0.0, 0.0];
    for (k, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * k, &p.to_le_bytes());
    }
    put(&mut h, 108, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1.0f32.to_le_bytes());
    // mm units
    h[123] = 2;
    put(&mut h, 252, &1i16.to_le_bytes());
    put(&mut h, 254, &1i16.to_le_bytes());
    let o = [origin[2] as f32, origin[1] as f32, origin[0] as f32];
    for (k, v) in o.iter().enumerate() {
        put(&mut h, 268 + 4 * k, &v.to_le_bytes());
    }
    let rows =
        [[spacing[2] as f32, 0.0, 0.0, o[0]], [0.0, spacing[1] as f32, 0.0, o[1]], [0.0, 0.0, spacing[0] as f32, o[2]]];
    for (r, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            put(&mut h, 280 + 16 * r + 4 * k, &v.to_le_bytes());
        }
    }
    put(&mut h, 344, b"n+1\0");
    h
}

fn write_bytes(path: &Path, header: Vec<u8>, payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let res = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::fast());
        enc.write_all(&header)
            .and_then(|_| enc.write_all(payload))
            .and_then(|_| enc.finish())
            .and_then(|mut w| w.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&header).and_then(|_| w.write_all(payload)).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

pub fn write_image(path: &Path, image: &CtVolume) -> Result<()> {
    let h = header(image.dims(), image.spacing, image.origin, DT_FLOAT32, 32);
    let payload: Vec<u8> = image.voxels.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, h, &payload)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let h = header(labels.dims(), labels.spacing, labels.origin, DT_UINT8, 8);
    write_bytes(path, h, labels.voxels.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_int16_with_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ct.nii");
        let mut h = header([2, 1, 3], [2.5, 0.7, 0.7], [1.0, 2.0, 3.0], DT_INT16, 16);
        h[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        h[116..120].copy_from_slice(&(-1024.0f32).to_le_bytes());
        let payload: Vec<u8> = (0..6i16).flat_map(|v| v.to_le_bytes()).collect();
        write_bytes(&path, h, &payload).unwrap();
        let raw = read_raw(&path).unwrap();
        assert_eq!(raw.dims, [2, 1, 3]);
        assert_eq!(raw.data, vec![-1024.0, -1022.0, -1020.0, -1018.0, -1016.0, -1014.0]);
        assert!((raw.spacing[0] - 2.5).abs() < 1e-6 && (raw.spacing[2] - 0.7).abs() < 1e-6);
        assert!((raw.origin[0] - 1.0).abs() < 1e-6 && (raw.origin[2] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.nii");
        std::fs::write(&path, vec![7u8; 400]).unwrap();
        assert!(matches!(read_raw(&path), Err(Error::Format { .. })));
    }
}
