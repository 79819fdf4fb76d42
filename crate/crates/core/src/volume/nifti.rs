//! Strict single-frame NIfTI-1 reader and writer.
//!
//! Only 3D scalar volumes stored as uint8, int16 or float32 are accepted.
//! Orientation fields are carried through untouched; only `pixdim[1..=3]`
//! is interpreted (as voxel spacing). Extensions are skipped on read and
//! never written. Files are gzip-compressed on write when the path ends in
//! `.gz`; on read, compression is detected from the stream itself.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Geometry, Mask, ValueKind, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

const UNITS_MM: u8 = 2;

/// Orientation metadata copied verbatim between header and volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub qfac: f32,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub xyzt_units: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct Header {
    endian: Endian,
    shape: [usize; 3],
    spacing: [f64; 3],
    datatype: i16,
    vox_offset: usize,
    slope: f32,
    inter: f32,
    single_file: bool,
    orientation: Orientation,
}

fn gunzip_if_needed(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(&self.bytes[at..]),
            Endian::Big => BigEndian::read_i16(&self.bytes[at..]),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(&self.bytes[at..]),
            Endian::Big => BigEndian::read_f32(&self.bytes[at..]),
        }
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    let endian = if LittleEndian::read_i32(bytes) == HEADER_SIZE as i32 {
        Endian::Little
    } else if BigEndian::read_i32(bytes) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::MalformedHeader("sizeof_hdr is not 348".into()));
    };
    let single_file = match &bytes[344..348] {
        b"n+1\0" => true,
        b"ni1\0" => false,
        other => {
            return Err(Error::MalformedHeader(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let f = Fields { bytes, endian };

    let dim: Vec<i16> = (0..8).map(|i| f.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    // Trailing singleton dimensions still describe a single 3D frame.
    let extra_singleton = (4..=ndim as usize).all(|i| dim[i] == 1);
    if ndim < 3 || !extra_singleton {
        return Err(Error::DimensionCount(ndim));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::MalformedHeader(format!(
            "non-positive dimension in {:?}",
            &dim[1..4]
        )));
    }
    let shape = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = f.i16(70);
    if ![DT_UINT8, DT_INT16, DT_FLOAT32].contains(&datatype) {
        return Err(Error::UnsupportedDatatype(datatype));
    }

    let pixdim: Vec<f32> = (0..8).map(|i| f.f32(76 + 4 * i)).collect();
    let spacing = [pixdim[1], pixdim[2], pixdim[3]].map(|s| {
        let s = f64::from(s).abs();
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    });

    let vox_offset = f.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= 0.0) {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    if single_file && vox_offset < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "vox_offset {vox_offset} overlaps the header"
        )));
    }

    let srow = [280, 296, 312].map(|base| [0, 1, 2, 3].map(|i| f.f32(base + 4 * i)));
    let orientation = Orientation {
        qform_code: f.i16(252),
        sform_code: f.i16(254),
        qfac: if pixdim[0] == -1.0 { -1.0 } else { 1.0 },
        quatern: [f.f32(256), f.f32(260), f.f32(264)],
        qoffset: [f.f32(268), f.f32(272), f.f32(276)],
        srow,
        xyzt_units: bytes[123],
    };

    Ok(Header {
        endian,
        shape,
        spacing,
        datatype,
        vox_offset,
        slope: f.f32(112),
        inter: f.f32(116),
        single_file,
        orientation,
    })
}

fn decode_data(header: &Header, raw: &[u8]) -> Result<Vec<f64>> {
    let n = header.shape.iter().product::<usize>();
    let width = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let expected = n * width;
    if raw.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            found: raw.len(),
        });
    }
    let raw = &raw[..expected];
    let mut values: Vec<f64> = match (header.datatype, header.endian) {
        (DT_UINT8, _) => raw.iter().map(|&b| f64::from(b)).collect(),
        (DT_INT16, Endian::Little) => raw
            .chunks_exact(2)
            .map(|c| f64::from(LittleEndian::read_i16(c)))
            .collect(),
        (DT_INT16, Endian::Big) => raw
            .chunks_exact(2)
            .map(|c| f64::from(BigEndian::read_i16(c)))
            .collect(),
        (_, Endian::Little) => raw
            .chunks_exact(4)
            .map(|c| f64::from(LittleEndian::read_f32(c)))
            .collect(),
        (_, Endian::Big) => raw
            .chunks_exact(4)
            .map(|c| f64::from(BigEndian::read_f32(c)))
            .collect(),
    };
    let (slope, inter) = (header.slope, header.inter);
    let scaled = slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    if scaled {
        let (slope, inter) = (f64::from(slope), f64::from(inter));
        values.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    Ok(values)
}

fn image_path_for(header_path: &Path) -> PathBuf {
    let name = header_path.to_string_lossy();
    if let Some(stem) = name.strip_suffix(".hdr.gz") {
        PathBuf::from(format!("{stem}.img.gz"))
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        PathBuf::from(format!("{stem}.img"))
    } else {
        header_path.with_extension("img")
    }
}

pub(crate) fn decode(bytes: &[u8], paired_image: Option<&[u8]>) -> Result<Volume> {
    let header = parse_header(bytes)?;
    let data = if header.single_file {
        decode_data(&header, bytes.get(header.vox_offset..).unwrap_or(&[]))?
    } else {
        let image = paired_image.ok_or_else(|| {
            Error::MalformedHeader("'ni1' header requires a separate image file".into())
        })?;
        decode_data(&header, image.get(header.vox_offset..).unwrap_or(&[]))?
    };
    let geometry = Geometry::new(header.shape, header.spacing)?;
    Ok(Volume::new(data, geometry, ValueKind::Intensity)?.with_orientation(Some(header.orientation)))
}

/// Reads a NIfTI-1 volume (`.nii`, `.nii.gz`, or a `.hdr`/`.img` pair).
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = gunzip_if_needed(fs::read(path)?)?;
    if bytes.len() >= HEADER_SIZE && &bytes[344..348] == b"ni1\0" {
        let image = gunzip_if_needed(fs::read(image_path_for(path))?)?;
        decode(&bytes, Some(&image))
    } else {
        decode(&bytes, None)
    }
}

/// Reads a volume and requires every voxel to be exactly 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Mask::from_binary_volume(&read_volume(path)?)
}

enum Payload<'a> {
    Float32(&'a [f64]),
    Uint8(&'a [bool]),
}

fn encode(geometry: &Geometry, orientation: Option<&Orientation>, payload: Payload<'_>) -> Vec<u8> {
    let (datatype, bitpix, width) = match payload {
        Payload::Float32(_) => (DT_FLOAT32, 32i16, 4usize),
        Payload::Uint8(_) => (DT_UINT8, 8, 1),
    };
    let mut out = vec![0u8; SINGLE_FILE_OFFSET + geometry.len() * width];
    let h = &mut out[..SINGLE_FILE_OFFSET];
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    let shape = geometry.shape();
    let dim = [3, shape[0] as i16, shape[1] as i16, shape[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[70..], datatype);
    LittleEndian::write_i16(&mut h[72..], bitpix);
    let spacing = geometry.spacing();
    let qfac = orientation.map_or(1.0, |o| o.qfac);
    let pixdim = [qfac, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[108..], SINGLE_FILE_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..], 1.0);
    LittleEndian::write_f32(&mut h[116..], 0.0);
    match orientation {
        Some(o) => {
            h[123] = o.xyzt_units;
            LittleEndian::write_i16(&mut h[252..], o.qform_code);
            LittleEndian::write_i16(&mut h[254..], o.sform_code);
            for (i, v) in o.quatern.iter().chain(o.qoffset.iter()).enumerate() {
                LittleEndian::write_f32(&mut h[256 + 4 * i..], *v);
            }
            for (r, row) in o.srow.iter().enumerate() {
                for (i, v) in row.iter().enumerate() {
                    LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * i..], *v);
                }
            }
        }
        None => h[123] = UNITS_MM,
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let body = &mut out[SINGLE_FILE_OFFSET..];
    match payload {
        Payload::Float32(values) => {
            for (chunk, &v) in body.chunks_exact_mut(4).zip(values) {
                LittleEndian::write_f32(chunk, v as f32);
            }
        }
        Payload::Uint8(values) => {
            for (b, &v) in body.iter_mut().zip(values) {
                *b = u8::from(v);
            }
        }
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Writes a volume as float32 NIfTI-1.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(v.geometry(), v.orientation(), Payload::Float32(v.data()));
    write_bytes(path.as_ref(), &bytes)
}

/// Writes a mask as uint8 NIfTI-1.
pub fn write_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(m.geometry(), m.orientation(), Payload::Uint8(m.data()));
    write_bytes(path.as_ref(), &bytes)
}
