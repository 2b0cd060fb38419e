//! Minimal NIfTI-1 single-file (`.nii`) reader/writer plus the raw `WFMV`
//! volume format.
//!
//! NIfTI stores `dim[1]` (x) fastest, which maps to the volume's width axis;
//! `dim[3]` (z) maps to depth. Orientation fields are carried through but
//! never interpreted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims, Volume};

pub const HEADER_SIZE: i32 = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

pub const RAW_MAGIC: [u8; 4] = *b"WFMV";
pub const RAW_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::Uint8 => 8,
            Datatype::Int16 => 16,
            Datatype::Float32 => 32,
        }
    }

    fn bytes(self) -> usize {
        self.bitpix() as usize / 8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// The NIfTI-1 header fields this crate reads and writes.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    /// quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z.
    pub quatern: [f32; 6],
    /// srow_x, srow_y, srow_z.
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
    pub endianness: Endianness,
}

impl Default for NiftiHeader {
    fn default() -> Self {
        let mut srow = [[0.0; 4]; 3];
        for (i, row) in srow.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self {
            sizeof_hdr: HEADER_SIZE,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: Datatype::Float32.code(),
            bitpix: 32,
            pixdim: [1.0; 8],
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 0.0,
            scl_inter: 0.0,
            xyzt_units: 2, // mm
            descrip: [0; 80],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 6],
            srow,
            magic: MAGIC_SINGLE,
            endianness: Endianness::Little,
        }
    }
}

impl NiftiHeader {
    /// `[depth, height, width]` from `dim[3], dim[2], dim[1]`.
    pub fn volume_dims(&self) -> Result<Dims> {
        let rank = self.dim[0] as usize;
        let extent = |axis: usize| -> Result<usize> {
            if axis > rank {
                return Ok(1);
            }
            let d = self.dim[axis];
            if d < 1 {
                return Err(Error::BadHeader(format!("dim[{axis}] = {d}")));
            }
            Ok(d as usize)
        };
        for axis in 4..=rank {
            if extent(axis)? != 1 {
                return Err(Error::BadHeader(format!(
                    "dim[{axis}] = {} (only 3D volumes are supported)",
                    self.dim[axis]
                )));
            }
        }
        Ok([extent(3)?, extent(2)?, extent(1)?])
    }

    pub fn spacing(&self) -> [f32; 3] {
        let s = |i: usize| if self.pixdim[i] > 0.0 { self.pixdim[i] } else { 1.0 };
        [s(3), s(2), s(1)]
    }

    pub fn for_volume(v: &Volume, datatype: Datatype) -> Result<Self> {
        let dims = v.dims();
        if dims.iter().any(|&d| d > i16::MAX as usize) {
            return Err(Error::DimsOverflow(dims));
        }
        let mut hdr = NiftiHeader {
            datatype: datatype.code(),
            bitpix: datatype.bitpix(),
            ..Default::default()
        };
        hdr.dim[1] = dims[2] as i16;
        hdr.dim[2] = dims[1] as i16;
        hdr.dim[3] = dims[0] as i16;
        let sp = v.spacing();
        hdr.pixdim[0] = 1.0; // qfac
        hdr.pixdim[1] = sp[2];
        hdr.pixdim[2] = sp[1];
        hdr.pixdim[3] = sp[0];
        Ok(hdr)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[at..at + N]);
        if self.big {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.arr(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.arr(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.arr(at))
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE as usize {
        return Err(Error::Truncated(format!(
            "header needs {HEADER_SIZE} bytes, file has {}",
            bytes.len()
        )));
    }
    let le_rank = i16::from_le_bytes([bytes[40], bytes[41]]);
    let big = !(1..=7).contains(&le_rank);
    let r = Reader { bytes, big };
    let sizeof_hdr = r.i32(0);
    if sizeof_hdr != HEADER_SIZE {
        return Err(Error::BadHeader(format!("sizeof_hdr = {sizeof_hdr}, expected 348")));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    if !(1..=7).contains(&dim[0]) {
        return Err(Error::BadHeader(format!("dim[0] = {} outside [1, 7]", dim[0])));
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(76 + 4 * i);
    }
    let mut descrip = [0u8; 80];
    descrip.copy_from_slice(&bytes[148..228]);
    let mut quatern = [0f32; 6];
    for (i, q) in quatern.iter_mut().enumerate() {
        *q = r.f32(256 + 4 * i);
    }
    let mut srow = [[0f32; 4]; 3];
    for (i, row) in srow.iter_mut().enumerate() {
        for (j, s) in row.iter_mut().enumerate() {
            *s = r.f32(280 + 16 * i + 4 * j);
        }
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[344..348]);
    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(Error::BadMagic(magic));
    }
    let hdr = NiftiHeader {
        sizeof_hdr,
        dim,
        datatype: r.i16(70),
        bitpix: r.i16(72),
        pixdim,
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        xyzt_units: bytes[123],
        descrip,
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        quatern,
        srow,
        magic,
        endianness: if big { Endianness::Big } else { Endianness::Little },
    };
    Datatype::from_code(hdr.datatype)?;
    Ok(hdr)
}

/// Decode a complete single-file NIfTI-1 image.
pub fn decode_nifti(bytes: &[u8]) -> Result<(NiftiHeader, Volume)> {
    let hdr = parse_header(bytes)?;
    if hdr.magic != MAGIC_SINGLE {
        return Err(Error::BadHeader(
            "detached header (ni1) without image data is not supported".into(),
        ));
    }
    let dtype = Datatype::from_code(hdr.datatype)?;
    let dims = hdr.volume_dims()?;
    let n = voxel_count(dims);
    let offset = if hdr.vox_offset >= HEADER_SIZE as f32 {
        hdr.vox_offset as usize
    } else {
        VOX_OFFSET
    };
    let need = offset + n * dtype.bytes();
    if bytes.len() < need {
        return Err(Error::Truncated(format!(
            "data section needs {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let r = Reader {
        bytes,
        big: hdr.endianness == Endianness::Big,
    };
    let mut data: Vec<f32> = (0..n)
        .map(|i| match dtype {
            Datatype::Uint8 => bytes[offset + i] as f32,
            Datatype::Int16 => r.i16(offset + 2 * i) as f32,
            Datatype::Float32 => r.f32(offset + 4 * i),
        })
        .collect();
    if hdr.scl_slope != 0.0 && hdr.scl_slope.is_finite() {
        let (slope, inter) = (hdr.scl_slope, hdr.scl_inter);
        for x in &mut data {
            *x = *x * slope + inter;
        }
    }
    let spacing = hdr.spacing();
    let volume = Volume::new(dims, spacing, data)?;
    Ok((hdr, volume))
}

/// Encode with an explicit header template. Dim, spacing, datatype, bitpix,
/// vox_offset and magic are overwritten to describe `v`.
pub fn encode_nifti_with(
    v: &Volume,
    template: &NiftiHeader,
    datatype: Datatype,
    endianness: Endianness,
) -> Result<Vec<u8>> {
    let sized = NiftiHeader::for_volume(v, datatype)?;
    // Spacing follows the volume; qfac and the remaining pixdims follow the template.
    let mut pixdim = template.pixdim;
    pixdim[1..4].copy_from_slice(&sized.pixdim[1..4]);
    let hdr = NiftiHeader {
        dim: sized.dim,
        pixdim,
        datatype: sized.datatype,
        bitpix: sized.bitpix,
        vox_offset: VOX_OFFSET as f32,
        magic: MAGIC_SINGLE,
        endianness,
        ..template.clone()
    };
    let big = endianness == Endianness::Big;
    let mut out = vec![0u8; VOX_OFFSET + v.len() * datatype.bytes()];
    let put = |out: &mut [u8], at: usize, raw: &[u8]| {
        let dst = &mut out[at..at + raw.len()];
        dst.copy_from_slice(raw);
        if big {
            dst.reverse();
        }
    };
    put(&mut out, 0, &hdr.sizeof_hdr.to_le_bytes());
    for (i, d) in hdr.dim.iter().enumerate() {
        put(&mut out, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut out, 70, &hdr.datatype.to_le_bytes());
    put(&mut out, 72, &hdr.bitpix.to_le_bytes());
    for (i, p) in hdr.pixdim.iter().enumerate() {
        put(&mut out, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut out, 108, &hdr.vox_offset.to_le_bytes());
    put(&mut out, 112, &hdr.scl_slope.to_le_bytes());
    put(&mut out, 116, &hdr.scl_inter.to_le_bytes());
    out[123] = hdr.xyzt_units;
    out[148..228].copy_from_slice(&hdr.descrip);
    put(&mut out, 252, &hdr.qform_code.to_le_bytes());
    put(&mut out, 254, &hdr.sform_code.to_le_bytes());
    for (i, q) in hdr.quatern.iter().enumerate() {
        put(&mut out, 256 + 4 * i, &q.to_le_bytes());
    }
    for (i, row) in hdr.srow.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            put(&mut out, 280 + 16 * i + 4 * j, &s.to_le_bytes());
        }
    }
    out[344..348].copy_from_slice(&hdr.magic);
    for (i, &x) in v.data().iter().enumerate() {
        match datatype {
            Datatype::Float32 => put(&mut out, VOX_OFFSET + 4 * i, &x.to_le_bytes()),
            Datatype::Int16 => {
                let q = x.round();
                if q != x || q < i16::MIN as f32 || q > i16::MAX as f32 {
                    return Err(Error::InvalidArgument(format!(
                        "value {x} not representable as int16"
                    )));
                }
                put(&mut out, VOX_OFFSET + 2 * i, &(q as i16).to_le_bytes());
            }
            Datatype::Uint8 => {
                if x.round() != x || !(0.0..=255.0).contains(&x) {
                    return Err(Error::InvalidArgument(format!(
                        "value {x} not representable as uint8"
                    )));
                }
                out[VOX_OFFSET + i] = x as u8;
            }
        }
    }
    Ok(out)
}

/// Little-endian float32 with slope 0.
pub fn encode_nifti(v: &Volume) -> Result<Vec<u8>> {
    encode_nifti_with(v, &NiftiHeader::default(), Datatype::Float32, Endianness::Little)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    Ok(read_nifti_with_header(path)?.1)
}

pub fn read_nifti_with_header(path: impl AsRef<Path>) -> Result<(NiftiHeader, Volume)> {
    decode_nifti(&fs::read(path)?)
}

pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_nifti(v)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Write float32 data while keeping the orientation fields of `template`.
pub fn write_nifti_like(v: &Volume, template: &NiftiHeader, path: impl AsRef<Path>) -> Result<()> {
    let tpl = NiftiHeader {
        scl_slope: 0.0,
        scl_inter: 0.0,
        ..template.clone()
    };
    let bytes = encode_nifti_with(v, &tpl, Datatype::Float32, Endianness::Little)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Raw format: `WFMV`, u32 version, 3×u32 dims, 3×f32 spacing, f32 data,
/// all little-endian.
pub fn encode_raw(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * v.len());
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    for d in v.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<Volume> {
    const HEAD: usize = 4 + 4 + 12 + 12;
    if bytes.len() < HEAD {
        return Err(Error::Truncated(format!("raw header needs {HEAD} bytes")));
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != RAW_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let word = |at: usize| <[u8; 4]>::try_from(&bytes[at..at + 4]).unwrap();
    let version = u32::from_le_bytes(word(4));
    if version != RAW_VERSION {
        return Err(Error::BadHeader(format!("raw version {version}")));
    }
    let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(8 + 4 * i)) as usize);
    let spacing = [0, 1, 2].map(|i| f32::from_le_bytes(word(20 + 4 * i)));
    let n = voxel_count(dims);
    if bytes.len() < HEAD + 4 * n {
        return Err(Error::Truncated(format!(
            "raw data needs {} bytes, file has {}",
            HEAD + 4 * n,
            bytes.len()
        )));
    }
    let data = (0..n).map(|i| f32::from_le_bytes(word(HEAD + 4 * i))).collect();
    Volume::new(dims, spacing, data)
}

pub fn write_raw(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_raw(v))?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Volume> {
    decode_raw(&fs::read(path)?)
}

/// Dispatch on extension: `.wfmv` is raw, everything else NIfTI.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let p = path.as_ref();
    if p.extension().is_some_and(|e| e == "wfmv") {
        read_raw(p)
    } else {
        read_nifti(p)
    }
}
