//! LDMN model persistence.
//!
//! Shared binary format for every network type: magic `LDMN`, format version
//! u16, then the payload. A plain MLP payload is a layer count u16 followed
//! by, per layer, d_in u32, d_out u32, activation u8, weights then biases as
//! little-endian f64. Composite models (encoder, noise predictor) wrap MLP
//! payloads in tagged sections. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;
use crate::numeric::mlp::{Activation, Layer, Mlp};

pub const MAGIC: &[u8; 4] = b"LDMN";
pub const VERSION: u16 = 1;

// Section tags for composite model files.
pub const SECTION_TRUNK: u8 = 0xE1;
pub const SECTION_HEAD: u8 = 0xE2;
pub const SECTION_CORE: u8 = 0xD1;
pub const SECTION_CLASS_EMBED: u8 = 0xD2;
pub const SECTION_TIME_EMBED: u8 = 0xD3;
pub const SECTION_STANDARDIZE: u8 = 0xD4;
pub const SECTION_SCHEDULE_HASH: u8 = 0xD5;

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for &v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(eof)?;
    Ok(b[0])
}

pub fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(eof)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(eof)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(eof)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(eof)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn write_magic<W: Write>(w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u16(w, VERSION)
}

pub fn read_magic<R: Read>(r: &mut R) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(eof)?;
    if &m != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected LDMN",
            String::from_utf8_lossy(&m)
        )));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported LDMN version {version}, expected {VERSION}"
        )));
    }
    Ok(())
}

pub fn expect_section<R: Read>(r: &mut R, tag: u8, name: &str) -> Result<()> {
    let got = read_u8(r)?;
    if got != tag {
        return Err(Error::Format(format!(
            "expected {name} section (0x{tag:02X}), found 0x{got:02X}"
        )));
    }
    Ok(())
}

/// Write one MLP payload: layer count, then per-layer dims, activation,
/// weights, biases.
pub fn write_mlp_block<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    write_u16(w, net.layers().len() as u16)?;
    for layer in net.layers() {
        write_u32(w, layer.in_dim() as u32)?;
        write_u32(w, layer.out_dim() as u32)?;
        write_u8(w, layer.activation.code())?;
        write_f64_slice(w, layer.weight.data())?;
        write_f64_slice(w, &layer.bias)?;
    }
    Ok(())
}

pub fn read_mlp_block<R: Read>(r: &mut R) -> Result<Mlp> {
    let count = read_u16(r)? as usize;
    if count == 0 {
        return Err(Error::Format("mlp block with zero layers".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let d_in = read_u32(r)? as usize;
        let d_out = read_u32(r)? as usize;
        let activation = Activation::from_code(read_u8(r)?)?;
        let weight = Matrix::from_vec(d_in, d_out, read_f64_vec(r, d_in * d_out)?)?;
        let bias = read_f64_vec(r, d_out)?;
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    Mlp::from_layers(layers)
}

/// Save a plain MLP: magic, version, one MLP payload.
pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w)?;
    write_mlp_block(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r)?;
    read_mlp_block(&mut r)
}
