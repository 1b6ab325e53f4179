//! Flat binary patch dump: `b"DYNP"`, then `H`, `W`, `count` as
//! little-endian `u32`, then per patch `H*W` little-endian `f64` pixels
//! followed by `H*W` mask bytes. Patient ids are not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::patch::Patch;
use crate::tensor::Tensor;

pub const PATCH_MAGIC: [u8; 4] = *b"DYNP";

pub fn write_patches(path: &Path, patches: &[Patch]) -> Result<()> {
    let first = patches.first().ok_or(Error::Empty("patch list"))?;
    let (h, w) = (first.image.shape()[1], first.image.shape()[2]);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = Vec::with_capacity(16 + patches.len() * h * w * 9);
    buf.extend_from_slice(&PATCH_MAGIC);
    for v in [h, w, patches.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in patches {
        p.image.expect_shape(&[1, h, w])?;
        for v in p.image.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(p.mask.data().iter().map(|&m| m as u8));
    }
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_patches(path: &Path) -> Result<Vec<Patch>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..4] != PATCH_MAGIC {
        return Err(Error::Format(format!(
            "{}: missing patch header",
            path.display()
        )));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, count) = (word(0), word(1), word(2));
    let plane = h * w;
    let per_patch = plane * 9;
    if bytes.len() != 16 + count * per_patch {
        return Err(Error::Format(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            count * per_patch,
            bytes.len() - 16
        )));
    }
    let mut out = Vec::with_capacity(count);
    for chunk in bytes[16..].chunks_exact(per_patch) {
        let image: Vec<f64> = chunk[..plane * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mask: Vec<f64> = chunk[plane * 8..].iter().map(|&b| f64::from(b)).collect();
        out.push(Patch::new(
            Tensor::new(vec![1, h, w], image)?,
            Tensor::new(vec![1, h, w], mask)?,
            0,
        )?);
    }
    Ok(out)
}
