//! Flat binary parameter files.
//!
//! Each record is `name_len: u32`, the UTF-8 name, `rank: u32`, `rank` dims
//! as `u32`, then the values as `f64`. Everything is little-endian and
//! records repeat until end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{AdError, ParamStore, Tensor};

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 16;

pub fn write_checkpoint<W: Write>(params: &ParamStore, mut w: W) -> Result<(), AdError> {
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32, AdError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| truncated(e, *offset))?;
    *offset += 4;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: std::io::Error, offset: u64) -> AdError {
    if e.kind() == ErrorKind::UnexpectedEof {
        AdError::Checkpoint(format!("truncated record at byte {offset}"))
    } else {
        AdError::Io(e)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore, AdError> {
    let mut store = ParamStore::new();
    let mut offset = 0u64;
    loop {
        let mut first = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match r.read(&mut first[got..])? {
                0 => break,
                n => got += n,
            }
        }
        if got == 0 {
            return Ok(store);
        }
        if got < 4 {
            return Err(AdError::Checkpoint(format!("truncated record at byte {offset}")));
        }
        let name_len = u32::from_le_bytes(first);
        if name_len > MAX_NAME_LEN {
            return Err(AdError::Checkpoint(format!(
                "name length {name_len} at byte {offset} is implausible"
            )));
        }
        offset += 4;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|e| truncated(e, offset))?;
        let name = String::from_utf8(name)
            .map_err(|_| AdError::Checkpoint(format!("name at byte {offset} is not UTF-8")))?;
        offset += name_len as u64;

        let rank = read_u32(&mut r, &mut offset)?;
        if rank > MAX_RANK {
            return Err(AdError::Checkpoint(format!("rank {rank} of {name} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, &mut offset)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|e| truncated(e, offset))?;
        offset += bytes.len() as u64;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        store
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| AdError::Checkpoint(e.to_string()))?;
    }
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), AdError> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, AdError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
