//! `SFW1` weight files.
//!
//! Layout (little-endian): magic `SFW1`, u32 version, u32 descriptor byte
//! length, UTF-8 descriptor, then for every parameter tensor in layer
//! order a u64 element count followed by that many f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetError, Network, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SFW1";
pub const WEIGHTS_VERSION: u32 = 1;

const MAX_DESCRIPTOR: u32 = 1 << 20;

pub fn write_weights(net: &Network, mut w: impl Write) -> Result<()> {
    let descriptor = net.descriptor();
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(descriptor.len() as u32).to_le_bytes())?;
    w.write_all(descriptor.as_bytes())?;
    for layer in net.layers() {
        for p in layer.params() {
            w.write_all(&(p.len() as u64).to_le_bytes())?;
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(mut r: impl Read) -> Result<Network> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != WEIGHTS_MAGIC {
        return Err(NetError::CorruptWeights(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != WEIGHTS_VERSION {
        return Err(NetError::WeightsVersion {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let len = read_u32(&mut r, "descriptor length")?;
    if len > MAX_DESCRIPTOR {
        return Err(NetError::CorruptWeights(format!("descriptor length {len} is implausible")));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact(&mut r, &mut buf, "descriptor")?;
    let descriptor =
        String::from_utf8(buf).map_err(|_| NetError::CorruptWeights("descriptor is not UTF-8".into()))?;
    let (input, specs) = Network::parse_descriptor(&descriptor)?;
    let mut net = Network::zeroed(input, &specs)?;
    for (index, layer) in net.layers_mut().iter_mut().enumerate() {
        for p in layer.params_mut() {
            let mut count = [0u8; 8];
            read_exact(&mut r, &mut count, "block length")?;
            let count = u64::from_le_bytes(count);
            if count != p.len() as u64 {
                return Err(NetError::ArchitectureMismatch(format!(
                    "layer {index}: block has {count} values, architecture needs {}",
                    p.len()
                )));
            }
            let mut bytes = [0u8; 8];
            for v in p.data_mut() {
                read_exact(&mut r, &mut bytes, "weights")?;
                *v = f64::from_le_bytes(bytes);
                if !v.is_finite() {
                    return Err(NetError::CorruptWeights(format!("non-finite weight in layer {index}")));
                }
            }
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(NetError::CorruptWeights("trailing bytes after last block".into()));
    }
    Ok(net)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_weights(net, BufWriter::new(File::create(path)?))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    read_weights(BufReader::new(File::open(path)?))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NetError::CorruptWeights(format!("truncated while reading {what}")),
        _ => NetError::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
