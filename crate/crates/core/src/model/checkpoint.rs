//! Binary checkpoint: `XPR1`, 8-byte config fingerprint, `u64` LE parameter
//! count, then the parameters as `f64` LE.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XPR1";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    config: &ModelConfig,
    theta: &ModelParams,
) -> Result<()> {
    if theta.len() != config.num_params() {
        return Err(Error::Checkpoint(format!(
            "parameter vector has {} entries, config needs {}",
            theta.len(),
            config.num_params()
        )));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&config.hash())?;
    w.write_all(&(theta.len() as u64).to_le_bytes())?;
    for v in theta.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R, config: &ModelConfig) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut hash = [0u8; 8];
    read_exact(&mut r, &mut hash, "config fingerprint")?;
    if hash != config.hash() {
        return Err(Error::Checkpoint("config fingerprint mismatch".into()));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "length")?;
    let len = u64::from_le_bytes(len) as usize;
    if len != config.num_params() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {len} parameters, config needs {}",
            config.num_params()
        )));
    }
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        read_exact(&mut r, &mut buf, "parameters")?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ModelParams::from_vec(config, data).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, theta: &ModelParams) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), config, theta)
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ModelConfig::new(5, 9).with_dims(3, 4);
        let theta = ModelParams::init(&c, 3);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c, &theta).unwrap();
        assert_eq!(&buf[..4], b"XPR1");
        assert_eq!(buf.len(), 4 + 8 + 8 + 8 * c.num_params());
        assert_eq!(read_checkpoint(&buf[..], &c).unwrap(), theta);
    }

    #[test]
    fn rejects_mismatch_and_corruption() {
        let c = ModelConfig::new(5, 9).with_dims(3, 4);
        let theta = ModelParams::init(&c, 3);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c, &theta).unwrap();
        let other = c.with_dims(4, 4);
        assert!(matches!(
            read_checkpoint(&buf[..], &other),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(
            read_checkpoint(&buf[..buf.len() - 3], &c),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'Y';
        assert!(matches!(
            read_checkpoint(&bad[..], &c),
            Err(Error::Checkpoint(_))
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_checkpoint(&extra[..], &c),
            Err(Error::Checkpoint(_))
        ));
    }
}
