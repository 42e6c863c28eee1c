//! Parameter checkpoints: a text header followed by little-endian f64 data.
//!
//! ```text
//! gdn-params v1 11
//! gvae.enc_w1 7 32
//! ...
//! cluster.mlp_b2 1 2
//! <blank line>
//! <row-major f64 values, tensor by tensor>
//! ```

use crate::cluster::ClusterNetParams;
use crate::gvae::GvaeParams;
use ndarray::Array2;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "gdn-params v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

fn bad(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

/// Both trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub gvae: GvaeParams,
    pub cluster: ClusterNetParams,
}

impl Checkpoint {
    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let g = GvaeParams::NAMES.iter().zip(self.gvae.tensors()).map(|(n, t)| (format!("gvae.{n}"), t));
        let c = ClusterNetParams::NAMES
            .iter()
            .zip(self.cluster.tensors())
            .map(|(n, t)| (format!("cluster.{n}"), t));
        g.chain(c).collect()
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), CheckpointError> {
        let named = self.named();
        let mut header = format!("{MAGIC} {}\n", named.len());
        for (name, t) in &named {
            header.push_str(&format!("{name} {} {}\n", t.nrows(), t.ncols()));
        }
        header.push('\n');
        out.write_all(header.as_bytes())?;
        for (_, t) in &named {
            for v in t.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self, CheckpointError> {
        let mut input = BufReader::new(input);
        let mut line = String::new();
        input.read_line(&mut line)?;
        let count: usize = line
            .trim_end()
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header line {:?}", line.trim_end())))?;
        let expected: Vec<String> = GvaeParams::NAMES
            .iter()
            .map(|n| format!("gvae.{n}"))
            .chain(ClusterNetParams::NAMES.iter().map(|n| format!("cluster.{n}")))
            .collect();
        if count != expected.len() {
            return Err(bad(format!("expected {} tensors, header lists {count}", expected.len())));
        }
        let mut shapes = Vec::with_capacity(count);
        for name in &expected {
            line.clear();
            input.read_line(&mut line)?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [n, r, c] if n == name => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()),
                _ => None,
            };
            shapes.push(parsed.ok_or_else(|| bad(format!("expected shape of {name}, got {:?}", line.trim_end())))?);
        }
        line.clear();
        input.read_line(&mut line)?;
        if !line.trim().is_empty() {
            return Err(bad("missing blank line after header"));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, &(r, c)) in expected.iter().zip(&shapes) {
            let mut bytes = vec![0u8; r * c * 8];
            input
                .read_exact(&mut bytes)
                .map_err(|_| bad(format!("truncated data in {name}")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(Array2::from_shape_vec((r, c), data).expect("length matches shape"));
        }
        if input.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing bytes after data"));
        }
        let cluster = tensors.split_off(GvaeParams::NAMES.len());
        Ok(Checkpoint {
            gvae: GvaeParams::from_tensors(tensors).ok_or_else(|| bad("inconsistent encoder/decoder shapes"))?,
            cluster: ClusterNetParams::from_tensors(cluster).ok_or_else(|| bad("inconsistent cluster-net shapes"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            gvae: GvaeParams::init(5, 8, 4, 1),
            cluster: ClusterNetParams::init(5, 8, 3, 2).unwrap(),
        }
    }

    #[test]
    fn values_survive_bit_exactly() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"gdn-params v1 11\ngvae.enc_w1 5 8\n"));
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let err = |bytes: &[u8]| Checkpoint::read_from(bytes).unwrap_err().to_string();
        assert!(err(&buf[..buf.len() - 3]).contains("truncated"));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(err(&extra).contains("trailing"));
        assert!(err(b"gdn-params v2 11\n").contains("header"));
        let text = String::from_utf8_lossy(&buf[..40]).replace("enc_w1", "enc_w9");
        let mut renamed = text.into_bytes();
        renamed.extend_from_slice(&buf[40..]);
        assert!(err(&renamed).contains("gvae.enc_w1"));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut c = sample();
        c.gvae.enc_mu = Array2::zeros((3, 4));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }
}
