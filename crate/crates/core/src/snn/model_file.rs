//! `FFLP` binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "FFLP" | version: u16 | n_in: u32 | n_hidden: u32 | n_out: u32 | v_th: f16 | lambda: f16
//! for layer in [L1, L2]:
//!     weights | alpha | beta | gamma | delta      each [post][pre] row-major f16
//! ```

use super::{LayerRule, Matrix, NetworkConfig, PlasticityRule, Result, SnnError};
use crate::half::Half;
use std::io::{Read, Write};
use std::path::Path;

pub const MODEL_MAGIC: &[u8; 4] = b"FFLP";
pub const MODEL_VERSION: u16 = 1;

/// Everything a model file carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFile {
    pub config: NetworkConfig,
    pub weights: [Matrix; 2],
    pub rule: PlasticityRule,
}

impl ModelFile {
    /// A rule file: the given rule with all weights zeroed.
    pub fn rule_only(config: NetworkConfig, rule: PlasticityRule) -> ModelFile {
        let [(r1, c1), (r2, c2)] = config.layer_shapes();
        ModelFile {
            config,
            weights: [Matrix::zeros(r1, c1), Matrix::zeros(r2, c2)],
            rule,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_model(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }
}

fn io_err(e: std::io::Error) -> SnnError {
    SnnError::Format(e.to_string())
}

fn put_matrix(w: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(m.as_slice().len() * 2);
    for h in m.as_slice() {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_model(w: &mut impl Write, model: &ModelFile) -> Result<()> {
    model.config.validate()?;
    model.rule.check_shape(&model.config)?;
    for (m, (rows, cols)) in model.weights.iter().zip(model.config.layer_shapes()) {
        m.check_shape("weights", rows, cols)?;
    }
    let c = &model.config;
    let mut header = Vec::with_capacity(22);
    header.extend_from_slice(MODEL_MAGIC);
    header.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for n in [c.n_in, c.n_hidden, c.n_out] {
        header.extend_from_slice(&(n as u32).to_le_bytes());
    }
    header.extend_from_slice(&c.v_th.to_le_bytes());
    header.extend_from_slice(&c.lambda.to_le_bytes());
    w.write_all(&header).map_err(io_err)?;
    for (weights, rule) in model.weights.iter().zip(&model.rule.layers) {
        for m in [weights, &rule.alpha, &rule.beta, &rule.gamma, &rule.delta] {
            put_matrix(w, m).map_err(io_err)?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SnnError::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn half(&mut self, what: &str) -> Result<Half> {
        Ok(Half::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let raw = self.take(rows * cols * 2, what)?;
        let data = raw
            .chunks_exact(2)
            .map(|b| Half::from_le_bytes([b[0], b[1]]))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn read_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MODEL_MAGIC {
        return Err(SnnError::Format("bad magic, expected \"FFLP\"".into()));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(SnnError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let n_in = cur.u32("n_in")? as usize;
    let n_hidden = cur.u32("n_hidden")? as usize;
    let n_out = cur.u32("n_out")? as usize;
    let v_th = cur.half("v_th")?;
    let lambda = cur.half("lambda")?;
    let config = NetworkConfig {
        n_in,
        n_hidden,
        n_out,
        v_th,
        lambda,
    };
    config.validate()?;
    let expected_body = config.synapse_count().checked_mul(10).ok_or_else(|| {
        SnnError::Format("layer dimensions overflow".into())
    })?;
    if bytes.len() - cur.pos != expected_body {
        return Err(SnnError::Format(format!(
            "body is {} bytes, dimensions require {expected_body}",
            bytes.len() - cur.pos
        )));
    }
    let mut weights = Vec::with_capacity(2);
    let mut layers = Vec::with_capacity(2);
    for (rows, cols) in config.layer_shapes() {
        weights.push(cur.matrix(rows, cols, "weights")?);
        layers.push(LayerRule {
            alpha: cur.matrix(rows, cols, "alpha")?,
            beta: cur.matrix(rows, cols, "beta")?,
            gamma: cur.matrix(rows, cols, "gamma")?,
            delta: cur.matrix(rows, cols, "delta")?,
        });
    }
    let [w1, w2]: [Matrix; 2] = weights.try_into().unwrap();
    let [r1, r2]: [LayerRule; 2] = layers.try_into().unwrap();
    Ok(ModelFile {
        config,
        weights: [w1, w2],
        rule: PlasticityRule { layers: [r1, r2] },
    })
}

pub fn write_model_file(path: impl AsRef<Path>, model: &ModelFile) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&model.to_bytes())?;
    f.sync_all()
}

pub fn read_model_file(path: impl AsRef<Path>) -> std::io::Result<Result<ModelFile>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(read_model(&bytes))
}

/// Coefficients of one layer with `(alpha, beta, gamma, delta)` interleaved
/// per synapse, `[post][pre]` order: the packed layout the accelerator fetches
/// in one wide access.
pub fn export_packed_coefficients(rule: &LayerRule) -> Vec<u8> {
    let mut out = Vec::with_capacity(rule.rows() * rule.cols() * 8);
    for post in 0..rule.rows() {
        for pre in 0..rule.cols() {
            let c = rule.coefficients(post, pre);
            for h in [c.alpha, c.beta, c.gamma, c.delta] {
                out.extend_from_slice(&h.to_le_bytes());
            }
        }
    }
    out
}
