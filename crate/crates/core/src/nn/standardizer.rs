use super::tensor::Tensor;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// Fixed per-dimension affine map `x -> (x - offset) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn new(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() || scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Shape("standardizer needs matching, positive scales".into()));
        }
        Ok(Standardizer { offset, scale })
    }

    /// Mean and standard deviation of each column; degenerate columns keep unit scale.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { offset: mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((v, o), s)| (v - o) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((v, o), s)| v * s + o)
            .collect()
    }

    pub fn normalize_rows(&self, x: &Tensor) -> Tensor {
        let data = (0..x.rows()).flat_map(|r| self.normalize(x.row_slice(r))).collect();
        Tensor::new(vec![x.rows(), x.cols()], data).expect("same shape")
    }

    pub(crate) fn repeat_scale(&self, rows: usize) -> Tensor {
        repeat(&self.scale, rows)
    }

    pub(crate) fn repeat_offset(&self, rows: usize) -> Tensor {
        repeat(&self.offset, rows)
    }

    pub(crate) fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        let join = |v: &[f64]| {
            v.iter()
                .map(|&x| crate::experts::format_float(x))
                .collect::<Vec<_>>()
                .join(" ")
        };
        ck.set_meta(&format!("{prefix}_offset"), join(&self.offset));
        ck.set_meta(&format!("{prefix}_scale"), join(&self.scale));
    }

    pub(crate) fn load_from(ck: &Checkpoint, prefix: &str, dim: usize) -> Result<Self> {
        let read = |key: String| -> Result<Vec<f64>> {
            let raw = ck.meta(&key)?;
            let v = raw
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("bad numbers in '{key}'")))?;
            if v.len() != dim {
                return Err(Error::Config(format!("'{key}' has {} values, expected {dim}", v.len())));
            }
            Ok(v)
        };
        Standardizer::new(read(format!("{prefix}_offset"))?, read(format!("{prefix}_scale"))?)
    }
}

fn repeat(v: &[f64], rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * v.len());
    for _ in 0..rows {
        data.extend_from_slice(v);
    }
    Tensor::new(vec![rows, v.len()], data).expect("repeat shape")
}
