use serde::{Deserialize, Serialize};

/// Per-feature affine map `(x - mean) / std` fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Features with (near) zero spread keep unit scale.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            assert_eq!(row.len(), dim, "standardizer row width");
            n += 1;
            for k in 0..dim {
                let d = row[k] - mean[k];
                mean[k] += d / n as f64;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let std = m2
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-6 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = (x[k] - self.mean[k]) / self.std[k];
        }
    }
}
