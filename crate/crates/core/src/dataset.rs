use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One observation batch: `ℓ` columns in `ℝ^d` observed at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DMatrix<f64>,
}

impl Sample {
    pub fn new(t: f64, x: DMatrix<f64>) -> Self {
        Self { t, x }
    }
}

/// Ordered samples sharing an ambient dimension.
///
/// Times built through [`Dataset::new`] lie in `[0, 1]`. Time-shifted copies
/// (see [`Dataset::shift_times`]) may leave that interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dataset = Self::with_any_times(samples)?;
        if let Some(s) = dataset.samples.iter().find(|s| !(0.0..=1.0).contains(&s.t)) {
            return Err(Error::dims(format!("sample time {} outside [0, 1]", s.t)));
        }
        Ok(dataset)
    }

    /// Like [`Dataset::new`] but accepts any finite time.
    pub fn with_any_times(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::dims("dataset needs at least one sample"))?;
        let dim = first.x.nrows();
        if dim == 0 {
            return Err(Error::dims("ambient dimension must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.nrows() != dim {
                return Err(Error::dims(format!(
                    "sample {i} has dimension {} but sample 0 has {dim}",
                    s.x.nrows()
                )));
            }
            if s.x.ncols() == 0 {
                return Err(Error::dims(format!("sample {i} has no columns")));
            }
            if !s.t.is_finite() {
                return Err(Error::dims(format!("sample {i} has non-finite time")));
            }
        }
        Ok(Self { samples, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Total number of columns `Σ ℓ_t`.
    pub fn total_columns(&self) -> usize {
        self.samples.iter().map(|s| s.x.ncols()).sum()
    }

    /// `Σ ‖X_i‖_F²`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.x.norm_squared()).sum()
    }

    /// All columns side by side, `d × Σℓ`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.total_columns());
        let mut offset = 0;
        for s in &self.samples {
            out.columns_mut(offset, s.x.ncols()).copy_from(&s.x);
            offset += s.x.ncols();
        }
        out
    }

    /// Copy with every time replaced by `t - offset`.
    pub fn shift_times(&self, offset: f64) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample::new(s.t - offset, s.x.clone()))
                .collect(),
            dim: self.dim,
        }
    }

    pub(crate) fn from_parts(samples: Vec<Sample>, dim: usize) -> Self {
        Self { samples, dim }
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}
