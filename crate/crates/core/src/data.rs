//! Count response with a focus / auxiliary partition of the regressors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which auxiliary columns a submodel drops. The restriction matrix R_j has
/// one unit column per excluded index, so RᵀR = I.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestrictionMatrix {
    excluded: Vec<usize>,
    k2: usize,
}

impl RestrictionMatrix {
    pub fn new(k2: usize, excluded: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut excluded: Vec<usize> = excluded.into_iter().collect();
        excluded.sort_unstable();
        excluded.dedup();
        if let Some(&bad) = excluded.iter().find(|&&h| h >= k2) {
            return Err(Error::Domain(format!("excluded index {bad} out of range for k2 = {k2}")));
        }
        Ok(Self { excluded, k2 })
    }

    pub fn unrestricted(k2: usize) -> Self {
        Self { excluded: Vec::new(), k2 }
    }

    pub fn fully_restricted(k2: usize) -> Self {
        Self { excluded: (0..k2).collect(), k2 }
    }

    /// The submodel whose excluded set is given by the zero bits of `mask`
    /// (bit h set means auxiliary column h is kept).
    pub fn from_inclusion_mask(k2: usize, mask: u64) -> Self {
        Self {
            excluded: (0..k2).filter(|&h| mask & (1 << h) == 0).collect(),
            k2,
        }
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn rank(&self) -> usize {
        self.excluded.len()
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    /// Diagonal of W_j = I − R_j R_jᵀ: 1 for kept columns, 0 for excluded.
    pub fn keep_diagonal(&self) -> Vec<f64> {
        let mut w = vec![1.0; self.k2];
        for &h in &self.excluded {
            w[h] = 0.0;
        }
        w
    }

    /// Dense k₂ × r_j matrix R_j.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.k2, self.excluded.len());
        for (col, &h) in self.excluded.iter().enumerate() {
            r[(h, col)] = 1.0;
        }
        r
    }
}

/// Counts `y` with focus design `x1` (n × k₁) and auxiliary design `x2`
/// (n × k₂).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u64>,
    x1: DMatrix<f64>,
    x2: DMatrix<f64>,
    focus_names: Vec<String>,
    aux_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<u64>, x1: DMatrix<f64>, x2: DMatrix<f64>) -> Result<Self> {
        let focus_names = (0..x1.ncols()).map(|j| format!("x1_{}", j + 1)).collect();
        let aux_names = (0..x2.ncols()).map(|j| format!("x2_{}", j + 1)).collect();
        Self::with_names(y, x1, x2, focus_names, aux_names)
    }

    pub fn with_names(
        y: Vec<u64>,
        x1: DMatrix<f64>,
        x2: DMatrix<f64>,
        focus_names: Vec<String>,
        aux_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x1.nrows() != n || x2.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "response has {n} rows, X1 has {}, X2 has {}",
                x1.nrows(),
                x2.nrows()
            )));
        }
        if focus_names.len() != x1.ncols() || aux_names.len() != x2.ncols() {
            return Err(Error::DimensionMismatch("column names do not match design widths".into()));
        }
        if x1.ncols() == 0 {
            return Err(Error::Domain("at least one focus regressor is required".into()));
        }
        let k = x1.ncols() + x2.ncols();
        if n < k + 1 {
            return Err(Error::Domain(format!("need n >= k1 + k2 + 1 = {}, got n = {n}", k + 1)));
        }
        if x1.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("design contains non-finite entries".into()));
        }
        Ok(Self { y, x1, x2, focus_names, aux_names })
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn x1(&self) -> &DMatrix<f64> {
        &self.x1
    }

    pub fn x2(&self) -> &DMatrix<f64> {
        &self.x2
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k1(&self) -> usize {
        self.x1.ncols()
    }

    pub fn k2(&self) -> usize {
        self.x2.ncols()
    }

    pub fn focus_names(&self) -> &[String] {
        &self.focus_names
    }

    pub fn aux_names(&self) -> &[String] {
        &self.aux_names
    }

    /// (X₁, X₂) side by side.
    pub fn full_design(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut x = DMatrix::zeros(n, self.k1() + self.k2());
        x.columns_mut(0, self.k1()).copy_from(&self.x1);
        x.columns_mut(self.k1(), self.k2()).copy_from(&self.x2);
        x
    }

    /// Rows `idx` of this dataset, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let x1 = self.x1.select_rows(idx);
        let x2 = self.x2.select_rows(idx);
        Self::with_names(y, x1, x2, self.focus_names.clone(), self.aux_names.clone())
    }

    pub fn response_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| v as f64).collect()
    }
}
