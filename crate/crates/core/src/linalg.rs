//! Small dense kernels over row-major `f64` buffers.
//!
//! Only what the metric code needs: Cholesky, triangular solves and a
//! compensated accumulator. Nothing here is meant as a general library.

/// Outcome of an in-place Cholesky attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    /// Lower-triangular factor, row-major `n x n`, upper part zeroed.
    pub lower: Vec<f64>,
    pub n: usize,
    /// Smallest diagonal pivot of the factor (before the square root).
    pub min_pivot: f64,
}

/// Cholesky factorization `a = L Lᵀ` of a symmetric matrix.
///
/// Returns `Err(pivot)` with the first pivot that fell at or below
/// `pivot_floor`.
pub fn cholesky(a: &[f64], n: usize, pivot_floor: f64) -> Result<CholeskyFactor, f64> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let row_j = j * n;
        let mut diag = a[row_j + j];
        for k in 0..j {
            diag -= l[row_j + k] * l[row_j + k];
        }
        if !(diag > pivot_floor) {
            return Err(if diag.is_nan() { f64::NEG_INFINITY } else { diag });
        }
        min_pivot = min_pivot.min(diag);
        let ljj = diag.sqrt();
        l[row_j + j] = ljj;
        for i in (j + 1)..n {
            let row_i = i * n;
            let mut s = a[row_i + j];
            for k in 0..j {
                s -= l[row_i + k] * l[row_j + k];
            }
            l[row_i + j] = s / ljj;
        }
    }
    Ok(CholeskyFactor {
        lower: l,
        n,
        min_pivot,
    })
}

impl CholeskyFactor {
    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| self.lower[i * self.n + i].ln())
            .sum::<f64>()
            * 2.0
    }

    /// Solves `L x = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, x)| l * x).sum();
            b[i] = (b[i] - s) / self.lower[i * n + i];
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
