//! Symmetric banded matrix with an in-place Cholesky factorization.
//!
//! The y-fastest node numbering keeps the global stiffness inside a band of
//! half-width `2*nely + 5`, so a banded direct factorization is both simple
//! and fast on these meshes.

/// Lower-banded symmetric matrix. Entry `(j + d, j)` for `d <= half_bandwidth`
/// lives at `data[j * (half_bandwidth + 1) + d]`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    half_bandwidth: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let hb = half_bandwidth.min(n.saturating_sub(1));
        Self { n, half_bandwidth: hb, data: vec![0.0; n * (hb + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `value` to entry `(hi, lo)` with `hi >= lo`.
    #[inline]
    pub fn add(&mut self, hi: usize, lo: usize, value: f64) {
        debug_assert!(hi >= lo && hi - lo <= self.half_bandwidth);
        self.data[lo * (self.half_bandwidth + 1) + (hi - lo)] += value;
    }

    /// Replaces the row and column of `dof` with the identity.
    pub fn constrain_dof(&mut self, dof: usize) {
        let w = self.half_bandwidth + 1;
        for d in 1..=self.half_bandwidth.min(dof) {
            self.data[(dof - d) * w + d] = 0.0;
        }
        for d in 1..=self.half_bandwidth.min(self.n - 1 - dof) {
            self.data[dof * w + d] = 0.0;
        }
        self.data[dof * w] = 1.0;
    }

    /// `out = f - K u` using the full symmetric matrix.
    pub fn residual(&self, u: &[f64], f: &[f64], out: &mut [f64]) {
        out.copy_from_slice(f);
        let w = self.half_bandwidth + 1;
        for j in 0..self.n {
            let col = &self.data[j * w..j * w + w];
            let uj = u[j];
            out[j] -= col[0] * uj;
            let m = self.half_bandwidth.min(self.n - 1 - j);
            let mut dot = 0.0;
            for d in 1..=m {
                out[j + d] -= col[d] * uj;
                dot += col[d] * u[j + d];
            }
            out[j] -= dot;
        }
    }

    /// In-place LL^T factorization. Returns `None` when the matrix is not
    /// positive definite (insufficient constraints).
    pub fn cholesky(mut self) -> Option<BandedCholesky> {
        let w = self.half_bandwidth + 1;
        for j in 0..self.n {
            let pivot = self.data[j * w];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            let l = pivot.sqrt();
            self.data[j * w] = l;
            let m = self.half_bandwidth.min(self.n - 1 - j);
            let inv = 1.0 / l;
            for d in 1..=m {
                self.data[j * w + d] *= inv;
            }
            for d in 1..=m {
                let c = self.data[j * w + d];
                if c == 0.0 {
                    continue;
                }
                // Column j + d receives the rank-1 update from column j.
                let (head, tail) = self.data.split_at_mut((j + d) * w);
                let src = &head[j * w + d..j * w + m + 1];
                let dst = &mut tail[..m + 1 - d];
                for (dst_e, src_e) in dst.iter_mut().zip(src.iter()) {
                    *dst_e -= c * src_e;
                }
            }
        }
        Some(BandedCholesky { n: self.n, half_bandwidth: self.half_bandwidth, data: self.data })
    }
}

/// Factorized form; solves by forward/backward substitution.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    half_bandwidth: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let w = self.half_bandwidth + 1;
        let mut x = rhs.to_vec();
        // L y = rhs
        for j in 0..self.n {
            let col = &self.data[j * w..j * w + w];
            let yj = x[j] / col[0];
            x[j] = yj;
            let m = self.half_bandwidth.min(self.n - 1 - j);
            for d in 1..=m {
                x[j + d] -= col[d] * yj;
            }
        }
        // L^T x = y
        for j in (0..self.n).rev() {
            let col = &self.data[j * w..j * w + w];
            let m = self.half_bandwidth.min(self.n - 1 - j);
            let mut dot = 0.0;
            for d in 1..=m {
                dot += col[d] * x[j + d];
            }
            x[j] = (x[j] - dot) / col[0];
        }
        x
    }
}
