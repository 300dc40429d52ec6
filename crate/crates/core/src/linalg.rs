//! Solves with the implicit-Euler step matrix.
//!
//! Inside a pipe a cell only sees its upwind neighbour, so M = I − Δt ∂F/∂x is
//! lower bidiagonal except for the columns of pipe outlet cells, which feed
//! velocities and mixing temperatures everywhere. We store M = L + E S, with L
//! bidiagonal, E the dense outlet columns (diagonal removed) and S the
//! selection of outlet entries, and solve through the Woodbury identity. The
//! capacitance matrix I + S L⁻¹ E is only N × N.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, LU, Dyn};

/// M = L + E S, see the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderedBidiagonal {
    /// M[r, r]
    pub diag: Vec<f64>,
    /// M[r, r − 1]; zero where r starts a new block.
    pub sub: Vec<f64>,
    /// Column indices of the dense columns. Must not carry a sub-diagonal entry.
    pub special: Vec<usize>,
    /// Dense columns, column-major n × special.len(), with the diagonal entry zero.
    pub border: Vec<f64>,
}

impl BorderedBidiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out: Vec<f64> = (0..n)
            .map(|r| self.diag[r] * x[r] + if r > 0 { self.sub[r] * x[r - 1] } else { 0.0 })
            .collect();
        for (k, &col) in self.special.iter().enumerate() {
            let e = &self.border[k * n..(k + 1) * n];
            for r in 0..n {
                out[r] += e[r] * x[col];
            }
        }
        out
    }

    /// Row-major dense copy, for tests and debugging.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut m = vec![0.0; n * n];
        for r in 0..n {
            m[r * n + r] = self.diag[r];
            if r > 0 {
                m[r * n + r - 1] += self.sub[r];
            }
        }
        for (k, &col) in self.special.iter().enumerate() {
            for r in 0..n {
                m[r * n + col] += self.border[k * n + r];
            }
        }
        m
    }

    fn solve_lower(&self, b: &mut [f64]) {
        for r in 0..b.len() {
            let carry = if r > 0 { self.sub[r] * b[r - 1] } else { 0.0 };
            b[r] = (b[r] - carry) / self.diag[r];
        }
    }

    fn solve_lower_transpose(&self, c: &mut [f64]) {
        let n = c.len();
        for r in (0..n).rev() {
            let carry = if r + 1 < n { self.sub[r + 1] * c[r + 1] } else { 0.0 };
            c[r] = (c[r] - carry) / self.diag[r];
        }
    }

    /// Precomputes L⁻¹E and factors the capacitance matrix. `None` if L has a
    /// zero pivot or the capacitance matrix is singular.
    pub fn factor(self) -> Option<BorderedFactor> {
        if self.diag.iter().any(|&d| d == 0.0 || !d.is_finite()) {
            return None;
        }
        let n = self.dim();
        let m = self.special.len();
        let mut z = self.border.clone();
        for k in 0..m {
            self.solve_lower(&mut z[k * n..(k + 1) * n]);
        }
        let cap = DMatrix::from_fn(m, m, |i, k| {
            let id = if i == k { 1.0 } else { 0.0 };
            id + z[k * n + self.special[i]]
        });
        let lu = LU::new(cap.clone());
        let lu_t = LU::new(cap.transpose());
        if !lu.is_invertible() || !lu_t.is_invertible() {
            return None;
        }
        Some(BorderedFactor { mat: self, z, lu, lu_t })
    }
}

/// Factored [`BorderedBidiagonal`].
#[derive(Debug, Clone)]
pub struct BorderedFactor {
    mat: BorderedBidiagonal,
    z: Vec<f64>,
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
}

impl BorderedFactor {
    pub fn matrix(&self) -> &BorderedBidiagonal {
        &self.mat
    }

    /// x with M x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.mat.dim();
        let m = self.mat.special.len();
        let mut x = b.to_vec();
        self.mat.solve_lower(&mut x);
        if m == 0 {
            return x;
        }
        let rhs = DVector::from_fn(m, |i, _| x[self.mat.special[i]]);
        let w = self.lu.solve(&rhs).expect("checked invertible");
        for k in 0..m {
            let zk = &self.z[k * n..(k + 1) * n];
            for r in 0..n {
                x[r] -= zk[r] * w[k];
            }
        }
        x
    }

    /// x with Mᵀ x = c.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.mat.dim();
        let m = self.mat.special.len();
        let mut x = c.to_vec();
        self.mat.solve_lower_transpose(&mut x);
        if m == 0 {
            return x;
        }
        let rhs = DVector::from_fn(m, |k, _| {
            let e = &self.mat.border[k * n..(k + 1) * n];
            e.iter().zip(&x).map(|(a, b)| a * b).sum()
        });
        let q = self.lu_t.solve(&rhs).expect("checked invertible");
        let mut corr = vec![0.0; n];
        for (i, &col) in self.mat.special.iter().enumerate() {
            corr[col] += q[i];
        }
        self.mat.solve_lower_transpose(&mut corr);
        for r in 0..n {
            x[r] -= corr[r];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> BorderedBidiagonal {
        // two blocks of three cells, outlets 2 and 5
        let n = 6;
        let mut border = vec![0.0; 2 * n];
        border[0] = 0.3; // M[0,2]
        border[3] = -0.2; // M[3,2]
        border[n] = 0.5; // M[0,5]
        border[n + 4] = 0.1; // M[4,5]
        BorderedBidiagonal {
            diag: vec![2.0, 3.0, 1.5, 2.5, 4.0, 1.2],
            sub: vec![0.0, -1.0, -0.5, 0.0, -2.0, 0.7],
            special: vec![2, 5],
            border,
        }
    }

    #[test]
    fn solves_match_products() {
        let m = example();
        let f = m.clone().factor().unwrap();
        let b = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let x = f.solve(&b);
        let mx = m.mul_vec(&x);
        for r in 0..6 {
            assert!((mx[r] - b[r]).abs() < 1e-13);
        }
        let y = f.solve_transpose(&b);
        let dense = m.to_dense();
        for c in 0..6 {
            let s: f64 = (0..6).map(|r| dense[r * 6 + c] * y[r]).sum();
            assert!((s - b[c]).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_rejected() {
        let mut m = example();
        m.diag[1] = 0.0;
        assert!(m.factor().is_none());
    }
}
