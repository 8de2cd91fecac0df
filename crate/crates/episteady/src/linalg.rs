//! Banded linear algebra: storage, LU factorization with partial pivoting,
//! and triangular solves.
//!
//! Every implicit system in the crate (IMEX diffusion steps, Newton Jacobians
//! of the semilinear problems, shifted operators in the eigensolvers) is a
//! banded matrix with bandwidth equal to the grid's x-extent, so one compact
//! direct solver covers them all deterministically — no iterative tolerance
//! enters the results. Storage and algorithm follow the classic band-LU
//! layout: column-major panels of height `2*kl + ku + 1`, with the top `kl`
//! rows reserved for pivoting fill.

use crate::error::{Result, SimError};

/// Banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    /// All-zero band matrix.
    pub fn zero(n: usize, kl: usize, ku: usize) -> BandMatrix {
        assert!(n > 0, "band matrix must have positive dimension");
        let ldab = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ldab, ab: vec![0.0; ldab * n] }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        // Entry (i, j) lives in column panel j at row kl + ku + i - j.
        j * self.ldab + (self.kl + self.ku + i) - j
    }

    /// True when (i, j) lies inside the declared band.
    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.ab[o] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.ab[o] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.offset(i, j)]
        } else {
            0.0
        }
    }

    /// y = A x (valid only before factorization).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            if xj != 0.0 {
                for i in lo..=hi {
                    y[i] += self.ab[self.offset(i, j)] * xj;
                }
            }
        }
        y
    }

    /// Factor in place with partial pivoting. Consumes the matrix.
    pub fn lu_factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku; // superdiagonals in the factored form
        let ldab = self.ldab;
        let ab = &mut self.ab;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize; // rightmost column touched by interchanges so far
        for j in 0..n {
            let km = kl.min(n - 1 - j); // subdiagonal entries in this column
            // Pivot search over A[j..=j+km, j].
            let base = j * ldab + kv;
            let mut jp = 0usize;
            let mut best = ab[base].abs();
            for m in 1..=km {
                let v = ab[base + m].abs();
                if v > best {
                    best = v;
                    jp = m;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(SimError::numerics(format!(
                    "banded LU: zero pivot at column {j} (matrix singular to working precision)"
                )));
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                // Swap rows j and j+jp across columns j..=ju.
                for c in j..=ju {
                    let o1 = c * ldab + kv + j - c;
                    let o2 = o1 + jp;
                    ab.swap(o1, o2);
                }
            }
            if km > 0 {
                // Multipliers under the pivot.
                let piv = ab[base];
                for m in 1..=km {
                    ab[base + m] /= piv;
                }
                // Rank-1 update of the trailing band.
                for c in (j + 1)..=ju {
                    let up = c * ldab + kv + j - c; // A[j, c]
                    let f = ab[up];
                    if f != 0.0 {
                        for m in 1..=km {
                            ab[up + m] -= ab[base + m] * f;
                        }
                    }
                }
            }
        }
        Ok(BandLu { mat: self, ipiv })
    }
}

/// Factored form of a [`BandMatrix`]; solves by forward/back substitution.
#[derive(Debug, Clone)]
pub struct BandLu {
    mat: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.mat.n;
        assert_eq!(b.len(), n);
        let kl = self.mat.kl;
        let kv = self.mat.kl + self.mat.ku;
        let ldab = self.mat.ldab;
        let ab = &self.mat.ab;
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
                let bj = b[j];
                if bj != 0.0 {
                    let base = j * ldab + kv;
                    for m in 1..=lm {
                        b[j + m] -= ab[base + m] * bj;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let base = j * ldab + kv;
            b[j] /= ab[base];
            let bj = b[j];
            if bj != 0.0 {
                let top = j.saturating_sub(kv);
                for i in top..j {
                    b[i] -= ab[base + i - j] * bj;
                }
            }
        }
    }

    /// Solve A x = b into a fresh vector.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
