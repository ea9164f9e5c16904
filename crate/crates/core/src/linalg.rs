//! Small dense complex matrices for two-qubit states.
//!
//! Everything here is fixed at 4x4 (or 2x2); that keeps the eigensolver a
//! plain cyclic Jacobi sweep with no allocation.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Row-major 4x4 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat4(pub [[Complex64; 4]; 4]);

impl Default for CMat4 {
    fn default() -> Self {
        Self::zeros()
    }
}

impl CMat4 {
    pub const fn zeros() -> Self {
        CMat4([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            m.0[i][i] = ONE;
        }
        m
    }

    pub fn from_real_diag(d: [f64; 4]) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            m.0[i][i] = Complex64::new(d[i], 0.0);
        }
        m
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &[Complex64; 4], b: &[Complex64; 4]) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = a[i] * b[j].conj();
            }
        }
        m
    }

    /// Kronecker product of two 2x2 matrices; `a` acts on the first slot.
    pub fn kron(a: &CMat2, b: &CMat2) -> Self {
        let mut m = Self::zeros();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        m.0[2 * i + k][2 * j + l] = a.0[i][j] * b.0[k][l];
                    }
                }
            }
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for row in m.0.iter_mut() {
            for z in row.iter_mut() {
                *z *= s;
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in i..4 {
                worst = worst.max((self.0[i][j] - self.0[j][i].conj()).norm());
            }
        }
        worst
    }

    /// (A + A†)/2
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale(0.5)
    }

    /// ⟨v|A|v⟩
    pub fn expectation(&self, v: &[Complex64; 4]) -> Complex64 {
        let mut acc = ZERO;
        for i in 0..4 {
            let mut row = ZERO;
            for j in 0..4 {
                row += self.0[i][j] * v[j];
            }
            acc += v[i].conj() * row;
        }
        acc
    }

    pub fn column(&self, j: usize) -> [Complex64; 4] {
        [self.0[0][j], self.0[1][j], self.0[2][j], self.0[3][j]]
    }
}

impl Index<(usize, usize)> for CMat4 {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for CMat4 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.0[i][j]
    }
}

impl Add for CMat4 {
    type Output = CMat4;
    fn add(mut self, rhs: CMat4) -> CMat4 {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
        self
    }
}

impl Sub for CMat4 {
    type Output = CMat4;
    fn sub(mut self, rhs: CMat4) -> CMat4 {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Mul for CMat4 {
    type Output = CMat4;
    fn mul(self, rhs: CMat4) -> CMat4 {
        let mut m = CMat4::zeros();
        for i in 0..4 {
            for k in 0..4 {
                let a = self.0[i][k];
                if a == ZERO {
                    continue;
                }
                for j in 0..4 {
                    m.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        m
    }
}

/// Row-major 2x2 complex matrix (single-qubit operators).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat2(pub [[Complex64; 2]; 2]);

impl CMat2 {
    pub fn identity() -> Self {
        CMat2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn pauli_x() -> Self {
        CMat2([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        CMat2([[ZERO, -I], [I, ZERO]])
    }

    pub fn pauli_z() -> Self {
        CMat2([[ONE, ZERO], [ZERO, -ONE]])
    }

    /// σ0..σ3 = I, X, Y, Z
    pub fn pauli(k: usize) -> Self {
        match k {
            0 => Self::identity(),
            1 => Self::pauli_x(),
            2 => Self::pauli_y(),
            3 => Self::pauli_z(),
            _ => panic!("pauli index {k} out of range"),
        }
    }

    /// General SU(2) element from Euler-like angles.
    pub fn su2(alpha: f64, beta: f64, gamma: f64) -> Self {
        let (c, s) = ((beta / 2.0).cos(), (beta / 2.0).sin());
        let e = |phi: f64| Complex64::from_polar(1.0, phi);
        CMat2([
            [e(-(alpha + gamma) / 2.0) * c, -e(-(alpha - gamma) / 2.0) * s],
            [e((alpha - gamma) / 2.0) * s, e((alpha + gamma) / 2.0) * c],
        ])
    }
}

/// Eigen-decomposition of a Hermitian 4x4 matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues in ascending order and the unitary whose
/// columns are the matching eigenvectors.
pub fn eigh(a: &CMat4) -> ([f64; 4], CMat4) {
    let mut a = a.hermitian_part();
    let mut v = CMat4::identity();
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..4)
            .flat_map(|p| ((p + 1)..4).map(move |q| (p, q)))
            .map(|(p, q)| a.0[p][q].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                let apq = a.0[p][q];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let theta = (a.0[q][q].re - a.0[p][p].re) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // J = D·R with D = diag(.., e^{-iφ} at q, ..) making the pivot real.
                let mut j = CMat4::identity();
                j.0[p][p] = Complex64::new(c, 0.0);
                j.0[p][q] = Complex64::new(s, 0.0);
                j.0[q][p] = -phase.conj() * s;
                j.0[q][q] = phase.conj() * c;
                a = j.adjoint() * a * j;
                a.0[p][q] = ZERO;
                a.0[q][p] = ZERO;
                v = v * j;
            }
        }
    }

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&x, &y| a.0[x][x].re.total_cmp(&a.0[y][y].re));
    let mut vals = [0.0; 4];
    let mut vecs = CMat4::zeros();
    for (k, &idx) in order.iter().enumerate() {
        vals[k] = a.0[idx][idx].re;
        for i in 0..4 {
            vecs.0[i][k] = v.0[i][idx];
        }
    }
    (vals, vecs)
}

/// Rebuild V·diag(λ)·V†.
pub fn from_eigen(vals: &[f64; 4], vecs: &CMat4) -> CMat4 {
    let mut m = CMat4::zeros();
    for k in 0..4 {
        let col = vecs.column(k);
        m = m + CMat4::outer(&col, &col).scale(vals[k]);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hermitian(seed: u64) -> CMat4 {
        // Cheap deterministic LCG; independence from rand keeps this self-contained.
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut m = CMat4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = Complex64::new(next(), next());
            }
        }
        m.hermitian_part()
    }

    #[test]
    fn jacobi_reconstructs_random_hermitian() {
        for seed in 0..200 {
            let a = random_hermitian(seed);
            let (vals, vecs) = eigh(&a);
            let back = from_eigen(&vals, &vecs);
            assert!((back - a).frobenius_norm() < 1e-12, "seed {seed}");
            let unit = vecs.adjoint() * vecs;
            assert!((unit - CMat4::identity()).frobenius_norm() < 1e-12);
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn jacobi_trace_matches_eigen_sum() {
        let a = random_hermitian(7);
        let (vals, _) = eigh(&a);
        assert!((vals.iter().sum::<f64>() - a.trace().re).abs() < 1e-12);
    }

    #[test]
    fn diagonal_is_fixed_point() {
        let (vals, _) = eigh(&CMat4::from_real_diag([0.3, -0.1, 0.5, 0.0]));
        assert_eq!(vals, [-0.1, 0.0, 0.3, 0.5]);
    }

    #[test]
    fn degenerate_spectrum() {
        let (vals, vecs) = eigh(&CMat4::identity().scale(0.25));
        for v in vals {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!((vecs.adjoint() * vecs - CMat4::identity()).frobenius_norm() < 1e-14);
    }

    #[test]
    fn su2_is_unitary() {
        let u = CMat2::su2(0.3, 1.1, -2.0);
        let m = CMat4::kron(&u, &CMat2::identity());
        assert!((m.adjoint() * m - CMat4::identity()).frobenius_norm() < 1e-14);
    }
}
