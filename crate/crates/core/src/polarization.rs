//! Polarization bases and two-photon state algebra.
//!
//! Two-photon states live in the product basis |HH⟩, |HV⟩, |VH⟩, |VV⟩ with the
//! biexciton (XX) photon in the first slot and the exciton (X) photon in the
//! second. The circular convention is fixed crate-wide as
//! R = (H − iV)/√2 and L = (H + iV)/√2.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::linalg::{eigh, CMat4, ONE, ZERO};

/// Tolerance used when validating density matrices.
pub const STATE_TOL: f64 = 1e-12;
/// Partial-transpose eigenvalues within this distance below zero count as zero.
pub const NEGATIVITY_CLAMP: f64 = 1e-12;

/// One of the six projection bases used for polarization tomography.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    H,
    V,
    D,
    A,
    R,
    L,
}

/// Measurement axis of a basis pair, named after the Pauli operator it measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Z,
    X,
    Y,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Z, Axis::X, Axis::Y];

    /// Index into σ0..σ3 (I, X, Y, Z).
    pub fn pauli_index(self) -> usize {
        match self {
            Axis::X => 1,
            Axis::Y => 2,
            Axis::Z => 3,
        }
    }

    /// The two bases measured along this axis; the first has eigenvalue +1.
    pub fn bases(self) -> (Basis, Basis) {
        match self {
            Axis::Z => (Basis::H, Basis::V),
            Axis::X => (Basis::D, Basis::A),
            Axis::Y => (Basis::L, Basis::R),
        }
    }
}

impl Basis {
    pub const ALL: [Basis; 6] = [Basis::H, Basis::V, Basis::D, Basis::A, Basis::R, Basis::L];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::H => "H",
            Basis::V => "V",
            Basis::D => "D",
            Basis::A => "A",
            Basis::R => "R",
            Basis::L => "L",
        }
    }

    /// Normalized Jones vector in the H/V basis.
    pub fn jones(self) -> [Complex64; 2] {
        let s = FRAC_1_SQRT_2;
        match self {
            Basis::H => [ONE, ZERO],
            Basis::V => [ZERO, ONE],
            Basis::D => [Complex64::new(s, 0.0), Complex64::new(s, 0.0)],
            Basis::A => [Complex64::new(s, 0.0), Complex64::new(-s, 0.0)],
            Basis::R => [Complex64::new(s, 0.0), Complex64::new(0.0, -s)],
            Basis::L => [Complex64::new(s, 0.0), Complex64::new(0.0, s)],
        }
    }

    pub fn orthogonal(self) -> Basis {
        match self {
            Basis::H => Basis::V,
            Basis::V => Basis::H,
            Basis::D => Basis::A,
            Basis::A => Basis::D,
            Basis::R => Basis::L,
            Basis::L => Basis::R,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Basis::H | Basis::V => Axis::Z,
            Basis::D | Basis::A => Axis::X,
            Basis::R | Basis::L => Axis::Y,
        }
    }

    /// Eigenvalue of this basis state under the Pauli operator of its axis.
    pub fn eigenvalue(self) -> f64 {
        if self.axis().bases().0 == self {
            1.0
        } else {
            -1.0
        }
    }

    /// Product vector |self ⊗ other⟩ in the two-photon basis.
    pub fn product(self, other: Basis) -> [Complex64; 4] {
        let a = self.jones();
        let b = other.jones();
        [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(Basis::H),
            "V" | "v" => Ok(Basis::V),
            "D" | "d" => Ok(Basis::D),
            "A" | "a" => Ok(Basis::A),
            "R" | "r" => Ok(Basis::R),
            "L" | "l" => Ok(Basis::L),
            other => invalid(format!("unknown polarization basis {other:?}")),
        }
    }
}

/// A validated two-qubit polarization density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix4(CMat4);

impl DensityMatrix4 {
    /// Validates Hermiticity and unit trace, then stores the exact Hermitian part.
    pub fn new(m: CMat4) -> Result<Self> {
        let herm = m.hermiticity_error();
        if !(herm <= STATE_TOL) {
            return domain(format!("matrix is not Hermitian (deviation {herm:e})"));
        }
        let tr = m.trace();
        if !((tr.re - 1.0).abs() <= STATE_TOL && tr.im.abs() <= STATE_TOL) {
            return domain(format!("trace is {tr}, expected 1"));
        }
        Ok(DensityMatrix4(m.hermitian_part()))
    }

    /// Density matrix of a (normalized on the fly) pure state.
    pub fn pure(psi: &[Complex64; 4]) -> Self {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let v = psi.map(|z| z / norm);
        DensityMatrix4(CMat4::outer(&v, &v))
    }

    /// (|HH⟩ + e^{iφ}|VV⟩)/√2
    pub fn bell_phi(phase: f64) -> Self {
        let s = FRAC_1_SQRT_2;
        Self::pure(&[Complex64::new(s, 0.0), ZERO, ZERO, Complex64::from_polar(s, phase)])
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix4(CMat4::identity().scale(0.25))
    }

    pub fn matrix(&self) -> &CMat4 {
        &self.0
    }

    pub fn into_matrix(self) -> CMat4 {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0 .0[i][j]
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        eigh(&self.0).0
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }
}

/// Parameters of the precessing two-photon cascade state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeStateParams {
    /// Precession period h/Δ_FSS in ns.
    pub precession_period_ns: f64,
    /// Phase offset in radians.
    pub phase_offset: f64,
    /// Exciton pure-dephasing time in ps; `f64::INFINITY` disables dephasing.
    pub t2star_x_ps: f64,
    /// Exciton radiative lifetime in ps.
    pub t1_x_ps: f64,
}

impl CascadeStateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.precession_period_ns > 0.0) {
            return invalid("precession period must be positive");
        }
        if !(self.t1_x_ps > 0.0) {
            return invalid("exciton lifetime must be positive");
        }
        if !(self.t2star_x_ps > 0.0) {
            return invalid("dephasing time must be positive (use infinity to disable)");
        }
        Ok(())
    }

    /// Angular precession frequency in rad/ps.
    pub fn omega_per_ps(&self) -> f64 {
        2.0 * PI / (self.precession_period_ns * 1e3)
    }

    /// Phase 2πτ/T_p + δφ of the |VV⟩ amplitude after an exciton dwell time τ.
    pub fn phase_at(&self, tau_ps: f64) -> f64 {
        self.omega_per_ps() * tau_ps + self.phase_offset
    }

    /// Off-diagonal coherence factor e^{−τ/T₂*}.
    pub fn coherence_at(&self, tau_ps: f64) -> f64 {
        if self.t2star_x_ps.is_infinite() {
            1.0
        } else {
            (-tau_ps / self.t2star_x_ps).exp()
        }
    }
}

/// Planck constant in eV·s.
pub const PLANCK_EV_S: f64 = 4.135_667_696e-15;

/// T_p = h/Δ_FSS in ns for a splitting given in µeV.
pub fn precession_period_ns(fss_uev: f64) -> f64 {
    PLANCK_EV_S / (fss_uev * 1e-6) * 1e9
}

/// Two-photon state after the exciton spent `tau_ps` in its superposition.
pub fn cascade_state(tau_ps: f64, p: &CascadeStateParams) -> Result<DensityMatrix4> {
    if !(tau_ps >= 0.0) {
        return domain(format!("delay must be non-negative, got {tau_ps}"));
    }
    p.validate()?;
    let coh = 0.5 * p.coherence_at(tau_ps);
    let phase = Complex64::from_polar(1.0, p.phase_at(tau_ps));
    let mut m = CMat4::zeros();
    m.0[0][0] = Complex64::new(0.5, 0.0);
    m.0[3][3] = Complex64::new(0.5, 0.0);
    // ρ = |ψ⟩⟨ψ| with ψ_VV = e^{iθ}/√2, so ρ_{HH,VV} = e^{−iθ}/2.
    m.0[0][3] = phase.conj() * coh;
    m.0[3][0] = phase * coh;
    Ok(DensityMatrix4(m))
}

/// Probability ⟨b_xx ⊗ b_x|ρ|b_xx ⊗ b_x⟩ of a joint projection.
pub fn projection_probability(rho: &DensityMatrix4, b_xx: Basis, b_x: Basis) -> f64 {
    let v = b_xx.product(b_x);
    rho.0.expectation(&v).re.clamp(0.0, 1.0)
}

/// Closed form of the cascade-state projection probability:
/// p(τ) = `diag` + c(τ)·Re(`cross`·e^{−iθ(τ)}), with c the coherence factor
/// and θ the precession phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionCoefficients {
    pub diag: f64,
    pub cross: Complex64,
}

impl ProjectionCoefficients {
    pub fn new(b_xx: Basis, b_x: Basis) -> Self {
        let v = b_xx.product(b_x);
        ProjectionCoefficients {
            diag: 0.5 * (v[0].norm_sqr() + v[3].norm_sqr()),
            cross: v[0].conj() * v[3],
        }
    }

    pub fn probability(&self, coherence: f64, phase: f64) -> f64 {
        self.diag + coherence * (self.cross * Complex64::from_polar(1.0, -phase)).re
    }

    pub fn at(&self, tau_ps: f64, p: &CascadeStateParams) -> f64 {
        self.probability(p.coherence_at(tau_ps), p.phase_at(tau_ps))
    }
}

/// Transpose of the second (X photon) subsystem.
pub fn partial_transpose(rho: &DensityMatrix4) -> CMat4 {
    let mut out = CMat4::zeros();
    for a in 0..2 {
        for b in 0..2 {
            for a2 in 0..2 {
                for b2 in 0..2 {
                    out.0[2 * a + b][2 * a2 + b2] = rho.0 .0[2 * a + b2][2 * a2 + b];
                }
            }
        }
    }
    out
}

/// Entanglement negativity: total magnitude of negative partial-transpose eigenvalues.
pub fn negativity(rho: &DensityMatrix4) -> Result<f64> {
    negativity_of_matrix(rho.matrix())
}

/// Negativity of a raw Hermitian matrix (trace need not be exactly one).
pub fn negativity_of_matrix(m: &CMat4) -> Result<f64> {
    let herm = m.hermiticity_error();
    if !(herm <= 1e-10) {
        return domain(format!("negativity requires a Hermitian input (deviation {herm:e})"));
    }
    let pt = partial_transpose(&DensityMatrix4(m.hermitian_part()));
    let (vals, _) = eigh(&pt);
    Ok(vals
        .iter()
        .filter(|&&l| l < -NEGATIVITY_CLAMP)
        .map(|l| -l)
        .sum())
}

/// Overlap with (|HH⟩ + e^{iφ}|VV⟩)/√2.
pub fn bell_fidelity(rho: &DensityMatrix4, phase: f64) -> f64 {
    let diag = 0.5 * (rho.get(0, 0).re + rho.get(3, 3).re);
    diag + (rho.get(0, 3) * Complex64::from_polar(1.0, phase)).re
}

/// Fidelity maximized over the Bell phase; returns (fidelity, best phase).
pub fn max_bell_fidelity(rho: &DensityMatrix4) -> (f64, f64) {
    let c = rho.get(0, 3);
    let phase = if c.norm() > 0.0 { -c.arg() } else { 0.0 };
    (bell_fidelity(rho, phase), phase)
}

/// Conjugate a state by a local unitary U_xx ⊗ U_x.
pub fn apply_local_unitary(
    rho: &DensityMatrix4,
    u_xx: &crate::linalg::CMat2,
    u_x: &crate::linalg::CMat2,
) -> DensityMatrix4 {
    let u = CMat4::kron(u_xx, u_x);
    DensityMatrix4((u * rho.0 * u.adjoint()).hermitian_part())
}
