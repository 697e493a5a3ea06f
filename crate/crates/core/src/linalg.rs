//! Dense 3×3 complex linear algebra: Hermitian operators, labeled states,
//! unitaries and the fixed basis changes between bare, lambda and dressed bases.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat3 = [[C64; 3]; 3];

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative asymmetry accepted by [`Hermitian3::new`].
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Relative eigenvalue gap below which the closed-form eigenvectors are
/// replaced by Jacobi sweeps.
pub const JACOBI_GAP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("state norm is {0}, expected 1")]
    NotNormalized(f64),
    #[error("basis mismatch: operand in {found}, expected {expected}")]
    BasisMismatch { expected: Basis, found: Basis },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Basis labels. Component order is fixed per basis:
/// bare (|−1⟩,|0⟩,|+1⟩), lambda (|0⟩,|B⟩,|D⟩), dressed (|u⟩,|B⟩,|d⟩),
/// doubly dressed (|ũ⟩,|B̃⟩,|d̃⟩).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Bare,
    Lambda,
    Dressed,
    DoublyDressed,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Basis::Bare => "bare",
            Basis::Lambda => "lambda",
            Basis::Dressed => "dressed",
            Basis::DoublyDressed => "doubly-dressed",
        };
        f.write_str(s)
    }
}

pub fn mat_zero() -> Mat3 {
    [[ZERO; 3]; 3]
}

pub fn mat_identity() -> Mat3 {
    let mut m = mat_zero();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn mat_adjoint(a: &Mat3) -> Mat3 {
    let mut c = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[j][i].conj();
        }
    }
    c
}

pub fn mat_vec(a: &Mat3, v: &[C64; 3]) -> [C64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Frobenius norm.
pub fn mat_norm(a: &Mat3) -> f64 {
    a.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry-wise modulus of `a - b`.
pub fn mat_max_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).norm());
        }
    }
    m
}

/// Hermitian ⟨a|b⟩.
pub fn inner(a: &[C64; 3], b: &[C64; 3]) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1] + a[2].conj() * b[2]
}

pub fn vec_norm(v: &[C64; 3]) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()).sqrt()
}

// Bilinear cross product; orthogonal to both inputs under the bilinear dot.
fn cross(a: &[C64; 3], b: &[C64; 3]) -> [C64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [C64; 3]) -> [C64; 3] {
    let n = vec_norm(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// A Hermitian 3×3 operator tagged with the basis it is written in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hermitian3 {
    m: Mat3,
    basis: Basis,
}

impl Hermitian3 {
    /// Validates Hermiticity to [`HERMITIAN_TOL`] and symmetrizes exactly.
    pub fn new(m: Mat3, basis: Basis) -> Result<Self, LinalgError> {
        let scale = mat_norm(&m);
        let asym = mat_max_diff(&m, &mat_adjoint(&m));
        if !asym.is_finite() || (scale > 0.0 && asym > HERMITIAN_TOL * scale) {
            return Err(LinalgError::NotHermitian(asym / scale.max(f64::MIN_POSITIVE)));
        }
        let mut s = m;
        for i in 0..3 {
            s[i][i] = C64::new(m[i][i].re, 0.0);
            for j in (i + 1)..3 {
                let avg = (m[i][j] + m[j][i].conj()) * 0.5;
                s[i][j] = avg;
                s[j][i] = avg.conj();
            }
        }
        Ok(Self { m: s, basis })
    }

    pub fn zero(basis: Basis) -> Self {
        Self { m: mat_zero(), basis }
    }

    pub fn diag(d: [f64; 3], basis: Basis) -> Self {
        let mut m = mat_zero();
        for i in 0..3 {
            m[i][i] = C64::new(d[i], 0.0);
        }
        Self { m, basis }
    }

    /// Adds `z` at (i, j) and its conjugate at (j, i); diagonal entries take the real part.
    pub fn add_coupling(&mut self, i: usize, j: usize, z: C64) {
        if i == j {
            self.m[i][i] += C64::new(z.re, 0.0);
        } else {
            self.m[i][j] += z;
            self.m[j][i] += z.conj();
        }
    }

    pub fn with_coupling(mut self, i: usize, j: usize, z: C64) -> Self {
        self.add_coupling(i, j, z);
        self
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[i][j]
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0].re + self.m[1][1].re + self.m[2][2].re
    }

    pub fn norm(&self) -> f64 {
        mat_norm(&self.m)
    }

    pub fn add(&self, other: &Hermitian3) -> Result<Hermitian3, LinalgError> {
        check_basis(self.basis, other.basis)?;
        let mut m = self.m;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += other.m[i][j];
            }
        }
        Ok(Hermitian3 { m, basis: self.basis })
    }

    pub fn scale(&self, s: f64) -> Hermitian3 {
        let mut m = self.m;
        m.iter_mut().flatten().for_each(|z| *z *= s);
        Hermitian3 { m, basis: self.basis }
    }

    /// Expectation value ⟨v|H|v⟩ for raw amplitudes in this operator's basis.
    pub fn expectation(&self, v: &[C64; 3]) -> f64 {
        inner(v, &mat_vec(&self.m, v)).re
    }

    /// U H U† with U mapping this operator's basis to `u.to()`.
    pub fn conjugate_by(&self, u: &Unitary3) -> Result<Hermitian3, LinalgError> {
        check_basis(u.from, self.basis)?;
        let m = mat_mul(&mat_mul(&u.m, &self.m), &mat_adjoint(&u.m));
        Hermitian3::new(m, u.to)
    }

    pub fn eig(&self) -> Eigen3 {
        hermitian_eig(self)
    }

    pub fn propagator(&self, dt: f64) -> Result<Unitary3, LinalgError> {
        step_propagator(self, dt)
    }
}

fn check_basis(expected: Basis, found: Basis) -> Result<(), LinalgError> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::BasisMismatch { expected, found })
    }
}

/// Normalized state over a labeled basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State3 {
    amps: [C64; 3],
    basis: Basis,
}

impl State3 {
    pub fn new(amps: [C64; 3], basis: Basis) -> Result<Self, LinalgError> {
        let n = vec_norm(&amps);
        if !n.is_finite() || (n * n - 1.0).abs() > 1e-10 {
            return Err(LinalgError::NotNormalized(n * n));
        }
        Ok(Self { amps, basis })
    }

    /// Builds a state from arbitrary nonzero amplitudes by normalizing them.
    pub fn normalized(amps: [C64; 3], basis: Basis) -> Self {
        Self { amps: normalize(amps), basis }
    }

    pub fn basis_state(k: usize, basis: Basis) -> Self {
        let mut amps = [ZERO; 3];
        amps[k] = ONE;
        Self { amps, basis }
    }

    /// Wraps raw amplitudes produced by unitary evolution without re-checking the norm.
    pub(crate) fn from_raw(amps: [C64; 3], basis: Basis) -> Self {
        Self { amps, basis }
    }

    pub fn amps(&self) -> &[C64; 3] {
        &self.amps
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn norm(&self) -> f64 {
        vec_norm(&self.amps)
    }

    pub fn population(&self, k: usize) -> f64 {
        self.amps[k].norm_sqr()
    }

    pub fn populations(&self) -> [f64; 3] {
        [self.population(0), self.population(1), self.population(2)]
    }

    pub fn inner(&self, other: &State3) -> Result<C64, LinalgError> {
        check_basis(self.basis, other.basis)?;
        Ok(inner(&self.amps, &other.amps))
    }

    pub fn transform(&self, u: &Unitary3) -> Result<State3, LinalgError> {
        u.apply(self)
    }
}

/// Unitary map from one labeled basis to another (or a propagator within one basis).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unitary3 {
    m: Mat3,
    from: Basis,
    to: Basis,
}

impl Unitary3 {
    pub fn new(m: Mat3, from: Basis, to: Basis) -> Self {
        Self { m, from, to }
    }

    pub fn identity(basis: Basis) -> Self {
        Self { m: mat_identity(), from: basis, to: basis }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn from(&self) -> Basis {
        self.from
    }

    pub fn to(&self) -> Basis {
        self.to
    }

    pub fn adjoint(&self) -> Unitary3 {
        Unitary3 { m: mat_adjoint(&self.m), from: self.to, to: self.from }
    }

    /// `next ∘ self`: apply `self` first.
    pub fn then(&self, next: &Unitary3) -> Result<Unitary3, LinalgError> {
        check_basis(next.from, self.to)?;
        Ok(Unitary3 { m: mat_mul(&next.m, &self.m), from: self.from, to: next.to })
    }

    pub fn apply(&self, psi: &State3) -> Result<State3, LinalgError> {
        check_basis(self.from, psi.basis)?;
        Ok(State3 { amps: mat_vec(&self.m, &psi.amps), basis: self.to })
    }

    pub fn apply_raw(&self, v: &[C64; 3]) -> [C64; 3] {
        mat_vec(&self.m, v)
    }

    /// Largest entry deviation of U†U from the identity.
    pub fn unitarity_error(&self) -> f64 {
        mat_max_diff(&mat_mul(&mat_adjoint(&self.m), &self.m), &mat_identity())
    }
}

/// Bare (|−1⟩,|0⟩,|+1⟩) → lambda (|0⟩,|B⟩,|D⟩) with |B⟩=(|+1⟩+|−1⟩)/√2, |D⟩=(|+1⟩−|−1⟩)/√2.
pub fn lambda_basis_transform() -> Unitary3 {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let m = [[ZERO, ONE, ZERO], [r, ZERO, r], [-r, ZERO, r]];
    Unitary3::new(m, Basis::Bare, Basis::Lambda)
}

/// Lambda (|0⟩,|B⟩,|D⟩) → dressed (|u⟩,|B⟩,|d⟩) with |u⟩=(|0⟩+|D⟩)/√2, |d⟩=(|0⟩−|D⟩)/√2.
pub fn dressed_basis_transform() -> Unitary3 {
    dressed_basis_transform_signed(1.0)
}

/// Dressed transform for |u⟩=(|0⟩+s|D⟩)/√2, |d⟩=(|0⟩−s|D⟩)/√2 with s = ±1.
pub fn dressed_basis_transform_signed(s: f64) -> Unitary3 {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let rs = r * s;
    let m = [[r, ZERO, rs], [ZERO, ONE, ZERO], [r, ZERO, -rs]];
    Unitary3::new(m, Basis::Lambda, Basis::Dressed)
}

/// Eigen-decomposition: ascending eigenvalues, eigenvectors as `vectors[k]`.
#[derive(Clone, Copy, Debug)]
pub struct Eigen3 {
    pub values: [f64; 3],
    pub vectors: [[C64; 3]; 3],
}

impl Eigen3 {
    /// V Λ V† (for reconstruction checks).
    pub fn reconstruct(&self) -> Mat3 {
        let mut m = mat_zero();
        for k in 0..3 {
            let v = &self.vectors[k];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += v[i] * v[j].conj() * self.values[k];
                }
            }
        }
        m
    }
}

/// Closed-form (Cardano) 3×3 Hermitian eigensolver with a Jacobi fallback
/// for nearly degenerate spectra.
pub fn hermitian_eig(h: &Hermitian3) -> Eigen3 {
    let a = &h.m;
    let off = a[0][1].norm_sqr() + a[0][2].norm_sqr() + a[1][2].norm_sqr();
    if off == 0.0 {
        return diagonal_eig(a);
    }
    let q = h.trace() / 3.0;
    let b00 = a[0][0].re - q;
    let b11 = a[1][1].re - q;
    let b22 = a[2][2].re - q;
    let p2 = (b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off) / 6.0;
    let p = p2.sqrt();
    // det(B)/2 with B = (A - qI)/p
    let det = b00 * b11 * b22 + 2.0 * (a[0][1] * a[1][2] * a[2][0]).re
        - b00 * a[1][2].norm_sqr()
        - b11 * a[0][2].norm_sqr()
        - b22 * a[0][1].norm_sqr();
    let r = (det / (2.0 * p * p2)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let mut values = [
        q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos(),
        q + 2.0 * p * (phi + 4.0 * PI / 3.0).cos(),
        q + 2.0 * p * phi.cos(),
    ];
    values.sort_by(|x, y| x.total_cmp(y));

    let scale = values[0].abs().max(values[2].abs()).max(p);
    let gap = (values[1] - values[0]).min(values[2] - values[1]);
    if gap < JACOBI_GAP * scale {
        return jacobi_eig(a);
    }

    let v0 = null_vector(a, values[0]);
    let v2 = {
        let w = null_vector(a, values[2]);
        let c = inner(&v0, &w);
        normalize([w[0] - v0[0] * c, w[1] - v0[1] * c, w[2] - v0[2] * c])
    };
    let c = cross(&v0, &v2);
    let v1 = normalize([c[0].conj(), c[1].conj(), c[2].conj()]);
    let mut vectors = [v0, v1, v2];
    for (k, v) in vectors.iter_mut().enumerate() {
        fix_phase(v);
        values[k] = h.expectation(v);
    }
    Eigen3 { values, vectors }
}

fn diagonal_eig(a: &Mat3) -> Eigen3 {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[i][i].re.total_cmp(&a[j][j].re));
    let mut vectors = [[ZERO; 3]; 3];
    let mut values = [0.0; 3];
    for (k, &i) in idx.iter().enumerate() {
        vectors[k][i] = ONE;
        values[k] = a[i][i].re;
    }
    Eigen3 { values, vectors }
}

fn null_vector(a: &Mat3, lambda: f64) -> [C64; 3] {
    let mut rows = *a;
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let cands = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let best = cands
        .iter()
        .max_by(|x, y| vec_norm(x).total_cmp(&vec_norm(y)))
        .copied()
        .unwrap_or([ONE, ZERO, ZERO]);
    normalize(best)
}

/// Rotates the global phase so the first component with non-negligible
/// modulus is real and positive.
pub fn fix_phase(v: &mut [C64; 3]) {
    let pivot = v.iter().copied().find(|z| z.norm() > 1e-12);
    if let Some(z) = pivot {
        let ph = z.conj() / z.norm();
        for c in v.iter_mut() {
            *c *= ph;
        }
    }
}

fn jacobi_eig(a: &Mat3) -> Eigen3 {
    let mut m = *a;
    let mut v = mat_identity();
    let scale = mat_norm(a).max(f64::MIN_POSITIVE);
    for _sweep in 0..50 {
        let off = m[0][1].norm_sqr() + m[0][2].norm_sqr() + m[1][2].norm_sqr();
        if off.sqrt() <= 1e-16 * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m[p][q];
            let mag = apq.norm();
            if mag <= 1e-300 {
                continue;
            }
            let phase = apq / mag;
            let theta = (m[q][q].re - m[p][p].re) / (2.0 * mag);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // J = Φ R with Φ removing the phase of m[p][q], R the real Jacobi rotation.
            let mut j = mat_identity();
            j[p][p] = C64::new(c, 0.0);
            j[p][q] = C64::new(s, 0.0);
            j[q][p] = -phase.conj() * s;
            j[q][q] = phase.conj() * c;
            m = mat_mul(&mat_mul(&mat_adjoint(&j), &m), &j);
            m[p][q] = ZERO;
            m[q][p] = ZERO;
            v = mat_mul(&v, &j);
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| m[i][i].re.total_cmp(&m[j][j].re));
    let mut vectors = [[ZERO; 3]; 3];
    let mut values = [0.0; 3];
    for (k, &i) in idx.iter().enumerate() {
        vectors[k] = [v[0][i], v[1][i], v[2][i]];
        fix_phase(&mut vectors[k]);
        values[k] = m[i][i].re;
    }
    Eigen3 { values, vectors }
}

/// exp(−i h dt) through the eigen-decomposition of `h`.
pub fn step_propagator(h: &Hermitian3, dt: f64) -> Result<Unitary3, LinalgError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LinalgError::InvalidStep(dt));
    }
    Ok(Unitary3::new(expm_raw(h, dt), h.basis, h.basis))
}

/// exp(−i h dt) without argument checks; any real `dt` allowed.
pub(crate) fn expm_raw(h: &Hermitian3, dt: f64) -> Mat3 {
    let e = hermitian_eig(h);
    let mut m = mat_zero();
    for k in 0..3 {
        let ph = C64::from_polar(1.0, -e.values[k] * dt);
        let v = &e.vectors[k];
        for i in 0..3 {
            let vi = v[i] * ph;
            for j in 0..3 {
                m[i][j] += vi * v[j].conj();
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_h(d: [f64; 3], o: [f64; 6]) -> Hermitian3 {
        Hermitian3::diag(d, Basis::Bare)
            .with_coupling(0, 1, c(o[0], o[1]))
            .with_coupling(0, 2, c(o[2], o[3]))
            .with_coupling(1, 2, c(o[4], o[5]))
    }

    // Scaling-and-squaring Taylor oracle with a 1e-14 term cutoff.
    fn taylor_expm(h: &Hermitian3, dt: f64) -> Mat3 {
        let norm = h.norm() * dt;
        let mut s = 0;
        while norm / f64::from(1u32 << s) > 0.5 {
            s += 1;
        }
        let f = dt / f64::from(1u32 << s);
        let mut a = *h.matrix();
        a.iter_mut().flatten().for_each(|z| *z *= c(0.0, -f));
        let mut sum = mat_identity();
        let mut term = mat_identity();
        for k in 1..60 {
            term = mat_mul(&term, &a);
            term.iter_mut().flatten().for_each(|z| *z /= k as f64);
            sum.iter_mut().flatten().zip(term.iter().flatten()).for_each(|(x, y)| *x += *y);
            if mat_norm(&term) < 1e-14 {
                break;
            }
        }
        for _ in 0..s {
            sum = mat_mul(&sum, &sum);
        }
        sum
    }

    #[test]
    fn lambda_transform_examples() {
        let t = lambda_basis_transform();
        let plus = State3::basis_state(2, Basis::Bare);
        let out = t.apply(&plus).unwrap();
        let r = FRAC_1_SQRT_2;
        assert!((out.amps()[1] - r).norm() < 1e-15);
        assert!((out.amps()[2] - r).norm() < 1e-15);
        let zero = t.apply(&State3::basis_state(1, Basis::Bare)).unwrap();
        assert!((zero.amps()[0] - 1.0).norm() < 1e-15);

        let sz = Hermitian3::diag([-1.0, 0.0, 1.0], Basis::Bare);
        let img = sz.conjugate_by(&t).unwrap();
        let expect = Hermitian3::zero(Basis::Lambda).with_coupling(1, 2, c(1.0, 0.0));
        assert!(mat_max_diff(img.matrix(), expect.matrix()) < 1e-15);
    }

    #[test]
    fn dressed_transform_examples() {
        let t = dressed_basis_transform();
        let d = t.apply(&State3::basis_state(2, Basis::Lambda)).unwrap();
        let r = FRAC_1_SQRT_2;
        assert!((d.amps()[0] - r).norm() < 1e-15);
        assert!((d.amps()[2] + r).norm() < 1e-15);
        let b = t.apply(&State3::basis_state(1, Basis::Lambda)).unwrap();
        assert!((b.amps()[1] - 1.0).norm() < 1e-15);

        let w = 2.0_f64.sqrt() * 3.7;
        let h = Hermitian3::zero(Basis::Lambda).with_coupling(0, 2, c(w, 0.0));
        let hd = h.conjugate_by(&t).unwrap();
        let expect = Hermitian3::diag([w, 0.0, -w], Basis::Dressed);
        assert!(mat_max_diff(hd.matrix(), expect.matrix()) < 1e-14);
    }

    #[test]
    fn basis_mismatch_is_reported() {
        let t = dressed_basis_transform();
        let err = t.apply(&State3::basis_state(0, Basis::Bare)).unwrap_err();
        assert!(matches!(err, LinalgError::BasisMismatch { .. }));
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = mat_zero();
        m[0][1] = c(1.0, 0.0);
        assert!(matches!(Hermitian3::new(m, Basis::Bare), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn unnormalized_state_rejected() {
        assert!(State3::new([c(1.0, 0.0), c(1.0, 0.0), ZERO], Basis::Bare).is_err());
    }

    #[test]
    fn zero_and_diagonal_propagators() {
        let u = step_propagator(&Hermitian3::zero(Basis::Bare), 0.3).unwrap();
        assert!(mat_max_diff(u.matrix(), &mat_identity()) < 1e-15);
        let e = [1.5, -2.0, 0.25];
        let u = step_propagator(&Hermitian3::diag(e, Basis::Bare), 0.7).unwrap();
        for k in 0..3 {
            assert!((u.matrix()[k][k] - C64::from_polar(1.0, -e[k] * 0.7)).norm() < 1e-15);
        }
        assert!(step_propagator(&Hermitian3::zero(Basis::Bare), 0.0).is_err());
    }

    #[test]
    fn identity_eigenvalues() {
        let e = Hermitian3::diag([1.0; 3], Basis::Bare).eig();
        assert_eq!(e.values, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn propagator_matches_taylor_oracle() {
        let w = 2.0 * PI * 1e7;
        let h = random_h(
            [0.3 * w, -1.1 * w, 0.7 * w],
            [0.2 * w, -0.4 * w, 0.9 * w, 0.1 * w, -0.6 * w, 0.35 * w],
        );
        for dt in [1e-9, 3e-8, 2e-7] {
            let u = step_propagator(&h, dt).unwrap();
            let o = taylor_expm(&h, dt);
            assert!(mat_max_diff(u.matrix(), &o) < 1e-10, "dt={dt}");
        }
    }

    #[test]
    fn cubic_oracle_on_dressed_matrix() {
        // Eq.-3 shape at Ω_D = Ω_B = 2π·6 MHz, Δ = 2π·19.35 MHz in rad/µs units.
        let od = 2.0 * PI * 6.0;
        let d = 2.0 * PI * 19.35;
        let g = od / 2.0_f64.sqrt();
        let h = Hermitian3::diag([od, -d, -od], Basis::Dressed)
            .with_coupling(1, 0, c(g, 0.0))
            .with_coupling(1, 2, c(g, 0.0));
        let e = h.eig();
        // Characteristic polynomial λ³ + c2 λ² + c1 λ + c0 of the real symmetric matrix.
        let c2 = d;
        let c1 = -od * od - 2.0 * g * g;
        let c0 = -d * od * od;
        let poly = |x: f64| ((x + c2) * x + c1) * x + c0;
        let dpoly = |x: f64| (3.0 * x + 2.0 * c2) * x + c1;
        // Independent Newton polish of each root seeded from the Gershgorin centres.
        for (seed, got) in [(-d, e.values[0]), (-od, e.values[1]), (od, e.values[2])] {
            let mut x = seed;
            for _ in 0..100 {
                x -= poly(x) / dpoly(x);
            }
            let mut sorted = e.values;
            sorted.sort_by(f64::total_cmp);
            let nearest = sorted.iter().copied().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs())).unwrap();
            assert!(((nearest - x) / x).abs() < 1e-9, "root {x} vs {got}");
        }
    }

    fn check_decomposition(h: &Hermitian3) {
        let e = h.eig();
        let scale = h.norm().max(1e-300);
        assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
        assert!(mat_max_diff(&e.reconstruct(), h.matrix()) < 1e-9 * scale);
        for i in 0..3 {
            for j in 0..3 {
                let ip = inner(&e.vectors[i], &e.vectors[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn near_degenerate_spectra() {
        check_decomposition(&random_h([1.0, 1.0 + 1e-9, 1.0], [1e-10, 0.0, 0.0, 2e-10, 0.0, 0.0]));
        check_decomposition(&random_h([1.0, 1.0, 3.0], [1e-7, 1e-7, 0.0, 0.0, 0.0, 0.0]));
        check_decomposition(&random_h([0.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        check_decomposition(&random_h([2.0, 2.0, 2.0], [0.0, 0.0, 0.0, 0.0, 0.0, 1e-20]));
    }

    proptest! {
        #[test]
        fn eig_reconstructs(d in prop::array::uniform3(-10.0f64..10.0), o in prop::array::uniform6(-5.0f64..5.0)) {
            check_decomposition(&random_h(d, o));
        }

        #[test]
        fn eig_reconstructs_clustered(base in -3.0f64..3.0, eps in prop::array::uniform3(-1e-5f64..1e-5), o in prop::array::uniform6(-1e-5f64..1e-5)) {
            check_decomposition(&random_h([base + eps[0], base + eps[1], base + eps[2]], o));
        }

        #[test]
        fn propagator_unitary_and_norm(d in prop::array::uniform3(-10.0f64..10.0), o in prop::array::uniform6(-5.0f64..5.0), dt in 1e-3f64..10.0,
                                       psi in prop::array::uniform6(-1.0f64..1.0)) {
            let h = random_h(d, o);
            let u = step_propagator(&h, dt).unwrap();
            prop_assert!(u.unitarity_error() < 1e-10);
            let v = [c(psi[0], psi[1]), c(psi[2], psi[3]), c(psi[4], psi[5] + 1.5)];
            let s = State3::normalized(v, Basis::Bare);
            let out = u.apply(&s).unwrap();
            prop_assert!((out.norm() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn propagator_composes(d in prop::array::uniform3(-10.0f64..10.0), o in prop::array::uniform6(-5.0f64..5.0), a in 1e-3f64..2.0, b in 1e-3f64..2.0) {
            let h = random_h(d, o);
            let ua = step_propagator(&h, a).unwrap();
            let ub = step_propagator(&h, b).unwrap();
            let uab = step_propagator(&h, a + b).unwrap();
            prop_assert!(mat_max_diff(&mat_mul(ua.matrix(), ub.matrix()), uab.matrix()) < 1e-9);
        }

        #[test]
        fn transform_round_trip(psi in prop::array::uniform6(-1.0f64..1.0)) {
            let v = [c(psi[0] + 2.0, psi[1]), c(psi[2], psi[3]), c(psi[4], psi[5])];
            let s = State3::normalized(v, Basis::Bare);
            let t = lambda_basis_transform().then(&dressed_basis_transform()).unwrap();
            let back = t.adjoint().apply(&t.apply(&s).unwrap()).unwrap();
            for k in 0..3 {
                prop_assert!((back.amps()[k] - s.amps()[k]).norm() < 1e-12);
            }
        }
    }
}
