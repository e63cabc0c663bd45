//! Small dense complex matrices and quantum states for one and two qubits.
//!
//! Everything here is fixed-size (`N` = 2 or 4) and `Copy`; nothing allocates
//! except the Jacobi eigenvalue solver's scratch space.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Hermiticity and trace tolerance for density matrices.
pub const STATE_TOL: f64 = 1e-12;
/// Most negative eigenvalue tolerated in a density matrix.
pub const NEG_EIG_TOL: f64 = 1e-10;
const JACOBI_TOL: f64 = 1e-14;

/// Square complex matrix of fixed dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CMatrix<const N: usize>(pub [[C64; N]; N]);

pub type Mat2 = CMatrix<2>;
pub type Mat4 = CMatrix<4>;

impl<const N: usize> Default for CMatrix<N> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<const N: usize> CMatrix<N> {
    pub fn zeros() -> Self {
        CMatrix([[ZERO; N]; N])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = ONE;
        }
        m
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(d: [C64; N]) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = d[i];
        }
        m
    }

    pub const fn dim(&self) -> usize {
        N
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i])
    }

    pub fn trace(&self) -> C64 {
        (0..N).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (*self - *other).max_abs()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖M - M†‖_max`.
    pub fn hermiticity_deviation(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// `‖M†M - 𝟙‖_max`.
    pub fn unitarity_deviation(&self) -> f64 {
        (self.adjoint() * *self).max_abs_diff(&Self::identity())
    }

    /// `U M U†`.
    pub fn conjugate_by(&self, u: &Self) -> Self {
        *u * *self * u.adjoint()
    }

    /// Hilbert-Schmidt inner product `Tr(A† B)`.
    pub fn hs_inner(&self, other: &Self) -> C64 {
        let mut acc = ZERO;
        for i in 0..N {
            for j in 0..N {
                acc += self.0[i][j].conj() * other.0[i][j];
            }
        }
        acc
    }

    pub fn mul_vec(&self, v: &[C64; N]) -> [C64; N] {
        let mut out = [ZERO; N];
        for i in 0..N {
            for j in 0..N {
                out[i] += self.0[i][j] * v[j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl<const N: usize> Index<(usize, usize)> for CMatrix<N> {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.0[i][j]
    }
}

impl<const N: usize> IndexMut<(usize, usize)> for CMatrix<N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.0[i][j]
    }
}

impl<const N: usize> Add for CMatrix<N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<const N: usize> Sub for CMatrix<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<const N: usize> Neg for CMatrix<N> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::from_fn(|i, j| -self.0[i][j])
    }
}

impl<const N: usize> Mul for CMatrix<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            for k in 0..N {
                let a = self.0[i][k];
                if a == ZERO {
                    continue;
                }
                for j in 0..N {
                    out.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        out
    }
}

impl<const N: usize> Mul<C64> for CMatrix<N> {
    type Output = Self;
    fn mul(self, rhs: C64) -> Self {
        self.scale(rhs)
    }
}

impl<const N: usize> Mul<f64> for CMatrix<N> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale_re(rhs)
    }
}

pub fn sigma_x() -> Mat2 {
    CMatrix([[ZERO, ONE], [ONE, ZERO]])
}

pub fn sigma_y() -> Mat2 {
    CMatrix([[ZERO, -I], [I, ZERO]])
}

pub fn sigma_z() -> Mat2 {
    CMatrix([[ONE, ZERO], [ZERO, -ONE]])
}

/// `|k⟩⟨k|` on a qubit.
pub fn projector(k: usize) -> Mat2 {
    let mut m = Mat2::zeros();
    m.0[k][k] = ONE;
    m
}

/// `a σx + b σy + c σz`.
pub fn pauli_vector(a: f64, b: f64, c: f64) -> Mat2 {
    CMatrix([
        [C64::new(c, 0.0), C64::new(a, -b)],
        [C64::new(a, b), C64::new(-c, 0.0)],
    ])
}

/// Closed-form `exp(-i(a σx + b σy + c σz))`.
pub fn pauli_exp(a: f64, b: f64, c: f64) -> Result<Mat2> {
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite Pauli coefficients ({a}, {b}, {c})"
        )));
    }
    Ok(pauli_exp_unchecked(a, b, c))
}

pub(crate) fn pauli_exp_unchecked(a: f64, b: f64, c: f64) -> Mat2 {
    let r = (a * a + b * b + c * c).sqrt();
    if r == 0.0 {
        return Mat2::identity();
    }
    let (s, co) = r.sin_cos();
    let k = s / r;
    // cos r 𝟙 - i (sin r / r)(a σx + b σy + c σz)
    CMatrix([
        [C64::new(co, -k * c), C64::new(-k * b, -k * a)],
        [C64::new(k * b, -k * a), C64::new(co, k * c)],
    ])
}

/// Kronecker product with `a` as the first (ancilla) factor.
pub fn tensor(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|i, j| a.0[i / 2][j / 2] * b.0[i % 2][j % 2])
}

/// Eigenvalues of a Hermitian matrix, ascending.
///
/// Dimension 2 uses the closed form; larger dimensions run cyclic Jacobi on
/// the real symmetric embedding `[[Re, -Im], [Im, Re]]`, whose spectrum is
/// the Hermitian spectrum with every value doubled.
pub fn hermitian_eigenvalues<const N: usize>(m: &CMatrix<N>) -> [f64; N] {
    let mut out = [0.0; N];
    if N == 2 {
        let a = m.0[0][0].re;
        let d = m.0[1][1].re;
        let b = m.0[0][1];
        let mean = 0.5 * (a + d);
        let half = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        out[0] = mean - half;
        out[1] = mean + half;
        return out;
    }
    let n2 = 2 * N;
    let mut s = vec![0.0; n2 * n2];
    for i in 0..N {
        for j in 0..N {
            let z = m.0[i][j];
            s[i * n2 + j] = z.re;
            s[(i + N) * n2 + (j + N)] = z.re;
            s[i * n2 + (j + N)] = -z.im;
            s[(i + N) * n2 + j] = z.im;
        }
    }
    let mut ev = jacobi_eigenvalues(&mut s, n2);
    ev.sort_by(|x, y| x.total_cmp(y));
    for (k, v) in out.iter_mut().enumerate() {
        *v = 0.5 * (ev[2 * k] + ev[2 * k + 1]);
    }
    out
}

/// Cyclic Jacobi on a dense row-major symmetric matrix; destroys `a`.
fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() < JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Validated density operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix<const N: usize>(CMatrix<N>);

impl<const N: usize> DensityMatrix<N> {
    pub fn new(m: CMatrix<N>) -> Result<Self> {
        Self::with_tolerance(m, STATE_TOL)
    }

    /// Validates Hermiticity and unit trace at `tol`, eigenvalues at the
    /// fixed negative tolerance.
    pub fn with_tolerance(m: CMatrix<N>, tol: f64) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let h = m.hermiticity_deviation();
        if h > tol {
            return Err(Error::InvalidState(format!("not Hermitian ({h:.3e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > tol {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let ev = hermitian_eigenvalues(&m);
        if ev[0] < -NEG_EIG_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {:.3e}",
                ev[0]
            )));
        }
        Ok(DensityMatrix(m))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(CMatrix::identity().scale_re(1.0 / N as f64))
    }

    pub fn matrix(&self) -> &CMatrix<N> {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix<N> {
        self.0
    }

    pub fn eigenvalues(&self) -> [f64; N] {
        hermitian_eigenvalues(&self.0)
    }

    /// `U ρ U†`.
    pub fn evolve(&self, u: &CMatrix<N>) -> Self {
        DensityMatrix(self.0.conjugate_by(u))
    }

    /// `Tr(ρ A)`.
    pub fn expectation(&self, a: &CMatrix<N>) -> C64 {
        (self.0 * *a).trace()
    }
}

impl DensityMatrix<2> {
    /// Qubit state with Bloch vector `r`, `|r| ≤ 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let m = (Mat2::identity() + pauli_vector(r[0], r[1], r[2])).scale_re(0.5);
        Self::new(m)
    }

    pub fn bloch_vector(&self) -> [f64; 3] {
        [
            self.expectation(&sigma_x()).re,
            self.expectation(&sigma_y()).re,
            self.expectation(&sigma_z()).re,
        ]
    }
}

/// Normalized state vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureState<const N: usize>([C64; N]);

impl<const N: usize> PureState<N> {
    pub fn new(amplitudes: [C64; N]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("state norm {norm} != 1")));
        }
        Ok(PureState(amplitudes))
    }

    /// Scales a nonzero vector to unit norm.
    pub fn normalized(amplitudes: [C64; N]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState("cannot normalize zero vector".into()));
        }
        Ok(PureState(amplitudes.map(|z| z / norm)))
    }

    pub fn basis(k: usize) -> Self {
        let mut a = [ZERO; N];
        a[k] = ONE;
        PureState(a)
    }

    pub fn amplitudes(&self) -> &[C64; N] {
        &self.0
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// `⟨self|M|other⟩`.
    pub fn braket(&self, m: &CMatrix<N>, other: &Self) -> C64 {
        let mv = m.mul_vec(&other.0);
        self.0.iter().zip(mv.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn projector(&self) -> DensityMatrix<N> {
        DensityMatrix(CMatrix::from_fn(|i, j| self.0[i] * self.0[j].conj()))
    }
}

/// Reduces a joint ancilla ⊗ system state to the ancilla.
pub fn partial_trace_system(rho: &DensityMatrix<4>) -> DensityMatrix<2> {
    DensityMatrix(reduce_to_ancilla(rho.matrix()))
}

pub(crate) fn reduce_to_ancilla(m: &Mat4) -> Mat2 {
    Mat2::from_fn(|a, b| m.0[2 * a][2 * b] + m.0[2 * a + 1][2 * b + 1])
}

/// `½‖ρ − σ‖₁`.
pub fn trace_distance<const N: usize>(rho: &DensityMatrix<N>, sigma: &DensityMatrix<N>) -> f64 {
    let diff = *rho.matrix() - *sigma.matrix();
    let ev = hermitian_eigenvalues(&diff);
    0.5 * ev.iter().map(|x| x.abs()).sum::<f64>()
}
