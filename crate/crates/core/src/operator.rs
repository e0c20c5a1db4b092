//! Spectral representation of the discretised elliptic operator.
//!
//! The shipped operator is the standard three-point Dirichlet Laplacian on a
//! uniform grid of `n` interior nodes, diagonalised by the orthonormal sine
//! transform (DST-I, computed through an FFT of length `2(n + 1)`). Matrix
//! functions `phi_k(-tA)` then act as diagonal multipliers in sine space. A
//! dense symmetric eigendecomposition backs arbitrary SPD matrices; it exists
//! for the quadrature oracles and small experiments.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::Index;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Below this modulus `phi_k` is always summed from its Taylor series;
/// above the cutoff of [`taylor_switch`] the recurrence from `expm1` is used.
const TAYLOR_SWITCH: f64 = 0.5;

/// Below this `|z|` the series is used for `phi_k`. Each recurrence step
/// divides a difference by `z`, so higher `k` needs a wider series region.
fn taylor_switch(k: usize) -> f64 {
    (k as f64 - 1.0).clamp(TAYLOR_SWITCH, 4.0)
}

/// Number of memoised multiplier vectors kept before the cache is flushed.
const CACHE_CAPACITY: usize = 4096;

/// Values of a function on the interior grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    /// Checked constructor: at least one node, all entries finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("grid function needs at least one node"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("grid function entry {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_vec(vec![0.0; n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self::from_vec((0..n).map(f).collect())
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self - other`.
    pub fn difference(&self, other: &GridFunction) -> GridFunction {
        debug_assert_eq!(self.len(), other.len());
        Self::from_vec(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, factor: f64) -> GridFunction {
        Self::from_vec(self.iter().map(|v| v * factor).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for GridFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl AsRef<[f64]> for GridFunction {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `1/k!`.
pub(crate) fn inv_factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc / j as f64)
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc * j as f64)
}

/// `phi_k(z)` without argument checks.
pub(crate) fn phi(k: usize, z: f64) -> f64 {
    if k == 0 {
        return z.exp();
    }
    if z.abs() < taylor_switch(k) {
        // phi_k(z) = sum_j z^j / (j + k)!
        let mut term = inv_factorial(k);
        let mut sum = term;
        for j in 1..40 {
            term *= z / (j + k) as f64;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    let mut value = z.exp_m1() / z;
    let mut inv_fact = 1.0;
    for j in 1..k {
        // inv_fact = 1/j!
        inv_fact /= j as f64;
        value = (value - inv_fact) / z;
    }
    value
}

/// Scalar `phi_k(z)`: `phi_0 = e^z` and `phi_{k+1}(z) = (phi_k(z) - 1/k!) / z`,
/// continued by `phi_k(0) = 1/k!`.
pub fn phi_scalar(k: usize, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(invalid(format!("phi argument {z} is not finite")));
    }
    Ok(phi(k, z))
}

/// Lagrange basis `l_1..l_s` on nonconfluent nodes in `[0, 1]`, kept in
/// monomial form `l_i(rho) = sum_k alpha_ik rho^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl LagrangeBasis {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(invalid("a Lagrange basis needs at least one node"));
        }
        for (i, &c) in nodes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(invalid(format!("node c_{} = {c} lies outside [0, 1]", i + 1)));
            }
            for &d in &nodes[..i] {
                if (c - d).abs() < 1e-12 {
                    return Err(invalid(format!("confluent nodes near {c}")));
                }
            }
        }
        let coeffs = (0..nodes.len())
            .map(|i| {
                let mut poly = vec![1.0];
                for (m, &cm) in nodes.iter().enumerate() {
                    if m == i {
                        continue;
                    }
                    let denom = nodes[i] - cm;
                    // poly *= (rho - cm) / denom
                    let mut next = vec![0.0; poly.len() + 1];
                    for (k, &a) in poly.iter().enumerate() {
                        next[k + 1] += a / denom;
                        next[k] -= a * cm / denom;
                    }
                    poly = next;
                }
                poly
            })
            .collect();
        Ok(Self { nodes, coeffs })
    }

    /// Gauss–Lobatto nodes `(0, 1/2, 1)`; the underlying quadrature is Simpson's rule.
    pub fn gauss_lobatto3() -> Self {
        Self::new(vec![0.0, 0.5, 1.0]).expect("valid nodes")
    }

    /// Nodes `(1/3, 2/3, 1)`.
    pub fn equidistant3() -> Self {
        Self::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0]).expect("valid nodes")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }

    /// Monomial coefficients `alpha_i0, alpha_i1, ...` of `l_i` (0-based `i`).
    pub fn coefficients(&self, i: usize) -> &[f64] {
        &self.coeffs[i]
    }

    pub fn eval(&self, i: usize, rho: f64) -> f64 {
        self.coeffs[i].iter().rev().fold(0.0, |acc, a| acc * rho + a)
    }

    /// Weights of the interpolatory quadrature `int_0^1 l_i`.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| c.iter().enumerate().map(|(k, a)| a / (k + 1) as f64).sum())
            .collect()
    }

    /// Largest `q` such that the interpolatory quadrature integrates all
    /// polynomials of degree `< q` exactly.
    pub fn quadrature_order(&self) -> usize {
        let w = self.quadrature_weights();
        let mut q = 0;
        while q <= 2 * self.stages() {
            let approx: f64 = w.iter().zip(&self.nodes).map(|(w, c)| w * c.powi(q as i32)).sum();
            if (approx - 1.0 / (q + 1) as f64).abs() > 1e-12 {
                break;
            }
            q += 1;
        }
        q
    }
}

struct SineTransform {
    fft: Arc<dyn Fft<f64>>,
}

impl SineTransform {
    fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        Self { fft }
    }

    /// `Im` of the FFT of the odd extension, i.e. `-2 sum_j v_j sin(pi (j+1) (k+1) / (n+1))`.
    fn odd_fft(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let len = 2 * (n + 1);
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        for (j, &x) in v.iter().enumerate() {
            buf[j + 1].re = x;
            buf[len - 1 - j].re = -x;
        }
        self.fft.process(&mut buf);
        buf[1..=n].iter().map(|y| y.im).collect()
    }

    /// Unnormalised DST-I `S v`.
    fn forward(&self, v: &[f64]) -> Vec<f64> {
        self.odd_fft(v).into_iter().map(|y| -0.5 * y).collect()
    }

    /// `S^{-1} c = 2 / (n + 1) S c`. Dividing by `n + 1` entrywise keeps the
    /// round trip free of a fixed rounded scale factor.
    fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let m = (c.len() + 1) as f64;
        self.odd_fft(c).into_iter().map(|y| -y / m).collect()
    }
}

enum Basis {
    Sine(SineTransform),
    Dense {
        matrix: DMatrix<f64>,
        vectors: DMatrix<f64>,
    },
}

type MultiplierMap = HashMap<(usize, u64), Arc<[f64]>>;

#[derive(Default)]
struct PhiCache {
    map: Mutex<MultiplierMap>,
}

/// Diagonalised discrete operator `A` with memoised `phi_k(-tA)` multipliers.
///
/// Immutable after construction; the multiplier cache is internally
/// synchronised, so an operator can be shared across threads behind an `Arc`.
pub struct DiscreteOperator {
    n: usize,
    dx: f64,
    eigenvalues: Vec<f64>,
    basis: Basis,
    cache: PhiCache,
}

impl fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.basis {
            Basis::Sine(_) => "sine",
            Basis::Dense { .. } => "dense",
        };
        f.debug_struct("DiscreteOperator")
            .field("n", &self.n)
            .field("dx", &self.dx)
            .field("basis", &kind)
            .finish()
    }
}

/// Three-point Dirichlet Laplacian on `n` interior nodes of `(0, length)`.
pub fn make_operator(n: usize, length: f64) -> Result<DiscreteOperator> {
    DiscreteOperator::dirichlet_laplacian(n, length)
}

impl DiscreteOperator {
    pub fn dirichlet_laplacian(n: usize, length: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("operator needs at least one interior node"));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid(format!("domain length {length} must be positive")));
        }
        let dx = length / (n + 1) as f64;
        let eigenvalues = (1..=n)
            .map(|j| {
                let s = (j as f64 * PI / (2.0 * (n + 1) as f64)).sin();
                4.0 / (dx * dx) * s * s
            })
            .collect();
        Ok(Self {
            n,
            dx,
            eigenvalues,
            basis: Basis::Sine(SineTransform::new(n)),
            cache: PhiCache::default(),
        })
    }

    /// Dense fallback for a symmetric positive-definite matrix. `dx` is the
    /// quadrature weight used by the discrete L2 norm.
    pub fn from_symmetric(matrix: &DMatrix<f64>, dx: f64) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(invalid("operator matrix must be square and non-empty"));
        }
        if (matrix - matrix.transpose()).amax() > 1e-12 * matrix.amax().max(1.0) {
            return Err(invalid("operator matrix is not symmetric"));
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        if eigenvalues[0] <= 0.0 {
            return Err(invalid(format!(
                "operator is not positive definite (smallest eigenvalue {})",
                eigenvalues[0]
            )));
        }
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            n,
            dx,
            eigenvalues,
            basis: Basis::Dense {
                matrix: matrix.clone(),
                vectors,
            },
            cache: PhiCache::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Coefficients of `v` in the eigenbasis: orthonormal for dense operators,
    /// the unnormalised sine modes `sin(pi j k / (n + 1))` for the Laplacian.
    pub fn to_spectral(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n);
        match &self.basis {
            Basis::Sine(dst) => dst.forward(v),
            Basis::Dense { vectors, .. } => {
                (vectors.transpose() * DVector::from_column_slice(v)).as_slice().to_vec()
            }
        }
    }

    pub fn from_spectral(&self, coeffs: &[f64]) -> GridFunction {
        debug_assert_eq!(coeffs.len(), self.n);
        let values = match &self.basis {
            Basis::Sine(dst) => dst.inverse(coeffs),
            Basis::Dense { vectors, .. } => {
                (vectors * DVector::from_column_slice(coeffs)).as_slice().to_vec()
            }
        };
        GridFunction::from_vec(values)
    }

    /// `A v`, applied directly (stencil or matrix product), not spectrally.
    pub fn apply_matrix(&self, v: &GridFunction) -> Result<GridFunction> {
        self.check_dim(v)?;
        let values = match &self.basis {
            Basis::Sine(_) => {
                let u = v.as_slice();
                let inv = 1.0 / (self.dx * self.dx);
                (0..self.n)
                    .map(|i| {
                        let left = if i > 0 { u[i - 1] } else { 0.0 };
                        let right = if i + 1 < self.n { u[i + 1] } else { 0.0 };
                        (2.0 * u[i] - left - right) * inv
                    })
                    .collect()
            }
            Basis::Dense { matrix, .. } => {
                (matrix * DVector::from_column_slice(v.as_slice())).as_slice().to_vec()
            }
        };
        Ok(GridFunction::from_vec(values))
    }

    /// Diagonal multipliers `phi_k(-t lambda_j)`, memoised on the exact bits of `t`.
    pub fn phi_multipliers(&self, k: usize, t: f64) -> Arc<[f64]> {
        self.memoised((k, t.to_bits()), || self.eigenvalues.iter().map(|&l| phi(k, -t * l)).collect())
    }

    /// `expm1(-t lambda_j)`, memoised like [`phi_multipliers`](Self::phi_multipliers).
    fn decay_increments(&self, t: f64) -> Arc<[f64]> {
        self.memoised((usize::MAX, t.to_bits()), || self.eigenvalues.iter().map(|&l| (-t * l).exp_m1()).collect())
    }

    fn memoised(&self, key: (usize, u64), make: impl FnOnce() -> Arc<[f64]>) -> Arc<[f64]> {
        if let Some(hit) = self.cache.map.lock().expect("phi cache poisoned").get(&key) {
            return Arc::clone(hit);
        }
        let diag = make();
        let mut map = self.cache.map.lock().expect("phi cache poisoned");
        if map.len() >= CACHE_CAPACITY {
            map.clear();
        }
        map.insert(key, Arc::clone(&diag));
        diag
    }

    /// Diagonal multipliers of `b_i(theta; -hA) = sum_k alpha_ik k! theta^(k+1) phi_(k+1)(-theta h A)`.
    pub fn weight_multipliers(&self, basis: &LagrangeBasis, i: usize, theta: f64, h: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        if theta == 0.0 {
            return out;
        }
        let t = theta * h;
        let mut theta_pow = theta;
        for (k, &alpha) in basis.coefficients(i).iter().enumerate() {
            let scale = alpha * factorial(k) * theta_pow;
            theta_pow *= theta;
            if scale == 0.0 {
                continue;
            }
            let diag = self.phi_multipliers(k + 1, t);
            for (o, d) in out.iter_mut().zip(diag.iter()) {
                *o += scale * d;
            }
        }
        out
    }

    /// `phi_k(-tA) v`; `k = 0` is the semigroup `e^{-tA} v`.
    pub fn apply_phi(&self, k: usize, t: f64, v: &GridFunction) -> Result<GridFunction> {
        self.check_dim(v)?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("phi time argument {t} must be finite and nonnegative")));
        }
        if t == 0.0 {
            return Ok(v.scaled(inv_factorial(k)));
        }
        let diag = self.phi_multipliers(k, t);
        let coeffs: Vec<f64> = self
            .to_spectral(v.as_slice())
            .iter()
            .zip(diag.iter())
            .map(|(c, d)| c * d)
            .collect();
        Ok(self.from_spectral(&coeffs))
    }

    /// `b_i(theta; -hA) v` for the 0-based stage index `i`.
    pub fn apply_weight(
        &self,
        basis: &LagrangeBasis,
        i: usize,
        theta: f64,
        h: f64,
        v: &GridFunction,
    ) -> Result<GridFunction> {
        self.check_dim(v)?;
        if i >= basis.stages() {
            return Err(invalid(format!(
                "stage index {i} out of range for a {}-stage basis",
                basis.stages()
            )));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(invalid(format!("theta = {theta} lies outside [0, 1]")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("step size {h} must be positive")));
        }
        let w = self.weight_multipliers(basis, i, theta, h);
        let coeffs: Vec<f64> = self
            .to_spectral(v.as_slice())
            .iter()
            .zip(&w)
            .map(|(c, d)| c * d)
            .collect();
        Ok(self.from_spectral(&coeffs))
    }

    /// `e^{-theta h A} u + h sum_i b_i(theta; -hA) g_i` with all inputs given
    /// in spectral coordinates.
    pub(crate) fn propagate(
        &self,
        basis: &LagrangeBasis,
        theta: f64,
        h: f64,
        u_hat: &[f64],
        stages_hat: &[Vec<f64>],
    ) -> GridFunction {
        self.from_spectral(&self.propagate_hat(basis, theta, h, u_hat, stages_hat))
    }

    /// [`propagate`](Self::propagate) without the final inverse transform.
    pub(crate) fn propagate_hat(
        &self,
        basis: &LagrangeBasis,
        theta: f64,
        h: f64,
        u_hat: &[f64],
        stages_hat: &[Vec<f64>],
    ) -> Vec<f64> {
        debug_assert_eq!(stages_hat.len(), basis.stages());
        // u e^{-z} = u + u expm1(-z): the increment rounds with the data, so
        // the rounding of e^{-z} is not compounded over many steps.
        let decay = self.decay_increments(theta * h);
        let mut acc: Vec<f64> = u_hat.iter().zip(decay.iter()).map(|(u, m)| u + u * m).collect();
        for (i, g) in stages_hat.iter().enumerate() {
            let w = self.weight_multipliers(basis, i, theta, h);
            for ((a, wj), gj) in acc.iter_mut().zip(&w).zip(g) {
                *a += h * wj * gj;
            }
        }
        acc
    }

    pub(crate) fn check_dim(&self, v: &GridFunction) -> Result<()> {
        if v.len() != self.n {
            return Err(invalid(format!(
                "grid function has {} nodes, operator expects {}",
                v.len(),
                self.n
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn first_mode(n: usize) -> GridFunction {
        GridFunction::from_fn(n, |j| ((j + 1) as f64 * PI / (n + 1) as f64).sin())
    }

    #[test]
    fn laplacian_eigenvalues() {
        let op = make_operator(3, 1.0).unwrap();
        // direct eigenvalues of the 3x3 tridiagonal (2, -1) / dx^2 with dx = 1/4
        let m = DMatrix::from_row_slice(3, 3, &[32.0, -16.0, 0.0, -16.0, 32.0, -16.0, 0.0, -16.0, 32.0]);
        let mut direct: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        direct.sort_by(f64::total_cmp);
        for (a, b) in op.eigenvalues().iter().zip(&direct) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
        assert_relative_eq!(op.eigenvalues()[0], 9.372583002030478, max_relative = 1e-13);

        let op = make_operator(1, 1.0).unwrap();
        assert_relative_eq!(op.eigenvalues()[0], 8.0, max_relative = 1e-15);

        let op = make_operator(200, 1.0).unwrap();
        assert!((op.eigenvalues()[0] / (PI * PI) - 1.0).abs() < 2e-3);
        assert!(op.eigenvalues().windows(2).all(|w| 0.0 < w[0] && w[0] < w[1]));
    }

    #[test]
    fn invalid_operators() {
        assert!(make_operator(0, 1.0).is_err());
        assert!(make_operator(4, 0.0).is_err());
        assert!(make_operator(4, -1.0).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DiscreteOperator::from_symmetric(&indefinite, 1.0).is_err());
    }

    #[test]
    fn sine_transform_matches_stencil_eigenvectors() {
        let n = 8;
        let op = make_operator(n, 1.0).unwrap();
        let v = first_mode(n);
        let av = op.apply_matrix(&v).unwrap();
        for j in 0..n {
            assert_relative_eq!(av[j], op.eigenvalues()[0] * v[j], max_relative = 1e-12);
        }
        let hat = op.to_spectral(v.as_slice());
        let norm = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        assert_relative_eq!(hat[0], norm * ((n + 1) as f64 / 2.0).sqrt(), max_relative = 1e-13);
        assert!(hat[1..].iter().all(|c| c.abs() < 1e-13));
    }

    #[test]
    fn phi_scalar_values() {
        assert_eq!(phi_scalar(1, 0.0).unwrap(), 1.0);
        assert_eq!(phi_scalar(3, 0.0).unwrap(), 1.0 / 6.0);
        assert_relative_eq!(phi_scalar(0, 1.0).unwrap(), std::f64::consts::E, max_relative = 1e-15);
        assert_relative_eq!(phi_scalar(1, 1.0).unwrap(), 1.718281828459045, max_relative = 1e-14);
        assert_relative_eq!(phi_scalar(2, -1.0).unwrap(), (-1.0f64).exp(), max_relative = 1e-14);
        assert!(phi_scalar(1, f64::NAN).is_err());
        assert!(phi_scalar(1, f64::INFINITY).is_err());
    }

    #[test]
    fn phi_scalar_matches_closed_forms() {
        // closed forms evaluated where they are well conditioned
        for &z in &[-50.0, -20.0, -3.0, -0.75, 0.6, 2.0, 10.0] {
            let e = f64::exp(z);
            let p1 = (e - 1.0) / z;
            let p2 = (e - 1.0 - z) / (z * z);
            let p3 = (e - 1.0 - z - z * z / 2.0) / (z * z * z);
            assert_relative_eq!(phi(1, z), p1, max_relative = 1e-13);
            assert_relative_eq!(phi(2, z), p2, max_relative = 1e-13);
            if z.abs() > 2.0 {
                assert_relative_eq!(phi(3, z), p3, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn phi_is_continuous_across_the_switch() {
        for k in 1..=5 {
            for &s in &[-1.0, 1.0] {
                let below = phi(k, s * taylor_switch(k) * (1.0 - 1e-15));
                let above = phi(k, s * taylor_switch(k) * (1.0 + 1e-15));
                assert_relative_eq!(below, above, max_relative = 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn phi_recurrence_residual(k in 0usize..5, z in -50.0f64..50.0) {
            prop_assume!(z.abs() >= taylor_switch(k + 1));
            let lhs = z * phi(k + 1, z) + inv_factorial(k);
            let rhs = phi(k, z);
            prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1.0));
        }

        #[test]
        fn transform_roundtrip(values in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let op = make_operator(values.len(), 1.0).unwrap();
            let back = op.from_spectral(&op.to_spectral(&values));
            let scale = values.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            for (a, b) in back.iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn semigroup_property(t1 in 0.0f64..0.5, t2 in 0.0f64..0.5, seed in 0u64..1000) {
            let op = make_operator(16, 1.0).unwrap();
            let v = GridFunction::from_fn(16, |j| ((j as u64 * 7919 + seed) % 101) as f64 / 50.0 - 1.0);
            let a = op.apply_phi(0, t1, &op.apply_phi(0, t2, &v).unwrap()).unwrap();
            let b = op.apply_phi(0, t1 + t2, &v).unwrap();
            let scale = b.max_abs().max(1e-300);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * scale.max(v.max_abs() * 1e-3));
            }
        }

        #[test]
        fn phi_action_is_bounded(k in 0usize..5, t in 0.0f64..2.0, seed in 0u64..1000) {
            let op = make_operator(12, 1.0).unwrap();
            let raw = GridFunction::from_fn(12, |j| (((j as u64 + 1) * 2654435761 + seed) % 1000) as f64 - 500.0);
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = raw.scaled(1.0 / norm);
            let w = op.apply_phi(k, t, &v).unwrap();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let bound = op.eigenvalues().iter().fold(0.0f64, |m, &l| m.max(phi(k, -t * l).abs()));
            prop_assert!(wn <= bound * (1.0 + 1e-12));
            prop_assert!(bound <= inv_factorial(k) * (1.0 + 1e-15));
        }
    }

    #[test]
    fn apply_phi_examples() {
        let op = make_operator(5, 1.0).unwrap();
        let v = GridFunction::from_fn(5, |j| j as f64 - 1.5);
        assert_eq!(op.apply_phi(0, 0.0, &v).unwrap(), v);

        let op1 = make_operator(1, 1.0).unwrap();
        let one = GridFunction::new(vec![1.0]).unwrap();
        let got = op1.apply_phi(1, 0.5, &one).unwrap();
        assert_relative_eq!(got[0], phi(1, -0.5 * 8.0), max_relative = 1e-14);

        let op8 = make_operator(8, 1.0).unwrap();
        let mode = first_mode(8);
        let got = op8.apply_phi(1, 0.1, &mode).unwrap();
        let factor = phi(1, -0.1 * op8.eigenvalues()[0]);
        for j in 0..8 {
            assert_relative_eq!(got[j], factor * mode[j], max_relative = 1e-12, epsilon = 1e-15);
        }

        assert!(op8.apply_phi(1, 0.1, &v).is_err());
        assert!(op8.apply_phi(1, -0.1, &mode).is_err());
    }

    #[test]
    fn lagrange_basis_properties() {
        let basis = LagrangeBasis::new(vec![0.1, 0.45, 0.8, 1.0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((basis.eval(i, basis.nodes()[j]) - expect).abs() < 1e-12);
            }
        }
        for &rho in &[0.0, 0.3, 0.77, 1.0, 1.7] {
            let sum: f64 = (0..4).map(|i| basis.eval(i, rho)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(LagrangeBasis::gauss_lobatto3().quadrature_order(), 4);
        assert_eq!(LagrangeBasis::equidistant3().quadrature_order(), 3);
        assert!(LagrangeBasis::new(vec![]).is_err());
        assert!(LagrangeBasis::new(vec![0.5, 0.5]).is_err());
        assert!(LagrangeBasis::new(vec![-0.1, 0.5]).is_err());
    }

    #[test]
    fn weight_limits_at_zero_operator() {
        // lambda -> 0: b_i(theta; 0) = int_0^theta l_i
        let op = DiscreteOperator::from_symmetric(&DMatrix::from_element(1, 1, 1e-300), 1.0).unwrap();
        let one = GridFunction::new(vec![1.0]).unwrap();
        let theta = 0.7;

        let euler = LagrangeBasis::new(vec![0.3]).unwrap();
        let b = op.apply_weight(&euler, 0, 1.0, 0.2, &one).unwrap();
        assert_relative_eq!(b[0], 1.0, max_relative = 1e-14);

        let two = LagrangeBasis::new(vec![0.0, 1.0]).unwrap();
        let b2 = op.apply_weight(&two, 1, theta, 0.2, &one).unwrap();
        assert_relative_eq!(b2[0], theta * theta / 2.0, max_relative = 1e-14);

        let c2 = 0.6;
        let erk2 = LagrangeBasis::new(vec![0.0, c2]).unwrap();
        let b1 = op.apply_weight(&erk2, 0, theta, 0.2, &one).unwrap();
        let b2 = op.apply_weight(&erk2, 1, theta, 0.2, &one).unwrap();
        assert_relative_eq!(b1[0], theta - theta * theta / (2.0 * c2), max_relative = 1e-14);
        assert_relative_eq!(b2[0], theta * theta / (2.0 * c2), max_relative = 1e-14);
    }

    #[test]
    fn one_stage_weight_is_phi1() {
        let op = make_operator(6, 1.0).unwrap();
        let v = GridFunction::from_fn(6, |j| (j as f64).cos());
        let basis = LagrangeBasis::new(vec![0.42]).unwrap();
        let w = op.apply_weight(&basis, 0, 1.0, 0.03, &v).unwrap();
        let p = op.apply_phi(1, 0.03, &v).unwrap();
        for j in 0..6 {
            assert_relative_eq!(w[j], p[j], max_relative = 1e-13, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_reproduce_stage_coefficients() {
        // sum_i b_i(theta; 0) = theta for every basis
        let op = DiscreteOperator::from_symmetric(&DMatrix::from_element(1, 1, 1e-300), 1.0).unwrap();
        let one = GridFunction::new(vec![1.0]).unwrap();
        for basis in [LagrangeBasis::gauss_lobatto3(), LagrangeBasis::equidistant3()] {
            for &theta in &[0.0, 0.25, 0.5, 1.0] {
                let sum: f64 = (0..3)
                    .map(|i| op.apply_weight(&basis, i, theta, 0.1, &one).unwrap()[0])
                    .sum();
                assert!((sum - theta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_weight_rejects_bad_arguments() {
        let op = make_operator(4, 1.0).unwrap();
        let v = GridFunction::zeros(4);
        let basis = LagrangeBasis::gauss_lobatto3();
        assert!(op.apply_weight(&basis, 3, 0.5, 0.1, &v).is_err());
        assert!(op.apply_weight(&basis, 0, 1.5, 0.1, &v).is_err());
        assert!(op.apply_weight(&basis, 0, -0.1, 0.1, &v).is_err());
        assert!(op.apply_weight(&basis, 0, 0.5, 0.0, &v).is_err());
    }

    #[test]
    fn grid_function_validation() {
        assert!(GridFunction::new(vec![]).is_err());
        assert!(GridFunction::new(vec![1.0, f64::NAN]).is_err());
        assert!(GridFunction::new(vec![1.0, 2.0]).is_ok());
    }
}
