//! Independent oracles for the spectral kernels.
//!
//! `phi_k(-tM) v` and `b_i(theta; -hM) v` are evaluated on small dense
//! symmetric positive-definite matrices by composite Simpson quadrature of
//! their integral definitions, with the matrix exponential taken from
//! `nalgebra` rather than from an eigendecomposition.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::operator::{inv_factorial, DiscreteOperator, GridFunction, LagrangeBasis};

/// Random SPD matrix `Q diag(lambda) Q^T` with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = raw.qr().q();
    let lambda = DVector::from_fn(n, |_, _| rng.gen_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// `sum_j w_j e^{(1 - s_j) Z} v g(s_j)` over `[0, 1]` with `Z = -t M`.
fn simpson(m: &DMatrix<f64>, t: f64, v: &DVector<f64>, intervals: usize, g: impl Fn(f64) -> f64) -> DVector<f64> {
    let intervals = intervals + intervals % 2;
    let ds = 1.0 / intervals as f64;
    let step = (m * (-t * ds)).exp();
    // walk s from 1 down to 0 so the propagator is a growing power of `step`
    let mut prop_v = v.clone();
    let mut acc = DVector::zeros(v.len());
    for j in (0..=intervals).rev() {
        let w = if j == 0 || j == intervals {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let s = j as f64 * ds;
        acc += &prop_v * (w * g(s));
        prop_v = &step * prop_v;
    }
    acc * (ds / 3.0)
}

/// `phi_k(-tM) v` with `phi_0 = e^z` and
/// `phi_k(z) = 1/(k-1)! int_0^1 e^{(1-s)z} s^{k-1} ds`.
pub fn phi_oracle(m: &DMatrix<f64>, k: usize, t: f64, v: &DVector<f64>, intervals: usize) -> DVector<f64> {
    if k == 0 {
        return (m * -t).exp() * v;
    }
    let c = inv_factorial(k - 1);
    simpson(m, t, v, intervals, |s| c * s.powi(k as i32 - 1))
}

/// `b_i(theta; -hM) v = (1/h) int_0^{theta h} e^{-(theta h - sigma) M} l_i(sigma / h) v dsigma`.
pub fn weight_oracle(
    m: &DMatrix<f64>,
    basis: &LagrangeBasis,
    i: usize,
    theta: f64,
    h: f64,
    v: &DVector<f64>,
    intervals: usize,
) -> DVector<f64> {
    if theta == 0.0 {
        return DVector::zeros(v.len());
    }
    simpson(m, theta * h, v, intervals, |s| theta * basis.eval(i, theta * s))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub cases: usize,
    pub max_phi_residual: f64,
    pub max_weight_residual: f64,
}

fn relative(a: &GridFunction, b: &DVector<f64>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.norm().max(f64::MIN_POSITIVE)
}

/// Compares `apply_phi` (k = 0..=4) and `apply_weight` for the standard bases
/// against the quadrature oracles on `cases` random SPD matrices of size at most 8.
pub fn run_kernel_oracle(seed: u64, cases: usize) -> Result<OracleReport> {
    const INTERVALS: usize = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = [
        LagrangeBasis::new(vec![0.0])?,
        LagrangeBasis::new(vec![0.0, 1.0])?,
        LagrangeBasis::equidistant3(),
        LagrangeBasis::gauss_lobatto3(),
    ];
    let mut report = OracleReport {
        cases,
        ..Default::default()
    };
    for _ in 0..cases {
        let n = rng.gen_range(1..=8);
        let m = random_spd(&mut rng, n, 0.05, 10.0);
        let op = DiscreteOperator::from_symmetric(&m, 1.0)?;
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let grid = GridFunction::new(v.as_slice().to_vec())?;
        let t = rng.gen_range(0.01..2.0);
        for k in 0..=4 {
            let got = op.apply_phi(k, t, &grid)?;
            let want = phi_oracle(&m, k, t, &v, INTERVALS);
            report.max_phi_residual = report.max_phi_residual.max(relative(&got, &want));
        }
        let theta = rng.gen_range(0.05..=1.0);
        for basis in &bases {
            for i in 0..basis.stages() {
                let got = op.apply_weight(basis, i, theta, t, &grid)?;
                let want = weight_oracle(&m, basis, i, theta, t, &v, INTERVALS);
                report.max_weight_residual = report.max_weight_residual.max(relative(&got, &want));
            }
        }
    }
    Ok(report)
}
