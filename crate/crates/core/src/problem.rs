//! Semi-discrete delay problems and the built-in test cases.
//!
//! All three built-in problems live on the unit interval with homogeneous
//! Dirichlet conditions and share the nonlinearity `1 / (1 + u^2 + w^2)`,
//! evaluated pointwise on the grid (`w` is the delayed state). Norms inside
//! the delays are the discrete [`l2_norm`].

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::operator::{make_operator, DiscreteOperator, GridFunction};

pub type RhsFn = dyn Fn(f64, &GridFunction, &GridFunction) -> GridFunction + Send + Sync;
pub type DelayFn = dyn Fn(f64, &GridFunction) -> f64 + Send + Sync;
pub type HistoryFn = dyn Fn(f64) -> GridFunction + Send + Sync;

/// Names accepted by [`by_name`].
pub const BUILTIN_PROBLEMS: &[&str] = &["example1", "example2", "example3", "decay", "constant-lag"];

/// `u' + A u = f(t, u, u(t - tau(t, u)))` on `[0, horizon]` with `u = history` for `t <= 0`.
///
/// The callables must be pure; a problem is shared read-only by concurrent runs.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub op: Arc<DiscreteOperator>,
    pub rhs: Arc<RhsFn>,
    pub delay: Arc<DelayFn>,
    pub history: Arc<HistoryFn>,
    pub horizon: f64,
    /// Exact semi-discrete solution, when known.
    pub exact: Option<Arc<HistoryFn>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("n", &self.op.n())
            .field("horizon", &self.horizon)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

/// `t - tau(t, u)` together with the time it was evaluated at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviatedArgument {
    pub t_eval: f64,
    pub alpha: f64,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.op.n()
    }

    /// Delay checked against the contract `tau >= 0`.
    pub fn checked_delay(&self, t: f64, u: &GridFunction) -> Result<f64> {
        let tau = (self.delay)(t, u);
        if tau >= 0.0 && tau.is_finite() {
            Ok(tau)
        } else {
            Err(Error::DelayContractViolation { t, delay: tau })
        }
    }

    pub fn initial_value(&self) -> GridFunction {
        (self.history)(0.0)
    }
}

pub fn deviated_argument(p: &ProblemSpec, t: f64, u: &GridFunction) -> Result<DeviatedArgument> {
    if t > p.horizon {
        return Err(invalid(format!("t = {t} lies beyond the horizon {}", p.horizon)));
    }
    let tau = p.checked_delay(t, u)?;
    Ok(DeviatedArgument { t_eval: t, alpha: t - tau })
}

/// Discrete L2 norm `sqrt(dx * sum u_i^2)`.
pub fn l2_norm(op: &DiscreteOperator, u: &GridFunction) -> f64 {
    debug_assert_eq!(op.n(), u.len());
    (op.dx() * u.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn l2_norm_sq(dx: f64, u: &GridFunction) -> f64 {
    dx * u.iter().map(|v| v * v).sum::<f64>()
}

/// Grid restriction of `x (1 - x)`.
pub fn parabola(op: &DiscreteOperator) -> GridFunction {
    let dx = op.dx();
    GridFunction::from_fn(op.n(), |i| {
        let x = (i + 1) as f64 * dx;
        x * (1.0 - x)
    })
}

fn reaction(u: &GridFunction, w: &GridFunction) -> GridFunction {
    GridFunction::from_fn(u.len(), |i| 1.0 / (1.0 + u[i] * u[i] + w[i] * w[i]))
}

fn operator(n: usize) -> Result<Arc<DiscreteOperator>> {
    Ok(Arc::new(make_operator(n, 1.0)?))
}

/// Manufactured problem with exact grid solution `e^t x(1-x)`,
/// `tau(t, u) = (1 - t) ||u||^2` and `T = 1`.
///
/// The source term is built at the semi-discrete level,
/// `psi(t) = u_ex' + A_h u_ex - 1 / (1 + u_ex(t)^2 + u_ex(alpha(t))^2)`,
/// so the grid restriction is an exact solution of the discretised system.
pub fn example1(n: usize) -> Result<ProblemSpec> {
    let op = operator(n)?;
    let profile = Arc::new(parabola(&op));
    let profile_sq = l2_norm_sq(op.dx(), &profile);
    // the three-point stencil differentiates quadratics exactly: A_h x(1-x) = 2
    let a_profile = 2.0;

    let exact: Arc<HistoryFn> = {
        let profile = Arc::clone(&profile);
        Arc::new(move |t: f64| profile.scaled(t.exp()))
    };
    let dx = op.dx();
    let delay: Arc<DelayFn> = Arc::new(move |t: f64, u: &GridFunction| (1.0 - t) * l2_norm_sq(dx, u));
    let rhs: Arc<RhsFn> = {
        let profile = Arc::clone(&profile);
        Arc::new(move |t: f64, u: &GridFunction, w: &GridFunction| {
            let et = t.exp();
            let alpha = t - (1.0 - t) * et * et * profile_sq;
            let ea = alpha.exp();
            GridFunction::from_fn(u.len(), |i| {
                let p = profile[i];
                let ue = et * p;
                let we = ea * p;
                let source = et * (p + a_profile) - 1.0 / (1.0 + ue * ue + we * we);
                1.0 / (1.0 + u[i] * u[i] + w[i] * w[i]) + source
            })
        })
    };
    Ok(ProblemSpec {
        name: "example1".into(),
        op,
        rhs,
        delay,
        history: Arc::clone(&exact),
        horizon: 1.0,
        exact: Some(exact),
    })
}

/// Vanishing delay `tau(t, u) = t - 0.9 t / (1 + ||u||^2)`, initial profile
/// `x(1 - x)` extended constantly to `t < 0`, `T = 1`.
pub fn example2(n: usize) -> Result<ProblemSpec> {
    let op = operator(n)?;
    let profile = Arc::new(parabola(&op));
    let dx = op.dx();
    let delay: Arc<DelayFn> =
        Arc::new(move |t: f64, u: &GridFunction| t - 0.9 * t / (1.0 + l2_norm_sq(dx, u)));
    let history: Arc<HistoryFn> = Arc::new(move |t: f64| {
        // the deviated argument of this problem never drops below zero
        debug_assert!(t >= 0.0, "history queried at t = {t}");
        profile.as_ref().clone()
    });
    Ok(ProblemSpec {
        name: "example2".into(),
        op,
        rhs: Arc::new(|_t, u, w| reaction(u, w)),
        delay,
        history,
        horizon: 1.0,
        exact: None,
    })
}

/// Non-vanishing delay `tau(t, u) = 2 / (3 + ||u||^2)` with history
/// `e^t x(1 - x)` on `[-1, 0]`, `T = 1`. The derivative jump at `t = 0`
/// propagates to a breakpoint near `t = 0.665`.
pub fn example3(n: usize) -> Result<ProblemSpec> {
    let op = operator(n)?;
    let profile = Arc::new(parabola(&op));
    let dx = op.dx();
    let delay: Arc<DelayFn> = Arc::new(move |_t: f64, u: &GridFunction| 2.0 / (3.0 + l2_norm_sq(dx, u)));
    let history: Arc<HistoryFn> = Arc::new(move |t: f64| profile.scaled(t.exp()));
    Ok(ProblemSpec {
        name: "example3".into(),
        op,
        rhs: Arc::new(|_t, u, w| reaction(u, w)),
        delay,
        history,
        horizon: 1.0,
        exact: None,
    })
}

/// `f = 0`: the exact solution is `e^{-tA} u_0`.
pub fn decay(n: usize) -> Result<ProblemSpec> {
    let op = operator(n)?;
    let profile = Arc::new(parabola(&op));
    let exact: Arc<HistoryFn> = {
        let op = Arc::clone(&op);
        let profile = Arc::clone(&profile);
        Arc::new(move |t: f64| {
            if t <= 0.0 {
                profile.as_ref().clone()
            } else {
                op.apply_phi(0, t, &profile).expect("matching dimensions")
            }
        })
    };
    let history: Arc<HistoryFn> = Arc::new(move |_t: f64| profile.as_ref().clone());
    Ok(ProblemSpec {
        name: "decay".into(),
        op,
        rhs: Arc::new(|_t, u, _w| GridFunction::zeros(u.len())),
        delay: Arc::new(|_t, _u| 0.5),
        history,
        horizon: 1.0,
        exact: Some(exact),
    })
}

/// Constant lag `tau = tau0` with `f = -w` and history `e^t x(1-x)`; the
/// derivative jump at 0 descends to `tau0, 2 tau0, ...`.
pub fn constant_lag(n: usize, tau0: f64) -> Result<ProblemSpec> {
    if !(tau0 > 0.0) {
        return Err(invalid(format!("constant lag must be positive, got {tau0}")));
    }
    let op = operator(n)?;
    let profile = Arc::new(parabola(&op));
    let history: Arc<HistoryFn> = Arc::new(move |t: f64| profile.scaled(t.exp()));
    Ok(ProblemSpec {
        name: "constant-lag".into(),
        op,
        rhs: Arc::new(|_t, _u, w| w.scaled(-1.0)),
        delay: Arc::new(move |_t, _u| tau0),
        history,
        horizon: 1.0,
        exact: None,
    })
}

/// Built-in problem by name; `constant-lag` uses `tau0 = 0.3`.
pub fn by_name(name: &str, n: usize) -> Result<ProblemSpec> {
    match name {
        "example1" => example1(n),
        "example2" => example2(n),
        "example3" => example3(n),
        "decay" => decay(n),
        "constant-lag" => constant_lag(n, 0.3),
        other => Err(Error::Config(format!(
            "unknown problem `{other}` (expected one of {})",
            BUILTIN_PROBLEMS.join(", ")
        ))),
    }
}
