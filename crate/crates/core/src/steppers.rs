//! One-step schemes and fixed-mesh integration.
//!
//! Every step starts from the end of a [`HistoryBuffer`]. Delayed arguments
//! at or before `t_n` are read from the buffer; arguments inside the current
//! step (overlapping) are resolved by iterating the step's own continuous
//! extension.

use crate::breakpoints::BreakpointSet;
use crate::error::{invalid, Error, Result};
use crate::history::{HistoryBuffer, Segment};
use crate::method::{Method, MethodKind};
use crate::operator::{GridFunction, LagrangeBasis};
use crate::problem::{l2_norm, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IterationMode {
    /// Exactly `m` corrections ("predictor-corrector^m").
    FixedCorrections(usize),
    /// Correct until two successive iterates differ by at most `tol`.
    ToTolerance,
}

/// Control of the correction loops. Tolerances are in the discrete L2 norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationPolicy {
    pub mode: IterationMode,
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed-point solve of the overlapping delayed values.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for IterationPolicy {
    fn default() -> Self {
        Self {
            mode: IterationMode::ToTolerance,
            tol: 1e-12,
            max_iter: 25,
            inner_tol: 1e-12,
            inner_max_iter: 50,
        }
    }
}

impl IterationPolicy {
    pub fn fixed(m: usize) -> Self {
        Self {
            mode: IterationMode::FixedCorrections(m),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.inner_max_iter == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        if self.mode == IterationMode::ToTolerance && !(self.tol > 0.0) {
            return Err(invalid("to_tolerance mode needs a positive tolerance"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(invalid("inner tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub overlap_occurred: bool,
    /// Outer corrections performed.
    pub corrections: usize,
    /// Inner fixed-point sweeps spent on overlapping delayed values.
    pub stage_iterations: usize,
    pub converged: bool,
    /// Size of the last correction increment.
    pub last_increment: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub u_next: GridFunction,
    pub segment: Segment,
    /// Internal stages `U_ni` the stage values were evaluated at.
    pub stage_states: Vec<GridFunction>,
    pub diagnostics: StepDiagnostics,
}

/// Result of a run over `[0, T]`.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub problem: String,
    pub method: Method,
    /// Knots `0 = t_0 < ... < t_N = T`.
    pub mesh: Vec<f64>,
    pub history: HistoryBuffer,
    pub steps: Vec<StepDiagnostics>,
    pub breakpoints: Option<BreakpointSet>,
}

impl SolveResult {
    pub fn final_state(&self) -> &GridFunction {
        self.history.end_state()
    }

    /// `(t_k, u_k)` at every knot.
    pub fn snapshots(&self) -> Vec<(f64, &GridFunction)> {
        let segs = self.history.segments();
        let mut out = Vec::with_capacity(segs.len() + 1);
        match segs.first() {
            Some(first) => out.push((first.t_start, &first.u_start)),
            None => out.push((0.0, self.history.end_state())),
        }
        out.extend(segs.iter().map(|s| (s.t_end, &s.u_end)));
        out
    }

    pub fn overlap_steps(&self) -> usize {
        self.steps.iter().filter(|d| d.overlap_occurred).count()
    }

    pub fn total_corrections(&self) -> usize {
        self.steps.iter().map(|d| d.corrections).sum()
    }

    pub fn total_stage_iterations(&self) -> usize {
        self.steps.iter().map(|d| d.stage_iterations).sum()
    }
}

/// Step sizes of a constant-step mesh on `[0, horizon]`.
pub fn uniform_mesh(horizon: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && horizon > 0.0) {
        return Err(invalid("step size and horizon must be positive"));
    }
    let steps = (horizon / h).round();
    if steps < 1.0 || (steps * h - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(invalid(format!("h = {h} does not divide the horizon {horizon}")));
    }
    Ok(vec![h; steps as usize])
}

fn norm(p: &ProblemSpec, u: &GridFunction) -> f64 {
    l2_norm(&p.op, u)
}

fn distance(p: &ProblemSpec, a: &GridFunction, b: &GridFunction) -> f64 {
    norm(p, &a.difference(b))
}

fn eval_rhs(p: &ProblemSpec, t: f64, u: &GridFunction, w: &GridFunction) -> Result<GridFunction> {
    let g = (p.rhs)(t, u, w);
    if g.len() != p.n() {
        return Err(invalid(format!(
            "right-hand side returned {} values, expected {}",
            g.len(),
            p.n()
        )));
    }
    if !g.is_finite() {
        return Err(invalid(format!("right-hand side is not finite at t = {t}")));
    }
    Ok(g)
}

fn check_step(p: &ProblemSpec, buf: &HistoryBuffer, t_n: f64, h: f64) -> Result<()> {
    if t_n != buf.coverage_end() {
        return Err(invalid(format!(
            "step starts at {t_n} but the history ends at {}",
            buf.coverage_end()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("step size {h} must be positive")));
    }
    if t_n + h > p.horizon * (1.0 + 1e-12) + 1e-12 {
        return Err(invalid(format!("step to {} passes the horizon {}", t_n + h, p.horizon)));
    }
    Ok(())
}

/// Returns `(alpha, theta)` where `theta` is `None` when `alpha <= t_n`.
fn locate_argument(p: &ProblemSpec, t_stage: f64, u: &GridFunction, t_n: f64, h: f64) -> Result<(f64, Option<f64>)> {
    let alpha = t_stage - p.checked_delay(t_stage, u)?;
    if alpha <= t_n {
        return Ok((alpha, None));
    }
    debug_assert!(alpha <= t_n + h * (1.0 + 1e-12), "deviated argument beyond the step");
    Ok((alpha, Some(((alpha - t_n) / h).clamp(0.0, 1.0))))
}

/// Exponential Euler: `u_{n+1} = e^{-hA} u_n + h phi_1(-hA) f(t_n, u_n, U(t_n - tau))`.
pub fn euler_step(p: &ProblemSpec, buf: &HistoryBuffer, t_n: f64, h: f64) -> Result<StepOutcome> {
    step(p, buf, &Method::euler(), t_n, h, &IterationPolicy::default())
}

/// Second order method with overlap correction in predictor-corrector mode.
pub fn erk2_step(
    p: &ProblemSpec,
    buf: &HistoryBuffer,
    t_n: f64,
    h: f64,
    c2: f64,
    policy: &IterationPolicy,
) -> Result<StepOutcome> {
    step(p, buf, &Method::erk2(c2)?, t_n, h, policy)
}

/// Collocation method in predictor-(evaluation-corrector) mode.
pub fn collocation_step(
    p: &ProblemSpec,
    buf: &HistoryBuffer,
    t_n: f64,
    h: f64,
    basis: &LagrangeBasis,
    policy: &IterationPolicy,
) -> Result<StepOutcome> {
    step(p, buf, &Method::collocation(basis.clone()), t_n, h, policy)
}

/// One step of `method` from the end of `buf`.
pub fn step(
    p: &ProblemSpec,
    buf: &HistoryBuffer,
    method: &Method,
    t_n: f64,
    h: f64,
    policy: &IterationPolicy,
) -> Result<StepOutcome> {
    check_step(p, buf, t_n, h)?;
    policy.validate()?;
    match method.kind() {
        MethodKind::Euler => euler(p, buf, method, t_n, h),
        MethodKind::Erk2 { c2 } => erk2(p, buf, method, *c2, t_n, h, policy),
        MethodKind::Collocation => collocation(p, buf, method, t_n, h, policy),
    }
}

struct StepData {
    u_n: GridFunction,
    u_hat: Vec<f64>,
    stage_states: Vec<GridFunction>,
    stages: Vec<GridFunction>,
    stages_hat: Vec<Vec<f64>>,
    diagnostics: StepDiagnostics,
}

fn finish(p: &ProblemSpec, method: &Method, t_n: f64, h: f64, d: StepData) -> Result<StepOutcome> {
    let u_next_hat = p.op.propagate_hat(method.weights(), 1.0, h, &d.u_hat, &d.stages_hat);
    let u_next = p.op.from_spectral(&u_next_hat);
    let segment = Segment::new(t_n, t_n + h, d.u_n, u_next.clone(), method.clone(), d.stages)?
        .with_spectral(d.u_hat, u_next_hat);
    Ok(StepOutcome {
        u_next,
        segment,
        stage_states: d.stage_states,
        diagnostics: d.diagnostics,
    })
}

fn euler(p: &ProblemSpec, buf: &HistoryBuffer, method: &Method, t_n: f64, h: f64) -> Result<StepOutcome> {
    let op = &p.op;
    let u_n = buf.end_state().clone();
    let alpha = t_n - p.checked_delay(t_n, &u_n)?;
    let delayed = buf.evaluate(op, alpha)?;
    let g = eval_rhs(p, t_n, &u_n, &delayed)?;
    let u_hat = buf.end_spectral(op);
    let g_hat = vec![op.to_spectral(g.as_slice())];
    let diagnostics = StepDiagnostics {
        converged: true,
        ..Default::default()
    };
    let data = StepData {
        stage_states: vec![u_n.clone()],
        u_n,
        u_hat,
        stages: vec![g],
        stages_hat: g_hat,
        diagnostics,
    };
    finish(p, method, t_n, h, data)
}

fn erk2(
    p: &ProblemSpec,
    buf: &HistoryBuffer,
    method: &Method,
    c2: f64,
    t_n: f64,
    h: f64,
    policy: &IterationPolicy,
) -> Result<StepOutcome> {
    let op = &p.op;
    let u_n = buf.end_state().clone();
    let u_hat = buf.end_spectral(op);

    // Step 1: predictor
    let alpha1 = t_n - p.checked_delay(t_n, &u_n)?;
    let g1 = eval_rhs(p, t_n, &u_n, &buf.evaluate(op, alpha1)?)?;
    let g1_hat = op.to_spectral(g1.as_slice());

    let c2h = c2 * h;
    // U_n2 = e^{-c2 h A} u_n + c2 h phi_1(-c2 h A) G_n1, an Euler step of length c2 h
    let euler = Method::euler();
    let u2 = op.propagate(euler.weights(), c2, h, &u_hat, std::slice::from_ref(&g1_hat));
    let t2 = t_n + c2h;

    let mut diagnostics = StepDiagnostics {
        converged: true,
        ..Default::default()
    };
    let (alpha2, theta2) = locate_argument(p, t2, &u2, t_n, h)?;
    let g2 = match theta2 {
        None => eval_rhs(p, t2, &u2, &buf.evaluate(op, alpha2)?)?,
        Some(theta2) => {
            // Step 2: U_n2 stays frozen; only the delayed value is corrected.
            diagnostics.overlap_occurred = true;
            let mut g2 = eval_rhs(p, t2, &u2, &u_n)?;
            let mut previous = u_n.clone();
            let limit = match policy.mode {
                IterationMode::FixedCorrections(m) => m,
                IterationMode::ToTolerance => policy.max_iter,
            };
            diagnostics.converged = limit == 0;
            for r in 1..=limit {
                let stages_hat = [g1_hat.clone(), op.to_spectral(g2.as_slice())];
                let delayed = op.propagate(method.weights(), theta2, h, &u_hat, &stages_hat);
                g2 = eval_rhs(p, t2, &u2, &delayed)?;
                let increment = distance(p, &delayed, &previous);
                previous = delayed;
                diagnostics.corrections = r;
                diagnostics.last_increment = increment;
                if increment <= policy.tol {
                    diagnostics.converged = true;
                    if policy.mode == IterationMode::ToTolerance {
                        break;
                    }
                }
            }
            if policy.mode == IterationMode::ToTolerance && !diagnostics.converged {
                return Err(Error::StageIterationDivergence {
                    t: t_n,
                    max_iter: policy.max_iter,
                    residual: diagnostics.last_increment,
                });
            }
            g2
        }
    };

    // Step 3: continuous extension and u_{n+1}
    let stages_hat = vec![g1_hat, op.to_spectral(g2.as_slice())];
    let data = StepData {
        stage_states: vec![u_n.clone(), u2],
        u_n,
        u_hat,
        stages: vec![g1, g2],
        stages_hat,
        diagnostics,
    };
    finish(p, method, t_n, h, data)
}

fn collocation(
    p: &ProblemSpec,
    buf: &HistoryBuffer,
    method: &Method,
    t_n: f64,
    h: f64,
    policy: &IterationPolicy,
) -> Result<StepOutcome> {
    let op = &p.op;
    let basis = method.weights();
    let s = basis.stages();
    let nodes = basis.nodes();
    let stage_times: Vec<f64> = nodes.iter().map(|c| t_n + c * h).collect();

    let u_n = buf.end_state().clone();
    let u_hat = buf.end_spectral(op);

    let limit = match policy.mode {
        IterationMode::FixedCorrections(0) => {
            return Err(invalid("collocation steps need at least one correction"))
        }
        IterationMode::FixedCorrections(m) => m,
        IterationMode::ToTolerance => policy.max_iter,
    };

    // Step 1: predictor
    let mut stages: Vec<GridFunction> = vec![u_n.clone(); s];
    let mut delayed: Vec<GridFunction> = vec![u_n.clone(); s];
    let mut in_step = vec![false; s];
    let mut diagnostics = StepDiagnostics::default();

    // Step 2: evaluation-correction sweeps
    for r in 1..=limit {
        let mut overlap: Vec<(usize, f64)> = Vec::new();
        for i in 0..s {
            let (alpha, theta) = locate_argument(p, stage_times[i], &stages[i], t_n, h)?;
            match theta {
                None => {
                    delayed[i] = buf.evaluate(op, alpha)?;
                    in_step[i] = false;
                }
                Some(theta) => {
                    // warm start from the previous sweep when the stage overlapped then too
                    if !in_step[i] {
                        delayed[i] = u_n.clone();
                    }
                    in_step[i] = true;
                    overlap.push((i, theta));
                }
            }
        }

        let mut forcing: Vec<GridFunction> = (0..s)
            .map(|j| eval_rhs(p, stage_times[j], &stages[j], &delayed[j]))
            .collect::<Result<_>>()?;
        let mut forcing_hat: Vec<Vec<f64>> = forcing.iter().map(|g| op.to_spectral(g.as_slice())).collect();

        if !overlap.is_empty() {
            diagnostics.overlap_occurred = true;
            let mut solved = false;
            let mut increment = f64::INFINITY;
            for _ in 0..policy.inner_max_iter {
                increment = 0.0;
                for &(i, theta) in &overlap {
                    let x = op.propagate(basis, theta, h, &u_hat, &forcing_hat);
                    increment = increment.max(distance(p, &x, &delayed[i]));
                    delayed[i] = x;
                }
                for &(j, _) in &overlap {
                    forcing[j] = eval_rhs(p, stage_times[j], &stages[j], &delayed[j])?;
                    forcing_hat[j] = op.to_spectral(forcing[j].as_slice());
                }
                diagnostics.stage_iterations += 1;
                if increment <= policy.inner_tol {
                    solved = true;
                    break;
                }
            }
            if !solved {
                return Err(Error::StageIterationDivergence {
                    t: t_n,
                    max_iter: policy.inner_max_iter,
                    residual: increment,
                });
            }
        }

        // correction U_ni = e^{-c_i h A} u_n + h sum_j b_j(c_i) f(t_nj, U_nj, X_j)
        let mut increment: f64 = 0.0;
        for i in 0..s {
            let next = if nodes[i] == 0.0 {
                u_n.clone()
            } else {
                op.propagate(basis, nodes[i], h, &u_hat, &forcing_hat)
            };
            increment = increment.max(distance(p, &next, &stages[i]));
            stages[i] = next;
        }
        diagnostics.corrections = r;
        diagnostics.last_increment = increment;
        if increment <= policy.tol {
            diagnostics.converged = true;
            if policy.mode == IterationMode::ToTolerance {
                break;
            }
        }
    }
    if policy.mode == IterationMode::ToTolerance && !diagnostics.converged {
        return Err(Error::StageIterationDivergence {
            t: t_n,
            max_iter: policy.max_iter,
            residual: diagnostics.last_increment,
        });
    }

    // Step 3: stage values from the final stages and the last delayed values
    let stage_values: Vec<GridFunction> = (0..s)
        .map(|i| eval_rhs(p, stage_times[i], &stages[i], &delayed[i]))
        .collect::<Result<_>>()?;
    let stages_hat: Vec<Vec<f64>> = stage_values.iter().map(|g| op.to_spectral(g.as_slice())).collect();
    let data = StepData {
        u_n,
        u_hat,
        stage_states: stages,
        stages: stage_values,
        stages_hat,
        diagnostics,
    };
    finish(p, method, t_n, h, data)
}

/// Runs `method` over the mesh given by its step sizes, which must sum to the horizon.
pub fn integrate(
    p: &ProblemSpec,
    method: &Method,
    mesh: &[f64],
    policy: &IterationPolicy,
) -> Result<SolveResult> {
    if mesh.is_empty() {
        return Err(invalid("empty mesh"));
    }
    let total: f64 = mesh.iter().sum();
    if (total - p.horizon).abs() > 1e-12 * p.horizon.max(1.0) {
        return Err(invalid(format!(
            "mesh steps sum to {total}, horizon is {}",
            p.horizon
        )));
    }
    let mut knots = Vec::with_capacity(mesh.len() + 1);
    knots.push(0.0);
    let mut acc = 0.0;
    for &h in mesh {
        if !(h > 0.0) {
            return Err(invalid(format!("nonpositive step {h} in mesh")));
        }
        acc += h;
        knots.push(acc);
    }
    *knots.last_mut().expect("nonempty") = p.horizon;

    let mut buf = HistoryBuffer::new(p.history.clone());
    let mut steps = Vec::with_capacity(mesh.len());
    for w in knots.windows(2) {
        let outcome = step(p, &buf, method, w[0], w[1] - w[0], policy)?;
        steps.push(outcome.diagnostics);
        buf.append(outcome.segment)?;
    }
    Ok(SolveResult {
        problem: p.name.clone(),
        method: method.clone(),
        mesh: knots,
        history: buf,
        steps,
        breakpoints: None,
    })
}
