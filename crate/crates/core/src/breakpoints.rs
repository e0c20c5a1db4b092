//! Breakpoint tracking with the switching function `t - tau(t, Y(t)) - xi_i`.
//!
//! The jump in `u'` at `t = 0` propagates to every `xi_j` solving
//! `xi_j - tau(xi_j, u(xi_j)) = xi_i` for an earlier breakpoint `xi_i`.
//! A tracked run takes trial steps on the default grid, watches the deviated
//! argument `alpha(t) = t - tau(t, u(t))` for sign changes against the known
//! breakpoints, and splits any step that contains a new one.

use crate::error::{invalid, Error, Result};
use crate::history::HistoryBuffer;
use crate::method::Method;
use crate::problem::ProblemSpec;
use crate::steppers::{step, uniform_mesh, IterationPolicy, SolveResult, StepDiagnostics, StepOutcome};

/// Ordered breakpoints `0 = xi_0 < xi_1 < ...` with ancestry.
#[derive(Clone, Debug, PartialEq)]
pub struct BreakpointSet {
    points: Vec<f64>,
    parents: Vec<Option<usize>>,
    generations: Vec<usize>,
    max_generation: Option<usize>,
    /// Localizations that had to bisect the raw switch function.
    pub fallbacks: usize,
}

impl BreakpointSet {
    /// Only breakpoints of generation below `max_generation` spawn descendants.
    pub fn new(max_generation: Option<usize>) -> Self {
        Self {
            points: vec![0.0],
            parents: vec![None],
            generations: vec![0],
            max_generation,
            fallbacks: 0,
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn generation(&self, i: usize) -> usize {
        self.generations[i]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Breakpoints other than `xi_0`.
    pub fn detected(&self) -> &[f64] {
        &self.points[1..]
    }

    pub fn can_spawn(&self, i: usize) -> bool {
        self.max_generation.is_none_or(|g| self.generations[i] < g)
    }

    /// Appends `t` as a descendant of `parent`. Points must arrive in increasing order.
    pub fn insert(&mut self, t: f64, parent: usize) -> Result<usize> {
        let last = *self.points.last().expect("xi_0 is always present");
        if !(t > last) {
            return Err(invalid(format!("breakpoint {t} does not follow {last}")));
        }
        if parent >= self.points.len() {
            return Err(invalid(format!("unknown parent index {parent}")));
        }
        self.points.push(t);
        self.parents.push(Some(parent));
        self.generations.push(self.generations[parent] + 1);
        Ok(self.points.len() - 1)
    }
}

/// Smallest `i` whose switch values `alpha_n - xi_i` and `alpha_n1 - xi_i`
/// have strictly opposite signs. An exact zero is not a crossing.
pub fn detect_crossing(bp: &BreakpointSet, alpha_n: f64, alpha_n1: f64) -> Option<usize> {
    bp.points
        .iter()
        .enumerate()
        .filter(|&(i, _)| bp.can_spawn(i))
        .find(|&(_, &xi)| (alpha_n - xi) * (alpha_n1 - xi) < 0.0)
        .map(|(i, _)| i)
}

/// Bisection tolerance on a bracket starting at `t`.
pub fn locate_tolerance(t: f64) -> f64 {
    1e-12 * t.abs().max(1.0)
}

fn bisect(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let tol = locate_tolerance(lo);
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if !(f_lo * f_hi < 0.0) {
        return Err(Error::LocalizationFailure { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of the Newton-form interpolant through `samples` inside `bracket`.
pub fn locate(samples: &[(f64, f64)], bracket: (f64, f64)) -> Result<f64> {
    if samples.len() < 2 {
        return Err(invalid("locating a root needs at least two samples"));
    }
    let (lo, hi) = bracket;
    if !(lo < hi) {
        return Err(invalid(format!("empty bracket ({lo}, {hi})")));
    }
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mut coef: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let m = ts.len();
    for j in 1..m {
        for k in (j..m).rev() {
            let dt = ts[k] - ts[k - j];
            if dt == 0.0 {
                return Err(invalid("interpolation samples must have distinct times"));
            }
            coef[k] = (coef[k] - coef[k - 1]) / dt;
        }
    }
    let q = |t: f64| -> Result<f64> {
        let mut acc = coef[m - 1];
        for k in (0..m - 1).rev() {
            acc = acc * (t - ts[k]) + coef[k];
        }
        Ok(acc)
    };
    bisect(lo, hi, q)
}

/// Options for [`integrate_tracked`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrackingOptions {
    /// Interpolation points used to locate a root; defaults to the method order.
    pub samples: Option<usize>,
    /// Generation cap on spawning parents; defaults to the method order.
    pub max_generation: Option<usize>,
}

struct Tracker<'a> {
    p: &'a ProblemSpec,
    method: &'a Method,
    policy: &'a IterationPolicy,
    buf: HistoryBuffer,
    alphas: Vec<f64>,
    steps: Vec<StepDiagnostics>,
}

impl Tracker<'_> {
    fn trial(&self, t: f64, t_next: f64) -> Result<StepOutcome> {
        step(self.p, &self.buf, self.method, t, t_next - t, self.policy)
    }

    fn alpha_after(&self, t_next: f64, out: &StepOutcome) -> Result<f64> {
        Ok(t_next - self.p.checked_delay(t_next, &out.u_next)?)
    }

    fn accept(&mut self, out: StepOutcome, alpha: f64) -> Result<()> {
        self.steps.push(out.diagnostics);
        self.alphas.push(alpha);
        self.buf.append(out.segment)
    }

    /// `(t_k, alpha_k - xi)` for the last `count - 1` knots plus the trial point.
    fn samples(&self, count: usize, xi: f64, trial: (f64, f64)) -> Vec<(f64, f64)> {
        let knots = self.buf.knots();
        let take = count.saturating_sub(1).max(1).min(knots.len());
        let start = knots.len() - take;
        knots[start..]
            .iter()
            .zip(&self.alphas[start..])
            .map(|(&t, &a)| (t, a - xi))
            .chain(std::iter::once((trial.0, trial.1 - xi)))
            .collect()
    }
}

/// Integrates on the default grid `k h` and inserts every detected breakpoint as a knot.
///
/// The root of the interpolated switch function starts an Illinois
/// iteration on `xi -> xi - tau(xi, u(xi)) - xi_i`, where `u(xi)` is the
/// result of stepping from `t_n` straight to `xi`, so breakpoints satisfy
/// their defining relation on the final solution.
pub fn integrate_tracked(
    p: &ProblemSpec,
    method: &Method,
    default_h: f64,
    policy: &IterationPolicy,
    opts: &TrackingOptions,
) -> Result<SolveResult> {
    let order = method.order();
    if order < 2 {
        return Err(invalid(format!(
            "breakpoint tracking needs a method of order at least two, {method} has order {order}"
        )));
    }
    let sample_count = opts.samples.unwrap_or(order).max(2);
    let grid_steps = uniform_mesh(p.horizon, default_h)?.len();
    let grid = |k: usize| if k == grid_steps { p.horizon } else { k as f64 * default_h };

    let mut bp = BreakpointSet::new(Some(opts.max_generation.unwrap_or(order)));
    let alpha0 = -p.checked_delay(0.0, &p.initial_value())?;
    let mut tr = Tracker {
        p,
        method,
        policy,
        buf: HistoryBuffer::new(p.history.clone()),
        alphas: vec![alpha0],
        steps: Vec::with_capacity(grid_steps),
    };

    let mut k = 1;
    while k <= grid_steps {
        let t = tr.buf.coverage_end();
        let t_next = grid(k);
        let alpha_n = *tr.alphas.last().expect("alpha at t_0");
        let out = tr.trial(t, t_next)?;
        let alpha_n1 = tr.alpha_after(t_next, &out)?;

        let Some(i) = detect_crossing(&bp, alpha_n, alpha_n1) else {
            let landed = bp
                .points
                .iter()
                .enumerate()
                .find(|&(i, &xi)| bp.can_spawn(i) && alpha_n1 == xi && alpha_n != xi)
                .map(|(i, _)| i);
            tr.accept(out, alpha_n1)?;
            if let Some(i) = landed {
                bp.insert(t_next, i)?;
            }
            k += 1;
            continue;
        };
        let xi = bp.points[i];

        let samples = tr.samples(sample_count, xi, (t_next, alpha_n1));
        let guess = match locate(&samples, (t, t_next)) {
            Ok(root) => root,
            Err(Error::LocalizationFailure { .. }) => {
                bp.fallbacks += 1;
                let seg = &out.segment;
                bisect(t, t_next, |s| {
                    let theta = (s - t) / seg.h();
                    let y = seg.evaluate_theta(&p.op, theta);
                    Ok(s - p.checked_delay(s, &y)? - xi)
                })?
            }
            Err(e) => return Err(e),
        };

        let (root, split) = refine(&tr, t, alpha_n - xi, (t_next, alpha_n1 - xi, out), guess, xi)?;
        match split {
            Split::Step(out) => {
                tr.accept(out, xi)?;
                bp.insert(root, i)?;
            }
            Split::AtStart => {
                // the breakpoint coincides with the current knot
                *tr.alphas.last_mut().expect("alpha at t_n") = xi;
                if t > *bp.points.last().expect("xi_0") {
                    bp.insert(t, i)?;
                } else {
                    return Err(Error::LocalizationFailure { lo: t, hi: t_next });
                }
            }
            Split::AtEnd(out) => {
                tr.accept(out, xi)?;
                bp.insert(t_next, i)?;
                k += 1;
            }
        }
    }

    let mesh = tr.buf.knots();
    Ok(SolveResult {
        problem: p.name.clone(),
        method: method.clone(),
        mesh,
        history: tr.buf,
        steps: tr.steps,
        breakpoints: Some(bp),
    })
}

enum Split {
    AtStart,
    Step(StepOutcome),
    AtEnd(StepOutcome),
}

/// Illinois iteration for the step length that puts the knot on the breakpoint.
fn refine(
    tr: &Tracker<'_>,
    t: f64,
    f_lo: f64,
    trial: (f64, f64, StepOutcome),
    guess: f64,
    xi: f64,
) -> Result<(f64, Split)> {
    let (t_hi, f_hi, trial_out) = trial;
    let tol = locate_tolerance(t);
    let (mut a, mut fa) = (t, f_lo);
    let (mut b, mut fb) = (t_hi, f_hi);
    let mut best: Option<(f64, f64, StepOutcome)> = None;
    let mut x = guess.clamp(t, t_hi);
    let mut side = 0i8;
    for _ in 0..60 {
        if x - t <= tol {
            return Ok((t, Split::AtStart));
        }
        if t_hi - x <= tol {
            return Ok((t_hi, Split::AtEnd(trial_out)));
        }
        let out = tr.trial(t, x)?;
        let fx = tr.alpha_after(x, &out)? - xi;
        let done = fx.abs() <= 0.1 * tol || b - a <= tol;
        let better = best.as_ref().is_none_or(|(_, f, _)| fx.abs() < f.abs());
        if better {
            best = Some((x, fx, out));
        }
        if done {
            break;
        }
        if (fx < 0.0) == (fa < 0.0) {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        x = if fb != fa { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
    }
    let (root, _, out) = best.ok_or(Error::LocalizationFailure { lo: t, hi: t_hi })?;
    Ok((root, Split::Step(out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_examples() {
        let bp = BreakpointSet::new(None);
        assert_eq!(detect_crossing(&bp, -0.01, 0.02), Some(0));
        assert_eq!(detect_crossing(&bp, 0.01, 0.02), None);
        assert_eq!(detect_crossing(&bp, -0.01, 0.0), None);
        let mut bp = BreakpointSet::new(Some(1));
        bp.insert(0.3, 0).unwrap();
        assert_eq!(detect_crossing(&bp, 0.2, 0.4), None);
        let mut bp = BreakpointSet::new(None);
        bp.insert(0.3, 0).unwrap();
        assert_eq!(detect_crossing(&bp, 0.2, 0.4), Some(1));
        assert!(bp.insert(0.1, 0).is_err());
    }

    #[test]
    fn locate_examples() {
        let root = locate(&[(0.0, -1.0), (1.0, 1.0)], (0.0, 1.0)).unwrap();
        assert!((root - 0.5).abs() <= 1e-12);
        let q = |t: f64| t * t * t - t;
        let samples: Vec<(f64, f64)> = [0.5, 0.8, 1.2, 1.5].iter().map(|&t| (t, q(t))).collect();
        let root = locate(&samples, (0.5, 1.5)).unwrap();
        assert!((root - 1.0).abs() <= 1e-12);
        assert!(matches!(
            locate(&[(0.0, 1.0), (1.0, 2.0)], (0.0, 1.0)),
            Err(Error::LocalizationFailure { .. })
        ));
        assert!(locate(&[(0.0, 1.0)], (0.0, 1.0)).is_err());
    }

    #[test]
    fn tracking_requires_order_two() {
        let p = crate::problem::constant_lag(16, 0.3).unwrap();
        let err = integrate_tracked(&p, &Method::euler(), 0.125, &IterationPolicy::default(), &TrackingOptions::default());
        assert!(err.is_err());
    }
}
