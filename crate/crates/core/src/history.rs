//! The piecewise continuous extension `U(t)`.
//!
//! For `t <= 0` the extension is the initial function. Each accepted step
//! contributes one [`Segment`] on `[t_n, t_{n+1}]` which evaluates
//!
//! ```text
//! U(t_n + theta h) = e^{-theta h A} u_n + h sum_i b_i(theta; -hA) G_i
//! ```
//!
//! with the weight functions of the method that produced it.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::method::Method;
use crate::operator::{DiscreteOperator, GridFunction};
use crate::problem::HistoryFn;

/// Dense output of one accepted step.
#[derive(Clone, Debug)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub u_start: GridFunction,
    pub u_end: GridFunction,
    pub method: Method,
    /// `G_i = f(t_ni, U_ni, X_i)` in stage order.
    pub stage_values: Vec<GridFunction>,
    /// Spectral coefficients of the end states as produced by the stepper.
    spectral: Option<(Vec<f64>, Vec<f64>)>,
}

impl Segment {
    pub fn new(
        t_start: f64,
        t_end: f64,
        u_start: GridFunction,
        u_end: GridFunction,
        method: Method,
        stage_values: Vec<GridFunction>,
    ) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(invalid(format!("empty segment [{t_start}, {t_end}]")));
        }
        if stage_values.len() != method.stages() {
            return Err(invalid(format!(
                "{} expects {} stage values, got {}",
                method,
                method.stages(),
                stage_values.len()
            )));
        }
        let n = u_start.len();
        if u_end.len() != n || stage_values.iter().any(|g| g.len() != n) {
            return Err(invalid("segment vectors have inconsistent lengths"));
        }
        Ok(Self {
            t_start,
            t_end,
            u_start,
            u_end,
            method,
            stage_values,
            spectral: None,
        })
    }

    /// Attaches the spectral coefficients of `u_start` and `u_end`. Steps
    /// carry the state in spectral form, so later evaluations start from the
    /// exact coefficients instead of re-transforming the rounded grid values.
    pub(crate) fn with_spectral(mut self, start_hat: Vec<f64>, end_hat: Vec<f64>) -> Self {
        self.spectral = Some((start_hat, end_hat));
        self
    }

    fn start_hat(&self, op: &DiscreteOperator) -> Vec<f64> {
        match &self.spectral {
            Some((start, _)) => start.clone(),
            None => op.to_spectral(self.u_start.as_slice()),
        }
    }

    pub(crate) fn end_hat(&self, op: &DiscreteOperator) -> Vec<f64> {
        match &self.spectral {
            Some((_, end)) => end.clone(),
            None => op.to_spectral(self.u_end.as_slice()),
        }
    }

    pub fn h(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Continuous extension at `t_start + theta h`, `theta` in `[0, 1]`.
    /// The endpoints return the stored knot values exactly.
    pub fn evaluate_theta(&self, op: &DiscreteOperator, theta: f64) -> GridFunction {
        if theta <= 0.0 {
            return self.u_start.clone();
        }
        if theta >= 1.0 {
            return self.u_end.clone();
        }
        let u_hat = self.start_hat(op);
        let stages_hat: Vec<Vec<f64>> = self
            .stage_values
            .iter()
            .map(|g| op.to_spectral(g.as_slice()))
            .collect();
        op.propagate(self.method.weights(), theta, self.h(), &u_hat, &stages_hat)
    }

    /// Recomputes `U(t_end)` from the stage data instead of returning the stored value.
    pub fn recompute_end(&self, op: &DiscreteOperator) -> GridFunction {
        let u_hat = self.start_hat(op);
        let stages_hat: Vec<Vec<f64>> = self
            .stage_values
            .iter()
            .map(|g| op.to_spectral(g.as_slice()))
            .collect();
        op.propagate(self.method.weights(), 1.0, self.h(), &u_hat, &stages_hat)
    }
}

/// Initial function plus contiguous segments covering `[0, coverage_end]`.
///
/// Single writer: appends and truncations take `&mut self`; evaluation only
/// needs `&self`, so readers may share the buffer between appends.
#[derive(Clone)]
pub struct HistoryBuffer {
    initial: Arc<HistoryFn>,
    initial_state: GridFunction,
    segments: Vec<Segment>,
}

impl fmt::Debug for HistoryBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HistoryBuffer")
            .field("segments", &self.segments.len())
            .field("coverage_end", &self.coverage_end())
            .finish()
    }
}

impl HistoryBuffer {
    pub fn new(initial: Arc<HistoryFn>) -> Self {
        let initial_state = initial(0.0);
        Self {
            initial,
            initial_state,
            segments: Vec::new(),
        }
    }

    pub fn coverage_end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// `U(coverage_end)`.
    pub fn end_state(&self) -> &GridFunction {
        self.segments.last().map_or(&self.initial_state, |s| &s.u_end)
    }

    /// Spectral coefficients of [`end_state`](Self::end_state).
    pub fn end_spectral(&self, op: &DiscreteOperator) -> Vec<f64> {
        match self.segments.last() {
            Some(s) => s.end_hat(op),
            None => op.to_spectral(self.initial_state.as_slice()),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn initial(&self) -> &Arc<HistoryFn> {
        &self.initial
    }

    /// Knot times `0 = t_0 < t_1 < ... < coverage_end`.
    pub fn knots(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.segments.iter().map(|s| s.t_end))
            .collect()
    }

    /// `U(t)` for any `t <= coverage_end`. A knot resolves to the segment on
    /// its left, which returns the stored knot value.
    pub fn evaluate(&self, op: &DiscreteOperator, t: f64) -> Result<GridFunction> {
        if t.is_nan() {
            return Err(invalid("history queried at NaN"));
        }
        if t <= 0.0 {
            return Ok((self.initial)(t));
        }
        let end = self.coverage_end();
        if t > end {
            return Err(Error::OutOfCoverage { t, coverage_end: end });
        }
        let idx = self.segments.partition_point(|s| s.t_end < t);
        let seg = &self.segments[idx];
        if t == seg.t_end {
            return Ok(seg.u_end.clone());
        }
        let theta = ((t - seg.t_start) / seg.h()).clamp(0.0, 1.0);
        Ok(seg.evaluate_theta(op, theta))
    }

    pub fn append(&mut self, seg: Segment) -> Result<()> {
        let end = self.coverage_end();
        if seg.t_start != end {
            return Err(invalid(format!(
                "segment starts at {} but coverage ends at {end}",
                seg.t_start
            )));
        }
        if seg.u_start.len() != self.initial_state.len() {
            return Err(invalid("segment dimension does not match the history"));
        }
        debug_assert!(
            seg.u_start
                .iter()
                .zip(self.end_state().iter())
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())),
            "knot continuity violated at t = {end}"
        );
        self.segments.push(seg);
        Ok(())
    }

    /// Drops every segment starting at or after the knot `t`.
    pub fn truncate_after(&mut self, t: f64) -> Result<()> {
        if t == 0.0 {
            self.segments.clear();
            return Ok(());
        }
        match self.segments.iter().position(|s| s.t_end == t) {
            Some(idx) => {
                self.segments.truncate(idx + 1);
                Ok(())
            }
            None => Err(invalid(format!("{t} is not a knot of the history"))),
        }
    }

    /// Removes and returns the most recent segment.
    pub fn pop(&mut self) -> Option<Segment> {
        self.segments.pop()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{make_operator, phi};
    use approx::assert_relative_eq;

    fn scalar_history() -> Arc<HistoryFn> {
        Arc::new(|_t: f64| GridFunction::new(vec![1.0]).unwrap())
    }

    /// Scalar euler segment with constant forcing `c`.
    fn euler_segment(op: &DiscreteOperator, t0: f64, h: f64, u0: f64, c: f64) -> Segment {
        let lambda = op.eigenvalues()[0];
        let u1 = (-h * lambda).exp() * u0 + h * phi(1, -h * lambda) * c;
        Segment::new(
            t0,
            t0 + h,
            GridFunction::new(vec![u0]).unwrap(),
            GridFunction::new(vec![u1]).unwrap(),
            Method::euler(),
            vec![GridFunction::new(vec![c]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn euler_dense_output_closed_form() {
        let op = make_operator(1, 1.0).unwrap();
        let lambda = op.eigenvalues()[0];
        let (h, c) = (0.1, 3.0);
        let seg = euler_segment(&op, 0.0, h, 1.0, c);
        let got = seg.evaluate_theta(&op, 0.5)[0];
        let expect = (-0.5 * h * lambda).exp() + 0.5 * h * phi(1, -0.5 * h * lambda) * c;
        assert_relative_eq!(got, expect, max_relative = 1e-14);

        // quadrature of e^{-(t - s) lambda} c over [0, t]
        let t = 0.5 * h;
        let m = 2000;
        let ds = t / m as f64;
        let integral: f64 = (0..=m)
            .map(|j| {
                let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                w * (-(t - j as f64 * ds) * lambda).exp() * c
            })
            .sum::<f64>()
            * ds
            / 3.0;
        assert_relative_eq!(got, (-t * lambda).exp() + integral, max_relative = 1e-10);
    }

    #[test]
    fn append_and_truncate() {
        let op = make_operator(1, 1.0).unwrap();
        let mut buf = HistoryBuffer::new(scalar_history());
        assert_eq!(buf.coverage_end(), 0.0);
        let h = 0.25;
        buf.append(euler_segment(&op, 0.0, h, 1.0, 0.0)).unwrap();
        assert_eq!(buf.coverage_end(), h);

        let gap = euler_segment(&op, 2.0 * h, h, buf.end_state()[0], 0.0);
        assert!(buf.append(gap).is_err());

        for k in 1..3 {
            let seg = euler_segment(&op, k as f64 * h, h, buf.end_state()[0], 0.0);
            buf.append(seg).unwrap();
        }
        assert_eq!(buf.coverage_end(), 3.0 * h);

        buf.truncate_after(3.0 * h).unwrap();
        assert_eq!(buf.segments().len(), 3);
        buf.truncate_after(h).unwrap();
        assert_eq!(buf.coverage_end(), h);
        assert!(buf.truncate_after(0.3).is_err());
        buf.truncate_after(0.0).unwrap();
        assert!(buf.segments().is_empty());
    }

    #[test]
    fn evaluate_knots_and_coverage() {
        let op = make_operator(1, 1.0).unwrap();
        let mut buf = HistoryBuffer::new(scalar_history());
        let h = 0.1;
        for k in 0..4 {
            let seg = euler_segment(&op, k as f64 * h, h, buf.end_state()[0], 2.0);
            buf.append(seg).unwrap();
        }
        for seg in buf.segments() {
            assert_eq!(buf.evaluate(&op, seg.t_start).unwrap(), seg.u_start);
            assert_eq!(buf.evaluate(&op, seg.t_end).unwrap(), seg.u_end);
        }
        assert_eq!(buf.evaluate(&op, -3.0).unwrap()[0], 1.0);
        let end = buf.coverage_end();
        assert!(matches!(
            buf.evaluate(&op, end + 1e-9),
            Err(Error::OutOfCoverage { .. })
        ));
    }

    #[test]
    fn segment_validation() {
        let g = GridFunction::new(vec![1.0]).unwrap();
        assert!(Segment::new(0.0, 0.0, g.clone(), g.clone(), Method::euler(), vec![g.clone()]).is_err());
        assert!(Segment::new(0.0, 0.1, g.clone(), g.clone(), Method::gl4(), vec![g.clone()]).is_err());
    }
}
