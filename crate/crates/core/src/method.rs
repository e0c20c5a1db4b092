use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::operator::LagrangeBasis;

#[derive(Clone, Debug, PartialEq)]
pub enum MethodKind {
    Euler,
    Erk2 { c2: f64 },
    Collocation,
}

/// An exponential one-step scheme together with the Lagrange basis that
/// defines its continuous extension.
///
/// Exponential Euler uses the one-node basis `(0)`, so its weight is
/// `theta phi_1(-theta h A)`. The second order method uses `(0, c2)`, whose
/// weights are `theta phi_1 - theta^2/c2 phi_2` and `theta^2/c2 phi_2`.
/// Collocation methods use their own nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Method {
    kind: MethodKind,
    weights: Arc<LagrangeBasis>,
}

impl Method {
    pub fn euler() -> Self {
        Self {
            kind: MethodKind::Euler,
            weights: Arc::new(LagrangeBasis::new(vec![0.0]).expect("valid node")),
        }
    }

    pub fn erk2(c2: f64) -> Result<Self> {
        if !(c2 > 0.0 && c2 <= 1.0) {
            return Err(invalid(format!("erk2 requires c2 in (0, 1], got {c2}")));
        }
        Ok(Self {
            kind: MethodKind::Erk2 { c2 },
            weights: Arc::new(LagrangeBasis::new(vec![0.0, c2])?),
        })
    }

    pub fn collocation(basis: LagrangeBasis) -> Self {
        Self {
            kind: MethodKind::Collocation,
            weights: Arc::new(basis),
        }
    }

    /// Third order collocation method on `(1/3, 2/3, 1)`.
    pub fn col3() -> Self {
        Self::collocation(LagrangeBasis::equidistant3())
    }

    /// Gauss–Lobatto collocation on `(0, 1/2, 1)`, superconvergent of order four.
    pub fn gl4() -> Self {
        Self::collocation(LagrangeBasis::gauss_lobatto3())
    }

    pub fn kind(&self) -> &MethodKind {
        &self.kind
    }

    pub fn weights(&self) -> &Arc<LagrangeBasis> {
        &self.weights
    }

    pub fn stages(&self) -> usize {
        self.weights.stages()
    }

    /// Nominal convergence order: 1, 2, or for collocation `s`, raised to
    /// `s + 1` when the underlying quadrature has order `s + 1`.
    pub fn order(&self) -> usize {
        match self.kind {
            MethodKind::Euler => 1,
            MethodKind::Erk2 { .. } => 2,
            MethodKind::Collocation => {
                let s = self.stages();
                self.weights.quadrature_order().clamp(s, s + 1)
            }
        }
    }

    /// Short name used on the command line and in reports.
    pub fn name(&self) -> String {
        match self.kind {
            MethodKind::Euler => "euler".into(),
            MethodKind::Erk2 { c2: 1.0 } => "erk2".into(),
            MethodKind::Erk2 { c2 } => format!("erk2(c2={c2})"),
            MethodKind::Collocation => {
                if *self.weights == LagrangeBasis::equidistant3() {
                    "col3".into()
                } else if *self.weights == LagrangeBasis::gauss_lobatto3() {
                    "gl4".into()
                } else {
                    let nodes: Vec<String> = self.weights.nodes().iter().map(|c| c.to_string()).collect();
                    format!("col({})", nodes.join(","))
                }
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "euler" => Ok(Self::euler()),
            "erk2" => Self::erk2(1.0),
            "col3" => Ok(Self::col3()),
            "gl4" => Ok(Self::gl4()),
            other => Err(invalid(format!(
                "unknown method `{other}` (expected euler, erk2, col3 or gl4)"
            ))),
        }
    }
}
