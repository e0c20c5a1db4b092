//! Convergence studies, reference solutions and CSV reports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::breakpoints::{integrate_tracked, TrackingOptions};
use crate::dump::{load_terminal_state, save_snapshot};
use crate::error::{Error, Result};
use crate::method::Method;
use crate::operator::GridFunction;
use crate::problem::{by_name, l2_norm, ProblemSpec};
use crate::steppers::{integrate, uniform_mesh, IterationPolicy, SolveResult};

pub const CSV_HEADER: &str = "problem,method,n,h,error_l2,rate,breakpoints,overlaps,wall_ms";

/// Environment variable capping the worker threads of a study.
pub const THREADS_ENV: &str = "DELAY_ERK_THREADS";

/// Parses `2^-k`, `2^k` or a plain decimal step size.
pub fn parse_step(s: &str) -> Result<f64> {
    let s = s.trim();
    let value = match s.strip_prefix("2^") {
        Some(exp) => {
            let exp: i32 = exp
                .parse()
                .map_err(|_| Error::Config(format!("bad step exponent in `{s}`")))?;
            2f64.powi(exp)
        }
        None => s
            .parse()
            .map_err(|_| Error::Config(format!("bad step size `{s}`")))?,
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Config(format!("step size `{s}` must be positive")));
    }
    Ok(value)
}

/// Where the errors of a study are measured against.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    /// The problem's known exact solution.
    Manufactured,
    /// A dump file; its last state must sit at the horizon.
    File(PathBuf),
    /// Generated on the fly with step `2^-k`.
    Generate { k: u32, method: Method, track: bool },
}

impl Reference {
    /// `manufactured`, `2^-k` (tracked gl4), or a file path.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "manufactured" {
            return Ok(Self::Manufactured);
        }
        if let Some(exp) = s.strip_prefix("2^-") {
            let k = exp
                .parse()
                .map_err(|_| Error::Config(format!("bad reference exponent in `{s}`")))?;
            return Ok(Self::Generate {
                k,
                method: Method::gl4(),
                track: true,
            });
        }
        Ok(Self::File(PathBuf::from(s)))
    }
}

fn default_n() -> usize {
    200
}

/// Study configuration; the TOML form mirrors the `converge` flags.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub problem: Option<String>,
    pub n: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub kmin: Option<u32>,
    pub kmax: Option<u32>,
    pub track: Option<bool>,
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    pub out: Option<PathBuf>,
    pub timing: Option<bool>,
    pub threads: Option<usize>,
}

impl StudyFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub problem: String,
    pub n: usize,
    pub methods: Vec<Method>,
    pub kmin: u32,
    pub kmax: u32,
    pub track: bool,
    pub reference: Option<Reference>,
    pub out: Option<PathBuf>,
    /// Off makes the wall_ms column zero so reports are reproducible byte for byte.
    pub timing: bool,
    pub threads: Option<usize>,
    pub policy: IterationPolicy,
}

impl StudyConfig {
    pub fn new(problem: &str, methods: Vec<Method>, kmin: u32, kmax: u32) -> Self {
        Self {
            problem: problem.to_string(),
            n: default_n(),
            methods,
            kmin,
            kmax,
            track: false,
            reference: None,
            out: None,
            timing: true,
            threads: None,
            policy: IterationPolicy::default(),
        }
    }

    /// Builds a configuration from a file form; missing required fields are errors.
    pub fn from_file(f: &StudyFile) -> Result<Self> {
        let problem = f
            .problem
            .clone()
            .ok_or_else(|| Error::Config("missing `problem`".into()))?;
        let methods = f
            .methods
            .as_ref()
            .ok_or_else(|| Error::Config("missing `methods`".into()))?
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<Method>>>()?;
        let mut cfg = Self::new(
            &problem,
            methods,
            f.kmin.ok_or_else(|| Error::Config("missing `kmin`".into()))?,
            f.kmax.ok_or_else(|| Error::Config("missing `kmax`".into()))?,
        );
        if let Some(n) = f.n {
            cfg.n = n;
        }
        cfg.track = f.track.unwrap_or(false);
        cfg.reference = f.reference.as_deref().map(Reference::parse).transpose()?;
        cfg.out = f.out.clone();
        cfg.timing = f.timing.unwrap_or(true);
        cfg.threads = f.threads;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if self.kmin > self.kmax {
            return Err(Error::Config(format!(
                "step exponents must increase, got kmin = {} > kmax = {}",
                self.kmin, self.kmax
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.track {
            if let Some(m) = self.methods.iter().find(|m| m.order() < 2) {
                return Err(Error::Config(format!("tracking is not available for {m}")));
            }
        }
        if let Some(Reference::Generate { k, .. }) = &self.reference {
            if *k <= self.kmax {
                return Err(Error::Config(format!(
                    "reference step 2^-{k} must be finer than every study step (kmax = {})",
                    self.kmax
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub problem: String,
    pub method: String,
    pub n: usize,
    pub h: f64,
    pub error: f64,
    /// `log2(e_h / e_{h/2})` against the next finer row of the same method.
    pub rate: Option<f64>,
    /// `(time, parent index)` of every detected breakpoint.
    pub breakpoints: Vec<(f64, usize)>,
    pub overlaps: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn method_rows<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a RateRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn errors(&self, method: &str) -> Vec<(f64, f64)> {
        self.method_rows(method).map(|r| (r.h, r.error)).collect()
    }

    /// Rate between the two finest steps.
    pub fn finest_rate(&self, method: &str) -> Option<f64> {
        estimate_rate(&self.errors(method)).ok()?.rates.last().copied().flatten()
    }

    /// Least-squares slope of `log e` against `log h`.
    pub fn slope(&self, method: &str) -> Option<f64> {
        estimate_rate(&self.errors(method)).ok()?.slope
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let rate = r.rate.map(|x| x.to_string()).unwrap_or_default();
            let bps: Vec<String> = r.breakpoints.iter().map(|(t, p)| format!("{t}:{p}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{},{},{},{}",
                r.problem,
                r.method,
                r.n,
                r.h,
                r.error,
                rate,
                bps.join(";"),
                r.overlaps,
                r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimate {
    /// One entry per successive pair; `None` where an error is not positive.
    pub rates: Vec<Option<f64>>,
    pub slope: Option<f64>,
    /// Indices of points excluded for nonpositive or non-finite errors.
    pub excluded: Vec<usize>,
}

/// Observed rates from `(h, error)` pairs with `h` strictly decreasing.
pub fn estimate_rate(errors: &[(f64, f64)]) -> Result<RateEstimate> {
    if errors.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(Error::InvalidArgument("step sizes must strictly decrease".into()));
    }
    let usable = |e: f64| e > 0.0 && e.is_finite();
    let excluded: Vec<usize> = (0..errors.len()).filter(|&i| !usable(errors[i].1)).collect();
    let rates = errors
        .windows(2)
        .map(|w| {
            (usable(w[0].1) && usable(w[1].1)).then(|| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        })
        .collect();
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .filter(|(_, e)| usable(*e))
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(RateEstimate {
        rates,
        slope,
        excluded,
    })
}

/// One run with constant default step `h`, tracked or not.
pub fn solve(p: &ProblemSpec, method: &Method, h: f64, track: bool, policy: &IterationPolicy) -> Result<SolveResult> {
    if track {
        integrate_tracked(p, method, h, policy, &TrackingOptions::default())
    } else {
        integrate(p, method, &uniform_mesh(p.horizon, h)?, policy)
    }
}

/// High-resolution run used as a reference solution.
pub fn make_reference(p: &ProblemSpec, h_ref: f64, method: &Method, track: bool) -> Result<SolveResult> {
    solve(p, method, h_ref, track, &IterationPolicy::default())
}

/// Runs `make_reference` and stores the terminal state as a snapshot dump.
pub fn write_reference(p: &ProblemSpec, h_ref: f64, method: &Method, track: bool, path: &Path) -> Result<SolveResult> {
    let res = make_reference(p, h_ref, method, track)?;
    save_snapshot(path, p.horizon, res.final_state())?;
    Ok(res)
}

/// Terminal reference state for `cfg`.
pub fn resolve_reference(cfg: &StudyConfig, p: &ProblemSpec) -> Result<GridFunction> {
    let reference = match &cfg.reference {
        Some(r) => r.clone(),
        None if p.exact.is_some() => Reference::Manufactured,
        None => {
            return Err(Error::Config(format!(
                "problem {} has no exact solution; give a reference",
                p.name
            )))
        }
    };
    match reference {
        Reference::Manufactured => {
            let exact = p
                .exact
                .as_ref()
                .ok_or_else(|| Error::Config(format!("problem {} has no exact solution", p.name)))?;
            Ok(exact(p.horizon))
        }
        Reference::File(path) => {
            let (t, u) = load_terminal_state(&path)
                .map_err(|e| Error::Config(format!("reference {}: {e}", path.display())))?;
            if (t - p.horizon).abs() > 1e-12 || u.len() != p.n() {
                return Err(Error::Config(format!(
                    "reference {} holds n = {} at t = {t}, expected n = {} at t = {}",
                    path.display(),
                    u.len(),
                    p.n(),
                    p.horizon
                )));
            }
            Ok(u)
        }
        Reference::Generate { k, method, track } => {
            Ok(make_reference(p, 2f64.powi(-(k as i32)), &method, track)?.final_state().clone())
        }
    }
}

fn thread_cap(cfg: &StudyConfig) -> Result<Option<usize>> {
    if let Some(t) = cfg.threads {
        return Ok(Some(t.max(1)));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|t| Some(t.max(1)))
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Runs every method for `h = 2^-kmin .. 2^-kmax` and tabulates errors at the horizon.
pub fn run_study(cfg: &StudyConfig) -> Result<RateTable> {
    cfg.validate()?;
    let p = by_name(&cfg.problem, cfg.n)?;
    let reference = resolve_reference(cfg, &p)?;

    let cells: Vec<(usize, u32)> = (0..cfg.methods.len())
        .flat_map(|m| (cfg.kmin..=cfg.kmax).map(move |k| (m, k)))
        .collect();
    let run_cell = |&(m, k): &(usize, u32)| -> Result<RateRow> {
        let method = &cfg.methods[m];
        let h = 2f64.powi(-(k as i32));
        let start = Instant::now();
        let res = solve(&p, method, h, cfg.track, &cfg.policy)?;
        let wall_ms = if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let breakpoints = res
            .breakpoints
            .as_ref()
            .map(|bp| {
                bp.points()
                    .iter()
                    .zip(bp.parents())
                    .filter_map(|(&t, par)| par.map(|i| (t, i)))
                    .collect()
            })
            .unwrap_or_default();
        Ok(RateRow {
            problem: p.name.clone(),
            method: method.name(),
            n: p.n(),
            h,
            error: l2_norm(&p.op, &res.final_state().difference(&reference)),
            rate: None,
            breakpoints,
            overlaps: res.overlap_steps(),
            wall_ms,
        })
    };

    let rows: Vec<Result<RateRow>> = match thread_cap(cfg)? {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| cells.par_iter().map(run_cell).collect()),
        None => cells.par_iter().map(run_cell).collect(),
    };
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    for m in &cfg.methods {
        let name = m.name();
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].method == name).collect();
        let errors: Vec<(f64, f64)> = idx.iter().map(|&i| (rows[i].h, rows[i].error)).collect();
        let est = estimate_rate(&errors)?;
        for (j, rate) in est.rates.into_iter().enumerate() {
            rows[idx[j + 1]].rate = rate;
        }
    }
    let table = RateTable { rows };
    if let Some(out) = &cfg.out {
        table.write_csv(out)?;
    }
    Ok(table)
}
