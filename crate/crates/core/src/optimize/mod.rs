//! CH-maximizing analyzer settings and the critical detection efficiency.
//!
//! The CH landscape over the four angles is multimodal and, for the
//! maximally entangled state, invariant under a common rotation of all
//! polarizers. The search is a full tabulated grid followed by simplex
//! refinement from the best grid cells. The winner is then moved to the
//! `theta2' = 0` slice when that costs nothing in CH and finally reduced by
//! the exact symmetries of the problem.

pub mod nelder_mead;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::metrics::{ratio_r, AnalyzerQuad, CountMode, CountModel};
use crate::model::{
    reduce_degrees, Arm, DetectionModel, EntangledState, PolarizerModel, ANGLE_EPS_DEG,
};
use nelder_mead::{SimplexOptions, SimplexResult};

/// Largest CH loss tolerated when moving the optimum onto `theta2' = 0`.
const GAUGE_TOL: f64 = 1e-10;

/// CH values at or below this count as "not violated" during bisection.
pub const VIOLATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub grid_step_deg: f64,
    pub starts: usize,
    /// Objective evaluations shared by all simplex refinements.
    pub budget: usize,
    pub xtol_deg: f64,
    pub ftol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grid_step_deg: 5.0,
            starts: 8,
            budget: 20_000,
            xtol_deg: 1e-6,
            ftol: 1e-12,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step_deg > 0.0 && self.grid_step_deg <= 90.0) {
            return Err(LabError::invalid(
                "grid_step_deg",
                format!("{} not in (0, 90]", self.grid_step_deg),
            ));
        }
        if self.starts == 0 {
            return Err(LabError::invalid("starts", "need at least one start"));
        }
        if self.budget < 10 * (self.starts + 1) {
            return Err(LabError::invalid(
                "budget",
                format!("{} too small for {} starts", self.budget, self.starts),
            ));
        }
        if self.xtol_deg.is_nan() || self.ftol.is_nan() || self.xtol_deg <= 0.0 || self.ftol <= 0.0
        {
            return Err(LabError::invalid(
                "tolerance",
                "xtol and ftol must be positive",
            ));
        }
        Ok(())
    }

    fn grid_size(&self) -> usize {
        ((180.0 / self.grid_step_deg).round() as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub quad: AnalyzerQuad,
    pub ch_max: f64,
    pub r_at_max: Option<f64>,
    /// Objective evaluations spent in simplex refinement.
    pub evaluations: usize,
    /// Grid cells tabulated before refinement.
    pub grid_points: usize,
    pub converged: bool,
}

/// Maximize the CH sum for `state` with default settings.
pub fn optimize_angles(
    state: &EntangledState,
    pol: &PolarizerModel,
    det: &DetectionModel,
    mode: CountMode,
) -> Result<OptimizationResult> {
    let model = CountModel::new(*state, *pol, *det, mode)?;
    maximize_ch(&model, &OptimizerSettings::default())
}

struct Grid {
    angles: Vec<f64>,
    /// `pair[i * n + j]` = coincidence term at `(angles[i], angles[j])`.
    pair: Vec<f64>,
    open1: Vec<f64>,
    open2: Vec<f64>,
}

impl Grid {
    fn tabulate(model: &CountModel, n: usize) -> Self {
        let step = 180.0 / n as f64;
        let angles: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let mut pair = Vec::with_capacity(n * n);
        for &a in &angles {
            for &b in &angles {
                pair.push(model.pair_term(a, b));
            }
        }
        let open1 = angles
            .iter()
            .map(|&a| model.open_term(Arm::One, a))
            .collect();
        let open2 = angles
            .iter()
            .map(|&b| model.open_term(Arm::Two, b))
            .collect();
        Grid {
            angles,
            pair,
            open1,
            open2,
        }
    }

    /// The `k` best cells in scan order; earlier cells win ties.
    fn best_cells(&self, k: usize) -> Vec<(f64, [usize; 4])> {
        let n = self.angles.len();
        let mut top: Vec<(f64, [usize; 4])> = Vec::with_capacity(k + 1);
        for a in 0..n {
            for b in 0..n {
                let base = self.pair[a * n + b] - self.open2[b];
                for ap in 0..n {
                    let t = base + self.pair[ap * n + b] - self.open1[ap];
                    for bp in 0..n {
                        let v = t - self.pair[a * n + bp] + self.pair[ap * n + bp];
                        if top.len() < k || v > top[top.len() - 1].0 {
                            let pos = top.partition_point(|(w, _)| *w >= v);
                            top.insert(pos, (v, [a, b, ap, bp]));
                            top.truncate(k);
                        }
                    }
                }
            }
        }
        top
    }

    /// Best cell on the `theta2' = 0` slice.
    fn best_on_gauge_slice(&self) -> [usize; 3] {
        let n = self.angles.len();
        let mut best = (f64::NEG_INFINITY, [0, 0, 0]);
        for a in 0..n {
            for b in 0..n {
                for ap in 0..n {
                    let v = self.pair[a * n + b] - self.pair[a * n]
                        + self.pair[ap * n + b]
                        + self.pair[ap * n]
                        - self.open1[ap]
                        - self.open2[b];
                    if v > best.0 {
                        best = (v, [a, b, ap]);
                    }
                }
            }
        }
        best.1
    }
}

/// Maximize the CH sum of `model` over all four analyzer angles.
pub fn maximize_ch(model: &CountModel, settings: &OptimizerSettings) -> Result<OptimizationResult> {
    settings.validate()?;
    let n = settings.grid_size();
    let grid = Grid::tabulate(model, n);
    let step = 180.0 / n as f64;

    let per_run = settings.budget / (settings.starts + 1);
    let simplex = SimplexOptions {
        initial_step: step / 2.0,
        xtol: settings.xtol_deg,
        ftol: settings.ftol,
        max_evals: per_run,
    };

    let mut evaluations = 0;
    let mut best: Option<SimplexResult<4>> = None;
    for (_, cell) in grid.best_cells(settings.starts) {
        let x0 = cell.map(|i| grid.angles[i]);
        let run = nelder_mead::minimize(|q| -model.ch(*q), x0, &simplex);
        evaluations += run.evaluations;
        let better = match &best {
            None => true,
            Some(b) => {
                run.value < b.value
                    || (run.value == b.value
                        && lex_less(&canonicalize(model, run.x), &canonicalize(model, b.x)))
            }
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let mut x = best.x;
    let mut converged = best.converged;

    // Move onto theta2' = 0 if the maximum extends there.
    let gauge_starts = [
        [x[0] - x[3], x[1] - x[3], x[2] - x[3]],
        grid.best_on_gauge_slice().map(|i| grid.angles[i]),
    ];
    let mut gauged: Option<SimplexResult<3>> = None;
    let gauge_opts = SimplexOptions {
        max_evals: per_run / 2,
        ..simplex
    };
    for start in gauge_starts {
        let run = nelder_mead::minimize(|p| -model.ch([p[0], p[1], p[2], 0.0]), start, &gauge_opts);
        evaluations += run.evaluations;
        if gauged.as_ref().is_none_or(|g| run.value < g.value) {
            gauged = Some(run);
        }
    }
    if let Some(g) = gauged {
        if -g.value >= -best.value - GAUGE_TOL {
            x = [g.x[0], g.x[1], g.x[2], 0.0];
            converged = g.converged;
        }
    }

    let canonical = canonicalize(model, x);
    let quad = AnalyzerQuad::from_array(canonical)?;
    let ch_max = model.ch(quad.to_array());
    let r_at_max = ratio_r(&model.counts(&quad)).ok().map(|m| m.value);
    Ok(OptimizationResult {
        quad,
        ch_max,
        r_at_max,
        evaluations,
        grid_points: n.pow(4),
        converged,
    })
}

fn lex_less(a: &[f64; 4], b: &[f64; 4]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > ANGLE_EPS_DEG {
            return x < y;
        }
    }
    false
}

/// Representative of `q` under the exact symmetries of `model`: reflecting
/// every angle through 0 (always), and exchanging the arms, which maps
/// `(a, b, a', b')` to `(b', a', b, a)` (only for arm-symmetric hardware).
/// Images with `theta2'` in `[0, 45]` are preferred, then the
/// lexicographically smallest.
pub fn canonicalize(model: &CountModel, q: [f64; 4]) -> [f64; 4] {
    let reduce = |v: [f64; 4]| v.map(reduce_degrees);
    let reflect = |v: [f64; 4]| reduce(v.map(|t| -t));
    let swap = |v: [f64; 4]| reduce([v[3], v[2], v[1], v[0]]);

    let base = reduce(q);
    let mut images = vec![base, reflect(base)];
    if model.is_arm_symmetric() {
        images.push(swap(base));
        images.push(reflect(swap(base)));
    }
    let in_cell = |v: &[f64; 4]| v[3] <= 45.0 + ANGLE_EPS_DEG;
    images
        .into_iter()
        .reduce(|acc, v| match (in_cell(&acc), in_cell(&v)) {
            (true, false) => acc,
            (false, true) => v,
            _ => {
                if lex_less(&v, &acc) {
                    v
                } else {
                    acc
                }
            }
        })
        .expect("non-empty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScanEntry {
    pub f: f64,
    pub result: OptimizationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScan {
    pub entries: Vec<FScanEntry>,
    /// Whether `ch_max` is non-decreasing as `min(f, 1/f)` grows towards 1.
    pub monotone_towards_maximal: bool,
    /// Pairs `(f_lo, f_hi)` of neighbouring scan points, ordered by
    /// `min(f, 1/f)`, where `ch_max` drops.
    pub monotonicity_violations: Vec<(f64, f64)>,
}

/// Optimize each real `f >= 0` in turn.
pub fn scan_f(
    f_values: &[f64],
    pol: &PolarizerModel,
    det: &DetectionModel,
    mode: CountMode,
    settings: &OptimizerSettings,
) -> Result<FScan> {
    let mut entries = Vec::with_capacity(f_values.len());
    for &f in f_values {
        if !f.is_finite() || f < 0.0 {
            return Err(LabError::invalid(
                "f",
                format!("scan values must be finite and >= 0, got {f}"),
            ));
        }
        let model = CountModel::new(EntangledState::real(f)?, *pol, *det, mode)?;
        entries.push(FScanEntry {
            f,
            result: maximize_ch(&model, settings)?,
        });
    }

    let closeness = |f: f64| if f <= 1.0 { f } else { 1.0 / f };
    let mut order: Vec<&FScanEntry> = entries.iter().collect();
    order.sort_by(|a, b| closeness(a.f).total_cmp(&closeness(b.f)));
    let monotonicity_violations: Vec<(f64, f64)> = order
        .windows(2)
        .filter(|w| w[1].result.ch_max < w[0].result.ch_max - 1e-9)
        .map(|w| (w[0].f, w[1].f))
        .collect();
    Ok(FScan {
        monotone_towards_maximal: monotonicity_violations.is_empty(),
        monotonicity_violations,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyThreshold {
    pub f: f64,
    pub background: f64,
    pub eta_star: f64,
    /// Final bisection bracket: no violation at `lower`, violation at `upper`.
    pub lower: f64,
    pub upper: f64,
    /// Optimal settings at `upper`.
    pub quad_at_threshold: AnalyzerQuad,
    pub iterations: usize,
}

/// Largest singles-mode CH sum over all settings at symmetric efficiency
/// `eta`.
pub fn singles_violation(
    state: &EntangledState,
    eta: f64,
    background: f64,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult> {
    let det = DetectionModel::symmetric_efficiency(eta, background);
    let model = CountModel::new(*state, PolarizerModel::ideal(), det, CountMode::Singles)?;
    maximize_ch(&model, settings)
}

/// Smallest symmetric detector efficiency at which the singles-mode CH sum
/// can be violated, bracketed by bisection to `tol`.
pub fn critical_efficiency(
    f: f64,
    background: f64,
    tol: f64,
    settings: &OptimizerSettings,
) -> Result<EfficiencyThreshold> {
    if !(0.0..=1.0).contains(&f) {
        return Err(LabError::invalid("f", format!("{f} not in [0, 1]")));
    }
    if !background.is_finite() || background < 0.0 {
        return Err(LabError::invalid(
            "background",
            format!("{background} must be finite and >= 0"),
        ));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(LabError::invalid("tol", format!("{tol} not in (0, 1)")));
    }
    let state = EntangledState::real(f)?;

    let top = singles_violation(&state, 1.0, background, settings)?;
    if top.ch_max <= VIOLATION_EPS {
        return Err(LabError::NoThreshold { f });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut quad = top.quad;
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let g = singles_violation(&state, mid, background, settings)?;
        if g.ch_max > VIOLATION_EPS {
            hi = mid;
            quad = g.quad;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(EfficiencyThreshold {
        f,
        background,
        eta_star: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
        quad_at_threshold: quad,
        iterations,
    })
}
