//! Magnitude-only inverse solver: relative-error metrics, complex linear
//! least squares, constant-phase initialization and the back-and-forth
//! magnitude-enforcement iteration (two-surface and single-surface), plus
//! phase retrieval from an extracted dipole model.
//!
//! The iteration alternates between the dipole-representable field subspace
//! (a least-squares solve) and the measured-magnitude constraint (keep the
//! computed phase, replace the magnitude). Magnitude-only data fixes all
//! moments only up to one global phase factor e^{jα}; every metric here is
//! invariant under that rotation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::{forward_fields, Dipole, Environment, TransferMatrix};
use crate::scan::{FieldDataset, ScanSurface};

/// Grids are considered identical when positions and tangents agree to this
/// tolerance (metres).
pub const GRID_TOL: f64 = 1e-9;

/// Inner-iteration controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Minimum tolerated decrease of RE per iteration; a smaller (or
    /// negative) decrease stops the iteration.
    pub epsilon: f64,
    /// Hard cap on the number of sweeps.
    pub max_iterations: usize,
    /// Reciprocal condition threshold: a transfer matrix with condition
    /// estimate above 1/rcond is rejected as ill-conditioned.
    pub rcond: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iterations: 500,
            rcond: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.rcond.is_nan() || self.rcond <= 0.0 || self.rcond >= 1.0 {
            return Err(Error::Config(format!(
                "rcond must be in (0, 1), got {}",
                self.rcond
            )));
        }
        Ok(())
    }
}

/// One sweep of the iteration: relative errors measured at steps 2 and 6
/// (RE2 is absent on the single-surface path).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub re1: f64,
    pub re2: Option<f64>,
    pub re: f64,
}

/// Per-sweep error history plus any warnings raised along the way.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
    pub warnings: Vec<String>,
}

/// Outcome of a back-and-forth run. `re1`/`re2`/`re` are evaluated at the
/// returned moments (the trace rows hold the mid-sweep values of Fig-style
/// step ordering); `re = (re1+re2)/2`, or `re = re1` on the single-surface
/// path where `re2` is `None`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub moments: Vec<Complex64>,
    pub re1: f64,
    pub re2: Option<f64>,
    pub re: f64,
    pub trace: IterationTrace,
    pub converged: bool,
}

/// Relative error between measured and fitted magnitudes on one surface:
/// √( Σ[(|E_u^scan|−|E_u^fit|)² + (|E_v^scan|−|E_v^fit|)²] / Σ(|E_u^scan|²+|E_v^scan|²) ).
///
/// Zero iff the magnitudes agree exactly; identically-zero predictions give
/// exactly 1. Both datasets must share the grid point for point.
pub fn relative_error(measured: &FieldDataset, predicted: &FieldDataset) -> Result<f64> {
    if let Some(i) = measured
        .surface
        .first_grid_mismatch(&predicted.surface, GRID_TOL)
    {
        return Err(Error::ShapeMismatch(format!(
            "grids differ at point {i}"
        )));
    }
    let denom = measured.energy();
    if denom <= 0.0 {
        return Err(Error::UndefinedMetric(
            "measured dataset is identically zero".into(),
        ));
    }
    let mut num = 0.0;
    for i in 0..measured.mag_u.len() {
        let du = measured.mag_u[i] - predicted.mag_u[i];
        let dv = measured.mag_v[i] - predicted.mag_v[i];
        num += du * du + dv * dv;
    }
    Ok((num / denom).sqrt())
}

/// Σ m² of a flattened magnitude vector, rejecting all-zero data.
fn magnitude_energy(mags: &[f64]) -> Result<f64> {
    let e: f64 = mags.iter().map(|m| m * m).sum();
    if e <= 0.0 {
        return Err(Error::UndefinedMetric(
            "measured magnitudes are identically zero".into(),
        ));
    }
    Ok(e)
}

/// Relative error between measured magnitudes (row order) and the
/// magnitudes of a predicted complex field, with the denominator energy
/// precomputed.
fn re_rows(measured: &[f64], predicted: &[Complex64], energy: f64) -> f64 {
    let num: f64 = measured
        .iter()
        .zip(predicted)
        .map(|(m, p)| {
            let d = m - p.norm();
            d * d
        })
        .sum();
    (num / energy).sqrt()
}

/// Least-squares solver for one transfer matrix: a rank-revealing column-
/// pivoted QR factorization computed once and reused for every right-hand
/// side of the iteration.
pub struct LstsqSolver {
    q: DMatrix<Complex64>,
    r: DMatrix<Complex64>,
    perm: nalgebra::PermutationSequence<nalgebra::Dyn>,
    /// Ratio of the largest to smallest |R| diagonal — a cheap condition
    /// estimate that is large exactly when columns are (near-)dependent.
    pub cond_estimate: f64,
}

impl LstsqSolver {
    pub fn new(t: &TransferMatrix, rcond: f64) -> Result<Self> {
        let m = t.rows();
        let n = t.cols();
        if m < n {
            return Err(Error::ShapeMismatch(format!(
                "underdetermined system: {m} rows < {n} columns"
            )));
        }
        let qr = t.entries.clone().col_piv_qr();
        let q = qr.q();
        let r = qr.r();
        let perm = qr.p().clone();
        let mut dmax = 0f64;
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            let d = r[(i, i)].norm();
            dmax = dmax.max(d);
            dmin = dmin.min(d);
        }
        let cond_estimate = if dmin == 0.0 { f64::INFINITY } else { dmax / dmin };
        if cond_estimate > 1.0 / rcond {
            return Err(Error::IllConditioned {
                cond: cond_estimate,
            });
        }
        Ok(Self {
            q,
            r,
            perm,
            cond_estimate,
        })
    }

    /// Minimize ‖T·D − F‖₂ for the factored T.
    pub fn solve(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        if f.len() != self.q.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "rhs length {} vs {} rows",
                f.len(),
                self.q.nrows()
            )));
        }
        let fv = DVector::from_column_slice(f);
        let qtf = self.q.ad_mul(&fv);
        let mut y = self
            .r
            .solve_upper_triangular(&qtf)
            .ok_or(Error::IllConditioned {
                cond: f64::INFINITY,
            })?;
        self.perm.inv_permute_rows(&mut y);
        Ok(y.as_slice().to_vec())
    }
}

/// One-shot complex least squares min ‖T·D − F‖₂ via column-pivoted QR.
pub fn lstsq_complex(t: &TransferMatrix, f: &[Complex64], rcond: f64) -> Result<Vec<Complex64>> {
    LstsqSolver::new(t, rcond)?.solve(f)
}

/// Constant-phase initialization: treat the measured magnitudes as a
/// zero-phase complex field and least-squares invert.
pub fn init_moments(t: &TransferMatrix, mags: &[f64], rcond: f64) -> Result<Vec<Complex64>> {
    let f: Vec<Complex64> = mags.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    lstsq_complex(t, &f, rcond)
}

/// Replace each magnitude with the measured one, keeping the computed
/// phase. A zero computed entry takes phase 0 (the measured magnitude
/// becomes purely real).
pub fn enforce_magnitude(computed: &[Complex64], measured: &[f64]) -> Vec<Complex64> {
    computed
        .iter()
        .zip(measured)
        .map(|(c, &m)| {
            let n = c.norm();
            if n == 0.0 {
                Complex64::new(m, 0.0)
            } else {
                c / n * m
            }
        })
        .collect()
}

struct SweepSurface<'a> {
    solver: LstsqSolver,
    t: &'a TransferMatrix,
    mags: &'a [f64],
    energy: f64,
}

impl<'a> SweepSurface<'a> {
    fn new(t: &'a TransferMatrix, mags: &'a [f64], rcond: f64) -> Result<Self> {
        if mags.len() != t.rows() {
            return Err(Error::ShapeMismatch(format!(
                "magnitude vector length {} vs {} matrix rows",
                mags.len(),
                t.rows()
            )));
        }
        Ok(Self {
            solver: LstsqSolver::new(t, rcond)?,
            t,
            mags,
            energy: magnitude_energy(mags)?,
        })
    }

    /// Predict, measure RE, enforce magnitudes and re-solve.
    fn sweep(&self, moments: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
        let f = self.t.apply(moments)?;
        let re = re_rows(self.mags, &f, self.energy);
        let enforced = enforce_magnitude(&f, self.mags);
        Ok((self.solver.solve(&enforced)?, re))
    }

    fn measure(&self, moments: &[Complex64]) -> Result<f64> {
        let f = self.t.apply(moments)?;
        Ok(re_rows(self.mags, &f, self.energy))
    }
}

fn run_iteration(
    surf1: &SweepSurface,
    surf2: Option<&SweepSurface>,
    init: Vec<Complex64>,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    let mut moments = init;
    let mut trace = IterationTrace::default();
    let mut prev_re: Option<f64> = None;
    let mut converged = false;

    for iter in 0..cfg.max_iterations {
        let (next, re1) = surf1.sweep(&moments)?;
        moments = next;
        let mut re2 = None;
        if let Some(s2) = surf2 {
            let (next, r2) = s2.sweep(&moments)?;
            moments = next;
            re2 = Some(r2);
        }
        let re = match re2 {
            Some(r2) => 0.5 * (re1 + r2),
            None => re1,
        };
        trace.rows.push(TraceRow { iter, re1, re2, re });
        log::debug!("iteration {iter}: RE1 {re1:.6e} RE2 {re2:?} RE {re:.6e}");
        if let Some(prev) = prev_re {
            let decrease = prev - re;
            if decrease < 0.0 {
                trace
                    .warnings
                    .push(format!("RE increased by {:.3e} at iteration {iter}", -decrease));
            }
            if decrease <= cfg.epsilon {
                converged = true;
                break;
            }
        }
        prev_re = Some(re);
    }

    // Report the errors of the moments actually returned, so downstream
    // comparisons of the fitted fields reproduce them exactly.
    let re1 = surf1.measure(&moments)?;
    let re2 = match surf2 {
        Some(s2) => Some(s2.measure(&moments)?),
        None => None,
    };
    let re = match re2 {
        Some(r2) => 0.5 * (re1 + r2),
        None => re1,
    };
    Ok(FitResult {
        moments,
        re1,
        re2,
        re,
        trace,
        converged,
    })
}

/// Two-surface back-and-forth iteration. Moments are initialized from the
/// constant-phase assumption on surface #2, then each sweep predicts on
/// surface #1, enforces its magnitudes, re-solves, and repeats on surface
/// #2. Stops when the decrease of RE = (RE1+RE2)/2 between consecutive
/// sweeps falls to ε or below (an increase triggers a warning and a stop),
/// or at the iteration cap.
pub fn back_and_forth_two(
    t1: &TransferMatrix,
    t2: &TransferMatrix,
    mags1: &[f64],
    mags2: &[f64],
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if t1.cols() != t2.cols() {
        return Err(Error::ShapeMismatch(format!(
            "transfer matrices disagree on dipole count: {} vs {}",
            t1.cols(),
            t2.cols()
        )));
    }
    let surf1 = SweepSurface::new(t1, mags1, cfg.rcond)?;
    let surf2 = SweepSurface::new(t2, mags2, cfg.rcond)?;
    let init = surf2.solver.solve(
        &mags2
            .iter()
            .map(|&m| Complex64::new(m, 0.0))
            .collect::<Vec<_>>(),
    )?;
    run_iteration(&surf1, Some(&surf2), init, cfg)
}

/// Single-surface variant: initialization uses the constant-phase
/// assumption on the only surface, each sweep enforces that surface's
/// magnitudes, and RE = RE1 throughout.
pub fn back_and_forth_single(
    t1: &TransferMatrix,
    mags1: &[f64],
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let surf1 = SweepSurface::new(t1, mags1, cfg.rcond)?;
    let init = surf1.solver.solve(
        &mags1
            .iter()
            .map(|&m| Complex64::new(m, 0.0))
            .collect::<Vec<_>>(),
    )?;
    run_iteration(&surf1, None, init, cfg)
}

/// Forward-model an extracted dipole set, returning magnitudes and phases
/// on the given surface. The phases of a model extracted from
/// magnitude-only data are meaningful only up to one global phase.
pub fn retrieve_phase(
    dipoles: &[Dipole],
    surface: &ScanSurface,
    env: &Environment,
) -> Result<FieldDataset> {
    forward_fields(dipoles, surface, env)
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y - two_pi
    } else {
        y
    }
}

/// Weighted circular RMS of the residuals φ_a − φ_b − α, wrapped to
/// (−π, π].
pub fn circular_rms(phases_a: &[f64], phases_b: &[f64], weights: &[f64], alpha: f64) -> f64 {
    let mut num = 0.0;
    let mut wsum = 0.0;
    for ((a, b), w) in phases_a.iter().zip(phases_b).zip(weights) {
        let d = wrap_angle(a - b - alpha);
        num += w * d * d;
        wsum += w;
    }
    (num / wsum).sqrt()
}

/// Best global phase aligning `phases_a` to `phases_b`: the α maximizing
/// Σ w·cos(φ_a − φ_b − α), i.e. the argument of the weighted resultant
/// Σ w·e^{j(φ_a−φ_b)}. Returns (α, weighted circular RMS residual at α).
pub fn align_global_phase(
    phases_a: &[f64],
    phases_b: &[f64],
    weights: &[f64],
) -> Result<(f64, f64)> {
    if phases_a.len() != phases_b.len() || phases_a.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "phase/weight lengths differ: {} / {} / {}",
            phases_a.len(),
            phases_b.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Config("weights must be non-negative".into()));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::Config("weights are all zero".into()));
    }
    let mut resultant = Complex64::ZERO;
    for ((a, b), w) in phases_a.iter().zip(phases_b).zip(weights) {
        resultant += Complex64::from_polar(*w, a - b);
    }
    let alpha = if resultant.norm() == 0.0 {
        0.0
    } else {
        resultant.arg()
    };
    Ok((alpha, circular_rms(phases_a, phases_b, weights, alpha)))
}

/// Serializable polar form of one complex moment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolarMoment {
    pub magnitude: f64,
    pub phase_deg: f64,
}

impl From<Complex64> for PolarMoment {
    fn from(c: Complex64) -> Self {
        Self {
            magnitude: c.norm(),
            phase_deg: c.arg().to_degrees(),
        }
    }
}

/// JSON form of a [`FitResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub moments: Vec<PolarMoment>,
    pub re1: f64,
    pub re2: Option<f64>,
    pub re: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn report(&self) -> FitReport {
        FitReport {
            moments: self.moments.iter().map(|&m| m.into()).collect(),
            re1: self.re1,
            re2: self.re2,
            re: self.re,
            converged: self.converged,
            iterations: self.trace.rows.len(),
            trace: self.trace.rows.clone(),
            warnings: self.trace.warnings.clone(),
        }
    }
}

/// Write a trace as CSV with columns `iter,re1,re2,re` (re2 left empty on
/// single-surface runs).
pub fn write_trace_csv(trace: &IterationTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("iter,re1,re2,re\n");
    for row in &trace.rows {
        let re2 = row.re2.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", row.iter, row.re1, re2, row.re));
    }
    std::fs::write(path, out)?;
    Ok(())
}
