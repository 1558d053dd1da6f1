//! Estimation of the zero-strain fine-structure parameters from optical line
//! positions of many defects: line assignment, residuals and a simplex fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::ComplexMatrix;
use crate::model::{excited_eigen, operators, FineStructureParams, ModelError, StrainVector, DIM};
use crate::sweep::DEFAULT_STRAIN_ANGLE;

pub const DEFAULT_SIGMA: f64 = 0.01;

/// Per-defect strain initializations for the multi-start, GHz.
pub const STRAIN_STARTS: [f64; 6] = [0.5, 2.0, 5.0, 10.0, 20.0, 35.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot assign {measured} measured lines to {predicted} predicted lines")]
    TooManyLines { measured: usize, predicted: usize },
    #[error("defect `{id}`: {reason}")]
    BadDefect { id: String, reason: String },
    #[error("defect `{id}`: {source}")]
    Assignment {
        id: String,
        #[source]
        source: Box<FitError>,
    },
    #[error("under-determined fit: {matched} matched lines for {free} free parameters ({globals} global + 2 per defect × {defects} defects)")]
    UnderDetermined {
        matched: usize,
        free: usize,
        globals: usize,
        defects: usize,
    },
    #[error("parameter `{name}` = {value} outside its bounds [{lower}, {upper}]")]
    OutOfBounds {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("model has {model} defects but data has {data}")]
    DefectCountMismatch { model: usize, data: usize },
    #[error("no data")]
    NoData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDefect {
    pub id: String,
    /// Line positions in GHz relative to an arbitrary per-defect reference.
    pub lines: Vec<f64>,
    pub sigma: f64,
}

impl ObservedDefect {
    pub fn new(id: impl Into<String>, lines: Vec<f64>) -> Self {
        ObservedDefect {
            id: id.into(),
            lines,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |reason: &str| FitError::BadDefect {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.lines.len() < 2 {
            return Err(bad("needs at least 2 lines"));
        }
        if self.lines.iter().any(|x| !x.is_finite()) {
            return Err(bad("line positions must be finite"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(bad("sigma must be positive"));
        }
        Ok(())
    }
}

/// Order-preserving injection of measured into predicted lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (measured index, predicted index), indices into the caller's slices,
    /// in ascending measured order.
    pub pairs: Vec<(usize, usize)>,
    /// Σ |predicted − measured| over the pairs.
    pub cost: f64,
}

fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// Minimum-cost order-preserving injection by dynamic programming over both
/// sorted lists. Ties prefer the lower predicted index.
pub fn assign_lines(predicted: &[f64], measured: &[f64]) -> Result<Assignment, FitError> {
    let (m, n) = (predicted.len(), measured.len());
    if n > m {
        return Err(FitError::TooManyLines {
            measured: n,
            predicted: m,
        });
    }
    let po = sorted_order(predicted);
    let mo = sorted_order(measured);
    // cost[i][j]: first i measured lines placed among the first j predicted
    let mut cost = vec![vec![f64::INFINITY; m + 1]; n + 1];
    cost[0].fill(0.0);
    for i in 1..=n {
        for j in i..=m {
            let take = cost[i - 1][j - 1] + (predicted[po[j - 1]] - measured[mo[i - 1]]).abs();
            cost[i][j] = take.min(cost[i][j - 1]);
        }
    }
    let mut pairs = Vec::with_capacity(n);
    let (mut i, mut j) = (n, m);
    while i > 0 {
        if j > i && cost[i][j - 1] <= cost[i][j] {
            j -= 1;
        } else {
            pairs.push((mo[i - 1], po[j - 1]));
            i -= 1;
            j -= 1;
        }
    }
    pairs.reverse();
    Ok(Assignment { pairs, cost: cost[n][m] })
}

/// Bounded global parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalParam {
    pub value: f64,
    pub free: bool,
    pub lower: f64,
    pub upper: f64,
}

impl GlobalParam {
    pub fn free(value: f64, lower: f64, upper: f64) -> Self {
        GlobalParam {
            value,
            free: true,
            lower,
            upper,
        }
    }

    pub fn fixed(value: f64) -> Self {
        GlobalParam {
            value,
            free: false,
            lower: value,
            upper: value,
        }
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectParams {
    pub delta_perp: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitModel {
    pub lambda_z: GlobalParam,
    pub d_es: GlobalParam,
    pub delta_cap: GlobalParam,
    pub lambda_perp: GlobalParam,
    /// Parameters not fitted (ground splitting, E_es coefficient, offsets).
    pub base: FineStructureParams,
    pub strain_angle: f64,
    pub defects: Vec<DefectParams>,
}

const GLOBAL_NAMES: [&str; 4] = ["lambda_z", "d_es", "delta_cap", "lambda_perp"];

impl FitModel {
    /// λz, Des, Δ free around `start`, λ⊥ fixed at its `start` value.
    pub fn new(start: &FineStructureParams, n_defects: usize) -> Self {
        FitModel {
            lambda_z: GlobalParam::free(start.lambda_z, 0.0, 20.0),
            d_es: GlobalParam::free(start.d_es, 0.0, 5.0),
            delta_cap: GlobalParam::free(start.delta_cap, 0.0, 5.0),
            lambda_perp: GlobalParam::fixed(start.lambda_perp),
            base: *start,
            strain_angle: DEFAULT_STRAIN_ANGLE,
            defects: vec![
                DefectParams {
                    delta_perp: 0.0,
                    offset: 0.0
                };
                n_defects
            ],
        }
    }

    pub fn with_free_lambda_perp(mut self, upper: f64) -> Self {
        self.lambda_perp = GlobalParam::free(self.lambda_perp.value, 0.0, upper);
        self
    }

    pub fn globals(&self) -> [GlobalParam; 4] {
        [self.lambda_z, self.d_es, self.delta_cap, self.lambda_perp]
    }

    fn globals_mut(&mut self) -> [&mut GlobalParam; 4] {
        [&mut self.lambda_z, &mut self.d_es, &mut self.delta_cap, &mut self.lambda_perp]
    }

    pub fn n_free_globals(&self) -> usize {
        self.globals().iter().filter(|g| g.free).count()
    }

    pub fn params(&self) -> FineStructureParams {
        FineStructureParams {
            lambda_z: self.lambda_z.value,
            d_es: self.d_es.value,
            delta_cap: self.delta_cap.value,
            lambda_perp: self.lambda_perp.value,
            ..self.base
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        for (name, g) in GLOBAL_NAMES.iter().zip(self.globals()) {
            if !g.value.is_finite() || !g.contains(g.value) {
                return Err(FitError::OutOfBounds {
                    name,
                    value: g.value,
                    lower: g.lower,
                    upper: g.upper,
                });
            }
        }
        if let Some(d) = self.defects.iter().find(|d| !(d.delta_perp >= 0.0) || !d.offset.is_finite()) {
            return Err(FitError::OutOfBounds {
                name: "delta_perp",
                value: d.delta_perp,
                lower: 0.0,
                upper: f64::INFINITY,
            });
        }
        self.params().validate()?;
        Ok(())
    }

    fn free_vector(&self) -> Vec<f64> {
        self.globals().iter().filter(|g| g.free).map(|g| g.value).collect()
    }

    fn with_free_vector(&self, x: &[f64]) -> Option<FitModel> {
        let mut out = self.clone();
        let mut it = x.iter();
        for g in out.globals_mut() {
            if g.free {
                let v = *it.next().expect("length matches free count");
                if !v.is_finite() || !g.contains(v) {
                    return None;
                }
                g.value = v;
            }
        }
        Some(out)
    }
}

/// Predicted excited-level detunings (ascending) and their strain derivatives.
fn predict(p: &FineStructureParams, angle: f64, d_strain: &ComplexMatrix, delta: f64) -> Result<([f64; DIM], [f64; DIM]), FitError> {
    let es = excited_eigen(p, &StrainVector::from_polar(delta, angle))?;
    let mut e = [0.0; DIM];
    let mut de = [0.0; DIM];
    for k in 0..DIM {
        let v = es.vector(k);
        e[k] = es.values[k];
        de[k] = d_strain.expectation(&v, &v).re;
    }
    Ok((e, de))
}

/// ∂H/∂δ⊥ at fixed strain direction.
fn strain_derivative(p: &FineStructureParams, angle: f64) -> ComplexMatrix {
    let ops = operators();
    let (c, s) = (angle.cos(), angle.sin());
    let mut d = &ops.vx.scale(c) + &ops.vy.scale(s);
    if p.e_es_coeff != 0.0 {
        let sx2 = &ops.sx * &ops.sx;
        let sy2 = &ops.sy * &ops.sy;
        let anti = &(&ops.sx * &ops.sy) + &(&ops.sy * &ops.sx);
        let ees = &(&sx2 - &sy2).scale(c) + &anti.scale(s);
        d = &d + &ees.scale(p.e_es_coeff);
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
struct DefectSolution {
    delta: f64,
    offset: f64,
    /// Σ ((pred + offset − meas)/σ)²
    chi2: f64,
    assignment: Assignment,
}

/// Assignment and least-squares offset at fixed strain, alternated until the
/// assignment is stable.
fn profile_offset(pred: &[f64; DIM], d: &ObservedDefect) -> Result<(f64, Assignment), FitError> {
    let mean_m = d.lines.iter().sum::<f64>() / d.lines.len() as f64;
    let mut offset = if d.lines.len() == DIM {
        mean_m - pred.iter().sum::<f64>() / DIM as f64
    } else {
        // align the measured centroid with the closest window of predicted lines
        let mut sorted = *pred;
        sorted.sort_by(f64::total_cmp);
        let n = d.lines.len();
        (0..=DIM - n)
            .map(|s| mean_m - sorted[s..s + n].iter().sum::<f64>() / n as f64)
            .min_by(|a, b| {
                let cost = |o: f64| {
                    let shifted: Vec<f64> = pred.iter().map(|x| x + o).collect();
                    assign_lines(&shifted, &d.lines).map(|a| a.cost).unwrap_or(f64::INFINITY)
                };
                cost(*a).total_cmp(&cost(*b))
            })
            .unwrap_or(0.0)
    };
    let mut last: Option<Vec<(usize, usize)>> = None;
    for _ in 0..20 {
        let shifted: Vec<f64> = pred.iter().map(|x| x + offset).collect();
        let a = assign_lines(&shifted, &d.lines)?;
        offset = a.pairs.iter().map(|&(mi, pi)| d.lines[mi] - pred[pi]).sum::<f64>() / a.pairs.len() as f64;
        if last.as_ref() == Some(&a.pairs) {
            return Ok((offset, a));
        }
        last = Some(a.pairs);
    }
    let shifted: Vec<f64> = pred.iter().map(|x| x + offset).collect();
    Ok((offset, assign_lines(&shifted, &d.lines)?))
}

fn chi2_at(p: &FineStructureParams, angle: f64, dh: &ComplexMatrix, d: &ObservedDefect, delta: f64) -> Result<(DefectSolution, [f64; DIM], [f64; DIM]), FitError> {
    let (e, de) = predict(p, angle, dh, delta)?;
    let (offset, assignment) = profile_offset(&e, d)?;
    let chi2 = assignment
        .pairs
        .iter()
        .map(|&(mi, pi)| ((e[pi] + offset - d.lines[mi]) / d.sigma).powi(2))
        .sum();
    Ok((
        DefectSolution {
            delta,
            offset,
            chi2,
            assignment,
        },
        e,
        de,
    ))
}

/// Gauss–Newton on δ⊥ ≥ 0 for one defect with the offset profiled out,
/// using Hellmann–Feynman derivatives of the eigenvalues.
fn solve_strain(p: &FineStructureParams, angle: f64, dh: &ComplexMatrix, d: &ObservedDefect, start: f64) -> Result<DefectSolution, FitError> {
    let (mut best, mut e, mut de) = chi2_at(p, angle, dh, d, start.max(0.0))?;
    for _ in 0..60 {
        let n = best.assignment.pairs.len() as f64;
        let r: Vec<f64> = best.assignment.pairs.iter().map(|&(mi, pi)| e[pi] + best.offset - d.lines[mi]).collect();
        let j: Vec<f64> = best.assignment.pairs.iter().map(|&(_, pi)| de[pi]).collect();
        let jm = j.iter().sum::<f64>() / n;
        let jt_r: f64 = j.iter().zip(&r).map(|(a, b)| (a - jm) * b).sum();
        let jt_j: f64 = j.iter().map(|a| (a - jm).powi(2)).sum();
        if !(jt_j > 1e-300) {
            break;
        }
        let mut step = -jt_r / jt_j;
        let mut improved = false;
        for _ in 0..40 {
            let trial = (best.delta + step).max(0.0);
            let (sol, e2, de2) = chi2_at(p, angle, dh, d, trial)?;
            if sol.chi2 <= best.chi2 {
                let moved = (sol.delta - best.delta).abs();
                let gain = best.chi2 - sol.chi2;
                best = sol;
                e = e2;
                de = de2;
                improved = moved > 1e-13 * (1.0 + best.delta) && gain > 1e-18 * (1.0 + best.chi2);
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

fn solve_strain_multistart(p: &FineStructureParams, angle: f64, dh: &ComplexMatrix, d: &ObservedDefect, extra: Option<f64>) -> Result<DefectSolution, FitError> {
    let mut best: Option<DefectSolution> = None;
    for s in extra.into_iter().chain(STRAIN_STARTS) {
        let sol = solve_strain(p, angle, dh, d, s)?;
        if best.as_ref().is_none_or(|b| sol.chi2 < b.chi2) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one start"))
}

fn with_id<T>(id: &str, r: Result<T, FitError>) -> Result<T, FitError> {
    r.map_err(|e| match e {
        FitError::TooManyLines { .. } => FitError::Assignment {
            id: id.to_string(),
            source: Box::new(e),
        },
        other => other,
    })
}

/// Weighted residuals (pred + offset − meas)/σ at the model's own strains and
/// offsets, defect by defect in data order.
pub fn residuals(fm: &FitModel, data: &[ObservedDefect]) -> Result<Vec<f64>, FitError> {
    fm.validate()?;
    if fm.defects.len() != data.len() {
        return Err(FitError::DefectCountMismatch {
            model: fm.defects.len(),
            data: data.len(),
        });
    }
    let p = fm.params();
    let mut out = Vec::new();
    for (dp, d) in fm.defects.iter().zip(data) {
        d.validate()?;
        let es = excited_eigen(&p, &StrainVector::from_polar(dp.delta_perp, fm.strain_angle))?;
        let shifted: Vec<f64> = es.values.iter().map(|e| e + dp.offset).collect();
        let a = with_id(&d.id, assign_lines(&shifted, &d.lines))?;
        out.extend(a.pairs.iter().map(|&(mi, pi)| (shifted[pi] - d.lines[mi]) / d.sigma));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_evaluations: usize,
    /// Simplex restarts from the best vertex after convergence.
    pub restarts: usize,
    /// Relative spread of simplex values at convergence.
    pub ftol: f64,
    /// Simplex diameter at convergence, GHz.
    pub xtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_evaluations: 4000,
            restarts: 3,
            ftol: 1e-12,
            xtol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectAssignment {
    pub id: String,
    /// (measured line index, predicted level index 0..6).
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    /// Unweighted RMS of matched-line residuals, GHz.
    pub rms: f64,
    /// Σ ((pred − meas)/σ)².
    pub chi2: f64,
    pub assignments: Vec<DefectAssignment>,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub final_simplex_size: f64,
    pub converged: bool,
    /// Best objective after every simplex iteration; never increases.
    pub history: Vec<f64>,
}

struct Objective<'a> {
    template: &'a FitModel,
    data: &'a [ObservedDefect],
    warm: Vec<f64>,
    evaluations: usize,
}

impl Objective<'_> {
    fn solve(&self, model: &FitModel, full_search: bool) -> Result<Vec<DefectSolution>, FitError> {
        let p = model.params();
        let dh = strain_derivative(&p, model.strain_angle);
        self.data
            .par_iter()
            .zip(self.warm.par_iter())
            .map(|(d, &w)| {
                let r = if full_search {
                    solve_strain_multistart(&p, model.strain_angle, &dh, d, Some(w))
                } else {
                    solve_strain(&p, model.strain_angle, &dh, d, w)
                };
                with_id(&d.id, r)
            })
            .collect()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64, FitError> {
        self.evaluations += 1;
        let Some(model) = self.template.with_free_vector(x) else {
            return Ok(f64::INFINITY);
        };
        if model.params().validate().is_err() {
            return Ok(f64::INFINITY);
        }
        Ok(self.solve(&model, false)?.iter().map(|s| s.chi2).sum())
    }

    /// Re-runs the per-defect multi-start at `x` and stores the result as the
    /// warm start for subsequent evaluations.
    fn reseed(&mut self, x: &[f64]) -> Result<f64, FitError> {
        let model = self.template.with_free_vector(x).expect("reseed at a feasible point");
        let sols = self.solve(&model, true)?;
        self.warm = sols.iter().map(|s| s.delta).collect();
        Ok(sols.iter().map(|s| s.chi2).sum())
    }
}

pub fn fit(data: &[ObservedDefect], init: &FitModel, options: &FitOptions) -> Result<FitResult, FitError> {
    if data.is_empty() {
        return Err(FitError::NoData);
    }
    for d in data {
        d.validate()?;
    }
    if init.defects.len() != data.len() {
        return Err(FitError::DefectCountMismatch {
            model: init.defects.len(),
            data: data.len(),
        });
    }
    init.validate()?;
    let matched: usize = data.iter().map(|d| d.lines.len().min(DIM)).sum();
    let globals = init.n_free_globals();
    let free = globals + 2 * data.len();
    if matched < free {
        return Err(FitError::UnderDetermined {
            matched,
            free,
            globals,
            defects: data.len(),
        });
    }
    for d in data {
        if d.lines.len() > DIM {
            return Err(FitError::Assignment {
                id: d.id.clone(),
                source: Box::new(FitError::TooManyLines {
                    measured: d.lines.len(),
                    predicted: DIM,
                }),
            });
        }
    }

    let mut obj = Objective {
        template: init,
        data,
        warm: init.defects.iter().map(|d| d.delta_perp).collect(),
        evaluations: 0,
    };
    let mut x = init.free_vector();
    let mut fx = obj.reseed(&x)?;
    let mut history = vec![fx];
    let mut iterations = 0;
    let mut restarts = 0;
    let mut converged = false;
    let mut size = 0.0;
    if !x.is_empty() {
        for round in 0..=options.restarts {
            let run = nelder_mead(&mut obj, &x, fx, options, &mut history)?;
            iterations += run.iterations;
            size = run.size;
            let improved = run.fx < fx * (1.0 - 1e-12) - 1e-300;
            x = run.x;
            fx = obj.reseed(&x)?.min(run.fx);
            if let Some(last) = history.last_mut() {
                *last = last.min(fx);
            }
            converged = run.converged;
            if round > 0 {
                restarts += 1;
            }
            if !improved && converged {
                break;
            }
            if obj.evaluations >= options.max_evaluations {
                converged = false;
                break;
            }
        }
    } else {
        converged = true;
    }

    let model = init.with_free_vector(&x).expect("best point is feasible");
    let sols = obj.solve(&model, false)?;
    let mut model = model;
    for (dp, s) in model.defects.iter_mut().zip(&sols) {
        dp.delta_perp = s.delta;
        dp.offset = s.offset;
    }
    let chi2: f64 = sols.iter().map(|s| s.chi2).sum();
    let sq: f64 = sols.iter().zip(data).map(|(s, d)| s.chi2 * d.sigma * d.sigma).sum();
    let rms = (sq / matched as f64).sqrt();
    Ok(FitResult {
        rms,
        chi2,
        assignments: sols
            .iter()
            .zip(data)
            .map(|(s, d)| DefectAssignment {
                id: d.id.clone(),
                pairs: s.assignment.pairs.clone(),
            })
            .collect(),
        model,
        iterations,
        evaluations: obj.evaluations,
        restarts,
        final_simplex_size: size,
        converged,
        history,
    })
}

struct SimplexRun {
    x: Vec<f64>,
    fx: f64,
    iterations: usize,
    size: f64,
    converged: bool,
}

/// Nelder–Mead with standard coefficients; the initial simplex steps 5 % of
/// each coordinate (0.05 GHz for zero coordinates).
fn nelder_mead(obj: &mut Objective, x0: &[f64], f0: f64, options: &FitOptions, history: &mut Vec<f64>) -> Result<SimplexRun, FitError> {
    let n = x0.len();
    let mut pts: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        let mut x = x0.to_vec();
        let h = if x[i] != 0.0 { 0.05 * x[i] } else { 0.05 };
        x[i] += h;
        let mut f = obj.value(&x)?;
        if !f.is_finite() {
            x[i] -= 2.0 * h;
            f = obj.value(&x)?;
        }
        pts.push((x, f));
    }
    let order = |pts: &mut Vec<(Vec<f64>, f64)>| pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let diameter = |pts: &[(Vec<f64>, f64)]| {
        pts[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    };
    let mut iterations = 0;
    loop {
        order(&mut pts);
        let (best, worst) = (pts[0].1, pts[n].1);
        history.push(best.min(*history.last().unwrap_or(&best)));
        let size = diameter(&pts);
        if (worst - best).abs() <= options.ftol * best.abs().max(1e-300) + 1e-30 && size <= options.xtol
            || size <= options.xtol * 1e-3
        {
            return Ok(SimplexRun {
                x: pts[0].0.clone(),
                fx: best,
                iterations,
                size,
                converged: true,
            });
        }
        if obj.evaluations >= options.max_evaluations {
            return Ok(SimplexRun {
                x: pts[0].0.clone(),
                fx: best,
                iterations,
                size,
                converged: false,
            });
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|k| pts[..n].iter().map(|p| p.0[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (pts[n].0[k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = obj.value(&xr)?;
        if fr < pts[0].1 {
            let xe = along(-2.0);
            let fe = obj.value(&xe)?;
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < pts[n].1 {
                let xc = along(-0.5);
                let fc = obj.value(&xc)?;
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = obj.value(&xc)?;
                (xc, fc)
            };
            if fc < pts[n].1.min(fr) {
                pts[n] = (xc, fc);
            } else {
                let x_best = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    let x: Vec<f64> = p.0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let f = obj.value(&x)?;
                    *p = (x, f);
                }
            }
        }
    }
}

/// Synthetic line data: all six excited levels of `n` defects with strains
/// uniform on `strain_range`, offsets uniform on ±5 GHz and Gaussian noise.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub defects: Vec<ObservedDefect>,
    pub truth: Vec<DefectParams>,
}

pub fn synthetic_dataset(
    truth: &FineStructureParams,
    n: usize,
    strain_range: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticData, FitError> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strain = Uniform::new_inclusive(strain_range.0, strain_range.1).expect("valid strain range");
    let offset = Uniform::new_inclusive(-5.0, 5.0).expect("valid offset range");
    let noise = Normal::new(0.0, noise_sigma).expect("noise sigma must be finite and non-negative");
    let mut defects = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for i in 0..n {
        let dp = DefectParams {
            delta_perp: strain.sample(&mut rng),
            offset: offset.sample(&mut rng),
        };
        let es = excited_eigen(truth, &StrainVector::from_polar(dp.delta_perp, DEFAULT_STRAIN_ANGLE))?;
        let lines = es
            .values
            .iter()
            .map(|e| e + dp.offset + noise.sample(&mut rng))
            .collect();
        defects.push(ObservedDefect {
            id: format!("nv{:02}", i + 1),
            lines,
            sigma: if noise_sigma > 0.0 { noise_sigma } else { DEFAULT_SIGMA },
        });
        params.push(dp);
    }
    Ok(SyntheticData { defects, truth: params })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All order-preserving injections of n sorted measured lines into m
    /// sorted predicted lines, by recursion.
    fn brute_force(pred: &[f64], meas: &[f64]) -> f64 {
        fn go(pred: &[f64], meas: &[f64]) -> f64 {
            if meas.is_empty() {
                return 0.0;
            }
            if pred.len() < meas.len() {
                return f64::INFINITY;
            }
            let take = (pred[0] - meas[0]).abs() + go(&pred[1..], &meas[1..]);
            take.min(go(&pred[1..], meas))
        }
        let mut p = pred.to_vec();
        let mut m = meas.to_vec();
        p.sort_by(f64::total_cmp);
        m.sort_by(f64::total_cmp);
        go(&p, &m)
    }

    #[test]
    fn identical_lists_pair_identically() {
        let v = [3.0, -1.0, 2.0, 7.5];
        let a = assign_lines(&v, &v).unwrap();
        assert_eq!(a.cost, 0.0);
        for (mi, pi) in a.pairs {
            assert_eq!(mi, pi);
        }
    }

    #[test]
    fn shifted_lists_pair_in_order() {
        let pred = [0.0, 1.0, 2.5, 4.0];
        let meas: Vec<f64> = pred.iter().map(|x| x + 0.2).collect();
        let a = assign_lines(&pred, &meas).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert!((a.cost - 4.0 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn subset_assignment_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = Uniform::new(-10.0, 10.0).unwrap();
        for _ in 0..2000 {
            let pred: Vec<f64> = (0..6).map(|_| u.sample(&mut rng)).collect();
            let meas: Vec<f64> = (0..4).map(|_| u.sample(&mut rng)).collect();
            let a = assign_lines(&pred, &meas).unwrap();
            assert!((a.cost - brute_force(&pred, &meas)).abs() < 1e-12);
            let direct: f64 = a.pairs.iter().map(|&(mi, pi)| (pred[pi] - meas[mi]).abs()).sum();
            assert!((direct - a.cost).abs() < 1e-12);
            // order preserving and injective
            let mut sorted = a.pairs.clone();
            sorted.sort_by(|x, y| meas[x.0].total_cmp(&meas[y.0]));
            assert!(sorted.windows(2).all(|w| pred[w[0].1] <= pred[w[1].1] && w[0].1 != w[1].1));
        }
    }

    #[test]
    fn too_many_measured_lines() {
        assert_eq!(
            assign_lines(&[1.0], &[1.0, 2.0]).unwrap_err(),
            FitError::TooManyLines { measured: 2, predicted: 1 }
        );
    }

    fn truth_model(data: &SyntheticData, p: &FineStructureParams) -> FitModel {
        let mut fm = FitModel::new(p, data.defects.len());
        fm.defects = data.truth.clone();
        fm
    }

    #[test]
    fn residuals_vanish_on_noiseless_data() {
        let p = FineStructureParams::default();
        let data = synthetic_dataset(&p, 10, (0.5, 20.0), 0.0, 3).unwrap();
        let r = residuals(&truth_model(&data, &p), &data.defects).unwrap();
        assert_eq!(r.len(), 60);
        assert!(r.iter().all(|x| x.abs() * DEFAULT_SIGMA < 1e-9));
    }

    #[test]
    fn offset_gauge_invariance() {
        let p = FineStructureParams::default();
        let mut data = synthetic_dataset(&p, 5, (0.5, 20.0), 0.01, 4).unwrap();
        let mut fm = truth_model(&data, &p);
        let before = residuals(&fm, &data.defects).unwrap();
        data.defects[2].lines.iter_mut().for_each(|x| *x += 3.7);
        fm.defects[2].offset += 3.7;
        let after = residuals(&fm, &data.defects).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn spin_orbit_perturbation_is_visible() {
        let p = FineStructureParams::default();
        let data = synthetic_dataset(&p, 5, (0.5, 20.0), 0.0, 5).unwrap();
        let mut fm = truth_model(&data, &p);
        fm.lambda_z.value += 0.1;
        let r = residuals(&fm, &data.defects).unwrap();
        for chunk in r.chunks(6) {
            let rms = (chunk.iter().map(|x| x * x).sum::<f64>() / 6.0).sqrt();
            assert!(rms > 0.0);
        }
    }

    #[test]
    fn residuals_report_defect_id() {
        let p = FineStructureParams::default();
        let mut data = synthetic_dataset(&p, 2, (0.5, 20.0), 0.0, 6).unwrap();
        data.defects[1].lines.push(99.0);
        let err = residuals(&truth_model(&data, &p), &data.defects).unwrap_err();
        assert!(matches!(err, FitError::Assignment { ref id, .. } if id == "nv02"), "{err}");
    }

    #[test]
    fn under_determined_fit_is_rejected() {
        let data = vec![ObservedDefect::new("a", vec![1.0, 2.0])];
        let init = FitModel::new(&FineStructureParams::default(), 1);
        match fit(&data, &init, &FitOptions::default()) {
            Err(FitError::UnderDetermined { matched: 2, free: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defect_validation() {
        assert!(ObservedDefect::new("a", vec![1.0]).validate().is_err());
        assert!(ObservedDefect::new("a", vec![1.0, f64::NAN]).validate().is_err());
        let mut d = ObservedDefect::new("a", vec![1.0, 2.0]);
        d.sigma = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn model_bounds_are_enforced() {
        let mut fm = FitModel::new(&FineStructureParams::default(), 1);
        fm.d_es.value = 7.0;
        assert!(matches!(fm.validate(), Err(FitError::OutOfBounds { name: "d_es", .. })));
    }

    #[test]
    fn hellmann_feynman_matches_finite_difference() {
        let p = FineStructureParams { e_es_coeff: 0.01, ..FineStructureParams::default() };
        let dh = strain_derivative(&p, 0.3);
        for d in [1.0, 4.0, 12.0] {
            let (_, de) = predict(&p, 0.3, &dh, d).unwrap();
            let h = 1e-5;
            let (ep, _) = predict(&p, 0.3, &dh, d + h).unwrap();
            let (em, _) = predict(&p, 0.3, &dh, d - h).unwrap();
            for k in 0..DIM {
                assert!((de[k] - (ep[k] - em[k]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn small_noiseless_fit_recovers_truth() {
        let p = FineStructureParams::default();
        let data = synthetic_dataset(&p, 8, (0.5, 20.0), 0.0, 9).unwrap();
        let start = FineStructureParams { lambda_z: 5.0, d_es: 1.3, delta_cap: 1.7, ..p };
        let r = fit(&data.defects, &FitModel::new(&start, 8), &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.rms < 1e-6, "{}", r.rms);
        assert!((r.model.lambda_z.value - 5.3).abs() < 1e-4);
        assert!((r.model.d_es.value - 1.42).abs() < 1e-4);
        assert!((r.model.delta_cap.value - 1.55).abs() < 1e-4);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        for (fitted, truth) in r.model.defects.iter().zip(&data.truth) {
            assert!((fitted.delta_perp - truth.delta_perp).abs() < 1e-4);
            assert!((fitted.offset - truth.offset).abs() < 1e-4);
        }
    }

    #[test]
    fn fit_is_gauge_invariant() {
        let p = FineStructureParams::default();
        let data = synthetic_dataset(&p, 6, (0.5, 20.0), 0.01, 10).unwrap();
        let init = FitModel::new(&p, 6);
        let a = fit(&data.defects, &init, &FitOptions::default()).unwrap();
        let mut shifted = data.defects.clone();
        shifted[3].lines.iter_mut().for_each(|x| *x -= 2.25);
        let b = fit(&shifted, &init, &FitOptions::default()).unwrap();
        assert!((a.rms - b.rms).abs() < 1e-6);
        assert!((a.model.defects[3].offset - 2.25 - b.model.defects[3].offset).abs() < 1e-4);
    }

    #[test]
    fn fit_is_reproducible() {
        let p = FineStructureParams::default();
        let data = synthetic_dataset(&p, 4, (0.5, 20.0), 0.01, 11).unwrap();
        let init = FitModel::new(&p, 4);
        let a = fit(&data.defects, &init, &FitOptions::default()).unwrap();
        let b = fit(&data.defects, &init, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
