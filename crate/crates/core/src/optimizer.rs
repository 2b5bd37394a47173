//! Minimization of `theta_bar(p) = l s theta*(p) + I3_hat(p)` over the
//! product of row simplices, restricted to the support of the observed
//! conditionals `qf`.
//!
//! Both solvers linearize `theta*` at the current iterate and minimize the
//! resulting strictly convex model exactly, one row at a time, through the
//! scalar multiplier equation
//!
//! ```text
//! sum_{j in J(i)} q(i, j) / (l s g_ij - w_i) = 1,    w_i < min_j l s g_ij
//! ```
//!
//! [`algorithm_a`] jumps straight to the model minimizer. [`algorithm_b`] moves
//! toward it with an Armijo step that also refuses trial points on the I3
//! boundary, which makes the objective sequence monotone.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ldcore::{
    asymptotic_variance, boundary_tolerance, classify_region, mean_arrival_rate, region_of_mean, signed_root_with_grad,
    theta_star, theta_star_with_grad, ArrivalModel, LdConfig, RegionLabel, ServiceModel,
};
use crate::markov::{mle_transition, EmpiricalMeasure, TransitionMatrix};

/// Data of one instance of the minimization problem.
#[derive(Debug, Clone)]
pub struct ObjectiveParams {
    ell: u32,
    s: f64,
    em: EmpiricalMeasure,
    qf: TransitionMatrix,
    arr: ArrivalModel,
    svc: ServiceModel,
    ld: LdConfig,
}

impl ObjectiveParams {
    /// Fails unless `s > 0`, `ell >= 1`, and the observed conditionals form an
    /// irreducible chain in region I1.
    pub fn new(
        ell: u32,
        s: f64,
        em: EmpiricalMeasure,
        arr: ArrivalModel,
        svc: ServiceModel,
        ld: LdConfig,
    ) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Input("ell must be at least 1".into()));
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Input(format!("s = U/n must be positive and finite, got {s}")));
        }
        ld.validate()?;
        let qf = mle_transition(&em)?;
        if !qf.is_irreducible() {
            return Err(Error::Structural("observed conditionals form a reducible chain".into()));
        }
        let region = classify_region(&qf, &arr, &svc)?;
        if region != RegionLabel::I1 {
            return Err(Error::Input(format!(
                "observed conditionals lie in {region}; the problem is posed for I1 only"
            )));
        }
        if theta_star(&qf, &arr, &svc, &ld)?.is_infinite() {
            // the objective is then infinite on the whole feasible set
            return Err(Error::Input(
                "decay rate of the observed conditionals is infinite; the overflow probability is zero".into(),
            ));
        }
        Ok(Self {
            ell,
            s,
            em,
            qf,
            arr,
            svc,
            ld,
        })
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `l * s`.
    pub fn weight(&self) -> f64 {
        self.ell as f64 * self.s
    }

    pub fn empirical(&self) -> &EmpiricalMeasure {
        &self.em
    }

    pub fn qf(&self) -> &TransitionMatrix {
        &self.qf
    }

    pub fn arrivals(&self) -> &ArrivalModel {
        &self.arr
    }

    pub fn service(&self) -> &ServiceModel {
        &self.svc
    }

    pub fn ld_config(&self) -> &LdConfig {
        &self.ld
    }

    pub fn with_ell(&self, ell: u32) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Input("ell must be at least 1".into()));
        }
        Ok(Self { ell, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerConfig {
    /// Armijo step shrink factor.
    pub beta: f64,
    /// Armijo sufficient-decrease fraction.
    pub sigma: f64,
    /// Stop once an outer step improves the objective by less than this.
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_armijo: usize,
    /// Bisection tolerance of the per-row multiplier.
    pub w_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            sigma: 0.1,
            epsilon: 1e-9,
            max_outer: 200,
            max_armijo: 60,
            w_tol: 1e-12,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.beta) || !unit(self.sigma) {
            return Err(Error::Input("beta and sigma must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.w_tol > 0.0) {
            return Err(Error::Input("epsilon and w_tol must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::Input("max_outer must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Improvement fell below `epsilon`, or the search direction vanished.
    Converged,
    MaxIterations,
    /// An iterate repeated an earlier one (Algorithm A only).
    CycleDetected,
    /// The objective went up (Algorithm A only).
    ObjectiveIncreased,
    /// An iterate landed on I3, where the gradient is undefined (Algorithm A only).
    BoundaryHit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Iterate {
    pub p: TransitionMatrix,
    pub value: f64,
    pub theta_star: f64,
    pub region: RegionLabel,
    /// Step size that produced this iterate (0 for the starting point).
    pub step: f64,
    /// Armijo reductions spent on this step.
    pub reductions: usize,
    /// Trial points rejected because they lay on I3.
    pub i3_rejections: usize,
    /// `grad(theta_bar)' d` at the previous iterate, for the step that produced
    /// this one; for a kink step, the decrease predicted by its model.
    pub slope: Option<f64>,
    /// Produced by the kink-aware fallback of [`algorithm_b`].
    pub kink: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveTrace {
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub termination: Termination,
    pub final_p: TransitionMatrix,
    pub final_value: f64,
}

impl SolveTrace {
    pub fn outer_iterations(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn final_region(&self) -> RegionLabel {
        self.iterates.last().map(|it| it.region).unwrap_or(RegionLabel::I1)
    }
}

/// `sum_i q1(i) sum_j qf(j|i) log(qf(j|i) / p(i, j))`; `+inf` when `p`
/// vanishes somewhere on the support.
pub fn i3_hat(p: &TransitionMatrix, em: &EmpiricalMeasure) -> f64 {
    let m = em.states();
    let qf = em.conditionals();
    let q1 = em.row_marginals();
    let mut total = 0.0;
    for i in 0..m {
        if q1[i] <= 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..m {
            let f = qf[(i, j)];
            if f > 0.0 {
                let x = p.get(i, j);
                if x <= 0.0 {
                    return f64::INFINITY;
                }
                row += f * (f / x).ln();
            }
        }
        total += q1[i] * row;
    }
    total
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    value: f64,
    theta_star: f64,
    region: RegionLabel,
}

fn evaluate(p: &TransitionMatrix, params: &ObjectiveParams) -> Result<Eval> {
    let region = classify_region(p, &params.arr, &params.svc)?;
    let ts = match region {
        RegionLabel::I1 => theta_star(p, &params.arr, &params.svc, &params.ld)?,
        _ => 0.0,
    };
    let i3 = i3_hat(p, &params.em);
    let value = if ts.is_infinite() {
        f64::INFINITY
    } else {
        params.weight() * ts + i3
    };
    Ok(Eval {
        value,
        theta_star: ts,
        region,
    })
}

/// `l s theta*(p) + I3_hat(p)`, or `+inf` where `theta*` is infinite.
pub fn objective(p: &TransitionMatrix, params: &ObjectiveParams) -> Result<f64> {
    Ok(evaluate(p, params)?.value)
}

fn i3_gradient(p: &TransitionMatrix, em: &EmpiricalMeasure) -> Result<DMatrix<f64>> {
    let m = em.states();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if em.in_support(i, j) {
                let x = p.get(i, j);
                if x <= 0.0 {
                    return Err(Error::Input(format!(
                        "p({}, {}) vanishes on the observed support",
                        i + 1,
                        j + 1
                    )));
                }
                g[(i, j)] = -em.q(i, j) / x;
            }
        }
    }
    Ok(g)
}

/// Gradient of the objective on the support of `qf` (zero elsewhere).
pub fn grad_objective(p: &TransitionMatrix, params: &ObjectiveParams) -> Result<DMatrix<f64>> {
    let tg = theta_star_with_grad(p, &params.arr, &params.svc, &params.ld)?;
    combine_gradient(p, params, &tg.grad)
}

fn combine_gradient(p: &TransitionMatrix, params: &ObjectiveParams, grad_theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut g = i3_gradient(p, &params.em)?;
    let w = params.weight();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if params.em.in_support(i, j) {
                g[(i, j)] += w * grad_theta[(i, j)];
            }
        }
    }
    Ok(g)
}

/// Minimizer of the linearized model and the per-row multipliers `w_i`.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub p: TransitionMatrix,
    pub multipliers: Vec<f64>,
}

/// Minimizes `l s grad' (p - p_m) + I3_hat(p)` over the row simplices with
/// zeros off the support.
pub fn inner_subproblem(grad_theta: &DMatrix<f64>, params: &ObjectiveParams, w_tol: f64) -> Result<TransitionMatrix> {
    Ok(inner_subproblem_with_multipliers(grad_theta, params, w_tol)?.p)
}

pub fn inner_subproblem_with_multipliers(
    grad_theta: &DMatrix<f64>,
    params: &ObjectiveParams,
    w_tol: f64,
) -> Result<InnerSolution> {
    let em = &params.em;
    let m = em.states();
    if grad_theta.nrows() != m || grad_theta.ncols() != m {
        return Err(Error::Input(
            "gradient shape does not match the number of states".into(),
        ));
    }
    let weight = params.weight();
    let mut p = DMatrix::zeros(m, m);
    let mut multipliers = Vec::with_capacity(m);
    for i in 0..m {
        let support = em.support_row(i);
        let a: Vec<f64> = support.iter().map(|&j| em.q(i, j)).collect();
        let b: Vec<f64> = support.iter().map(|&j| weight * grad_theta[(i, j)]).collect();
        let spread = b.iter().fold(0.0f64, |acc, &x| acc.max((x - b[0]).abs()));
        let size = b.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        if spread <= 8.0 * f64::EPSILON * size {
            // flat gradient, up to rounding: the model minimizer is qf itself
            for &j in &support {
                p[(i, j)] = em.conditionals()[(i, j)];
            }
            multipliers.push(b[0] - em.row_marginals()[i]);
            continue;
        }
        let (row, w) = solve_row(&a, &b, w_tol).map_err(|e| match e {
            Error::Numerical { msg, residual } => Error::Numerical {
                msg: format!("row {}: {msg}", i + 1),
                residual,
            },
            other => other,
        })?;
        for (k, &j) in support.iter().enumerate() {
            p[(i, j)] = row[k];
        }
        multipliers.push(w);
    }
    Ok(InnerSolution {
        p: TransitionMatrix::from_matrix_unchecked(p),
        multipliers,
    })
}

/// Row equation in `delta = min_k b_k - w > 0`:
/// `G(delta) = sum_k a_k / (e_k + delta) = 1` with `e_k = b_k - min b >= 0`.
/// `G` falls from `+inf` to at most 1 on `(0, sum a]` and is convex.
fn row_function(a: &[f64], e: &[f64], delta: f64) -> (f64, f64) {
    a.iter().zip(e).fold((0.0, 0.0), |(g, dg), (&ak, &ek)| {
        let r = 1.0 / (ek + delta);
        (g + ak * r, dg - ak * r * r)
    })
}

/// Returns the normalized row and its multiplier `w`.
fn solve_row(a: &[f64], b: &[f64], w_tol: f64) -> Result<(Vec<f64>, f64)> {
    let total: f64 = a.iter().sum();
    let w_max = b.iter().copied().fold(f64::INFINITY, f64::min);
    if a.len() == 1 {
        return Ok((vec![1.0], b[0] - a[0]));
    }
    let e: Vec<f64> = b.iter().map(|&x| x - w_max).collect();
    // bisect on log(delta), then Newton from the left of the root, where
    // convexity makes the iterates increase monotonically to it
    let (mut lo, mut hi) = (total * 1e-300, total);
    if row_function(a, &e, hi).0 > 1.0 {
        return Err(Error::numerical(
            "multiplier equation not bracketed",
            row_function(a, &e, hi).0 - 1.0,
        ));
    }
    while hi - lo > w_tol.min(1e-3 * hi) {
        let mid = if hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if row_function(a, &e, mid).0 > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut delta = lo;
    for _ in 0..50 {
        let (g, dg) = row_function(a, &e, delta);
        let step = -(g - 1.0) / dg;
        if !(step > 0.0) || !step.is_finite() {
            break;
        }
        let next = (delta + step).min(hi);
        if next <= delta {
            break;
        }
        delta = next;
        if step <= 4.0 * f64::EPSILON * delta {
            break;
        }
    }
    let (g, _) = row_function(a, &e, delta);
    if !((g - 1.0).abs() <= 1e-10) {
        return Err(Error::numerical("multiplier equation did not converge", g - 1.0));
    }
    let mut row: Vec<f64> = a.iter().zip(&e).map(|(&ak, &ek)| ak / (ek + delta)).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    Ok((row, w_max - delta))
}

/// Entrywise distance below which two iterates count as the same point.
const SAME_POINT: f64 = 1e-12;

fn max_abs_diff(a: &TransitionMatrix, b: &TransitionMatrix) -> f64 {
    (a.matrix() - b.matrix()).amax()
}

fn support_dot(em: &EmpiricalMeasure, g: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let m = em.states();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            if em.in_support(i, j) {
                s += g[(i, j)] * d[(i, j)];
            }
        }
    }
    s
}

fn start(params: &ObjectiveParams) -> Result<Iterate> {
    let p0 = params.qf.clone();
    let ev = evaluate(&p0, params)?;
    Ok(Iterate {
        p: p0,
        value: ev.value,
        theta_star: ev.theta_star,
        region: ev.region,
        step: 0.0,
        reductions: 0,
        i3_rejections: 0,
        slope: None,
        kink: false,
    })
}

fn finish(iterates: Vec<Iterate>, termination: Termination) -> SolveTrace {
    let last = iterates.last().expect("trace holds the starting point");
    SolveTrace {
        final_p: last.p.clone(),
        final_value: last.value,
        converged: termination == Termination::Converged,
        termination,
        iterates,
    }
}

/// Full steps to the minimizer of the linearized model, starting at `qf`.
/// Does not guarantee convergence; failure modes are reported through
/// [`SolveTrace::termination`].
pub fn algorithm_a(params: &ObjectiveParams, cfg: &OptimizerConfig) -> Result<SolveTrace> {
    cfg.validate()?;
    let mut iterates = vec![start(params)?];
    for _ in 0..cfg.max_outer {
        let cur = iterates.last().unwrap();
        if cur.region == RegionLabel::I3 {
            return Ok(finish(iterates, Termination::BoundaryHit));
        }
        let tg = theta_star_with_grad(&cur.p, &params.arr, &params.svc, &params.ld)?;
        let g = combine_gradient(&cur.p, params, &tg.grad)?;
        let next_p = inner_subproblem(&tg.grad, params, cfg.w_tol)?;
        let d = next_p.matrix() - cur.p.matrix();
        let slope = support_dot(&params.em, &g, &d);
        let ev = evaluate(&next_p, params)?;
        let improvement = cur.value - ev.value;
        let same_as_current = max_abs_diff(&next_p, &cur.p) <= SAME_POINT;
        let revisits = iterates[..iterates.len() - 1]
            .iter()
            .any(|it| max_abs_diff(&it.p, &next_p) <= SAME_POINT);
        iterates.push(Iterate {
            p: next_p,
            value: ev.value,
            theta_star: ev.theta_star,
            region: ev.region,
            step: 1.0,
            reductions: 0,
            i3_rejections: 0,
            slope: Some(slope),
            kink: false,
        });
        if same_as_current {
            return Ok(finish(iterates, Termination::Converged));
        }
        if revisits {
            return Ok(finish(iterates, Termination::CycleDetected));
        }
        if improvement <= -cfg.epsilon {
            return Ok(finish(iterates, Termination::ObjectiveIncreased));
        }
        if improvement < cfg.epsilon {
            return Ok(finish(iterates, Termination::Converged));
        }
    }
    Ok(finish(iterates, Termination::MaxIterations))
}

/// Same search direction as [`algorithm_a`] with the step chosen by an Armijo
/// rule that skips trial points on I3. The objective sequence is
/// non-increasing.
///
/// Near I3 the objective has a kink (`theta* = max(theta2, 0)` with `theta2`
/// the signed root) and the linearized direction can zig-zag across it with
/// ever shorter steps. Whenever the Armijo step is not the full one, or gains
/// less than `epsilon`, a second candidate is computed from a model that keeps
/// the kink, `l s max(0, theta2 + grad2' (p - x)) + I3_hat(p)`, and the lower
/// of the two is taken. With full steps throughout the iterates are those of
/// Algorithm A.
pub fn algorithm_b(params: &ObjectiveParams, cfg: &OptimizerConfig) -> Result<SolveTrace> {
    cfg.validate()?;
    let mut iterates = vec![start(params)?];
    for outer in 0..cfg.max_outer {
        let cur = iterates.last().unwrap().clone();
        let linear = linear_step(&cur, params, cfg)?;
        let settled = match &linear {
            LinearStep::Accepted(it) => it.reductions == 0 && cur.value - it.value >= cfg.epsilon,
            _ => false,
        };
        let kink = if settled { None } else { kink_step(&cur, params, cfg)? };
        let next = match (linear, kink) {
            (LinearStep::Accepted(a), Some(k)) => Some(if k.value < a.value { k } else { a }),
            (LinearStep::Accepted(a), None) => Some(a),
            (_, Some(k)) => Some(k),
            (LinearStep::Stationary, None) => None,
            (LinearStep::Failed { slope }, None) => {
                if -slope < cfg.epsilon {
                    // no decrease is measurable at this resolution
                    None
                } else {
                    return Err(Error::LineSearch {
                        iteration: outer,
                        reductions: cfg.max_armijo,
                        trace: Box::new(finish(iterates, Termination::MaxIterations)),
                    });
                }
            }
        };
        let Some(next) = next else {
            return finish_b(iterates, Termination::Converged, params);
        };
        let improvement = cur.value - next.value;
        iterates.push(next);
        if improvement < cfg.epsilon {
            return finish_b(iterates, Termination::Converged, params);
        }
    }
    finish_b(iterates, Termination::MaxIterations, params)
}

enum LinearStep {
    Accepted(Iterate),
    /// The direction vanished or is not a descent direction.
    Stationary,
    Failed {
        slope: f64,
    },
}

fn linear_step(cur: &Iterate, params: &ObjectiveParams, cfg: &OptimizerConfig) -> Result<LinearStep> {
    let tg = theta_star_with_grad(&cur.p, &params.arr, &params.svc, &params.ld)?;
    let g = combine_gradient(&cur.p, params, &tg.grad)?;
    let target = inner_subproblem(&tg.grad, params, cfg.w_tol)?;
    let d = target.matrix() - cur.p.matrix();
    let slope = support_dot(&params.em, &g, &d);
    if d.amax() == 0.0 || slope >= 0.0 {
        return Ok(LinearStep::Stationary);
    }
    Ok(match armijo(cur, &target, slope, params, cfg)? {
        Some(it) => LinearStep::Accepted(Iterate { kink: false, ..it }),
        None => LinearStep::Failed { slope },
    })
}

/// First `a = beta^l` with `cur + a (target - cur)` off I3 and
/// `theta_bar(cur) - theta_bar(trial) >= -sigma a decrease`.
fn armijo(
    cur: &Iterate,
    target: &TransitionMatrix,
    decrease: f64,
    params: &ObjectiveParams,
    cfg: &OptimizerConfig,
) -> Result<Option<Iterate>> {
    let mut i3_rejections = 0;
    let mut a = 1.0;
    for l in 0..=cfg.max_armijo {
        let trial = cur.p.blend(target, a);
        let ev = evaluate(&trial, params)?;
        if ev.region == RegionLabel::I3 {
            i3_rejections += 1;
        } else if ev.value.is_finite() && cur.value - ev.value >= -cfg.sigma * a * decrease {
            return Ok(Some(Iterate {
                p: trial,
                value: ev.value,
                theta_star: ev.theta_star,
                region: ev.region,
                step: a,
                reductions: l,
                i3_rejections,
                slope: Some(decrease),
                kink: false,
            }));
        }
        a *= cfg.beta;
    }
    Ok(None)
}

/// Armijo step toward the minimizer of the kink-preserving model. The model
/// is convex; its minimizer is the linearized minimizer for the gradient
/// `lambda grad2`, with `lambda` in `[0, 1]` where the linearized `theta2`
/// changes sign.
fn kink_step(cur: &Iterate, params: &ObjectiveParams, cfg: &OptimizerConfig) -> Result<Option<Iterate>> {
    let Ok((t2, g2)) = signed_root_with_grad(&cur.p, &params.arr, &params.svc, &params.ld) else {
        return Ok(None);
    };
    // aim a few band widths inside I1, since trial points on I3 are skipped
    let var = asymptotic_variance(&cur.p, &params.arr)?;
    let level = 8.0 * boundary_tolerance(&params.svc) / var;
    let lin = |p: &TransitionMatrix| t2 + support_dot(&params.em, &g2, &(p.matrix() - cur.p.matrix()));
    let solve = |lambda: f64| inner_subproblem(&(&g2 * lambda), params, cfg.w_tol);
    let full = solve(1.0)?;
    let target = if lin(&full) >= level {
        full
    } else if lin(&params.qf) <= level {
        params.qf.clone()
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if lin(&solve(mid)?) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        solve(0.5 * (lo + hi))?
    };
    let w = params.weight();
    let model = w * lin(&target).max(0.0) + i3_hat(&target, &params.em);
    let here = w * t2.max(0.0) + i3_hat(&cur.p, &params.em);
    let decrease = model - here;
    if !(decrease < 0.0) {
        return Ok(None);
    }
    Ok(armijo(cur, &target, decrease, params, cfg)?.map(|it| Iterate { kink: true, ..it }))
}

/// An endpoint in I2 is moved to where the segment toward `qf` meets I3:
/// there `theta* = 0` and `I3_hat` is strictly smaller, so the objective drops.
fn finish_b(mut iterates: Vec<Iterate>, termination: Termination, params: &ObjectiveParams) -> Result<SolveTrace> {
    let last = iterates.last().unwrap();
    if last.region == RegionLabel::I2 {
        if let Some(it) = boundary_crossing(&last.p, last.value, params)? {
            iterates.push(it);
        }
    }
    Ok(finish(iterates, termination))
}

fn boundary_crossing(p: &TransitionMatrix, value: f64, params: &ObjectiveParams) -> Result<Option<Iterate>> {
    let c = params.svc.mean();
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > f64::EPSILON {
        let mid = 0.5 * (lo + hi);
        let trial = p.blend(&params.qf, mid);
        let mean = mean_arrival_rate(&trial, &params.arr)?;
        if region_of_mean(mean, &params.svc) == RegionLabel::I3 {
            let ev = evaluate(&trial, params)?;
            if !(ev.value < value) {
                return Ok(None);
            }
            return Ok(Some(Iterate {
                p: trial,
                value: ev.value,
                theta_star: ev.theta_star,
                region: ev.region,
                step: mid,
                reductions: 0,
                i3_rejections: 0,
                slope: None,
                kink: false,
            }));
        }
        if mean > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(None)
}

/// One grid point of the two-state objective surface.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SurfacePoint {
    pub p11: f64,
    pub p22: f64,
    pub region: RegionLabel,
    pub theta_star: f64,
    pub i3: f64,
    pub objective: f64,
}

/// `theta*`, `I3_hat` and `l s theta* + I3_hat` over a `grid x grid` mesh of
/// `(p(1,1), p(2,2))` in `[0.001, 0.999]^2`. `s = 0` is allowed here.
pub fn objective_surface(
    em: &EmpiricalMeasure,
    ell: u32,
    s: f64,
    arr: &ArrivalModel,
    svc: &ServiceModel,
    ld: &LdConfig,
    grid: usize,
) -> Result<Vec<SurfacePoint>> {
    if em.states() != 2 || arr.states() != 2 {
        return Err(Error::Unsupported(
            "the objective surface is defined for two states only".into(),
        ));
    }
    if grid < 2 {
        return Err(Error::Input("grid must have at least 2 points per axis".into()));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Input(format!("s must be nonnegative, got {s}")));
    }
    let axis: Vec<f64> = (0..grid)
        .map(|k| 0.001 + 0.998 * k as f64 / (grid - 1) as f64)
        .collect();
    let w = ell as f64 * s;
    let mut out = Vec::with_capacity(grid * grid);
    for &a in &axis {
        for &b in &axis {
            let p = TransitionMatrix::from_rows(&[vec![a, 1.0 - a], vec![1.0 - b, b]])?;
            let region = classify_region(&p, arr, svc)?;
            let ts = theta_star(&p, arr, svc, ld)?;
            let i3 = i3_hat(&p, em);
            let objective = if w == 0.0 {
                i3
            } else if ts.is_infinite() {
                f64::INFINITY
            } else {
                w * ts + i3
            };
            out.push(SurfacePoint {
                p11: a,
                p22: b,
                region,
                theta_star: ts,
                i3,
                objective,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tm(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn params(qf: &TransitionMatrix, rates: &[f64], c: f64, s: f64, ell: u32) -> ObjectiveParams {
        let p1 = crate::markov::stationary_distribution(qf).unwrap();
        let em = EmpiricalMeasure::from_conditionals(p1.as_slice(), qf).unwrap();
        ObjectiveParams::new(
            ell,
            s,
            em,
            ArrivalModel::deterministic(rates).unwrap(),
            ServiceModel::deterministic(c).unwrap(),
            LdConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn i3_hat_vanishes_at_qf_and_matches_hand_value() {
        let qf = tm(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let em = EmpiricalMeasure::from_conditionals(&[0.5, 0.5], &qf).unwrap();
        assert_eq!(i3_hat(&qf, &em), 0.0);
        let p = tm(&[&[0.9, 0.1], &[0.5, 0.5]]);
        let want = 0.5 * (0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5f64.ln());
        assert!((i3_hat(&p, &em) - want).abs() < 1e-15);
        let zero = tm(&[&[1.0, 0.0], &[0.5, 0.5]]);
        assert!(i3_hat(&zero, &em).is_infinite());
    }

    #[test]
    fn flat_gradient_returns_qf() {
        let qf = tm(&[&[0.9, 0.1], &[0.3, 0.7]]);
        let pr = params(&qf, &[0.042, 0.077], 0.058, 0.002, 1);
        let p = inner_subproblem(&DMatrix::zeros(2, 2), &pr, 1e-12).unwrap();
        assert_eq!(p, qf);
    }

    #[test]
    fn row_equation_residual() {
        let a = [0.1, 0.25, 0.05];
        let b = [0.3, -0.2, 0.9];
        let (row, w) = solve_row(&a, &b, 1e-12).unwrap();
        let f: f64 = a.iter().zip(&b).map(|(x, y)| x / (y - w)).sum();
        assert!((f - 1.0).abs() <= 1e-12);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(row.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn rejects_qf_outside_i1() {
        let qf = tm(&[&[0.7, 0.3], &[0.3, 0.7]]);
        let em = EmpiricalMeasure::from_conditionals(&[0.5, 0.5], &qf).unwrap();
        let r = ObjectiveParams::new(
            1,
            0.002,
            em,
            ArrivalModel::deterministic(&[0.042, 0.077]).unwrap(),
            ServiceModel::deterministic(0.058).unwrap(),
            LdConfig::default(),
        );
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn identical_state_laws_make_qf_a_fixed_point() {
        // equal eta_j gives a gradient that is constant along each row
        let qf = tm(&[&[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3], &[0.3, 0.3, 0.4]]);
        let p1 = crate::markov::stationary_distribution(&qf).unwrap();
        let em = EmpiricalMeasure::from_conditionals(p1.as_slice(), &qf).unwrap();
        let law = crate::ldcore::StateLaw::Poisson { mean: 0.04 };
        let pr = ObjectiveParams::new(
            1,
            0.01,
            em,
            ArrivalModel::new(vec![law; 3]).unwrap(),
            ServiceModel::deterministic(0.058).unwrap(),
            LdConfig::default(),
        )
        .unwrap();
        let tr = algorithm_a(&pr, &OptimizerConfig::default()).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.outer_iterations(), 1);
        assert!(max_abs_diff(&tr.final_p, &qf) <= 1e-12);
    }

    #[test]
    fn b_is_monotone_on_base_rates() {
        let qf = tm(&[&[0.9, 0.1], &[0.3, 0.7]]);
        let pr = params(&qf, &[0.042, 0.077], 0.058, 0.002, 1);
        let tr = algorithm_b(&pr, &OptimizerConfig::default()).unwrap();
        assert!(tr.converged);
        for w in tr.iterates.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
        assert!(tr.final_value <= tr.iterates[0].value);
        assert!(tr.final_region().in_i4());
    }
}
