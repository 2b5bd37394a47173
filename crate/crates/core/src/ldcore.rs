//! Large-deviations primitives for a Markov-modulated source feeding a
//! deterministic server.
//!
//! The limiting log-MGF of the arrivals is `Lambda_A(theta, p) = log rho(Pi)`
//! with `Pi(i, j) = p(i, j) eta_j(theta)`. The queue-tail decay rate `theta*`
//! is the largest root of `g(theta) = Lambda_A(theta, p) + Lambda_B(-theta)`.
//! Candidate chains split into regions by their mean arrival rate against
//! the mean service rate: below (I1, `theta* > 0`), above (I2, `theta* = 0`)
//! and equal (I3, where `theta*` is not differentiable).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, TransitionMatrix};
use crate::spectral::{perron, SpectralTriple};

/// Arrival law of a single modulating state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateLaw {
    /// Exactly `rate` fluid units per slot: `eta(theta) = exp(theta * rate)`.
    Deterministic { rate: f64 },
    /// Poisson count with the given mean: `eta(theta) = exp(mean (e^theta - 1))`.
    Poisson { mean: f64 },
}

impl StateLaw {
    pub fn log_eta(&self, theta: f64) -> f64 {
        match *self {
            StateLaw::Deterministic { rate } => theta * rate,
            StateLaw::Poisson { mean } => mean * theta.exp_m1(),
        }
    }

    /// `eta'(theta) / eta(theta)`.
    pub fn dlog_eta(&self, theta: f64) -> f64 {
        match *self {
            StateLaw::Deterministic { rate } => rate,
            StateLaw::Poisson { mean } => mean * theta.exp(),
        }
    }

    pub fn d2log_eta(&self, theta: f64) -> f64 {
        match *self {
            StateLaw::Deterministic { .. } => 0.0,
            StateLaw::Poisson { mean } => mean * theta.exp(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            StateLaw::Deterministic { rate } => rate,
            StateLaw::Poisson { mean } => mean,
        }
    }
}

/// Per-state arrival laws of the modulated source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    laws: Vec<StateLaw>,
}

impl ArrivalModel {
    pub fn new(laws: Vec<StateLaw>) -> Result<Self> {
        if laws.is_empty() {
            return Err(Error::Input("arrival model needs at least one state".into()));
        }
        for (i, law) in laws.iter().enumerate() {
            let x = law.mean();
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Input(format!(
                    "arrival parameter of state {} must be finite and nonnegative, got {x}",
                    i + 1
                )));
            }
        }
        Ok(Self { laws })
    }

    pub fn deterministic(rates: &[f64]) -> Result<Self> {
        Self::new(rates.iter().map(|&rate| StateLaw::Deterministic { rate }).collect())
    }

    pub fn states(&self) -> usize {
        self.laws.len()
    }

    pub fn laws(&self) -> &[StateLaw] {
        &self.laws
    }

    /// Per-slot arrival amount of state `j`, when every state is deterministic.
    pub fn deterministic_rates(&self) -> Option<Vec<f64>> {
        self.laws
            .iter()
            .map(|l| match *l {
                StateLaw::Deterministic { rate } => Some(rate),
                _ => None,
            })
            .collect()
    }

    pub fn log_eta(&self, j: usize, theta: f64) -> f64 {
        self.laws[j].log_eta(theta)
    }

    pub fn eta(&self, j: usize, theta: f64) -> f64 {
        self.log_eta(j, theta).exp()
    }

    pub fn eta_prime(&self, j: usize, theta: f64) -> f64 {
        self.eta(j, theta) * self.laws[j].dlog_eta(theta)
    }

    pub fn eta_double_prime(&self, j: usize, theta: f64) -> f64 {
        let d = self.laws[j].dlog_eta(theta);
        self.eta(j, theta) * (d * d + self.laws[j].d2log_eta(theta))
    }

    /// `E[A_1 | j] = eta_j'(0)`.
    pub fn cond_mean(&self) -> Vec<f64> {
        self.laws.iter().map(StateLaw::mean).collect()
    }
}

/// Service process; only the constant-rate server is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceModel {
    Deterministic { rate: f64 },
}

impl ServiceModel {
    pub fn deterministic(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Input(format!("service rate must be positive, got {rate}")));
        }
        Ok(ServiceModel::Deterministic { rate })
    }

    /// `Lambda_B(-theta)`.
    pub fn lambda_neg(&self, theta: f64) -> f64 {
        match *self {
            ServiceModel::Deterministic { rate } => -theta * rate,
        }
    }

    /// `d/dtheta Lambda_B(-theta)`.
    pub fn d_lambda_neg(&self, _theta: f64) -> f64 {
        match *self {
            ServiceModel::Deterministic { rate } => -rate,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceModel::Deterministic { rate } => rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    /// Mean arrival rate below mean service rate.
    I1,
    /// Mean arrival rate above mean service rate.
    I2,
    /// Mean arrival rate equal to mean service rate (within tolerance).
    I3,
}

impl RegionLabel {
    /// `I4 = I1 u I3`.
    pub fn in_i4(self) -> bool {
        matches!(self, RegionLabel::I1 | RegionLabel::I3)
    }

    /// `I5 = I2 u I3`: the decay rate is zero.
    pub fn in_i5(self) -> bool {
        matches!(self, RegionLabel::I2 | RegionLabel::I3)
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegionLabel::I1 => "I1",
            RegionLabel::I2 => "I2",
            RegionLabel::I3 => "I3",
        };
        f.write_str(s)
    }
}

/// Knobs of the decay-rate root solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdConfig {
    /// Largest `theta` searched before a root at infinity may be declared.
    pub theta_max: f64,
    /// `g(theta_max)` must be below `-g_slack` to declare a root at infinity.
    pub g_slack: f64,
    /// Absolute tolerance of the bisection on `theta`.
    pub root_tol: f64,
}

impl Default for LdConfig {
    fn default() -> Self {
        Self {
            theta_max: 1e3,
            g_slack: 1e-6,
            root_tol: 1e-10,
        }
    }
}

impl LdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_max > 0.0) || !(self.g_slack >= 0.0) || !(self.root_tol > 0.0) {
            return Err(Error::Input(
                "theta_max and root_tol must be positive, g_slack nonnegative".into(),
            ));
        }
        Ok(())
    }
}

const THETA_SEED: f64 = 1e-6;
// below this the root is taken from the quadratic expansion of g
const SMALL_ROOT: f64 = 1e-9;
// roots estimated below this are located with g integrated from g', since g
// itself can be smaller than the rounding error of log rho near the root
const QUADRATURE_ROOT: f64 = 1e-2;
const QUADRATURE_SPAN: f64 = 0.5;
// 8-point Gauss-Legendre on [-1, 1], positive half
const GL_NODES: [f64; 4] = [
    0.1834346424956498,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975363,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362683783378362,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];
// hard ceiling on the bracket expansion past theta_max
const THETA_CEILING: f64 = 1e12;

fn check_dims(pm: &TransitionMatrix, arr: &ArrivalModel) -> Result<()> {
    if pm.states() != arr.states() {
        return Err(Error::Input(format!(
            "transition matrix has {} states but the arrival model has {}",
            pm.states(),
            arr.states()
        )));
    }
    Ok(())
}

/// `H^{1/2} P H^{1/2} / exp(shift)` with `H = diag(eta_j)` and
/// `shift = max_j log eta_j`. It is similar to `Pi / exp(shift)`, and splitting
/// the scaling symmetrically keeps cycles through low-rate states from
/// underflowing at large `theta`.
fn balanced_pi(theta: f64, pm: &TransitionMatrix, arr: &ArrivalModel) -> (DMatrix<f64>, Vec<f64>, f64) {
    let m = pm.states();
    let log_eta: Vec<f64> = (0..m).map(|j| arr.log_eta(j, theta)).collect();
    let shift = log_eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half: Vec<f64> = log_eta.iter().map(|&l| 0.5 * (l - shift)).collect();
    let pi = DMatrix::from_fn(m, m, |i, j| {
        let p = pm.get(i, j);
        if p > 0.0 {
            // keep the support intact if the product underflows
            (p.ln() + half[i] + half[j]).exp().max(f64::MIN_POSITIVE)
        } else {
            0.0
        }
    });
    (pi, half.iter().map(|h| h.exp()).collect(), shift)
}

/// `Lambda_A(theta, p)` together with the pieces its derivatives need.
#[derive(Debug, Clone)]
pub struct LambdaEval {
    pub theta: f64,
    pub value: f64,
    /// Triple of the balanced matrix `H^{1/2} P H^{1/2} / exp(shift)`.
    pub triple: SpectralTriple,
    /// `sqrt(eta_j(theta) / exp(shift))`.
    pub half_eta: Vec<f64>,
    pub shift: f64,
}

impl LambdaEval {
    /// `d Lambda_A / d p(i, j) = eta_j u_i v_j / (rho u^T v)` for the
    /// eigenvectors of `Pi`; in balanced coordinates the factor `eta_j`
    /// becomes `sqrt(eta_i eta_j)`.
    pub fn d_dp(&self) -> DMatrix<f64> {
        let st = &self.triple;
        let m = st.v.len();
        let uv = st.u.dot(&st.v);
        DMatrix::from_fn(m, m, |i, j| {
            self.half_eta[i] * self.half_eta[j] * st.u[i] * st.v[j] / (st.rho * uv)
        })
    }

    /// `d Lambda_A / d theta = sum_ij p(i, j) (log eta_j)' dLambda_A/dp(i, j)`.
    pub fn d_dtheta(&self, pm: &TransitionMatrix, arr: &ArrivalModel) -> f64 {
        let g = self.d_dp();
        let m = pm.states();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += pm.get(i, j) * arr.laws()[j].dlog_eta(self.theta) * g[(i, j)];
            }
        }
        s
    }

    /// Derivative of `Lambda_A` along the entrywise direction `d` of `p`.
    pub fn d_along(&self, d: &DMatrix<f64>) -> f64 {
        self.d_dp().component_mul(d).sum()
    }
}

pub fn eval_lambda_a(theta: f64, pm: &TransitionMatrix, arr: &ArrivalModel) -> Result<LambdaEval> {
    check_dims(pm, arr)?;
    if !theta.is_finite() {
        return Err(Error::Input(format!("theta must be finite, got {theta}")));
    }
    let (pi, half_eta, shift) = balanced_pi(theta, pm, arr);
    let triple = perron(&pi)?;
    let value = triple.rho.ln() + shift;
    if !value.is_finite() {
        return Err(Error::numerical("Lambda_A is not finite", value));
    }
    Ok(LambdaEval {
        theta,
        value,
        triple,
        half_eta,
        shift,
    })
}

/// Limiting log-MGF `Lambda_A(theta, p) = log rho(Pi_theta)`.
pub fn lambda_a(theta: f64, pm: &TransitionMatrix, arr: &ArrivalModel) -> Result<f64> {
    Ok(eval_lambda_a(theta, pm, arr)?.value)
}

/// `sum_i p1(i) E[A_1 | i]`.
pub fn mean_arrival_rate(pm: &TransitionMatrix, arr: &ArrivalModel) -> Result<f64> {
    check_dims(pm, arr)?;
    let p1 = stationary_distribution(pm)?;
    Ok(arr.cond_mean().iter().zip(p1.iter()).map(|(a, b)| a * b).sum())
}

/// Asymptotic variance rate `Lambda_A''(0)` of the arrivals:
/// `sum_i p1(i) Var[A | i] + <r, (2Z - I) r>_p1` with `r` the centred
/// conditional means and `Z = (I - P + 1 p1^T)^{-1}` the fundamental matrix.
pub fn asymptotic_variance(pm: &TransitionMatrix, arr: &ArrivalModel) -> Result<f64> {
    let dev = deviation(pm, arr)?;
    let m = pm.states();
    let within: f64 = (0..m).map(|i| dev.p1[i] * arr.laws()[i].d2log_eta(0.0)).sum();
    let between: f64 = (0..m)
        .map(|i| dev.p1[i] * dev.r[i] * (2.0 * dev.zr[i] - dev.r[i]))
        .sum();
    Ok((within + between).max(0.0))
}

struct Deviation {
    p1: DVector<f64>,
    r: DVector<f64>,
    zr: DVector<f64>,
}

fn deviation(pm: &TransitionMatrix, arr: &ArrivalModel) -> Result<Deviation> {
    check_dims(pm, arr)?;
    let m = pm.states();
    let p1 = stationary_distribution(pm)?;
    let means = arr.cond_mean();
    let mean: f64 = means.iter().zip(p1.iter()).map(|(a, b)| a * b).sum();
    let r = DVector::from_fn(m, |i, _| means[i] - mean);
    let fund = DMatrix::from_fn(m, m, |i, j| f64::from(i == j) - pm.get(i, j) + p1[j]);
    let zr = fund
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::numerical("singular fundamental matrix", f64::NAN))?;
    Ok(Deviation { p1, r, zr })
}

/// Half-width of the I3 band around the mean service rate.
pub fn boundary_tolerance(svc: &ServiceModel) -> f64 {
    1e-9 * svc.mean().max(1.0)
}

pub fn region_of_mean(mean_arrival: f64, svc: &ServiceModel) -> RegionLabel {
    let c = svc.mean();
    let tol = boundary_tolerance(svc);
    if mean_arrival < c - tol {
        RegionLabel::I1
    } else if mean_arrival > c + tol {
        RegionLabel::I2
    } else {
        RegionLabel::I3
    }
}

pub fn classify_region(pm: &TransitionMatrix, arr: &ArrivalModel, svc: &ServiceModel) -> Result<RegionLabel> {
    Ok(region_of_mean(mean_arrival_rate(pm, arr)?, svc))
}

/// `g(theta) = Lambda_A(theta, p) + Lambda_B(-theta)`.
pub fn growth(theta: f64, pm: &TransitionMatrix, arr: &ArrivalModel, svc: &ServiceModel) -> Result<f64> {
    Ok(lambda_a(theta, pm, arr)? + svc.lambda_neg(theta))
}

/// `g(theta)`; when the root estimate is small and `theta` close to zero it is
/// computed as the integral of `g'` over `[0, theta]`, which keeps its relative
/// accuracy where `log rho` would not.
fn growth_near_zero(
    theta: f64,
    pm: &TransitionMatrix,
    arr: &ArrivalModel,
    svc: &ServiceModel,
    approx: f64,
) -> Result<f64> {
    if approx.abs() >= QUADRATURE_ROOT || theta.abs() > QUADRATURE_SPAN {
        return growth(theta, pm, arr, svc);
    }
    let slope = |t: f64| -> Result<f64> { Ok(eval_lambda_a(t, pm, arr)?.d_dtheta(pm, arr) + svc.d_lambda_neg(t)) };
    let half = 0.5 * theta;
    let mut sum = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        sum += w * (slope(half * (1.0 + x))? + slope(half * (1.0 - x))?);
    }
    Ok(half * sum)
}

/// Largest root of `g`: `0` on I5, `+inf` when `g` stays negative.
pub fn theta_star(pm: &TransitionMatrix, arr: &ArrivalModel, svc: &ServiceModel, cfg: &LdConfig) -> Result<f64> {
    cfg.validate()?;
    if classify_region(pm, arr, svc)? != RegionLabel::I1 {
        return Ok(0.0);
    }
    theta_star_in_i1(pm, arr, svc, cfg)
}

fn theta_star_in_i1(pm: &TransitionMatrix, arr: &ArrivalModel, svc: &ServiceModel, cfg: &LdConfig) -> Result<f64> {
    // g(theta) = -theta (c - m) + theta^2 var / 2 + O(theta^3)
    let var = asymptotic_variance(pm, arr)?;
    let gap = svc.mean() - mean_arrival_rate(pm, arr)?;
    let approx = 2.0 * gap / var;
    if approx < SMALL_ROOT {
        return Ok(approx);
    }
    let g = |t: f64| growth_near_zero(t, pm, arr, svc, approx);

    // g(0) = 0 is the trivial root; start from a point where g < 0
    let mut lo = THETA_SEED.min(0.25 * approx);
    let mut g_lo = g(lo)?;
    let mut halvings = 0;
    while g_lo >= 0.0 {
        halvings += 1;
        if halvings > 200 {
            // indistinguishable from the boundary
            return Ok(0.0);
        }
        lo *= 0.5;
        g_lo = g(lo)?;
    }

    let mut hi = None;
    let mut t = lo;
    while hi.is_none() {
        let next = if t < cfg.theta_max && 2.0 * t > cfg.theta_max {
            cfg.theta_max
        } else {
            2.0 * t
        };
        let g_next = g(next)?;
        if g_next >= 0.0 {
            hi = Some(next);
        } else {
            lo = next;
            t = next;
            if next >= cfg.theta_max && (g_next < -cfg.g_slack || next >= THETA_CEILING) {
                return Ok(f64::INFINITY);
            }
        }
    }
    let mut hi = hi.unwrap();
    while hi - lo > cfg.root_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of [`legendre`]: the supremum, where it is attained, and whether
/// the maximizer sits at an end of the search bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreValue {
    pub value: f64,
    pub argmax: f64,
    pub at_edge: bool,
}

/// `sup_theta (theta a - lambda(theta))` over `bracket` by golden-section
/// search; `lambda` must be convex there.
pub fn legendre<F>(lambda: F, a: f64, bracket: (f64, f64)) -> Result<LegendreValue>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Input(format!("invalid bracket [{lo}, {hi}]")));
    }
    let (edge_lo, edge_hi) = (lo, hi);
    let h = |t: f64| t * a - lambda(t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut h1 = h(x1);
    let mut h2 = h(x2);
    while hi - lo > 1e-10 * (1.0 + lo.abs().max(hi.abs())) {
        if h1 < h2 {
            lo = x1;
            x1 = x2;
            h1 = h2;
            x2 = lo + inv_phi * (hi - lo);
            h2 = h(x2);
        } else {
            hi = x2;
            x2 = x1;
            h2 = h1;
            x1 = hi - inv_phi * (hi - lo);
            h1 = h(x1);
        }
    }
    // compare the interior estimate against both ends
    let mid = 0.5 * (lo + hi);
    let candidates = [(mid, h(mid)), (edge_lo, h(edge_lo)), (edge_hi, h(edge_hi))];
    let (argmax, value) =
        candidates.into_iter().fold(
            (f64::NAN, f64::NEG_INFINITY),
            |best, c| if c.1 > best.1 { c } else { best },
        );
    let width = edge_hi - edge_lo;
    let at_edge = (argmax - edge_lo).abs() <= 1e-8 * width || (edge_hi - argmax).abs() <= 1e-8 * width;
    Ok(LegendreValue { value, argmax, at_edge })
}

/// Decay rate and its gradient with respect to every entry `p(i, j)`.
#[derive(Debug, Clone)]
pub struct ThetaStarGrad {
    pub theta_star: f64,
    pub region: RegionLabel,
    pub grad: DMatrix<f64>,
    /// `d/dtheta (Lambda_A + Lambda_B(-theta))` at the root (I1 only).
    pub denominator: Option<f64>,
    eval: Option<LambdaEval>,
}

impl ThetaStarGrad {
    /// Directional derivative of `theta*` along the entrywise direction `d`.
    pub fn directional(&self, d: &DMatrix<f64>) -> f64 {
        match (&self.eval, self.denominator) {
            (Some(ev), Some(den)) => -ev.d_along(d) / den,
            _ => 0.0,
        }
    }
}

pub fn theta_star_with_grad(
    pm: &TransitionMatrix,
    arr: &ArrivalModel,
    svc: &ServiceModel,
    cfg: &LdConfig,
) -> Result<ThetaStarGrad> {
    cfg.validate()?;
    let m = pm.states();
    let region = classify_region(pm, arr, svc)?;
    match region {
        RegionLabel::I3 => Err(Error::Boundary),
        RegionLabel::I2 => Ok(ThetaStarGrad {
            theta_star: 0.0,
            region,
            grad: DMatrix::zeros(m, m),
            denominator: None,
            eval: None,
        }),
        RegionLabel::I1 => {
            let ts = theta_star_in_i1(pm, arr, svc, cfg)?;
            if ts == 0.0 {
                return Err(Error::Boundary);
            }
            if ts.is_infinite() {
                return Err(Error::numerical(
                    "decay rate is infinite; its gradient is undefined",
                    f64::INFINITY,
                ));
            }
            let ev = eval_lambda_a(ts, pm, arr)?;
            let den = ev.d_dtheta(pm, arr) + svc.d_lambda_neg(ts);
            if !(den > 0.0) {
                return Err(Error::numerical("non-positive slope of g at the decay-rate root", den));
            }
            let grad = ev.d_dp() / (-den);
            Ok(ThetaStarGrad {
                theta_star: ts,
                region,
                grad,
                denominator: Some(den),
                eval: Some(ev),
            })
        }
    }
}

/// Gradient of `theta*` with respect to the entries `p(i, j)`.
///
/// Zero on I2; an error on the I3 boundary, where the partial derivatives
/// diverge.
pub fn grad_theta_star(
    pm: &TransitionMatrix,
    arr: &ArrivalModel,
    svc: &ServiceModel,
    cfg: &LdConfig,
) -> Result<DMatrix<f64>> {
    Ok(theta_star_with_grad(pm, arr, svc, cfg)?.grad)
}

/// Nontrivial root of `g` with its sign kept: `theta*` on I1, the negative
/// root on I2, passing through zero on I3. Unlike `theta*` it is smooth
/// across I3. Returns the root and its gradient in `p`; on feasible
/// directions the gradient is exact, row constants are arbitrary.
pub fn signed_root_with_grad(
    pm: &TransitionMatrix,
    arr: &ArrivalModel,
    svc: &ServiceModel,
    cfg: &LdConfig,
) -> Result<(f64, DMatrix<f64>)> {
    cfg.validate()?;
    let m = pm.states();
    let var = asymptotic_variance(pm, arr)?;
    if !(var > 0.0) {
        return Err(Error::numerical("arrival process has zero asymptotic variance", var));
    }
    let gap = svc.mean() - mean_arrival_rate(pm, arr)?;
    let approx = 2.0 * gap / var;
    if approx.abs() < SMALL_ROOT {
        // theta ~ 2 (c - m) / var, and dm/dp(i, j) = p1(i) (Z r)_j
        let dev = deviation(pm, arr)?;
        let grad = DMatrix::from_fn(m, m, |i, j| -2.0 * dev.p1[i] * dev.zr[j] / var);
        return Ok((approx, grad));
    }
    let root = if gap > 0.0 {
        theta_star_in_i1(pm, arr, svc, cfg)?
    } else {
        negative_root(pm, arr, svc, cfg, approx)?
    };
    if !root.is_finite() || root == 0.0 {
        return Err(Error::numerical("signed root is not a finite nonzero number", root));
    }
    let ev = eval_lambda_a(root, pm, arr)?;
    let den = ev.d_dtheta(pm, arr) + svc.d_lambda_neg(root);
    if !(den != 0.0 && den.is_finite()) {
        return Err(Error::numerical("g is flat at the signed root", den));
    }
    Ok((root, ev.d_dp() / (-den)))
}

/// Root of `g` on the negative axis for a chain in I2.
fn negative_root(
    pm: &TransitionMatrix,
    arr: &ArrivalModel,
    svc: &ServiceModel,
    cfg: &LdConfig,
    approx: f64,
) -> Result<f64> {
    let g = |t: f64| growth_near_zero(t, pm, arr, svc, approx);
    let mut hi = (-THETA_SEED).max(0.25 * approx);
    let mut halvings = 0;
    while g(hi)? >= 0.0 {
        halvings += 1;
        if halvings > 200 {
            return Ok(0.0);
        }
        hi *= 0.5;
    }
    let mut lo = 2.0 * hi;
    while g(lo)? < 0.0 {
        hi = lo;
        lo *= 2.0;
        if lo < -THETA_CEILING {
            return Ok(f64::NEG_INFINITY);
        }
    }
    while hi - lo > cfg.root_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
