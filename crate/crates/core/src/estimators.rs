//! Overflow-probability estimators `P[L >= U]` from an observed trace of
//! `n` states. All values are natural logarithms.
//!
//! | estimator | value |
//! |-----------|-------|
//! | I         | `-U theta*(qf)` |
//! | II        | `-n min_p (s theta*(p) + I3_hat(p))`, `s = U / n` |
//! | III(l)    | `-n min_p (l s theta*(p) + I3_hat(p))` |
//! | IV(mu)    | `P^II + mu sqrt(P^III(2) - (P^II)^2)` |

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ldcore::{classify_region, theta_star, ArrivalModel, LdConfig, RegionLabel, ServiceModel};
use crate::markov::{mle_transition, EmpiricalMeasure, TransitionMatrix};
use crate::optimizer::{algorithm_b, ObjectiveParams, OptimizerConfig, SolveTrace};

/// A negative variance estimate down to this (in probability units) is
/// treated as solver noise and clamped to zero.
pub const RADICAND_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EstimateRequest {
    pub em: EmpiricalMeasure,
    /// Number of observed transitions.
    pub n: usize,
    /// Buffer size `U`.
    pub buffer: f64,
    pub mu: f64,
    pub arr: ArrivalModel,
    pub svc: ServiceModel,
    pub ld: LdConfig,
    pub cfg: OptimizerConfig,
}

impl EstimateRequest {
    pub fn s(&self) -> f64 {
        self.buffer / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Input("n must be at least 1".into()));
        }
        if !(self.buffer > 0.0) || !self.buffer.is_finite() {
            return Err(Error::Input(format!("buffer must be positive, got {}", self.buffer)));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::Input(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if self.em.states() != self.arr.states() {
            return Err(Error::Input(format!(
                "trace has {} states but {} arrival rates were given",
                self.em.states(),
                self.arr.states()
            )));
        }
        self.ld.validate()?;
        self.cfg.validate()
    }
}

/// Result of one weighted minimization.
#[derive(Debug, Clone, Serialize)]
pub struct NlpEstimate {
    #[serde(serialize_with = "ser_f64")]
    pub log_value: f64,
    pub ell: u32,
    pub p_star: TransitionMatrix,
    /// Absent when the answer is known without solving.
    pub trace: Option<SolveTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub buffer: f64,
    pub s: f64,
    pub mu: f64,
    pub qf_region: RegionLabel,
    #[serde(serialize_with = "ser_f64")]
    pub theta_star_hat: f64,
    #[serde(serialize_with = "ser_f64")]
    pub log_pi: f64,
    #[serde(serialize_with = "ser_f64")]
    pub log_pii: f64,
    #[serde(serialize_with = "ser_f64")]
    pub log_piii_2: f64,
    #[serde(serialize_with = "ser_f64")]
    pub log_piv: f64,
    /// The variance estimate was slightly negative and was set to zero.
    pub radicand_clamped: bool,
    /// `qf` is not in I1, so every estimate is 1.
    pub degenerate: bool,
    pub ii: NlpEstimate,
    pub iii: NlpEstimate,
    pub optimizer: OptimizerConfig,
    pub ld: LdConfig,
}

/// Writes non-finite values as the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn ser_f64<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

struct Base {
    qf: TransitionMatrix,
    region: RegionLabel,
    theta_star: f64,
}

fn base(req: &EstimateRequest) -> Result<Base> {
    req.validate()?;
    let qf = mle_transition(&req.em)?;
    if !qf.is_irreducible() {
        return Err(Error::Structural("observed conditionals form a reducible chain".into()));
    }
    let region = classify_region(&qf, &req.arr, &req.svc)?;
    let theta_star = theta_star(&qf, &req.arr, &req.svc, &req.ld)?;
    Ok(Base { qf, region, theta_star })
}

fn log_pi(req: &EstimateRequest, b: &Base) -> f64 {
    if b.theta_star.is_infinite() {
        f64::NEG_INFINITY
    } else {
        -req.buffer * b.theta_star
    }
}

fn nlp(req: &EstimateRequest, b: &Base, ell: u32) -> Result<NlpEstimate> {
    let known = |log_value| NlpEstimate {
        log_value,
        ell,
        p_star: b.qf.clone(),
        trace: None,
    };
    if b.region != RegionLabel::I1 {
        return Ok(known(0.0));
    }
    if b.theta_star.is_infinite() {
        // every chain sharing the observed support has peak rate below service
        return Ok(known(f64::NEG_INFINITY));
    }
    let params = ObjectiveParams::new(ell, req.s(), req.em.clone(), req.arr.clone(), req.svc, req.ld)?;
    let trace = algorithm_b(&params, &req.cfg)?;
    Ok(NlpEstimate {
        log_value: -(req.n as f64) * trace.final_value,
        ell,
        p_star: trace.final_p.clone(),
        trace: Some(trace),
    })
}

/// Certainty-equivalent estimate `-U theta*(qf)`.
pub fn estimate_pi(req: &EstimateRequest) -> Result<f64> {
    let b = base(req)?;
    Ok(log_pi(req, &b))
}

pub fn estimate_pii(req: &EstimateRequest) -> Result<NlpEstimate> {
    estimate_piii(req, 1)
}

pub fn estimate_piii(req: &EstimateRequest, ell: u32) -> Result<NlpEstimate> {
    if ell == 0 {
        return Err(Error::Input("ell must be at least 1".into()));
    }
    let b = base(req)?;
    nlp(req, &b, ell)
}

/// `log(P^II + mu sqrt(P^III(2) - (P^II)^2))` from `a = log P^II` and
/// `b = log P^III(2)`. The flag reports a clamped negative radicand.
pub fn combine_piv(a: f64, b: f64, mu: f64) -> Result<(f64, bool)> {
    if !(mu >= 0.0) {
        return Err(Error::Input(format!("mu must be nonnegative, got {mu}")));
    }
    if a == f64::NEG_INFINITY {
        if b == f64::NEG_INFINITY || mu == 0.0 {
            return Ok((a, false));
        }
        return Ok((mu.ln() + 0.5 * b, false));
    }
    // radicand = e^{2a} (e^x - 1)
    let x = b - 2.0 * a;
    if x <= 0.0 {
        let radicand = (2.0 * a).exp() * x.exp_m1();
        if radicand < -RADICAND_TOL {
            return Err(Error::numerical("negative variance estimate", radicand));
        }
        return Ok((a, x < 0.0));
    }
    if mu == 0.0 {
        return Ok((a, false));
    }
    // log sqrt(e^x - 1)
    let half = if x > 1.0 {
        0.5 * (x + (-(-x).exp()).ln_1p())
    } else {
        0.5 * x.exp_m1().ln()
    };
    let t = mu.ln() + a + half;
    let hi = a.max(t);
    Ok((hi + ((a - hi).exp() + (t - hi).exp()).ln(), false))
}

pub fn estimate_piv(req: &EstimateRequest) -> Result<f64> {
    Ok(estimate(req)?.log_piv)
}

/// All four estimates. The `l = 1` and `l = 2` minimizations run on separate
/// threads.
pub fn estimate(req: &EstimateRequest) -> Result<EstimateReport> {
    let b = base(req)?;
    let (ii, iii) = std::thread::scope(|scope| {
        let h = scope.spawn(|| nlp(req, &b, 2));
        let ii = nlp(req, &b, 1);
        let iii = h.join().expect("estimator thread panicked");
        (ii, iii)
    });
    let (ii, iii) = (ii?, iii?);
    let (log_piv, radicand_clamped) = combine_piv(ii.log_value, iii.log_value, req.mu)?;
    Ok(EstimateReport {
        n: req.n,
        buffer: req.buffer,
        s: req.s(),
        mu: req.mu,
        qf_region: b.region,
        theta_star_hat: b.theta_star,
        log_pi: log_pi(req, &b),
        log_pii: ii.log_value,
        log_piii_2: iii.log_value,
        log_piv,
        radicand_clamped,
        degenerate: b.region != RegionLabel::I1,
        ii,
        iii,
        optimizer: req.cfg,
        ld: req.ld,
    })
}
