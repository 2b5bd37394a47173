#![allow(dead_code)]

use ldqos_core::*;
use nalgebra::DMatrix;
use rand::Rng;

pub const BASE_RATES: [f64; 2] = [0.042, 0.077];
pub const BASE_C: f64 = 0.058;

pub fn tm(rows: &[&[f64]]) -> TransitionMatrix {
    TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

pub fn two_state(p11: f64, p22: f64) -> TransitionMatrix {
    tm(&[&[p11, 1.0 - p11], &[1.0 - p22, p22]])
}

pub fn base_model() -> (ArrivalModel, ServiceModel) {
    (
        ArrivalModel::deterministic(&BASE_RATES).unwrap(),
        ServiceModel::deterministic(BASE_C).unwrap(),
    )
}

/// Empirical measure whose row marginal is the stationary law of `qf`.
pub fn stationary_em(qf: &TransitionMatrix) -> EmpiricalMeasure {
    let p1 = stationary_distribution(qf).unwrap();
    EmpiricalMeasure::from_conditionals(p1.as_slice(), qf).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn random_stochastic<R: Rng>(rng: &mut R, m: usize, zero_prob: f64) -> TransitionMatrix {
    loop {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut r: Vec<f64> = (0..m)
                    .map(|_| {
                        if rng.gen::<f64>() < zero_prob {
                            0.0
                        } else {
                            rng.gen::<f64>()
                        }
                    })
                    .collect();
                if r.iter().sum::<f64>() == 0.0 {
                    r[rng.gen_range(0..m)] = 1.0;
                }
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
                r
            })
            .collect();
        let t = TransitionMatrix::from_rows(&rows).unwrap();
        if t.is_irreducible() {
            return t;
        }
    }
}

pub fn random_positive<R: Rng>(rng: &mut R, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |_, _| rng.gen_range(0.05..1.0))
}

pub struct Instance {
    pub qf: TransitionMatrix,
    pub arr: ArrivalModel,
    pub svc: ServiceModel,
    pub s: f64,
    pub theta_star: f64,
}

/// Random chain with `q_f` in I1 and a finite decay rate.
pub fn random_instance<R: Rng>(rng: &mut R, m_lo: usize, m_hi: usize) -> Instance {
    let ld = LdConfig::default();
    loop {
        let m = rng.gen_range(m_lo..=m_hi);
        let qf = random_stochastic(rng, m, 0.2);
        let rates: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let arr = ArrivalModel::deterministic(&rates).unwrap();
        let mean = mean_arrival_rate(&qf, &arr).unwrap();
        let peak = rates.iter().cloned().fold(0.0, f64::max);
        let c = mean + rng.gen_range(0.05..0.5) * (peak - mean);
        let svc = ServiceModel::deterministic(c).unwrap();
        let s = 10f64.powf(rng.gen_range(-3.0..0.0));
        let ts = theta_star(&qf, &arr, &svc, &ld).unwrap();
        if ts.is_finite() && classify_region(&qf, &arr, &svc).unwrap() == RegionLabel::I1 {
            return Instance {
                qf,
                arr,
                svc,
                s,
                theta_star: ts,
            };
        }
    }
}

/// `g(theta) = Lambda_A(theta) - c theta` for deterministic service.
pub fn growth_oracle(theta: f64, pm: &TransitionMatrix, arr: &ArrivalModel, c: f64) -> f64 {
    let a = DMatrix::from_fn(pm.states(), pm.states(), |i, j| pm.get(i, j) * arr.eta(j, theta));
    let eig = a.complex_eigenvalues();
    let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    rho.ln() - c * theta
}

/// Largest positive root of `g` by a dense grid scan refined with bisection.
pub fn theta_star_oracle(pm: &TransitionMatrix, arr: &ArrivalModel, c: f64, hi: f64, steps: usize) -> f64 {
    let g = |t: f64| growth_oracle(t, pm, arr, c);
    let h = hi / steps as f64;
    let mut bracket = None;
    for k in (1..steps).rev() {
        let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
        if g(a) < 0.0 && g(b) >= 0.0 {
            bracket = Some((a, b));
            break;
        }
    }
    let (mut a, mut b) = bracket.expect("no sign change on the grid");
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if g(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    0.5 * (a + b)
}

/// Feasible direction moving mass from `(i, k)` to `(i, j)`.
pub fn swap_direction(m: usize, i: usize, j: usize, k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m, m);
    d[(i, j)] = 1.0;
    d[(i, k)] = -1.0;
    d
}

pub fn shifted(p: &TransitionMatrix, d: &DMatrix<f64>, h: f64) -> TransitionMatrix {
    TransitionMatrix::new(p.matrix() + d * h).unwrap()
}

/// Independent two-state objective: closed-form Perron root of the 2x2 tilted
/// matrix, decay rate by bracketing and bisection, relative entropy summed
/// directly.
pub struct TwoStateOracle {
    pub q1: [f64; 2],
    pub qf: [[f64; 2]; 2],
    pub rates: [f64; 2],
    pub c: f64,
    pub weight: f64,
}

impl TwoStateOracle {
    pub fn new(qf: [[f64; 2]; 2], rates: [f64; 2], c: f64, weight: f64) -> Self {
        let a = qf[1][0] / (qf[0][1] + qf[1][0]);
        Self {
            q1: [a, 1.0 - a],
            qf,
            rates,
            c,
            weight,
        }
    }

    pub fn growth(&self, p11: f64, p22: f64, theta: f64) -> f64 {
        let top = self.rates[0].max(self.rates[1]);
        let e1 = (theta * (self.rates[0] - top)).exp();
        let e2 = (theta * (self.rates[1] - top)).exp();
        let tr = p11 * e1 + p22 * e2;
        let det = e1 * e2 * (p11 * p22 - (1.0 - p11) * (1.0 - p22));
        let rho = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
        rho.ln() + theta * top - self.c * theta
    }

    pub fn theta_star(&self, p11: f64, p22: f64) -> f64 {
        let a = (1.0 - p22) / (2.0 - p11 - p22);
        let mean = a * self.rates[0] + (1.0 - a) * self.rates[1];
        if mean >= self.c {
            return 0.0;
        }
        let g = |t: f64| self.growth(p11, p22, t);
        let mut hi = 1e-3;
        while g(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e8 {
                return f64::INFINITY;
            }
        }
        let mut lo = if hi > 1e-3 { 0.5 * hi } else { 1e-12 };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn i3(&self, p11: f64, p22: f64) -> f64 {
        let p = [[p11, 1.0 - p11], [1.0 - p22, p22]];
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let f = self.qf[i][j];
                if f > 0.0 {
                    total += self.q1[i] * f * (f / p[i][j]).ln();
                }
            }
        }
        total
    }

    pub fn objective(&self, p11: f64, p22: f64) -> f64 {
        self.weight * self.theta_star(p11, p22) + self.i3(p11, p22)
    }

    /// Minimum over `[0.001, 0.999]^2`: an `n x n` grid, then successively
    /// finer local grids around the best point.
    pub fn grid_minimum(&self, n: usize) -> (f64, f64, f64) {
        let (lo, hi) = (0.001, 0.999);
        let h = (hi - lo) / (n - 1) as f64;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let (x, y) = (lo + a as f64 * h, lo + b as f64 * h);
                let v = self.objective(x, y);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        let mut width = h;
        for _ in 0..12 {
            let (_, cx, cy) = best;
            for a in -10..=10 {
                for b in -10..=10 {
                    let x = (cx + a as f64 * width / 10.0).clamp(lo, hi);
                    let y = (cy + b as f64 * width / 10.0).clamp(lo, hi);
                    let v = self.objective(x, y);
                    if v < best.0 {
                        best = (v, x, y);
                    }
                }
            }
            width /= 5.0;
        }
        best
    }
}
