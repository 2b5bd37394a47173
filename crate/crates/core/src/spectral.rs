//! Perron-Frobenius eigen-triple of an irreducible nonnegative matrix and the
//! first-order sensitivity of the Perron root.
//!
//! The Perron root is bracketed by the Collatz-Wielandt bounds
//!
//! ```text
//! min_i (A v)_i / v_i  <=  rho  <=  max_i (A v)_i / v_i      for any v > 0
//! ```
//!
//! which also serve as the stopping rule. A short run of power iteration on
//! the shifted matrix `(B + I) / 2` handles the well-separated case; slowly mixing
//! matrices then switch to inverse iteration with a shift `mu > rho`, for
//! which `(mu I - B)^{-1}` is entrywise positive and its dominant eigenvector
//! is the Perron vector regardless of periodicity.
//!
//! `B` is the input after a diagonal similarity that balances off-diagonal
//! row and column sums, divided by its largest row sum so that `rho(B) <= 1`.
//! Balancing keeps the eigenvector entries of similar size when the input
//! mixes entries many orders of magnitude apart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ldcore::ArrivalModel;
use crate::markov::{is_strongly_connected, TransitionMatrix};

/// Perron root with positive left/right eigenvectors, normalized so that
/// `||v||_2 = 1` and `u^T v = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTriple {
    pub rho: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Total power plus inverse iterations spent on both vectors.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct PerronConfig {
    /// Relative width of the Collatz-Wielandt bracket at convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Power iterations before switching to inverse iteration.
    pub power_steps: usize,
}

impl Default for PerronConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 100_000,
            power_steps: 64,
        }
    }
}

pub fn perron(a: &DMatrix<f64>) -> Result<SpectralTriple> {
    perron_with(a, &PerronConfig::default())
}

pub fn perron_with(a: &DMatrix<f64>, cfg: &PerronConfig) -> Result<SpectralTriple> {
    let m = a.nrows();
    if m == 0 || m != a.ncols() {
        return Err(Error::Input("perron: matrix must be square and non-empty".into()));
    }
    if a.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Input("perron: entries must be finite and nonnegative".into()));
    }
    if !is_strongly_connected(a) {
        return Err(Error::Structural("perron: matrix is reducible".into()));
    }
    if m == 1 {
        let one = DVector::from_element(1, 1.0);
        return Ok(SpectralTriple {
            rho: a[(0, 0)],
            u: one.clone(),
            v: one,
            iterations: 0,
        });
    }

    // diagonal similarity D^-1 A D with balanced row and column sums
    let ld = balance(a);
    let bal = DMatrix::from_fn(m, m, |i, j| {
        let x = a[(i, j)];
        if x > 0.0 {
            (x.ln() + ld[j] - ld[i]).exp()
        } else {
            0.0
        }
    });
    let scale = (0..m).map(|i| bal.row(i).sum()).fold(0.0, f64::max);
    let b = &bal / scale;
    let bt = b.transpose();

    let (vb, it_v) = perron_vector(&b, cfg)?;
    let (ub, it_u) = perron_vector(&bt, cfg)?;
    let rho = ub.dot(&(&b * &vb)) / ub.dot(&vb) * scale;

    let mut v = DVector::from_fn(m, |i, _| vb[i] * ld[i].exp());
    let mut u = DVector::from_fn(m, |i, _| ub[i] * (-ld[i]).exp());
    if v.iter().chain(u.iter()).any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::numerical(
            "perron: eigenvector entries out of floating-point range",
            f64::NAN,
        ));
    }
    v /= v.norm();
    u /= u.dot(&v);

    // residuals are measured on the balanced matrix, where the entries of
    // both vectors are comparable in size
    let res_v = (&bal * &vb - &vb * rho).amax() / vb.amax();
    let res_u = (bal.transpose() * &ub - &ub * rho).amax() / ub.amax();
    let residual = res_v.max(res_u);
    if !(residual <= 1e-10 * rho) {
        return Err(Error::numerical(
            "perron: eigen-residual above tolerance",
            residual / rho,
        ));
    }
    Ok(SpectralTriple {
        rho,
        u,
        v,
        iterations: it_v + it_u,
    })
}

/// Log-scale diagonal `d` such that `D^-1 A D` has (nearly) equal off-diagonal
/// row and column sums.
fn balance(a: &DMatrix<f64>) -> Vec<f64> {
    let m = a.nrows();
    let mut ld = vec![0.0f64; m];
    for _ in 0..50 {
        let mut worst = 0.0f64;
        for i in 0..m {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..m {
                if j != i {
                    if a[(i, j)] > 0.0 {
                        r += (a[(i, j)].ln() + ld[j] - ld[i]).exp();
                    }
                    if a[(j, i)] > 0.0 {
                        c += (a[(j, i)].ln() + ld[i] - ld[j]).exp();
                    }
                }
            }
            if r > 0.0 && c > 0.0 {
                let step = 0.5 * (r / c).ln();
                ld[i] += step;
                worst = worst.max(step.abs());
            }
        }
        if worst < 0.05 {
            break;
        }
    }
    ld
}

/// Collatz-Wielandt bounds `(min, max)` of `(B v)_i / v_i`.
fn cw_bounds(b: &DMatrix<f64>, v: &DVector<f64>) -> (f64, f64, DVector<f64>) {
    let w = b * v;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..v.len() {
        let r = w[i] / v[i];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi, w)
}

fn perron_vector(b: &DMatrix<f64>, cfg: &PerronConfig) -> Result<(DVector<f64>, usize)> {
    let m = b.nrows();
    let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut iters = 0;

    for _ in 0..cfg.power_steps.min(cfg.max_iter) {
        let (lo, hi, w) = cw_bounds(b, &v);
        if hi - lo <= cfg.tol * hi {
            return Ok((v, iters));
        }
        v = (w + &v) * 0.5;
        v /= v.norm();
        iters += 1;
    }

    let ident = DMatrix::<f64>::identity(m, m);
    let mut last = f64::INFINITY;
    while iters < cfg.max_iter {
        let (lo, hi, _) = cw_bounds(b, &v);
        let gap = hi - lo;
        if gap <= cfg.tol * hi {
            return Ok((v, iters));
        }
        last = gap / hi;
        let mu = hi + gap.max(4.0 * f64::EPSILON * hi);
        let x = (&ident * mu - b)
            .lu()
            .solve(&v)
            .ok_or_else(|| Error::numerical("perron: singular shifted system", last))?;
        if x.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::numerical("perron: lost positivity in inverse iteration", last));
        }
        v = &x / x.norm();
        iters += 1;
    }
    Err(Error::numerical(
        "perron: no convergence within the iteration budget",
        last,
    ))
}

/// `u^T W v / u^T v`: derivative of the Perron root along the entrywise
/// perturbation `W` of the source matrix.
pub fn bilinear(st: &SpectralTriple, w: &DMatrix<f64>) -> f64 {
    st.u.dot(&(w * &st.v)) / st.u.dot(&st.v)
}

/// Derivative of the Perron root with respect to the source entry `A(i, j)`.
pub fn d_rho_d_entry(st: &SpectralTriple, i: usize, j: usize) -> f64 {
    st.u[i] * st.v[j] / st.u.dot(&st.v)
}

/// Derivative of `rho(Pi)` with respect to `p(i, j)` when
/// `Pi(i, j) = p(i, j) * eta_j(theta)`; `eta_j` is that column's factor.
pub fn d_rho_d_transition(st: &SpectralTriple, i: usize, j: usize, eta_j: f64) -> f64 {
    d_rho_d_entry(st, i, j) * eta_j
}

/// Derivative of `rho(Pi_theta)` with respect to `theta`, where `st` is the
/// triple of `Pi_theta(i, j) = p(i, j) * eta_j(theta)`.
pub fn d_rho_d_theta(st: &SpectralTriple, pm: &TransitionMatrix, arr: &ArrivalModel, theta: f64) -> f64 {
    let m = pm.states();
    let w = DMatrix::from_fn(m, m, |i, j| pm.get(i, j) * arr.eta_prime(j, theta));
    bilinear(st, &w)
}
