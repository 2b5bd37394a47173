//! Markov-chain domain types: transition matrices, observed state traces and
//! the pair-frequency (empirical) measure of a trace.
//!
//! State indices are 0-based throughout the library. The text file formats in
//! [`crate::io`] are 1-based and convert at the boundary.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of a transition matrix must be within this of 1.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A row-stochastic `M x M` matrix `p(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    p: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() == 0 || p.nrows() != p.ncols() {
            return Err(Error::Input(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..p.nrows() {
            let mut sum = 0.0;
            for j in 0..p.ncols() {
                let x = p[(i, j)];
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Input(format!(
                        "entry ({}, {}) = {x} is outside [0, 1]",
                        i + 1,
                        j + 1
                    )));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Input(format!("row {} sums to {sum}, not 1", i + 1)));
            }
        }
        Ok(Self { p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Input("transition matrix rows must all have length M".into()));
        }
        Self::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
    }

    /// Skips validation; callers guarantee the rows are stochastic.
    pub(crate) fn from_matrix_unchecked(p: DMatrix<f64>) -> Self {
        debug_assert!(p.nrows() == p.ncols());
        Self { p }
    }

    pub fn states(&self) -> usize {
        self.p.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.states())
            .map(|i| self.p.row(i).iter().copied().collect())
            .collect()
    }

    /// `(1 - a) * self + a * other`, computed entrywise so that the result
    /// stays nonnegative and keeps the union of both supports.
    pub fn blend(&self, other: &TransitionMatrix, a: f64) -> TransitionMatrix {
        let p = self.p.zip_map(&other.p, |x, y| (1.0 - a) * x + a * y);
        TransitionMatrix { p }
    }

    pub fn is_irreducible(&self) -> bool {
        is_irreducible(self)
    }
}

impl Serialize for TransitionMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

/// An observed state sequence `Y_1..Y_n` with initial state `Y_0 = sigma`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTrace {
    pub initial_state: usize,
    pub states: Vec<usize>,
}

impl StateTrace {
    pub fn new(initial_state: usize, states: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Input("trace must contain at least one state".into()));
        }
        Ok(Self { initial_state, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Consecutive pairs `(Y_{k-1}, Y_k)` for `k = 1..=n`, with `Y_0 = sigma`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.initial_state)
            .chain(self.states.iter().copied())
            .zip(self.states.iter().copied())
    }
}

/// Pair frequencies `q(i, j)` of a trace with marginals and conditionals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    q: DMatrix<f64>,
    q1: DVector<f64>,
    q2: DVector<f64>,
    qf: DMatrix<f64>,
    n: Option<usize>,
}

impl EmpiricalMeasure {
    /// Builds the measure from a pair-frequency matrix summing to one.
    pub fn from_frequencies(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() == 0 || q.nrows() != q.ncols() {
            return Err(Error::Input("frequency matrix must be square and non-empty".into()));
        }
        if q.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Input("frequencies must be finite and nonnegative".into()));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Input(format!("frequencies sum to {total}, not 1")));
        }
        let m = q.nrows();
        let q1 = DVector::from_fn(m, |i, _| q.row(i).sum());
        let q2 = DVector::from_fn(m, |i, _| q.column(i).sum());
        let qf = DMatrix::from_fn(m, m, |i, j| if q1[i] > 0.0 { q[(i, j)] / q1[i] } else { 0.0 });
        Ok(Self { q, q1, q2, qf, n: None })
    }

    /// Builds `q(i, j) = q1(i) * qf(j | i)` from row weights and conditionals.
    pub fn from_conditionals(q1: &[f64], qf: &TransitionMatrix) -> Result<Self> {
        let m = qf.states();
        if q1.len() != m {
            return Err(Error::Input("q1 length must equal the number of states".into()));
        }
        let q = DMatrix::from_fn(m, m, |i, j| q1[i] * qf.get(i, j));
        let mut em = Self::from_frequencies(q)?;
        // keep the given conditionals exactly
        for i in 0..m {
            if em.q1[i] > 0.0 {
                for j in 0..m {
                    em.qf[(i, j)] = qf.get(i, j);
                }
            }
        }
        Ok(em)
    }

    pub fn states(&self) -> usize {
        self.q.nrows()
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    pub fn row_marginals(&self) -> &DVector<f64> {
        &self.q1
    }

    pub fn column_marginals(&self) -> &DVector<f64> {
        &self.q2
    }

    /// `qf(j | i)`; rows with `q1(i) = 0` are all zero.
    pub fn conditionals(&self) -> &DMatrix<f64> {
        &self.qf
    }

    pub fn in_support(&self, i: usize, j: usize) -> bool {
        self.q[(i, j)] > 0.0
    }

    /// Support columns `J(i)` of row `i`.
    pub fn support_row(&self, i: usize) -> Vec<usize> {
        (0..self.states()).filter(|&j| self.in_support(i, j)).collect()
    }

    /// Trace length, when the measure came from a trace.
    pub fn trace_len(&self) -> Option<usize> {
        self.n
    }
}

/// Counts the pairs `(Y_{k-1}, Y_k)`, `k = 1..=n`, where `Y_0` is the
/// trace's initial state, so an `n`-state trace yields exactly `n` pairs.
pub fn compute_empirical_measure(trace: &StateTrace, m: usize) -> Result<EmpiricalMeasure> {
    if m == 0 {
        return Err(Error::Input("number of states must be at least 1".into()));
    }
    if trace.is_empty() {
        return Err(Error::Input("trace must contain at least one state".into()));
    }
    let mut counts = vec![0u64; m * m];
    for (k, (a, b)) in trace.transitions().enumerate() {
        if a >= m || b >= m {
            let bad = if a >= m { a } else { b };
            return Err(Error::Input(format!(
                "state {} at position {k} is outside 1..={m}",
                bad + 1
            )));
        }
        counts[a * m + b] += 1;
    }
    let n = trace.len() as f64;
    let q = DMatrix::from_fn(m, m, |i, j| counts[i * m + j] as f64 / n);
    let row_counts: Vec<u64> = (0..m).map(|i| counts[i * m..(i + 1) * m].iter().sum()).collect();
    let q1 = DVector::from_fn(m, |i, _| row_counts[i] as f64 / n);
    let q2 = DVector::from_fn(m, |i, _| (0..m).map(|j| counts[j * m + i]).sum::<u64>() as f64 / n);
    let qf = DMatrix::from_fn(m, m, |i, j| {
        if row_counts[i] > 0 {
            counts[i * m + j] as f64 / row_counts[i] as f64
        } else {
            0.0
        }
    });
    Ok(EmpiricalMeasure {
        q,
        q1,
        q2,
        qf,
        n: Some(trace.len()),
    })
}

/// Maximum-likelihood transition matrix `p(i, j) = qf(j | i)`.
pub fn mle_transition(em: &EmpiricalMeasure) -> Result<TransitionMatrix> {
    if let Some(state) = (0..em.states()).find(|&i| em.q1[i] <= 0.0) {
        return Err(Error::InsufficientObservations { state: state + 1 });
    }
    let mut p = em.qf.clone();
    for i in 0..p.nrows() {
        let sum: f64 = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / sum);
    }
    TransitionMatrix::new(p)
}

/// True iff the digraph with an edge `i -> j` for every strictly positive
/// entry is strongly connected. A single node needs a positive self-loop.
pub fn is_strongly_connected(a: &DMatrix<f64>) -> bool {
    let m = a.nrows();
    if m == 0 {
        return false;
    }
    if m == 1 {
        return a[(0, 0)] > 0.0;
    }
    let reaches_all = |forward: bool| {
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..m {
                let w = if forward { a[(i, j)] } else { a[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reaches_all(true) && reaches_all(false)
}

pub fn is_irreducible(pm: &TransitionMatrix) -> bool {
    is_strongly_connected(&pm.p)
}

/// Stationary distribution from the linear system `(P^T - I) x = 0`,
/// `sum(x) = 1`.
pub fn stationary_distribution(pm: &TransitionMatrix) -> Result<DVector<f64>> {
    if !is_irreducible(pm) {
        return Err(Error::Structural("transition matrix is reducible".into()));
    }
    let m = pm.states();
    let mut a = pm.p.transpose() - DMatrix::<f64>::identity(m, m);
    a.row_mut(m - 1).fill(1.0);
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::numerical("singular stationary system", f64::NAN))?;
    // one step of iterative refinement
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total = x.sum();
    x /= total;
    Ok(x)
}
