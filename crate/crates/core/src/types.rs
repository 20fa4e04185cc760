//! Value types shared by the engine, the device models and the harness.

use std::fmt;

use crate::error::{Error, Result};

/// Tolerance on `|sum(P) - 1|` accepted when constructing a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// One-based index of a device state, `1 <= i <= N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateIndex(pub(crate) usize);

impl StateIndex {
    /// Checked constructor for a one-based index in a device with `n` states.
    pub fn new(i: usize, n: usize) -> Result<Self> {
        if i == 0 || i > n {
            return Err(Error::param(format!("state index {i} outside 1..={n}")));
        }
        Ok(StateIndex(i))
    }

    pub(crate) fn from_zero_based(i: usize) -> Self {
        StateIndex(i + 1)
    }

    /// The one-based value.
    pub fn get(self) -> usize {
        self.0
    }

    /// The zero-based position in vectors and matrices.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for StateIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-state occupation probabilities. Every entry lies in `[0, 1]` and the
/// entries sum to one within [`PROBABILITY_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::param(format!(
                "probability vector needs at least 2 entries, got {}",
                p.len()
            )));
        }
        if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::param(format!("probability {x} outside [0, 1]")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::param(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbabilityVector(p))
    }

    /// All mass on `state`.
    pub fn one_hot(state: StateIndex, n: usize) -> Result<Self> {
        StateIndex::new(state.get(), n)?;
        let mut p = vec![0.0; n];
        p[state.index()] = 1.0;
        Ok(ProbabilityVector(p))
    }

    pub(crate) fn from_raw(p: Vec<f64>) -> Self {
        ProbabilityVector(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, state: StateIndex) -> f64 {
        self.0[state.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Pairwise transition rates `w[from][to]` in 1/s. The diagonal is unused and
/// kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    n: usize,
    w: Vec<f64>,
}

impl RateTable {
    /// All-zero table for `n` states.
    pub fn zeros(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param(format!("need at least 2 states, got {n}")));
        }
        Ok(RateTable {
            n,
            w: vec![0.0; n * n],
        })
    }

    /// Builds a table from `(from, to, rate)` triples with one-based indices.
    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut table = Self::zeros(n)?;
        for &(i, j, rate) in entries {
            let from = StateIndex::new(i, n)?;
            let to = StateIndex::new(j, n)?;
            table.set(from, to, rate)?;
        }
        Ok(table)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: StateIndex, to: StateIndex) -> f64 {
        self.w[from.index() * self.n + to.index()]
    }

    /// Sets `w[from][to]`. Rates must be finite and non-negative; an infinite
    /// switching time is expressed as rate 0.
    pub fn set(&mut self, from: StateIndex, to: StateIndex, rate: f64) -> Result<()> {
        if from == to {
            return Err(Error::param(format!("self-transition {from}->{to}")));
        }
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::param(format!(
                "rate {from}->{to} must be finite and >= 0, got {rate}"
            )));
        }
        self.w[from.index() * self.n + to.index()] = rate;
        Ok(())
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }
}

/// Dense `N x N` generator in 1/s, stored row-major. Column `j` describes the
/// flow out of state `j`, so `dP/dt = W P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    w: Vec<f64>,
}

impl TransitionMatrix {
    pub fn zeros(n: usize) -> Self {
        TransitionMatrix {
            n,
            w: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from rows. Entries are taken verbatim; use
    /// [`TransitionMatrix::check_generator`] to validate.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::param("transition matrix must be square with n >= 2"));
        }
        Ok(TransitionMatrix {
            n,
            w: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    /// Entry at zero-based `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.n + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.w.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.at(i, j)).sum())
            .collect()
    }

    /// `max_i |W[i][i]|`, the largest total outflow rate.
    pub fn max_outflow(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i).abs()).fold(0.0, f64::max)
    }

    /// Verifies non-negative off-diagonals and `|column sum| <= tol`.
    pub fn check_generator(&self, tol: f64) -> Result<()> {
        for j in 0..self.n {
            let mut sum = 0.0;
            for i in 0..self.n {
                let x = self.at(i, j);
                if i != j && !(x >= 0.0) {
                    return Err(Error::param(format!(
                        "negative off-diagonal W[{i}][{j}] = {x}"
                    )));
                }
                sum += x;
            }
            if !(sum.abs() <= tol) {
                return Err(Error::param(format!("column {j} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub(crate) fn add_assign(&mut self, other: &TransitionMatrix) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
    }
}

impl std::ops::Add for &TransitionMatrix {
    type Output = TransitionMatrix;

    fn add(self, rhs: &TransitionMatrix) -> TransitionMatrix {
        assert_eq!(self.n, rhs.n, "matrix sizes differ");
        let mut out = self.clone();
        out.add_assign(rhs);
        out
    }
}
