//! Type-II Anderson acceleration for fixed-point maps `x = G(x)` on flat
//! vectors.
//!
//! With residuals `f_k = G(x_k) - x_k` and the differences
//! `ΔF = [f_{j+1} - f_j]`, `ΔG = [G(x_{j+1}) - G(x_j)]` over the last `m`
//! iterates, the next iterate is
//!
//! ```text
//! x_{k+1} = G(x_k) - ΔG·θ,   θ = argmin ‖f_k - ΔF·θ‖₂
//! ```
//!
//! `ΔF` is kept as a thin QR factorisation updated one column at a time;
//! the oldest column is removed with Givens rotations, both when the memory
//! is full and while the triangular factor is ill-conditioned.

use std::collections::VecDeque;

use nalgebra::DMatrix;

/// Condition number of `R` above which the oldest columns are dropped.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// What a call to [`AndersonMemory::step`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Returned `G(x)` unchanged (empty memory).
    Picard,
    /// Mixed over this many stored differences.
    Mixed(usize),
    /// The least-squares problem was singular; returned `G(x)`.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct AndersonMemory {
    depth: usize,
    condition_limit: f64,
    /// Orthonormal columns spanning the stored `ΔF`, oldest first.
    q: VecDeque<Vec<f64>>,
    /// Upper-triangular factor, `r[i][j]` for `i ≤ j`.
    r: Vec<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    fallbacks: usize,
    dropped: usize,
}

impl AndersonMemory {
    pub fn new(depth: usize) -> Self {
        AndersonMemory {
            depth,
            condition_limit: DEFAULT_CONDITION_LIMIT,
            q: VecDeque::new(),
            r: Vec::new(),
            dg: VecDeque::new(),
            prev: None,
            fallbacks: 0,
            dropped: 0,
        }
    }

    pub fn with_condition_limit(mut self, limit: f64) -> Self {
        self.condition_limit = limit;
        self
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Stored difference pairs.
    pub fn len(&self) -> usize {
        self.dg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dg.is_empty()
    }

    /// Steps that fell back to plain Picard because of singularity.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Columns dropped for conditioning.
    pub fn dropped_for_conditioning(&self) -> usize {
        self.dropped
    }

    /// Forgets all history, including the previous iterate.
    pub fn reset(&mut self) {
        self.q.clear();
        self.r.clear();
        self.dg.clear();
        self.prev = None;
    }

    /// Records `(x, G(x))` and returns the next iterate.
    pub fn step(&mut self, x: &[f64], gx: &[f64]) -> (Vec<f64>, StepKind) {
        debug_assert_eq!(x.len(), gx.len());
        let f = sub(gx, x);
        if self.depth == 0 {
            return (gx.to_vec(), StepKind::Picard);
        }
        if let Some((f_prev, g_prev)) = self.prev.take() {
            if self.len() == self.depth {
                self.delete_oldest();
            }
            self.append(sub(&f, &f_prev));
            self.dg.push_back(sub(gx, &g_prev));
        }
        self.prev = Some((f.clone(), gx.to_vec()));
        while !self.is_empty() && self.condition() > self.condition_limit {
            self.delete_oldest();
            self.dropped += 1;
        }
        if self.is_empty() {
            return (gx.to_vec(), StepKind::Picard);
        }
        let k = self.len();
        let mut theta = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = dot(&self.q[i], &f);
            for j in i + 1..k {
                s -= self.r[i][j] * theta[j];
            }
            theta[i] = s / self.r[i][i];
        }
        if theta.iter().any(|t| !t.is_finite()) {
            self.fallbacks += 1;
            return (gx.to_vec(), StepKind::Fallback);
        }
        let mut next = gx.to_vec();
        for (t, d) in theta.iter().zip(&self.dg) {
            axpy(-t, d, &mut next);
        }
        (next, StepKind::Mixed(k))
    }

    fn append(&mut self, mut v: Vec<f64>) {
        let k = self.q.len();
        let mut rcol = vec![0.0; k + 1];
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (i, qi) in self.q.iter().enumerate() {
                let c = dot(qi, &v);
                rcol[i] += c;
                axpy(-c, qi, &mut v);
            }
        }
        let nrm = dot(&v, &v).sqrt();
        rcol[k] = nrm;
        if nrm > 0.0 {
            v.iter_mut().for_each(|x| *x /= nrm);
        }
        for (row, &c) in self.r.iter_mut().zip(&rcol) {
            row.push(c);
        }
        let mut last = vec![0.0; k + 1];
        last[k] = nrm;
        self.r.push(last);
        self.q.push_back(v);
    }

    fn delete_oldest(&mut self) {
        let k = self.len();
        self.dg.pop_front();
        if k == 1 {
            self.q.clear();
            self.r.clear();
            return;
        }
        // drop the first column; R becomes upper Hessenberg
        for row in self.r.iter_mut() {
            row.remove(0);
        }
        for i in 0..k - 1 {
            let (a, b) = (self.r[i][i], self.r[i + 1][i]);
            let rho = a.hypot(b);
            if rho == 0.0 {
                continue;
            }
            let (c, s) = (a / rho, b / rho);
            for j in i..k - 1 {
                let (x, y) = (self.r[i][j], self.r[i + 1][j]);
                self.r[i][j] = c * x + s * y;
                self.r[i + 1][j] = -s * x + c * y;
            }
            let mut a_col = std::mem::take(&mut self.q[i]);
            let mut b_col = std::mem::take(&mut self.q[i + 1]);
            for (x, y) in a_col.iter_mut().zip(b_col.iter_mut()) {
                let (xa, yb) = (*x, *y);
                *x = c * xa + s * yb;
                *y = -s * xa + c * yb;
            }
            self.q[i] = a_col;
            self.q[i + 1] = b_col;
        }
        self.r.pop();
        self.q.pop_back();
    }

    fn condition(&self) -> f64 {
        let k = self.len();
        let m = DMatrix::from_fn(k, k, |i, j| if i <= j { self.r[i][j] } else { 0.0 });
        let sv = m.singular_values();
        let (mx, mn) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
        if mn == 0.0 {
            f64::INFINITY
        } else {
            mx / mn
        }
    }
}
