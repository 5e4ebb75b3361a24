use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// Fixed observables over a state vector. Raw coordinates always come
/// first, so the state is recovered linearly from the leading rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dictionary {
    pub constant: bool,
    /// Highest monomial degree; 1 keeps only the coordinates.
    pub degree: usize,
    /// Each scale `a` adds `sin(a x_i)` and `cos(a x_i)` for every coordinate.
    pub trig_scales: Vec<f64>,
}

impl Default for Dictionary {
    fn default() -> Self {
        Self { constant: false, degree: 2, trig_scales: vec![std::f64::consts::PI] }
    }
}

impl Dictionary {
    pub fn identity() -> Self {
        Self { constant: false, degree: 1, trig_scales: Vec::new() }
    }

    pub fn polynomial(degree: usize) -> Self {
        Self { constant: false, degree: degree.max(1), trig_scales: Vec::new() }
    }

    /// Number of features for an `n`-dimensional state.
    pub fn len(&self, n: usize) -> usize {
        let mut count = n + usize::from(self.constant);
        for d in 2..=self.degree {
            count += monomials(n, d).len();
        }
        count + 2 * n * self.trig_scales.len()
    }

    pub fn is_empty(&self, n: usize) -> bool {
        self.len(n) == 0
    }

    /// Lifts every column of `x`.
    pub fn features(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let mut rows: Vec<Vec<f64>> = x.to_rows();
        if self.constant {
            rows.push(vec![1.0; x.cols()]);
        }
        for d in 2..=self.degree {
            for idx in monomials(n, d) {
                rows.push((0..x.cols()).map(|c| idx.iter().map(|&i| x[(i, c)]).product()).collect());
            }
        }
        for &a in &self.trig_scales {
            for i in 0..n {
                rows.push(x.row(i).iter().map(|v| (a * v).sin()).collect());
                rows.push(x.row(i).iter().map(|v| (a * v).cos()).collect());
            }
        }
        Matrix::from_vec(rows.len(), x.cols(), rows.concat()).expect("rows have equal length")
    }

    /// Linear map taking features back to the state.
    pub fn recovery(&self, n: usize) -> Matrix {
        Matrix::from_fn(n, self.len(n), |i, j| if i == j { 1.0 } else { 0.0 })
    }
}

/// Nondecreasing index tuples of length `d` over `0..n`.
fn monomials(n: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(d);
    fn rec(n: usize, d: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, d, i, cur, out);
            cur.pop();
        }
    }
    rec(n, d, 0, &mut cur, &mut out);
    out
}
