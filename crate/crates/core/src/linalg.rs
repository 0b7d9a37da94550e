//! Sparse solves for ergodic Markov generators.
//!
//! With the anchor column of a generator `L` replaced by `−1`, one LU
//! factorization gives both the Poisson equation `L V + c = ρ, V(anchor) = 0`
//! (direct solve, `ρ` lands in the anchor slot) and the invariant measure
//! `πᵀ L = 0, Σπ = 1` (transposed solve against `−e_anchor`).

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::Mat;

/// Sparsity pattern of a bordered generator, reusable across numeric values.
pub(crate) struct BorderedPattern {
    n: usize,
    anchor: usize,
    /// Generator entries kept (those off the anchor column).
    keep: Vec<usize>,
    entries: usize,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

pub(crate) struct BorderedLu {
    n: usize,
    anchor: usize,
    lu: Lu<usize, f64>,
}

impl BorderedPattern {
    /// `pattern` lists generator entries `(row, col)` in the order their
    /// values will later be supplied; duplicates are summed.
    pub fn new(n: usize, anchor: usize, pattern: &[(usize, usize)]) -> Result<Self, String> {
        let mut keep = Vec::with_capacity(pattern.len());
        let mut pairs = Vec::with_capacity(pattern.len() + n);
        for (k, &(r, c)) in pattern.iter().enumerate() {
            if c != anchor {
                keep.push(k);
                pairs.push(Pair { row: r, col: c });
            }
        }
        pairs.extend((0..n).map(|r| Pair { row: r, col: anchor }));
        let (symbolic, argsort) =
            SymbolicSparseColMat::try_new_from_indices(n, n, &pairs).map_err(|e| format!("{e:?}"))?;
        let lu = SymbolicLu::try_new(symbolic.as_ref()).map_err(|e| format!("{e:?}"))?;
        Ok(BorderedPattern { n, anchor, keep, entries: pattern.len(), symbolic, argsort, lu })
    }

    pub fn factor(&self, values: &[f64]) -> Result<BorderedLu, String> {
        assert_eq!(values.len(), self.entries, "values do not match the pattern");
        let mut vals: Vec<f64> = self.keep.iter().map(|&k| values[k]).collect();
        vals.extend(std::iter::repeat_n(-1.0, self.n));
        let mat = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &vals)
            .map_err(|e| format!("{e:?}"))?;
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), mat.as_ref()).map_err(|e| format!("{e:?}"))?;
        Ok(BorderedLu { n: self.n, anchor: self.anchor, lu })
    }
}

impl BorderedLu {
    /// `(ρ, V)` with `V(anchor) = 0`.
    pub fn solve_value(&self, cost: &[f64]) -> Result<(f64, Vec<f64>), String> {
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| -cost[i]);
        self.lu.solve_in_place(rhs.as_mut());
        let mut v: Vec<f64> = (0..self.n).map(|i| rhs[(i, 0)]).collect();
        let rho = v[self.anchor];
        v[self.anchor] = 0.0;
        if !rho.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err("non-finite solution".into());
        }
        Ok((rho, v))
    }

    /// Invariant probability vector.
    pub fn stationary(&self) -> Result<Vec<f64>, String> {
        let mut rhs = Mat::<f64>::zeros(self.n, 1);
        rhs[(self.anchor, 0)] = -1.0;
        self.lu.solve_transpose_in_place(rhs.as_mut());
        let pi: Vec<f64> = (0..self.n).map(|i| rhs[(i, 0)]).collect();
        if pi.iter().any(|x| !x.is_finite()) {
            return Err("non-finite invariant measure".into());
        }
        Ok(pi)
    }
}
