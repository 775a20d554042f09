use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `I + B diag(w) Bᵀ` with orthonormal columns in `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankOperator {
    dim: usize,
    basis: DMatrix<f64>,
    weights: DVector<f64>,
}

impl LowRankOperator {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            basis: DMatrix::zeros(dim, 0),
            weights: DVector::zeros(0),
        }
    }

    /// `basis` need not be orthonormal for application, but truncation by
    /// eigenvalue magnitude assumes it is.
    pub fn new(basis: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if basis.ncols() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.ncols(),
                got: weights.len(),
            });
        }
        Ok(Self {
            dim: basis.nrows(),
            basis,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return v.clone();
        }
        let c = self.basis.tr_mul(v).component_mul(&self.weights);
        v + &self.basis * c
    }

    /// Keeps the `r` components largest in `|w|`; ties keep the earlier
    /// column.
    pub fn truncated(&self, r: usize) -> Self {
        if r >= self.rank() {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.rank()).collect();
        order.sort_by(|&a, &b| self.weights[b].abs().total_cmp(&self.weights[a].abs()).then(a.cmp(&b)));
        order.truncate(r);
        order.sort_unstable();
        Self {
            dim: self.dim,
            basis: self.basis.select_columns(&order),
            weights: self.weights.select_rows(&order),
        }
    }
}

/// Re-expresses `Σ Bₖ diag(wₖ) Bₖᵀ` as `Q diag(e) Qᵀ` with orthonormal `Q`.
///
/// Works in the span of the stacked columns: thin QR, then a symmetric
/// eigendecomposition of the small core `R W Rᵀ`.
pub(crate) fn orthonormal_form(
    dim: usize,
    blocks: &[(&DMatrix<f64>, &DMatrix<f64>)],
) -> (DMatrix<f64>, DVector<f64>) {
    let total: usize = blocks.iter().map(|b| b.0.ncols()).sum();
    if total == 0 {
        return (DMatrix::zeros(dim, 0), DVector::zeros(0));
    }
    let mut stacked = DMatrix::zeros(dim, total);
    let mut core = DMatrix::zeros(total, total);
    let mut off = 0;
    for (basis, weights) in blocks {
        let k = basis.ncols();
        stacked.columns_mut(off, k).copy_from(basis);
        core.view_mut((off, off), (k, k)).copy_from(weights);
        off += k;
    }
    let qr = stacked.qr();
    let (q, r) = (qr.q(), qr.r());
    let inner = &r * core * r.transpose();
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.symmetric_eigen();
    (q * eig.eigenvectors, eig.eigenvalues)
}

/// Gaussian belief over `A⁻¹`, summarized by its posterior mean
/// `H_M = H₀ + U diag(E) Uᵀ` and a scalar scale `σ`.
///
/// `U` has orthonormal columns, so `E` holds the eigenvalues of the
/// update. Every stored belief is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBelief {
    prior: LowRankOperator,
    scale: f64,
    u: DMatrix<f64>,
    e: DVector<f64>,
    observations: usize,
}

impl MatrixBelief {
    pub fn identity(dim: usize) -> Self {
        Self::from_prior(LowRankOperator::identity(dim))
    }

    pub fn from_prior(prior: LowRankOperator) -> Self {
        let dim = prior.dim();
        Self {
            prior,
            scale: 1.0,
            u: DMatrix::zeros(dim, 0),
            e: DVector::zeros(0),
            observations: 0,
        }
    }

    pub(crate) fn from_parts(
        prior: LowRankOperator,
        u: DMatrix<f64>,
        e: DVector<f64>,
        observations: usize,
        scale: f64,
    ) -> Self {
        Self {
            prior,
            scale,
            u,
            e,
            observations,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn prior(&self) -> &LowRankOperator {
        &self.prior
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn e(&self) -> &DVector<f64> {
        &self.e
    }

    /// Number of absorbed `(s, y)` observations.
    pub fn observations(&self) -> usize {
        self.observations
    }

    /// `H₀ + U E Uᵀ` folded into a single identity-plus-low-rank operator.
    pub fn collapse(&self) -> LowRankOperator {
        if self.e.is_empty() {
            return self.prior.clone();
        }
        let wp = DMatrix::from_diagonal(self.prior.weights());
        let we = DMatrix::from_diagonal(&self.e);
        let (basis, weights) =
            orthonormal_form(self.dim(), &[(self.prior.basis(), &wp), (&self.u, &we)]);
        LowRankOperator {
            dim: self.dim(),
            basis,
            weights,
        }
    }
}

/// `H_M v = H₀ v + U (E (Uᵀ v))`.
pub fn posterior_mean_apply(belief: &MatrixBelief, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != belief.dim() {
        return Err(Error::DimensionMismatch {
            expected: belief.dim(),
            got: v.len(),
        });
    }
    let mut out = belief.prior.apply(v);
    if !belief.e.is_empty() {
        let c = belief.u.tr_mul(v).component_mul(&belief.e);
        out += &belief.u * c;
    }
    Ok(out)
}

/// Keeps the `r` eigencomponents of `U E Uᵀ` largest in magnitude.
/// `r = 0` resets to the prior mean; `r ≥ rank` changes nothing.
pub fn truncate_belief(belief: &MatrixBelief, r: usize) -> MatrixBelief {
    if r >= belief.e.len() {
        return belief.clone();
    }
    let mut order: Vec<usize> = (0..belief.e.len()).collect();
    order.sort_by(|&a, &b| belief.e[b].abs().total_cmp(&belief.e[a].abs()).then(a.cmp(&b)));
    order.truncate(r);
    order.sort_unstable();
    MatrixBelief {
        prior: belief.prior.clone(),
        scale: belief.scale,
        u: belief.u.select_columns(&order),
        e: belief.e.select_rows(&order),
        observations: belief.observations,
    }
}

/// The truncated posterior mean of one solve, as the prior mean of the next.
pub fn recycled_prior(belief: &MatrixBelief, r: usize) -> LowRankOperator {
    belief.collapse().truncated(r)
}

/// Truncation rank used when none is given: twice the expected iteration
/// count, capped at 64.
pub fn default_truncation_rank(expected_iterations: usize) -> usize {
    (2 * expected_iterations).min(64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_belief_is_identity() {
        let b = MatrixBelief::identity(4);
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(posterior_mean_apply(&b, &v).unwrap(), v);
        assert!(posterior_mean_apply(&b, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn orthonormal_form_reproduces_sum() {
        let b1 = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let w1 = DMatrix::from_element(1, 1, 2.0);
        let b2 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let w2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, -1.0]);
        let (q, e) = orthonormal_form(3, &[(&b1, &w1), (&b2, &w2)]);
        let want = &b1 * &w1 * b1.transpose() + &b2 * &w2 * b2.transpose();
        let got = &q * DMatrix::from_diagonal(&e) * q.transpose();
        assert!((want - got).amax() < 1e-12);
        assert!((q.tr_mul(&q) - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}
