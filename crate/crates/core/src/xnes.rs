//! Exponential natural evolution strategy over gradient-blend coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

const EIGEN_FLOOR: f64 = 1e-8;
/// Eigenvalues are also floored relative to the largest one, keeping the
/// condition number within what a double-precision Cholesky can factor.
const RELATIVE_FLOOR: f64 = 1e-12;

/// A batch of coefficient draws. `raw` are the Gaussian samples used for
/// adaptation; `coeffs` are the same vectors with the objective weight
/// replaced by its absolute value, used for branching.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSamples {
    pub raw: Vec<Vec<f64>>,
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CoeffDistribution {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    sigma_g: f64,
    eta_mu: f64,
    eta_sigma: f64,
    repairs: usize,
}

impl CoeffDistribution {
    pub fn new(dim: usize, sigma_g: f64) -> Result<Self> {
        if dim == 0 || !(sigma_g > 0.0) {
            return Err(Error::Config("xNES needs dim > 0 and sigma_g > 0".into()));
        }
        let d = dim as f64;
        Ok(Self {
            mu: DVector::zeros(dim),
            sigma: DMatrix::identity(dim, dim) * sigma_g,
            sigma_g,
            eta_mu: 1.0,
            eta_sigma: (9.0 + 3.0 * d.ln()) / (5.0 * d * d.sqrt()),
            repairs: 0,
        })
    }

    /// Distribution with an explicit mean and covariance.
    pub fn with_moments(mu: Vec<f64>, sigma: Vec<f64>, sigma_g: f64) -> Result<Self> {
        let mut d = Self::new(mu.len(), sigma_g)?;
        check_dim("xNES covariance", mu.len() * mu.len(), sigma.len())?;
        d.mu = DVector::from_vec(mu);
        d.sigma = DMatrix::from_row_slice(d.mu.len(), d.mu.len(), &sigma);
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mu.iter().copied().collect()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Number of times Σ had to be repaired to stay positive definite.
    pub fn repairs(&self) -> usize {
        self.repairs
    }

    /// Restores `μ = 0`, `Σ = σ_g·I`.
    pub fn reset(&mut self) {
        let d = self.dim();
        self.mu = DVector::zeros(d);
        self.sigma = DMatrix::identity(d, d) * self.sigma_g;
    }

    /// A factor `A` with `Σ = A·Aᵀ`, normally the lower Cholesky factor. A Σ
    /// that Cholesky rejects is first repaired by flooring its eigenvalues.
    fn factor(&mut self) -> DMatrix<f64> {
        let sym = (&self.sigma + self.sigma.transpose()) * 0.5;
        if let Some(c) = sym.clone().cholesky() {
            self.sigma = sym;
            return c.l();
        }
        self.repairs += 1;
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.max();
        let floor = EIGEN_FLOOR.max(top * RELATIVE_FLOOR);
        let vals = eig.eigenvalues.map(|v| v.max(floor));
        let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        let fixed = (&fixed + fixed.transpose()) * 0.5;
        if let Some(c) = fixed.clone().cholesky() {
            self.sigma = fixed;
            return c.l();
        }
        let a = &eig.eigenvectors * DMatrix::from_diagonal(&vals.map(f64::sqrt));
        self.sigma = &a * a.transpose();
        a
    }

    pub fn sample(&mut self, count: usize, rng: &mut Rng) -> CoeffSamples {
        let l = self.factor();
        let d = self.dim();
        let mut raw = Vec::with_capacity(count);
        let mut coeffs = Vec::with_capacity(count);
        for _ in 0..count {
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
            let c = &self.mu + &l * z;
            let r: Vec<f64> = c.iter().copied().collect();
            let mut a = r.clone();
            a[0] = a[0].abs();
            raw.push(r);
            coeffs.push(a);
        }
        CoeffSamples { raw, coeffs }
    }

    /// Natural-gradient update from raw samples and their improvements.
    /// Higher improvement ranks better; tied improvements share the mean of
    /// their rank utilities.
    pub fn adapt(&mut self, raw: &[Vec<f64>], improvements: &[f64]) -> Result<()> {
        let n = raw.len();
        check_dim("xNES improvements", n, improvements.len())?;
        if n == 0 {
            return Ok(());
        }
        if improvements.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("xNES improvement"));
        }
        let d = self.dim();
        let utilities = rank_utilities(improvements);
        let l = self.factor();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Config("singular xNES covariance factor".into()))?;
        let mut g_delta = DVector::zeros(d);
        let mut g_m = DMatrix::zeros(d, d);
        let eye = DMatrix::<f64>::identity(d, d);
        for (c, &u) in raw.iter().zip(&utilities) {
            check_dim("xNES sample", d, c.len())?;
            let s = &l_inv * (DVector::from_column_slice(c) - &self.mu);
            g_delta += &s * u;
            g_m += (&s * s.transpose() - &eye) * u;
        }
        self.mu += &l * g_delta * self.eta_mu;
        let eig = SymmetricEigen::new((&g_m + g_m.transpose()) * (0.5 * self.eta_sigma));
        let expm = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp)) * eig.eigenvectors.transpose();
        let next = &l * expm * l.transpose();
        self.sigma = (&next + next.transpose()) * 0.5;
        self.factor();
        Ok(())
    }
}

/// Zero-sum rank utilities `max(0, ln(λ/2 + 1) − ln k)` normalized, minus
/// `1/λ`, indexed like `scores`.
pub fn rank_utilities(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let base: Vec<f64> = (1..=n)
        .map(|k| ((n as f64 / 2.0 + 1.0).ln() - (k as f64).ln()).max(0.0))
        .collect();
    let total: f64 = base.iter().sum();
    let by_rank: Vec<f64> = base.iter().map(|b| b / total - 1.0 / n as f64).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean = by_rank[i..=j].iter().sum::<f64>() / (j - i + 1) as f64;
        for &k in &order[i..=j] {
            out[k] = mean;
        }
        i = j + 1;
    }
    out
}
