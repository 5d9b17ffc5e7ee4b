//! Normal-Inverse-Gamma linear model: posterior update, log marginal
//! likelihood (plain and on the tape), posterior means and prediction.
//!
//! Model: `y | β, σ² ~ N(Tβ, σ²I)`, `β | σ² ~ N(μ₀, σ²Σ₀)`, `σ² ~ IG(a₀, b₀)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Node, Tape};
use crate::numerics::{lgamma, Cholesky, DenseMatrix};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigPrior<T> {
    pub mu0: Vec<T>,
    pub sigma0: DenseMatrix<T>,
    pub a0: T,
    pub b0: T,
}

impl<T: Real> NigPrior<T> {
    /// `μ₀ = 0`, `Σ₀ = scale·I`.
    pub fn isotropic(dim: usize, scale: T, a0: T, b0: T) -> Self {
        Self {
            mu0: vec![T::zero(); dim],
            sigma0: DenseMatrix::scaled_identity(dim, scale),
            a0,
            b0,
        }
    }

    /// Defaults for an ensemble of `k` trees: `μ₀ = 0`, `Σ₀ = 10·I`, `a₀ = b₀ = 2`.
    pub fn default_for(k: usize) -> Self {
        Self::isotropic(k + 1, T::lit(10.0), T::lit(2.0), T::lit(2.0))
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.sigma0.rows() != d || self.sigma0.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "prior covariance",
                expected: d,
                found: self.sigma0.rows(),
            });
        }
        if !(self.a0 > T::zero() && self.b0 > T::zero()) {
            return Err(Error::Config("a0 and b0 must be positive".into()));
        }
        Cholesky::factor(&self.sigma0)?;
        Ok(())
    }

    /// Precomputes `Σ₀⁻¹`, `Σ₀⁻¹μ₀`, `μ₀ᵀΣ₀⁻¹μ₀` and `log|Σ₀|`.
    pub fn precompute(&self) -> Result<PriorCache<T>> {
        let ch = Cholesky::factor(&self.sigma0)?;
        let precision = ch.inverse();
        let pm = precision.matvec(&self.mu0)?;
        let quad = self.mu0.iter().zip(&pm).map(|(&a, &b)| a * b).sum();
        Ok(PriorCache {
            precision,
            precision_mu: pm,
            mu_quad: quad,
            logdet_sigma0: ch.logdet(),
            lgamma_a0: lgamma(self.a0)?,
            a0_log_b0: self.a0 * self.b0.ln(),
        })
    }
}

/// Prior quantities that do not depend on the data.
#[derive(Debug, Clone)]
pub struct PriorCache<T> {
    pub precision: DenseMatrix<T>,
    pub precision_mu: Vec<T>,
    pub mu_quad: T,
    pub logdet_sigma0: T,
    pub lgamma_a0: T,
    pub a0_log_b0: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigPosterior<T> {
    pub mu_n: Vec<T>,
    pub sigma_n: DenseMatrix<T>,
    pub a_n: T,
    pub b_n: T,
    /// `log|Σₙ|`, kept to avoid refactoring for the marginal.
    pub logdet_sigma_n: T,
    pub n: usize,
}

fn check_dims<T: Real>(t: &DenseMatrix<T>, y: &[T], prior: &NigPrior<T>) -> Result<()> {
    if t.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "design rows vs response",
            expected: t.rows(),
            found: y.len(),
        });
    }
    if t.cols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "design columns vs prior",
            expected: prior.dim(),
            found: t.cols(),
        });
    }
    for i in 0..t.rows() {
        if let Some(j) = t.row(i).iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign { row: i, col: j });
        }
    }
    Ok(())
}

pub fn nig_update<T: Real>(
    t: &DenseMatrix<T>,
    y: &[T],
    prior: &NigPrior<T>,
) -> Result<NigPosterior<T>> {
    let cache = prior.precompute()?;
    nig_update_cached(t, y, prior, &cache)
}

pub fn nig_update_cached<T: Real>(
    t: &DenseMatrix<T>,
    y: &[T],
    prior: &NigPrior<T>,
    cache: &PriorCache<T>,
) -> Result<NigPosterior<T>> {
    check_dims(t, y, prior)?;
    let n = y.len();
    let lambda = cache.precision.add(&t.gram())?;
    let ch = Cholesky::factor(&lambda)?;
    let ty = t.tr_matvec(y)?;
    let r: Vec<T> = cache
        .precision_mu
        .iter()
        .zip(&ty)
        .map(|(&a, &b)| a + b)
        .collect();
    let mu_n = ch.solve_vec(&r);
    // b_n in residual form: ‖y − Tμₙ‖² + (μₙ−μ₀)ᵀΣ₀⁻¹(μₙ−μ₀)
    let fitted = t.matvec(&mu_n)?;
    let rss: T = y
        .iter()
        .zip(&fitted)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let d: Vec<T> = mu_n.iter().zip(&prior.mu0).map(|(&a, &b)| a - b).collect();
    let pd = cache.precision.matvec(&d)?;
    let shrink: T = d.iter().zip(&pd).map(|(&a, &b)| a * b).sum();
    let half = T::lit(0.5);
    Ok(NigPosterior {
        sigma_n: ch.inverse(),
        logdet_sigma_n: -ch.logdet(),
        mu_n,
        a_n: prior.a0 + half * T::from_usize(n).unwrap(),
        b_n: prior.b0 + half * (rss + shrink),
        n,
    })
}

fn log_marginal_from<T: Real>(post: &NigPosterior<T>, cache: &PriorCache<T>) -> Result<T> {
    let half = T::lit(0.5);
    let n = T::from_usize(post.n).unwrap();
    Ok(lgamma(post.a_n)? - cache.lgamma_a0
        + half * (post.logdet_sigma_n - cache.logdet_sigma0)
        + cache.a0_log_b0
        - post.a_n * post.b_n.ln()
        - half * n * (T::TAU()).ln())
}

/// Complete log marginal likelihood `log p(y | T)`.
pub fn log_marginal<T: Real>(t: &DenseMatrix<T>, y: &[T], prior: &NigPrior<T>) -> Result<T> {
    let cache = prior.precompute()?;
    let post = nig_update_cached(t, y, prior, &cache)?;
    log_marginal_from(&post, &cache)
}

pub fn log_marginal_of<T: Real>(post: &NigPosterior<T>, prior: &NigPrior<T>) -> Result<T> {
    log_marginal_from(post, &prior.precompute()?)
}

/// Design matrix whose entries live on a tape, stored by column.
#[derive(Debug, Clone)]
pub struct TapeDesign<T> {
    pub rows: usize,
    pub columns: Vec<Vec<Node<T>>>,
}

impl<T: Real> TapeDesign<T> {
    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn values(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.rows, self.cols());
        for (j, col) in self.columns.iter().enumerate() {
            for (i, node) in col.iter().enumerate() {
                m[(i, j)] = node.value();
            }
        }
        m
    }
}

/// Tape form of [`log_marginal`]. The Cholesky factor of `Σ₀⁻¹ + TᵀT` and the
/// forward solve are unrolled into scalar nodes; `b_n` uses
/// `rᵀΛ⁻¹r = ‖L⁻¹r‖²`. A failed factorization shows up as a non-finite value.
pub fn log_marginal_tape<T: Real>(
    tape: &mut Tape<T>,
    design: &TapeDesign<T>,
    y: &[T],
    prior: &NigPrior<T>,
    cache: &PriorCache<T>,
) -> Result<Node<T>> {
    let m = design.cols();
    if m != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "design columns vs prior",
            expected: prior.dim(),
            found: m,
        });
    }
    if design.rows != y.len() {
        return Err(Error::DimensionMismatch {
            context: "design rows vs response",
            expected: design.rows,
            found: y.len(),
        });
    }
    let half = T::lit(0.5);
    let n = y.len();
    let mut l: Vec<Vec<Option<Node<T>>>> = vec![vec![None; m]; m];
    let mut logdet_terms = Vec::with_capacity(m);
    for j in 0..m {
        for i in j..m {
            let g = tape.dot(&design.columns[i], &design.columns[j]);
            let mut s = tape.add_const(g, cache.precision[(i, j)]);
            if j > 0 {
                let li: Vec<_> = (0..j).map(|k| l[i][k].unwrap()).collect();
                let lj: Vec<_> = (0..j).map(|k| l[j][k].unwrap()).collect();
                let acc = tape.dot(&li, &lj);
                s = tape.sub(s, acc);
            }
            if i == j {
                let d = tape.sqrt(s);
                logdet_terms.push(tape.ln(d));
                l[j][j] = Some(d);
            } else {
                l[i][j] = Some(tape.div(s, l[j][j].unwrap()));
            }
        }
    }
    // z = L⁻¹ r, r = Σ₀⁻¹μ₀ + Tᵀy
    let mut z: Vec<Node<T>> = Vec::with_capacity(m);
    for i in 0..m {
        let ty = tape.lin_comb(y, &design.columns[i]);
        let mut s = tape.add_const(ty, cache.precision_mu[i]);
        if i > 0 {
            let li: Vec<_> = (0..i).map(|k| l[i][k].unwrap()).collect();
            let acc = tape.dot(&li, &z);
            s = tape.sub(s, acc);
        }
        z.push(tape.div(s, l[i][i].unwrap()));
    }
    let zz = tape.dot(&z, &z);
    let yy: T = y.iter().map(|&v| v * v).sum();
    let a_n = prior.a0 + half * T::from_usize(n).unwrap();
    // b_n = b₀ + ½(yᵀy + μ₀ᵀΣ₀⁻¹μ₀ − zᵀz)
    let neg_half_zz = tape.mul_const(zz, -half);
    let b_n = tape.add_const(neg_half_zz, prior.b0 + half * (yy + cache.mu_quad));
    let log_b = tape.ln(b_n);
    let half_logdet_lambda = tape.sum(&logdet_terms);
    let c = lgamma(a_n)? - cache.lgamma_a0 - half * cache.logdet_sigma0 + cache.a0_log_b0
        - half * T::from_usize(n).unwrap() * T::TAU().ln();
    // −½ log|Λ| − a_n log b_n + c
    let neg_a_log_b = tape.mul_const(log_b, -a_n);
    let t1 = tape.sub(neg_a_log_b, half_logdet_lambda);
    Ok(tape.add_const(t1, c))
}

/// `β_PM = μₙ`, `σ²_PM = bₙ/(aₙ − 1)`.
pub fn posterior_means<T: Real>(post: &NigPosterior<T>) -> Result<(Vec<T>, T)> {
    if post.a_n <= T::one() {
        return Err(Error::UndefinedVarianceMean(
            post.a_n.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok((post.mu_n.clone(), post.b_n / (post.a_n - T::one())))
}

pub fn predict<T: Real>(t: &DenseMatrix<T>, beta: &[T]) -> Result<Vec<T>> {
    t.matvec(beta)
}
