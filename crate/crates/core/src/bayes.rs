//! Last-layer Laplace approximation, deep ensembles, Laplace ensembles and
//! the Gaussian-to-Dirichlet bridge.
//!
//! Parameters are indexed like [`SoftmaxHead::weights`]: `j * (dim + 1) + i`
//! with the bias at `i = dim`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{softmax, train_samples, ClassifierError, Samples, SoftmaxHead, TrainConfig};
use crate::fsutil::{write_atomic, Reader};

pub const POSTERIOR_MAGIC: &[u8; 4] = b"COV1";

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("Hessian is not positive definite; try a larger prior precision (lambda = {lambda})")]
    Cholesky { lambda: f64 },
    #[error("variance {value} at class {index} is not positive")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("{what}: got {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ensemble member {index} failed: {source}")]
    Member {
        index: usize,
        #[source]
        source: ClassifierError,
    },
    #[error("bridge prediction needs a fitted posterior for every member")]
    MissingPosterior,
    #[error("posterior file: {0}")]
    Format(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which covariance representation [`fit_laplace`] produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Full when `D <= full_threshold`, otherwise diagonal.
    #[default]
    Auto,
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaplaceConfig {
    pub prior_precision: f64,
    pub mode: CovarianceMode,
    pub full_threshold: usize,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            prior_precision: 1.0,
            mode: CovarianceMode::Auto,
            full_threshold: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `D x D`, symmetric positive definite.
    Full(DMatrix<f64>),
    /// Marginal variances only.
    Diagonal(Vec<f64>),
}

/// `N(theta*, Sigma)` over the flattened head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub head: SoftmaxHead,
    pub covariance: Covariance,
    pub prior_precision: f64,
}

impl GaussianPosterior {
    pub fn mean(&self) -> &[f64] {
        self.head.weights()
    }

    pub fn param_count(&self) -> usize {
        self.head.weights().len()
    }

    /// Diagonal-only copy; a no-op for diagonal posteriors.
    pub fn to_diagonal(&self) -> Self {
        let covariance = match &self.covariance {
            Covariance::Full(m) => Covariance::Diagonal(m.diagonal().iter().copied().collect()),
            Covariance::Diagonal(d) => Covariance::Diagonal(d.clone()),
        };
        Self {
            head: self.head.clone(),
            covariance,
            prior_precision: self.prior_precision,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.head.to_bytes();
        out.extend_from_slice(POSTERIOR_MAGIC);
        let (flag, payload): (u8, Vec<f64>) = match &self.covariance {
            // Column-major and row-major agree for a symmetric matrix.
            Covariance::Full(m) => (0, m.as_slice().to_vec()),
            Covariance::Diagonal(d) => (1, d.clone()),
        };
        out.push(flag);
        out.extend_from_slice(&self.prior_precision.to_le_bytes());
        out.extend_from_slice(&(self.param_count() as u32).to_le_bytes());
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BayesError> {
        let fmt = |m: &str| BayesError::Format(m.to_string());
        let (head, rest) = SoftmaxHead::read_prefix(bytes)?;
        let mut r = Reader::new(&bytes[bytes.len() - rest..]);
        if r.take(4) != Some(POSTERIOR_MAGIC.as_slice()) {
            return Err(fmt("missing covariance block"));
        }
        let flag = r.u8().ok_or_else(|| fmt("truncated covariance header"))?;
        let lambda = r.f64().ok_or_else(|| fmt("truncated covariance header"))?;
        let d = r.u32().ok_or_else(|| fmt("truncated covariance header"))? as usize;
        if d != head.weights().len() {
            return Err(BayesError::Dimension {
                what: "covariance size",
                got: d,
                expected: head.weights().len(),
            });
        }
        let n = match flag {
            0 => d * d,
            1 => d,
            other => return Err(BayesError::Format(format!("unknown covariance mode {other}"))),
        };
        if r.remaining() != n * 8 {
            return Err(BayesError::Format(format!("expected {} covariance bytes, found {}", n * 8, r.remaining())));
        }
        let payload: Vec<f64> = (0..n).map(|_| r.f64().unwrap()).collect();
        let covariance = if flag == 0 {
            Covariance::Full(DMatrix::from_vec(d, d, payload))
        } else {
            Covariance::Diagonal(payload)
        };
        Ok(Self {
            head,
            covariance,
            prior_precision: lambda,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BayesError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BayesError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-sample `p` under `head`, and the augmented design matrix `[X 1]`.
fn design(head: &SoftmaxHead, samples: &Samples) -> (DMatrix<f64>, Vec<Vec<f64>>) {
    let (n, d) = (samples.len(), samples.dim);
    let phi = DMatrix::from_fn(n, d + 1, |r, c| if c == d { 1.0 } else { samples.row(r)[c] });
    let probs = (0..n).map(|r| softmax(&head.logits(samples.row(r)))).collect();
    (phi, probs)
}

fn check_samples(head: &SoftmaxHead, samples: &Samples) -> Result<(), BayesError> {
    if !samples.is_empty() && samples.dim != head.dim() {
        return Err(BayesError::Dimension {
            what: "feature dimension",
            got: samples.dim,
            expected: head.dim(),
        });
    }
    Ok(())
}

/// Generalized Gauss-Newton Hessian of the negative log posterior,
/// `sum_n (diag p_n - p_n p_n^T) (x) phi_n phi_n^T + lambda I`. For a linear
/// softmax model this is the exact Hessian. Labels do not enter.
pub fn ggn_hessian(head: &SoftmaxHead, samples: &Samples, lambda: f64) -> Result<DMatrix<f64>, BayesError> {
    check_samples(head, samples)?;
    let (k, s) = (head.classes(), head.dim() + 1);
    let dd = k * s;
    let mut h = DMatrix::<f64>::identity(dd, dd) * lambda;
    if samples.is_empty() {
        return Ok(h);
    }
    let (phi, probs) = design(head, samples);
    let n = samples.len();
    for j in 0..k {
        for l in j..k {
            let mut scaled = phi.clone();
            for r in 0..n {
                let c = probs[r][j] * (if j == l { 1.0 } else { 0.0 } - probs[r][l]);
                scaled.row_mut(r).scale_mut(c);
            }
            let block = phi.tr_mul(&scaled);
            let mut upper = h.view_mut((j * s, l * s), (s, s));
            upper += &block;
            if j != l {
                let mut lower = h.view_mut((l * s, j * s), (s, s));
                lower += block.transpose();
            }
        }
    }
    Ok(h)
}

/// Diagonal of [`ggn_hessian`] without forming the matrix.
pub fn ggn_diagonal(head: &SoftmaxHead, samples: &Samples, lambda: f64) -> Result<Vec<f64>, BayesError> {
    check_samples(head, samples)?;
    let (k, d) = (head.classes(), head.dim());
    let s = d + 1;
    let mut diag = vec![lambda; k * s];
    for r in 0..samples.len() {
        let p = softmax(&head.logits(samples.row(r)));
        let f = samples.row(r);
        for j in 0..k {
            let c = p[j] * (1.0 - p[j]);
            let row = &mut diag[j * s..(j + 1) * s];
            for (v, &x) in row[..d].iter_mut().zip(f) {
                *v += c * x * x;
            }
            row[d] += c;
        }
    }
    Ok(diag)
}

/// Laplace approximation around a trained head.
pub fn fit_laplace(head: &SoftmaxHead, samples: &Samples, cfg: &LaplaceConfig) -> Result<GaussianPosterior, BayesError> {
    let lambda = cfg.prior_precision;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(BayesError::Config(format!("prior precision must be positive, got {lambda}")));
    }
    let dd = head.weights().len();
    let full = match cfg.mode {
        CovarianceMode::Full => true,
        CovarianceMode::Diagonal => false,
        CovarianceMode::Auto => dd <= cfg.full_threshold,
    };
    let covariance = if full {
        let h = ggn_hessian(head, samples, lambda)?;
        let chol = h.cholesky().ok_or(BayesError::Cholesky { lambda })?;
        let inv = chol.inverse();
        Covariance::Full((&inv + inv.transpose()) * 0.5)
    } else {
        let diag = ggn_diagonal(head, samples, lambda)?;
        if diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(BayesError::Cholesky { lambda });
        }
        Covariance::Diagonal(diag.into_iter().map(|v| 1.0 / v).collect())
    };
    Ok(GaussianPosterior {
        head: head.clone(),
        covariance,
        prior_precision: lambda,
    })
}

/// Logit mean and per-class marginal variance under the linearized
/// posterior. Cross-class terms are dropped.
pub fn logit_gaussian<T: Copy + Into<f64>>(post: &GaussianPosterior, f: &[T]) -> Result<(Vec<f64>, Vec<f64>), BayesError> {
    let head = &post.head;
    if f.len() != head.dim() {
        return Err(BayesError::Dimension {
            what: "feature dimension",
            got: f.len(),
            expected: head.dim(),
        });
    }
    let s = head.dim() + 1;
    let phi: Vec<f64> = f.iter().map(|&v| v.into()).chain(std::iter::once(1.0)).collect();
    let mu = head.logits(f);
    let var = (0..head.classes())
        .map(|j| match &post.covariance {
            Covariance::Full(m) => {
                let block = m.view((j * s, j * s), (s, s));
                let mut q = 0.0;
                for b in 0..s {
                    let col = block.column(b);
                    let dot: f64 = col.iter().zip(&phi).map(|(c, x)| c * x).sum();
                    q += phi[b] * dot;
                }
                q
            }
            Covariance::Diagonal(d) => d[j * s..(j + 1) * s].iter().zip(&phi).map(|(v, x)| v * x * x).sum(),
        })
        .collect();
    Ok((mu, var))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Dirichlet over class probabilities, kept in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPrediction {
    pub log_alpha: Vec<f64>,
}

impl DirichletPrediction {
    pub fn alpha(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|a| a.exp()).collect()
    }

    /// Predictive mean `alpha / sum(alpha)`.
    pub fn mean(&self) -> Vec<f64> {
        softmax(&self.log_alpha)
    }
}

/// `alpha_j = (1 / v_j) (1 - 2/K + e^{mu_j} sum_l e^{-mu_l} / K^2)`.
pub fn laplace_bridge(mu: &[f64], var: &[f64]) -> Result<DirichletPrediction, BayesError> {
    if mu.len() != var.len() {
        return Err(BayesError::Dimension {
            what: "variance length",
            got: var.len(),
            expected: mu.len(),
        });
    }
    if let Some((index, &value)) = var.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(BayesError::NonPositiveVariance { index, value });
    }
    let k = mu.len() as f64;
    let base = 1.0 - 2.0 / k;
    let lse_neg = log_sum_exp(mu.iter().map(|m| -m));
    let log_alpha = mu
        .iter()
        .zip(var)
        .map(|(&m, &v)| {
            // log(base + e^s), s = mu_j + log sum_l e^{-mu_l} - 2 log K
            let s = m + lse_neg - 2.0 * k.ln();
            let log_term = if base <= 0.0 {
                s
            } else if s > 0.0 {
                s + (base * (-s).exp()).ln_1p()
            } else {
                base.ln() + (s - base.ln()).exp().ln_1p()
            };
            log_term - v.ln()
        })
        .collect();
    Ok(DirichletPrediction { log_alpha })
}

/// `softmax(mu_j / sqrt(1 + pi/8 var_j))`.
pub fn probit_predictive(mu: &[f64], var: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = mu
        .iter()
        .zip(var)
        .map(|(&m, &v)| m / (1.0 + std::f64::consts::PI / 8.0 * v).sqrt())
        .collect();
    softmax(&scaled)
}

/// How a single posterior turns a logit Gaussian into probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkApproximation {
    #[default]
    Bridge,
    Probit,
}

pub fn posterior_predict<T: Copy + Into<f64>>(
    post: &GaussianPosterior,
    f: &[T],
    link: LinkApproximation,
) -> Result<Vec<f64>, BayesError> {
    let (mu, var) = logit_gaussian(post, f)?;
    match link {
        LinkApproximation::Bridge => Ok(laplace_bridge(&mu, &var)?.mean()),
        LinkApproximation::Probit => Ok(probit_predictive(&mu, &var)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<SoftmaxHead>,
    pub posteriors: Option<Vec<GaussianPosterior>>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// Average of member softmax outputs.
    Point,
    /// Average of member bridge predictive means.
    Bridge,
}

pub const DEFAULT_ENSEMBLE_SIZE: usize = 32;

/// Trains `s` heads with seeds `base_seed..base_seed + s`. Members are
/// trained in parallel when `parallel` is set; each member is still
/// deterministic and results come back in seed order.
pub fn train_ensemble(
    samples: &Samples,
    k: usize,
    cfg: &TrainConfig,
    s: usize,
    base_seed: u64,
    parallel: bool,
) -> Result<Ensemble, BayesError> {
    if s == 0 {
        return Err(BayesError::Config("ensemble size must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..s as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let train_one = |(index, &seed): (usize, &u64)| {
        let member_cfg = TrainConfig { seed, ..cfg.clone() };
        train_samples(samples, k, &member_cfg, None)
            .map(|o| o.head)
            .map_err(|source| BayesError::Member { index, source })
    };
    let members = if parallel {
        seeds.par_iter().enumerate().map(train_one).collect::<Result<Vec<_>, _>>()?
    } else {
        seeds.iter().enumerate().map(train_one).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Ensemble {
        members,
        posteriors: None,
        seeds,
    })
}

/// Fits a Laplace posterior around every member.
pub fn fit_ensemble_posteriors(ens: &mut Ensemble, samples: &Samples, cfg: &LaplaceConfig, parallel: bool) -> Result<(), BayesError> {
    let posts = if parallel {
        ens.members.par_iter().map(|h| fit_laplace(h, samples, cfg)).collect::<Result<Vec<_>, _>>()?
    } else {
        ens.members.iter().map(|h| fit_laplace(h, samples, cfg)).collect::<Result<Vec<_>, _>>()?
    };
    ens.posteriors = Some(posts);
    Ok(())
}

pub fn ensemble_predict<T: Copy + Into<f64>>(ens: &Ensemble, f: &[T], mode: EnsembleMode) -> Result<Vec<f64>, BayesError> {
    let first = ens.members.first().ok_or_else(|| BayesError::Config("empty ensemble".into()))?;
    let mut acc = vec![0.0; first.classes()];
    let mut add = |p: Vec<f64>| {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    };
    match mode {
        EnsembleMode::Point => {
            for h in &ens.members {
                add(h.predict(f)?);
            }
        }
        EnsembleMode::Bridge => {
            let posts = ens.posteriors.as_ref().ok_or(BayesError::MissingPosterior)?;
            if posts.len() != ens.members.len() {
                return Err(BayesError::MissingPosterior);
            }
            for p in posts {
                add(posterior_predict(p, f, LinkApproximation::Bridge)?);
            }
        }
    }
    let s = ens.members.len() as f64;
    Ok(acc.into_iter().map(|a| a / s).collect())
}

#[derive(Serialize, Deserialize)]
struct EnsembleIndex {
    seeds: Vec<u64>,
    posteriors: bool,
}

/// Writes `dir/ensemble.json` and `dir/member_<i>/{model.bin,posterior.bin}`.
pub fn save_ensemble(ens: &Ensemble, dir: &Path) -> Result<(), BayesError> {
    std::fs::create_dir_all(dir)?;
    for (i, h) in ens.members.iter().enumerate() {
        let mdir = dir.join(format!("member_{i}"));
        std::fs::create_dir_all(&mdir)?;
        h.save(&mdir.join("model.bin"))?;
        if let Some(posts) = &ens.posteriors {
            posts[i].save(&mdir.join("posterior.bin"))?;
        }
    }
    let index = EnsembleIndex {
        seeds: ens.seeds.clone(),
        posteriors: ens.posteriors.is_some(),
    };
    let json = serde_json::to_vec_pretty(&index).map_err(|e| BayesError::Format(e.to_string()))?;
    write_atomic(&dir.join("ensemble.json"), &json)?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble, BayesError> {
    let index: EnsembleIndex = serde_json::from_slice(&std::fs::read(dir.join("ensemble.json"))?)
        .map_err(|e| BayesError::Format(format!("ensemble.json: {e}")))?;
    let mut members = Vec::with_capacity(index.seeds.len());
    let mut posts = Vec::new();
    for i in 0..index.seeds.len() {
        let mdir = dir.join(format!("member_{i}"));
        members.push(SoftmaxHead::load(&mdir.join("model.bin"))?);
        if index.posteriors {
            posts.push(GaussianPosterior::load(&mdir.join("posterior.bin"))?);
        }
    }
    Ok(Ensemble {
        members,
        posteriors: index.posteriors.then_some(posts),
        seeds: index.seeds,
    })
}
