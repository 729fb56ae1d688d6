//! Gaussian-process machinery over a finite arm set.
//!
//! The belief over the `K` arms is a multivariate Gaussian `N(mu_0, Sigma)`
//! with homoscedastic observation noise `sigma`. Conditioning on a history of
//! `(arm, observation)` pairs uses the standard finite-dimensional update:
//!
//! ```text
//! mu_t(k)      = mu_0(k) + S_t(k)' (S_t + sigma^2 I)^-1 (y - mu_0[obs])
//! sigma_t^2(k) = Sigma(k,k) - S_t(k)' (S_t + sigma^2 I)^-1 S_t(k)
//! ```
//!
//! where `S_t(k)` is the cross-covariance between arm `k` and the observed
//! arms and `S_t` is the observed-arm covariance block. Arms may repeat in
//! the history; the system stays well posed through the noise term plus a
//! fixed diagonal jitter.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter added to `(S_t + sigma^2 I)` before factorization. Keeps
/// condition numbers bounded when the same arm is observed repeatedly with
/// tiny noise.
pub const SOLVE_JITTER: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_EIG_TOL: f64 = -1e-8;

// ── Kernel hyperparameters ──────────────────────────────────────────────────

/// Length scale and signal variance of the squared-exponential kernel.
///
/// The kernel entry for feature vectors `f_i`, `f_j` is
/// `signal_variance * exp(-|f_i - f_j|^2 / length_scale^2)` (no factor 2 in
/// the exponent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelHyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
}

impl KernelHyperparams {
    pub fn new(length_scale: f64, signal_variance: f64) -> Result<Self> {
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(Error::input(format!(
                "length_scale must be finite and positive, got {length_scale}"
            )));
        }
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Error::input(format!(
                "signal_variance must be finite and positive, got {signal_variance}"
            )));
        }
        Ok(Self {
            length_scale,
            signal_variance,
        })
    }

    /// Default search grid: 7 log-spaced length scales in `[0.05, 5]` times
    /// 5 log-spaced signal variances in `[0.01, 1]`.
    pub fn default_grid() -> Vec<Self> {
        let ls = log_space(0.05, 5.0, 7);
        let sv = log_space(0.01, 1.0, 5);
        let mut grid = Vec::with_capacity(ls.len() * sv.len());
        for &l in &ls {
            for &v in &sv {
                grid.push(Self {
                    length_scale: l,
                    signal_variance: v,
                });
            }
        }
        grid
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

// ── Prior and posterior ─────────────────────────────────────────────────────

/// GP prior over a finite arm set: mean vector, covariance matrix, and
/// observation noise standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPrior {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    noise_std: f64,
}

impl GpPrior {
    /// Validates symmetry (entrywise to 1e-12), positive semidefiniteness up
    /// to eigenvalue -1e-8, and a strictly positive noise level.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, noise_std: f64) -> Result<Self> {
        let k = mean.len();
        if k == 0 {
            return Err(Error::input("prior must cover at least one arm"));
        }
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::input(format!(
                "covariance is {}x{} but mean has {k} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) || cov.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("prior contains non-finite entries"));
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::input(format!(
                        "covariance asymmetric at ({i},{j}): {} vs {}",
                        cov[(i, j)],
                        cov[(j, i)]
                    )));
                }
            }
        }
        let min_eig = SymmetricEigen::new(cov.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < PSD_EIG_TOL {
            return Err(Error::input(format!(
                "covariance not PSD: smallest eigenvalue {min_eig}"
            )));
        }
        if !(noise_std.is_finite() && noise_std > 0.0) {
            return Err(Error::input(format!(
                "noise_std must be finite and positive, got {noise_std}"
            )));
        }
        Ok(Self {
            mean,
            cov,
            noise_std,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

/// Per-arm posterior belief plus the observation history that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub history: Vec<(usize, f64)>,
}

impl GpPosterior {
    pub fn n_arms(&self) -> usize {
        self.mean.len()
    }
}

// ── Operations ──────────────────────────────────────────────────────────────

/// Builds the squared-exponential kernel matrix over per-arm feature vectors.
///
/// Entry `(i, j)` is `sv * exp(-|f_i - f_j|^2 / ls^2)`; the diagonal equals
/// `signal_variance` exactly.
pub fn build_rbf_kernel(features: &[Vec<f64>], hp: &KernelHyperparams) -> Result<DMatrix<f64>> {
    if features.is_empty() {
        return Err(Error::input("no feature vectors given"));
    }
    let dim = features[0].len();
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::input(format!(
                "feature vector {i} has dimension {} (expected {dim})",
                f.len()
            )));
        }
    }
    let k = features.len();
    let ls2 = hp.length_scale * hp.length_scale;
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        m[(i, i)] = hp.signal_variance;
        for j in (i + 1)..k {
            let d2: f64 = features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = hp.signal_variance * (-d2 / ls2).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Log density of the observations under the prior restricted to the
/// observed arms, `log N(y; mu_0[obs], Sigma_obs + sigma^2 I)`.
///
/// An empty observation list scores 0 (empty product).
pub fn log_marginal_likelihood(prior: &GpPrior, observations: &[(usize, f64)]) -> Result<f64> {
    check_history(prior.n_arms(), observations)?;
    let resid: Vec<f64> = observations
        .iter()
        .map(|&(a, y)| y - prior.mean[a])
        .collect();
    lml_centered(&prior.cov, prior.noise_std, observations, &resid)
}

/// Log marginal likelihood with residuals already centered (zero mean).
fn lml_centered(
    cov: &DMatrix<f64>,
    noise_std: f64,
    observations: &[(usize, f64)],
    resid: &[f64],
) -> Result<f64> {
    let t = observations.len();
    if t == 0 {
        return Ok(0.0);
    }
    let chol = observed_block_cholesky(cov, noise_std, observations)?;
    let r = DVector::from_column_slice(resid);
    let alpha = chol.solve(&r);
    let quad = r.dot(&alpha);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * quad - 0.5 * log_det - 0.5 * t as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Grid search maximizing the summed log marginal likelihood of the target
/// functions, each treated as a full observation of all arms under a
/// zero-mean prior with the candidate kernel.
///
/// Ties go to the smaller length scale, then the smaller signal variance.
pub fn fit_kernel_hyperparams(
    features: &[Vec<f64>],
    target_functions: &[Vec<f64>],
    grid: &[KernelHyperparams],
    noise_std: f64,
) -> Result<KernelHyperparams> {
    if grid.is_empty() {
        return Err(Error::input("hyperparameter grid is empty"));
    }
    let k = features.len();
    for (i, t) in target_functions.iter().enumerate() {
        if t.len() != k {
            return Err(Error::input(format!(
                "target function {i} has {} values for {k} arms",
                t.len()
            )));
        }
    }
    let all_arms: Vec<(usize, f64)> = (0..k).map(|a| (a, 0.0)).collect();
    let mut best: Option<(f64, KernelHyperparams)> = None;
    for hp in grid {
        let cov = build_rbf_kernel(features, hp)?;
        let mut score = 0.0;
        for target in target_functions {
            score += lml_centered(&cov, noise_std, &all_arms, target)?;
        }
        let replace = match &best {
            None => true,
            Some((s, h)) => {
                score > *s
                    || (score == *s
                        && (hp.length_scale, hp.signal_variance)
                            < (h.length_scale, h.signal_variance))
            }
        };
        if replace {
            best = Some((score, *hp));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

/// Conditions the prior on the observation history.
///
/// Negative computed variances (floating-point artifacts) clamp to zero so
/// the returned standard deviations are always valid.
pub fn posterior(prior: &GpPrior, history: &[(usize, f64)]) -> Result<GpPosterior> {
    check_history(prior.n_arms(), history)?;
    let k = prior.n_arms();
    let t = history.len();
    if t == 0 {
        let std = (0..k)
            .map(|i| prior.cov[(i, i)].max(0.0).sqrt())
            .collect();
        return Ok(GpPosterior {
            mean: prior.mean.clone(),
            std,
            history: Vec::new(),
        });
    }

    let chol = observed_block_cholesky(&prior.cov, prior.noise_std, history)?;
    let resid = DVector::from_iterator(t, history.iter().map(|&(a, y)| y - prior.mean[a]));
    let weights = chol.solve(&resid);

    // Cross-covariance between the observed sequence and every arm, one
    // column per arm.
    let cross = DMatrix::from_fn(t, k, |s, arm| prior.cov[(history[s].0, arm)]);
    let solved = chol.solve(&cross);

    let mut mean = Vec::with_capacity(k);
    let mut std = Vec::with_capacity(k);
    for arm in 0..k {
        let col = cross.column(arm);
        mean.push(prior.mean[arm] + col.dot(&weights));
        let var = prior.cov[(arm, arm)] - col.dot(&solved.column(arm));
        std.push(var.max(0.0).sqrt());
    }
    Ok(GpPosterior {
        mean,
        std,
        history: history.to_vec(),
    })
}

fn check_history(n_arms: usize, history: &[(usize, f64)]) -> Result<()> {
    for &(a, y) in history {
        if a >= n_arms {
            return Err(Error::input(format!(
                "observation references arm {a} but the prior has {n_arms} arms"
            )));
        }
        if !y.is_finite() {
            return Err(Error::input(format!("non-finite observation {y} for arm {a}")));
        }
    }
    Ok(())
}

/// Cholesky factor of `Sigma_obs + (sigma^2 + jitter) I` over the observed
/// arm sequence.
fn observed_block_cholesky(
    cov: &DMatrix<f64>,
    noise_std: f64,
    observations: &[(usize, f64)],
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let t = observations.len();
    let diag_add = noise_std * noise_std + SOLVE_JITTER;
    let m = DMatrix::from_fn(t, t, |r, c| {
        let v = cov[(observations[r].0, observations[c].0)];
        if r == c {
            v + diag_add
        } else {
            v
        }
    });
    Cholesky::new(m).ok_or_else(|| {
        Error::numerical(format!(
            "observed covariance block ({t}x{t}) not positive definite after jitter"
        ))
    })
}
