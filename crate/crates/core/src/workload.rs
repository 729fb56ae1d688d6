//! Workload acquisition: synthetic generation, CSV loading, train/test
//! splitting, and prior construction from training users.
//!
//! The synthetic model composes a quality entry from four factors,
//! `x[i][j] = b_i + alpha * m[i][j] + u[i][j] + eps[i][j]`, clipped into
//! `[0, 1]` after summing:
//!
//! * `b_i` — per-user baseline drawn from that user's baseline group,
//! * `m` — per-user draw over a model group's covariance `exp(-(f_j - f_j')^2 / sigma_M^2)`
//!   built from hidden model features `f ~ U(0,1)`,
//! * `u` — per-model draw over a user group's covariance (same form, hidden
//!   user features), absent when no user groups are configured,
//! * `eps` — i.i.d. noise.
//!
//! Costs are drawn per model from `U(0,1) + 0.01` and broadcast over users.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{build_rbf_kernel, fit_kernel_hyperparams, GpPrior, KernelHyperparams};

// ── Workload matrix ─────────────────────────────────────────────────────────

/// Per-(user, model) quality and cost ground truth, plus each user's best
/// achievable quality `mu_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadMatrix {
    quality: Vec<Vec<f64>>,
    cost: Vec<Vec<f64>>,
    user_ids: Vec<String>,
    model_ids: Vec<String>,
    mu_star: Vec<f64>,
}

impl WorkloadMatrix {
    /// Builds a workload from raw matrices. Checks shapes, finiteness, and
    /// cost positivity. The `[0, 1]` quality range is enforced by the CSV
    /// loader (and guaranteed by the generator's clipping), not here, so
    /// worked examples on other scales remain expressible.
    pub fn from_parts(
        quality: Vec<Vec<f64>>,
        cost: Vec<Vec<f64>>,
        user_ids: Vec<String>,
        model_ids: Vec<String>,
    ) -> Result<Self> {
        let n = quality.len();
        if n == 0 {
            return Err(Error::input("workload has no users"));
        }
        let k = quality[0].len();
        if k == 0 {
            return Err(Error::input("workload has no models"));
        }
        if quality.iter().any(|row| row.len() != k) {
            return Err(Error::input("ragged quality matrix"));
        }
        if cost.len() != n || cost.iter().any(|row| row.len() != k) {
            return Err(Error::input(format!(
                "cost matrix shape {}x{} does not match quality {}x{}",
                cost.len(),
                cost.first().map_or(0, Vec::len),
                n,
                k
            )));
        }
        if user_ids.len() != n || model_ids.len() != k {
            return Err(Error::input("label lists do not match matrix shape"));
        }
        if quality.iter().flatten().any(|q| !q.is_finite()) {
            return Err(Error::input("quality contains non-finite entries"));
        }
        if cost.iter().flatten().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::input("all costs must be finite and positive"));
        }
        let mu_star = quality
            .iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self {
            quality,
            cost,
            user_ids,
            model_ids,
            mu_star,
        })
    }

    pub fn n_users(&self) -> usize {
        self.quality.len()
    }

    pub fn n_models(&self) -> usize {
        self.quality[0].len()
    }

    pub fn quality(&self, user: usize, model: usize) -> f64 {
        self.quality[user][model]
    }

    pub fn quality_row(&self, user: usize) -> &[f64] {
        &self.quality[user]
    }

    pub fn cost(&self, user: usize, model: usize) -> f64 {
        self.cost[user][model]
    }

    pub fn cost_row(&self, user: usize) -> &[f64] {
        &self.cost[user]
    }

    pub fn mu_star(&self, user: usize) -> f64 {
        self.mu_star[user]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn max_cost(&self) -> f64 {
        self.cost
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.iter().flatten().sum()
    }

    /// Sub-workload containing only the given users, in the given order.
    pub fn restrict_users(&self, users: &[usize]) -> Result<Self> {
        for &u in users {
            if u >= self.n_users() {
                return Err(Error::input(format!("user index {u} out of range")));
            }
        }
        Self::from_parts(
            users.iter().map(|&u| self.quality[u].clone()).collect(),
            users.iter().map(|&u| self.cost[u].clone()).collect(),
            users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            self.model_ids.clone(),
        )
    }

    /// Replaces the cost matrix, keeping qualities and labels.
    pub fn with_costs(&self, cost: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_parts(
            self.quality.clone(),
            cost,
            self.user_ids.clone(),
            self.model_ids.clone(),
        )
    }
}

// ── Synthetic generator ─────────────────────────────────────────────────────

/// A baseline group: users draw their task difficulty from
/// `N(mean, std^2)`. `users_per_combo` users are generated for this group
/// per user group (or once when no user groups exist).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGroup {
    pub mean: f64,
    pub std: f64,
    pub users_per_combo: usize,
}

/// A model group: `models` models sharing one correlation strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGroup {
    pub sigma_m: f64,
    pub models: usize,
}

/// A user group: users sharing one user-correlation strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGroup {
    pub sigma_u: f64,
}

/// Full generative configuration. The simplest useful shape is a single
/// model group with no user groups and zero noise, which is what the flat
/// config format produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynGenConfig {
    pub baseline_groups: Vec<BaselineGroup>,
    pub model_groups: Vec<ModelGroup>,
    pub user_groups: Vec<UserGroup>,
    /// White-noise standard deviation (sigma_W).
    pub noise_std: f64,
    /// Weight on the model-correlation component.
    pub alpha: f64,
    pub seed: u64,
}

impl SynGenConfig {
    /// Single-model-group config with one baseline group per mean in
    /// `mu_b_list`, users split evenly across them.
    #[allow(clippy::too_many_arguments)]
    pub fn flat(
        mu_b_list: &[f64],
        sigma_b: f64,
        n_users: usize,
        n_models: usize,
        sigma_m: f64,
        alpha: f64,
        sigma_w: f64,
        seed: u64,
    ) -> Result<Self> {
        if mu_b_list.is_empty() {
            return Err(Error::input("mu_b_list must not be empty"));
        }
        if n_users < mu_b_list.len() {
            return Err(Error::input(format!(
                "{n_users} users cannot cover {} baseline groups",
                mu_b_list.len()
            )));
        }
        let g = mu_b_list.len();
        let baseline_groups = mu_b_list
            .iter()
            .enumerate()
            .map(|(i, &mean)| BaselineGroup {
                mean,
                std: sigma_b,
                users_per_combo: n_users / g + usize::from(i < n_users % g),
            })
            .collect();
        let cfg = Self {
            baseline_groups,
            model_groups: vec![ModelGroup {
                sigma_m,
                models: n_models,
            }],
            user_groups: Vec::new(),
            noise_std: sigma_w,
            alpha,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.baseline_groups.is_empty() {
            return Err(Error::input("at least one baseline group required"));
        }
        if self.model_groups.is_empty() {
            return Err(Error::input("at least one model group required"));
        }
        for b in &self.baseline_groups {
            if b.users_per_combo == 0 {
                return Err(Error::input("baseline group with zero users"));
            }
            if !(b.std >= 0.0 && b.std.is_finite() && b.mean.is_finite()) {
                return Err(Error::input("invalid baseline group parameters"));
            }
        }
        for m in &self.model_groups {
            if m.models == 0 {
                return Err(Error::input("model group with zero models"));
            }
            if !(m.sigma_m > 0.0 && m.sigma_m.is_finite()) {
                return Err(Error::input("sigma_m must be positive"));
            }
        }
        for u in &self.user_groups {
            if !(u.sigma_u > 0.0 && u.sigma_u.is_finite()) {
                return Err(Error::input("sigma_u must be positive"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::input("noise_std must be nonnegative"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input("alpha must be nonnegative"));
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        let combos = self.user_groups.len().max(1);
        self.baseline_groups
            .iter()
            .map(|b| b.users_per_combo * combos)
            .sum()
    }

    pub fn n_models(&self) -> usize {
        self.model_groups.iter().map(|m| m.models).sum()
    }
}

/// Intermediate draws of the generator, exposed so statistical tests can
/// compare sample moments against the configured covariances.
#[derive(Debug, Clone)]
pub struct SynComponents {
    /// Per-user baseline draws.
    pub baselines: Vec<f64>,
    /// Per-user, per-model correlation component (before the alpha weight).
    pub model_component: Vec<Vec<f64>>,
    /// Per-user, per-model user-correlation component (zero without groups).
    pub user_component: Vec<Vec<f64>>,
    /// Hidden model features, one per model.
    pub model_features: Vec<f64>,
    /// The model-group covariance built from the hidden features.
    pub model_cov: DMatrix<f64>,
}

/// Draws a workload from the generative model. Deterministic per seed.
pub fn generate_synthetic(config: &SynGenConfig) -> Result<WorkloadMatrix> {
    generate_with_components(config).map(|(w, _)| w)
}

/// Like [`generate_synthetic`] but also returns the intermediate draws.
#[allow(clippy::needless_range_loop)]
pub fn generate_with_components(
    config: &SynGenConfig,
) -> Result<(WorkloadMatrix, SynComponents)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_users();
    let k = config.n_models();

    // Model groups: hidden features, covariance, eigendecomposition for
    // sampling. Groups are laid out contiguously over the model axis.
    struct GroupSampler {
        offset: usize,
        size: usize,
        eig: SymmetricEigen<f64, nalgebra::Dyn>,
    }
    let mut model_features = Vec::with_capacity(k);
    let mut model_cov = DMatrix::zeros(k, k);
    let mut model_samplers = Vec::new();
    let mut offset = 0;
    for group in &config.model_groups {
        let feats: Vec<f64> = (0..group.models).map(|_| rng.random_range(0.0..1.0)).collect();
        let cov = group_covariance(&feats, group.sigma_m);
        for i in 0..group.models {
            for j in 0..group.models {
                model_cov[(offset + i, offset + j)] = cov[(i, j)];
            }
        }
        model_features.extend_from_slice(&feats);
        model_samplers.push(GroupSampler {
            offset,
            size: group.models,
            eig: SymmetricEigen::new(cov),
        });
        offset += group.models;
    }

    // Users in group order: for each baseline group, for each user group
    // (one implicit pass when none), `users_per_combo` users.
    let mut baselines = Vec::with_capacity(n);
    let mut user_group_of = Vec::with_capacity(n);
    let user_combos = config.user_groups.len().max(1);
    for b in &config.baseline_groups {
        for ug in 0..user_combos {
            for _ in 0..b.users_per_combo {
                let z: f64 = StandardNormal.sample(&mut rng);
                baselines.push(b.mean + b.std * z);
                user_group_of.push(ug);
            }
        }
    }

    // Per-user model-correlation draws, one vector per user per group.
    let mut model_component = vec![vec![0.0; k]; n];
    for row in model_component.iter_mut() {
        for gs in &model_samplers {
            let draw = sample_zero_mean(&gs.eig, gs.size, &mut rng);
            row[gs.offset..gs.offset + gs.size].copy_from_slice(draw.as_slice());
        }
    }

    // User-correlation component: per model group... the draw is per model,
    // over the users of each user group.
    let mut user_component = vec![vec![0.0; k]; n];
    if !config.user_groups.is_empty() {
        for (ug_idx, ug) in config.user_groups.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| user_group_of[i] == ug_idx).collect();
            if members.is_empty() {
                continue;
            }
            let feats: Vec<f64> = (0..members.len())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let eig = SymmetricEigen::new(group_covariance(&feats, ug.sigma_u));
            for model in 0..k {
                let draw = sample_zero_mean(&eig, members.len(), &mut rng);
                for (pos, &user) in members.iter().enumerate() {
                    user_component[user][model] = draw[pos];
                }
            }
        }
    }

    // Sum, add white noise, clip into [0, 1].
    let mut quality = vec![vec![0.0; k]; n];
    for i in 0..n {
        for j in 0..k {
            let eps = if config.noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                config.noise_std * z
            } else {
                0.0
            };
            let x = baselines[i] + config.alpha * model_component[i][j] + user_component[i][j] + eps;
            quality[i][j] = x.clamp(0.0, 1.0);
        }
    }

    // Per-model costs, broadcast over users. Shifted off zero because the
    // cost-aware rule divides by them.
    let per_model_cost: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0) + 0.01).collect();
    let cost = vec![per_model_cost; n];

    let workload = WorkloadMatrix::from_parts(
        quality,
        cost,
        (0..n).map(|i| format!("u{i}")).collect(),
        (0..k).map(|j| format!("m{j}")).collect(),
    )?;
    Ok((
        workload,
        SynComponents {
            baselines,
            model_component,
            user_component,
            model_features,
            model_cov,
        },
    ))
}

fn group_covariance(features: &[f64], sigma: f64) -> DMatrix<f64> {
    let s2 = sigma * sigma;
    DMatrix::from_fn(features.len(), features.len(), |i, j| {
        (-(features[i] - features[j]).powi(2) / s2).exp()
    })
}

/// Zero-mean multivariate normal draw via the eigendecomposition, with
/// negative eigenvalues (rounding artifacts of near-singular covariances)
/// clamped to zero.
fn sample_zero_mean(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let z = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)));
    let scaled = DVector::from_iterator(
        dim,
        eig.eigenvalues
            .iter()
            .zip(z.iter())
            .map(|(l, z): (&f64, &f64)| l.max(0.0).sqrt() * z),
    );
    &eig.eigenvectors * scaled
}

// ── Flat key-value config files ─────────────────────────────────────────────

/// Parses the flat `key = value` synthetic config format. Recognized keys:
/// `sigma_m`, `alpha`, `sigma_b`, `mu_b_list` (comma-separated), `n_users`
/// (total), `n_models`, `sigma_w`, `seed`. Lines starting with `#` are
/// comments.
pub fn parse_syn_config(text: &str) -> Result<SynGenConfig> {
    let mut sigma_m = None;
    let mut alpha = None;
    let mut sigma_b = None;
    let mut mu_b_list: Option<Vec<f64>> = None;
    let mut n_users = None;
    let mut n_models = None;
    let mut sigma_w = 0.0;
    let mut seed = 0u64;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::input(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::input(format!("line {}: bad number `{v}`", lineno + 1)))
        };
        match key {
            "sigma_m" => sigma_m = Some(parse_f64(value)?),
            "alpha" => alpha = Some(parse_f64(value)?),
            "sigma_b" => sigma_b = Some(parse_f64(value)?),
            "sigma_w" => sigma_w = parse_f64(value)?,
            "mu_b_list" => {
                let list: Result<Vec<f64>> = value.split(',').map(|v| parse_f64(v.trim())).collect();
                mu_b_list = Some(list?);
            }
            "n_users" => {
                n_users = Some(value.parse::<usize>().map_err(|_| {
                    Error::input(format!("line {}: bad integer `{value}`", lineno + 1))
                })?)
            }
            "n_models" => {
                n_models = Some(value.parse::<usize>().map_err(|_| {
                    Error::input(format!("line {}: bad integer `{value}`", lineno + 1))
                })?)
            }
            "seed" => {
                seed = value.parse::<u64>().map_err(|_| {
                    Error::input(format!("line {}: bad integer `{value}`", lineno + 1))
                })?
            }
            other => return Err(Error::input(format!("unknown config key `{other}`"))),
        }
    }
    let missing = |name: &str| Error::input(format!("missing required config key `{name}`"));
    SynGenConfig::flat(
        &mu_b_list.ok_or_else(|| missing("mu_b_list"))?,
        sigma_b.ok_or_else(|| missing("sigma_b"))?,
        n_users.ok_or_else(|| missing("n_users"))?,
        n_models.ok_or_else(|| missing("n_models"))?,
        sigma_m.ok_or_else(|| missing("sigma_m"))?,
        alpha.ok_or_else(|| missing("alpha"))?,
        sigma_w,
        seed,
    )
}

// ── CSV I/O ─────────────────────────────────────────────────────────────────

/// Loads a workload from a quality CSV and a cost CSV.
///
/// Format: UTF-8, comma-separated, first row model labels (leading corner
/// cell ignored), first column user labels, cells decimal values. A cost
/// file with a single data row broadcasts over all users. Qualities must be
/// in `[0, 1]` and costs strictly positive.
pub fn load_workload(quality_path: &Path, cost_path: &Path) -> Result<WorkloadMatrix> {
    let (model_ids, user_ids, quality) = read_matrix_csv(quality_path)?;
    let (cost_models, cost_users, mut cost) = read_matrix_csv(cost_path)?;
    if cost_models.len() != model_ids.len() {
        return Err(Error::input(format!(
            "cost file has {} model columns, quality has {}",
            cost_models.len(),
            model_ids.len()
        )));
    }
    if cost.len() == 1 && quality.len() > 1 {
        cost = vec![cost[0].clone(); quality.len()];
    } else if cost_users.len() != user_ids.len() {
        return Err(Error::input(format!(
            "cost file has {} user rows, quality has {}",
            cost_users.len(),
            user_ids.len()
        )));
    }
    for (i, row) in quality.iter().enumerate() {
        for (j, q) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::input(format!(
                    "quality[{i}][{j}] = {q} outside [0, 1]"
                )));
            }
        }
    }
    WorkloadMatrix::from_parts(quality, cost, user_ids, model_ids)
}

type LabeledMatrix = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::input(format!(
            "{}: expected a label column plus at least one model column",
            path.display()
        )));
    }
    let model_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut user_ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::input(format!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                rows.len() + 1,
                record.len(),
                headers.len()
            )));
        }
        user_ids.push(record[0].to_string());
        let row: Result<Vec<f64>> = record
            .iter()
            .skip(1)
            .map(|cell| {
                cell.parse::<f64>().map_err(|_| {
                    Error::input(format!("{}: bad number `{cell}`", path.display()))
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::input(format!("{}: no data rows", path.display())));
    }
    Ok((model_ids, user_ids, rows))
}

/// Writes a workload back to the CSV format accepted by [`load_workload`].
pub fn save_workload(
    workload: &WorkloadMatrix,
    quality_path: &Path,
    cost_path: &Path,
) -> Result<()> {
    let write = |path: &Path, matrix: &dyn Fn(usize, usize) -> f64| -> Result<()> {
        let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
        let header: Vec<&str> = workload.model_ids().iter().map(String::as_str).collect();
        writeln!(out, "user,{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for i in 0..workload.n_users() {
            let cells: Vec<String> = (0..workload.n_models())
                .map(|j| format!("{}", matrix(i, j)))
                .collect();
            writeln!(out, "{},{}", workload.user_ids()[i], cells.join(","))
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    };
    write(quality_path, &|i, j| workload.quality(i, j))?;
    write(cost_path, &|i, j| workload.cost(i, j))
}

// ── Train/test splitting ────────────────────────────────────────────────────

/// Seeded train/test split specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Seeded uniform partition of the user indices. `round(train_fraction * n)`
/// users go to training; the rest are the test side. Both lists come back in
/// shuffle order.
pub fn split_train_test(
    workload: &WorkloadMatrix,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = workload.n_users();
    if n < 2 {
        return Err(Error::input("need at least two users to split"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::input(format!(
            "train_fraction must be in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 {
        return Err(Error::input("split leaves the training set empty"));
    }
    if n_train >= n {
        return Err(Error::input("split leaves the test set empty"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let test = order.split_off(n_train);
    Ok((order, test))
}

// ── Prior construction ──────────────────────────────────────────────────────

/// A prior built from training users, together with the centering offset the
/// simulation must subtract from raw observations.
#[derive(Debug, Clone)]
pub struct PriorBuild {
    pub prior: GpPrior,
    pub hyperparams: KernelHyperparams,
    /// Global mean of the training qualities; the GP lives on the centered
    /// scale, so observations feed in as `y - center`.
    pub center: f64,
    /// True when the model features were all identical and the kernel fit
    /// fell back to a diagonal prior.
    pub degenerate: bool,
}

/// Builds a zero-mean GP prior for one test tenant from the training users'
/// quality matrix: each model's feature vector is its centered quality
/// column, and the kernel hyperparameters maximize the summed marginal
/// likelihood of the centered training rows.
pub fn build_prior(
    workload: &WorkloadMatrix,
    train_users: &[usize],
    test_tenant: usize,
    grid: &[KernelHyperparams],
    noise_std: f64,
) -> Result<PriorBuild> {
    if train_users.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if test_tenant >= workload.n_users() {
        return Err(Error::input(format!("tenant {test_tenant} out of range")));
    }
    let train_set: HashSet<usize> = train_users.iter().cloned().collect();
    if train_set.contains(&test_tenant) {
        return Err(Error::input(format!(
            "tenant {test_tenant} is in the training set"
        )));
    }
    for &u in train_users {
        if u >= workload.n_users() {
            return Err(Error::input(format!("train user {u} out of range")));
        }
    }
    let k = workload.n_models();
    let center = train_users
        .iter()
        .flat_map(|&u| workload.quality_row(u))
        .sum::<f64>()
        / (train_users.len() * k) as f64;

    let features: Vec<Vec<f64>> = (0..k)
        .map(|m| {
            train_users
                .iter()
                .map(|&u| workload.quality(u, m) - center)
                .collect()
        })
        .collect();

    let all_identical = features
        .iter()
        .all(|f| f.iter().zip(&features[0]).all(|(a, b)| (a - b).abs() < 1e-12));
    if all_identical {
        // No feature signal at all: diagonal prior scaled by the training
        // data variance, floored to stay a valid covariance.
        let count = (train_users.len() * k) as f64;
        let var = (train_users
            .iter()
            .flat_map(|&u| workload.quality_row(u))
            .map(|q| (q - center) * (q - center))
            .sum::<f64>()
            / count)
            .max(1e-6);
        let prior = GpPrior::new(
            vec![0.0; k],
            DMatrix::identity(k, k) * var,
            noise_std,
        )?;
        return Ok(PriorBuild {
            prior,
            hyperparams: KernelHyperparams::new(1.0, var)?,
            center,
            degenerate: true,
        });
    }

    let targets: Vec<Vec<f64>> = train_users
        .iter()
        .map(|&u| {
            workload
                .quality_row(u)
                .iter()
                .map(|q| q - center)
                .collect()
        })
        .collect();
    let hyperparams = fit_kernel_hyperparams(&features, &targets, grid, noise_std)?;
    let cov = build_rbf_kernel(&features, &hyperparams)?;
    let prior = GpPrior::new(vec![0.0; k], cov, noise_std)?;
    Ok(PriorBuild {
        prior,
        hyperparams,
        center,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_config(seed: u64) -> SynGenConfig {
        SynGenConfig::flat(&[0.75, 0.25], 0.1, 10, 6, 0.5, 1.0, 0.0, seed).unwrap()
    }

    #[test]
    fn alpha_zero_rows_are_constant() {
        let cfg = SynGenConfig::flat(&[0.6], 0.2, 8, 5, 0.5, 0.0, 0.0, 3).unwrap();
        let w = generate_synthetic(&cfg).unwrap();
        for i in 0..w.n_users() {
            let first = w.quality(i, 0);
            for j in 0..w.n_models() {
                assert_eq!(w.quality(i, j), first);
            }
        }
    }

    #[test]
    fn baseline_above_one_clips_to_one() {
        // Large positive mean with zero spread: every entry clips to 1.
        let cfg = SynGenConfig::flat(&[1.3], 0.0, 4, 3, 0.5, 0.0, 0.0, 9).unwrap();
        let w = generate_synthetic(&cfg).unwrap();
        for i in 0..w.n_users() {
            for j in 0..w.n_models() {
                assert_eq!(w.quality(i, j), 1.0);
            }
        }
    }

    #[test]
    fn model_component_sample_covariance_tracks_kernel() {
        let cfg = SynGenConfig::flat(&[0.5], 0.1, 5000, 6, 0.5, 1.0, 0.0, 11).unwrap();
        let (_, comps) = generate_with_components(&cfg).unwrap();
        let k = 6;
        let n = comps.model_component.len();
        let mut sample = DMatrix::zeros(k, k);
        for row in &comps.model_component {
            for a in 0..k {
                for b in 0..k {
                    sample[(a, b)] += row[a] * row[b];
                }
            }
        }
        sample /= n as f64;
        let max_err = (&sample - &comps.model_cov)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.1, "max covariance error {max_err}");
    }

    #[test]
    fn tiny_sigma_m_decorrelates_models() {
        let cfg = SynGenConfig::flat(&[0.5], 0.1, 5000, 5, 1e-6, 1.0, 0.0, 13).unwrap();
        let (_, comps) = generate_with_components(&cfg).unwrap();
        // Off-diagonal covariance entries vanish for distinct features.
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    assert!(comps.model_cov[(a, b)].abs() < 1e-12);
                }
            }
        }
        // Empirical correlations of the draws stay near zero.
        let n = comps.model_component.len() as f64;
        for a in 0..5 {
            for b in (a + 1)..5 {
                let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
                for row in &comps.model_component {
                    saa += row[a] * row[a];
                    sbb += row[b] * row[b];
                    sab += row[a] * row[b];
                }
                let corr = sab / n / ((saa / n).sqrt() * (sbb / n).sqrt());
                assert!(corr.abs() < 0.1, "corr({a},{b}) = {corr}");
            }
        }
    }

    #[test]
    fn generator_is_deterministic_per_seed() {
        let a = generate_synthetic(&small_config(42)).unwrap();
        let b = generate_synthetic(&small_config(42)).unwrap();
        let c = generate_synthetic(&small_config(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn user_groups_add_a_component() {
        let cfg = SynGenConfig {
            baseline_groups: vec![BaselineGroup {
                mean: 0.5,
                std: 0.1,
                users_per_combo: 4,
            }],
            model_groups: vec![ModelGroup {
                sigma_m: 0.5,
                models: 4,
            }],
            user_groups: vec![UserGroup { sigma_u: 0.5 }, UserGroup { sigma_u: 0.1 }],
            noise_std: 0.01,
            alpha: 1.0,
            seed: 5,
        };
        assert_eq!(cfg.n_users(), 8);
        let (w, comps) = generate_with_components(&cfg).unwrap();
        assert_eq!(w.n_users(), 8);
        assert!(comps.user_component.iter().flatten().any(|v| *v != 0.0));
    }

    #[test]
    fn csv_roundtrip_preserves_workload() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.csv");
        let c = dir.path().join("c.csv");
        let w = WorkloadMatrix::from_parts(
            vec![vec![0.9, 0.8], vec![0.5, 0.7]],
            vec![vec![1.5, 2.0], vec![1.5, 2.0]],
            vec!["u0".into(), "u1".into()],
            vec!["m0".into(), "m1".into()],
        )
        .unwrap();
        save_workload(&w, &q, &c).unwrap();
        let loaded = load_workload(&q, &c).unwrap();
        assert_eq!(loaded, w);
    }

    #[test]
    fn csv_body_parses_expected_values() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.csv");
        let c = dir.path().join("c.csv");
        std::fs::write(&q, "user,m0,m1\nu0,0.9,0.8\nu1,0.5,0.7\n").unwrap();
        std::fs::write(&c, "user,m0,m1\nshared,1.0,2.0\n").unwrap();
        let w = load_workload(&q, &c).unwrap();
        assert_eq!(w.quality_row(0), &[0.9, 0.8]);
        assert_eq!(w.quality_row(1), &[0.5, 0.7]);
        // Single cost row broadcasts.
        assert_eq!(w.cost_row(1), &[1.0, 2.0]);
        assert_eq!(w.mu_star(0), 0.9);
    }

    #[test]
    fn csv_shape_mismatch_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.csv");
        let c = dir.path().join("c.csv");
        std::fs::write(&q, "user,m0,m1,m2,m3\nu0,0.1,0.2,0.3,0.4\nu1,0.1,0.2,0.3,0.4\n").unwrap();
        std::fs::write(&c, "user,m0,m1,m2\nu0,1,1,1\nu1,1,1,1\n").unwrap();
        assert!(matches!(
            load_workload(&q, &c).unwrap_err(),
            Error::Input(_)
        ));
    }

    #[test]
    fn csv_out_of_range_quality_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.csv");
        let c = dir.path().join("c.csv");
        std::fs::write(&q, "user,m0\nu0,1.5\nu1,0.5\n").unwrap();
        std::fs::write(&c, "user,m0\nu0,1.0\nu1,1.0\n").unwrap();
        assert!(load_workload(&q, &c).is_err());

        std::fs::write(&q, "user,m0\nu0,0.5\nu1,0.5\n").unwrap();
        std::fs::write(&c, "user,m0\nu0,0.0\nu1,1.0\n").unwrap();
        assert!(load_workload(&q, &c).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let cfg = SynGenConfig::flat(&[0.5], 0.1, 20, 4, 0.5, 1.0, 0.0, 1).unwrap();
        let w = generate_synthetic(&cfg).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.9,
            seed: 77,
        };
        let (train, test) = split_train_test(&w, &spec).unwrap();
        assert_eq!(train.len(), 18);
        assert_eq!(test.len(), 2);
        let (train2, test2) = split_train_test(&w, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        let mut all: Vec<usize> = train.iter().chain(&test).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn split_empty_test_is_input_error() {
        let cfg = SynGenConfig::flat(&[0.5], 0.1, 4, 3, 0.5, 1.0, 0.0, 1).unwrap();
        let w = generate_synthetic(&cfg).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.95,
            seed: 1,
        };
        assert!(matches!(
            split_train_test(&w, &spec).unwrap_err(),
            Error::Input(_)
        ));
    }

    #[test]
    fn build_prior_zero_mean_and_kernel_match() {
        let cfg = small_config(21);
        let w = generate_synthetic(&cfg).unwrap();
        let grid = KernelHyperparams::default_grid();
        let train: Vec<usize> = (0..7).collect();
        let built = build_prior(&w, &train, 8, &grid, 0.1).unwrap();
        assert!(built.prior.mean().iter().all(|m| *m == 0.0));
        assert!(!built.degenerate);

        // Kernel entries equal a direct evaluation over the centered columns.
        let k = w.n_models();
        let center = built.center;
        let feats: Vec<Vec<f64>> = (0..k)
            .map(|m| train.iter().map(|&u| w.quality(u, m) - center).collect())
            .collect();
        let direct = build_rbf_kernel(&feats, &built.hyperparams).unwrap();
        let max_err = (built.prior.cov() - &direct)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12);
    }

    #[test]
    fn build_prior_identical_columns_hit_signal_variance() {
        // Two models with identical quality columns: their prior covariance
        // entry equals the fitted signal variance exactly.
        let w = WorkloadMatrix::from_parts(
            vec![
                vec![0.2, 0.2, 0.8],
                vec![0.4, 0.4, 0.6],
                vec![0.3, 0.3, 0.9],
            ],
            vec![vec![1.0; 3]; 3],
            vec!["a".into(), "b".into(), "c".into()],
            vec!["m0".into(), "m1".into(), "m2".into()],
        )
        .unwrap();
        let grid = KernelHyperparams::default_grid();
        let built = build_prior(&w, &[0, 1], 2, &grid, 0.1).unwrap();
        assert!(
            (built.prior.cov()[(0, 1)] - built.hyperparams.signal_variance).abs() < 1e-12
        );
    }

    #[test]
    fn build_prior_degenerate_features_fall_back_to_diagonal() {
        let w = WorkloadMatrix::from_parts(
            vec![vec![0.4, 0.4], vec![0.4, 0.4], vec![0.2, 0.9]],
            vec![vec![1.0; 2]; 3],
            vec!["a".into(), "b".into(), "c".into()],
            vec!["m0".into(), "m1".into()],
        )
        .unwrap();
        let grid = KernelHyperparams::default_grid();
        let built = build_prior(&w, &[0, 1], 2, &grid, 0.1).unwrap();
        assert!(built.degenerate);
        assert_eq!(built.prior.cov()[(0, 1)], 0.0);
    }

    #[test]
    fn flat_config_distributes_users_evenly() {
        let cfg = SynGenConfig::flat(&[0.7, 0.3], 0.1, 11, 4, 0.5, 1.0, 0.0, 0).unwrap();
        assert_eq!(cfg.baseline_groups[0].users_per_combo, 6);
        assert_eq!(cfg.baseline_groups[1].users_per_combo, 5);
        assert_eq!(cfg.n_users(), 11);
    }

    #[test]
    fn parse_syn_config_roundtrip() {
        let text = "\
# demo config
sigma_m = 0.5
alpha = 1.0
sigma_b = 0.1
mu_b_list = 0.75, 0.25
n_users = 20
n_models = 10
sigma_w = 0.02
seed = 7
";
        let cfg = parse_syn_config(text).unwrap();
        assert_eq!(cfg.n_users(), 20);
        assert_eq!(cfg.n_models(), 10);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.noise_std, 0.02);
        assert!(parse_syn_config("bogus = 3").is_err());
        assert!(parse_syn_config("sigma_m = 0.5").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn generated_workloads_satisfy_invariants(
            seed in 0u64..1000,
            n_users in 2usize..12,
            n_models in 1usize..8,
            sigma_m in 0.01f64..2.0,
            alpha in 0.0f64..1.5,
            sigma_w in 0.0f64..0.3,
        ) {
            let cfg = SynGenConfig::flat(&[0.6], 0.2, n_users, n_models, sigma_m, alpha, sigma_w, seed).unwrap();
            let w = generate_synthetic(&cfg).unwrap();
            prop_assert_eq!(w.n_users(), n_users);
            prop_assert_eq!(w.n_models(), n_models);
            for i in 0..n_users {
                let mut row_max = f64::NEG_INFINITY;
                for j in 0..n_models {
                    let q = w.quality(i, j);
                    prop_assert!((0.0..=1.0).contains(&q));
                    prop_assert!(w.cost(i, j) > 0.0);
                    row_max = row_max.max(q);
                }
                prop_assert_eq!(w.mu_star(i), row_max);
            }
        }
    }
}
