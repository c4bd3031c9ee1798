//! Full-covariance Gaussian mixtures over flattened trajectories.
//!
//! A trajectory of `T` timesteps is the vector `[x1, y1, ..., xT, yT]`. One
//! mixture is fitted per homotopy class; prediction conditions every component
//! on the observed positions and reweights it by its prior weight, the class
//! posterior and the marginal likelihood of the observations.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Point2, Word};
use crate::vomp::ClassPosterior;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("need at least {needed} points for {needed} components, got {got}")]
    DegenerateData { needed: usize, got: usize },
    #[error("covariance is not positive definite")]
    SingularCovariance,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GmmError>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(GmmError::DimensionMismatch { expected: d, got: covariance.nrows() });
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.covariance.clone()).ok_or(GmmError::SingularCovariance)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(log_density_chol(x, &self.mean, &chol))
    }
}

/// `log N(x | mean, L L^T)`.
pub fn log_density_chol(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let diff = x - mean;
    let z = l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * z.norm_squared() - log_det_half - 0.5 * x.len() as f64 * LN_2PI
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianComponent>,
}

impl Gmm {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.dim())
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let terms = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| c.log_density(x).map(|l| w.ln() + l))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    /// Mean per-sample log-likelihood.
    pub fn mean_log_likelihood(&self, data: &[DVector<f64>]) -> Result<f64> {
        let chols = self.components.iter().map(|c| c.cholesky()).collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut buf = vec![0.0; self.components.len()];
        for x in data {
            for (k, (c, ch)) in self.components.iter().zip(&chols).enumerate() {
                buf[k] = self.weights[k].ln() + log_density_chol(x, &c.mean, ch);
            }
            total += log_sum_exp(&buf);
        }
        Ok(total / data.len() as f64)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let idx = WeightedIndex::new(&self.weights)
            .map_err(|e| GmmError::NumericalFailure(e.to_string()))?
            .sample(rng);
        sample_gaussian(&self.components[idx].mean, &self.components[idx].covariance, rng)
    }
}

/// Draws from `N(mean, cov)` using the Cholesky factor.
pub fn sample_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let chol = Cholesky::new(cov.clone()).ok_or(GmmError::SingularCovariance)?;
    let z = DVector::from_iterator(
        mean.len(),
        (0..mean.len()).map(|_| rand_distr::StandardNormal.sample(rng)),
    );
    Ok(mean + chol.l() * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Ridge added to every covariance in the M-step.
    pub reg: f64,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { reg: 1e-6, tol: 1e-6, max_iter: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean per-sample log-likelihood after initialization and each M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

/// `scale * mean per-dimension variance` of the data; `scale` itself for
/// constant data.
pub fn default_reg(data: &[DVector<f64>], scale: f64) -> f64 {
    if data.len() < 2 {
        return scale;
    }
    let d = data[0].len();
    let n = data.len() as f64;
    let mean = data.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let var: f64 = data.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / (n * d as f64);
    if var > 0.0 {
        scale * var
    } else {
        scale
    }
}

fn check_data(data: &[DVector<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(GmmError::InvalidParameter("component count must be >= 1".into()));
    }
    if data.len() < k {
        return Err(GmmError::DegenerateData { needed: k, got: data.len() });
    }
    let d = data[0].len();
    if let Some(x) = data.iter().find(|x| x.len() != d) {
        return Err(GmmError::DimensionMismatch { expected: d, got: x.len() });
    }
    Ok(d)
}

/// k-means++ seeding: first center uniform, the rest drawn proportionally to
/// the squared distance to the nearest chosen center.
fn kmeans_pp_centers(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut centers = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = data.iter().map(|x| (x - &data[centers[0]]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&dist).expect("nonnegative distances").sample(rng)
        } else {
            rng.gen_range(0..n)
        };
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            dist[i] = dist[i].min((x - &data[next]).norm_squared());
        }
    }
    centers
}

fn m_step(
    data: &[DVector<f64>],
    resp: &DMatrix<f64>,
    reg: f64,
    fallback: &GaussianComponent,
) -> (Vec<f64>, Vec<GaussianComponent>) {
    let n = data.len();
    let d = data[0].len();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.column(j).sum();
        if nk < 1e-10 {
            weights.push(nk.max(0.0) / n as f64);
            comps.push(fallback.clone());
            continue;
        }
        let mut mean = DVector::zeros(d);
        for (i, x) in data.iter().enumerate() {
            mean.axpy(resp[(i, j)], x, 1.0);
        }
        mean /= nk;
        let mut centered = DMatrix::zeros(d, n);
        for (i, x) in data.iter().enumerate() {
            let s = resp[(i, j)].sqrt();
            centered.set_column(i, &((x - &mean) * s));
        }
        let mut cov = &centered * centered.transpose() / nk;
        symmetrize(&mut cov);
        for r in 0..d {
            cov[(r, r)] += reg;
        }
        weights.push(nk / n as f64);
        comps.push(GaussianComponent { mean, covariance: cov });
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (weights, comps)
}

/// Responsibilities and mean per-sample log-likelihood.
fn e_step(data: &[DVector<f64>], gmm: &Gmm) -> Result<(DMatrix<f64>, f64)> {
    let k = gmm.components.len();
    let chols = gmm
        .components
        .iter()
        .map(|c| c.cholesky())
        .collect::<Result<Vec<_>>>()?;
    let mut resp = DMatrix::zeros(data.len(), k);
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    for (i, x) in data.iter().enumerate() {
        for j in 0..k {
            buf[j] = if gmm.weights[j] > 0.0 {
                gmm.weights[j].ln() + log_density_chol(x, &gmm.components[j].mean, &chols[j])
            } else {
                f64::NEG_INFINITY
            };
        }
        let lse = log_sum_exp(&buf);
        if !lse.is_finite() {
            return Err(GmmError::NumericalFailure("non-finite log-likelihood".into()));
        }
        total += lse;
        for j in 0..k {
            resp[(i, j)] = (buf[j] - lse).exp();
        }
    }
    Ok((resp, total / data.len() as f64))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// EM for a `k`-component full-covariance mixture.
pub fn fit_em(data: &[DVector<f64>], k: usize, config: &EmConfig) -> Result<(Gmm, FitReport)> {
    let d = check_data(data, k)?;
    if !(config.reg > 0.0) {
        return Err(GmmError::InvalidParameter("reg must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = data.len();

    let ones = DMatrix::from_element(n, 1, 1.0);
    let dummy = GaussianComponent {
        mean: DVector::zeros(d),
        covariance: DMatrix::identity(d, d),
    };
    let (_, global) = m_step(data, &ones, config.reg, &dummy);
    let global = global.into_iter().next().expect("one component");

    let centers = kmeans_pp_centers(data, k, &mut rng);
    let mut resp = DMatrix::zeros(n, k);
    for (i, x) in data.iter().enumerate() {
        let best = centers
            .iter()
            .enumerate()
            .map(|(j, &c)| (j, (x - &data[c]).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .expect("k >= 1");
        resp[(i, best)] = 1.0;
    }

    let (weights, components) = m_step(data, &resp, config.reg, &global);
    let mut gmm = Gmm { weights, components };
    let (mut resp, mut ll) = e_step(data, &gmm)?;
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..config.max_iter {
        let (weights, components) = m_step(data, &resp, config.reg, &global);
        gmm = Gmm { weights, components };
        let (r, new_ll) = e_step(data, &gmm)?;
        trace.push(new_ll);
        resp = r;
        let gain = new_ll - ll;
        ll = new_ll;
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    Ok((gmm, FitReport { log_likelihoods: trace, converged }))
}

/// Number of free parameters of a full-covariance mixture.
pub fn parameter_count(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

pub fn bic(gmm: &Gmm, report: &FitReport, n: usize) -> f64 {
    let ll_total = report.final_log_likelihood() * n as f64;
    -2.0 * ll_total + parameter_count(gmm.num_components(), gmm.dim()) as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentPolicy {
    /// Lowest BIC over `1..=max_k` (capped by the data size).
    Bic { max_k: usize },
    Fixed(usize),
}

impl Default for ComponentPolicy {
    fn default() -> Self {
        ComponentPolicy::Bic { max_k: 5 }
    }
}

pub fn fit_with_policy(
    data: &[DVector<f64>],
    policy: ComponentPolicy,
    config: &EmConfig,
) -> Result<(Gmm, FitReport)> {
    match policy {
        ComponentPolicy::Fixed(k) => fit_em(data, k.min(data.len()).max(1), config),
        ComponentPolicy::Bic { max_k } => {
            let mut best: Option<(f64, Gmm, FitReport)> = None;
            for k in 1..=max_k.min(data.len()).max(1) {
                let (g, r) = fit_em(data, k, config)?;
                let score = bic(&g, &r, data.len());
                if best.as_ref().map_or(true, |b| score < b.0) {
                    best = Some((score, g, r));
                }
            }
            let (_, g, r) = best.expect("at least one candidate");
            Ok((g, r))
        }
    }
}

/// Per-class seed derived from the base seed and the class word only, so a
/// class's fit does not depend on which other classes are present.
fn class_seed(seed: u64, h: &Word) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in h.values() {
        x = (x ^ (v as i64 as u64)).wrapping_mul(0x0000_0100_0000_01B3);
        x ^= x >> 29;
    }
    x
}

/// Positions of a trajectory as the model's flattened layout.
pub fn flatten_points(points: &[Point2]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 2, points.iter().flat_map(|p| [p.x, p.y]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalGmm {
    pub per_class: BTreeMap<Word, Gmm>,
    pub timesteps: usize,
    pub sigma_y: f64,
}

impl HierarchicalGmm {
    pub fn total_components(&self) -> usize {
        self.per_class.values().map(Gmm::num_components).sum()
    }

    pub fn classes(&self) -> Vec<Word> {
        self.per_class.keys().cloned().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let j = HierarchicalJson {
            format_version: MODEL_FORMAT_VERSION,
            timesteps: self.timesteps,
            sigma_y: self.sigma_y,
            classes: self
                .per_class
                .iter()
                .map(|(h, g)| ClassJson { h: h.clone(), components: gmm_to_json(g) })
                .collect(),
        };
        serde_json::to_string_pretty(&j).expect("model serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: HierarchicalJson = serde_json::from_str(s)?;
        if j.format_version != MODEL_FORMAT_VERSION {
            return Err(GmmError::UnsupportedVersion(j.format_version));
        }
        let mut per_class = BTreeMap::new();
        for c in j.classes {
            per_class.insert(c.h, gmm_from_json(&c.components, 2 * j.timesteps)?);
        }
        Ok(Self { per_class, timesteps: j.timesteps, sigma_y: j.sigma_y })
    }
}

/// One mixture per class. Classes with fewer trajectories than requested
/// components are fitted with as many components as they have members;
/// empty classes are skipped.
pub fn fit_hierarchical(
    dataset: &BTreeMap<Word, Vec<DVector<f64>>>,
    timesteps: usize,
    sigma_y: f64,
    policy: ComponentPolicy,
    config: &EmConfig,
) -> Result<HierarchicalGmm> {
    let mut per_class = BTreeMap::new();
    for (h, data) in dataset {
        if data.is_empty() {
            log::warn!("class {h} has no trajectories; skipped");
            continue;
        }
        if let Some(x) = data.iter().find(|x| x.len() != 2 * timesteps) {
            return Err(GmmError::DimensionMismatch { expected: 2 * timesteps, got: x.len() });
        }
        let cfg = EmConfig { seed: class_seed(config.seed, h), ..*config };
        let (g, _) = fit_with_policy(data, policy, &cfg)?;
        per_class.insert(h.clone(), g);
    }
    Ok(HierarchicalGmm { per_class, timesteps, sigma_y })
}

/// Flat mixture without class information.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGmm {
    pub gmm: Gmm,
    pub timesteps: usize,
    pub sigma_y: f64,
}

impl FlatGmm {
    pub fn fit(
        data: &[DVector<f64>],
        timesteps: usize,
        sigma_y: f64,
        k: usize,
        config: &EmConfig,
    ) -> Result<Self> {
        let (gmm, _) = fit_em(data, k, config)?;
        Ok(Self { gmm, timesteps, sigma_y })
    }

    pub fn to_json_string(&self) -> String {
        let j = FlatJson {
            format_version: MODEL_FORMAT_VERSION,
            timesteps: self.timesteps,
            sigma_y: self.sigma_y,
            components: gmm_to_json(&self.gmm),
        };
        serde_json::to_string_pretty(&j).expect("model serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: FlatJson = serde_json::from_str(s)?;
        if j.format_version != MODEL_FORMAT_VERSION {
            return Err(GmmError::UnsupportedVersion(j.format_version));
        }
        Ok(Self {
            gmm: gmm_from_json(&j.components, 2 * j.timesteps)?,
            timesteps: j.timesteps,
            sigma_y: j.sigma_y,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major, full matrix.
    covariance: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ClassJson {
    h: Word,
    components: Vec<ComponentJson>,
}

#[derive(Serialize, Deserialize)]
struct HierarchicalJson {
    format_version: u32,
    timesteps: usize,
    sigma_y: f64,
    classes: Vec<ClassJson>,
}

#[derive(Serialize, Deserialize)]
struct FlatJson {
    format_version: u32,
    timesteps: usize,
    sigma_y: f64,
    components: Vec<ComponentJson>,
}

fn gmm_to_json(g: &Gmm) -> Vec<ComponentJson> {
    g.weights
        .iter()
        .zip(&g.components)
        .map(|(&weight, c)| ComponentJson {
            weight,
            mean: c.mean.iter().copied().collect(),
            covariance: c
                .covariance
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        })
        .collect()
}

fn gmm_from_json(cs: &[ComponentJson], dim: usize) -> Result<Gmm> {
    let mut weights = Vec::new();
    let mut components = Vec::new();
    for c in cs {
        if c.mean.len() != dim || c.covariance.len() != dim || c.covariance.iter().any(|r| r.len() != dim) {
            return Err(GmmError::DimensionMismatch { expected: dim, got: c.mean.len() });
        }
        weights.push(c.weight);
        components.push(GaussianComponent {
            mean: DVector::from_vec(c.mean.clone()),
            covariance: DMatrix::from_row_iterator(dim, dim, c.covariance.iter().flatten().copied()),
        });
    }
    Ok(Gmm { weights, components })
}

/// Noisy position measurements at 1-based time indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    positions: Vec<Point2>,
    time_indices: Vec<usize>,
}

impl Observation {
    pub fn new(positions: Vec<Point2>, time_indices: Vec<usize>) -> Result<Self> {
        if positions.len() != time_indices.len() {
            return Err(GmmError::InvalidObservation("positions and indices differ in length".into()));
        }
        if time_indices.iter().any(|&t| t == 0) {
            return Err(GmmError::InvalidObservation("time indices are 1-based".into()));
        }
        if time_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GmmError::InvalidObservation("time indices must increase".into()));
        }
        Ok(Self { positions, time_indices })
    }

    pub fn empty() -> Self {
        Self { positions: Vec::new(), time_indices: Vec::new() }
    }

    /// The first `positions.len()` timesteps.
    pub fn prefix(positions: Vec<Point2>) -> Self {
        let idx = (1..=positions.len()).collect();
        Self { positions, time_indices: idx }
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn time_indices(&self) -> &[usize] {
        &self.time_indices
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn observed_dims(&self) -> Vec<usize> {
        self.time_indices.iter().flat_map(|&t| [2 * (t - 1), 2 * (t - 1) + 1]).collect()
    }

    fn values(&self) -> DVector<f64> {
        flatten_points(&self.positions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `log N(y | M_O, Sigma_OO + sigma_y^2 I)`.
    pub log_likelihood: f64,
}

/// Conditions a component on noisy observations of some of its timesteps.
pub fn condition_component(
    comp: &GaussianComponent,
    obs: &Observation,
    sigma_y: f64,
) -> Result<Conditioned> {
    let d = comp.dim();
    if obs.is_empty() {
        return Ok(Conditioned {
            mean: comp.mean.clone(),
            covariance: comp.covariance.clone(),
            log_likelihood: 0.0,
        });
    }
    if let Some(&t) = obs.time_indices.iter().find(|&&t| 2 * t > d) {
        return Err(GmmError::InvalidObservation(format!("time index {t} beyond {}", d / 2)));
    }
    let dims = obs.observed_dims();
    let m = dims.len();
    let sigma = &comp.covariance;
    let mut s_oo = sigma.select_rows(&dims).select_columns(&dims);
    for i in 0..m {
        s_oo[(i, i)] += sigma_y * sigma_y;
    }
    let chol = Cholesky::new(s_oo)
        .ok_or_else(|| GmmError::NumericalFailure("observed block is not SPD".into()))?;
    let s_ao = sigma.select_columns(&dims); // d x m
    let resid = obs.values() - comp.mean.select_rows(&dims);
    let alpha = chol.solve(&resid);
    let mean = &comp.mean + &s_ao * &alpha;
    let l = chol.l_dirty();
    let w = l
        .solve_lower_triangular(&s_ao.transpose())
        .ok_or_else(|| GmmError::NumericalFailure("triangular solve".into()))?;
    let mut covariance = sigma - w.transpose() * &w;
    symmetrize(&mut covariance);
    let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    let log_likelihood = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * m as f64 * LN_2PI;
    debug_assert_eq!(mean.len(), d);
    Ok(Conditioned { mean, covariance, log_likelihood })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTerm {
    /// Full h-signature of the term's class; `None` for a flat mixture.
    pub class: Option<Word>,
    pub component: usize,
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub terms: Vec<PredictionTerm>,
    pub timesteps: usize,
    /// Set when every weight underflowed and prior weights were used instead.
    pub fallback: bool,
}

impl Prediction {
    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.weight).collect()
    }

    /// Highest-weight term; ties go to the lowest `(class, component)`.
    pub fn best_term(&self) -> &PredictionTerm {
        let mut best = &self.terms[0];
        for t in &self.terms[1..] {
            if t.weight > best.weight
                || (t.weight == best.weight && (&t.class, t.component) < (&best.class, best.component))
            {
                best = t;
            }
        }
        best
    }

    /// Total weight per class.
    pub fn class_weights(&self) -> BTreeMap<Option<Word>, f64> {
        let mut out = BTreeMap::new();
        for t in &self.terms {
            *out.entry(t.class.clone()).or_insert(0.0) += t.weight;
        }
        out
    }

    /// Per-component 2-D marginal at timestep `t` (1-based).
    pub fn time_marginal(&self, t: usize) -> Vec<(f64, Vector2<f64>, Matrix2<f64>)> {
        time_marginal(self, t)
    }
}

struct TermInput<'a> {
    class: Option<Word>,
    component: usize,
    log_prior: f64,
    comp: &'a GaussianComponent,
}

fn condition_terms(
    inputs: Vec<TermInput<'_>>,
    obs: &Observation,
    sigma_y: f64,
    timesteps: usize,
) -> Result<Prediction> {
    let mut terms = Vec::with_capacity(inputs.len());
    let mut log_w = Vec::with_capacity(inputs.len());
    let mut log_prior = Vec::with_capacity(inputs.len());
    for inp in inputs {
        if inp.comp.dim() != 2 * timesteps {
            return Err(GmmError::DimensionMismatch { expected: 2 * timesteps, got: inp.comp.dim() });
        }
        let c = condition_component(inp.comp, obs, sigma_y)?;
        log_w.push(inp.log_prior + c.log_likelihood);
        log_prior.push(inp.log_prior);
        terms.push(PredictionTerm {
            class: inp.class,
            component: inp.component,
            weight: 0.0,
            mean: c.mean,
            covariance: c.covariance,
            log_likelihood: c.log_likelihood,
        });
    }
    let (weights, fallback) = match normalize_log_weights(&log_w) {
        Some(w) => (w, false),
        None => {
            let w = normalize_log_weights(&log_prior).ok_or_else(|| {
                GmmError::NumericalFailure("all prior weights are zero".into())
            })?;
            (w, true)
        }
    };
    for (t, w) in terms.iter_mut().zip(weights) {
        t.weight = w;
    }
    Ok(Prediction { terms, timesteps, fallback })
}

/// Softmax with max subtraction. `None` when no entry is finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let e: Vec<f64> = log_w
        .iter()
        .map(|&v| if v.is_finite() { (v - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    Some(e.into_iter().map(|v| v / s).collect())
}

/// Conditioned mixture over all classes: weight of `(c, h)` is proportional
/// to `w^(c,h) P(h | p) N(y | M_O, Sigma_OO + sigma_y^2 I)`.
pub fn predict(
    model: &HierarchicalGmm,
    obs: &Observation,
    class_posterior: &ClassPosterior,
) -> Result<Prediction> {
    let mut inputs = Vec::with_capacity(model.total_components());
    for (h, g) in &model.per_class {
        let ph = class_posterior.prob(h);
        for (c, (w, comp)) in g.weights.iter().zip(&g.components).enumerate() {
            inputs.push(TermInput {
                class: Some(h.clone()),
                component: c,
                log_prior: w.ln() + ph.ln(),
                comp,
            });
        }
    }
    condition_terms(inputs, obs, model.sigma_y, model.timesteps)
}

/// Conditioned flat mixture, weights `w^c N(y | ...)`.
pub fn predict_flat(model: &FlatGmm, obs: &Observation) -> Result<Prediction> {
    let inputs = model
        .gmm
        .weights
        .iter()
        .zip(&model.gmm.components)
        .enumerate()
        .map(|(c, (w, comp))| TermInput { class: None, component: c, log_prior: w.ln(), comp })
        .collect();
    condition_terms(inputs, obs, model.sigma_y, model.timesteps)
}

/// Weight, 2-D mean and 2x2 covariance of every term at timestep `t`.
pub fn time_marginal(pred: &Prediction, t: usize) -> Vec<(f64, Vector2<f64>, Matrix2<f64>)> {
    assert!(t >= 1 && t <= pred.timesteps, "timestep {t} out of 1..={}", pred.timesteps);
    let i = 2 * (t - 1);
    pred.terms
        .iter()
        .map(|term| {
            let m = Vector2::new(term.mean[i], term.mean[i + 1]);
            let c = term.covariance.fixed_view::<2, 2>(i, i).into_owned();
            (term.weight, m, c)
        })
        .collect()
}

/// Density of a 2-D Gaussian.
pub fn gaussian2_density(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let det = cov.determinant();
    let inv = cov.try_inverse().unwrap_or_else(Matrix2::zeros);
    let d = x - mean;
    (-0.5 * d.dot(&(inv * d))).exp() / (2.0 * PI * det.sqrt())
}
