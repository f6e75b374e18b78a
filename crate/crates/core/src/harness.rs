//! Experiment configuration, sweeps and report files.
//!
//! A run walks the `(n, T)` grid in order, computing one or more result rows
//! per grid point; replicates inside a grid point run on the rayon pool. All
//! replicate seeds derive from `master_seed`, which is also the `seed` column
//! of every row, so a row can be reproduced by rerunning its `(n, T)` alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    nonconvex_opt_bound, sgd_gen_bound, sgd_opt_bound, sgd_stability_bound, sgda_gen_bounds, sgda_opt_bound,
    sgda_stability_bound, BoundInputs,
};
use crate::chain::{analyze, deviation_curve, ChainSpec, ChainSpectrum, MixingProfile, TransitionMatrix};
use crate::error::{Error, Result};
use crate::losses::{
    empirical_risk, erm_oracle, generate_dataset, generate_saddle_dataset, interior_saddle, pair_distance,
    saddle_oracle, Dataset, Example, Generator, GeneratorSpec, LossFamily, LossKind, MinimaxFamily, MinimaxKind,
    SaddleCoefficients, SaddleExample, SaddleGenerator,
};
use crate::optim::{check_sgd_step, DomainSpec, StepSchedule};
use crate::rng::{derive_seed, stream_seed, Stream};
use crate::stability::{
    estimate_stability_sgda, generalization_report_sgd, grad_norm_trace, opt_gap_sgd, pd_gap_sgda, plug_in_comparator,
    run_replicates, sgda_risk_report, stability_samples_sgd, Comparator, Estimate, SgdSetup, SgdaSetup,
};
use crate::vecops::norm;

pub const TOOL_NAME: &str = "mcsgm";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ChainInfo,
    SgdRate,
    SgdStability,
    SgdGen,
    SgdaRate,
    SgdaRisk,
    NonconvexGradnorm,
    HpQuantiles,
    Bounds,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ChainInfo => "chain-info",
            ExperimentKind::SgdRate => "sgd-rate",
            ExperimentKind::SgdStability => "sgd-stability",
            ExperimentKind::SgdGen => "sgd-gen",
            ExperimentKind::SgdaRate => "sgda-rate",
            ExperimentKind::SgdaRisk => "sgda-risk",
            ExperimentKind::NonconvexGradnorm => "nonconvex-gradnorm",
            ExperimentKind::HpQuantiles => "hp-quantiles",
            ExperimentKind::Bounds => "bounds",
        }
    }

    fn log_scale(self) -> bool {
        matches!(
            self,
            ExperimentKind::SgdRate
                | ExperimentKind::SgdaRate
                | ExperimentKind::NonconvexGradnorm
                | ExperimentKind::HpQuantiles
        )
    }
}

/// How `T` follows from `n` when no explicit `T` list is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TRule {
    /// `T = n`
    EqualN,
    /// `T = n^2`
    NSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_rule: Option<TRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Defaults to the generator's feature bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleConfig {
    pub kind: MinimaxKind,
    pub d_w: usize,
    pub d_v: usize,
    #[serde(default)]
    pub rho: f64,
    pub g: f64,
    pub r_w: f64,
    pub r_v: f64,
    pub mean_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HpTarget {
    #[default]
    Sgd,
    Sgda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub target: HpTarget,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            target: HpTarget::Sgd,
        }
    }
}

/// Plug-in population comparator: ERM on an independent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparatorConfig {
    /// Defaults to `10 max(n, 1000)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default = "default_comparator_budget")]
    pub budget: usize,
}

/// Explicit inputs for the `bounds` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub d0: f64,
    #[serde(default)]
    pub f0_sup: f64,
    #[serde(default = "default_diameter")]
    pub d_w: f64,
    #[serde(default = "default_diameter")]
    pub d_v: f64,
    #[serde(default)]
    pub f_s_w0: f64,
}

fn default_gamma() -> f64 {
    0.05
}
fn default_comparator_budget() -> usize {
    2000
}
fn default_diameter() -> f64 {
    2.0
}
fn default_replicates() -> usize {
    20
}
fn default_n_test() -> usize {
    10_000
}
fn default_oracle_budget() -> usize {
    crate::losses::DEFAULT_ORACLE_BUDGET
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_oracle_budget")]
    pub oracle_budget: usize,
    #[serde(default = "default_true")]
    pub plot_script: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub grid: GridConfig,
    pub chain: ChainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<StepSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saddle: Option<SaddleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<QuantileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparator: Option<ComparatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GridPoint {
    pub n: usize,
    pub t: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfiguration(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, ignoring the output location.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = None;
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Fixes the experiment kind from the CLI subcommand.
    pub fn with_kind(mut self, kind: ExperimentKind) -> Result<Self> {
        match self.kind {
            Some(k) if k != kind => Err(Error::InvalidConfiguration(format!(
                "config declares kind = {} but the {} subcommand was used",
                k.name(),
                kind.name()
            ))),
            _ => {
                self.kind = Some(kind);
                Ok(self)
            }
        }
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind
            .ok_or_else(|| Error::InvalidConfiguration("experiment kind not set".into()))
    }

    pub fn grid_points(&self) -> Result<Vec<GridPoint>> {
        let kind = self.kind()?;
        if self.grid.n.is_empty() {
            return Err(Error::InvalidConfiguration("grid.n must be nonempty".into()));
        }
        if self.grid.n.contains(&0) {
            return Err(Error::InvalidConfiguration("grid.n entries must be positive".into()));
        }
        if !self.grid.t.is_empty() && self.grid.t_rule.is_some() {
            return Err(Error::InvalidConfiguration(
                "give either grid.t or grid.t_rule, not both".into(),
            ));
        }
        let mut points = Vec::new();
        for &n in &self.grid.n {
            let ts: Vec<usize> = match (kind, self.grid.t_rule) {
                (ExperimentKind::ChainInfo, _) => vec![0],
                (_, Some(TRule::EqualN)) => vec![n],
                (_, Some(TRule::NSquared)) => vec![n * n],
                (_, None) if self.grid.t.is_empty() => {
                    return Err(Error::InvalidConfiguration("grid.t or grid.t_rule required".into()))
                }
                (_, None) => self.grid.t.clone(),
            };
            points.extend(ts.into_iter().map(|t| GridPoint { n, t }));
        }
        Ok(points)
    }

    fn schedule(&self) -> Result<StepSchedule> {
        self.schedule
            .ok_or_else(|| Error::InvalidConfiguration("schedule section required".into()))
    }

    fn quantile_config(&self) -> QuantileConfig {
        self.quantile.clone().unwrap_or_default()
    }

    pub fn generator_built(&self) -> Result<Generator> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::InvalidConfiguration("generator section required".into()))?
            .build()
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        let d = self
            .domain
            .ok_or_else(|| Error::InvalidConfiguration("domain section required".into()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn loss_family(&self) -> Result<LossFamily> {
        let loss = self
            .loss
            .as_ref()
            .ok_or_else(|| Error::InvalidConfiguration("loss section required".into()))?;
        let gen = self.generator_built()?;
        let b_x = match (&loss.b_x, &gen) {
            (Some(b), _) => *b,
            (None, Generator::Classification { b_x, .. }) => *b_x,
            (None, Generator::Fixed(z)) => norm(&z.x).max(f64::MIN_POSITIVE),
        };
        LossFamily::new(loss.kind, gen.dim(), b_x, &self.domain_spec()?)
    }

    pub fn minimax_family(&self) -> Result<MinimaxFamily> {
        let s = self
            .saddle
            .as_ref()
            .ok_or_else(|| Error::InvalidConfiguration("saddle section required".into()))?;
        MinimaxFamily::new(s.kind, s.d_w, s.d_v, s.rho, s.g, s.r_w, s.r_v)
    }

    pub fn saddle_generator(&self, fam: &MinimaxFamily) -> Result<SaddleGenerator> {
        let s = self
            .saddle
            .as_ref()
            .ok_or_else(|| Error::InvalidConfiguration("saddle section required".into()))?;
        Ok(SaddleGenerator::new(fam, s.mean_seed))
    }

    pub fn chain_for(&self, n: usize) -> Result<TransitionMatrix> {
        self.chain.with_n(n)?.build()
    }

    /// Resolves everything a run needs without running it, including the
    /// chain spectrum for every `n` and the step-size checks for every `T`.
    pub fn validate(&self) -> Result<Vec<GridPoint>> {
        self.check(true)
    }

    /// Structural checks only; per-grid-point problems surface during the
    /// sweep as failure rows.
    pub fn validate_structure(&self) -> Result<Vec<GridPoint>> {
        self.check(false)
    }

    fn check(&self, per_point: bool) -> Result<Vec<GridPoint>> {
        let kind = self.kind()?;
        let points = self.grid_points()?;
        if self.replicates < 1 {
            return Err(Error::InvalidConfiguration("replicates must be at least 1".into()));
        }
        let needs_replicates = !matches!(kind, ExperimentKind::ChainInfo | ExperimentKind::Bounds);
        if needs_replicates && self.replicates < 2 {
            return Err(Error::InvalidConfiguration(format!(
                "{} needs at least 2 replicates",
                kind.name()
            )));
        }
        if per_point {
            let mut ns: Vec<usize> = points.iter().map(|p| p.n).collect();
            ns.dedup();
            for &n in &ns {
                analyze(&self.chain_for(n)?)?;
            }
        }
        let checked: &[GridPoint] = if per_point { &points } else { &[] };
        let sched = match kind {
            ExperimentKind::ChainInfo => None,
            _ => Some(self.schedule()?),
        };
        let uses_loss = matches!(
            kind,
            ExperimentKind::SgdRate
                | ExperimentKind::SgdStability
                | ExperimentKind::SgdGen
                | ExperimentKind::NonconvexGradnorm
        ) || (kind == ExperimentKind::HpQuantiles && self.quantile_config().target == HpTarget::Sgd);
        let uses_saddle = matches!(kind, ExperimentKind::SgdaRate | ExperimentKind::SgdaRisk)
            || (kind == ExperimentKind::HpQuantiles && self.quantile_config().target == HpTarget::Sgda);
        if uses_loss {
            let fam = self.loss_family()?;
            if kind == ExperimentKind::NonconvexGradnorm && !fam.smooth {
                return Err(Error::InvalidConfiguration(
                    "gradient-norm runs need a smooth loss".into(),
                ));
            }
            if matches!(kind, ExperimentKind::SgdRate | ExperimentKind::HpQuantiles) && !fam.convex {
                return Err(Error::InvalidConfiguration(
                    "optimization-gap runs need a convex loss".into(),
                ));
            }
            let sched = sched.expect("schedule resolved above");
            for p in checked {
                check_sgd_step(&fam, sched.resolve(p.t)?)?;
            }
        }
        if uses_saddle {
            let fam = self.minimax_family()?;
            self.saddle_generator(&fam)?;
            let sched = sched.expect("schedule resolved above");
            for p in checked {
                sched.resolve(p.t)?;
            }
        }
        if kind == ExperimentKind::Bounds {
            if self.bounds.is_none() {
                return Err(Error::InvalidConfiguration("bounds section required".into()));
            }
            let sched = sched.expect("schedule resolved above");
            for p in checked {
                sched.resolve(p.t)?;
            }
        }
        if kind == ExperimentKind::HpQuantiles {
            let g = self.quantile_config().gamma;
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidConfiguration(format!(
                    "gamma must lie in (0, 1), got {g}"
                )));
            }
        }
        Ok(points)
    }
}

// ---------------------------------------------------------------------------
// Rate fits and quantiles

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln value` on `ln T`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.iter().any(|&(t, v)| !(t > 0.0) || !(v > 0.0)) {
        return Err(Error::invalid("rate fits need positive T and positive values"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if points.len() < 2 || !(sxx > 0.0) {
        return Err(Error::invalid("rate fits need at least two distinct T"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Empirical `(1 - gamma)`-quantile with linear interpolation between order
/// statistics (position `(m - 1)(1 - gamma)` in the sorted sample).
pub fn quantile_report(values: &[f64], gamma: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * (1.0 - gamma);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

// ---------------------------------------------------------------------------
// Result rows

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainInfoRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub k_p: usize,
    pub c_eff: f64,
    pub symmetric: bool,
    pub second_modulus: f64,
    /// `max_j [deviation(P, j) - c_eff lambda^j]` over the plotted range.
    pub max_bound_excess: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SgdRateRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    pub gap_mean: f64,
    pub gap_se: f64,
    pub gap_quantile: f64,
    pub plugin_gap_mean: Option<f64>,
    pub plugin_gap_se: Option<f64>,
    pub bound: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SgdStabilityRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    pub stability_mean: f64,
    pub stability_se: f64,
    pub bound: f64,
    pub bound_case: String,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SgdGenRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    pub empirical_mean: f64,
    pub empirical_se: f64,
    pub population_mean: f64,
    pub population_se: f64,
    pub gen_gap_mean: f64,
    pub gen_gap_se: f64,
    pub excess_mean: Option<f64>,
    pub excess_se: Option<f64>,
    pub bound: f64,
    pub bound_case: String,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SgdaRateRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    pub gap_mean: f64,
    pub gap_se: f64,
    pub gap_quantile: f64,
    pub saddle_dist_mean: f64,
    pub saddle_dist_se: f64,
    pub saddle_source: String,
    pub bound: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SgdaRiskRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    pub bound_case: String,
    pub stability_mean: f64,
    pub stability_se: f64,
    pub stability_bound: f64,
    pub weak_pd_population: f64,
    pub weak_pd_empirical: f64,
    pub weak_pd_gen_mean: f64,
    pub weak_pd_gen_se: f64,
    pub weak_pd_gen_bound: f64,
    pub primal_population: Option<f64>,
    pub primal_empirical: Option<f64>,
    pub primal_gen_mean: Option<f64>,
    pub primal_gen_se: Option<f64>,
    pub primal_gen_bound: Option<f64>,
    pub primal_excess_mean: Option<f64>,
    pub primal_excess_se: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradNormRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    /// Minimum over checkpoints of the replicate-mean squared gradient norm.
    pub min_sq_grad: f64,
    pub final_sq_grad: f64,
    pub bound: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QuantileRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub replicates: usize,
    pub target: String,
    pub gamma: f64,
    pub mean: f64,
    pub se: f64,
    pub quantile: f64,
    pub quantile_over_mean: f64,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub bound: String,
    pub value: Option<f64>,
    pub status: String,
}

fn ok() -> String {
    "ok".to_string()
}

// ---------------------------------------------------------------------------
// Shared per-n state

struct ChainState {
    matrix: TransitionMatrix,
    spectrum: ChainSpectrum,
    mixing: MixingProfile,
}

impl ChainState {
    fn new(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        let matrix = cfg.chain_for(n)?;
        let spectrum = analyze(&matrix)?;
        let mixing = spectrum.mixing()?;
        Ok(Self {
            matrix,
            spectrum,
            mixing,
        })
    }
}

/// Cache of per-`n` state, rebuilt when `n` changes (grids are `n`-major).
struct PerN<T> {
    current: Option<(usize, T)>,
}

impl<T> PerN<T> {
    fn new() -> Self {
        Self { current: None }
    }

    fn get(&mut self, n: usize, build: impl FnOnce() -> Result<T>) -> Result<&T> {
        if self.current.as_ref().is_none_or(|(m, _)| *m != n) {
            self.current = Some((n, build()?));
        }
        Ok(&self.current.as_ref().expect("just filled").1)
    }
}

/// Named two-column curves, in insertion-independent (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Curves {
    pub curves: BTreeMap<String, Vec<(f64, f64)>>,
}

impl Curves {
    fn push(&mut self, name: impl Into<String>, x: f64, y: f64) {
        self.curves.entry(name.into()).or_default().push((x, y));
    }
}

fn curve_key(cfg: &ExperimentConfig, metric: &str, p: &GridPoint) -> (String, f64) {
    if cfg.grid.t_rule.is_some() {
        (metric.to_string(), p.n as f64)
    } else {
        (format!("{metric}_n{}", p.n), p.t as f64)
    }
}

fn sgd_setup(cfg: &ExperimentConfig, chain: &ChainState, p: &GridPoint) -> Result<SgdSetup> {
    Ok(SgdSetup {
        fam: cfg.loss_family()?,
        gen: cfg.generator_built()?,
        n: p.n,
        t: p.t,
        sched: cfg.schedule()?,
        domain: cfg.domain_spec()?,
        chain: chain.matrix.clone(),
    })
}

fn sgda_setup(cfg: &ExperimentConfig, chain: &ChainState, p: &GridPoint) -> Result<SgdaSetup> {
    let fam = cfg.minimax_family()?;
    Ok(SgdaSetup {
        gen: cfg.saddle_generator(&fam)?,
        w_domain: fam.w_domain(),
        v_domain: fam.v_domain(),
        fam,
        n: p.n,
        t: p.t,
        sched: cfg.schedule()?,
        chain: chain.matrix.clone(),
    })
}

fn sgd_bound_inputs(
    fam: &LossFamily,
    domain: &DomainSpec,
    mixing: MixingProfile,
    p: &GridPoint,
    eta: f64,
) -> BoundInputs {
    BoundInputs {
        g: fam.g,
        l: fam.l,
        rho: 0.0,
        n: p.n,
        t: p.t,
        eta,
        mixing,
        d0: 0.0,
        f0_sup: fam.sup_value_at_zero(),
        d_w: domain.diameter(),
        d_v: 0.0,
        f_s_w0: 0.0,
    }
}

fn sgda_bound_inputs(fam: &MinimaxFamily, mixing: MixingProfile, p: &GridPoint, eta: f64) -> BoundInputs {
    BoundInputs {
        g: fam.g,
        l: Some(fam.l),
        rho: fam.rho,
        n: p.n,
        t: p.t,
        eta,
        mixing,
        d0: 0.0,
        f0_sup: 0.0,
        d_w: 2.0 * fam.r_w,
        d_v: 2.0 * fam.r_v,
        f_s_w0: 0.0,
    }
}

/// Case (a) when the smooth precondition holds, else (b).
fn sgd_stability_case(fam: &LossFamily, eta: f64) -> bool {
    fam.smooth && fam.l.is_some_and(|l| eta <= 2.0 / l)
}

fn sgda_stability_case(fam: &MinimaxFamily, t: usize, eta: f64) -> bool {
    t as f64 * eta * eta <= 1.0 / (2.0 * fam.l * fam.l)
}

fn case_label(smooth: bool) -> String {
    if smooth { "a" } else { "b" }.to_string()
}

// ---------------------------------------------------------------------------
// Fixed-dataset optimization runs

struct SgdFixed {
    chain: ChainState,
    s: Dataset<Example>,
    w_erm: Vec<f64>,
    plugin: Option<Comparator>,
}

impl SgdFixed {
    fn new(cfg: &ExperimentConfig, n: usize, with_plugin: bool) -> Result<Self> {
        let fam = cfg.loss_family()?;
        let gen = cfg.generator_built()?;
        let domain = cfg.domain_spec()?;
        let s = generate_dataset(&gen, n, stream_seed(cfg.master_seed, Stream::Dataset))?;
        let (w_erm, _) = erm_oracle(&fam, &s, &domain, cfg.oracle_budget)?;
        let plugin = match (&cfg.comparator, with_plugin) {
            (Some(c), true) => Some(plug_in_comparator(
                &fam,
                &gen,
                &domain,
                c.size.unwrap_or(10 * n.max(1000)),
                c.budget,
                cfg.n_test,
                derive_seed(cfg.master_seed, u64::MAX),
            )?),
            _ => None,
        };
        Ok(Self {
            chain: ChainState::new(cfg, n)?,
            s,
            w_erm,
            plugin,
        })
    }
}

/// Per-replicate optimization gaps of MC-SGD on the fixed dataset: against
/// the ERM oracle and, if configured, the plug-in comparator.
fn sgd_fixed_gaps(
    cfg: &ExperimentConfig,
    fixed: &SgdFixed,
    p: &GridPoint,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    let setup = sgd_setup(cfg, &fixed.chain, p)?;
    let eta = setup.eta()?;
    let rows = run_replicates(cfg.replicates, cfg.master_seed, |_, seed| {
        let path = setup.path(seed)?;
        let tr = setup.run(&fixed.s, &path)?;
        let gap = opt_gap_sgd(&setup.fam, &fixed.s, &tr, &fixed.w_erm)?;
        let plugin = match &fixed.plugin {
            Some(c) => Some(opt_gap_sgd(&setup.fam, &fixed.s, &tr, &c.w)?),
            None => None,
        };
        Ok((gap, plugin))
    })?;
    let gaps = rows.iter().map(|r| r.0).collect();
    let plugin = fixed
        .plugin
        .as_ref()
        .map(|_| rows.iter().map(|r| r.1.expect("computed with comparator")).collect());
    Ok((eta, gaps, plugin))
}

struct SgdaFixed {
    chain: ChainState,
    s: Dataset<SaddleExample>,
    saddle: (Vec<f64>, Vec<f64>),
    saddle_source: String,
}

impl SgdaFixed {
    fn new(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        let fam = cfg.minimax_family()?;
        let gen = cfg.saddle_generator(&fam)?;
        let s = generate_saddle_dataset(&gen, n, stream_seed(cfg.master_seed, Stream::Dataset))?;
        let coefs = SaddleCoefficients::from_dataset(&fam, &s)?;
        let interior = if fam.rho > 0.0 {
            interior_saddle(&coefs, fam.r_w, fam.r_v)
        } else {
            None
        };
        let (saddle, saddle_source) = match interior {
            Some(pair) => (pair, "closed-form".to_string()),
            None => {
                let (w, v, _) = saddle_oracle(&fam, &s, &fam.w_domain(), &fam.v_domain(), cfg.oracle_budget)?;
                ((w, v), "extragradient".to_string())
            }
        };
        Ok(Self {
            chain: ChainState::new(cfg, n)?,
            s,
            saddle,
            saddle_source,
        })
    }
}

/// Per-replicate primal-dual gaps and distances to the empirical saddle.
fn sgda_fixed_gaps(cfg: &ExperimentConfig, fixed: &SgdaFixed, p: &GridPoint) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let setup = sgda_setup(cfg, &fixed.chain, p)?;
    let eta = setup.eta()?;
    let rows = run_replicates(cfg.replicates, cfg.master_seed, |_, seed| {
        let path = setup.path(seed)?;
        let tr = setup.run(&fixed.s, &path)?;
        let gap = pd_gap_sgda(&setup.fam, &fixed.s, &tr, &setup.w_domain, &setup.v_domain)?;
        let d = pair_distance(&tr.averaged.0, &tr.averaged.1, &fixed.saddle.0, &fixed.saddle.1);
        Ok((gap, d))
    })?;
    Ok((
        eta,
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
    ))
}

// ---------------------------------------------------------------------------
// Experiments

/// Rows, curves and fits of one run; `failure` marks where a sweep stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
    pub curves: Curves,
    pub fits: Vec<(String, RateFit)>,
    pub spectra: Vec<SpectrumSummary>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub n: usize,
    pub lambda: f64,
    pub k_p: usize,
    pub c_eff: f64,
    pub symmetric: bool,
}

/// Typed rows of a sweep, possibly cut short by an error.
pub struct Sweep<R> {
    pub rows: Vec<R>,
    pub curves: Curves,
    pub failure: Option<(GridPoint, Error)>,
}

impl<R> Sweep<R> {
    /// All rows, or the first error.
    pub fn into_result(self) -> Result<Vec<R>> {
        match self.failure {
            Some((_, e)) => Err(e),
            None => Ok(self.rows),
        }
    }
}

fn sweep<R>(points: &[GridPoint], mut f: impl FnMut(&GridPoint, &mut Curves) -> Result<Vec<R>>) -> Sweep<R> {
    let mut rows = Vec::new();
    let mut curves = Curves::default();
    for p in points {
        match f(p, &mut curves) {
            Ok(r) => rows.extend(r),
            Err(e) => {
                return Sweep {
                    rows,
                    curves,
                    failure: Some((*p, e)),
                }
            }
        }
    }
    Sweep {
        rows,
        curves,
        failure: None,
    }
}

/// Steps of the deviation curve plotted by `chain-info`.
pub const CHAIN_CURVE_STEPS: usize = 200;
/// Largest chain for which `chain-info` computes matrix powers.
pub const CHAIN_CURVE_MAX_N: usize = 256;

pub fn chain_info(cfg: &ExperimentConfig) -> Sweep<ChainInfoRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    sweep(&points, |p, curves| {
        let chain = ChainState::new(cfg, p.n)?;
        let second_modulus = chain.spectrum.eigenvalues.get(1).map_or(0.0, |z| z.norm());
        let mut excess = None;
        if p.n <= CHAIN_CURVE_MAX_N {
            let dev = deviation_curve(&chain.matrix, CHAIN_CURVE_STEPS);
            let mut worst = f64::NEG_INFINITY;
            for (j, d) in dev.iter().enumerate() {
                let b = chain.mixing.c_eff * chain.mixing.lambda.powi(j as i32);
                curves.push(format!("deviation_n{}", p.n), j as f64, *d);
                curves.push(format!("bound_n{}", p.n), j as f64, b);
                worst = worst.max(d - b);
            }
            excess = Some(worst);
        }
        Ok(vec![ChainInfoRow {
            n: p.n,
            t: p.t,
            eta: 0.0,
            lambda: chain.mixing.lambda,
            seed: cfg.master_seed,
            k_p: chain.mixing.k_p,
            c_eff: chain.mixing.c_eff,
            symmetric: chain.spectrum.symmetric,
            second_modulus,
            max_bound_excess: excess,
            status: ok(),
        }])
    })
}

fn failed_sweep<R>(e: Error) -> Sweep<R> {
    Sweep {
        rows: Vec::new(),
        curves: Curves::default(),
        failure: Some((GridPoint { n: 0, t: 0 }, e)),
    }
}

pub fn sgd_rate(cfg: &ExperimentConfig) -> Sweep<SgdRateRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let gamma = cfg.quantile_config().gamma;
    let mut cache = PerN::new();
    sweep(&points, |p, curves| {
        let fixed = cache.get(p.n, || SgdFixed::new(cfg, p.n, true))?;
        let fam = cfg.loss_family()?;
        let (eta, gaps, plugin) = sgd_fixed_gaps(cfg, fixed, p)?;
        let e = Estimate::from_samples(&gaps);
        let mut inputs = sgd_bound_inputs(&fam, &cfg.domain_spec()?, fixed.chain.mixing, p, eta);
        inputs.d0 = norm(&fixed.w_erm);
        let bound = sgd_opt_bound(&inputs).ok();
        let plugin = plugin.map(|g| Estimate::from_samples(&g));
        curves.push(format!("gap_n{}", p.n), p.t as f64, e.mean);
        if let Some(b) = bound {
            curves.push(format!("bound_n{}", p.n), p.t as f64, b);
        }
        Ok(vec![SgdRateRow {
            n: p.n,
            t: p.t,
            eta,
            lambda: fixed.chain.mixing.lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            gap_mean: e.mean,
            gap_se: e.se,
            gap_quantile: quantile_report(&gaps, gamma)?,
            plugin_gap_mean: plugin.map(|g| g.mean),
            plugin_gap_se: plugin.map(|g| g.se),
            bound,
            status: ok(),
        }])
    })
}

pub fn sgd_stability(cfg: &ExperimentConfig) -> Sweep<SgdStabilityRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let mut cache = PerN::new();
    sweep(&points, |p, curves| {
        let chain = cache.get(p.n, || ChainState::new(cfg, p.n))?;
        let setup = sgd_setup(cfg, chain, p)?;
        let eta = setup.eta()?;
        let d = stability_samples_sgd(&setup, cfg.replicates, cfg.master_seed)?;
        let e = Estimate::from_samples(&d);
        let smooth = sgd_stability_case(&setup.fam, eta);
        let bound = sgd_stability_bound(
            &sgd_bound_inputs(&setup.fam, &setup.domain, chain.mixing, p, eta),
            smooth,
        )?;
        let (name, x) = curve_key(cfg, "stability", p);
        curves.push(name, x, e.mean);
        let (name, x) = curve_key(cfg, "bound", p);
        curves.push(name, x, bound);
        Ok(vec![SgdStabilityRow {
            n: p.n,
            t: p.t,
            eta,
            lambda: chain.mixing.lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            stability_mean: e.mean,
            stability_se: e.se,
            bound,
            bound_case: case_label(smooth),
            status: ok(),
        }])
    })
}

pub fn sgd_gen(cfg: &ExperimentConfig) -> Sweep<SgdGenRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let mut cache: PerN<(ChainState, Option<Comparator>)> = PerN::new();
    sweep(&points, |p, curves| {
        let (chain, comparator) = cache.get(p.n, || {
            let chain = ChainState::new(cfg, p.n)?;
            let comparator = match &cfg.comparator {
                Some(c) => Some(plug_in_comparator(
                    &cfg.loss_family()?,
                    &cfg.generator_built()?,
                    &cfg.domain_spec()?,
                    c.size.unwrap_or(10 * p.n.max(1000)),
                    c.budget,
                    cfg.n_test,
                    derive_seed(cfg.master_seed, u64::MAX),
                )?),
                None => None,
            };
            Ok((chain, comparator))
        })?;
        let setup = sgd_setup(cfg, chain, p)?;
        let eta = setup.eta()?;
        let r = generalization_report_sgd(&setup, cfg.replicates, cfg.n_test, cfg.master_seed, comparator.as_ref())?;
        let smooth = sgd_stability_case(&setup.fam, eta);
        let bound = sgd_gen_bound(
            &sgd_bound_inputs(&setup.fam, &setup.domain, chain.mixing, p, eta),
            smooth,
        )?;
        let (name, x) = curve_key(cfg, "gen_gap", p);
        curves.push(name, x, r.gen_gap.mean);
        let (name, x) = curve_key(cfg, "bound", p);
        curves.push(name, x, bound);
        Ok(vec![SgdGenRow {
            n: p.n,
            t: p.t,
            eta,
            lambda: chain.mixing.lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            empirical_mean: r.empirical.mean,
            empirical_se: r.empirical.se,
            population_mean: r.population.mean,
            population_se: r.population.se,
            gen_gap_mean: r.gen_gap.mean,
            gen_gap_se: r.gen_gap.se,
            excess_mean: r.excess.map(|e| e.mean),
            excess_se: r.excess.map(|e| e.se),
            bound,
            bound_case: case_label(smooth),
            status: ok(),
        }])
    })
}

pub fn sgda_rate(cfg: &ExperimentConfig) -> Sweep<SgdaRateRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let gamma = cfg.quantile_config().gamma;
    let mut cache = PerN::new();
    sweep(&points, |p, curves| {
        let fixed = cache.get(p.n, || SgdaFixed::new(cfg, p.n))?;
        let fam = cfg.minimax_family()?;
        let (eta, gaps, dists) = sgda_fixed_gaps(cfg, fixed, p)?;
        let g = Estimate::from_samples(&gaps);
        let d = Estimate::from_samples(&dists);
        let bound = sgda_opt_bound(&sgda_bound_inputs(&fam, fixed.chain.mixing, p, eta)).ok();
        curves.push(format!("gap_n{}", p.n), p.t as f64, g.mean);
        curves.push(format!("saddle_dist_n{}", p.n), p.t as f64, d.mean);
        if let Some(b) = bound {
            curves.push(format!("bound_n{}", p.n), p.t as f64, b);
        }
        Ok(vec![SgdaRateRow {
            n: p.n,
            t: p.t,
            eta,
            lambda: fixed.chain.mixing.lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            gap_mean: g.mean,
            gap_se: g.se,
            gap_quantile: quantile_report(&gaps, gamma)?,
            saddle_dist_mean: d.mean,
            saddle_dist_se: d.se,
            saddle_source: fixed.saddle_source.clone(),
            bound,
            status: ok(),
        }])
    })
}

pub fn sgda_risk(cfg: &ExperimentConfig) -> Sweep<SgdaRiskRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let mut cache = PerN::new();
    sweep(&points, |p, curves| {
        let chain = cache.get(p.n, || ChainState::new(cfg, p.n))?;
        let setup = sgda_setup(cfg, chain, p)?;
        let eta = setup.eta()?;
        let smooth = sgda_stability_case(&setup.fam, p.t, eta);
        let inputs = sgda_bound_inputs(&setup.fam, chain.mixing, p, eta);
        let stab_bound = sgda_stability_bound(&inputs, smooth)?;
        let gen_bounds = sgda_gen_bounds(&inputs, smooth)?;
        let stab = estimate_stability_sgda(&setup, cfg.replicates, cfg.master_seed)?;
        let risk = sgda_risk_report(&setup, cfg.replicates, cfg.n_test, cfg.master_seed)?;
        let m = risk.minimax.expect("minimax report");
        let (name, x) = curve_key(cfg, "stability", p);
        curves.push(name, x, stab.mean_distance);
        let (name, x) = curve_key(cfg, "stability_bound", p);
        curves.push(name, x, stab_bound);
        let (name, x) = curve_key(cfg, "weak_pd_gen", p);
        curves.push(name, x, m.weak_pd_gen.mean);
        Ok(vec![SgdaRiskRow {
            n: p.n,
            t: p.t,
            eta,
            lambda: chain.mixing.lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            bound_case: case_label(smooth),
            stability_mean: stab.mean_distance,
            stability_se: stab.std_error,
            stability_bound: stab_bound,
            weak_pd_population: m.weak_pd_population.mean,
            weak_pd_empirical: m.weak_pd_empirical.mean,
            weak_pd_gen_mean: m.weak_pd_gen.mean,
            weak_pd_gen_se: m.weak_pd_gen.se,
            weak_pd_gen_bound: gen_bounds.weak_pd,
            primal_population: m.primal_population.map(|e| e.mean),
            primal_empirical: m.primal_empirical.map(|e| e.mean),
            primal_gen_mean: m.primal_gen.map(|e| e.mean),
            primal_gen_se: m.primal_gen.map(|e| e.se),
            primal_gen_bound: gen_bounds.primal,
            primal_excess_mean: m.primal_excess.map(|e| e.mean),
            primal_excess_se: m.primal_excess.map(|e| e.se),
            status: ok(),
        }])
    })
}

pub fn nonconvex_gradnorm(cfg: &ExperimentConfig) -> Sweep<GradNormRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let mut cache: PerN<(ChainState, Dataset<Example>)> = PerN::new();
    sweep(&points, |p, curves| {
        let (chain, s) = cache.get(p.n, || {
            let s = generate_dataset(
                &cfg.generator_built()?,
                p.n,
                stream_seed(cfg.master_seed, Stream::Dataset),
            )?;
            Ok((ChainState::new(cfg, p.n)?, s))
        })?;
        let setup = sgd_setup(cfg, chain, p)?;
        let eta = setup.eta()?;
        let traces = run_replicates(cfg.replicates, cfg.master_seed, |_, seed| {
            let path = setup.path(seed)?;
            grad_norm_trace(&setup.fam, s, &setup.run(s, &path)?)
        })?;
        let k = traces[0].sq_norms.len();
        if k == 0 {
            return Err(Error::InvalidConfiguration("gradient-norm runs need T >= 1".into()));
        }
        let mean: Vec<f64> = (0..k)
            .map(|i| traces.iter().map(|tr| tr.sq_norms[i]).sum::<f64>() / traces.len() as f64)
            .collect();
        let min_sq_grad = mean.iter().copied().fold(f64::INFINITY, f64::min);
        for (&j, m) in traces[0].checkpoints.iter().zip(&mean) {
            curves.push(format!("sq_grad_n{}_T{}", p.n, p.t), j as f64, *m);
        }
        curves.push(format!("min_sq_grad_n{}", p.n), p.t as f64, min_sq_grad);
        let mut inputs = sgd_bound_inputs(&setup.fam, &setup.domain, chain.mixing, p, eta);
        inputs.d_w = setup.domain.diameter();
        inputs.f_s_w0 = empirical_risk(&setup.fam, s, &vec![0.0; setup.fam.d])?;
        Ok(vec![GradNormRow {
            n: p.n,
            t: p.t,
            eta,
            lambda: chain.mixing.lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            min_sq_grad,
            final_sq_grad: *mean.last().expect("nonempty"),
            bound: nonconvex_opt_bound(&inputs).ok(),
            status: ok(),
        }])
    })
}

pub fn hp_quantiles(cfg: &ExperimentConfig) -> Sweep<QuantileRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let q = cfg.quantile_config();
    let mut sgd_cache = PerN::new();
    let mut sgda_cache = PerN::new();
    sweep(&points, |p, curves| {
        let (eta, lambda, gaps) = match q.target {
            HpTarget::Sgd => {
                let fixed = sgd_cache.get(p.n, || SgdFixed::new(cfg, p.n, false))?;
                let (eta, gaps, _) = sgd_fixed_gaps(cfg, fixed, p)?;
                (eta, fixed.chain.mixing.lambda, gaps)
            }
            HpTarget::Sgda => {
                let fixed = sgda_cache.get(p.n, || SgdaFixed::new(cfg, p.n))?;
                let (eta, gaps, _) = sgda_fixed_gaps(cfg, fixed, p)?;
                (eta, fixed.chain.mixing.lambda, gaps)
            }
        };
        let e = Estimate::from_samples(&gaps);
        let quantile = quantile_report(&gaps, q.gamma)?;
        curves.push(format!("quantile_n{}", p.n), p.t as f64, quantile);
        curves.push(format!("mean_n{}", p.n), p.t as f64, e.mean);
        Ok(vec![QuantileRow {
            n: p.n,
            t: p.t,
            eta,
            lambda,
            seed: cfg.master_seed,
            replicates: cfg.replicates,
            target: match q.target {
                HpTarget::Sgd => "sgd".into(),
                HpTarget::Sgda => "sgda".into(),
            },
            gamma: q.gamma,
            mean: e.mean,
            se: e.se,
            quantile,
            quantile_over_mean: quantile / e.mean,
            status: ok(),
        }])
    })
}

pub fn bounds_table(cfg: &ExperimentConfig) -> Sweep<BoundRow> {
    let points = match cfg.validate_structure() {
        Ok(p) => p,
        Err(e) => return failed_sweep(e),
    };
    let b = cfg.bounds.clone().expect("validated");
    let mut cache = PerN::new();
    sweep(&points, |p, curves| {
        let chain = cache.get(p.n, || ChainState::new(cfg, p.n))?;
        let eta = cfg.schedule()?.resolve(p.t)?;
        let inputs = BoundInputs {
            g: b.g,
            l: b.l,
            rho: b.rho,
            n: p.n,
            t: p.t,
            eta,
            mixing: chain.mixing,
            d0: b.d0,
            f0_sup: b.f0_sup,
            d_w: b.d_w,
            d_v: b.d_v,
            f_s_w0: b.f_s_w0,
        };
        let evaluations: Vec<(&str, Result<Option<f64>>)> = vec![
            ("sgd-stability-smooth", sgd_stability_bound(&inputs, true).map(Some)),
            ("sgd-stability-nonsmooth", sgd_stability_bound(&inputs, false).map(Some)),
            ("sgd-gen-smooth", sgd_gen_bound(&inputs, true).map(Some)),
            ("sgd-gen-nonsmooth", sgd_gen_bound(&inputs, false).map(Some)),
            ("sgda-stability-smooth", sgda_stability_bound(&inputs, true).map(Some)),
            (
                "sgda-stability-nonsmooth",
                sgda_stability_bound(&inputs, false).map(Some),
            ),
            (
                "sgda-gen-weak-pd-smooth",
                sgda_gen_bounds(&inputs, true).map(|g| Some(g.weak_pd)),
            ),
            (
                "sgda-gen-weak-pd-nonsmooth",
                sgda_gen_bounds(&inputs, false).map(|g| Some(g.weak_pd)),
            ),
            (
                "sgda-gen-primal-smooth",
                sgda_gen_bounds(&inputs, true).map(|g| g.primal),
            ),
            (
                "sgda-gen-primal-nonsmooth",
                sgda_gen_bounds(&inputs, false).map(|g| g.primal),
            ),
            ("sgd-opt", sgd_opt_bound(&inputs).map(Some)),
            ("sgda-opt", sgda_opt_bound(&inputs).map(Some)),
            ("nonconvex-opt", nonconvex_opt_bound(&inputs).map(Some)),
        ];
        let mut rows = Vec::new();
        for (id, value) in evaluations {
            let (value, status) = match value {
                Ok(Some(v)) => (Some(v), ok()),
                Ok(None) => (None, "not-applicable".to_string()),
                Err(e) => (None, format!("error: {e}")),
            };
            if let Some(v) = value {
                let (name, x) = curve_key(cfg, id, p);
                curves.push(name, x, v);
            }
            rows.push(BoundRow {
                n: p.n,
                t: p.t,
                eta,
                lambda: chain.mixing.lambda,
                seed: cfg.master_seed,
                bound: id.to_string(),
                value,
                status,
            });
        }
        Ok(rows)
    })
}

// ---------------------------------------------------------------------------
// Table assembly and files

fn header_of<R: Serialize + Default>() -> Vec<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(R::default()).expect("row types serialize");
    let bytes = w.into_inner().expect("in-memory writer");
    let text = String::from_utf8(bytes).expect("utf-8");
    text.lines()
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::to_string)
        .collect()
}

fn records_of<R: Serialize>(rows: &[R]) -> Vec<Vec<String>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row types serialize");
    }
    let bytes = w.into_inner().expect("in-memory writer");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes.as_slice());
    rdr.records()
        .map(|r| r.expect("round trip").iter().map(str::to_string).collect())
        .collect()
}

fn fits_for(kind: ExperimentKind, curves: &Curves) -> Vec<(String, RateFit)> {
    let prefix = match kind {
        ExperimentKind::SgdRate | ExperimentKind::SgdaRate => "gap_n",
        ExperimentKind::NonconvexGradnorm => "min_sq_grad_n",
        ExperimentKind::HpQuantiles => "quantile_n",
        _ => return Vec::new(),
    };
    curves
        .curves
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .filter_map(|(name, pts)| fit_rate(pts).ok().map(|f| (name.clone(), f)))
        .collect()
}

fn assemble<R: Serialize + Default>(kind: ExperimentKind, cfg: &ExperimentConfig, sw: Sweep<R>) -> ExperimentOutput {
    let header = header_of::<R>();
    let mut records = records_of(&sw.rows);
    let failure = sw.failure.map(|(p, e)| {
        let msg = format!("failed: {e}").replace([',', '\n', '"'], ";");
        let mut row = vec![String::new(); header.len()];
        row[0] = p.n.to_string();
        row[1] = p.t.to_string();
        row[4] = cfg.master_seed.to_string();
        *row.last_mut().expect("nonempty header") = msg.clone();
        records.push(row);
        msg
    });
    let mut spectra = Vec::new();
    let mut ns: Vec<usize> = cfg.grid.n.clone();
    ns.sort_unstable();
    ns.dedup();
    for n in ns {
        if let Ok(s) = cfg.chain_for(n).and_then(|m| analyze(&m)) {
            if let Ok(c) = s.c_eff() {
                spectra.push(SpectrumSummary {
                    n,
                    lambda: s.lambda,
                    k_p: s.k_p,
                    c_eff: c,
                    symmetric: s.symmetric,
                });
            }
        }
    }
    ExperimentOutput {
        kind,
        header,
        records,
        fits: fits_for(kind, &sw.curves),
        curves: sw.curves,
        spectra,
        failure,
    }
}

/// Runs the configured experiment, keeping partial results on failure.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let kind = cfg.kind()?;
    Ok(match kind {
        ExperimentKind::ChainInfo => assemble(kind, cfg, chain_info(cfg)),
        ExperimentKind::SgdRate => assemble(kind, cfg, sgd_rate(cfg)),
        ExperimentKind::SgdStability => assemble(kind, cfg, sgd_stability(cfg)),
        ExperimentKind::SgdGen => assemble(kind, cfg, sgd_gen(cfg)),
        ExperimentKind::SgdaRate => assemble(kind, cfg, sgda_rate(cfg)),
        ExperimentKind::SgdaRisk => assemble(kind, cfg, sgda_risk(cfg)),
        ExperimentKind::NonconvexGradnorm => assemble(kind, cfg, nonconvex_gradnorm(cfg)),
        ExperimentKind::HpQuantiles => assemble(kind, cfg, hp_quantiles(cfg)),
        ExperimentKind::Bounds => assemble(kind, cfg, bounds_table(cfg)),
    })
}

fn banner(hash: &str) -> String {
    format!("# {TOOL_NAME} {TOOL_VERSION} config-sha256 {hash}\n")
}

#[derive(Serialize)]
struct FitEntry<'a> {
    curve: &'a str,
    slope: f64,
    intercept: f64,
    r_squared: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    kind: &'a str,
    master_seed: u64,
    replicate_seed_rule: &'a str,
    status: &'a str,
    results: &'a str,
    files: Vec<String>,
    config: &'a ExperimentConfig,
    spectra: &'a [SpectrumSummary],
    fits: Vec<FitEntry<'a>>,
}

fn to_csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory writer");
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

/// Writes `results.csv`, `manifest.toml`, `fits.csv`, one `.dat` per curve
/// and optionally `plot.gp` into `dir`. Returns the written paths.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash()?;
    let head = banner(&hash);
    let mut written = Vec::new();
    let write = |written: &mut Vec<PathBuf>, name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    let mut table = head.clone();
    table.push_str(&to_csv_line(&out.header));
    for r in &out.records {
        table.push_str(&to_csv_line(r));
    }
    write(&mut written, "results.csv", table)?;

    let mut curve_files = Vec::new();
    for (name, pts) in &out.curves.curves {
        let mut body = head.clone();
        for (x, y) in pts {
            body.push_str(&format!("{x} {y}\n"));
        }
        let file = format!("{name}.dat");
        write(&mut written, &file, body)?;
        curve_files.push(file);
    }

    if !out.fits.is_empty() {
        let mut body = head.clone();
        body.push_str("curve,slope,intercept,r_squared\n");
        for (name, f) in &out.fits {
            body.push_str(&to_csv_line(&[
                name.clone(),
                f.slope.to_string(),
                f.intercept.to_string(),
                f.r_squared.to_string(),
            ]));
        }
        write(&mut written, "fits.csv", body)?;
    }

    if cfg.plot_script && !curve_files.is_empty() {
        let mut body = head.clone();
        body.push_str("set terminal pngcairo size 900,600\nset output 'plot.png'\nset key outside\n");
        if out.kind == ExperimentKind::ChainInfo {
            body.push_str("set logscale y\n");
        } else if out.kind.log_scale() {
            body.push_str("set logscale xy\n");
        }
        let plots: Vec<String> = curve_files
            .iter()
            .map(|f| {
                format!(
                    "'{f}' using 1:2 with linespoints title '{}'",
                    f.trim_end_matches(".dat")
                )
            })
            .collect();
        body.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
        write(&mut written, "plot.gp", body)?;
    }

    let mut files: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    files.push("manifest.toml".into());
    let mut echoed = cfg.clone();
    echoed.output = None;
    let manifest = Manifest {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        config_sha256: &hash,
        kind: out.kind.name(),
        master_seed: cfg.master_seed,
        replicate_seed_rule: "replicate r uses derive_seed(master_seed, r)",
        status: out.failure.as_deref().unwrap_or("ok"),
        results: "results.csv",
        files,
        config: &echoed,
        spectra: &out.spectra,
        fits: out
            .fits
            .iter()
            .map(|(name, f)| FitEntry {
                curve: name,
                slope: f.slope,
                intercept: f.intercept,
                r_squared: f.r_squared,
            })
            .collect(),
    };
    let body = toml::to_string(&manifest).map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    write(&mut written, "manifest.toml", head + &body)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_examples() {
        let pts: Vec<(f64, f64)> = [4.0, 16.0, 64.0].iter().map(|&t| (t, 3.0 / f64::sqrt(t))).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        let f = fit_rate(&[(2.0, 5.0), (4.0, 5.0), (8.0, 5.0)]).unwrap();
        assert_eq!(f.slope, 0.0);
        let f = fit_rate(&[(2.0, 8.0), (8.0, 1.0)]).unwrap();
        assert!((f.slope - (1.0f64 / 8.0).ln() / 4f64.ln()).abs() < 1e-12);
        assert!(fit_rate(&[(2.0, 1.0), (2.0, 3.0)]).is_err());
        assert!(fit_rate(&[(2.0, 1.0), (4.0, 0.0)]).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_report(&[3.0; 7], 0.2).unwrap(), 3.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_report(&v, 0.05).unwrap() - 95.05).abs() < 1e-12);
        assert!((quantile_report(&v, 1.0 - 1e-15).unwrap() - 1.0).abs() < 1e-9);
        assert!(quantile_report(&[], 0.1).is_err());
    }

    fn chain_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            kind = "chain-info"
            [grid]
            n = [4]
            [chain]
            kind = "uniform"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn chain_info_uniform() {
        let rows = chain_info(&chain_cfg()).into_result().unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].lambda - 0.5).abs() < 1e-12);
        assert_eq!(rows[0].k_p, 0);
    }

    #[test]
    fn kind_mismatch_and_hash() {
        let cfg = chain_cfg();
        assert!(cfg.clone().with_kind(ExperimentKind::SgdRate).is_err());
        let a = cfg.hash().unwrap();
        let mut moved = cfg.clone();
        moved.output = Some("elsewhere".into());
        assert_eq!(a, moved.hash().unwrap());
        let mut reseeded = cfg;
        reseeded.master_seed = 5;
        assert_ne!(a, reseeded.hash().unwrap());
    }

    #[test]
    fn bounds_with_zero_step() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            kind = "bounds"
            [grid]
            n = [10]
            t = [100]
            [chain]
            kind = "uniform"
            [schedule]
            kind = "constant"
            eta = 0.0
            [bounds]
            g = 1.0
            l = 1.0
            rho = 0.5
            "#,
        )
        .unwrap();
        let rows = bounds_table(&cfg).into_result().unwrap();
        for r in &rows {
            if r.bound.contains("stability") || r.bound.contains("gen") {
                assert_eq!(r.value, Some(0.0), "{}", r.bound);
            } else {
                assert!(r.value.is_none());
            }
        }
    }

    #[test]
    fn header_matches_fields() {
        let h = header_of::<SgdRateRow>();
        assert_eq!(&h[..5], &["n", "T", "eta", "lambda", "seed"]);
        assert_eq!(h.last().unwrap(), "status");
    }
}
