//! Experiment configuration, execution and reporting.
//!
//! Replicates run in parallel but each draws from its own stream of the
//! master seed and results are reduced in replicate order, so reports are
//! byte-identical at any thread count.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::excursion::{lk_estimates, CellMinima, CubicalSet};
use crate::fields::{CovarianceKind, FieldGrid, FieldKind, GaussianFieldSpec, Provenance, GaussianSimulator, SeriesSimulator, SubGaussianSimulator};
use crate::sampling::{default_truncation, measure_moments, PositiveStable, RngStream, SpectralMeasure, StableSurvivalTable};
use crate::theory::{
    concatenated_constants, concatenated_mean_ec_asymptote, conditional_identity_mc, gaussian_mean_ec,
    harmonisable_mean_ec_asymptote, subgaussian_asymptote_for, subgaussian_mean_ec_exact, AsymptoticPrediction,
};
use crate::Rectangle;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "u,mean_ec,stderr,n,pred_exact,pred_asymp,ratio,ratio_se";
/// Seed offset separating predictor draws from simulation streams.
const PREDICTOR_SEED_MIX: u64 = 0x5DEE_CE66_D1CE_4E5B;

fn default_variance() -> f64 {
    1.0
}
fn default_cap() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_draws() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: FieldKind,
    #[serde(default = "default_variance")]
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default = "default_cap")]
    pub truncation_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_measure: Option<SpectralMeasure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub sides: Vec<f64>,
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcEstimator {
    /// EC of each simulated excursion set
    #[default]
    Plain,
    /// sub-Gaussian only: the mixing variable integrated out given g
    RaoBlackwell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default = "default_true")]
    pub ec: bool,
    #[serde(default)]
    pub lk: bool,
    #[serde(default)]
    pub upcrossings: bool,
    #[serde(default)]
    pub estimator: EcEstimator,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { ec: true, lk: false, upcrossings: false, estimator: EcEstimator::Plain }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_true")]
    pub exact: bool,
    #[serde(default = "default_true")]
    pub asymptotic: bool,
    /// average the conditional Gaussian formula over series skeletons
    #[serde(default)]
    pub conditional: bool,
    #[serde(default = "default_draws")]
    pub conditional_draws: usize,
    #[serde(default = "default_draws")]
    pub lambda_samples: usize,
    /// also run the conditional predictor at truncation 2K
    #[serde(default)]
    pub truncation_check: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            exact: true,
            asymptotic: true,
            conditional: false,
            conditional_draws: default_draws(),
            lambda_samples: default_draws(),
            truncation_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub field: FieldConfig,
    pub domain: DomainConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first assignment to `key`, for messages about values that
/// parse but fail validation.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn anchored(text: &str, key: &str, msg: String) -> Error {
    match key_line(text, key) {
        Some(l) => Error::Config(format!("line {l}: {msg}")),
        None => Error::Config(format!("line 1: {msg} (`{key}` not set)")),
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML config; errors name the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
            Error::Config(format!("line {line}: {}", e.message()))
        })?;
        cfg.validate_in(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_in("")
    }

    fn validate_in(&self, text: &str) -> Result<()> {
        let err = |key: &str, msg: String| anchored(text, key, msg);
        if self.replications < 1 {
            return Err(err("replications", "replications must be at least 1".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|u| !u.is_finite()) {
            return Err(err("levels", "levels must be a non-empty list of finite numbers".into()));
        }
        let d = &self.domain;
        if d.sides.is_empty() || d.sides.len() != d.resolution.len() {
            return Err(err("resolution", "sides and resolution must have the same non-zero length".into()));
        }
        if d.sides.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(err("sides", "every side must be positive and finite".into()));
        }
        if d.resolution.iter().any(|&r| r < 8) {
            return Err(err("resolution", "every axis needs at least 8 grid points".into()));
        }
        if self.threads == Some(0) {
            return Err(err("threads", "threads must be at least 1".into()));
        }
        let f = &self.field;
        if !(f.variance > 0.0) {
            return Err(err("variance", "variance must be positive".into()));
        }
        match f.kind {
            FieldKind::Gaussian | FieldKind::SubGaussian => {
                let n = [f.length_scale.is_some(), f.lambda2.is_some(), f.spectral_measure.is_some()]
                    .iter()
                    .filter(|&&b| b)
                    .count();
                if n != 1 {
                    return Err(err("kind", "give exactly one of length_scale, lambda2 or [field.spectral_measure]".into()));
                }
                let key = if f.length_scale.is_some() {
                    "length_scale"
                } else if f.lambda2.is_some() {
                    "lambda2"
                } else {
                    "kind"
                };
                let spec = self.gaussian_spec().map_err(|e| err(key, e.to_string()))?;
                if let CovarianceKind::SquaredExponential { length_scale } = spec.covariance {
                    let fine = d.sides.iter().zip(&d.resolution).all(|(s, &r)| s / (r - 1) as f64 <= length_scale / 4.0 * (1.0 + 1e-12));
                    if !fine {
                        return Err(err(
                            "resolution",
                            format!("grid spacing must not exceed length_scale/4 = {}", length_scale / 4.0),
                        ));
                    }
                }
            }
            FieldKind::Harmonisable | FieldKind::Concatenated => {
                if f.spectral_measure.is_none() {
                    return Err(err("kind", "series fields need [field.spectral_measure]".into()));
                }
            }
        }
        if f.kind != FieldKind::Gaussian {
            match f.alpha {
                Some(a) if a > 0.0 && a < 2.0 => {}
                _ => return Err(err("alpha", "alpha must lie in (0,2)".into())),
            }
        }
        if let Some(mu) = &f.spectral_measure {
            mu.validate().map_err(|e| err("kind", e.to_string()))?;
            if mu.dim() != d.sides.len() {
                return Err(err("dim", format!("spectral measure is {}-dimensional, domain is {}-dimensional", mu.dim(), d.sides.len())));
            }
        }
        if f.kind == FieldKind::Concatenated {
            let np = f.n_prime.unwrap_or(1);
            if np < 1 || np > d.sides.len() {
                return Err(err("n_prime", format!("n_prime must satisfy 1 <= n_prime <= {}", d.sides.len())));
            }
        }
        if self.measure.estimator == EcEstimator::RaoBlackwell && f.kind != FieldKind::SubGaussian {
            return Err(err("estimator", "rao_blackwell applies to sub_gaussian fields only".into()));
        }
        if self.measure.upcrossings && d.sides.len() != 1 {
            return Err(err("upcrossings", "upcrossings need a one-dimensional domain".into()));
        }
        if self.measure.lk && d.sides.len() > 3 {
            return Err(err("lk", "curvature estimates support at most three dimensions".into()));
        }
        Ok(())
    }

    pub fn rectangle(&self) -> Result<Rectangle> {
        Rectangle::new(self.domain.sides.clone())
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.field.kind {
            FieldKind::Gaussian => None,
            _ => self.field.alpha,
        }
    }

    pub fn truncation(&self) -> Result<Option<usize>> {
        match self.field.kind {
            FieldKind::Harmonisable | FieldKind::Concatenated => Ok(Some(match self.field.truncation {
                Some(k) => k,
                None => default_truncation(self.field.alpha.unwrap_or(1.0), self.field.truncation_cap)?,
            })),
            _ => Ok(None),
        }
    }

    pub fn n_prime(&self) -> usize {
        match self.field.kind {
            FieldKind::Concatenated => self.field.n_prime.unwrap_or(1),
            _ => 1,
        }
    }

    /// Covariance of the Gaussian base field (Gaussian and sub-Gaussian kinds).
    pub fn gaussian_spec(&self) -> Result<GaussianFieldSpec> {
        let f = &self.field;
        let n = self.domain.sides.len();
        if let Some(l) = f.length_scale {
            GaussianFieldSpec::squared_exponential(f.variance, l, n)
        } else if let Some(l2) = f.lambda2 {
            GaussianFieldSpec::squared_exponential_with_lambda2(f.variance, l2, n)
        } else if let Some(mu) = &f.spectral_measure {
            GaussianFieldSpec::from_spectral_measure(f.variance, mu.clone())
        } else {
            Err(Error::Config("no covariance given".into()))
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the thread count.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Per-level results of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub u: f64,
    pub mean_ec: f64,
    pub stderr: f64,
    pub n: usize,
    pub pred_exact: Option<f64>,
    /// Monte Carlo error of `pred_exact` when it is itself an average
    pub pred_exact_se: Option<f64>,
    /// asymptotic constant · u^{−α}
    pub pred_asymp: Option<f64>,
    pub ratio: Option<f64>,
    pub ratio_se: Option<f64>,
    /// conditional predictor at 2K minus at K
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub kind: FieldKind,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub replications: usize,
    pub failed_replicates: usize,
    pub method: String,
    pub truncation: Option<usize>,
    pub estimator: EcEstimator,
    pub rows: Vec<ReportRow>,
    pub asymptotic: Option<AsymptoticPrediction>,
    /// mean ℒ̂_0..ℒ̂_N per level
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lk_means: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upcrossing_means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failures: Option<Vec<String>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.u,
                r.mean_ec,
                r.stderr,
                r.n,
                fmt_opt(r.pred_exact),
                fmt_opt(r.pred_asymp),
                fmt_opt(r.ratio),
                fmt_opt(r.ratio_se)
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut v = Vec::new();
        self.write_csv(&mut v).expect("writing to memory");
        String::from_utf8(v).expect("ascii")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// One row of a u^α-scaled comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub u: f64,
    pub scaled_mean: f64,
    pub scaled_se: f64,
    pub constant: Option<f64>,
    pub ratio: Option<f64>,
    pub ratio_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub alpha: f64,
    pub rows: Vec<ConvergenceRow>,
    /// inclusive row range of the widest window whose ratios spread < 10%
    pub plateau: Option<(usize, usize)>,
    pub plateau_ratio: Option<f64>,
    /// |ratio − 1| never increases with u
    pub monotone_approach: Option<bool>,
}

/// u^α·mean against the constant for arbitrary (u, mean, se) series.
pub fn convergence_table_from(
    levels: &[f64],
    means: &[f64],
    ses: &[f64],
    alpha: f64,
    constant: Option<f64>,
) -> ConvergenceTable {
    let rows: Vec<ConvergenceRow> = levels
        .iter()
        .zip(means)
        .zip(ses)
        .map(|((&u, &m), &s)| {
            let sc = u.abs().powf(alpha);
            ConvergenceRow {
                u,
                scaled_mean: sc * m,
                scaled_se: sc * s,
                constant,
                ratio: constant.map(|c| sc * m / c),
                ratio_se: constant.map(|c| sc * s / c),
            }
        })
        .collect();
    let ratios: Option<Vec<f64>> = rows.iter().map(|r| r.ratio).collect();
    let (plateau, plateau_ratio, monotone_approach) = match ratios {
        Some(r) if !r.is_empty() => {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..r.len() {
                for j in i..r.len() {
                    let w = &r[i..=j];
                    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    let mean = w.iter().sum::<f64>() / w.len() as f64;
                    if !((hi - lo) / mean.abs() < 0.10) {
                        break;
                    }
                    if best.is_none_or(|(bi, bj)| j - i >= bj - bi) {
                        best = Some((i, j));
                    }
                }
            }
            let pr = best.map(|(i, j)| r[i..=j].iter().sum::<f64>() / (j - i + 1) as f64);
            let mono = r.windows(2).all(|w| (w[1] - 1.0).abs() <= (w[0] - 1.0).abs());
            (best, pr, Some(mono))
        }
        _ => (None, None, None),
    };
    ConvergenceTable { alpha, rows, plateau, plateau_ratio, monotone_approach }
}

/// Convergence table of a report's mean EC against its asymptotic constant.
pub fn convergence_table(report: &ExperimentReport) -> Option<ConvergenceTable> {
    let alpha = report.alpha?;
    let levels: Vec<f64> = report.rows.iter().map(|r| r.u).collect();
    let means: Vec<f64> = report.rows.iter().map(|r| r.mean_ec).collect();
    let ses: Vec<f64> = report.rows.iter().map(|r| r.stderr).collect();
    Some(convergence_table_from(&levels, &means, &ses, alpha, report.asymptotic.as_ref().map(|p| p.constant)))
}

enum Model {
    Gaussian(GaussianSimulator),
    SubGaussian(SubGaussianSimulator, Option<StableSurvivalTable>),
    Series(SeriesSimulator),
}

#[derive(Debug, Clone, Default)]
struct Measurement {
    ec: Vec<f64>,
    lk: Vec<Vec<f64>>,
    up: Vec<f64>,
}

struct Measurer<'a> {
    cfg: &'a ExperimentConfig,
    spacing: Vec<f64>,
}

impl Measurer<'_> {
    fn measure(&self, values: &[f64], mixture: Option<(&[f64], &StableSurvivalTable)>) -> Result<Measurement> {
        let res = &self.cfg.domain.resolution;
        let levels = &self.cfg.levels;
        let mut m = Measurement::default();
        if self.cfg.measure.ec {
            m.ec = match mixture {
                Some((g, table)) => CellMinima::new(g, res).mixture_euler_at(levels, |x| table.eval(x)),
                None => CellMinima::new(values, res).euler_at(levels).into_iter().map(|e| e as f64).collect(),
            };
        }
        if self.cfg.measure.lk {
            for &u in levels {
                let set = CubicalSet::from_vertices(res.clone(), self.spacing.clone(), values.iter().map(|&v| v >= u).collect())?;
                m.lk.push(lk_estimates(&set, u)?.lk_estimates);
            }
        }
        if self.cfg.measure.upcrossings {
            for &u in levels {
                m.up.push(values.windows(2).filter(|w| w[0] < u && u <= w[1]).count() as f64);
            }
        }
        Ok(m)
    }
}

fn build_model(cfg: &ExperimentConfig, t: &Rectangle) -> Result<Model> {
    let res = &cfg.domain.resolution;
    Ok(match cfg.field.kind {
        FieldKind::Gaussian => Model::Gaussian(GaussianSimulator::new(&cfg.gaussian_spec()?, t, res)?),
        FieldKind::SubGaussian => {
            let alpha = cfg.field.alpha.expect("validated");
            let sim = SubGaussianSimulator::new(&cfg.gaussian_spec()?, alpha, t, res)?;
            let table = match cfg.measure.estimator {
                EcEstimator::RaoBlackwell => Some(StableSurvivalTable::new(PositiveStable::new(alpha / 2.0)?)?),
                EcEstimator::Plain => None,
            };
            Model::SubGaussian(sim, table)
        }
        FieldKind::Harmonisable | FieldKind::Concatenated => Model::Series(SeriesSimulator::new(
            cfg.field.spectral_measure.as_ref().expect("validated"),
            cfg.field.alpha.expect("validated"),
            cfg.n_prime(),
            cfg.truncation()?.expect("series"),
            t,
            res,
        )?),
    })
}

fn run_unit(model: &Model, measurer: &Measurer, seed: u64, unit: usize) -> Vec<Result<Measurement>> {
    let mut rng = RngStream::new(seed, unit as u64).rng();
    match model {
        Model::Gaussian(sim) => {
            let (a, b) = sim.sample_pair(&mut rng);
            vec![measurer.measure(&a, None), measurer.measure(&b, None)]
        }
        Model::SubGaussian(sim, table) => {
            let (a, b) = sim.sample_pair(&mut rng);
            [a, b]
                .iter()
                .map(|d| match table {
                    Some(tb) => measurer.measure(&[], Some((&d.gaussian, tb))),
                    None => measurer.measure(&d.values(), None),
                })
                .collect()
        }
        Model::Series(sim) => vec![sim.sample(&mut rng).and_then(|(_, v)| measurer.measure(&v, None))],
    }
}

/// The grids of replicates `first..first+count`, exactly as `run_experiment`
/// draws them. Pair members are marked by `pair_member` in the provenance
/// parameters.
pub fn simulate_replicates(cfg: &ExperimentConfig, first: usize, count: usize) -> Result<Vec<FieldGrid>> {
    cfg.validate()?;
    let t = cfg.rectangle()?;
    let res = cfg.domain.resolution.clone();
    let model = build_model(cfg, &t)?;
    let mark = |mut p: Provenance, member: usize| {
        if let serde_json::Value::Object(m) = &mut p.params {
            m.insert("pair_member".into(), member.into());
        }
        p
    };
    (first..first + count)
        .map(|i| match &model {
            Model::Gaussian(sim) => {
                let stream = RngStream::new(cfg.seed, (i / 2) as u64);
                let (a, b) = sim.sample_pair(&mut stream.rng());
                let v = if i % 2 == 0 { a } else { b };
                FieldGrid::new(t.clone(), res.clone(), v, mark(sim.provenance(stream), i % 2))
            }
            Model::SubGaussian(sim, _) => {
                let stream = RngStream::new(cfg.seed, (i / 2) as u64);
                let (a, b) = sim.sample_pair(&mut stream.rng());
                let d = if i % 2 == 0 { a } else { b };
                let mut p = Provenance::new(FieldKind::SubGaussian, cfg.seed, stream.stream_index);
                p.alpha = Some(sim.alpha());
                p.mixing = Some(d.mixing);
                p.params = serde_json::to_value(sim.gaussian().spec()).unwrap_or(serde_json::Value::Null);
                FieldGrid::new(t.clone(), res.clone(), d.values(), mark(p, i % 2))
            }
            Model::Series(sim) => sim.simulate(RngStream::new(cfg.seed, i as u64)),
        })
        .collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Runs the replicated experiment and compares against the configured
/// predictors. Replicate i of a Gaussian or sub-Gaussian field is half of the
/// pair drawn from stream ⌊i/2⌋; series replicates use stream i.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let t = cfg.rectangle()?;
    let model = build_model(cfg, &t)?;
    let measurer = Measurer { cfg, spacing: t.sides().iter().zip(&cfg.domain.resolution).map(|(s, &n)| s / (n - 1) as f64).collect() };
    let per_unit = match model {
        Model::Series(_) => 1,
        _ => 2,
    };
    let units = cfg.replications.div_ceil(per_unit);
    let work = || -> Vec<Vec<Result<Measurement>>> {
        (0..units).into_par_iter().map(|u| run_unit(&model, &measurer, cfg.seed, u)).collect()
    };
    let results = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut ok = Vec::with_capacity(cfg.replications);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().flatten().take(cfg.replications).enumerate() {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => failures.push(format!("replicate {i}: {e}")),
        }
    }
    if failures.len() * 100 > cfg.replications {
        return Err(Error::Simulation(format!(
            "{} of {} replicates failed; first: {}",
            failures.len(),
            cfg.replications,
            failures[0]
        )));
    }
    if ok.is_empty() {
        return Err(Error::Simulation("no replicate succeeded".into()));
    }

    let alpha = cfg.alpha();
    let levels = &cfg.levels;
    let mut exact: Vec<Option<(f64, Option<f64>)>> = vec![None; levels.len()];
    let mut delta: Vec<Option<f64>> = vec![None; levels.len()];
    let mut asymptotic = None;
    let pseed = cfg.seed ^ PREDICTOR_SEED_MIX;
    match cfg.field.kind {
        FieldKind::Gaussian => {
            if cfg.compare.exact {
                let spec = cfg.gaussian_spec()?;
                for (e, &u) in exact.iter_mut().zip(levels) {
                    *e = Some((gaussian_mean_ec(&spec, &t, u)?, None));
                }
            }
        }
        FieldKind::SubGaussian => {
            let spec = cfg.gaussian_spec()?;
            let a = alpha.expect("validated");
            if cfg.compare.exact {
                for (e, &u) in exact.iter_mut().zip(levels) {
                    *e = Some((subgaussian_mean_ec_exact(&spec, a, &t, u)?, None));
                }
            }
            if cfg.compare.asymptotic {
                asymptotic = Some(subgaussian_asymptote_for(&spec, a, &t)?);
            }
        }
        FieldKind::Harmonisable | FieldKind::Concatenated => {
            let mu = cfg.field.spectral_measure.as_ref().expect("validated");
            let a = alpha.expect("validated");
            let k = cfg.truncation()?.expect("series");
            if cfg.compare.conditional {
                let c = conditional_identity_mc(mu, a, cfg.n_prime(), k, &t, levels, cfg.compare.conditional_draws, pseed)?;
                for (e, (m, s)) in exact.iter_mut().zip(&c) {
                    *e = Some((*m, Some(*s)));
                }
                if cfg.compare.truncation_check {
                    let c2 = conditional_identity_mc(mu, a, cfg.n_prime(), 2 * k, &t, levels, cfg.compare.conditional_draws, pseed)?;
                    for (d, (x, y)) in delta.iter_mut().zip(c.iter().zip(&c2)) {
                        *d = Some(y.0 - x.0);
                    }
                }
            }
            if cfg.compare.asymptotic {
                asymptotic = Some(if cfg.field.kind == FieldKind::Harmonisable {
                    harmonisable_mean_ec_asymptote(&measure_moments(mu)?, a, &t)?
                } else {
                    let consts = concatenated_constants(a, cfg.n_prime(), mu, cfg.compare.lambda_samples, RngStream::new(pseed, 1 << 32))?;
                    concatenated_mean_ec_asymptote(&consts, &t)?
                });
            }
        }
    }

    let mut rows = Vec::with_capacity(levels.len());
    for (li, &u) in levels.iter().enumerate() {
        let ec: Vec<f64> = if cfg.measure.ec { ok.iter().map(|m| m.ec[li]).collect() } else { Vec::new() };
        let (mean_ec, stderr) = if ec.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&ec) };
        let pred_asymp = asymptotic.as_ref().map(|p| p.at(u));
        let (pred_exact, pred_exact_se) = match exact[li] {
            Some((v, s)) => (Some(v), s),
            None => (None, None),
        };
        let (ratio, ratio_se) = match (pred_exact, pred_asymp) {
            (Some(p), _) => {
                let r = mean_ec / p;
                let rel_p = pred_exact_se.map(|s| s / p).unwrap_or(0.0);
                (Some(r), Some((stderr / p).hypot(r * rel_p)))
            }
            (None, Some(p)) => (Some(mean_ec / p), Some(stderr / p)),
            _ => (None, None),
        };
        rows.push(ReportRow { u, mean_ec, stderr, n: ok.len(), pred_exact, pred_exact_se, pred_asymp, ratio, ratio_se, truncation_delta: delta[li] });
    }
    let lk_means = cfg.measure.lk.then(|| {
        (0..levels.len())
            .map(|li| {
                let n = ok[0].lk[li].len();
                (0..n).map(|j| ok.iter().map(|m| m.lk[li][j]).sum::<f64>() / ok.len() as f64).collect()
            })
            .collect()
    });
    let upcrossing_means = cfg
        .measure
        .upcrossings
        .then(|| (0..levels.len()).map(|li| ok.iter().map(|m| m.up[li]).sum::<f64>() / ok.len() as f64).collect());
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        config_digest: cfg.digest(),
        kind: cfg.field.kind,
        alpha,
        seed: cfg.seed,
        replications: cfg.replications,
        failed_replicates: failures.len(),
        method: match &model {
            Model::Gaussian(s) => s.method_name().to_string(),
            Model::SubGaussian(s, _) => s.gaussian().method_name().to_string(),
            Model::Series(_) => "series".to_string(),
        },
        truncation: cfg.truncation()?,
        estimator: cfg.measure.estimator,
        rows,
        asymptotic,
        lk_means,
        upcrossing_means,
        failures: (!failures.is_empty()).then_some(failures),
    })
}
