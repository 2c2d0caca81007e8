//! TOML experiment configuration.
//!
//! Parsing rejects unknown keys; [`FedPlan::build`] and
//! [`MomentPlan::build`] then check every value and load any dataset files, so
//! a plan that builds can run to completion.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Deserialize;

use reed::data::{load_idx_dataset, synth_dataset, SynthKind};
use reed::fedlearn::{build_objective, ObjectiveKind};
use reed::montecarlo::{standard_moment_points, MomentPoint};
use reed::{Aggregator, FedRunConfig, LabeledDataset, PartitionKind, ReedPhyConfig, ScalarInputs, StepSize};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    #[serde(default)]
    pub phy: PhySection,
    pub fed: Option<FedSection>,
    pub data: Option<DataSection>,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub output: OutputSection,
    pub moments: Option<MomentsSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhySection {
    pub eta: Option<f64>,
    pub noise_var: Option<f64>,
    /// Effective receive SNR; sets `noise_var = 10^(-snr_db/10) * signal_ref`.
    pub snr_db: Option<f64>,
    pub signal_ref: Option<f64>,
    pub mean_powers: Option<Vec<f64>>,
    /// `M` chips of unit weight. Exclusive with `chip_weights`.
    pub chips: Option<usize>,
    pub chip_weights: Option<Vec<f64>>,
    pub antennas: Option<usize>,
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    pub clients: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub batch_size: usize,
    /// Constant stepsize. Exclusive with `beta0`.
    pub beta: Option<f64>,
    /// `beta_t = beta0 / sqrt(1 + t)`.
    pub beta0: Option<f64>,
    pub clip_g: Option<f64>,
    /// One budget for every client, or `budgets` for one each.
    pub budget: Option<f64>,
    pub budgets: Option<Vec<f64>>,
    pub aggregators: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `synth` or `idx`.
    pub source: String,
    /// Synthetic generator: `blobs` or `quadratic`.
    pub kind: Option<String>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub classes: Option<usize>,
    pub features: Option<usize>,
    pub separation: Option<f64>,
    pub dim: Option<usize>,
    pub spread: Option<f64>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub limit: Option<usize>,
    /// `iid` or `dirichlet`.
    pub partition: Option<String>,
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `quadratic`, `logistic` or `mlp`.
    pub kind: String,
    pub hidden: Option<usize>,
    pub curvature_min: Option<f64>,
    pub curvature_max: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub trials: Option<u64>,
    pub tolerance: Option<f64>,
    pub points: Option<Vec<MomentPointSection>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentPointSection {
    pub id: Option<String>,
    pub u: Vec<f64>,
    pub eta: Option<f64>,
    pub noise_var: Option<f64>,
    pub snr_db: Option<f64>,
    pub signal_ref: Option<f64>,
    pub mean_powers: Option<Vec<f64>>,
    pub chips: Option<usize>,
    pub chip_weights: Option<Vec<f64>>,
    pub antennas: Option<usize>,
    pub kappa: Option<f64>,
    /// Gain used on the closed-form side only; a wrong value is a negative
    /// control that must be flagged.
    pub cf_eta: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub m: Option<Vec<usize>>,
    pub snr_db: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub beta0: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    M,
    SnrDb,
    Alpha,
    Beta0,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::M => "m",
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta0 => "beta0",
        }
    }
}

pub const DEFAULT_SEED: u64 = 1;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Copy of the config with one sweep value applied.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        match axis {
            SweepAxis::M => {
                ensure!(value >= 1.0 && value.fract() == 0.0, "sweep.m: {value} is not a positive integer");
                cfg.phy.chips = Some(value as usize);
                cfg.phy.chip_weights = None;
            }
            SweepAxis::SnrDb => {
                cfg.phy.snr_db = Some(value);
                cfg.phy.noise_var = None;
            }
            SweepAxis::Alpha => {
                let data = cfg.data.as_mut().ok_or_else(|| anyhow!("sweep.alpha needs a [data] section"))?;
                data.partition = Some("dirichlet".into());
                data.alpha = Some(value);
            }
            SweepAxis::Beta0 => {
                let fed = cfg.fed.as_mut().ok_or_else(|| anyhow!("sweep.beta0 needs a [fed] section"))?;
                fed.beta0 = Some(value);
                fed.beta = None;
            }
        }
        Ok(cfg)
    }

    pub fn axis_values(&self, axis: SweepAxis) -> Result<Vec<f64>> {
        let sweep = self.sweep.as_ref();
        let values: Vec<f64> = match axis {
            SweepAxis::M => sweep.and_then(|s| s.m.as_ref()).map(|v| v.iter().map(|&m| m as f64).collect()),
            SweepAxis::SnrDb => sweep.and_then(|s| s.snr_db.clone()),
            SweepAxis::Alpha => sweep.and_then(|s| s.alpha.clone()),
            SweepAxis::Beta0 => sweep.and_then(|s| s.beta0.clone()),
        }
        .unwrap_or_default();
        ensure!(!values.is_empty(), "sweep.{}: no values to sweep", axis.name());
        Ok(values)
    }
}

fn finite(path: &str, v: f64) -> Result<f64> {
    ensure!(v.is_finite(), "{path}: must be finite, got {v}");
    Ok(v)
}

fn positive(path: &str, v: f64) -> Result<f64> {
    ensure!(v.is_finite() && v > 0.0, "{path}: must be positive, got {v}");
    Ok(v)
}

fn nonzero(path: &str, v: usize) -> Result<usize> {
    ensure!(v > 0, "{path}: must be at least 1");
    Ok(v)
}

fn positive_list(path: &str, v: &[f64], len: usize) -> Result<Vec<f64>> {
    ensure!(v.len() == len, "{path}: expected {len} values, got {}", v.len());
    for (i, &x) in v.iter().enumerate() {
        positive(&format!("{path}[{i}]"), x)?;
    }
    Ok(v.to_vec())
}

/// Builds the physical-layer configuration for `clients` clients.
#[allow(clippy::too_many_arguments)]
fn build_phy(
    prefix: &str,
    eta: Option<f64>,
    noise_var: Option<f64>,
    snr_db: Option<f64>,
    signal_ref: Option<f64>,
    mean_powers: Option<&[f64]>,
    chips: Option<usize>,
    chip_weights: Option<&[f64]>,
    antennas: Option<usize>,
    kappa: Option<f64>,
    clients: usize,
) -> Result<ReedPhyConfig> {
    let eta = positive(&format!("{prefix}eta"), eta.unwrap_or(1.0))?;
    let noise_var = match (noise_var, snr_db) {
        (Some(_), Some(_)) => bail!("{prefix}noise_var and {prefix}snr_db are mutually exclusive"),
        (Some(v), None) => {
            ensure!(v.is_finite() && v >= 0.0, "{prefix}noise_var: must be >= 0, got {v}");
            v
        }
        (None, Some(db)) => {
            let s_ref = positive(&format!("{prefix}signal_ref"), signal_ref.unwrap_or(1.0))?;
            10f64.powf(-finite(&format!("{prefix}snr_db"), db)? / 10.0) * s_ref
        }
        (None, None) => 0.0,
    };
    if signal_ref.is_some() && snr_db.is_none() {
        bail!("{prefix}signal_ref: only meaningful together with snr_db");
    }
    let mut cfg = ReedPhyConfig::rayleigh(eta, noise_var, clients);
    if let Some(p) = mean_powers {
        cfg.mean_powers = positive_list(&format!("{prefix}mean_powers"), p, clients)?;
    }
    match (chips, chip_weights) {
        (Some(_), Some(_)) => bail!("{prefix}chips and {prefix}chip_weights are mutually exclusive"),
        (Some(m), None) => cfg = cfg.with_chips(nonzero(&format!("{prefix}chips"), m)?),
        (None, Some(w)) => {
            ensure!(!w.is_empty(), "{prefix}chip_weights: needs at least one weight");
            for (i, &c) in w.iter().enumerate() {
                ensure!(c.is_finite() && c >= 0.0, "{prefix}chip_weights[{i}]: must be >= 0, got {c}");
            }
            ensure!(w.iter().sum::<f64>() > 0.0, "{prefix}chip_weights: total weight must be positive");
            cfg = cfg.with_chip_weights(w.to_vec());
        }
        (None, None) => {}
    }
    cfg = cfg.with_antennas(nonzero(&format!("{prefix}antennas"), antennas.unwrap_or(1))?);
    let kappa = kappa.unwrap_or(2.0);
    ensure!(kappa.is_finite() && kappa >= 1.0, "{prefix}kappa: must be >= 1, got {kappa}");
    cfg = cfg.with_kappa(kappa);
    cfg.validate().with_context(|| format!("{}phy", prefix))?;
    Ok(cfg)
}

impl PhySection {
    pub fn build(&self, clients: usize) -> Result<ReedPhyConfig> {
        build_phy(
            "phy.",
            self.eta,
            self.noise_var,
            self.snr_db,
            self.signal_ref,
            self.mean_powers.as_deref(),
            self.chips,
            self.chip_weights.as_deref(),
            self.antennas,
            self.kappa,
            clients,
        )
    }
}

/// A validated moment-law sweep.
#[derive(Clone, Debug)]
pub struct MomentPlan {
    pub trials: u64,
    pub tolerance: f64,
    pub seed: u64,
    pub points: Vec<PlannedPoint>,
}

#[derive(Clone, Debug)]
pub struct PlannedPoint {
    pub point: MomentPoint,
    /// Gain on the closed-form side.
    pub cf_eta: f64,
}

impl MomentPlan {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let section = cfg.moments.clone().unwrap_or_default();
        let trials = section.trials.unwrap_or(1_000_000);
        ensure!(trials >= 2, "moments.trials: needs at least 2 trials");
        let tolerance = positive("moments.tolerance", section.tolerance.unwrap_or(0.015))?;
        let points = match &section.points {
            None => standard_moment_points()
                .into_iter()
                .map(|point| PlannedPoint { cf_eta: point.cfg.eta, point })
                .collect(),
            Some(list) => {
                ensure!(!list.is_empty(), "moments.points: empty list");
                list.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let prefix = format!("moments.points[{i}].");
                        ensure!(!p.u.is_empty(), "{prefix}u: needs at least one client value");
                        for (k, &x) in p.u.iter().enumerate() {
                            finite(&format!("{prefix}u[{k}]"), x)?;
                        }
                        let phy = build_phy(
                            &prefix,
                            p.eta,
                            p.noise_var,
                            p.snr_db,
                            p.signal_ref,
                            p.mean_powers.as_deref(),
                            p.chips,
                            p.chip_weights.as_deref(),
                            p.antennas,
                            p.kappa,
                            p.u.len(),
                        )?;
                        let cf_eta = positive(&format!("{prefix}cf_eta"), p.cf_eta.unwrap_or(phy.eta))?;
                        Ok(PlannedPoint {
                            point: MomentPoint {
                                id: p.id.clone().unwrap_or_else(|| format!("p{:02}", i + 1)),
                                inputs: ScalarInputs::new(p.u.clone())?,
                                cfg: phy,
                            },
                            cf_eta,
                        })
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(MomentPlan { trials, tolerance, seed: cfg.seed(), points })
    }
}

/// Where the training data comes from.
#[derive(Clone, Debug)]
pub enum DataPlan {
    /// Regenerated from each trial's seed.
    Synth { kind: SynthKind, n_train: usize, n_test: usize },
    /// Loaded once and shared by all trials.
    Fixed { train: Arc<LabeledDataset>, test: Option<Arc<LabeledDataset>> },
}

impl DataPlan {
    /// `(train, test)` for one trial.
    pub fn datasets(&self, trial_seed: u64) -> Result<(Arc<LabeledDataset>, Option<Arc<LabeledDataset>>)> {
        match self {
            DataPlan::Synth { kind, n_train, n_test } => {
                let all = synth_dataset(kind, n_train + n_test, trial_seed)?;
                let (train, test) = all.split_at(*n_train)?;
                Ok((Arc::new(train), (*n_test > 0).then(|| Arc::new(test))))
            }
            DataPlan::Fixed { train, test } => Ok((train.clone(), test.clone())),
        }
    }
}

/// A validated FedAvg experiment.
#[derive(Clone, Debug)]
pub struct FedPlan {
    pub seed: u64,
    pub trials: usize,
    pub data: DataPlan,
    pub partition: PartitionKind,
    pub model: ObjectiveKind,
    pub aggregators: Vec<Aggregator>,
    /// Run configuration without aggregator and seed; filled per job.
    pub run: FedRunConfig,
}

impl FedPlan {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let fed = cfg.fed.as_ref().ok_or_else(|| anyhow!("[fed] section is required"))?;
        let data = cfg.data.as_ref().ok_or_else(|| anyhow!("[data] section is required"))?;
        let model = cfg.model.as_ref().ok_or_else(|| anyhow!("[model] section is required"))?;
        let trials = nonzero("trials", cfg.trials.unwrap_or(1))?;

        let clients = nonzero("fed.clients", fed.clients)?;
        let step_size = match (fed.beta, fed.beta0) {
            (Some(b), None) => StepSize::Constant(positive("fed.beta", b)?),
            (None, Some(b)) => StepSize::InverseSqrt { beta0: positive("fed.beta0", b)? },
            _ => bail!("fed: set exactly one of beta and beta0"),
        };
        let clip_g = fed.clip_g.map(|g| positive("fed.clip_g", g)).transpose()?;
        let budgets = match (fed.budget, &fed.budgets) {
            (Some(_), Some(_)) => bail!("fed.budget and fed.budgets are mutually exclusive"),
            (Some(b), None) => Some(vec![positive("fed.budget", b)?; clients]),
            (None, Some(list)) => Some(positive_list("fed.budgets", list, clients)?),
            (None, None) => None,
        };
        ensure!(budgets.is_none() || clip_g.is_some(), "fed.clip_g: required when energy budgets are set");
        let names = fed.aggregators.clone().unwrap_or_else(|| vec!["ideal".into(), "reed".into()]);
        ensure!(!names.is_empty(), "fed.aggregators: empty list");
        let mut aggregators = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let a: Aggregator = name.parse().with_context(|| format!("fed.aggregators[{i}]"))?;
            ensure!(!aggregators.contains(&a), "fed.aggregators[{i}]: {name} listed twice");
            aggregators.push(a);
        }
        let run = FedRunConfig {
            clients,
            local_steps: nonzero("fed.local_steps", fed.local_steps)?,
            rounds: nonzero("fed.rounds", fed.rounds)?,
            batch_size: nonzero("fed.batch_size", fed.batch_size)?,
            step_size,
            clip_g,
            aggregator: Aggregator::Ideal,
            phy: cfg.phy.build(clients)?,
            budgets,
            seed: cfg.seed(),
        };

        let partition = match data.partition.as_deref().unwrap_or("iid") {
            "iid" => {
                ensure!(data.alpha.is_none(), "data.alpha: only valid with partition = \"dirichlet\"");
                PartitionKind::Iid
            }
            "dirichlet" => PartitionKind::Dirichlet {
                alpha: positive("data.alpha", data.alpha.ok_or_else(|| anyhow!("data.alpha: required for dirichlet"))?)?,
            },
            other => bail!("data.partition: unknown partition {other:?} (expected iid or dirichlet)"),
        };

        let (data_plan, n_train, classes) = build_data(data)?;
        ensure!(
            clients <= n_train,
            "fed.clients: {clients} clients but only {n_train} training samples"
        );
        let model_kind = match model.kind.as_str() {
            "quadratic" => {
                ensure!(model.hidden.is_none(), "model.hidden: only valid for mlp");
                let lo = positive("model.curvature_min", model.curvature_min.unwrap_or(1.0))?;
                let hi = positive("model.curvature_max", model.curvature_max.unwrap_or(lo.max(1.0)))?;
                ensure!(lo <= hi, "model.curvature_min: exceeds curvature_max");
                ObjectiveKind::Quadratic { curvature_min: lo, curvature_max: hi }
            }
            "logistic" | "mlp" => {
                ensure!(
                    model.curvature_min.is_none() && model.curvature_max.is_none(),
                    "model.curvature_*: only valid for quadratic"
                );
                ensure!(classes >= 2, "model.kind: {} needs a labelled dataset with >= 2 classes", model.kind);
                if model.kind == "mlp" {
                    ObjectiveKind::Mlp { hidden: nonzero("model.hidden", model.hidden.unwrap_or(32))? }
                } else {
                    ensure!(model.hidden.is_none(), "model.hidden: only valid for mlp");
                    ObjectiveKind::Logistic
                }
            }
            other => bail!("model.kind: unknown model {other:?} (expected quadratic, logistic or mlp)"),
        };

        // Checks the objective against the data shape once, up front.
        let (train, _) = data_plan.datasets(cfg.seed())?;
        build_objective(&model_kind, train).context("model")?;

        Ok(FedPlan {
            seed: cfg.seed(),
            trials,
            data: data_plan,
            partition,
            model: model_kind,
            aggregators,
            run,
        })
    }
}

/// Returns the data plan with the training size and class count.
fn build_data(data: &DataSection) -> Result<(DataPlan, usize, usize)> {
    let synth_only = [
        ("kind", data.kind.is_some()),
        ("n_train", data.n_train.is_some()),
        ("n_test", data.n_test.is_some()),
        ("features", data.features.is_some()),
        ("separation", data.separation.is_some()),
        ("dim", data.dim.is_some()),
        ("spread", data.spread.is_some()),
    ];
    let idx_only = [
        ("train_images", data.train_images.is_some()),
        ("train_labels", data.train_labels.is_some()),
        ("test_images", data.test_images.is_some()),
        ("test_labels", data.test_labels.is_some()),
        ("limit", data.limit.is_some()),
    ];
    match data.source.as_str() {
        "synth" => {
            if let Some((k, _)) = idx_only.iter().find(|(_, set)| *set) {
                bail!("data.{k}: only valid with source = \"idx\"");
            }
            let n_train = nonzero("data.n_train", data.n_train.ok_or_else(|| anyhow!("data.n_train: required"))?)?;
            let n_test = data.n_test.unwrap_or(0);
            match data.kind.as_deref() {
                Some("blobs") => {
                    ensure!(data.dim.is_none() && data.spread.is_none(), "data.dim/spread: only valid for kind = \"quadratic\"");
                    let classes = data.classes.ok_or_else(|| anyhow!("data.classes: required for blobs"))?;
                    ensure!(classes >= 2, "data.classes: blobs need at least 2 classes");
                    let features = nonzero("data.features", data.features.ok_or_else(|| anyhow!("data.features: required for blobs"))?)?;
                    let separation = data.separation.unwrap_or(1.0);
                    ensure!(separation.is_finite() && separation >= 0.0, "data.separation: must be >= 0");
                    let kind = SynthKind::GaussianBlobs { classes, features, separation };
                    Ok((DataPlan::Synth { kind, n_train, n_test }, n_train, classes))
                }
                Some("quadratic") => {
                    ensure!(
                        data.classes.is_none() && data.features.is_none() && data.separation.is_none(),
                        "data.classes/features/separation: only valid for kind = \"blobs\""
                    );
                    let dim = nonzero("data.dim", data.dim.ok_or_else(|| anyhow!("data.dim: required for quadratic"))?)?;
                    let spread = data.spread.unwrap_or(1.0);
                    ensure!(spread.is_finite() && spread >= 0.0, "data.spread: must be >= 0");
                    let kind = SynthKind::QuadraticCenters { dim, spread };
                    Ok((DataPlan::Synth { kind, n_train, n_test }, n_train, 1))
                }
                Some(other) => bail!("data.kind: unknown generator {other:?} (expected blobs or quadratic)"),
                None => bail!("data.kind: required with source = \"synth\""),
            }
        }
        "idx" => {
            if let Some((k, _)) = synth_only.iter().find(|(_, set)| *set) {
                bail!("data.{k}: only valid with source = \"synth\"");
            }
            let classes = data.classes.unwrap_or(10);
            ensure!(classes >= 2, "data.classes: needs at least 2 classes");
            let images = data.train_images.as_ref().ok_or_else(|| anyhow!("data.train_images: required"))?;
            let labels = data.train_labels.as_ref().ok_or_else(|| anyhow!("data.train_labels: required"))?;
            let train = load_idx_dataset(images, labels, classes, data.limit)
                .with_context(|| format!("data.train_images: loading {}", images.display()))?;
            let test = match (&data.test_images, &data.test_labels) {
                (Some(i), Some(l)) => Some(Arc::new(
                    load_idx_dataset(i, l, classes, None).with_context(|| format!("data.test_images: loading {}", i.display()))?,
                )),
                (None, None) => None,
                _ => bail!("data.test_images and data.test_labels must be given together"),
            };
            if let Some(t) = &test {
                ensure!(
                    t.n_features() == train.n_features(),
                    "data.test_images: {} features, training set has {}",
                    t.n_features(),
                    train.n_features()
                );
            }
            let n = train.len();
            ensure!(n > 0, "data.train_images: no samples");
            Ok((DataPlan::Fixed { train: Arc::new(train), test }, n, classes))
        }
        other => bail!("data.source: unknown source {other:?} (expected synth or idx)"),
    }
}
