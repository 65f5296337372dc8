//! Experiment configuration: a single JSON document describing the
//! dataset, loss, topology, training parameters, and an optional sweep of
//! per-variant overrides. The `fig2a`/`fig2b`/`fig2c` presets are embedded
//! here and overridable field by field.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tdcd::data::{append_bias, load_csv, standardize, synth_regression, Dataset, LabelColumn};
use tdcd::loss::{LossFamily, LossSpec};
use tdcd::protocol::{FloatWidth, Init, Sampling, TdcdConfig};

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    1
}

fn default_float_width() -> FloatWidth {
    FloatWidth::Bits64
}

fn default_init() -> Init {
    Init::Zero
}

fn default_sampling() -> Sampling {
    Sampling::Stratified
}

/// Label column by header name or zero-based index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSelector {
    Index(usize),
    Name(String),
}

impl From<&LabelSelector> for LabelColumn {
    fn from(sel: &LabelSelector) -> Self {
        match sel {
            LabelSelector::Index(i) => LabelColumn::Index(*i),
            LabelSelector::Name(n) => LabelColumn::Name(n.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        label_column: LabelSelector,
        #[serde(default = "default_true")]
        has_header: bool,
    },
    Synthetic {
        seed: u64,
        samples: usize,
        features: usize,
        noise_std: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub family: LossFamily,
    pub lambda: f64,
}

impl LossConfig {
    pub fn to_spec(&self) -> LossSpec {
        match self.family {
            LossFamily::Ridge => LossSpec::ridge(self.lambda),
            LossFamily::Logistic => LossSpec::logistic(self.lambda),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub silos: usize,
    pub clients_per_silo: usize,
    #[serde(default)]
    pub vertical_widths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub local_steps: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub rounds: usize,
    #[serde(default = "default_sampling")]
    pub sampling: Sampling,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_init")]
    pub init: Init,
    #[serde(default = "default_float_width")]
    pub float_width: FloatWidth,
}

/// One sweep entry: any subset of the tunable fields, overriding the base
/// configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepOverride {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub silos: Option<usize>,
    #[serde(default)]
    pub clients_per_silo: Option<usize>,
    #[serde(default)]
    pub local_steps: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub rounds: Option<usize>,
}

impl SweepOverride {
    fn derived_label(&self, index: usize) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.silos {
            parts.push(format!("N{v}"));
        }
        if let Some(v) = self.clients_per_silo {
            parts.push(format!("K{v}"));
        }
        if let Some(v) = self.local_steps {
            parts.push(format!("Q{v}"));
        }
        if let Some(v) = self.batch_size {
            parts.push(format!("B{v}"));
        }
        if let Some(v) = self.eta {
            parts.push(format!("eta{v}"));
        }
        if let Some(v) = self.rounds {
            parts.push(format!("R{v}"));
        }
        if parts.is_empty() {
            format!("v{index}")
        } else {
            parts.join("-")
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    /// Keep only the first n rows right after loading.
    #[serde(default)]
    pub limit_rows: Option<usize>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Keep only the first n rows after standardization and bias.
    #[serde(default)]
    pub subset_rows: Option<usize>,
    pub loss: LossConfig,
    pub topology: TopologyConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub sweep: Vec<SweepOverride>,
    /// Loss threshold for the rounds-to-threshold summary; when absent,
    /// 1.05 times the best final loss across variants is used.
    #[serde(default)]
    pub loss_threshold: Option<f64>,
    #[serde(default = "default_true")]
    pub log_scale: bool,
    pub output_dir: PathBuf,
}

/// A fully resolved sweep variant.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub topology: TopologyConfig,
    pub training: TrainingConfig,
}

impl Variant {
    pub fn tdcd_config(&self) -> TdcdConfig {
        TdcdConfig {
            n_silos: self.topology.silos,
            clients_per_silo: self.topology.clients_per_silo,
            local_steps: self.training.local_steps,
            batch_size: self.training.batch_size,
            eta: self.training.eta,
            rounds: self.training.rounds,
            sampling: self.training.sampling,
            seed: self.training.seed,
            float_width: self.training.float_width,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Resolve the sweep into concrete variants. Variant i runs with seed
    /// `base seed + i` so sweeps draw independent schedules.
    pub fn variants(&self) -> Vec<Variant> {
        if self.sweep.is_empty() {
            return vec![Variant {
                label: "base".into(),
                topology: self.topology.clone(),
                training: self.training.clone(),
            }];
        }
        self.sweep
            .iter()
            .enumerate()
            .map(|(i, over)| {
                let mut topology = self.topology.clone();
                let mut training = self.training.clone();
                if let Some(v) = over.silos {
                    topology.silos = v;
                }
                if let Some(v) = over.clients_per_silo {
                    topology.clients_per_silo = v;
                }
                if let Some(v) = over.local_steps {
                    training.local_steps = v;
                }
                if let Some(v) = over.batch_size {
                    training.batch_size = v;
                }
                if let Some(v) = over.eta {
                    training.eta = v;
                }
                if let Some(v) = over.rounds {
                    training.rounds = v;
                }
                training.seed = self.training.seed + i as u64;
                Variant {
                    label: over
                        .label
                        .clone()
                        .unwrap_or_else(|| over.derived_label(i)),
                    topology,
                    training,
                }
            })
            .collect()
    }

    /// Load or synthesize the dataset, then apply row limiting,
    /// standardization, bias, and the post-standardization subset, in that
    /// order.
    pub fn build_dataset(&self) -> Result<Dataset> {
        let mut ds = match &self.dataset {
            DatasetSource::Csv {
                path,
                label_column,
                has_header,
            } => load_csv(path, &LabelColumn::from(label_column), *has_header)
                .with_context(|| format!("loading {}", path.display()))?,
            DatasetSource::Synthetic {
                seed,
                samples,
                features,
                noise_std,
            } => synth_regression(*seed, *samples, *features, *noise_std).0,
        };
        if let Some(n) = self.limit_rows {
            ds = ds.head(n);
        }
        if self.standardize {
            ds = standardize(&ds, &BTreeSet::new()).context("standardizing dataset")?;
        }
        if self.bias {
            ds = append_bias(&ds);
        }
        if let Some(n) = self.subset_rows {
            ds = ds.head(n);
        }
        Ok(ds)
    }
}

/// Embedded experiment presets. `data` points at the regression CSV the
/// convex experiments run on.
pub fn preset(name: &str, data: Option<PathBuf>) -> Result<ExperimentConfig> {
    let dataset = match data {
        Some(path) => DatasetSource::Csv {
            path,
            label_column: LabelSelector::Name("critical_temp".into()),
            has_header: true,
        },
        None => bail!("preset {name} needs --data <csv>"),
    };
    let base_training = TrainingConfig {
        local_steps: 1,
        batch_size: 100,
        eta: 0.001,
        rounds: 100,
        sampling: Sampling::Stratified,
        seed: 1,
        init: Init::Zero,
        float_width: FloatWidth::Bits64,
    };
    let config = match name {
        // Effect of the number of local steps: N=4, K=5, B=100, eta=0.001.
        "fig2a" => ExperimentConfig {
            name: "fig2a".into(),
            dataset,
            limit_rows: Some(20000),
            standardize: true,
            bias: true,
            subset_rows: None,
            loss: LossConfig {
                family: LossFamily::Ridge,
                lambda: 1.0,
            },
            topology: TopologyConfig {
                silos: 4,
                clients_per_silo: 5,
                vertical_widths: None,
            },
            training: base_training,
            sweep: [1usize, 2, 4, 8]
                .iter()
                .map(|&q| SweepOverride {
                    local_steps: Some(q),
                    ..SweepOverride::default()
                })
                .collect(),
            loss_threshold: None,
            log_scale: true,
            output_dir: PathBuf::from("out/fig2a"),
        },
        // Effect of the silo count on a 2000-sample subset: K=2, Q=4, B=20.
        "fig2b" => ExperimentConfig {
            name: "fig2b".into(),
            dataset,
            limit_rows: Some(20000),
            standardize: true,
            bias: true,
            subset_rows: Some(2000),
            loss: LossConfig {
                family: LossFamily::Ridge,
                lambda: 1.0,
            },
            topology: TopologyConfig {
                silos: 2,
                clients_per_silo: 2,
                vertical_widths: None,
            },
            training: TrainingConfig {
                local_steps: 4,
                batch_size: 20,
                ..base_training
            },
            sweep: [2usize, 4, 8]
                .iter()
                .map(|&n| SweepOverride {
                    silos: Some(n),
                    ..SweepOverride::default()
                })
                .collect(),
            loss_threshold: None,
            log_scale: true,
            output_dir: PathBuf::from("out/fig2b"),
        },
        // Effect of the client count on the same subset: N=4, Q=4, B=500.
        "fig2c" => ExperimentConfig {
            name: "fig2c".into(),
            dataset,
            limit_rows: Some(20000),
            standardize: true,
            bias: true,
            subset_rows: Some(2000),
            loss: LossConfig {
                family: LossFamily::Ridge,
                lambda: 1.0,
            },
            topology: TopologyConfig {
                silos: 4,
                clients_per_silo: 2,
                vertical_widths: None,
            },
            training: TrainingConfig {
                local_steps: 4,
                batch_size: 500,
                ..base_training
            },
            sweep: [2usize, 5, 10]
                .iter()
                .map(|&k| SweepOverride {
                    clients_per_silo: Some(k),
                    ..SweepOverride::default()
                })
                .collect(),
            loss_threshold: None,
            log_scale: true,
            output_dir: PathBuf::from("out/fig2c"),
        },
        other => bail!("unknown preset {other}; available: fig2a, fig2b, fig2c"),
    };
    Ok(config)
}
