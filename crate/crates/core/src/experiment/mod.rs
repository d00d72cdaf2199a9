//! End-to-end pipeline: pretrain, ADMM, decompose, fine-tune, report.

mod config;
mod rank;

pub use config::{AdmmConfig, DataConfig, ExperimentConfig, FinetuneConfig, PhaseConfig, CONFIG_VERSION};
pub use rank::{rank_search, rank_search_layer, RankChoice};

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::admm::{
    decompose_and_finetune, project_weight, run_admm, write_history, AdmmState, EpochRecord, HistoryRow, NetworkProblem,
};
use crate::data::{load_idx, synth_classification, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Sgd, TtTarget};
use crate::rng::{substream, Stream};
use crate::tensor::sum_sq;
use crate::train::{evaluate, sgd_epoch};
use crate::tt::{compression_ratio, param_count_for};

pub const REPORT_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ttnn";
pub const ADMM_CHECKPOINT: &str = "admm.ttnn";
pub const DECOMPOSED_CHECKPOINT: &str = "decomposed.ttnn";
pub const FINETUNED_CHECKPOINT: &str = "finetuned.ttnn";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// The two ways of getting a TT model without ADMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// TT layers from random cores, trained directly.
    RandomTt,
    /// Plain dense training, then TT-SVD and fine-tuning.
    DirectDecompose,
}

impl BaselineMode {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMode::RandomTt => "random-tt",
            BaselineMode::DirectDecompose => "direct-decompose",
        }
    }
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-tt" => Ok(BaselineMode::RandomTt),
            "direct-decompose" => Ok(BaselineMode::DirectDecompose),
            other => Err(Error::Config(format!("unknown baseline mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: &'static str,
    pub ranks: Vec<usize>,
    pub dense_params: usize,
    pub tt_params: usize,
    pub compression_ratio: f64,
    /// `‖W − Π(W)‖ / ‖W‖` after pretraining.
    pub projection_error_pretrained: Option<f64>,
    /// The same quantity for the weight that was actually decomposed.
    pub projection_error_decomposed: Option<f64>,
}

/// Outcome of one pipeline or baseline run. Field order and names are stable;
/// timings are deliberately absent so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub mode: &'static str,
    pub seed: u64,
    /// Weights of the compressed layers only; biases stay dense and are not counted.
    pub dense_params: usize,
    pub tt_params: usize,
    pub compression_ratio: f64,
    /// All parameters of the uncompressed and of the final network.
    pub network_dense_params: usize,
    pub network_tt_params: usize,
    pub dense_accuracy: Option<f64>,
    /// TT model right after decomposition (or random init), before fine-tuning.
    pub decomposed_accuracy: f64,
    pub final_accuracy: f64,
    pub projection_error_pretrained: Option<f64>,
    pub projection_error_decomposed: Option<f64>,
    pub admm_iterations: usize,
    pub admm_final_train_loss: Option<f64>,
    pub admm_final_residual_sq: Option<f64>,
    pub layers: Vec<LayerReport>,
    pub pretrain: Vec<EpochRecord>,
    pub finetune: Vec<EpochRecord>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// A dense network after the pretraining phase.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub net: Network,
    pub trace: Vec<EpochRecord>,
}

/// Loaded data plus config; phases can be run one at a time from here.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
}

fn split_off(ds: &Dataset, start: usize, split: Split) -> Result<Dataset> {
    let d = ds.sample_dim();
    Dataset::new(
        ds.inputs()[start * d..].to_vec(),
        ds.labels()[start..].to_vec(),
        ds.sample_shape().to_vec(),
        split,
    )
}

fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.data {
        DataConfig::Idx {
            dir,
            train_limit,
            test_limit,
        } => {
            let mut train = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS), Split::Train)?;
            let mut test = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS), Split::Test)?;
            if let Some(n) = train_limit {
                train = train.take(*n);
            }
            if let Some(n) = test_limit {
                test = test.take(*n);
            }
            if train.is_empty() || test.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok((train, test))
        }
        DataConfig::Synthetic {
            train_samples,
            test_samples,
            dims,
            classes,
        } => {
            let all = synth_classification(config.seed, train_samples + test_samples, *dims, *classes)?;
            let test = split_off(&all, *train_samples, Split::Test)?;
            Ok((all.take(*train_samples), test))
        }
    }
}

fn save(net: &Network, dir: &Path, name: &str) -> Result<()> {
    net.save(&dir.join(name))
}

/// Combined relative projection error over several layers, plus each layer's own.
fn projection_errors(net: &Network, targets: &[(usize, TtTarget)]) -> Result<(f64, Vec<f64>)> {
    let mut diff_total = 0.0;
    let mut norm_total = 0.0;
    let mut per_layer = Vec::with_capacity(targets.len());
    for (i, target) in targets {
        let w = net.layers()[*i]
            .dense_weight()
            .ok_or_else(|| Error::InvalidLayer(format!("layer {i} is not dense")))?;
        let p = project_weight(w, target)?;
        let diff: f64 = w.data().iter().zip(p.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm = sum_sq(w.data());
        per_layer.push(if norm == 0.0 { diff.sqrt() } else { (diff / norm).sqrt() });
        diff_total += diff;
        norm_total += norm;
    }
    let combined = if norm_total == 0.0 {
        diff_total.sqrt()
    } else {
        (diff_total / norm_total).sqrt()
    };
    Ok((combined, per_layer))
}

fn layer_reports(
    targets: &[(usize, TtTarget)],
    pretrained: Option<&[f64]>,
    decomposed: Option<&[f64]>,
) -> Result<Vec<LayerReport>> {
    targets
        .iter()
        .enumerate()
        .map(|(k, (i, target))| {
            let ranks = target.clamped_ranks()?;
            let dense_params = target.map.dense_params();
            let tt_params = param_count_for(&target.map.mode_sizes(), &ranks);
            let kind = if target.map.kernel.is_some() { "conv" } else { "fc" };
            Ok(LayerReport {
                index: *i,
                kind,
                ranks: ranks.as_slice().to_vec(),
                dense_params,
                tt_params,
                compression_ratio: compression_ratio(dense_params, tt_params),
                projection_error_pretrained: pretrained.map(|v| v[k]),
                projection_error_decomposed: decomposed.map(|v| v[k]),
            })
        })
        .collect()
}

fn totals(layers: &[LayerReport]) -> (usize, usize, f64) {
    let dense: usize = layers.iter().map(|l| l.dense_params).sum();
    let tt: usize = layers.iter().map(|l| l.tt_params).sum();
    let ratio = if tt == 0 { 1.0 } else { compression_ratio(dense, tt) };
    (dense, tt, ratio)
}

/// Trains for `epochs` epochs numbered from `offset + 1`, recording loss and
/// test accuracy after each.
fn train_phase(
    net: &mut Network,
    exp: &Experiment,
    phase: &PhaseConfig,
    epochs: usize,
    offset: usize,
) -> Result<Vec<EpochRecord>> {
    let mut opt = Sgd::new(phase.lr, phase.momentum);
    let mut trace = Vec::with_capacity(epochs);
    for e in 1..=epochs {
        let epoch = offset + e;
        let train_loss = sgd_epoch(
            net,
            &exp.train,
            &mut opt,
            phase.batch_size,
            exp.config.seed,
            epoch as u32,
        )?;
        trace.push(EpochRecord {
            epoch,
            train_loss,
            test_accuracy: Some(evaluate(net, &exp.test)?),
        });
    }
    Ok(trace)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

impl Experiment {
    /// Validates the config and loads its data.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = load_data(&config).map_err(|e| e.in_phase("data"))?;
        Ok(Self { config, train, test })
    }

    pub fn initial_network(&self) -> Result<Network> {
        Network::from_specs(&self.config.model, &mut substream(self.config.seed, Stream::Init, 0))
    }

    /// Dense training on the plain loss for `pretrain.epochs` epochs.
    pub fn pretrain(&self) -> Result<Pretrained> {
        let run = || -> Result<Pretrained> {
            let mut net = self.initial_network()?;
            let trace = train_phase(&mut net, self, &self.config.pretrain, self.config.pretrain.epochs, 0)?;
            Ok(Pretrained { net, trace })
        };
        run().map_err(|e| e.in_phase("pretrain"))
    }

    /// ADMM, decomposition and fine-tuning starting from a pretrained model.
    /// Writes checkpoints, metrics and the report under `out_dir`.
    pub fn run_from(&self, pre: &Pretrained, out_dir: &Path) -> Result<Report> {
        let cfg = &self.config;
        let targets = cfg.compressed_layers();
        let layer_ids: Vec<usize> = targets.iter().map(|(i, _)| *i).collect();
        create_dir(out_dir)?;
        save(&pre.net, out_dir, PRETRAIN_CHECKPOINT).map_err(|e| e.in_phase("pretrain"))?;
        let dense_accuracy = evaluate(&pre.net, &self.test).map_err(|e| e.in_phase("pretrain"))?;
        let (pre_err, pre_layer_err) = projection_errors(&pre.net, &targets).map_err(|e| e.in_phase("admm"))?;

        let mut net = pre.net.clone();
        let mut admm = || -> Result<(Vec<HistoryRow>, AdmmState)> {
            let weights: Vec<_> = layer_ids
                .iter()
                .map(|&i| net.layers()[i].dense_weight().expect("compressed layers are dense"))
                .collect();
            let mut state = AdmmState::new(
                &weights,
                targets.iter().map(|(_, t)| t.clone()).collect(),
                cfg.admm.rho,
                cfg.admm.epsilon,
                cfg.admm.max_iters,
            )?;
            let mut problem = NetworkProblem::new(
                &mut net,
                layer_ids.clone(),
                &self.train,
                Some(&self.test),
                cfg.admm.sgd(),
                cfg.seed,
            )?;
            let history = run_admm(&mut problem, &mut state, cfg.pretrain.epochs)?;
            let mut csv = Vec::new();
            write_history(&mut csv, &history)?;
            fs::write(out_dir.join(METRICS_FILE), csv)?;
            Ok((history, state))
        };
        let (history, _) = admm().map_err(|e| e.in_phase("admm"))?;
        save(&net, out_dir, ADMM_CHECKPOINT).map_err(|e| e.in_phase("admm"))?;
        let (dec_err, dec_layer_err) = projection_errors(&net, &targets).map_err(|e| e.in_phase("decompose"))?;

        let offset = cfg.pretrain.epochs + history.len();
        let tuned = decompose_and_finetune(
            &net,
            &targets,
            &self.train,
            Some(&self.test),
            cfg.finetune.phase().sgd(),
            0,
            cfg.seed,
            offset,
        )
        .map_err(|e| e.in_phase("decompose"))?;
        save(&tuned.net, out_dir, DECOMPOSED_CHECKPOINT).map_err(|e| e.in_phase("decompose"))?;
        let decomposed_accuracy = tuned.decomposed_accuracy.expect("test set given");

        let mut final_net = tuned.net;
        let finetune = train_phase(&mut final_net, self, &cfg.finetune.phase(), cfg.finetune.epochs, offset)
            .map_err(|e| e.in_phase("finetune"))?;
        save(&final_net, out_dir, FINETUNED_CHECKPOINT).map_err(|e| e.in_phase("finetune"))?;
        let final_accuracy = finetune
            .last()
            .and_then(|r| r.test_accuracy)
            .unwrap_or(decomposed_accuracy);

        let layers = layer_reports(&targets, Some(&pre_layer_err), Some(&dec_layer_err))?;
        let (dense_params, tt_params, ratio) = totals(&layers);
        let report = Report {
            schema_version: REPORT_VERSION,
            mode: "admm",
            seed: cfg.seed,
            dense_params,
            tt_params,
            compression_ratio: ratio,
            network_dense_params: pre.net.param_count(),
            network_tt_params: final_net.param_count(),
            dense_accuracy: Some(dense_accuracy),
            decomposed_accuracy,
            final_accuracy,
            projection_error_pretrained: Some(pre_err),
            projection_error_decomposed: Some(dec_err),
            admm_iterations: history.len(),
            admm_final_train_loss: history.last().map(|r| r.train_loss),
            admm_final_residual_sq: history.last().map(|r| r.residual_sq),
            layers,
            pretrain: pre.trace.clone(),
            finetune,
        };
        fs::write(out_dir.join(REPORT_FILE), report.to_json()).map_err(|e| Error::from(e).in_phase("report"))?;
        Ok(report)
    }

    /// One baseline under the same epoch budget as the ADMM pipeline.
    ///
    /// `random-tt` trains randomly initialized TT layers for pretrain + ADMM +
    /// fine-tune epochs with the pretrain settings. `direct-decompose` takes
    /// the pretrained model through `admm.max_iters` more epochs with the ADMM
    /// optimizer settings but no penalty, then decomposes and fine-tunes.
    /// `pre` is reused for the latter when given.
    pub fn baseline_from(&self, mode: BaselineMode, pre: Option<&Pretrained>, out_dir: &Path) -> Result<Report> {
        let cfg = &self.config;
        let targets = cfg.compressed_layers();
        create_dir(out_dir)?;
        let mut report = match mode {
            BaselineMode::RandomTt => {
                let specs: Vec<LayerSpec> = cfg.model.iter().map(random_tt_spec).collect();
                let build = || Network::from_specs(&specs, &mut substream(cfg.seed, Stream::Init, 0));
                let mut net = build().map_err(|e| e.in_phase("pretrain"))?;
                let decomposed_accuracy = evaluate(&net, &self.test).map_err(|e| e.in_phase("pretrain"))?;
                let epochs = cfg.pretrain.epochs + cfg.admm.max_iters + cfg.finetune.epochs;
                let finetune =
                    train_phase(&mut net, self, &cfg.pretrain, epochs, 0).map_err(|e| e.in_phase("finetune"))?;
                save(&net, out_dir, FINETUNED_CHECKPOINT).map_err(|e| e.in_phase("finetune"))?;
                let layers = layer_reports(&targets, None, None)?;
                let dense = self.initial_network()?;
                Report {
                    schema_version: REPORT_VERSION,
                    mode: mode.name(),
                    seed: cfg.seed,
                    dense_params: 0,
                    tt_params: 0,
                    compression_ratio: 1.0,
                    network_dense_params: dense.param_count(),
                    network_tt_params: net.param_count(),
                    dense_accuracy: None,
                    decomposed_accuracy,
                    final_accuracy: finetune
                        .last()
                        .and_then(|r| r.test_accuracy)
                        .unwrap_or(decomposed_accuracy),
                    projection_error_pretrained: None,
                    projection_error_decomposed: None,
                    admm_iterations: 0,
                    admm_final_train_loss: None,
                    admm_final_residual_sq: None,
                    layers,
                    pretrain: Vec::new(),
                    finetune,
                }
            }
            BaselineMode::DirectDecompose => {
                let owned;
                let pre = match pre {
                    Some(p) => p,
                    None => {
                        owned = self.pretrain()?;
                        &owned
                    }
                };
                let (pre_err, pre_layer_err) =
                    projection_errors(&pre.net, &targets).map_err(|e| e.in_phase("pretrain"))?;
                let mut net = pre.net.clone();
                let admm_phase = PhaseConfig {
                    epochs: cfg.admm.max_iters,
                    lr: cfg.admm.lr,
                    momentum: cfg.admm.momentum,
                    batch_size: cfg.admm.batch_size,
                };
                let mut trace = pre.trace.clone();
                trace.extend(
                    train_phase(&mut net, self, &admm_phase, cfg.admm.max_iters, cfg.pretrain.epochs)
                        .map_err(|e| e.in_phase("pretrain"))?,
                );
                save(&net, out_dir, PRETRAIN_CHECKPOINT).map_err(|e| e.in_phase("pretrain"))?;
                let dense_accuracy = evaluate(&net, &self.test).map_err(|e| e.in_phase("pretrain"))?;
                let (dec_err, dec_layer_err) =
                    projection_errors(&net, &targets).map_err(|e| e.in_phase("decompose"))?;
                let offset = cfg.pretrain.epochs + cfg.admm.max_iters;
                let tuned = decompose_and_finetune(
                    &net,
                    &targets,
                    &self.train,
                    Some(&self.test),
                    cfg.finetune.phase().sgd(),
                    0,
                    cfg.seed,
                    offset,
                )
                .map_err(|e| e.in_phase("decompose"))?;
                save(&tuned.net, out_dir, DECOMPOSED_CHECKPOINT).map_err(|e| e.in_phase("decompose"))?;
                let decomposed_accuracy = tuned.decomposed_accuracy.expect("test set given");
                let mut final_net = tuned.net;
                let finetune = train_phase(&mut final_net, self, &cfg.finetune.phase(), cfg.finetune.epochs, offset)
                    .map_err(|e| e.in_phase("finetune"))?;
                save(&final_net, out_dir, FINETUNED_CHECKPOINT).map_err(|e| e.in_phase("finetune"))?;
                let layers = layer_reports(&targets, Some(&pre_layer_err), Some(&dec_layer_err))?;
                Report {
                    schema_version: REPORT_VERSION,
                    mode: mode.name(),
                    seed: cfg.seed,
                    dense_params: 0,
                    tt_params: 0,
                    compression_ratio: 1.0,
                    network_dense_params: net.param_count(),
                    network_tt_params: final_net.param_count(),
                    dense_accuracy: Some(dense_accuracy),
                    decomposed_accuracy,
                    final_accuracy: finetune
                        .last()
                        .and_then(|r| r.test_accuracy)
                        .unwrap_or(decomposed_accuracy),
                    projection_error_pretrained: Some(pre_err),
                    projection_error_decomposed: Some(dec_err),
                    admm_iterations: 0,
                    admm_final_train_loss: None,
                    admm_final_residual_sq: None,
                    layers,
                    pretrain: trace,
                    finetune,
                }
            }
        };
        let (dense_params, tt_params, ratio) = totals(&report.layers);
        report.dense_params = dense_params;
        report.tt_params = tt_params;
        report.compression_ratio = ratio;
        fs::write(out_dir.join(REPORT_FILE), report.to_json()).map_err(|e| Error::from(e).in_phase("report"))?;
        Ok(report)
    }
}

/// Dense layers marked for compression become TT layers with random cores.
fn random_tt_spec(spec: &LayerSpec) -> LayerSpec {
    match spec {
        LayerSpec::DenseFc {
            tt: Some(tt),
            activation,
            ..
        } => LayerSpec::TtFc {
            tt: tt.clone(),
            activation: *activation,
        },
        LayerSpec::DenseConv {
            tt: Some(tt),
            activation,
            width,
            height,
            ..
        } => LayerSpec::TtConv {
            width: *width,
            height: *height,
            tt: tt.clone(),
            activation: *activation,
        },
        other => other.clone(),
    }
}

/// The full pipeline with outputs under `config.output_dir`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<Report> {
    let exp = Experiment::new(config.clone())?;
    let pre = exp.pretrain()?;
    exp.run_from(&pre, &config.output_dir)
}

/// Directory a baseline writes into.
pub fn baseline_dir(config: &ExperimentConfig, mode: BaselineMode) -> PathBuf {
    config.output_dir.join(format!("baseline-{}", mode.name()))
}

/// One baseline with outputs under `<output_dir>/baseline-<mode>/`.
pub fn baseline_standard_tt(config: &ExperimentConfig, mode: BaselineMode) -> Result<Report> {
    let exp = Experiment::new(config.clone())?;
    exp.baseline_from(mode, None, &baseline_dir(config, mode))
}
