//! Toy harness: synthetic frame features, gradient-descent training of the
//! gender head and the neutral-ratio × loss-weight sweep.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    backward, class_index, combined_loss, forward, frame_accuracy, head_forward,
    transducer_loss_standin, FrameMatrix, GenderHead, GenderLossError, Lattice, NUM_CLASSES,
    PROB_FLOOR,
};
use crate::corpus::{Gender, Lang, Utterance};
use crate::selection::{
    build_targets, partition_corpus, sample_balanced, GenderedPair, MixConfig, PronounFilter,
};

pub const CHECKPOINT_FORMAT: &str = "gstd-head-v1";

/// One training or evaluation item: frames, label and a fixed lattice for
/// the translation-loss stand-in.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub frames: FrameMatrix,
    pub gender: Gender,
    pub lattice: Lattice,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub frames: usize,
    /// Size of the synthetic corpus fed to selection.
    pub pool_size: usize,
    /// Share of the synthetic corpus with a first-person transcript.
    pub first_person_share: f64,
    pub eval_utterances: usize,
    /// Frame features are drawn around `-mean` (male) and `+mean` (female).
    pub mean: f64,
    pub sigma: f64,
    pub steps: usize,
    pub lr: f64,
    pub vocab: usize,
    pub label_len: usize,
    pub length_normalized: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden_dim: 8,
            frames: 10,
            pool_size: 400,
            first_person_share: 0.5,
            eval_utterances: 100,
            mean: 1.0,
            sigma: 0.3,
            steps: 500,
            lr: 0.5,
            vocab: 4,
            label_len: 2,
            length_normalized: false,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), GenderLossError> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("frames", self.frames),
            ("pool_size", self.pool_size),
            ("eval_utterances", self.eval_utterances),
            ("vocab", self.vocab),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(GenderLossError::InvalidConfig(format!(
                "{name} must be at least 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.first_person_share) {
            return Err(GenderLossError::InvalidConfig(
                "first_person_share must lie in [0, 1]".into(),
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.mean.is_finite()) {
            return Err(GenderLossError::InvalidConfig(
                "mean and sigma must be finite, sigma >= 0".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(GenderLossError::InvalidConfig(
                "lr must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn synth_frames(
    id: &str,
    gender: Gender,
    cfg: &HarnessConfig,
    rng: &mut ChaCha8Rng,
) -> FrameMatrix {
    let sign = if gender == Gender::Female { 1.0 } else { -1.0 };
    let noise = Normal::new(0.0, cfg.sigma).expect("sigma validated");
    let values = Array2::from_shape_fn((cfg.frames, cfg.input_dim), |_| {
        sign * cfg.mean + noise.sample(rng)
    });
    FrameMatrix::new(id, values).expect("finite synthetic frames")
}

/// Random normalized lattice of shape `frames × (label_len + 1) × (vocab + 1)`.
fn synth_lattice(cfg: &HarnessConfig, rng: &mut ChaCha8Rng) -> (Lattice, Vec<usize>) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut lattice = Array3::from_shape_fn((cfg.frames, cfg.label_len + 1, cfg.vocab + 1), |_| {
        std.sample(rng)
    });
    for mut cell in lattice.lanes_mut(Axis(2)) {
        let max = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + cell.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        cell.mapv_inplace(|v| v - log_z);
    }
    let labels = (0..cfg.label_len)
        .map(|_| rng.random_range(1..=cfg.vocab))
        .collect();
    (lattice, labels)
}

fn toy_utterance(
    id: &str,
    gender: Gender,
    cfg: &HarnessConfig,
    rng: &mut ChaCha8Rng,
) -> ToyUtterance {
    let frames = synth_frames(id, gender, cfg, rng);
    let (lattice, labels) = synth_lattice(cfg, rng);
    ToyUtterance {
        frames,
        gender,
        lattice,
        labels,
    }
}

/// `n` utterances with alternating gender (male first).
pub fn separable_utterances(n: usize, cfg: &HarnessConfig, seed: u64) -> Vec<ToyUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let gender = if i % 2 == 0 {
                Gender::Male
            } else {
                Gender::Female
            };
            toy_utterance(&format!("toy-{i:05}"), gender, cfg, &mut rng)
        })
        .collect()
}

/// Run a synthetic corpus through selection and target construction at the
/// given neutral ratio, then attach frames for every emitted record.
pub fn build_toy_dataset(
    theta_neut: f64,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<Vec<ToyUtterance>, GenderLossError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus: Vec<Utterance> = (0..cfg.pool_size)
        .map(|i| {
            let gender = if i % 2 == 0 {
                Gender::Male
            } else {
                Gender::Female
            };
            let first_person = rng.random_bool(cfg.first_person_share);
            let (transcript, translation) = if first_person {
                (
                    "I was tired after the trip",
                    "estaba cansado después del viaje",
                )
            } else {
                ("The trip was long", "el viaje fue largo")
            };
            Utterance {
                id: format!("pool-{i:05}"),
                audio_ref: None,
                transcript: transcript.into(),
                translation: translation.into(),
                lang: Lang::Es,
                speaker_gender: gender,
                duration_s: None,
            }
        })
        .collect();
    let part = partition_corpus(&corpus, &PronounFilter::default());
    let per_gender = part.stats.selected_male.min(part.stats.selected_female);
    let selection_err =
        |e: crate::selection::SelectionError| GenderLossError::InvalidConfig(e.to_string());
    let sampled = sample_balanced(&part.selected, 2 * per_gender, seed).map_err(selection_err)?;
    let reformulations: HashMap<String, GenderedPair> = sampled
        .iter()
        .map(|u| {
            let pair = GenderedPair {
                masculine: "estaba cansado después del viaje".into(),
                feminine: "estaba cansada después del viaje".into(),
            };
            (u.id.clone(), pair)
        })
        .collect();
    let mix = MixConfig {
        theta_neut,
        seed,
        ..MixConfig::default()
    };
    let records =
        build_targets(&sampled, &reformulations, &part.neutral, &mix).map_err(selection_err)?;
    Ok(records
        .iter()
        .map(|r| toy_utterance(&r.utterance_id, r.speaker_gender, cfg, &mut rng))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub steps: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub length_normalized: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = HarnessConfig::default();
        Self {
            alpha: 0.1,
            steps: h.steps,
            lr: h.lr,
            hidden_dim: h.hidden_dim,
            length_normalized: false,
        }
    }
}

/// Dataset means at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub l_gr: f64,
    pub l_trans: f64,
    pub l_comb: f64,
    pub frame_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub head: GenderHead,
    /// Entry `s` is measured before update `s`; the last entry is after the final update.
    pub trace: Vec<TraceStep>,
}

/// Full-batch gradient descent on the mean combined loss.
///
/// `W_g` is drawn from N(0, 1/D) with a generator seeded by `seed`; `b_g` and
/// `W_out` start at zero, so the untrained head predicts exactly 0.5 per class.
pub fn train_toy_head(
    dataset: &[ToyUtterance],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedHead, GenderLossError> {
    let first = dataset.first().ok_or(GenderLossError::DegenerateDataset)?;
    if !dataset.iter().any(|u| u.gender != first.gender) {
        return Err(GenderLossError::DegenerateDataset);
    }
    for u in dataset {
        class_index(u.gender)?;
    }
    combined_loss(0.0, 0.0, cfg.alpha)?;
    if cfg.hidden_dim == 0 || !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(GenderLossError::InvalidConfig(
            "hidden_dim >= 1 and finite lr >= 0 required".into(),
        ));
    }
    let input_dim = first.frames.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("positive std");
    let mut head = GenderHead::new(
        Array2::from_shape_fn((cfg.hidden_dim, input_dim), |_| init.sample(&mut rng)),
        Array1::zeros(cfg.hidden_dim),
        Array2::zeros((NUM_CLASSES, cfg.hidden_dim)),
    )?;

    let l_trans: Vec<f64> = dataset
        .iter()
        .map(|u| transducer_loss_standin(&u.lattice, &u.labels))
        .collect::<Result<_, _>>()?;
    let n = dataset.len() as f64;
    let mean_l_trans = l_trans.iter().sum::<f64>() / n;

    // All frames stacked into one matrix; the per-utterance losses are sums
    // over frames, so the batch loss is a weighted sum over rows.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for u in dataset {
        if u.frames.dim() != input_dim {
            return Err(GenderLossError::DimensionMismatch(format!(
                "utterance '{}' has {} features, expected {input_dim}",
                u.frames.utterance_id,
                u.frames.dim()
            )));
        }
        let t = u.frames.frames();
        let w = if cfg.length_normalized {
            1.0 / t as f64
        } else {
            1.0
        };
        rows.extend(u.frames.values().iter().copied());
        labels.extend(std::iter::repeat_n(class_index(u.gender)?, t));
        weights.extend(std::iter::repeat_n(w, t));
    }
    let stacked =
        Array2::from_shape_vec((labels.len(), input_dim), rows).expect("row lengths checked above");

    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let fwd = forward(&stacked, &head);
        let mut l_gr = 0.0;
        let mut credit = 0.0;
        for ((row, &y), &w) in fwd.o.rows().into_iter().zip(&labels).zip(&weights) {
            l_gr -= w * row[y].max(PROB_FLOOR).ln();
            credit += if row[y] > row[1 - y] {
                1.0
            } else if row[y] == row[1 - y] {
                0.5
            } else {
                0.0
            };
        }
        l_gr /= n;
        trace.push(TraceStep {
            step,
            l_gr,
            l_trans: mean_l_trans,
            l_comb: combined_loss(l_gr, mean_l_trans, cfg.alpha)?,
            frame_accuracy: credit / labels.len() as f64,
        });
        if step == cfg.steps {
            break;
        }
        if cfg.alpha == 0.0 {
            // The head gradient of the combined loss is identically zero.
            continue;
        }
        let mut grad = backward(&stacked, &fwd, &labels, &weights, &head);
        grad.scale(cfg.alpha * cfg.lr / n);
        head.w_g -= &grad.w_g;
        head.b_g -= &grad.b_g;
        head.w_out -= &grad.w_out;
    }
    if head
        .w_g
        .iter()
        .chain(&head.b_g)
        .chain(&head.w_out)
        .any(|v| !v.is_finite())
    {
        return Err(GenderLossError::NonFinite("trained head"));
    }
    Ok(TrainedHead { head, trace })
}

/// Utterance-level accuracy of the majority frame vote; tied votes count half.
pub fn proxy_gta(head: &GenderHead, eval: &[ToyUtterance]) -> Result<f64, GenderLossError> {
    if eval.is_empty() {
        return Err(GenderLossError::InvalidConfig(
            "evaluation set is empty".into(),
        ));
    }
    let mut credit = 0.0;
    for u in eval {
        let acc = frame_accuracy(&head_forward(&u.frames, head)?, u.gender)?;
        credit += if acc > 0.5 {
            1.0
        } else if acc == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    Ok(credit / eval.len() as f64)
}

/// One training run of the sweep, in CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub theta_neut: f64,
    pub alpha: f64,
    pub seed: u64,
    pub final_accuracy: f64,
    pub proxy_gta: f64,
    pub l_gr_final: f64,
    pub l_trans_final: f64,
}

/// Aggregate over seeds for one (θ_neut, α) cell. Spreads are sample
/// standard deviations (0 for a single run).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub theta_neut: f64,
    pub alpha: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub spread_accuracy: f64,
    pub mean_proxy_gta: f64,
    pub spread_proxy_gta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<SweepCell>,
}

fn mean_spread(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for run in &self.runs {
            w.serialize(run).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:>10} {:>6} {:>5} {:>17} {:>17}\n",
            "theta_neut", "alpha", "runs", "frame acc.", "proxy GTA"
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:>10.2} {:>6.2} {:>5} {:>9.4} ± {:.4} {:>9.4} ± {:.4}\n",
                c.theta_neut,
                c.alpha,
                c.runs,
                c.mean_accuracy,
                c.spread_accuracy,
                c.mean_proxy_gta,
                c.spread_proxy_gta
            ));
        }
        out
    }
}

// Keeps the evaluation stream apart from the training stream of the same seed.
const EVAL_SEED_OFFSET: u64 = 0x5eed_e7a1;

fn run_one(
    theta: f64,
    alpha: f64,
    seed: u64,
    cfg: &HarnessConfig,
) -> Result<SweepRun, GenderLossError> {
    let train = build_toy_dataset(theta, cfg, seed)?;
    let eval = separable_utterances(
        cfg.eval_utterances,
        cfg,
        seed.wrapping_add(EVAL_SEED_OFFSET),
    );
    let tcfg = TrainConfig {
        alpha,
        steps: cfg.steps,
        lr: cfg.lr,
        hidden_dim: cfg.hidden_dim,
        length_normalized: cfg.length_normalized,
    };
    let trained = train_toy_head(&train, &tcfg, seed)?;
    let last = trained.trace.last().expect("trace has the initial entry");
    Ok(SweepRun {
        theta_neut: theta,
        alpha,
        seed,
        final_accuracy: last.frame_accuracy,
        proxy_gta: proxy_gta(&trained.head, &eval)?,
        l_gr_final: last.l_gr,
        l_trans_final: last.l_trans,
    })
}

/// Train one head per (θ_neut, α, seed) in parallel and aggregate per cell.
/// Runs and cells keep grid order (θ outermost, seed innermost).
pub fn sweep(
    theta_values: &[f64],
    alpha_values: &[f64],
    seeds: &[u64],
    cfg: &HarnessConfig,
) -> Result<SweepReport, GenderLossError> {
    if theta_values.is_empty() || alpha_values.is_empty() || seeds.is_empty() {
        return Err(GenderLossError::InvalidConfig(
            "sweep grids must be non-empty".into(),
        ));
    }
    cfg.validate()?;
    for &t in theta_values {
        if !(0.0..=1.0).contains(&t) {
            return Err(GenderLossError::InvalidConfig(format!(
                "theta_neut must lie in [0, 1], got {t}"
            )));
        }
    }
    for &a in alpha_values {
        combined_loss(0.0, 0.0, a)?;
    }
    let grid: Vec<(f64, f64, u64)> = theta_values
        .iter()
        .flat_map(|&t| {
            alpha_values
                .iter()
                .flat_map(move |&a| seeds.iter().map(move |&s| (t, a, s)))
        })
        .collect();
    let runs = grid
        .par_iter()
        .map(|&(t, a, s)| run_one(t, a, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let cells = runs
        .chunks(seeds.len())
        .map(|chunk| {
            let acc: Vec<f64> = chunk.iter().map(|r| r.final_accuracy).collect();
            let gta: Vec<f64> = chunk.iter().map(|r| r.proxy_gta).collect();
            let (mean_accuracy, spread_accuracy) = mean_spread(&acc);
            let (mean_proxy_gta, spread_proxy_gta) = mean_spread(&gta);
            SweepCell {
                theta_neut: chunk[0].theta_neut,
                alpha: chunk[0].alpha,
                runs: chunk.len(),
                mean_accuracy,
                spread_accuracy,
                mean_proxy_gta,
                spread_proxy_gta,
            }
        })
        .collect();
    Ok(SweepReport { runs, cells })
}

/// JSON checkpoint with a dimension header; matrices are flattened row-major.
pub fn save_checkpoint(head: &GenderHead) -> String {
    let value = json!({
        "format": CHECKPOINT_FORMAT,
        "input_dim": head.input_dim(),
        "hidden_dim": head.hidden_dim(),
        "classes": NUM_CLASSES,
        "w_g": head.w_g.iter().collect::<Vec<_>>(),
        "b_g": head.b_g.iter().collect::<Vec<_>>(),
        "w_out": head.w_out.iter().collect::<Vec<_>>(),
    });
    serde_json::to_string_pretty(&value).expect("serializable checkpoint")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
    w_g: Vec<f64>,
    b_g: Vec<f64>,
    w_out: Vec<f64>,
}

pub fn load_checkpoint(text: &str) -> Result<GenderHead, GenderLossError> {
    let bad = |msg: String| GenderLossError::Checkpoint(msg);
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unsupported format '{}'", ck.format)));
    }
    if ck.classes != NUM_CLASSES {
        return Err(bad(format!(
            "expected {NUM_CLASSES} classes, got {}",
            ck.classes
        )));
    }
    let shape_err = |e: ndarray::ShapeError| bad(e.to_string());
    let w_g = Array2::from_shape_vec((ck.hidden_dim, ck.input_dim), ck.w_g).map_err(shape_err)?;
    let w_out =
        Array2::from_shape_vec((NUM_CLASSES, ck.hidden_dim), ck.w_out).map_err(shape_err)?;
    GenderHead::new(w_g, Array1::from(ck.b_g), w_out)
}
