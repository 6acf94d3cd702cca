//! Frame-level gender classification loss on encoder outputs.
//!
//! A small head maps each frame `h_t` to `o_t = softmax(W_out · relu(W_g h_t + b_g))`
//! and is trained with per-frame cross-entropy against the speaker gender.
//! The gender loss is mixed with the translation loss as
//! `alpha · l_gr + (1 − alpha) · l_trans`.

mod toy;
mod transducer;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Gender;

pub use toy::{
    build_toy_dataset, load_checkpoint, proxy_gta, save_checkpoint, separable_utterances, sweep,
    train_toy_head, HarnessConfig, SweepCell, SweepReport, SweepRun, ToyUtterance, TraceStep,
    TrainConfig, TrainedHead, CHECKPOINT_FORMAT,
};
pub use transducer::{transducer_loss_standin, Lattice, BLANK};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum GenderLossError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("speaker gender must be male or female")]
    UnknownGender,
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dataset needs utterances of both genders")]
    DegenerateDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

/// Class index of a binary gender label: male 0, female 1.
pub fn class_index(gender: Gender) -> Result<usize, GenderLossError> {
    match gender {
        Gender::Male => Ok(0),
        Gender::Female => Ok(1),
        Gender::Unknown => Err(GenderLossError::UnknownGender),
    }
}

/// Encoder output of one utterance, `T × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub utterance_id: String,
    values: Array2<f64>,
}

impl FrameMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        values: Array2<f64>,
    ) -> Result<Self, GenderLossError> {
        let (t, d) = values.dim();
        if t == 0 || d == 0 {
            return Err(GenderLossError::DimensionMismatch(format!(
                "frame matrix must be non-empty, got {t}x{d}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GenderLossError::NonFinite("frame matrix"));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            values,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenderHead {
    /// `H × D`
    pub w_g: Array2<f64>,
    /// `H`
    pub b_g: Array1<f64>,
    /// `2 × H`
    pub w_out: Array2<f64>,
}

impl GenderHead {
    pub fn new(
        w_g: Array2<f64>,
        b_g: Array1<f64>,
        w_out: Array2<f64>,
    ) -> Result<Self, GenderLossError> {
        let head = Self { w_g, b_g, w_out };
        head.check()?;
        Ok(head)
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_g: Array2::zeros((hidden_dim, input_dim)),
            b_g: Array1::zeros(hidden_dim),
            w_out: Array2::zeros((NUM_CLASSES, hidden_dim)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_g.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_g.nrows()
    }

    fn check(&self) -> Result<(), GenderLossError> {
        let h = self.w_g.nrows();
        if h == 0 || self.w_g.ncols() == 0 {
            return Err(GenderLossError::DimensionMismatch(
                "W_g must be non-empty".into(),
            ));
        }
        if self.b_g.len() != h {
            return Err(GenderLossError::DimensionMismatch(format!(
                "b_g has {} entries, W_g has {h} rows",
                self.b_g.len()
            )));
        }
        if self.w_out.dim() != (NUM_CLASSES, h) {
            let (r, c) = self.w_out.dim();
            return Err(GenderLossError::DimensionMismatch(format!(
                "W_out is {r}x{c}, expected {NUM_CLASSES}x{h}"
            )));
        }
        if self
            .w_g
            .iter()
            .chain(&self.b_g)
            .chain(&self.w_out)
            .any(|v| !v.is_finite())
        {
            return Err(GenderLossError::NonFinite("head parameters"));
        }
        Ok(())
    }

    fn check_input(&self, h: &FrameMatrix) -> Result<(), GenderLossError> {
        self.check()?;
        if h.dim() != self.input_dim() {
            return Err(GenderLossError::DimensionMismatch(format!(
                "frames have {} features, head expects {}",
                h.dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Gradients of the combined loss with respect to each head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub w_g: Array2<f64>,
    pub b_g: Array1<f64>,
    pub w_out: Array2<f64>,
}

impl HeadGradients {
    fn zeros_like(head: &GenderHead) -> Self {
        Self {
            w_g: Array2::zeros(head.w_g.raw_dim()),
            b_g: Array1::zeros(head.b_g.raw_dim()),
            w_out: Array2::zeros(head.w_out.raw_dim()),
        }
    }

    fn scale(&mut self, k: f64) {
        self.w_g *= k;
        self.b_g *= k;
        self.w_out *= k;
    }
}

/// The three loss values of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_gr: f64,
    pub l_trans: f64,
    pub l_comb: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    pub fn new(l_gr: f64, l_trans: f64, alpha: f64) -> Result<Self, GenderLossError> {
        Ok(Self {
            l_gr,
            l_trans,
            l_comb: combined_loss(l_gr, l_trans, alpha)?,
            alpha,
        })
    }
}

fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|x| (x - max).exp());
    let sum = exps.sum();
    exps / sum
}

struct Forward {
    z: Array2<f64>,
    a: Array2<f64>,
    o: Array2<f64>,
}

fn forward(h: &Array2<f64>, head: &GenderHead) -> Forward {
    // Frames are rows, so z = h · W_gᵀ + b_g.
    let z = h.dot(&head.w_g.t()) + &head.b_g;
    let a = z.mapv(|v| v.max(0.0));
    let logits = a.dot(&head.w_out.t());
    let mut o = Array2::zeros(logits.raw_dim());
    for (mut row, l) in o.axis_iter_mut(Axis(0)).zip(logits.axis_iter(Axis(0))) {
        row.assign(&softmax(l));
    }
    Forward { z, a, o }
}

/// Gradients of `Σ_t weights[t] · CE(o_t, labels[t])` over stacked frames.
fn backward(
    h: &Array2<f64>,
    fwd: &Forward,
    labels: &[usize],
    weights: &[f64],
    head: &GenderHead,
) -> HeadGradients {
    // dL/dlogits = o − e_y, zero on frames where the clamp is active.
    let mut d_logits = fwd.o.clone();
    for (t, mut row) in d_logits.axis_iter_mut(Axis(0)).enumerate() {
        let y = labels[t];
        if row[y] < PROB_FLOOR {
            row.fill(0.0);
        } else {
            row[y] -= 1.0;
            row *= weights[t];
        }
    }
    let d_a = d_logits.dot(&head.w_out);
    let d_z = d_a * fwd.z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    HeadGradients {
        w_g: d_z.t().dot(h),
        b_g: d_z.sum_axis(Axis(0)),
        w_out: d_logits.t().dot(&fwd.a),
    }
}

/// Per-frame gender posteriors, `T × 2` (column 0 male, column 1 female).
pub fn head_forward(h: &FrameMatrix, head: &GenderHead) -> Result<Array2<f64>, GenderLossError> {
    head.check_input(h)?;
    Ok(forward(&h.values, head).o)
}

/// `Σ_t −ln max(o_t[g], 1e-12)`, divided by `T` when `length_normalized`.
pub fn gr_loss_with(
    o: &Array2<f64>,
    gender: Gender,
    length_normalized: bool,
) -> Result<f64, GenderLossError> {
    let y = class_index(gender)?;
    if o.ncols() != NUM_CLASSES || o.nrows() == 0 {
        let (r, c) = o.dim();
        return Err(GenderLossError::DimensionMismatch(format!(
            "posteriors are {r}x{c}, expected Tx{NUM_CLASSES} with T >= 1"
        )));
    }
    let sum: f64 = o.column(y).iter().map(|&p| -p.max(PROB_FLOOR).ln()).sum();
    Ok(if length_normalized {
        sum / o.nrows() as f64
    } else {
        sum
    })
}

pub fn gr_loss(o: &Array2<f64>, gender: Gender) -> Result<f64, GenderLossError> {
    gr_loss_with(o, gender, false)
}

pub fn combined_loss(l_gr: f64, l_trans: f64, alpha: f64) -> Result<f64, GenderLossError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GenderLossError::AlphaOutOfRange(alpha));
    }
    // Boundaries return the operand itself so that α ∈ {0, 1} is exact.
    Ok(if alpha == 0.0 {
        l_trans
    } else if alpha == 1.0 {
        l_gr
    } else {
        alpha * l_gr + (1.0 - alpha) * l_trans
    })
}

/// Gradients of `alpha · l_gr` (summed over frames) with respect to the head.
///
/// `l_trans` does not depend on the head, so it only enters through the
/// range check of the combined loss.
pub fn head_gradients(
    h: &FrameMatrix,
    head: &GenderHead,
    gender: Gender,
    alpha: f64,
    l_trans: f64,
) -> Result<HeadGradients, GenderLossError> {
    head_gradients_with(h, head, gender, alpha, l_trans, false)
}

pub fn head_gradients_with(
    h: &FrameMatrix,
    head: &GenderHead,
    gender: Gender,
    alpha: f64,
    l_trans: f64,
    length_normalized: bool,
) -> Result<HeadGradients, GenderLossError> {
    head.check_input(h)?;
    let y = class_index(gender)?;
    combined_loss(0.0, l_trans, alpha)?;
    if alpha == 0.0 {
        return Ok(HeadGradients::zeros_like(head));
    }
    let fwd = forward(&h.values, head);
    let weight = if length_normalized {
        1.0 / h.frames() as f64
    } else {
        1.0
    };
    let labels = vec![y; h.frames()];
    let weights = vec![weight; h.frames()];
    let mut grads = backward(&h.values, &fwd, &labels, &weights, head);
    grads.scale(alpha);
    Ok(grads)
}

/// Share of frames whose argmax is the speaker's class; exact ties count half.
pub fn frame_accuracy(o: &Array2<f64>, gender: Gender) -> Result<f64, GenderLossError> {
    let y = class_index(gender)?;
    let credit: f64 = o
        .axis_iter(Axis(0))
        .map(|row| {
            let (p, q) = (row[y], row[1 - y]);
            if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(credit / o.nrows() as f64)
}
