//! A small RNN-transducer loss used as the translation-loss stand-in.

use ndarray::Array3;

use super::GenderLossError;

/// Index of the blank symbol in the last lattice axis.
pub const BLANK: usize = 0;

/// Output log-probabilities `lp[t, u, k]` for `T` frames, `U + 1` label
/// positions and `V + 1` symbols (blank at index 0, labels 1..=V).
pub type Lattice = Array3<f64>;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Negative log-likelihood of `labels` summed over all monotone alignments.
///
/// From lattice node `(t, u)` a path either emits blank and moves to
/// `(t + 1, u)` or emits `labels[u]` and moves to `(t, u + 1)`; it ends by
/// emitting blank at `(T − 1, U)`. The value is non-negative whenever every
/// `lp[t, u, ·]` is a normalized log-distribution.
pub fn transducer_loss_standin(
    log_probs: &Lattice,
    labels: &[usize],
) -> Result<f64, GenderLossError> {
    let (t_len, u_pos, symbols) = log_probs.dim();
    let u_len = labels.len();
    if t_len == 0 {
        return Err(GenderLossError::DimensionMismatch(
            "lattice has no frames".into(),
        ));
    }
    if u_pos != u_len + 1 {
        return Err(GenderLossError::DimensionMismatch(format!(
            "lattice has {u_pos} label positions, {u_len} labels need {}",
            u_len + 1
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&k| k == BLANK || k >= symbols) {
        return Err(GenderLossError::DimensionMismatch(format!(
            "label {bad} outside 1..{symbols}"
        )));
    }
    if log_probs.iter().any(|v| !v.is_finite()) {
        return Err(GenderLossError::NonFinite("lattice"));
    }

    let mut alpha = vec![vec![f64::NEG_INFINITY; u_len + 1]; t_len];
    alpha[0][0] = 0.0;
    for t in 0..t_len {
        for u in 0..=u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t > 0 {
                acc = log_add(acc, alpha[t - 1][u] + log_probs[[t - 1, u, BLANK]]);
            }
            if u > 0 {
                acc = log_add(acc, alpha[t][u - 1] + log_probs[[t, u - 1, labels[u - 1]]]);
            }
            alpha[t][u] = acc;
        }
    }
    Ok(-(alpha[t_len - 1][u_len] + log_probs[[t_len - 1, u_len, BLANK]]))
}
