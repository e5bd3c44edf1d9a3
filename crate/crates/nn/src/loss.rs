use ndarray::{Array2, ArrayView2};

use crate::activation::{log_softmax, softmax};
use crate::NnError;

/// Mean categorical cross-entropy over the rows of `logits`, fused with the
/// softmax so the returned gradient is taken with respect to the logits.
pub fn softmax_cross_entropy(logits: &ArrayView2<'_, f32>, targets: &[usize]) -> (f32, Array2<f32>) {
    let n = logits.nrows();
    assert_eq!(n, targets.len(), "one target per row");
    let logp = log_softmax(logits);
    let mut grad = softmax(logits);
    let mut loss = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        loss -= logp[[i, t]] as f64;
        grad[[i, t]] -= 1.0;
    }
    grad.mapv_inplace(|g| g / n as f32);
    ((loss / n as f64) as f32, grad)
}

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

/// Minimum number of frames a CTC path needs to emit `target`
/// (one frame per symbol plus a separating blank between equal neighbours).
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Connectionist temporal classification loss for one sequence.
///
/// `logits` is `(T, C)` and unnormalised; `target` holds label indices that
/// must not contain `blank`. Returns `-ln p(target | logits)` and its
/// gradient with respect to the logits, computed with log-space
/// forward–backward recursions.
pub fn ctc_loss(logits: &ArrayView2<'_, f32>, target: &[usize], blank: usize) -> Result<(f32, Array2<f32>), NnError> {
    let (frames, classes) = logits.dim();
    if let Some(&bad) = target.iter().find(|&&c| c == blank || c >= classes) {
        return Err(NnError::InvalidLabel { label: bad, classes });
    }
    let needed = ctc_min_frames(target);
    if frames < needed {
        return Err(NnError::CtcInfeasible { frames, needed });
    }
    let logp = log_softmax(logits);
    let lp = |t: usize, c: usize| logp[[t, c]] as f64;

    // extended label sequence: blank, l1, blank, l2, ..., blank
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(target.iter().flat_map(|&c| [c, blank]))
        .collect();
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg; s_len]; frames];
    alpha[0][0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[0][1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if skip_ok(s) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            if acc != neg {
                alpha[t][s] = acc + lp(t, ext[s]);
            }
        }
    }
    let last = frames - 1;
    let mut log_likelihood = alpha[last][s_len - 1];
    if s_len > 1 {
        log_likelihood = log_add(log_likelihood, alpha[last][s_len - 2]);
    }
    if !log_likelihood.is_finite() {
        return Err(NnError::CtcInfeasible { frames, needed });
    }

    // beta excludes the emission at its own frame
    let mut beta = vec![vec![neg; s_len]; frames];
    beta[last][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last][s_len - 2] = 0.0;
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s] + lp(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, beta[t + 1][s + 1] + lp(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = log_add(acc, beta[t + 1][s + 2] + lp(t + 1, ext[s + 2]));
            }
            beta[t][s] = acc;
        }
    }

    let mut grad = softmax(logits);
    for t in 0..frames {
        for s in 0..s_len {
            let occ = alpha[t][s] + beta[t][s] - log_likelihood;
            if occ > -80.0 {
                grad[[t, ext[s]]] -= occ.exp() as f32;
            }
        }
    }
    Ok((-log_likelihood as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_classes() {
        let logits = Array2::<f32>::zeros((3, 10));
        let (loss, grad) = softmax_cross_entropy(&logits.view(), &[0, 4, 9]);
        assert!((loss - (10f32).ln()).abs() < 1e-6);
        // every row of the gradient sums to zero
        for row in grad.outer_iter() {
            assert!(row.sum().abs() < 1e-6);
        }
    }

    #[test]
    fn ctc_rejects_too_few_frames_for_repeats() {
        // "00" needs a blank between the zeros: 3 frames
        let logits = Array2::<f32>::zeros((2, 3));
        let err = ctc_loss(&logits.view(), &[0, 0], 2).unwrap_err();
        assert!(matches!(err, NnError::CtcInfeasible { frames: 2, needed: 3 }));
    }

    #[test]
    fn ctc_single_frame_single_label() {
        let logits = array![[0.0f32, 0.0]];
        let (loss, _) = ctc_loss(&logits.view(), &[0], 1).unwrap();
        assert!((loss - 2f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn ctc_empty_target_is_all_blank_path() {
        let logits = Array2::<f32>::zeros((4, 3));
        let (loss, _) = ctc_loss(&logits.view(), &[], 2).unwrap();
        assert!((loss - 4.0 * 3f32.ln()).abs() < 1e-5);
    }
}
