//! Independent reference implementations used to cross-check the real ones.
//!
//! Nothing here shares code with the paths it verifies: the edit distance is
//! a cost-only rolling-row DP (no backtrace), the gradient check perturbs
//! parameters one coordinate at a time through the full pipeline, and the
//! optimizer reference steps a single scalar weight from first principles.
//! Tests and the experiment report's property suite both call into this
//! module.

use crate::corpus::Lexicon;
use crate::model::{Forward, ModelParams};
use crate::promptkit::PromptSequence;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Word-level Levenshtein cost with O(min(m,n)) memory and no backtrace.
pub fn edit_distance_cost<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut curr = vec![0usize; short.len() + 1];
    for i in 1..=long.len() {
        curr[0] = i;
        for j in 1..=short.len() {
            let cost = usize::from(long[i - 1].as_ref() != short[j - 1].as_ref());
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// Classifies one frame against the character basis by Euclidean distance.
pub fn nearest_char(frame: &[f32], lexicon: &Lexicon) -> char {
    let mut best = ' ';
    let mut best_d = f32::INFINITY;
    for (&c, basis) in &lexicon.char_basis {
        let d: f32 = frame
            .iter()
            .zip(basis)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Reference AdamW trajectory for one scalar weight: decoupled weight decay,
/// bias-corrected moments, per-step learning rates supplied by the caller.
/// Gradient clipping is the caller's business; pass post-clip gradients.
#[allow(clippy::too_many_arguments)]
pub fn adamw_scalar_trajectory(
    w0: f64,
    grads: &[f64],
    lrs: &[f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Vec<f64> {
    assert_eq!(grads.len(), lrs.len());
    let mut w = w0;
    let mut m = 0.0;
    let mut v = 0.0;
    let mut out = Vec::with_capacity(grads.len());
    for (step, (&g, &lr)) in grads.iter().zip(lrs).enumerate() {
        let t = (step + 1) as i32;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1.powi(t));
        let v_hat = v / (1.0 - beta2.powi(t));
        w -= lr * weight_decay * w;
        w -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(w);
    }
    out
}

/// Outcome of a finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_tensor: String,
}

/// Central finite differences through the whole pipeline (frames -> loss)
/// at f64, for `coords_per_tensor` random coordinates of every parameter
/// the example touches. Relative error uses max(|analytic|, |numeric|, 1)
/// as the denominator.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    prompt: &PromptSequence,
    audio: &[&Array2<f32>],
    coords_per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport {
    let loss_of = |p: &ModelParams<f64>| -> f64 {
        let mut f = Forward::new(p);
        let l = f.example_loss(prompt, audio).expect("pipeline runs");
        f.tape.value(l)[[0, 0]]
    };

    let mut f = Forward::new(params);
    let root = f.example_loss(prompt, audio).expect("pipeline runs");
    let (_, grads) = f.grads(root);

    let h = 1e-5;
    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst_tensor: String::new(),
    };
    for (name, grad) in &grads {
        if ModelParams::<f64>::is_buffer(name) {
            continue;
        }
        let (rows, cols) = grad.dim();
        for _ in 0..coords_per_tensor {
            let r = rng.gen_range(0..rows);
            let c = rng.gen_range(0..cols);
            let mut plus = params.clone();
            plus.tensors.get_mut(name).unwrap()[[r, c]] += h;
            let mut minus = params.clone();
            minus.tensors.get_mut(name).unwrap()[[r, c]] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = grad[[r, c]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_tensor = format!("{name}[{r},{c}]");
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_distance_agrees_on_basics() {
        let w = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        assert_eq!(edit_distance_cost(&w("a b c"), &w("a b c")), 0);
        assert_eq!(edit_distance_cost(&w("the cat sat"), &w("the cat sat down")), 1);
        assert_eq!(edit_distance_cost(&w("a b"), &w("x")), 2);
        assert_eq!(edit_distance_cost(&w(""), &w("x y z")), 3);
    }

    #[test]
    fn adamw_reference_first_step_sanity() {
        // with zero decay and one step, the update is -lr * sign-ish term
        let t = adamw_scalar_trajectory(1.0, &[0.5], &[0.1], 0.9, 0.999, 1e-8, 0.0);
        // m_hat = 0.5, v_hat = 0.25, update ~= 0.1 * 0.5/(0.5 + eps)
        assert!((t[0] - 0.9).abs() < 1e-7);
    }
}
