//! Learning-rate schedule and the context-length curriculum.

/// Effective learning rate at a 1-based step: linear warmup to `base` over
/// `warmup` steps, then linear decay to zero at `total`.
pub fn lr_at(step: usize, total: usize, base: f64, warmup: usize) -> f64 {
    assert!(step >= 1 && step <= total, "step {step} outside 1..={total}");
    let warm = if warmup == 0 {
        1.0
    } else {
        (step as f64 / warmup as f64).min(1.0)
    };
    let decay = if total <= warmup {
        1.0
    } else {
        ((total - step) as f64 / (total - warmup) as f64).clamp(0.0, 1.0)
    };
    base * warm.min(decay)
}

/// Maximum context turns available at a 0-based step: c_max+1 equal phases
/// from 0 up to c_max over the run.
pub fn curriculum_max_context(step: usize, total_steps: usize, c_max: usize) -> usize {
    assert!(step < total_steps, "step {step} outside 0..{total_steps}");
    c_max.min((c_max + 1) * step / total_steps)
}
