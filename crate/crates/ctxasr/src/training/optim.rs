//! AdamW with decoupled weight decay, bias correction, and global-norm
//! clipping, plus tensor hashing for freeze contracts.

use super::{lr_at, Regime, TrainConfig, TrainError, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::model::{ModelParams, TensorGrads, TensorMap};
use ndarray::Array2;
use sha2::{Digest, Sha256};

/// Moment accumulators exist exactly for the trainable tensors.
#[derive(Debug)]
pub struct AdamState {
    pub step: usize,
    pub m: TensorMap<f32>,
    pub v: TensorMap<f32>,
}

impl AdamState {
    pub fn new(params: &ModelParams<f32>, trainable: &[String]) -> Self {
        let zeros = |name: &String| {
            let t = params.get(name);
            (name.clone(), Array2::<f32>::zeros(t.dim()))
        };
        AdamState {
            step: 0,
            m: trainable.iter().map(zeros).collect(),
            v: trainable.iter().map(zeros).collect(),
        }
    }
}

/// The tensors a regime optimizes. Buffers never train; stage 1 trains the
/// compressor alone; stage 2 the compressor plus adapters; the full-model
/// regimes train everything else that exists.
pub fn trainable_names(params: &ModelParams<f32>, regime: Regime) -> Vec<String> {
    params
        .tensors
        .keys()
        .filter(|name| {
            if ModelParams::<f32>::is_buffer(name) {
                return false;
            }
            let comp = name.starts_with("comp.");
            let adapt = name.starts_with("adapt.");
            match regime {
                Regime::Single | Regime::RawMultiturn => !comp && !adapt,
                Regime::Stage1 => comp,
                Regime::Stage2 => comp || adapt,
            }
        })
        .cloned()
        .collect()
}

/// SHA-256 over every tensor whose name satisfies `keep`, in map order.
pub fn tensor_hash(params: &ModelParams<f32>, keep: impl Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    for (name, t) in &params.tensors {
        if !keep(name) {
            continue;
        }
        h.update(name.as_bytes());
        h.update((t.nrows() as u64).to_le_bytes());
        h.update((t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of everything outside the trainable set.
pub fn frozen_hash(params: &ModelParams<f32>, trainable: &[String]) -> String {
    tensor_hash(params, |name| !trainable.iter().any(|t| t == name))
}

/// One AdamW update over the trainable set. Gradients are averaged batch
/// gradients; tensors the batch never touched step with a zero gradient.
/// The whole-update global norm is clipped to `max_grad_norm` first.
pub fn optimizer_step(
    params: &mut ModelParams<f32>,
    grads: &TensorGrads<f32>,
    trainable: &[String],
    state: &mut AdamState,
    config: &TrainConfig,
    total_steps: usize,
) -> Result<f64, TrainError> {
    let step = state.step + 1; // 1-based for schedule and bias correction

    let mut sq_sum = 0.0f64;
    for name in trainable {
        if let Some(g) = grads.get(name) {
            for &v in g.iter() {
                if !v.is_finite() {
                    return Err(TrainError::NonFiniteGradient {
                        tensor: name.clone(),
                        step,
                    });
                }
                sq_sum += (v as f64) * (v as f64);
            }
        }
    }
    let norm = sq_sum.sqrt();
    let clip = if norm > config.max_grad_norm {
        (config.max_grad_norm / norm) as f32
    } else {
        1.0
    };

    let lr = lr_at(step, total_steps, config.learning_rate, config.warmup_steps);
    let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
    let bc1 = 1.0 - (ADAM_BETA1).powi(step as i32);
    let bc2 = 1.0 - (ADAM_BETA2).powi(step as i32);
    let (lr_f, wd, eps) = (lr as f32, config.weight_decay as f32, ADAM_EPS as f32);

    for name in trainable {
        let m = state.m.get_mut(name).expect("moment exists");
        let v = state.v.get_mut(name).expect("moment exists");
        let w = params.tensors.get_mut(name).expect("trainable exists");
        let zero = Array2::<f32>::zeros(w.dim());
        let g = grads.get(name).unwrap_or(&zero);
        for ((wi, (mi, vi)), gi) in w.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.iter())
        {
            let gc = gi * clip;
            *mi = b1 * *mi + (1.0 - b1) * gc;
            *vi = b2 * *vi + (1.0 - b2) * gc * gc;
            let m_hat = *mi / bc1 as f32;
            let v_hat = *vi / bc2 as f32;
            *wi -= lr_f * wd * *wi;
            *wi -= lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step = step;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{new_model, ModelConfig};
    use crate::oracles::adamw_scalar_trajectory;

    fn tiny_params() -> ModelParams<f32> {
        let cfg = ModelConfig {
            feature_dim: 2,
            enc_channels: 2,
            dim: 4,
            blocks: 1,
            heads: 1,
            ff_mult: 1,
            max_len: 8,
            vocab_size: 5,
            k_latent: 2,
            c_max: 2,
            adapter_rank: 1,
            ..ModelConfig::default()
        };
        new_model(&cfg, 1, &[0.0, 0.0])
    }

    fn config() -> TrainConfig {
        let mut c = TrainConfig::for_regime(Regime::Single, 1);
        c.warmup_steps = 2;
        c
    }

    #[test]
    fn clipping_scales_all_gradients() {
        let mut params = tiny_params();
        // single trainable tensor with known norm
        let trainable = vec!["lm.lnf.b".to_string()];
        let mut state = AdamState::new(&params, &trainable);
        let mut grads = TensorGrads::new();
        grads.insert(
            "lm.lnf.b".into(),
            Array2::from_shape_vec((1, 4), vec![3.0, 4.0, 0.0, 0.0]).unwrap(),
        );
        // norm 5, cap 1 => scale 0.2; moments then see (0.6, 0.8, 0, 0)
        let before = params.get("lm.lnf.b").clone();
        let mut cfg = config();
        cfg.weight_decay = 0.0;
        optimizer_step(&mut params, &grads, &trainable, &mut state, &cfg, 100).unwrap();
        let m = state.m.get("lm.lnf.b").unwrap();
        assert!((m[[0, 0]] - 0.1 * 0.6).abs() < 1e-7);
        assert!((m[[0, 1]] - 0.1 * 0.8).abs() < 1e-7);
        assert_ne!(before, *params.get("lm.lnf.b"));
    }

    #[test]
    fn frozen_tensors_stay_bit_identical() {
        let mut params = tiny_params();
        let trainable = vec!["lm.head".to_string()];
        let frozen_before = frozen_hash(&params, &trainable);
        let mut state = AdamState::new(&params, &trainable);
        let mut grads = TensorGrads::new();
        grads.insert(
            "lm.head".into(),
            Array2::from_elem(params.get("lm.head").dim(), 0.01),
        );
        // a gradient for a frozen tensor must be ignored
        grads.insert(
            "lm.tok".into(),
            Array2::from_elem(params.get("lm.tok").dim(), 9.0),
        );
        optimizer_step(&mut params, &grads, &trainable, &mut state, &config(), 10).unwrap();
        assert_eq!(frozen_before, frozen_hash(&params, &trainable));
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = tiny_params();
        let trainable = vec!["lm.head".to_string()];
        let mut state = AdamState::new(&params, &trainable);
        let mut grads = TensorGrads::new();
        let mut g = Array2::from_elem(params.get("lm.head").dim(), 0.0f32);
        g[[0, 0]] = f32::NAN;
        grads.insert("lm.head".into(), g);
        match optimizer_step(&mut params, &grads, &trainable, &mut state, &config(), 10) {
            Err(TrainError::NonFiniteGradient { tensor, step }) => {
                assert_eq!(tensor, "lm.head");
                assert_eq!(step, 1);
            }
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn two_step_trajectory_matches_scalar_reference() {
        let mut params = tiny_params();
        let trainable = vec!["lm.lnf.b".to_string()];
        let mut state = AdamState::new(&params, &trainable);
        let mut cfg = config();
        cfg.learning_rate = 0.01;
        cfg.weight_decay = 0.01;
        cfg.warmup_steps = 2;
        let total = 4;
        let w0 = params.get("lm.lnf.b")[[0, 0]] as f64;

        let grad_seq = [0.3f64, -0.2];
        let mut lrs = Vec::new();
        for (i, g) in grad_seq.iter().enumerate() {
            let mut grads = TensorGrads::new();
            let mut arr = Array2::<f32>::zeros((1, 4));
            arr[[0, 0]] = *g as f32;
            grads.insert("lm.lnf.b".into(), arr);
            let lr =
                optimizer_step(&mut params, &grads, &trainable, &mut state, &cfg, total).unwrap();
            lrs.push(lr);
            assert_eq!(state.step, i + 1);
        }
        // independent scalar recomputation of the same two updates.
        // norms are < 1 so clipping is a no-op.
        let expect = adamw_scalar_trajectory(
            w0,
            &grad_seq,
            &lrs,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
            0.01,
        );
        let got = params.get("lm.lnf.b")[[0, 0]] as f64;
        assert!(
            (got - expect[1]).abs() < 1e-7,
            "trajectory {got} vs reference {:?}",
            expect
        );
    }

    #[test]
    fn trainable_sets_per_regime() {
        let mut params = tiny_params();
        crate::model::attach_compressor(&mut params, 1);
        crate::model::attach_adapters(&mut params, 1);
        let single = trainable_names(&params, Regime::Single);
        assert!(single.iter().all(|n| !n.starts_with("comp.") && !n.starts_with("adapt.")));
        assert!(!single.iter().any(|n| n == "enc.silence"));
        let s1 = trainable_names(&params, Regime::Stage1);
        assert!(s1.iter().all(|n| n.starts_with("comp.")));
        let s2 = trainable_names(&params, Regime::Stage2);
        assert!(s2.iter().all(|n| n.starts_with("comp.") || n.starts_with("adapt.")));
        assert!(s2.len() > s1.len());
    }
}
