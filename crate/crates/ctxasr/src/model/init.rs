//! Tensor layout and initialization.

use super::{ModelConfig, ModelParams, TensorMap};
use crate::rng::{stream, tag};
use gradtape::Real;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

const INIT_STD: f64 = 0.02;

/// The single authority on which tensors exist and their shapes, given a
/// config. Checkpoint loading validates against this map.
pub fn expected_shapes(config: &ModelConfig) -> BTreeMap<String, (usize, usize)> {
    let mut m = BTreeMap::new();
    let (f, c, d, v) = (
        config.feature_dim,
        config.enc_channels,
        config.dim,
        config.vocab_size,
    );
    let ff = config.ff_mult * d;

    // strided conv kernels stored as one tensor per tap
    for tap in 0..3 {
        m.insert(format!("enc.conv1.w{tap}"), (f, c));
        m.insert(format!("enc.conv2.w{tap}"), (c, c));
    }
    m.insert("enc.conv1.b".into(), (1, c));
    m.insert("enc.conv2.b".into(), (1, c));
    m.insert("enc.proj.w".into(), (c, d));
    m.insert("enc.proj.b".into(), (1, d));
    m.insert("enc.silence".into(), (1, f));

    m.insert("lm.tok".into(), (v, d));
    m.insert("lm.pos".into(), (config.max_len, d));
    for b in 0..config.blocks {
        for w in ["wq", "wk", "wv", "wo"] {
            m.insert(format!("lm.{b}.attn.{w}"), (d, d));
        }
        for g in ["ln1", "ln2"] {
            m.insert(format!("lm.{b}.{g}.g"), (1, d));
            m.insert(format!("lm.{b}.{g}.b"), (1, d));
        }
        m.insert(format!("lm.{b}.ff.w1"), (d, ff));
        m.insert(format!("lm.{b}.ff.b1"), (1, ff));
        m.insert(format!("lm.{b}.ff.w2"), (ff, d));
        m.insert(format!("lm.{b}.ff.b2"), (1, d));
    }
    m.insert("lm.lnf.g".into(), (1, d));
    m.insert("lm.lnf.b".into(), (1, d));
    m.insert("lm.head".into(), (d, v));

    if config.has_compressor {
        for i in 1..=config.c_max {
            m.insert(format!("comp.q.{i}"), (config.k_latent, d));
        }
        for w in ["wq", "wk", "wv", "wo"] {
            m.insert(format!("comp.attn.{w}"), (d, d));
        }
        if config.compressor_ff {
            m.insert("comp.ln.g".into(), (1, d));
            m.insert("comp.ln.b".into(), (1, d));
            m.insert("comp.ff.w1".into(), (d, 2 * d));
            m.insert("comp.ff.b1".into(), (1, 2 * d));
            m.insert("comp.ff.w2".into(), (2 * d, d));
            m.insert("comp.ff.b2".into(), (1, d));
        }
    }
    if config.has_adapters {
        for b in 0..config.blocks {
            for proj in ["wq", "wv"] {
                m.insert(format!("adapt.{b}.{proj}.down"), (d, config.adapter_rank));
                m.insert(format!("adapt.{b}.{proj}.up"), (config.adapter_rank, d));
            }
        }
    }
    m
}

fn init_tensor<T: Real>(name: &str, shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<T> {
    let ones = || Array2::from_elem(shape, T::one());
    let zeros = || Array2::zeros(shape);
    if name.ends_with(".g") {
        return ones();
    }
    // positional table: trainable, but sinusoidal at the start so relative
    // offsets are linear maps and alignment attention can form quickly
    if name == "lm.pos" {
        let (max_len, d) = shape;
        let scale = 0.1;
        return Array2::from_shape_fn((max_len, d), |(p, i)| {
            let freq = (10_000f64).powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = p as f64 * freq;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            T::from_f64(scale * v)
        });
    }
    // biases, adapter up-projections, and the silence buffer start at zero;
    // silence is overwritten from the lexicon right after init
    if name.ends_with(".b")
        || name.ends_with(".b1")
        || name.ends_with(".b2")
        || name.ends_with(".up")
        || name == "enc.silence"
    {
        return zeros();
    }
    // latent queries act as embeddings; unit scale keeps their attention
    // patterns distinguishable from the start
    let std = if name.starts_with("comp.q.") {
        1.0
    } else if name.starts_with("enc.") {
        // fan-in scaling keeps audio token magnitudes comparable to the
        // frame magnitudes instead of collapsing through three 0.02 layers
        (2.0 / (3.0 * shape.0 as f64)).sqrt()
    } else {
        INIT_STD
    };
    let normal = Normal::new(0.0f64, std).unwrap();
    Array2::from_shape_fn(shape, |_| T::from_f64(normal.sample(rng)))
}

fn init_group<T: Real>(
    tensors: &mut TensorMap<T>,
    shapes: &BTreeMap<String, (usize, usize)>,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) {
    for (name, &shape) in shapes.iter().filter(|(n, _)| n.starts_with(prefix)) {
        tensors.insert(name.clone(), init_tensor(name, shape, rng));
    }
}

/// Fresh encoder + LM. `silence` is the lexicon's silence vector, kept as a
/// buffer for short-input padding.
pub fn new_model<T: Real>(config: &ModelConfig, seed: u64, silence: &[f32]) -> ModelParams<T> {
    assert!(
        !config.has_compressor && !config.has_adapters,
        "attach components explicitly"
    );
    config.validate().expect("valid model config");
    assert_eq!(silence.len(), config.feature_dim, "silence width");
    let shapes = expected_shapes(config);
    let mut rng = stream(&[seed, tag::MODEL_INIT, 0]);
    let mut tensors = TensorMap::new();
    init_group(&mut tensors, &shapes, "", &mut rng);
    let buf = Array2::from_shape_fn((1, silence.len()), |(_, j)| T::from_f64(silence[j] as f64));
    tensors.insert("enc.silence".into(), buf);
    ModelParams {
        config: config.clone(),
        tensors,
    }
}

/// Adds the latent compressor (turn-indexed queries plus shared attention).
pub fn attach_compressor<T: Real>(params: &mut ModelParams<T>, seed: u64) {
    assert!(!params.config.has_compressor, "compressor already attached");
    params.config.has_compressor = true;
    let shapes = expected_shapes(&params.config);
    let mut rng = stream(&[seed, tag::MODEL_INIT, 1]);
    init_group(&mut params.tensors, &shapes, "comp.", &mut rng);
}

/// Adds rank-r adapters on every block's query and value projections.
/// Up-projections start at zero, so the adapted model initially matches the
/// base exactly.
pub fn attach_adapters<T: Real>(params: &mut ModelParams<T>, seed: u64) {
    assert!(!params.config.has_adapters, "adapters already attached");
    params.config.has_adapters = true;
    let shapes = expected_shapes(&params.config);
    let mut rng = stream(&[seed, tag::MODEL_INIT, 2]);
    init_group(&mut params.tensors, &shapes, "adapt.", &mut rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 4,
            enc_channels: 6,
            dim: 8,
            blocks: 2,
            heads: 2,
            ff_mult: 2,
            max_len: 64,
            vocab_size: 11,
            k_latent: 3,
            c_max: 4,
            adapter_rank: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_matches_expected_shapes_exactly() {
        let cfg = tiny_config();
        let silence = vec![0.5f32; 4];
        let mut params: ModelParams<f32> = new_model(&cfg, 3, &silence);
        attach_compressor(&mut params, 3);
        attach_adapters(&mut params, 3);
        let shapes = expected_shapes(&params.config);
        assert_eq!(params.tensors.len(), shapes.len());
        for (name, &(r, c)) in &shapes {
            assert_eq!(params.get(name).dim(), (r, c), "{name}");
        }
        assert_eq!(params.get("enc.silence")[[0, 0]], 0.5);
        assert_eq!(params.get("lm.0.ln1.g")[[0, 3]], 1.0);
        assert_eq!(params.get("adapt.0.wq.up")[[0, 0]], 0.0);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = tiny_config();
        let silence = vec![0.0f32; 4];
        let a: ModelParams<f32> = new_model(&cfg, 9, &silence);
        let b: ModelParams<f32> = new_model(&cfg, 9, &silence);
        let c: ModelParams<f32> = new_model(&cfg, 10, &silence);
        assert_eq!(a.tensors, b.tensors);
        assert_ne!(a.get("lm.tok"), c.get("lm.tok"));
    }
}
