//! Central finite-difference verification of every tape op at f64.

use gradtape::{NodeId, Tape};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-7;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        // Box-Muller is plenty here
        let u1: f64 = rng.gen_range(1e-9..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Builds the graph twice per coordinate perturbation and compares the
/// analytic leaf gradient against (f(x+h) - f(x-h)) / 2h.
fn check<F>(leaves: Vec<Array2<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let eval = |inputs: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = build(&mut tape, &ids);
        tape.value(out)[[0, 0]]
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = build(&mut tape, &ids);
    let grads = tape.backward(out);

    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(ids[li])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(leaf.dim()));
        for r in 0..leaf.nrows() {
            for c in 0..leaf.ncols() {
                let mut plus = leaves.clone();
                plus[li][[r, c]] += H;
                let mut minus = leaves.clone();
                minus[li][[r, c]] -= H;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
                let a = analytic[[r, c]];
                let denom = a.abs().max(fd.abs()).max(1.0);
                assert!(
                    ((a - fd) / denom).abs() < TOL,
                    "leaf {li} [{r},{c}]: analytic {a} vs fd {fd}"
                );
            }
        }
    }
}

#[test]
fn matmul_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, 3, 4);
    let b = randn(&mut rng, 4, 2);
    check(vec![a, b], |t, ids| {
        let c = t.matmul(ids[0], ids[1]);
        let g = t.gelu(c);
        t.sum_all(g)
    });
}

#[test]
fn matmul_nt() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn(&mut rng, 3, 4);
    let b = randn(&mut rng, 5, 4);
    check(vec![a, b], |t, ids| {
        let c = t.matmul_nt(ids[0], ids[1]);
        t.sum_all(c)
    });
}

#[test]
fn add_mul_scale_addrow() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, 3, 4);
    let b = randn(&mut rng, 3, 4);
    let row = randn(&mut rng, 1, 4);
    check(vec![a, b, row], |t, ids| {
        let s = t.add(ids[0], ids[1]);
        let m = t.mul(s, ids[0]);
        let sc = t.scale(m, 0.37);
        let ar = t.add_row(sc, ids[2]);
        let g = t.gelu(ar);
        t.sum_all(g)
    });
}

#[test]
fn layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, 4, 6);
    let gain = randn(&mut rng, 1, 6);
    let bias = randn(&mut rng, 1, 6);
    check(vec![x, gain, bias], |t, ids| {
        let ln = t.layer_norm(ids[0], ids[1], ids[2]);
        let g = t.gelu(ln);
        t.sum_all(g)
    });
}

#[test]
fn gather_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let src = randn(&mut rng, 5, 3);
    let other = randn(&mut rng, 2, 3);
    check(vec![src, other], |t, ids| {
        let g = t.gather_rows(ids[0], &[4, 0, 0, 2]);
        let c = t.concat_rows(&[g, ids[1]]);
        let act = t.gelu(c);
        t.sum_all(act)
    });
}

#[test]
fn attention_cross() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = randn(&mut rng, 2, 4);
    let k = randn(&mut rng, 5, 4);
    let v = randn(&mut rng, 5, 4);
    check(vec![q, k, v], |t, ids| {
        let o = t.attention(ids[0], ids[1], ids[2], 2, false);
        let g = t.gelu(o);
        t.sum_all(g)
    });
}

#[test]
fn attention_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = randn(&mut rng, 4, 4);
    let k = randn(&mut rng, 4, 4);
    let v = randn(&mut rng, 4, 4);
    check(vec![q, k, v], |t, ids| {
        let o = t.attention(ids[0], ids[1], ids[2], 2, true);
        let g = t.gelu(o);
        t.sum_all(g)
    });
}

#[test]
fn cross_entropy_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = randn(&mut rng, 4, 6);
    let targets = [1usize, 5, 0, 3];
    let mask = [true, false, true, true];
    check(vec![logits], move |t, ids| {
        t.cross_entropy(ids[0], &targets, &mask)
    });
}

#[test]
fn composite_transformer_like_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&mut rng, 5, 8);
    let wq = randn(&mut rng, 8, 8);
    let wk = randn(&mut rng, 8, 8);
    let wv = randn(&mut rng, 8, 8);
    let wo = randn(&mut rng, 8, 8);
    let gain = randn(&mut rng, 1, 8);
    let bias = randn(&mut rng, 1, 8);
    let targets = [2usize, 0, 1, 7, 4];
    let mask = [true, true, false, true, true];
    check(vec![x, wq, wk, wv, wo, gain, bias], move |t, ids| {
        let h = t.layer_norm(ids[0], ids[5], ids[6]);
        let q = t.matmul(h, ids[1]);
        let k = t.matmul(h, ids[2]);
        let v = t.matmul(h, ids[3]);
        let a = t.attention(q, k, v, 2, true);
        let o = t.matmul(a, ids[4]);
        let res = t.add(ids[0], o);
        t.cross_entropy(res, &targets, &mask)
    });
}
