//! Minimal reverse-mode differentiable numerics kernel.
//!
//! Everything downstream (world model, policy, critic) trains through this
//! module: dense `f64` tensors, a flat autodiff tape, categorical latents
//! with straight-through gradients, Adam, and a finite-difference checker.

mod cell;
mod check;
mod graph;
mod optim;
mod param;
mod tensor;

pub use cell::{theory_rnn_step, theory_rnn_step_graph, Activation, TheoryCellParams};
pub use check::finite_diff_check;
pub use graph::{Graph, NodeRef};
pub use optim::Adam;
pub use param::{Param, ParamSet};
pub use tensor::Tensor;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("function is not deterministic under fixed parameters (|delta| = {delta})")]
    NonDeterministic { delta: f64 },
    #[error("finite-difference eps {0} outside (0, 1e-2]")]
    InvalidEps(f64),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0}")]
    UnknownParam(String),
}

/// Frobenius norm of a rank-2 tensor.
pub fn frobenius_norm(m: &Tensor) -> Result<f64, KernelError> {
    if m.rank() != 2 {
        return Err(KernelError::ShapeMismatch {
            op: "frobenius_norm".into(),
            detail: format!("expected rank-2, got {:?}", m.shape()),
        });
    }
    Ok(m.frobenius_norm())
}

/// Row-wise categorical sample with straight-through gradients.
///
/// `logits` is `[latents, classes]` (or a row vector of grouped logits);
/// returns the one-hot sample node and the softmax probabilities node.
pub fn categorical_latent(
    g: &mut Graph,
    logits: NodeRef,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeRef, NodeRef), KernelError> {
    let sample = g.st_sample(logits, classes, rng)?;
    let probs = g.group_softmax(logits, classes)?;
    Ok((sample, probs))
}

/// Gaussian-initialized tensor, `N(0, std^2)` per entry.
pub fn randn_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("randn shape")
}

/// Glorot-style init for a `[out, in]` weight matrix.
pub fn glorot_tensor(rng: &mut ChaCha8Rng, out: usize, input: usize) -> Tensor {
    let std = (2.0 / (out + input) as f64).sqrt();
    randn_tensor(rng, &[out, input], std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_identity_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_analytic_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let w = g.constant(Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![-5.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);
    }

    #[test]
    fn linear_random_vs_triple_loop() {
        let mut r = rng(3);
        let x = randn_tensor(&mut r, &[4, 3], 1.0);
        let w = randn_tensor(&mut r, &[5, 3], 1.0);
        let b = randn_tensor(&mut r, &[5], 1.0);
        let mut g = Graph::new();
        let (xn, wn, bn) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(xn, wn, Some(bn)).unwrap();
        for row in 0..4 {
            for o in 0..5 {
                let mut acc = b.get(o);
                for i in 0..3 {
                    acc += w.at(o, i) * x.at(row, i);
                }
                assert!((g.value(y).at(row, o) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_shape_mismatch_names_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let w = g.constant(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let err = g.linear(x, w, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 2]") && msg.contains('3'), "unhelpful message: {msg}");
    }

    #[test]
    fn grad_sum_is_ones_and_square_is_2x() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::vector(vec![3.0]), true).unwrap();
        ps.insert("y", Tensor::vector(vec![1.0, 2.0]), true).unwrap();

        let mut g = Graph::new();
        g.attach(&ps);
        let y = g.p("y");
        let loss = g.sum_all(y);
        let grads = g.grad(loss).unwrap();
        assert_eq!(grads["y"].data(), &[1.0, 1.0]);
        // x is off the computation path: exact zeros
        assert_eq!(grads["x"].data(), &[0.0]);

        let mut g = Graph::new();
        g.attach(&ps);
        let x = g.p("x");
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq);
        let grads = g.grad(loss).unwrap();
        assert_eq!(grads["x"].data(), &[6.0]);
    }

    #[test]
    fn grad_rejects_non_scalar_loss() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let mut g = Graph::new();
        g.attach(&ps);
        let x = g.p("x");
        assert!(matches!(g.grad(x), Err(KernelError::NonScalarLoss { .. })));
    }

    #[test]
    fn categorical_uniform_logits_give_uniform_probs() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::matrix(2, 4, vec![0.0; 8]).unwrap());
        let (_, probs) = categorical_latent(&mut g, logits, 4, &mut rng(0)).unwrap();
        for &p in g.value(probs).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn categorical_saturated_logit_dominates() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::matrix(1, 3, vec![0.0, 1e6, 0.0]).unwrap());
        let (sample, probs) = categorical_latent(&mut g, logits, 3, &mut rng(1)).unwrap();
        assert!(g.value(probs).get(1) > 1.0 - 1e-12);
        assert_eq!(g.value(sample).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn categorical_sample_frequencies_match_probs() {
        // 1e5 draws, 3-sigma binomial bounds
        let logits = Tensor::matrix(1, 4, vec![0.3, -0.5, 1.0, 0.0]).unwrap();
        let mut r = rng(42);
        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut probs_seen = Tensor::zeros(&[1, 4]);
        for _ in 0..n {
            let mut g = Graph::new();
            let l = g.constant(logits.clone());
            let (sample, probs) = categorical_latent(&mut g, l, 4, &mut r).unwrap();
            probs_seen = g.value(probs).clone();
            let idx = g.value(sample).data().iter().position(|&v| v == 1.0).unwrap();
            counts[idx] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = probs_seen.get(i);
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "class {i}: freq {freq} vs p {p}");
        }
    }

    #[test]
    fn straight_through_gradient_equals_softmax_gradient() {
        // backward through the sample matches backward through the probs
        let logits = Tensor::matrix(2, 3, vec![0.2, -0.4, 0.9, 0.0, 0.1, -0.2]).unwrap();
        let target = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();

        let mut ps = ParamSet::new();
        ps.insert("logits", logits, true).unwrap();

        let grads_via_sample = {
            let mut g = Graph::new();
            g.attach(&ps);
            let l = g.p("logits");
            let s = g.st_sample(l, 3, &mut rng(7)).unwrap();
            let t = g.constant(target.clone());
            let prod = g.mul(s, t).unwrap();
            let loss = g.sum_all(prod);
            g.grad(loss).unwrap()
        };
        let grads_via_probs = {
            let mut g = Graph::new();
            g.attach(&ps);
            let l = g.p("logits");
            let p = g.group_softmax(l, 3).unwrap();
            let t = g.constant(target.clone());
            let prod = g.mul(p, t).unwrap();
            let loss = g.sum_all(prod);
            g.grad(loss).unwrap()
        };
        for (a, b) in grads_via_sample["logits"].data().iter().zip(grads_via_probs["logits"].data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_ops_pass_gradcheck_across_seeds() {
        for seed in 0..25u64 {
            let mut r = rng(seed);
            let mut ps = ParamSet::new();
            ps.insert("w1", glorot_tensor(&mut r, 4, 3), true).unwrap();
            ps.insert("b1", randn_tensor(&mut r, &[4], 0.3), true).unwrap();
            ps.insert("w2", glorot_tensor(&mut r, 2, 4), true).unwrap();
            ps.insert("x", randn_tensor(&mut r, &[5, 3], 1.0), true).unwrap();
            let err = finite_diff_check(
                |g| {
                    let x = g.p("x");
                    let h = g.linear(x, g.p("w1"), Some(g.p("b1")))?;
                    let h = g.tanh(h);
                    let y = g.linear(h, g.p("w2"), None)?;
                    let y = g.sigmoid(y);
                    let sp = g.softplus(y);
                    let sm = g.group_softmax(sp, 2)?;
                    let rowsum = g.sum_cols(sm);
                    let clipped = g.max_const(rowsum, 0.9);
                    Ok(g.mean_all(clipped))
                },
                &ps,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut r1 = rng(5);
        let mut r2 = rng(5);
        let run = |r: &mut ChaCha8Rng| {
            let mut g = Graph::new();
            let l = g.constant(Tensor::matrix(2, 4, vec![0.3, 0.1, -0.2, 0.9, 0.0, 0.5, 0.5, -1.0]).unwrap());
            let (s, p) = categorical_latent(&mut g, l, 4, r).unwrap();
            (g.value(s).clone(), g.value(p).clone())
        };
        let (s1, p1) = run(&mut r1);
        let (s2, p2) = run(&mut r2);
        assert_eq!(s1.data(), s2.data());
        assert_eq!(p1.data(), p2.data());
    }

    #[test]
    fn convex_comb_and_lin_comb_backward() {
        use std::sync::Arc;
        let mut ps = ParamSet::new();
        ps.insert("coeffs", Tensor::vector(vec![0.5, -0.3]), true).unwrap();
        ps.insert("weights", Tensor::vector(vec![0.25, 0.75]), true).unwrap();
        let basis = Arc::new(vec![
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
        ]);
        let base = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = finite_diff_check(
            |g| {
                let eff = g.lin_comb(g.p("coeffs"), base.clone(), basis.clone())?;
                let i1 = g.constant(Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap());
                let mixed = g.convex_comb(g.p("weights"), &[eff, i1])?;
                let sq = g.mul(mixed, mixed)?;
                Ok(g.sum_all(sq))
            },
            &ps,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }
}
