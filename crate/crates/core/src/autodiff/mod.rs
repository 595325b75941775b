//! Reverse-mode automatic differentiation over dense `f64` tensors, plus the
//! optimizer, initializers and checkpoint container the model needs.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod optim;
mod params;
mod tensor;

pub use graph::{softmax, Graph, Var};
pub use optim::{AdamW, AdamWConfig, GroupSettings};
pub use params::{ParamGroup, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::gradcheck::{check_gradients, GradCheckConfig};
    use super::*;
    use crate::error::Error;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    fn random_store(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in shapes {
            store
                .add(*name, ParamGroup::Other, init::normal(shape, 1.0, &mut rng).unwrap())
                .unwrap();
        }
        store
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = Graph::new();
        let i = g.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(m(2, 2, &[2.0, 3.0, 4.0, 5.0]));
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).values(), &[2.0, 3.0, 4.0, 5.0]);

        let a = g.constant(m(1, 2, &[1.0, 2.0]));
        let z = g.constant(m(2, 1, &[0.0, 0.0]));
        let c = g.matmul(a, z).unwrap();
        assert_eq!(g.value(c).values(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut store = random_store(&[("a", vec![3, 4]), ("b", vec![4, 2])], 5);
        let (a, b) = (store.id("a").unwrap(), store.id("b").unwrap());
        let weights = m(3, 2, &[0.3, -1.2, 0.7, 2.0, -0.4, 1.1]);
        let cfg = GradCheckConfig {
            tolerance: 1e-6,
            ..Default::default()
        };
        let report = check_gradients(&mut store, cfg, |g, s| {
            let (av, bv) = (g.param(s, a), g.param(s, b));
            let c = g.matmul(av, bv)?;
            let w = g.constant(weights.clone());
            let p = g.mul(c, w)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn concat_vectors_and_empty() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::vector(vec![1.0, 2.0]));
        let b = g.variable(Tensor::vector(vec![3.0]));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(c).values(), &[1.0, 2.0, 3.0]);

        let e = g.constant(Tensor::vector(vec![]));
        let same = g.concat(&[a, e], 0).unwrap();
        assert_eq!(g.value(same), g.value(a));

        let s = g.sum(c);
        let mut store = ParamStore::new();
        g.backward(s, &mut store).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0]);
        assert!(g.grad(e).is_none());
    }

    #[test]
    fn concat_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(matches!(g.concat(&[a, b], 1), Err(Error::Dimension { .. })));
        assert!(g.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn concat_axis1_gradients() {
        let mut store = random_store(&[("a", vec![2, 3]), ("b", vec![2, 1])], 8);
        let (a, b) = (store.id("a").unwrap(), store.id("b").unwrap());
        let w = Tensor::matrix(4, 1, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let report = check_gradients(&mut store, GradCheckConfig::default(), |g, s| {
            let x = g.param(s, a);
            let y = g.param(s, b);
            let c = g.concat(&[x, y], 1)?;
            let t = g.tanh(c);
            let wv = g.constant(w.clone());
            let out = g.matmul(t, wv)?;
            Ok(g.sum(out))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn softmax_nll_values() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let loss = g.softmax_nll(l, &[0]).unwrap();
        assert!((g.value(loss).item() - 3f64.ln()).abs() < 1e-12);

        let l = g.constant(Tensor::vector(vec![1000.0, 0.0]));
        let loss = g.softmax_nll(l, &[0]).unwrap();
        let v = g.value(loss).item();
        assert!(v.is_finite() && v.abs() < 1e-12);

        let l = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.softmax_nll(l, &[2]), Err(Error::Index { .. })));
    }

    #[test]
    fn softmax_nll_gradient_is_softmax_minus_onehot() {
        let logits = vec![0.3, -1.7, 2.2, 0.05];
        let mut g = Graph::new();
        let l = g.variable(Tensor::vector(logits.clone()));
        let loss = g.softmax_nll(l, &[2]).unwrap();
        g.backward(loss, &mut ParamStore::new()).unwrap();
        let grad = g.grad(l).unwrap().to_vec();

        // numerical oracle
        let nll = |x: &[f64]| {
            let mx = x.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = x.iter().map(|v| (v - mx).exp()).sum();
            mx + z.ln() - x[2]
        };
        let h = 1e-5;
        for i in 0..4 {
            let mut p = logits.clone();
            p[i] += h;
            let mut q = logits.clone();
            q[i] -= h;
            let fd = (nll(&p) - nll(&q)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
        }
        let sm = softmax(&logits);
        for i in 0..4 {
            let onehot = if i == 2 { 1.0 } else { 0.0 };
            assert!((grad[i] - (sm[i] - onehot)).abs() < 1e-15);
        }
    }

    #[test]
    fn elementwise_and_pool_ops_pass_gradcheck() {
        let mut store = random_store(&[("x", vec![4, 3]), ("y", vec![4, 3]), ("bias", vec![3])], 21);
        let (x, y, bias) = (
            store.id("x").unwrap(),
            store.id("y").unwrap(),
            store.id("bias").unwrap(),
        );
        let report = check_gradients(&mut store, GradCheckConfig::default(), |g, s| {
            let xv = g.param(s, x);
            let yv = g.param(s, y);
            let bv = g.param(s, bias);
            let a = g.mul(xv, yv)?;
            let a = g.add_row(a, bv)?;
            let a = g.sigmoid(a);
            let r = g.relu(yv);
            let sum = g.add(a, r)?;
            let mx = g.max_pool(sum, &[(0, 2), (1, 1), (2, 3)])?;
            let mean = g.mean_pool(xv, &[(0, 3), (2, 3), (1, 2)])?;
            let rows = g.rows(xv, &[3, 3, 0])?;
            let cols = g.slice_cols(rows, 1, 2)?;
            let pooled = g.concat(&[mx, mean], 1)?;
            let pooled = g.scale(pooled, 0.7);
            let t = g.tanh(pooled);
            let s1 = g.sum(t);
            let c2 = g.mul(cols, cols)?;
            let s2 = g.sum(c2);
            g.add(s1, s2)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn gather_param_gradient_touches_only_looked_up_rows() {
        let mut store = random_store(&[("table", vec![5, 2])], 2);
        let t = store.id("table").unwrap();
        let mut g = Graph::new();
        let rows = g.gather_param(&store, t, &[3, 1, 3]).unwrap();
        let sq = g.mul(rows, rows).unwrap();
        let loss = g.sum(sq);
        store.zero_grad();
        g.backward(loss, &mut store).unwrap();
        let grad = store.get(t).grad().unwrap();
        let vals = store.value(t).values();
        for r in 0..5 {
            let count = match r {
                3 => 2.0,
                1 => 1.0,
                _ => 0.0,
            };
            for c in 0..2 {
                assert_eq!(grad[r * 2 + c], 2.0 * count * vals[r * 2 + c]);
            }
        }
    }

    #[test]
    fn detached_inputs_never_receive_gradients() {
        let mut store = random_store(&[("w", vec![2, 2])], 4);
        let w = store.id("w").unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let d = g.detach(wv);
        let c = g.constant(Tensor::zeros(vec![2, 2]));
        let prod = g.mul(d, c).unwrap();
        let loss = g.sum(prod);
        g.backward(loss, &mut store).unwrap();
        assert!(g.grad(d).is_none());
        assert!(g.grad(c).is_none());
        assert!(store.get(w).grad().is_none());
    }

    #[test]
    fn dropout_is_deterministic_and_identity_in_eval() {
        let x = Tensor::matrix(3, 4, (0..12).map(|v| v as f64 + 1.0).collect()).unwrap();
        let run = |seed| {
            let mut g = Graph::training(seed);
            let v = g.constant(x.clone());
            let d = g.dropout(v, 0.5).unwrap();
            g.value(d).clone()
        };
        assert_eq!(run(9), run(9));
        let dropped = run(9);
        assert!(dropped
            .values()
            .iter()
            .zip(x.values())
            .all(|(d, v)| *d == 0.0 || (*d - 2.0 * v).abs() < 1e-12));

        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let d = g.dropout(v, 0.5).unwrap();
        assert_eq!(g.value(d), &x);

        let mut g = Graph::training(1);
        let v = g.constant(x.clone());
        let d = g.dropout(v, 0.0).unwrap();
        assert_eq!(g.value(d), &x);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let v = g.variable(Tensor::zeros(vec![2]));
        assert!(g.backward(v, &mut ParamStore::new()).is_err());
    }
}
