//! Small fp64 neural-network toolkit: tensors, a reverse-mode tape, layers,
//! Adam and binary checkpoints.

mod adam;
mod checkpoint;
mod encoding;
mod graph;
pub(crate) mod kernels;
mod layers;
mod params;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, restore_into, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use encoding::{attention, attention_weights, layer_norm_rows, sinusoidal_encoding, softmax};
pub use graph::{Graph, InputGrads, Var, LAYER_NORM_EPS};
pub use layers::{LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use params::{Param, ParamId, ParameterSet};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    fn random_tensor(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Compare every parameter gradient against central differences.
    fn check_grads(params: &mut ParameterSet, loss_fn: &dyn Fn(&mut Graph, &ParameterSet) -> Var) {
        params.zero_grad();
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, params);
        g.backward(loss, params).unwrap();
        let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
        let h = 1e-5;
        let ids: Vec<ParamId> = params.ids().collect();
        for (pi, id) in ids.into_iter().enumerate() {
            for j in 0..params.value(id).len() {
                let orig = params.value(id).data()[j];
                let eval = |v: f64, params: &mut ParameterSet| {
                    params.get_mut(id).value.data_mut()[j] = v;
                    let mut g = Graph::new();
                    let l = loss_fn(&mut g, params);
                    g.value(l).item()
                };
                let fp = eval(orig + h, params);
                let fm = eval(orig - h, params);
                params.get_mut(id).value.data_mut()[j] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic[pi][j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    err <= 1e-4,
                    "{}[{j}]: analytic {a} numeric {numeric}",
                    params.get(id).name
                );
            }
        }
    }

    #[test]
    fn quadratic_gradient_is_twice_weights() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Tensor::row_vector(vec![0.5, -1.5, 2.0]));
        let mut g = Graph::new();
        let w = g.param(&ps, id);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum_all(sq);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(id).data(), &[1.0, -3.0, 4.0]);
        assert!(matches!(g.backward(loss, &mut ps), Err(crate::Error::GraphConsumed)));
    }

    #[test]
    fn zero_input_gives_zero_weight_grad() {
        let mut rng = stream(1, Stream::Init, 0);
        let mut ps = ParameterSet::new();
        let lin = Linear::new(&mut ps, "l", 3, 2, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4, 3]));
        let y = lin.forward(&mut g, &ps, x).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss, &mut ps).unwrap();
        assert!(ps.grad(ps.find("l.w").unwrap()).data().iter().all(|&v| v == 0.0));
        assert_eq!(ps.grad(ps.find("l.b").unwrap()).data(), &[4.0, 4.0]);
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        let mut rng = stream(7, Stream::Init, 0);
        let mut ps = ParameterSet::new();
        let mlp = Mlp::new(&mut ps, "m", &[3, 5, 2], &mut rng);
        let x = random_tensor(4, 3, &mut rng);
        let t = random_tensor(4, 2, &mut rng);
        check_grads(&mut ps, &|g, ps| {
            let xi = g.constant(x.clone());
            let ti = g.constant(t.clone());
            let y = mlp.forward(g, ps, xi).unwrap();
            g.mse(y, ti).unwrap()
        });
    }

    #[test]
    fn attention_block_matches_finite_differences() {
        let mut rng = stream(11, Stream::Init, 0);
        let mut ps = ParameterSet::new();
        let attn = MultiHeadAttention::new(&mut ps, "a", 4, 2, &mut rng);
        let ln = LayerNorm::new(&mut ps, "ln", 4);
        // Perturb the affine parts so their gradients are non-trivial.
        for p in ps.iter_mut() {
            for v in p.value.data_mut() {
                *v += 0.1 * rng.random_range(-1.0..1.0);
            }
        }
        let x = random_tensor(6, 4, &mut rng);
        let t = random_tensor(3, 4, &mut rng);
        check_grads(&mut ps, &|g, ps| {
            let xi = g.constant(x.clone());
            let a = attn.forward(g, ps, xi, 3).unwrap();
            let r = g.add(xi, a).unwrap();
            let n = ln.forward(g, ps, r).unwrap();
            let gathered = g.gather_rows(n, vec![0, 3, 1, 4, 2, 5]).unwrap();
            let pooled = g.group_mean(gathered, 2).unwrap();
            let ti = g.constant(t.clone());
            g.mse(pooled, ti).unwrap()
        });
    }

    #[test]
    fn select_concat_scale_gradients() {
        let mut rng = stream(3, Stream::Init, 0);
        let mut ps = ParameterSet::new();
        let a = ps.add("a", random_tensor(3, 2, &mut rng));
        let b = ps.add("b", random_tensor(3, 1, &mut rng));
        check_grads(&mut ps, &|g, ps| {
            let av = g.param(ps, a);
            let bv = g.param(ps, b);
            let c = g.concat_cols(av, bv).unwrap();
            let r = g.relu(c);
            let s = g.scale(r, -1.7);
            let sel = g.select_cols(s, vec![2, 0, 1]).unwrap();
            let sq = g.mul(sel, sel).unwrap();
            g.sum_all(sq)
        });
    }

    #[test]
    fn input_gradients_are_reported() {
        let mut ps = ParameterSet::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(vec![1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss, &mut ps).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn layer_norm_worked_example() {
        let out = layer_norm_rows(&[vec![1.0, 2.0, 3.0]], LAYER_NORM_EPS);
        let expect = 1.0 / (2.0f64 / 3.0 + LAYER_NORM_EPS).sqrt();
        assert!((out[0][0] + expect).abs() < 1e-12);
        assert!(out[0][1].abs() < 1e-12);
        assert!((out[0][2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn graph_attention_agrees_with_reference() {
        let mut rng = stream(5, Stream::Init, 0);
        let q = random_tensor(3, 2, &mut rng);
        let k = random_tensor(3, 2, &mut rng);
        let v = random_tensor(3, 2, &mut rng);
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let out = g.attention(qv, kv, vv, 3, 1).unwrap();
        let reference = attention(&q.to_rows(), &k.to_rows(), &v.to_rows());
        let got = g.value(out).to_rows();
        for (a, b) in got.iter().flatten().zip(reference.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let probs = g.attention_probs(out).unwrap();
        for row in probs.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
