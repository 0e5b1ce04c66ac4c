use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomxfer_core::gradcheck::{check_gradients, random_projection, GradCheck, Selection};
use roomxfer_core::nn::{
    cross_entropy, loss_dispatch, BlockDims, Conv2d, FeedForward, LayerNorm, Linear, LossKind,
    MultiHeadAttention, TransformerBlock,
};
use roomxfer_core::tensor::{Graph, ParamStore, Tensor, TensorError, Var};
use roomxfer_core::transfer::{SignatureEncoder, TransferArch, TransferModel};

const TOL: f64 = 1e-3;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_grads<F>(name: &str, store: &ParamStore<f64>, inputs: &[Tensor<f64>], cfg: GradCheck, build: F)
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let report = check_gradients(store, inputs, &cfg, build).unwrap();
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(report.max_rel < TOL, "{name}: max rel {:.3e} at {}", report.max_rel, report.worst);
}

fn op_check<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let inputs: Vec<_> = shapes.iter().enumerate().map(|(i, s)| rand_tensor(s, 100 + i as u64)).collect();
    let store = ParamStore::new();
    assert_grads(name, &store, &inputs, GradCheck::default(), |g, v| {
        let y = build(g, v)?;
        if g.shape(y).is_empty() {
            Ok(y)
        } else {
            random_projection(g, y, 7)
        }
    });
}

#[test]
fn elementwise_ops() {
    op_check("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]));
    op_check("sub", &[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    op_check("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
    op_check("square", &[&[5]], |g, v| g.mul(v[0], v[0]));
    op_check("add_broadcast", &[&[2, 3, 4], &[3, 4]], |g, v| g.add_broadcast(v[0], v[1]));
    op_check("scale", &[&[6]], |g, v| Ok(g.scale(v[0], 2.5)));
    op_check("add_scalar", &[&[6]], |g, v| Ok(g.add_scalar(v[0], -0.3)));
    op_check("relu", &[&[4, 5]], |g, v| Ok(g.relu(v[0])));
    op_check("gelu", &[&[4, 5]], |g, v| Ok(g.gelu(v[0])));
    op_check("abs", &[&[4, 5]], |g, v| Ok(g.abs(v[0])));
}

#[test]
fn structural_ops() {
    op_check("matmul", &[&[3, 5], &[5, 2]], |g, v| g.matmul(v[0], v[1]));
    op_check("matmul_t", &[&[3, 5], &[4, 5]], |g, v| g.matmul_t(v[0], v[1]));
    op_check("transpose", &[&[3, 5]], |g, v| g.transpose(v[0]));
    op_check("concat0", &[&[2, 3], &[4, 3]], |g, v| g.concat(&[v[0], v[1]], 0));
    op_check("concat1", &[&[2, 3], &[2, 5]], |g, v| g.concat(&[v[0], v[1]], 1));
    op_check("slice0", &[&[5, 3]], |g, v| g.slice(v[0], 0, 1, 3));
    op_check("slice1", &[&[2, 6, 3]], |g, v| g.slice(v[0], 1, 2, 3));
    op_check("reshape", &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4]));
    op_check("gap", &[&[3, 4, 5]], |g, v| g.global_avg_pool(v[0]));
    op_check("max_axis0", &[&[4, 3]], |g, v| g.max_axis(v[0], 0));
    op_check("max_axis1", &[&[4, 3]], |g, v| g.max_axis(v[0], 1));
    op_check("sum", &[&[7]], |g, v| Ok(g.sum(v[0])));
    op_check("mean", &[&[7]], |g, v| Ok(g.mean(v[0])));
}

#[test]
fn normalizing_ops() {
    op_check("softmax0", &[&[4, 3]], |g, v| g.softmax(v[0], 0));
    op_check("softmax1", &[&[4, 3]], |g, v| g.softmax(v[0], 1));
    op_check("log_softmax", &[&[4, 3]], |g, v| g.log_softmax(v[0], 1));
    op_check("layer_norm", &[&[3, 6], &[6], &[6]], |g, v| g.layer_norm(v[0], v[1], v[2]));
    op_check("conv2d", &[&[2, 7, 6], &[3, 2, 3, 3], &[3]], |g, v| g.conv2d(v[0], v[1], v[2], 2, 1));
    op_check("conv2d_1x1", &[&[4, 3, 3], &[2, 4, 1, 1], &[2]], |g, v| g.conv2d(v[0], v[1], v[2], 1, 0));
}

#[test]
fn dropout_with_fixed_mask() {
    let store = ParamStore::new();
    let cfg = GradCheck {
        dropout_seed: Some(5),
        ..GradCheck::default()
    };
    assert_grads("dropout", &store, &[rand_tensor(&[5, 6], 1)], cfg, |g, v| {
        let y = g.dropout(v[0], 0.3);
        random_projection(g, y, 2)
    });
}

#[test]
fn losses() {
    for kind in [LossKind::MinMax, LossKind::Mae, LossKind::Mse] {
        op_check(kind.name(), &[&[6, 5], &[6, 5]], |g, v| loss_dispatch(g, kind, v[0], v[1]));
    }
    op_check("cross_entropy", &[&[2]], |g, v| cross_entropy(g, v[0], 1));
}

#[test]
fn layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let linear = Linear::new(&mut store, "lin", 5, 4, &mut rng);
    let conv = Conv2d::new(&mut store, "conv", 2, 3, 3, 2, 1, &mut rng);
    let norm = LayerNorm::new(&mut store, "norm", 5);
    let attn = MultiHeadAttention::new(&mut store, "attn", 5, 2, 3, &mut rng);
    let ffn = FeedForward::new(&mut store, "ffn", 5, 8, &mut rng);
    let dims = BlockDims {
        model_dim: 5,
        heads: 2,
        head_dim: 3,
        ffn_dim: 7,
        dropout: 0.1,
    };
    let block = TransformerBlock::new(&mut store, "block", dims, &mut rng);
    let encoder = SignatureEncoder::new(&mut store, "enc", [2, 3, 2, 3], 5, &mut rng);
    // randomize gains and biases so they are not a special point
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    }
    let tokens = rand_tensor(&[4, 5], 11);
    let image = rand_tensor(&[2, 9, 8], 12);
    let spec = rand_tensor(&[1, 17, 19], 13);

    let cases: Vec<(&str, Tensor<f64>, Box<dyn Fn(&mut Graph<'_, f64>, Var) -> Result<Var, TensorError>>)> = vec![
        ("linear", tokens.clone(), Box::new(|g, x| linear.forward(g, x))),
        ("linear_vector", rand_tensor(&[5], 14), Box::new(|g, x| linear.forward(g, x))),
        ("conv2d", image.clone(), Box::new(|g, x| conv.forward(g, x))),
        ("layer_norm", tokens.clone(), Box::new(|g, x| norm.forward(g, x))),
        ("attention", tokens.clone(), Box::new(|g, x| attn.forward(g, x))),
        ("feed_forward", tokens.clone(), Box::new(|g, x| ffn.forward(g, x))),
        ("transformer_block", tokens.clone(), Box::new(|g, x| block.forward(g, x))),
        ("signature_encoder", spec, Box::new(|g, x| encoder.forward(g, x))),
    ];
    for (name, input, f) in &cases {
        for dropout_seed in [None, Some(3)] {
            let cfg = GradCheck {
                dropout_seed,
                selection: Selection::PerTensor(12),
                ..GradCheck::default()
            };
            assert_grads(name, &store, std::slice::from_ref(input), cfg, |g, v| {
                let y = f(g, v[0])?;
                random_projection(g, y, 21)
            });
        }
    }
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.input(rand_tensor(&[3, 4], 1));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[1.0; 12]);
}

#[test]
fn minmax_gradient_is_one_hot_at_argmax() {
    let mut g = Graph::<f64>::new();
    let target = g.constant(Tensor::zeros(&[1, 5]));
    let pred = g.input(Tensor::new(vec![1, 5], vec![0.1, -0.2, 0.9, -0.4, 0.3]).unwrap());
    let loss = loss_dispatch(&mut g, LossKind::MinMax, target, pred).unwrap();
    assert!((g.value(loss).item() - 0.9).abs() < 1e-15);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(pred).unwrap(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::<f64>::new();
    let x = g.input(rand_tensor(&[2], 1));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarRoot(_))));
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let used = Linear::new(&mut store, "used", 3, 2, &mut rng);
    let _unused = Linear::new(&mut store, "unused", 3, 2, &mut rng);
    let mut g = Graph::with_params(&store);
    let x = g.input(rand_tensor(&[3], 2));
    let y = used.forward(&mut g, x).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let mut pg = roomxfer_core::tensor::ParamGrads::zeros_like(&store);
    grads.accumulate(&store, &mut pg).unwrap();
    assert!(pg.grads[0].iter().any(|&v| v != 0.0));
    assert!(pg.grads[2].iter().chain(&pg.grads[3]).all(|&v| v == 0.0));
}

#[test]
fn transfer_pipeline_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let arch = TransferArch {
        dropout: 0.0,
        ..TransferArch::default()
    };
    let model = TransferModel::<f64>::new(arch, &mut rng).unwrap();
    let grid = |rng: &mut ChaCha8Rng| {
        Tensor::new(
            vec![arch.frames, arch.bins],
            (0..arch.frames * arch.bins).map(|_| rng.random_range(-11.0..1.0)).collect(),
        )
        .unwrap()
    };
    let (input, target) = (grid(&mut rng), grid(&mut rng));
    let mut cond = grid(&mut rng);
    cond.shape = vec![1, arch.bins, arch.frames];
    let cfg = GradCheck {
        selection: Selection::Params(50),
        seed: 3,
        ..GradCheck::default()
    };
    let report = check_gradients(&model.params, &[], &cfg, |g, _| {
        let x = g.constant(input.clone());
        let c = g.constant(cond.clone());
        let t = g.constant(target.clone());
        let vars = model.forward(g, x, c)?;
        loss_dispatch(g, LossKind::MinMax, t, vars.predicted)
    })
    .unwrap();
    assert_eq!(report.checked, 50);
    assert!(report.max_rel < 1e-2, "max rel {:.3e} at {}", report.max_rel, report.worst);
}
