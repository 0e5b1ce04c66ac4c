//! Central finite-difference checks of [`Graph::backward`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, ParamGrads, ParamId, ParamStore, Tensor, TensorError, Var};

/// Which scalars to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Selection {
    /// Up to `n` random entries of every input and every parameter.
    PerTensor(usize),
    /// `n` entries drawn uniformly from all parameters together.
    Params(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub selection: Selection,
    pub seed: u64,
    /// Denominator floor of the relative error, so exact zeros compare cleanly.
    pub floor: f64,
    /// Seed of the dropout masks, which stay fixed across evaluations.
    pub dropout_seed: Option<u64>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            selection: Selection::PerTensor(24),
            seed: 0,
            floor: 1e-6,
            dropout_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    /// Location of the largest error, e.g. `param block0.attn.q.w[17]`.
    pub worst: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Input(usize),
    Param(usize),
}

fn analytic<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    dropout_seed: Option<u64>,
    build: &F,
) -> Result<(Vec<Vec<f64>>, ParamGrads<f64>), TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = match dropout_seed {
        Some(s) => Graph::training(store, ChaCha8Rng::seed_from_u64(s)),
        None => Graph::with_params(store),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let input_grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .wrt(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; t.len()])
        })
        .collect();
    let mut pg = ParamGrads::zeros_like(store);
    grads.accumulate(store, &mut pg)?;
    Ok((input_grads, pg))
}

fn value_of<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    dropout_seed: Option<u64>,
    build: &F,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = match dropout_seed {
        Some(s) => Graph::training(store, ChaCha8Rng::seed_from_u64(s)),
        None => Graph::with_params(store),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    Ok(g.value(root).item())
}

/// Compares analytic gradients of the scalar built by `build` against
/// central differences. `build` receives the inputs as graph leaves.
pub fn check_gradients<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheck,
    build: F,
) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let (input_grads, param_grads) = analytic(store, inputs, cfg.dropout_seed, &build)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut targets: Vec<(Target, usize)> = Vec::new();
    match cfg.selection {
        Selection::PerTensor(n) => {
            for (i, t) in inputs.iter().enumerate() {
                for j in index::sample(&mut rng, t.len(), n.min(t.len())) {
                    targets.push((Target::Input(i), j));
                }
            }
            for (p, (_, t)) in store.iter().enumerate() {
                for j in index::sample(&mut rng, t.len(), n.min(t.len())) {
                    targets.push((Target::Param(p), j));
                }
            }
        }
        Selection::Params(n) => {
            let sizes: Vec<usize> = store.iter().map(|(_, t)| t.len()).collect();
            let total: usize = sizes.iter().sum();
            let mut picks: Vec<usize> = index::sample(&mut rng, total, n.min(total)).into_vec();
            picks.sort_unstable();
            for flat in picks {
                let mut rest = flat;
                for (p, &len) in sizes.iter().enumerate() {
                    if rest < len {
                        targets.push((Target::Param(p), rest));
                        break;
                    }
                    rest -= len;
                }
            }
        }
    }

    let mut report = GradReport {
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    let mut store = store.clone();
    let mut inputs = inputs.to_vec();
    for (target, j) in targets {
        let analytic = match target {
            Target::Input(i) => input_grads[i][j],
            Target::Param(p) => param_grads.grads[p][j],
        };
        let original = *slot(&mut store, &mut inputs, target, j);
        *slot(&mut store, &mut inputs, target, j) = original + cfg.eps;
        let up = value_of(&store, &inputs, cfg.dropout_seed, &build)?;
        *slot(&mut store, &mut inputs, target, j) = original - cfg.eps;
        let down = value_of(&store, &inputs, cfg.dropout_seed, &build)?;
        *slot(&mut store, &mut inputs, target, j) = original;
        let numeric = (up - down) / (2.0 * cfg.eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        if rel > report.max_rel || report.worst.is_empty() {
            report.max_rel = report.max_rel.max(rel);
            report.worst = match target {
                Target::Input(i) => format!("input {i}[{j}]: analytic {analytic:e}, numeric {numeric:e}"),
                Target::Param(p) => format!(
                    "param {}[{j}]: analytic {analytic:e}, numeric {numeric:e}",
                    store.name(ParamId(p))
                ),
            };
        }
    }
    Ok(report)
}

fn slot<'a>(
    store: &'a mut ParamStore<f64>,
    inputs: &'a mut [Tensor<f64>],
    target: Target,
    j: usize,
) -> &'a mut f64 {
    match target {
        Target::Input(i) => &mut inputs[i].data[j],
        Target::Param(p) => &mut store.get_mut(ParamId(p)).data[j],
    }
}

/// `sum(y * r)` for a fixed pseudo-random `r`, turning any tensor into a
/// scalar whose gradient reaches every entry of `y`.
pub fn random_projection(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let n = shape.iter().product();
    let r = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let r = g.constant(r);
    let prod = g.mul(y, r)?;
    Ok(g.sum(prod))
}
