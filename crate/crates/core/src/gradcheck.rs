//! Finite-difference verification of reverse-mode gradients.
//!
//! Everything here runs in `f64`: central differences with step 1e-5 lose
//! roughly half the mantissa, which still leaves ~1e-10 headroom against
//! the 1e-4 acceptance tolerance.

use crate::graph::{Graph, GraphError, NodeId};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Builds a scalar-valued computation from leaf nodes. Called repeatedly
/// with perturbed inputs, so it must be a pure function of them.
pub type BuildFn<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, GraphError> + 'a;

fn eval(build: &BuildFn, inputs: &[Tensor<f64>]) -> Result<f64, GraphError> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let root = build(&mut g, &ids)?;
    Ok(g.value(root).data()[0])
}

/// Max over all input elements of |analytic − central| / max(1, |central|).
pub fn finite_diff_check(
    build: &BuildFn,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<f64, GraphError> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let root = build(&mut g, &ids)?;
    let grads = g.backward(root)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.tensor(ids[i], input.shape());
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let fp = eval(build, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let fm = eval(build, &work)?;
            work[i].data_mut()[j] = orig;
            let central = (fp - fm) / (2.0 * eps);
            let rel = (analytic.data()[j] - central).abs() / central.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// One named entry of the verification suite.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tol
    }
}

pub(crate) fn rand_tensor(
    rng: &mut impl rand::Rng,
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Gradient checks for every differentiable primitive, randomized shapes.
/// Returns one entry per primitive; `total cases >= 100` across the suite.
pub fn primitive_suite(seed: u64) -> Vec<SuiteCase> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut run = |name: &str,
                   reps: usize,
                   rng: &mut rand_chacha::ChaCha8Rng,
                   mk: &mut dyn FnMut(
        &mut rand_chacha::ChaCha8Rng,
    )
        -> (Vec<Tensor<f64>>, Box<BuildFn<'static>>)| {
        let mut worst = 0.0f64;
        for _ in 0..reps {
            let (inputs, build) = mk(rng);
            let err = finite_diff_check(&build, &inputs, DEFAULT_EPS)
                .unwrap_or(f64::INFINITY);
            worst = worst.max(err);
        }
        out.push(SuiteCase {
            name: name.to_string(),
            cases: reps,
            max_rel_err: worst,
            tol: DEFAULT_TOL,
        });
    };

    run("add_broadcast", 8, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..5);
        let n = rng.gen_range(1..6);
        let form = rng.gen_range(0..4);
        let b_shape = match form {
            0 => vec![m, n],
            1 => vec![n],
            2 => vec![m, 1],
            _ => vec![1],
        };
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let b = rand_tensor(rng, b_shape, -2.0, 2.0);
        let swap: bool = rng.gen();
        (
            vec![a, b],
            Box::new(move |g, ids| {
                let r = if swap {
                    g.add(ids[1], ids[0])?
                } else {
                    g.add(ids[0], ids[1])?
                };
                Ok(g.sum_all(r))
            }),
        )
    });

    run("sub", 4, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..4);
        let n = rng.gen_range(1..5);
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let b = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        (
            vec![a, b],
            Box::new(|g, ids| {
                let r = g.sub(ids[0], ids[1])?;
                let r2 = g.mul(r, r)?;
                Ok(g.sum_all(r2))
            }),
        )
    });

    run("mul_broadcast", 8, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..5);
        let n = rng.gen_range(1..6);
        let form = rng.gen_range(0..4);
        let b_shape = match form {
            0 => vec![m, n],
            1 => vec![n],
            2 => vec![m, 1],
            _ => vec![1],
        };
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let b = rand_tensor(rng, b_shape, -2.0, 2.0);
        (
            vec![a, b],
            Box::new(|g, ids| {
                let r = g.mul(ids[0], ids[1])?;
                Ok(g.sum_all(r))
            }),
        )
    });

    run("scale", 4, &mut rng, &mut |rng| {
        let a = rand_tensor(rng, vec![3, 3], -2.0, 2.0);
        let k: f64 = rng.gen_range(-3.0..3.0);
        (
            vec![a],
            Box::new(move |g, ids| {
                let r = g.scale(ids[0], k);
                let r2 = g.mul(r, r)?;
                Ok(g.sum_all(r2))
            }),
        )
    });

    run("matmul", 8, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..5);
        let k = rng.gen_range(1..5);
        let n = rng.gen_range(1..5);
        let a = rand_tensor(rng, vec![m, k], -1.5, 1.5);
        let b = rand_tensor(rng, vec![k, n], -1.5, 1.5);
        (
            vec![a, b],
            Box::new(|g, ids| {
                let r = g.matmul(ids[0], ids[1])?;
                let r2 = g.mul(r, r)?;
                Ok(g.sum_all(r2))
            }),
        )
    });

    run("transpose_reshape_slice_concat", 8, &mut rng, &mut |rng| {
        let m = rng.gen_range(2..5);
        let n = rng.gen_range(2..6);
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let b = rand_tensor(rng, vec![m, 2], -2.0, 2.0);
        (
            vec![a, b],
            Box::new(move |g, ids| {
                let t = g.transpose2(ids[0])?;
                let back = g.transpose2(t)?;
                let cat = g.concat_cols(&[back, ids[1]])?;
                let sl = g.slice_cols(cat, 1, n + 1)?;
                let rows = g.slice_rows(sl, 0, m.min(2))?;
                let rs = g.reshape(rows, vec![m.min(2) * n, 1])?;
                let sq = g.mul(rs, rs)?;
                Ok(g.sum_all(sq))
            }),
        )
    });

    run("gather_rows", 6, &mut rng, &mut |rng| {
        let v = rng.gen_range(3..8);
        let d = rng.gen_range(2..5);
        let k = rng.gen_range(1..6);
        let idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..v)).collect();
        let table = rand_tensor(rng, vec![v, d], -2.0, 2.0);
        (
            vec![table],
            Box::new(move |g, ids| {
                let r = g.gather_rows(ids[0], &idx)?;
                let sq = g.mul(r, r)?;
                Ok(g.sum_all(sq))
            }),
        )
    });

    run("patchify", 6, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..4);
        let p = rng.gen_range(1..5);
        let l = p + rng.gen_range(0..8);
        let s = rng.gen_range(1..4);
        let a = rand_tensor(rng, vec![m, l], -2.0, 2.0);
        (
            vec![a],
            Box::new(move |g, ids| {
                let r = g.patchify(ids[0], p, s)?;
                let sq = g.mul(r, r)?;
                Ok(g.sum_all(sq))
            }),
        )
    });

    run("conv1d_grouped", 8, &mut rng, &mut |rng| {
        let groups = [1usize, 2, 3][rng.gen_range(0..3)];
        let cpg = rng.gen_range(1..3);
        let opg = rng.gen_range(1..3);
        let c_in = groups * cpg;
        let c_out = groups * opg;
        let k = [1usize, 3, 5][rng.gen_range(0..3)];
        let l = rng.gen_range(k..k + 6);
        let x = rand_tensor(rng, vec![c_in, l], -1.5, 1.5);
        let w = rand_tensor(rng, vec![c_out, cpg, k], -1.5, 1.5);
        let b = rand_tensor(rng, vec![c_out], -1.0, 1.0);
        (
            vec![x, w, b],
            Box::new(move |g, ids| {
                let r = g.conv1d(ids[0], ids[1], Some(ids[2]), groups)?;
                let sq = g.mul(r, r)?;
                Ok(g.sum_all(sq))
            }),
        )
    });

    run("relu", 4, &mut rng, &mut |rng| {
        // keep inputs away from the kink at 0 where the subgradient is taken
        let a = Tensor::from_fn(vec![3, 4], |_| {
            let v: f64 = rng.gen_range(0.1..2.0);
            if rng.gen() {
                v
            } else {
                -v
            }
        });
        (
            vec![a],
            Box::new(|g, ids| {
                let r = g.relu(ids[0]);
                Ok(g.sum_all(r))
            }),
        )
    });

    run("gelu", 6, &mut rng, &mut |rng| {
        let a = rand_tensor(rng, vec![3, 4], -3.0, 3.0);
        (
            vec![a],
            Box::new(|g, ids| {
                let r = g.gelu(ids[0]);
                Ok(g.sum_all(r))
            }),
        )
    });

    run("softmax_rows", 6, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..4);
        let n = rng.gen_range(2..6);
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let w = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        (
            vec![a, w],
            Box::new(|g, ids| {
                let s = g.softmax_rows(ids[0])?;
                let weighted = g.mul(s, ids[1])?;
                Ok(g.sum_all(weighted))
            }),
        )
    });

    run("log_softmax_rows", 6, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..4);
        let n = rng.gen_range(2..6);
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let w = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        (
            vec![a, w],
            Box::new(|g, ids| {
                let s = g.log_softmax_rows(ids[0])?;
                let weighted = g.mul(s, ids[1])?;
                Ok(g.sum_all(weighted))
            }),
        )
    });

    run("layer_norm_rows", 6, &mut rng, &mut |rng| {
        let m = rng.gen_range(1..4);
        let n = rng.gen_range(2..6);
        let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        let w = rand_tensor(rng, vec![m, n], -2.0, 2.0);
        (
            vec![a, w],
            Box::new(|g, ids| {
                let s = g.layer_norm_rows(ids[0], 1e-6)?;
                let weighted = g.mul(s, ids[1])?;
                Ok(g.sum_all(weighted))
            }),
        )
    });

    run("nll_sum_masked", 6, &mut rng, &mut |rng| {
        let m = rng.gen_range(2..5);
        let v = rng.gen_range(3..7);
        let targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..v)).collect();
        let mask: Vec<bool> = (0..m).map(|i| i == 0 || rng.gen()).collect();
        let a = rand_tensor(rng, vec![m, v], -2.0, 2.0);
        (
            vec![a],
            Box::new(move |g, ids| {
                let lp = g.log_softmax_rows(ids[0])?;
                g.nll_sum_masked(lp, &targets, &mask)
            }),
        )
    });

    run("mean_all", 4, &mut rng, &mut |rng| {
        let a = rand_tensor(rng, vec![2, 5], -2.0, 2.0);
        (
            vec![a],
            Box::new(|g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                Ok(g.mean_all(sq))
            }),
        )
    });

    out
}

/// End-to-end check: teacher-forcing loss of a miniature captioning model
/// (d_model 8, 1 head, 1 layer per stack), differentiated with respect to
/// every parameter.
pub fn model_case(seed: u64) -> SuiteCase {
    use crate::encoder::{Modality, SensorSequence};
    use crate::model::{CaptionModel, DataDims, ModelConfig, PatchConfig};
    use crate::params::BoundParams;
    use rand::{Rng, SeedableRng};

    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 1,
        n_sa_layers: 1,
        n_text_layers: 1,
        n_convffn_blocks: 1,
        dw_kernel: 3,
        patch: PatchConfig {
            patch_len: 4,
            stride: 4,
        },
        pe_base_sensor: 1000.0,
        pe_base_text: 10000.0,
        n_final_pwconv: 1,
        ffn_width: 8,
        t_max: 4,
        ablation: Default::default(),
    };
    let dims = DataDims {
        modality: Modality::Imu,
        devices: 1,
        channels: 2,
        num_placements: 2,
    };
    let vocab_total = 8u32;
    let model: CaptionModel<f64> = CaptionModel::new(cfg, dims, vocab_total, seed)
        .expect("miniature config is valid");

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let seq = SensorSequence {
        modality: Modality::Imu,
        devices: 1,
        channels: 2,
        len: 8,
        sample_rate_hz: 4.0,
        placement_ids: vec![1],
        values: (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    };
    // <SOS> w w -> w w <EOS>: a two-token caption under teacher forcing.
    let input_ids: Vec<u32> = vec![crate::text::SOS_ID, 4, 6];
    let targets: Vec<usize> = vec![4, 6, crate::text::EOS_ID as usize];
    let mask = vec![true; 3];

    let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.clone()).collect();

    let build = move |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId, GraphError> {
        let bound = BoundParams::from_pairs(
            names.iter().cloned().zip(ids.iter().copied()),
        );
        let wrap = |e: crate::model::ModelError| match e {
            crate::model::ModelError::Graph(ge) => ge,
            other => GraphError::Invalid {
                op: "model_case",
                msg: other.to_string(),
            },
        };
        let x = crate::encoder::sensor_encode(g, &bound, &model.cfg, &model.dims, &seq)
            .map_err(wrap)?;
        let logits = model
            .caption_logits_from_features(g, &bound, x, &input_ids)
            .map_err(wrap)?;
        let logp = g.log_softmax_rows(logits)?;
        g.nll_sum_masked(logp, &targets, &mask)
    };

    let err = finite_diff_check(&build, &inputs, DEFAULT_EPS).unwrap_or(f64::INFINITY);
    SuiteCase {
        name: "caption_model_end_to_end".to_string(),
        cases: 1,
        max_rel_err: err,
        tol: DEFAULT_TOL,
    }
}
