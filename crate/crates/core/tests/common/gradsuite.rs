//! Finite-difference checks of every tape primitive and of the composed
//! encoder, SS and AS graphs.

use rand_chacha::ChaCha8Rng;
use ssas::autograd::{
    all_probes, compare_gradients, numeric_gradient, GradCheckConfig, GrlConfig, NumericGradient, Tape, Tensor, Var,
};
use ssas::model::{AsNetwork, Encoder, NetworkConfig, SourceBatch, SsNetwork, StageBatch, StageOptions};
use ssas::nn::{Mode, SlrHead};
use ssas::Result;

use super::{gaussian, probabilities, rng, uniform};

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub probes: usize,
    pub skipped_kinks: usize,
}

impl CaseResult {
    fn new(name: &str) -> Self {
        CaseResult { name: name.into(), trials: 0, max_rel_error: 0.0, probes: 0, skipped_kinks: 0 }
    }

    fn absorb(&mut self, rel: f64, probes: usize, kinks: usize) {
        self.trials += 1;
        self.max_rel_error = self.max_rel_error.max(rel);
        self.probes += probes;
        self.skipped_kinks += kinks;
    }
}

type Build = fn(&mut Tape, &[Var], f64) -> Result<Var>;

/// Scalar probe `sum(W * op(inputs))` for a fixed random `W`.
fn weighted_sum(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv)?;
    tape.sum(prod)
}

fn check_primitive(
    inputs: Vec<Tensor>,
    reversal: f64,
    arg: f64,
    build: Build,
    r: &mut ChaCha8Rng,
    cfg: &GradCheckConfig,
) -> Result<(f64, usize, usize)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars, arg)?;
    let w = gaussian(r, tape.value(out).shape(), 1.0);
    let loss = weighted_sum(&mut tape, out, &w)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().zip(&inputs).map(|(&v, t)| grads.get_or_zeros(v, t.shape())).collect();

    let f = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars, arg)?;
        let loss = weighted_sum(&mut tape, out, &w)?;
        Ok(tape.value(loss).item())
    };
    let probes = all_probes(&inputs);
    let mut numeric = numeric_gradient(f, &inputs, &probes, cfg)?;
    for g in &mut numeric.grads {
        *g = g.map(|v| v * reversal);
    }
    let rep = compare_gradients(&analytic, &numeric, cfg);
    Ok((rep.max_rel_error, rep.probes, rep.skipped_kinks))
}

struct PrimitiveCase {
    name: &'static str,
    build: Build,
    /// Inputs, reversal factor and scalar argument for one trial.
    make: fn(&mut ChaCha8Rng, usize) -> (Vec<Tensor>, f64, f64),
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    fn g(r: &mut ChaCha8Rng, s: &[usize]) -> Tensor {
        gaussian(r, s, 1.0)
    }
    vec![
        PrimitiveCase {
            name: "matmul",
            build: |t, v, _| t.matmul(v[0], v[1]),
            make: |r, _| (vec![g(r, &[3, 4]), g(r, &[4, 2])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "add",
            build: |t, v, _| t.add(v[0], v[1]),
            make: |r, _| (vec![g(r, &[3, 2]), g(r, &[3, 2])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "sub",
            build: |t, v, _| t.sub(v[0], v[1]),
            make: |r, _| (vec![g(r, &[3, 2]), g(r, &[3, 2])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "mul",
            build: |t, v, _| t.mul(v[0], v[1]),
            make: |r, _| (vec![g(r, &[3, 2]), g(r, &[3, 2])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "scale",
            build: |t, v, c| t.scale(v[0], c),
            make: |r, i| (vec![g(r, &[2, 3])], 1.0, i as f64 * 0.1 - 3.0),
        },
        PrimitiveCase {
            name: "add_row_broadcast",
            build: |t, v, _| t.add_row_broadcast(v[0], v[1]),
            make: |r, _| (vec![g(r, &[3, 4]), g(r, &[4])], 1.0, 0.0),
        },
        PrimitiveCase { name: "relu", build: |t, v, _| t.relu(v[0]), make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0) },
        PrimitiveCase { name: "exp", build: |t, v, _| t.exp(v[0]), make: |r, _| (vec![g(r, &[3, 3])], 1.0, 0.0) },
        PrimitiveCase {
            name: "log",
            build: |t, v, _| t.log(v[0]),
            make: |r, _| (vec![uniform(r, &[3, 3], 0.2, 3.0)], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "clamp_min",
            build: |t, v, c| t.clamp_min(v[0], c),
            make: |r, _| (vec![g(r, &[4, 3])], 1.0, 0.1),
        },
        PrimitiveCase {
            name: "row_softmax",
            build: |t, v, _| t.row_softmax(v[0]),
            make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "row_sum",
            build: |t, v, _| t.row_sum(v[0]),
            make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0),
        },
        PrimitiveCase { name: "sum", build: |t, v, _| t.sum(v[0]), make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0) },
        PrimitiveCase { name: "mean", build: |t, v, _| t.mean(v[0]), make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0) },
        PrimitiveCase {
            name: "mean_rows",
            build: |t, v, _| t.mean_rows(v[0]),
            make: |r, _| (vec![g(r, &[5, 3])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "concat_rows",
            build: |t, v, _| t.concat_rows(&[v[0], v[1]]),
            make: |r, _| (vec![g(r, &[2, 3]), g(r, &[3, 3])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "slice_rows",
            build: |t, v, _| t.slice_rows(v[0], 1, 4),
            make: |r, _| (vec![g(r, &[5, 3])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "gather_rows",
            build: |t, v, _| t.gather_rows(v[0], vec![0, 2, 2, 3, 1]),
            make: |r, _| (vec![g(r, &[4, 3])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "squared_norm",
            build: |t, v, _| t.squared_norm(v[0]),
            make: |r, _| (vec![g(r, &[3, 3])], 1.0, 0.0),
        },
        PrimitiveCase { name: "abs", build: |t, v, _| t.abs(v[0]), make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0) },
        PrimitiveCase {
            name: "transpose",
            build: |t, v, _| t.transpose(v[0]),
            make: |r, _| (vec![g(r, &[3, 4])], 1.0, 0.0),
        },
        PrimitiveCase {
            name: "grl",
            build: |t, v, l| t.grl(v[0], GrlConfig::new(l)?),
            make: |r, i| {
                let lambda = (i % 3) as f64;
                (vec![g(r, &[3, 4])], -lambda, lambda)
            },
        },
        PrimitiveCase {
            name: "batch_norm",
            build: |t, v, eps| t.batch_norm(v[0], v[1], v[2], eps),
            make: |r, _| (vec![g(r, &[5, 3]), uniform(r, &[3], 0.5, 1.5), g(r, &[3])], 1.0, 1e-5),
        },
        PrimitiveCase {
            name: "row_normalize",
            build: |t, v, radius| t.row_normalize(v[0], radius),
            make: |r, _| (vec![g(r, &[4, 3])], 1.0, 1.5),
        },
    ]
}

pub fn primitive_suite(trials: usize, cfg: &GradCheckConfig) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (k, case) in primitive_cases().into_iter().enumerate() {
        let mut res = CaseResult::new(case.name);
        for trial in 0..trials {
            let mut r = rng(1000 * k as u64 + trial as u64);
            let (inputs, reversal, arg) = (case.make)(&mut r, trial);
            let (rel, probes, kinks) = check_primitive(inputs, reversal, arg, case.build, &mut r, cfg)?;
            res.absorb(rel, probes, kinks);
        }
        out.push(res);
    }
    Ok(out)
}

pub fn tiny_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_dim: 4,
        hidden_dim: 6,
        feature_dim: 5,
        num_classes: 3,
        source_ids: vec![0, 2, 3],
        radius: 1.3,
        noise_variance: 0.01,
        seed,
    }
}

pub fn tiny_batch(r: &mut ChaCha8Rng, cfg: &NetworkConfig, rows: usize) -> StageBatch {
    use rand::Rng;
    let sources = (0..cfg.num_sources())
        .map(|s| SourceBatch {
            features: gaussian(r, &[rows, cfg.input_dim], 1.0).map(|v| v + s as f64 * 0.5),
            labels: (0..rows).map(|_| r.random_range(0..cfg.num_classes)).collect(),
        })
        .collect();
    StageBatch { sources, target: gaussian(r, &[rows, cfg.input_dim], 1.2) }
}

/// `eval` returns `(total, rev, stopped)`. For parameters marked in
/// `reversed` the `rev` part passes a reversal layer and the `stopped` part a
/// detach, so the estimate is `N(total - rev - stopped) - lambda N(rev)`;
/// other parameters see plain `N(total)`.
fn combined_numeric<F>(
    params: &[Tensor],
    reversed: &[bool],
    lambda: f64,
    eval: F,
    cfg: &GradCheckConfig,
) -> Result<NumericGradient>
where
    F: Fn(&[Tensor]) -> Result<(f64, f64, f64)>,
{
    let probes = all_probes(params);
    let total = numeric_gradient(|ps| Ok(eval(ps)?.0), params, &probes, cfg)?;
    let rev = numeric_gradient(|ps| Ok(eval(ps)?.1), params, &probes, cfg)?;
    let stopped = numeric_gradient(|ps| Ok(eval(ps)?.2), params, &probes, cfg)?;
    let mut grads = Vec::with_capacity(params.len());
    for (p, &is_rev) in reversed.iter().enumerate() {
        let g = if is_rev {
            let plain = total.grads[p].zip_map(&stopped.grads[p], |t, s| t - s);
            plain.zip_map(&rev.grads[p], |t, r| (t - r) - lambda * r)
        } else {
            total.grads[p].clone()
        };
        grads.push(g);
    }
    let mut kinks = total.kinks;
    kinks.extend(rev.kinks);
    kinks.extend(stopped.kinks);
    kinks.sort();
    kinks.dedup();
    Ok(NumericGradient { grads, kinks, probes })
}

fn set_params(dst: Vec<&mut Tensor>, src: &[Tensor]) {
    for (d, s) in dst.into_iter().zip(src) {
        *d = s.clone();
    }
}

pub fn encoder_suite(trials: usize, cfg: &GradCheckConfig) -> Result<CaseResult> {
    let mut res = CaseResult::new("encoder");
    for trial in 0..trials {
        let net_cfg = tiny_config(trial as u64);
        let mut r = rng(50_000 + trial as u64);
        let enc = Encoder::init(&net_cfg, trial as u64)?;
        let x = gaussian(&mut r, &[6, net_cfg.input_dim], 1.0);
        let w = gaussian(&mut r, &[6, net_cfg.feature_dim], 1.0);
        let params: Vec<Tensor> = enc.params().into_iter().map(|(_, t)| t.clone()).collect();
        // a fresh clone per evaluation replays the same noise draw
        let run = |ps: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let mut e = enc.clone();
            set_params(e.params_mut(), ps);
            let mut tape = Tape::new();
            let vars = e.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let z = e.forward(&mut tape, &vars, xv, Mode::Train)?;
            let loss = weighted_sum(&mut tape, z, &w)?;
            let value = tape.value(loss).item();
            let flat = vars.flat();
            let grads = tape.backward(loss)?;
            Ok((value, flat.iter().zip(ps).map(|(&v, p)| grads.get_or_zeros(v, p.shape())).collect()))
        };
        let analytic = run(&params)?.1;
        let probes = all_probes(&params);
        let numeric = numeric_gradient(|ps| Ok(run(ps)?.0), &params, &probes, cfg)?;
        let rep = compare_gradients(&analytic, &numeric, cfg);
        res.absorb(rep.max_rel_error, rep.probes, rep.skipped_kinks);
    }
    Ok(res)
}

const ENCODER_PARAMS: usize = 8;

pub fn ss_suite(trials: usize, lambda: f64, cfg: &GradCheckConfig) -> Result<CaseResult> {
    let mut res = CaseResult::new(&format!("ss graph, lambda {lambda}"));
    for trial in 0..trials {
        let net_cfg = tiny_config(100 + trial as u64);
        let mut r = rng(60_000 + trial as u64);
        let mut net = SsNetwork::init(&net_cfg, lambda)?;
        // move the heads away from their symmetric initialisation
        net.domain_head.bias = gaussian(&mut r, &[net_cfg.num_sources()], 0.3);
        net.emotion_head.bias = gaussian(&mut r, &[net_cfg.num_classes], 0.3);
        let batch = tiny_batch(&mut r, &net_cfg, 4);
        let opts = StageOptions::default();
        let params: Vec<Tensor> = net.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let eval = |ps: &[Tensor]| -> Result<(f64, f64, f64)> {
            let mut n = net.clone();
            set_params(n.params_mut(), ps);
            let pass = n.forward(&batch, Mode::Train, &opts)?;
            let v = pass.terms.values(&pass.tape);
            // encoder gradients of everything except the domain loss are reversed
            Ok((v.total, v.total - v.dcls, 0.0))
        };
        let analytic = {
            let mut n = net.clone();
            n.forward(&batch, Mode::Train, &opts)?.gradients()?
        };
        let reversed: Vec<bool> = (0..params.len()).map(|p| p < ENCODER_PARAMS).collect();
        let numeric = combined_numeric(&params, &reversed, lambda, eval, cfg)?;
        let rep = compare_gradients(&analytic, &numeric, cfg);
        res.absorb(rep.max_rel_error, rep.probes, rep.skipped_kinks);
    }
    Ok(res)
}

pub fn as_suite(trials: usize, lambda: f64, cfg: &GradCheckConfig) -> Result<CaseResult> {
    let mut res = CaseResult::new(&format!("as graph, lambda {lambda}"));
    for trial in 0..trials {
        let net_cfg = tiny_config(200 + trial as u64);
        let mut r = rng(70_000 + trial as u64);
        let frozen = SlrHead::random(net_cfg.num_sources(), net_cfg.feature_dim, net_cfg.radius, &mut r)?;
        let mut net = AsNetwork::init(&net_cfg, lambda, Some(frozen))?;
        net.domain_head.bias = gaussian(&mut r, &[net_cfg.num_sources()], 0.3);
        net.emotion_head.bias = gaussian(&mut r, &[net_cfg.num_classes], 0.3);
        let rows = 4;
        let batch = tiny_batch(&mut r, &net_cfg, rows);
        let reference = probabilities(&mut r, rows * net_cfg.num_sources(), net_cfg.num_sources());
        let weights: Vec<f64> = (0..net_cfg.num_sources()).map(|i| 0.5 + 0.75 * i as f64).collect();
        let opts = StageOptions {
            mdc_detach_features: trial % 4 == 1,
            conditional_mmd: trial % 4 == 2,
            ..StageOptions::default()
        };
        let params: Vec<Tensor> = net.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let eval = |ps: &[Tensor]| -> Result<(f64, f64, f64)> {
            let mut n = net.clone();
            set_params(n.params_mut(), ps);
            let pass = n.forward_with_reference(&batch, &weights, Mode::Train, &opts, Some(&reference))?;
            let v = pass.terms.values(&pass.tape);
            if opts.mdc_detach_features {
                Ok((v.total, v.dcls, v.mdc))
            } else {
                Ok((v.total, v.dcls + v.mdc, 0.0))
            }
        };
        let analytic = {
            let mut n = net.clone();
            n.forward_with_reference(&batch, &weights, Mode::Train, &opts, Some(&reference))?.gradients()?
        };
        let reversed: Vec<bool> = (0..params.len()).map(|p| p < ENCODER_PARAMS).collect();
        let numeric = combined_numeric(&params, &reversed, lambda, eval, cfg)?;
        let rep = compare_gradients(&analytic, &numeric, cfg);
        res.absorb(rep.max_rel_error, rep.probes, rep.skipped_kinks);
    }
    Ok(res)
}

/// Every case of the autograd criterion.
pub fn full_suite(trials: usize) -> Result<Vec<CaseResult>> {
    let cfg = GradCheckConfig::default();
    let mut all = primitive_suite(trials, &cfg)?;
    all.push(encoder_suite(trials, &cfg)?);
    for lambda in [0.0, 1.0, 2.0] {
        all.push(ss_suite(trials, lambda, &cfg)?);
        all.push(as_suite(trials, lambda, &cfg)?);
    }
    Ok(all)
}
