//! Central finite-difference checks of the tape's analytic gradients.
//!
//! Each op check builds a small graph, reduces it with a fixed random
//! weighting `loss = sum(out * g)`, and compares every input gradient element
//! with `(L(x + h) - L(x - h)) / 2h`. The end-to-end check uses
//! `loss = sum of all neck outputs` and samples parameters at random.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neck::{self, BackbonePyramid, InputGeometry, NeckConfig, NeckParams};
use crate::tensor::{ConvVars, GradTape, LinearVars, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Parameters sampled for the end-to-end check.
    pub end_to_end_samples: usize,
    pub seed: u64,
    /// Negative control: scale the analytic gradient of the named check.
    pub corrupt: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-6,
            tolerance: 1e-4,
            end_to_end_samples: 200,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<OpCheck>,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1)`: relative for gradients of magnitude above
/// one, absolute below, so near-zero entries are not dominated by the
/// finite-difference truncation error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1.0);
    (analytic - numeric).abs() / denom
}

type Build = dyn Fn(&mut GradTape<f64>, &[Var]) -> Result<Var>;

fn weighted_loss(tape: &mut GradTape<f64>, out: Var, weight: &Tensor<f64>) -> Result<Var> {
    let g = tape.leaf(weight.clone());
    let prod = tape.mul(out, g)?;
    Ok(tape.sum(prod))
}

fn eval_loss(build: &Build, inputs: &[Tensor<f64>], weight: &Tensor<f64>) -> Result<f64> {
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let loss = weighted_loss(&mut tape, out, weight)?;
    Ok(tape.value(loss).data()[0])
}

/// Checks every element of every input of one op.
pub fn check_op(
    name: &str,
    build: &Build,
    inputs: &[Tensor<f64>],
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<OpCheck> {
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let weight = Tensor::uniform(tape.shape(out), -1.0, 1.0, rng);
    let loss = weighted_loss(&mut tape, out, &weight)?;
    let grads = tape.backward(loss)?;
    let corrupt = cfg.corrupt.as_deref() == Some(name);

    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(&tape, *v);
        for idx in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += cfg.step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= cfg.step;
            let numeric = (eval_loss(build, &plus, &weight)? - eval_loss(build, &minus, &weight)?) / (2.0 * cfg.step);
            let mut analytic = g.data()[idx];
            if corrupt {
                analytic = analytic * 1.5 + 0.1;
            }
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(OpCheck {
        op: name.to_string(),
        checked,
        max_rel_error: worst,
        passed: worst < cfg.tolerance,
    })
}

fn uniform(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values spaced 0.01 apart in random order: no ties within a step.
fn distinct(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let data = ranks.into_iter().map(|r| (r as f64 - n as f64 / 2.0) * 0.01).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values with magnitude in `[0.1, 1]`, away from the rectifier kink.
fn off_zero(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let t = uniform(shape, rng);
    t.map(|v| if v >= 0.0 { 0.1 + 0.9 * v } else { -0.1 + 0.9 * v })
}

fn conv_vars(vars: &[Var], stride: usize, padding: usize) -> ConvVars {
    ConvVars { weight: vars[1], bias: vars.get(2).copied(), stride, padding }
}

/// The tensor-core ops checked by [`run_op_checks`], in report order.
pub const OP_NAMES: &[&str] = &[
    "conv2d",
    "conv2d_strided",
    "max_pool2d",
    "global_avg_pool",
    "global_max_pool",
    "interpolate_nearest",
    "linear",
    "sigmoid",
    "relu",
    "add",
    "mul",
    "scale",
    "mul_channelwise",
    "pixel_shuffle",
    "pixel_unshuffle",
    "slice_channels",
    "broadcast_spatial",
    "crop_spatial",
];

/// Finite-difference checks for every tensor-core op.
pub fn run_op_checks(cfg: &GradcheckConfig) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for &name in OP_NAMES {
        let (build, inputs): (Box<Build>, Vec<Tensor<f64>>) = match name {
            "conv2d" => (
                Box::new(|t, v| t.conv2d(v[0], &conv_vars(v, 1, 1))),
                vec![uniform([1, 3, 6, 6], &mut rng), uniform([4, 3, 3, 3], &mut rng), uniform([4, 1, 1, 1], &mut rng)],
            ),
            "conv2d_strided" => (
                Box::new(|t, v| t.conv2d(v[0], &conv_vars(v, 2, 1))),
                vec![uniform([1, 2, 7, 8], &mut rng), uniform([3, 2, 3, 3], &mut rng)],
            ),
            "max_pool2d" => (Box::new(|t, v| t.max_pool2d(v[0], 3, 2, 1)), vec![distinct([1, 2, 6, 6], &mut rng)]),
            "global_avg_pool" => (Box::new(|t, v| t.global_avg_pool(v[0])), vec![uniform([1, 4, 5, 3], &mut rng)]),
            "global_max_pool" => (Box::new(|t, v| t.global_max_pool(v[0])), vec![distinct([1, 4, 4, 4], &mut rng)]),
            "interpolate_nearest" => (
                Box::new(|t, v| t.interpolate_nearest(v[0], 2)),
                vec![uniform([1, 2, 3, 4], &mut rng)],
            ),
            "linear" => (
                Box::new(|t, v| t.linear(v[0], &LinearVars { weight: v[1], bias: Some(v[2]) })),
                vec![uniform([2, 8, 1, 1], &mut rng), uniform([4, 8, 1, 1], &mut rng), uniform([4, 1, 1, 1], &mut rng)],
            ),
            "sigmoid" => (Box::new(|t, v| Ok(t.sigmoid(v[0]))), vec![uniform([1, 4, 8, 8], &mut rng)]),
            "relu" => (Box::new(|t, v| Ok(t.relu(v[0]))), vec![off_zero([1, 4, 8, 8], &mut rng)]),
            "add" => (
                Box::new(|t, v| t.add(v[0], v[1])),
                vec![uniform([1, 3, 4, 4], &mut rng), uniform([1, 3, 4, 4], &mut rng)],
            ),
            "mul" => (
                Box::new(|t, v| t.mul(v[0], v[1])),
                vec![uniform([1, 3, 4, 4], &mut rng), uniform([1, 3, 4, 4], &mut rng)],
            ),
            "scale" => (Box::new(|t, v| Ok(t.scale(v[0], 1.0 / 3.0))), vec![uniform([1, 2, 4, 4], &mut rng)]),
            "mul_channelwise" => (
                Box::new(|t, v| t.scale_channels(v[0], v[1])),
                vec![uniform([2, 4, 3, 3], &mut rng), uniform([2, 4, 1, 1], &mut rng)],
            ),
            "pixel_shuffle" => (Box::new(|t, v| t.pixel_shuffle(v[0], 2)), vec![uniform([1, 4, 3, 3], &mut rng)]),
            "pixel_unshuffle" => (Box::new(|t, v| t.pixel_unshuffle(v[0], 2)), vec![uniform([1, 1, 4, 6], &mut rng)]),
            "slice_channels" => (Box::new(|t, v| t.slice_channels(v[0], 1, 2)), vec![uniform([1, 4, 3, 3], &mut rng)]),
            "broadcast_spatial" => (
                Box::new(|t, v| t.broadcast_spatial(v[0], 3, 5)),
                vec![uniform([2, 3, 1, 1], &mut rng)],
            ),
            "crop_spatial" => (Box::new(|t, v| t.crop_spatial(v[0], 3, 2)), vec![uniform([1, 2, 4, 4], &mut rng)]),
            other => return Err(Error::contract(format!("no gradient check for op {other}"))),
        };
        out.push(check_op(name, build.as_ref(), &inputs, cfg, &mut rng)?);
    }
    Ok(out)
}

/// Seeded uniform backbone features in `[-1, 1)`.
pub fn random_backbone(config: &NeckConfig, geometry: InputGeometry, seed: u64) -> Result<BackbonePyramid<f64>> {
    let shapes = BackbonePyramid::<f64>::expected_shapes(geometry.batch, config.base_channel, geometry.height, geometry.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(BackbonePyramid {
        levels: shapes.map(|s| Tensor::uniform(s, -1.0, 1.0, &mut rng)),
    })
}

fn output_sum(backbone: &BackbonePyramid<f64>, params: &NeckParams<f64>, config: &NeckConfig) -> Result<f64> {
    let out = neck::cefpn_forward(backbone, params, config)?;
    Ok(out.levels.iter().map(|t| t.sum()).sum())
}

/// End-to-end check of `sum(R2..R5)` with respect to randomly sampled
/// parameters.
pub fn check_end_to_end(
    config: &NeckConfig,
    geometry: InputGeometry,
    cfg: &GradcheckConfig,
) -> Result<OpCheck> {
    let params = NeckParams::<f64>::init(config, cfg.seed)?;
    let backbone = random_backbone(config, geometry, cfg.seed.wrapping_add(1))?;
    let (mut tape, trace) = neck::trace_forward(&backbone, &params, config, None)?;
    let mut total = None;
    for r in trace.outputs {
        let s = tape.sum(r);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let loss = total.expect("four outputs");
    let grads = tape.backward(loss)?;
    let vars = trace.params.vars();

    // (tensor index, element index) over every parameter scalar
    let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let total_scalars: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let samples = cfg.end_to_end_samples.min(total_scalars);
    let picks = rand::seq::index::sample(&mut rng, total_scalars, samples).into_vec();
    let locate = |mut flat: usize| {
        for (k, &n) in sizes.iter().enumerate() {
            if flat < n {
                return (k, flat);
            }
            flat -= n;
        }
        unreachable!("sample index within total")
    };

    let corrupt = cfg.corrupt.as_deref() == Some("cefpn_forward");
    let mut worst = 0.0f64;
    for flat in picks {
        let (k, idx) = locate(flat);
        let analytic_full = grads.wrt(&tape, vars[k]);
        let mut analytic = analytic_full.data()[idx];
        if corrupt {
            analytic = analytic * 1.5 + 0.1;
        }
        let mut plus = params.clone();
        plus.tensors_mut()[k].data_mut()[idx] += cfg.step;
        let mut minus = params.clone();
        minus.tensors_mut()[k].data_mut()[idx] -= cfg.step;
        let numeric = (output_sum(&backbone, &plus, config)? - output_sum(&backbone, &minus, config)?) / (2.0 * cfg.step);
        worst = worst.max(relative_error(analytic, numeric));
    }
    // a few backbone inputs too, so input gradients are exercised end to end
    let mut checked = samples;
    for level in 0..4 {
        let g = grads.wrt(&tape, trace.backbone[level]);
        let idx = rng.gen_range(0..backbone.levels[level].numel());
        let mut plus = backbone.clone();
        plus.levels[level].data_mut()[idx] += cfg.step;
        let mut minus = backbone.clone();
        minus.levels[level].data_mut()[idx] -= cfg.step;
        let numeric = (output_sum(&plus, &params, config)? - output_sum(&minus, &params, config)?) / (2.0 * cfg.step);
        let mut analytic = g.data()[idx];
        if corrupt {
            analytic = analytic * 1.5 + 0.1;
        }
        worst = worst.max(relative_error(analytic, numeric));
        checked += 1;
    }
    Ok(OpCheck {
        op: "cefpn_forward".into(),
        checked,
        max_rel_error: worst,
        passed: worst < cfg.tolerance,
    })
}

/// All op checks plus the end-to-end neck check.
pub fn run_suite(config: &NeckConfig, geometry: InputGeometry, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut checks = run_op_checks(cfg)?;
    checks.push(check_end_to_end(config, geometry, cfg)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        step: cfg.step,
        tolerance: cfg.tolerance,
        checks,
        passed,
    })
}
