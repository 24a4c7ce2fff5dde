use std::path::Path;

use anyhow::{bail, Context};
use cefpn_core::cost::{compare_to_baseline, count_flops};
use cefpn_core::gradcheck::{self, GradcheckConfig};
use cefpn_core::neck::{self, NeckConfig, NeckParams, SsfScheme, BACKBONE_STRIDES};
use cefpn_core::Scalar;
use serde::Serialize;

use crate::backbone::SyntheticBackbone;
use crate::config::{Precision, RunConfig, Suite};
use crate::report::{CostSuiteReport, CostVariant, ForwardReport, GradcheckSuiteReport, LevelStats};

/// One emitted report in both formats.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub name: &'static str,
    pub json: String,
    pub text: String,
    pub passed: bool,
}

impl Document {
    fn new<R: Serialize>(name: &'static str, report: &R, text: String, passed: bool) -> anyhow::Result<Self> {
        let mut json = serde_json::to_string_pretty(report)?;
        json.push('\n');
        Ok(Document { name, json, text, passed })
    }
}

fn forward_levels<T: Scalar>(config: &RunConfig) -> anyhow::Result<Vec<LevelStats>> {
    let neck_cfg = config.neck_config();
    let params = NeckParams::<T>::init(&neck_cfg, config.seed)?;
    let backbone = SyntheticBackbone::new(config.backbone, config.seed).generate::<T>(config.base_channel, config.geometry())?;
    let out = neck::cefpn_forward(&backbone, &params, &neck_cfg)?;
    Ok(out
        .levels
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let (min, max, mean) = t.stats().expect("non-empty output level");
            LevelStats {
                level: format!("R{}", k + 2),
                stride: BACKBONE_STRIDES[k],
                shape: t.shape().as_array(),
                min: min.to_f64_lossy(),
                max: max.to_f64_lossy(),
                mean: mean.to_f64_lossy(),
            }
        })
        .collect())
}

/// Forward pass on the synthetic backbone: output shapes and value statistics.
pub fn run_forward(config: &RunConfig) -> anyhow::Result<ForwardReport> {
    config.validate()?;
    let levels = match config.precision {
        Precision::F64 => forward_levels::<f64>(config)?,
        Precision::F32 => forward_levels::<f32>(config)?,
    };
    Ok(ForwardReport { seed: config.seed, config: config.echo(), levels })
}

/// Finite-difference checks for every op plus the configured neck.
/// `corrupt` names a check whose analytic gradient is deliberately skewed.
pub fn run_gradcheck(config: &RunConfig, corrupt: Option<&str>) -> anyhow::Result<GradcheckSuiteReport> {
    config.validate()?;
    if config.precision != Precision::F64 {
        bail!("gradient checks need double precision; rerun with --precision f64");
    }
    let gc = GradcheckConfig {
        seed: config.seed,
        end_to_end_samples: config.gradcheck_samples,
        corrupt: corrupt.map(str::to_string),
        ..Default::default()
    };
    let r = gradcheck::run_suite(&config.neck_config(), config.geometry(), &gc)?;
    Ok(GradcheckSuiteReport {
        seed: config.seed,
        config: config.echo(),
        step: r.step,
        tolerance: r.tolerance,
        checks: r.checks,
        passed: r.passed,
    })
}

/// The cost-table variants, in report order.
pub fn cost_variants(config: &RunConfig) -> Vec<(&'static str, NeckConfig)> {
    let c = config.base_channel;
    let r = config.attention_reduction();
    let with_r = |n: NeckConfig| NeckConfig { attention_reduction: r, ..n };
    vec![
        ("fpn_baseline", with_r(NeckConfig::fpn_baseline(c))),
        ("ssf_a", with_r(NeckConfig::ssf_only(c, SsfScheme::A))),
        ("ssf_b", with_r(NeckConfig::ssf_only(c, SsfScheme::B))),
        ("ssf_c", with_r(NeckConfig::ssf_only(c, SsfScheme::C))),
        ("sce", with_r(NeckConfig::sce_only(c, true))),
        ("sce_without_f5_p5", with_r(NeckConfig::sce_only(c, false))),
        ("cag", with_r(NeckConfig::cag_only(c))),
        ("cefpn", config.neck_config()),
    ]
}

/// Parameter and FLOP reports for the baseline, each single-module variant
/// and the configured CE-FPN, with deltas against the baseline.
pub fn run_cost(config: &RunConfig) -> anyhow::Result<CostSuiteReport> {
    config.validate()?;
    let g = config.geometry();
    let variants = cost_variants(config);
    let baseline = count_flops(&variants[0].1, g, config.mac_convention)?;
    let mut out = Vec::with_capacity(variants.len());
    for (name, cfg) in variants {
        let report = count_flops(&cfg, g, config.mac_convention).with_context(|| format!("cost of {name}"))?;
        let delta = compare_to_baseline(&report, &baseline)?;
        out.push(CostVariant { name: name.to_string(), report, delta });
    }
    Ok(CostSuiteReport { seed: config.seed, config: config.echo(), geometry: g, variants: out })
}

/// Runs the selected suites in the fixed order forward, gradcheck, cost.
pub fn run(config: &RunConfig, corrupt: Option<&str>) -> anyhow::Result<Vec<Document>> {
    config.validate()?;
    let mut docs = Vec::new();
    if config.suite.includes(Suite::Forward) {
        let r = run_forward(config)?;
        docs.push(Document::new("forward", &r, r.to_text(), true)?);
    }
    if config.suite.includes(Suite::Gradcheck) {
        let r = run_gradcheck(config, corrupt)?;
        docs.push(Document::new("gradcheck", &r, r.to_text(), r.passed)?);
    }
    if config.suite.includes(Suite::Cost) {
        let r = run_cost(config)?;
        docs.push(Document::new("cost", &r, r.to_text(), true)?);
    }
    Ok(docs)
}

/// Writes `<name>.json` and `<name>.txt` for every document, plus the
/// config echo as `config.json`.
pub fn write_documents(dir: &Path, config: &RunConfig, docs: &[Document]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut echo = serde_json::to_string_pretty(&config.echo())?;
    echo.push('\n');
    std::fs::write(dir.join("config.json"), echo)?;
    for d in docs {
        std::fs::write(dir.join(format!("{}.json", d.name)), &d.json)?;
        std::fs::write(dir.join(format!("{}.txt", d.name)), &d.text)?;
    }
    Ok(())
}
