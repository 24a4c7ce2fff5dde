use std::fmt::Write;

use cefpn_core::cost::{render_delta, CostReport, DeltaSummary};
use cefpn_core::gradcheck::OpCheck;
use cefpn_core::neck::InputGeometry;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: String,
    pub stride: usize,
    pub shape: [usize; 4],
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub seed: u64,
    pub config: RunConfig,
    pub levels: Vec<LevelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuiteReport {
    pub seed: u64,
    pub config: RunConfig,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<OpCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVariant {
    pub name: String,
    pub report: CostReport,
    pub delta: DeltaSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSuiteReport {
    pub seed: u64,
    pub config: RunConfig,
    pub geometry: InputGeometry,
    pub variants: Vec<CostVariant>,
}

fn header(s: &mut String, title: &str, config: &RunConfig) {
    writeln!(
        s,
        "# {title}  seed {}  c {}  ssf {}  r {}  f5/p5 {}  input {}x{}x{}  {}",
        config.seed,
        config.base_channel,
        config.ssf_scheme,
        config.attention_reduction(),
        config.include_f5_p5,
        config.batch,
        config.height,
        config.width,
        config.precision,
    )
    .unwrap();
}

impl ForwardReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        header(&mut s, "forward", &self.config);
        writeln!(s, "{:<6} {:>6} {:<20} {:>14} {:>14} {:>14}", "level", "stride", "shape", "min", "max", "mean").unwrap();
        for l in &self.levels {
            let shape = format!("{:?}", l.shape);
            writeln!(
                s,
                "{:<6} {:>6} {:<20} {:>14.6e} {:>14.6e} {:>14.6e}",
                l.level, l.stride, shape, l.min, l.max, l.mean
            )
            .unwrap();
        }
        s
    }
}

impl GradcheckSuiteReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        header(&mut s, "gradcheck", &self.config);
        writeln!(s, "step {:e}  tolerance {:e}", self.step, self.tolerance).unwrap();
        for c in &self.checks {
            writeln!(
                s,
                "{:<4} {:<22} checked {:>5}  max rel error {:.3e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.op,
                c.checked,
                c.max_rel_error
            )
            .unwrap();
        }
        writeln!(s, "{}", if self.passed { "all checks passed" } else { "gradient check FAILED" }).unwrap();
        s
    }
}

impl CostSuiteReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        header(&mut s, "cost", &self.config);
        writeln!(s, "## deltas against the FPN baseline").unwrap();
        for v in &self.variants {
            s.push_str(&render_delta(&v.name, &v.delta));
        }
        for v in &self.variants {
            writeln!(s, "\n## {}", v.name).unwrap();
            s.push_str(&v.report.to_table());
        }
        s
    }
}
