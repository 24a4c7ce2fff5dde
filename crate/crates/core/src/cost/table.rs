use std::fmt::Write;

use super::{CostReport, DeltaSummary};

fn op_name(op: super::OpKind) -> &'static str {
    match op {
        super::OpKind::Conv => "conv",
        super::OpKind::Linear => "linear",
        super::OpKind::Elementwise => "elementwise",
    }
}

pub(super) fn render_report(r: &CostReport) -> String {
    let mut s = String::new();
    let geom = match r.geometry {
        Some(g) => format!("{}x{}x{}", g.batch, g.height, g.width),
        None => "-".to_string(),
    };
    writeln!(
        s,
        "# width {}  geometry {}  mac {}  bias {}",
        r.config.base_channel,
        geom,
        r.convention.mac_flops.factor(),
        r.convention.bias_params_included
    )
    .unwrap();
    writeln!(s, "{:<24} {:<11} {:<12} {:>14} {:>18}", "layer", "module", "op", "params", "flops").unwrap();
    for e in &r.entries {
        writeln!(s, "{:<24} {:<11} {:<12} {:>14} {:>18}", e.layer, e.module, op_name(e.op), e.params, e.flops).unwrap();
    }
    writeln!(s, "{:<24} {:<11} {:>14} {:>18} {:>18}", "subtotal", "module", "params", "flops", "elementwise").unwrap();
    for t in &r.subtotals {
        writeln!(s, "{:<24} {:<11} {:>14} {:>18} {:>18}", "", t.module, t.params, t.flops, t.elementwise_flops).unwrap();
    }
    writeln!(s, "{:<24} {:<11} {:>14} {:>18} {:>18}", "total", "", r.params, r.flops, r.elementwise_flops).unwrap();
    s
}

/// One-line-per-module delta table.
pub fn render_delta(name: &str, d: &DeltaSummary) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<20} params {:>+12}  flops {:>+16}  elementwise {:>+14}",
        name, d.params, d.flops, d.elementwise_flops
    )
    .unwrap();
    for m in d.modules.iter().filter(|m| m.params != 0 || m.flops != 0 || m.elementwise_flops != 0) {
        writeln!(
            s,
            "  {:<18} params {:>+12}  flops {:>+16}  elementwise {:>+14}",
            m.module, m.params, m.flops, m.elementwise_flops
        )
        .unwrap();
    }
    s
}
