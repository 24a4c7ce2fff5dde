//! Static parameter and FLOP accounting for a neck configuration.
//!
//! Counts come from the layer inventory implied by a [`NeckConfig`], so no
//! weights are allocated; [`NeckParams::scalar_count`] is the allocated
//! counterpart and the two are cross-checked in tests.
//!
//! Conventions:
//! * convolution: `mac * out * in * k^2 * h_out * w_out`, linear: `mac * out * in`,
//!   both per batch item, `mac` being 1 or 2 FLOPs per multiply-accumulate;
//! * bias additions are not counted as FLOPs, bias parameters are counted
//!   when enabled;
//! * elementwise add/mul: 1 per output element, tallied separately from the
//!   multiply-accumulate total;
//! * pooling, interpolation, pixel shuffle, slicing, activations: 0.
//!
//! [`NeckParams::scalar_count`]: crate::neck::NeckParams::scalar_count

mod table;

pub use table::render_delta;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neck::{InputGeometry, NeckConfig, SsfScheme, BACKBONE_STRIDES};
use crate::tensor::ops::window_extent;

/// FLOPs per multiply-accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum MacConvention {
    One,
    #[default]
    Two,
}

impl MacConvention {
    pub fn factor(self) -> u64 {
        match self {
            MacConvention::One => 1,
            MacConvention::Two => 2,
        }
    }
}

impl From<MacConvention> for u8 {
    fn from(m: MacConvention) -> u8 {
        m.factor() as u8
    }
}

impl TryFrom<u8> for MacConvention {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(MacConvention::One),
            2 => Ok(MacConvention::Two),
            other => Err(Error::config(format!("MAC convention must be 1 or 2, got {other}"))),
        }
    }
}

impl std::str::FromStr for MacConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("MAC convention must be 1 or 2, got {s:?}")))?;
        v.try_into()
    }
}

/// Accounting rules stamped on every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convention {
    pub mac_flops: MacConvention,
    pub bias_params_included: bool,
    pub bias_flops_included: bool,
    pub elementwise_flops_per_element: u64,
}

impl Convention {
    pub fn new(mac: MacConvention, bias: bool) -> Self {
        Convention {
            mac_flops: mac,
            bias_params_included: bias,
            bias_flops_included: false,
            elementwise_flops_per_element: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModule {
    Lateral,
    Ssf,
    TopDown,
    PostMerge,
    Sce,
    Cag,
}

impl CostModule {
    pub const ALL: [CostModule; 6] = [
        CostModule::Lateral,
        CostModule::Ssf,
        CostModule::TopDown,
        CostModule::PostMerge,
        CostModule::Sce,
        CostModule::Cag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostModule::Lateral => "lateral",
            CostModule::Ssf => "ssf",
            CostModule::TopDown => "top_down",
            CostModule::PostMerge => "post_merge",
            CostModule::Sce => "sce",
            CostModule::Cag => "cag",
        }
    }
}

impl fmt::Display for CostModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    Linear,
    Elementwise,
}

impl OpKind {
    pub fn is_mac(self) -> bool {
        matches!(self, OpKind::Conv | OpKind::Linear)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub layer: String,
    pub module: CostModule,
    pub op: OpKind,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtotal {
    pub module: CostModule,
    pub params: u64,
    /// Multiply-accumulate FLOPs (conv and linear entries).
    pub flops: u64,
    pub elementwise_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: NeckConfig,
    /// `None` for parameter-only reports.
    pub geometry: Option<InputGeometry>,
    pub convention: Convention,
    pub entries: Vec<CostEntry>,
    pub subtotals: Vec<Subtotal>,
    pub params: u64,
    pub flops: u64,
    pub elementwise_flops: u64,
}

impl CostReport {
    fn from_entries(config: NeckConfig, geometry: Option<InputGeometry>, convention: Convention, entries: Vec<CostEntry>) -> Self {
        let subtotals: Vec<Subtotal> = CostModule::ALL
            .iter()
            .map(|&module| {
                let mut s = Subtotal { module, params: 0, flops: 0, elementwise_flops: 0 };
                for e in entries.iter().filter(|e| e.module == module) {
                    s.params += e.params;
                    if e.op.is_mac() {
                        s.flops += e.flops;
                    } else {
                        s.elementwise_flops += e.flops;
                    }
                }
                s
            })
            .collect();
        CostReport {
            config,
            geometry,
            convention,
            params: subtotals.iter().map(|s| s.params).sum(),
            flops: subtotals.iter().map(|s| s.flops).sum(),
            elementwise_flops: subtotals.iter().map(|s| s.elementwise_flops).sum(),
            entries,
            subtotals,
        }
    }

    pub fn subtotal(&self, module: CostModule) -> Subtotal {
        self.subtotals
            .iter()
            .copied()
            .find(|s| s.module == module)
            .expect("every module has a subtotal")
    }

    pub fn entry(&self, layer: &str) -> Option<&CostEntry> {
        self.entries.iter().find(|e| e.layer == layer)
    }

    /// Plain-text table, one row per entry followed by subtotals.
    pub fn to_table(&self) -> String {
        table::render_report(self)
    }
}

struct Inventory {
    mac: u64,
    batch: u64,
    bias: bool,
    entries: Vec<CostEntry>,
}

impl Inventory {
    fn conv(&mut self, layer: String, module: CostModule, cin: usize, cout: usize, k: usize, out: (usize, usize)) {
        let weights = (cout * cin * k * k) as u64;
        self.entries.push(CostEntry {
            layer,
            module,
            op: OpKind::Conv,
            params: weights + if self.bias { cout as u64 } else { 0 },
            flops: self.mac * weights * (out.0 * out.1) as u64 * self.batch,
        });
    }

    fn linear(&mut self, layer: String, module: CostModule, fin: usize, fout: usize) {
        let weights = (fin * fout) as u64;
        self.entries.push(CostEntry {
            layer,
            module,
            op: OpKind::Linear,
            params: weights + if self.bias { fout as u64 } else { 0 },
            flops: self.mac * weights * self.batch,
        });
    }

    fn elementwise(&mut self, layer: String, module: CostModule, elements: usize) {
        self.entries.push(CostEntry {
            layer,
            module,
            op: OpKind::Elementwise,
            params: 0,
            flops: elements as u64 * self.batch,
        });
    }
}

/// Parameter counts only; every `flops` field is zero.
pub fn count_params(config: &NeckConfig) -> Result<CostReport> {
    // any valid geometry gives the same parameter counts
    let mut report = count_flops(config, InputGeometry::new(1, 32, 32), MacConvention::default())?;
    report.geometry = None;
    for e in &mut report.entries {
        e.flops = 0;
    }
    Ok(CostReport::from_entries(report.config, None, report.convention, report.entries))
}

/// Parameter and FLOP counts at `geometry`.
pub fn count_flops(config: &NeckConfig, geometry: InputGeometry, mac: MacConvention) -> Result<CostReport> {
    config.validate()?;
    geometry.validate()?;
    let c = config.base_channel;
    let ext: [(usize, usize); 4] = std::array::from_fn(|k| geometry.extent(BACKBONE_STRIDES[k]));
    let area = |k: usize| ext[k].0 * ext[k].1;
    let chans = config.backbone_channels();
    let levels = config.merge_levels();
    let mut inv = Inventory {
        mac: mac.factor(),
        batch: geometry.batch as u64,
        bias: config.bias,
        entries: Vec::new(),
    };

    for k in 0..levels {
        inv.conv(format!("lateral{}", k + 2), CostModule::Lateral, chans[k], c, 1, ext[k]);
    }

    if config.modules.ssf {
        inv.elementwise("ssf.fuse3".into(), CostModule::Ssf, c * area(1));
        match config.ssf_scheme {
            SsfScheme::A => {
                inv.conv("ssf_reduce".into(), CostModule::Ssf, 8 * c, 4 * c, 1, ext[3]);
                inv.elementwise("ssf.fuse4".into(), CostModule::Ssf, c * area(2));
            }
            SsfScheme::B => inv.elementwise("ssf.fuse4".into(), CostModule::Ssf, c * area(2)),
            SsfScheme::C => inv.elementwise("ssf.fuse4".into(), CostModule::Ssf, 2 * c * area(2)),
        }
    }

    for k in (0..levels - 1).rev() {
        inv.elementwise(format!("top_down.merge{}", k + 2), CostModule::TopDown, c * area(k));
    }
    for (k, &e) in ext.iter().enumerate().take(levels) {
        inv.conv(format!("post_merge{}", k + 2), CostModule::PostMerge, c, c, 3, e);
    }

    let (h4, w4) = ext[2];
    if config.modules.sce {
        let (h5, w5) = ext[3];
        let pooled = (
            window_extent(h5, 3, 2, 1).expect("non-empty C5"),
            window_extent(w5, 3, 2, 1).expect("non-empty C5"),
        );
        inv.conv("sce.local".into(), CostModule::Sce, 8 * c, 4 * c, 3, ext[3]);
        inv.conv("sce.pooled".into(), CostModule::Sce, 8 * c, 16 * c, 1, pooled);
        inv.conv("sce.global".into(), CostModule::Sce, 8 * c, c, 1, (1, 1));
        inv.elementwise("sce.sum".into(), CostModule::Sce, 2 * c * h4 * w4);
    }

    if config.modules.cag {
        inv.elementwise("integration.sum".into(), CostModule::Cag, (levels - 1) * c * h4 * w4);
        inv.elementwise("integration.mean".into(), CostModule::Cag, c * h4 * w4);
        if config.modules.sce {
            inv.elementwise("integration.context".into(), CostModule::Sce, c * h4 * w4);
        }
        let hidden = config.attention_hidden();
        for branch in ["cag.fc1", "cag.fc2"] {
            inv.linear(format!("{branch}.reduce"), CostModule::Cag, c, hidden);
            inv.linear(format!("{branch}.expand"), CostModule::Cag, hidden, c);
        }
        inv.elementwise("cag.sum".into(), CostModule::Cag, c);
        for k in 0..4 {
            let a = if k == 3 && !config.include_f5_p5 {
                // stride-2 subsample of P4
                h4.div_ceil(2) * w4.div_ceil(2)
            } else {
                area(k)
            };
            inv.elementwise(format!("cag.apply{}", k + 2), CostModule::Cag, c * a);
        }
    }

    Ok(CostReport::from_entries(
        *config,
        Some(geometry),
        Convention::new(mac, config.bias),
        inv.entries,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleDelta {
    pub module: CostModule,
    pub params: i64,
    pub flops: i64,
    pub elementwise_flops: i64,
}

/// Differences `report - baseline`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub params: i64,
    pub flops: i64,
    pub elementwise_flops: i64,
    pub modules: Vec<ModuleDelta>,
}

fn diff(a: u64, b: u64) -> i64 {
    a as i64 - b as i64
}

pub fn compare_to_baseline(report: &CostReport, baseline: &CostReport) -> Result<DeltaSummary> {
    if report.config.base_channel != baseline.config.base_channel {
        return Err(Error::contract(format!(
            "cannot compare widths {} and {}",
            report.config.base_channel, baseline.config.base_channel
        )));
    }
    if report.geometry != baseline.geometry {
        return Err(Error::contract(format!(
            "cannot compare reports at geometries {:?} and {:?}",
            report.geometry, baseline.geometry
        )));
    }
    if report.convention != baseline.convention {
        return Err(Error::contract("cannot compare reports with different accounting conventions"));
    }
    let modules = CostModule::ALL
        .iter()
        .map(|&m| {
            let (a, b) = (report.subtotal(m), baseline.subtotal(m));
            ModuleDelta {
                module: m,
                params: diff(a.params, b.params),
                flops: diff(a.flops, b.flops),
                elementwise_flops: diff(a.elementwise_flops, b.elementwise_flops),
            }
        })
        .collect();
    Ok(DeltaSummary {
        params: diff(report.params, baseline.params),
        flops: diff(report.flops, baseline.flops),
        elementwise_flops: diff(report.elementwise_flops, baseline.elementwise_flops),
        modules,
    })
}
