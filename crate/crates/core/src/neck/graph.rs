//! Neck operators recorded on a [`GradTape`], so the whole forward pass is
//! differentiable. The eager functions in the parent module wrap these.

use crate::error::{Error, Result, ResultExt};
use crate::tensor::{ConvVars, GradTape, Scalar, Var};

use super::config::{NeckConfig, SsfScheme};
use super::params::{BoundParams, BottleneckVars, CagVars, SceVars};

/// Stride-16 level (P4) index in a finest-first pyramid starting at P2.
pub const INTEGRATION_LEVEL: usize = 2;

/// `f_lo + PS(transform(c_hi))` with a 2x shuffle.
///
/// A `4 * width` source is shuffled as is. An `8 * width` source is first
/// reduced according to `scheme`; `reduce` must be present for scheme a.
pub fn ssf_fuse<T: Scalar>(
    tape: &mut GradTape<T>,
    c_hi: Var,
    f_lo: Var,
    scheme: SsfScheme,
    reduce: Option<&ConvVars>,
) -> Result<Var> {
    let hs = tape.shape(c_hi);
    let ls = tape.shape(f_lo);
    if ls.n != hs.n || ls.h != 2 * hs.h || ls.w != 2 * hs.w {
        return Err(Error::shape(format!(
            "ssf_fuse: target {ls} must have exactly twice the spatial extent of source {hs}"
        )));
    }
    let width = ls.c;
    if hs.c == 4 * width {
        let up = tape.pixel_shuffle(c_hi, 2)?;
        return tape.add(f_lo, up);
    }
    if hs.c != 8 * width {
        return Err(Error::config(format!(
            "ssf_fuse: source has {} channels, expected 4x or 8x the pyramid width {width}",
            hs.c
        )));
    }
    let half = 4 * width;
    match scheme {
        SsfScheme::A => {
            let conv = reduce.ok_or_else(|| Error::config("ssf_fuse: scheme a needs a 1x1 reduction layer"))?;
            let reduced = tape.conv2d(c_hi, conv)?;
            let up = tape.pixel_shuffle(reduced, 2)?;
            tape.add(f_lo, up)
        }
        SsfScheme::B => {
            let first = tape.slice_channels(c_hi, 0, half)?;
            let up = tape.pixel_shuffle(first, 2)?;
            tape.add(f_lo, up)
        }
        SsfScheme::C => {
            let first = tape.slice_channels(c_hi, 0, half)?;
            let second = tape.slice_channels(c_hi, half, half)?;
            let up1 = tape.pixel_shuffle(first, 2)?;
            let up2 = tape.pixel_shuffle(second, 2)?;
            let acc = tape.add(f_lo, up1)?;
            tape.add(acc, up2)
        }
    }
}

/// FPN top-down pathway over finest-first laterals. The running merge is
/// `M_top = F_top`, `M_i = F_i + up2(M_{i+1})`; each level's output is the
/// 3x3 convolution of its merge.
pub fn top_down_merge<T: Scalar>(tape: &mut GradTape<T>, laterals: &[Var], convs: &[ConvVars]) -> Result<Vec<Var>> {
    if laterals.is_empty() || laterals.len() != convs.len() {
        return Err(Error::config(format!(
            "top_down_merge: {} laterals for {} post-merge convolutions",
            laterals.len(),
            convs.len()
        )));
    }
    let top = laterals.len() - 1;
    let mut merged = laterals[top];
    let mut outputs = vec![tape.conv2d(merged, &convs[top]).context(|| format!("level {}", top + 2))?];
    for k in (0..top).rev() {
        let fs = tape.shape(laterals[k]);
        let ms = tape.shape(merged);
        if fs.n != ms.n || fs.c != ms.c || fs.h != 2 * ms.h || fs.w != 2 * ms.w {
            return Err(Error::shape(format!(
                "top_down_merge: level {} lateral {fs} is not the 2x refinement of {ms}",
                k + 2
            )));
        }
        let up = tape.interpolate_nearest(merged, 2)?;
        merged = tape.add(laterals[k], up)?;
        outputs.push(tape.conv2d(merged, &convs[k]).context(|| format!("level {}", k + 2))?);
    }
    outputs.reverse();
    Ok(outputs)
}

/// Resizes every level to the P4 grid (max-pooling finer levels, nearest
/// upsampling coarser ones), averages them and adds `sce_out`.
pub fn build_integration_map<T: Scalar>(tape: &mut GradTape<T>, pyramid: &[Var], sce_out: Option<Var>) -> Result<Var> {
    if pyramid.len() <= INTEGRATION_LEVEL {
        return Err(Error::shape(format!(
            "build_integration_map needs levels P2..P4, got {} levels",
            pyramid.len()
        )));
    }
    let target = tape.shape(pyramid[INTEGRATION_LEVEL]);
    let mut acc: Option<Var> = None;
    for (k, &p) in pyramid.iter().enumerate() {
        let resized = match k.cmp(&INTEGRATION_LEVEL) {
            std::cmp::Ordering::Less => {
                let f = 1 << (INTEGRATION_LEVEL - k);
                tape.max_pool2d(p, f, f, 0)?
            }
            std::cmp::Ordering::Equal => p,
            std::cmp::Ordering::Greater => tape.interpolate_nearest(p, 1 << (k - INTEGRATION_LEVEL))?,
        };
        if tape.shape(resized) != target {
            return Err(Error::shape(format!(
                "build_integration_map: level {} resizes to {}, expected {target}",
                k + 2,
                tape.shape(resized)
            )));
        }
        acc = Some(match acc {
            None => resized,
            Some(a) => tape.add(a, resized)?,
        });
    }
    let inv = T::one() / T::from_usize(pyramid.len()).unwrap();
    let mean = tape.scale(acc.expect("non-empty pyramid"), inv);
    match sce_out {
        None => Ok(mean),
        Some(s) => {
            if tape.shape(s) != target {
                return Err(Error::shape(format!(
                    "build_integration_map: context map {} does not match P4 {target}",
                    tape.shape(s)
                )));
            }
            tape.add(mean, s)
        }
    }
}

/// Three-pathway context map at twice the C5 extent with `width` channels.
pub fn sce_forward<T: Scalar>(tape: &mut GradTape<T>, c5: Var, sce: &SceVars) -> Result<Var> {
    let s = tape.shape(c5);
    let width = tape.shape(sce.global.weight).n;
    if s.c != 8 * width {
        return Err(Error::config(format!(
            "sce_forward: C5 has {} channels, expected 8 x {width}",
            s.c
        )));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape(format!("sce_forward: empty C5 extent {s}")));
    }
    let (oh, ow) = (2 * s.h, 2 * s.w);

    let local = tape.conv2d(c5, &sce.local)?;
    let local = tape.pixel_shuffle(local, 2)?;

    let pooled = tape.max_pool2d(c5, 3, 2, 1)?;
    let pooled = tape.conv2d(pooled, &sce.pooled)?;
    let pooled = tape.pixel_shuffle(pooled, 4)?;
    // odd C5 extents overshoot by up to two rows/columns
    let pooled = if tape.shape(pooled).h != oh || tape.shape(pooled).w != ow {
        tape.crop_spatial(pooled, oh, ow)?
    } else {
        pooled
    };

    let global = tape.global_avg_pool(c5)?;
    let global = tape.conv2d(global, &sce.global)?;
    let global = tape.broadcast_spatial(global, oh, ow)?;

    let sum = tape.add(local, pooled)?;
    tape.add(sum, global)
}

fn bottleneck<T: Scalar>(tape: &mut GradTape<T>, x: Var, b: &BottleneckVars) -> Result<Var> {
    let h = tape.linear(x, &b.reduce)?;
    let h = tape.relu(h);
    tape.linear(h, &b.expand)
}

/// `sigmoid(fc1(avg(I)) + fc2(max(I)))`, shaped `(n, c, 1, 1)`.
pub fn cag_weights<T: Scalar>(tape: &mut GradTape<T>, integration: Var, cag: &CagVars) -> Result<Var> {
    let s = tape.shape(integration);
    let width = tape.shape(cag.avg_branch.reduce.weight).c;
    if s.c != width {
        return Err(Error::config(format!(
            "cag_weights: integration map has {} channels, attention layers expect {width}",
            s.c
        )));
    }
    let avg = tape.global_avg_pool(integration)?;
    let max = tape.global_max_pool(integration)?;
    let a = bottleneck(tape, avg, &cag.avg_branch)?;
    let m = bottleneck(tape, max, &cag.max_branch)?;
    let logits = tape.add(a, m)?;
    Ok(tape.sigmoid(logits))
}

/// Recorded neck forward pass.
#[derive(Debug, Clone)]
pub struct NeckTrace {
    pub backbone: [Var; 4],
    pub params: BoundParams,
    pub laterals: Vec<Var>,
    pub pyramid: Vec<Var>,
    pub sce_out: Option<Var>,
    pub integration: Option<Var>,
    pub channel_weights: Option<Var>,
    pub outputs: [Var; 4],
}

/// Full neck on a tape. `attention_override`, when given, replaces the
/// computed channel weights.
pub fn cefpn_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    backbone: [Var; 4],
    params: BoundParams,
    config: &NeckConfig,
    attention_override: Option<Var>,
) -> Result<NeckTrace> {
    config.validate()?;
    if config.modules.sce && !config.modules.cag {
        return Err(Error::config(
            "context enhancement feeds the integration map, which only the attention module consumes; enable cag",
        ));
    }
    let levels = config.merge_levels();
    let mut laterals = Vec::with_capacity(levels);
    for (k, (&c, conv)) in backbone.iter().zip(&params.laterals).enumerate().take(levels) {
        let f = tape
            .conv2d(c, conv)
            .context(|| format!("lateral connection of level {}", k + 2))?;
        laterals.push(f);
    }
    if config.modules.ssf {
        laterals[1] = ssf_fuse(tape, backbone[2], laterals[1], config.ssf_scheme, None)
            .context(|| "skip fusion C4 -> F3".to_string())?;
        laterals[2] = ssf_fuse(tape, backbone[3], laterals[2], config.ssf_scheme, params.ssf_reduce.as_ref())
            .context(|| "skip fusion C5 -> F4".to_string())?;
    }
    let pyramid = top_down_merge(tape, &laterals, &params.post_merge)?;

    let mut sce_out = None;
    let mut integration = None;
    let mut weights = attention_override;
    if config.modules.cag {
        if let Some(sce) = &params.sce {
            sce_out = Some(sce_forward(tape, backbone[3], sce).context(|| "context enhancement on C5".to_string())?);
        }
        let i = build_integration_map(tape, &pyramid, sce_out)?;
        integration = Some(i);
        if weights.is_none() {
            let cag = params
                .cag
                .as_ref()
                .ok_or_else(|| Error::config("attention enabled but no attention parameters bound"))?;
            weights = Some(cag_weights(tape, i, cag)?);
        }
    }

    let top = if config.include_f5_p5 {
        pyramid[3]
    } else {
        tape.max_pool2d(pyramid[2], 1, 2, 0).context(|| "level 5 synthesis".to_string())?
    };
    let raw = [pyramid[0], pyramid[1], pyramid[2], top];
    let mut outputs = raw;
    if let Some(w) = weights {
        for (k, r) in raw.iter().enumerate() {
            outputs[k] = tape
                .scale_channels(*r, w)
                .context(|| format!("attention on level {}", k + 2))?;
        }
    }
    Ok(NeckTrace {
        backbone,
        params,
        laterals,
        pyramid,
        sce_out,
        integration,
        channel_weights: weights,
        outputs,
    })
}
