use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, ConvVars, GradTape, LinearSpec, LinearVars, ParamInit, Scalar, Tensor, Var};

use super::config::{NeckConfig, SsfScheme};

/// Context-enhancement convolutions, one per pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct SceParams<T = f64> {
    /// 3x3, 8c -> 4c, followed by a 2x shuffle.
    pub local: ConvSpec<T>,
    /// 1x1, 8c -> 16c on the pooled map, followed by a 4x shuffle.
    pub pooled: ConvSpec<T>,
    /// 1x1, 8c -> c on the globally pooled vector.
    pub global: ConvSpec<T>,
}

/// `c -> c / r -> c` with a rectifier in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck<T = f64> {
    pub reduce: LinearSpec<T>,
    pub expand: LinearSpec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CagParams<T = f64> {
    /// Applied to the average-pooled descriptor.
    pub avg_branch: Bottleneck<T>,
    /// Applied to the max-pooled descriptor.
    pub max_branch: Bottleneck<T>,
}

/// `(name, weight, bias)` of one layer.
pub type LayerRef<'a, T> = (String, &'a Tensor<T>, Option<&'a Tensor<T>>);

/// All learnable layers of a neck. Lateral and post-merge vectors are ordered
/// finest level first (index 0 is level 2).
#[derive(Debug, Clone, PartialEq)]
pub struct NeckParams<T = f64> {
    pub laterals: Vec<ConvSpec<T>>,
    pub post_merge: Vec<ConvSpec<T>>,
    pub ssf_reduce: Option<ConvSpec<T>>,
    pub sce: Option<SceParams<T>>,
    pub cag: Option<CagParams<T>>,
}

impl<T: Scalar> NeckParams<T> {
    /// Seeded uniform initialisation. Layers draw from one ChaCha8 stream in
    /// the order laterals, post-merge, SSF, SCE, CAG.
    pub fn init(config: &NeckConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamInit::Uniform, seed)
    }

    pub fn zeros(config: &NeckConfig) -> Result<Self> {
        Self::build(config, ParamInit::Zeros, 0)
    }

    fn build(config: &NeckConfig, init: ParamInit, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.base_channel;
        let bias = config.bias;
        let chans = config.backbone_channels();
        let levels = config.merge_levels();
        let laterals = chans[..levels]
            .iter()
            .map(|&cin| ConvSpec::new(cin, c, 1, bias, init, &mut rng))
            .collect();
        let post_merge = (0..levels)
            .map(|_| ConvSpec::new(c, c, 3, bias, init, &mut rng))
            .collect();
        let ssf_reduce = (config.modules.ssf && config.ssf_scheme == SsfScheme::A)
            .then(|| ConvSpec::new(8 * c, 4 * c, 1, bias, init, &mut rng));
        let sce = config.modules.sce.then(|| SceParams {
            local: ConvSpec::new(8 * c, 4 * c, 3, bias, init, &mut rng),
            pooled: ConvSpec::new(8 * c, 16 * c, 1, bias, init, &mut rng),
            global: ConvSpec::new(8 * c, c, 1, bias, init, &mut rng),
        });
        let hidden = config.attention_hidden();
        let bottleneck = |rng: &mut ChaCha8Rng| Bottleneck {
            reduce: LinearSpec::new(c, hidden, bias, init, rng),
            expand: LinearSpec::new(hidden, c, bias, init, rng),
        };
        let cag = config.modules.cag.then(|| CagParams {
            avg_branch: bottleneck(&mut rng),
            max_branch: bottleneck(&mut rng),
        });
        Ok(NeckParams { laterals, post_merge, ssf_reduce, sce, cag })
    }

    /// Checks that the layer set and every layer's channel arithmetic match
    /// `config`.
    pub fn check(&self, config: &NeckConfig) -> Result<()> {
        config.validate()?;
        let expected = Self::expected_layers(config);
        let have = self.layer_shapes();
        if have != expected {
            return Err(Error::config(format!(
                "parameters do not match the configuration: expected layers {expected:?}, found {have:?}"
            )));
        }
        Ok(())
    }

    fn expected_layers(config: &NeckConfig) -> Vec<(String, [usize; 4], bool)> {
        let c = config.base_channel;
        let levels = config.merge_levels();
        let chans = config.backbone_channels();
        let mut out = Vec::new();
        for (k, &cin) in chans[..levels].iter().enumerate() {
            out.push((format!("lateral{}", k + 2), [c, cin, 1, 1], config.bias));
        }
        for k in 0..levels {
            out.push((format!("post_merge{}", k + 2), [c, c, 3, 3], config.bias));
        }
        if config.modules.ssf && config.ssf_scheme == SsfScheme::A {
            out.push(("ssf_reduce".into(), [4 * c, 8 * c, 1, 1], config.bias));
        }
        if config.modules.sce {
            out.push(("sce.local".into(), [4 * c, 8 * c, 3, 3], config.bias));
            out.push(("sce.pooled".into(), [16 * c, 8 * c, 1, 1], config.bias));
            out.push(("sce.global".into(), [c, 8 * c, 1, 1], config.bias));
        }
        if config.modules.cag {
            let h = config.attention_hidden();
            for branch in ["cag.fc1", "cag.fc2"] {
                out.push((format!("{branch}.reduce"), [h, c, 1, 1], config.bias));
                out.push((format!("{branch}.expand"), [c, h, 1, 1], config.bias));
            }
        }
        out
    }

    fn layer_shapes(&self) -> Vec<(String, [usize; 4], bool)> {
        self.layers()
            .into_iter()
            .map(|(name, w, b)| (name, w.shape().as_array(), b.is_some()))
            .collect()
    }

    /// `(name, weight, bias)` for every layer in canonical order.
    pub fn layers(&self) -> Vec<LayerRef<'_, T>> {
        let mut out = Vec::new();
        for (k, l) in self.laterals.iter().enumerate() {
            out.push((format!("lateral{}", k + 2), &l.weight, l.bias.as_ref()));
        }
        for (k, l) in self.post_merge.iter().enumerate() {
            out.push((format!("post_merge{}", k + 2), &l.weight, l.bias.as_ref()));
        }
        if let Some(l) = &self.ssf_reduce {
            out.push(("ssf_reduce".into(), &l.weight, l.bias.as_ref()));
        }
        if let Some(s) = &self.sce {
            for (name, l) in [("sce.local", &s.local), ("sce.pooled", &s.pooled), ("sce.global", &s.global)] {
                out.push((name.into(), &l.weight, l.bias.as_ref()));
            }
        }
        if let Some(a) = &self.cag {
            for (branch, b) in [("cag.fc1", &a.avg_branch), ("cag.fc2", &a.max_branch)] {
                out.push((format!("{branch}.reduce"), &b.reduce.weight, b.reduce.bias.as_ref()));
                out.push((format!("{branch}.expand"), &b.expand.weight, b.expand.bias.as_ref()));
            }
        }
        out
    }

    /// Every learnable tensor as `(name, tensor)`, names suffixed `.weight`
    /// or `.bias`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, w, b) in self.layers() {
            out.push((format!("{name}.weight"), w));
            if let Some(b) = b {
                out.push((format!("{name}.bias"), b));
            }
        }
        out
    }

    /// Mutable access in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        fn push<'a, T>(out: &mut Vec<&'a mut Tensor<T>>, w: &'a mut Tensor<T>, b: &'a mut Option<Tensor<T>>) {
            out.push(w);
            if let Some(b) = b.as_mut() {
                out.push(b);
            }
        }
        let mut out = Vec::new();
        for l in self.laterals.iter_mut().chain(self.post_merge.iter_mut()) {
            push(&mut out, &mut l.weight, &mut l.bias);
        }
        if let Some(l) = self.ssf_reduce.as_mut() {
            push(&mut out, &mut l.weight, &mut l.bias);
        }
        if let Some(s) = self.sce.as_mut() {
            for l in [&mut s.local, &mut s.pooled, &mut s.global] {
                push(&mut out, &mut l.weight, &mut l.bias);
            }
        }
        if let Some(a) = self.cag.as_mut() {
            for b in [&mut a.avg_branch, &mut a.max_branch] {
                push(&mut out, &mut b.reduce.weight, &mut b.reduce.bias);
                push(&mut out, &mut b.expand.weight, &mut b.expand.bias);
            }
        }
        out
    }

    /// Number of scalars actually allocated.
    pub fn scalar_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut GradTape<T>) -> BoundParams {
        let bind_bottleneck = |tape: &mut GradTape<T>, b: &Bottleneck<T>| BottleneckVars {
            reduce: LinearVars::bind(tape, &b.reduce),
            expand: LinearVars::bind(tape, &b.expand),
        };
        BoundParams {
            laterals: self.laterals.iter().map(|l| ConvVars::bind(tape, l)).collect(),
            post_merge: self.post_merge.iter().map(|l| ConvVars::bind(tape, l)).collect(),
            ssf_reduce: self.ssf_reduce.as_ref().map(|l| ConvVars::bind(tape, l)),
            sce: self.sce.as_ref().map(|s| SceVars {
                local: ConvVars::bind(tape, &s.local),
                pooled: ConvVars::bind(tape, &s.pooled),
                global: ConvVars::bind(tape, &s.global),
            }),
            cag: self.cag.as_ref().map(|a| CagVars {
                avg_branch: bind_bottleneck(tape, &a.avg_branch),
                max_branch: bind_bottleneck(tape, &a.max_branch),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SceVars {
    pub local: ConvVars,
    pub pooled: ConvVars,
    pub global: ConvVars,
}

#[derive(Debug, Clone, Copy)]
pub struct BottleneckVars {
    pub reduce: LinearVars,
    pub expand: LinearVars,
}

#[derive(Debug, Clone, Copy)]
pub struct CagVars {
    pub avg_branch: BottleneckVars,
    pub max_branch: BottleneckVars,
}

/// [`NeckParams`] registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub laterals: Vec<ConvVars>,
    pub post_merge: Vec<ConvVars>,
    pub ssf_reduce: Option<ConvVars>,
    pub sce: Option<SceVars>,
    pub cag: Option<CagVars>,
}

impl BoundParams {
    /// Leaf handles in the order of [`NeckParams::named_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::new();
        for l in self.laterals.iter().chain(&self.post_merge).chain(&self.ssf_reduce) {
            out.extend(l.vars());
        }
        if let Some(s) = &self.sce {
            for l in [&s.local, &s.pooled, &s.global] {
                out.extend(l.vars());
            }
        }
        if let Some(a) = &self.cag {
            for b in [&a.avg_branch, &a.max_branch] {
                out.extend(b.reduce.vars());
                out.extend(b.expand.vars());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_consistent() {
        let cfg = NeckConfig::desk();
        let a = NeckParams::<f64>::init(&cfg, 7).unwrap();
        let b = NeckParams::<f64>::init(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, NeckParams::<f64>::init(&cfg, 8).unwrap());
        a.check(&cfg).unwrap();
        assert!(a.check(&NeckConfig::fpn_baseline(16)).is_err());
    }

    #[test]
    fn bound_vars_follow_named_order() {
        for cfg in [NeckConfig::desk(), NeckConfig::ssf_only(16, SsfScheme::A), NeckConfig::fpn_baseline(8)] {
            let p = NeckParams::<f64>::init(&cfg, 1).unwrap();
            let mut tape = GradTape::new();
            let bound = p.bind(&mut tape);
            let named = p.named_tensors();
            let vars = bound.vars();
            assert_eq!(named.len(), vars.len());
            for ((_, t), v) in named.iter().zip(&vars) {
                assert_eq!(*t, tape.value(*v));
            }
            let mut q = p.clone();
            assert_eq!(q.tensors_mut().len(), named.len());
        }
    }

    #[test]
    fn layer_sets_follow_modules() {
        let base = NeckParams::<f64>::zeros(&NeckConfig::fpn_baseline(16)).unwrap();
        assert_eq!(base.laterals.len(), 4);
        assert!(base.ssf_reduce.is_none() && base.sce.is_none() && base.cag.is_none());
        let full = NeckParams::<f64>::zeros(&NeckConfig::desk()).unwrap();
        assert_eq!(full.laterals.len(), 3);
        assert!(full.ssf_reduce.is_none());
        assert_eq!(full.cag.as_ref().unwrap().avg_branch.reduce.out_features, 4);
    }
}
