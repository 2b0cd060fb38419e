use super::{time_features, ModelConfig, GROUP_NORM_EPS};
use crate::error::{Error, Result};
use crate::phantom::Rng;
use crate::tensorad::{self as ad, ConvSpec, Scalar, Tensor};
use crate::volume::ModalityId;

/// A trainable tensor with its stable checkpoint name.
#[derive(Clone, Debug)]
pub struct NamedParam<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

struct Init<'a, T: Scalar> {
    rng: Rng,
    params: &'a mut Vec<NamedParam<T>>,
}

impl<T: Scalar> Init<'_, T> {
    fn register(&mut self, name: String, shape: &[usize], data: Vec<f64>) -> Tensor<T> {
        let t = Tensor::parameter(shape, data.into_iter().map(T::from_f64).collect()).expect("shape");
        self.params.push(NamedParam {
            name,
            tensor: t.clone(),
        });
        t
    }

    /// `U(−1/√fan_in, 1/√fan_in)`, the usual default for conv/linear layers.
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let k = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform(-k, k)).collect();
        self.register(name, shape, data)
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> Tensor<T> {
        let n = shape.iter().product();
        self.register(name, shape, vec![v; n])
    }

    fn normal(&mut self, name: String, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.normal()).collect();
        self.register(name, shape, data)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> Conv<T> {
        let fan_in = cin * k * k * k;
        Conv {
            w: self.uniform(format!("{name}.w"), &[cout, cin, k, k, k], fan_in),
            b: self.uniform(format!("{name}.b"), &[cout], fan_in),
            spec,
        }
    }

    fn zero_conv(&mut self, name: &str, cin: usize, cout: usize) -> Conv<T> {
        Conv {
            w: self.constant(format!("{name}.w"), &[cout, cin, 3, 3, 3], 0.0),
            b: self.constant(format!("{name}.b"), &[cout], 0.0),
            spec: ConvSpec::SAME,
        }
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Linear<T> {
        Linear {
            w: self.uniform(format!("{name}.w"), &[o, i], i),
            b: self.uniform(format!("{name}.b"), &[o], i),
        }
    }

    fn norm(&mut self, name: &str, channels: usize, groups: usize) -> Norm<T> {
        Norm {
            groups,
            gamma: self.constant(format!("{name}.gamma"), &[channels], 1.0),
            beta: self.constant(format!("{name}.beta"), &[channels], 0.0),
        }
    }

    fn res_block(&mut self, name: &str, cfg: &ModelConfig, cin: usize, cout: usize) -> ResBlock<T> {
        ResBlock {
            cin,
            cout,
            norm1: self.norm(&format!("{name}.norm1"), cin, cfg.groups_for(cin)),
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3, ConvSpec::SAME),
            norm2: self.norm(&format!("{name}.norm2"), cout, cfg.groups_for(cout)),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, ConvSpec::SAME),
            modulation: self.linear(&format!("{name}.emb"), cfg.embed_dim, 2 * cin + 2 * cout),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, ConvSpec::POINTWISE)),
        }
    }
}

struct Conv<T: Scalar> {
    w: Tensor<T>,
    b: Tensor<T>,
    spec: ConvSpec,
}

impl<T: Scalar> Conv<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ad::conv3d(x, &self.w, &self.b, self.spec)
    }
}

struct Linear<T: Scalar> {
    w: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ad::linear(x, &self.w, &self.b)
    }
}

struct Norm<T: Scalar> {
    groups: usize,
    gamma: Tensor<T>,
    beta: Tensor<T>,
}

impl<T: Scalar> Norm<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ad::group_norm(x, self.groups, &self.gamma, &self.beta, GROUP_NORM_EPS)
    }
}

/// `GN → scale/shift from e → SiLU → conv`, twice, plus an identity or 1×1
/// skip. One linear map of `e` yields both scale/shift pairs.
struct ResBlock<T: Scalar> {
    cin: usize,
    cout: usize,
    norm1: Norm<T>,
    conv1: Conv<T>,
    norm2: Norm<T>,
    conv2: Conv<T>,
    modulation: Linear<T>,
    skip: Option<Conv<T>>,
}

impl<T: Scalar> ResBlock<T> {
    fn forward(&self, x: &Tensor<T>, emb: &Tensor<T>) -> Result<Tensor<T>> {
        let (ci, co) = (self.cin, self.cout);
        let m = self.modulation.forward(emb)?;
        let (s1, b1) = (ad::narrow(&m, 0, ci)?, ad::narrow(&m, ci, ci)?);
        let (s2, b2) = (ad::narrow(&m, 2 * ci, co)?, ad::narrow(&m, 2 * ci + co, co)?);
        let h = ad::scale_shift(&self.norm1.forward(x)?, &s1, &b1)?;
        let h = self.conv1.forward(&ad::silu(&h))?;
        let h = ad::scale_shift(&self.norm2.forward(&h)?, &s2, &b2)?;
        let h = self.conv2.forward(&ad::silu(&h))?;
        let skip = match &self.skip {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        ad::add(&h, &skip)
    }
}

struct Level<T: Scalar> {
    blocks: Vec<ResBlock<T>>,
    /// Stride-2 conv (encoder) or nearest ×2 + conv (decoder); absent at the
    /// bottom of the encoder and the top of the decoder.
    resample: Option<Conv<T>>,
}

/// Encoder/decoder U-Net with concatenated skips, modulated by
/// `e = TimeEmbed(t) + ClassEmbed(y)` in every residual block.
pub struct UNet<T: Scalar = f32> {
    config: ModelConfig,
    params: Vec<NamedParam<T>>,
    time1: Linear<T>,
    time2: Linear<T>,
    class_table: Tensor<T>,
    input: Conv<T>,
    down: Vec<Level<T>>,
    middle: Vec<ResBlock<T>>,
    up: Vec<Level<T>>,
    out_norm: Norm<T>,
    out_conv: Conv<T>,
}

impl<T: Scalar> UNet<T> {
    /// Random initialization from `seed`; the final conv starts at zero so
    /// the initial velocity field is identically zero.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut params = Vec::new();
        let mut init = Init {
            rng: Rng::new(seed),
            params: &mut params,
        };
        let base = cfg.base_channels;
        let e = cfg.embed_dim;
        let time1 = init.linear("time.fc1", base, e);
        let time2 = init.linear("time.fc2", e, e);
        let class_table = init.normal("class.table".into(), &[ModalityId::COUNT, e]);

        let ch0 = base * cfg.channel_mult[0];
        let input = init.conv("input", cfg.in_channels, ch0, 3, ConvSpec::SAME);
        let mut skip_channels = vec![ch0];
        let mut ch = ch0;
        let mut down = Vec::new();
        for (li, &mult) in cfg.channel_mult.iter().enumerate() {
            let out = base * mult;
            let mut blocks = Vec::new();
            for bi in 0..cfg.res_blocks {
                blocks.push(init.res_block(&format!("down.{li}.{bi}"), &cfg, ch, out));
                ch = out;
                skip_channels.push(ch);
            }
            let resample = (li + 1 < cfg.levels()).then(|| {
                skip_channels.push(ch);
                init.conv(&format!("down.{li}.resample"), ch, ch, 3, ConvSpec::DOWN)
            });
            down.push(Level { blocks, resample });
        }
        let middle = (0..2)
            .map(|i| init.res_block(&format!("mid.{i}"), &cfg, ch, ch))
            .collect();
        let mut up = Vec::new();
        for (li, &mult) in cfg.channel_mult.iter().enumerate().rev() {
            let out = base * mult;
            let mut blocks = Vec::new();
            for bi in 0..=cfg.res_blocks {
                let skip = skip_channels.pop().expect("skip bookkeeping");
                blocks.push(init.res_block(&format!("up.{li}.{bi}"), &cfg, ch + skip, out));
                ch = out;
            }
            let resample = (li > 0).then(|| init.conv(&format!("up.{li}.resample"), ch, ch, 3, ConvSpec::SAME));
            up.push(Level { blocks, resample });
        }
        debug_assert!(skip_channels.is_empty());
        let out_norm = init.norm("out.norm", ch, cfg.groups_for(ch));
        let out_conv = init.zero_conv("out.conv", ch, cfg.out_channels);
        Ok(Self {
            config: cfg,
            params,
            time1,
            time2,
            class_table,
            input,
            down,
            middle,
            up,
            out_norm,
            out_conv,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every trainable tensor in a fixed order (the checkpoint order).
    pub fn named_params(&self) -> &[NamedParam<T>] {
        &self.params
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// `e = TimeEmbed(t) + ClassEmbed(y)` for each batch element, `[N, E]`.
    pub fn embedding(&self, t: &[f64], y: &[ModalityId]) -> Result<Tensor<T>> {
        if t.len() != y.len() {
            return Err(Error::Shape(format!("{} times for {} labels", t.len(), y.len())));
        }
        let base = self.config.base_channels;
        let mut feats = Vec::with_capacity(t.len() * base);
        for &ti in t {
            feats.extend(time_features(ti, base)?.into_iter().map(T::from_f64));
        }
        let feats = Tensor::from_vec(&[t.len(), base], feats)?;
        let time = self.time2.forward(&ad::silu(&self.time1.forward(&feats)?))?;
        let ids: Vec<usize> = y.iter().map(|m| m.index()).collect();
        let class = ad::embedding(&self.class_table, &ids)?;
        ad::add(&time, &class)
    }

    /// Predicted velocity `[N, 8, D, H, W]` for `x̃ [N, 8, …]` and
    /// `cond [N, 24, …]`, with per-element times and target labels.
    pub fn forward(&self, x: &Tensor<T>, cond: &Tensor<T>, t: &[f64], y: &[ModalityId]) -> Result<Tensor<T>> {
        let (xs, cs) = (x.shape(), cond.shape());
        let cond_channels = self.config.in_channels - self.config.out_channels;
        if xs.len() != 5 || cs.len() != 5 || xs[1] != self.config.out_channels || cs[1] != cond_channels {
            return Err(Error::Shape(format!(
                "forward: x {xs:?} must be [N, {}, D, H, W], cond {cs:?} must be [N, {cond_channels}, D, H, W]",
                self.config.out_channels
            )));
        }
        if xs[0] != cs[0] || xs[2..] != cs[2..] || t.len() != xs[0] {
            return Err(Error::Shape(format!(
                "forward: x {xs:?}, cond {cs:?}, {} times",
                t.len()
            )));
        }
        let m = self.config.spatial_multiple();
        if xs[2..].iter().any(|&d| d % m != 0 || d == 0) {
            return Err(Error::Shape(format!(
                "forward: spatial dims {:?} must be positive multiples of {m}",
                &xs[2..]
            )));
        }
        let emb = ad::silu(&self.embedding(t, y)?);
        let mut h = self.input.forward(&ad::concat_channels(x, cond)?)?;
        let mut skips = vec![h.clone()];
        for level in &self.down {
            for block in &level.blocks {
                h = block.forward(&h, &emb)?;
                skips.push(h.clone());
            }
            if let Some(conv) = &level.resample {
                h = conv.forward(&h)?;
                skips.push(h.clone());
            }
        }
        for block in &self.middle {
            h = block.forward(&h, &emb)?;
        }
        for level in &self.up {
            for block in &level.blocks {
                let skip = skips.pop().expect("skip bookkeeping");
                h = block.forward(&ad::concat_channels(&h, &skip)?, &emb)?;
            }
            if let Some(conv) = &level.resample {
                h = conv.forward(&ad::upsample_nearest2x(&h)?)?;
            }
        }
        let h = ad::silu(&self.out_norm.forward(&h)?);
        self.out_conv.forward(&h)
    }
}
