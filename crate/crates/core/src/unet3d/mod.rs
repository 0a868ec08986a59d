//! The baseline 3D U-Net: double-convolution blocks (conv, instance norm,
//! ReLU, twice), max-pool downsampling, transposed-convolution upsampling,
//! skip concatenations and a 1×1×1 convolution with softmax over 4 classes.

mod checkpoint;
pub mod layers;
mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::NormCache;

pub use checkpoint::{load_checkpoint, save_checkpoint, AdamSnapshot, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use tensor::{Feat, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub num_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { in_channels: 1, base_channels: 24, levels: 4, num_classes: 4 }
    }
}

impl NetworkConfig {
    pub fn tiny() -> Self {
        NetworkConfig { base_channels: 4, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.levels == 0 {
            return Err(Error::invalid(format!("degenerate network config {self:?}")));
        }
        if self.num_classes != 4 {
            return Err(Error::invalid(format!("num_classes must be 4, got {}", self.num_classes)));
        }
        Ok(())
    }

    /// Output widths of the encoder blocks, bottleneck last.
    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..=self.levels).map(|l| self.base_channels << l).collect()
    }

    /// Spatial sizes must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct DoubleConv {
    cin: usize,
    cout: usize,
    /// Indices of w1, b1, gamma1, beta1, w2, b2, gamma2, beta2.
    p: [usize; 8],
}

#[derive(Clone, Copy, Debug)]
struct UpConv {
    cout: usize,
    w: usize,
    b: usize,
}

struct DoubleConvCache<T> {
    input: Feat<T>,
    norm1: NormCache<T>,
    mid: Feat<T>,
    norm2: NormCache<T>,
    out: Feat<T>,
}

/// Everything the backward pass needs from one sample's forward pass.
pub struct ForwardCache<T> {
    enc: Vec<DoubleConvCache<T>>,
    pools: Vec<([usize; 3], Vec<u8>)>,
    ups: Vec<Feat<T>>,
    dec: Vec<DoubleConvCache<T>>,
    head_input: Feat<T>,
}

/// Network output for a batch: pre-softmax scores and probabilities.
pub struct Output<T> {
    pub scores: Tensor<T>,
    pub probs: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub params: Vec<Param<T>>,
    enc: Vec<DoubleConv>,
    ups: Vec<UpConv>,
    dec: Vec<DoubleConv>,
    head: (usize, usize),
}

impl<T: Real> Network<T> {
    /// He-initialized network; identical parameters for identical seeds.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Param<T>> = Vec::new();
        let he = |name: String, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng, params: &mut Vec<Param<T>>| {
            let std = (2.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::from_f64(z * std)
                })
                .collect();
            params.push(Param { name, shape, data });
            params.len() - 1
        };
        let constant = |name: String, n: usize, v: f64, params: &mut Vec<Param<T>>| {
            params.push(Param { name, shape: vec![n], data: vec![T::from_f64(v); n] });
            params.len() - 1
        };
        let double = |name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng, params: &mut Vec<Param<T>>| {
            let mut p = [0usize; 8];
            for (k, (ci, tag)) in [(cin, "a"), (cout, "b")].into_iter().enumerate() {
                p[4 * k] = he(format!("{name}.conv_{tag}.weight"), vec![cout, ci, 3, 3, 3], ci * 27, rng, params);
                p[4 * k + 1] = constant(format!("{name}.conv_{tag}.bias"), cout, 0.0, params);
                p[4 * k + 2] = constant(format!("{name}.norm_{tag}.weight"), cout, 1.0, params);
                p[4 * k + 3] = constant(format!("{name}.norm_{tag}.bias"), cout, 0.0, params);
            }
            DoubleConv { cin, cout, p }
        };

        let widths = config.encoder_widths();
        let mut enc = Vec::new();
        let mut cin = config.in_channels;
        for (l, &w) in widths.iter().enumerate() {
            enc.push(double(&format!("dconv{}", l + 1), cin, w, &mut rng, &mut params));
            cin = w;
        }
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for l in (0..config.levels).rev() {
            let (from, to) = (widths[l + 1], widths[l]);
            let name = format!("tconv{}", l + 1);
            let w = he(format!("{name}.weight"), vec![from, to, 2, 2, 2], from, &mut rng, &mut params);
            let b = constant(format!("{name}.bias"), to, 0.0, &mut params);
            ups.push(UpConv { cout: to, w, b });
            let idx = 2 * config.levels - l + 1;
            dec.push(double(&format!("dconv{idx}"), 2 * to, to, &mut rng, &mut params));
        }
        let hw =
            he("head.weight".into(), vec![config.num_classes, widths[0], 1, 1, 1], widths[0], &mut rng, &mut params);
        let hb = constant("head.bias".into(), config.num_classes, 0.0, &mut params);
        Ok(Network { config: config.clone(), params, enc, ups, dec, head: (hw, hb) })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::ZERO; p.data.len()]).collect()
    }

    /// Replaces all parameter values; shapes must match.
    pub fn load_params(&mut self, params: Vec<Param<T>>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::Shape("parameter set does not match the network layout".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn check_input(&self, dims: [usize; 3], channels: usize) -> Result<()> {
        let div = self.config.divisor();
        if dims.iter().any(|&d| d == 0 || d % div != 0) {
            return Err(Error::Shape(format!("spatial size {dims:?} is not divisible by {div}")));
        }
        if channels != self.config.in_channels {
            return Err(Error::Shape(format!("expected {} input channel(s), got {channels}", self.config.in_channels)));
        }
        Ok(())
    }

    fn double_forward(&self, blk: &DoubleConv, x: Feat<T>, keep: bool) -> (Feat<T>, Option<DoubleConvCache<T>>) {
        let p = |i: usize| &self.params[blk.p[i]].data[..];
        let mut mid = layers::conv3_forward(&x, p(0), p(1), blk.cout);
        let norm1 = layers::instance_norm_relu(&mut mid, p(2), p(3), keep);
        let mut out = layers::conv3_forward(&mid, p(4), p(5), blk.cout);
        let norm2 = layers::instance_norm_relu(&mut out, p(6), p(7), keep);
        let cache = keep.then(|| DoubleConvCache {
            input: x,
            norm1: norm1.unwrap(),
            mid,
            norm2: norm2.unwrap(),
            out: out.clone(),
        });
        (out, cache)
    }

    fn double_backward(
        &self,
        blk: &DoubleConv,
        cache: &DoubleConvCache<T>,
        mut g: Feat<T>,
        grads: &mut [Vec<T>],
        need_input: bool,
    ) -> Option<Feat<T>> {
        debug_assert_eq!(blk.cin, cache.input.c);
        let p = |i: usize| &self.params[blk.p[i]].data[..];
        {
            let (gg, gb) = two_mut(grads, blk.p[6], blk.p[7]);
            layers::instance_norm_relu_backward(&cache.out, &cache.norm2, p(6), &mut g, gg, gb);
        }
        let mut g = {
            let (gw, gb) = two_mut(grads, blk.p[4], blk.p[5]);
            layers::conv3_backward(&cache.mid, p(4), &g, gw, gb, true).unwrap()
        };
        {
            let (gg, gb) = two_mut(grads, blk.p[2], blk.p[3]);
            layers::instance_norm_relu_backward(&cache.mid, &cache.norm1, p(2), &mut g, gg, gb);
        }
        let (gw, gb) = two_mut(grads, blk.p[0], blk.p[1]);
        layers::conv3_backward(&cache.input, p(0), &g, gw, gb, need_input)
    }

    fn sample_forward(&self, x: Feat<T>, keep: bool) -> (Feat<T>, Option<ForwardCache<T>>) {
        let levels = self.config.levels;
        let mut skips = Vec::with_capacity(levels);
        let mut enc_caches = Vec::new();
        let mut pools = Vec::new();
        let mut cur = x;
        for (l, blk) in self.enc.iter().enumerate() {
            let (out, cache) = self.double_forward(blk, cur, keep);
            enc_caches.extend(cache);
            if l < levels {
                let (pooled, arg) = layers::maxpool2(&out);
                if keep {
                    pools.push((out.dims, arg));
                }
                skips.push(out);
                cur = pooled;
            } else {
                cur = out;
            }
        }
        let mut ups = Vec::new();
        let mut dec_caches = Vec::new();
        for (up, blk) in self.ups.iter().zip(&self.dec) {
            let u = layers::tconv2_forward(&cur, &self.params[up.w].data, &self.params[up.b].data, up.cout);
            if keep {
                ups.push(cur);
            }
            let skip = skips.pop().unwrap();
            let cat = layers::concat(&skip, &u);
            drop(skip);
            drop(u);
            let (out, cache) = self.double_forward(blk, cat, keep);
            dec_caches.extend(cache);
            cur = out;
        }
        let scores = layers::conv1_forward(
            &cur,
            &self.params[self.head.0].data,
            &self.params[self.head.1].data,
            self.config.num_classes,
        );
        let cache = keep.then(|| ForwardCache { enc: enc_caches, pools, ups, dec: dec_caches, head_input: cur });
        (scores, cache)
    }

    fn run(&self, batch: &Tensor<T>, keep: bool) -> Result<(Output<T>, Vec<ForwardCache<T>>)> {
        self.check_input(batch.spatial(), batch.shape[1])?;
        let mut scores = Vec::with_capacity(batch.batch());
        let mut probs = Vec::with_capacity(batch.batch());
        let mut caches = Vec::new();
        for b in 0..batch.batch() {
            let (s, c) = self.sample_forward(batch.sample(b), keep);
            probs.push(layers::softmax(&s));
            scores.push(s);
            caches.extend(c);
        }
        let out = Output { scores: Tensor::from_samples(scores)?, probs: Tensor::from_samples(probs)? };
        Ok((out, caches))
    }

    /// Class probabilities (and pre-softmax scores) for a B×C×D×H×W batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Output<T>> {
        Ok(self.run(batch, false)?.0)
    }

    /// Forward pass that keeps per-sample caches for [`Network::backward`].
    pub fn forward_train(&self, batch: &Tensor<T>) -> Result<(Output<T>, Vec<ForwardCache<T>>)> {
        self.run(batch, true)
    }

    /// Accumulates parameter gradients given the loss gradient w.r.t. the
    /// pre-softmax scores of one sample.
    pub fn backward(&self, cache: &ForwardCache<T>, gscores: Feat<T>, grads: &mut [Vec<T>]) {
        let levels = self.config.levels;
        let (hw, hb) = self.head;
        let mut g = {
            let (gw, gb) = two_mut(grads, hw, hb);
            layers::conv1_backward(&cache.head_input, &self.params[hw].data, &gscores, gw, gb)
        };
        let mut skip_grads: Vec<Feat<T>> = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            let (up, blk) = (&self.ups[i], &self.dec[i]);
            let gcat = self.double_backward(blk, &cache.dec[i], g, grads, true).unwrap();
            let (gskip, gup) = layers::split_channels(gcat, up.cout);
            skip_grads.push(gskip);
            let (gw, gb) = two_mut(grads, up.w, up.b);
            g = layers::tconv2_backward(&cache.ups[i], &self.params[up.w].data, &gup, gw, gb);
        }
        for l in (0..=levels).rev() {
            if l < levels {
                let (dims, arg) = &cache.pools[l];
                let mut gin = layers::maxpool2_backward(*dims, arg, &g);
                let gs = skip_grads.pop().unwrap();
                for (a, b) in gin.data.iter_mut().zip(&gs.data) {
                    *a += *b;
                }
                g = gin;
            }
            match self.double_backward(&self.enc[l], &cache.enc[l], g, grads, l > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
