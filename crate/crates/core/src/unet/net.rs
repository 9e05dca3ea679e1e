use rand::Rng;
use serde::{Deserialize, Serialize};

use super::UnetError;
use crate::mask::BinaryMask;
use crate::nn::{
    conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, pointwise_conv, pointwise_conv_backward, relu,
    relu_backward, softmax2, softmax2_backward, transposed_conv2d, transposed_conv2d_backward, weighted_loss,
    weighted_loss_backward, LossConfig, PoolIndices, Real, Tensor,
};

/// Encoder/decoder geometry. Channels double at every level below the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::for_size(256)
    }
}

impl UNetConfig {
    pub fn new(depth: usize, base_channels: usize, input_size: usize) -> Self {
        Self {
            depth,
            base_channels,
            in_channels: 1,
            out_channels: 2,
            input_size,
        }
    }

    /// Depth 4 / base 64 at 256 px and above, depth 2 / base 8 below.
    pub fn for_size(input_size: usize) -> Self {
        if input_size >= 256 {
            Self::new(4, 64, input_size)
        } else {
            Self::new(2, 8, input_size)
        }
    }

    pub fn validate(&self) -> Result<(), UnetError> {
        let bad = |msg: String| Err(UnetError::InvalidConfig(msg));
        if self.depth == 0 || self.depth > 12 {
            return bad(format!("depth must be in 1..=12, got {}", self.depth));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be at least 1".into());
        }
        if self.in_channels != 1 || self.out_channels != 2 {
            return bad(format!(
                "expected 1 input and 2 output channels, got {} and {}",
                self.in_channels, self.out_channels
            ));
        }
        let step = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(step) {
            return bad(format!(
                "input size {} is not a positive multiple of 2^{} = {step}",
                self.input_size, self.depth
            ));
        }
        Ok(())
    }

    /// Feature channels at encoder level `l` (`l == depth` is the bottleneck).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Name, shape and initialisation fan-in of each parameter, in storage order.
pub(crate) fn param_specs(cfg: &UNetConfig) -> Vec<(String, [usize; 4], usize)> {
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, name: String, cin: usize, cout: usize| {
        out.push((format!("{name}.weight"), [cout, cin, 3, 3], cin * 9));
        out.push((format!("{name}.bias"), [cout, 1, 1, 1], 0));
    };
    for l in 0..cfg.depth {
        let cin = if l == 0 { cfg.in_channels } else { cfg.channels(l - 1) };
        conv(&mut out, format!("enc{l}.conv1"), cin, cfg.channels(l));
        conv(&mut out, format!("enc{l}.conv2"), cfg.channels(l), cfg.channels(l));
    }
    let cb = cfg.channels(cfg.depth);
    conv(&mut out, "bottleneck.conv1".into(), cfg.channels(cfg.depth - 1), cb);
    conv(&mut out, "bottleneck.conv2".into(), cb, cb);
    for l in (0..cfg.depth).rev() {
        let (cl, cup) = (cfg.channels(l), cfg.channels(l + 1));
        out.push((format!("dec{l}.up.weight"), [cup, cl, 2, 2], cup));
        conv(&mut out, format!("dec{l}.conv1"), 2 * cl, cl);
        conv(&mut out, format!("dec{l}.conv2"), cl, cl);
    }
    out.push(("head.weight".into(), [cfg.out_channels, cfg.base_channels, 1, 1], cfg.base_channels));
    out.push(("head.bias".into(), [cfg.out_channels, 1, 1, 1], 0));
    out
}

/// Parameter indices of a conv-relu-conv-relu block.
#[derive(Clone, Copy)]
struct Block {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Block {
    fn at(i: usize) -> Self {
        Self {
            w1: i,
            b1: i + 1,
            w2: i + 2,
            b2: i + 3,
        }
    }
}

struct BlockCache<T> {
    x: Tensor<T>,
    h1: Tensor<T>,
    h2: Tensor<T>,
}

/// Activations kept by [`UNet::forward_cached`] for the backward pass.
pub struct ForwardCache<T> {
    enc: Vec<(BlockCache<T>, PoolIndices)>,
    bottleneck: BlockCache<T>,
    /// Decoder blocks from the deepest level up to level 0.
    dec: Vec<BlockCache<T>>,
    head_in: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T> ForwardCache<T> {
    /// `(name, shape)` of every intermediate tensor in evaluation order.
    pub fn shape_trace(&self) -> Vec<(String, [usize; 4])>
    where
        T: Real,
    {
        let mut t = Vec::new();
        for (l, (b, _)) in self.enc.iter().enumerate() {
            t.push((format!("enc{l}.in"), b.x.shape()));
            t.push((format!("enc{l}.out"), b.h2.shape()));
        }
        t.push(("bottleneck.in".into(), self.bottleneck.x.shape()));
        t.push(("bottleneck.out".into(), self.bottleneck.h2.shape()));
        let depth = self.dec.len();
        for (j, b) in self.dec.iter().enumerate() {
            let l = depth - 1 - j;
            t.push((format!("dec{l}.concat"), b.x.shape()));
            t.push((format!("dec{l}.out"), b.h2.shape()));
        }
        t.push(("probs".into(), self.probs.shape()));
        t
    }
}

/// U-Net with manual forward and backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    config: UNetConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> UNet<T> {
    /// He-uniform weights drawn in storage order from `rng`; zero biases.
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self, UnetError> {
        config.validate()?;
        let (names, params) = param_specs(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let t = if fan_in == 0 {
                    Tensor::zeros(shape)
                } else {
                    Tensor::he_uniform(shape, fan_in, rng)
                };
                (name, t)
            })
            .unzip();
        Ok(Self { config, names, params })
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_params(config: UNetConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, UnetError> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != named.len() {
            return Err(UnetError::Format(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in specs.iter().zip(&named) {
            if name != got_name || *shape != t.shape() {
                return Err(UnetError::Format(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            config: self.config,
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn enc_block(&self, l: usize) -> Block {
        Block::at(4 * l)
    }

    fn bottleneck_block(&self) -> Block {
        Block::at(4 * self.config.depth)
    }

    /// Index of the transposed-conv weight of decoder step `j` (0 = deepest);
    /// the block follows it.
    fn dec_up(&self, j: usize) -> usize {
        4 * self.config.depth + 4 + 5 * j
    }

    fn head(&self) -> usize {
        self.dec_up(self.config.depth)
    }

    fn block_forward(&self, b: Block, x: Tensor<T>) -> Result<BlockCache<T>, UnetError> {
        let p = &self.params;
        let h1 = relu(&conv2d(&x, &p[b.w1], p[b.b1].data())?);
        let h2 = relu(&conv2d(&h1, &p[b.w2], p[b.b2].data())?);
        Ok(BlockCache { x, h1, h2 })
    }

    fn block_backward(
        &self,
        b: Block,
        c: &BlockCache<T>,
        g_h2: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Result<Tensor<T>, UnetError> {
        let p = &self.params;
        let g2 = conv2d_backward(&c.h1, &p[b.w2], &relu_backward(&c.h2, g_h2))?;
        grads[b.w2].add_assign(&g2.weight);
        add_bias(&mut grads[b.b2], &g2.bias);
        let g1 = conv2d_backward(&c.x, &p[b.w1], &relu_backward(&c.h1, &g2.input))?;
        grads[b.w1].add_assign(&g1.weight);
        add_bias(&mut grads[b.b1], &g1.bias);
        Ok(g1.input)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), UnetError> {
        let s = self.config.input_size;
        let [_, c, h, w] = input.shape();
        if c != self.config.in_channels || h != s || w != s {
            return Err(UnetError::SizeMismatch {
                expected: s,
                height: h,
                width: w,
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<ForwardCache<T>, UnetError> {
        self.check_input(input)?;
        let depth = self.config.depth;
        let mut enc = Vec::with_capacity(depth);
        let mut x = input.clone();
        for l in 0..depth {
            let bc = self.block_forward(self.enc_block(l), x)?;
            let (pooled, idx) = maxpool2d(&bc.h2)?;
            enc.push((bc, idx));
            x = pooled;
        }
        let bottleneck = self.block_forward(self.bottleneck_block(), x)?;
        let mut dec: Vec<BlockCache<T>> = Vec::with_capacity(depth);
        for j in 0..depth {
            let l = depth - 1 - j;
            let below = dec.last().map_or(&bottleneck.h2, |b| &b.h2);
            let up = transposed_conv2d(below, &self.params[self.dec_up(j)])?;
            let cat = Tensor::concat_channels(&enc[l].0.h2, &up)?;
            dec.push(self.block_forward(Block::at(self.dec_up(j) + 1), cat)?);
        }
        let h = self.head();
        let head_in = dec.last().expect("depth >= 1").h2.clone();
        let logits = pointwise_conv(&head_in, &self.params[h], self.params[h + 1].data())?;
        let probs = softmax2(&logits)?;
        Ok(ForwardCache {
            enc,
            bottleneck,
            dec,
            head_in,
            probs,
        })
    }

    /// Per-pixel class probabilities `[N, 2, H, W]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, UnetError> {
        Ok(self.forward_cached(input)?.probs)
    }

    /// Parameter gradients given the gradient of a scalar loss w.r.t. the probabilities.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_probs: &Tensor<T>) -> Result<Vec<Tensor<T>>, UnetError> {
        let depth = self.config.depth;
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let g_logits = softmax2_backward(&cache.probs, grad_probs)?;
        let h = self.head();
        let gh = pointwise_conv_backward(&cache.head_in, &self.params[h], &g_logits)?;
        grads[h].add_assign(&gh.weight);
        add_bias(&mut grads[h + 1], &gh.bias);

        let mut g = gh.input;
        let mut g_skip = vec![None; depth];
        for j in (0..depth).rev() {
            let l = depth - 1 - j;
            let up_i = self.dec_up(j);
            let g_cat = self.block_backward(Block::at(up_i + 1), &cache.dec[j], &g, &mut grads)?;
            let (gs, gu) = g_cat.split_channels(self.config.channels(l));
            g_skip[l] = Some(gs);
            let below = if j == 0 { &cache.bottleneck.h2 } else { &cache.dec[j - 1].h2 };
            let (gi, gw) = transposed_conv2d_backward(below, &self.params[up_i], &gu)?;
            grads[up_i].add_assign(&gw);
            g = gi;
        }
        g = self.block_backward(self.bottleneck_block(), &cache.bottleneck, &g, &mut grads)?;
        for l in (0..depth).rev() {
            let (bc, idx) = &cache.enc[l];
            let mut g_h2 = maxpool2d_backward(&g, idx)?;
            g_h2.add_assign(g_skip[l].as_ref().expect("filled by decoder loop"));
            g = self.block_backward(self.enc_block(l), bc, &g_h2, &mut grads)?;
        }
        Ok(grads)
    }

    /// Loss over the batch and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        input: &Tensor<T>,
        targets: &[BinaryMask],
        loss: &LossConfig,
    ) -> Result<(f64, Vec<Tensor<T>>), UnetError> {
        let cache = self.forward_cached(input)?;
        let value = weighted_loss(&cache.probs, targets, loss)?;
        let gp = weighted_loss_backward(&cache.probs, targets, loss)?;
        Ok((value, self.backward(&cache, &gp)?))
    }
}

fn add_bias<T: Real>(dst: &mut Tensor<T>, g: &[T]) {
    for (d, &v) in dst.data_mut().iter_mut().zip(g) {
        *d += v;
    }
}

/// `[1, 1, H, W]` tensor with foreground 1 and background 0.
pub fn mask_to_tensor<T: Real>(mask: &BinaryMask) -> Tensor<T> {
    let (h, w) = mask.dims();
    let data = mask.data().iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    Tensor::from_vec([1, 1, h, w], data).expect("mask dims")
}

/// Per-pixel argmax of sample `n`; a tie goes to the skeleton class.
pub fn binarize<T: Real>(probs: &Tensor<T>, n: usize) -> BinaryMask {
    let (h, w) = probs.spatial();
    let p = probs.sample(n);
    let hw = h * w;
    BinaryMask::from_fn(w as u32, h as u32, |r, c| {
        let i = r * w + c;
        p[hw + i] >= p[i]
    })
}
