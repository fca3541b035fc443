//! Modality-specific 1-D bottleneck ResNet-26 producing unit-norm embeddings.
//!
//! Layout: a strided stem convolution, four stages of bottleneck blocks
//! (`1×1 → k×1 → 1×1`, the middle convolution strided in the first block of
//! each stage), global max pooling over time, a linear projection to the
//! embedding dimension and L2 normalization. Residual shortcuts are
//! parameter-free (strided subsampling plus zero channel padding), so every
//! weighted layer lies on the main path and the default layout `[2,2,2,2]`
//! counts `1 + 3·8 + 1 = 26` weighted layers.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Act, BatchNorm, BnCache, Conv1d, Real};

/// Weighted layers of the architecture this crate implements.
pub const EXPECTED_WEIGHTED_LAYERS: usize = 26;
const EXPANSION: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub block_layout: Vec<usize>,
    pub base_width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            kernel_size: 11,
            stride: 2,
            embed_dim: 512,
            block_layout: vec![2, 2, 2, 2],
            base_width: 16,
        }
    }
}

impl EncoderConfig {
    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    /// Stem conv + three convolutions per bottleneck + the projection.
    pub fn weighted_layers(&self) -> usize {
        1 + 3 * self.block_layout.iter().sum::<usize>() + 1
    }

    /// Channels entering the pooling layer.
    pub fn feature_channels(&self) -> usize {
        let stages = self.block_layout.len().max(1);
        self.base_width * EXPANSION << (stages - 1)
    }

    /// Smallest input length for which every strided layer sees distinct
    /// samples: `stride^(1 + stages)`.
    pub fn min_len(&self) -> usize {
        let strided = 1 + self.block_layout.iter().filter(|&&b| b > 0).count();
        self.stride.pow(strided as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.weighted_layers();
        if layers != EXPECTED_WEIGHTED_LAYERS {
            return Err(Error::LayerCount {
                computed: layers,
                expected: EXPECTED_WEIGHTED_LAYERS,
            });
        }
        let bad = |path: &str, message: &str| Error::Config {
            path: format!("encoder.{path}"),
            message: message.into(),
        };
        if self.block_layout.iter().any(|&b| b == 0) {
            return Err(bad("block_layout", "every stage needs at least one block"));
        }
        if self.in_channels == 0 || self.base_width == 0 || self.embed_dim == 0 {
            return Err(bad("in_channels", "channel counts must be positive"));
        }
        if self.kernel_size % 2 == 0 || self.stride == 0 {
            return Err(bad("kernel_size", "kernel must be odd and stride positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck<F> {
    pub conv1: Conv1d<F>,
    pub bn1: BatchNorm<F>,
    pub conv2: Conv1d<F>,
    pub bn2: BatchNorm<F>,
    pub conv3: Conv1d<F>,
    pub bn3: BatchNorm<F>,
}

impl<F: Real> Bottleneck<F> {
    fn new<R: Rng + ?Sized>(cin: usize, mid: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv1d::new(cin, mid, 1, 1, rng),
            bn1: BatchNorm::new(mid),
            conv2: Conv1d::new(mid, mid, kernel, stride, rng),
            bn2: BatchNorm::new(mid),
            conv3: Conv1d::new(mid, mid * EXPANSION, 1, 1, rng),
            bn3: BatchNorm::new(mid * EXPANSION),
        }
    }

    fn out_channels(&self) -> usize {
        self.conv3.out_channels()
    }

    fn stride(&self) -> usize {
        self.conv2.stride
    }
}

/// Trainable state of one encoder. Also used as the gradient container,
/// in which case the running statistics are unused.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    pub config: EncoderConfig,
    pub seed: u64,
    pub stem: Conv1d<F>,
    pub stem_bn: BatchNorm<F>,
    pub blocks: Vec<Bottleneck<F>>,
    /// `embed_dim × feature_channels`.
    pub head_weight: Array2<F>,
    pub head_bias: Array1<F>,
}

/// Deterministic initialization.
pub fn init_encoder<F: Real>(config: &EncoderConfig, seed: u64) -> Result<EncoderParams<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.kernel_size;
    let w = config.base_width;
    let stem = Conv1d::new(config.in_channels, w, k, config.stride, &mut rng);
    let mut blocks = Vec::new();
    let mut cin = w;
    for (stage, &count) in config.block_layout.iter().enumerate() {
        let mid = w << stage;
        for b in 0..count {
            let stride = if b == 0 { config.stride } else { 1 };
            blocks.push(Bottleneck::new(cin, mid, k, stride, &mut rng));
            cin = mid * EXPANSION;
        }
    }
    let bound = 1.0 / (cin as f64).sqrt();
    let head_weight = Array2::from_shape_simple_fn((config.embed_dim, cin), || F::of(rng.random_range(-bound..bound)));
    Ok(EncoderParams {
        config: config.clone(),
        seed,
        stem,
        stem_bn: BatchNorm::new(w),
        blocks,
        head_weight,
        head_bias: Array1::zeros(config.embed_dim),
    })
}

struct BlockTape<F> {
    input: Act<F>,
    cols1: Array2<F>,
    bn1: BnCache<F>,
    a1: Array2<F>,
    cols2: Array2<F>,
    bn2: BnCache<F>,
    a2: Array2<F>,
    cols3: Array2<F>,
    bn3: BnCache<F>,
    out: Array2<F>,
    out_len: usize,
}

/// Intermediate values of a training-mode forward pass.
pub struct EncoderTape<F> {
    n: usize,
    in_len: usize,
    stem_cols: Array2<F>,
    stem_bn: BnCache<F>,
    stem_out: Act<F>,
    blocks: Vec<BlockTape<F>>,
    last: Act<F>,
    pool_arg: Array2<usize>,
    pooled: Array2<F>,
    embeddings: Array2<F>,
    norms: Array1<F>,
}

impl<F: Real> EncoderParams<F> {
    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Convolution and linear layers on the forward path, found by walking
    /// the network.
    pub fn weighted_layer_audit(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(name, _, _)| name.ends_with(".weight"))
            .count()
    }

    /// Trainable tensors in a fixed order.
    pub fn trainable(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        out.push(self.stem.weight.as_slice().unwrap());
        out.push(self.stem_bn.gamma.as_slice().unwrap());
        out.push(self.stem_bn.beta.as_slice().unwrap());
        for b in &self.blocks {
            for (conv, bn) in [(&b.conv1, &b.bn1), (&b.conv2, &b.bn2), (&b.conv3, &b.bn3)] {
                out.push(conv.weight.as_slice().unwrap());
                out.push(bn.gamma.as_slice().unwrap());
                out.push(bn.beta.as_slice().unwrap());
            }
        }
        out.push(self.head_weight.as_slice().unwrap());
        out.push(self.head_bias.as_slice().unwrap());
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        out.push(self.stem.weight.as_slice_mut().unwrap());
        out.push(self.stem_bn.gamma.as_slice_mut().unwrap());
        out.push(self.stem_bn.beta.as_slice_mut().unwrap());
        for b in &mut self.blocks {
            for (conv, bn) in [(&mut b.conv1, &mut b.bn1), (&mut b.conv2, &mut b.bn2), (&mut b.conv3, &mut b.bn3)] {
                out.push(conv.weight.as_slice_mut().unwrap());
                out.push(bn.gamma.as_slice_mut().unwrap());
                out.push(bn.beta.as_slice_mut().unwrap());
            }
        }
        out.push(self.head_weight.as_slice_mut().unwrap());
        out.push(self.head_bias.as_slice_mut().unwrap());
        out
    }

    /// Every stored tensor, trainable or not, keyed by layer path.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        push_conv(&mut out, "stem.conv".into(), &self.stem);
        push_bn(&mut out, "stem.bn".into(), &self.stem_bn);
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, (c, bn)) in [(&b.conv1, &b.bn1), (&b.conv2, &b.bn2), (&b.conv3, &b.bn3)].into_iter().enumerate() {
                push_conv(&mut out, format!("block{i}.conv{}", j + 1), c);
                push_bn(&mut out, format!("block{i}.bn{}", j + 1), bn);
            }
        }
        out.push(("head.weight".into(), self.head_weight.shape().to_vec(), self.head_weight.as_slice().unwrap()));
        out.push(("head.bias".into(), self.head_bias.shape().to_vec(), self.head_bias.as_slice().unwrap()));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out: Vec<(String, &mut [F])> = Vec::new();
        out.push(("stem.conv.weight".into(), self.stem.weight.as_slice_mut().unwrap()));
        push_bn_mut(&mut out, "stem.bn".into(), &mut self.stem_bn);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (j, (c, bn)) in [(&mut b.conv1, &mut b.bn1), (&mut b.conv2, &mut b.bn2), (&mut b.conv3, &mut b.bn3)]
                .into_iter()
                .enumerate()
            {
                out.push((format!("block{i}.conv{}.weight", j + 1), c.weight.as_slice_mut().unwrap()));
                push_bn_mut(&mut out, format!("block{i}.bn{}", j + 1), bn);
            }
        }
        out.push(("head.weight".into(), self.head_weight.as_slice_mut().unwrap()));
        out.push(("head.bias".into(), self.head_bias.as_slice_mut().unwrap()));
        out
    }

    /// Same-shaped container of zeros, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.trainable_mut() {
            t.iter_mut().for_each(|v| *v = F::zero());
        }
        z
    }

    pub fn cast<G: Real>(&self) -> EncoderParams<G> {
        fn c2<F: Real, G: Real>(a: &Array2<F>) -> Array2<G> {
            a.mapv(|v| G::of(v.f64()))
        }
        fn c1<F: Real, G: Real>(a: &Array1<F>) -> Array1<G> {
            a.mapv(|v| G::of(v.f64()))
        }
        let conv = |c: &Conv1d<F>| Conv1d {
            weight: c2(&c.weight),
            in_channels: c.in_channels,
            kernel: c.kernel,
            stride: c.stride,
        };
        let bn = |b: &BatchNorm<F>| BatchNorm {
            gamma: c1(&b.gamma),
            beta: c1(&b.beta),
            running_mean: c1(&b.running_mean),
            running_var: c1(&b.running_var),
        };
        EncoderParams {
            config: self.config.clone(),
            seed: self.seed,
            stem: conv(&self.stem),
            stem_bn: bn(&self.stem_bn),
            blocks: self
                .blocks
                .iter()
                .map(|b| Bottleneck {
                    conv1: conv(&b.conv1),
                    bn1: bn(&b.bn1),
                    conv2: conv(&b.conv2),
                    bn2: bn(&b.bn2),
                    conv3: conv(&b.conv3),
                    bn3: bn(&b.bn3),
                })
                .collect(),
            head_weight: c2(&self.head_weight),
            head_bias: c1(&self.head_bias),
        }
    }

    fn check_input(&self, x: &Act<F>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} input channels, got {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        let min = self.config.min_len();
        if x.len < min {
            return Err(Error::TooShort {
                what: "encoder input".into(),
                min,
                got: x.len,
            });
        }
        Ok(())
    }

    /// Inference-mode embeddings (`N × embed_dim`, unit rows). Uses the
    /// batch-norm running statistics and mutates nothing.
    pub fn encode_batch(&self, x: &Act<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let mut h = self.stem.forward_eval(x);
        h.data = self.stem_bn.forward_eval(&h.data);
        nn::relu(&mut h.data);
        for b in &self.blocks {
            let a = b.conv1.forward_eval(&h);
            let mut a1 = b.bn1.forward_eval(&a.data);
            nn::relu(&mut a1);
            let a2in = b.conv2.forward_eval(&Act { data: a1, n: a.n, len: a.len });
            let mut a2 = b.bn2.forward_eval(&a2in.data);
            nn::relu(&mut a2);
            let a3 = b.conv3.forward_eval(&Act { data: a2, n: a2in.n, len: a2in.len });
            let mut out = b.bn3.forward_eval(&a3.data);
            out += &nn::shortcut(&h, b.out_channels(), b.stride(), a3.len);
            nn::relu(&mut out);
            h = Act { data: out, n: a3.n, len: a3.len };
        }
        let (pooled, _) = nn::global_max_pool(&h);
        let mut proj = pooled.dot(&self.head_weight.t());
        proj += &self.head_bias;
        Ok(nn::l2_normalize_rows(&proj).0)
    }

    /// Training-mode forward pass with batch statistics. Updates the
    /// running statistics and records what `backward` needs.
    pub fn forward_train(&mut self, x: &Act<F>) -> Result<(Array2<F>, EncoderTape<F>)> {
        self.check_input(x)?;
        let (mut h, stem_cols) = self.stem.forward(x);
        let (mut y, stem_bn) = self.stem_bn.forward_train(&h.data);
        nn::relu(&mut y);
        h.data = y;
        let stem_out = h.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (a, cols1) = b.conv1.forward(&h);
            let (mut a1, bn1) = b.bn1.forward_train(&a.data);
            nn::relu(&mut a1);
            let a1act = Act { data: a1, n: a.n, len: a.len };
            let (a2in, cols2) = b.conv2.forward(&a1act);
            let (mut a2, bn2) = b.bn2.forward_train(&a2in.data);
            nn::relu(&mut a2);
            let a2act = Act { data: a2, n: a2in.n, len: a2in.len };
            let (a3, cols3) = b.conv3.forward(&a2act);
            let (mut out, bn3) = b.bn3.forward_train(&a3.data);
            out += &nn::shortcut(&h, b.conv3.out_channels(), b.conv2.stride, a3.len);
            nn::relu(&mut out);
            let next = Act { data: out.clone(), n: a3.n, len: a3.len };
            tapes.push(BlockTape {
                input: h,
                cols1,
                bn1,
                a1: a1act.data,
                cols2,
                bn2,
                a2: a2act.data,
                cols3,
                bn3,
                out,
                out_len: a3.len,
            });
            h = next;
        }
        let (pooled, pool_arg) = nn::global_max_pool(&h);
        let mut proj = pooled.dot(&self.head_weight.t());
        proj += &self.head_bias;
        let (embeddings, norms) = nn::l2_normalize_rows(&proj);
        let tape = EncoderTape {
            n: x.n,
            in_len: x.len,
            stem_cols,
            stem_bn,
            stem_out,
            blocks: tapes,
            last: h,
            pool_arg,
            pooled,
            embeddings: embeddings.clone(),
            norms,
        };
        Ok((embeddings, tape))
    }

    /// Parameter gradients given `dL/d(embeddings)`.
    pub fn backward(&self, tape: &EncoderTape<F>, d_embed: &Array2<F>) -> EncoderParams<F> {
        let mut g = self.zeros_like();
        let dproj = nn::l2_normalize_backward(&tape.embeddings, &tape.norms, d_embed);
        g.head_weight = dproj.t().dot(&tape.pooled);
        g.head_bias = dproj.sum_axis(ndarray::Axis(0));
        let dpooled = dproj.dot(&self.head_weight);
        let mut dh = nn::global_max_pool_backward(&dpooled, &tape.pool_arg, tape.last.channels(), tape.last.data.ncols());

        for (i, (b, t)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let gb = &mut g.blocks[i];
            nn::relu_backward(&t.out, &mut dh);
            let n = t.input.n;
            let dshort = nn::shortcut_backward(&dh, t.input.channels(), n, t.input.len, b.stride(), t.out_len);

            let (dg3, db3, da3) = b.bn3.backward(&t.bn3, &dh);
            let (dw3, mut da2) = b.conv3.backward(&t.cols3, n, t.out_len, &da3);
            nn::relu_backward(&t.a2, &mut da2);
            let (dg2, db2, da2in) = b.bn2.backward(&t.bn2, &da2);
            let (dw2, mut da1) = b.conv2.backward(&t.cols2, n, t.input.len, &da2in);
            nn::relu_backward(&t.a1, &mut da1);
            let (dg1, db1, da1in) = b.bn1.backward(&t.bn1, &da1);
            let (dw1, dx) = b.conv1.backward(&t.cols1, n, t.input.len, &da1in);

            gb.conv1.weight = dw1;
            gb.bn1.gamma = dg1;
            gb.bn1.beta = db1;
            gb.conv2.weight = dw2;
            gb.bn2.gamma = dg2;
            gb.bn2.beta = db2;
            gb.conv3.weight = dw3;
            gb.bn3.gamma = dg3;
            gb.bn3.beta = db3;
            dh = dx + dshort;
        }

        nn::relu_backward(&tape.stem_out.data, &mut dh);
        let (dgs, dbs, dstem) = self.stem_bn.backward(&tape.stem_bn, &dh);
        let (dws, _) = self.stem.backward(&tape.stem_cols, tape.n, tape.in_len, &dstem);
        g.stem.weight = dws;
        g.stem_bn.gamma = dgs;
        g.stem_bn.beta = dbs;
        g
    }
}

fn push_conv<'a, F: Real>(out: &mut Vec<(String, Vec<usize>, &'a [F])>, name: String, c: &'a Conv1d<F>) {
    let shape = vec![c.out_channels(), c.in_channels, c.kernel];
    out.push((format!("{name}.weight"), shape, c.weight.as_slice().unwrap()));
}

fn push_bn<'a, F: Real>(out: &mut Vec<(String, Vec<usize>, &'a [F])>, name: String, bn: &'a BatchNorm<F>) {
    let n = vec![bn.gamma.len()];
    out.push((format!("{name}.gamma"), n.clone(), bn.gamma.as_slice().unwrap()));
    out.push((format!("{name}.beta"), n.clone(), bn.beta.as_slice().unwrap()));
    out.push((format!("{name}.running_mean"), n.clone(), bn.running_mean.as_slice().unwrap()));
    out.push((format!("{name}.running_var"), n, bn.running_var.as_slice().unwrap()));
}

fn push_bn_mut<'a, F: Real>(out: &mut Vec<(String, &'a mut [F])>, name: String, bn: &'a mut BatchNorm<F>) {
    out.push((format!("{name}.gamma"), bn.gamma.as_slice_mut().unwrap()));
    out.push((format!("{name}.beta"), bn.beta.as_slice_mut().unwrap()));
    out.push((format!("{name}.running_mean"), bn.running_mean.as_slice_mut().unwrap()));
    out.push((format!("{name}.running_var"), bn.running_var.as_slice_mut().unwrap()));
}

/// Encodes one `T × C` window (or early-fused matrix) to a unit-norm
/// embedding.
pub fn encode<F: Real>(params: &EncoderParams<F>, window: ArrayView2<'_, f32>) -> Result<Array1<F>> {
    let x = Act::from_windows([window]);
    let z = params.encode_batch(&x)?;
    Ok(z.row(0).to_owned())
}

/// Concatenates PPG and accelerometer channels into the 4-channel input of
/// an early-fusion encoder. Both windows must have the same length.
pub fn fuse_windows(ppg: ArrayView2<'_, f32>, accel: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    if ppg.nrows() != accel.nrows() {
        return Err(Error::Shape(format!(
            "cannot fuse windows of {} and {} timesteps",
            ppg.nrows(),
            accel.nrows()
        )));
    }
    ndarray::concatenate(ndarray::Axis(1), &[ppg, accel]).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            embed_dim: 16,
            base_width: 4,
            ..Default::default()
        }
    }

    #[test]
    fn default_layout_is_26_layers() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.weighted_layers(), 26);
        let p = init_encoder::<f32>(&cfg, 0).unwrap();
        assert_eq!(p.weighted_layer_audit(), 26);
        assert_eq!(cfg.feature_channels(), 512);
    }

    #[test]
    fn wrong_layout_rejected_with_count() {
        let cfg = EncoderConfig {
            block_layout: vec![3, 4, 6, 3],
            ..Default::default()
        };
        match init_encoder::<f32>(&cfg, 0) {
            Err(Error::LayerCount { computed, expected }) => {
                assert_eq!(computed, 50);
                assert_eq!(expected, 26);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_encoder::<f32>(&tiny(), 3).unwrap();
        let b = init_encoder::<f32>(&tiny(), 3).unwrap();
        let c = init_encoder::<f32>(&tiny(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn early_fusion_stem_takes_four_channels() {
        let cfg = EncoderConfig {
            in_channels: 4,
            ..tiny()
        };
        let p = init_encoder::<f32>(&cfg, 0).unwrap();
        assert_eq!(p.stem.in_channels, 4);
        let ppg = Array2::<f32>::ones((64, 1));
        let acc = Array2::<f32>::zeros((64, 3));
        let fused = fuse_windows(ppg.view(), acc.view()).unwrap();
        let z = encode(&p, fused.view()).unwrap();
        assert_eq!(z.len(), 16);
    }

    #[test]
    fn ppg_30s_gives_512_unit_vector() {
        let cfg = EncoderConfig::default();
        let p = init_encoder::<f32>(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_simple_fn((1500, 1), || rng.random_range(-1.0f32..1.0));
        let z = encode(&p, x.view()).unwrap();
        assert_eq!(z.len(), 512);
        let norm = z.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_short_names_minimum() {
        let p = init_encoder::<f32>(&tiny(), 0).unwrap();
        let x = Array2::<f32>::zeros((16, 3));
        match encode(&p, x.view()) {
            Err(Error::TooShort { min, got, .. }) => assert_eq!((min, got), (32, 16)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn doubling_length_keeps_dimension() {
        let p = init_encoder::<f32>(&tiny(), 0).unwrap();
        for t in [64, 128, 256] {
            let x = Array2::<f32>::from_shape_fn((t, 3), |(i, c)| ((i + c) as f32 * 0.1).sin());
            assert_eq!(encode(&p, x.view()).unwrap().len(), 16);
        }
    }

    #[test]
    fn train_forward_embeddings_are_unit() {
        let mut p = init_encoder::<f64>(&tiny(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Act<f64> = Act {
            data: Array2::from_shape_simple_fn((3, 4 * 64), || rng.random_range(-1.0..1.0)),
            n: 4,
            len: 64,
        };
        let (z, _) = p.forward_train(&x).unwrap();
        for r in z.rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn time_reversal_changes_embedding() {
        let p = init_encoder::<f32>(&tiny(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut differ = 0;
        for _ in 0..100 {
            let x = Array2::from_shape_simple_fn((64, 3), || rng.random_range(-1.0f32..1.0));
            let rev = Array2::from_shape_fn((64, 3), |(t, c)| x[[63 - t, c]]);
            let (a, b) = (encode(&p, x.view()).unwrap(), encode(&p, rev.view()).unwrap());
            if a.iter().zip(b.iter()).any(|(u, v)| (u - v).abs() > 1e-6) {
                differ += 1;
            }
        }
        assert!(differ >= 99, "{differ}");
    }
}
