//! The super-resolution network `f` and the auxiliary network `g`.
//!
//! Both share a body of wide-activation residual blocks:
//!
//! ```text
//! wide:  1x1 N->6N, LeakyReLU, 1x1 6N->int(4.8N), 3x3 int(4.8N)->int(4.8N),
//!        1D(15, width) int(4.8N)->int(4.8N), 1D(15, height) int(4.8N)->N, + input
//! plain: 1x1 N->6N, LeakyReLU, 1x1 6N->int(4.8N), 3x3 int(4.8N)->N, + input
//! ```
//!
//! `f` ends with a 3x3 conv to 4 channels and a 2x pixel shuffle; `g` ends
//! with a 3x3 conv to 1 channel.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, FormatError, Result};
use crate::ops::Axis;
use crate::tensor::{DType, Scalar, Tensor};

pub const LARGE_KERNEL: usize = 15;
pub const UPSCALE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockVariant {
    /// Residual block with the two large 1D convolutions.
    Wide,
    /// Residual block without 1D convolutions.
    Plain,
}

impl BlockVariant {
    fn code(self) -> u32 {
        match self {
            BlockVariant::Wide => 0,
            BlockVariant::Plain => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(BlockVariant::Wide),
            1 => Some(BlockVariant::Plain),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_feats: usize,
    pub n_blocks: usize,
    pub variant: BlockVariant,
    /// Adds the input (nearest-neighbour upsampled for `f`) to the output.
    pub global_skip: bool,
    pub slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            n_feats: 16,
            n_blocks: 4,
            variant: BlockVariant::Wide,
            global_skip: false,
            slope: 0.1,
        }
    }

    pub fn full() -> Self {
        ModelConfig {
            n_feats: 80,
            n_blocks: 12,
            ..Self::desk()
        }
    }

    pub fn full_plain() -> Self {
        ModelConfig {
            n_feats: 135,
            n_blocks: 12,
            variant: BlockVariant::Plain,
            ..Self::desk()
        }
    }

    /// int(4.8 N), truncated toward zero.
    pub fn reduced_feats(&self) -> usize {
        self.n_feats * 48 / 10
    }

    pub fn expanded_feats(&self) -> usize {
        6 * self.n_feats
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_feats == 0 {
            return Err(Error::invalid("n_feats must be positive"));
        }
        crate::ops::check_slope(self.slope)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Square(usize),
    Line(Axis),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub kind: ConvKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    fn zeros(kind: ConvKind, cin: usize, cout: usize) -> Self {
        let shape = match kind {
            ConvKind::Square(k) => vec![cout, cin, k, k],
            ConvKind::Line(_) => vec![cout, cin, LARGE_KERNEL],
        };
        Conv {
            kind,
            weight: Tensor::zeros(&shape),
            bias: Tensor::zeros(&[cout]),
        }
    }

    fn fan_in(&self) -> usize {
        self.weight.shape()[1..].iter().product()
    }

    fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    fn apply(&self, tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        match self.kind {
            ConvKind::Square(_) => tape.conv2d(x, w, b),
            ConvKind::Line(axis) => tape.conv1d_axis(x, w, b, axis),
        }
    }
}

/// One residual block; `convs` is in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub variant: BlockVariant,
    pub convs: Vec<Conv<T>>,
}

impl<T: Scalar> ResBlock<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (n, e, r) = (cfg.n_feats, cfg.expanded_feats(), cfg.reduced_feats());
        let convs = match cfg.variant {
            BlockVariant::Wide => vec![
                Conv::zeros(ConvKind::Square(1), n, e),
                Conv::zeros(ConvKind::Square(1), e, r),
                Conv::zeros(ConvKind::Square(3), r, r),
                Conv::zeros(ConvKind::Line(Axis::Width), r, r),
                Conv::zeros(ConvKind::Line(Axis::Height), r, n),
            ],
            BlockVariant::Plain => vec![
                Conv::zeros(ConvKind::Square(1), n, e),
                Conv::zeros(ConvKind::Square(1), e, r),
                Conv::zeros(ConvKind::Square(3), r, n),
            ],
        };
        ResBlock {
            variant: cfg.variant,
            convs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv::param_count).sum()
    }
}

/// Multiplier on the tail conv's Kaiming init.
pub const TAIL_INIT_SCALE: f64 = 0.1;

/// Parameters shared by both networks: head, residual body, tail.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T> {
    pub config: ModelConfig,
    pub head: Conv<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub tail: Conv<T>,
}

impl<T: Scalar> Backbone<T> {
    fn zeros(config: &ModelConfig, out_channels: usize) -> Result<Self> {
        config.validate()?;
        Ok(Backbone {
            config: config.clone(),
            head: Conv::zeros(ConvKind::Square(3), 1, config.n_feats),
            blocks: (0..config.n_blocks).map(|_| ResBlock::zeros(config)).collect(),
            tail: Conv::zeros(ConvKind::Square(3), config.n_feats, out_channels),
        })
    }

    fn convs(&self) -> impl Iterator<Item = &Conv<T>> {
        std::iter::once(&self.head)
            .chain(self.blocks.iter().flat_map(|b| b.convs.iter()))
            .chain(std::iter::once(&self.tail))
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv<T>> {
        std::iter::once(&mut self.head)
            .chain(self.blocks.iter_mut().flat_map(|b| b.convs.iter_mut()))
            .chain(std::iter::once(&mut self.tail))
    }

    /// Kaiming fan-in normal init with zeroed biases; the last conv of every
    /// residual branch starts at zero so each block is the identity, and the
    /// tail is scaled down by [`TAIL_INIT_SCALE`] so outputs start near zero.
    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = self.config.slope;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        for conv in self.convs_mut() {
            let std = gain / (conv.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in conv.weight.data_mut() {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
        for v in self.tail.weight.data_mut() {
            *v = T::from_f64(v.as_f64() * TAIL_INIT_SCALE);
        }
        for block in &mut self.blocks {
            if let Some(last) = block.convs.last_mut() {
                last.weight = Tensor::zeros(last.weight.shape());
            }
        }
    }

    fn param_count(&self) -> usize {
        self.convs().map(Conv::param_count).sum()
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.convs().flat_map(|c| [&c.weight, &c.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.convs_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }

    fn body(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let mut it = vars.chunks_exact(2);
        let mut next = |conv: &Conv<T>, tape: &mut Tape<T>, input: Var| -> Result<Var> {
            let pair = it.next().expect("bound parameter count");
            conv.apply(tape, input, pair[0], pair[1])
        };
        let mut h = next(&self.head, tape, x)?;
        for block in &self.blocks {
            let mut y = next(&block.convs[0], tape, h)?;
            y = tape.leaky_relu(y, self.config.slope)?;
            for conv in &block.convs[1..] {
                y = next(conv, tape, y)?;
            }
            h = tape.add(h, y)?;
        }
        next(&self.tail, tape, h)
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, min_extent: usize) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!(
            "networks take single-channel input, got {c} channels"
        )));
    }
    if h < min_extent || w < min_extent {
        return Err(Error::shape(format!(
            "input extents {h}x{w} below the minimum {min_extent}"
        )));
    }
    Ok(())
}

/// Parameters bound to leaves of a tape for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Common surface of [`SrNet`] and [`GNet`].
pub trait Network<T: Scalar>: Clone {
    fn backbone(&self) -> &Backbone<T>;
    fn backbone_mut(&mut self) -> &mut Backbone<T>;

    /// Records the forward pass; `x` is `[B, 1, H, W]`.
    fn forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var>;

    fn config(&self) -> &ModelConfig {
        &self.backbone().config
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.backbone().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.backbone_mut().params_mut()
    }

    fn param_count(&self) -> usize {
        self.backbone().param_count()
    }

    /// Places every parameter on the tape, as trainable leaves or constants.
    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params()
                .into_iter()
                .map(|p| tape.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    /// Forward pass without gradient recording.
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// `f`: maps `[B, 1, H, W]` to `[B, 1, 2H, 2W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SrNet<T> {
    pub net: Backbone<T>,
}

/// `g`: maps `[B, 1, H, W]` to `[B, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GNet<T> {
    pub net: Backbone<T>,
}

impl<T: Scalar> SrNet<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Ok(SrNet {
            net: Backbone::zeros(config, UPSCALE * UPSCALE)?,
        })
    }

    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut s = Self::zeros(config)?;
        s.net.init(seed);
        Ok(s)
    }
}

impl<T: Scalar> GNet<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Ok(GNet {
            net: Backbone::zeros(config, 1)?,
        })
    }

    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut s = Self::zeros(config)?;
        s.net.init(seed);
        Ok(s)
    }
}

pub const MIN_EXTENT: usize = 8;

impl<T: Scalar> Network<T> for SrNet<T> {
    fn backbone(&self) -> &Backbone<T> {
        &self.net
    }

    fn backbone_mut(&mut self) -> &mut Backbone<T> {
        &mut self.net
    }

    fn forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        check_input(tape.value(x), MIN_EXTENT)?;
        let y = self.net.body(tape, &bound.vars, x)?;
        let y = tape.pixel_shuffle(y, UPSCALE)?;
        if self.net.config.global_skip {
            // nearest-neighbour copy of the input as the identity path
            let (b, _, h, w) = tape.value(x).dims4()?;
            let src = tape.value(x).data().to_vec();
            let rep: Vec<T> = (0..b * UPSCALE * UPSCALE)
                .flat_map(|i| src[(i / 4) * h * w..(i / 4 + 1) * h * w].to_vec())
                .collect();
            let stacked = tape.constant(Tensor::new(&[b, UPSCALE * UPSCALE, h, w], rep)?);
            let up = tape.pixel_shuffle(stacked, UPSCALE)?;
            return tape.add(y, up);
        }
        Ok(y)
    }
}

impl<T: Scalar> Network<T> for GNet<T> {
    fn backbone(&self) -> &Backbone<T> {
        &self.net
    }

    fn backbone_mut(&mut self) -> &mut Backbone<T> {
        &mut self.net
    }

    fn forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        check_input(tape.value(x), MIN_EXTENT)?;
        let y = self.net.body(tape, &bound.vars, x)?;
        if self.net.config.global_skip {
            return tape.add(y, x);
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all little-endian):
//   magic "USRM" | version u32 | kind u32 (0 = f, 1 = g) | dtype u32
//   | n_feats u32 | n_blocks u32 | variant u32 | global_skip u32 | slope f64
//   | tensor count u32
//   | per tensor: rank u32, extents u32 x rank, values (f32 or f64)
// Tensors appear in declaration order: head, blocks (conv weight, bias ...),
// tail.
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"USRM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Sr,
    G,
}

impl NetKind {
    fn code(self) -> u32 {
        match self {
            NetKind::Sr => 0,
            NetKind::G => 1,
        }
    }
}

/// Networks that can be written to and read from a checkpoint.
pub trait Checkpoint<T: Scalar>: Network<T> + Sized {
    const KIND: NetKind;

    fn empty(config: &ModelConfig) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            Self::KIND.code(),
            T::DTYPE.code(),
            cfg.n_feats as u32,
            cfg.n_blocks as u32,
            cfg.variant.code(),
            cfg.global_skip as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&cfg.slope.to_le_bytes());
        let params = self.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.data() {
                match T::DTYPE {
                    DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
                }
            }
        }
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take_array::<4>()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnknownVersion(version));
        }
        let kind = r.u32()?;
        if kind != Self::KIND.code() {
            return Err(FormatError::MalformedHeader(format!(
                "checkpoint holds network kind {kind}, expected {}",
                Self::KIND.code()
            )));
        }
        let dtype_code = r.u32()?;
        let dtype = DType::from_code(dtype_code).ok_or(FormatError::UnknownDtype(dtype_code))?;
        let n_feats = r.u32()? as usize;
        let n_blocks = r.u32()? as usize;
        let variant_code = r.u32()?;
        let variant = BlockVariant::from_code(variant_code).ok_or_else(|| {
            FormatError::MalformedHeader(format!("unknown block variant {variant_code}"))
        })?;
        let global_skip = r.u32()? != 0;
        let slope = r.f64()?;
        let config = ModelConfig {
            n_feats,
            n_blocks,
            variant,
            global_skip,
            slope,
        };
        let mut net = Self::empty(&config)
            .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = net.params_mut();
        if count != params.len() {
            return Err(FormatError::MalformedHeader(format!(
                "checkpoint holds {count} tensors, configuration needs {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if shape != p.shape() {
                return Err(FormatError::MalformedHeader(format!(
                    "tensor shape {shape:?} does not match expected {:?}",
                    p.shape()
                )));
            }
            for v in p.data_mut() {
                *v = match dtype {
                    DType::F32 => T::from_f64(f32::from_le_bytes(r.take_array()?) as f64),
                    DType::F64 => T::from_f64(f64::from_le_bytes(r.take_array()?)),
                };
            }
        }
        if r.remaining() != 0 {
            return Err(FormatError::MalformedHeader(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(net)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(path, e))
    }
}

/// Kind and element type recorded in a checkpoint header.
pub fn checkpoint_header(path: &Path) -> Result<(NetKind, DType)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = || -> Result<(NetKind, DType), FormatError> {
        let mut r = ByteReader::new(&bytes);
        let magic = r.take_array::<4>()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnknownVersion(version));
        }
        let kind = match r.u32()? {
            0 => NetKind::Sr,
            1 => NetKind::G,
            k => return Err(FormatError::MalformedHeader(format!("unknown network kind {k}"))),
        };
        let code = r.u32()?;
        Ok((kind, DType::from_code(code).ok_or(FormatError::UnknownDtype(code))?))
    };
    parse().map_err(|e| Error::format(path, e))
}

impl<T: Scalar> Checkpoint<T> for SrNet<T> {
    const KIND: NetKind = NetKind::Sr;

    fn empty(config: &ModelConfig) -> Result<Self> {
        Self::zeros(config)
    }
}

impl<T: Scalar> Checkpoint<T> for GNet<T> {
    const KIND: NetKind = NetKind::G;

    fn empty(config: &ModelConfig) -> Result<Self> {
        Self::zeros(config)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::TruncatedPayload {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn take_array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take_array()?))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take_array()?))
    }
}
