//! Stage building blocks: patch embedding, the per-frame separable
//! convolution block, the cross-frame spatio-temporal Mamba block, and the
//! resolution changes between stages.

use rand::Rng;

use crate::nn::{const_param, join, normal_param, Ffn, LayerNorm, Linear, Module};
use crate::scan::{ModeSet, PatchGrid};
use crate::ssm::{stcs_mix, StcsParams};
use crate::tensor::{invalid, shape_err, Result, Tensor};

/// Feature map of stage `stage` (1-based) for a whole clip, `[T, C, H, W]`.
#[derive(Debug, Clone)]
pub struct StageFeature {
    pub data: Tensor,
    pub stage: usize,
}

impl StageFeature {
    pub fn new(data: Tensor, stage: usize) -> Result<Self> {
        if data.rank() != 4 {
            return Err(shape_err("StageFeature", format!("expected [T, C, H, W], got {:?}", data.shape())));
        }
        Ok(Self { data, stage })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.frames(), self.height(), self.width())
    }

    /// Checks the `H / 2^(stage+1)` size law against the input frame size.
    pub fn check_size_law(&self, input_h: usize, input_w: usize) -> Result<()> {
        let div = 1usize << (self.stage + 1);
        if self.height() * div != input_h || self.width() * div != input_w {
            return Err(shape_err(
                "stage size law",
                format!(
                    "stage {} is {}x{}, expected {}x{} for a {input_h}x{input_w} input",
                    self.stage,
                    self.height(),
                    self.width(),
                    input_h / div,
                    input_w / div
                ),
            ));
        }
        Ok(())
    }
}

/// Widths and depths of the four stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockConfig {
    pub channels: [usize; 4],
    pub encoder_blocks: [usize; 4],
    pub decoder_blocks: [usize; 4],
    pub ffn_expansion: usize,
    pub conv_expansion: usize,
    pub d_state: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128, 256],
            encoder_blocks: [2, 2, 4, 2],
            decoder_blocks: [1, 1, 2, 1],
            ffn_expansion: 4,
            conv_expansion: 4,
            d_state: crate::ssm::DEFAULT_D_STATE,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.channels.iter().chain(&self.encoder_blocks).chain(&self.decoder_blocks).all(|&v| v > 0)
            && self.ffn_expansion > 0
            && self.conv_expansion > 0
            && self.d_state > 0;
        if !positive {
            return Err(invalid("BlockConfig", format!("all sizes must be positive: {self:?}")));
        }
        if self.channels.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(invalid("BlockConfig", format!("channels must double per stage: {:?}", self.channels)));
        }
        Ok(())
    }
}

/// 4x4 stride-4 convolution from single-channel frames to stage 1.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub const PATCH: usize = 4;

/// Initial scale of the last layer of every residual branch, keeping a
/// fresh deep stack close to the identity.
pub const RESIDUAL_GAIN: f64 = 0.1;

impl PatchEmbed {
    pub fn new(rng: &mut impl Rng, channels: usize) -> Self {
        Self {
            kernel: normal_param(rng, &[channels, 1, PATCH, PATCH], 1.0 / PATCH as f64),
            bias: const_param(&[channels], 0.0),
        }
    }

    pub fn forward(&self, clip: &Tensor) -> Result<StageFeature> {
        let &[_, 1, h, w] = clip.shape() else {
            return Err(shape_err("patch_embed", format!("expected [T, 1, H, W], got {:?}", clip.shape())));
        };
        if h % 32 != 0 || w % 32 != 0 {
            return Err(invalid("patch_embed", format!("frame size {h}x{w} must be divisible by 32")));
        }
        StageFeature::new(clip.conv2d(&self.kernel, Some(&self.bias), PATCH, 0, 1)?, 1)
    }
}

impl Module for PatchEmbed {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Inverted-residual separable convolution followed by an FFN, both
/// pre-normalized and residual. Works frame by frame.
#[derive(Debug, Clone)]
pub struct SepConvBlock {
    pub norm1: LayerNorm,
    pub expand: Linear,
    pub dw_kernel: Tensor,
    pub dw_bias: Tensor,
    pub project: Linear,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl SepConvBlock {
    pub fn new(rng: &mut impl Rng, channels: usize, conv_expansion: usize, ffn_expansion: usize) -> Self {
        let hidden = channels * conv_expansion;
        let mut block = Self {
            norm1: LayerNorm::new(channels),
            expand: Linear::new(rng, channels, hidden, true),
            dw_kernel: normal_param(rng, &[hidden, 1, 3, 3], 1.0 / 3.0),
            dw_bias: const_param(&[hidden], 0.0),
            project: Linear::new(rng, hidden, channels, true),
            norm2: LayerNorm::new(channels),
            ffn: Ffn::new(rng, channels, ffn_expansion),
        };
        block.project.scale_weight_(RESIDUAL_GAIN);
        block.ffn.fc2.scale_weight_(RESIDUAL_GAIN);
        block
    }

    /// Zeroes both residual branch outputs, making the block the identity.
    pub fn zero_residual_outputs(&mut self) {
        self.project.zero_();
        self.ffn.fc2.zero_();
    }

    pub fn forward(&self, f: &StageFeature) -> Result<StageFeature> {
        let x = f.data.permute(&[0, 2, 3, 1])?;
        let hidden = self.expand.forward(&self.norm1.forward(&x)?)?.silu()?;
        let hidden = hidden
            .permute(&[0, 3, 1, 2])?
            .conv2d(&self.dw_kernel, Some(&self.dw_bias), 1, 1, self.dw_kernel.shape()[0])?
            .silu()?
            .permute(&[0, 2, 3, 1])?;
        let x = self.project.forward(&hidden)?.add(&x)?;
        let x = self.ffn.forward(&self.norm2.forward(&x)?)?.add(&x)?;
        StageFeature::new(x.permute(&[0, 3, 1, 2])?, f.stage)
    }
}

impl Module for SepConvBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.expand.visit(&join(prefix, "expand"), f);
        f(&join(prefix, "dw_kernel"), &mut self.dw_kernel);
        f(&join(prefix, "dw_bias"), &mut self.dw_bias);
        self.project.visit(&join(prefix, "project"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }
}

/// Flattens the clip into one `[C, T*H*W]` sequence, mixes it with the
/// cross-scan SSM and an FFN (both pre-normalized and residual), and folds
/// it back.
#[derive(Debug, Clone)]
pub struct StMambaBlock {
    pub norm1: LayerNorm,
    pub stcs: StcsParams,
    pub out_proj: Linear,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl StMambaBlock {
    pub fn new(rng: &mut impl Rng, channels: usize, d_state: usize, ffn_expansion: usize, shared: bool) -> Self {
        let mut block = Self {
            norm1: LayerNorm::new(channels),
            stcs: StcsParams::new(rng, channels, d_state, shared),
            out_proj: Linear::new(rng, channels, channels, true),
            norm2: LayerNorm::new(channels),
            ffn: Ffn::new(rng, channels, ffn_expansion),
        };
        block.out_proj.scale_weight_(RESIDUAL_GAIN);
        block.ffn.fc2.scale_weight_(RESIDUAL_GAIN);
        block
    }

    pub fn zero_residual_outputs(&mut self) {
        self.out_proj.zero_();
        self.ffn.fc2.zero_();
    }

    pub fn forward(&self, f: &StageFeature, grid: PatchGrid, modes: ModeSet) -> Result<StageFeature> {
        let (t, c, h, w) = (f.frames(), f.channels(), f.height(), f.width());
        if grid != PatchGrid::new(t, h, w)? {
            return Err(shape_err("st_mamba_block", format!("grid {grid:?} vs feature {:?}", f.data.shape())));
        }
        // [L, C] with L in canonical slot order t*H*W + r*W + c
        let seq = f.data.permute(&[0, 2, 3, 1])?.reshape(&[grid.len(), c])?;
        let mixed = stcs_mix(&self.stcs, &self.norm1.forward(&seq)?.transpose()?, grid, modes)?;
        let seq = self.out_proj.forward(&mixed.transpose()?)?.add(&seq)?;
        let seq = self.ffn.forward(&self.norm2.forward(&seq)?)?.add(&seq)?;
        StageFeature::new(seq.reshape(&[t, h, w, c])?.permute(&[0, 3, 1, 2])?, f.stage)
    }
}

impl Module for StMambaBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.stcs.visit(&join(prefix, "stcs"), f);
        self.out_proj.visit(&join(prefix, "out_proj"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }
}

/// 2x2 stride-2 convolution: halves the resolution, doubles the channels.
#[derive(Debug, Clone)]
pub struct Downsample {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Downsample {
    pub fn new(rng: &mut impl Rng, channels: usize) -> Self {
        Self {
            kernel: normal_param(rng, &[2 * channels, channels, 2, 2], (1.0 / (4 * channels) as f64).sqrt()),
            bias: const_param(&[2 * channels], 0.0),
        }
    }

    pub fn forward(&self, f: &StageFeature) -> Result<StageFeature> {
        if f.height() % 2 != 0 || f.width() % 2 != 0 {
            return Err(invalid("downsample", format!("odd spatial extent {}x{}", f.height(), f.width())));
        }
        StageFeature::new(f.data.conv2d(&self.kernel, Some(&self.bias), 2, 0, 1)?, f.stage + 1)
    }
}

impl Module for Downsample {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Nearest-neighbour x2 followed by a 1x1 convolution halving the channels.
#[derive(Debug, Clone)]
pub struct Upsample {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Upsample {
    pub fn new(rng: &mut impl Rng, channels: usize) -> Self {
        Self {
            kernel: normal_param(rng, &[channels / 2, channels, 1, 1], (1.0 / channels as f64).sqrt()),
            bias: const_param(&[channels / 2], 0.0),
        }
    }

    pub fn forward(&self, f: &StageFeature) -> Result<StageFeature> {
        if f.stage < 2 {
            return Err(invalid("upsample", "stage 1 has no finer stage"));
        }
        // a 1x1 convolution commutes with nearest-neighbour upsampling, so
        // project first on the smaller grid
        let y = f.data.conv2d(&self.kernel, Some(&self.bias), 1, 0, 1)?.upsample_nearest2d(2)?;
        StageFeature::new(y, f.stage - 1)
    }
}

impl Module for Upsample {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
