//! The full encoder-decoder network.
//!
//! Four encoder stages at `H/4 .. H/32` resolution, each a stack of either
//! separable-convolution blocks (per frame) or spatio-temporal Mamba blocks
//! (across frames). The decoder mirrors the stage kinds, adds 1x1-projected
//! encoder features at each scale, and a 1x1 head with bilinear x4
//! upsampling produces per-pixel logits for every frame.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockConfig, Downsample, PatchEmbed, SepConvBlock, StMambaBlock, StageFeature, Upsample, PATCH};
use crate::nn::{join, Linear, Module};
use crate::scan::ModeSet;
use crate::tensor::{invalid, shape_err, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Conv,
    Mamba,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Conv => "conv",
            StageKind::Mamba => "mamba",
        })
    }
}

impl FromStr for StageKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv" | "c" => Ok(StageKind::Conv),
            "mamba" | "m" => Ok(StageKind::Mamba),
            other => Err(format!("unknown stage kind '{other}'")),
        }
    }
}

/// Per-stage block kinds: `[Conv, Conv, Mamba, Mamba]` is the hierarchical
/// default; all-conv and all-mamba are the image-level and video-level
/// ablations.
pub const HIERARCHICAL: [StageKind; 4] = [StageKind::Conv, StageKind::Conv, StageKind::Mamba, StageKind::Mamba];
pub const IMAGE_LEVEL: [StageKind; 4] = [StageKind::Conv; 4];
pub const VIDEO_LEVEL: [StageKind; 4] = [StageKind::Mamba; 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub blocks: BlockConfig,
    pub stage_kinds: [StageKind; 4],
    pub scan_modes: ModeSet,
    pub share_directions: bool,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            blocks: BlockConfig::default(),
            stage_kinds: HIERARCHICAL,
            scan_modes: ModeSet::all(),
            share_directions: false,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        self.blocks.validate()?;
        if self.stage_kinds.contains(&StageKind::Mamba) && self.scan_modes.is_empty() {
            return Err(invalid("NetConfig", "a mamba stage needs at least one scan mode"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Conv(SepConvBlock),
    Mamba(StMambaBlock),
}

impl Block {
    fn new(rng: &mut ChaCha8Rng, kind: StageKind, channels: usize, cfg: &NetConfig) -> Self {
        let b = &cfg.blocks;
        match kind {
            StageKind::Conv => Block::Conv(SepConvBlock::new(rng, channels, b.conv_expansion, b.ffn_expansion)),
            StageKind::Mamba => Block::Mamba(StMambaBlock::new(
                rng,
                channels,
                b.d_state,
                b.ffn_expansion,
                cfg.share_directions,
            )),
        }
    }

    pub fn forward(&self, f: &StageFeature, modes: ModeSet) -> Result<StageFeature> {
        match self {
            Block::Conv(b) => b.forward(f),
            Block::Mamba(b) => b.forward(f, f.grid()?, modes),
        }
    }

    pub fn zero_residual_outputs(&mut self) {
        match self {
            Block::Conv(b) => b.zero_residual_outputs(),
            Block::Mamba(b) => b.zero_residual_outputs(),
        }
    }
}

impl Module for Block {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Block::Conv(b) => b.visit(&join(prefix, "conv"), f),
            Block::Mamba(b) => b.visit(&join(prefix, "mamba"), f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub blocks: Vec<Block>,
}

impl Stage {
    pub fn forward(&self, f: StageFeature, modes: ModeSet) -> Result<StageFeature> {
        self.blocks.iter().try_fold(f, |f, b| b.forward(&f, modes))
    }
}

impl Module for Stage {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &i.to_string()), f);
        }
    }
}

/// 1x1 convolution on `[T, C, H, W]` expressed over the channel axis.
fn pointwise(lin: &Linear, x: &Tensor) -> Result<Tensor> {
    lin.forward(&x.permute(&[0, 2, 3, 1])?)?.permute(&[0, 3, 1, 2])
}

#[derive(Debug, Clone)]
pub struct HssNet {
    pub config: NetConfig,
    pub embed: PatchEmbed,
    pub encoder: Vec<Stage>,
    pub down: Vec<Downsample>,
    pub decoder: Vec<Stage>,
    pub up: Vec<Upsample>,
    /// 1x1 projections of encoder stages 1..3 before fusion.
    pub skip: Vec<Linear>,
    pub head: Linear,
}

/// Intermediate features of one forward pass.
pub struct ForwardTrace {
    pub encoder: Vec<StageFeature>,
    pub decoder: Vec<StageFeature>,
    /// `[T, 1, H, W]` per-pixel logits.
    pub logits: Tensor,
}

impl HssNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let ch = config.blocks.channels;
        let embed = PatchEmbed::new(&mut rng, ch[0]);
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        for i in 0..4 {
            let blocks = (0..config.blocks.encoder_blocks[i])
                .map(|_| Block::new(&mut rng, config.stage_kinds[i], ch[i], &config))
                .collect();
            encoder.push(Stage { blocks });
            if i < 3 {
                down.push(Downsample::new(&mut rng, ch[i]));
            }
        }
        let mut decoder = Vec::new();
        let mut up = Vec::new();
        let mut skip = Vec::new();
        for i in 0..4 {
            let blocks = (0..config.blocks.decoder_blocks[i])
                .map(|_| Block::new(&mut rng, config.stage_kinds[i], ch[i], &config))
                .collect();
            decoder.push(Stage { blocks });
            if i < 3 {
                up.push(Upsample::new(&mut rng, ch[i + 1]));
                skip.push(Linear::new(&mut rng, ch[i], ch[i], true));
            }
        }
        let head = Linear::new(&mut rng, ch[0], 1, true);
        Ok(Self { config, embed, encoder, down, decoder, up, skip, head })
    }

    pub fn forward(&self, clip: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(clip)?.logits)
    }

    pub fn forward_trace(&self, clip: &Tensor) -> Result<ForwardTrace> {
        let &[t, 1, h, w] = clip.shape() else {
            return Err(shape_err("hssnet", format!("expected [T, 1, H, W], got {:?}", clip.shape())));
        };
        let modes = self.config.scan_modes;
        let mut encoder: Vec<StageFeature> = Vec::with_capacity(4);
        let mut f = self.embed.forward(clip)?;
        for i in 0..4 {
            if i > 0 {
                f = self.down[i - 1].forward(&f)?;
            }
            f = self.encoder[i].forward(f, modes)?;
            f.check_size_law(h, w)?;
            encoder.push(f.clone());
        }
        let mut decoder: Vec<StageFeature> = vec![];
        let mut d = self.decoder[3].forward(f, modes)?;
        decoder.push(d.clone());
        for i in (0..3).rev() {
            let up = self.up[i].forward(&d)?;
            let fused = up.data.add(&pointwise(&self.skip[i], &encoder[i].data)?)?;
            d = self.decoder[i].forward(StageFeature::new(fused, i + 1)?, modes)?;
            d.check_size_law(h, w)?;
            decoder.push(d.clone());
        }
        decoder.reverse();
        let logits = pointwise(&self.head, &d.data)?.upsample_bilinear2d(PATCH)?;
        debug_assert_eq!(logits.shape(), &[t, 1, h, w]);
        Ok(ForwardTrace { encoder, decoder, logits })
    }

    /// Zeroes every residual branch output so each block is the identity.
    pub fn zero_residual_outputs(&mut self) {
        for stage in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            stage.blocks.iter_mut().for_each(Block::zero_residual_outputs);
        }
    }

    /// `key = value` lines describing the architecture; checkpoints store
    /// this so a mismatched configuration is rejected on load.
    pub fn manifest(&self) -> Vec<(String, String)> {
        let c = &self.config;
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("channels".into(), list(&c.blocks.channels)),
            ("encoder_blocks".into(), list(&c.blocks.encoder_blocks)),
            ("decoder_blocks".into(), list(&c.blocks.decoder_blocks)),
            ("ffn_expansion".into(), c.blocks.ffn_expansion.to_string()),
            ("conv_expansion".into(), c.blocks.conv_expansion.to_string()),
            ("d_state".into(), c.blocks.d_state.to_string()),
            (
                "stage_types".into(),
                c.stage_kinds.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            ),
            ("scan_modes".into(), c.scan_modes.to_string()),
            ("share_directions".into(), c.share_directions.to_string()),
        ]
    }
}

impl Module for HssNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.embed.visit(&join(prefix, "embed"), f);
        for (i, s) in self.encoder.iter_mut().enumerate() {
            s.visit(&join(prefix, &format!("encoder{}", i + 1)), f);
        }
        for (i, d) in self.down.iter_mut().enumerate() {
            d.visit(&join(prefix, &format!("down{}", i + 1)), f);
        }
        for (i, s) in self.decoder.iter_mut().enumerate() {
            s.visit(&join(prefix, &format!("decoder{}", i + 1)), f);
        }
        for (i, u) in self.up.iter_mut().enumerate() {
            u.visit(&join(prefix, &format!("up{}", i + 2)), f);
        }
        for (i, s) in self.skip.iter_mut().enumerate() {
            s.visit(&join(prefix, &format!("skip{}", i + 1)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}
