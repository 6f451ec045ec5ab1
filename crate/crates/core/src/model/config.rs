use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ElnConfig;

/// Budget for the end-to-end algorithmic latency, in samples.
pub const MAX_LATENCY_SAMPLES: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Multi-input blocks fed by both encoded streams.
    #[serde(rename = "MI")]
    Mi,
    /// Multi-input blocks with the far-end echo stream ablated.
    L,
    /// Single-stream baseline with one extra conv block per layer.
    O,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Mi => "MI",
            Variant::L => "L",
            Variant::O => "O",
        }
    }

    pub fn has_mi_blocks(self) -> bool {
        self != Variant::O
    }

    pub fn uses_echo_stream(self) -> bool {
        self == Variant::Mi
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MI" => Ok(Variant::Mi),
            "L" => Ok(Variant::L),
            "O" => Ok(Variant::O),
            _ => Err(Error::Config(format!("unknown variant {s:?} (expected MI, L or O)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub enc_filters: usize,
    pub enc_len: usize,
    pub enc_hop: usize,
    pub encoder_relu: bool,
    pub bottleneck: usize,
    pub skip_channels: usize,
    pub block_channels: usize,
    pub block_kernel: usize,
    pub mi_dconv_kernel: usize,
    pub repeats: usize,
    pub blocks_per_repeat: usize,
    /// Frames of right context granted to the last repeat.
    pub lookahead_frames: usize,
    pub eln: ElnConfig,
    pub norm_star_omega: f64,
    /// Reuse the final output block inside the multi-input blocks instead
    /// of giving each layer its own.
    pub share_output_block: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(Variant::Mi)
    }
}

impl ModelConfig {
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            enc_filters: 512,
            enc_len: 40,
            enc_hop: 10,
            encoder_relu: true,
            bottleneck: 256,
            skip_channels: 256,
            block_channels: 512,
            block_kernel: 3,
            mi_dconv_kernel: 128,
            repeats: 4,
            blocks_per_repeat: 8,
            lookahead_frames: 17,
            eln: ElnConfig::default(),
            norm_star_omega: 0.4,
            share_output_block: false,
        }
    }

    /// Toy size for gradient checks and unit tests.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            enc_filters: 8,
            bottleneck: 4,
            skip_channels: 4,
            block_channels: 6,
            mi_dconv_kernel: 8,
            repeats: 3,
            blocks_per_repeat: 2,
            lookahead_frames: 2,
            ..Self::full(variant)
        }
    }

    /// Small enough to train for thousands of steps on one CPU core.
    pub fn desk(variant: Variant) -> Self {
        Self {
            enc_filters: 64,
            bottleneck: 32,
            skip_channels: 32,
            block_channels: 64,
            mi_dconv_kernel: 32,
            repeats: 2,
            blocks_per_repeat: 4,
            lookahead_frames: 14,
            ..Self::full(variant)
        }
    }

    pub fn left_pad(&self) -> usize {
        self.enc_len - self.enc_hop
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.enc_hop)
    }

    pub fn dilation(&self, block: usize) -> usize {
        1 << block
    }

    /// Right-context taps per block of the last repeat: larger dilations
    /// are filled first, each block taking at most `block_kernel - 1` taps.
    pub fn lookahead_taps(&self) -> Result<Vec<usize>> {
        let mut remaining = self.lookahead_frames;
        let mut taps = vec![0; self.blocks_per_repeat];
        for b in (0..self.blocks_per_repeat).rev() {
            let d = self.dilation(b);
            let r = (remaining / d).min(self.block_kernel - 1);
            taps[b] = r;
            remaining -= r * d;
        }
        if remaining > 0 {
            return Err(Error::Config(format!(
                "model.lookahead_frames = {} cannot be realized by the last repeat ({} frames short)",
                self.lookahead_frames, remaining
            )));
        }
        Ok(taps)
    }

    /// Latency accounting: analysis window, synthesis overlap and the
    /// lookahead frames.
    pub fn latency_samples(&self) -> usize {
        self.enc_len + self.left_pad() + self.enc_hop * self.lookahead_frames
    }

    /// Exact reach into the future of one output sample.
    pub fn lookahead_samples(&self) -> usize {
        self.enc_len - 1 + self.enc_hop * self.lookahead_frames
    }

    pub fn causal(self) -> Self {
        Self {
            lookahead_frames: 0,
            ..self
        }
    }

    /// Number of intermediate estimates the multi-level objective expects.
    pub fn intermediate_count(&self) -> usize {
        if self.variant.has_mi_blocks() {
            self.repeats - 1
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model.{m}")));
        let sizes = [
            ("enc_filters", self.enc_filters),
            ("enc_len", self.enc_len),
            ("enc_hop", self.enc_hop),
            ("bottleneck", self.bottleneck),
            ("skip_channels", self.skip_channels),
            ("block_channels", self.block_channels),
            ("block_kernel", self.block_kernel),
            ("mi_dconv_kernel", self.mi_dconv_kernel),
            ("repeats", self.repeats),
            ("blocks_per_repeat", self.blocks_per_repeat),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.enc_len % self.enc_hop != 0 {
            return bad(format!(
                "enc_hop ({}) must divide enc_len ({})",
                self.enc_hop, self.enc_len
            ));
        }
        if self.blocks_per_repeat > 24 {
            return bad("blocks_per_repeat must be <= 24".into());
        }
        if self.variant.has_mi_blocks() && self.repeats < 2 {
            return bad(format!("variant {} needs repeats >= 2", self.variant));
        }
        if !(self.norm_star_omega > 0.0 && self.norm_star_omega <= 1.0) {
            return bad("norm_star_omega must lie in (0, 1]".into());
        }
        self.eln.validate()?;
        self.lookahead_taps()?;
        if self.latency_samples() > MAX_LATENCY_SAMPLES {
            return bad(format!(
                "lookahead_frames = {} gives {} samples of latency, over the {MAX_LATENCY_SAMPLES}-sample budget",
                self.lookahead_frames,
                self.latency_samples()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for v in [Variant::Mi, Variant::L, Variant::O] {
            ModelConfig::full(v).validate().unwrap();
            ModelConfig::tiny(v).validate().unwrap();
            ModelConfig::desk(v).validate().unwrap();
            ModelConfig::full(v).causal().validate().unwrap();
        }
    }

    #[test]
    fn latency_budget() {
        let c = ModelConfig::full(Variant::Mi);
        assert_eq!(c.latency_samples(), 240);
        assert_eq!(c.clone().causal().latency_samples(), 70);
        let over = ModelConfig {
            lookahead_frames: 18,
            ..c
        };
        assert!(over.validate().is_err());
    }

    #[test]
    fn lookahead_allocation_prefers_wide_dilations() {
        let taps = ModelConfig::full(Variant::Mi).lookahead_taps().unwrap();
        assert_eq!(taps, vec![1, 0, 0, 0, 1, 0, 0, 0]);
        let total: usize = taps.iter().enumerate().map(|(b, r)| r << b).sum();
        assert_eq!(total, 17);
        let short = ModelConfig {
            lookahead_frames: 15,
            ..ModelConfig::tiny(Variant::O)
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn receptive_field_of_one_repeat() {
        let c = ModelConfig::full(Variant::O);
        let span: usize = (0..c.blocks_per_repeat).map(|b| c.dilation(b) * (c.block_kernel - 1)).sum();
        assert_eq!(1 + span, 511);
        assert_eq!(
            (0..8).map(|b| c.dilation(b)).collect::<Vec<_>>(),
            vec![1, 2, 4, 8, 16, 32, 64, 128]
        );
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::tiny(Variant::Mi);
        c.enc_hop = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(Variant::L);
        c.repeats = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(Variant::O);
        c.repeats = 1;
        c.validate().unwrap();
        assert!("mi".parse::<Variant>().is_ok() && "x".parse::<Variant>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::desk(Variant::L);
        let s = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<ModelConfig>("bogus = 1").is_err());
    }
}
