//! TasNet-style residual echo suppressor with multi-input conv blocks.

mod config;

use ndarray::Array2;

pub use config::{ModelConfig, Variant, MAX_LATENCY_SAMPLES};

use crate::audio::{rng_from_seed, Rng, Waveform};
use crate::error::{Error, Result};
use crate::nn::params::{fan_in_uniform, inverse_softplus};
use crate::nn::{checkpoint, Constraint, ConvSpec, ElnConfig, Latent, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Output of the linear canceller.
    Residual,
    /// Linear echo estimate.
    Echo,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    input: Dense,
    prelu1: ParamId,
    norm1: Norm,
    dconv: Dense,
    spec: ConvSpec,
    prelu2: ParamId,
    norm2: Norm,
    residual: Dense,
    skip: Dense,
}

#[derive(Debug, Clone, Copy)]
struct OutputBlock {
    prelu: ParamId,
    proj: Dense,
}

#[derive(Debug, Clone)]
struct MiBlock {
    output: Option<OutputBlock>,
    lambda: ParamId,
    sub_norm: Norm,
    sub_proj: Dense,
    echo: Option<(Norm, Dense)>,
    cat_norm: Norm,
    main_in: Dense,
    dconv: Dense,
    dconv_spec: ConvSpec,
    prelu: ParamId,
    out_norm: Norm,
    residual: Dense,
}

#[derive(Debug, Clone)]
struct Layer {
    mi: Option<MiBlock>,
    blocks: Vec<ConvBlock>,
}

#[derive(Debug, Clone)]
struct Ids {
    enc_a: ParamId,
    enc_b: Option<ParamId>,
    dec: ParamId,
    bottleneck_norm: Norm,
    bottleneck: Dense,
    layers: Vec<Layer>,
    output: OutputBlock,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let v = fan_in_uniform(rows, cols, fan_in, self.rng);
        self.store.add(name, v, Constraint::None)
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize, bias: bool) -> Dense {
        let w = self.weight(format!("{name}.w"), out, inp, inp);
        let b = bias.then(|| {
            self.store
                .add(format!("{name}.b"), Array2::zeros((out, 1)), Constraint::None)
        });
        Dense { w, b }
    }

    fn depthwise(&mut self, name: &str, channels: usize, kernel: usize) -> Dense {
        let w = self.weight(format!("{name}.w"), channels, kernel, kernel);
        let b = self
            .store
            .add(format!("{name}.b"), Array2::zeros((channels, 1)), Constraint::None);
        Dense { w, b: Some(b) }
    }

    fn norm(&mut self, name: &str, features: usize) -> Norm {
        Norm {
            gamma: self
                .store
                .add(format!("{name}.gamma"), Array2::ones((features, 1)), Constraint::None),
            beta: self
                .store
                .add(format!("{name}.beta"), Array2::zeros((features, 1)), Constraint::None),
        }
    }

    fn prelu(&mut self, name: &str) -> ParamId {
        self.store
            .add(format!("{name}.slope"), Array2::from_elem((1, 1), 0.25), Constraint::None)
    }

    fn output_block(&mut self, name: &str, cfg: &ModelConfig) -> OutputBlock {
        OutputBlock {
            prelu: self.prelu(&format!("{name}.prelu")),
            proj: self.dense(&format!("{name}.proj"), cfg.enc_filters, cfg.skip_channels, true),
        }
    }

    fn conv_block(&mut self, name: &str, cfg: &ModelConfig, dilation: usize, lookahead: usize) -> ConvBlock {
        let (b, h, sc) = (cfg.bottleneck, cfg.block_channels, cfg.skip_channels);
        ConvBlock {
            input: self.dense(&format!("{name}.in"), h, b, true),
            prelu1: self.prelu(&format!("{name}.prelu1")),
            norm1: self.norm(&format!("{name}.norm1"), h),
            dconv: self.depthwise(&format!("{name}.dconv"), h, cfg.block_kernel),
            spec: ConvSpec::same(cfg.block_kernel, dilation, lookahead),
            prelu2: self.prelu(&format!("{name}.prelu2")),
            norm2: self.norm(&format!("{name}.norm2"), h),
            residual: self.dense(&format!("{name}.res"), b, h, true),
            skip: self.dense(&format!("{name}.skip"), sc, h, true),
        }
    }

    fn mi_block(&mut self, name: &str, cfg: &ModelConfig) -> MiBlock {
        let (n, b) = (cfg.enc_filters, cfg.bottleneck);
        let output = (!cfg.share_output_block).then(|| self.output_block(&format!("{name}.ob"), cfg));
        let lambda = self.store.add(
            format!("{name}.lambda"),
            Array2::from_elem((n, 1), inverse_softplus(1.0)),
            Constraint::Positive,
        );
        let sub_norm = self.norm(&format!("{name}.sub_norm"), n);
        let sub_proj = self.dense(&format!("{name}.sub_proj"), b, n, true);
        let echo = cfg.variant.uses_echo_stream().then(|| {
            (
                self.norm(&format!("{name}.echo_norm"), n),
                self.dense(&format!("{name}.echo_proj"), b, n, true),
            )
        });
        MiBlock {
            output,
            lambda,
            sub_norm,
            sub_proj,
            echo,
            cat_norm: self.norm(&format!("{name}.cat_norm"), 2 * b),
            main_in: self.dense(&format!("{name}.main_in"), b, 2 * b, true),
            dconv: self.depthwise(&format!("{name}.dconv"), b, cfg.mi_dconv_kernel),
            dconv_spec: ConvSpec::causal(cfg.mi_dconv_kernel, 1),
            prelu: self.prelu(&format!("{name}.prelu")),
            out_norm: self.norm(&format!("{name}.out_norm"), b),
            residual: self.dense(&format!("{name}.res"), b, 2 * b, true),
        }
    }
}

/// Tape variables of one forward pass.
#[derive(Debug, Clone)]
pub struct Graph {
    pub s_hat: Var,
    /// Intermediate estimates, shallowest layer first.
    pub intermediates: Vec<Var>,
    pub mask: Var,
    pub intermediate_masks: Vec<Var>,
    /// Skip-sum (stream D) entering each multi-input block.
    pub skip_sums: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub s_hat: Waveform,
    pub intermediates: Vec<Waveform>,
    pub mask: Latent,
    pub intermediate_masks: Vec<Latent>,
}

#[derive(Debug, Clone)]
pub struct TasNet {
    cfg: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

impl TasNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let mut bld = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let (n, l, b) = (cfg.enc_filters, cfg.enc_len, cfg.bottleneck);
        let enc_a = bld.weight("enc_a.w".into(), n, l, l);
        let enc_b = cfg
            .variant
            .uses_echo_stream()
            .then(|| bld.weight("enc_b.w".into(), n, l, l));
        let dec = bld.weight("dec.w".into(), l, n, n);
        let bottleneck_norm = bld.norm("bottleneck.norm", n);
        let bottleneck = bld.dense("bottleneck", b, n, true);
        let taps = cfg.lookahead_taps()?;
        let mut layers = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let mi = (cfg.variant.has_mi_blocks() && r > 0).then(|| bld.mi_block(&format!("layer{r}.mi"), &cfg));
            let mut blocks = Vec::new();
            if cfg.variant == Variant::O && r > 0 {
                blocks.push(bld.conv_block(&format!("layer{r}.extra"), &cfg, 1, 0));
            }
            for m in 0..cfg.blocks_per_repeat {
                let d = cfg.dilation(m);
                let la = if r + 1 == cfg.repeats { taps[m] * d } else { 0 };
                blocks.push(bld.conv_block(&format!("layer{r}.block{m}"), &cfg, d, la));
            }
            layers.push(Layer { mi, blocks });
        }
        let output = bld.output_block("output", &cfg);
        Ok(Self {
            cfg,
            store,
            ids: Ids {
                enc_a,
                enc_b,
                dec,
                bottleneck_norm,
                bottleneck,
                layers,
                output,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Zero-padded analysis frames, `enc_len × K`: frame `k` starts at
    /// sample `k·hop - (enc_len - hop)`.
    pub fn frames(&self, w: &[f64]) -> Result<Latent> {
        if w.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty waveform".into()));
        }
        let (l, hop, pad) = (self.cfg.enc_len, self.cfg.enc_hop, self.cfg.left_pad());
        let k = self.cfg.frame_count(w.len());
        Ok(Array2::from_shape_fn((l, k), |(i, f)| {
            let n = (f * hop + i) as isize - pad as isize;
            if n >= 0 && (n as usize) < w.len() {
                w[n as usize]
            } else {
                0.0
            }
        }))
    }

    fn encode_var(&self, tape: &mut Tape<'_>, w: &[f64], which: Stream) -> Result<Var> {
        let id = match which {
            Stream::Residual => self.ids.enc_a,
            Stream::Echo => self.ids.enc_b.ok_or_else(|| {
                Error::InvalidArgument(format!("variant {} has no echo encoder", self.cfg.variant))
            })?,
        };
        let frames = tape.input(self.frames(w)?);
        let wv = tape.param(id);
        let z = tape.conv1x1(frames, wv, None)?;
        Ok(if self.cfg.encoder_relu { tape.relu(z) } else { z })
    }

    fn decode_var(&self, tape: &mut Tape<'_>, latent: Var, len: usize) -> Result<Var> {
        let w = tape.param(self.ids.dec);
        let frames = tape.conv1x1(latent, w, None)?;
        Ok(tape.overlap_add(frames, self.cfg.enc_hop, self.cfg.left_pad(), len))
    }

    pub fn encode(&self, w: &[f64], which: Stream) -> Result<Latent> {
        let mut tape = Tape::new(&self.store);
        let v = self.encode_var(&mut tape, w, which)?;
        Ok(tape.value(v).to_owned())
    }

    /// Transposed-conv synthesis with overlap-add, trimmed to `len`.
    pub fn decode(&self, latent: &Latent, len: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let x = tape.input(latent.clone());
        let v = self.decode_var(&mut tape, x, len)?;
        Ok(tape.value(v).iter().copied().collect())
    }

    fn dense(tape: &mut Tape<'_>, x: Var, d: &Dense) -> Result<Var> {
        let w = tape.param(d.w);
        let b = d.b.map(|b| tape.param(b));
        tape.conv1x1(x, w, b)
    }

    fn norm(tape: &mut Tape<'_>, x: Var, n: &Norm, cfg: &ElnConfig) -> Result<Var> {
        let g = tape.param(n.gamma);
        let b = tape.param(n.beta);
        tape.eln(x, g, b, cfg)
    }

    fn prelu(tape: &mut Tape<'_>, x: Var, slope: ParamId) -> Var {
        let a = tape.param(slope);
        tape.prelu(x, a)
    }

    fn output_block(tape: &mut Tape<'_>, d_sum: Var, ob: &OutputBlock) -> Result<Var> {
        let p = Self::prelu(tape, d_sum, ob.prelu);
        let z = Self::dense(tape, p, &ob.proj)?;
        Ok(tape.sigmoid(z))
    }

    fn conv_block(&self, tape: &mut Tape<'_>, x: Var, blk: &ConvBlock) -> Result<(Var, Var)> {
        let eln = &self.cfg.eln;
        let h = Self::dense(tape, x, &blk.input)?;
        let h = Self::prelu(tape, h, blk.prelu1);
        let h = Self::norm(tape, h, &blk.norm1, eln)?;
        let w = tape.param(blk.dconv.w);
        let b = blk.dconv.b.map(|b| tape.param(b));
        let h = tape.depthwise(h, w, b, blk.spec)?;
        let h = Self::prelu(tape, h, blk.prelu2);
        let h = Self::norm(tape, h, &blk.norm2, eln)?;
        let res = Self::dense(tape, h, &blk.residual)?;
        let skip = Self::dense(tape, h, &blk.skip)?;
        Ok((tape.add(x, res)?, skip))
    }

    /// Returns the features injected into stream C and the intermediate
    /// mask and representation.
    fn mi_block(
        &self,
        tape: &mut Tape<'_>,
        a: Var,
        echo: Option<Var>,
        d_sum: Var,
        blk: &MiBlock,
    ) -> Result<(Var, Var, Var)> {
        let eln = &self.cfg.eln;
        let star = eln.with_omega(self.cfg.norm_star_omega);
        let ob = blk.output.as_ref().unwrap_or(&self.ids.output);
        let mask = Self::output_block(tape, d_sum, ob)?;
        let f_o = tape.mul(mask, a)?;
        let lambda = tape.param(blk.lambda);
        let scaled = tape.scale_rows(f_o, lambda)?;
        let f_sub = tape.sub(a, scaled)?;
        let sub = Self::norm(tape, f_sub, &blk.sub_norm, &star)?;
        let sub = Self::dense(tape, sub, &blk.sub_proj)?;
        let echo_feat = match (&blk.echo, echo) {
            (Some((n, d)), Some(e)) => {
                let z = Self::norm(tape, e, n, &star)?;
                Self::dense(tape, z, d)?
            }
            (None, _) => {
                let k = tape.value(sub).ncols();
                tape.input(Array2::zeros((self.cfg.bottleneck, k)))
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument("echo stream missing for MI block".into()))
            }
        };
        let cat = tape.concat(sub, echo_feat)?;
        let main = Self::norm(tape, cat, &blk.cat_norm, eln)?;
        let main = Self::dense(tape, main, &blk.main_in)?;
        let w = tape.param(blk.dconv.w);
        let b = blk.dconv.b.map(|b| tape.param(b));
        let main = tape.depthwise(main, w, b, blk.dconv_spec)?;
        let main = Self::prelu(tape, main, blk.prelu);
        let main = Self::norm(tape, main, &blk.out_norm, eln)?;
        let res = Self::dense(tape, cat, &blk.residual)?;
        Ok((tape.add(main, res)?, mask, f_o))
    }

    /// Records the forward pass on `tape`. `d_hat` is required by the MI
    /// variant and ignored by the others.
    pub fn graph(&self, tape: &mut Tape<'_>, s_aec: &[f64], d_hat: Option<&[f64]>) -> Result<Graph> {
        let len = s_aec.len();
        if len < self.cfg.enc_hop {
            return Err(Error::TooShort(format!(
                "model input needs at least {} samples, got {len}",
                self.cfg.enc_hop
            )));
        }
        let echo_wave = if self.cfg.variant.uses_echo_stream() {
            let d = d_hat.ok_or_else(|| {
                Error::InvalidArgument("variant MI needs the linear echo estimate".into())
            })?;
            if d.len() != len {
                return Err(Error::LengthMismatch {
                    left: len,
                    right: d.len(),
                });
            }
            Some(d)
        } else {
            None
        };
        let a = self.encode_var(tape, s_aec, Stream::Residual)?;
        let echo = echo_wave
            .map(|d| self.encode_var(tape, d, Stream::Echo))
            .transpose()?;
        let c0 = Self::norm(tape, a, &self.ids.bottleneck_norm, &self.cfg.eln)?;
        let mut c = Self::dense(tape, c0, &self.ids.bottleneck)?;
        let mut d_sum: Option<Var> = None;
        let mut intermediates = Vec::new();
        let mut intermediate_masks = Vec::new();
        let mut skip_sums = Vec::new();
        for layer in &self.ids.layers {
            if let Some(mi) = &layer.mi {
                let ds = d_sum.expect("multi-input blocks follow the first layer");
                skip_sums.push(ds);
                let (inject, mask, f_o) = self.mi_block(tape, a, echo, ds, mi)?;
                c = tape.add(c, inject)?;
                intermediates.push(self.decode_var(tape, f_o, len)?);
                intermediate_masks.push(mask);
            }
            for blk in &layer.blocks {
                let (next, skip) = self.conv_block(tape, c, blk)?;
                c = next;
                d_sum = Some(match d_sum {
                    None => skip,
                    Some(ds) => tape.add(ds, skip)?,
                });
            }
        }
        let total = d_sum.expect("at least one conv block");
        let mask = Self::output_block(tape, total, &self.ids.output)?;
        let f_o = tape.mul(mask, a)?;
        let s_hat = self.decode_var(tape, f_o, len)?;
        Ok(Graph {
            s_hat,
            intermediates,
            mask,
            intermediate_masks,
            skip_sums,
        })
    }

    pub fn forward(&self, s_aec: &Waveform, d_hat: Option<&Waveform>) -> Result<ForwardOutput> {
        let mut tape = Tape::new(&self.store);
        let g = self.graph(&mut tape, &s_aec.samples, d_hat.map(|d| d.samples.as_slice()))?;
        let wave = |v: Var| Waveform::new(tape.value(v).iter().copied().collect(), s_aec.sample_rate);
        Ok(ForwardOutput {
            s_hat: wave(g.s_hat),
            intermediates: g.intermediates.iter().map(|&v| wave(v)).collect(),
            mask: tape.value(g.mask).to_owned(),
            intermediate_masks: g
                .intermediate_masks
                .iter()
                .map(|&v| tape.value(v).to_owned())
                .collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let cfg = serde_json::to_string(&self.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        checkpoint::save(path, &cfg, &self.store)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (cfg_json, store) = checkpoint::load(path)?;
        let cfg: ModelConfig =
            serde_json::from_str(&cfg_json).map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut model = Self::new(cfg, 0)?;
        model.store.load_values(&store)?;
        Ok(model)
    }
}
