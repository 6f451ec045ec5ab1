//! Scenario dataset synthesis and the JSON-lines manifest shared by every
//! pipeline stage.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, SignalKind};
use super::rir::{simulate_rir, RoomRanges, RoomSpec};
use super::{make_echo, mix, MixSpec, ScenarioItem, DEFAULT_CLIP_RATIO, SER_SET_DB, SNR_SET_DB};
use crate::audio::{derive_seed, read_wav, rng_from_seed, write_wav, Waveform};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub items: usize,
    pub item_secs: f64,
    pub sample_rate: u32,
    pub ser_set_db: Vec<f64>,
    pub snr_set_db: Vec<f64>,
    /// Fraction of items without near-end speech.
    pub single_talk_fraction: f64,
    /// Fraction of items whose far-end signal is music.
    pub music_fraction: f64,
    pub clip_ratio: f64,
    /// Number of simulated rooms (one mic/loudspeaker placement each).
    pub rooms: usize,
    pub room_ranges: RoomRanges,
    /// Items whose microphone peak exceeds this are rescaled as a whole.
    pub max_peak: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            items: 16,
            item_secs: 4.0,
            sample_rate: 16000,
            ser_set_db: SER_SET_DB.to_vec(),
            snr_set_db: SNR_SET_DB.to_vec(),
            single_talk_fraction: 0.2,
            music_fraction: 0.5,
            clip_ratio: DEFAULT_CLIP_RATIO,
            rooms: 50,
            room_ranges: RoomRanges::default(),
            max_peak: 0.9,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if self.items == 0 {
            return bad("items must be > 0");
        }
        if !(self.item_secs > 0.0) || self.sample_rate == 0 {
            return bad("item_secs and sample_rate must be positive");
        }
        if self.ser_set_db.is_empty() || self.snr_set_db.is_empty() {
            return bad("ser_set_db and snr_set_db must be nonempty");
        }
        if !(0.0..=1.0).contains(&self.single_talk_fraction)
            || !(0.0..=1.0).contains(&self.music_fraction)
        {
            return bad("fractions must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio <= 1.0) {
            return bad("clip_ratio must lie in (0, 1]");
        }
        if self.rooms == 0 || !(self.max_peak > 0.0) {
            return bad("rooms and max_peak must be positive");
        }
        Ok(())
    }

    pub fn item_len(&self) -> usize {
        (self.item_secs * self.sample_rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Talk {
    Double,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPaths {
    pub x: PathBuf,
    pub s: Option<PathBuf>,
    pub d: PathBuf,
    pub v: PathBuf,
    pub y: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_aec: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_hat: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub paths: ItemPaths,
    pub ser_db: f64,
    pub snr_db: f64,
    pub room: RoomSpec,
    pub seed: u64,
    pub far_kind: SignalKind,
    pub talk: Talk,
}

/// Records plus the directory their relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Reads a manifest file, or `manifest.jsonl` inside a directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { root, records })
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<()> {
        let path = self.path();
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for rec in &self.records {
            let line = serde_json::to_string(rec).map_err(|e| Error::Manifest(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Loads the audio of one record. Missing optional streams stay `None`.
    pub fn load_item(&self, rec: &ManifestRecord) -> Result<ScenarioItem> {
        let load = |p: &Path| read_wav(self.resolve(p));
        let opt = |p: &Option<PathBuf>| p.as_deref().map(load).transpose();
        Ok(ScenarioItem {
            x: load(&rec.paths.x)?,
            s: opt(&rec.paths.s)?,
            d: load(&rec.paths.d)?,
            v: load(&rec.paths.v)?,
            y: load(&rec.paths.y)?,
            s_aec: opt(&rec.paths.s_aec)?,
            d_hat: opt(&rec.paths.d_hat)?,
            mix: MixSpec {
                ser_db: rec.ser_db,
                snr_db: rec.snr_db,
                seed: rec.seed,
            },
            room: Some(rec.room.clone()),
        })
    }
}

pub struct Sources<'a> {
    pub far_speech: &'a Corpus,
    pub far_music: &'a Corpus,
    pub near: &'a Corpus,
}

/// Synthesizes one scenario deterministically from `item_seed`.
pub fn synth_item(
    cfg: &SynthConfig,
    sources: &Sources<'_>,
    rooms: &[RoomSpec],
    rirs: &HashMap<usize, Vec<f64>>,
    item_seed: u64,
) -> Result<(ScenarioItem, SignalKind, usize)> {
    let mut rng = rng_from_seed(item_seed);
    let len = cfg.item_len();
    let kind = if rng.random::<f64>() < cfg.music_fraction {
        SignalKind::Music
    } else {
        SignalKind::Speech
    };
    let far = match kind {
        SignalKind::Speech => sources.far_speech,
        SignalKind::Music => sources.far_music,
    };
    let x = far.draw(len, cfg.sample_rate, &mut rng)?;
    let double = rng.random::<f64>() >= cfg.single_talk_fraction;
    let s = if double {
        Some(sources.near.draw(len, cfg.sample_rate, &mut rng)?)
    } else {
        None
    };
    let room_idx = rng.random_range(0..rooms.len());
    let spec = MixSpec {
        ser_db: *cfg.ser_set_db.choose(&mut rng).expect("nonempty SER set"),
        snr_db: *cfg.snr_set_db.choose(&mut rng).expect("nonempty SNR set"),
        seed: derive_seed(item_seed, 1),
    };
    let d_raw = make_echo(&x, &rirs[&room_idx], cfg.clip_ratio)?;
    let mut m = mix(s.as_ref(), &d_raw, &spec, &mut rng_from_seed(spec.seed))?;
    let peak = m.y.peak();
    if peak > cfg.max_peak {
        // Remix from scaled sources so y = s + d + v stays exact.
        let c = cfg.max_peak / peak;
        let s2 = s.as_ref().map(|w| w.scaled(c));
        m = mix(s2.as_ref(), &d_raw.scaled(c), &spec, &mut rng_from_seed(spec.seed))?;
    }
    let room = rooms[room_idx].clone();
    Ok((ScenarioItem::from_mixture(x, m, spec, Some(room)), kind, room_idx))
}

fn build_rooms(cfg: &SynthConfig, master_seed: u64) -> Vec<RoomSpec> {
    let mut rng = rng_from_seed(derive_seed(master_seed, u64::MAX));
    (0..cfg.rooms)
        .map(|_| RoomSpec::random(&cfg.room_ranges, cfg.sample_rate, &mut rng))
        .collect()
}

fn write_opt(dir: &Path, name: &str, w: Option<&Waveform>) -> Result<Option<PathBuf>> {
    w.map(|w| {
        let rel = PathBuf::from(name);
        write_wav(dir.join(&rel), w)?;
        Ok(rel)
    })
    .transpose()
}

/// Writes `cfg.items` scenarios under `out_dir/items/<id>/` plus
/// `out_dir/manifest.jsonl`. Output is a pure function of the inputs and
/// `master_seed`, independent of `jobs`.
pub fn synth_dataset(
    cfg: &SynthConfig,
    sources: &Sources<'_>,
    master_seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<Manifest> {
    cfg.validate()?;
    let rooms = build_rooms(cfg, master_seed);
    let mut used: Vec<usize> = (0..cfg.items)
        .map(|i| {
            // Room choice is replayed cheaply from the item stream.
            let item_seed = derive_seed(master_seed, i as u64);
            peek_room(cfg, sources, &rooms, item_seed)
        })
        .collect::<Result<_>>()?;
    used.sort_unstable();
    used.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rirs: HashMap<usize, Vec<f64>> = pool.install(|| {
        used.par_iter()
            .map(|&r| {
                let mut rng = rng_from_seed(derive_seed(master_seed, r as u64 ^ 0x5249_5200));
                simulate_rir(&rooms[r], &mut rng).map(|h| (r, h))
            })
            .collect::<Result<_>>()
    })?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Vec<ManifestRecord> = pool.install(|| {
        (0..cfg.items)
            .into_par_iter()
            .map(|i| {
                let item_seed = derive_seed(master_seed, i as u64);
                let (item, kind, _) = synth_item(cfg, sources, &rooms, &rirs, item_seed)?;
                let id = format!("item{i:05}");
                let rel_dir = PathBuf::from("items").join(&id);
                let dir = out_dir.join(&rel_dir);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let rel = |p: PathBuf| rel_dir.join(p);
                let paths = ItemPaths {
                    x: rel(write_opt(&dir, "x.wav", Some(&item.x))?.unwrap()),
                    s: write_opt(&dir, "s.wav", item.s.as_ref())?.map(rel),
                    d: rel(write_opt(&dir, "d.wav", Some(&item.d))?.unwrap()),
                    v: rel(write_opt(&dir, "v.wav", Some(&item.v))?.unwrap()),
                    y: rel(write_opt(&dir, "y.wav", Some(&item.y))?.unwrap()),
                    s_aec: None,
                    d_hat: None,
                };
                Ok(ManifestRecord {
                    id,
                    paths,
                    ser_db: item.mix.ser_db,
                    snr_db: item.mix.snr_db,
                    room: item.room.clone().expect("synthesized items carry a room"),
                    seed: item_seed,
                    far_kind: kind,
                    talk: if item.is_double_talk() {
                        Talk::Double
                    } else {
                        Talk::Single
                    },
                })
            })
            .collect::<Result<_>>()
    })?;
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Replays the draws of [`synth_item`] up to the room choice.
fn peek_room(
    cfg: &SynthConfig,
    sources: &Sources<'_>,
    rooms: &[RoomSpec],
    item_seed: u64,
) -> Result<usize> {
    let mut rng = rng_from_seed(item_seed);
    let len = cfg.item_len();
    let far = if rng.random::<f64>() < cfg.music_fraction {
        sources.far_music
    } else {
        sources.far_speech
    };
    far.draw(len, cfg.sample_rate, &mut rng)?;
    if rng.random::<f64>() >= cfg.single_talk_fraction {
        sources.near.draw(len, cfg.sample_rate, &mut rng)?;
    }
    Ok(rng.random_range(0..rooms.len()))
}
