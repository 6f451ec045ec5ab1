//! Per-item evaluation of the canceller, the trained suppressor and two
//! reference systems.

use rayon::prelude::*;

use super::run_pool;
use crate::echo::{Manifest, ManifestRecord, Talk};
use crate::error::{Error, Result};
use crate::metrics::{erle, sdr_proj, sisnr, stoi, ItemMetrics, MetricsReport};
use crate::model::{Stream, TasNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    /// The linear canceller's residual.
    Laec,
    /// The suppressor's estimate.
    Model,
    /// Mask fixed to one: decode(encode(s_aec)).
    PassThrough,
    /// Ideal ratio mask of the encoded target, clamped into (0, 1).
    OracleMask,
}

impl System {
    pub fn label(self, model: &TasNet) -> String {
        match self {
            System::Laec => "LAEC".into(),
            System::Model => format!("TasNet-{}", model.config().variant),
            System::PassThrough => "pass-through".into(),
            System::OracleMask => "oracle-mask".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub systems: Vec<System>,
    /// Convergence window excluded from ERLE, in seconds; capped at half
    /// the item length.
    pub erle_skip_secs: f64,
    pub zero_mean: bool,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            systems: vec![System::Laec, System::Model],
            erle_skip_secs: 2.0,
            zero_mean: true,
            jobs: 1,
        }
    }
}

pub fn pass_through(model: &TasNet, s_aec: &[f64]) -> Result<Vec<f64>> {
    let a = model.encode(s_aec, Stream::Residual)?;
    model.decode(&a, s_aec.len())
}

pub fn oracle_mask(model: &TasNet, s_aec: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != s_aec.len() {
        return Err(Error::LengthMismatch {
            left: s_aec.len(),
            right: s.len(),
        });
    }
    let a = model.encode(s_aec, Stream::Residual)?;
    let t = model.encode(s, Stream::Residual)?;
    let hi = 1.0 - f64::EPSILON;
    let masked = ndarray::Zip::from(&a).and(&t).map_collect(|&a, &t| {
        if a == 0.0 {
            0.0
        } else {
            (t / a).clamp(f64::MIN_POSITIVE, hi) * a
        }
    });
    model.decode(&masked, s_aec.len())
}

fn stoi_or_none(est: &[f64], clean: &[f64], rate: u32) -> Result<Option<f64>> {
    match stoi(est, clean, rate) {
        Ok(v) => Ok(Some(v)),
        Err(Error::TooShort(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn evaluate_record(
    manifest: &Manifest,
    rec: &ManifestRecord,
    model: &TasNet,
    opts: &EvalOptions,
) -> Result<Vec<ItemMetrics>> {
    let item = manifest.load_item(rec)?;
    let missing = |w: &str| Error::Manifest(format!("{}: missing {w}; run the laec stage first", rec.id));
    let s_aec = item.s_aec.as_ref().ok_or_else(|| missing("s_aec"))?;
    let d_hat = item.d_hat.as_ref().ok_or_else(|| missing("d_hat"))?;
    let rate = s_aec.sample_rate;
    let len = s_aec.len();
    let skip = ((opts.erle_skip_secs * rate as f64).round() as usize).min(len / 2);
    let mut rows = Vec::with_capacity(opts.systems.len());
    for &system in &opts.systems {
        let out = match (system, &item.s) {
            (System::Laec, _) => s_aec.samples.clone(),
            (System::Model, _) => model.forward(s_aec, Some(d_hat))?.s_hat.samples,
            (System::PassThrough, _) => pass_through(model, &s_aec.samples)?,
            (System::OracleMask, Some(s)) => oracle_mask(model, &s_aec.samples, &s.samples)?,
            (System::OracleMask, None) => continue,
        };
        let mut row = ItemMetrics {
            id: rec.id.clone(),
            system: system.label(model),
            far_kind: rec.far_kind,
            talk: rec.talk,
            ser_db: rec.ser_db,
            snr_db: rec.snr_db,
            erle_db: None,
            extra_erle_db: None,
            sisnr_db: None,
            sdr_db: None,
            stoi: None,
        };
        match (&item.s, rec.talk) {
            (Some(s), Talk::Double) => {
                row.sisnr_db = Some(sisnr(&out, &s.samples, opts.zero_mean)?);
                row.sdr_db = Some(sdr_proj(&out, &s.samples)?);
                row.stoi = stoi_or_none(&out, &s.samples, rate)?;
            }
            _ => {
                row.erle_db = Some(erle(&item.y.samples, &out, skip)?);
                if system != System::Laec {
                    row.extra_erle_db = Some(erle(&s_aec.samples, &out, skip)?);
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Metrics of every requested system on every manifest item.
pub fn evaluate(manifest: &Manifest, model: &TasNet, opts: &EvalOptions) -> Result<MetricsReport> {
    let per_item = run_pool(opts.jobs, || {
        manifest
            .records
            .par_iter()
            .map(|rec| evaluate_record(manifest, rec, model, opts))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut report = MetricsReport::default();
    for row in per_item.into_iter().flatten() {
        report.push(row);
    }
    Ok(report)
}
