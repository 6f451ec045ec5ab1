//! Per-item metric rows and per-condition aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CLAMP_DB;
use crate::echo::{SignalKind, Talk};
use crate::error::{Error, Result};

/// Metrics of one system on one item. Double-talk items carry the
/// separation metrics, single-talk items the echo-attenuation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub id: String,
    pub system: String,
    pub far_kind: SignalKind,
    pub talk: Talk,
    pub ser_db: f64,
    pub snr_db: f64,
    pub erle_db: Option<f64>,
    pub extra_erle_db: Option<f64>,
    pub sisnr_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub stoi: Option<f64>,
}

impl ItemMetrics {
    fn values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("ERLE", self.erle_db),
            ("extra-ERLE", self.extra_erle_db),
            ("SISNR", self.sisnr_db),
            ("SDR-proj", self.sdr_db),
            ("STOI", self.stoi),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
        })
    }
}

/// Key of one aggregate cell: system, metric, far-end kind, SER.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub system: String,
    pub metric: &'static str,
    pub far_kind: SignalKind,
    /// SER in milli-dB, for exact grouping.
    pub ser_mdb: i64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub items: Vec<ItemMetrics>,
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x >= CLAMP_DB => "inf".into(),
        Some(x) if x <= -CLAMP_DB => "-inf".into(),
        Some(x) => format!("{x:.4}"),
    }
}

impl MetricsReport {
    pub fn push(&mut self, m: ItemMetrics) {
        self.items.push(m);
    }

    pub fn aggregates(&self) -> BTreeMap<CellKey, Summary> {
        let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
        for it in &self.items {
            for (metric, v) in it.values() {
                if let Some(v) = v {
                    groups
                        .entry(CellKey {
                            system: it.system.clone(),
                            metric,
                            far_kind: it.far_kind,
                            ser_mdb: (it.ser_db * 1000.0).round() as i64,
                        })
                        .or_default()
                        .push(v);
                }
            }
        }
        groups
            .into_iter()
            .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
            .collect()
    }

    /// Checks the report invariants: STOI within [-1, 1] and every entry
    /// finite (clamped ratios count as the explicit infinity marker).
    pub fn validate(&self) -> Result<()> {
        for it in &self.items {
            for (metric, v) in it.values() {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::InvalidArgument(format!("{}: {metric} is not finite", it.id)));
                    }
                    if metric == "STOI" && !(-1.0..=1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!("{}: STOI {v} outside [-1, 1]", it.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,system,far_kind,talk,ser_db,snr_db,erle_db,extra_erle_db,sisnr_db,sdr_proj_db,stoi\n");
        for it in &self.items {
            let talk = match it.talk {
                Talk::Double => "double",
                Talk::Single => "single",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                it.id,
                it.system,
                it.far_kind,
                talk,
                it.ser_db,
                it.snr_db,
                fmt_value(it.erle_db),
                fmt_value(it.extra_erle_db),
                fmt_value(it.sisnr_db),
                fmt_value(it.sdr_db),
                fmt_value(it.stoi),
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean (and median) per metric and system, one column per far-end
    /// kind and SER.
    pub fn table(&self) -> String {
        let agg = self.aggregates();
        let mut cols: Vec<(SignalKind, i64)> = agg.keys().map(|k| (k.far_kind, k.ser_mdb)).collect();
        cols.sort();
        cols.dedup();
        let mut rows: Vec<(&'static str, String)> = agg.keys().map(|k| (k.metric, k.system.clone())).collect();
        let order = ["ERLE", "extra-ERLE", "SISNR", "SDR-proj", "STOI"];
        rows.sort_by_key(|(m, s)| (order.iter().position(|o| o == m), s.clone()));
        rows.dedup();
        let mut out = format!("{:<22}", "metric / system");
        for (kind, ser) in &cols {
            let _ = write!(out, "{:>20}", format!("{kind} {:.1}dB", *ser as f64 / 1000.0));
        }
        out.push('\n');
        for (metric, system) in rows {
            let _ = write!(out, "{:<22}", format!("{metric} {system}"));
            for &(far_kind, ser_mdb) in &cols {
                let key = CellKey {
                    system: system.clone(),
                    metric,
                    far_kind,
                    ser_mdb,
                };
                let cell = agg
                    .get(&key)
                    .map(|s| {
                        let m = fmt_value(Some(s.mean));
                        let md = fmt_value(Some(s.median));
                        format!("{m} ({md})")
                    })
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "{cell:>20}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, ser: f64, sisnr: Option<f64>, stoi: Option<f64>) -> ItemMetrics {
        ItemMetrics {
            id: id.into(),
            system: "model".into(),
            far_kind: SignalKind::Speech,
            talk: Talk::Double,
            ser_db: ser,
            snr_db: 30.0,
            erle_db: None,
            extra_erle_db: None,
            sisnr_db: sisnr,
            sdr_db: sisnr,
            stoi,
        }
    }

    #[test]
    fn quartiles_interpolate() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn groups_by_condition() {
        let mut r = MetricsReport::default();
        r.push(item("a", -12.2, Some(10.0), Some(0.9)));
        r.push(item("b", -12.2, Some(20.0), Some(0.8)));
        r.push(item("c", -18.2, Some(5.0), Some(0.7)));
        let agg = r.aggregates();
        let key = CellKey {
            system: "model".into(),
            metric: "SISNR",
            far_kind: SignalKind::Speech,
            ser_mdb: -12200,
        };
        assert_eq!(agg[&key].mean, 15.0);
        assert_eq!(agg[&key].count, 2);
        assert!(r.table().contains("SDR-proj model"));
        r.validate().unwrap();
    }

    #[test]
    fn csv_marks_clamped_values() {
        let mut r = MetricsReport::default();
        r.push(item("p", -14.2, Some(CLAMP_DB), None));
        let csv = r.to_csv();
        assert!(csv.lines().nth(1).unwrap().contains(",inf,inf,"));
    }

    #[test]
    fn invariant_violations_are_reported() {
        let mut r = MetricsReport::default();
        r.push(item("x", -14.2, Some(1.0), Some(1.5)));
        assert!(r.validate().is_err());
        let mut r = MetricsReport::default();
        r.push(item("y", -14.2, Some(f64::NAN), None));
        assert!(r.validate().is_err());
    }
}
