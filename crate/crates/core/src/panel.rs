//! Day x bin x asset market panels and their on-disk format.
//!
//! A panel stores prices at the `n_bins + 1` bin boundaries and signed net
//! traded volumes per bin. The CSV format is one row per (day, bin, asset)
//! with header `day,bin,asset,price,net_volume`; the row with bin index `b`
//! carries the price at boundary time `bin_times[b]` and the net volume of
//! the interval `(bin_times[b-1], bin_times[b]]` (zero by convention for
//! `b = 0`). Bin timestamps and asset names live in a JSON metadata
//! sidecar. Floats are written in shortest round-trip scientific notation,
//! so export followed by import is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::PanelError;

pub const CSV_HEADER: &str = "day,bin,asset,price,net_volume";

/// Prices and net traded volumes for `n_days` days of `n_bins` intraday bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    pub n_days: usize,
    /// Number of bins (intervals); prices are stored at the n_bins + 1 boundaries.
    pub n_bins: usize,
    pub dim: usize,
    /// Bin boundary times in days, strictly increasing, shared across days.
    pub bin_times: Vec<f64>,
    /// prices[[day, boundary, asset]].
    pub prices: Array3<f64>,
    /// net_flows[[day, bin, asset]]; bin b covers (bin_times[b], bin_times[b+1]].
    pub net_flows: Option<Array3<f64>>,
    pub asset_names: Vec<String>,
}

/// Sidecar metadata of a panel CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub n_days: usize,
    pub n_bins: usize,
    pub assets: Vec<String>,
    /// Bin boundary times in days (n_bins + 1 entries).
    pub bin_times_day: Vec<f64>,
    pub has_net_flows: bool,
    /// Units of the columns, for human readers.
    pub units: PanelUnits,
    /// Hash of the producing scenario, when the panel was simulated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelUnits {
    pub price: String,
    pub net_volume: String,
    pub time: String,
}

impl Default for PanelUnits {
    fn default() -> Self {
        Self {
            price: "usd_per_share".into(),
            net_volume: "share".into(),
            time: "day".into(),
        }
    }
}

impl MarketPanel {
    /// Validate internal consistency (shapes, finite entries, ordered times).
    pub fn validate(&self) -> Result<(), PanelError> {
        if self.bin_times.len() != self.n_bins + 1 {
            return Err(PanelError::Shape(format!(
                "bin_times has {} entries, expected {}",
                self.bin_times.len(),
                self.n_bins + 1
            )));
        }
        if self.asset_names.len() != self.dim {
            return Err(PanelError::Shape("asset name count != dim".into()));
        }
        for w in self.bin_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(PanelError::Shape("bin_times not strictly increasing".into()));
            }
        }
        if self.prices.dim() != (self.n_days, self.n_bins + 1, self.dim) {
            return Err(PanelError::Shape("price array shape mismatch".into()));
        }
        if self.prices.iter().any(|x| !x.is_finite()) {
            return Err(PanelError::Shape("non-finite price".into()));
        }
        if let Some(flows) = &self.net_flows {
            if flows.dim() != (self.n_days, self.n_bins, self.dim) {
                return Err(PanelError::Shape("flow array shape mismatch".into()));
            }
            if flows.iter().any(|x| !x.is_finite()) {
                return Err(PanelError::Shape("non-finite net flow".into()));
            }
        }
        Ok(())
    }

    /// Price increment over bin `b` (between boundaries b and b+1).
    #[inline]
    pub fn increment(&self, day: usize, bin: usize, asset: usize) -> f64 {
        self.prices[[day, bin + 1, asset]] - self.prices[[day, bin, asset]]
    }

    /// Length of bin `b` in days.
    pub fn bin_length(&self, b: usize) -> f64 {
        self.bin_times[b + 1] - self.bin_times[b]
    }

    /// Common bin length; error when the bin grid is not uniform.
    pub fn uniform_bin_length(&self) -> Result<f64, crate::error::EstimatorError> {
        let dt = self.bin_length(0);
        for b in 1..self.n_bins {
            let got = self.bin_length(b);
            if (got - dt).abs() > 1e-9 * dt.max(1e-12) {
                return Err(crate::error::EstimatorError::NonUniformBins {
                    bin: b,
                    got,
                    expected: dt,
                });
            }
        }
        Ok(dt)
    }

    pub fn metadata(&self, scenario_sha256: Option<String>) -> PanelMetadata {
        PanelMetadata {
            n_days: self.n_days,
            n_bins: self.n_bins,
            assets: self.asset_names.clone(),
            bin_times_day: self.bin_times.clone(),
            has_net_flows: self.net_flows.is_some(),
            units: PanelUnits::default(),
            scenario_sha256,
        }
    }

    /// Write the panel CSV and its JSON metadata sidecar.
    pub fn export(
        &self,
        csv_path: &Path,
        metadata_path: &Path,
        scenario_sha256: Option<String>,
    ) -> Result<(), PanelError> {
        self.validate()?;
        let meta = self.metadata(scenario_sha256.clone());
        let meta_file = File::create(metadata_path)?;
        serde_json::to_writer_pretty(BufWriter::new(meta_file), &meta)
            .map_err(|e| PanelError::Metadata(e.to_string()))?;

        let mut out = BufWriter::new(File::create(csv_path)?);
        if let Some(hash) = &scenario_sha256 {
            writeln!(out, "# scenario_sha256={hash}")?;
        }
        writeln!(out, "{CSV_HEADER}")?;
        for day in 0..self.n_days {
            for bin in 0..=self.n_bins {
                for asset in 0..self.dim {
                    let price = self.prices[[day, bin, asset]];
                    let volume = if bin == 0 {
                        0.0
                    } else {
                        self.net_flows
                            .as_ref()
                            .map_or(0.0, |f| f[[day, bin - 1, asset]])
                    };
                    writeln!(out, "{day},{bin},{asset},{price:e},{volume:e}")?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Read a panel back from CSV plus metadata; the scan is streaming and
    /// rejects duplicate, missing, ragged or non-numeric records.
    pub fn import(csv_path: &Path, metadata_path: &Path) -> Result<Self, PanelError> {
        let meta: PanelMetadata = serde_json::from_reader(BufReader::new(File::open(
            metadata_path,
        )?))
        .map_err(|e| PanelError::Metadata(e.to_string()))?;
        if meta.bin_times_day.len() != meta.n_bins + 1 {
            return Err(PanelError::Metadata(format!(
                "bin_times_day has {} entries, expected {}",
                meta.bin_times_day.len(),
                meta.n_bins + 1
            )));
        }
        let dim = meta.assets.len();
        let n_days = meta.n_days;
        let n_bins = meta.n_bins;

        let mut prices = Array3::<f64>::zeros((n_days, n_bins + 1, dim));
        let mut flows = Array3::<f64>::zeros((n_days, n_bins, dim));
        let mut seen = vec![false; n_days * (n_bins + 1) * dim];

        let reader = BufReader::new(File::open(csv_path)?);
        let mut header_seen = false;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                if trimmed != CSV_HEADER {
                    return Err(PanelError::Malformed {
                        line: line_no,
                        reason: format!("expected header `{CSV_HEADER}`, got `{trimmed}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            let mut fields = trimmed.split(',');
            let mut next = |what: &str| {
                fields.next().ok_or_else(|| PanelError::Malformed {
                    line: line_no,
                    reason: format!("missing field `{what}`"),
                })
            };
            let day: usize = parse_field(next("day")?, "day", line_no)?;
            let bin: usize = parse_field(next("bin")?, "bin", line_no)?;
            let asset: usize = parse_field(next("asset")?, "asset", line_no)?;
            let price: f64 = parse_field(next("price")?, "price", line_no)?;
            let volume: f64 = parse_field(next("net_volume")?, "net_volume", line_no)?;
            if fields.next().is_some() {
                return Err(PanelError::Malformed {
                    line: line_no,
                    reason: "too many fields".into(),
                });
            }
            if day >= n_days || bin > n_bins || asset >= dim {
                return Err(PanelError::Malformed {
                    line: line_no,
                    reason: format!(
                        "indices (day={day}, bin={bin}, asset={asset}) outside panel \
                         {n_days}x{}x{dim}",
                        n_bins + 1
                    ),
                });
            }
            let flat = (day * (n_bins + 1) + bin) * dim + asset;
            if seen[flat] {
                return Err(PanelError::Duplicate {
                    day,
                    bin,
                    asset,
                    line: line_no,
                });
            }
            seen[flat] = true;
            prices[[day, bin, asset]] = price;
            if bin > 0 {
                flows[[day, bin - 1, asset]] = volume;
            }
        }
        if !header_seen {
            return Err(PanelError::Malformed {
                line: 1,
                reason: "empty file".into(),
            });
        }
        if let Some(flat) = seen.iter().position(|&s| !s) {
            let asset = flat % dim;
            let rest = flat / dim;
            let bin = rest % (n_bins + 1);
            let day = rest / (n_bins + 1);
            return Err(PanelError::MissingCell { day, bin, asset });
        }

        let panel = MarketPanel {
            n_days,
            n_bins,
            dim,
            bin_times: meta.bin_times_day,
            prices,
            net_flows: meta.has_net_flows.then_some(flows),
            asset_names: meta.assets,
        };
        panel.validate()?;
        Ok(panel)
    }
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    what: &str,
    line: usize,
) -> Result<T, PanelError> {
    raw.parse().map_err(|_| PanelError::Malformed {
        line,
        reason: format!("field `{what}` is not numeric: `{raw}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_panel() -> MarketPanel {
        let mut prices = Array3::zeros((2, 3, 1));
        let mut flows = Array3::zeros((2, 2, 1));
        for day in 0..2 {
            for b in 0..3 {
                prices[[day, b, 0]] = 100.0 + day as f64 + 0.25 * b as f64;
            }
            for b in 0..2 {
                flows[[day, b, 0]] = (day as f64 + 1.0) * (b as f64 - 0.5) * 1e4 / 3.0;
            }
        }
        MarketPanel {
            n_days: 2,
            n_bins: 2,
            dim: 1,
            bin_times: vec![0.0, 0.5, 1.0],
            prices,
            net_flows: Some(flows),
            asset_names: vec!["A0".into()],
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let panel = tiny_panel();
        let dir = std::env::temp_dir().join(format!("crowdtrade_panel_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("panel.csv");
        let meta = dir.join("panel_meta.json");
        panel.export(&csv, &meta, Some("abc123".into())).unwrap();
        let back = MarketPanel::import(&csv, &meta).unwrap();
        assert_eq!(panel, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn duplicate_row_is_rejected() {
        let panel = tiny_panel();
        let dir = std::env::temp_dir().join(format!("crowdtrade_dup_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("panel.csv");
        let meta = dir.join("panel_meta.json");
        panel.export(&csv, &meta, None).unwrap();
        let mut text = std::fs::read_to_string(&csv).unwrap();
        let dup = text.lines().nth(1).unwrap().to_string();
        text.push_str(&dup);
        text.push('\n');
        std::fs::write(&csv, text).unwrap();
        match MarketPanel::import(&csv, &meta) {
            Err(PanelError::Duplicate { day: 0, bin: 0, asset: 0, .. }) => {}
            other => panic!("expected duplicate error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let panel = tiny_panel();
        let dir = std::env::temp_dir().join(format!("crowdtrade_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("panel.csv");
        let meta = dir.join("panel_meta.json");
        panel.export(&csv, &meta, None).unwrap();
        let mut lines: Vec<String> = std::fs::read_to_string(&csv)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[3] = "0,1,0,not_a_number,0".into();
        std::fs::write(&csv, lines.join("\n")).unwrap();
        match MarketPanel::import(&csv, &meta) {
            Err(PanelError::Malformed { line: 4, .. }) => {}
            other => panic!("expected malformed at line 4, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_cell_is_rejected() {
        let panel = tiny_panel();
        let dir = std::env::temp_dir().join(format!("crowdtrade_miss_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("panel.csv");
        let meta = dir.join("panel_meta.json");
        panel.export(&csv, &meta, None).unwrap();
        let text: Vec<String> = std::fs::read_to_string(&csv)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        let shortened = text[..text.len() - 1].join("\n");
        std::fs::write(&csv, shortened).unwrap();
        assert!(matches!(
            MarketPanel::import(&csv, &meta),
            Err(PanelError::MissingCell { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
