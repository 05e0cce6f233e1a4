//! Binned spike-count datasets: binning, filtering, splitting and CSV I/O.
//!
//! CSV layout: header `trial_id,time_bin,direction,n0,...,n{d-1}`, one row
//! per (trial, bin). A sidecar JSON next to the CSV (same stem, `.json`)
//! records the bin width, the number of direction classes and free-form
//! provenance.

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

pub const DEFAULT_BIN_WIDTH_MS: f64 = 100.0;
pub const DEFAULT_MAX_BINS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDataset {
    /// N × d counts (stored as reals).
    pub x: Matrix,
    pub direction: Vec<usize>,
    pub time_bin: Vec<usize>,
    pub trial_id: Vec<u64>,
    /// Number of direction classes `l`.
    pub n_directions: usize,
    pub bin_width_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub bin_width_ms: f64,
    pub n_directions: usize,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// Spike times (seconds from trial start) for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrial {
    pub trial_id: u64,
    pub direction: usize,
    /// One list per neuron.
    pub spikes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl BinnedDataset {
    pub fn new(
        x: Matrix,
        direction: Vec<usize>,
        time_bin: Vec<usize>,
        trial_id: Vec<u64>,
        n_directions: usize,
        bin_width_ms: f64,
    ) -> Result<Self> {
        let ds = Self {
            x,
            direction,
            time_bin,
            trial_id,
            n_directions,
            bin_width_ms,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_neurons(&self) -> usize {
        self.x.cols()
    }

    /// Number of time-bin classes, `max(time_bin) + 1`.
    pub fn n_time_bins(&self) -> usize {
        self.time_bin.iter().max().map_or(0, |m| m + 1)
    }

    /// Checks label lengths, counts, and trial grouping: each trial's rows
    /// are contiguous with strictly increasing time bins.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.direction.len() != n || self.time_bin.len() != n || self.trial_id.len() != n {
            return Err(Error::Validation(format!(
                "label lengths ({}, {}, {}) do not match {n} rows",
                self.direction.len(),
                self.time_bin.len(),
                self.trial_id.len()
            )));
        }
        if let Some(v) = self.x.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("count {v} is not a nonnegative finite number")));
        }
        if let Some(d) = self.direction.iter().find(|&&d| d >= self.n_directions) {
            return Err(Error::Validation(format!("direction {d} outside 0..{}", self.n_directions)));
        }
        let mut seen = HashSet::new();
        for i in 0..n {
            let new_block = i == 0 || self.trial_id[i] != self.trial_id[i - 1];
            if new_block {
                if !seen.insert(self.trial_id[i]) {
                    return Err(Error::Validation(format!("rows of trial {} are not contiguous", self.trial_id[i])));
                }
            } else if self.time_bin[i] <= self.time_bin[i - 1] {
                return Err(Error::Validation(format!(
                    "time bins of trial {} do not increase at row {i}",
                    self.trial_id[i]
                )));
            }
        }
        Ok(())
    }

    /// Rows `idx` (kept in the given order).
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let ds = Self {
            x: self.x.select_rows(idx),
            direction: idx.iter().map(|&i| self.direction[i]).collect(),
            time_bin: idx.iter().map(|&i| self.time_bin[i]).collect(),
            trial_id: idx.iter().map(|&i| self.trial_id[i]).collect(),
            n_directions: self.n_directions,
            bin_width_ms: self.bin_width_ms,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Same-trial row range of every row.
    pub fn trial_spans(&self) -> Vec<Range<usize>> {
        let n = self.n_rows();
        let mut spans = vec![0..0; n];
        let mut start = 0;
        for i in 1..=n {
            if i == n || self.trial_id[i] != self.trial_id[start] {
                for s in &mut spans[start..i] {
                    *s = start..i;
                }
                start = i;
            }
        }
        spans
    }

    pub fn sidecar(&self, provenance: serde_json::Value) -> Sidecar {
        Sidecar {
            bin_width_ms: self.bin_width_ms,
            n_directions: self.n_directions,
            provenance,
        }
    }
}

/// Counts spikes in right-open bins `[k·Δ, (k+1)·Δ)`, keeping the first
/// `max_bins` bins of each trial.
pub fn bin_spike_times(
    trials: &[SpikeTrial],
    n_directions: usize,
    bin_width_ms: f64,
    max_bins: usize,
) -> Result<BinnedDataset> {
    if !(bin_width_ms > 0.0) || max_bins == 0 {
        return Err(Error::Config(format!(
            "bin width {bin_width_ms} ms and max_bins {max_bins} must be positive"
        )));
    }
    let d = trials.first().map_or(0, |t| t.spikes.len());
    let width_s = bin_width_ms / 1000.0;
    let mut data = Vec::with_capacity(trials.len() * max_bins * d);
    let (mut direction, mut time_bin, mut trial_id) = (Vec::new(), Vec::new(), Vec::new());
    for t in trials {
        if t.spikes.len() != d {
            return Err(Error::Validation(format!(
                "trial {} has {} neurons, expected {d}",
                t.trial_id,
                t.spikes.len()
            )));
        }
        let mut counts = vec![0.0; max_bins * d];
        for (j, times) in t.spikes.iter().enumerate() {
            for &s in times {
                if !(s >= 0.0) {
                    return Err(Error::Validation(format!(
                        "trial {} neuron {j}: spike time {s} is negative or NaN",
                        t.trial_id
                    )));
                }
                // Snap times within 1e-9 bins of a boundary onto it.
                let k = (s / width_s + 1e-9).floor() as usize;
                if k < max_bins {
                    counts[k * d + j] += 1.0;
                }
            }
        }
        data.extend_from_slice(&counts);
        for k in 0..max_bins {
            direction.push(t.direction);
            time_bin.push(k);
            trial_id.push(t.trial_id);
        }
    }
    let rows = trials.len() * max_bins;
    BinnedDataset::new(Matrix::new(rows, d, data)?, direction, time_bin, trial_id, n_directions, bin_width_ms)
}

/// Drops neurons whose count is identical across all rows; returns the
/// reduced dataset and the removed column indices.
pub fn filter_static_neurons(ds: &BinnedDataset) -> Result<(BinnedDataset, Vec<usize>)> {
    let d = ds.n_neurons();
    let mut keep = Vec::with_capacity(d);
    let mut removed = Vec::new();
    for j in 0..d {
        let first = ds.x.get(0, j);
        if (0..ds.n_rows()).all(|i| ds.x.get(i, j) == first) {
            removed.push(j);
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::Validation("every neuron is static; nothing left".into()));
    }
    let x = Matrix::from_fn(ds.n_rows(), keep.len(), |i, c| ds.x.get(i, keep[c]));
    Ok((BinnedDataset { x, ..ds.clone() }, removed))
}

/// Uniform shuffle then prefix split; `round(fraction·N)` rows go to train,
/// clamped so both sides are nonempty.
pub fn train_test_split(n_rows: usize, fraction: f64, rng: &mut RngState) -> Result<SplitIndex> {
    if n_rows < 2 {
        return Err(Error::Validation(format!("cannot split {n_rows} rows")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n_train = ((fraction * n_rows as f64).round() as usize).clamp(1, n_rows - 1);
    let perm = rng.permutation(n_rows);
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndex { train, test })
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the CSV and its sidecar.
pub fn save_csv(ds: &BinnedDataset, path: &Path, provenance: serde_json::Value) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["trial_id".to_string(), "time_bin".into(), "direction".into()];
    header.extend((0..ds.n_neurons()).map(|j| format!("n{j}")));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        rec.clear();
        rec.push(ds.trial_id[i].to_string());
        rec.push(ds.time_bin[i].to_string());
        rec.push(ds.direction[i].to_string());
        // `Display` for f64 prints the shortest string that parses back exactly.
        rec.extend(ds.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&ds.sidecar(provenance))?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Reads a CSV; the sidecar, when present, supplies the bin width and
/// class count, otherwise they default to 100 ms and `max(direction)+1`.
pub fn load_csv(path: &Path) -> Result<BinnedDataset> {
    let side = sidecar_path(path);
    let sidecar: Option<Sidecar> = match fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&side, e)),
    };

    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let d = header.len().saturating_sub(3);
    let mut expected = vec!["trial_id".to_string(), "time_bin".into(), "direction".into()];
    expected.extend((0..d).map(|j| format!("n{j}")));
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            format!("header must be `trial_id,time_bin,direction,n0,...`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut data = Vec::new();
    let (mut direction, mut time_bin, mut trial_id) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in records.enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != d + 3 {
            return Err(parse_err(line, format!("expected {} cells, found {}", d + 3, rec.len())));
        }
        let int = |c: usize, what: &str| -> Result<u64> {
            rec[c]
                .trim()
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("{what} `{}` is not a nonnegative integer", &rec[c])))
        };
        trial_id.push(int(0, "trial_id")?);
        time_bin.push(int(1, "time_bin")? as usize);
        direction.push(int(2, "direction")? as usize);
        for c in 3..d + 3 {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("cell `{}` in column n{} is not numeric", &rec[c], c - 3)))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!(
                    "{}:{line}: count {v} in column n{} must be nonnegative and finite",
                    path.display(),
                    c - 3
                )));
            }
            data.push(v);
        }
    }
    let n_directions = match &sidecar {
        Some(s) => s.n_directions,
        None => direction.iter().max().map_or(0, |m| m + 1),
    };
    let bin_width_ms = sidecar.as_ref().map_or(DEFAULT_BIN_WIDTH_MS, |s| s.bin_width_ms);
    let rows = direction.len();
    BinnedDataset::new(Matrix::new(rows, d, data)?, direction, time_bin, trial_id, n_directions, bin_width_ms)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> BinnedDataset {
        BinnedDataset::new(
            Matrix::from_rows(&[[1.0, 3.0, 0.0], [2.0, 3.0, 5.0], [0.0, 3.0, 1.0], [4.0, 3.0, 2.5]]),
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
            vec![10, 10, 11, 11],
            2,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn binning_hand_count() {
        let trial = SpikeTrial {
            trial_id: 0,
            direction: 0,
            spikes: vec![vec![0.05, 0.12, 0.31]],
        };
        let ds = bin_spike_times(&[trial], 1, 100.0, 9).unwrap();
        let col: Vec<f64> = (0..9).map(|i| ds.x.get(i, 0)).collect();
        assert_eq!(col, vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ds.time_bin, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn binning_boundaries_and_empty() {
        let trials = vec![
            SpikeTrial {
                trial_id: 0,
                direction: 1,
                spikes: vec![vec![0.1, 0.3], vec![]],
            },
            SpikeTrial {
                trial_id: 1,
                direction: 0,
                spikes: vec![vec![], vec![]],
            },
        ];
        let ds = bin_spike_times(&trials, 2, 100.0, 9).unwrap();
        assert_eq!(ds.x.get(1, 0), 1.0);
        assert_eq!(ds.x.get(3, 0), 1.0);
        assert_eq!(ds.x.get(0, 0), 0.0);
        assert!((9..18).all(|i| ds.x.row(i).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn negative_spike_time_rejected() {
        let t = SpikeTrial {
            trial_id: 0,
            direction: 0,
            spikes: vec![vec![-0.01]],
        };
        assert!(matches!(bin_spike_times(&[t], 1, 100.0, 9), Err(Error::Validation(_))));
    }

    #[test]
    fn static_neuron_removed() {
        let (f, removed) = filter_static_neurons(&toy()).unwrap();
        assert_eq!(removed, vec![1]);
        assert_eq!(f.n_neurons(), 2);
        assert_eq!(f.x.row(1), &[2.0, 5.0]);
        let (g, removed2) = filter_static_neurons(&f).unwrap();
        assert!(removed2.is_empty());
        assert_eq!(g, f);
    }

    #[test]
    fn all_static_is_error() {
        let ds = BinnedDataset::new(Matrix::filled(3, 2, 1.0), vec![0; 3], vec![0, 1, 2], vec![0; 3], 1, 100.0).unwrap();
        assert!(filter_static_neurons(&ds).is_err());
    }

    #[test]
    fn split_sizes() {
        let mut rng = RngState::new(0);
        let s = train_test_split(10, 0.8, &mut rng).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let s2 = train_test_split(10, 0.8, &mut RngState::new(0)).unwrap();
        assert_eq!(s, s2);
        assert!(train_test_split(1, 0.8, &mut rng).is_err());
        assert!(train_test_split(10, 1.0, &mut rng).is_err());
    }

    #[test]
    fn trial_grouping_enforced() {
        let bad = BinnedDataset::new(Matrix::zeros(3, 1), vec![0; 3], vec![0, 0, 1], vec![1, 2, 1], 1, 100.0);
        assert!(bad.is_err());
        let bad = BinnedDataset::new(Matrix::zeros(2, 1), vec![0; 2], vec![1, 0], vec![1, 1], 1, 100.0);
        assert!(bad.is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy();
        ds.x.set(0, 0, 0.1 + 0.2);
        let p = dir.path().join("d.csv");
        save_csv(&ds, &p, serde_json::json!({"source": "unit"})).unwrap();
        assert_eq!(load_csv(&p).unwrap(), ds);

        let q = dir.path().join("missing_col.csv");
        fs::write(&q, "trial_id,time_bin,direction,n0,n1\n0,0,0,1,2\n0,1,0,3\n").unwrap();
        match load_csv(&q) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&q, "trial_id,time_bin,direction,n1\n0,0,0,1\n").unwrap();
        assert!(matches!(load_csv(&q), Err(Error::Parse { line: 1, .. })));
        fs::write(&q, "trial_id,time_bin,direction,n0\n0,0,0,-1\n").unwrap();
        assert!(matches!(load_csv(&q), Err(Error::Validation(_))));
        fs::write(&q, "trial_id,time_bin,direction,n0\n0,0,0,abc\n").unwrap();
        assert!(matches!(load_csv(&q), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn split_disjoint_and_covering(n in 2usize..400, seed in any::<u64>()) {
            let s = train_test_split(n, 0.8, &mut RngState::new(seed)).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!((s.train.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
        }

        #[test]
        fn binning_conserves_counts(times in proptest::collection::vec(0.0f64..1.2, 0..60)) {
            let t = SpikeTrial { trial_id: 0, direction: 0, spikes: vec![times.clone()] };
            let ds = bin_spike_times(&[t], 1, 100.0, 9).unwrap();
            let kept = times.iter().filter(|&&s| ((s / 0.1) + 1e-9).floor() < 9.0).count();
            prop_assert_eq!(ds.x.sum(), kept as f64);
        }
    }
}
