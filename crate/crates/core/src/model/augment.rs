//! Two-view augmentation: temporal jitter within a trial and random
//! neuron dropout.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::BinnedDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Probability of zeroing each neuron in a view.
    pub drop_prob: f64,
    /// Jitter radius in bins.
    pub jitter_window: usize,
    pub enable_spatial: bool,
    pub enable_temporal: bool,
    /// Draw each view's drop rate uniformly from `[0, drop_prob]`.
    pub random_drop_rate: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.6,
            jitter_window: 5,
            enable_spatial: true,
            enable_temporal: true,
            random_drop_rate: false,
        }
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        Self {
            enable_spatial: false,
            enable_temporal: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!("drop_prob {} outside [0, 1)", self.drop_prob)));
        }
        Ok(())
    }
}

/// Dataset plus the per-row trial spans used for jitter.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub ds: BinnedDataset,
    spans: Vec<Range<usize>>,
}

impl TrainData {
    pub fn new(ds: BinnedDataset) -> Self {
        let spans = ds.trial_spans();
        Self { ds, spans }
    }

    pub fn n_rows(&self) -> usize {
        self.ds.n_rows()
    }

    /// Row used as the source of a view of `row`: a uniformly chosen row of
    /// the same trial whose time bin is within `window` of `row`'s.
    pub fn jitter_source(&self, row: usize, window: usize, rng: &mut RngState) -> usize {
        let t = self.ds.time_bin[row];
        let span = self.spans[row].clone();
        let lo = span
            .clone()
            .find(|&r| self.ds.time_bin[r] + window >= t)
            .unwrap_or(row);
        let hi = span
            .rev()
            .find(|&r| self.ds.time_bin[r] <= t + window)
            .unwrap_or(row);
        lo + rng.below(hi - lo + 1)
    }

    /// Writes one augmented view of `row` into `out`.
    pub fn augment_view(&self, row: usize, cfg: &AugmentationConfig, rng: &mut RngState, out: &mut [f64]) {
        let src = if cfg.enable_temporal {
            self.jitter_source(row, cfg.jitter_window, rng)
        } else {
            row
        };
        out.copy_from_slice(self.ds.x.row(src));
        if cfg.enable_spatial {
            let p = if cfg.random_drop_rate {
                rng.uniform() * cfg.drop_prob
            } else {
                cfg.drop_prob
            };
            for v in out.iter_mut() {
                if rng.bernoulli(p) {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn augment_pair(&self, row: usize, cfg: &AugmentationConfig, rng: &mut RngState) -> (Vec<f64>, Vec<f64>) {
        let d = self.ds.n_neurons();
        let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
        self.augment_view(row, cfg, rng, &mut a);
        self.augment_view(row, cfg, rng, &mut b);
        (a, b)
    }

    /// Both views for a batch of rows, drawn row by row.
    pub fn augment_batch(&self, rows: &[usize], cfg: &AugmentationConfig, rng: &mut RngState) -> (Matrix, Matrix) {
        let d = self.ds.n_neurons();
        let mut x1 = Matrix::zeros(rows.len(), d);
        let mut x2 = Matrix::zeros(rows.len(), d);
        for (i, &r) in rows.iter().enumerate() {
            self.augment_view(r, cfg, rng, x1.row_mut(i));
            self.augment_view(r, cfg, rng, x2.row_mut(i));
        }
        (x1, x2)
    }

    /// One augmented view per row.
    pub fn augment_single(&self, rows: &[usize], cfg: &AugmentationConfig, rng: &mut RngState) -> Matrix {
        let mut x = Matrix::zeros(rows.len(), self.ds.n_neurons());
        for (i, &r) in rows.iter().enumerate() {
            self.augment_view(r, cfg, rng, x.row_mut(i));
        }
        x
    }
}
