//! Convergence detection and novelty filtering.
//!
//! Tracks per-component slowness of the adaptive abstraction's outputs.
//! Once the batch-to-batch change of every component's slowness stays
//! below a threshold, the abstraction is frozen. Frozen abstractions keep
//! the moving mean and SD of their per-batch instantaneous slowness; a
//! new batch whose instantaneous slowness falls inside every component's
//! two-SD band is considered already encoded and is filtered out.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incsfa::AdaptiveAbstraction;

const VAR_FLOOR: f64 = 1e-12;
const SD_FLOOR: f64 = 1e-6;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Per-batch instantaneous slowness of each output component. `None`
/// marks a degenerate (zero-variance) component.
pub fn eta_inst(y_series: &[DVector<f64>]) -> Vec<Option<f64>> {
    assert!(y_series.len() >= 2, "instantaneous slowness needs at least 2 samples");
    let j = y_series[0].len();
    let n = y_series.len() as f64;
    (0..j)
        .map(|c| {
            // One-pass (Welford) mean/variance plus squared-difference sum.
            let mut mean = 0.0;
            let mut m2 = 0.0;
            let mut dsq = 0.0;
            let mut prev = f64::NAN;
            for (k, y) in y_series.iter().enumerate() {
                let v = y[c];
                let count = (k + 1) as f64;
                let delta = v - mean;
                mean += delta / count;
                m2 += delta * (v - mean);
                if k > 0 {
                    dsq += (v - prev) * (v - prev);
                }
                prev = v;
            }
            let var = m2 / n;
            if var < VAR_FLOOR {
                None
            } else {
                Some((dsq / (n - 1.0) / var).sqrt() / TWO_PI)
            }
        })
        .collect()
}

/// Rates for the streaming slowness statistics. Amnesic: `max(1/k, floor)`
/// where `k` counts updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRates {
    /// Per-sample rate floor for the E(ydot^2) / Var(y) averages.
    pub sample_floor: f64,
    /// Per-batch rate floor for the moving mean/SD of instantaneous
    /// slowness.
    pub batch_floor: f64,
    /// Batches in the trend window that must agree before convergence
    /// fires. The window also guards against freezing during early
    /// random exploration, when runs of this many consecutive batches
    /// on one stream are vanishingly unlikely.
    pub settle: usize,
}

impl Default for EtaRates {
    fn default() -> Self {
        EtaRates { sample_floor: 2e-3, batch_floor: 1e-1, settle: 25 }
    }
}

/// Streaming slowness statistics for one adaptive abstraction.
#[derive(Debug, Clone)]
pub struct EtaStats {
    components: usize,
    rates: EtaRates,
    sample_count: u64,
    deriv_count: u64,
    mean_y: Vec<f64>,
    mean_y2: Vec<f64>,
    mean_dy2: Vec<f64>,
    eta: Option<Vec<Option<f64>>>,
    eta_dot: Option<Vec<Option<f64>>>,
    /// Last `settle` batch records of per-component eta-dot.
    recent: VecDeque<Vec<Option<f64>>>,
    batch_count: u64,
    inst_count: u64,
    inst_mean: Vec<f64>,
    inst_var: Vec<f64>,
    inst_seen: Vec<bool>,
}

impl EtaStats {
    pub fn new(components: usize, rates: EtaRates) -> Self {
        EtaStats {
            components,
            rates,
            sample_count: 0,
            deriv_count: 0,
            mean_y: vec![0.0; components],
            mean_y2: vec![0.0; components],
            mean_dy2: vec![0.0; components],
            eta: None,
            eta_dot: None,
            recent: VecDeque::new(),
            batch_count: 0,
            inst_count: 0,
            inst_mean: vec![0.0; components],
            inst_var: vec![0.0; components],
            inst_seen: vec![false; components],
        }
    }

    pub fn batch_count(&self) -> u64 {
        self.batch_count
    }

    /// Batch-level slowness per component, if evaluated.
    pub fn eta(&self) -> Option<&[Option<f64>]> {
        self.eta.as_deref()
    }

    pub fn eta_dot(&self) -> Option<&[Option<f64>]> {
        self.eta_dot.as_deref()
    }

    pub fn inst_mean(&self) -> &[f64] {
        &self.inst_mean
    }

    pub fn inst_sd(&self) -> Vec<f64> {
        self.inst_var.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Advance all statistics with one batch of output samples.
    pub fn update(&mut self, y_series: &[DVector<f64>]) {
        assert!(y_series.len() >= 2);
        for (k, y) in y_series.iter().enumerate() {
            self.sample_count += 1;
            let r = (1.0 / self.sample_count as f64).max(self.rates.sample_floor);
            for c in 0..self.components {
                self.mean_y[c] += r * (y[c] - self.mean_y[c]);
                self.mean_y2[c] += r * (y[c] * y[c] - self.mean_y2[c]);
            }
            if k > 0 {
                self.deriv_count += 1;
                let rd = (1.0 / self.deriv_count as f64).max(self.rates.sample_floor);
                let prev = &y_series[k - 1];
                for c in 0..self.components {
                    let d = y[c] - prev[c];
                    self.mean_dy2[c] += rd * (d * d - self.mean_dy2[c]);
                }
            }
        }

        self.batch_count += 1;
        let eta_now: Vec<Option<f64>> = (0..self.components)
            .map(|c| {
                let var = self.mean_y2[c] - self.mean_y[c] * self.mean_y[c];
                if var < VAR_FLOOR {
                    None
                } else {
                    Some((self.mean_dy2[c] / var).sqrt() / TWO_PI)
                }
            })
            .collect();
        let dot: Option<Vec<Option<f64>>> = self.eta.as_ref().map(|prev| {
            eta_now
                .iter()
                .zip(prev)
                .map(|(now, before)| match (now, before) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                })
                .collect()
        });
        if let Some(dot) = &dot {
            self.recent.push_back(dot.clone());
            if self.recent.len() > self.rates.settle {
                self.recent.pop_front();
            }
        }
        self.eta_dot = dot;
        self.eta = Some(eta_now);

        let inst = eta_inst(y_series);
        self.inst_count += 1;
        let ri = (1.0 / self.inst_count as f64).max(self.rates.batch_floor);
        for c in 0..self.components {
            if let Some(v) = inst[c] {
                if !self.inst_seen[c] {
                    self.inst_seen[c] = true;
                    self.inst_mean[c] = v;
                    self.inst_var[c] = 0.0;
                } else {
                    let delta = v - self.inst_mean[c];
                    self.inst_mean[c] += ri * delta;
                    self.inst_var[c] += ri * (delta * delta - self.inst_var[c]);
                }
            }
        }
    }

    /// True when every non-degenerate component's slowness trend — the
    /// mean derivative over the last `settle` batches — is below `delta`.
    /// The per-batch derivative carries a zero-mean ripple from the phase
    /// of periodic inputs; averaging over the window cancels it, leaving
    /// the net drift `(eta_t - eta_{t-w}) / w`.
    pub fn converged(&self, delta: f64) -> bool {
        if self.recent.len() < self.rates.settle {
            return false;
        }
        let mut any = false;
        for c in 0..self.components {
            let mut sum = 0.0;
            let mut count = 0u32;
            for record in &self.recent {
                if let Some(d) = record[c] {
                    sum += d;
                    count += 1;
                }
            }
            if count > 0 {
                any = true;
                if (sum / count as f64).abs() >= delta {
                    return false;
                }
            }
        }
        any
    }
}

/// Where a frozen abstraction came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeInfo {
    pub iteration: u64,
    /// Sub-policy (stay=0 / switch=1 per stream) at the time of freezing.
    pub policy: Vec<u8>,
    /// Streams observed to be filtered by this abstraction; filled in by
    /// the harness after the run.
    pub encoded_streams: Vec<usize>,
}

/// Immutable saved extractor plus the slowness statistics used for
/// novelty filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenAbstraction {
    pub input_dim: usize,
    pub output_dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `output_dim x input_dim` extractor on `x - mean`.
    pub phi: Vec<f64>,
    pub inst_mean: Vec<f64>,
    pub inst_sd: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub provenance: FreezeInfo,
}

/// Snapshot the adaptive abstraction and its slowness statistics.
pub fn freeze(
    abs: &AdaptiveAbstraction,
    stats: &EtaStats,
    provenance: FreezeInfo,
) -> FrozenAbstraction {
    let phi = abs.composite();
    FrozenAbstraction {
        input_dim: abs.input_dim(),
        output_dim: abs.output_dim(),
        mean: abs.mean().iter().copied().collect(),
        phi: phi.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect(),
        inst_mean: stats.inst_mean().to_vec(),
        inst_sd: stats.inst_sd().iter().map(|s| s.max(SD_FLOOR)).collect(),
        degenerate: stats.inst_seen.iter().map(|seen| !seen).collect(),
        provenance,
    }
}

impl FrozenAbstraction {
    /// Replace the novelty band with statistics of this frozen extractor
    /// replayed over recent batches. Statistics accumulated while the
    /// extractor was still adapting can understate the variance the
    /// now-immutable copy will see — an extractor caught in a limit cycle
    /// synchronized with a periodic input looks stable batch to batch
    /// while the frozen snapshot does not. Replaying the final weights
    /// over a window spanning the input's phases measures the band the
    /// frozen copy actually produces.
    pub fn calibrate_band(&mut self, batches: &[Vec<DVector<f64>>]) -> Result<()> {
        if batches.is_empty() {
            return Ok(());
        }
        let mut mean = vec![0.0; self.output_dim];
        let mut m2 = vec![0.0; self.output_dim];
        let mut count = vec![0u64; self.output_dim];
        for batch in batches {
            let inst = self.inst_slowness(batch)?;
            for c in 0..self.output_dim {
                if let Some(v) = inst[c] {
                    count[c] += 1;
                    let delta = v - mean[c];
                    mean[c] += delta / count[c] as f64;
                    m2[c] += delta * (v - mean[c]);
                }
            }
        }
        for c in 0..self.output_dim {
            self.degenerate[c] = count[c] == 0;
            if count[c] > 0 {
                self.inst_mean[c] = mean[c];
                self.inst_sd[c] = (m2[c] / count[c] as f64).sqrt().max(SD_FLOOR);
            }
        }
        Ok(())
    }

    pub fn phi_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.output_dim, self.input_dim, &self.phi)
    }

    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        let centered = x - DVector::from_column_slice(&self.mean);
        Ok(self.phi_matrix() * centered)
    }

    pub fn outputs(&self, samples: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        samples.iter().map(|x| self.output(x)).collect()
    }

    /// Instantaneous slowness of this abstraction's outputs on the batch.
    pub fn inst_slowness(&self, samples: &[DVector<f64>]) -> Result<Vec<Option<f64>>> {
        Ok(eta_inst(&self.outputs(samples)?))
    }

    /// A batch is known to this abstraction when every non-degenerate
    /// component's instantaneous slowness lies inside its stored two-SD
    /// band.
    pub fn is_known(&self, samples: &[DVector<f64>]) -> Result<bool> {
        let inst = self.inst_slowness(samples)?;
        let mut checked = false;
        for c in 0..self.output_dim {
            if self.degenerate[c] {
                continue;
            }
            checked = true;
            match inst[c] {
                Some(v) => {
                    let lo = self.inst_mean[c] - 2.0 * self.inst_sd[c];
                    let hi = self.inst_mean[c] + 2.0 * self.inst_sd[c];
                    if v < lo || v > hi {
                        return Ok(false);
                    }
                }
                None => return Ok(false),
            }
        }
        Ok(checked)
    }
}

/// Ordered set of frozen abstractions (freeze order = easy-to-difficult).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbstractionLibrary {
    pub abstractions: Vec<FrozenAbstraction>,
}

impl AbstractionLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.abstractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abstractions.is_empty()
    }

    pub fn push(&mut self, frozen: FrozenAbstraction) {
        self.abstractions.push(frozen);
    }

    /// True iff the batch is known to none of the frozen abstractions.
    pub fn is_novel(&self, samples: &[DVector<f64>]) -> Result<bool> {
        for frozen in &self.abstractions {
            if frozen.is_known(samples)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
