//! Online slow feature analysis.
//!
//! The adaptive abstraction maintains an amnesic running mean, a
//! covariance-free incremental PCA for whitening, and a minor-component
//! extractor on whitened derivatives. The composite extractor is the
//! linear map `phi = W * diag(1/sqrt(lambda)) * Vhat^T` applied to
//! mean-centered inputs; its per-step Frobenius change `xi` is the
//! learning-progress signal consumed by the reward system.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-9;

/// Hyper-parameters of the online extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncSfaParams {
    /// Minor-component learning rate (nu).
    pub learning_rate: f64,
    /// Lateral inhibition strength between slow-feature rows.
    pub inhibition: f64,
    /// Amnesic parameter for the PCA/mean rate (1 + mu) / t.
    pub amnesic_mu: f64,
    /// Lower bound on the amnesic rate. Temporally correlated streams
    /// stall the principal-component estimates under a pure 1/t decay;
    /// the floor keeps them tracking.
    pub amnesic_floor: f64,
    /// No slow-feature updates for this many initial samples.
    pub warmup: u64,
}

impl Default for IncSfaParams {
    fn default() -> Self {
        IncSfaParams {
            learning_rate: 0.05,
            inhibition: 2.0,
            amnesic_mu: 2.0,
            amnesic_floor: 1e-3,
            warmup: 50,
        }
    }
}

/// The online slow-feature extractor state.
#[derive(Debug, Clone)]
pub struct AdaptiveAbstraction {
    input_dim: usize,
    output_dim: usize,
    rank: usize,
    params: IncSfaParams,
    mean: DVector<f64>,
    /// Unnormalized principal component estimates; the norm of each is the
    /// eigenvalue estimate.
    pcs: Vec<DVector<f64>>,
    /// Slow-feature rows in whitened space, unit norm.
    sf: Vec<DVector<f64>>,
    count: u64,
    prev_whitened: Option<DVector<f64>>,
}

impl AdaptiveAbstraction {
    /// Create a fresh abstraction with random orthonormal slow-feature
    /// rows drawn from `rng`.
    pub fn new<R: Rng>(
        input_dim: usize,
        output_dim: usize,
        rank: usize,
        params: IncSfaParams,
        rng: &mut R,
    ) -> Self {
        let rank = rank.min(input_dim).max(output_dim);
        let gauss = DMatrix::from_fn(rank, output_dim, |_, _| {
            // Box-Muller keeps us off rand_distr for one sampler.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let qr = gauss.qr();
        let q = qr.q();
        let sf = (0..output_dim).map(|j| q.column(j).into_owned()).collect();
        AdaptiveAbstraction {
            input_dim,
            output_dim,
            rank,
            params,
            mean: DVector::zeros(input_dim),
            pcs: vec![DVector::zeros(input_dim); rank],
            sf,
            count: 0,
            prev_whitened: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn sample_count(&self) -> u64 {
        self.count
    }

    pub fn params(&self) -> &IncSfaParams {
        &self.params
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn is_warm(&self) -> bool {
        self.count > self.params.warmup
    }

    /// Eigenvalue estimates of the input covariance.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.pcs.iter().map(|v| v.norm()).collect()
    }

    /// Forget the derivative predecessor. Call when the next update's
    /// sample is not the temporal successor of the previous one (stream
    /// switch, batch gap).
    pub fn reset_derivative(&mut self) {
        self.prev_whitened = None;
    }

    /// The composite linear extractor (output_dim x input_dim), applied
    /// to `x - mean`.
    pub fn composite(&self) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(self.output_dim, self.input_dim);
        for (i, pc) in self.pcs.iter().enumerate() {
            let lam = pc.norm();
            if lam < EIGEN_FLOOR {
                continue;
            }
            let row = pc / lam;
            let scale = 1.0 / lam.sqrt();
            for j in 0..self.output_dim {
                let w = self.sf[j][i] * scale;
                for k in 0..self.input_dim {
                    phi[(j, k)] += w * row[k];
                }
            }
        }
        phi
    }

    /// Slow-feature rows (unit vectors in whitened space) stacked into an
    /// `output_dim x rank` matrix.
    pub fn feature_rows(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.output_dim, self.rank, |j, i| self.sf[j][i])
    }

    fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        let centered = x - &self.mean;
        DVector::from_fn(self.rank, |i, _| {
            let lam = self.pcs[i].norm();
            if lam < EIGEN_FLOOR {
                0.0
            } else {
                self.pcs[i].dot(&centered) / lam / lam.sqrt()
            }
        })
    }

    /// One online update. Returns the Frobenius norm of the change of the
    /// composite extractor (0 during warm-up).
    pub fn update(&mut self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        self.count += 1;
        let t = self.count as f64;
        let rate = ((1.0 + self.params.amnesic_mu) / t)
            .max(self.params.amnesic_floor)
            .min(0.9);

        let track_change = self.is_warm();
        let before = if track_change { Some(self.composite()) } else { None };

        self.mean = &self.mean * (1.0 - rate) + x * rate;
        let mut residual = x - &self.mean;
        for pc in &mut self.pcs {
            if residual.norm() < 1e-12 {
                break;
            }
            let norm = pc.norm();
            if norm < EIGEN_FLOOR {
                *pc = residual.clone();
            } else {
                let proj = residual.dot(pc) / norm;
                *pc = &*pc * (1.0 - rate) + &residual * (rate * proj);
            }
            let norm = pc.norm();
            if norm > EIGEN_FLOOR {
                let unit = &*pc / norm;
                let coeff = residual.dot(&unit);
                residual -= unit * coeff;
            }
        }

        let z = self.whiten(x);
        if self.count > self.params.warmup {
            if let Some(prev) = &self.prev_whitened {
                let dz = &z - prev;
                let nu = self.params.learning_rate;
                let gamma = self.params.inhibition;
                for j in 0..self.output_dim {
                    let drive = dz.dot(&self.sf[j]);
                    let mut delta = &dz * drive;
                    for k in 0..j {
                        let overlap = self.sf[k].dot(&self.sf[j]);
                        delta += &self.sf[k] * (gamma * overlap);
                    }
                    self.sf[j] -= delta * nu;
                    let norm = self.sf[j].norm();
                    if norm > 1e-12 {
                        self.sf[j] /= norm;
                    }
                }
            }
        }
        self.prev_whitened = Some(z);

        Ok(match before {
            Some(before) => (self.composite() - before).norm(),
            None => 0.0,
        })
    }

    /// Instantaneous slow-feature output for one observation.
    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.is_warm() {
            return Err(Error::WarmupIncomplete {
                seen: self.count,
                required: self.params.warmup + 1,
            });
        }
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        let z = self.whiten(x);
        Ok(DVector::from_fn(self.output_dim, |j, _| self.sf[j].dot(&z)))
    }

    pub fn to_snapshot(&self) -> AbstractionSnapshot {
        AbstractionSnapshot {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            rank: self.rank,
            params: self.params.clone(),
            count: self.count,
            mean: self.mean.iter().copied().collect(),
            pcs: self.pcs.iter().flat_map(|v| v.iter().copied()).collect(),
            sf: self.sf.iter().flat_map(|v| v.iter().copied()).collect(),
        }
    }

    pub fn from_snapshot(s: &AbstractionSnapshot) -> Self {
        AdaptiveAbstraction {
            input_dim: s.input_dim,
            output_dim: s.output_dim,
            rank: s.rank,
            params: s.params.clone(),
            mean: DVector::from_vec(s.mean.clone()),
            pcs: s
                .pcs
                .chunks(s.input_dim)
                .map(|c| DVector::from_column_slice(c))
                .collect(),
            sf: s.sf.chunks(s.rank).map(|c| DVector::from_column_slice(c)).collect(),
            count: s.count,
            prev_whitened: None,
        }
    }
}

/// Self-describing serialized form of an abstraction (JSON header plus
/// flat arrays).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionSnapshot {
    pub input_dim: usize,
    pub output_dim: usize,
    pub rank: usize,
    pub params: IncSfaParams,
    pub count: u64,
    pub mean: Vec<f64>,
    pub pcs: Vec<f64>,
    pub sf: Vec<f64>,
}

/// Per-sample Frobenius-change accumulator with two tumbling windows of
/// `tau` samples each.
#[derive(Debug, Clone)]
pub struct WeightChangeTracker {
    tau: usize,
    acc_sum: f64,
    acc_count: usize,
    current: Option<f64>,
    previous: Option<f64>,
}

impl WeightChangeTracker {
    pub fn new(tau: usize) -> Self {
        WeightChangeTracker { tau, acc_sum: 0.0, acc_count: 0, current: None, previous: None }
    }

    pub fn push(&mut self, xi: f64) {
        debug_assert!(xi >= 0.0);
        self.acc_sum += xi;
        self.acc_count += 1;
        if self.acc_count == self.tau {
            self.previous = self.current;
            self.current = Some(self.acc_sum / self.tau as f64);
            self.acc_sum = 0.0;
            self.acc_count = 0;
        }
    }

    /// Current window mean and its first difference across windows.
    pub fn window_means(&self) -> Result<(f64, f64)> {
        match (self.current, self.previous) {
            (Some(cur), Some(prev)) => Ok((cur, cur - prev)),
            _ => Err(Error::WindowsNotReady),
        }
    }

    pub fn reset(&mut self) {
        *self = WeightChangeTracker::new(self.tau);
    }
}

/// Batch SFA: whiten the data, eigen-decompose the derivative covariance,
/// return the mean and the `j` slowest directions as a `j x I` extractor
/// on `x - mean`. Independent of the incremental path; used as a test
/// oracle.
pub fn batch_sfa(data: &[DVector<f64>], j: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = data.first().map_or(0, |x| x.len());
    if data.len() < dim + 1 {
        return Err(Error::SingularCovariance);
    }
    let n = data.len() as f64;
    let mut mean = DVector::zeros(dim);
    for x in data {
        mean += x;
    }
    mean /= n;

    let mut cov = DMatrix::zeros(dim, dim);
    for x in data {
        let c = x - &mean;
        cov.syger(1.0 / n, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    let eig = cov.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if eig.eigenvalues.iter().any(|&v| v <= 1e-12 * max_ev.max(1.0)) {
        return Err(Error::SingularCovariance);
    }
    // Whitening transform S: z = S^T (x - mean).
    let mut sphere = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let col = eig.eigenvectors.column(k) / eig.eigenvalues[k].sqrt();
        sphere.set_column(k, &col);
    }

    let mut dcov = DMatrix::zeros(dim, dim);
    let mut prev: Option<DVector<f64>> = None;
    let mut count = 0.0;
    for x in data {
        let z = sphere.transpose() * (x - &mean);
        if let Some(p) = prev {
            let dz = &z - p;
            dcov.syger(1.0, &dz, &dz, 1.0);
            count += 1.0;
        }
        prev = Some(z);
    }
    dcov /= count;
    dcov.fill_upper_triangle_with_lower_triangle();
    let deig = dcov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| deig.eigenvalues[a].total_cmp(&deig.eigenvalues[b]));

    let mut phi = DMatrix::zeros(j, dim);
    for (row, &k) in order.iter().take(j).enumerate() {
        let dir = &sphere * deig.eigenvectors.column(k);
        phi.set_row(row, &dir.transpose());
    }
    Ok((mean, phi))
}
