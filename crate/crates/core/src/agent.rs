//! The full control loop: batch acquisition, novelty gating, extractor
//! update, reward and policy update, convergence-triggered freezing, and
//! termination.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cdrl::{
    intrinsic_reward, select_action, solve_policy, EpsilonSchedule, LegacyRewardEstimator,
    MeanRewardEstimator, QFunction, RewardEstimator, RewardParams, SubPolicy,
};
use crate::config::{ExperimentConfig, RewardMode, RewardReset};
use crate::error::{Error, Result};
use crate::gating::{eta_inst, freeze, AbstractionLibrary, EtaStats, FreezeInfo};
use crate::incsfa::AdaptiveAbstraction;
use crate::stream_env::{Environment, StreamId};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Smoothing rate of the per-slot difficulty estimate when a sample comes
/// in below the current value; see the asymmetric update in `observe`.
const DIFFICULTY_FAST_DROP: f64 = 0.5;

/// One iteration's log row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub s: usize,
    pub a: u8,
    pub s_next: usize,
    /// Epsilon used for this iteration's action selection.
    pub epsilon: f64,
    pub novel: bool,
    pub reward: Option<f64>,
    pub xi_mean: Option<f64>,
    pub xi_dot: Option<f64>,
    /// Net extractor displacement per sample over this batch.
    pub drift: Option<f64>,
    pub eta: Vec<Option<f64>>,
    pub eta_dot: Vec<Option<f64>>,
    pub policy: Vec<u8>,
    pub q: Vec<f64>,
}

/// Emitted when the adaptive abstraction is frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreezeEvent {
    pub iteration: u64,
    /// 1-based index of the abstraction.
    pub u: usize,
    pub final_eta: Vec<Option<f64>>,
    pub inst_mean: Vec<f64>,
    pub inst_sd: Vec<f64>,
    pub policy: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Every acquired batch was filtered as known for `patience`
    /// consecutive iterations.
    AllLearned,
    Budget,
}

/// Final result of a trial: the ordered abstractions, their sub-policies,
/// and the full iteration log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedResult {
    pub library: AbstractionLibrary,
    pub policies: Vec<SubPolicy>,
    pub freezes: Vec<FreezeEvent>,
    pub termination: Termination,
    pub iterations: u64,
    #[serde(skip)]
    pub records: Vec<IterationRecord>,
    /// Greedy policy at termination (the converging sub-policy when no
    /// freeze happened).
    pub final_policy: SubPolicy,
}

/// Mutable state of one learning trial.
pub struct Agent {
    config: ExperimentConfig,
    env: Environment,
    rng: ChaCha8Rng,
    abstraction: AdaptiveAbstraction,
    stats: EtaStats,
    /// Lowest net extractor displacement per sample ever observed on a
    /// batch from each stream slot under the current adaptive extractor.
    /// Learning progress is measured against this watermark: dropping
    /// below it is new ground (positive progress, finite total per
    /// stream), while recovery after interference from other streams
    /// re-earns nothing. Plain batch-to-batch differences telescope to
    /// zero under interference and hide the systematic descent.
    drift_floor: Vec<Option<f64>>,
    /// Smoothed mastery statistic per slot over this module's novel
    /// batches: the module's running estimate of how hard each stream is.
    /// The intrinsic reward flows only to the easiest stream not yet
    /// encoded — the stream this module is actually for — so harder
    /// streams wait their turn and an already-encoded stream (filtered,
    /// so never re-estimated) cannot hold the reward hostage.
    difficulty: Vec<Option<f64>>,
    /// Consecutive finite mastery samples folded into each slot's
    /// difficulty estimate; a freshly (re)started estimate converges
    /// faster downward for its first few samples.
    difficulty_fresh: Vec<u32>,
    library: AbstractionLibrary,
    reward: RewardEstimator,
    reward_params: RewardParams,
    sched: EpsilonSchedule,
    policy: SubPolicy,
    q: QFunction,
    policies: Vec<SubPolicy>,
    freezes: Vec<FreezeEvent>,
    iteration: u64,
    filtered_streak: u64,
    last_updated_stream: Option<StreamId>,
    /// Stream of the previous batch, whether or not it updated the
    /// extractor.
    last_batch_stream: Option<StreamId>,
    /// Updating batches since the last stream change of any kind;
    /// convergence is only trusted after a genuine parking streak, which
    /// cannot occur while exploration is still high.
    update_streak: u64,
    /// Updating batches consumed by the current adaptive extractor; reward
    /// attribution starts after `config.reward_warmup` of them.
    update_batches: u64,
    /// Samples of the most recent updating batches from the current
    /// parking streak, kept for the freeze-time band replay.
    recent_batches: std::collections::VecDeque<Vec<DVector<f64>>>,
}

impl Agent {
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = Environment::new(
            &config.streams,
            config.tau,
            config.clock,
            config.swap.clone(),
            seed,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let n = config.n();
        let input_dim = config.streams[0].dim();
        let rank = config.pca_rank.unwrap_or(input_dim).min(input_dim);
        let abstraction = AdaptiveAbstraction::new(
            input_dim,
            config.num_features,
            rank,
            config.incsfa_params(),
            &mut rng,
        );
        let stats = EtaStats::new(config.num_features, config.eta_rates.clone());
        let reward = match config.reward_mode {
            RewardMode::Mean => RewardEstimator::Mean(MeanRewardEstimator::new(n)),
            RewardMode::Legacy => {
                RewardEstimator::Legacy(LegacyRewardEstimator::new(n, config.alpha))
            }
        };
        let reward_params =
            RewardParams { beta: config.effective_beta(), sigma: config.sigma };
        let sched = EpsilonSchedule::new(
            config.epsilon.initial,
            config.epsilon.decay,
            config.epsilon.stages.clone(),
        );
        let (q, policy) = solve_policy(&reward.tensor(), config.gamma);
        Ok(Agent {
            config,
            env,
            rng,
            abstraction,
            stats,
            drift_floor: vec![None; n],
            difficulty: vec![None; n],
            library: AbstractionLibrary::new(),
            reward,
            reward_params,
            sched,
            policy,
            q,
            policies: Vec::new(),
            freezes: Vec::new(),
            iteration: 0,
            filtered_streak: 0,
            last_updated_stream: None,
            last_batch_stream: None,
            update_streak: 0,
            update_batches: 0,
            recent_batches: std::collections::VecDeque::new(),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn library(&self) -> &AbstractionLibrary {
        &self.library
    }

    pub fn policy(&self) -> &SubPolicy {
        &self.policy
    }

    pub fn epsilon(&self) -> f64 {
        self.sched.epsilon()
    }

    pub fn filtered_streak(&self) -> u64 {
        self.filtered_streak
    }

    fn fresh_abstraction(&mut self) {
        let input_dim = self.abstraction.input_dim();
        let rank = self.config.pca_rank.unwrap_or(input_dim).min(input_dim);
        self.abstraction = AdaptiveAbstraction::new(
            input_dim,
            self.config.num_features,
            rank,
            self.config.incsfa_params(),
            &mut self.rng,
        );
        self.stats =
            EtaStats::new(self.config.num_features, self.config.eta_rates.clone());
        for floor in &mut self.drift_floor {
            *floor = None;
        }
        for diff in &mut self.difficulty {
            *diff = None;
        }
        self.last_updated_stream = None;
        self.update_streak = 0;
        self.update_batches = 0;
        self.recent_batches.clear();
    }

    /// One full cycle of the control flow. Returns the log row and the
    /// freeze event if the abstraction was saved this iteration.
    pub fn run_iteration(&mut self) -> Result<(IterationRecord, Option<FreezeEvent>)> {
        if self.iteration >= self.config.budget {
            return Err(Error::BudgetExhausted);
        }
        self.env.apply_swap(self.sched.epsilon());

        let s_prev = self.env.current();
        let epsilon = self.sched.epsilon();
        let action = select_action(&self.policy, s_prev.0, &mut self.sched, &mut self.rng);
        let batch = self.env.step(action);
        let s_curr = batch.stream;

        let novel = self.library.is_novel(&batch.samples)?;
        if self.last_batch_stream != Some(s_curr) {
            self.update_streak = 0;
            self.recent_batches.clear();
        }
        self.last_batch_stream = Some(s_curr);
        let (reward, xi_mean, xi_dot, drift_out) = if novel {
            if self.last_updated_stream != Some(s_curr) {
                self.abstraction.reset_derivative();
            }
            self.update_streak += 1;
            self.update_batches += 1;
            let warm_reward = self.update_batches > self.config.reward_warmup;
            let comp_before = self.abstraction.composite();
            let mean_before = self.abstraction.mean().clone_owned();
            let warm_before = self.abstraction.is_warm();
            let mut xi_sum = 0.0;
            for x in &batch.samples {
                xi_sum += self.abstraction.update(x)?;
            }
            // Slowness statistics use the batch-start snapshot applied to
            // the whole batch. Outputs produced mid-update can track the
            // input's phase and hide variance that a frozen copy of the
            // extractor would exhibit; the lagged snapshot measures the
            // extractor as the frozen copy will behave.
            let outputs: Vec<DVector<f64>> = if warm_before {
                batch
                    .samples
                    .iter()
                    .map(|x| &comp_before * (x - &mean_before))
                    .collect()
            } else {
                Vec::new()
            };
            if outputs.len() >= 2 {
                self.stats.update(&outputs);
            }
            self.recent_batches.push_back(batch.samples.clone());
            if self.recent_batches.len() > self.config.eta_rates.settle {
                self.recent_batches.pop_front();
            }
            self.last_updated_stream = Some(s_curr);
            self.filtered_streak = 0;
            // Learning progress is the decline of the *net* extractor
            // displacement between visits to this stream; net displacement
            // cancels the zero-mean step jitter of a converged extractor,
            // which would otherwise bury the systematic learning motion.
            // Mastery feeds the expert term with the mean per-step weight
            // change normalized by the cubed angular speed of the slowest
            // extracted feature: a very slow feature is only trusted once
            // the weights are proportionally quiet, so hard streams stay
            // far from the expert bonus while easy mastered ones reach it.
            let level = xi_sum / batch.len() as f64;
            let drift = (self.abstraction.composite() - comp_before).norm()
                / batch.len() as f64;
            let slowest = outputs
                .len()
                .ge(&2)
                .then(|| eta_inst(&outputs))
                .map(|etas| etas.into_iter().flatten().fold(f64::INFINITY, f64::min))
                .filter(|eta| eta.is_finite());
            let mastery = match slowest {
                Some(eta) => {
                    let speed = (TWO_PI * eta).powi(3);
                    self.config.mastery_scale * level / speed.max(f64::MIN_POSITIVE)
                }
                // Degenerate (constant) outputs: the stream exposes no
                // recoverable slow structure, so it can never count as
                // mastered and earns no expert bonus.
                None => f64::INFINITY,
            };
            let slot = s_curr.0;
            // Constant input carries no recoverable structure at all;
            // varying input whose outputs still collapse means the basis
            // has not absorbed this content yet — its difficulty is
            // unknown, not infinite.
            let live_input = batch
                .samples
                .iter()
                .any(|x| (x - &batch.samples[0]).norm() > 1e-9);
            self.difficulty[slot] = if mastery.is_finite() {
                Some(match self.difficulty[slot] {
                    Some(prev) if prev.is_finite() => {
                        // Overestimates come from transient output churn
                        // while underestimates are rare, so the estimate
                        // drops quickly and rises slowly; one noisy high
                        // sample then cannot lock a genuinely easy stream
                        // out of the reward for the rest of the module.
                        let rate = if mastery < prev {
                            DIFFICULTY_FAST_DROP
                        } else {
                            self.config.difficulty_ema
                        };
                        prev + rate * (mastery - prev)
                    }
                    // First estimate for this slot, or its content changed
                    // between degenerate and live: restart the estimate.
                    _ => mastery,
                })
            } else if live_input {
                None
            } else {
                Some(f64::INFINITY)
            };
            let prior_floor = self.drift_floor[slot];
            let easiest = self
                .difficulty
                .iter()
                .flatten()
                .fold(f64::INFINITY, |a, &b| a.min(b));
            // Unmeasured live content is optimistically treated as the
            // easiest: unexplored structure is exactly what this module
            // is looking for.
            let is_easiest = match self.difficulty[slot] {
                Some(d) => d.is_finite() && d <= easiest,
                None => true,
            };
            // New ground below the watermark is genuine progress; the
            // total payable per stream is finite (first displacement
            // minus the converged floor), so recovery after interference
            // from other streams re-earns nothing. Rewarded batches drop
            // the watermark by at most `progress_step`, metering the
            // payout over visits; unrewarded ones absorb the descent
            // outright.
            let booked = if mastery.is_finite() || live_input {
                match prior_floor {
                    Some(floor) if drift < floor => {
                        if warm_reward && is_easiest {
                            let step = (floor - drift).min(self.config.progress_step);
                            self.drift_floor[slot] = Some(floor - step);
                            step
                        } else {
                            self.drift_floor[slot] = Some(drift);
                            0.0
                        }
                    }
                    Some(_) => 0.0,
                    None => {
                        self.drift_floor[slot] = Some(drift);
                        // First contact with fresh content books one
                        // installment: learnable novelty showing up is
                        // itself progress, and the visits right after a
                        // change are the ones a settling policy makes.
                        if warm_reward && is_easiest {
                            self.config.progress_step
                        } else {
                            0.0
                        }
                    }
                }
            } else {
                // A degenerate stream has no meaningful displacement
                // watermark; dropping it lets a live stream swapped into
                // this slot start a fresh one.
                self.drift_floor[slot] = None;
                0.0
            };
            if warm_reward {
                if is_easiest {
                    let dot = -self.config.progress_gain * booked;
                    // The expert bonus rewards settled engagement with the
                    // stream: it pays only when this batch continues the
                    // previous one, so a policy that merely cycles through
                    // the streams collects nothing and cannot lock itself
                    // in. Far beyond the expert width the Gaussian has no
                    // usable gradient; saturating the statistic a few
                    // widths out keeps a faint pull toward the stream this
                    // module is for even before it is mastered.
                    let graded = if self.update_streak < 2 {
                        f64::INFINITY
                    } else if self.reward_params.sigma > 0.0 {
                        mastery.min(2.5 * self.reward_params.sigma)
                    } else {
                        mastery
                    };
                    let r = intrinsic_reward(graded, dot, &self.reward_params);
                    (Some(r), Some(mastery), Some(dot), Some(drift))
                } else {
                    // Not the stream this module is for: no income, but
                    // the visit still counts toward the reward estimate.
                    (Some(0.0), Some(mastery), Some(0.0), Some(drift))
                }
            } else {
                (None, Some(mastery), None, Some(drift))
            }
        } else {
            // Encoded streams are not trained on: no learning progress and
            // no mastery bonus, so the attributed reward is exactly zero.
            self.filtered_streak += 1;
            (Some(0.0), Some(0.0), Some(0.0), None)
        };
        if let Some(r) = reward {
            self.reward.update(s_prev.0, action.index(), s_curr.0, r);
            let (q, policy) = solve_policy(&self.reward.tensor(), self.config.gamma);
            self.q = q;
            self.policy = policy;
        }

        let mut freeze_event = None;
        let settled_on_one_stream =
            self.update_streak >= self.config.eta_rates.settle as u64;
        if novel && settled_on_one_stream && self.stats.converged(self.config.delta) {
            let u = self.library.len() + 1;
            let info = FreezeInfo {
                iteration: self.iteration,
                policy: self.policy.0.clone(),
                encoded_streams: Vec::new(),
            };
            let mut frozen = freeze(&self.abstraction, &self.stats, info);
            let replay: Vec<Vec<DVector<f64>>> =
                self.recent_batches.iter().cloned().collect();
            frozen.calibrate_band(&replay)?;
            let event = FreezeEvent {
                iteration: self.iteration,
                u,
                final_eta: self.stats.eta().unwrap_or(&[]).to_vec(),
                inst_mean: frozen.inst_mean.clone(),
                inst_sd: frozen.inst_sd.clone(),
                policy: self.policy.0.clone(),
            };
            self.library.push(frozen);
            self.policies.push(self.policy.clone());
            self.freezes.push(event.clone());
            self.sched.reset();
            if self.config.reward_reset == RewardReset::OnFreeze {
                self.reward.reset();
                let (q, policy) =
                    solve_policy(&self.reward.tensor(), self.config.gamma);
                self.q = q;
                self.policy = policy;
            }
            self.fresh_abstraction();
            freeze_event = Some(event);
        }

        let record = IterationRecord {
            iteration: self.iteration,
            s: s_prev.0,
            a: action.index() as u8,
            s_next: s_curr.0,
            epsilon,
            novel,
            reward,
            xi_mean,
            xi_dot,
            drift: drift_out,
            eta: self.stats.eta().unwrap_or(&[]).to_vec(),
            eta_dot: self.stats.eta_dot().unwrap_or(&[]).to_vec(),
            policy: self.policy.0.clone(),
            q: self.q.values.clone(),
        };
        self.iteration += 1;
        Ok((record, freeze_event))
    }

    /// Run to termination: either every batch is filtered as known for
    /// `patience` consecutive iterations, or the budget is hit.
    pub fn run_trial(mut self) -> Result<LearnedResult> {
        let mut records = Vec::new();
        let termination = loop {
            if self.iteration >= self.config.budget {
                break Termination::Budget;
            }
            let (record, _) = self.run_iteration()?;
            records.push(record);
            if self.filtered_streak >= self.config.patience {
                break Termination::AllLearned;
            }
        };
        Ok(LearnedResult {
            library: self.library,
            policies: self.policies,
            freezes: self.freezes,
            termination,
            iterations: self.iteration,
            records,
            final_policy: self.policy,
        })
    }
}

/// Convenience wrapper: build and run one seeded trial.
pub fn run_trial(config: &ExperimentConfig, seed: u64) -> Result<LearnedResult> {
    Agent::new(config.clone(), seed)?.run_trial()
}
