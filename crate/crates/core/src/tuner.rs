//! Propose-test tuning loop with a doubling step.
//!
//! Each iteration proposes a noisy threshold `u + step*g + Lap(2/(k eps0))`
//! and scans the candidates in order, each against a fresh
//! `Lap(4/(k eps0))` perturbation of its utility. The first candidate at or
//! above the threshold is selected, `u` grows by `step*g` and the step
//! doubles; if nobody passes, the step is halved (integer floor). The loop
//! ends when the step reaches 0 or `u >= 1`.
//!
//! Unlike textbook AboveThreshold, the threshold noise is redrawn on every
//! iteration, not only after an acceptance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::accountant::{
    check_granularity, check_lower_bound, total_privacy, worst_case_iterations, CompositionMethod,
    CompositionReport, PrivacyParams, DEFAULT_DELTA_SLACK,
};
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{query_noise_scale, threshold_noise_scale, NoiseSource, RandomStream};
use crate::utility::{
    build_utility_table, Candidate, Dataset, Trainer, TrainerError, UtilityTable,
};

/// Largest step the loop may reach.
pub const MAX_STEP: u64 = 1 << 62;

/// Search space and loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub candidates: Vec<Candidate>,
    pub k: usize,
    /// Utility granularity, in (0, 1).
    pub g: f64,
    /// Utility lower bound the accumulation starts from, in [0, 1).
    pub u0: f64,
    pub privacy: PrivacyParams,
    /// Slack spent by advanced composition when reporting privacy.
    pub delta_slack: f64,
    pub composition: CompositionMethod,
}

impl TuningConfig {
    pub fn new(
        candidates: Vec<Candidate>,
        k: usize,
        g: f64,
        u0: f64,
        privacy: PrivacyParams,
    ) -> Result<Self> {
        let config = Self {
            candidates,
            k,
            g,
            u0,
            privacy,
            delta_slack: DEFAULT_DELTA_SLACK,
            composition: CompositionMethod::Advanced,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_accounting(
        mut self,
        delta_slack: f64,
        composition: CompositionMethod,
    ) -> Result<Self> {
        self.delta_slack = delta_slack;
        self.composition = composition;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        check_granularity(self.g)?;
        check_lower_bound(self.u0)?;
        if !(self.delta_slack > 0.0 && self.delta_slack < 1.0) {
            return Err(invalid(
                "delta_slack",
                format!("must lie in (0, 1), got {}", self.delta_slack),
            ));
        }
        Ok(())
    }
}

/// Loop state between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    pub u: f64,
    pub step: u64,
    pub count: u64,
    pub selected: Option<usize>,
}

impl TunerState {
    pub fn initial(u0: f64) -> Self {
        Self {
            u: u0,
            step: 1,
            count: 0,
            selected: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.step == 0 || self.u >= 1.0
    }

    /// One noise-free transition: on acceptance record the candidate, add
    /// `step*g` with the step before doubling, then double; otherwise halve.
    pub fn apply(&mut self, accepted: Option<usize>, g: f64) -> Result<()> {
        self.count += 1;
        match accepted {
            Some(s) => {
                self.selected = Some(s);
                self.u += self.step as f64 * g;
                if self.step > MAX_STEP / 2 {
                    return Err(Error::StepOverflow {
                        iteration: self.count,
                    });
                }
                self.step *= 2;
            }
            None => self.step /= 2,
        }
        Ok(())
    }
}

/// What happened in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    #[serde(rename = "iter")]
    pub iteration: u64,
    #[serde(rename = "threshold")]
    pub proposed_threshold: f64,
    pub scanned: usize,
    pub accepted: Option<usize>,
    #[serde(rename = "u")]
    pub u_after: f64,
    #[serde(rename = "step")]
    pub step_after: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepExhausted,
    UtilityCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    /// Index into the candidate list.
    pub selected: Option<usize>,
    pub selected_candidate: Option<Candidate>,
    pub u_final: f64,
    pub step_final: u64,
    pub iterations: u64,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
    pub privacy: CompositionReport,
}

/// `u + step*g + Lap(2/(k eps0))`, one fresh draw per call.
pub fn propose_threshold<N: NoiseSource + ?Sized>(
    state: &TunerState,
    config: &TuningConfig,
    noise: &mut N,
) -> Result<f64> {
    if state.step == 0 {
        return Err(invalid("step", "cannot propose a threshold with step 0"));
    }
    let scale = threshold_noise_scale(config.k, config.privacy.eps0())?;
    Ok(state.u + state.step as f64 * config.g + noise.laplace(scale))
}

/// Result of one AboveThreshold pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scan {
    pub accepted: Option<usize>,
    /// Candidates that drew noise (up to and including the accepted one).
    pub scanned: usize,
}

/// Tests candidates in order against `threshold`, each with a fresh
/// `Lap(4/(k eps0))` draw, and stops at the first `u_s + noise >= threshold`.
pub fn scan_candidates<N: NoiseSource + ?Sized>(
    utilities: &UtilityTable,
    threshold: f64,
    config: &TuningConfig,
    noise: &mut N,
) -> Result<Scan> {
    let scale = query_noise_scale(config.k, config.privacy.eps0())?;
    for (s, &u_s) in utilities.utilities().iter().enumerate() {
        if u_s + noise.laplace(scale) >= threshold {
            return Ok(Scan {
                accepted: Some(s),
                scanned: s + 1,
            });
        }
    }
    Ok(Scan {
        accepted: None,
        scanned: utilities.len(),
    })
}

/// Runs one iteration from `state` and advances it.
pub fn step_once<N: NoiseSource + ?Sized>(
    state: &mut TunerState,
    config: &TuningConfig,
    utilities: &UtilityTable,
    noise: &mut N,
) -> Result<IterationRecord> {
    let threshold = propose_threshold(state, config, noise)?;
    let scan = scan_candidates(utilities, threshold, config, noise)?;
    state.apply(scan.accepted, config.g)?;
    Ok(IterationRecord {
        iteration: state.count,
        proposed_threshold: threshold,
        scanned: scan.scanned,
        accepted: scan.accepted,
        u_after: state.u,
        step_after: state.step,
    })
}

fn check_table(config: &TuningConfig, utilities: &UtilityTable) -> Result<()> {
    if utilities.len() != config.candidates.len() {
        return Err(invalid(
            "utilities",
            format!(
                "{} rows for {} candidates",
                utilities.len(),
                config.candidates.len()
            ),
        ));
    }
    if utilities.k() != config.k {
        return Err(invalid(
            "utilities",
            format!(
                "built with k={} but config has k={}",
                utilities.k(),
                config.k
            ),
        ));
    }
    Ok(())
}

fn finish(
    config: &TuningConfig,
    state: TunerState,
    trace: Vec<IterationRecord>,
) -> Result<TuningOutcome> {
    let termination = if state.u >= 1.0 {
        Termination::UtilityCap
    } else {
        Termination::StepExhausted
    };
    let privacy = total_privacy(
        &config.privacy,
        state.count,
        config.delta_slack,
        config.composition,
    )?;
    Ok(TuningOutcome {
        selected: state.selected,
        selected_candidate: state.selected.map(|s| config.candidates[s].clone()),
        u_final: state.u,
        step_final: state.step,
        iterations: state.count,
        termination,
        trace,
        privacy,
    })
}

/// Runs the loop to termination and reports the selection, the full trace
/// and the privacy spent. Running out of step without any acceptance is
/// not an error here: the outcome simply has no selection.
pub fn run_tuning<N: NoiseSource + ?Sized>(
    config: &TuningConfig,
    utilities: &UtilityTable,
    noise: &mut N,
) -> Result<TuningOutcome> {
    config.validate()?;
    check_table(config, utilities)?;
    let cap = worst_case_iterations(config.g, config.u0)?;
    let mut state = TunerState::initial(config.u0);
    let mut trace = Vec::new();
    while !state.is_terminal() {
        trace.push(step_once(&mut state, config, utilities, noise)?);
        debug_assert!(
            state.count <= cap,
            "iteration {} exceeds cap {cap}",
            state.count
        );
    }
    finish(config, state, trace)
}

/// Drives the noise-free state machine with a fixed accept/reject schedule
/// (an acceptance selects candidate 0). Stops at termination or when the
/// schedule runs out. The recorded thresholds are the noise-free
/// `u + step*g`.
pub fn run_schedule<I>(g: f64, u0: f64, schedule: I) -> Result<Vec<IterationRecord>>
where
    I: IntoIterator<Item = bool>,
{
    check_granularity(g)?;
    check_lower_bound(u0)?;
    let mut state = TunerState::initial(u0);
    let mut trace = Vec::new();
    for accept in schedule {
        if state.is_terminal() {
            break;
        }
        let threshold = state.u + state.step as f64 * g;
        let accepted = accept.then_some(0);
        state.apply(accepted, g)?;
        trace.push(IterationRecord {
            iteration: state.count,
            proposed_threshold: threshold,
            scanned: 1,
            accepted,
            u_after: state.u,
            step_after: state.step,
        });
    }
    Ok(trace)
}

/// Writes one JSON object per iteration:
/// `{"iter":..,"threshold":..,"scanned":..,"accepted":..,"u":..,"step":..}`.
pub fn write_trace_jsonl<W: Write>(trace: &[IterationRecord], mut out: W) -> std::io::Result<()> {
    for record in trace {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Final training on the full training set with the selected candidate.
pub trait PrivateTrainHook {
    type Model;

    fn private_train(
        &mut self,
        data: &Dataset,
        candidate: &Candidate,
        eps: f64,
        delta: f64,
        stream: &mut RandomStream,
    ) -> std::result::Result<Self::Model, TrainerError>;
}

impl<M, F> PrivateTrainHook for F
where
    F: FnMut(
        &Dataset,
        &Candidate,
        f64,
        f64,
        &mut RandomStream,
    ) -> std::result::Result<M, TrainerError>,
{
    type Model = M;

    fn private_train(
        &mut self,
        data: &Dataset,
        candidate: &Candidate,
        eps: f64,
        delta: f64,
        stream: &mut RandomStream,
    ) -> std::result::Result<M, TrainerError> {
        self(data, candidate, eps, delta, stream)
    }
}

const TABLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const FINAL_STREAM: u64 = 3;

/// Builds the utility table, runs the loop with `noise`, and trains the
/// selected candidate on the whole training set through `hook`.
pub fn tune_and_train_with_noise<T, H, N>(
    config: &TuningConfig,
    train: &Dataset,
    valid: &Dataset,
    trainer: &T,
    hook: &mut H,
    noise: &mut N,
    stream: &RandomStream,
) -> Result<(TuningOutcome, H::Model)>
where
    T: Trainer + ?Sized,
    H: PrivateTrainHook,
    N: NoiseSource + ?Sized,
{
    config.validate()?;
    let table = build_utility_table(
        trainer,
        train,
        valid,
        config.k,
        &config.candidates,
        &stream.substream(TABLE_STREAM),
    )?;
    let outcome = run_tuning(config, &table, noise)?;
    let Some(candidate) = outcome.selected_candidate.clone() else {
        return Err(Error::NoCandidateSelected(Box::new(outcome)));
    };
    let mut final_stream = stream.substream(FINAL_STREAM);
    let model = hook
        .private_train(
            train,
            &candidate,
            config.privacy.eps(),
            config.privacy.delta(),
            &mut final_stream,
        )
        .map_err(|e| Error::PrivateTrain(e.0))?;
    Ok((outcome, model))
}

/// [`tune_and_train_with_noise`] with loop noise drawn from a substream of
/// `stream`.
pub fn tune_and_train<T, H>(
    config: &TuningConfig,
    train: &Dataset,
    valid: &Dataset,
    trainer: &T,
    hook: &mut H,
    stream: &RandomStream,
) -> Result<(TuningOutcome, H::Model)>
where
    T: Trainer + ?Sized,
    H: PrivateTrainHook,
{
    let mut noise = stream.substream(NOISE_STREAM);
    tune_and_train_with_noise(config, train, valid, trainer, hook, &mut noise, stream)
}
