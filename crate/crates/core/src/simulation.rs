//! Seeded simulations of the tuning loop on synthetic utility tables:
//! per-seed traces, the alternating worst case, iteration-count sweeps over
//! `(u* - u0)/g`, and an empirical distinguishability check of a single
//! iteration on neighbouring datasets.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{PrivacyParams, DEFAULT_DELTA_SLACK};
use crate::error::{invalid, Result};
use crate::mechanisms::RandomStream;
use crate::tuner::{
    run_schedule, run_tuning, step_once, IterationRecord, Termination, TunerState, TuningConfig,
    TuningOutcome,
};
use crate::utility::{
    build_utility_table, partition_index, Candidate, Dataset, NearestCentroid, Record, UtilityTable,
};

/// Base seed of the shipped simulation configs.
pub const DEFAULT_BASE_SEED: u64 = 2022;

/// Default `(u* - u0)/g` ratios swept.
pub const DEFAULT_RATIOS: [u64; 7] = [10, 20, 50, 100, 200, 500, 1000];

const TABLE_STREAM: u64 = 0x0074_6162_6c65; // "table"
const NOISE_STREAM: u64 = 0x006e_6f69_7365; // "noise"

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityDistribution {
    /// Independent draws from the open interval (0, 1).
    Uniform01,
    FixedTable(Vec<f64>),
    Constant(f64),
}

impl UtilityDistribution {
    fn draw(&self, n: usize, stream: &mut RandomStream) -> Vec<f64> {
        match self {
            UtilityDistribution::Uniform01 => (0..n).map(|_| stream.uniform_open01()).collect(),
            UtilityDistribution::FixedTable(values) => values.clone(),
            UtilityDistribution::Constant(u) => vec![*u; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_candidates: usize,
    pub distribution: UtilityDistribution,
    pub k: usize,
    pub g: f64,
    pub u0: f64,
    pub privacy: PrivacyParams,
    pub delta_slack: f64,
    pub n_seeds: usize,
    pub base_seed: u64,
}

impl SimulationSpec {
    /// 100 uniform candidates, `k = 10`, `eps0 = 0.1`, `g = 0.01`, `u0 = 0`,
    /// 1000 seeds. `eps = 1`, `delta = 1e-5` only affect the reported totals.
    pub fn standard() -> Self {
        Self {
            n_candidates: 100,
            distribution: UtilityDistribution::Uniform01,
            k: 10,
            g: 0.01,
            u0: 0.0,
            privacy: PrivacyParams::new(1.0, 1e-5, 0.1).expect("valid defaults"),
            delta_slack: DEFAULT_DELTA_SLACK,
            n_seeds: 1000,
            base_seed: DEFAULT_BASE_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds", "must be at least 1"));
        }
        if self.n_candidates == 0 {
            return Err(invalid("n_candidates", "must be at least 1"));
        }
        match &self.distribution {
            UtilityDistribution::FixedTable(values) if values.len() != self.n_candidates => {
                return Err(invalid(
                    "utilities",
                    format!(
                        "{} values for {} candidates",
                        values.len(),
                        self.n_candidates
                    ),
                ));
            }
            UtilityDistribution::Constant(u) if !(0.0..=1.0).contains(u) => {
                return Err(invalid(
                    "utilities",
                    format!("constant utility {u} outside [0, 1]"),
                ));
            }
            _ => {}
        }
        self.tuning_config().map(|_| ())
    }

    fn tuning_config(&self) -> Result<TuningConfig> {
        let candidates = (0..self.n_candidates)
            .map(|i| Candidate::new(i.to_string()))
            .collect();
        TuningConfig::new(candidates, self.k, self.g, self.u0, self.privacy)?.with_accounting(
            self.delta_slack,
            crate::accountant::CompositionMethod::Advanced,
        )
    }

    /// Seed of run `index`.
    pub fn seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }
}

/// One simulated tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRun {
    pub seed: u64,
    /// Best utility in the drawn table.
    pub max_utility: f64,
    pub outcome: TuningOutcome,
}

/// Runs the loop once for `seed`: a fresh table from the distribution, then
/// the loop with its own noise stream.
pub fn simulate_one(
    spec: &SimulationSpec,
    config: &TuningConfig,
    seed: u64,
) -> Result<SimulatedRun> {
    let mut table_stream = RandomStream::new(seed, TABLE_STREAM);
    let utilities = spec.distribution.draw(spec.n_candidates, &mut table_stream);
    let table = UtilityTable::from_utilities(spec.k, utilities)?;
    let mut noise = RandomStream::new(seed, NOISE_STREAM);
    let outcome = run_tuning(config, &table, &mut noise)?;
    Ok(SimulatedRun {
        seed,
        max_utility: table.max_utility().unwrap_or(0.0),
        outcome,
    })
}

/// One run per seed `base_seed + j`, `j < n_seeds`, in seed order.
pub fn simulate_traces(spec: &SimulationSpec) -> Result<Vec<SimulatedRun>> {
    spec.validate()?;
    let config = spec.tuning_config()?;
    (0..spec.n_seeds)
        .into_par_iter()
        .map(|j| simulate_one(spec, &config, spec.seed(j)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub runs: usize,
    pub utility_cap: usize,
    pub step_exhausted: usize,
    pub utility_cap_fraction: f64,
    pub mean_iterations: f64,
    pub max_iterations: u64,
}

pub fn summarize(runs: &[SimulatedRun]) -> SimulationSummary {
    let utility_cap = runs
        .iter()
        .filter(|r| r.outcome.termination == Termination::UtilityCap)
        .count();
    let iterations: Vec<f64> = runs.iter().map(|r| r.outcome.iterations as f64).collect();
    SimulationSummary {
        runs: runs.len(),
        utility_cap,
        step_exhausted: runs.len() - utility_cap,
        utility_cap_fraction: utility_cap as f64 / runs.len().max(1) as f64,
        mean_iterations: mean(&iterations),
        max_iterations: runs.iter().map(|r| r.outcome.iterations).max().unwrap_or(0),
    }
}

/// `(seed, iter, u, step)` rows for plotting step against u. Each run
/// starts with an `iter = 0` row at `(u0, 1)`.
pub fn fig1_csv(runs: &[SimulatedRun], u0: f64) -> String {
    let mut out = String::from("seed,iter,u,step\n");
    for run in runs {
        writeln!(out, "{},0,{:?},1", run.seed, u0).unwrap();
        for r in &run.outcome.trace {
            writeln!(
                out,
                "{},{},{:?},{}",
                run.seed, r.iteration, r.u_after, r.step_after
            )
            .unwrap();
        }
    }
    out
}

/// Noise-free trace under the alternating accept/reject schedule that
/// gains only `g` every two iterations.
pub fn worst_case_trace(g: f64, u0: f64) -> Result<Vec<IterationRecord>> {
    run_schedule(g, u0, (0u64..).map(|i| i % 2 == 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Values of `(u* - u0)/g`, realised as `u0 = 0`, `g = 1/ratio`.
    pub ratios: Vec<u64>,
    /// Everything but `g` and `u0`; its `n_seeds` applies per ratio.
    pub base: SimulationSpec,
}

impl SweepSpec {
    pub fn standard() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            base: SimulationSpec {
                n_seeds: 200,
                ..SimulationSpec::standard()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: u64,
    pub mean_t: f64,
    pub max_t: u64,
    /// Population standard deviation.
    pub std_t: f64,
    pub n_seeds: usize,
    /// Runs that ended with `u >= 1`.
    pub utility_cap: usize,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Iteration-count statistics per ratio. Ratios must be at least 2 so that
/// `g = 1/ratio` stays inside (0, 1).
pub fn sweep_iterations(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.ratios.is_empty() {
        return Err(invalid("ratios", "no ratios given"));
    }
    spec.ratios
        .iter()
        .map(|&ratio| {
            if ratio < 2 {
                return Err(invalid(
                    "ratios",
                    format!("ratio {ratio} gives g = 1/ratio outside (0, 1)"),
                ));
            }
            let sim = SimulationSpec {
                g: 1.0 / ratio as f64,
                u0: 0.0,
                ..spec.base.clone()
            };
            let runs = simulate_traces(&sim)?;
            let ts: Vec<f64> = runs.iter().map(|r| r.outcome.iterations as f64).collect();
            let m = mean(&ts);
            let var = ts.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / ts.len() as f64;
            Ok(SweepRow {
                ratio,
                mean_t: m,
                max_t: runs.iter().map(|r| r.outcome.iterations).max().unwrap_or(0),
                std_t: var.sqrt(),
                n_seeds: runs.len(),
                utility_cap: runs
                    .iter()
                    .filter(|r| r.outcome.termination == Termination::UtilityCap)
                    .count(),
            })
        })
        .collect()
}

/// Sweep table with header `ratio,mean_T,max_T,std_T,n_seeds`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,mean_T,max_T,std_T,n_seeds\n");
    for r in rows {
        writeln!(
            out,
            "{},{:?},{},{:?},{}",
            r.ratio, r.mean_t, r.max_t, r.std_t, r.n_seeds
        )
        .unwrap();
    }
    out
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Fit of mean iterations against `log2(ratio)`.
pub fn log2_fit(rows: &[SweepRow]) -> Option<LinearFit> {
    let xs: Vec<f64> = rows.iter().map(|r| (r.ratio as f64).log2()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_t).collect();
    linear_fit(&xs, &ys)
}

/// Trials needed in both histograms before an outcome counts toward the
/// estimate.
pub const MIN_BUCKET_HITS: u64 = 100;

const TRIALS_PER_CHUNK: u64 = 20_000;

/// Hit counts of one first-iteration outcome on both datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBucket {
    /// Accepted candidate, or `None` for "nobody passed".
    pub outcome: Option<usize>,
    pub hits: u64,
    pub hits_neighbor: u64,
    /// `|ln(freq / freq_neighbor)|`, when both counts reach
    /// [`MIN_BUCKET_HITS`].
    pub abs_log_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpCheckReport {
    pub n_trials: u64,
    /// Largest `|ln ratio|` over included buckets; `None` if every bucket
    /// was excluded.
    pub eps_hat: Option<f64>,
    pub buckets: Vec<OutcomeBucket>,
}

impl DpCheckReport {
    pub fn excluded(&self) -> Vec<Option<usize>> {
        self.buckets
            .iter()
            .filter(|b| b.abs_log_ratio.is_none())
            .map(|b| b.outcome)
            .collect()
    }
}

fn first_iteration_histogram(
    config: &TuningConfig,
    table: &UtilityTable,
    n_trials: u64,
    stream: &RandomStream,
) -> Result<Vec<u64>> {
    let buckets = table.len() + 1;
    let chunks = n_trials.div_ceil(TRIALS_PER_CHUNK);
    let partials: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<u64>> {
            let mut noise = stream.substream(c);
            let trials = TRIALS_PER_CHUNK.min(n_trials - c * TRIALS_PER_CHUNK);
            let mut hist = vec![0u64; buckets];
            for _ in 0..trials {
                let mut state = TunerState::initial(config.u0);
                let record = step_once(&mut state, config, table, &mut noise)?;
                hist[record.accepted.unwrap_or(table.len())] += 1;
            }
            Ok(hist)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; buckets];
    for hist in partials {
        for (t, h) in total.iter_mut().zip(hist) {
            *t += h;
        }
    }
    Ok(total)
}

/// Estimates the privacy loss of one loop iteration by running it
/// `n_trials` times on each table and comparing outcome frequencies.
///
/// The two tables use independent noise streams.
pub fn dp_distinguishability_check(
    config: &TuningConfig,
    table: &UtilityTable,
    neighbor_table: &UtilityTable,
    n_trials: u64,
    seed: u64,
) -> Result<DpCheckReport> {
    config.validate()?;
    if n_trials == 0 {
        return Err(invalid("n_trials", "must be at least 1"));
    }
    if table.len() != neighbor_table.len() || table.len() != config.candidates.len() {
        return Err(invalid(
            "tables",
            "both tables must cover the configured candidates",
        ));
    }
    let hist = first_iteration_histogram(config, table, n_trials, &RandomStream::new(seed, 1))?;
    let hist_neighbor = first_iteration_histogram(
        config,
        neighbor_table,
        n_trials,
        &RandomStream::new(seed, 2),
    )?;
    let buckets: Vec<OutcomeBucket> = hist
        .iter()
        .zip(&hist_neighbor)
        .enumerate()
        .map(|(i, (&hits, &hits_neighbor))| {
            let outcome = (i < table.len()).then_some(i);
            let abs_log_ratio = (hits >= MIN_BUCKET_HITS && hits_neighbor >= MIN_BUCKET_HITS)
                .then(|| (hits as f64 / hits_neighbor as f64).ln().abs());
            OutcomeBucket {
                outcome,
                hits,
                hits_neighbor,
                abs_log_ratio,
            }
        })
        .collect();
    for b in buckets.iter().filter(|b| b.abs_log_ratio.is_none()) {
        log::info!(
            "outcome {:?} excluded: {} / {} hits (< {MIN_BUCKET_HITS})",
            b.outcome,
            b.hits,
            b.hits_neighbor
        );
    }
    let eps_hat = buckets
        .iter()
        .filter_map(|b| b.abs_log_ratio)
        .reduce(f64::max);
    Ok(DpCheckReport {
        n_trials,
        eps_hat,
        buckets,
    })
}

/// Two-partition, two-candidate instance where removing one record flips
/// its partition's validation accuracy from 1 to 0, moving both candidate
/// utilities by the full `1/k = 1/2`.
#[derive(Debug, Clone)]
pub struct DpInstance {
    pub config: TuningConfig,
    pub train: Dataset,
    pub neighbor: Dataset,
    pub valid: Dataset,
    pub removed: u64,
}

impl DpInstance {
    pub const K: usize = 2;

    pub fn tiny(eps0: f64) -> Result<Self> {
        let k = Self::K;
        let mut ids = (0u64..).map(|id| (id, partition_index(id, k)));
        let mut take = |part: usize| {
            ids.by_ref()
                .find(|&(_, p)| p == part)
                .map(|(id, _)| id)
                .unwrap()
        };
        // Partition 0: class 0 plus the single class-1 record that gets removed.
        let removed = take(0);
        let mut records = vec![Record::new(removed, vec![1.0, 0.0], 1)];
        for dy in [-0.05, 0.05] {
            records.push(Record::new(take(0), vec![-1.0, dy], 0));
        }
        // Partition 1: both classes.
        for dy in [-0.05, 0.05] {
            records.push(Record::new(take(1), vec![-1.0, dy], 0));
            records.push(Record::new(take(1), vec![1.0, dy], 1));
        }
        let train = Dataset::new(records)?;
        let neighbor = train.without(removed)?;
        let valid = Dataset::new(
            (0..4)
                .map(|i| Record::new(i, vec![1.0, 0.02 * i as f64 - 0.03], 1))
                .collect(),
        )?;
        let config = TuningConfig::new(
            vec![Candidate::new("a"), Candidate::new("b")],
            k,
            0.01,
            0.0,
            PrivacyParams::new(1.0, 1e-5, eps0)?,
        )?;
        Ok(Self {
            config,
            train,
            neighbor,
            valid,
            removed,
        })
    }

    /// Utility tables of the training set and its neighbour under the
    /// reference trainer.
    pub fn tables(&self) -> Result<(UtilityTable, UtilityTable)> {
        let stream = RandomStream::new(0, 0);
        let build = |data: &Dataset| {
            build_utility_table(
                &NearestCentroid,
                data,
                &self.valid,
                self.config.k,
                &self.config.candidates,
                &stream,
            )
        };
        Ok((build(&self.train)?, build(&self.neighbor)?))
    }
}
