//! Privacy bookkeeping for the tuning loop.
//!
//! Every iteration of the loop is an `eps0`-DP mechanism. The number of
//! iterations `T` is data dependent but capped by
//! [`worst_case_iterations`]; the loop's cost composes over `T` and then
//! adds, by basic composition, the `(eps, delta)` of the final private
//! training run.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default slack `delta'` spent by advanced composition.
pub const DEFAULT_DELTA_SLACK: f64 = 1e-6;

/// Privacy knobs: `eps`/`delta` for the final training run and `eps0` for
/// each loop iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    eps: f64,
    delta: f64,
    eps0: f64,
}

impl PrivacyParams {
    pub fn new(eps: f64, delta: f64, eps0: f64) -> Result<Self> {
        check_positive("eps", eps)?;
        check_positive("eps0", eps0)?;
        check_open_unit("delta", delta)?;
        Ok(Self { eps, delta, eps0 })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(invalid(
            name,
            format!("must be positive and finite, got {v}"),
        ));
    }
    Ok(())
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid(name, format!("must lie in (0, 1), got {v}")));
    }
    Ok(())
}

pub(crate) fn check_granularity(g: f64) -> Result<()> {
    check_open_unit("g", g)
}

pub(crate) fn check_lower_bound(u0: f64) -> Result<()> {
    if !(0.0..1.0).contains(&u0) {
        return Err(invalid("u0", format!("must lie in [0, 1), got {u0}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMethod {
    Basic,
    Advanced,
}

impl fmt::Display for CompositionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositionMethod::Basic => f.write_str("basic"),
            CompositionMethod::Advanced => f.write_str("advanced"),
        }
    }
}

impl std::str::FromStr for CompositionMethod {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(CompositionMethod::Basic),
            "advanced" => Ok(CompositionMethod::Advanced),
            other => Err(invalid(
                "method",
                format!("expected basic|advanced, got {other:?}"),
            )),
        }
    }
}

/// Total privacy spent by one tuning run plus the final training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub iterations: u64,
    pub eps_additional: f64,
    pub delta_additional: f64,
    pub eps_total: f64,
    pub delta_total: f64,
    pub method: CompositionMethod,
}

/// Hard cap on the number of loop iterations for any noise realization:
/// `ceil(2 (1 - u0) / g) + 1`.
///
/// Every accepting iteration adds at least `g` (the step is at least 1),
/// and a rejection halves the step, so from `step = 1` the loop can spend
/// at most two iterations per unit of `g`. The `+1` absorbs a last unit
/// lost to floating-point accumulation of `u`.
pub fn worst_case_iterations(g: f64, u0: f64) -> Result<u64> {
    check_granularity(g)?;
    check_lower_bound(u0)?;
    let units = 2.0 * (1.0 - u0) / g;
    // 2/0.1 and friends land a hair above the integer they denote.
    let nearest = units.round();
    let units = if (units - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        units.ceil()
    };
    Ok(units as u64 + 1)
}

/// `T * eps0`.
pub fn basic_composition(iterations: u64, eps0: f64) -> f64 {
    iterations as f64 * eps0
}

/// Strong composition of `T` `eps0`-DP mechanisms:
/// `sqrt(2 T ln(1/delta')) eps0 + T eps0 (e^eps0 - 1)`, spending `delta'`.
pub fn advanced_composition(iterations: u64, eps0: f64, delta_slack: f64) -> Result<(f64, f64)> {
    check_positive("eps0", eps0)?;
    check_open_unit("delta_slack", delta_slack)?;
    let t = iterations as f64;
    let eps = (2.0 * t * (1.0 / delta_slack).ln()).sqrt() * eps0 + t * eps0 * eps0.exp_m1();
    Ok((eps, delta_slack))
}

/// Combines the final training budget with the loop's composed cost over
/// `iterations` rounds.
pub fn total_privacy(
    params: &PrivacyParams,
    iterations: u64,
    delta_slack: f64,
    method: CompositionMethod,
) -> Result<CompositionReport> {
    check_open_unit("delta_slack", delta_slack)?;
    let (eps_additional, delta_additional) = match method {
        CompositionMethod::Basic => (basic_composition(iterations, params.eps0), 0.0),
        CompositionMethod::Advanced => advanced_composition(iterations, params.eps0, delta_slack)?,
    };
    let delta_total = params.delta + delta_additional;
    if delta_total >= 1.0 {
        return Err(invalid(
            "delta_slack",
            format!("delta + delta_slack = {delta_total} is not below 1"),
        ));
    }
    Ok(CompositionReport {
        iterations,
        eps_additional,
        delta_additional,
        eps_total: params.eps + eps_additional,
        delta_total,
        method,
    })
}

/// Largest `T` at which advanced composition is not strictly tighter than
/// basic composition; advanced wins for every `T` above it. `None` when
/// advanced never wins (`eps0 >= ln 2`).
///
/// The gap is `a sqrt(T) - b T` with `a = sqrt(2 ln(1/delta')) eps0` and
/// `b = eps0 (2 - e^eps0)`, which turns negative for good once
/// `T > (a/b)^2`.
pub fn composition_crossover(eps0: f64, delta_slack: f64) -> Result<Option<u64>> {
    check_positive("eps0", eps0)?;
    check_open_unit("delta_slack", delta_slack)?;
    let a = (2.0 * (1.0 / delta_slack).ln()).sqrt() * eps0;
    let b = eps0 * (2.0 - eps0.exp());
    if b <= 0.0 {
        return Ok(None);
    }
    let mut t = ((a / b) * (a / b)).floor() as u64;
    // Settle rounding at the boundary against the closed forms themselves.
    let gap = |t: u64| -> Result<f64> {
        Ok(advanced_composition(t, eps0, delta_slack)?.0 - basic_composition(t, eps0))
    };
    while gap(t + 1)? >= 0.0 {
        t += 1;
    }
    while t > 0 && gap(t)? < 0.0 {
        t -= 1;
    }
    Ok(Some(t))
}

/// One row of the budget comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub method: String,
    pub iterations: Option<u64>,
    pub eps_total: f64,
    pub delta_total: Option<f64>,
}

/// Naive grid search vs. random-stopping tuning vs. this loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub eps: f64,
    /// `|S|` independent `eps`-DP runs under advanced composition.
    pub naive: Option<BudgetRow>,
    /// The published `2 eps` and `3 eps` bounds.
    pub randtune: [f64; 2],
    pub ours_observed: Option<CompositionReport>,
    pub ours_worst_case: CompositionReport,
    pub crossover: Option<u64>,
}

pub fn budget_comparison(
    params: &PrivacyParams,
    candidate_count: Option<usize>,
    observed_iterations: Option<u64>,
    g: f64,
    u0: f64,
    delta_slack: f64,
) -> Result<BudgetComparison> {
    let naive = candidate_count
        .map(|count| -> Result<BudgetRow> {
            if count == 0 {
                return Err(invalid("candidates", "must be at least 1"));
            }
            let (eps_total, slack) = advanced_composition(count as u64, params.eps, delta_slack)?;
            Ok(BudgetRow {
                method: "naive".into(),
                iterations: Some(count as u64),
                eps_total,
                delta_total: Some(count as f64 * params.delta + slack),
            })
        })
        .transpose()?;
    let ours_observed = observed_iterations
        .map(|t| total_privacy(params, t, delta_slack, CompositionMethod::Advanced))
        .transpose()?;
    let cap = worst_case_iterations(g, u0)?;
    let ours_worst_case = total_privacy(params, cap, delta_slack, CompositionMethod::Advanced)?;
    Ok(BudgetComparison {
        eps: params.eps,
        naive,
        randtune: [2.0 * params.eps, 3.0 * params.eps],
        ours_observed,
        ours_worst_case,
        crossover: composition_crossover(params.eps0, delta_slack)?,
    })
}

impl BudgetComparison {
    pub fn rows(&self) -> Vec<BudgetRow> {
        let mut rows = Vec::new();
        if let Some(naive) = &self.naive {
            rows.push(naive.clone());
        }
        for (name, eps_total) in [
            ("randtune_2eps", self.randtune[0]),
            ("randtune_3eps", self.randtune[1]),
        ] {
            rows.push(BudgetRow {
                method: name.into(),
                iterations: None,
                eps_total,
                delta_total: None,
            });
        }
        let ours = |name: &str, r: &CompositionReport| BudgetRow {
            method: name.into(),
            iterations: Some(r.iterations),
            eps_total: r.eps_total,
            delta_total: Some(r.delta_total),
        };
        if let Some(r) = &self.ours_observed {
            rows.push(ours("ours_observed", r));
        }
        rows.push(ours("ours_worst_case", &self.ours_worst_case));
        rows
    }

    /// CSV with header `method,iterations,eps_total,delta_total`; absent
    /// fields are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,iterations,eps_total,delta_total\n");
        for row in self.rows() {
            let iterations = row.iterations.map(|t| t.to_string()).unwrap_or_default();
            let delta = row
                .delta_total
                .map(|d| format!("{d:?}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:?},{}\n",
                row.method, iterations, row.eps_total, delta
            ));
        }
        out
    }
}

impl fmt::Display for BudgetComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<18} {:>10}  {:<28} delta_total",
            "method", "runs/T", "eps_total"
        )?;
        if let Some(n) = &self.naive {
            writeln!(
                f,
                "{:<18} {:>10}  {:<28} {:?}",
                "naive",
                n.iterations.unwrap_or(0),
                format!("{:?}", n.eps_total),
                n.delta_total.unwrap_or(0.0)
            )?;
        }
        writeln!(
            f,
            "{:<18} {:>10}  {:<28} -",
            "randtune",
            "random",
            format!("{:?} or {:?}", self.randtune[0], self.randtune[1])
        )?;
        let mut ours = |label: &str, r: &CompositionReport| {
            writeln!(
                f,
                "{:<18} {:>10}  {:<28} {:?}",
                label,
                r.iterations,
                format!("{:?}", r.eps_total),
                r.delta_total
            )
        };
        if let Some(r) = &self.ours_observed {
            ours("ours (observed)", r)?;
        }
        ours("ours (worst case)", &self.ours_worst_case)?;
        match self.crossover {
            Some(t) => write!(f, "advanced composition beats basic for T > {t}"),
            None => write!(f, "advanced composition never beats basic at this eps0"),
        }
    }
}
