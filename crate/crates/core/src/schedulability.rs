//! Uniprocessor EDF feasibility for synchronous constrained-deadline tasks.
//!
//! `demand(t)` is the processor demand of all jobs released at or after 0
//! with absolute deadline at most `t`. A task set is EDF-feasible iff
//! `demand(t) <= t` at every absolute deadline up to a sufficient horizon.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{bail, Code, Result};
use crate::model::SporadicTask;

pub const DEFAULT_CHECK_POINT_CAP: usize = 100_000;

/// Busy-period style fixed points give up past this value.
const VALUE_LIMIT: u64 = 1 << 62;

/// Absolute deadlines `k*T_i + D_i <= horizon`, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckPointSet {
    pub points: Vec<u64>,
    pub horizon: u64,
    /// Set when the set came out empty.
    pub diagnostic: Option<String>,
}

impl CheckPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdleTime {
    At(u64),
    Diverges,
}

impl IdleTime {
    pub fn value(self) -> Option<u64> {
        match self {
            IdleTime::At(v) => Some(v),
            IdleTime::Diverges => None,
        }
    }
}

/// First check point where demand exceeds supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub t: u64,
    pub demand: u128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbfCheck {
    pub violation: Option<Violation>,
    pub diagnostic: Option<String>,
}

impl DbfCheck {
    pub fn feasible(&self) -> bool {
        self.violation.is_none()
    }
}

/// Exact `sum C_i / T_i`.
pub fn utilization(tasks: &[SporadicTask]) -> BigRational {
    tasks.iter().fold(BigRational::zero(), |acc, t| {
        acc + BigRational::new(BigInt::from(t.wcet), BigInt::from(t.period))
    })
}

/// `utilization(tasks) <= 1`, exact, with a floating-point shortcut away
/// from the boundary.
pub fn utilization_fits(tasks: &[SporadicTask]) -> bool {
    let approx: f64 = tasks.iter().map(|t| t.wcet as f64 / t.period as f64).sum();
    if (approx - 1.0).abs() > 1e-9 {
        return approx < 1.0;
    }
    utilization(tasks) <= BigRational::one()
}

pub fn hyperperiod(tasks: &[SporadicTask]) -> Option<u64> {
    tasks.iter().try_fold(1u64, |acc, t| {
        let g = acc.gcd(&t.period);
        (acc / g).checked_mul(t.period)
    })
}

/// Least fixed point of `L = sum ceil(L / T_i) * C_i` from `L = sum C_i`.
pub fn definitive_idle_time(tasks: &[SporadicTask]) -> IdleTime {
    if !utilization_fits(tasks) {
        return IdleTime::Diverges;
    }
    match busy_period(tasks, u64::MAX) {
        Some(l) => IdleTime::At(l),
        None => IdleTime::Diverges,
    }
}

fn busy_period(tasks: &[SporadicTask], max_iterations: u64) -> Option<u64> {
    let mut l: u64 = tasks.iter().map(|t| t.wcet).sum();
    for _ in 0..max_iterations {
        let mut next: u128 = 0;
        for t in tasks {
            next += u128::from(l.div_ceil(t.period)) * u128::from(t.wcet);
        }
        if next > u128::from(VALUE_LIMIT) {
            return None;
        }
        let next = next as u64;
        if next == l {
            return Some(l);
        }
        l = next;
    }
    None
}

pub fn dset(tasks: &[SporadicTask], horizon: u64) -> Result<CheckPointSet> {
    dset_capped(tasks, horizon, DEFAULT_CHECK_POINT_CAP)
}

pub fn dset_capped(tasks: &[SporadicTask], horizon: u64, cap: usize) -> Result<CheckPointSet> {
    let mut count: u128 = 0;
    for t in tasks {
        if t.deadline <= horizon {
            count += u128::from((horizon - t.deadline) / t.period) + 1;
        }
    }
    if count > cap as u128 {
        bail!(
            Code::CheckPointCap,
            "horizon {horizon} yields {count} check points (cap {cap}); use shorter periods or fewer tasks"
        );
    }
    let mut points = Vec::with_capacity(count as usize);
    for t in tasks {
        let mut d = t.deadline;
        while d <= horizon {
            points.push(d);
            match d.checked_add(t.period) {
                Some(n) => d = n,
                None => break,
            }
        }
    }
    points.sort_unstable();
    points.dedup();
    let diagnostic = points
        .is_empty()
        .then(|| format!("no deadline at or before horizon {horizon}"));
    Ok(CheckPointSet {
        points,
        horizon,
        diagnostic,
    })
}

/// Demand of jobs with absolute deadline `<= t`.
pub fn demand(tasks: &[SporadicTask], t: u64) -> u128 {
    tasks
        .iter()
        .filter(|task| task.deadline <= t)
        .map(|task| u128::from((t - task.deadline) / task.period + 1) * u128::from(task.wcet))
        .sum()
}

pub fn dbf_feasible(tasks: &[SporadicTask], points: &CheckPointSet) -> DbfCheck {
    if points.is_empty() {
        return DbfCheck {
            violation: None,
            diagnostic: Some(
                points
                    .diagnostic
                    .clone()
                    .unwrap_or_else(|| "empty check-point set".to_string()),
            ),
        };
    }
    let violation = points.points.iter().find_map(|&t| {
        let d = demand(tasks, t);
        (d > u128::from(t)).then_some(Violation { t, demand: d })
    });
    DbfCheck {
        violation,
        diagnostic: None,
    }
}

/// Latest absolute deadline strictly before `x`.
fn deadline_before(tasks: &[SporadicTask], x: u64) -> Option<u64> {
    tasks
        .iter()
        .filter(|t| t.deadline < x)
        .map(|t| (x - 1 - t.deadline) / t.period * t.period + t.deadline)
        .max()
}

/// Sufficient horizon for the demand test when utilization is at most one.
pub fn feasibility_horizon(tasks: &[SporadicTask]) -> Option<u64> {
    let d_max = tasks.iter().map(|t| t.deadline).max().unwrap_or(0);
    let mut best: Option<u64> = hyperperiod(tasks).map(|h| h.max(d_max));
    let u = utilization(tasks);
    if u < BigRational::one() {
        let slack_sum = tasks.iter().fold(BigRational::zero(), |acc, t| {
            acc + BigRational::new(
                BigInt::from(t.period - t.deadline) * BigInt::from(t.wcet),
                BigInt::from(t.period),
            )
        });
        let la = (slack_sum / (BigRational::one() - u)).ceil().to_integer();
        if let Some(la) = la.to_u64() {
            let la = la.max(d_max);
            best = Some(best.map_or(la, |b| b.min(la)));
        }
    }
    let bound = best.map_or(u64::MAX, |b| b);
    let limit = if best.is_some() { 100_000 } else { u64::MAX };
    if let Some(lb) = busy_period(tasks, limit) {
        best = Some(lb.min(bound));
    }
    best
}

/// Exact EDF feasibility of a synchronous constrained-deadline task set,
/// by quick processor-demand analysis over a sufficient horizon.
pub fn edf_schedulable(tasks: &[SporadicTask]) -> bool {
    edf_violation(tasks).is_none()
}

/// Some missed deadline when the set is not EDF-feasible.
pub fn edf_violation(tasks: &[SporadicTask]) -> Option<Violation> {
    if tasks.is_empty() {
        return None;
    }
    if let Some(t) = tasks.iter().find(|t| t.wcet > t.deadline) {
        return Some(Violation {
            t: t.deadline,
            demand: demand(tasks, t.deadline),
        });
    }
    if !utilization_fits(tasks) {
        let t = first_overload(tasks);
        return Some(Violation {
            t,
            demand: demand(tasks, t),
        });
    }
    // No representable horizon: report as infeasible rather than guess.
    let Some(horizon) = feasibility_horizon(tasks) else {
        return Some(Violation {
            t: VALUE_LIMIT,
            demand: demand(tasks, VALUE_LIMIT),
        });
    };
    let d_min = tasks.iter().map(|t| t.deadline).min().unwrap_or(0);
    let mut t = deadline_before(tasks, horizon.saturating_add(1))?;
    loop {
        let h = demand(tasks, t);
        if h > u128::from(t) {
            return Some(Violation { t, demand: h });
        }
        if h <= u128::from(d_min) {
            return None;
        }
        let h = h as u64;
        t = if h < t { h } else { deadline_before(tasks, t)? };
    }
}

/// With utilization above one some deadline is missed; scan deadlines in
/// order for the first witness.
fn first_overload(tasks: &[SporadicTask]) -> u64 {
    let mut t = tasks.iter().map(|t| t.deadline).min().unwrap_or(0);
    loop {
        if demand(tasks, t) > u128::from(t) {
            return t;
        }
        t = tasks
            .iter()
            .map(|task| {
                if task.deadline > t {
                    task.deadline
                } else {
                    ((t - task.deadline) / task.period + 1) * task.period + task.deadline
                }
            })
            .min()
            .expect("nonempty task set");
    }
}
