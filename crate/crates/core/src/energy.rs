//! Host power model, DVFS level selection and energy accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("speed fraction {0} is outside (0, 1]")]
    InvalidSpeed(f64),
    #[error("execution rate must be positive")]
    ZeroRate,
    #[error("no voltage level meets the deadline")]
    InfeasibleDeadline,
    #[error("invalid voltage levels: {0}")]
    InvalidLevels(&'static str),
    #[error("invalid power model: p_idle {p_idle} W, p_max {p_max} W")]
    InvalidPowerModel { p_idle: f64, p_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageLevel {
    pub label: String,
    /// Fraction of full PE speed, in (0, 1].
    pub speed: f64,
}

impl VoltageLevel {
    pub fn new(label: impl Into<String>, speed: f64) -> Self {
        Self {
            label: label.into(),
            speed,
        }
    }

    pub fn full() -> Self {
        Self::new("full", 1.0)
    }
}

/// Checks ascending, distinct, in-range speeds that include 1.0.
pub fn validate_levels(levels: &[VoltageLevel]) -> Result<(), EnergyError> {
    if levels.is_empty() {
        return Err(EnergyError::InvalidLevels("empty"));
    }
    if levels.iter().any(|l| !(l.speed > 0.0 && l.speed <= 1.0)) {
        return Err(EnergyError::InvalidLevels("speed outside (0, 1]"));
    }
    if levels.windows(2).any(|w| w[0].speed >= w[1].speed) {
        return Err(EnergyError::InvalidLevels("speeds not strictly ascending"));
    }
    if levels.last().map(|l| l.speed) != Some(1.0) {
        return Err(EnergyError::InvalidLevels("no full-speed level"));
    }
    Ok(())
}

/// `p_idle + (p_max - p_idle) * s^3` watts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModel {
    pub p_idle: f64,
    pub p_max: f64,
}

impl PowerModel {
    pub const EXPONENT: i32 = 3;

    pub fn new(p_idle: f64, p_max: f64) -> Result<Self, EnergyError> {
        let model = Self { p_idle, p_max };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.p_idle >= 0.0 && self.p_idle <= self.p_max && self.p_max.is_finite() {
            Ok(())
        } else {
            Err(EnergyError::InvalidPowerModel {
                p_idle: self.p_idle,
                p_max: self.p_max,
            })
        }
    }
}

fn check_speed(s: f64) -> Result<(), EnergyError> {
    if s > 0.0 && s <= 1.0 {
        Ok(())
    } else {
        Err(EnergyError::InvalidSpeed(s))
    }
}

pub fn power(model: &PowerModel, s: f64) -> Result<f64, EnergyError> {
    check_speed(s)?;
    Ok(model.p_idle + (model.p_max - model.p_idle) * s.powi(PowerModel::EXPONENT))
}

/// Joules to run `length_mi` on one PE of `mips` at speed fraction `s`.
pub fn energy_for(length_mi: f64, mips: f64, model: &PowerModel, s: f64) -> Result<f64, EnergyError> {
    let watts = power(model, s)?;
    if mips.is_nan() || mips <= 0.0 {
        return Err(EnergyError::ZeroRate);
    }
    if length_mi <= 0.0 {
        return Ok(0.0);
    }
    Ok(watts * (length_mi / (mips * s)))
}

/// Picks the level minimizing the energy of running `tasks` back to back on
/// one PE within `deadline_s`. Every level is evaluated; on equal energy the
/// slower level wins.
pub fn select_level_bot<'a>(
    tasks: &[f64],
    deadline_s: f64,
    levels: &'a [VoltageLevel],
    model: &PowerModel,
    mips: f64,
) -> Result<&'a VoltageLevel, EnergyError> {
    if mips.is_nan() || mips <= 0.0 {
        return Err(EnergyError::ZeroRate);
    }
    let total: f64 = tasks.iter().sum();
    let mut best: Option<(&VoltageLevel, f64)> = None;
    for level in levels {
        check_speed(level.speed)?;
        let busy_s = total / (mips * level.speed);
        if busy_s > deadline_s {
            continue;
        }
        let mut joules = 0.0;
        for &len in tasks {
            joules += energy_for(len, mips, model, level.speed)?;
        }
        if best.is_none_or(|(_, e)| joules < e) {
            best = Some((level, joules));
        }
    }
    best.map(|(l, _)| l).ok_or(EnergyError::InfeasibleDeadline)
}

/// Total energy of `tasks` at `level` on one PE; used by callers that want
/// to report the figure behind [`select_level_bot`]'s choice.
pub fn bot_energy(tasks: &[f64], mips: f64, model: &PowerModel, level: &VoltageLevel) -> Result<f64, EnergyError> {
    tasks
        .iter()
        .try_fold(0.0, |acc, &len| Ok(acc + energy_for(len, mips, model, level.speed)?))
}

/// Index of the slowest level whose capacity covers `required_fraction` of
/// full speed; the full-speed level when nothing slower suffices.
pub fn slowest_sufficient_level(levels: &[VoltageLevel], required_fraction: f64) -> usize {
    levels
        .iter()
        .position(|l| l.speed + 1e-12 >= required_fraction)
        .unwrap_or(levels.len() - 1)
}

/// Integrates piecewise-constant host power over virtual time.
#[derive(Clone, Debug, Default)]
pub struct EnergyMeter {
    hosts: BTreeMap<String, MeterState>,
}

#[derive(Clone, Debug)]
struct MeterState {
    since: SimTime,
    watts: f64,
    joules: f64,
}

impl EnergyMeter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Closes the current interval of `host` at `now` and starts drawing `watts`.
    pub fn set_power(&mut self, host: &str, now: SimTime, watts: f64) {
        let state = self.hosts.entry(host.to_string()).or_insert(MeterState {
            since: now,
            watts: 0.0,
            joules: 0.0,
        });
        state.joules += state.watts * now.saturating_sub(state.since).as_secs_f64();
        state.since = now;
        state.watts = watts;
    }

    pub fn register(&mut self, host: &str) {
        self.hosts.entry(host.to_string()).or_insert(MeterState {
            since: SimTime::ZERO,
            watts: 0.0,
            joules: 0.0,
        });
    }

    /// Energy report with every interval closed at `end`.
    pub fn report(&self, end: SimTime, datacenter_of: impl Fn(&str) -> String) -> EnergyReport {
        let mut report = EnergyReport::default();
        for (host, state) in &self.hosts {
            let joules = state.joules + state.watts * end.saturating_sub(state.since).as_secs_f64();
            report.per_host.insert(host.clone(), joules);
            *report.per_datacenter.entry(datacenter_of(host)).or_insert(0.0) += joules;
        }
        report.total_j = report.per_host.values().sum();
        report
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total_j: f64,
    pub per_datacenter: BTreeMap<String, f64>,
    pub per_host: BTreeMap<String, f64>,
}
