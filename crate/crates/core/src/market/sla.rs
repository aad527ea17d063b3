use serde::Serialize;

use super::{Cents, JournalEntry, Ledger, MarketError};
use crate::kernel::{SimTime, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlaStatus {
    Active,
    Met,
    Violated,
    Settled,
}

/// Contract between a consumer and a provider account.
#[derive(Clone, Debug, PartialEq)]
pub struct Sla {
    pub consumer: String,
    pub provider: String,
    pub deadline: SimTime,
    pub min_mips: f64,
    pub agreed_price: Cents,
    /// Cents per started second of lateness.
    pub penalty_rate: u64,
    pub status: SlaStatus,
    pub penalty: Cents,
    /// Status reached by assessment, kept after settlement.
    pub outcome: Option<SlaStatus>,
}

impl Sla {
    pub fn new(
        consumer: impl Into<String>,
        provider: impl Into<String>,
        deadline: SimTime,
        min_mips: f64,
        agreed_price: Cents,
        penalty_rate: u64,
    ) -> Self {
        Self {
            consumer: consumer.into(),
            provider: provider.into(),
            deadline,
            min_mips,
            agreed_price,
            penalty_rate,
            status: SlaStatus::Active,
            penalty: Cents::ZERO,
            outcome: None,
        }
    }
}

/// Penalty for finishing at `actual_finish` against `agreed_deadline`,
/// capped at the agreed price. Marks the SLA met or violated.
pub fn assess_penalty(sla: &mut Sla, actual_finish: SimTime, agreed_deadline: SimTime) -> Cents {
    let late_us = actual_finish.saturating_sub(agreed_deadline).micros();
    let late_s = late_us.div_ceil(MICROS_PER_SEC);
    let raw = (late_s as u128 * sla.penalty_rate as u128).min(i64::MAX as u128) as i64;
    let penalty = Cents(raw.min(sla.agreed_price.0.max(0)));
    sla.penalty = penalty;
    // lateness, not the capped amount, decides the outcome
    sla.status = if late_us == 0 { SlaStatus::Met } else { SlaStatus::Violated };
    sla.outcome = Some(sla.status);
    penalty
}

/// Consumer pays the agreed price; a violated SLA also refunds the penalty.
pub fn settle_sla(sla: &mut Sla, ledger: &mut Ledger, now: SimTime) -> Result<Vec<JournalEntry>, MarketError> {
    match sla.status {
        SlaStatus::Settled => return Err(MarketError::DoubleSettlement),
        SlaStatus::Active => return Err(MarketError::NotAssessed),
        SlaStatus::Met | SlaStatus::Violated => {}
    }
    let mut entries = vec![ledger
        .transfer(&sla.consumer, &sla.provider, sla.agreed_price, "sla_payment", now)?
        .clone()];
    if sla.status == SlaStatus::Violated {
        entries.push(
            ledger
                .transfer(&sla.provider, &sla.consumer, sla.penalty, "sla_penalty", now)?
                .clone(),
        );
    }
    sla.status = SlaStatus::Settled;
    Ok(entries)
}
