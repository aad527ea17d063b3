//! Peering between providers: threshold offloading, remote admission and
//! settlement of forwarded work.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;
use crate::market::{Cents, JournalEntry, Ledger, MarketError, Price};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("thresholds must satisfy 0 <= u_high <= u_max <= 1, got {u_high} and {u_max}")]
    InvalidPolicy { u_high: f64, u_max: f64 },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Directional agreement letting `local` forward work to `peer`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeeringAgreement {
    pub local: u32,
    pub peer: u32,
    /// Cents per VM-hour the local provider pays the peer.
    pub transfer_unit_price: u64,
    /// VM-hours the peer still accepts.
    pub quota: u64,
    pub latency: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinatorPolicy {
    pub u_high: f64,
    pub u_max: f64,
}

impl Default for CoordinatorPolicy {
    fn default() -> Self {
        Self { u_high: 1.0, u_max: 1.0 }
    }
}

impl CoordinatorPolicy {
    pub fn new(u_high: f64, u_max: f64) -> Result<Self, FederationError> {
        let p = Self { u_high, u_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        let ok = (0.0..=1.0).contains(&self.u_high) && (0.0..=1.0).contains(&self.u_max) && self.u_high <= self.u_max;
        if ok {
            Ok(())
        } else {
            Err(FederationError::InvalidPolicy {
                u_high: self.u_high,
                u_max: self.u_max,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffloadDecision {
    ServeLocal,
    /// Index of the chosen agreement and its peer.
    Forward {
        agreement: usize,
        peer: u32,
    },
    Reject,
}

/// What a coordinator does with a request it cannot or should not serve.
///
/// `agreements` are the ones whose `local` side is this provider.
pub fn decide_offload(
    local_util: f64,
    local_feasible: bool,
    requested_vm_hours: u64,
    bid_max: Price,
    agreements: &[PeeringAgreement],
    policy: &CoordinatorPolicy,
) -> OffloadDecision {
    if local_feasible && local_util <= policy.u_high {
        return OffloadDecision::ServeLocal;
    }
    agreements
        .iter()
        .enumerate()
        .filter(|(_, a)| a.quota >= requested_vm_hours && Price::from_cents(a.transfer_unit_price) <= bid_max)
        .min_by_key(|(_, a)| (a.transfer_unit_price, a.peer))
        .map_or(OffloadDecision::Reject, |(i, a)| OffloadDecision::Forward {
            agreement: i,
            peer: a.peer,
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Accept,
    Decline,
}

/// Remote admission at the peer. On accept the agreement quota shrinks by
/// `requested_vm_hours`.
pub fn accept_remote(
    feasible: bool,
    post_util: f64,
    requested_vm_hours: u64,
    agreement: &mut PeeringAgreement,
    policy: &CoordinatorPolicy,
) -> Admission {
    if !feasible || post_util > policy.u_max || agreement.quota < requested_vm_hours {
        return Admission::Decline;
    }
    agreement.quota -= requested_vm_hours;
    Admission::Accept
}

/// Work served by a peer on behalf of an originating provider.
#[derive(Clone, Debug, PartialEq)]
pub struct PeeringRecord {
    pub originator: String,
    pub peer: String,
    pub transfer_unit_price: u64,
    pub billed_hours: u64,
    pub settled: bool,
}

/// Originator pays the peer `transfer_unit_price × billed_hours`.
pub fn settle_peering(record: &mut PeeringRecord, ledger: &mut Ledger, now: SimTime) -> Result<JournalEntry, FederationError> {
    if record.settled {
        return Err(MarketError::DoubleSettlement.into());
    }
    let amount = Cents((record.transfer_unit_price * record.billed_hours) as i64);
    let entry = ledger.transfer(&record.originator, &record.peer, amount, "peering", now)?.clone();
    record.settled = true;
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agreement(peer: u32, price: u64, quota: u64) -> PeeringAgreement {
        PeeringAgreement {
            local: 0,
            peer,
            transfer_unit_price: price,
            quota,
            latency: SimTime::ZERO,
        }
    }

    fn policy() -> CoordinatorPolicy {
        CoordinatorPolicy::new(0.8, 0.95).unwrap()
    }

    #[test]
    fn offload_examples() {
        let max = Price::from_cents(10);
        assert_eq!(decide_offload(0.5, true, 1, max, &[], &policy()), OffloadDecision::ServeLocal);
        assert_eq!(
            decide_offload(0.9, true, 1, max, &[agreement(1, 5, 10)], &policy()),
            OffloadDecision::Forward { agreement: 0, peer: 1 }
        );
        assert_eq!(
            decide_offload(0.9, true, 1, max, &[agreement(1, 5, 0), agreement(2, 3, 0)], &policy()),
            OffloadDecision::Reject
        );
    }

    #[test]
    fn offload_prefers_cheapest_then_lowest_peer() {
        let a = [agreement(3, 4, 10), agreement(2, 4, 10), agreement(1, 6, 10), agreement(4, 11, 10)];
        assert_eq!(
            decide_offload(0.1, false, 2, Price::from_cents(10), &a, &policy()),
            OffloadDecision::Forward { agreement: 1, peer: 2 }
        );
    }

    #[test]
    fn admission_examples() {
        let mut a = agreement(1, 5, 10);
        assert_eq!(accept_remote(true, 0.7, 3, &mut a, &policy()), Admission::Accept);
        assert_eq!(a.quota, 7);
        assert_eq!(accept_remote(true, 0.99, 3, &mut a, &policy()), Admission::Decline);
        assert_eq!(accept_remote(false, 0.1, 3, &mut a, &policy()), Admission::Decline);
        assert_eq!(a.quota, 7);
    }

    #[test]
    fn settlement_examples() {
        let mut ledger = Ledger::new();
        ledger.open_account("us", Cents(0)).unwrap();
        ledger.open_account("eu", Cents(0)).unwrap();
        let mut rec = PeeringRecord {
            originator: "us".into(),
            peer: "eu".into(),
            transfer_unit_price: 5,
            billed_hours: 2,
            settled: false,
        };
        assert_eq!(settle_peering(&mut rec, &mut ledger, SimTime::ZERO).unwrap().amount, Cents(10));
        assert_eq!(ledger.balance("eu"), Some(Cents(10)));
        assert!(matches!(
            settle_peering(&mut rec, &mut ledger, SimTime::ZERO),
            Err(FederationError::Market(MarketError::DoubleSettlement))
        ));
        let mut zero = PeeringRecord {
            billed_hours: 0,
            settled: false,
            ..rec
        };
        assert_eq!(settle_peering(&mut zero, &mut ledger, SimTime::ZERO).unwrap().amount, Cents(0));
        assert_eq!(ledger.journal().len(), 2);
    }

    #[test]
    fn policy_validation() {
        assert!(CoordinatorPolicy::new(0.9, 0.8).is_err());
        assert!(CoordinatorPolicy::new(0.0, 1.0).is_ok());
    }
}
