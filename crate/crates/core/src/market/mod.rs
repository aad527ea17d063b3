//! The exchange: order books, clearing mechanisms, billing, SLAs and the
//! banking ledger.

mod billing;
mod book;
mod clearing;
mod ledger;
mod sla;

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use billing::{billed_hours, compute_bill, SECONDS_PER_HOUR};
pub use book::{Ask, AskId, Bid, BidId, BookEntry, OrderBook, QosRequirement};
pub use clearing::{clear_auction, clear_commodity, clear_commodity_with, clear_double_auction, AuctionMatch, Trade};
pub use ledger::{JournalEntry, Ledger};
pub use sla::{assess_penalty, settle_sla, Sla, SlaStatus};

/// Signed whole cents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl AddAssign for Cents {
    fn add_assign(&mut self, rhs: Cents) {
        self.0 += rhs.0;
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Neg for Cents {
    type Output = Cents;
    fn neg(self) -> Cents {
        Cents(-self.0)
    }
}

impl Mul<i64> for Cents {
    type Output = Cents;
    fn mul(self, rhs: i64) -> Cents {
        Cents(self.0 * rhs)
    }
}

impl std::iter::Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

/// Unit price in integer milli-cents per VM-hour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(pub u64);

impl Price {
    pub const fn from_cents(cents: u64) -> Self {
        Price(cents * 1000)
    }

    pub fn millicents(self) -> u64 {
        self.0
    }

    pub fn as_cents_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Midpoint `k * bid + (1 - k) * ask` with k = 1/2, rounded down to the milli-cent.
    pub fn midpoint(bid: Price, ask: Price) -> Price {
        Price((bid.0 + ask.0) / 2)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarketError {
    #[error("unknown vm class `{0}`")]
    UnknownVmClass(String),
    #[error("order quantity must be at least 1")]
    ZeroQuantity,
    #[error("billing interval ends before it starts")]
    NegativeInterval,
    #[error("unknown ledger account `{0}`")]
    UnknownAccount(String),
    #[error("transfer amount {0} is negative")]
    NegativeAmount(i64),
    #[error("ledger account `{0}` already exists")]
    DuplicateAccount(String),
    #[error("agreement already settled")]
    DoubleSettlement,
    #[error("sla has not been assessed yet")]
    NotAssessed,
}
