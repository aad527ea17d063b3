use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{MarketError, Price};
use crate::kernel::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AskId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BidId(pub u64);

/// Quality-of-service envelope attached to a bid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosRequirement {
    #[serde(with = "crate::kernel::secs")]
    pub deadline: SimTime,
    /// Total budget in cents.
    pub budget: u64,
    #[serde(default)]
    pub min_mips: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ask {
    pub provider: u32,
    pub vm_class: String,
    pub unit_price: Price,
    pub quantity: u32,
    pub region: String,
    /// Per-PE MIPS a VM of this class gets at this provider.
    pub mips: f64,
}

impl Ask {
    pub fn new(
        provider: u32,
        vm_class: impl Into<String>,
        unit_price: Price,
        quantity: u32,
        region: impl Into<String>,
        mips: f64,
    ) -> Result<Self, MarketError> {
        if quantity == 0 {
            return Err(MarketError::ZeroQuantity);
        }
        Ok(Self {
            provider,
            vm_class: vm_class.into(),
            unit_price,
            quantity,
            region: region.into(),
            mips,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bid {
    pub broker: u32,
    pub vm_class: String,
    pub max_unit_price: Price,
    pub quantity: u32,
    pub qos: QosRequirement,
    /// Opaque reference the submitter uses to correlate trades.
    pub tag: u64,
}

impl Bid {
    pub fn new(
        broker: u32,
        vm_class: impl Into<String>,
        max_unit_price: Price,
        quantity: u32,
        qos: QosRequirement,
    ) -> Result<Self, MarketError> {
        if quantity == 0 {
            return Err(MarketError::ZeroQuantity);
        }
        Ok(Self {
            broker,
            vm_class: vm_class.into(),
            max_unit_price,
            quantity,
            qos,
            tag: 0,
        })
    }

    pub fn with_tag(mut self, tag: u64) -> Self {
        self.tag = tag;
        self
    }
}

/// An order plus the quantity still open.
#[derive(Clone, Debug, PartialEq)]
pub struct BookEntry<O, I> {
    pub id: I,
    pub order: O,
    pub remaining: u32,
    pub submitted_at: SimTime,
}

/// Open asks and bids, grouped by VM class on demand.
#[derive(Clone, Debug, Default)]
pub struct OrderBook {
    classes: BTreeSet<String>,
    next_id: u64,
    pub(super) asks: Vec<BookEntry<Ask, AskId>>,
    pub(super) bids: Vec<BookEntry<Bid, BidId>>,
}

impl OrderBook {
    pub fn new(classes: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            classes: classes.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    fn check_class(&self, class: &str) -> Result<(), MarketError> {
        if self.classes.contains(class) {
            Ok(())
        } else {
            Err(MarketError::UnknownVmClass(class.to_string()))
        }
    }

    pub fn publish_ask(&mut self, ask: Ask, now: SimTime) -> Result<AskId, MarketError> {
        self.check_class(&ask.vm_class)?;
        self.next_id += 1;
        let id = AskId(self.next_id);
        self.asks.push(BookEntry {
            id,
            remaining: ask.quantity,
            order: ask,
            submitted_at: now,
        });
        Ok(id)
    }

    pub fn submit_bid(&mut self, bid: Bid, now: SimTime) -> Result<BidId, MarketError> {
        self.check_class(&bid.vm_class)?;
        self.next_id += 1;
        let id = BidId(self.next_id);
        self.bids.push(BookEntry {
            id,
            remaining: bid.quantity,
            order: bid,
            submitted_at: now,
        });
        Ok(id)
    }

    pub fn asks(&self) -> &[BookEntry<Ask, AskId>] {
        &self.asks
    }

    pub fn bids(&self) -> &[BookEntry<Bid, BidId>] {
        &self.bids
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(String::as_str)
    }

    /// Open asks for `class` with remaining quantity, as orders carrying that quantity.
    pub fn open_asks(&self, class: &str) -> Vec<Ask> {
        self.asks
            .iter()
            .filter(|e| e.order.vm_class == class && e.remaining > 0)
            .map(|e| Ask {
                quantity: e.remaining,
                ..e.order.clone()
            })
            .collect()
    }

    pub fn clear_asks(&mut self) {
        self.asks.clear();
    }

    pub fn withdraw_bid(&mut self, id: BidId) -> Option<Bid> {
        let pos = self.bids.iter().position(|e| e.id == id)?;
        Some(self.bids.remove(pos).order)
    }

    /// Drops fully filled bids and asks.
    pub fn compact(&mut self) {
        self.asks.retain(|e| e.remaining > 0);
        self.bids.retain(|e| e.remaining > 0);
    }
}
