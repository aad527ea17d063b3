use std::collections::BTreeMap;

use serde::Serialize;

use super::{Cents, MarketError};
use crate::kernel::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JournalEntry {
    pub from: String,
    pub to: String,
    pub amount: Cents,
    pub reason: String,
    #[serde(rename = "time_us", serialize_with = "micros")]
    pub time: SimTime,
}

fn micros<S: serde::Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(t.micros())
}

/// Double-entry accounts. Balances may go negative (post-paid credit).
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    opening: BTreeMap<String, Cents>,
    accounts: BTreeMap<String, Cents>,
    journal: Vec<JournalEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_account(&mut self, owner: impl Into<String>, initial: Cents) -> Result<(), MarketError> {
        let owner = owner.into();
        if self.accounts.contains_key(&owner) {
            return Err(MarketError::DuplicateAccount(owner));
        }
        self.opening.insert(owner.clone(), initial);
        self.accounts.insert(owner, initial);
        Ok(())
    }

    pub fn transfer(&mut self, from: &str, to: &str, amount: Cents, reason: &str, time: SimTime) -> Result<&JournalEntry, MarketError> {
        if amount.0 < 0 {
            return Err(MarketError::NegativeAmount(amount.0));
        }
        for owner in [from, to] {
            if !self.accounts.contains_key(owner) {
                return Err(MarketError::UnknownAccount(owner.to_string()));
            }
        }
        *self.accounts.get_mut(from).unwrap() = self.accounts[from] - amount;
        *self.accounts.get_mut(to).unwrap() = self.accounts[to] + amount;
        self.journal.push(JournalEntry {
            from: from.to_string(),
            to: to.to_string(),
            amount,
            reason: reason.to_string(),
            time,
        });
        Ok(self.journal.last().unwrap())
    }

    pub fn balance(&self, owner: &str) -> Option<Cents> {
        self.accounts.get(owner).copied()
    }

    pub fn balances(&self) -> &BTreeMap<String, Cents> {
        &self.accounts
    }

    pub fn total(&self) -> Cents {
        self.accounts.values().copied().sum()
    }

    pub fn opening_total(&self) -> Cents {
        self.opening.values().copied().sum()
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    /// Balances rebuilt from the opening balances and the journal alone.
    pub fn replay(&self) -> BTreeMap<String, Cents> {
        let mut balances = self.opening.clone();
        for e in &self.journal {
            *balances.get_mut(&e.from).unwrap() = balances[&e.from] - e.amount;
            *balances.get_mut(&e.to).unwrap() = balances[&e.to] + e.amount;
        }
        balances
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_accounts() -> Ledger {
        let mut l = Ledger::new();
        l.open_account("a", Cents(50)).unwrap();
        l.open_account("b", Cents(0)).unwrap();
        l
    }

    #[test]
    fn transfers_conserve_money() {
        let mut l = two_accounts();
        l.transfer("a", "b", Cents(20), "x", SimTime::ZERO).unwrap();
        assert_eq!(l.total(), Cents(50));
        assert_eq!(l.balance("b"), Some(Cents(20)));
        l.transfer("b", "a", Cents(0), "noop", SimTime::ZERO).unwrap();
        assert_eq!(l.journal().len(), 2);
        assert_eq!(l.balance("a"), Some(Cents(30)));
        assert_eq!(&l.replay(), l.balances());
    }

    #[test]
    fn errors() {
        let mut l = two_accounts();
        assert_eq!(
            l.transfer("a", "zz", Cents(1), "x", SimTime::ZERO).unwrap_err(),
            MarketError::UnknownAccount("zz".into())
        );
        assert_eq!(
            l.transfer("a", "b", Cents(-1), "x", SimTime::ZERO).unwrap_err(),
            MarketError::NegativeAmount(-1)
        );
        assert_eq!(l.open_account("a", Cents(0)), Err(MarketError::DuplicateAccount("a".into())));
        assert!(l.journal().is_empty());
    }

    #[test]
    fn balances_may_go_negative() {
        let mut l = two_accounts();
        l.transfer("b", "a", Cents(500), "credit", SimTime::ZERO).unwrap();
        assert_eq!(l.balance("b"), Some(Cents(-500)));
        assert_eq!(l.total(), l.opening_total());
    }
}
