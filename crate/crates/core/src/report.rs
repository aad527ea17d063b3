//! Per-replication summaries and their aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::energy::EnergyReport;
use crate::market::{Cents, Ledger};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no summary files in {0}")]
    NoRuns(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BrokerSummary {
    pub makespan_s: f64,
    /// Cents paid to providers minus penalties received.
    pub total_cost: i64,
    pub sla_met: u32,
    pub sla_violated: u32,
    pub completed: u32,
    pub rejected: u32,
    pub optimism_violations: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderSummary {
    pub revenue: i64,
    pub penalties_paid: i64,
    pub peering_paid: i64,
    pub peering_received: i64,
    pub energy_j: f64,
    pub rejected_requests: u32,
    pub active_hosts_end: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketSummary {
    pub trade_count: u32,
    pub traded_vms: u32,
    /// Quantity-weighted mean trade price in cents per VM-hour.
    pub mean_price: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FederationSummary {
    pub offloaded: u32,
    pub declined: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub initial_total: i64,
    pub final_total: i64,
    pub journal_entries: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub replication: u32,
    pub seed: u64,
    pub horizon_s: f64,
    pub brokers: BTreeMap<String, BrokerSummary>,
    pub providers: BTreeMap<String, ProviderSummary>,
    pub market: MarketSummary,
    pub federation: FederationSummary,
    pub energy: EnergyReport,
    pub ledger: LedgerSummary,
}

impl SummaryReport {
    /// Fills the money fields of `brokers` and `providers` from the journal.
    pub fn absorb_journal(&mut self, ledger: &Ledger) {
        for e in ledger.journal() {
            let Cents(amount) = e.amount;
            match e.reason.as_str() {
                "sla_payment" => {
                    if let Some(b) = self.brokers.get_mut(&e.from) {
                        b.total_cost += amount;
                    }
                    if let Some(p) = self.providers.get_mut(&e.to) {
                        p.revenue += amount;
                    }
                }
                "sla_penalty" => {
                    if let Some(p) = self.providers.get_mut(&e.from) {
                        p.penalties_paid += amount;
                    }
                    if let Some(b) = self.brokers.get_mut(&e.to) {
                        b.total_cost -= amount;
                    }
                }
                "peering" => {
                    if let Some(p) = self.providers.get_mut(&e.from) {
                        p.peering_paid += amount;
                    }
                    if let Some(p) = self.providers.get_mut(&e.to) {
                        p.peering_received += amount;
                    }
                }
                _ => {}
            }
        }
        self.ledger = LedgerSummary {
            initial_total: ledger.opening_total().0,
            final_total: ledger.total().0,
            journal_entries: ledger.journal().len() as u64,
        };
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub replications: u32,
    pub metrics: BTreeMap<String, Stat>,
}

/// Numeric leaves of a JSON value keyed by dotted path.
pub fn flatten(value: &Value) -> BTreeMap<String, f64> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, f64>) {
        match v {
            Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    out.insert(prefix.to_string(), x);
                }
            }
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

/// Mean, min and max of every numeric metric. Summaries are ordered by
/// replication index first, so the result does not depend on input order.
/// `replication` and `seed` are identifiers and are left out.
pub fn aggregate(summaries: &[SummaryReport]) -> Aggregate {
    let mut sorted: Vec<&SummaryReport> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.replication);
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &sorted {
        let json = serde_json::to_value(s).expect("summary serializes");
        for (k, v) in flatten(&json) {
            if k != "replication" && k != "seed" {
                values.entry(k).or_default().push(v);
            }
        }
    }
    let metrics = values
        .into_iter()
        .map(|(k, xs)| {
            let stat = Stat {
                mean: xs.iter().sum::<f64>() / xs.len() as f64,
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            (k, stat)
        })
        .collect();
    Aggregate {
        replications: sorted.len() as u32,
        metrics,
    }
}

impl Aggregate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "mean", "min", "max"]).expect("in memory");
        for (k, s) in &self.metrics {
            w.write_record([k.clone(), s.mean.to_string(), s.min.to_string(), s.max.to_string()])
                .expect("in memory");
        }
        String::from_utf8(w.into_inner().expect("in memory")).expect("utf-8")
    }
}

pub fn summary_file_name(replication: u32) -> String {
    format!("summary_{replication}.json")
}

pub fn trace_file_name(replication: u32) -> String {
    format!("trace_{replication}.csv")
}

/// Reads every `summary_<r>.json` in `dir`.
pub fn load_summaries(dir: &Path) -> Result<Vec<SummaryReport>, ReportError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    let mut found: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let entry = entry.map_err(io(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(r) = name
            .strip_prefix("summary_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse().ok())
        {
            found.push((r, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(ReportError::NoRuns(dir.display().to_string()));
    }
    found.sort();
    found
        .into_iter()
        .map(|(_, path)| {
            let text = fs::read_to_string(&path).map_err(io(&path))?;
            serde_json::from_str(&text).map_err(|source| ReportError::Json {
                path: path.display().to_string(),
                source,
            })
        })
        .collect()
}

pub fn report(dir: &Path) -> Result<Aggregate, ReportError> {
    Ok(aggregate(&load_summaries(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_cost(replication: u32, cost: i64) -> SummaryReport {
        let mut s = SummaryReport {
            replication,
            ..Default::default()
        };
        s.brokers.insert(
            "b1".into(),
            BrokerSummary {
                total_cost: cost,
                ..Default::default()
            },
        );
        s
    }

    #[test]
    fn single_replication_is_identity() {
        let agg = aggregate(&[with_cost(0, 42)]);
        assert_eq!(
            agg.metrics["brokers.b1.total_cost"],
            Stat {
                mean: 42.0,
                min: 42.0,
                max: 42.0
            }
        );
    }

    #[test]
    fn mean_of_two() {
        let agg = aggregate(&[with_cost(1, 20), with_cost(0, 10)]);
        assert_eq!(
            agg.metrics["brokers.b1.total_cost"],
            Stat {
                mean: 15.0,
                min: 10.0,
                max: 20.0
            }
        );
        assert_eq!(agg, aggregate(&[with_cost(0, 10), with_cost(1, 20)]));
    }

    #[test]
    fn empty_directory_has_no_runs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(ReportError::NoRuns(_))));
    }
}
