mod common;

use std::collections::BTreeMap;

use cloudmarket_core::report::{aggregate, SummaryReport};
use cloudmarket_core::scenario::parse_scenario;
use cloudmarket_core::sim::{replication_seed, run_replication};
use cloudmarket_core::trace::Trace;
use proptest::prelude::*;

#[test]
fn traces_are_ordered_and_round_trip() {
    for (name, s) in common::bundled() {
        let out = run_replication(&s, 0, s.run.seed).unwrap();
        let times: Vec<u64> = out.trace.records().iter().map(|r| r.time_us).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]), "{name}");
        let csv = out.trace.to_csv();
        assert_eq!(Trace::read_csv(&csv[..]).unwrap(), out.trace, "{name}");
    }
}

/// Integrates host power from `host_state` records, starting from the
/// scenario's initial host states.
fn energy_from_trace(s: &cloudmarket_core::scenario::Scenario, trace: &Trace) -> f64 {
    let mut state: BTreeMap<String, (f64, bool, f64, u64)> = BTreeMap::new();
    let watts = |p: &cloudmarket_core::energy::PowerModel, active: bool, speed: f64| {
        if active {
            p.p_idle + (p.p_max - p.p_idle) * speed.powi(3)
        } else {
            0.0
        }
    };
    let mut power_of = BTreeMap::new();
    for d in &s.datacenters {
        let full = d.voltage_levels.iter().map(|l| l.speed).fold(0.0, f64::max);
        for h in &d.hosts {
            power_of.insert(h.id.clone(), d.power);
            state.insert(h.id.clone(), (0.0, h.active, full, 0));
        }
    }
    for r in trace.records().iter().filter(|r| r.event == "host_state") {
        let host = r.get("host").unwrap().to_string();
        let p = power_of[&host];
        let (joules, active, speed, since) = state[&host];
        let joules = joules + watts(&p, active, speed) * (r.time_us - since) as f64 / 1e6;
        state.insert(host, (joules, r.get("active") == Some("1"), r.num("speed").unwrap(), r.time_us));
    }
    let end = s.run.horizon_s.micros();
    state
        .iter()
        .map(|(h, &(joules, active, speed, since))| joules + watts(&power_of[h], active, speed) * (end - since) as f64 / 1e6)
        .sum()
}

#[test]
fn energy_report_matches_trace_integral() {
    for (name, s) in common::bundled() {
        let out = run_replication(&s, 0, s.run.seed).unwrap();
        let want = energy_from_trace(&s, &out.trace);
        let got = out.summary.energy.total_j;
        assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{name}: {got} vs {want}");
        let per_dc: f64 = out.summary.energy.per_datacenter.values().sum();
        assert!((per_dc - got).abs() <= 1e-6 * got.max(1.0), "{name}");
    }
}

#[test]
fn workflow_children_finish_after_parents() {
    let s = common::load("hybrid");
    let out = run_replication(&s, 0, s.run.seed).unwrap();
    // studio's render workflow: ids follow the broker and task order of the file
    let lab_tasks = 10;
    let done: BTreeMap<u64, u64> = out
        .trace
        .records()
        .iter()
        .filter(|r| r.event == "cloudlet_done" && r.get("request") == Some("studio/render"))
        .map(|r| (r.num::<u64>("cloudlet").unwrap() - lab_tasks, r.time_us))
        .collect();
    assert_eq!(done.len(), 4);
    let (prep, left, right, join) = (done[&0], done[&1], done[&2], done[&3]);
    assert!(prep < left && prep < right);
    assert!(left < join && right < join);
}

#[test]
fn accepted_offloads_stay_within_quota() {
    let s = common::load("overload");
    let quota: BTreeMap<(String, String), u64> = s
        .federation
        .agreements
        .iter()
        .map(|a| ((a.local.clone(), a.peer.clone()), a.quota))
        .collect();
    for r in 0..s.run.replications {
        let out = run_replication(&s, r, replication_seed(s.run.seed, r)).unwrap();
        let mut hours: BTreeMap<String, (String, u64)> = BTreeMap::new();
        let mut used: BTreeMap<(String, String), u64> = BTreeMap::new();
        for rec in out.trace.records() {
            match rec.event.as_str() {
                "offload" => {
                    hours.insert(
                        rec.get("request").unwrap().to_string(),
                        (rec.get("peer").unwrap().to_string(), rec.num("vm_hours").unwrap()),
                    );
                }
                "offload_accept" => {
                    let (peer, h) = hours[rec.get("request").unwrap()].clone();
                    let key = (rec.get("from").unwrap().to_string(), peer);
                    let total = used.entry(key.clone()).or_default();
                    *total += h;
                    assert!(*total <= quota[&key]);
                    assert_eq!(rec.num::<u64>("quota_left").unwrap(), quota[&key] - *total);
                }
                _ => {}
            }
        }
        let accepted = out.trace.records().iter().filter(|r| r.event == "offload_accept").count();
        assert!(accepted > 0);
        assert_eq!(out.summary.federation.offloaded as usize, accepted);
    }
}

#[test]
fn optimism_violations_are_reported() {
    for (name, s) in common::bundled() {
        let out = run_replication(&s, 0, s.run.seed).unwrap();
        let traced = out.trace.records().iter().filter(|r| r.event == "optimism_violation").count();
        let counted: u32 = out.summary.brokers.values().map(|b| b.optimism_violations).sum();
        assert_eq!(traced, counted as usize, "{name}");
    }
}

#[test]
fn horizon_before_first_event_gives_zero_summary() {
    let mut s = common::load("reference");
    s.run.horizon_s = cloudmarket_core::kernel::SimTime::from_micros(1);
    let out = run_replication(&s, 0, 99).unwrap();
    assert!(out.trace.is_empty());
    assert!(out.summary.brokers.values().all(|b| *b == Default::default()));
    assert_eq!(out.summary.energy.total_j, 0.0);
    assert_eq!(out.summary.market.trade_count, 0);
}

#[test]
fn invalid_scenario_is_refused() {
    let mut s = common::load("minimal");
    s.brokers[0].requests[0].vm_class = "nope".into();
    assert!(run_replication(&s, 0, 1).is_err());
}

#[test]
fn dvfs_hosts_never_run_below_demand() {
    let s = common::load("reference");
    let out = run_replication(&s, 0, s.run.seed).unwrap();
    assert!(out
        .trace
        .records()
        .iter()
        .any(|r| r.event == "host_state" && r.get("speed") != Some("1")));
    common::replay_capacity(&s, &out.trace).unwrap();
}

#[test]
fn private_vms_are_not_billed() {
    let s = common::load("hybrid");
    let out = run_replication(&s, 0, s.run.seed).unwrap();
    assert!(out.ledger.journal().iter().all(|e| e.to != "dc-private" && e.from != "dc-private"));
    assert!(out.trace.records().iter().any(|r| r.event == "private_split"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_seed_is_reproducible(seed in any::<u64>()) {
        let s = common::load("reference");
        let a = run_replication(&s, 0, seed).unwrap();
        let b = run_replication(&s, 0, seed).unwrap();
        prop_assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        prop_assert_eq!(a.summary, b.summary);
        prop_assert_eq!(a.ledger.total(), a.ledger.opening_total());
    }

    #[test]
    fn aggregate_ignores_replication_order(costs in prop::collection::vec(-1000i64..1000, 1..6), rotate in 0usize..6) {
        let summaries: Vec<SummaryReport> = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut s = SummaryReport { replication: i as u32, ..Default::default() };
                s.brokers.insert("b".into(), cloudmarket_core::report::BrokerSummary { total_cost: c, ..Default::default() });
                s
            })
            .collect();
        let mut shuffled = summaries.clone();
        shuffled.rotate_left(rotate % summaries.len());
        shuffled.reverse();
        prop_assert_eq!(aggregate(&summaries), aggregate(&shuffled));
    }
}

#[test]
fn jitter_moves_arrivals_with_the_seed() {
    let s = parse_scenario(&std::fs::read_to_string(common::scenario_dir().join("reference.json")).unwrap()).unwrap();
    let arrivals = |seed| -> Vec<u64> {
        run_replication(&s, 0, seed)
            .unwrap()
            .trace
            .records()
            .iter()
            .filter(|r| r.event == "request_arrival")
            .map(|r| r.time_us)
            .collect()
    };
    assert_ne!(arrivals(1), arrivals(2));
}
