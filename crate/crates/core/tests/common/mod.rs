//! Independent oracles and trace checks shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use cloudmarket_core::scenario::{parse_scenario, Scenario};
use cloudmarket_core::trace::Trace;
use num_rational::Ratio;

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn load(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every bundled scenario, by file stem, in name order.
pub fn bundled() -> Vec<(String, Scenario)> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "json").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), load(&n))).collect()
}

/// Water level by bisection: every demand gets `min(d, level)`.
pub fn water_fill(demands: &[f64], capacity: f64) -> Vec<f64> {
    let total: f64 = demands.iter().sum();
    if total <= capacity {
        return demands.to_vec();
    }
    let (mut lo, mut hi) = (0.0_f64, demands.iter().copied().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        let used: f64 = demands.iter().map(|d| d.min(mid)).sum();
        if used > capacity {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    demands.iter().map(|d| d.min(lo)).collect()
}

/// Microseconds to run `length` MI at integer `rate` MIPS, rounded up.
pub fn exact_duration_us(length: u64, rate: u64) -> u64 {
    (length as u128 * 1_000_000).div_ceil(rate as u128) as u64
}

/// Strict FIFO space-shared schedule found by probing candidate instants:
/// a job may start no earlier than its predecessor, and only at the start
/// time or at some earlier job's finish.
pub fn fifo_oracle(jobs: &[(u64, u32)], pe_count: u32, rate: u64) -> Vec<(u64, u64)> {
    let mut placed: Vec<(u64, u64, u32)> = Vec::new();
    let mut floor = 0;
    for &(length, pes) in jobs {
        let mut candidates: Vec<u64> = placed.iter().map(|p| p.1).filter(|&f| f > floor).collect();
        candidates.push(floor);
        candidates.sort_unstable();
        let start = candidates
            .into_iter()
            .find(|&t| {
                let busy: u32 = placed.iter().filter(|p| p.0 <= t && t < p.1).map(|p| p.2).sum();
                busy + pes <= pe_count
            })
            .expect("eventually everything finishes");
        let finish = start + exact_duration_us(length, rate);
        placed.push((start, finish, pes));
        floor = start;
    }
    placed.iter().map(|p| (p.0, p.1)).collect()
}

/// Largest number of disjoint (bid, ask) pairs with bid ≥ ask, by exhaustive
/// search over which ask each bid takes.
pub fn max_matching(bids: &[u64], asks: &[u64]) -> usize {
    fn go(i: usize, used: u32, bids: &[u64], asks: &[u64], memo: &mut BTreeMap<(usize, u32), usize>) -> usize {
        if i == bids.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, bids, asks, memo);
        for (j, &a) in asks.iter().enumerate() {
            if used & (1 << j) == 0 && bids[i] >= a {
                best = best.max(1 + go(i + 1, used | (1 << j), bids, asks, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, bids, asks, &mut BTreeMap::new())
}

/// Optimal makespan of `lengths` on `vms` identical machines of `speed`, by
/// enumerating every assignment.
pub fn opt_makespan(lengths: &[f64], vms: usize, speed: f64) -> f64 {
    let n = lengths.len();
    let total = vms.pow(n as u32);
    let mut best = f64::INFINITY;
    for code in 0..total {
        let mut load = vec![0.0; vms];
        let mut c = code;
        for &len in lengths {
            load[c % vms] += len;
            c /= vms;
        }
        best = best.min(load.iter().copied().fold(0.0, f64::max) / speed);
    }
    best
}

/// Bill in cents for `micros` of use at `millicents` per started hour.
pub fn rational_bill(micros: u64, millicents: u64) -> i64 {
    let hours = Ratio::new(micros as i128, 3_600_000_000).ceil();
    (hours * Ratio::from_integer(millicents as i128) / Ratio::from_integer(1000))
        .ceil()
        .to_integer() as i64
}

/// Energy of running `tasks` back to back at speed `s` on one PE.
pub fn cubic_energy(tasks: &[f64], mips: f64, p_idle: f64, p_max: f64, s: f64) -> f64 {
    let watts = p_idle + (p_max - p_idle) * s * s * s;
    tasks.iter().map(|len| len / (mips * s) * watts).sum()
}

#[derive(Clone, Copy, Debug)]
struct Held {
    pes: u32,
    mips: f64,
    ram: u64,
}

/// Replays `vm_alloc`, `vm_release` and `host_state` records and checks host
/// capacities after every batch of same-time records. Returns the first
/// violation.
pub fn replay_capacity(scenario: &Scenario, trace: &Trace) -> Result<usize, String> {
    let mut spec = BTreeMap::new();
    for d in &scenario.datacenters {
        for h in &d.hosts {
            spec.insert(h.id.clone(), h.clone());
        }
    }
    let mut speed: BTreeMap<String, f64> = spec.keys().map(|h| (h.clone(), 1.0)).collect();
    let mut held: BTreeMap<String, BTreeMap<String, Held>> = BTreeMap::new();
    let records = trace.records();
    let mut checks = 0;
    let mut i = 0;
    while i < records.len() {
        let t = records[i].time_us;
        let mut touched = Vec::new();
        while i < records.len() && records[i].time_us == t {
            let r = &records[i];
            i += 1;
            let Some(host) = r.get("host").map(str::to_string) else { continue };
            match r.event.as_str() {
                "host_state" => {
                    speed.insert(host.clone(), r.num("speed").ok_or("host_state without speed")?);
                }
                "vm_alloc" => {
                    let h = Held {
                        pes: r.num("pes").ok_or("vm_alloc without pes")?,
                        mips: r.num("mips").ok_or("vm_alloc without mips")?,
                        ram: r.num("ram").ok_or("vm_alloc without ram")?,
                    };
                    held.entry(host.clone()).or_default().insert(r.get("vm").unwrap().to_string(), h);
                }
                "vm_release" => {
                    held.entry(host.clone()).or_default().remove(r.get("vm").unwrap());
                }
                _ => continue,
            }
            touched.push(host);
        }
        for host in touched {
            let s = &spec[&host];
            let cap = s.mips_per_pe * speed[&host];
            let vms = held.get(&host).cloned().unwrap_or_default();
            let ram: u64 = vms.values().map(|v| v.ram).sum();
            let mips: f64 = vms.values().map(|v| v.pes as f64 * v.mips).sum();
            if ram > s.ram_mb {
                return Err(format!("t={t}: {host} holds {ram} MB of {}", s.ram_mb));
            }
            if let Some((vm, v)) = vms.iter().find(|(_, v)| v.mips > cap + 1e-6) {
                return Err(format!("t={t}: {host} gives vm {vm} {} MIPS per PE, capacity {cap}", v.mips));
            }
            if mips > s.pes as f64 * cap + 1e-6 {
                return Err(format!("t={t}: {host} allocates {mips} MIPS of {}", s.pes as f64 * cap));
            }
            checks += 1;
        }
    }
    Ok(checks)
}

/// Σ completed cloudlet lengths against Σ executed MI of destroyed VMs.
/// Fails if any VM is still alive when the trace ends.
pub fn work_balance(trace: &Trace) -> Result<(f64, f64, usize), String> {
    let mut completed = 0.0;
    let mut cloudlets = 0;
    let mut executed = 0.0;
    let mut alive: BTreeMap<(String, String), ()> = BTreeMap::new();
    for r in trace.records() {
        match r.event.as_str() {
            "cloudlet_done" => {
                completed += r.num::<f64>("length_mi").ok_or("cloudlet_done without length")?;
                cloudlets += 1;
            }
            "vm_alloc" => {
                alive.insert((r.entity.clone(), r.get("vm").unwrap().to_string()), ());
            }
            "vm_destroyed" => {
                executed += r.num::<f64>("executed_mi").ok_or("vm_destroyed without executed_mi")?;
                alive.remove(&(r.entity.clone(), r.get("vm").unwrap().to_string()));
            }
            _ => {}
        }
    }
    if let Some(((dc, vm), _)) = alive.iter().next() {
        return Err(format!("vm {vm} in {dc} still running at the horizon"));
    }
    Ok((completed, executed, cloudlets))
}
