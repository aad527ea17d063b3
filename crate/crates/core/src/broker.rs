//! User-side brokering: provider discovery, QoS-feasible matching and
//! task-to-VM mapping.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::infrastructure::VmId;
use crate::kernel::SimTime;
use crate::market::{compute_bill, Ask, Cents, OrderBook, Price, QosRequirement};
use crate::workload::{ceil_micros, Cloudlet, CloudletId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("no provider satisfies request {0}")]
    NoFeasibleProvider(u64),
    #[error("request {0} has no tasks")]
    EmptyRequest(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppKind {
    Bag,
    Sweep,
    Workflow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceRequest {
    pub id: u64,
    pub broker: u32,
    pub app: AppKind,
    pub tasks: Vec<Cloudlet>,
    pub qos: QosRequirement,
    pub vm_class: String,
    /// VMs wanted.
    pub quantity: u32,
    /// PEs per VM of `vm_class`.
    pub vm_pes: u32,
    pub max_unit_price: Price,
}

impl ServiceRequest {
    pub fn total_length(&self) -> f64 {
        self.tasks.iter().map(|t| t.length_mi).sum()
    }
}

/// Terms a matched provider would sign.
#[derive(Clone, Debug, PartialEq)]
pub struct SlaTerms {
    pub deadline: SimTime,
    pub min_mips: f64,
    pub agreed_price: Cents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub provider: u32,
    pub unit_price: Price,
    pub est_cost: Cents,
    pub est_makespan: SimTime,
    pub sla: SlaTerms,
}

/// Current asks for `vm_class`, optionally restricted to `region`, cheapest first.
pub fn discover(book: &OrderBook, vm_class: &str, region: Option<&str>) -> Vec<Ask> {
    let mut asks: Vec<Ask> = book
        .open_asks(vm_class)
        .into_iter()
        .filter(|a| region.is_none_or(|r| a.region == r))
        .collect();
    asks.sort_by(|a, b| a.unit_price.cmp(&b.unit_price).then(a.provider.cmp(&b.provider)));
    asks
}

/// Makespan of `tasks` on `quantity` VMs of `vm_pes` PEs at `mips` per PE:
/// the larger of the aggregate-work bound and the longest single task.
pub fn estimate_makespan(tasks: &[Cloudlet], quantity: u32, vm_pes: u32, mips: f64) -> Option<SimTime> {
    if tasks.is_empty() {
        return Some(SimTime::ZERO);
    }
    let usable = (quantity as usize).min(tasks.len()).max(1) as f64;
    let total: f64 = tasks.iter().map(|t| t.length_mi).sum();
    let aggregate = total / (mips * vm_pes as f64 * usable);
    let longest = tasks
        .iter()
        .map(|t| t.length_mi / (mips * t.pes.clamp(1, vm_pes.max(1)) as f64))
        .fold(0.0, f64::max);
    let secs = aggregate.max(longest);
    if !secs.is_finite() {
        return None;
    }
    ceil_micros(secs, 1.0).ok().map(SimTime::from_micros)
}

/// Estimate for buying `quantity` VMs from `ask`, or `None` when it breaks
/// the deadline (relative to `now`), the budget or the MIPS floor.
pub fn evaluate(request: &ServiceRequest, ask: &Ask, quantity: u32, now: SimTime) -> Option<MatchResult> {
    if ask.mips < request.qos.min_mips || ask.unit_price > request.max_unit_price || quantity == 0 {
        return None;
    }
    let makespan = estimate_makespan(&request.tasks, quantity, request.vm_pes, ask.mips)?;
    let remaining = request.qos.deadline.checked_sub(now)?;
    if makespan > remaining {
        return None;
    }
    let per_vm = compute_bill(SimTime::ZERO, makespan, ask.unit_price).ok()?;
    let cost = Cents(per_vm.0 * quantity as i64);
    if cost.0 > request.qos.budget as i64 {
        return None;
    }
    Some(MatchResult {
        provider: ask.provider,
        unit_price: ask.unit_price,
        est_cost: cost,
        est_makespan: makespan,
        sla: SlaTerms {
            deadline: request.qos.deadline,
            min_mips: request.qos.min_mips,
            agreed_price: cost,
        },
    })
}

/// Cheapest feasible provider; ties go to the shorter makespan, then the lower provider id.
pub fn match_request(request: &ServiceRequest, asks: &[Ask], now: SimTime) -> Result<MatchResult, BrokerError> {
    if request.tasks.is_empty() {
        return Err(BrokerError::EmptyRequest(request.id));
    }
    asks.iter()
        .filter_map(|a| evaluate(request, a, request.quantity, now))
        .min_by(|a, b| {
            a.est_cost
                .cmp(&b.est_cost)
                .then(a.est_makespan.cmp(&b.est_makespan))
                .then(a.provider.cmp(&b.provider))
        })
        .ok_or(BrokerError::NoFeasibleProvider(request.id))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: CloudletId,
    pub length_mi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VmSpec {
    pub id: VmId,
    /// Aggregate MIPS of the VM.
    pub mips: f64,
}

/// Minimum-completion-time greedy mapping. Longer tasks go first (ties to
/// the lower id); each lands on the VM that would finish it soonest, ties to
/// the lowest VM id. `ready` holds the time in seconds each VM is already
/// busy for; absent VMs start idle.
pub fn map_tasks_from(tasks: &[TaskSpec], vms: &[VmSpec], ready: &BTreeMap<VmId, f64>) -> Vec<(CloudletId, VmId)> {
    let mut order: Vec<&TaskSpec> = tasks.iter().collect();
    order.sort_by(|a, b| b.length_mi.total_cmp(&a.length_mi).then(a.id.cmp(&b.id)));
    let mut vms: Vec<&VmSpec> = vms.iter().collect();
    vms.sort_by_key(|v| v.id);
    let mut load: Vec<f64> = vms.iter().map(|v| ready.get(&v.id).copied().unwrap_or(0.0)).collect();
    let mut out = Vec::with_capacity(tasks.len());
    if vms.is_empty() {
        return out;
    }
    for t in order {
        let (best, finish) = vms
            .iter()
            .enumerate()
            .map(|(i, v)| (i, load[i] + t.length_mi / v.mips))
            .fold((usize::MAX, f64::INFINITY), |acc, (i, f)| if f < acc.1 { (i, f) } else { acc });
        let best = if best == usize::MAX { 0 } else { best };
        load[best] = if finish.is_finite() { finish } else { load[best] };
        out.push((t.id, vms[best].id));
    }
    out
}

pub fn map_tasks(tasks: &[TaskSpec], vms: &[VmSpec]) -> Vec<(CloudletId, VmId)> {
    map_tasks_from(tasks, vms, &BTreeMap::new())
}

/// Makespan in seconds of an assignment, with tasks on a VM run back to back.
pub fn assignment_makespan(tasks: &[TaskSpec], vms: &[VmSpec], assignment: &[(CloudletId, VmId)]) -> f64 {
    let length: BTreeMap<CloudletId, f64> = tasks.iter().map(|t| (t.id, t.length_mi)).collect();
    let speed: BTreeMap<VmId, f64> = vms.iter().map(|v| (v.id, v.mips)).collect();
    let mut busy: BTreeMap<VmId, f64> = BTreeMap::new();
    for (t, v) in assignment {
        *busy.entry(*v).or_default() += length[t] / speed[v];
    }
    busy.values().copied().fold(0.0, f64::max)
}

/// Split of a bag between the broker's own VMs and the market.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HybridSplit {
    pub private: Vec<(CloudletId, VmId)>,
    pub public: Vec<CloudletId>,
}

/// Fills private VMs with MCT as long as each task is estimated to finish
/// within `budget_s` seconds; the rest is left for public VMs.
pub fn hybrid_split(tasks: &[TaskSpec], private: &[VmSpec], budget_s: f64) -> HybridSplit {
    let mut order: Vec<&TaskSpec> = tasks.iter().collect();
    order.sort_by(|a, b| b.length_mi.total_cmp(&a.length_mi).then(a.id.cmp(&b.id)));
    let mut vms: Vec<&VmSpec> = private.iter().collect();
    vms.sort_by_key(|v| v.id);
    let mut load = vec![0.0f64; vms.len()];
    let mut split = HybridSplit::default();
    for t in order {
        let best =
            vms.iter()
                .enumerate()
                .map(|(i, v)| (i, load[i] + t.length_mi / v.mips))
                .fold(None, |acc: Option<(usize, f64)>, (i, f)| match acc {
                    Some((_, g)) if g <= f => acc,
                    _ => Some((i, f)),
                });
        match best {
            Some((i, finish)) if finish <= budget_s => {
                load[i] = finish;
                split.private.push((t.id, vms[i].id));
            }
            _ => split.public.push(t.id),
        }
    }
    split.public.sort();
    split
}
