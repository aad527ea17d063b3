//! Runs a scenario: builds datacenters, brokers and the exchange, feeds the
//! kernel and records the trace and the summary.
//!
//! Entities are registered as: every datacenter in file order, every broker
//! in file order, then the exchange. Resource and broker events have
//! priority 0; market ticks (1) and billing ticks (2) run after them at the
//! same instant.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::broker::{estimate_makespan, evaluate, hybrid_split, map_tasks, map_tasks_from, AppKind, ServiceRequest, TaskSpec, VmSpec};
use crate::energy::EnergyMeter;
use crate::federation::{
    accept_remote, decide_offload, settle_peering, Admission, CoordinatorPolicy, FederationError, OffloadDecision, PeeringAgreement,
    PeeringRecord,
};
use crate::infrastructure::{Datacenter, Host, HostId, InfraError, PlacementPolicy, SchedulerMode, Vm, VmExecutor, VmId, VmState};
use crate::kernel::{EntityId, EventHandle, Kernel, KernelError, SimEvent, SimTime, MICROS_PER_SEC};
use crate::kv;
use crate::market::{
    assess_penalty, billed_hours, clear_auction, clear_commodity_with, compute_bill, settle_sla, Ask, AskId, Bid, BidId, Cents, Ledger,
    MarketError, OrderBook, Price, QosRequirement, Sla, SlaStatus, Trade,
};
use crate::report::{BrokerSummary, ProviderSummary, SummaryReport};
use crate::scenario::{AppSpec, Mechanism, Scenario, ScenarioError, EXCHANGE};
use crate::trace::Trace;
use crate::workload::{expand_param_sweep, ready_tasks, Cloudlet, CloudletId, CloudletTemplate, ParamSweepSpec, Workflow};

const RESOURCE: i16 = 0;
const MARKET_TICK: i16 = 1;
const BILLING_TICK: i16 = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Infra(#[from] InfraError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Clone, Debug)]
pub enum Msg {
    Arrival {
        request: usize,
    },
    MarketTick,
    BillingTick,
    CloudletStart {
        request: usize,
        dc: usize,
        vm: VmId,
        cloudlet: CloudletId,
    },
    VmCheck {
        dc: usize,
        vm: VmId,
    },
    CloudletReturn {
        request: usize,
        cloudlet: CloudletId,
    },
    MigrationDone {
        dc: usize,
        vm: VmId,
    },
    Forwarded {
        request: usize,
        grant: usize,
    },
}

pub struct RunOutput {
    pub trace: Trace,
    pub summary: SummaryReport,
    pub ledger: Ledger,
}

/// Published VM shape of one datacenter host, as last written to the trace.
#[derive(Clone, Copy, Debug, PartialEq)]
struct AllocView {
    pes: u32,
    mips: f64,
    ram: u64,
    mode: SchedulerMode,
}

struct VmRt {
    exec: VmExecutor,
    check: Option<EventHandle>,
    request: usize,
    started: SimTime,
}

struct DcRt {
    dc: Datacenter,
    name: String,
    placement: PlacementPolicy,
    consolidation: bool,
    private_owner: Option<usize>,
    policy: CoordinatorPolicy,
    host_names: BTreeMap<HostId, String>,
    vms: BTreeMap<VmId, VmRt>,
    rejected: u32,
    seen_hosts: BTreeMap<HostId, (bool, usize)>,
    seen_allocs: BTreeMap<HostId, BTreeMap<VmId, AllocView>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GrantState {
    Pending,
    Ready,
    Failed,
}

struct Grant {
    seller: usize,
    serving: usize,
    price: Price,
    quantity: u32,
    agreement: Option<usize>,
    vm_hours: u64,
    est_makespan: SimTime,
    vms: Vec<VmId>,
    state: GrantState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ReqStatus {
    Scheduled,
    Bidding,
    Acquiring,
    Running,
    Done,
    Rejected,
}

struct TaskRt {
    cloudlet: Cloudlet,
    dispatched: bool,
    done: bool,
}

struct ReqRt {
    broker: usize,
    name: String,
    class: usize,
    app: AppKind,
    arrival: SimTime,
    deadline: SimTime,
    penalty_rate: u64,
    /// Tasks bought on the market, with the bid's terms.
    public: ServiceRequest,
    tasks: BTreeMap<CloudletId, TaskRt>,
    workflow: Option<Workflow<CloudletId>>,
    status: ReqStatus,
    bid: Option<BidId>,
    grants: Vec<Grant>,
    private_dc: Option<usize>,
    private_vms: Vec<VmId>,
    /// VMs that receive ready workflow tasks.
    wf_vms: Vec<(usize, VmId)>,
    busy_until: BTreeMap<(usize, VmId), f64>,
    public_start: Option<SimTime>,
    remaining: usize,
}

#[derive(Default)]
struct BrokerStats {
    first_arrival: Option<SimTime>,
    last_finish: Option<SimTime>,
    sla_met: u32,
    sla_violated: u32,
    completed: u32,
    rejected: u32,
    optimism: u32,
}

#[derive(Clone, Copy)]
enum AskSource {
    Local,
    Peer,
}

struct World {
    scenario: Scenario,
    dcs: Vec<DcRt>,
    brokers: Vec<String>,
    broker_stats: Vec<BrokerStats>,
    requests: Vec<ReqRt>,
    agreements: Vec<PeeringAgreement>,
    book: OrderBook,
    ask_sources: BTreeMap<AskId, AskSource>,
    ledger: Ledger,
    journal_cursor: usize,
    meter: EnergyMeter,
    trace: Trace,
    tick: Option<EventHandle>,
    billing: Option<EventHandle>,
    next_vm: u64,
    trades: u32,
    traded_vms: u32,
    traded_value_mc: u128,
    offloaded: u32,
    declined: u32,
    error: Option<SimError>,
}

fn dc_entity(d: usize) -> EntityId {
    EntityId(d as u32)
}

impl World {
    fn broker_entity(&self, b: usize) -> EntityId {
        EntityId((self.dcs.len() + b) as u32)
    }

    fn exchange(&self) -> EntityId {
        EntityId((self.dcs.len() + self.brokers.len()) as u32)
    }

    fn class_vm(&self, class: usize, owner: usize, id: u64) -> Vm {
        let c = &self.scenario.vm_classes[class];
        Vm::new(id, owner as u32, c.pes, c.mips, c.ram_mb, c.scheduler)
    }

    /// Per-PE MIPS a VM of `class` can get in datacenter `d`.
    fn class_mips_at(&self, class: usize, d: usize) -> f64 {
        let best = self.dcs[d].dc.hosts().iter().map(|h| h.mips_per_pe).fold(0.0, f64::max);
        self.scenario.vm_classes[class].mips.min(best)
    }

    fn transfer_delay(&self, mb: f64) -> SimTime {
        let per_mb = self.scenario.market.transfer_s_per_mb.micros() as f64;
        SimTime::from_micros((mb.max(0.0) * per_mb).ceil() as u64)
    }

    fn flush_journal(&mut self, now: SimTime) {
        let entries = &self.ledger.journal()[self.journal_cursor..];
        for e in entries {
            self.trace.push(
                now,
                EXCHANGE,
                "transfer",
                kv!["from" => e.from, "to" => e.to, "amount" => e.amount.0, "reason" => e.reason],
            );
        }
        self.journal_cursor = self.ledger.journal().len();
    }

    /// Brings the trace, the energy meter and the VM executors in line with
    /// host `h` of datacenter `d`.
    fn sync_host(&mut self, d: usize, h: HostId, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let refresh = self.dcs[d].dc.refresh_host(h)?;
        let _ = refresh;
        let dcrt = &mut self.dcs[d];
        let host = dcrt.dc.host(h).ok_or(InfraError::UnknownHost(h))?;
        let host_name = dcrt.host_names[&h].clone();
        let state = (host.active, host.level);
        if dcrt.seen_hosts.get(&h) != Some(&state) {
            dcrt.seen_hosts.insert(h, state);
            self.meter.set_power(&host_name, now, host.watts());
            self.trace.push(
                now,
                &dcrt.name,
                "host_state",
                kv!["host" => host_name, "active" => u8::from(host.active), "speed" => host.speed()],
            );
        }
        let current: BTreeMap<VmId, AllocView> = dcrt
            .dc
            .table()
            .host(h)
            .map(|(id, a)| {
                (
                    *id,
                    AllocView {
                        pes: a.pes,
                        mips: a.mips_per_pe,
                        ram: a.ram_mb,
                        mode: a.mode,
                    },
                )
            })
            .collect();
        let seen = dcrt.seen_allocs.entry(h).or_default();
        for id in seen.keys().filter(|id| !current.contains_key(id)) {
            self.trace.push(now, &dcrt.name, "vm_release", kv!["host" => host_name, "vm" => id]);
        }
        for (id, view) in &current {
            if seen.get(id) != Some(view) {
                let mode = match view.mode {
                    SchedulerMode::SpaceShared => "space_shared",
                    SchedulerMode::TimeShared => "time_shared",
                };
                self.trace.push(
                    now,
                    &dcrt.name,
                    "vm_alloc",
                    kv![
                        "host" => host_name,
                        "vm" => id,
                        "pes" => view.pes,
                        "mips" => view.mips,
                        "ram" => view.ram,
                        "mode" => mode,
                    ],
                );
            }
        }
        *seen = current.clone();

        // executors follow the allocation on the host they run on
        let mut changed = Vec::new();
        for (id, view) in current {
            let Some(vm) = dcrt.dc.vm(id) else { continue };
            let rate = match vm.state {
                VmState::Running if vm.placed_on == Some(h) => view.mips,
                VmState::Migrating { .. } => 0.0,
                _ => continue,
            };
            if let Some(rt) = dcrt.vms.get_mut(&id) {
                if rt.exec.rate_per_pe() != rate {
                    rt.exec.set_rate(now, rate);
                }
                changed.push(id);
            }
        }
        for id in changed {
            self.reschedule_check(d, id, k)?;
        }
        Ok(())
    }

    fn reschedule_check(&mut self, d: usize, vm: VmId, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let Some(rt) = self.dcs[d].vms.get_mut(&vm) else {
            return Ok(());
        };
        let next = rt.exec.next_completion();
        if let Some(old) = rt.check {
            if next.is_some_and(|t| old.key().fire_at == t) && k.is_pending(old) {
                return Ok(());
            }
            k.cancel(old);
            rt.check = None;
        }
        if let Some(t) = next {
            rt.check = Some(k.schedule_at(t.max(k.now()), dc_entity(d), Msg::VmCheck { dc: d, vm }, RESOURCE)?);
        }
        Ok(())
    }

    fn place(&mut self, d: usize, class: usize, request: usize, now: SimTime, k: &mut Kernel<Msg>) -> Result<Option<VmId>, SimError> {
        let owner = self.requests[request].broker;
        let vm = self.class_vm(class, owner, self.next_vm);
        let placement = self.dcs[d].placement;
        let host = match self.dcs[d].dc.place_vm(vm, placement) {
            Ok(h) => h,
            Err(InfraError::NoCapacity(_)) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let id = VmId(self.next_vm);
        self.next_vm += 1;
        let pes = self.scenario.vm_classes[class].pes;
        self.dcs[d].vms.insert(
            id,
            VmRt {
                exec: VmExecutor::new(pes, 0.0, now),
                check: None,
                request,
                started: now,
            },
        );
        self.sync_host(d, host, now, k)?;
        if self.dcs[d].consolidation {
            self.ensure_billing(k)?;
        }
        Ok(Some(id))
    }

    fn destroy(&mut self, d: usize, vm: VmId, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let Some(mut rt) = self.dcs[d].vms.remove(&vm) else {
            return Ok(());
        };
        if let Some(h) = rt.check.take() {
            k.cancel(h);
        }
        rt.exec.set_rate(now, 0.0);
        let host = self.dcs[d].dc.vm(vm).and_then(|v| v.placed_on);
        let touched = self.dcs[d].dc.destroy_vm(vm)?;
        self.trace.push(
            now,
            &self.dcs[d].name,
            "vm_destroyed",
            kv![
                "vm" => vm,
                "host" => host.map_or(String::new(), |h| self.dcs[d].host_names[&h].clone()),
                "executed_mi" => rt.exec.executed_mi(),
            ],
        );
        for h in touched {
            self.sync_host(d, h, now, k)?;
        }
        if self.dcs[d].consolidation {
            self.ensure_billing(k)?;
        }
        Ok(())
    }

    fn ensure_tick(&mut self, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        if self.tick.is_some_and(|h| k.is_pending(h)) {
            return Ok(());
        }
        let at = k.now().next_multiple_of(self.scenario.market.tick_s);
        self.tick = Some(k.schedule_at(at, self.exchange(), Msg::MarketTick, MARKET_TICK)?);
        Ok(())
    }

    fn ensure_billing(&mut self, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        if self.billing.is_some_and(|h| k.is_pending(h)) {
            return Ok(());
        }
        let at = k.now().next_multiple_of(self.scenario.market.billing_tick_s);
        self.billing = Some(k.schedule_at(at, self.exchange(), Msg::BillingTick, BILLING_TICK)?);
        Ok(())
    }

    fn handle_event(&mut self, ev: SimEvent<Msg>, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let now = ev.fire_at;
        match ev.payload {
            Msg::Arrival { request } => self.on_arrival(request, now, k)?,
            Msg::MarketTick => self.on_market_tick(now, k)?,
            Msg::BillingTick => self.on_billing_tick(now, k)?,
            Msg::CloudletStart { request, dc, vm, cloudlet } => {
                let task = &self.requests[request].tasks[&cloudlet].cloudlet;
                let (length, pes) = (task.length_mi, task.pes);
                if let Some(rt) = self.dcs[dc].vms.get_mut(&vm) {
                    rt.exec.submit(now, cloudlet, length, pes);
                    self.reschedule_check(dc, vm, k)?;
                }
            }
            Msg::VmCheck { dc, vm } => self.on_vm_check(dc, vm, now, k)?,
            Msg::CloudletReturn { request, cloudlet } => self.on_cloudlet_return(request, cloudlet, now, k)?,
            Msg::MigrationDone { dc, vm } => self.on_migration_done(dc, vm, now, k)?,
            Msg::Forwarded { request, grant } => self.on_forwarded(request, grant, now, k)?,
        }
        self.flush_journal(now);
        Ok(())
    }

    fn on_arrival(&mut self, r: usize, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let b = self.requests[r].broker;
        let stats = &mut self.broker_stats[b];
        stats.first_arrival = Some(stats.first_arrival.map_or(now, |t| t.min(now)));
        let req = &self.requests[r];
        let app = match req.app {
            AppKind::Bag => "bag",
            AppKind::Sweep => "sweep",
            AppKind::Workflow => "workflow",
        };
        self.trace.push(
            now,
            &self.brokers[b],
            "request_arrival",
            kv![
                "request" => req.name,
                "app" => app,
                "tasks" => req.tasks.len(),
                "quantity" => req.public.quantity,
                "deadline_us" => req.deadline.micros(),
            ],
        );

        let mut public: Vec<CloudletId> = self.requests[r].tasks.keys().copied().collect();
        if let Some(p) = self.requests[r].private_dc {
            let class = self.requests[r].class;
            let mut placed = Vec::new();
            for _ in 0..self.requests[r].public.quantity {
                match self.place(p, class, r, now, k)? {
                    Some(vm) => placed.push(vm),
                    None => break,
                }
            }
            if !placed.is_empty() {
                let speed = self.scenario.vm_classes[class].pes as f64 * self.class_mips_at(class, p);
                let specs: Vec<VmSpec> = placed.iter().map(|&id| VmSpec { id, mips: speed }).collect();
                let tasks: Vec<TaskSpec> = self.requests[r]
                    .tasks
                    .values()
                    .map(|t| TaskSpec {
                        id: t.cloudlet.id,
                        length_mi: t.cloudlet.length_mi,
                    })
                    .collect();
                let budget_s = self.requests[r].deadline.saturating_sub(now).as_secs_f64();
                let split = hybrid_split(&tasks, &specs, budget_s);
                let mut used: BTreeSet<VmId> = BTreeSet::new();
                if self.requests[r].app == AppKind::Workflow {
                    if split.public.is_empty() {
                        used.extend(placed.iter().copied());
                        self.requests[r].wf_vms = placed.iter().map(|&v| (p, v)).collect();
                        public.clear();
                    }
                } else {
                    for &(cl, vm) in &split.private {
                        used.insert(vm);
                        self.dispatch_task(r, p, vm, cl, now, k)?;
                    }
                    public = split.public.clone();
                }
                for &vm in &placed {
                    if !used.contains(&vm) {
                        self.destroy(p, vm, now, k)?;
                    }
                }
                self.requests[r].private_vms = placed.into_iter().filter(|v| used.contains(v)).collect();
                if !self.requests[r].private_vms.is_empty() {
                    self.trace.push(
                        now,
                        &self.brokers[b],
                        "private_split",
                        kv![
                            "request" => self.requests[r].name,
                            "private_vms" => self.requests[r].private_vms.len(),
                            "public_tasks" => public.len(),
                        ],
                    );
                }
            }
        }

        let req = &mut self.requests[r];
        req.public.tasks = public.iter().map(|id| req.tasks[id].cloudlet.clone()).collect();
        if req.app != AppKind::Workflow {
            // no point leasing VMs that would get no task
            req.public.quantity = req.public.quantity.min(req.public.tasks.len() as u32);
        }
        if req.public.tasks.is_empty() {
            req.status = ReqStatus::Running;
            if req.app == AppKind::Workflow {
                self.dispatch_ready(r, now, k)?;
            }
            return Ok(());
        }
        let bid = Bid::new(
            b as u32,
            self.scenario.vm_classes[req.class].id.clone(),
            req.public.max_unit_price,
            req.public.quantity,
            req.public.qos,
        )?
        .with_tag(r as u64);
        req.bid = Some(self.book.submit_bid(bid, now)?);
        req.status = ReqStatus::Bidding;
        self.ensure_tick(k)
    }

    fn dispatch_task(&mut self, r: usize, d: usize, vm: VmId, cl: CloudletId, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let task = self.requests[r].tasks.get_mut(&cl).expect("task exists");
        task.dispatched = true;
        let input_mb = task.cloudlet.input_mb;
        let delay = self.transfer_delay(input_mb);
        k.schedule_at(
            now + delay,
            dc_entity(d),
            Msg::CloudletStart {
                request: r,
                dc: d,
                vm,
                cloudlet: cl,
            },
            RESOURCE,
        )?;
        Ok(())
    }

    /// Ready-set greedy: every ready, undispatched workflow task goes to the
    /// VM expected to finish it first.
    fn dispatch_ready(&mut self, r: usize, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let req = &self.requests[r];
        let Some(wf) = &req.workflow else { return Ok(()) };
        let done: BTreeSet<CloudletId> = req.tasks.iter().filter(|(_, t)| t.done).map(|(id, _)| *id).collect();
        let ready: Vec<TaskSpec> = ready_tasks(wf, &done)
            .into_iter()
            .filter(|id| !req.tasks[id].dispatched)
            .map(|id| TaskSpec {
                id,
                length_mi: req.tasks[&id].cloudlet.length_mi,
            })
            .collect();
        if ready.is_empty() || req.wf_vms.is_empty() {
            return Ok(());
        }
        let by_id: BTreeMap<VmId, usize> = req.wf_vms.iter().map(|&(d, v)| (v, d)).collect();
        let specs: Vec<VmSpec> = req
            .wf_vms
            .iter()
            .map(|&(d, v)| {
                let class = req.class;
                VmSpec {
                    id: v,
                    mips: self.scenario.vm_classes[class].pes as f64 * self.class_mips_at(class, d),
                }
            })
            .collect();
        let now_s = now.as_secs_f64();
        let loads: BTreeMap<VmId, f64> = req
            .wf_vms
            .iter()
            .map(|&(d, v)| (v, (req.busy_until.get(&(d, v)).copied().unwrap_or(0.0) - now_s).max(0.0)))
            .collect();
        let plan = map_tasks_from(&ready, &specs, &loads);
        let speed: BTreeMap<VmId, f64> = specs.iter().map(|s| (s.id, s.mips)).collect();
        for (cl, vm) in plan {
            let d = by_id[&vm];
            let len = self.requests[r].tasks[&cl].cloudlet.length_mi;
            let busy = self.requests[r].busy_until.entry((d, vm)).or_insert(0.0);
            *busy = busy.max(now_s) + len / speed[&vm];
            self.dispatch_task(r, d, vm, cl, now, k)?;
        }
        Ok(())
    }

    fn ask_quantity_cap(&self, class: &str) -> u32 {
        self.book
            .bids()
            .iter()
            .filter(|e| e.order.vm_class == class)
            .map(|e| e.remaining)
            .sum()
    }

    fn publish_asks(&mut self, now: SimTime) -> Result<(), SimError> {
        self.book.clear_asks();
        self.ask_sources.clear();
        for d in 0..self.dcs.len() {
            if self.dcs[d].private_owner.is_some() {
                continue;
            }
            for c in 0..self.scenario.vm_classes.len() {
                let class = self.scenario.vm_classes[c].id.clone();
                let cap = self.ask_quantity_cap(&class);
                if cap == 0 {
                    continue;
                }
                let probe = self.class_vm(c, 0, u64::MAX);
                let price = Price::from_cents(self.scenario.datacenters[d].price_per_vm_hour);
                let region = self.dcs[d].dc.region.clone();
                let local = self.dcs[d].dc.placeable_count(&probe, self.dcs[d].placement, cap);
                if local > 0 {
                    let ask = Ask::new(d as u32, class.clone(), price, local, region.clone(), self.class_mips_at(c, d))?;
                    let id = self.book.publish_ask(ask, now)?;
                    self.ask_sources.insert(id, AskSource::Local);
                }
                for a in 0..self.agreements.len() {
                    let ag = &self.agreements[a];
                    if ag.local as usize != d || ag.quota == 0 {
                        continue;
                    }
                    let peer = ag.peer as usize;
                    let room = self.dcs[peer].dc.placeable_count(&probe, self.dcs[peer].placement, cap);
                    let quota = ag.quota.min(u32::MAX as u64) as u32;
                    let headroom = room.min(quota);
                    if headroom > 0 {
                        let ask = Ask::new(
                            d as u32,
                            class.clone(),
                            price,
                            headroom,
                            region.clone(),
                            self.class_mips_at(c, peer),
                        )?;
                        let id = self.book.publish_ask(ask, now)?;
                        self.ask_sources.insert(id, AskSource::Peer);
                    }
                }
            }
        }
        Ok(())
    }

    fn on_market_tick(&mut self, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        self.publish_asks(now)?;
        let mut trades: Vec<Trade> = Vec::new();
        let classes: Vec<String> = self.scenario.vm_classes.iter().map(|c| c.id.clone()).collect();
        for class in &classes {
            let cleared = match self.scenario.market.mechanism {
                Mechanism::Commodity => {
                    let requests = &self.requests;
                    let regions: Vec<Option<String>> = self.scenario.brokers.iter().map(|b| b.region.clone()).collect();
                    clear_commodity_with(&mut self.book, class, now, |bid, ask, q| {
                        let r = &requests[bid.tag as usize];
                        regions[r.broker].as_ref().is_none_or(|reg| *reg == ask.region) && evaluate(&r.public, ask, q, now).is_some()
                    })
                }
                Mechanism::Auction => clear_auction(&mut self.book, class, now),
            };
            trades.extend(cleared);
        }

        let bid_tags: BTreeMap<u64, usize> = self.book.bids().iter().map(|e| (e.id.0, e.order.tag as usize)).collect();
        let mut touched: BTreeSet<usize> = BTreeSet::new();
        for t in &trades {
            let r = bid_tags[&t.bid];
            touched.insert(r);
            self.on_trade(r, t, now, k)?;
        }
        for &r in &touched {
            if let Some(bid) = self.requests[r].bid.take() {
                self.book.withdraw_bid(bid);
            }
            self.requests[r].status = ReqStatus::Acquiring;
            self.try_start(r, now, k)?;
        }
        // carried-over bids expire once their deadline has passed
        let expired: Vec<usize> = self
            .book
            .bids()
            .iter()
            .map(|e| e.order.tag as usize)
            .filter(|&r| self.requests[r].deadline <= now)
            .collect();
        for r in expired {
            if let Some(bid) = self.requests[r].bid.take() {
                self.book.withdraw_bid(bid);
            }
            self.reject(r, "deadline", now, k)?;
        }
        self.book.compact();
        self.book.clear_asks();
        self.ask_sources.clear();
        if !self.book.bids().is_empty() {
            let at = now.next_multiple_of(self.scenario.market.tick_s);
            self.tick = Some(k.schedule_at(at, self.exchange(), Msg::MarketTick, MARKET_TICK)?);
        } else {
            self.tick = None;
        }
        Ok(())
    }

    fn on_trade(&mut self, r: usize, t: &Trade, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let d = t.seller as usize;
        self.trades += 1;
        self.traded_vms += t.quantity;
        self.traded_value_mc += t.price.millicents() as u128 * t.quantity as u128;
        self.trace.push(
            now,
            EXCHANGE,
            "trade",
            kv![
                "buyer" => self.brokers[t.buyer as usize],
                "seller" => self.dcs[d].name,
                "request" => self.requests[r].name,
                "class" => t.vm_class,
                "price_mc" => t.price.millicents(),
                "quantity" => t.quantity,
            ],
        );
        let class = self.requests[r].class;
        let source = self.ask_sources.get(&AskId(t.ask)).copied().unwrap_or(AskSource::Local);
        let mips = match source {
            AskSource::Local => self.class_mips_at(class, d),
            AskSource::Peer => self.book.asks().iter().find(|e| e.id.0 == t.ask).map_or(0.0, |e| e.order.mips),
        };
        let req = &self.requests[r];
        let est = estimate_makespan(&req.public.tasks, t.quantity, req.public.vm_pes, mips).unwrap_or(SimTime::MAX);
        let hours = est.micros().div_ceil(crate::market::SECONDS_PER_HOUR * MICROS_PER_SEC).max(1);
        let vm_hours = t.quantity as u64 * hours;

        let probe = self.class_vm(class, req.broker, u64::MAX);
        let local_feasible = match source {
            AskSource::Local => self.dcs[d].dc.trial_place(&probe, t.quantity, self.dcs[d].placement).is_some(),
            AskSource::Peer => false,
        };
        let util = self.dcs[d].dc.average_utilization();
        let mine: Vec<usize> = (0..self.agreements.len())
            .filter(|&a| self.agreements[a].local as usize == d)
            .collect();
        let candidates: Vec<PeeringAgreement> = mine.iter().map(|&a| self.agreements[a].clone()).collect();
        let decision = decide_offload(
            util,
            local_feasible,
            vm_hours,
            req.public.max_unit_price,
            &candidates,
            &self.dcs[d].policy,
        );

        let mut grant = Grant {
            seller: d,
            serving: d,
            price: t.price,
            quantity: t.quantity,
            agreement: None,
            vm_hours,
            est_makespan: est,
            vms: Vec::new(),
            state: GrantState::Pending,
        };
        match decision {
            OffloadDecision::ServeLocal => {
                for _ in 0..t.quantity {
                    match self.place(d, class, r, now, k)? {
                        Some(vm) => grant.vms.push(vm),
                        None => break,
                    }
                }
                grant.state = if grant.vms.is_empty() {
                    GrantState::Failed
                } else {
                    GrantState::Ready
                };
                self.requests[r].grants.push(grant);
            }
            OffloadDecision::Forward { agreement, peer } => {
                let a = mine[agreement];
                grant.agreement = Some(a);
                grant.serving = peer as usize;
                let latency = self.agreements[a].latency;
                self.trace.push(
                    now,
                    &self.dcs[d].name,
                    "offload",
                    kv![
                        "request" => self.requests[r].name,
                        "peer" => self.dcs[peer as usize].name,
                        "quantity" => t.quantity,
                        "vm_hours" => vm_hours,
                    ],
                );
                self.requests[r].grants.push(grant);
                let g = self.requests[r].grants.len() - 1;
                k.schedule_at(
                    now + latency,
                    dc_entity(peer as usize),
                    Msg::Forwarded { request: r, grant: g },
                    RESOURCE,
                )?;
            }
            OffloadDecision::Reject => {
                self.dcs[d].rejected += 1;
                self.trace.push(
                    now,
                    &self.dcs[d].name,
                    "offload_reject",
                    kv!["request" => self.requests[r].name, "quantity" => t.quantity, "util" => util],
                );
                grant.state = GrantState::Failed;
                self.requests[r].grants.push(grant);
            }
        }
        Ok(())
    }

    fn on_forwarded(&mut self, r: usize, g: usize, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let grant = &self.requests[r].grants[g];
        let (p, a, qty, vm_hours) = (
            grant.serving,
            grant.agreement.expect("forwarded grant"),
            grant.quantity,
            grant.vm_hours,
        );
        let class = self.requests[r].class;
        let probe = self.class_vm(class, self.requests[r].broker, u64::MAX);
        let trial = self.dcs[p].dc.trial_place(&probe, qty, self.dcs[p].placement);
        let policy = self.dcs[p].policy;
        let admission = accept_remote(trial.is_some(), trial.unwrap_or(1.0), vm_hours, &mut self.agreements[a], &policy);
        match admission {
            Admission::Accept => {
                let mut vms = Vec::new();
                for _ in 0..qty {
                    match self.place(p, class, r, now, k)? {
                        Some(vm) => vms.push(vm),
                        None => break,
                    }
                }
                self.offloaded += 1;
                self.trace.push(
                    now,
                    &self.dcs[p].name,
                    "offload_accept",
                    kv![
                        "request" => self.requests[r].name,
                        "from" => self.dcs[self.requests[r].grants[g].seller].name,
                        "quantity" => vms.len(),
                        "quota_left" => self.agreements[a].quota,
                    ],
                );
                let grant = &mut self.requests[r].grants[g];
                grant.state = if vms.is_empty() { GrantState::Failed } else { GrantState::Ready };
                grant.vms = vms;
            }
            Admission::Decline => {
                self.declined += 1;
                self.dcs[p].rejected += 1;
                self.trace.push(
                    now,
                    &self.dcs[p].name,
                    "offload_decline",
                    kv!["request" => self.requests[r].name, "quantity" => qty],
                );
                self.requests[r].grants[g].state = GrantState::Failed;
            }
        }
        self.try_start(r, now, k)
    }

    /// Starts the public part once every grant is settled one way or the other.
    fn try_start(&mut self, r: usize, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let req = &self.requests[r];
        if req.status != ReqStatus::Acquiring || req.grants.iter().any(|g| g.state == GrantState::Pending) {
            return Ok(());
        }
        let vms: Vec<(usize, VmId)> = req
            .grants
            .iter()
            .filter(|g| g.state == GrantState::Ready)
            .flat_map(|g| g.vms.iter().map(move |&v| (g.serving, v)))
            .collect();
        if vms.is_empty() {
            return self.reject(r, "no_capacity", now, k);
        }
        self.requests[r].status = ReqStatus::Running;
        self.requests[r].public_start = Some(now);
        let class = self.requests[r].class;
        if self.requests[r].app == AppKind::Workflow {
            self.requests[r].wf_vms = vms;
            return self.dispatch_ready(r, now, k);
        }
        let pes = self.scenario.vm_classes[class].pes as f64;
        let specs: Vec<VmSpec> = vms
            .iter()
            .map(|&(d, v)| VmSpec {
                id: v,
                mips: pes * self.class_mips_at(class, d),
            })
            .collect();
        let where_: BTreeMap<VmId, usize> = vms.iter().map(|&(d, v)| (v, d)).collect();
        let tasks: Vec<TaskSpec> = self.requests[r]
            .public
            .tasks
            .iter()
            .map(|t| TaskSpec {
                id: t.id,
                length_mi: t.length_mi,
            })
            .collect();
        for (cl, vm) in map_tasks(&tasks, &specs) {
            self.dispatch_task(r, where_[&vm], vm, cl, now, k)?;
        }
        Ok(())
    }

    fn reject(&mut self, r: usize, reason: &str, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let b = self.requests[r].broker;
        self.requests[r].status = ReqStatus::Rejected;
        self.broker_stats[b].rejected += 1;
        self.trace.push(
            now,
            &self.brokers[b],
            "request_rejected",
            kv!["request" => self.requests[r].name, "reason" => reason],
        );
        if let Some(p) = self.requests[r].private_dc {
            for vm in std::mem::take(&mut self.requests[r].private_vms) {
                self.destroy(p, vm, now, k)?;
            }
        }
        Ok(())
    }

    fn on_vm_check(&mut self, d: usize, vm: VmId, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let Some(rt) = self.dcs[d].vms.get_mut(&vm) else {
            return Ok(());
        };
        rt.check = None;
        let request = rt.request;
        let finished = rt.exec.collect_finished(now);
        for f in finished {
            self.trace.push(
                now,
                &self.dcs[d].name,
                "cloudlet_done",
                kv![
                    "vm" => vm,
                    "cloudlet" => f.id.0,
                    "request" => self.requests[request].name,
                    "length_mi" => f.length_mi,
                    "executed_mi" => f.executed_mi,
                ],
            );
            let delay = self.transfer_delay(self.requests[request].tasks[&f.id].cloudlet.output_mb);
            k.schedule_at(
                now + delay,
                self.broker_entity(self.requests[request].broker),
                Msg::CloudletReturn { request, cloudlet: f.id },
                RESOURCE,
            )?;
        }
        self.reschedule_check(d, vm, k)
    }

    fn on_cloudlet_return(&mut self, r: usize, cl: CloudletId, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let req = &mut self.requests[r];
        let task = req.tasks.get_mut(&cl).expect("task exists");
        if task.done {
            return Ok(());
        }
        task.done = true;
        req.remaining -= 1;
        if req.remaining > 0 {
            return self.dispatch_ready(r, now, k);
        }
        self.complete(r, now, k)
    }

    fn complete(&mut self, r: usize, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        let b = self.requests[r].broker;
        let broker = self.brokers[b].clone();
        let grants = std::mem::take(&mut self.requests[r].grants);
        for g in grants.iter().filter(|g| g.state == GrantState::Ready) {
            let mut bill = Cents::ZERO;
            let mut hours = 0;
            for &vm in &g.vms {
                let started = self.dcs[g.serving].vms.get(&vm).map_or(now, |v| v.started);
                bill += compute_bill(started, now, g.price)?;
                hours += billed_hours(started, now)?;
                self.destroy(g.serving, vm, now, k)?;
            }
            let seller = self.dcs[g.seller].name.clone();
            let mut sla = Sla::new(
                broker.clone(),
                seller.clone(),
                self.requests[r].deadline,
                self.requests[r].public.qos.min_mips,
                bill,
                self.requests[r].penalty_rate,
            );
            let penalty = assess_penalty(&mut sla, now, self.requests[r].deadline);
            let outcome = sla.status;
            settle_sla(&mut sla, &mut self.ledger, now)?;
            match outcome {
                SlaStatus::Met => self.broker_stats[b].sla_met += 1,
                _ => self.broker_stats[b].sla_violated += 1,
            }
            self.trace.push(
                now,
                &seller,
                "sla",
                kv![
                    "request" => self.requests[r].name,
                    "consumer" => broker,
                    "status" => if outcome == SlaStatus::Met { "met" } else { "violated" },
                    "agreed_price" => bill.0,
                    "penalty" => penalty.0,
                    "billed_hours" => hours,
                ],
            );
            if let Some(a) = g.agreement {
                let mut rec = PeeringRecord {
                    originator: seller,
                    peer: self.dcs[g.serving].name.clone(),
                    transfer_unit_price: self.agreements[a].transfer_unit_price,
                    billed_hours: hours,
                    settled: false,
                };
                settle_peering(&mut rec, &mut self.ledger, now)?;
            }
        }
        if let Some(start) = self.requests[r].public_start {
            let est = grants
                .iter()
                .filter(|g| g.state == GrantState::Ready)
                .map(|g| g.est_makespan)
                .max()
                .unwrap_or(SimTime::ZERO);
            let realized = now.saturating_sub(start);
            if realized > est {
                self.broker_stats[b].optimism += 1;
                self.trace.push(
                    now,
                    &broker,
                    "optimism_violation",
                    kv![
                        "request" => self.requests[r].name,
                        "estimated_us" => est.micros(),
                        "realized_us" => realized.micros(),
                    ],
                );
            }
        }
        self.requests[r].grants = grants;
        if let Some(p) = self.requests[r].private_dc {
            for vm in std::mem::take(&mut self.requests[r].private_vms) {
                self.destroy(p, vm, now, k)?;
            }
        }
        self.requests[r].status = ReqStatus::Done;
        let stats = &mut self.broker_stats[b];
        stats.completed += 1;
        stats.last_finish = Some(stats.last_finish.map_or(now, |t| t.max(now)));
        let elapsed = now.saturating_sub(self.requests[r].arrival);
        self.trace.push(
            now,
            &broker,
            "request_done",
            kv!["request" => self.requests[r].name, "elapsed_s" => elapsed.as_secs_f64()],
        );
        Ok(())
    }

    fn on_billing_tick(&mut self, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        self.billing = None;
        let mut again = false;
        for d in 0..self.dcs.len() {
            if !self.dcs[d].consolidation {
                continue;
            }
            let before = self.dcs[d].dc.active_hosts();
            let plan = self.dcs[d].dc.consolidate();
            let moves = plan.len();
            for (vm, dst) in plan {
                let m = self.dcs[d].dc.migrate_vm(vm, dst)?;
                if let Some(rt) = self.dcs[d].vms.get_mut(&vm) {
                    rt.exec.set_rate(now, 0.0);
                }
                let names = &self.dcs[d].host_names;
                self.trace.push(
                    now,
                    &self.dcs[d].name,
                    "migration_start",
                    kv![
                        "vm" => vm,
                        "from" => names[&m.from],
                        "to" => names[&m.to],
                        "duration_us" => m.duration.micros(),
                    ],
                );
                self.sync_host(d, m.to, now, k)?;
                self.sync_host(d, m.from, now, k)?;
                k.schedule_at(now + m.duration, dc_entity(d), Msg::MigrationDone { dc: d, vm }, RESOURCE)?;
            }
            for h in self.dcs[d].dc.idle_active_hosts() {
                self.dcs[d].dc.set_active(h, false)?;
                self.sync_host(d, h, now, k)?;
            }
            let after = self.dcs[d].dc.active_hosts();
            self.trace.push(
                now,
                &self.dcs[d].name,
                "consolidate",
                kv!["active_before" => before, "moves" => moves, "active_after" => after],
            );
            again |= after > 0;
        }
        if again {
            self.ensure_billing(k)?;
        }
        Ok(())
    }

    fn on_migration_done(&mut self, d: usize, vm: VmId, now: SimTime, k: &mut Kernel<Msg>) -> Result<(), SimError> {
        if !matches!(self.dcs[d].dc.vm(vm).map(|v| v.state), Some(VmState::Migrating { .. })) {
            return Ok(());
        }
        let (from, to) = self.dcs[d].dc.complete_migration(vm)?;
        let names = &self.dcs[d].host_names;
        self.trace.push(
            now,
            &self.dcs[d].name,
            "migration_done",
            kv!["vm" => vm, "from" => names[&from], "to" => names[&to]],
        );
        self.sync_host(d, from, now, k)?;
        self.sync_host(d, to, now, k)?;
        if self.dcs[d].consolidation && self.dcs[d].dc.table().is_empty_host(from) {
            self.dcs[d].dc.set_active(from, false)?;
            self.sync_host(d, from, now, k)?;
        }
        Ok(())
    }
}

impl crate::kernel::Handler<Msg> for World {
    fn handle(&mut self, event: SimEvent<Msg>, kernel: &mut Kernel<Msg>) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.handle_event(event, kernel) {
            self.error = Some(e);
        }
    }
}

fn instantiate_tasks(app: &AppSpec, owner: u32, next_id: &mut u64, rng: &mut impl Rng) -> (Vec<Cloudlet>, Option<Workflow<CloudletId>>) {
    let mut fresh = |template: &CloudletTemplate| {
        let c = Cloudlet::from_template(CloudletId(*next_id), owner, template);
        *next_id += 1;
        c
    };
    match app {
        AppSpec::Bag(bag) => {
            let mut tasks: Vec<Cloudlet> = bag.tasks.iter().map(&mut fresh).collect();
            if let Some(g) = &bag.generate {
                for _ in 0..g.count {
                    let [lo, hi] = g.length_mi;
                    let length = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                    tasks.push(fresh(&CloudletTemplate {
                        length_mi: length.round(),
                        pes: g.pes,
                        input_mb: 0.0,
                        output_mb: 0.0,
                    }));
                }
            }
            (tasks, None)
        }
        AppSpec::Sweep(s) => {
            let spec = ParamSweepSpec {
                template: s.template.clone(),
                domains: s.domains.clone(),
                length_param: s.length_param.clone(),
            };
            let tasks = expand_param_sweep(&spec, CloudletId(*next_id), owner).unwrap_or_default();
            *next_id += tasks.len() as u64;
            (tasks, None)
        }
        AppSpec::Workflow(w) => {
            let mut ids = BTreeMap::new();
            let tasks: Vec<Cloudlet> = w
                .tasks
                .iter()
                .map(|t| {
                    let c = fresh(&CloudletTemplate {
                        length_mi: t.length_mi,
                        pes: t.pes,
                        input_mb: t.input_mb,
                        output_mb: t.output_mb,
                    });
                    ids.insert(t.id.clone(), c.id);
                    c
                })
                .collect();
            let wf = Workflow::new(tasks.iter().map(|t| t.id), w.edges.iter().map(|(a, b)| (ids[a], ids[b])));
            (tasks, Some(wf))
        }
    }
}

fn build(scenario: &Scenario, seed: u64, k: &mut Kernel<Msg>) -> Result<World, SimError> {
    let issues = scenario.validate();
    if !issues.is_empty() {
        return Err(ScenarioError::Validation(issues).into());
    }
    let mut dcs = Vec::new();
    let mut meter = EnergyMeter::new();
    let dc_index: BTreeMap<&str, usize> = scenario.datacenters.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let broker_index: BTreeMap<&str, usize> = scenario.brokers.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    for (d, spec) in scenario.datacenters.iter().enumerate() {
        k.register(spec.id.clone());
        let mut host_names = BTreeMap::new();
        let hosts: Vec<Host> = spec
            .hosts
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let mut host = Host::new(i as u32 + 1, h.pes, h.mips_per_pe, h.ram_mb, h.bw_mbps);
                host.storage_gb = h.storage_gb;
                host.voltage_levels = spec.voltage_levels.clone();
                host.level = host.full_speed_level();
                host.power = spec.power;
                host.active = h.active;
                host_names.insert(host.id, h.id.clone());
                host
            })
            .collect();
        let mut dc = Datacenter::new(
            d as u32,
            spec.id.clone(),
            spec.region.clone(),
            hosts,
            Cents(spec.price_per_vm_hour as i64),
        )?;
        dc.dvfs = spec.dvfs;
        let mut seen_hosts = BTreeMap::new();
        for h in dc.hosts() {
            let name = &host_names[&h.id];
            meter.register(name);
            meter.set_power(name, SimTime::ZERO, h.watts());
            seen_hosts.insert(h.id, (h.active, h.level));
        }
        dcs.push(DcRt {
            dc,
            name: spec.id.clone(),
            placement: spec.placement,
            consolidation: spec.consolidation,
            private_owner: spec.owner.as_ref().map(|o| broker_index[o.as_str()]),
            policy: spec.policy,
            host_names,
            vms: BTreeMap::new(),
            rejected: 0,
            seen_hosts,
            seen_allocs: BTreeMap::new(),
        });
    }
    let broker_entities: Vec<EntityId> = scenario.brokers.iter().map(|b| k.register(b.id.clone())).collect();
    k.register(EXCHANGE);

    let mut ledger = Ledger::new();
    for d in &scenario.datacenters {
        ledger.open_account(d.id.clone(), Cents(d.initial_balance))?;
    }
    for b in &scenario.brokers {
        ledger.open_account(b.id.clone(), Cents(b.initial_balance))?;
    }
    ledger.open_account(EXCHANGE, Cents::ZERO)?;

    let agreements: Vec<PeeringAgreement> = if scenario.federation.enabled {
        scenario
            .federation
            .agreements
            .iter()
            .map(|a| PeeringAgreement {
                local: dc_index[a.local.as_str()] as u32,
                peer: dc_index[a.peer.as_str()] as u32,
                transfer_unit_price: a.transfer_unit_price,
                quota: a.quota,
                latency: a.latency_s,
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut requests = Vec::new();
    let mut next_cloudlet = 0u64;
    let mut arrivals = Vec::new();
    for (b, spec) in scenario.brokers.iter().enumerate() {
        let mut rng = crate::kernel::entity_stream(seed, broker_entities[b]);
        let private_dc = dcs.iter().position(|d| d.private_owner == Some(b));
        for rs in &spec.requests {
            let jitter = if rs.arrival_jitter_s > SimTime::ZERO {
                SimTime::from_micros(rng.gen_range(0..=rs.arrival_jitter_s.micros()))
            } else {
                SimTime::ZERO
            };
            let arrival = rs.arrival_s.saturating_add(jitter);
            let (tasks, workflow) = instantiate_tasks(&rs.app, b as u32, &mut next_cloudlet, &mut rng);
            let class = scenario.vm_classes.iter().position(|c| c.id == rs.vm_class).expect("validated");
            let deadline = arrival.saturating_add(rs.qos.deadline_s);
            let app = match rs.app {
                AppSpec::Bag(_) => AppKind::Bag,
                AppSpec::Sweep(_) => AppKind::Sweep,
                AppSpec::Workflow(_) => AppKind::Workflow,
            };
            let public = ServiceRequest {
                id: requests.len() as u64,
                broker: b as u32,
                app,
                tasks: tasks.clone(),
                qos: QosRequirement {
                    deadline,
                    budget: rs.qos.budget,
                    min_mips: rs.qos.min_mips,
                },
                vm_class: rs.vm_class.clone(),
                quantity: rs.quantity,
                vm_pes: scenario.vm_classes[class].pes,
                max_unit_price: Price::from_cents(rs.max_unit_price),
            };
            let remaining = tasks.len();
            requests.push(ReqRt {
                broker: b,
                name: format!("{}/{}", spec.id, rs.id),
                class,
                app,
                arrival,
                deadline,
                penalty_rate: rs.penalty_rate,
                public,
                tasks: tasks
                    .into_iter()
                    .map(|c| {
                        (
                            c.id,
                            TaskRt {
                                cloudlet: c,
                                dispatched: false,
                                done: false,
                            },
                        )
                    })
                    .collect(),
                workflow,
                status: ReqStatus::Scheduled,
                bid: None,
                grants: Vec::new(),
                private_dc,
                private_vms: Vec::new(),
                wf_vms: Vec::new(),
                busy_until: BTreeMap::new(),
                public_start: None,
                remaining,
            });
            arrivals.push((arrival, broker_entities[b], requests.len() - 1));
        }
    }
    for (at, target, request) in arrivals {
        k.schedule_at(at, target, Msg::Arrival { request }, RESOURCE)?;
    }

    let classes: Vec<String> = scenario.vm_classes.iter().map(|c| c.id.clone()).collect();
    let mut world = World {
        scenario: scenario.clone(),
        dcs,
        brokers: scenario.brokers.iter().map(|b| b.id.clone()).collect(),
        broker_stats: scenario.brokers.iter().map(|_| BrokerStats::default()).collect(),
        requests,
        agreements,
        book: OrderBook::new(classes),
        ask_sources: BTreeMap::new(),
        ledger,
        journal_cursor: 0,
        meter,
        trace: Trace::new(),
        tick: None,
        billing: None,
        next_vm: 1,
        trades: 0,
        traded_vms: 0,
        traded_value_mc: 0,
        offloaded: 0,
        declined: 0,
        error: None,
    };
    if world.dcs.iter().any(|d| d.consolidation && d.dc.active_hosts() > 0) {
        world.ensure_billing(k)?;
    }
    Ok(world)
}

impl World {
    fn summary(&self, replication: u32, seed: u64, horizon: SimTime) -> SummaryReport {
        let mut s = SummaryReport {
            replication,
            seed,
            horizon_s: horizon.as_secs_f64(),
            ..Default::default()
        };
        for (b, name) in self.brokers.iter().enumerate() {
            let st = &self.broker_stats[b];
            let makespan = match (st.first_arrival, st.last_finish) {
                (Some(a), Some(f)) => f.saturating_sub(a).as_secs_f64(),
                _ => 0.0,
            };
            s.brokers.insert(
                name.clone(),
                BrokerSummary {
                    makespan_s: makespan,
                    total_cost: 0,
                    sla_met: st.sla_met,
                    sla_violated: st.sla_violated,
                    completed: st.completed,
                    rejected: st.rejected,
                    optimism_violations: st.optimism,
                },
            );
        }
        let host_dc: BTreeMap<String, String> = self
            .dcs
            .iter()
            .flat_map(|d| d.host_names.values().map(move |h| (h.clone(), d.name.clone())))
            .collect();
        s.energy = self.meter.report(horizon, |h| host_dc[h].clone());
        for d in &self.dcs {
            s.providers.insert(
                d.name.clone(),
                ProviderSummary {
                    energy_j: s.energy.per_datacenter.get(&d.name).copied().unwrap_or(0.0),
                    rejected_requests: d.rejected,
                    active_hosts_end: d.dc.active_hosts() as u32,
                    ..Default::default()
                },
            );
        }
        s.market.trade_count = self.trades;
        s.market.traded_vms = self.traded_vms;
        s.market.mean_price = if self.traded_vms > 0 {
            self.traded_value_mc as f64 / self.traded_vms as f64 / 1000.0
        } else {
            0.0
        };
        s.federation.offloaded = self.offloaded;
        s.federation.declined = self.declined;
        s.absorb_journal(&self.ledger);
        s
    }
}

/// Runs one replication with `seed` to the scenario horizon.
pub fn run_replication(scenario: &Scenario, replication: u32, seed: u64) -> Result<RunOutput, SimError> {
    let mut kernel: Kernel<Msg> = Kernel::new(seed);
    let mut world = build(scenario, seed, &mut kernel)?;
    let horizon = scenario.run.horizon_s;
    while kernel.peek_time().is_some_and(|t| t <= horizon) {
        kernel.step(&mut world);
        if let Some(e) = world.error.take() {
            return Err(e);
        }
        if world.ledger.total() != world.ledger.opening_total() {
            return Err(SimError::Internal("ledger is no longer zero-sum".into()));
        }
    }
    kernel.run_until(horizon, &mut world)?;
    let summary = world.summary(replication, seed, horizon);
    Ok(RunOutput {
        trace: world.trace,
        summary,
        ledger: world.ledger,
    })
}

/// Seed used by replication `r`.
pub fn replication_seed(base: u64, r: u32) -> u64 {
    base.wrapping_add(r as u64)
}
