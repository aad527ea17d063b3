//! Datacenters, hosts and virtual machines.
//!
//! Space-shared VMs hold dedicated PEs. Time-shared VMs draw from the pool of
//! PEs not dedicated to space-shared VMs and split its MIPS max-min fairly.
//! Allocations are recomputed by [`Datacenter::refresh_host`] whenever a VM
//! arrives, leaves or migrates, or the host changes speed.

mod dispatch;
mod executor;
mod sharing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dispatch::{space_shared_dispatch, QueuedWork, Slot};
pub use executor::{Finished, VmExecutor};
pub use sharing::share_mips_max_min;

use crate::energy::{slowest_sufficient_level, PowerModel, VoltageLevel};
use crate::kernel::{SimTime, MICROS_PER_SEC};
use crate::market::Cents;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HostId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VmId(pub u64);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfraError {
    #[error("no host can take vm {0}")]
    NoCapacity(VmId),
    #[error("host {host} cannot take vm {vm}")]
    InfeasibleDestination { vm: VmId, host: HostId },
    #[error("unknown vm {0}")]
    UnknownVm(VmId),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("vm {vm} is {state:?}, expected {expected}")]
    InvalidState { vm: VmId, state: VmState, expected: &'static str },
    #[error("duplicate host id {0}")]
    DuplicateHost(HostId),
    #[error("cloudlet needs {needed} PEs, only {available} available")]
    TooManyPes { needed: u32, available: u32 },
    #[error("execution rate must be positive")]
    ZeroRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    SpaceShared,
    TimeShared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    /// Lowest host id that fits.
    FirstFit,
    /// Host left with the most free RAM after placement, ties to the lowest id.
    BestFitRam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VmState {
    Pending,
    Running,
    Migrating { to: HostId },
    Destroyed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Host {
    pub id: HostId,
    pub pe_count: u32,
    pub mips_per_pe: f64,
    pub ram_mb: u64,
    pub storage_gb: u64,
    pub bw_mbps: u64,
    pub voltage_levels: Vec<VoltageLevel>,
    pub power: PowerModel,
    pub active: bool,
    /// Index into `voltage_levels`.
    pub level: usize,
}

impl Host {
    pub fn new(id: u32, pe_count: u32, mips_per_pe: f64, ram_mb: u64, bw_mbps: u64) -> Self {
        Self {
            id: HostId(id),
            pe_count,
            mips_per_pe,
            ram_mb,
            storage_gb: 0,
            bw_mbps,
            voltage_levels: vec![VoltageLevel::full()],
            power: PowerModel { p_idle: 0.0, p_max: 0.0 },
            active: false,
            level: 0,
        }
    }

    pub fn speed(&self) -> f64 {
        self.voltage_levels[self.level].speed
    }

    pub fn full_speed_level(&self) -> usize {
        self.voltage_levels.len() - 1
    }

    /// MIPS one PE delivers at the current speed.
    pub fn pe_capacity(&self) -> f64 {
        self.mips_per_pe * self.speed()
    }

    pub fn watts(&self) -> f64 {
        if self.active {
            crate::energy::power(&self.power, self.speed()).unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vm {
    pub id: VmId,
    pub owner: u32,
    pub pes: u32,
    /// MIPS demanded per PE.
    pub mips_req: f64,
    pub ram_mb: u64,
    pub scheduler: SchedulerMode,
    pub placed_on: Option<HostId>,
    pub state: VmState,
}

impl Vm {
    pub fn new(id: u64, owner: u32, pes: u32, mips_req: f64, ram_mb: u64, scheduler: SchedulerMode) -> Self {
        Self {
            id: VmId(id),
            owner,
            pes,
            mips_req,
            ram_mb,
            scheduler,
            placed_on: None,
            state: VmState::Pending,
        }
    }
}

/// What one VM holds on one host.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Allocation {
    pub pes: u32,
    /// MIPS granted per PE; zero while only reserved for an incoming migration.
    pub mips_per_pe: f64,
    pub ram_mb: u64,
    pub mode: SchedulerMode,
    /// Per-PE demand, kept to recompute shares.
    pub demand_per_pe: f64,
    pub reserved: bool,
}

impl Allocation {
    fn for_vm(vm: &Vm, reserved: bool) -> Self {
        Self {
            pes: vm.pes,
            mips_per_pe: 0.0,
            ram_mb: vm.ram_mb,
            mode: vm.scheduler,
            demand_per_pe: vm.mips_req,
            reserved,
        }
    }
}

pub type HostAllocations = BTreeMap<VmId, Allocation>;

/// Per-host allocations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AllocationTable {
    hosts: BTreeMap<HostId, HostAllocations>,
}

impl AllocationTable {
    pub fn host(&self, host: HostId) -> impl Iterator<Item = (&VmId, &Allocation)> {
        self.hosts.get(&host).into_iter().flatten()
    }

    pub fn get(&self, host: HostId, vm: VmId) -> Option<&Allocation> {
        self.hosts.get(&host).and_then(|m| m.get(&vm))
    }

    fn entry(&mut self, host: HostId) -> &mut HostAllocations {
        self.hosts.entry(host).or_default()
    }

    fn remove(&mut self, host: HostId, vm: VmId) -> Option<Allocation> {
        self.hosts.get_mut(&host).and_then(|m| m.remove(&vm))
    }

    pub fn ram_used(&self, host: HostId) -> u64 {
        self.host(host).map(|(_, a)| a.ram_mb).sum()
    }

    pub fn is_empty_host(&self, host: HostId) -> bool {
        self.host(host).next().is_none()
    }
}

struct PeUsage {
    ram: u64,
    dedicated: u32,
    widest_shared: u32,
    shared_demand: f64,
}

fn usage<'a>(allocs: impl Iterator<Item = &'a Allocation>) -> PeUsage {
    let mut u = PeUsage {
        ram: 0,
        dedicated: 0,
        widest_shared: 0,
        shared_demand: 0.0,
    };
    for a in allocs {
        u.ram += a.ram_mb;
        match a.mode {
            SchedulerMode::SpaceShared => u.dedicated += a.pes,
            SchedulerMode::TimeShared => {
                u.widest_shared = u.widest_shared.max(a.pes);
                u.shared_demand += a.pes as f64 * a.demand_per_pe;
            }
        }
    }
    u
}

/// RAM and PE feasibility of adding `vm` to a host holding `allocs`.
pub fn fits(host: &Host, allocs: &HostAllocations, vm: &Vm) -> bool {
    let u = usage(allocs.values());
    if u.ram + vm.ram_mb > host.ram_mb {
        return false;
    }
    match vm.scheduler {
        SchedulerMode::SpaceShared => host.pe_count >= u.dedicated + u.widest_shared + vm.pes,
        SchedulerMode::TimeShared => vm.pes + u.dedicated <= host.pe_count,
    }
}

/// [`fits`], and additionally the host's time-shared pool is not
/// oversubscribed at full speed after adding `vm`.
pub fn fits_without_overcommit(host: &Host, allocs: &HostAllocations, vm: &Vm) -> bool {
    if !fits(host, allocs, vm) {
        return false;
    }
    let mut u = usage(allocs.values());
    match vm.scheduler {
        SchedulerMode::SpaceShared => u.dedicated += vm.pes,
        SchedulerMode::TimeShared => u.shared_demand += vm.pes as f64 * vm.mips_req.min(host.mips_per_pe),
    }
    let pool = host.pe_count.saturating_sub(u.dedicated) as f64 * host.mips_per_pe;
    u.shared_demand <= pool + 1e-9
}

/// Fraction of the host's current MIPS capacity that is allocated.
pub fn host_utilization(host: &Host, allocs: &HostAllocations) -> f64 {
    let capacity = host.pe_count as f64 * host.pe_capacity();
    if capacity <= 0.0 {
        return 0.0;
    }
    let used: f64 = allocs.values().map(|a| a.pes as f64 * a.mips_per_pe).sum();
    (used / capacity).clamp(0.0, 1.0)
}

/// Seconds to copy `ram_mb` over a `bw_mbps` link, rounded up to the microsecond.
pub fn migration_duration(ram_mb: u64, bw_mbps: u64) -> SimTime {
    if ram_mb == 0 {
        return SimTime::ZERO;
    }
    if bw_mbps == 0 {
        return SimTime::MAX;
    }
    let micros = (ram_mb as u128 * 8 * MICROS_PER_SEC as u128).div_ceil(bw_mbps as u128);
    SimTime::from_micros(micros.min(u64::MAX as u128) as u64)
}

/// Result of [`Datacenter::refresh_host`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HostRefresh {
    /// Previous and new voltage level when the level changed.
    pub level_change: Option<(usize, usize)>,
    /// VMs whose per-PE share changed, with the new share.
    pub shares: Vec<(VmId, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MigrationStart {
    pub vm: VmId,
    pub from: HostId,
    pub to: HostId,
    pub duration: SimTime,
}

#[derive(Clone, Debug)]
pub struct Datacenter {
    pub id: u32,
    pub name: String,
    pub region: String,
    pub price_per_vm_hour: Cents,
    pub dvfs: bool,
    hosts: Vec<Host>,
    vms: BTreeMap<VmId, Vm>,
    table: AllocationTable,
}

impl Datacenter {
    pub fn new(
        id: u32,
        name: impl Into<String>,
        region: impl Into<String>,
        mut hosts: Vec<Host>,
        price_per_vm_hour: Cents,
    ) -> Result<Self, InfraError> {
        hosts.sort_by_key(|h| h.id);
        if let Some(w) = hosts.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(InfraError::DuplicateHost(w[0].id));
        }
        Ok(Self {
            id,
            name: name.into(),
            region: region.into(),
            price_per_vm_hour,
            dvfs: false,
            hosts,
            vms: BTreeMap::new(),
            table: AllocationTable::default(),
        })
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn host(&self, id: HostId) -> Option<&Host> {
        self.hosts.binary_search_by_key(&id, |h| h.id).ok().map(|i| &self.hosts[i])
    }

    fn host_mut(&mut self, id: HostId) -> Result<&mut Host, InfraError> {
        let i = self
            .hosts
            .binary_search_by_key(&id, |h| h.id)
            .map_err(|_| InfraError::UnknownHost(id))?;
        Ok(&mut self.hosts[i])
    }

    pub fn vm(&self, id: VmId) -> Option<&Vm> {
        self.vms.get(&id)
    }

    pub fn vms(&self) -> impl Iterator<Item = &Vm> {
        self.vms.values()
    }

    pub fn table(&self) -> &AllocationTable {
        &self.table
    }

    pub fn host_allocations(&self, host: HostId) -> HostAllocations {
        self.table.hosts.get(&host).cloned().unwrap_or_default()
    }

    pub fn utilization(&self, host: HostId) -> f64 {
        match self.host(host) {
            Some(h) => host_utilization(h, &self.host_allocations(host)),
            None => 0.0,
        }
    }

    /// Mean utilization over active hosts, 0 when none is active.
    pub fn average_utilization(&self) -> f64 {
        let active: Vec<&Host> = self.hosts.iter().filter(|h| h.active).collect();
        if active.is_empty() {
            return 0.0;
        }
        active.iter().map(|h| self.utilization(h.id)).sum::<f64>() / active.len() as f64
    }

    pub fn active_hosts(&self) -> usize {
        self.hosts.iter().filter(|h| h.active).count()
    }

    fn choose_host(&self, table: &AllocationTable, vm: &Vm, policy: PlacementPolicy) -> Option<HostId> {
        let empty = HostAllocations::new();
        let candidates = self.hosts.iter().filter(|h| fits(h, table.hosts.get(&h.id).unwrap_or(&empty), vm));
        match policy {
            PlacementPolicy::FirstFit => candidates.map(|h| h.id).next(),
            PlacementPolicy::BestFitRam => candidates
                .map(|h| (h.ram_mb - table.ram_used(h.id) - vm.ram_mb, h.id))
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, id)| id),
        }
    }

    /// Host that [`Datacenter::place_vm`] would pick, without placing.
    pub fn probe(&self, vm: &Vm, policy: PlacementPolicy) -> Option<HostId> {
        self.choose_host(&self.table, vm, policy)
    }

    /// How many copies of `vm` could be placed one after another.
    pub fn placeable_count(&self, vm: &Vm, policy: PlacementPolicy, limit: u32) -> u32 {
        let mut table = self.table.clone();
        let mut n = 0;
        while n < limit {
            match self.choose_host(&table, vm, policy) {
                Some(h) => {
                    table.entry(h).insert(VmId(u64::MAX - n as u64), Allocation::for_vm(vm, false));
                    n += 1;
                }
                None => break,
            }
        }
        n
    }

    /// Hypothetical placement of `count` copies of `vm`: the average
    /// utilization over active hosts afterwards, or `None` if some copy does
    /// not fit. Assumes every time-shared VM would get its full demand.
    pub fn trial_place(&self, vm: &Vm, count: u32, policy: PlacementPolicy) -> Option<f64> {
        let mut table = self.table.clone();
        let mut touched: BTreeSet<HostId> = self.hosts.iter().filter(|h| h.active).map(|h| h.id).collect();
        for n in 0..count {
            let h = self.choose_host(&table, vm, policy)?;
            let mut alloc = Allocation::for_vm(vm, false);
            alloc.mips_per_pe = vm.mips_req.min(self.host(h).unwrap().mips_per_pe);
            table.entry(h).insert(VmId(u64::MAX - n as u64), alloc);
            touched.insert(h);
        }
        if touched.is_empty() {
            return Some(0.0);
        }
        let total: f64 = touched
            .iter()
            .map(|&h| {
                let host = self.host(h).unwrap();
                let cap = host.pe_count as f64 * host.mips_per_pe;
                let used: f64 = table.host(h).map(|(_, a)| a.pes as f64 * a.mips_per_pe).sum();
                (used / cap).min(1.0)
            })
            .sum();
        Some(total / touched.len() as f64)
    }

    /// Binds a pending VM to a host chosen by `policy` and activates the host.
    /// Shares are not recomputed; call [`Datacenter::refresh_host`].
    pub fn place_vm(&mut self, mut vm: Vm, policy: PlacementPolicy) -> Result<HostId, InfraError> {
        if vm.state != VmState::Pending {
            return Err(InfraError::InvalidState {
                vm: vm.id,
                state: vm.state,
                expected: "pending",
            });
        }
        let host = self.choose_host(&self.table, &vm, policy).ok_or(InfraError::NoCapacity(vm.id))?;
        self.table.entry(host).insert(vm.id, Allocation::for_vm(&vm, false));
        self.host_mut(host)?.active = true;
        vm.placed_on = Some(host);
        vm.state = VmState::Running;
        self.vms.insert(vm.id, vm);
        Ok(host)
    }

    /// Removes a VM; returns the hosts whose allocations changed.
    pub fn destroy_vm(&mut self, id: VmId) -> Result<Vec<HostId>, InfraError> {
        let vm = self.vms.get_mut(&id).ok_or(InfraError::UnknownVm(id))?;
        let mut touched = Vec::new();
        if let Some(h) = vm.placed_on.take() {
            touched.push(h);
        }
        if let VmState::Migrating { to } = vm.state {
            touched.push(to);
        }
        vm.state = VmState::Destroyed;
        for &h in &touched {
            self.table.remove(h, id);
        }
        self.vms.remove(&id);
        Ok(touched)
    }

    /// Reserves `dst` for a running VM and marks it migrating. The source
    /// keeps its allocation until [`Datacenter::complete_migration`].
    pub fn migrate_vm(&mut self, id: VmId, dst: HostId) -> Result<MigrationStart, InfraError> {
        let vm = self.vms.get(&id).ok_or(InfraError::UnknownVm(id))?;
        if vm.state != VmState::Running {
            return Err(InfraError::InvalidState {
                vm: id,
                state: vm.state,
                expected: "running",
            });
        }
        let src = vm.placed_on.expect("running vm is placed");
        let host = self.host(dst).ok_or(InfraError::UnknownHost(dst))?;
        if dst == src || !fits(host, &self.host_allocations(dst), vm) {
            return Err(InfraError::InfeasibleDestination { vm: id, host: dst });
        }
        let duration = migration_duration(vm.ram_mb, host.bw_mbps);
        let alloc = Allocation::for_vm(vm, true);
        self.table.entry(dst).insert(id, alloc);
        self.host_mut(dst)?.active = true;
        self.vms.get_mut(&id).unwrap().state = VmState::Migrating { to: dst };
        Ok(MigrationStart {
            vm: id,
            from: src,
            to: dst,
            duration,
        })
    }

    /// Releases the source and runs the VM on its destination.
    pub fn complete_migration(&mut self, id: VmId) -> Result<(HostId, HostId), InfraError> {
        let vm = self.vms.get_mut(&id).ok_or(InfraError::UnknownVm(id))?;
        let VmState::Migrating { to } = vm.state else {
            return Err(InfraError::InvalidState {
                vm: id,
                state: vm.state,
                expected: "migrating",
            });
        };
        let from = vm.placed_on.replace(to).expect("migrating vm is placed");
        vm.state = VmState::Running;
        self.table.remove(from, id);
        if let Some(a) = self.table.hosts.get_mut(&to).and_then(|m| m.get_mut(&id)) {
            a.reserved = false;
        }
        Ok((from, to))
    }

    /// Recomputes the voltage level (when DVFS is on) and every VM share on `host`.
    pub fn refresh_host(&mut self, host_id: HostId) -> Result<HostRefresh, InfraError> {
        let dvfs = self.dvfs;
        let allocs = self.table.hosts.entry(host_id).or_default();
        let i = self
            .hosts
            .binary_search_by_key(&host_id, |h| h.id)
            .map_err(|_| InfraError::UnknownHost(host_id))?;
        let host = &mut self.hosts[i];
        let mut refresh = HostRefresh::default();

        let u = usage(allocs.values().filter(|a| !a.reserved));
        if dvfs {
            let full_pe = host.mips_per_pe;
            let pool_pes = host.pe_count.saturating_sub(u.dedicated) as f64;
            let mut need = 0.0f64;
            for a in allocs.values().filter(|a| !a.reserved) {
                need = need.max(a.demand_per_pe / full_pe);
            }
            if pool_pes > 0.0 {
                need = need.max(u.shared_demand / (pool_pes * full_pe));
            }
            let level = slowest_sufficient_level(&host.voltage_levels, need);
            if level != host.level {
                refresh.level_change = Some((host.level, level));
                host.level = level;
            }
        }

        let pe_cap = host.pe_capacity();
        let pool = host.pe_count.saturating_sub(u.dedicated) as f64 * pe_cap;
        let shared: Vec<VmId> = allocs
            .iter()
            .filter(|(_, a)| !a.reserved && a.mode == SchedulerMode::TimeShared)
            .map(|(id, _)| *id)
            .collect();
        let demands: Vec<f64> = shared
            .iter()
            .map(|id| {
                let a = &allocs[id];
                a.pes as f64 * a.demand_per_pe.min(pe_cap)
            })
            .collect();
        let grants = share_mips_max_min(&demands, pool);
        let mut new_shares: BTreeMap<VmId, f64> = shared.iter().zip(grants).map(|(id, g)| (*id, g / allocs[id].pes as f64)).collect();
        for (id, a) in allocs.iter() {
            if a.reserved {
                new_shares.insert(*id, 0.0);
            } else if a.mode == SchedulerMode::SpaceShared {
                new_shares.insert(*id, a.demand_per_pe.min(pe_cap));
            }
        }
        for (id, share) in new_shares {
            let a = allocs.get_mut(&id).unwrap();
            if a.mips_per_pe != share {
                a.mips_per_pe = share;
                refresh.shares.push((id, share));
            }
        }
        Ok(refresh)
    }

    pub fn set_active(&mut self, host: HostId, active: bool) -> Result<(), InfraError> {
        self.host_mut(host)?.active = active;
        Ok(())
    }

    /// Active hosts holding nothing and not receiving a migration.
    pub fn idle_active_hosts(&self) -> Vec<HostId> {
        self.hosts
            .iter()
            .filter(|h| h.active && self.table.is_empty_host(h.id))
            .map(|h| h.id)
            .collect()
    }

    /// First-fit-decreasing consolidation plan.
    ///
    /// Active hosts not involved in a migration are ordered by descending
    /// utilization (then RAM in use, then id). Starting from the least
    /// utilized, a host is emptied when all its VMs, largest RAM first, fit
    /// on hosts ranked above it without oversubscribing them. Hosts that
    /// receive VMs are never emptied in the same plan.
    pub fn consolidate(&self) -> Vec<(VmId, HostId)> {
        let busy: BTreeSet<HostId> = self
            .vms
            .values()
            .filter_map(|vm| match vm.state {
                VmState::Migrating { to } => Some([vm.placed_on.unwrap(), to]),
                _ => None,
            })
            .flatten()
            .collect();
        let mut order: Vec<&Host> = self.hosts.iter().filter(|h| h.active && !busy.contains(&h.id)).collect();
        order.sort_by(|a, b| {
            self.utilization(b.id)
                .total_cmp(&self.utilization(a.id))
                .then(self.table.ram_used(b.id).cmp(&self.table.ram_used(a.id)))
                .then(a.id.cmp(&b.id))
        });

        let mut table = self.table.clone();
        let mut plan = Vec::new();
        let mut emptied: BTreeSet<HostId> = BTreeSet::new();
        let mut receivers: BTreeSet<HostId> = BTreeSet::new();
        for (rank, src) in order.iter().enumerate().rev() {
            if receivers.contains(&src.id) {
                continue;
            }
            let mut vms: Vec<&Vm> = table
                .host(src.id)
                .map(|(id, _)| &self.vms[id])
                .filter(|vm| vm.state == VmState::Running)
                .collect();
            if vms.is_empty() {
                continue;
            }
            vms.sort_by(|a, b| b.ram_mb.cmp(&a.ram_mb).then(a.id.cmp(&b.id)));
            let mut trial = table.clone();
            let mut moves = Vec::new();
            for vm in &vms {
                let dest = order[..rank]
                    .iter()
                    .filter(|h| !emptied.contains(&h.id))
                    .find(|h| fits_without_overcommit(h, trial.hosts.get(&h.id).unwrap_or(&HostAllocations::new()), vm));
                match dest {
                    Some(h) => {
                        let mut alloc = trial.remove(src.id, vm.id).unwrap();
                        alloc.mips_per_pe = vm.mips_req.min(h.mips_per_pe);
                        trial.entry(h.id).insert(vm.id, alloc);
                        moves.push((vm.id, h.id));
                    }
                    None => break,
                }
            }
            if moves.len() == vms.len() {
                table = trial;
                receivers.extend(moves.iter().map(|(_, h)| *h));
                emptied.insert(src.id);
                plan.extend(moves);
            }
        }
        plan
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dc(ram: &[u64]) -> Datacenter {
        let hosts = ram
            .iter()
            .enumerate()
            .map(|(i, &r)| Host::new(i as u32 + 1, 2, 1000.0, r, 1024))
            .collect();
        Datacenter::new(0, "dc", "US", hosts, Cents(10)).unwrap()
    }

    fn vm(id: u64, ram: u64) -> Vm {
        Vm::new(id, 0, 1, 500.0, ram, SchedulerMode::TimeShared)
    }

    #[test]
    fn first_fit_examples() {
        let mut d = dc(&[2048, 4096]);
        assert_eq!(d.place_vm(vm(1, 3000), PlacementPolicy::FirstFit), Ok(HostId(2)));
        let mut d = dc(&[4096, 4096]);
        assert_eq!(d.place_vm(vm(1, 1000), PlacementPolicy::FirstFit), Ok(HostId(1)));
        let mut d = dc(&[4096, 4096]);
        assert_eq!(
            d.place_vm(vm(1, 8192), PlacementPolicy::FirstFit),
            Err(InfraError::NoCapacity(VmId(1)))
        );
    }

    #[test]
    fn best_fit_ram_prefers_most_remaining() {
        let mut d = dc(&[4096, 8192, 8192]);
        assert_eq!(d.place_vm(vm(1, 1000), PlacementPolicy::BestFitRam), Ok(HostId(2)));
        assert_eq!(d.place_vm(vm(2, 1000), PlacementPolicy::BestFitRam), Ok(HostId(3)));
    }

    #[test]
    fn space_shared_never_oversubscribes_pes() {
        let mut d = dc(&[100_000]);
        let ss = |id| Vm::new(id, 0, 1, 1000.0, 10, SchedulerMode::SpaceShared);
        d.place_vm(ss(1), PlacementPolicy::FirstFit).unwrap();
        d.place_vm(ss(2), PlacementPolicy::FirstFit).unwrap();
        assert!(d.place_vm(ss(3), PlacementPolicy::FirstFit).is_err());
        // a time-shared VM also needs a PE outside the dedicated ones
        assert!(d.place_vm(vm(4, 10), PlacementPolicy::FirstFit).is_err());
    }

    #[test]
    fn time_shared_admits_beyond_mips() {
        let mut d = dc(&[100_000]);
        for id in 1..=5 {
            let h = d
                .place_vm(Vm::new(id, 0, 2, 1000.0, 10, SchedulerMode::TimeShared), PlacementPolicy::FirstFit)
                .unwrap();
            d.refresh_host(h).unwrap();
        }
        // 5 VMs x 2 PEs x 1000 demand on 2 PEs x 1000: each gets 400 total, 200 per PE
        for (_, a) in d.table().host(HostId(1)) {
            assert!((a.mips_per_pe - 200.0).abs() < 1e-9);
        }
        assert!((d.utilization(HostId(1)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn utilization_examples() {
        let mut d = dc(&[100_000]);
        assert_eq!(d.utilization(HostId(1)), 0.0);
        let h = d.place_vm(vm(1, 10), PlacementPolicy::FirstFit).unwrap();
        d.refresh_host(h).unwrap();
        // 500 of 2 x 1000
        assert_eq!(d.utilization(HostId(1)), 0.25);
        let h = d
            .place_vm(Vm::new(2, 0, 1, 1500.0, 10, SchedulerMode::TimeShared), PlacementPolicy::FirstFit)
            .unwrap();
        d.refresh_host(h).unwrap();
        // a 1-PE VM cannot use more than one PE worth of MIPS
        assert_eq!(d.utilization(HostId(1)), 0.75);
        let h = d.place_vm(vm(3, 10), PlacementPolicy::FirstFit).unwrap();
        d.refresh_host(h).unwrap();
        assert_eq!(d.utilization(HostId(1)), 1.0);
    }

    #[test]
    fn migration_duration_examples() {
        assert_eq!(migration_duration(1024, 1024), SimTime::from_secs(8));
        assert_eq!(migration_duration(0, 1024), SimTime::ZERO);
    }

    #[test]
    fn migrate_and_complete() {
        let mut d = dc(&[4096, 4096]);
        d.place_vm(vm(1, 1024), PlacementPolicy::FirstFit).unwrap();
        let m = d.migrate_vm(VmId(1), HostId(2)).unwrap();
        assert_eq!(m.duration, SimTime::from_secs(8));
        // both hosts hold the RAM while copying
        assert_eq!(d.table().ram_used(HostId(1)), 1024);
        assert_eq!(d.table().ram_used(HostId(2)), 1024);
        assert_eq!(d.complete_migration(VmId(1)), Ok((HostId(1), HostId(2))));
        assert_eq!(d.table().ram_used(HostId(1)), 0);
        assert_eq!(d.vm(VmId(1)).unwrap().placed_on, Some(HostId(2)));
    }

    #[test]
    fn migrate_to_full_host_fails() {
        let mut d = dc(&[4096, 1000]);
        d.place_vm(vm(1, 2048), PlacementPolicy::FirstFit).unwrap();
        assert_eq!(
            d.migrate_vm(VmId(1), HostId(2)),
            Err(InfraError::InfeasibleDestination {
                vm: VmId(1),
                host: HostId(2)
            })
        );
        assert_eq!(d.vm(VmId(1)).unwrap().state, VmState::Running);
    }

    #[test]
    fn dvfs_slows_lightly_loaded_hosts() {
        let mut h = Host::new(1, 2, 1000.0, 8192, 1000);
        h.voltage_levels = vec![VoltageLevel::new("low", 0.5), VoltageLevel::new("mid", 0.8), VoltageLevel::full()];
        h.level = 2;
        let mut d = Datacenter::new(0, "dc", "US", vec![h], Cents(1)).unwrap();
        d.dvfs = true;
        d.place_vm(vm(1, 10), PlacementPolicy::FirstFit).unwrap();
        let r = d.refresh_host(HostId(1)).unwrap();
        // 500 MIPS demand on a 1000 MIPS PE: half speed suffices
        assert_eq!(r.level_change, Some((2, 0)));
        assert_eq!(d.table().get(HostId(1), VmId(1)).unwrap().mips_per_pe, 500.0);
    }

    #[test]
    fn duplicate_hosts_rejected() {
        let hosts = vec![Host::new(1, 1, 1.0, 1, 1), Host::new(1, 1, 1.0, 1, 1)];
        assert_eq!(
            Datacenter::new(0, "dc", "US", hosts, Cents(1)).unwrap_err(),
            InfraError::DuplicateHost(HostId(1))
        );
    }
}
