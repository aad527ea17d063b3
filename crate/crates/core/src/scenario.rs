//! Scenario files: a versioned JSON document describing datacenters, VM
//! classes, brokers with their requests, market settings, peering and run
//! parameters.
//!
//! Money is integer cents, durations are decimal seconds. Unknown keys are
//! rejected. Validation reports every problem it finds, not only the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{validate_levels, PowerModel, VoltageLevel};
use crate::federation::CoordinatorPolicy;
use crate::infrastructure::{PlacementPolicy, SchedulerMode};
use crate::kernel::{secs, SimTime};
use crate::workload::{validate_dag, CloudletTemplate, DagCheck, ParamValue, Workflow};

pub const FORMAT_VERSION: u32 = 1;

/// Entity name reserved for the exchange in traces and the ledger.
pub const EXCHANGE: &str = "exchange";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: u32,
    pub datacenters: Vec<DatacenterSpec>,
    pub vm_classes: Vec<VmClassSpec>,
    pub brokers: Vec<BrokerSpec>,
    #[serde(default)]
    pub market: MarketSpec,
    #[serde(default)]
    pub federation: FederationSpec,
    pub run: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatacenterSpec {
    pub id: String,
    pub region: String,
    /// Cents per VM-hour.
    pub price_per_vm_hour: u64,
    #[serde(default = "first_fit")]
    pub placement: PlacementPolicy,
    #[serde(default)]
    pub dvfs: bool,
    #[serde(default)]
    pub consolidation: bool,
    /// Broker that owns this datacenter privately. Private datacenters do
    /// not publish asks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default)]
    pub initial_balance: i64,
    #[serde(default)]
    pub policy: CoordinatorPolicy,
    pub power: PowerModel,
    #[serde(default = "full_speed_only")]
    pub voltage_levels: Vec<VoltageLevel>,
    pub hosts: Vec<HostSpec>,
}

fn first_fit() -> PlacementPolicy {
    PlacementPolicy::FirstFit
}

fn full_speed_only() -> Vec<VoltageLevel> {
    vec![VoltageLevel::full()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub id: String,
    pub pes: u32,
    pub mips_per_pe: f64,
    pub ram_mb: u64,
    #[serde(default)]
    pub storage_gb: u64,
    pub bw_mbps: u64,
    /// Powered on before any VM arrives.
    #[serde(default)]
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmClassSpec {
    pub id: String,
    pub pes: u32,
    /// MIPS demanded per PE.
    pub mips: f64,
    pub ram_mb: u64,
    #[serde(default = "time_shared")]
    pub scheduler: SchedulerMode,
}

fn time_shared() -> SchedulerMode {
    SchedulerMode::TimeShared
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerSpec {
    pub id: String,
    /// Only asks from this region are considered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default)]
    pub initial_balance: i64,
    pub requests: Vec<RequestSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub id: String,
    #[serde(with = "secs")]
    pub arrival_s: SimTime,
    /// Uniform extra delay in `[0, jitter]` drawn from the broker's stream.
    #[serde(with = "secs", default = "zero")]
    pub arrival_jitter_s: SimTime,
    pub vm_class: String,
    pub quantity: u32,
    /// Cents per VM-hour.
    pub max_unit_price: u64,
    pub qos: QosSpec,
    /// Cents per started second of lateness.
    #[serde(default)]
    pub penalty_rate: u64,
    pub app: AppSpec,
}

fn zero() -> SimTime {
    SimTime::ZERO
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosSpec {
    /// Relative to the request's arrival.
    #[serde(with = "secs")]
    pub deadline_s: SimTime,
    /// Cents.
    pub budget: u64,
    #[serde(default)]
    pub min_mips: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppSpec {
    Bag(BagSpec),
    Sweep(SweepSpec),
    Workflow(WorkflowSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<CloudletTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSpec>,
}

/// `count` tasks with lengths drawn uniformly from `length_mi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub count: u32,
    pub length_mi: [f64; 2],
    #[serde(default = "one")]
    pub pes: u32,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub template: CloudletTemplate,
    pub domains: BTreeMap<String, Vec<ParamValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_param: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub tasks: Vec<WorkflowTaskSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowTaskSpec {
    pub id: String,
    pub length_mi: f64,
    #[serde(default = "one")]
    pub pes: u32,
    #[serde(default)]
    pub input_mb: f64,
    #[serde(default)]
    pub output_mb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Commodity,
    Auction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    #[serde(with = "secs", default = "sixty")]
    pub tick_s: SimTime,
    #[serde(default = "commodity")]
    pub mechanism: Mechanism,
    #[serde(with = "secs", default = "five_minutes")]
    pub billing_tick_s: SimTime,
    /// Delay per MB of cloudlet input or output.
    #[serde(with = "secs", default = "zero")]
    pub transfer_s_per_mb: SimTime,
}

fn sixty() -> SimTime {
    SimTime::from_secs(60)
}

fn five_minutes() -> SimTime {
    SimTime::from_secs(300)
}

fn commodity() -> Mechanism {
    Mechanism::Commodity
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            tick_s: sixty(),
            mechanism: Mechanism::Commodity,
            billing_tick_s: five_minutes(),
            transfer_s_per_mb: SimTime::ZERO,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub agreements: Vec<AgreementSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementSpec {
    pub local: String,
    pub peer: String,
    /// Cents per VM-hour.
    pub transfer_unit_price: u64,
    /// VM-hours.
    pub quota: u64,
    #[serde(with = "secs", default = "zero")]
    pub latency_s: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub seed: u64,
    #[serde(with = "secs")]
    pub horizon_s: SimTime,
    #[serde(default = "one")]
    pub replications: u32,
}

/// One validation problem, located by a dotted path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", render(.0))]
    Validation(Vec<Issue>),
}

fn render(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ScenarioError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ScenarioError::Validation(v) => v,
            ScenarioError::Parse(_) => &[],
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let issues = scenario.validate();
    if issues.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Validation(issues))
    }
}

pub fn emit_scenario(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serializes")
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

#[derive(Default)]
struct Checker {
    issues: Vec<Issue>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: &str, message: impl Into<String>) {
        if !ok {
            self.push(path, message);
        }
    }

    fn id(&mut self, path: &str, id: &str, seen: &mut BTreeSet<String>, what: &str) {
        if !valid_id(id) {
            self.push(path, format!("{what} id `{id}` must match [A-Za-z0-9_.-]+"));
        }
        if !seen.insert(id.to_string()) {
            self.push(path, format!("duplicate {what} id `{id}`"));
        }
    }
}

impl Scenario {
    /// Every problem with the scenario; empty when valid.
    pub fn validate(&self) -> Vec<Issue> {
        let mut c = Checker::default();
        c.check(
            self.format == FORMAT_VERSION,
            "format",
            format!("unsupported format {}, expected {FORMAT_VERSION}", self.format),
        );
        c.check(!self.datacenters.is_empty(), "datacenters", "at least one datacenter is required");

        // datacenters, brokers and hosts share one namespace with the exchange
        let mut dc_ids = BTreeSet::new();
        let broker_ids: BTreeSet<&str> = self.brokers.iter().map(|b| b.id.as_str()).collect();
        for (i, dc) in self.datacenters.iter().enumerate() {
            let p = format!("datacenters[{i}]");
            c.id(&p, &dc.id, &mut dc_ids, "datacenter");
            if dc.id == EXCHANGE {
                c.push(&p, format!("id `{EXCHANGE}` is reserved"));
            }
            c.check(!dc.hosts.is_empty(), &p, "datacenter has no hosts");
            if let Err(e) = validate_levels(&dc.voltage_levels) {
                c.push(format!("{p}.voltage_levels"), e.to_string());
            }
            if let Err(e) = dc.power.validate() {
                c.push(format!("{p}.power"), e.to_string());
            }
            if let Err(e) = dc.policy.validate() {
                c.push(format!("{p}.policy"), e.to_string());
            }
            if let Some(owner) = &dc.owner {
                c.check(
                    broker_ids.contains(owner.as_str()),
                    &format!("{p}.owner"),
                    format!("unknown broker `{owner}`"),
                );
            }
        }
        let mut host_ids = BTreeSet::new();
        for (i, dc) in self.datacenters.iter().enumerate() {
            for (j, h) in dc.hosts.iter().enumerate() {
                let p = format!("datacenters[{i}].hosts[{j}]");
                c.id(&p, &h.id, &mut host_ids, "host");
                if dc_ids.contains(&h.id) || broker_ids.contains(h.id.as_str()) || h.id == EXCHANGE {
                    c.push(&p, format!("id `{}` is already used by another entity", h.id));
                }
                c.check(h.pes >= 1, &p, "pes must be at least 1");
                c.check(h.mips_per_pe > 0.0 && h.mips_per_pe.is_finite(), &p, "mips_per_pe must be positive");
                c.check(h.bw_mbps >= 1, &p, "bw_mbps must be positive");
            }
        }

        let mut classes = BTreeSet::new();
        for (i, vc) in self.vm_classes.iter().enumerate() {
            let p = format!("vm_classes[{i}]");
            c.id(&p, &vc.id, &mut classes, "vm class");
            c.check(vc.pes >= 1, &p, "pes must be at least 1");
            c.check(vc.mips > 0.0 && vc.mips.is_finite(), &p, "mips must be positive");
        }

        let mut seen_brokers = BTreeSet::new();
        for (i, b) in self.brokers.iter().enumerate() {
            let p = format!("brokers[{i}]");
            c.id(&p, &b.id, &mut seen_brokers, "broker");
            if dc_ids.contains(&b.id) || b.id == EXCHANGE {
                c.push(&p, format!("id `{}` is already used by another entity", b.id));
            }
            let mut requests = BTreeSet::new();
            for (j, r) in b.requests.iter().enumerate() {
                let p = format!("{p}.requests[{j}]");
                c.id(&p, &r.id, &mut requests, "request");
                c.check(classes.contains(&r.vm_class), &p, format!("unknown vm_class `{}`", r.vm_class));
                c.check(r.quantity >= 1, &p, "quantity must be at least 1");
                c.check(
                    r.qos.min_mips >= 0.0 && r.qos.min_mips.is_finite(),
                    &format!("{p}.qos"),
                    "min_mips must be non-negative",
                );
                check_app(&mut c, &format!("{p}.app"), &r.app);
            }
        }

        let m = &self.market;
        c.check(m.tick_s > SimTime::ZERO, "market.tick_s", "must be positive");
        c.check(m.billing_tick_s > SimTime::ZERO, "market.billing_tick_s", "must be positive");

        let mut pairs = BTreeSet::new();
        for (i, a) in self.federation.agreements.iter().enumerate() {
            let p = format!("federation.agreements[{i}]");
            for side in [&a.local, &a.peer] {
                c.check(dc_ids.contains(side), &p, format!("unknown datacenter `{side}`"));
            }
            c.check(a.local != a.peer, &p, "an agreement needs two distinct datacenters");
            c.check(
                pairs.insert((a.local.clone(), a.peer.clone())),
                &p,
                format!("duplicate agreement {} -> {}", a.local, a.peer),
            );
        }

        c.check(self.run.horizon_s > SimTime::ZERO, "run.horizon_s", "must be positive");
        c.check(self.run.replications >= 1, "run.replications", "must be at least 1");
        c.issues
    }

    pub fn vm_class(&self, id: &str) -> Option<&VmClassSpec> {
        self.vm_classes.iter().find(|v| v.id == id)
    }
}

fn check_template(c: &mut Checker, path: &str, length: f64, pes: u32) {
    c.check(length >= 0.0 && length.is_finite(), path, "length_mi must be non-negative");
    c.check(pes >= 1, path, "pes must be at least 1");
}

fn check_app(c: &mut Checker, path: &str, app: &AppSpec) {
    match app {
        AppSpec::Bag(bag) => {
            c.check(
                !bag.tasks.is_empty() || bag.generate.as_ref().is_some_and(|g| g.count > 0),
                path,
                "bag has no tasks",
            );
            for (k, t) in bag.tasks.iter().enumerate() {
                check_template(c, &format!("{path}.tasks[{k}]"), t.length_mi, t.pes);
            }
            if let Some(g) = &bag.generate {
                let [lo, hi] = g.length_mi;
                c.check(
                    lo >= 0.0 && lo <= hi && hi.is_finite(),
                    &format!("{path}.generate"),
                    "length_mi must be a range [min, max] with 0 <= min <= max",
                );
                c.check(g.pes >= 1, &format!("{path}.generate"), "pes must be at least 1");
            }
        }
        AppSpec::Sweep(s) => {
            check_template(c, &format!("{path}.template"), s.template.length_mi, s.template.pes);
            c.check(!s.domains.is_empty(), path, "sweep has no domains");
            for (name, values) in &s.domains {
                c.check(!values.is_empty(), path, format!("domain `{name}` has no values"));
            }
            if let Some(lp) = &s.length_param {
                match s.domains.get(lp) {
                    None => c.push(path, format!("length_param `{lp}` is not a domain")),
                    Some(values) => c.check(
                        values.iter().all(|v| matches!(v, ParamValue::Number(n) if *n >= 0.0)),
                        path,
                        format!("length_param `{lp}` must take non-negative numbers"),
                    ),
                }
            }
        }
        AppSpec::Workflow(w) => {
            c.check(!w.tasks.is_empty(), path, "workflow has no tasks");
            let mut ids = BTreeSet::new();
            for (k, t) in w.tasks.iter().enumerate() {
                let p = format!("{path}.tasks[{k}]");
                c.id(&p, &t.id, &mut ids, "task");
                check_template(c, &p, t.length_mi, t.pes);
            }
            let wf = Workflow::new(w.tasks.iter().map(|t| t.id.clone()), w.edges.iter().cloned());
            match validate_dag(&wf) {
                DagCheck::Ok => {}
                DagCheck::Cycle(cycle) => c.push(path, format!("workflow has a cycle through {}", cycle.join(" -> "))),
                DagCheck::DanglingEdge(a, b) => c.push(path, format!("edge {a} -> {b} names an unknown task")),
            }
        }
    }
}
