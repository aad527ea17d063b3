//! Cloudlets and the application models built from them: bags of tasks,
//! parameter sweeps and workflow DAGs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{SimTime, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CloudletId(pub u64);

impl fmt::Display for CloudletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudletState {
    Created,
    Queued,
    Running,
    Done,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("parameter domain `{0}` has no values")]
    EmptyDomain(String),
    #[error("parameter sweep has no domains")]
    NoDomains,
    #[error("allocated rate must be positive")]
    ZeroRate,
    #[error("cloudlet {id} cannot move from {from:?} to {to:?}")]
    BackwardTransition {
        id: CloudletId,
        from: CloudletState,
        to: CloudletState,
    },
}

/// Shape of a cloudlet before it gets an id and an owner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudletTemplate {
    pub length_mi: f64,
    #[serde(default = "one")]
    pub pes: u32,
    #[serde(default)]
    pub input_mb: f64,
    #[serde(default)]
    pub output_mb: f64,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cloudlet {
    pub id: CloudletId,
    pub length_mi: f64,
    pub pes: u32,
    pub input_mb: f64,
    pub output_mb: f64,
    pub owner: u32,
    pub state: CloudletState,
    /// Parameter binding for sweep members, empty otherwise.
    pub params: Vec<(String, ParamValue)>,
}

impl Cloudlet {
    pub fn from_template(id: CloudletId, owner: u32, template: &CloudletTemplate) -> Self {
        Self {
            id,
            length_mi: template.length_mi,
            pes: template.pes,
            input_mb: template.input_mb,
            output_mb: template.output_mb,
            owner,
            state: CloudletState::Created,
            params: Vec::new(),
        }
    }

    pub fn advance(&mut self, to: CloudletState) -> Result<(), WorkloadError> {
        if to < self.state {
            return Err(WorkloadError::BackwardTransition {
                id: self.id,
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }
}

/// A sweep parameter value: a number or a label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(n) => write!(f, "{n}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSweepSpec {
    pub template: CloudletTemplate,
    /// Parameter name → values, iterated in name order.
    pub domains: BTreeMap<String, Vec<ParamValue>>,
    /// Numeric parameter whose value replaces the template length.
    pub length_param: Option<String>,
}

/// One cloudlet per element of the cross product, last domain varying fastest.
pub fn expand_param_sweep(spec: &ParamSweepSpec, first_id: CloudletId, owner: u32) -> Result<Vec<Cloudlet>, WorkloadError> {
    if spec.domains.is_empty() {
        return Err(WorkloadError::NoDomains);
    }
    if let Some((name, _)) = spec.domains.iter().find(|(_, v)| v.is_empty()) {
        return Err(WorkloadError::EmptyDomain(name.clone()));
    }
    let domains: Vec<(&String, &Vec<ParamValue>)> = spec.domains.iter().collect();
    let total: usize = domains.iter().map(|(_, v)| v.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut index = vec![0usize; domains.len()];
    for n in 0..total {
        let mut cloudlet = Cloudlet::from_template(CloudletId(first_id.0 + n as u64), owner, &spec.template);
        cloudlet.params = domains
            .iter()
            .zip(&index)
            .map(|((name, values), &i)| ((*name).clone(), values[i].clone()))
            .collect();
        if let Some(param) = &spec.length_param {
            if let Some((_, ParamValue::Number(len))) = cloudlet.params.iter().find(|(k, _)| k == param) {
                cloudlet.length_mi = *len;
            }
        }
        out.push(cloudlet);
        // odometer increment, rightmost fastest
        for d in (0..domains.len()).rev() {
            index[d] += 1;
            if index[d] < domains[d].1.len() {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(out)
}

/// Dependency graph over task identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Workflow<N: Ord> {
    pub nodes: BTreeSet<N>,
    pub edges: BTreeSet<(N, N)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DagCheck<N> {
    Ok,
    /// Nodes left after peeling every zero-indegree node; each lies on or
    /// downstream of a cycle, and the first listed lies on one.
    Cycle(Vec<N>),
    DanglingEdge(N, N),
}

impl<N: Ord + Clone> Workflow<N> {
    pub fn new(nodes: impl IntoIterator<Item = N>, edges: impl IntoIterator<Item = (N, N)>) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            edges: edges.into_iter().collect(),
        }
    }

    pub fn predecessors<'a>(&'a self, node: &'a N) -> impl Iterator<Item = &'a N> + 'a {
        self.edges.iter().filter(move |(_, to)| to == node).map(|(from, _)| from)
    }
}

pub fn validate_dag<N: Ord + Clone>(wf: &Workflow<N>) -> DagCheck<N> {
    for (from, to) in &wf.edges {
        if !wf.nodes.contains(from) || !wf.nodes.contains(to) {
            return DagCheck::DanglingEdge(from.clone(), to.clone());
        }
    }
    let mut indegree: BTreeMap<&N, usize> = wf.nodes.iter().map(|n| (n, 0)).collect();
    for (_, to) in &wf.edges {
        *indegree.get_mut(to).unwrap() += 1;
    }
    let mut ready: VecDeque<&N> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut removed = 0;
    while let Some(n) = ready.pop_front() {
        removed += 1;
        for (_, to) in wf.edges.iter().filter(|(from, _)| from == n) {
            let d = indegree.get_mut(to).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push_back(to);
            }
        }
    }
    if removed == wf.nodes.len() {
        return DagCheck::Ok;
    }
    // Walk predecessors inside the residual graph until a node repeats.
    let residual: BTreeSet<&N> = indegree.iter().filter(|(_, d)| **d > 0).map(|(n, _)| *n).collect();
    let mut current = *residual.iter().next().unwrap();
    let mut seen = Vec::new();
    while !seen.contains(&current) {
        seen.push(current);
        current = wf
            .edges
            .iter()
            .find(|(from, to)| to == current && residual.contains(from))
            .map(|(from, _)| from)
            .expect("residual node has a residual predecessor");
    }
    let mut report = vec![current.clone()];
    report.extend(residual.into_iter().filter(|n| *n != current).cloned());
    DagCheck::Cycle(report)
}

/// Nodes not yet done whose predecessors are all done.
pub fn ready_tasks<N: Ord + Clone>(wf: &Workflow<N>, done: &BTreeSet<N>) -> BTreeSet<N> {
    wf.nodes
        .iter()
        .filter(|n| !done.contains(*n))
        .filter(|n| wf.predecessors(n).all(|p| done.contains(p)))
        .cloned()
        .collect()
}

/// Microseconds needed to execute `length_mi` at `mips`, rounded up.
///
/// Integral inputs are handled with exact integer arithmetic; otherwise the
/// floating-point quotient is snapped to the nearest microsecond when it lies
/// within relative 1e-12 of it, so that representation error never adds a
/// spurious microsecond.
pub fn ceil_micros(length_mi: f64, mips: f64) -> Result<u64, WorkloadError> {
    if mips.is_nan() || mips <= 0.0 {
        return Err(WorkloadError::ZeroRate);
    }
    if length_mi <= 0.0 {
        return Ok(0);
    }
    const EXACT_LIMIT: f64 = (1u64 << 53) as f64;
    if length_mi.fract() == 0.0 && mips.fract() == 0.0 && length_mi < EXACT_LIMIT && mips < EXACT_LIMIT {
        let num = length_mi as u128 * MICROS_PER_SEC as u128;
        let den = mips as u128;
        return Ok(num.div_ceil(den).min(u64::MAX as u128) as u64);
    }
    let exact = length_mi / mips * MICROS_PER_SEC as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() <= 1e-12 * nearest.max(1.0) {
        Ok(nearest as u64)
    } else {
        Ok(exact.ceil() as u64)
    }
}

pub fn finish_time_estimate(length_mi: f64, alloc_mips: f64, start: SimTime) -> Result<SimTime, WorkloadError> {
    Ok(start + SimTime::from_micros(ceil_micros(length_mi, alloc_mips)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(domains: &[(&str, Vec<ParamValue>)]) -> ParamSweepSpec {
        ParamSweepSpec {
            template: CloudletTemplate {
                length_mi: 100.0,
                pes: 1,
                input_mb: 0.0,
                output_mb: 0.0,
            },
            domains: domains.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            length_param: None,
        }
    }

    fn n(x: f64) -> ParamValue {
        ParamValue::Number(x)
    }

    fn t(s: &str) -> ParamValue {
        ParamValue::Text(s.into())
    }

    #[test]
    fn sweep_cross_product_order() {
        let spec = sweep(&[("a", vec![n(1.0), n(2.0), n(3.0)]), ("b", vec![t("x"), t("y")])]);
        let out = expand_param_sweep(&spec, CloudletId(10), 0).unwrap();
        let got: Vec<String> = out.iter().map(|c| format!("{},{}", c.params[0].1, c.params[1].1)).collect();
        assert_eq!(got, ["1,x", "1,y", "2,x", "2,y", "3,x", "3,y"]);
        let ids: Vec<u64> = out.iter().map(|c| c.id.0).collect();
        assert_eq!(ids, (10..16).collect::<Vec<_>>());
    }

    #[test]
    fn sweep_single_value_and_empty_domain() {
        assert_eq!(
            expand_param_sweep(&sweep(&[("a", vec![n(1.0)])]), CloudletId(0), 0).unwrap().len(),
            1
        );
        assert_eq!(
            expand_param_sweep(&sweep(&[("a", vec![n(1.0)]), ("b", vec![])]), CloudletId(0), 0),
            Err(WorkloadError::EmptyDomain("b".into()))
        );
        assert_eq!(expand_param_sweep(&sweep(&[]), CloudletId(0), 0), Err(WorkloadError::NoDomains));
    }

    #[test]
    fn sweep_length_param_sets_length() {
        let mut spec = sweep(&[("len", vec![n(5.0), n(7.0)])]);
        spec.length_param = Some("len".into());
        let lengths: Vec<f64> = expand_param_sweep(&spec, CloudletId(0), 0)
            .unwrap()
            .iter()
            .map(|c| c.length_mi)
            .collect();
        assert_eq!(lengths, [5.0, 7.0]);
    }

    fn diamond() -> Workflow<&'static str> {
        Workflow::new(["A", "B", "C", "D"], [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    }

    #[test]
    fn dag_validation() {
        assert_eq!(validate_dag(&diamond()), DagCheck::Ok);
        match validate_dag(&Workflow::new(["A", "B"], [("A", "B"), ("B", "A")])) {
            DagCheck::Cycle(nodes) => assert!(nodes[0] == "A" || nodes[0] == "B"),
            other => panic!("expected cycle, got {other:?}"),
        }
        assert_eq!(validate_dag(&Workflow::<&str>::default()), DagCheck::Ok);
        assert_eq!(validate_dag(&Workflow::new(["A"], [("A", "Z")])), DagCheck::DanglingEdge("A", "Z"));
    }

    #[test]
    fn cycle_report_names_a_cycle_member() {
        // X feeds the cycle B->C->B but is not on it; D hangs off the cycle.
        let wf = Workflow::new(["X", "B", "C", "D"], [("X", "B"), ("B", "C"), ("C", "B"), ("C", "D")]);
        match validate_dag(&wf) {
            DagCheck::Cycle(nodes) => assert!(nodes[0] == "B" || nodes[0] == "C"),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn ready_sets_on_diamond() {
        let wf = diamond();
        let set = |xs: &[&'static str]| xs.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(ready_tasks(&wf, &set(&[])), set(&["A"]));
        assert_eq!(ready_tasks(&wf, &set(&["A"])), set(&["B", "C"]));
        assert_eq!(ready_tasks(&wf, &set(&["A", "B", "C", "D"])), set(&[]));
    }

    #[test]
    fn finish_time_examples() {
        assert_eq!(finish_time_estimate(1000.0, 1000.0, SimTime::ZERO), Ok(SimTime::from_secs(1)));
        assert_eq!(finish_time_estimate(0.0, 1000.0, SimTime::from_secs(3)), Ok(SimTime::from_secs(3)));
        // 1/3 s = 333_333.33.. µs, rounded up
        assert_eq!(finish_time_estimate(1.0, 3.0, SimTime::ZERO), Ok(SimTime::from_micros(333_334)));
        assert_eq!(finish_time_estimate(1.0, 0.0, SimTime::ZERO), Err(WorkloadError::ZeroRate));
    }

    #[test]
    fn fractional_rates_do_not_gain_a_microsecond() {
        // 0.3 / 0.1 s is exactly 3 s but not in binary floating point
        assert_eq!(ceil_micros(0.3, 0.1), Ok(3_000_000));
        assert_eq!(ceil_micros(1000.0, 500.5), Ok(1_998_002));
    }

    #[test]
    fn cloudlet_states_only_move_forward() {
        let tpl = CloudletTemplate {
            length_mi: 1.0,
            pes: 1,
            input_mb: 0.0,
            output_mb: 0.0,
        };
        let mut c = Cloudlet::from_template(CloudletId(1), 0, &tpl);
        c.advance(CloudletState::Queued).unwrap();
        c.advance(CloudletState::Running).unwrap();
        assert!(c.advance(CloudletState::Queued).is_err());
        c.advance(CloudletState::Done).unwrap();
    }
}
