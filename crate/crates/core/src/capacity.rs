//! Slot schedules, schedule verification, and exact-rational throughput
//! accounting for many-to-one networks.
//!
//! Throughput here is measured in units of the link rate: a value of `2/3`
//! means the sink collects two thirds of what a single link could carry.
//! All schedule arithmetic uses exact rationals so results like `2/3` are
//! exact, not `0.6666...`.

use std::fmt::Write as _;

use num::rational::Ratio;
use num::Zero;
use thiserror::Error;

use crate::conflict::{aggregate_sir, is_hidden_node_free, max_concurrent_ring, CompatibilityGraph};
use crate::geometry::{violated_inequality, RadioConfig};
use crate::topology::Topology;
use crate::{InterferenceMode, LinkId, NodeId};

/// Exact fraction of a link's capacity.
pub type Frac = Ratio<u64>;

/// A periodic transmission schedule: slot `k` lists the links active during
/// that slot, and the pattern repeats every `slots.len()` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub slots: Vec<Vec<LinkId>>,
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schedule references link {tx} -> {rx} that the topology lacks")]
    UnknownLink { tx: NodeId, rx: NodeId },
    #[error("schedule needs at least one slot")]
    Empty,
    #[error("the topology is not a set of disjoint equal-length chains: {0}")]
    NotChains(String),
    #[error("expected {expected} chains, found {found}")]
    ChainCount { expected: usize, found: usize },
    #[error("chains must be at least {min} hops long, found {found}")]
    TooShort { min: usize, found: usize },
}

impl Schedule {
    pub fn frame_slots(&self) -> usize {
        self.slots.len()
    }

    /// Number of slots in which `link` transmits.
    pub fn slot_count(&self, link: LinkId) -> usize {
        self.slots.iter().filter(|s| s.contains(&link)).count()
    }

    /// Fraction of airtime each link holds, indexed by link id.
    pub fn airtime_shares(&self, topo: &Topology) -> Vec<Frac> {
        let frame = self.frame_slots() as u64;
        (0..topo.links.len())
            .map(|l| Frac::new(self.slot_count(l) as u64, frame))
            .collect()
    }

    /// Serialize as `schedule v1` text: transmissions written `tx->rx`.
    pub fn to_text(&self, topo: &Topology) -> String {
        let mut s = String::new();
        s.push_str("schedule v1\n");
        writeln!(s, "frame {}", self.slots.len()).unwrap();
        for (k, slot) in self.slots.iter().enumerate() {
            let entries: Vec<String> = slot
                .iter()
                .map(|&l| format!("{}->{}", topo.links[l].tx, topo.links[l].rx))
                .collect();
            writeln!(s, "slot {k}: {}", entries.join(", ")).unwrap();
        }
        s
    }

    /// Parse the `schedule v1` text format against a topology's link table.
    pub fn from_text(text: &str, topo: &Topology) -> Result<Schedule, ScheduleError> {
        let err = |line: usize, msg: String| ScheduleError::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "schedule v1")) => {}
            Some((i, other)) => {
                return Err(err(i + 1, format!("expected 'schedule v1' header, got '{other}'")))
            }
            None => return Err(err(1, "empty input".into())),
        }
        let mut slots: Option<Vec<Vec<LinkId>>> = None;
        for (i, raw) in lines {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("frame ") {
                let n: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| err(line_no, format!("bad frame length '{rest}'")))?;
                if n == 0 {
                    return Err(ScheduleError::Empty);
                }
                slots = Some(vec![Vec::new(); n]);
            } else if let Some(rest) = line.strip_prefix("slot ") {
                let slots = slots
                    .as_mut()
                    .ok_or_else(|| err(line_no, "slot line before frame line".into()))?;
                let (idx_str, entries) = rest
                    .split_once(':')
                    .ok_or_else(|| err(line_no, "slot line needs 'slot <k>: ...'".into()))?;
                let k: usize = idx_str
                    .trim()
                    .parse()
                    .map_err(|_| err(line_no, format!("bad slot index '{idx_str}'")))?;
                if k >= slots.len() {
                    return Err(err(line_no, format!("slot index {k} outside frame")));
                }
                for entry in entries.split(',') {
                    let entry = entry.trim();
                    if entry.is_empty() {
                        continue;
                    }
                    let (tx_str, rx_str) = entry
                        .split_once("->")
                        .ok_or_else(|| err(line_no, format!("bad transmission '{entry}'")))?;
                    let tx: NodeId = tx_str
                        .trim()
                        .parse()
                        .map_err(|_| err(line_no, format!("bad transmitter '{tx_str}'")))?;
                    let rx: NodeId = rx_str
                        .trim()
                        .parse()
                        .map_err(|_| err(line_no, format!("bad receiver '{rx_str}'")))?;
                    let link = topo
                        .link_between(tx, rx)
                        .ok_or(ScheduleError::UnknownLink { tx, rx })?;
                    slots[k].push(link);
                }
            } else {
                return Err(err(line_no, format!("unknown record '{line}'")));
            }
        }
        slots.map(|slots| Schedule { slots }).ok_or(ScheduleError::Empty)
    }
}

/// What a schedule check found wrong in one slot.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// Two co-scheduled links fail the pairwise spacing test; `inequality`
    /// is the index of the first failed cross-distance check.
    Incompatible { a: LinkId, b: LinkId, inequality: usize },
    /// Two co-scheduled transmitters are within carrier sense range, so the
    /// MAC would never run them together.
    MutualSensing { a: LinkId, b: LinkId },
    /// A receiver's signal-to-interference ratio falls below the decode
    /// threshold under aggregate interference.
    LowSir { link: LinkId, sir: f64 },
    /// A node transmits and receives (or transmits twice) in the same slot.
    HalfDuplex { node: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub slot: usize,
    pub kind: ViolationKind,
}

/// Check a schedule against the radio configuration. Both modes require
/// co-scheduled transmitters to be mutually out of carrier sense range and
/// every node to act as transmitter or receiver at most once per slot; the
/// mode chooses between pairwise spacing checks and per-receiver aggregate
/// SIR checks on the data transmissions.
pub fn verify_schedule(
    topo: &Topology,
    sched: &Schedule,
    config: &RadioConfig,
    mode: InterferenceMode,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (slot_idx, slot) in sched.slots.iter().enumerate() {
        let mut push = |kind: ViolationKind| out.push(Violation { slot: slot_idx, kind });
        // Half-duplex conflicts: every endpoint appears at most once.
        let mut endpoints: Vec<NodeId> = Vec::new();
        for &l in slot {
            endpoints.push(topo.links[l].tx);
            endpoints.push(topo.links[l].rx);
        }
        endpoints.sort_unstable();
        for w in endpoints.windows(2) {
            if w[0] == w[1] {
                push(ViolationKind::HalfDuplex { node: w[0] });
            }
        }
        for (i, &a) in slot.iter().enumerate() {
            for &b in &slot[i + 1..] {
                let la = &topo.links[a];
                let lb = &topo.links[b];
                let d_tx = topo.positions[la.tx].dist(&topo.positions[lb.tx]);
                if config.within_cs(d_tx) {
                    push(ViolationKind::MutualSensing { a, b });
                }
                if mode == InterferenceMode::Pairwise {
                    if let Some(inequality) = violated_inequality(
                        topo.positions[la.tx],
                        topo.positions[la.rx],
                        topo.positions[lb.tx],
                        topo.positions[lb.rx],
                        config.delta,
                    ) {
                        push(ViolationKind::Incompatible { a, b, inequality });
                    }
                }
            }
        }
        if mode == InterferenceMode::Aggregate {
            for &l in slot {
                let others: Vec<NodeId> = slot
                    .iter()
                    .filter(|&&o| o != l)
                    .map(|&o| topo.links[o].tx)
                    .collect();
                let sir = aggregate_sir(topo, config, l, &others);
                if sir < config.sir_threshold {
                    push(ViolationKind::LowSir { link: l, sir });
                }
            }
        }
    }
    out
}

/// Throughput a schedule sustains when every source injects at the same
/// rate: the bottleneck is the route link with the least airtime per flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleThroughput {
    /// Rate each source sustains, as a fraction of the link rate.
    pub per_source: Frac,
    /// Sum over sources, as a fraction of the link rate.
    pub aggregate: Frac,
}

pub fn schedule_throughput(topo: &Topology, sched: &Schedule) -> ScheduleThroughput {
    let flows = topo.flow_counts();
    let shares = sched.airtime_shares(topo);
    let mut per_source: Option<Frac> = None;
    for (l, &n_flows) in flows.iter().enumerate() {
        if n_flows == 0 {
            continue;
        }
        let rate = shares[l] / Frac::from_integer(n_flows as u64);
        per_source = Some(match per_source {
            Some(r) => r.min(rate),
            None => rate,
        });
    }
    let per_source = per_source.unwrap_or_else(Frac::zero);
    let aggregate = per_source * Frac::from_integer(topo.n_sources() as u64);
    ScheduleThroughput {
        per_source,
        aggregate,
    }
}

/// First-ring airtime plus second-ring airtime discounted by the admissible
/// concurrency `k`. In any feasible schedule this sum cannot exceed one:
/// first-ring slots are exclusive, and each slot carries at most `k`
/// second-ring transmissions.
pub fn ring_airtime_load(topo: &Topology, sched: &Schedule, k: usize) -> Frac {
    assert!(k > 0, "concurrency must be positive");
    let shares = sched.airtime_shares(topo);
    let hops = topo.hop_counts();
    let mut ring1 = Frac::zero();
    let mut ring2 = Frac::zero();
    for (u, h) in hops.iter().enumerate() {
        let Some(link) = topo.route_link_of(u) else { continue };
        match h {
            Some(1) => ring1 += shares[link],
            Some(2) => ring2 += shares[link],
            _ => {}
        }
    }
    ring1 + ring2 / Frac::from_integer(k as u64)
}

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("the configuration leaves hidden-node pairs; the bound assumes none")]
    NotHiddenNodeFree,
    #[error("source {0} is under two hops from the sink")]
    SourceTooClose(NodeId),
    #[error("topology has no sources")]
    NoSources,
    #[error("first-ring link {ring1} and second-ring link {ring2} could run concurrently, breaking the ring-exclusion argument")]
    RingExclusionBroken { ring1: LinkId, ring2: LinkId },
    #[error("chain capacity needs at least two nodes, got {0}")]
    ChainTooShort(usize),
}

/// Upper bound on many-to-one throughput in units of the link rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    /// Most second-ring route links that can transmit at once.
    pub ring2_concurrency: usize,
    /// Throughput cannot exceed `k / (k + 1)` of the link rate.
    pub bound: Frac,
    /// Human-readable statement of what binds.
    pub constraint: String,
}

/// Throughput upper bound for a hidden-node-free many-to-one network whose
/// sources all sit at least two hops out.
///
/// Every packet crosses a first-ring link (serialized by the shared sink)
/// and a second-ring link. First- and second-ring transmissions exclude
/// each other — each second-ring receiver is a first-ring node within guard
/// distance of the sink — so with at most `k` concurrent second-ring links,
/// time splits between a first-ring share `f1` and a second-ring share
/// `f2 = 1 - f1`, and throughput is at most `min(f1, k * f2)`, maximized at
/// `k / (k + 1)`.
pub fn upper_bound(topo: &Topology, config: &RadioConfig) -> Result<CapacityReport, CapacityError> {
    if topo.n_sources() == 0 {
        return Err(CapacityError::NoSources);
    }
    if !is_hidden_node_free(topo, config) {
        return Err(CapacityError::NotHiddenNodeFree);
    }
    let hops = topo.hop_counts();
    for src in topo.sources() {
        if hops[src].map_or(true, |h| h < 2) {
            return Err(CapacityError::SourceTooClose(src));
        }
    }
    // Ring exclusion: a first-ring link and a second-ring link must never
    // usefully overlap, through incompatibility or through mutual sensing.
    let graph = CompatibilityGraph::build(topo, config);
    let ring1_links: Vec<LinkId> = topo
        .ring_nodes(1)
        .into_iter()
        .filter_map(|u| topo.route_link_of(u))
        .collect();
    let ring2_links: Vec<LinkId> = topo
        .ring_nodes(2)
        .into_iter()
        .filter_map(|u| topo.route_link_of(u))
        .collect();
    for &r1 in &ring1_links {
        for &r2 in &ring2_links {
            if graph.compatible(r1, r2) && !graph.tx_senses(r1, r2) {
                return Err(CapacityError::RingExclusionBroken { ring1: r1, ring2: r2 });
            }
        }
    }
    let k = max_concurrent_ring(topo, config, 2);
    let k = k.max(1);
    let bound = Frac::new(k as u64, k as u64 + 1);
    Ok(CapacityReport {
        ring2_concurrency: k,
        bound,
        constraint: format!(
            "sink serializes the first ring; at most {k} second-ring links run concurrently"
        ),
    })
}

/// Exact sustainable throughput of a single chain of `n` nodes that all
/// source traffic toward one end: `n / (3n - 3)` of the link rate, reached
/// by a frame of `3n - 3` slots with spatial reuse every third link.
pub fn chain_capacity(n: usize) -> Result<Frac, CapacityError> {
    if n < 2 {
        return Err(CapacityError::ChainTooShort(n));
    }
    Ok(Frac::new(n as u64, 3 * n as u64 - 3))
}

/// Recover the chains of a pure chain topology: one disjoint path per
/// source, ordered by the angle of each chain's first-ring node around the
/// sink, each returned sink-end first.
fn chain_paths(topo: &Topology, min_hops: usize) -> Result<Vec<Vec<LinkId>>, ScheduleError> {
    let mut chains: Vec<(f64, Vec<LinkId>)> = Vec::new();
    let mut used: Vec<bool> = vec![false; topo.links.len()];
    let mut is_next_hop = vec![false; topo.num_nodes()];
    for u in 0..topo.num_nodes() {
        if let Some(next) = topo.routes[u] {
            is_next_hop[next] = true;
        }
    }
    let outermost: Vec<NodeId> = (0..topo.num_nodes())
        .filter(|&u| u != topo.sink && !is_next_hop[u])
        .collect();
    for tip in outermost {
        let mut path = topo.route_path(tip);
        if path.is_empty() || topo.links[*path.last().unwrap()].rx != topo.sink {
            return Err(ScheduleError::NotChains(format!(
                "node {tip} has no complete route to the sink"
            )));
        }
        path.reverse(); // sink-end first
        for &l in &path {
            if used[l] {
                return Err(ScheduleError::NotChains(
                    "routes merge; chains must be disjoint".into(),
                ));
            }
            used[l] = true;
        }
        let first_hop_tx = topo.links[path[0]].tx;
        let p = topo.positions[first_hop_tx];
        let sink = topo.positions[topo.sink];
        let mut angle = (p.y - sink.y).atan2(p.x - sink.x);
        if angle < 0.0 {
            angle += 2.0 * std::f64::consts::PI;
        }
        chains.push((angle, path));
    }
    if chains.is_empty() {
        return Err(ScheduleError::NotChains("no chains found".into()));
    }
    let hops = chains[0].1.len();
    if chains.iter().any(|(_, p)| p.len() != hops) {
        return Err(ScheduleError::NotChains("chains differ in length".into()));
    }
    if hops < min_hops {
        return Err(ScheduleError::TooShort {
            min: min_hops,
            found: hops,
        });
    }
    chains.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(chains.into_iter().map(|(_, p)| p).collect())
}

/// Three-slot schedule for two chains meeting at the sink: each chain's
/// first-ring link gets its own slot and the deeper links share the third,
/// repeating with period three along each chain.
pub fn two_chain_schedule(topo: &Topology) -> Result<Schedule, ScheduleError> {
    let chains = chain_paths(topo, 2)?;
    if chains.len() != 2 {
        return Err(ScheduleError::ChainCount {
            expected: 2,
            found: chains.len(),
        });
    }
    let patterns = [[0usize, 2, 1], [1, 2, 0]];
    let mut slots: Vec<Vec<LinkId>> = vec![Vec::new(); 3];
    for (c, path) in chains.iter().enumerate() {
        for (h0, &link) in path.iter().enumerate() {
            slots[patterns[c][h0 % 3]].push(link);
        }
    }
    Ok(Schedule { slots })
}

/// Four-slot schedule for three chains meeting at the sink: first-ring
/// links take one slot each, all second-ring links share the fourth, and
/// deeper links rotate through the frame with period four.
pub fn three_chain_schedule(topo: &Topology) -> Result<Schedule, ScheduleError> {
    let chains = chain_paths(topo, 2)?;
    if chains.len() != 3 {
        return Err(ScheduleError::ChainCount {
            expected: 3,
            found: chains.len(),
        });
    }
    let mut slots: Vec<Vec<LinkId>> = vec![Vec::new(); 4];
    for (c, path) in chains.iter().enumerate() {
        for (h0, &link) in path.iter().enumerate() {
            let h = h0 + 1;
            let slot = match h {
                1 => c,
                2 => 3,
                _ => [(c + 1) % 3, (c + 2) % 3, c, 3][(h - 3) % 4],
            };
            slots[slot].push(link);
        }
    }
    Ok(Schedule { slots })
}

/// Optimal frame for a single chain of `n` all-source nodes: `3n - 3`
/// slots, the hop-`i` link holding `n - i + 1` of them, with links three
/// hops apart reusing the same slots.
pub fn linear_chain_schedule(topo: &Topology) -> Result<Schedule, ScheduleError> {
    let chains = chain_paths(topo, 2)?;
    if chains.len() != 1 {
        return Err(ScheduleError::ChainCount {
            expected: 1,
            found: chains.len(),
        });
    }
    let path = &chains[0];
    let n = path.len();
    let frame = 3 * n - 3;
    let mut slot_lists: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 1..=n {
        let list: Vec<usize> = match i {
            1 => (0..n).collect(),
            2 => (n..2 * n - 1).collect(),
            3 => (2 * n - 1..3 * n - 3).collect(),
            _ => slot_lists[i - 3 - 1][..n - i + 1].to_vec(),
        };
        slot_lists.push(list);
    }
    let mut slots: Vec<Vec<LinkId>> = vec![Vec::new(); frame];
    for (i0, list) in slot_lists.iter().enumerate() {
        for &s in list {
            slots[s].push(path[i0]);
        }
    }
    Ok(Schedule { slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DirectedLink, Point2D};
    use crate::topology::{
        build_canonical, build_linear_chain, build_two_chain, CanonicalSpec, ChainRolePolicy,
        NodeRole, DEFAULT_BEND_ANGLE,
    };
    use proptest::prelude::*;

    fn frac(n: u64, d: u64) -> Frac {
        Frac::new(n, d)
    }

    #[test]
    fn chain_capacity_exact_values() {
        assert_eq!(chain_capacity(2).unwrap(), frac(2, 3));
        assert_eq!(chain_capacity(4).unwrap(), frac(4, 9));
        assert_eq!(chain_capacity(10).unwrap(), frac(10, 27));
        assert!(matches!(chain_capacity(1), Err(CapacityError::ChainTooShort(1))));
        let huge = chain_capacity(10_000).unwrap();
        let as_f64 = *huge.numer() as f64 / *huge.denom() as f64;
        assert!((as_f64 - 1.0 / 3.0).abs() < 1.2e-4);
    }

    #[test]
    fn linear_chain_schedule_meets_its_capacity() {
        for n in [2usize, 4, 7] {
            let topo = build_linear_chain(n, 250.0, ChainRolePolicy::AllSources).unwrap();
            let sched = linear_chain_schedule(&topo).unwrap();
            assert_eq!(sched.frame_slots(), 3 * n - 3);
            let config = RadioConfig::ns2_default();
            let violations = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
            assert!(violations.is_empty(), "n={n}: {violations:?}");
            let tp = schedule_throughput(&topo, &sched);
            assert_eq!(tp.aggregate, chain_capacity(n).unwrap(), "n={n}");
        }
    }

    #[test]
    fn two_chain_schedule_reaches_two_thirds() {
        let topo = build_two_chain(250.0, DEFAULT_BEND_ANGLE).unwrap();
        let sched = two_chain_schedule(&topo).unwrap();
        assert_eq!(sched.frame_slots(), 3);
        let config = RadioConfig::with_cs_range(725.0);
        let violations = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
        assert!(violations.is_empty(), "{violations:?}");
        let tp = schedule_throughput(&topo, &sched);
        assert_eq!(tp.aggregate, frac(2, 3));
        assert_eq!(tp.per_source, frac(1, 3));
        assert_eq!(ring_airtime_load(&topo, &sched, 2), frac(1, 1));
    }

    #[test]
    fn three_chain_schedule_reaches_three_quarters() {
        let topo = build_canonical(&CanonicalSpec::two_ring_profile(3, 2, 250.0, 242.0)).unwrap();
        let sched = three_chain_schedule(&topo).unwrap();
        assert_eq!(sched.frame_slots(), 4);
        let config = RadioConfig::with_cs_range(675.0);
        let violations = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
        assert!(violations.is_empty(), "{violations:?}");
        let tp = schedule_throughput(&topo, &sched);
        assert_eq!(tp.aggregate, frac(3, 4));
        assert_eq!(ring_airtime_load(&topo, &sched, 3), frac(1, 1));
        // Aggregate interference is even gentler than pairwise here.
        let agg = verify_schedule(&topo, &sched, &config, InterferenceMode::Aggregate);
        assert!(agg.is_empty(), "{agg:?}");
    }

    #[test]
    fn three_chain_schedule_breaks_when_sensing_reaches_the_second_ring() {
        let topo = build_canonical(&CanonicalSpec::two_ring_profile(3, 2, 250.0, 242.0)).unwrap();
        let sched = three_chain_schedule(&topo).unwrap();
        // Second-ring transmitters sit 852.2 m apart; sensing at 875 m
        // serializes them, so the shared slot becomes infeasible.
        let config = RadioConfig::with_cs_range(875.0);
        let violations = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
        assert!(violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::MutualSensing { .. })));
    }

    #[test]
    fn deeper_three_chain_frames_stay_clean() {
        for hops in [3usize, 5] {
            let topo =
                build_canonical(&CanonicalSpec::two_ring_profile(3, hops, 250.0, 242.0)).unwrap();
            let sched = three_chain_schedule(&topo).unwrap();
            let config = RadioConfig::with_cs_range(675.0);
            let violations = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
            assert!(violations.is_empty(), "hops={hops}: {violations:?}");
        }
    }

    #[test]
    fn aggregate_mode_catches_summed_interference_pairwise_misses() {
        // Three links, each pair comfortably spaced, but the victim's two
        // interferers sum to almost double the tolerable power.
        let positions = vec![
            Point2D::new(0.0, 0.0),     // victim rx
            Point2D::new(250.0, 0.0),   // victim tx
            Point2D::new(-450.0, 0.0),  // interferer tx
            Point2D::new(-700.0, 0.0),  // its rx
            Point2D::new(0.0, 450.0),   // interferer tx
            Point2D::new(0.0, 700.0),   // its rx
        ];
        let roles = vec![
            NodeRole::Sink,
            NodeRole::Source,
            NodeRole::Source,
            NodeRole::Relay,
            NodeRole::Source,
            NodeRole::Relay,
        ];
        let links = vec![
            DirectedLink::new(1, 0, 0.0),
            DirectedLink::new(2, 3, 0.0),
            DirectedLink::new(4, 5, 0.0),
        ];
        let topo = Topology::from_parts(positions, roles, links).unwrap();
        let sched = Schedule { slots: vec![vec![0, 1, 2]] };
        // Short sensing so the spread-out transmitters cannot hear each
        // other (closest pair is 514.8 m apart).
        let config = RadioConfig::with_cs_range(500.0);
        let pairwise = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
        assert!(pairwise.is_empty(), "{pairwise:?}");
        let aggregate = verify_schedule(&topo, &sched, &config, InterferenceMode::Aggregate);
        assert_eq!(aggregate.len(), 1);
        match &aggregate[0].kind {
            ViolationKind::LowSir { link, sir } => {
                assert_eq!(*link, 0);
                assert!((sir - 1.8f64.powi(4) / 2.0).abs() < 1e-9);
            }
            other => panic!("expected LowSir, got {other:?}"),
        }
    }

    #[test]
    fn half_duplex_conflicts_are_reported() {
        let topo = build_linear_chain(2, 250.0, ChainRolePolicy::AllSources).unwrap();
        // Node 1 receives from 2 and transmits to 0 in the same slot.
        let sched = Schedule {
            slots: vec![vec![0, 1]],
        };
        let config = RadioConfig::ns2_default();
        let violations = verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
        assert!(violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::HalfDuplex { node: 1 })));
    }

    #[test]
    fn schedule_text_roundtrip() {
        let topo = build_canonical(&CanonicalSpec::two_ring_profile(3, 2, 250.0, 242.0)).unwrap();
        let sched = three_chain_schedule(&topo).unwrap();
        let text = sched.to_text(&topo);
        let parsed = Schedule::from_text(&text, &topo).unwrap();
        assert_eq!(parsed, sched);
        assert!(Schedule::from_text("schedule v2\n", &topo).is_err());
        assert!(Schedule::from_text("schedule v1\nframe 0\n", &topo).is_err());
        assert!(matches!(
            Schedule::from_text("schedule v1\nframe 2\nslot 0: 2->0\n", &topo),
            Err(ScheduleError::UnknownLink { tx: 2, rx: 0 })
        ));
    }

    #[test]
    fn upper_bound_for_the_bent_two_chain() {
        let topo = build_two_chain(250.0, DEFAULT_BEND_ANGLE).unwrap();
        let report = upper_bound(&topo, &RadioConfig::with_cs_range(725.0)).unwrap();
        assert_eq!(report.ring2_concurrency, 2);
        assert_eq!(report.bound, frac(2, 3));
        // Sensing too short: hidden nodes disqualify the bound.
        assert!(matches!(
            upper_bound(&topo, &RadioConfig::with_cs_range(550.0)),
            Err(CapacityError::NotHiddenNodeFree)
        ));
    }

    #[test]
    fn upper_bound_rejects_sources_adjacent_to_the_sink() {
        let topo = build_canonical(&CanonicalSpec::equal(3, 1, 250.0)).unwrap();
        let config = RadioConfig::with_cs_range(875.0);
        assert!(matches!(
            upper_bound(&topo, &config),
            Err(CapacityError::SourceTooClose(_))
        ));
    }

    #[test]
    fn upper_bound_matches_schedule_on_the_variable_three_chain() {
        let topo = build_canonical(&CanonicalSpec::two_ring_profile(3, 2, 250.0, 242.0)).unwrap();
        let config = RadioConfig::with_cs_range(675.0);
        let report = upper_bound(&topo, &config).unwrap();
        assert_eq!(report.ring2_concurrency, 3);
        assert_eq!(report.bound, frac(3, 4));
        let sched = three_chain_schedule(&topo).unwrap();
        let tp = schedule_throughput(&topo, &sched);
        assert_eq!(tp.aggregate, report.bound);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chain_capacity_decreases_toward_one_third(n in 2usize..500) {
            let now = chain_capacity(n).unwrap();
            let next = chain_capacity(n + 1).unwrap();
            prop_assert!(next < now);
            prop_assert!(now > frac(1, 3));
        }

        #[test]
        fn linear_schedules_always_verify_and_meet_capacity(n in 2usize..12) {
            let topo = build_linear_chain(n, 250.0, ChainRolePolicy::AllSources).unwrap();
            let sched = linear_chain_schedule(&topo).unwrap();
            let config = RadioConfig::ns2_default();
            let violations =
                verify_schedule(&topo, &sched, &config, InterferenceMode::Pairwise);
            prop_assert!(violations.is_empty());
            let tp = schedule_throughput(&topo, &sched);
            prop_assert_eq!(tp.aggregate, chain_capacity(n).unwrap());
        }
    }
}
