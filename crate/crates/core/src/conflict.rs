//! Link conflict analysis: compatibility graphs, hidden-node detection,
//! carrier-sense range sizing, and ring concurrency counting.
//!
//! A pair of links is *hidden-node prone* when their transmitters cannot
//! sense each other, so carrier sensing never serializes them, yet their
//! concurrent operation corrupts a reception. Raising the carrier sense
//! range until every such transmitter pair hears each other eliminates the
//! problem; [`min_hfd_csrange`] computes the smallest range that does.

use crate::geometry::{pairwise_compatible, Point2D, RadioConfig};
use crate::topology::Topology;
use crate::LinkId;
use crate::NodeId;

/// Pairwise link relations precomputed over a topology's link table.
#[derive(Debug, Clone)]
pub struct CompatibilityGraph {
    n: usize,
    compatible: Vec<bool>,
    tx_senses: Vec<bool>,
}

impl CompatibilityGraph {
    pub fn build(topo: &Topology, config: &RadioConfig) -> CompatibilityGraph {
        let n = topo.links.len();
        let mut compatible = vec![false; n * n];
        let mut tx_senses = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let a = &topo.links[i];
                let b = &topo.links[j];
                compatible[i * n + j] =
                    pairwise_compatible(a, b, &topo.positions, config.delta);
                let d_tx = topo.positions[a.tx].dist(&topo.positions[b.tx]);
                tx_senses[i * n + j] = config.within_cs(d_tx);
            }
        }
        CompatibilityGraph {
            n,
            compatible,
            tx_senses,
        }
    }

    /// Whether links `a` and `b` may operate concurrently under the pairwise
    /// spacing rule.
    pub fn compatible(&self, a: LinkId, b: LinkId) -> bool {
        self.compatible[a * self.n + b]
    }

    /// Whether the transmitters of `a` and `b` are within carrier sense
    /// range of each other.
    pub fn tx_senses(&self, a: LinkId, b: LinkId) -> bool {
        self.tx_senses[a * self.n + b]
    }
}

/// Why a hidden-node pair loses frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenNodeCause {
    /// The aggressor violates the victim pair's spacing inequalities, so
    /// concurrent operation corrupts frames outright.
    InsufficientCsRange,
    /// The aggressor is audible at the victim's receiver and, with receiver
    /// restart disabled, steals the lock even though its interference alone
    /// would not corrupt the frame.
    NoRestartCapture,
}

/// A directed hidden-node threat: the aggressor link can disrupt the victim
/// link's reception while the two transmitters cannot hear each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenNodePair {
    pub aggressor: LinkId,
    pub victim: LinkId,
    pub cause: HiddenNodeCause,
}

fn links_disjoint(topo: &Topology, a: LinkId, b: LinkId) -> bool {
    let la = &topo.links[a];
    let lb = &topo.links[b];
    la.tx != lb.tx && la.tx != lb.rx && la.rx != lb.tx && la.rx != lb.rx
}

/// Scan every ordered pair of endpoint-disjoint links for hidden-node
/// threats under the given radio configuration.
///
/// Pairs sharing an endpoint are skipped: a common node serializes them for
/// reasons carrier sensing cannot fix.
pub fn hidden_node_pairs(topo: &Topology, config: &RadioConfig) -> Vec<HiddenNodePair> {
    let graph = CompatibilityGraph::build(topo, config);
    let mut out = Vec::new();
    let n = topo.links.len();
    for a in 0..n {
        for v in 0..n {
            if a == v || !links_disjoint(topo, a, v) {
                continue;
            }
            if graph.tx_senses(a, v) {
                continue;
            }
            if !graph.compatible(a, v) {
                out.push(HiddenNodePair {
                    aggressor: a,
                    victim: v,
                    cause: HiddenNodeCause::InsufficientCsRange,
                });
            } else if !config.rs_mode {
                let d_lock = topo.positions[topo.links[a].tx]
                    .dist(&topo.positions[topo.links[v].rx]);
                if config.within_cs(d_lock) {
                    out.push(HiddenNodePair {
                        aggressor: a,
                        victim: v,
                        cause: HiddenNodeCause::NoRestartCapture,
                    });
                }
            }
        }
    }
    out
}

pub fn is_hidden_node_free(topo: &Topology, config: &RadioConfig) -> bool {
    hidden_node_pairs(topo, config).is_empty()
}

/// Smallest carrier sense range that removes every hidden-node pair, with
/// receiver restart enabled: the largest transmitter-to-transmitter
/// distance over endpoint-disjoint link pairs that fail the spacing test.
/// Zero when no such pair exists.
pub fn min_hfd_csrange(topo: &Topology, delta: f64) -> f64 {
    let n = topo.links.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if !links_disjoint(topo, i, j) {
                continue;
            }
            if pairwise_compatible(&topo.links[i], &topo.links[j], &topo.positions, delta) {
                continue;
            }
            let d = topo.positions[topo.links[i].tx].dist(&topo.positions[topo.links[j].tx]);
            worst = worst.max(d);
        }
    }
    worst
}

/// Carrier sense range that suffices for any layout with this topology's
/// longest link: `(3 + delta)` times the longest link length. Whatever the
/// geometry, an incompatible pair keeps its transmitters within one link
/// length, one guard distance, and one more link length of each other.
pub fn universal_csrange_bound(topo: &Topology, delta: f64) -> f64 {
    (3.0 + delta) * topo.max_link_length()
}

/// Most route links of ring-`ring` nodes that can transmit at once: links
/// must be pairwise compatible and their transmitters pairwise out of
/// carrier sense range (mutual sensing serializes them).
pub fn max_concurrent_ring(topo: &Topology, config: &RadioConfig, ring: usize) -> usize {
    let candidates: Vec<LinkId> = topo
        .ring_nodes(ring)
        .into_iter()
        .filter_map(|u| topo.route_link_of(u))
        .collect();
    let graph = CompatibilityGraph::build(topo, config);
    let ok = |a: LinkId, b: LinkId| graph.compatible(a, b) && !graph.tx_senses(a, b);
    let mut best = 0usize;
    let mut chosen: Vec<LinkId> = Vec::new();
    fn dfs(
        idx: usize,
        candidates: &[LinkId],
        chosen: &mut Vec<LinkId>,
        best: &mut usize,
        ok: &dyn Fn(LinkId, LinkId) -> bool,
    ) {
        if chosen.len() + (candidates.len() - idx) <= *best {
            return;
        }
        if idx == candidates.len() {
            *best = (*best).max(chosen.len());
            return;
        }
        let c = candidates[idx];
        if chosen.iter().all(|&p| ok(p, c)) {
            chosen.push(c);
            dfs(idx + 1, candidates, chosen, best, ok);
            chosen.pop();
        }
        dfs(idx + 1, candidates, chosen, best, ok);
    }
    dfs(0, &candidates, &mut chosen, &mut best, &ok);
    best
}

/// Whether two equal radial chains separated by `theta` radians, with a
/// second-hop to first-hop spacing ratio of `rho`, admit simultaneous
/// second-ring transmissions.
///
/// Two conditions must hold: the second-ring receivers (the first-ring
/// nodes, `2 sin(theta/2)` first-hop lengths apart) must clear the spacing
/// rule for links of relative length `rho`, and the cross
/// transmitter-to-receiver clearance must stay above the decode margin,
/// which reduces to a quadratic in `t = 1 + rho` calibrated for the default
/// 10 dB threshold with fourth-power path loss. Evaluate the quadratic
/// directly; solving it in closed form and picking a branch goes wrong for
/// small angles where the leading coefficient changes sign.
pub fn concurrent_second_ring_feasible(theta: f64, rho: f64, delta: f64) -> bool {
    if !(rho > 0.0) || !(0.0..=std::f64::consts::PI).contains(&theta) {
        return false;
    }
    let receiver_spacing_ok = rho < 2.0 * (theta / 2.0).sin() / (1.0 + delta);
    let t = 1.0 + rho;
    let q = t * t * (1.0 - 2.0 * theta.cos()) + 2.0 * t * (2.0 * theta).cos() - 1.0;
    receiver_spacing_ok && q > 0.0
}

/// Signal-to-interference ratio at the victim link's receiver when the
/// given nodes all radiate at the configured power. Infinite when nothing
/// interferes.
pub fn aggregate_sir(
    topo: &Topology,
    config: &RadioConfig,
    victim: LinkId,
    interferers: &[NodeId],
) -> f64 {
    let link = &topo.links[victim];
    let rx: Point2D = topo.positions[link.rx];
    let signal = config
        .received_power(link.length)
        .expect("victim link has positive length");
    let mut interference = 0.0;
    for &node in interferers {
        if node == link.tx || node == link.rx {
            continue;
        }
        let d = topo.positions[node].dist(&rx);
        interference += config
            .received_power(d)
            .expect("interferer is not at the receiver");
    }
    if interference == 0.0 {
        f64::INFINITY
    } else {
        signal / interference
    }
}
