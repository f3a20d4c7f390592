//! Topology containers, deterministic generators, and text serialization.
//!
//! A [`Topology`] holds node positions and roles, a directed link table, a
//! designated sink, and per-node next-hop routes toward the sink. Chain-style
//! generators emit exactly the chain links; random deployment generators emit
//! every directed link within transmit range and then route by minimum hop
//! count. All randomized generators are deterministic functions of their
//! `seed` argument.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::geometry::{DirectedLink, Point2D};
use crate::{LinkId, NodeId};

/// What a node does with traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    /// Originates packets destined for the sink.
    Source,
    /// Only forwards other nodes' packets.
    Relay,
    /// Terminates all flows.
    Sink,
    /// Originates its own packets and forwards others'.
    SourceAndRelay,
}

impl NodeRole {
    /// True for roles that originate traffic.
    pub fn is_source(self) -> bool {
        matches!(self, NodeRole::Source | NodeRole::SourceAndRelay)
    }

    fn token(self) -> &'static str {
        match self {
            NodeRole::Source => "source",
            NodeRole::Relay => "relay",
            NodeRole::Sink => "sink",
            NodeRole::SourceAndRelay => "source_and_relay",
        }
    }

    fn from_token(s: &str) -> Option<NodeRole> {
        match s {
            "source" => Some(NodeRole::Source),
            "relay" => Some(NodeRole::Relay),
            "sink" => Some(NodeRole::Sink),
            "source_and_relay" => Some(NodeRole::SourceAndRelay),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid build parameters: {0}")]
    BadParameters(String),
    #[error("nodes {a} and {b} occupy the same position")]
    DuplicatePosition { a: NodeId, b: NodeId },
    #[error("link references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate link {tx} -> {rx}")]
    DuplicateLink { tx: NodeId, rx: NodeId },
    #[error("link from node {0} to itself")]
    SelfLink(NodeId),
    #[error("expected exactly one sink, found {0}")]
    SinkCount(usize),
    #[error("no route to the sink for sources {sources:?} ({others} non-source nodes also unreachable)")]
    Unreachable { sources: Vec<NodeId>, others: usize },
    #[error("could not draw a connected deployment after {attempts} attempts")]
    RetriesExhausted { attempts: usize },
    #[error("route from {from} uses missing link {from} -> {to}")]
    RouteWithoutLink { from: NodeId, to: NodeId },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A many-to-one network: positions, roles, directed links, and next-hop
/// routes toward a single sink.
#[derive(Debug, Clone)]
pub struct Topology {
    pub positions: Vec<Point2D>,
    pub roles: Vec<NodeRole>,
    pub links: Vec<DirectedLink>,
    /// Next hop toward the sink; `None` for the sink itself (and for nodes
    /// left unrouted by an explicit route table).
    pub routes: Vec<Option<NodeId>>,
    pub sink: NodeId,
    link_ids: HashMap<(NodeId, NodeId), LinkId>,
}

const MIN_NODE_SEPARATION: f64 = 1.0;

impl Topology {
    /// Assemble a topology from node data and a link table. Links are sorted
    /// by `(tx, rx)`; routes start empty (see [`Topology::compute_min_hop_routes`]).
    ///
    /// Rejects self links, duplicate links, links to unknown nodes, node
    /// counts with anything but exactly one sink, and node pairs closer than
    /// one meter.
    pub fn from_parts(
        positions: Vec<Point2D>,
        roles: Vec<NodeRole>,
        mut links: Vec<DirectedLink>,
    ) -> Result<Topology, TopologyError> {
        assert_eq!(positions.len(), roles.len(), "positions/roles length mismatch");
        let n = positions.len();
        let sinks: Vec<NodeId> = (0..n).filter(|&i| roles[i] == NodeRole::Sink).collect();
        if sinks.len() != 1 {
            return Err(TopologyError::SinkCount(sinks.len()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if positions[i].dist(&positions[j]) < MIN_NODE_SEPARATION {
                    return Err(TopologyError::DuplicatePosition { a: i, b: j });
                }
            }
        }
        links.sort_by_key(|l| (l.tx, l.rx));
        let mut link_ids = HashMap::with_capacity(links.len());
        for (id, link) in links.iter_mut().enumerate() {
            if link.tx >= n {
                return Err(TopologyError::UnknownNode(link.tx));
            }
            if link.rx >= n {
                return Err(TopologyError::UnknownNode(link.rx));
            }
            if link.tx == link.rx {
                return Err(TopologyError::SelfLink(link.tx));
            }
            link.length = positions[link.tx].dist(&positions[link.rx]);
            if link_ids.insert((link.tx, link.rx), id).is_some() {
                return Err(TopologyError::DuplicateLink {
                    tx: link.tx,
                    rx: link.rx,
                });
            }
        }
        Ok(Topology {
            routes: vec![None; n],
            sink: sinks[0],
            positions,
            roles,
            links,
            link_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    /// Nodes that originate traffic, in id order.
    pub fn sources(&self) -> Vec<NodeId> {
        (0..self.num_nodes())
            .filter(|&i| self.roles[i].is_source())
            .collect()
    }

    pub fn n_sources(&self) -> usize {
        self.roles.iter().filter(|r| r.is_source()).count()
    }

    pub fn link_between(&self, tx: NodeId, rx: NodeId) -> Option<LinkId> {
        self.link_ids.get(&(tx, rx)).copied()
    }

    /// Longest link in the link table, in meters. Zero for an empty table.
    pub fn max_link_length(&self) -> f64 {
        self.links.iter().map(|l| l.length).fold(0.0, f64::max)
    }

    /// Compute minimum-hop routes from every node to the sink over the link
    /// table. Among equal-hop parents the one closer to the sink wins (node
    /// id breaks exact ties). Errors when any node cannot reach the sink.
    pub fn compute_min_hop_routes(&mut self) -> Result<(), TopologyError> {
        let n = self.num_nodes();
        let mut rev_adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for link in &self.links {
            // Edge usable for routing: from link.tx forward to link.rx.
            rev_adj[link.rx].push(link.tx);
        }
        let mut hops: Vec<Option<usize>> = vec![None; n];
        hops[self.sink] = Some(0);
        let mut frontier = vec![self.sink];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &v in &frontier {
                let h = hops[v].unwrap();
                for &u in &rev_adj[v] {
                    if hops[u].is_none() {
                        hops[u] = Some(h + 1);
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        let unreachable: Vec<NodeId> = (0..n).filter(|&u| hops[u].is_none()).collect();
        if !unreachable.is_empty() {
            let sources: Vec<NodeId> = unreachable
                .iter()
                .copied()
                .filter(|&u| self.roles[u].is_source())
                .collect();
            let others = unreachable.len() - sources.len();
            return Err(TopologyError::Unreachable { sources, others });
        }
        let sink_pos = self.positions[self.sink];
        for u in 0..n {
            if u == self.sink {
                self.routes[u] = None;
                continue;
            }
            let my_hops = hops[u].unwrap();
            let mut best: Option<(f64, NodeId)> = None;
            for link in self.links.iter().filter(|l| l.tx == u) {
                let v = link.rx;
                if hops[v] == Some(my_hops - 1) {
                    let key = (self.positions[v].dist(&sink_pos), v);
                    if best.map_or(true, |b| key < b) {
                        best = Some(key);
                    }
                }
            }
            let (_, parent) = best.expect("reachable node has a parent");
            self.routes[u] = Some(parent);
        }
        Ok(())
    }

    /// Minimum-hop routing that tolerates stranded nodes: unreachable nodes
    /// keep `None` routes and their ids are returned. Packets never flow
    /// through a stranded node because every routed node's parent is routed.
    pub fn compute_min_hop_routes_lenient(&mut self) -> Vec<NodeId> {
        match self.compute_min_hop_routes() {
            Ok(()) => Vec::new(),
            Err(_) => {
                // Redo the BFS, keeping whatever is reachable.
                let n = self.num_nodes();
                let mut rev_adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
                for link in &self.links {
                    rev_adj[link.rx].push(link.tx);
                }
                let mut hops: Vec<Option<usize>> = vec![None; n];
                hops[self.sink] = Some(0);
                let mut frontier = vec![self.sink];
                while !frontier.is_empty() {
                    let mut next = Vec::new();
                    for &v in &frontier {
                        let h = hops[v].unwrap();
                        for &u in &rev_adj[v] {
                            if hops[u].is_none() {
                                hops[u] = Some(h + 1);
                                next.push(u);
                            }
                        }
                    }
                    frontier = next;
                }
                let sink_pos = self.positions[self.sink];
                let mut stranded = Vec::new();
                for u in 0..n {
                    if u == self.sink {
                        self.routes[u] = None;
                        continue;
                    }
                    let Some(my_hops) = hops[u] else {
                        self.routes[u] = None;
                        stranded.push(u);
                        continue;
                    };
                    let mut best: Option<(f64, NodeId)> = None;
                    for link in self.links.iter().filter(|l| l.tx == u) {
                        let v = link.rx;
                        if hops[v] == Some(my_hops - 1) {
                            let key = (self.positions[v].dist(&sink_pos), v);
                            if best.map_or(true, |b| key < b) {
                                best = Some(key);
                            }
                        }
                    }
                    self.routes[u] = best.map(|(_, v)| v);
                }
                stranded
            }
        }
    }

    /// Replace the route table, checking every next-hop edge exists as a link.
    pub fn with_routes(&self, routes: Vec<Option<NodeId>>) -> Result<Topology, TopologyError> {
        assert_eq!(routes.len(), self.num_nodes(), "route table length mismatch");
        for (u, next) in routes.iter().enumerate() {
            if let Some(v) = next {
                if self.link_between(u, *v).is_none() {
                    return Err(TopologyError::RouteWithoutLink { from: u, to: *v });
                }
            }
        }
        let mut out = self.clone();
        out.routes = routes;
        Ok(out)
    }

    /// Hops from each node to the sink by following routes. `Some(0)` for the
    /// sink; `None` for unrouted or cyclic entries.
    pub fn hop_counts(&self) -> Vec<Option<usize>> {
        let n = self.num_nodes();
        let mut out = vec![None; n];
        out[self.sink] = Some(0);
        for start in 0..n {
            if out[start].is_some() {
                continue;
            }
            let mut path = vec![start];
            let mut cur = start;
            let mut reached = None;
            for _ in 0..n {
                match self.routes[cur] {
                    Some(next) => {
                        if let Some(h) = out[next] {
                            reached = Some(h);
                            break;
                        }
                        path.push(next);
                        cur = next;
                    }
                    None => break,
                }
            }
            if let Some(base) = reached {
                for (back, &node) in path.iter().rev().enumerate() {
                    out[node] = Some(base + back + 1);
                }
            }
        }
        out
    }

    /// Nodes at exactly `ring` hops from the sink, in id order.
    pub fn ring_nodes(&self, ring: usize) -> Vec<NodeId> {
        self.hop_counts()
            .iter()
            .enumerate()
            .filter(|(_, h)| **h == Some(ring))
            .map(|(i, _)| i)
            .collect()
    }

    /// The link a node's route uses, if routed.
    pub fn route_link_of(&self, node: NodeId) -> Option<LinkId> {
        self.routes[node].and_then(|next| self.link_between(node, next))
    }

    /// All links used by at least one route, in link-id order.
    pub fn route_links(&self) -> Vec<LinkId> {
        let mut ids: Vec<LinkId> = (0..self.num_nodes())
            .filter_map(|u| self.route_link_of(u))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Link ids along a node's route to the sink. Empty for the sink or an
    /// unrouted node; stops early on a missing link or cycle.
    pub fn route_path(&self, node: NodeId) -> Vec<LinkId> {
        let mut out = Vec::new();
        let mut cur = node;
        for _ in 0..self.num_nodes() {
            match self.routes[cur] {
                Some(next) => match self.link_between(cur, next) {
                    Some(id) => {
                        out.push(id);
                        if next == self.sink {
                            return out;
                        }
                        cur = next;
                    }
                    None => break,
                },
                None => break,
            }
        }
        out
    }

    /// Number of source flows crossing each link under the current routes.
    pub fn flow_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.links.len()];
        for src in self.sources() {
            for id in self.route_path(src) {
                counts[id] += 1;
            }
        }
        counts
    }

    /// Serialize to the `topology v1` text format. Stable: node lines in id
    /// order, link lines sorted by `(tx, rx)`, route lines in id order, and
    /// coordinates printed to six decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("topology v1\n");
        for (id, (pos, role)) in self.positions.iter().zip(&self.roles).enumerate() {
            writeln!(s, "node {id} {:.6} {:.6} {}", pos.x, pos.y, role.token()).unwrap();
        }
        for link in &self.links {
            writeln!(s, "link {} {}", link.tx, link.rx).unwrap();
        }
        for (id, next) in self.routes.iter().enumerate() {
            if let Some(v) = next {
                writeln!(s, "route {id} {v}").unwrap();
            }
        }
        s
    }

    /// Parse the `topology v1` text format. Node ids must be dense and in
    /// order starting at 0; link lengths are recomputed from the parsed
    /// coordinates; routes are taken verbatim but must follow existing links.
    pub fn from_text(text: &str) -> Result<Topology, TopologyError> {
        let err = |line: usize, msg: String| TopologyError::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "topology v1")) => {}
            Some((i, other)) => {
                return Err(err(i + 1, format!("expected 'topology v1' header, got '{other}'")))
            }
            None => return Err(err(1, "empty input".into())),
        }
        let mut positions = Vec::new();
        let mut roles = Vec::new();
        let mut links = Vec::new();
        let mut route_pairs: Vec<(usize, NodeId, NodeId)> = Vec::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "node" => {
                    if fields.len() != 5 {
                        return Err(err(line_no, "node line needs: node <id> <x> <y> <role>".into()));
                    }
                    let id: usize = fields[1]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad node id '{}'", fields[1])))?;
                    if id != positions.len() {
                        return Err(err(
                            line_no,
                            format!("node ids must be dense and ordered; expected {}, got {id}", positions.len()),
                        ));
                    }
                    let x: f64 = fields[2]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad x coordinate '{}'", fields[2])))?;
                    let y: f64 = fields[3]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad y coordinate '{}'", fields[3])))?;
                    let role = NodeRole::from_token(fields[4])
                        .ok_or_else(|| err(line_no, format!("unknown role '{}'", fields[4])))?;
                    positions.push(Point2D::new(x, y));
                    roles.push(role);
                }
                "link" => {
                    if fields.len() != 3 {
                        return Err(err(line_no, "link line needs: link <tx> <rx>".into()));
                    }
                    let tx: usize = fields[1]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad link tx '{}'", fields[1])))?;
                    let rx: usize = fields[2]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad link rx '{}'", fields[2])))?;
                    links.push(DirectedLink::new(tx, rx, 0.0));
                }
                "route" => {
                    if fields.len() != 3 {
                        return Err(err(line_no, "route line needs: route <id> <next>".into()));
                    }
                    let id: usize = fields[1]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad route id '{}'", fields[1])))?;
                    let next: usize = fields[2]
                        .parse()
                        .map_err(|_| err(line_no, format!("bad route next hop '{}'", fields[2])))?;
                    route_pairs.push((line_no, id, next));
                }
                other => return Err(err(line_no, format!("unknown record '{other}'"))),
            }
        }
        let mut topo = Topology::from_parts(positions, roles, links)?;
        for (line_no, id, next) in route_pairs {
            if id >= topo.num_nodes() || next >= topo.num_nodes() {
                return Err(err(line_no, format!("route references unknown node ({id} -> {next})")));
            }
            if topo.link_between(id, next).is_none() {
                return Err(TopologyError::RouteWithoutLink { from: id, to: next });
            }
            topo.routes[id] = Some(next);
        }
        Ok(topo)
    }

    /// Copy with every non-sink node displaced by up to `frac` of its
    /// distance to the sink (uniform direction, uniform radius), links
    /// rebuilt with the within-`tx_range` rule, and routes recomputed.
    ///
    /// Placement error can strand nodes beyond anyone's reach; stranded
    /// nodes keep `None` routes and fall silent rather than failing the
    /// whole perturbation.
    pub fn jittered(&self, frac: f64, tx_range: f64, seed: u64) -> Result<Topology, TopologyError> {
        if !(0.0..1.0).contains(&frac) {
            return Err(TopologyError::BadParameters(format!(
                "jitter fraction must be in [0, 1), got {frac}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sink_pos = self.positions[self.sink];
        let mut positions = self.positions.clone();
        for (id, pos) in positions.iter_mut().enumerate() {
            if id == self.sink {
                continue;
            }
            let reach = frac * pos.dist(&sink_pos);
            let r = rng.gen_range(0.0..reach);
            let theta = rng.gen_range(0.0..(2.0 * PI));
            pos.x += r * theta.cos();
            pos.y += r * theta.sin();
        }
        let links = unit_disk_links(&positions, tx_range);
        let mut topo = Topology::from_parts(positions, self.roles.clone(), links)?;
        topo.compute_min_hop_routes_lenient();
        Ok(topo)
    }
}

/// Every directed link between distinct nodes within `tx_range` of each
/// other, sorted by `(tx, rx)`.
pub fn unit_disk_links(positions: &[Point2D], tx_range: f64) -> Vec<DirectedLink> {
    let mut links = Vec::new();
    for tx in 0..positions.len() {
        for rx in 0..positions.len() {
            if tx == rx {
                continue;
            }
            let d = positions[tx].dist(&positions[rx]);
            if d <= tx_range {
                links.push(DirectedLink::new(tx, rx, d));
            }
        }
    }
    links
}

/// Layout for sink-centered networks of straight radial chains.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSpec {
    pub num_chains: usize,
    pub hops_per_chain: usize,
    /// Spacing between ring `k` and ring `k+1`, outward from the sink;
    /// length must equal `hops_per_chain`.
    pub ring_spacings: Vec<f64>,
    /// Chain directions in radians; `None` spreads chains evenly starting
    /// at angle zero.
    pub chain_angles: Option<Vec<f64>>,
}

impl CanonicalSpec {
    /// All rings the same `spacing` apart.
    pub fn equal(num_chains: usize, hops_per_chain: usize, spacing: f64) -> CanonicalSpec {
        CanonicalSpec {
            num_chains,
            hops_per_chain,
            ring_spacings: vec![spacing; hops_per_chain],
            chain_angles: None,
        }
    }

    /// First hop `d0` from the sink, every later hop `d1`.
    pub fn two_ring_profile(
        num_chains: usize,
        hops_per_chain: usize,
        d0: f64,
        d1: f64,
    ) -> CanonicalSpec {
        let mut spacings = vec![d1; hops_per_chain];
        if !spacings.is_empty() {
            spacings[0] = d0;
        }
        CanonicalSpec {
            num_chains,
            hops_per_chain,
            ring_spacings: spacings,
            chain_angles: None,
        }
    }

    /// Hops beyond the first shortened to 70% of `d0`, matching deployments
    /// that pack relays tighter away from the sink's contention region.
    pub fn one_to_many_profile(
        num_chains: usize,
        hops_per_chain: usize,
        d0: f64,
    ) -> CanonicalSpec {
        CanonicalSpec::two_ring_profile(num_chains, hops_per_chain, d0, 0.7 * d0)
    }

    fn angles(&self) -> Vec<f64> {
        match &self.chain_angles {
            Some(a) => a.clone(),
            None => (0..self.num_chains)
                .map(|i| 2.0 * PI * i as f64 / self.num_chains as f64)
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), TopologyError> {
        if self.num_chains == 0 {
            return Err(TopologyError::BadParameters("need at least one chain".into()));
        }
        if self.hops_per_chain == 0 {
            return Err(TopologyError::BadParameters("need at least one hop per chain".into()));
        }
        if self.ring_spacings.len() != self.hops_per_chain {
            return Err(TopologyError::BadParameters(format!(
                "expected {} ring spacings, got {}",
                self.hops_per_chain,
                self.ring_spacings.len()
            )));
        }
        if self.ring_spacings.iter().any(|&d| !(d > 0.0)) {
            return Err(TopologyError::BadParameters("ring spacings must be positive".into()));
        }
        if let Some(angles) = &self.chain_angles {
            if angles.len() != self.num_chains {
                return Err(TopologyError::BadParameters(format!(
                    "expected {} chain angles, got {}",
                    self.num_chains,
                    angles.len()
                )));
            }
        }
        Ok(())
    }
}

/// Which chain nodes originate traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainRolePolicy {
    /// Every non-sink node is a source (inner nodes also forward).
    AllSources,
    /// Only the node farthest from the sink is a source.
    OutermostOnly,
    /// Nodes at this hop count or beyond are sources.
    SourcesFromHop(usize),
}

/// Sink at the origin with `num_chains` straight radial chains. Node ids are
/// chain-major: chain `c`'s ring-`r` node is `1 + c * hops + (r - 1)`. Links
/// are exactly the chain links, directed toward the sink. Outermost nodes
/// are sources; everything else relays.
pub fn build_canonical(spec: &CanonicalSpec) -> Result<Topology, TopologyError> {
    spec.validate()?;
    let hops = spec.hops_per_chain;
    let angles = spec.angles();
    let mut radii = Vec::with_capacity(hops + 1);
    radii.push(0.0);
    for d in &spec.ring_spacings {
        radii.push(radii.last().unwrap() + d);
    }
    let mut positions = vec![Point2D::new(0.0, 0.0)];
    let mut roles = vec![NodeRole::Sink];
    let mut links = Vec::new();
    for (c, &angle) in angles.iter().enumerate() {
        for r in 1..=hops {
            let id = 1 + c * hops + (r - 1);
            positions.push(Point2D::polar(radii[r], angle));
            roles.push(if r == hops { NodeRole::Source } else { NodeRole::Relay });
            let parent = if r == 1 { 0 } else { id - 1 };
            links.push(DirectedLink::new(id, parent, 0.0));
        }
    }
    let mut topo = Topology::from_parts(positions, roles, links)?;
    topo.compute_min_hop_routes()?;
    Ok(topo)
}

/// A single straight chain along the positive x axis: sink at the origin
/// and `n_hops` nodes spaced `spacing` apart, with source roles chosen by
/// `policy`.
pub fn build_linear_chain(
    n_hops: usize,
    spacing: f64,
    policy: ChainRolePolicy,
) -> Result<Topology, TopologyError> {
    if n_hops == 0 {
        return Err(TopologyError::BadParameters("need at least one hop".into()));
    }
    if !(spacing > 0.0) {
        return Err(TopologyError::BadParameters("spacing must be positive".into()));
    }
    let mut positions = vec![Point2D::new(0.0, 0.0)];
    let mut roles = vec![NodeRole::Sink];
    let mut links = Vec::new();
    for r in 1..=n_hops {
        positions.push(Point2D::new(spacing * r as f64, 0.0));
        let originates = match policy {
            ChainRolePolicy::AllSources => true,
            ChainRolePolicy::OutermostOnly => r == n_hops,
            ChainRolePolicy::SourcesFromHop(k) => r >= k,
        };
        let forwards = r < n_hops;
        roles.push(match (originates, forwards) {
            (true, true) => NodeRole::SourceAndRelay,
            (true, false) => NodeRole::Source,
            (false, _) => NodeRole::Relay,
        });
        links.push(DirectedLink::new(r, r - 1, 0.0));
    }
    let mut topo = Topology::from_parts(positions, roles, links)?;
    topo.compute_min_hop_routes()?;
    Ok(topo)
}

/// Default inter-chain angle for [`build_two_chain`]: just shy of the
/// fully stretched configuration, which keeps the worst incompatible
/// transmitter spacing near its practical maximum without the degenerate
/// collinear layout.
pub const DEFAULT_BEND_ANGLE: f64 = 0.822 * PI;

/// Two 2-hop chains of equal `spacing` meeting at the sink with the given
/// inter-chain angle.
pub fn build_two_chain(spacing: f64, angle: f64) -> Result<Topology, TopologyError> {
    build_canonical(&CanonicalSpec {
        num_chains: 2,
        hops_per_chain: 2,
        ring_spacings: vec![spacing; 2],
        chain_angles: Some(vec![0.0, angle]),
    })
}

const MAX_DEPLOYMENT_ATTEMPTS: usize = 64;
const MAX_PLACEMENT_DRAWS: usize = 10_000;

fn sample_annulus(rng: &mut ChaCha12Rng, r_min: f64, r_max: f64) -> Point2D {
    let u: f64 = rng.gen_range(0.0..1.0);
    let r = (u * (r_max * r_max - r_min * r_min) + r_min * r_min).sqrt();
    let theta = rng.gen_range(0.0..(2.0 * PI));
    Point2D::polar(r, theta)
}

fn place_with_separation(
    rng: &mut ChaCha12Rng,
    existing: &[Point2D],
    min_sep: f64,
    r_min: f64,
    r_max: f64,
) -> Option<Point2D> {
    for _ in 0..MAX_PLACEMENT_DRAWS {
        let p = sample_annulus(rng, r_min, r_max);
        if existing.iter().all(|q| p.dist(q) >= min_sep) {
            return Some(p);
        }
    }
    None
}

/// Random multi-hop deployment: `n_sources` sources evenly spread on a
/// circle of `radius`, each growing a relay string toward the sink with
/// random step lengths and bearings, then fully linked with the
/// within-`tx_range` rule and routed by minimum hop count.
pub fn build_random_disk(
    radius: f64,
    tx_range: f64,
    n_sources: usize,
    seed: u64,
) -> Result<Topology, TopologyError> {
    if !(radius > tx_range) {
        return Err(TopologyError::BadParameters(
            "radius must exceed tx_range for a multi-hop deployment".into(),
        ));
    }
    if n_sources == 0 {
        return Err(TopologyError::BadParameters("need at least one source".into()));
    }
    let mut last_err = None;
    for attempt in 0..MAX_DEPLOYMENT_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut positions = vec![Point2D::new(0.0, 0.0)];
        let mut roles = vec![NodeRole::Sink];
        let mut ok = true;
        for s in 0..n_sources {
            let angle = 2.0 * PI * s as f64 / n_sources as f64;
            let src = Point2D::polar(radius, angle);
            positions.push(src);
            roles.push(NodeRole::Source);
            // Walk inward, dropping relays until the sink is in range. The
            // bearing stays within 60 degrees of straight at the sink, so
            // every step makes at least half a step of radial progress.
            let mut cur = src;
            let max_steps = (4.0 * radius / tx_range).ceil() as usize + 4;
            for _ in 0..max_steps {
                if cur.dist(&positions[0]) <= tx_range {
                    break;
                }
                let step = rng.gen_range(0.5 * tx_range..tx_range);
                let home = (-cur.y).atan2(-cur.x);
                let bearing = home + rng.gen_range(-PI / 3.0..PI / 3.0);
                let next = Point2D::new(
                    cur.x + step * bearing.cos(),
                    cur.y + step * bearing.sin(),
                );
                let next = if next.dist(&positions[0]) < MIN_NODE_SEPARATION {
                    Point2D::new(tx_range * 0.5, 0.0)
                } else {
                    next
                };
                if positions.iter().any(|q| next.dist(q) < MIN_NODE_SEPARATION) {
                    continue;
                }
                positions.push(next);
                roles.push(NodeRole::Relay);
                cur = next;
            }
            if cur.dist(&positions[0]) > tx_range {
                ok = false;
                break;
            }
        }
        if !ok {
            last_err = Some(TopologyError::RetriesExhausted {
                attempts: attempt + 1,
            });
            continue;
        }
        let links = unit_disk_links(&positions, tx_range);
        match Topology::from_parts(positions, roles, links).and_then(|mut t| {
            t.compute_min_hop_routes()?;
            Ok(t)
        }) {
            Ok(t) => return Ok(t),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(TopologyError::RetriesExhausted {
        attempts: MAX_DEPLOYMENT_ATTEMPTS,
    }))
}

fn finish_random_deployment(
    positions: Vec<Point2D>,
    roles: Vec<NodeRole>,
    tx_range: f64,
) -> Result<Topology, TopologyError> {
    let links = unit_disk_links(&positions, tx_range);
    let mut topo = Topology::from_parts(positions, roles, links)?;
    topo.compute_min_hop_routes()?;
    Ok(topo)
}

/// Structured core with random outskirts: the chains of `inner` relay
/// traffic for `n_outer` sources scattered uniformly (with `min_sep`
/// spacing) in the annulus `annulus = (r_min, r_max)`.
pub fn build_centric(
    inner: &CanonicalSpec,
    annulus: (f64, f64),
    n_outer: usize,
    min_sep: f64,
    tx_range: f64,
    seed: u64,
) -> Result<Topology, TopologyError> {
    inner.validate()?;
    let (r_min, r_max) = annulus;
    if !(r_max > r_min && r_min > 0.0) {
        return Err(TopologyError::BadParameters("bad annulus bounds".into()));
    }
    let core = build_canonical(inner)?;
    let mut last_err = None;
    for attempt in 0..MAX_DEPLOYMENT_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut positions = core.positions.clone();
        // Core chain nodes only relay here; the outskirts supply all traffic.
        let mut roles: Vec<NodeRole> = core
            .roles
            .iter()
            .map(|&r| if r == NodeRole::Sink { r } else { NodeRole::Relay })
            .collect();
        let mut ok = true;
        for _ in 0..n_outer {
            match place_with_separation(&mut rng, &positions, min_sep, r_min, r_max) {
                Some(p) => {
                    positions.push(p);
                    roles.push(NodeRole::Source);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            last_err = Some(TopologyError::RetriesExhausted {
                attempts: attempt + 1,
            });
            continue;
        }
        match finish_random_deployment(positions, roles, tx_range) {
            Ok(t) => return Ok(t),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(TopologyError::RetriesExhausted {
        attempts: MAX_DEPLOYMENT_ATTEMPTS,
    }))
}

/// Branching relay backbone with random outskirts: three central chains of
/// spacing `d0` that each split into two radial branches after the second
/// ring, reaching `tip_radius` in `branch_hops` equal steps; `n_outer`
/// sources fill the annulus from `tip_radius` to `annulus_max`.
pub fn build_manifold(
    d0: f64,
    branch_hops: usize,
    tip_radius: f64,
    annulus_max: f64,
    n_outer: usize,
    min_sep: f64,
    tx_range: f64,
    seed: u64,
) -> Result<Topology, TopologyError> {
    if !(d0 > 0.0) || branch_hops == 0 {
        return Err(TopologyError::BadParameters("bad backbone parameters".into()));
    }
    if !(tip_radius > 2.0 * d0) || !(annulus_max > tip_radius) {
        return Err(TopologyError::BadParameters("bad backbone radii".into()));
    }
    let step = (tip_radius - 2.0 * d0) / branch_hops as f64;
    let mut core_positions = vec![Point2D::new(0.0, 0.0)];
    for c in 0..3 {
        let phi = 2.0 * PI * c as f64 / 3.0;
        core_positions.push(Point2D::polar(d0, phi));
        core_positions.push(Point2D::polar(2.0 * d0, phi));
        for side in [-1.0, 1.0] {
            let psi = phi + side * PI / 12.0;
            for k in 1..=branch_hops {
                core_positions.push(Point2D::polar(2.0 * d0 + step * k as f64, psi));
            }
        }
    }
    let mut last_err = None;
    for attempt in 0..MAX_DEPLOYMENT_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut positions = core_positions.clone();
        let mut roles = vec![NodeRole::Relay; positions.len()];
        roles[0] = NodeRole::Sink;
        let mut ok = true;
        for _ in 0..n_outer {
            match place_with_separation(&mut rng, &positions, min_sep, tip_radius, annulus_max) {
                Some(p) => {
                    positions.push(p);
                    roles.push(NodeRole::Source);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            last_err = Some(TopologyError::RetriesExhausted {
                attempts: attempt + 1,
            });
            continue;
        }
        match finish_random_deployment(positions, roles, tx_range) {
            Ok(t) => return Ok(t),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(TopologyError::RetriesExhausted {
        attempts: MAX_DEPLOYMENT_ATTEMPTS,
    }))
}

/// Unstructured control for [`build_manifold`]: `n_inner` relays scattered
/// uniformly in a disk of `inner_r` plus the same annulus of `n_outer`
/// sources, all linked by the within-`tx_range` rule.
pub fn build_random_benchmark(
    inner_r: f64,
    n_inner: usize,
    annulus: (f64, f64),
    n_outer: usize,
    min_sep: f64,
    tx_range: f64,
    seed: u64,
) -> Result<Topology, TopologyError> {
    let (r_min, r_max) = annulus;
    if !(r_max > r_min && r_min > 0.0 && inner_r > 0.0) {
        return Err(TopologyError::BadParameters("bad deployment radii".into()));
    }
    let mut last_err = None;
    for attempt in 0..MAX_DEPLOYMENT_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut positions = vec![Point2D::new(0.0, 0.0)];
        let mut roles = vec![NodeRole::Sink];
        let mut ok = true;
        for _ in 0..n_inner {
            // Inner relays scatter freely; only a sanity floor keeps nodes
            // from landing on top of each other.
            match place_with_separation(
                &mut rng,
                &positions,
                MIN_NODE_SEPARATION,
                MIN_NODE_SEPARATION,
                inner_r,
            ) {
                Some(p) => {
                    positions.push(p);
                    roles.push(NodeRole::Relay);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            for _ in 0..n_outer {
                match place_with_separation(&mut rng, &positions, min_sep, r_min, r_max) {
                    Some(p) => {
                        positions.push(p);
                        roles.push(NodeRole::Source);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if !ok {
            last_err = Some(TopologyError::RetriesExhausted {
                attempts: attempt + 1,
            });
            continue;
        }
        match finish_random_deployment(positions, roles, tx_range) {
            Ok(t) => return Ok(t),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(TopologyError::RetriesExhausted {
        attempts: MAX_DEPLOYMENT_ATTEMPTS,
    }))
}
