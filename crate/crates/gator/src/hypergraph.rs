//! Channel-dependency hypergraph.
//!
//! Vertices are the input/output channel sets of convolutions and the
//! fully-connected layer (plus the network input and output interfaces);
//! edges are the groups of channel sets that must be pruned together.
//! Built by union-find closure over the dataflow graph: a producer's output
//! channels unify with every consumer's input channels, channel-preserving
//! layers transmit dependency transparently, `add` merges all contributing
//! groups, and a conv breaks propagation.

use std::collections::HashMap;

use crate::ir::{LayerKind, NetworkGraph};
use crate::{GatorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    In,
    Out,
}

/// A channel-set vertex: one side of a weighted layer (or the network
/// input/output interface).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelVertex {
    /// Index into the graph's layer list.
    pub layer: usize,
    pub side: Side,
    pub channel_count: usize,
}

/// A dependency group: all member channel sets share the same channel count
/// and must be pruned jointly.
#[derive(Debug, Clone)]
pub struct DependencyEdge {
    pub id: usize,
    pub out_vertices: Vec<ChannelVertex>,
    pub in_vertices: Vec<ChannelVertex>,
    pub channel_count: usize,
    /// True when the edge carries the network input image channels or the
    /// classifier output channels; frozen edges are never pruned.
    pub frozen: bool,
}

impl DependencyEdge {
    /// One producer, one consumer: a plain sequential connection.
    pub fn is_trivial(&self) -> bool {
        self.out_vertices.len() == 1 && self.in_vertices.len() == 1
    }
}

#[derive(Debug, Clone)]
pub struct DependencyHypergraph {
    edges: Vec<DependencyEdge>,
    vertex_edge: HashMap<(usize, Side), usize>,
    /// For every layer, the edge governing its output channels.
    layer_group: Vec<usize>,
}

/// Union-find with path compression and union by rank.
struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            self.parent[x] = self.find(self.parent[x]);
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.rank[ra] < self.rank[rb] {
            self.parent[ra] = rb;
        } else if self.rank[ra] > self.rank[rb] {
            self.parent[rb] = ra;
        } else {
            self.parent[rb] = ra;
            self.rank[ra] += 1;
        }
    }
}

/// Build the hypergraph for a validated graph.
pub fn build_hypergraph(g: &NetworkGraph) -> Result<DependencyHypergraph> {
    // Enumerate vertices.
    let mut verts: Vec<ChannelVertex> = Vec::new();
    let mut vidx: HashMap<(usize, Side), usize> = HashMap::new();
    let push = |verts: &mut Vec<ChannelVertex>,
                    vidx: &mut HashMap<(usize, Side), usize>,
                    layer: usize,
                    side: Side,
                    channels: usize| {
        vidx.insert((layer, side), verts.len());
        verts.push(ChannelVertex {
            layer,
            side,
            channel_count: channels,
        });
    };
    for (i, l) in g.layers().iter().enumerate() {
        match &l.kind {
            LayerKind::Input { channels } => push(&mut verts, &mut vidx, i, Side::Out, *channels),
            LayerKind::Output => push(&mut verts, &mut vidx, i, Side::In, g.channels_out(i)),
            LayerKind::Conv {
                in_channels,
                out_channels,
                ..
            } => {
                push(&mut verts, &mut vidx, i, Side::In, *in_channels);
                push(&mut verts, &mut vidx, i, Side::Out, *out_channels);
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                push(&mut verts, &mut vidx, i, Side::In, *in_features);
                push(&mut verts, &mut vidx, i, Side::Out, *out_features);
            }
            _ => {}
        }
    }

    let mut uf = UnionFind::new(verts.len());
    // token[i]: representative vertex of the channel group flowing out of
    // layer i.
    let mut token: Vec<usize> = vec![usize::MAX; g.len()];
    for (i, l) in g.layers().iter().enumerate() {
        let preds = g.preds(i);
        match &l.kind {
            LayerKind::Input { .. } => token[i] = vidx[&(i, Side::Out)],
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. } => {
                uf.union(vidx[&(i, Side::In)], token[preds[0]]);
                token[i] = vidx[&(i, Side::Out)];
            }
            LayerKind::Output => {
                uf.union(vidx[&(i, Side::In)], token[preds[0]]);
                token[i] = vidx[&(i, Side::In)];
            }
            LayerKind::Add => {
                for &p in &preds[1..] {
                    uf.union(token[preds[0]], token[p]);
                }
                token[i] = token[preds[0]];
            }
            _ => token[i] = token[preds[0]],
        }
    }

    // Collect classes into edges, canonically ordered by the smallest
    // (topological layer index, side) of any member.
    let mut classes: HashMap<usize, Vec<usize>> = HashMap::new();
    for v in 0..verts.len() {
        let root = uf.find(v);
        classes.entry(root).or_default().push(v);
    }
    let mut groups: Vec<Vec<usize>> = classes.into_values().collect();
    let sort_key = |v: usize| (verts[v].layer, verts[v].side);
    for members in &mut groups {
        members.sort_by_key(|&v| sort_key(v));
    }
    groups.sort_by_key(|members| sort_key(members[0]));

    let input_layer = g.input_layer();
    let output_layer = g.output_layer();
    let mut edges = Vec::with_capacity(groups.len());
    let mut vertex_edge = HashMap::new();
    for (id, members) in groups.into_iter().enumerate() {
        let channel_count = verts[members[0]].channel_count;
        for &m in &members {
            if verts[m].channel_count != channel_count {
                return Err(GatorError::Hypergraph(format!(
                    "vertices with differing channel counts forced into one edge: \
                     `{}`.{:?} has {} channels, group has {}",
                    g.layer(verts[m].layer).id,
                    verts[m].side,
                    verts[m].channel_count,
                    channel_count
                )));
            }
            vertex_edge.insert((verts[m].layer, verts[m].side), id);
        }
        let frozen = members
            .iter()
            .any(|&m| verts[m].layer == input_layer || verts[m].layer == output_layer);
        let (out_v, in_v): (Vec<_>, Vec<_>) = members
            .iter()
            .map(|&m| verts[m])
            .partition(|v| v.side == Side::Out);
        edges.push(DependencyEdge {
            id,
            out_vertices: out_v,
            in_vertices: in_v,
            channel_count,
            frozen,
        });
    }

    let layer_group = (0..g.len())
        .map(|i| vertex_edge[&(verts[uf.find(token[i])].layer, verts[uf.find(token[i])].side)])
        .collect();

    Ok(DependencyHypergraph {
        edges,
        vertex_edge,
        layer_group,
    })
}

impl DependencyHypergraph {
    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Result<&DependencyEdge> {
        self.edges.get(id).ok_or(GatorError::UnknownEdge(id))
    }

    /// Edge containing the given vertex.
    pub fn edge_of(&self, layer: usize, side: Side) -> Result<usize> {
        self.vertex_edge
            .get(&(layer, side))
            .copied()
            .ok_or_else(|| GatorError::UnknownVertex(format!("layer index {layer} side {side:?}")))
    }

    /// Edge containing the named layer's vertex.
    pub fn edge_of_id(&self, g: &NetworkGraph, id: &str, side: Side) -> Result<usize> {
        let layer = g
            .index_of(id)
            .ok_or_else(|| GatorError::UnknownVertex(id.to_string()))?;
        self.edge_of(layer, side)
    }

    /// Edge governing the output channels of layer `i` (any layer kind).
    pub fn layer_output_edge(&self, i: usize) -> usize {
        self.layer_group[i]
    }

    /// Non-frozen edges in canonical order.
    pub fn prunable_edges(&self) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.id)
            .collect()
    }

    /// Conv/fully-connected members of an edge as (layer index, side).
    pub fn member_weighted_layers(&self, g: &NetworkGraph, edge: usize) -> Vec<(usize, Side)> {
        let e = &self.edges[edge];
        e.out_vertices
            .iter()
            .chain(e.in_vertices.iter())
            .filter(|v| {
                matches!(
                    g.layer(v.layer).kind,
                    LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
                )
            })
            .map(|v| (v.layer, v.side))
            .collect()
    }

    /// Whether pruning an edge to zero channels still leaves an information
    /// path from input to output (a residual branch parallel to a highway).
    /// Trunk edges are not removable and keep a one-channel floor.
    pub fn edge_removable(&self, g: &NetworkGraph, edge: usize) -> bool {
        let blocked: Vec<(usize, Side)> = self.member_weighted_layers(g, edge);
        let is_blocked = |layer: usize| blocked.iter().any(|&(l, _)| l == layer);
        let mut reach = vec![false; g.len()];
        for i in 0..g.len() {
            let layer = g.layer(i);
            reach[i] = match &layer.kind {
                LayerKind::Input { .. } => true,
                LayerKind::Conv { .. } | LayerKind::FullyConnected { .. } => {
                    !is_blocked(i) && reach[g.preds(i)[0]]
                }
                LayerKind::Add => g.preds(i).iter().any(|&p| reach[p]),
                _ => reach[g.preds(i)[0]],
            };
        }
        reach[g.output_layer()]
    }

    /// Total vertex count (partition invariant: edges cover each exactly once).
    pub fn vertex_count(&self) -> usize {
        self.vertex_edge.len()
    }
}
