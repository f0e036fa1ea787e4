//! Loopless route enumeration (Yen's deviation-path algorithm) over the
//! truck-free BPR metric.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use super::{InstanceError, Network, OdPair};
use crate::assignment::link_time;

/// Truck travel time of a route when no trucks are loaded.
pub fn free_flow_truck_time(net: &Network, links: &[usize], pce: f64) -> f64 {
    links
        .iter()
        .map(|&l| link_time(net.link(l), 0.0, pce))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    cost: f64,
    links: Vec<usize>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, link sequence)
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.links.cmp(&self.links))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path from `from` to `to` avoiding banned links and nodes.
/// Ties between equal-cost labels go to the lexicographically smaller
/// link sequence so the result does not depend on heap internals.
fn dijkstra(
    net: &Network,
    weights: &[f64],
    from: usize,
    to: usize,
    banned_links: &BTreeSet<usize>,
    banned_nodes: &[bool],
) -> Option<(f64, Vec<usize>)> {
    let n = net.node_count();
    let mut dist = vec![f64::INFINITY; n + 1];
    let mut pred: Vec<Option<usize>> = vec![None; n + 1];
    let mut done = vec![false; n + 1];
    dist[from] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Candidate {
        cost: 0.0,
        links: vec![from],
    });
    while let Some(Candidate { cost, links }) = heap.pop() {
        let node = links[0];
        if done[node] {
            continue;
        }
        done[node] = true;
        if node == to {
            break;
        }
        for &l in net.outgoing(node) {
            if banned_links.contains(&l) {
                continue;
            }
            let head = net.link(l).head;
            if banned_nodes[head] || done[head] {
                continue;
            }
            let nd = cost + weights[l];
            let better = nd < dist[head] || (nd == dist[head] && pred[head].is_some_and(|p| l < p));
            if better {
                dist[head] = nd;
                pred[head] = Some(l);
                heap.push(Candidate {
                    cost: nd,
                    links: vec![head],
                });
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = Vec::new();
    let mut at = to;
    while at != from {
        let l = pred[at]?;
        path.push(l);
        at = net.link(l).tail;
    }
    path.reverse();
    Some((dist[to], path))
}

fn path_cost(weights: &[f64], links: &[usize]) -> f64 {
    links.iter().map(|&l| weights[l]).sum()
}

/// The `k` least congested loopless routes of an OD pair, ranked by
/// truck-free BPR time `sum_l C_l(x_lp, 0)`; ties go to the
/// lexicographically smaller sequence of link positions. Returns fewer
/// than `k` routes when fewer simple paths exist.
pub fn enumerate_k_least_congested(
    net: &Network,
    od: OdPair,
    k: usize,
    pce: f64,
) -> Result<Vec<Vec<usize>>, InstanceError> {
    let weights: Vec<f64> = net.links().iter().map(|l| link_time(l, 0.0, pce)).collect();
    let no_nodes = vec![false; net.node_count() + 1];
    let Some((_, first)) = dijkstra(
        net,
        &weights,
        od.origin,
        od.destination,
        &BTreeSet::new(),
        &no_nodes,
    ) else {
        return Err(InstanceError::NoPath {
            origin: od.origin,
            destination: od.destination,
        });
    };
    if k == 0 {
        return Ok(Vec::new());
    }

    let mut accepted: Vec<Vec<usize>> = vec![first];
    let mut pending = BinaryHeap::new();
    let mut queued: BTreeSet<Vec<usize>> = BTreeSet::new();

    while accepted.len() < k {
        let last = accepted.last().expect("nonempty").clone();
        let mut nodes = vec![od.origin];
        nodes.extend(last.iter().map(|&l| net.link(l).head));

        for spur_idx in 0..last.len() {
            let spur_node = nodes[spur_idx];
            let root = &last[..spur_idx];
            let mut banned_links = BTreeSet::new();
            for p in &accepted {
                if p.len() > spur_idx && p[..spur_idx] == *root {
                    banned_links.insert(p[spur_idx]);
                }
            }
            let mut banned_nodes = vec![false; net.node_count() + 1];
            for &n in &nodes[..spur_idx] {
                banned_nodes[n] = true;
            }
            if let Some((_, spur)) = dijkstra(
                net,
                &weights,
                spur_node,
                od.destination,
                &banned_links,
                &banned_nodes,
            ) {
                let mut links = root.to_vec();
                links.extend(spur);
                if !queued.contains(&links) && !accepted.contains(&links) {
                    queued.insert(links.clone());
                    pending.push(Candidate {
                        cost: path_cost(&weights, &links),
                        links,
                    });
                }
            }
        }
        match pending.pop() {
            Some(next) => accepted.push(next.links),
            None => break,
        }
    }
    // Yen emits in cost order up to float noise in the accumulated sums;
    // a final stable sort pins the order to exact recomputed costs.
    let mut ranked: Vec<(f64, Vec<usize>)> = accepted
        .into_iter()
        .map(|p| (path_cost(&weights, &p), p))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(ranked.into_iter().map(|(_, p)| p).collect())
}
