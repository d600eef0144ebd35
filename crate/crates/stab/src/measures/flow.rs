//! Dense transportation problem solved as integer min-cost flow. Masses are
//! scaled by lcm(source_n, target_n) so every supply and demand is a whole
//! number of units; successive shortest augmenting paths (Bellman-Ford on the
//! residual graph) then terminate with an exact vertex solution.

use crate::error::{Result, StabError};

const UNIT_CAP: u64 = 20_000_000;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn lcm_units(sn: usize, tn: usize) -> Result<u64> {
    let (a, b) = (sn as u64, tn as u64);
    let units = a / gcd(a, b) * b;
    if units > UNIT_CAP {
        return Err(StabError::InstanceTooLarge(format!(
            "lcm({sn}, {tn}) = {units} mass units exceeds the supported cap"
        )));
    }
    Ok(units)
}

/// Returns (source, target, units) triples with positive flow; `units / lcm`
/// is the transported mass. Cost matrix is row-major `sn x tn`.
pub(crate) fn solve_transport_lp(cost: &[f64], sn: usize, tn: usize) -> Result<Vec<(usize, usize, u64)>> {
    assert_eq!(cost.len(), sn * tn);
    let units = lcm_units(sn, tn)?;
    let supply_each = units / sn as u64;
    let demand_each = units / tn as u64;

    let mut flow = vec![0u64; sn * tn];
    let mut rem_supply = vec![supply_each; sn];
    let mut rem_demand = vec![demand_each; tn];
    let mut shipped = 0u64;

    // Node layout: sources 0..sn, targets sn..sn+tn.
    let nodes = sn + tn;
    let mut dist = vec![0.0_f64; nodes];
    let mut parent = vec![usize::MAX; nodes];

    while shipped < units {
        for i in 0..sn {
            dist[i] = if rem_supply[i] > 0 { 0.0 } else { f64::INFINITY };
            parent[i] = usize::MAX;
        }
        for j in 0..tn {
            dist[sn + j] = f64::INFINITY;
            parent[sn + j] = usize::MAX;
        }
        // Bellman-Ford over the residual bipartite graph. Relaxations must
        // improve by a strict epsilon: exact-tie alternates cannot form
        // parent cycles, but floating-point rounding can, and a cyclic
        // parent chain would never reach a path origin below.
        let improves = |nd: f64, cur: f64| nd < cur - 1e-12 * (1.0 + cur.abs().min(1e12));
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..sn {
                if dist[i].is_finite() {
                    for j in 0..tn {
                        let nd = dist[i] + cost[i * tn + j];
                        if !dist[sn + j].is_finite() || improves(nd, dist[sn + j]) {
                            dist[sn + j] = nd;
                            parent[sn + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..tn {
                if dist[sn + j].is_finite() {
                    for i in 0..sn {
                        if flow[i * tn + j] > 0 {
                            let nd = dist[sn + j] - cost[i * tn + j];
                            if !dist[i].is_finite() || improves(nd, dist[i]) {
                                dist[i] = nd;
                                parent[i] = sn + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Cheapest reachable target with unmet demand; smallest index on ties.
        let mut sink = usize::MAX;
        for j in 0..tn {
            if rem_demand[j] > 0
                && dist[sn + j].is_finite()
                && (sink == usize::MAX || dist[sn + j] < dist[sn + sink])
            {
                sink = j;
            }
        }
        if sink == usize::MAX {
            return Err(StabError::MarginalMismatch(
                "transportation network disconnected".into(),
            ));
        }

        // Walk back to a supplied source, collecting the bottleneck. The
        // walk is capped defensively; a converged relaxation cannot cycle.
        let mut bottleneck = rem_demand[sink];
        let mut node = sn + sink;
        let mut hops = 0;
        loop {
            hops += 1;
            if hops > 2 * nodes + 2 {
                return Err(StabError::MarginalMismatch(
                    "augmenting-path trace cycled; relaxation inconsistent".into(),
                ));
            }
            let p = parent[node];
            if node >= sn {
                // arrived via forward arc p -> node
                if parent[p] == usize::MAX {
                    bottleneck = bottleneck.min(rem_supply[p]);
                    break;
                }
            } else {
                // arrived via backward arc (p is a target): bounded by flow
                bottleneck = bottleneck.min(flow[node * tn + (p - sn)]);
            }
            node = p;
        }

        let mut node = sn + sink;
        loop {
            let p = parent[node];
            if node >= sn {
                flow[p * tn + (node - sn)] += bottleneck;
                if parent[p] == usize::MAX {
                    rem_supply[p] -= bottleneck;
                    break;
                }
            } else {
                flow[node * tn + (p - sn)] -= bottleneck;
            }
            node = p;
        }
        rem_demand[sink] -= bottleneck;
        shipped += bottleneck;
    }

    let mut out = Vec::new();
    for i in 0..sn {
        for j in 0..tn {
            if flow[i * tn + j] > 0 {
                out.push((i, j, flow[i * tn + j]));
            }
        }
    }
    Ok(out)
}
