//! Node grouping by per-label data volume (1-D DBSCAN over log-counts) and
//! the exponentially decayed round/epoch schedule per group.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tabular::ClassDistribution;

/// One cluster of nodes holding similar amounts of a given class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeGroup {
    pub label: String,
    pub member_node_ids: Vec<usize>,
    /// Total sample count of `label` across the members.
    pub volume: usize,
}

/// Round/epoch budget for one group index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingSchedule {
    pub group_index: usize,
    pub rounds: usize,
    pub epochs: usize,
}

/// DBSCAN on the real line. Returns one cluster assignment per input point
/// (`None` marks noise, which cannot occur when `min_pts == 1`). Points are
/// processed in sorted order and cluster ids are assigned in first-seen
/// order, so the result is deterministic.
pub fn dbscan_1d(points: &[f64], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Contract("min_pts must be at least 1".into()));
    }
    let n = points.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap().then(a.cmp(&b)));

    let neighbors = |i: usize| -> Vec<usize> {
        let mut out: Vec<usize> = (0..n)
            .filter(|&j| (points[j] - points[i]).abs() <= eps)
            .collect();
        out.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap().then(a.cmp(&b)));
        out
    };

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_cluster = 0usize;

    for &i in &order {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nbrs = neighbors(i);
        if nbrs.len() < min_pts {
            continue; // noise unless later claimed as a border point
        }
        let cluster = next_cluster;
        next_cluster += 1;
        assignment[i] = Some(cluster);
        let mut queue: VecDeque<usize> = nbrs.into();
        while let Some(j) = queue.pop_front() {
            if assignment[j].is_none() {
                assignment[j] = Some(cluster);
            }
            if !visited[j] {
                visited[j] = true;
                let nn = neighbors(j);
                if nn.len() >= min_pts {
                    queue.extend(nn);
                }
            }
        }
    }

    Ok(assignment)
}

/// Group the nodes that hold `label` by clustering log(1 + count) with
/// [`dbscan_1d`]; groups come back sorted by descending volume and noise
/// points (possible only when `min_pts > 1`) become singleton groups so that
/// every data-holding node trains.
pub fn group_nodes(
    label: &str,
    dists: &[ClassDistribution],
    eps: f64,
    min_pts: usize,
) -> Result<Vec<NodeGroup>> {
    let holders: Vec<(usize, usize)> = dists
        .iter()
        .filter_map(|d| {
            let c = d.count(label);
            (c > 0).then_some((d.node_id, c))
        })
        .collect();
    if holders.is_empty() {
        return Ok(Vec::new());
    }

    let points: Vec<f64> = holders.iter().map(|&(_, c)| (1.0 + c as f64).ln()).collect();
    let assignment = dbscan_1d(&points, eps, min_pts)?;

    let n_clusters = assignment.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups: Vec<NodeGroup> = (0..n_clusters)
        .map(|_| NodeGroup {
            label: label.to_string(),
            member_node_ids: Vec::new(),
            volume: 0,
        })
        .collect();
    for (&(node, count), cluster) in holders.iter().zip(&assignment) {
        match cluster {
            Some(c) => {
                groups[*c].member_node_ids.push(node);
                groups[*c].volume += count;
            }
            None => groups.push(NodeGroup {
                label: label.to_string(),
                member_node_ids: vec![node],
                volume: count,
            }),
        }
    }
    for g in &mut groups {
        g.member_node_ids.sort_unstable();
    }
    groups.sort_by(|a, b| {
        b.volume
            .cmp(&a.volume)
            .then(a.member_node_ids[0].cmp(&b.member_node_ids[0]))
    });
    Ok(groups)
}

/// Decayed budget for one group: `ceil(init * alpha^group_index)`, never
/// below one round or one epoch.
pub fn schedule(
    r_init: usize,
    e_init: usize,
    alpha_r: f64,
    alpha_e: f64,
    group_index: usize,
) -> Result<TrainingSchedule> {
    if r_init == 0 || e_init == 0 {
        return Err(Error::Contract("R_init and E_init must be positive".into()));
    }
    if !(alpha_r > 0.0 && alpha_r <= 1.0 && alpha_e > 0.0 && alpha_e <= 1.0) {
        return Err(Error::Contract(format!(
            "decay rates must lie in (0, 1], got alpha_R={alpha_r}, alpha_E={alpha_e}"
        )));
    }
    let decayed = |init: usize, alpha: f64| -> usize {
        let v = (init as f64 * alpha.powi(group_index as i32)).ceil() as usize;
        v.max(1)
    };
    Ok(TrainingSchedule {
        group_index,
        rounds: decayed(r_init, alpha_r),
        epochs: decayed(e_init, alpha_e),
    })
}
