//! Exact capacity-constrained assignment.
//!
//! Maximize Σ_i score[i][π(i)] subject to every refugee being placed once
//! and location t receiving at most c_t refugees. The constraint matrix is
//! a transportation polytope, so min-cost flow on
//! source → refugee → location → sink (arc costs −score) returns an integral
//! optimum. Refugees are routed one at a time along shortest augmenting
//! paths under Johnson potentials; a final pass moves each refugee, in
//! index order, to the lowest location any optimum allows, which makes the
//! result the lexicographically smallest optimal assignment.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{Read, Write};
use thiserror::Error;

use crate::seeds::digest_hex;
use crate::tabular::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("infeasible: total capacity {capacity} is below {n} refugees")]
    Infeasible { capacity: usize, n: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("score at row {row}, column {col} is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("instance file: {0}")]
    Format(String),
}

impl From<csv::Error> for AssignError {
    fn from(err: csv::Error) -> Self {
        AssignError::Format(err.to_string())
    }
}

/// Dense location choice per refugee; the one-hot π_it is implied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matching {
    assignment: Vec<usize>,
}

impl Matching {
    pub fn new(assignment: Vec<usize>) -> Self {
        Self { assignment }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn counts(&self, n_locations: usize) -> Vec<usize> {
        let mut counts = vec![0; n_locations];
        for &t in &self.assignment {
            if t < n_locations {
                counts[t] += 1;
            }
        }
        counts
    }

    pub fn is_feasible(&self, capacities: &[usize]) -> bool {
        self.assignment.iter().all(|&t| t < capacities.len())
            && self.counts(capacities.len()).iter().zip(capacities).all(|(n, c)| n <= c)
    }

    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.assignment.iter().flat_map(|&t| (t as u64).to_le_bytes()).collect();
        digest_hex(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentInstance {
    scores: Vec<Vec<f64>>,
    capacities: Vec<usize>,
}

impl AssignmentInstance {
    pub fn new(scores: Vec<Vec<f64>>, capacities: Vec<usize>) -> Result<Self, AssignError> {
        let l = capacities.len();
        for (i, row) in scores.iter().enumerate() {
            if row.len() != l {
                return Err(AssignError::Shape(format!("row {i} has {} scores for {l} locations", row.len())));
            }
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(AssignError::NonFinite { row: i, col });
            }
        }
        let capacity: usize = capacities.iter().sum();
        if capacity < scores.len() {
            return Err(AssignError::Infeasible {
                capacity,
                n: scores.len(),
            });
        }
        Ok(Self { scores, capacities })
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    pub fn n_refugees(&self) -> usize {
        self.scores.len()
    }

    pub fn n_locations(&self) -> usize {
        self.capacities.len()
    }

    /// Σ_i score[i][π(i)], summed in refugee order.
    pub fn objective(&self, matching: &Matching) -> f64 {
        self.scores.iter().zip(matching.assignment()).map(|(row, &t)| row[t]).sum()
    }

    /// Write the capacities as the first CSV record, then one record of
    /// scores per refugee.
    pub fn dump<W: Write>(&self, writer: W) -> Result<(), AssignError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(self.capacities.iter().map(|c| c.to_string()))?;
        for row in &self.scores {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| AssignError::Format(e.to_string()))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, AssignError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut records = r.records();
        let first = records.next().ok_or_else(|| AssignError::Format("missing capacity line".into()))??;
        let capacities = first
            .iter()
            .map(|f| f.trim().parse::<usize>().map_err(|e| AssignError::Format(format!("capacity `{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut scores = Vec::new();
        for rec in records {
            let rec = rec?;
            scores.push(
                rec.iter()
                    .map(|f| f.trim().parse::<f64>().map_err(|e| AssignError::Format(format!("score `{f}`: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Self::new(scores, capacities)
    }
}

/// c_t = number of logged placements at t.
pub fn capacities_from_observed(dataset: &Dataset) -> Vec<usize> {
    let mut caps = vec![0; dataset.n_locations()];
    for &t in dataset.locations() {
        caps[t] += 1;
    }
    caps
}

/// Dual potentials certifying optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub refugee: Vec<f64>,
    pub location: Vec<f64>,
    pub sink: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub matching: Matching,
    pub objective: f64,
    pub potentials: Potentials,
}

impl Solution {
    /// Smallest reduced cost over every residual arc; nonnegative (up to
    /// rounding) certifies optimality.
    pub fn min_reduced_cost(&self, instance: &AssignmentInstance) -> f64 {
        let p = &self.potentials;
        let counts = self.matching.counts(instance.n_locations());
        let mut min = f64::INFINITY;
        for (i, row) in instance.scores.iter().enumerate() {
            let assigned = self.matching.assignment[i];
            for (t, &s) in row.iter().enumerate() {
                let forward = -s + p.refugee[i] - p.location[t];
                min = min.min(if t == assigned { -forward } else { forward });
            }
        }
        for (t, &c) in instance.capacities.iter().enumerate() {
            let forward = p.location[t] - p.sink;
            if counts[t] < c {
                min = min.min(forward);
            }
            if counts[t] > 0 {
                min = min.min(-forward);
            }
        }
        min
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, then on node index.
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct FlowState<'a> {
    inst: &'a AssignmentInstance,
    assign: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
    pot: Vec<f64>,
    tol: f64,
}

impl<'a> FlowState<'a> {
    fn new(inst: &'a AssignmentInstance) -> Self {
        let n = inst.n_refugees();
        let l = inst.n_locations();
        let mut pot = vec![0.0; n + l + 1];
        for t in 0..l {
            pot[n + t] = inst.scores.iter().map(|row| -row[t]).fold(f64::INFINITY, f64::min);
            if n == 0 {
                pot[n + t] = 0.0;
            }
        }
        pot[n + l] = pot[n..n + l].iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let max_abs = inst.scores.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        Self {
            inst,
            assign: vec![None; n],
            members: vec![Vec::new(); l],
            pot,
            tol: 1e-9 * max_abs,
        }
    }

    fn n(&self) -> usize {
        self.inst.n_refugees()
    }

    fn sink(&self) -> usize {
        self.n() + self.inst.n_locations()
    }

    /// Reduced cost of refugee i → location t (forward arc).
    fn rc_assign(&self, i: usize, t: usize) -> f64 {
        -self.inst.scores[i][t] + self.pot[i] - self.pot[self.n() + t]
    }

    /// Reduced cost of location t → sink (forward arc).
    fn rc_sink(&self, t: usize) -> f64 {
        self.pot[self.n() + t] - self.pot[self.sink()]
    }

    fn move_refugee(&mut self, i: usize, t: usize) {
        if let Some(old) = self.assign[i] {
            let pos = self.members[old].iter().position(|&j| j == i).expect("member lists track assignments");
            self.members[old].swap_remove(pos);
        }
        self.assign[i] = Some(t);
        self.members[t].push(i);
    }

    fn augment(&mut self, r: usize) {
        let n = self.n();
        let l = self.inst.n_locations();
        let sink = self.sink();
        let mut dist = vec![f64::INFINITY; sink + 1];
        let mut prev = vec![usize::MAX; sink + 1];
        let mut done = vec![false; sink + 1];
        let mut heap = BinaryHeap::new();
        dist[r] = 0.0;
        heap.push(HeapItem { dist: 0.0, node: r });

        while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == sink {
                break;
            }
            let mut relax = |v: usize, rc: f64, heap: &mut BinaryHeap<HeapItem>| {
                let nd = d + rc.max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(HeapItem { dist: nd, node: v });
                }
            };
            if u < n {
                for t in 0..l {
                    if self.assign[u] != Some(t) {
                        relax(n + t, self.rc_assign(u, t), &mut heap);
                    }
                }
            } else {
                let t = u - n;
                if self.members[t].len() < self.inst.capacities[t] {
                    relax(sink, self.rc_sink(t), &mut heap);
                }
                for &j in &self.members[t] {
                    relax(j, -self.rc_assign(j, t), &mut heap);
                }
            }
        }
        assert!(done[sink], "feasible instances always admit an augmenting path");

        let total = dist[sink];
        for (p, &d) in self.pot.iter_mut().zip(&dist) {
            *p += d.min(total);
        }
        let mut path = vec![sink];
        while *path.last().expect("path is nonempty") != r {
            path.push(prev[*path.last().expect("path is nonempty")]);
        }
        path.reverse();
        for w in path.windows(2) {
            if w[0] < n && w[1] < sink {
                self.move_refugee(w[0], w[1] - n);
            }
        }
    }

    fn tight(&self, rc: f64) -> bool {
        rc.abs() <= self.tol
    }

    /// Breadth-first search over tight residual arcs from location `from`
    /// back to location `to`, moving only refugees with index > `fixed`.
    /// Returns the node path when one exists.
    fn tight_path(&self, fixed: usize, from: usize, to: usize) -> Option<Vec<usize>> {
        let n = self.n();
        let l = self.inst.n_locations();
        let sink = self.sink();
        let mut prev = vec![usize::MAX; sink + 1];
        let mut seen = vec![false; sink + 1];
        let mut queue = VecDeque::new();
        seen[n + from] = true;
        queue.push_back(n + from);
        while let Some(u) = queue.pop_front() {
            if u == n + to {
                let mut path = vec![u];
                while *path.last().expect("nonempty") != n + from {
                    path.push(prev[*path.last().expect("nonempty")]);
                }
                path.reverse();
                return Some(path);
            }
            let mut next = Vec::new();
            if u == sink {
                for t in 0..l {
                    if !self.members[t].is_empty() && self.tight(self.rc_sink(t)) {
                        next.push(n + t);
                    }
                }
            } else if u >= n {
                let t = u - n;
                let mut movable: Vec<usize> = self.members[t]
                    .iter()
                    .copied()
                    .filter(|&j| j > fixed && self.tight(self.rc_assign(j, t)))
                    .collect();
                movable.sort_unstable();
                next.extend(movable);
                if self.members[t].len() < self.inst.capacities[t] && self.tight(self.rc_sink(t)) {
                    next.push(sink);
                }
            } else {
                let current = self.assign[u];
                for t in 0..l {
                    if current != Some(t) && self.tight(self.rc_assign(u, t)) {
                        next.push(n + t);
                    }
                }
            }
            for v in next {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    fn lexicographic_fixup(&mut self) {
        let n = self.n();
        for i in 0..n {
            let current = self.assign[i].expect("all refugees are routed");
            for t in 0..current {
                if !self.tight(self.rc_assign(i, t)) {
                    continue;
                }
                if let Some(path) = self.tight_path(i, t, current) {
                    // Each refugee on the path leaves the location before it
                    // for the location after it.
                    for w in path.windows(3) {
                        if w[1] < n {
                            self.move_refugee(w[1], w[2] - n);
                        }
                    }
                    self.move_refugee(i, t);
                    break;
                }
            }
        }
    }
}

/// Solve exactly; returns the lexicographically smallest optimal matching
/// with its dual certificate.
pub fn solve_with_certificate(instance: &AssignmentInstance) -> Solution {
    let mut state = FlowState::new(instance);
    for r in 0..instance.n_refugees() {
        state.augment(r);
    }
    state.lexicographic_fixup();
    let n = instance.n_refugees();
    let matching = Matching::new(state.assign.iter().map(|t| t.expect("all refugees are routed")).collect());
    let objective = instance.objective(&matching);
    Solution {
        objective,
        potentials: Potentials {
            refugee: state.pot[..n].to_vec(),
            location: state.pot[n..n + instance.n_locations()].to_vec(),
            sink: state.pot[n + instance.n_locations()],
        },
        matching,
    }
}

pub fn solve(instance: &AssignmentInstance) -> (Matching, f64) {
    let s = solve_with_certificate(instance);
    (s.matching, s.objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(scores: Vec<Vec<f64>>, caps: Vec<usize>) -> AssignmentInstance {
        AssignmentInstance::new(scores, caps).unwrap()
    }

    #[test]
    fn two_by_two_example() {
        let i = inst(vec![vec![0.9, 0.1], vec![0.8, 0.7]], vec![1, 1]);
        let (m, obj) = solve(&i);
        assert_eq!(m.assignment(), &[0, 1]);
        assert!((obj - 1.6).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_give_lexicographic_matching() {
        let i = inst(vec![vec![0.5; 3]; 5], vec![2, 2, 1]);
        let s = solve_with_certificate(&i);
        assert_eq!(s.matching.assignment(), &[0, 0, 1, 1, 2]);
        assert_eq!(s.objective, 2.5);
        assert!(s.min_reduced_cost(&i) >= -1e-12);
    }

    #[test]
    fn forced_capacity() {
        let i = inst(vec![vec![0.1, 0.9, 0.5]; 4], vec![4, 0, 0]);
        assert_eq!(solve(&i).0.assignment(), &[0; 4]);
    }

    #[test]
    fn infeasible_and_malformed_instances_are_rejected() {
        assert_eq!(
            AssignmentInstance::new(vec![vec![0.0, 0.0]; 3], vec![1, 1]),
            Err(AssignError::Infeasible { capacity: 2, n: 3 })
        );
        assert!(matches!(
            AssignmentInstance::new(vec![vec![f64::NAN, 0.0]], vec![1, 1]),
            Err(AssignError::NonFinite { row: 0, col: 0 })
        ));
        assert!(AssignmentInstance::new(vec![vec![0.0]], vec![1, 1]).is_err());
    }

    #[test]
    fn dump_load_round_trip() {
        let i = inst(vec![vec![0.25, -1.5], vec![0.1, 1e-17]], vec![1, 2]);
        let mut buf = Vec::new();
        i.dump(&mut buf).unwrap();
        assert_eq!(AssignmentInstance::load(buf.as_slice()).unwrap(), i);
    }

    #[test]
    fn empty_instance() {
        let i = inst(Vec::new(), vec![0, 0]);
        let (m, obj) = solve(&i);
        assert!(m.is_empty());
        assert_eq!(obj, 0.0);
    }
}
