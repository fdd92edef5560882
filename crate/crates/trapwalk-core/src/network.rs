//! Exact linear-algebra oracles on finite weighted networks: stationary
//! measures, absorbing-chain exit distributions, killed Green functions and
//! expected edge crossings, effective resistance, and the crossing bound
//! used to control escape times from trap neighbourhoods.
//!
//! Every operation reduces to one symmetric positive definite solve with a
//! killed Laplacian A = diag(pi) - C (rows and columns of the boundary
//! removed), done densely for small networks and by Jacobi-preconditioned
//! conjugate gradients above the dense cutoff.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Networks at most this large are solved by dense LU.
const DENSE_CUTOFF: usize = 2000;

/// Errors from network construction and oracle queries.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum NetError {
    #[error("vertex id {0} out of range (network has {1} vertices)")]
    BadVertex(usize, usize),
    #[error("self-loop at vertex {0} is not allowed")]
    SelfLoop(usize),
    #[error("edge {0}-{1} has non-positive conductance {2}")]
    BadConductance(usize, usize, f64),
    #[error("network is not connected")]
    Disconnected,
    #[error("operation requires {0}")]
    Precondition(&'static str),
    #[error("linear solve failed to converge")]
    Singular,
    #[error("fixture parse error at line {0}: {1}")]
    Parse(usize, String),
}

/// A finite weighted graph with an optional distinguished absorbing vertex.
///
/// Parallel edges are allowed; self-loops are not. The textual fixture
/// format accepted by [`FiniteNetwork::parse`] is line-oriented:
///
/// ```text
/// # comment
/// vertices 3
/// edge 0 1 1.0
/// edge 1 2 2.5
/// absorbing 2
/// ```
#[derive(Clone, Debug)]
pub struct FiniteNetwork {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    absorbing: Option<usize>,
    /// pi(x) = sum of conductances incident to x.
    weight: Vec<f64>,
    /// Incidence lists: vertex -> (edge index, other endpoint).
    incident: Vec<Vec<(usize, usize)>>,
}

impl FiniteNetwork {
    /// Validates and builds a network. Rejects out-of-range ids, self-loops,
    /// non-positive conductances, and disconnected graphs.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize, f64)>,
        absorbing: Option<usize>,
    ) -> Result<Self, NetError> {
        if n == 0 {
            return Err(NetError::Precondition("at least one vertex"));
        }
        for &(u, v, c) in &edges {
            if u >= n {
                return Err(NetError::BadVertex(u, n));
            }
            if v >= n {
                return Err(NetError::BadVertex(v, n));
            }
            if u == v {
                return Err(NetError::SelfLoop(u));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(NetError::BadConductance(u, v, c));
            }
        }
        if let Some(a) = absorbing {
            if a >= n {
                return Err(NetError::BadVertex(a, n));
            }
        }
        let mut weight = vec![0.0; n];
        let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (i, &(u, v, c)) in edges.iter().enumerate() {
            weight[u] += c;
            weight[v] += c;
            incident[u].push((i, v));
            incident[v].push((i, u));
        }
        // Connectivity.
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        let mut reached = 1;
        while let Some(x) = queue.pop_front() {
            for &(_, y) in &incident[x] {
                if !seen[y] {
                    seen[y] = true;
                    reached += 1;
                    queue.push_back(y);
                }
            }
        }
        if reached != n {
            return Err(NetError::Disconnected);
        }
        Ok(FiniteNetwork {
            n,
            edges,
            absorbing,
            weight,
            incident,
        })
    }

    /// Parses the textual fixture format (see the type-level docs).
    pub fn parse(text: &str) -> Result<Self, NetError> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        let mut absorbing = None;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap();
            let mut next_tok = |what: &str| {
                parts
                    .next()
                    .ok_or_else(|| NetError::Parse(lineno, format!("missing {what}")))
            };
            match head {
                "vertices" => {
                    let v: usize = next_tok("vertex count")?
                        .parse()
                        .map_err(|e| NetError::Parse(lineno, format!("vertex count: {e}")))?;
                    n = Some(v);
                }
                "edge" => {
                    let u: usize = next_tok("endpoint")?
                        .parse()
                        .map_err(|e| NetError::Parse(lineno, format!("endpoint: {e}")))?;
                    let v: usize = next_tok("endpoint")?
                        .parse()
                        .map_err(|e| NetError::Parse(lineno, format!("endpoint: {e}")))?;
                    let c: f64 = next_tok("conductance")?
                        .parse()
                        .map_err(|e| NetError::Parse(lineno, format!("conductance: {e}")))?;
                    edges.push((u, v, c));
                }
                "absorbing" => {
                    let a: usize = next_tok("vertex id")?
                        .parse()
                        .map_err(|e| NetError::Parse(lineno, format!("vertex id: {e}")))?;
                    absorbing = Some(a);
                }
                other => {
                    return Err(NetError::Parse(lineno, format!("unknown directive '{other}'")));
                }
            }
        }
        let n = n.ok_or(NetError::Parse(0, "missing 'vertices' line".into()))?;
        FiniteNetwork::new(n, edges, absorbing)
    }

    /// Number of vertices.
    pub fn len(&self) -> usize {
        self.n
    }

    /// True when the network has no vertices (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The edge list in insertion order.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// The distinguished absorbing vertex, if set.
    pub fn absorbing(&self) -> Option<usize> {
        self.absorbing
    }

    /// Total conductance between two vertices (sums parallel edges).
    pub fn conductance_between(&self, u: usize, v: usize) -> f64 {
        self.incident[u]
            .iter()
            .filter(|&&(_, y)| y == v)
            .map(|&(i, _)| self.edges[i].2)
            .sum()
    }

    /// One-step transition probability weight pi(x).
    pub fn vertex_weight(&self, x: usize) -> f64 {
        self.weight[x]
    }

    /// Unnormalized stationary measure pi(x) = sum of incident conductances.
    /// Only meaningful without absorption.
    pub fn stationary_measure(&self) -> Result<Vec<f64>, NetError> {
        if self.absorbing.is_some() {
            return Err(NetError::Precondition("no absorbing vertex"));
        }
        Ok(self.weight.clone())
    }

    /// Solves A u = e_source where A is the Laplacian with the `killed`
    /// rows/columns removed (u = 0 there). A is SPD because the graph is
    /// connected and at least one vertex is killed.
    fn solve_killed(&self, killed: &[bool], source: usize) -> Result<Vec<f64>, NetError> {
        debug_assert!(!killed[source]);
        let alive: Vec<usize> = (0..self.n).filter(|&v| !killed[v]).collect();
        if alive.is_empty() {
            return Err(NetError::Precondition("a non-killed vertex"));
        }
        let mut index = vec![usize::MAX; self.n];
        for (i, &v) in alive.iter().enumerate() {
            index[v] = i;
        }
        let m = alive.len();
        let mut rhs = vec![0.0; m];
        rhs[index[source]] = 1.0;
        let u_alive = if m <= DENSE_CUTOFF {
            let mut a = DMatrix::<f64>::zeros(m, m);
            for (i, &v) in alive.iter().enumerate() {
                a[(i, i)] = self.weight[v];
            }
            for &(u, v, c) in &self.edges {
                if !killed[u] && !killed[v] {
                    let (iu, iv) = (index[u], index[v]);
                    a[(iu, iv)] -= c;
                    a[(iv, iu)] -= c;
                }
            }
            let b = DVector::from_vec(rhs);
            let lu = a.lu();
            match lu.solve(&b) {
                Some(x) => x.iter().copied().collect::<Vec<f64>>(),
                None => return Err(NetError::Singular),
            }
        } else {
            self.cg_killed(killed, &index, &alive, &rhs)?
        };
        let mut u = vec![0.0; self.n];
        for (i, &v) in alive.iter().enumerate() {
            u[v] = u_alive[i];
        }
        Ok(u)
    }

    /// Jacobi-preconditioned conjugate gradients on the killed Laplacian,
    /// matrix-free over the edge list.
    fn cg_killed(
        &self,
        killed: &[bool],
        index: &[usize],
        alive: &[usize],
        rhs: &[f64],
    ) -> Result<Vec<f64>, NetError> {
        let m = alive.len();
        let matvec = |x: &[f64], out: &mut [f64]| {
            for (i, &v) in alive.iter().enumerate() {
                out[i] = self.weight[v] * x[i];
            }
            for &(u, v, c) in &self.edges {
                if !killed[u] && !killed[v] {
                    let (iu, iv) = (index[u], index[v]);
                    out[iu] -= c * x[iv];
                    out[iv] -= c * x[iu];
                }
            }
        };
        let precond: Vec<f64> = alive.iter().map(|&v| 1.0 / self.weight[v]).collect();
        let mut x = vec![0.0; m];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(ri, pi)| ri * pi).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let rhs_norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let tol = 1e-13 * rhs_norm;
        let mut ap = vec![0.0; m];
        let max_iter = 40 * m + 200;
        for _ in 0..max_iter {
            let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol {
                return Ok(x);
            }
            matvec(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(NetError::Singular);
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..m {
                z[i] = r[i] * precond[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * 100.0 {
            Ok(x)
        } else {
            Err(NetError::Singular)
        }
    }

    /// Killed Green function row: G(start, x) = expected visits to x
    /// (counting time 0) before hitting any vertex of `boundary`.
    pub fn green_row(&self, start: usize, boundary: &[usize]) -> Result<Vec<f64>, NetError> {
        if boundary.is_empty() {
            return Err(NetError::Precondition("nonempty boundary"));
        }
        let mut killed = vec![false; self.n];
        for &b in boundary {
            if b >= self.n {
                return Err(NetError::BadVertex(b, self.n));
            }
            killed[b] = true;
        }
        if killed[start] {
            return Err(NetError::Precondition("start outside the boundary"));
        }
        let u = self.solve_killed(&killed, start)?;
        Ok((0..self.n).map(|x| self.weight[x] * u[x]).collect())
    }

    /// Absorption probabilities: entry i is the probability that the walk
    /// from `start` hits `absorbing_set[i]` first among the set. The set
    /// must be nonempty, duplicate-free, and must not contain `start`.
    pub fn exit_distribution(
        &self,
        start: usize,
        absorbing_set: &[usize],
    ) -> Result<Vec<f64>, NetError> {
        if absorbing_set.is_empty() {
            return Err(NetError::Precondition("nonempty absorbing set"));
        }
        let mut killed = vec![false; self.n];
        for &a in absorbing_set {
            if a >= self.n {
                return Err(NetError::BadVertex(a, self.n));
            }
            if killed[a] {
                return Err(NetError::Precondition("duplicate-free absorbing set"));
            }
            killed[a] = true;
        }
        if killed[start] {
            return Err(NetError::Precondition("start outside the absorbing set"));
        }
        let u = self.solve_killed(&killed, start)?;
        // P[absorbed at a] = sum over edges (x, a, c) with x alive of c u(x).
        let mut probs = vec![0.0; absorbing_set.len()];
        for (slot, &a) in absorbing_set.iter().enumerate() {
            let mut p = 0.0;
            for &(i, other) in &self.incident[a] {
                if !killed[other] {
                    p += self.edges[i].2 * u[other];
                }
            }
            probs[slot] = p;
        }
        Ok(probs)
    }

    /// Expected number of traversals (both directions) of the edges whose
    /// indices are in `counted`, by the walk from `start` before it hits the
    /// distinguished absorbing vertex.
    pub fn expected_crossings(&self, start: usize, counted: &[usize]) -> Result<f64, NetError> {
        let delta = self
            .absorbing
            .ok_or(NetError::Precondition("a distinguished absorbing vertex"))?;
        if start == delta {
            return Err(NetError::Precondition("start distinct from the absorbing vertex"));
        }
        let green = self.green_row(start, &[delta])?;
        let mut total = 0.0;
        for &i in counted {
            if i >= self.edges.len() {
                return Err(NetError::Precondition("edge index in range"));
            }
            let (u, v, c) = self.edges[i];
            if u != delta {
                total += green[u] * c / self.weight[u];
            }
            if v != delta {
                total += green[v] * c / self.weight[v];
            }
        }
        Ok(total)
    }

    /// Right-hand side of the crossing bound: (2 / c(start, delta)) times the
    /// total counted conductance. `start` must neighbour the absorbing
    /// vertex. Parallel start-delta edges are merged (the tightest reading).
    pub fn crossing_bound(&self, start: usize, counted: &[usize]) -> Result<f64, NetError> {
        let delta = self
            .absorbing
            .ok_or(NetError::Precondition("a distinguished absorbing vertex"))?;
        let c_sd = self.conductance_between(start, delta);
        if c_sd <= 0.0 {
            return Err(NetError::Precondition("start adjacent to the absorbing vertex"));
        }
        let mut sum = 0.0;
        for &i in counted {
            if i >= self.edges.len() {
                return Err(NetError::Precondition("edge index in range"));
            }
            sum += self.edges[i].2;
        }
        Ok(2.0 * sum / c_sd)
    }

    /// Two-point effective resistance via harmonic voltages: ground b,
    /// inject unit current at a, read the voltage at a.
    pub fn effective_resistance(&self, a: usize, b: usize) -> Result<f64, NetError> {
        if a >= self.n {
            return Err(NetError::BadVertex(a, self.n));
        }
        if b >= self.n {
            return Err(NetError::BadVertex(b, self.n));
        }
        if a == b {
            return Err(NetError::Precondition("two distinct vertices"));
        }
        let mut killed = vec![false; self.n];
        killed[b] = true;
        let u = self.solve_killed(&killed, a)?;
        Ok(u[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{keyed_hash, unit_from_hash};
    use approx::assert_abs_diff_eq;

    fn triangle_absorbing() -> FiniteNetwork {
        // Vertices: 0 = y, 1 = z, 2 = delta; unit conductances.
        FiniteNetwork::new(
            3,
            vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)],
            Some(2),
        )
        .unwrap()
    }

    #[test]
    fn stationary_fixtures() {
        let single = FiniteNetwork::new(2, vec![(0, 1, 3.0)], None).unwrap();
        assert_eq!(single.stationary_measure().unwrap(), vec![3.0, 3.0]);
        let tri = FiniteNetwork::new(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], None).unwrap();
        assert_eq!(tri.stationary_measure().unwrap(), vec![2.0, 2.0, 2.0]);
        let star = FiniteNetwork::new(
            4,
            vec![(0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0)],
            None,
        )
        .unwrap();
        assert_eq!(star.stationary_measure().unwrap()[0], 6.0);
        assert!(triangle_absorbing().stationary_measure().is_err());
    }

    #[test]
    fn reversibility_exact_in_rational_fixture() {
        // pi(x) p(x,y) = c(x,y) = pi(y) p(y,x) exactly when the ratios are
        // dyadic rationals.
        let net = FiniteNetwork::new(
            3,
            vec![(0, 1, 0.5), (1, 2, 0.25), (0, 2, 0.25)],
            None,
        )
        .unwrap();
        let pi = net.stationary_measure().unwrap();
        for &(u, v, c) in net.edges() {
            let puv = c / pi[u];
            let pvu = c / pi[v];
            assert_eq!(pi[u] * puv, pi[v] * pvu);
        }
    }

    #[test]
    fn exit_one_step_ratio() {
        // start 0, absorbing neighbours 1 (c=1) and 2 (c=3).
        let net = FiniteNetwork::new(3, vec![(0, 1, 1.0), (0, 2, 3.0)], None).unwrap();
        let p = net.exit_distribution(0, &[1, 2]).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exit_symmetric_uniform() {
        // 4-cycle with two opposite absorbers, start equidistant.
        let net = FiniteNetwork::new(
            4,
            vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)],
            None,
        )
        .unwrap();
        let p = net.exit_distribution(0, &[1, 3]).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-13);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-13);
    }

    #[test]
    fn crossings_single_edge() {
        let net = FiniteNetwork::new(2, vec![(0, 1, 2.0)], Some(1)).unwrap();
        let c = net.expected_crossings(0, &[0]).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn crossings_triangle_and_bound() {
        let net = triangle_absorbing();
        let all = [0usize, 1, 2];
        let crossings = net.expected_crossings(0, &all).unwrap();
        assert_abs_diff_eq!(crossings, 2.0, epsilon = 1e-12);
        let green = net.green_row(0, &[2]).unwrap();
        assert_abs_diff_eq!(green[0], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(green[1], 2.0 / 3.0, epsilon = 1e-12);
        let bound = net.crossing_bound(0, &all).unwrap();
        assert_abs_diff_eq!(bound, 6.0, epsilon = 1e-13);
        assert!(crossings <= bound);
    }

    #[test]
    fn resistance_fixtures() {
        let single = FiniteNetwork::new(2, vec![(0, 1, 4.0)], None).unwrap();
        assert_abs_diff_eq!(single.effective_resistance(0, 1).unwrap(), 0.25, epsilon = 1e-13);
        let parallel = FiniteNetwork::new(2, vec![(0, 1, 1.0), (0, 1, 1.0)], None).unwrap();
        assert_abs_diff_eq!(parallel.effective_resistance(0, 1).unwrap(), 0.5, epsilon = 1e-13);
        let series = FiniteNetwork::new(3, vec![(0, 1, 1.0), (1, 2, 2.0)], None).unwrap();
        assert_abs_diff_eq!(series.effective_resistance(0, 2).unwrap(), 1.5, epsilon = 1e-13);
    }

    #[test]
    fn parse_round_trip() {
        let text = "# fixture\nvertices 3\nedge 0 1 1.0\nedge 0 2 1.0\nedge 1 2 1.0\nabsorbing 2\n";
        let net = FiniteNetwork::parse(text).unwrap();
        assert_eq!(net.len(), 3);
        assert_eq!(net.absorbing(), Some(2));
        assert_eq!(net.edges().len(), 3);
        assert!(FiniteNetwork::parse("vertices 2\nedge 0 1 1.0\nbogus 3\n").is_err());
        assert!(FiniteNetwork::parse("edge 0 1 1.0\n").is_err());
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(matches!(
            FiniteNetwork::new(2, vec![(0, 2, 1.0)], None),
            Err(NetError::BadVertex(2, 2))
        ));
        assert!(matches!(
            FiniteNetwork::new(2, vec![(1, 1, 1.0)], None),
            Err(NetError::SelfLoop(1))
        ));
        assert!(matches!(
            FiniteNetwork::new(2, vec![(0, 1, 0.0)], None),
            Err(NetError::BadConductance(0, 1, _))
        ));
        assert!(matches!(
            FiniteNetwork::new(4, vec![(0, 1, 1.0), (2, 3, 1.0)], None),
            Err(NetError::Disconnected)
        ));
    }

    /// Deterministic random connected network for property-style checks.
    fn random_network(seed: u64, max_extra: usize) -> FiniteNetwork {
        let mut ctr = 0u64;
        let mut unit = |salt: u64| {
            ctr += 1;
            unit_from_hash(keyed_hash(seed, &[salt, ctr]))
        };
        let n = 3 + (unit(1) * 28.0) as usize; // 3..=30
        let mut edges = Vec::new();
        // Spanning tree keeps it connected.
        for v in 1..n {
            let parent = (unit(2) * v as f64) as usize;
            let c = 10f64.powf(-3.0 + 6.0 * unit(3));
            edges.push((parent.min(v - 1), v, c));
        }
        let extra = (unit(4) * max_extra as f64) as usize;
        for _ in 0..extra {
            let u = (unit(5) * n as f64) as usize % n;
            let v = (unit(6) * n as f64) as usize % n;
            if u != v {
                let c = 10f64.powf(-3.0 + 6.0 * unit(7));
                edges.push((u.min(v), u.max(v), c));
            }
        }
        FiniteNetwork::new(n, edges, None).unwrap()
    }

    #[test]
    fn crossing_bound_randomized() {
        // The acceptance suite runs 200 instances; a fast slice here.
        let mut checked = 0;
        for seed in 0..60u64 {
            let base = random_network(seed, 40);
            let n = base.len();
            // Pick delta = 0 and a neighbour y of delta.
            let y = match base
                .edges()
                .iter()
                .find(|&&(u, v, _)| u == 0 || v == 0)
                .map(|&(u, v, _)| if u == 0 { v } else { u })
            {
                Some(y) => y,
                None => continue,
            };
            let net = FiniteNetwork::new(n, base.edges().to_vec(), Some(0)).unwrap();
            let all: Vec<usize> = (0..net.edges().len()).collect();
            let lhs = net.expected_crossings(y, &all).unwrap();
            let rhs = net.crossing_bound(y, &all).unwrap();
            assert!(
                lhs <= rhs * (1.0 + 1e-9),
                "seed {seed}: crossings {lhs} exceeds bound {rhs}"
            );
            checked += 1;
        }
        assert!(checked >= 50);
    }

    #[test]
    fn rayleigh_monotonicity_spot() {
        for seed in 0..20u64 {
            let net = random_network(seed, 30);
            let n = net.len();
            let r0 = net.effective_resistance(0, n - 1).unwrap();
            // Double one conductance; resistance must not increase.
            let mut edges = net.edges().to_vec();
            let pick = seed as usize % edges.len();
            edges[pick].2 *= 2.0;
            let boosted = FiniteNetwork::new(n, edges, None).unwrap();
            let r1 = boosted.effective_resistance(0, n - 1).unwrap();
            assert!(
                r1 <= r0 * (1.0 + 1e-10),
                "seed {seed}: resistance rose from {r0} to {r1}"
            );
        }
    }

    #[test]
    fn iterative_solver_matches_dense() {
        // Path of 2100 vertices exceeds the dense cutoff; effective
        // resistance of a unit path is its length, known in closed form.
        let m = 2100usize;
        let edges: Vec<(usize, usize, f64)> = (0..m - 1).map(|i| (i, i + 1, 1.0)).collect();
        let net = FiniteNetwork::new(m, edges, None).unwrap();
        let r = net.effective_resistance(0, m - 1).unwrap();
        assert_abs_diff_eq!(r, (m - 1) as f64, epsilon = 1e-6 * m as f64);
        // And a dense-path cross-check on a smaller copy of the same shape.
        let small = 500usize;
        let edges_s: Vec<(usize, usize, f64)> = (0..small - 1).map(|i| (i, i + 1, 1.0)).collect();
        let net_s = FiniteNetwork::new(small, edges_s, None).unwrap();
        let r_s = net_s.effective_resistance(0, small - 1).unwrap();
        assert_abs_diff_eq!(r_s, (small - 1) as f64, epsilon = 1e-9 * small as f64);
    }

    #[test]
    fn exit_distribution_matches_monte_carlo() {
        // Walk the chain literally and compare absorption frequencies.
        for seed in [3u64, 14, 159] {
            let base = random_network(seed, 25);
            let n = base.len();
            if n < 4 {
                continue;
            }
            let absorbers = [n - 1, n - 2];
            let start = 0usize;
            if absorbers.contains(&start) {
                continue;
            }
            let exact = base.exit_distribution(start, &absorbers).unwrap();
            let trials = 100_000u64;
            let mut hits = [0u64; 2];
            let mut ctr = 0u64;
            for t in 0..trials {
                let mut x = start;
                loop {
                    if let Some(k) = absorbers.iter().position(|&a| a == x) {
                        hits[k] += 1;
                        break;
                    }
                    ctr += 1;
                    let u = unit_from_hash(keyed_hash(seed ^ 0xdead_beef, &[t, ctr]));
                    let mut acc = 0.0;
                    let target = u * base.vertex_weight(x);
                    let mut next = x;
                    for &(i, other) in base.incident[x].iter() {
                        acc += base.edges()[i].2;
                        if acc >= target {
                            next = other;
                            break;
                        }
                    }
                    x = next;
                }
            }
            for k in 0..2 {
                let p_hat = hits[k] as f64 / trials as f64;
                let sigma = (exact[k] * (1.0 - exact[k]) / trials as f64).sqrt();
                assert!(
                    (p_hat - exact[k]).abs() <= 4.0 * sigma.max(1e-4),
                    "seed {seed} exit {k}: MC {p_hat} vs exact {}",
                    exact[k]
                );
            }
        }
    }
}
