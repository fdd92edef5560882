//! The quenched random environment: a lazily sampled, reproducible
//! conductance field on the edges of Z^d, plus the K-normal / K-open /
//! K-good classification and BAD-cluster exploration.
//!
//! Conductances never live in memory: `conductance_of` is a pure function
//! of (seed, canonical edge) via a keyed integer mix, so any number of
//! workers, replicas, and re-runs see bit-identical values.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::lattice::{directions, step, width, Dir, LatticeEdge, Point, MAX_DIM};

/// 64-bit finalizer (splitmix64); full avalanche, pure, fast.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed PRF over a small word sequence: each word is absorbed with a
/// distinct odd round constant, then finalized.
pub fn keyed_hash(seed: u64, words: &[u64]) -> u64 {
    const RC: [u64; 6] = [
        0x9e37_79b9_7f4a_7c15,
        0xc2b2_ae3d_27d4_eb4f,
        0x1656_67b1_9e37_79f9,
        0xd6e8_feb8_6659_fd93,
        0xa0761_d649_5b5_25a9 ^ 0xff51_afd7_ed55_8ccd, // distinct odd constant
        0x2545_f491_4f6c_dd1d,
    ];
    let mut h = mix64(seed ^ RC[0]);
    for (i, &w) in words.iter().enumerate() {
        h = mix64(h ^ w.wrapping_add(RC[1 + i % 5]).rotate_left((i as u32 % 63) + 1));
    }
    mix64(h)
}

/// Uniform draw in (0, 1] from a hash value: (h >> 11) + 1 scaled by 2^-53.
/// The +1 excludes 0 so heavy-tailed quantiles stay finite.
#[inline]
pub fn unit_from_hash(h: u64) -> f64 {
    ((h >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Anything that yields i.i.d. uniforms on (0, 1]; the common currency of
/// all hand-rolled samplers in this crate.
pub trait UnitSource {
    /// Next uniform draw in (0, 1].
    fn next_unit(&mut self) -> f64;
}

/// A counter-based uniform stream: draw i is a pure function of
/// (seed, counter), so streams can be split, replayed, and compared across
/// runs and thread counts.
#[derive(Clone, Debug)]
pub struct UnitStream {
    seed: u64,
    counter: u64,
}

impl UnitStream {
    /// Stream with the given seed, starting at counter 0.
    pub fn new(seed: u64) -> Self {
        UnitStream { seed, counter: 0 }
    }

    /// Derives an independent child stream; pure in (seed, tag).
    pub fn child(&self, tag: u64) -> Self {
        UnitStream::new(keyed_hash(self.seed, &[0x5eed_ca17, tag]))
    }

    /// Next raw 64-bit word.
    pub fn next_u64(&mut self) -> u64 {
        let h = keyed_hash(self.seed, &[self.counter]);
        self.counter += 1;
        h
    }

    /// Draws in 0..n without modulo bias worth caring about (n << 2^64).
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }
}

impl UnitSource for UnitStream {
    fn next_unit(&mut self) -> f64 {
        unit_from_hash(self.next_u64())
    }
}

/// Errors from environment construction and queries.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum EnvError {
    /// Law parameters outside their domain.
    #[error("invalid conductance law: {0}")]
    BadLaw(String),
    /// Field configuration outside its domain.
    #[error("invalid field configuration: {0}")]
    BadField(String),
}

/// Marginal law of a single edge conductance.
///
/// The heavy-tailed variants have tail function T(t) = P[c_* > t] of the
/// form L(t) t^-gamma normalized so that T(x_min) = 1 (support [x_min, oo)):
/// * `Pareto`: L constant — T(t) = (t / x_min)^-gamma, closed-form quantile.
/// * `LogPower`: L(t) proportional to log(e + t)^beta, quantile by bisection.
///
/// `Bounded` is a log-uniform law on [lo, hi] used for ballistic control
/// experiments where a finite-mean environment is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConductanceLaw {
    /// Pure Pareto tail with index `gamma` in (0,1), support `[x_min, oo)`.
    Pareto {
        /// Tail index in (0, 1).
        gamma: f64,
        /// Lower endpoint of the support, > 0.
        x_min: f64,
    },
    /// Tail with slowly varying correction log(e + t)^beta.
    LogPower {
        /// Tail index in (0, 1).
        gamma: f64,
        /// Exponent of the logarithmic correction.
        beta: f64,
        /// Lower endpoint of the support, > 0.
        x_min: f64,
    },
    /// Log-uniform on [lo, hi]; bounded, finite-mean (control runs).
    Bounded {
        /// Lower endpoint, > 0.
        lo: f64,
        /// Upper endpoint, >= lo.
        hi: f64,
    },
}

impl ConductanceLaw {
    /// Validates parameter domains; `LogPower` additionally requires the
    /// normalized tail to be non-increasing on [x_min, oo), for which
    /// beta <= 3 gamma is sufficient (min over t>0 of (e+t)ln(e+t)/t > 3).
    pub fn validate(&self) -> Result<(), EnvError> {
        match *self {
            ConductanceLaw::Pareto { gamma, x_min } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(EnvError::BadLaw(format!("gamma={gamma} not in (0,1)")));
                }
                if !(x_min > 0.0) {
                    return Err(EnvError::BadLaw(format!("x_min={x_min} not positive")));
                }
            }
            ConductanceLaw::LogPower { gamma, beta, x_min } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(EnvError::BadLaw(format!("gamma={gamma} not in (0,1)")));
                }
                if !(x_min > 0.0) {
                    return Err(EnvError::BadLaw(format!("x_min={x_min} not positive")));
                }
                if beta.abs() > 3.0 * gamma {
                    return Err(EnvError::BadLaw(format!(
                        "|beta|={} exceeds 3*gamma={}; tail may fail to be monotone",
                        beta.abs(),
                        3.0 * gamma
                    )));
                }
            }
            ConductanceLaw::Bounded { lo, hi } => {
                if !(lo > 0.0 && hi >= lo) {
                    return Err(EnvError::BadLaw(format!("bounded law needs 0 < lo <= hi, got [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    /// Tail index gamma for the heavy-tailed variants.
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            ConductanceLaw::Pareto { gamma, .. } | ConductanceLaw::LogPower { gamma, .. } => {
                Some(gamma)
            }
            ConductanceLaw::Bounded { .. } => None,
        }
    }

    /// Tail function T(t) = P[c_* > t]; non-increasing, T(t) = 1 below the
    /// lower support endpoint.
    pub fn tail(&self, t: f64) -> f64 {
        match *self {
            ConductanceLaw::Pareto { gamma, x_min } => {
                if t <= x_min {
                    1.0
                } else {
                    (t / x_min).powf(-gamma)
                }
            }
            ConductanceLaw::LogPower { gamma, beta, x_min } => {
                if t <= x_min {
                    1.0
                } else {
                    // Normalized so T(x_min) = 1.
                    let l = |u: f64| (std::f64::consts::E + u).ln().powf(beta);
                    (l(t) / l(x_min)) * (t / x_min).powf(-gamma)
                }
            }
            ConductanceLaw::Bounded { lo, hi } => {
                if t < lo {
                    1.0
                } else if t >= hi {
                    0.0
                } else {
                    (hi / t).ln() / (hi / lo).ln()
                }
            }
        }
    }

    /// Quantile: the value c with T(c) = u for u in (0, 1], i.e. the draw
    /// corresponding to a uniform tail coordinate u.
    pub fn quantile(&self, u: f64) -> f64 {
        debug_assert!(u > 0.0 && u <= 1.0);
        match *self {
            ConductanceLaw::Pareto { gamma, x_min } => x_min * u.powf(-1.0 / gamma),
            ConductanceLaw::LogPower { .. } => {
                // T is continuous and strictly decreasing above x_min:
                // bracket by doubling, then bisect.
                let x_min = match *self {
                    ConductanceLaw::LogPower { x_min, .. } => x_min,
                    _ => unreachable!(),
                };
                if u >= 1.0 {
                    return x_min;
                }
                let mut lo = x_min;
                let mut hi = x_min * 2.0;
                while self.tail(hi) > u {
                    lo = hi;
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.tail(mid) > u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if (hi - lo) <= 1e-12 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
            ConductanceLaw::Bounded { lo, hi } => {
                if hi == lo {
                    lo
                } else {
                    hi * (lo / hi).powf(u)
                }
            }
        }
    }
}

/// Read-only view of an environment: everything the walk needs.
///
/// Implementations must be pure: repeated queries return bit-identical
/// values, so the trait is safe to share across any number of workers.
pub trait Environment {
    /// Active lattice dimension d.
    fn dim(&self) -> usize;
    /// Conductance c_* of a canonical edge; strictly positive.
    fn conductance(&self, edge: LatticeEdge) -> f64;
    /// Per-direction tilt factors exp(e_j . lambda * direction), indexed by
    /// signed direction (0..d positive, d..2d negative).
    fn tilt(&self) -> &[f64; 2 * MAX_DIM];
    /// Unit bias direction.
    fn direction(&self) -> &[f64; MAX_DIM];
    /// Bias strength lambda.
    fn lambda(&self) -> f64;
    /// Normality threshold K.
    fn k_threshold(&self) -> f64;

    /// Level of a vertex: x . direction (the unit vector, not scaled by
    /// lambda).
    fn level(&self, x: Point) -> f64 {
        crate::lattice::dot(x, self.direction())
    }
}

/// Vertex classification by incident conductances.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VertexClass {
    /// All 2d incident edges are K-normal (c_* in [1/K, K], closed interval).
    Open,
    /// Some incident edge is not K-normal.
    Closed,
}

/// Outcome of the finite-depth directed-open-path search.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Goodness {
    /// A directed open path of the requested length exists.
    GoodCertified(u32),
    /// Every directed branch is blocked by a closed vertex.
    BadCertified,
    /// Resource cap reached before the search tree was exhausted.
    Unknown(u32),
}

/// The lazily sampled conductance field.
///
/// Immutable after construction; queries are pure functions of the
/// configuration, so the field may be freely shared across threads.
/// (Persist the constructor arguments, not the field itself; `tilt` is a
/// derived cache that `new` rebuilds.)
#[derive(Clone, Debug)]
pub struct ConductanceField {
    law: ConductanceLaw,
    seed: u64,
    dimension: usize,
    k: f64,
    lambda: f64,
    direction: [f64; MAX_DIM],
    tilt: [f64; 2 * MAX_DIM],
}

impl ConductanceField {
    /// Builds a field. The direction is normalized to unit length; it must
    /// already satisfy the basis convention e_1.dir >= ... >= e_d.dir >= 0
    /// (which forces e_1.dir >= 1/sqrt(d)).
    pub fn new(
        law: ConductanceLaw,
        seed: u64,
        dimension: usize,
        k: f64,
        lambda: f64,
        direction_raw: &[f64],
    ) -> Result<Self, EnvError> {
        law.validate()?;
        if !(2..=MAX_DIM).contains(&dimension) {
            return Err(EnvError::BadField(format!(
                "dimension {dimension} outside supported range 2..={MAX_DIM}"
            )));
        }
        if !(k >= 1.0) {
            return Err(EnvError::BadField(format!("K={k} must be >= 1")));
        }
        if !(lambda > 0.0) {
            return Err(EnvError::BadField(format!("lambda={lambda} must be > 0")));
        }
        if direction_raw.len() != dimension {
            return Err(EnvError::BadField(format!(
                "direction has {} components, dimension is {dimension}",
                direction_raw.len()
            )));
        }
        let norm = direction_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(EnvError::BadField("direction must be nonzero".into()));
        }
        let mut direction = [0.0; MAX_DIM];
        for (i, &v) in direction_raw.iter().enumerate() {
            direction[i] = v / norm;
        }
        for i in 0..dimension {
            if direction[i] < 0.0 {
                return Err(EnvError::BadField(
                    "direction components must be nonnegative (basis convention)".into(),
                ));
            }
            if i + 1 < dimension && direction[i] + 1e-15 < direction[i + 1] {
                return Err(EnvError::BadField(
                    "direction components must be non-increasing (basis convention)".into(),
                ));
            }
        }
        let mut field = ConductanceField {
            law,
            seed,
            dimension,
            k,
            lambda,
            direction,
            tilt: [1.0; 2 * MAX_DIM],
        };
        field.rebuild_tilt();
        Ok(field)
    }

    fn rebuild_tilt(&mut self) {
        for j in 0..self.dimension {
            let t = (self.lambda * self.direction[j]).exp();
            self.tilt[j] = t;
            self.tilt[j + self.dimension] = 1.0 / t;
        }
    }

    /// The configured marginal law.
    pub fn law(&self) -> &ConductanceLaw {
        &self.law
    }

    /// The field seed.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform tail coordinate of an edge in (0, 1]: the keyed-PRF draw the
    /// quantile is applied to. Exposed so resampling wrappers can reuse it.
    pub fn edge_uniform(&self, edge: LatticeEdge, salt: u64) -> f64 {
        let l = edge.lower;
        let words = [
            l[0] as u64,
            l[1] as u64,
            l[2] as u64,
            l[3] as u64,
            edge.axis as u64 ^ salt.rotate_left(8),
        ];
        unit_from_hash(keyed_hash(self.seed, &words))
    }
}

impl Environment for ConductanceField {
    fn dim(&self) -> usize {
        self.dimension
    }

    fn conductance(&self, edge: LatticeEdge) -> f64 {
        self.law.quantile(self.edge_uniform(edge, 0))
    }

    fn tilt(&self) -> &[f64; 2 * MAX_DIM] {
        &self.tilt
    }

    fn direction(&self) -> &[f64; MAX_DIM] {
        &self.direction
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn k_threshold(&self) -> f64 {
        self.k
    }
}

/// A field with finitely many edges overridden; used to plant trap profiles
/// (one huge edge, controlled neighbours) while inheriting everything else.
#[derive(Clone, Debug)]
pub struct PatchedField<'a> {
    base: &'a ConductanceField,
    overrides: HashMap<LatticeEdge, f64>,
}

impl<'a> PatchedField<'a> {
    /// Wraps `base` with no overrides.
    pub fn new(base: &'a ConductanceField) -> Self {
        PatchedField {
            base,
            overrides: HashMap::new(),
        }
    }

    /// Forces the conductance of one edge.
    pub fn set(&mut self, edge: LatticeEdge, value: f64) {
        assert!(value > 0.0, "conductances must stay positive");
        self.overrides.insert(edge, value);
    }

    /// Forces an edge to a draw from the base law conditioned on c_* < cap,
    /// by deterministic rejection over salted re-draws.
    pub fn set_conditioned_below(&mut self, edge: LatticeEdge, cap: f64) {
        for salt in 1..=1024u64 {
            let c = self.base.law.quantile(self.base.edge_uniform(edge, salt));
            if c < cap {
                self.overrides.insert(edge, c);
                return;
            }
        }
        // P[c >= cap] < 1 for every law in scope, so 1024 rejections do not
        // happen; fall back to the cap midpoint to stay total.
        self.overrides.insert(edge, 0.5 * cap);
    }
}

impl Environment for PatchedField<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn conductance(&self, edge: LatticeEdge) -> f64 {
        match self.overrides.get(&edge) {
            Some(&c) => c,
            None => self.base.conductance(edge),
        }
    }

    fn tilt(&self) -> &[f64; 2 * MAX_DIM] {
        self.base.tilt()
    }

    fn direction(&self) -> &[f64; MAX_DIM] {
        self.base.direction()
    }

    fn lambda(&self) -> f64 {
        self.base.lambda()
    }

    fn k_threshold(&self) -> f64 {
        self.base.k_threshold()
    }
}

/// Open iff every one of the 2d incident edges has c_* in [1/K, K]
/// (closed interval on both ends).
pub fn classify_vertex<E: Environment>(env: &E, x: Point) -> VertexClass {
    let k = env.k_threshold();
    for d in directions(env.dim()) {
        let c = env.conductance(LatticeEdge::from_step(x, d, env.dim()));
        if c < 1.0 / k || c > k {
            return VertexClass::Closed;
        }
    }
    VertexClass::Open
}

/// Searches for a directed open path of `depth` steps from `x`: odd steps
/// move +e_1, even steps move any +e_j, every vertex on the path open.
/// `state_cap` bounds the number of memoized search states.
pub fn certify_good<E: Environment>(env: &E, x: Point, depth: u32, state_cap: usize) -> Goodness {
    assert!(depth >= 2, "depth must be >= 2");
    if classify_vertex(env, x) == VertexClass::Closed {
        return Goodness::BadCertified;
    }
    // memo: (vertex, steps already taken) -> path of full length exists.
    let mut memo: HashMap<(Point, u32), bool> = HashMap::new();
    let mut capped = false;
    let dim = env.dim();
    fn rec<E: Environment>(
        env: &E,
        v: Point,
        taken: u32,
        depth: u32,
        memo: &mut HashMap<(Point, u32), bool>,
        capped: &mut bool,
        cap: usize,
        dim: usize,
    ) -> bool {
        if taken == depth {
            return true;
        }
        if let Some(&r) = memo.get(&(v, taken)) {
            return r;
        }
        if memo.len() >= cap {
            *capped = true;
            return false;
        }
        // Odd path positions (1st, 3rd, ... step) are forced along e_1.
        let dirs: &[u8] = if taken % 2 == 0 {
            &[0]
        } else {
            &[0, 1, 2, 3][..dim]
        };
        let mut ok = false;
        for &j in dirs {
            let w = step(v, Dir(j), dim);
            if classify_vertex(env, w) == VertexClass::Open
                && rec(env, w, taken + 1, depth, memo, capped, cap, dim)
            {
                ok = true;
                break;
            }
        }
        memo.insert((v, taken), ok);
        ok
    }
    let found = rec(env, x, 0, depth, &mut memo, &mut capped, state_cap, dim);
    if found {
        Goodness::GoodCertified(depth)
    } else if capped {
        // Depth actually reached is not tracked exactly under the cap; report
        // the requested depth as the attempted bound.
        Goodness::Unknown(depth)
    } else {
        Goodness::BadCertified
    }
}

/// Connected cluster of non-good vertices.
#[derive(Clone, Debug)]
pub struct BadCluster {
    /// Vertex the exploration started from.
    pub anchor: Point,
    /// Vertices of the cluster; empty when the anchor is good.
    pub members: Vec<Point>,
    /// Width of the member set (0 when empty).
    pub width: i64,
    /// True if the exploration hit the size cap.
    pub truncated: bool,
}

/// Breadth-first exploration of the connected component of vertices that are
/// not good-certified at `depth`, capped at `cap` vertices.
pub fn explore_bad_cluster<E: Environment>(
    env: &E,
    anchor: Point,
    depth: u32,
    state_cap: usize,
    cap: usize,
) -> BadCluster {
    assert!(cap >= 1, "cap must be >= 1");
    let mut goodness: HashMap<Point, bool> = HashMap::new();
    let mut is_bad = |v: Point| {
        *goodness.entry(v).or_insert_with(|| {
            !matches!(
                certify_good(env, v, depth, state_cap),
                Goodness::GoodCertified(_)
            )
        })
    };
    if !is_bad(anchor) {
        return BadCluster {
            anchor,
            members: Vec::new(),
            width: 0,
            truncated: false,
        };
    }
    let mut seen: HashSet<Point> = HashSet::new();
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    let mut truncated = false;
    seen.insert(anchor);
    queue.push_back(anchor);
    while let Some(v) = queue.pop_front() {
        members.push(v);
        for d in directions(env.dim()) {
            let w = step(v, d, env.dim());
            if !seen.contains(&w) && is_bad(w) {
                seen.insert(w);
                queue.push_back(w);
            }
        }
        if members.len() >= cap {
            truncated = !queue.is_empty();
            break;
        }
    }
    let w = width(members.iter());
    BadCluster {
        anchor,
        members,
        width: w,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ORIGIN;

    fn unit_field(k: f64) -> ConductanceField {
        // Bounded [1,1] makes every conductance exactly 1.
        ConductanceField::new(
            ConductanceLaw::Bounded { lo: 1.0, hi: 1.0 },
            7,
            2,
            k,
            1.0,
            &[1.0, 0.0],
        )
        .unwrap()
    }

    fn pareto_field(seed: u64) -> ConductanceField {
        ConductanceField::new(
            ConductanceLaw::Pareto {
                gamma: 0.5,
                x_min: 1.0,
            },
            seed,
            2,
            20.0,
            1.0,
            &[1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn purity_and_canonical_identity() {
        let f = pareto_field(42);
        let a = [3, -2, 0, 0];
        let b = [4, -2, 0, 0];
        let e1 = LatticeEdge::between(a, b).unwrap();
        let e2 = LatticeEdge::between(b, a).unwrap();
        assert_eq!(f.conductance(e1).to_bits(), f.conductance(e2).to_bits());
        let f2 = pareto_field(42);
        assert_eq!(f.conductance(e1).to_bits(), f2.conductance(e1).to_bits());
        let f3 = pareto_field(43);
        assert_ne!(f.conductance(e1).to_bits(), f3.conductance(e1).to_bits());
    }

    #[test]
    fn pareto_tail_fraction_at_100() {
        // P[c_* >= 100] = 100^{-1/2} = 0.10 for gamma = 0.5, x_min = 1.
        let f = pareto_field(11);
        let n = 1_000_000i64;
        let mut hits = 0u64;
        for i in 0..n {
            let e = LatticeEdge {
                lower: [i, 0, 0, 0],
                axis: 0,
            };
            if f.conductance(e) >= 100.0 {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.10).abs() < 0.001, "tail fraction {frac}");
    }

    #[test]
    fn law_quantile_inverts_tail() {
        let laws = [
            ConductanceLaw::Pareto {
                gamma: 0.5,
                x_min: 1.0,
            },
            ConductanceLaw::LogPower {
                gamma: 0.6,
                beta: 1.0,
                x_min: 2.0,
            },
            ConductanceLaw::Bounded { lo: 1.0, hi: 4.0 },
        ];
        for law in &laws {
            for &u in &[1.0, 0.9, 0.5, 0.1, 1e-3, 1e-6] {
                let x = law.quantile(u);
                let back = law.tail(x);
                assert!(
                    (back - u).abs() <= 1e-9 * u.max(1e-12) + 1e-12,
                    "{law:?}: T(Q({u})) = {back}"
                );
            }
        }
    }

    #[test]
    fn classification_fixtures() {
        let f = unit_field(2.0);
        assert_eq!(classify_vertex(&f, ORIGIN), VertexClass::Open);
        // K exactly at the conductance: closed interval keeps it open.
        let f_edge = unit_field(1.0);
        assert_eq!(classify_vertex(&f_edge, ORIGIN), VertexClass::Open);
        // One incident edge forced to 10 > K.
        let base = unit_field(2.0);
        let mut p = PatchedField::new(&base);
        p.set(LatticeEdge::between(ORIGIN, [1, 0, 0, 0]).unwrap(), 10.0);
        assert_eq!(classify_vertex(&p, ORIGIN), VertexClass::Closed);
    }

    #[test]
    fn good_certification_on_open_lattice() {
        let f = unit_field(2.0);
        assert_eq!(
            certify_good(&f, ORIGIN, 10, 1 << 20),
            Goodness::GoodCertified(10)
        );
        // A closed anchor is bad-certified immediately.
        let mut p = PatchedField::new(&f);
        p.set(LatticeEdge::between(ORIGIN, [0, 1, 0, 0]).unwrap(), 100.0);
        assert_eq!(certify_good(&p, ORIGIN, 10, 1 << 20), Goodness::BadCertified);
    }

    #[test]
    fn bad_cluster_empty_for_good_anchor() {
        let f = unit_field(2.0);
        let c = explore_bad_cluster(&f, ORIGIN, 8, 1 << 20, 1000);
        assert!(c.members.is_empty());
        assert_eq!(c.width, 0);
        assert!(!c.truncated);
    }

    #[test]
    fn monotone_in_k() {
        // Opening never reverses when K grows.
        let f20 = pareto_field(5);
        let f40 = ConductanceField::new(
            ConductanceLaw::Pareto {
                gamma: 0.5,
                x_min: 1.0,
            },
            5,
            2,
            40.0,
            1.0,
            &[1.0, 0.0],
        )
        .unwrap();
        for i in -20..20 {
            for j in -20..20 {
                let x = [i, j, 0, 0];
                if classify_vertex(&f20, x) == VertexClass::Open {
                    assert_eq!(classify_vertex(&f40, x), VertexClass::Open);
                }
            }
        }
    }

    #[test]
    fn direction_convention_enforced() {
        let law = ConductanceLaw::Pareto {
            gamma: 0.5,
            x_min: 1.0,
        };
        assert!(ConductanceField::new(law.clone(), 1, 2, 20.0, 1.0, &[0.0, 1.0]).is_err());
        assert!(ConductanceField::new(law.clone(), 1, 2, 20.0, 1.0, &[1.0, -0.2]).is_err());
        let f = ConductanceField::new(law, 1, 2, 20.0, 1.0, &[3.0, 4.0]);
        assert!(f.is_err(), "3,4 violates the non-increasing convention");
    }
}
