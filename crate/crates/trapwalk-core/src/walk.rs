//! The quenched walk and its enhancement: numerically stable transition
//! kernels, the extra Z-bit recording whether a step used the clamped
//! sub-kernel, the backtracking functional D with margin certification,
//! and trajectory bookkeeping (levels, ladder times).
//!
//! Overflow policy: kernels are computed from weights relative to the
//! current vertex (the common factor exp(2 lambda x . dir) cancels in every
//! probability), and stationary weights are only ever exposed as log-pi.

use serde::{Deserialize, Serialize};

use crate::env::{keyed_hash, unit_from_hash, Environment, UnitSource};
use crate::lattice::{directions, dot, step, Dir, LatticeEdge, Point, MAX_DIM};

/// Number of slots in the per-walker kernel cache. Trap oscillation hits
/// the same handful of vertices, so a small direct-mapped cache suffices.
const KERNEL_CACHE_SLOTS: usize = 64;

/// Exact transition data at one vertex.
#[derive(Clone, Copy, Debug)]
pub struct TransitionKernel {
    /// Full walk probabilities per signed direction.
    pub p: [f64; 2 * MAX_DIM],
    /// Clamped sub-kernel probabilities; p_k[j] <= p[j] always.
    pub p_k: [f64; 2 * MAX_DIM],
    /// Raw conductances c_* of the incident edges per signed direction.
    pub conductances: [f64; 2 * MAX_DIM],
    /// log pi(x) = 2 lambda (x . dir) + ln(sum of relative weights).
    pub log_pi: f64,
    /// All incident conductances within [1/K, K].
    pub open: bool,
}

impl TransitionKernel {
    /// Sum of the sub-kernel mass; equals K^-2 exactly at open vertices.
    pub fn z_one_mass(&self, dim: usize) -> f64 {
        self.p_k[..2 * dim].iter().sum()
    }
}

/// Computes the kernel at a vertex from the 2d incident conductances.
pub fn kernel_at<E: Environment>(env: &E, x: Point) -> TransitionKernel {
    let dim = env.dim();
    let tilt = env.tilt();
    let k = env.k_threshold();
    let inv_k = 1.0 / k;
    let mut conductances = [0.0; 2 * MAX_DIM];
    let mut weights = [0.0; 2 * MAX_DIM];
    let mut clamped_num = [0.0; 2 * MAX_DIM];
    let mut sum_w = 0.0;
    let mut sum_den = 0.0;
    let mut open = true;
    for d in directions(dim) {
        let j = d.0 as usize;
        let c = env.conductance(LatticeEdge::from_step(x, d, dim));
        conductances[j] = c;
        let w = c * tilt[j];
        weights[j] = w;
        sum_w += w;
        clamped_num[j] = c.min(inv_k) * tilt[j];
        sum_den += c.max(k) * tilt[j];
        if c < inv_k || c > k {
            open = false;
        }
    }
    let mut p = [0.0; 2 * MAX_DIM];
    let mut p_k = [0.0; 2 * MAX_DIM];
    for j in 0..2 * dim {
        p[j] = weights[j] / sum_w;
        p_k[j] = clamped_num[j] / sum_den;
    }
    let log_pi = 2.0 * env.lambda() * env.level(x) + sum_w.ln();
    TransitionKernel {
        p,
        p_k,
        conductances,
        log_pi,
        open,
    }
}

/// Counter-based stream for walk steps: draw i is a pure function of
/// (seed, counter), so any replica or rerun reproduces the same walk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WalkRng {
    pub seed: u64,
    pub counter: u64,
}

impl WalkRng {
    /// Fresh stream with the given seed.
    pub fn new(seed: u64) -> Self {
        WalkRng { seed, counter: 0 }
    }

    /// Stream for one replica, derived from a master seed.
    pub fn replica(master_seed: u64, replica: u64) -> Self {
        WalkRng::new(keyed_hash(master_seed, &[0x7e91_1ca5, replica]))
    }

    /// Derived stream for an auxiliary purpose (e.g. synthesized
    /// exponentials), independent of this stream's own draws.
    pub fn substream(&self, tag: u64) -> Self {
        WalkRng::new(keyed_hash(self.seed, &[0x5b5_57e4, tag]))
    }
}

impl UnitSource for WalkRng {
    fn next_unit(&mut self) -> f64 {
        let h = keyed_hash(self.seed, &[self.counter]);
        self.counter += 1;
        unit_from_hash(h)
    }
}

/// Outcome of the backtracking functional D on a trajectory prefix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DStatus {
    /// Smallest n realizing the defining infimum.
    Finite(u64),
    /// The walk climbed `margin` above its starting level with no trigger;
    /// false certification is exponentially unlikely in the margin.
    CertifiedInfinite(f64),
    /// The trajectory ended before a trigger or the margin.
    Censored,
}

/// One walker in motion: current enhanced state, kernel cache, and stream.
/// The hot loop of every experiment; owns no trajectory storage.
pub struct Stepper<'a, E: Environment> {
    env: &'a E,
    pub pos: Point,
    /// Z-bit of the step that brought the walker here (false at start).
    pub z: bool,
    /// Time index of `pos` (number of steps taken).
    pub time: u64,
    rng: WalkRng,
    cache: Vec<Option<(Point, TransitionKernel)>>,
    cache_hits: u64,
    cache_misses: u64,
}

/// What one step produced.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub dir: Dir,
    pub z: bool,
    /// Conductance of the crossed edge.
    pub crossed_conductance: f64,
}

/// Maps one uniform draw to an enhanced step: the sub-kernel slice of each
/// direction is scanned first (z=1), then the remainder (z=0). The joint
/// scan keeps one draw per step while preserving both marginals.
pub fn draw_step(kernel: &TransitionKernel, dim: usize, u: f64) -> (Dir, bool) {
    let mut acc = 0.0;
    for d in directions(dim) {
        let j = d.0 as usize;
        acc += kernel.p_k[j];
        if u <= acc {
            return (d, true);
        }
        acc += kernel.p[j] - kernel.p_k[j];
        if u <= acc {
            return (d, false);
        }
    }
    // Rounding can leave u marginally above the accumulated mass; the
    // last direction absorbs it.
    (Dir((2 * dim - 1) as u8), false)
}

impl<'a, E: Environment> Stepper<'a, E> {
    pub fn new(env: &'a E, start: Point, rng: WalkRng) -> Self {
        Stepper {
            env,
            pos: start,
            z: false,
            time: 0,
            rng,
            cache: vec![None; KERNEL_CACHE_SLOTS],
            cache_hits: 0,
            cache_misses: 0,
        }
    }

    /// Kernel at the current position, through the direct-mapped cache.
    pub fn kernel_here(&mut self) -> TransitionKernel {
        let slot = (keyed_hash(
            0x6b65_726e,
            &[
                self.pos[0] as u64,
                self.pos[1] as u64,
                self.pos[2] as u64,
                self.pos[3] as u64,
            ],
        ) as usize)
            % KERNEL_CACHE_SLOTS;
        if let Some((p, k)) = &self.cache[slot] {
            if *p == self.pos {
                self.cache_hits += 1;
                return *k;
            }
        }
        self.cache_misses += 1;
        let k = kernel_at(self.env, self.pos);
        self.cache[slot] = Some((self.pos, k));
        k
    }

    /// Advances one step of the enhanced walk; the fresh state is
    /// independent of the incoming z-bit.
    pub fn advance(&mut self) -> StepOutcome {
        let kernel = self.kernel_here();
        let dim = self.env.dim();
        let u = self.rng.next_unit();
        let (chosen, z) = draw_step(&kernel, dim, u);
        let crossed = kernel.conductances[chosen.0 as usize];
        self.pos = step(self.pos, chosen, dim);
        self.z = z;
        self.time += 1;
        StepOutcome {
            dir: chosen,
            z,
            crossed_conductance: crossed,
        }
    }

    /// Moves the walker without consuming randomness (used by excursion
    /// simulations that force a position). The kernel cache stays valid
    /// because it is keyed by position.
    pub fn teleport(&mut self, pos: Point) {
        self.pos = pos;
    }

    /// (hits, misses) of the kernel cache so far.
    pub fn cache_stats(&self) -> (u64, u64) {
        (self.cache_hits, self.cache_misses)
    }

    /// The underlying stream position (for manifests).
    pub fn rng_counter(&self) -> u64 {
        self.rng.counter
    }
}

/// A stored enhanced trajectory with cached level statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedTrajectory {
    /// Positions X_0..X_n.
    pub positions: Vec<Point>,
    /// zbits[k] is the Z-bit of the step arriving at X_k; zbits[0] is the
    /// initial bit, stored but ignored by all dynamics.
    pub zbits: Vec<bool>,
    /// levels[k] = (X_k - X_0) . dir, relative to the start to keep
    /// magnitudes small.
    pub levels: Vec<f64>,
    /// Strict-record times of the level sequence; ladder_times[0] = 0.
    pub ladder_times: Vec<u64>,
}

impl EnhancedTrajectory {
    /// Number of stored states (steps + 1).
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// True when no states are stored.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Level of X_k relative to X_0.
    pub fn level(&self, k: usize) -> f64 {
        self.levels[k]
    }
}

/// Errors from walk driving.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum WalkError {
    #[error("steps must be >= 1")]
    NoSteps,
}

/// Runs the enhanced walk for `steps` steps, storing the full trajectory
/// with levels and ladder times.
pub fn run_walk<E: Environment>(
    env: &E,
    start: Point,
    steps: u64,
    rng: WalkRng,
) -> Result<EnhancedTrajectory, WalkError> {
    if steps == 0 {
        return Err(WalkError::NoSteps);
    }
    let mut stepper = Stepper::new(env, start, rng);
    let dir = *env.direction();
    let mut positions = Vec::with_capacity(steps as usize + 1);
    let mut zbits = Vec::with_capacity(steps as usize + 1);
    let mut levels = Vec::with_capacity(steps as usize + 1);
    let mut ladder_times = vec![0u64];
    positions.push(start);
    zbits.push(false);
    levels.push(0.0);
    let mut record = 0.0;
    for n in 1..=steps {
        let out = stepper.advance();
        positions.push(stepper.pos);
        zbits.push(out.z);
        let lvl = dot(delta(stepper.pos, start), &dir);
        levels.push(lvl);
        if lvl > record {
            record = lvl;
            ladder_times.push(n);
        }
    }
    Ok(EnhancedTrajectory {
        positions,
        zbits,
        levels,
        ladder_times,
    })
}

/// Componentwise difference a - b.
fn delta(a: Point, b: Point) -> Point {
    let mut d = [0i64; MAX_DIM];
    for i in 0..MAX_DIM {
        d[i] = a[i] - b[i];
    }
    d
}

/// Evaluates the backtracking functional D on the trajectory suffix
/// starting at index `from`, with the given certification margin in level
/// units. Triggers (first set in the definition: backtrack to or below the
/// starting level; second: Z_1 = 0; third: a z=0 step taken while sitting
/// at start + e_j for a positive axis direction j) are scanned in time
/// order, so the returned index is the infimum.
pub fn detect_d_from<E: Environment>(
    env: &E,
    traj: &EnhancedTrajectory,
    from: usize,
    margin_level: f64,
) -> DStatus {
    let dim = env.dim();
    let origin = traj.positions[from];
    let origin_level = traj.levels[from];
    for n in 1..traj.len() - from {
        let abs = from + n;
        // I_0 clause: the very first shifted step carries Z_1.
        if n == 1 && !traj.zbits[abs] {
            return DStatus::Finite(1);
        }
        // Third clause: previous position was origin + e_j (positive j)
        // and the arriving step had Z = 0.
        if !traj.zbits[abs] {
            let prev = traj.positions[abs - 1];
            let d = delta(prev, origin);
            let mut is_pos_neighbour = false;
            for j in 0..dim {
                let mut unit = [0i64; MAX_DIM];
                unit[j] = 1;
                if d == unit {
                    is_pos_neighbour = true;
                    break;
                }
            }
            if is_pos_neighbour {
                return DStatus::Finite(n as u64);
            }
        }
        // First clause: level at or below the starting level.
        let rel = traj.levels[abs] - origin_level;
        if rel <= 0.0 {
            return DStatus::Finite(n as u64);
        }
        if rel >= margin_level {
            return DStatus::CertifiedInfinite(margin_level);
        }
    }
    DStatus::Censored
}

/// D on the whole trajectory (from its start).
pub fn detect_d<E: Environment>(
    env: &E,
    traj: &EnhancedTrajectory,
    margin_level: f64,
) -> DStatus {
    detect_d_from(env, traj, 0, margin_level)
}

/// Naive reference for D: materializes the three defining index sets and
/// takes their minimum, then applies the same margin rule. Kept separate
/// from `detect_d_from` so the two can disagree if either is wrong.
pub fn detect_d_reference<E: Environment>(
    env: &E,
    traj: &EnhancedTrajectory,
    from: usize,
    margin_level: f64,
) -> DStatus {
    let dim = env.dim();
    let origin = traj.positions[from];
    let origin_level = traj.levels[from];
    let horizon = traj.len() - from;
    let mut triggers: Vec<u64> = Vec::new();
    // Backtrack set.
    for n in 1..horizon {
        if traj.levels[from + n] - origin_level <= 0.0 {
            triggers.push(n as u64);
        }
    }
    // I_0.
    if horizon > 1 && !traj.zbits[from + 1] {
        triggers.push(1);
    }
    // Z-with-positive-neighbour set.
    for n in 1..horizon {
        let prev = traj.positions[from + n - 1];
        for j in 0..dim {
            let mut nb = origin;
            nb[j] += 1;
            if prev == nb && !traj.zbits[from + n] {
                triggers.push(n as u64);
            }
        }
    }
    let d_val = triggers.into_iter().min();
    // First time the margin is reached.
    let mut cert_at: Option<u64> = None;
    for n in 1..horizon {
        if traj.levels[from + n] - origin_level >= margin_level {
            cert_at = Some(n as u64);
            break;
        }
    }
    match (d_val, cert_at) {
        (Some(d), Some(c)) if c < d => DStatus::CertifiedInfinite(margin_level),
        (Some(d), _) => DStatus::Finite(d),
        (None, Some(_)) => DStatus::CertifiedInfinite(margin_level),
        (None, None) => DStatus::Censored,
    }
}

/// Default certification margin in level units:
/// ceil(30 / min positive direction component). A false certification then
/// needs a backtrack of at least 30 lattice steps against the drift, which
/// happens with exponentially small probability.
pub fn default_margin_level(direction: &[f64; MAX_DIM], dim: usize) -> f64 {
    let min_pos = direction[..dim]
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if min_pos.is_finite() {
        (30.0 / min_pos).ceil()
    } else {
        30.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ConductanceField, ConductanceLaw};
    use crate::lattice::ORIGIN;
    use approx::assert_abs_diff_eq;

    fn unit_env(k: f64, lambda: f64) -> ConductanceField {
        ConductanceField::new(
            ConductanceLaw::Bounded { lo: 1.0, hi: 1.0 },
            3,
            2,
            k,
            lambda,
            &[1.0, 0.0],
        )
        .unwrap()
    }

    fn pareto_env(seed: u64) -> ConductanceField {
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
    fn kernel_fixture_values() {
        // d=2, lambda=1, all c_*=1: p(e_1) = e/(e + 1/e + 2).
        let env = unit_env(2.0, 1.0);
        let k = kernel_at(&env, ORIGIN);
        let e = std::f64::consts::E;
        let denom = e + 1.0 / e + 2.0;
        assert_abs_diff_eq!(k.p[0], e / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(k.p[2], (1.0 / e) / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(k.p[1], 1.0 / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(k.p[3], 1.0 / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(k.p[0], 0.53444, epsilon = 5e-5);
        assert_abs_diff_eq!(k.p[2], 0.07233, epsilon = 5e-5);
        assert_abs_diff_eq!(k.p[1], 0.19661, epsilon = 5e-5);
        let total: f64 = k.p[..4].iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // K=2, all clamps active: sub-kernel mass K^-2 = 0.25.
        assert_abs_diff_eq!(k.z_one_mass(2), 0.25, epsilon = 1e-12);
        assert!(k.open);
    }

    #[test]
    fn kernel_uniform_when_unbiased() {
        // lambda -> 0 is outside the domain; use tiny lambda and loose tol.
        let env = ConductanceField::new(
            ConductanceLaw::Bounded { lo: 1.0, hi: 1.0 },
            3,
            2,
            2.0,
            1e-12,
            &[1.0, 0.0],
        )
        .unwrap();
        let k = kernel_at(&env, ORIGIN);
        for j in 0..4 {
            assert_abs_diff_eq!(k.p[j], 0.25, epsilon = 1e-9);
        }
    }

    #[test]
    fn open_vertices_have_exact_sub_mass() {
        let env = pareto_env(8);
        let mut seen_open = 0;
        for i in -50..50i64 {
            for j in -50..50i64 {
                let x = [i, j, 0, 0];
                let k = kernel_at(&env, x);
                let total: f64 = k.p[..4].iter().sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
                for t in 0..4 {
                    assert!(k.p_k[t] <= k.p[t] + 1e-15);
                }
                if k.open {
                    seen_open += 1;
                    assert_abs_diff_eq!(k.z_one_mass(2), 1.0 / 400.0, epsilon = 1e-14);
                }
            }
        }
        assert!(seen_open > 100, "want a healthy share of open vertices");
    }

    #[test]
    fn reversibility_relative() {
        // pi(x) p(x,y) = pi(y) p(y,x): check via logs to dodge overflow.
        let env = pareto_env(21);
        for i in -10..10i64 {
            for j in -10..10i64 {
                let x = [i, j, 0, 0];
                let kx = kernel_at(&env, x);
                for d in directions(2) {
                    let y = step(x, d, 2);
                    let ky = kernel_at(&env, y);
                    let back = d.flip(2);
                    let lhs = kx.log_pi + kx.p[d.0 as usize].ln();
                    let rhs = ky.log_pi + ky.p[back.0 as usize].ln();
                    assert!(
                        (lhs - rhs).abs() < 1e-10,
                        "reversibility broken at {x:?} dir {}",
                        d.0
                    );
                }
            }
        }
    }

    #[test]
    fn stepper_marginals_match_kernel() {
        let env = pareto_env(33);
        let x = [2, -1, 0, 0];
        let k = kernel_at(&env, x);
        let n = 200_000u64;
        let mut dir_counts = [0u64; 4];
        let mut z_count = 0u64;
        let mut st = Stepper::new(&env, x, WalkRng::new(77));
        for _ in 0..n {
            st.teleport(x);
            let out = st.advance();
            dir_counts[out.dir.0 as usize] += 1;
            if out.z {
                z_count += 1;
            }
        }
        for j in 0..4 {
            let p_hat = dir_counts[j] as f64 / n as f64;
            let sigma = (k.p[j] * (1.0 - k.p[j]) / n as f64).sqrt();
            assert!(
                (p_hat - k.p[j]).abs() <= 4.0 * sigma.max(1e-5),
                "direction {j}: {p_hat} vs {}",
                k.p[j]
            );
        }
        let z_mass = k.z_one_mass(2);
        let z_hat = z_count as f64 / n as f64;
        let sigma_z = (z_mass * (1.0 - z_mass) / n as f64).sqrt();
        assert!((z_hat - z_mass).abs() <= 4.0 * sigma_z);
    }

    #[test]
    fn z_frequency_fixture() {
        // all c_*=1, K=2, d=2, lambda=1: P[Z=1] = 0.25.
        let env = unit_env(2.0, 1.0);
        let mut st = Stepper::new(&env, ORIGIN, WalkRng::new(12));
        let n = 100_000u64;
        let mut z = 0u64;
        for _ in 0..n {
            if st.advance().z {
                z += 1;
            }
        }
        let z_hat = z as f64 / n as f64;
        assert!((z_hat - 0.25).abs() < 0.005, "P[Z=1] = {z_hat}");
    }

    #[test]
    fn run_walk_contracts() {
        let env = pareto_env(4);
        assert_eq!(run_walk(&env, ORIGIN, 0, WalkRng::new(1)), Err(WalkError::NoSteps));
        let t = run_walk(&env, ORIGIN, 1, WalkRng::new(1)).unwrap();
        assert_eq!(t.len(), 2);
        let a = run_walk(&env, ORIGIN, 500, WalkRng::new(9)).unwrap();
        let b = run_walk(&env, ORIGIN, 500, WalkRng::new(9)).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.zbits, b.zbits);
        // Neighbour steps only.
        for w in a.positions.windows(2) {
            let d: i64 = (0..MAX_DIM).map(|i| (w[1][i] - w[0][i]).abs()).sum();
            assert_eq!(d, 1);
        }
        // Ladder times: strict records, intermediate levels below.
        for pair in a.ladder_times.windows(2) {
            let (s, t) = (pair[0] as usize, pair[1] as usize);
            assert!(a.levels[t] > a.levels[s]);
            for m in s + 1..t {
                assert!(a.levels[m] <= a.levels[s]);
            }
        }
    }

    #[test]
    fn transience_in_the_drift_direction() {
        let env = pareto_env(100);
        let mut positive = 0;
        for seed in 0..40u64 {
            let t = run_walk(&env, ORIGIN, 20_000, WalkRng::replica(5, seed)).unwrap();
            if *t.levels.last().unwrap() > 0.0 {
                positive += 1;
            }
        }
        assert!(positive >= 38, "only {positive}/40 drifted forward");
    }

    #[test]
    fn detect_d_hand_cases() {
        let env = unit_env(2.0, 1.0);
        // Immediate backtrack: X_1 = X_0 - e_1.
        let traj = EnhancedTrajectory {
            positions: vec![ORIGIN, [-1, 0, 0, 0]],
            zbits: vec![false, true],
            levels: vec![0.0, -1.0],
            ladder_times: vec![0],
        };
        assert_eq!(detect_d(&env, &traj, 10.0), DStatus::Finite(1));
        // Z_1 = 0 triggers I_0 even while moving forward.
        let traj2 = EnhancedTrajectory {
            positions: vec![ORIGIN, [1, 0, 0, 0], [2, 0, 0, 0]],
            zbits: vec![false, false, true],
            levels: vec![0.0, 1.0, 2.0],
            ladder_times: vec![0, 1, 2],
        };
        assert_eq!(detect_d(&env, &traj2, 10.0), DStatus::Finite(1));
        // Straight path with all Z=1 certifies at the margin.
        let n = 50usize;
        let traj3 = EnhancedTrajectory {
            positions: (0..=n as i64).map(|i| [i, 0, 0, 0]).collect(),
            zbits: std::iter::once(false).chain(std::iter::repeat(true)).take(n + 1).collect(),
            levels: (0..=n).map(|i| i as f64).collect(),
            ladder_times: (0..=n as u64).collect(),
        };
        assert_eq!(detect_d(&env, &traj3, 10.0), DStatus::CertifiedInfinite(10.0));
        // Sideways shuffle that ends the data: censored.
        let traj4 = EnhancedTrajectory {
            positions: vec![ORIGIN, [1, 0, 0, 0], [1, 1, 0, 0]],
            zbits: vec![false, true, true],
            levels: vec![0.0, 1.0, 1.0],
            ladder_times: vec![0, 1],
        };
        assert_eq!(detect_d(&env, &traj4, 10.0), DStatus::Censored);
        // Third clause: sitting at X_0 + e_2 and stepping with Z=0. Needs a
        // strictly positive e_2 component so the visit does not already
        // trigger the backtrack clause.
        let skew = ConductanceField::new(
            ConductanceLaw::Bounded { lo: 1.0, hi: 1.0 },
            3,
            2,
            2.0,
            1.0,
            &[2.0, 1.0],
        )
        .unwrap();
        let s5 = 5f64.sqrt();
        let traj5 = EnhancedTrajectory {
            positions: vec![ORIGIN, [0, 1, 0, 0], [1, 1, 0, 0]],
            zbits: vec![false, true, false],
            levels: vec![0.0, 1.0 / s5, 3.0 / s5],
            ladder_times: vec![0, 1, 2],
        };
        assert_eq!(detect_d(&skew, &traj5, 10.0), DStatus::Finite(2));
    }

    #[test]
    fn detect_d_agrees_with_reference() {
        let env = pareto_env(55);
        // A skewed direction makes the third clause reachable before the
        // backtrack clause (sideways neighbours sit strictly above level 0).
        let skew = ConductanceField::new(
            ConductanceLaw::Pareto {
                gamma: 0.5,
                x_min: 1.0,
            },
            56,
            2,
            20.0,
            1.0,
            &[2.0, 1.0],
        )
        .unwrap();
        let mut rng = WalkRng::new(999);
        for trial in 0..1500u64 {
            let margin = 3.0 + (rng.next_unit() * 10.0).floor();
            let t = run_walk(&env, ORIGIN, 60, WalkRng::replica(313, trial)).unwrap();
            let fast = detect_d_from(&env, &t, 0, margin);
            let slow = detect_d_reference(&env, &t, 0, margin);
            assert_eq!(fast, slow, "trial {trial} margin {margin}");
            let t2 = run_walk(&skew, ORIGIN, 60, WalkRng::replica(717, trial)).unwrap();
            let fast2 = detect_d_from(&skew, &t2, 0, margin);
            let slow2 = detect_d_reference(&skew, &t2, 0, margin);
            assert_eq!(fast2, slow2, "skew trial {trial} margin {margin}");
        }
    }
}
