//! Collapsed-edge trap model: the lattice with one distinguished edge
//! merged into a single vertex, exact excursion and exit laws on that edge,
//! a maximal-agreement coupling between the trace of the true walk and the
//! collapsed walk, and per-trap observables (entries, occupancy, scaled
//! occupation time, synthesized limit samples).

use serde::{Deserialize, Serialize};

use crate::env::{Environment, UnitSource};
use crate::lattice::{directions, step, LatticeEdge, Point, MAX_DIM};
use crate::regen::{collapsed_weight, RegenBlock};
use crate::stats::{sample_exponential, sample_geometric};
use crate::walk::{draw_step, kernel_at, EnhancedTrajectory, Stepper, WalkRng};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum TrapError {
    #[error("block is not flagged as holding a large edge at this threshold")]
    NotLargeTrap,
    #[error("degenerate excursion parameters: {0}")]
    Degenerate(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
}

/// The two endpoints of the distinguished edge, named by level: `Plus` is
/// the endpoint with the weakly larger level (under the nonnegative
/// direction convention, the upper lattice endpoint).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// A state of the collapsed lattice: an ordinary vertex, or the merged
/// vertex standing for both endpoints of the distinguished edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollapsedState {
    At(Point),
    Xe,
}

/// Local description of the lattice around one collapsed edge.
///
/// All weights are relative: the common tilt factor exp((e^+ + e^-) . l)
/// is divided out, so entries stay within exp(+-2 lambda sqrt(d)) of the
/// raw conductances and never overflow. In this normalization the
/// collapsed edge itself weighs exactly c_*(e).
#[derive(Clone, Debug)]
pub struct CollapsedPatch {
    pub base_edge: LatticeEdge,
    /// Exit channels from the merged vertex through the plus endpoint:
    /// (neighbour, relative weight).
    pub exits_plus: Vec<(Point, f64)>,
    /// Exit channels through the minus endpoint.
    pub exits_minus: Vec<(Point, f64)>,
    /// Relative weight of the collapsed edge, c_*(e).
    pub c_edge: f64,
    /// Stationary weight of the merged vertex in the relative
    /// normalization: the sum of all exit weights.
    pub pi_xe: f64,
    /// Level of the merged vertex for backtracking-type checks
    /// (minimum of the endpoint levels).
    pub level_min: f64,
    /// Level for record-type checks (maximum of the endpoint levels).
    pub level_max: f64,
}

impl CollapsedPatch {
    /// Which endpoint a point is, if it is one.
    pub fn side_of(&self, p: Point) -> Option<Side> {
        let (minus, plus) = self.endpoints();
        if p == plus {
            Some(Side::Plus)
        } else if p == minus {
            Some(Side::Minus)
        } else {
            None
        }
    }

    /// (minus, plus) endpoints of the base edge.
    pub fn endpoints(&self) -> (Point, Point) {
        self.base_edge.endpoints()
    }

    /// Relative stationary weight of one endpoint: c(e) plus its side's
    /// exit weights.
    pub fn pi_side(&self, side: Side) -> f64 {
        let exits = match side {
            Side::Plus => &self.exits_plus,
            Side::Minus => &self.exits_minus,
        };
        self.c_edge + exits.iter().map(|&(_, w)| w).sum::<f64>()
    }

    /// All exit channels, plus side first; the canonical channel indexing
    /// used by every law in this module.
    pub fn channels(&self) -> impl Iterator<Item = &(Point, f64)> {
        self.exits_plus.iter().chain(self.exits_minus.iter())
    }

    pub fn channel_count(&self) -> usize {
        self.exits_plus.len() + self.exits_minus.len()
    }

    /// One-step law of the collapsed walk at the merged vertex, aligned
    /// with [`CollapsedPatch::channels`].
    pub fn collapsed_law(&self) -> Vec<f64> {
        self.channels().map(|&(_, w)| w / self.pi_xe).collect()
    }

    /// Exact law of the exit vertex of a full excursion entered through
    /// `entry`, aligned with [`CollapsedPatch::channels`].
    pub fn exit_law_from(&self, entry: Side) -> Vec<f64> {
        let plus_w: Vec<f64> = self.exits_plus.iter().map(|&(_, w)| w).collect();
        let minus_w: Vec<f64> = self.exits_minus.iter().map(|&(_, w)| w).collect();
        let law = exact_exit_distribution(self.c_edge, &plus_w, &minus_w, entry)
            .expect("patch weights are positive by construction");
        law.plus.into_iter().chain(law.minus).collect()
    }
}

/// Builds the collapsed patch around an edge. Conductances of all other
/// edges are inherited unchanged; the merged vertex keeps the 2(2d-1)
/// outgoing edges of the two endpoints.
pub fn collapse<E: Environment>(env: &E, e: LatticeEdge) -> CollapsedPatch {
    let dim = env.dim();
    let lambda = env.lambda();
    let dirv = env.direction();
    let (minus, plus) = e.endpoints();
    let mut exits_plus = Vec::with_capacity(2 * dim - 1);
    let mut exits_minus = Vec::with_capacity(2 * dim - 1);
    for (end, other, out) in [
        (plus, minus, &mut exits_plus),
        (minus, plus, &mut exits_minus),
    ] {
        for d in directions(dim) {
            let y = step(end, d, dim);
            if y == other {
                continue;
            }
            let c = env.conductance(LatticeEdge::from_step(end, d, dim));
            // Relative weight of the original edge (end, y):
            // c exp((end + y - e^+ - e^-) . l) = c exp((y - other) . l).
            let mut diff = [0i64; MAX_DIM];
            for i in 0..MAX_DIM {
                diff[i] = y[i] - other[i];
            }
            let w = c * (lambda * crate::lattice::dot(diff, dirv)).exp();
            out.push((y, w));
        }
    }
    let pi_xe = exits_plus.iter().chain(exits_minus.iter()).map(|&(_, w)| w).sum();
    let lp = env.level(plus);
    let lm = env.level(minus);
    CollapsedPatch {
        base_edge: e,
        exits_plus,
        exits_minus,
        c_edge: env.conductance(e),
        pi_xe,
        level_min: lp.min(lm),
        level_max: lp.max(lm),
    }
}

/// Exact exit distribution of an excursion on a two-vertex edge with
/// absorbing neighbours, per entry side.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitLaw {
    /// Exit probabilities through the plus-side neighbours, in input order.
    pub plus: Vec<f64>,
    /// Exit probabilities through the minus-side neighbours.
    pub minus: Vec<f64>,
}

/// Closed-form exit distribution of the walk dropped at one endpoint of an
/// edge with conductance `c_e`, absorbed at the endpoint neighbours.
///
/// With pi^+ = c_e + sum(adj_plus), pi^- = c_e + sum(adj_minus) and
/// S = pi^+ pi^- - c_e^2, entering at plus gives exit probability
/// a_i pi^- / S through plus-neighbour i and b_j c_e / S through
/// minus-neighbour j; the total is exactly 1.
pub fn exact_exit_distribution(
    c_e: f64,
    adj_plus: &[f64],
    adj_minus: &[f64],
    start: Side,
) -> Result<ExitLaw, TrapError> {
    if !(c_e > 0.0) {
        return Err(TrapError::Degenerate("edge conductance must be positive"));
    }
    if adj_plus.is_empty() || adj_minus.is_empty() {
        return Err(TrapError::Degenerate("each side needs a neighbour"));
    }
    if adj_plus.iter().chain(adj_minus).any(|&w| !(w > 0.0)) {
        return Err(TrapError::Degenerate("adjacency weights must be positive"));
    }
    let pi_plus: f64 = c_e + adj_plus.iter().sum::<f64>();
    let pi_minus: f64 = c_e + adj_minus.iter().sum::<f64>();
    let s = pi_plus * pi_minus - c_e * c_e;
    let (near, far, pi_far) = match start {
        Side::Plus => (adj_plus, adj_minus, pi_minus),
        Side::Minus => (adj_minus, adj_plus, pi_plus),
    };
    let near_probs: Vec<f64> = near.iter().map(|&a| a * pi_far / s).collect();
    let far_probs: Vec<f64> = far.iter().map(|&b| b * c_e / s).collect();
    let (plus, minus) = match start {
        Side::Plus => (near_probs, far_probs),
        Side::Minus => (far_probs, near_probs),
    };
    Ok(ExitLaw { plus, minus })
}

/// Success parameter of the geometric law of completed round trips inside
/// the edge: q = 1 - c_e^2 / (pi^+ pi^-).
pub fn half_excursion_geometric_param(
    c_e: f64,
    pi_plus: f64,
    pi_minus: f64,
) -> Result<f64, TrapError> {
    if !(c_e > 0.0) {
        return Err(TrapError::Degenerate("edge conductance must be positive"));
    }
    if !(c_e < pi_plus && c_e < pi_minus) {
        return Err(TrapError::Precondition(
            "each endpoint needs weight beyond the edge itself",
        ));
    }
    Ok(1.0 - (c_e * c_e) / (pi_plus * pi_minus))
}

/// Outcome of one excursion on the two-endpoint chain, channel-indexed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExcursionOutcome {
    /// Completed round trips: floor((steps_inside - 1) / 2). Exactly
    /// geometric with the parameter of
    /// [`half_excursion_geometric_param`]; independent of the exit side.
    pub half_crossings: u64,
    /// Steps from the entry state until the exit step, inclusive.
    pub steps_inside: u64,
    pub exit_side: Side,
    /// Index into the exit side's adjacency list.
    pub exit_index: usize,
}

/// One excursion record in lattice terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    /// The endpoint through which the walk entered the edge.
    pub entry_vertex: Point,
    /// The neighbour through which it left; adjacent to the edge and not
    /// an endpoint.
    pub exit_vertex: Point,
    pub steps_inside: u64,
    /// Completed round trips, floor((steps_inside - 1) / 2).
    pub half_crossings: u64,
}

fn pick_weighted<R: UnitSource>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.next_unit() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u <= acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Literal step-by-step excursion: one uniform draw per step, crossing the
/// edge or exiting through a neighbour proportionally to the weights. The
/// reference law for the closed-form samplers.
pub fn simulate_excursion<R: UnitSource>(
    c_e: f64,
    adj_plus: &[f64],
    adj_minus: &[f64],
    start: Side,
    rng: &mut R,
) -> Result<ExcursionOutcome, TrapError> {
    // Reuse the parameter validation of the closed form.
    exact_exit_distribution(c_e, adj_plus, adj_minus, start)?;
    let pi_plus: f64 = c_e + adj_plus.iter().sum::<f64>();
    let pi_minus: f64 = c_e + adj_minus.iter().sum::<f64>();
    let mut side = start;
    let mut steps = 0u64;
    loop {
        let (pi, adj) = match side {
            Side::Plus => (pi_plus, adj_plus),
            Side::Minus => (pi_minus, adj_minus),
        };
        let u = rng.next_unit() * pi;
        steps += 1;
        if u <= c_e {
            side = side.other();
            continue;
        }
        // Exit: locate the channel within the remaining mass.
        let mut acc = c_e;
        let mut idx = adj.len() - 1;
        for (i, &w) in adj.iter().enumerate() {
            acc += w;
            if u <= acc {
                idx = i;
                break;
            }
        }
        return Ok(ExcursionOutcome {
            half_crossings: (steps - 1) / 2,
            steps_inside: steps,
            exit_side: side,
            exit_index: idx,
        });
    }
}

/// Closed-form excursion sampler: three draws regardless of the excursion
/// length. Round trips are geometric, the exit side is an independent
/// Bernoulli, and the channel is weight-proportional within the side.
pub fn sample_excursion_fast<R: UnitSource>(
    c_e: f64,
    adj_plus: &[f64],
    adj_minus: &[f64],
    start: Side,
    rng: &mut R,
) -> Result<ExcursionOutcome, TrapError> {
    exact_exit_distribution(c_e, adj_plus, adj_minus, start)?;
    let pi_plus: f64 = c_e + adj_plus.iter().sum::<f64>();
    let pi_minus: f64 = c_e + adj_minus.iter().sum::<f64>();
    let q = half_excursion_geometric_param(c_e, pi_plus, pi_minus)?;
    let m = sample_geometric(rng, q);
    let (p_start, p_other) = match start {
        Side::Plus => (c_e / pi_plus, c_e / pi_minus),
        Side::Minus => (c_e / pi_minus, c_e / pi_plus),
    };
    // Conditioned on the trip count, the walk exits from the entry side
    // with probability (1 - p_start) / (1 - p_start p_other).
    let stay = (1.0 - p_start) / (1.0 - p_start * p_other);
    let exit_side = if rng.next_unit() <= stay {
        start
    } else {
        start.other()
    };
    let adj = match exit_side {
        Side::Plus => adj_plus,
        Side::Minus => adj_minus,
    };
    let total: f64 = adj.iter().sum();
    let idx = pick_weighted(adj, total, rng);
    let steps = if exit_side == start { 2 * m + 1 } else { 2 * m + 2 };
    Ok(ExcursionOutcome {
        half_crossings: m,
        steps_inside: steps,
        exit_side,
        exit_index: idx,
    })
}

/// Samples one excursion on a patch, in lattice terms.
pub fn sample_patch_excursion<E: Environment, R: UnitSource>(
    env: &E,
    patch: &CollapsedPatch,
    entry: Side,
    rng: &mut R,
    literal: bool,
) -> ExcursionRecord {
    let _ = env;
    let plus_w: Vec<f64> = patch.exits_plus.iter().map(|&(_, w)| w).collect();
    let minus_w: Vec<f64> = patch.exits_minus.iter().map(|&(_, w)| w).collect();
    let out = if literal {
        simulate_excursion(patch.c_edge, &plus_w, &minus_w, entry, rng)
    } else {
        sample_excursion_fast(patch.c_edge, &plus_w, &minus_w, entry, rng)
    }
    .expect("patch weights are positive by construction");
    let (minus, plus) = patch.endpoints();
    let entry_vertex = match entry {
        Side::Plus => plus,
        Side::Minus => minus,
    };
    let exit_vertex = match out.exit_side {
        Side::Plus => patch.exits_plus[out.exit_index].0,
        Side::Minus => patch.exits_minus[out.exit_index].0,
    };
    ExcursionRecord {
        entry_vertex,
        exit_vertex,
        steps_inside: out.steps_inside,
        half_crossings: out.half_crossings,
    }
}

/// A stored collapsed-walk trajectory with both level conventions.
#[derive(Clone, Debug)]
pub struct CollapsedTrajectory {
    pub states: Vec<CollapsedState>,
    /// zbits[k] belongs to the step arriving at states[k]; zbits[0] is a
    /// placeholder. Steps out of the merged vertex always carry z = 0.
    pub zbits: Vec<bool>,
    /// Levels relative to the start, minimum convention at the merged
    /// vertex (used by backtracking-type checks).
    pub levels_min: Vec<f64>,
    /// Maximum convention (used by record-type checks).
    pub levels_max: Vec<f64>,
}

fn relative_levels<E: Environment>(
    env: &E,
    patch: &CollapsedPatch,
    base: f64,
    s: CollapsedState,
) -> (f64, f64) {
    match s {
        CollapsedState::At(p) => {
            let l = env.level(p) - base;
            (l, l)
        }
        CollapsedState::Xe => (patch.level_min - base, patch.level_max - base),
    }
}

/// Runs the collapsed walk: ordinary kernel steps away from the merged
/// vertex, the weight-proportional exit law with z forced to 0 at it.
pub fn run_collapsed_walk<E: Environment>(
    env: &E,
    patch: &CollapsedPatch,
    start: Point,
    steps: u64,
    mut rng: WalkRng,
) -> Result<CollapsedTrajectory, TrapError> {
    if patch.side_of(start).is_some() {
        return Err(TrapError::Precondition("start off the collapsed edge"));
    }
    let dim = env.dim();
    let base = env.level(start);
    let mut states = Vec::with_capacity(steps as usize + 1);
    let mut zbits = Vec::with_capacity(steps as usize + 1);
    let mut levels_min = Vec::with_capacity(steps as usize + 1);
    let mut levels_max = Vec::with_capacity(steps as usize + 1);
    let mut cur = CollapsedState::At(start);
    let push = |s: CollapsedState, z: bool, lv: &mut Vec<f64>, lx: &mut Vec<f64>, st: &mut Vec<CollapsedState>, zb: &mut Vec<bool>| {
        let (lmin, lmax) = relative_levels(env, patch, base, s);
        st.push(s);
        zb.push(z);
        lv.push(lmin);
        lx.push(lmax);
    };
    push(cur, false, &mut levels_min, &mut levels_max, &mut states, &mut zbits);
    for _ in 0..steps {
        let (next, z) = match cur {
            CollapsedState::At(v) => {
                let kernel = kernel_at(env, v);
                let (d, z) = draw_step(&kernel, dim, rng.next_unit());
                let target = step(v, d, dim);
                match patch.side_of(target) {
                    Some(_) => (CollapsedState::Xe, z),
                    None => (CollapsedState::At(target), z),
                }
            }
            CollapsedState::Xe => {
                let weights: Vec<f64> = patch.channels().map(|&(_, w)| w).collect();
                let idx = pick_weighted(&weights, patch.pi_xe, &mut rng);
                let target = patch
                    .channels()
                    .nth(idx)
                    .expect("channel index in range")
                    .0;
                (CollapsedState::At(target), false)
            }
        };
        cur = next;
        push(cur, z, &mut levels_min, &mut levels_max, &mut states, &mut zbits);
    }
    Ok(CollapsedTrajectory {
        states,
        zbits,
        levels_min,
        levels_max,
    })
}

/// Samples the trace of the true walk on the collapsed state space by
/// integrating out excursions exactly: away from the merged vertex it is
/// the ordinary kernel, at it the exit vertex follows the closed-form exit
/// law of the entry side and the exit step's z follows the exit endpoint's
/// kernel. One trace step per output state.
pub fn trace_walk_marginal<E: Environment>(
    env: &E,
    patch: &CollapsedPatch,
    start: Point,
    trace_steps: u64,
    mut rng: WalkRng,
) -> Result<Vec<(CollapsedState, bool)>, TrapError> {
    if patch.side_of(start).is_some() {
        return Err(TrapError::Precondition("start off the collapsed edge"));
    }
    let mut out = Vec::with_capacity(trace_steps as usize + 1);
    out.push((CollapsedState::At(start), false));
    let mut cur = CollapsedState::At(start);
    let mut entry: Option<Side> = None;
    for _ in 0..trace_steps {
        let (next, z) = advance_trace_side(env, patch, cur, &mut entry, &mut rng);
        cur = next;
        out.push((cur, z));
    }
    Ok(out)
}

/// One trace step of the X side (exact excursion integration).
fn advance_trace_side<E: Environment>(
    env: &E,
    patch: &CollapsedPatch,
    cur: CollapsedState,
    entry: &mut Option<Side>,
    rng: &mut WalkRng,
) -> (CollapsedState, bool) {
    let dim = env.dim();
    match cur {
        CollapsedState::At(v) => {
            let kernel = kernel_at(env, v);
            let (d, z) = draw_step(&kernel, dim, rng.next_unit());
            let target = step(v, d, dim);
            match patch.side_of(target) {
                Some(side) => {
                    *entry = Some(side);
                    (CollapsedState::Xe, z)
                }
                None => (CollapsedState::At(target), z),
            }
        }
        CollapsedState::Xe => {
            let side = entry.expect("entry side recorded when the edge was hit");
            let law = patch.exit_law_from(side);
            let idx = pick_weighted(&law, 1.0, rng);
            let target = patch.channels().nth(idx).expect("channel in range").0;
            let z = exit_z_bit(env, patch, idx, rng);
            (CollapsedState::At(target), z)
        }
    }
}

/// Z-bit of the exit step: the true walk leaves through the endpoint
/// adjacent to the chosen channel, so the bit is Bernoulli with that
/// endpoint's clamped-to-full kernel ratio in the exit direction.
fn exit_z_bit<E: Environment>(
    env: &E,
    patch: &CollapsedPatch,
    channel: usize,
    rng: &mut WalkRng,
) -> bool {
    let (minus, plus) = patch.endpoints();
    let (endpoint, target) = if channel < patch.exits_plus.len() {
        (plus, patch.exits_plus[channel].0)
    } else {
        (minus, patch.exits_minus[channel - patch.exits_plus.len()].0)
    };
    let kernel = kernel_at(env, endpoint);
    let dim = env.dim();
    for d in directions(dim) {
        if step(endpoint, d, dim) == target {
            let j = d.0 as usize;
            let ratio = kernel.p_k[j] / kernel.p[j];
            return rng.next_unit() <= ratio;
        }
    }
    unreachable!("channel vertex is adjacent to its endpoint");
}

/// Jointly sampled pair (trace of the true walk, collapsed walk) with the
/// first time their positions disagree, in trace steps.
#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub x_side: Vec<(CollapsedState, bool)>,
    pub y_side: Vec<(CollapsedState, bool)>,
    /// Trace-step index of the first positional disagreement.
    pub decoupling_time: Option<u64>,
}

/// Maximal-agreement coupling of the trace walk against the collapsed
/// walk. Away from the merged vertex the two walks share every draw and
/// coincide. At the merged vertex the exit vertex agrees with probability
/// sum_y min(exact exit law, collapsed law); on disagreement each side
/// draws from its residual law and the pair evolves independently ever
/// after. Both marginals are exact.
pub fn run_coupled<E: Environment>(
    env: &E,
    e: LatticeEdge,
    start: Point,
    horizon: u64,
    rng: WalkRng,
) -> Result<CoupledRun, TrapError> {
    if horizon < 1 {
        return Err(TrapError::Precondition("horizon must be at least 1"));
    }
    let patch = collapse(env, e);
    if patch.side_of(start).is_some() {
        return Err(TrapError::Precondition("start off the collapsed edge"));
    }
    let dim = env.dim();
    let mut shared = rng.substream(1);
    let mut xs = rng.substream(2);
    let mut ys = rng.substream(3);

    let mut x_side = vec![(CollapsedState::At(start), false)];
    let mut y_side = vec![(CollapsedState::At(start), false)];
    let mut decoupling_time = None;

    // Coupled phase: one shared state.
    let mut cur = CollapsedState::At(start);
    let mut entry: Option<Side> = None;
    let mut x_cur = cur;
    let mut y_cur = cur;
    while decoupling_time.is_none() && x_side.len() <= horizon as usize {
        match cur {
            CollapsedState::At(v) => {
                let kernel = kernel_at(env, v);
                let (d, z) = draw_step(&kernel, dim, shared.next_unit());
                let target = step(v, d, dim);
                cur = match patch.side_of(target) {
                    Some(side) => {
                        entry = Some(side);
                        CollapsedState::Xe
                    }
                    None => CollapsedState::At(target),
                };
                x_side.push((cur, z));
                y_side.push((cur, z));
            }
            CollapsedState::Xe => {
                let side = entry.expect("entry side known at the merged vertex");
                let x_law = patch.exit_law_from(side);
                let y_law = patch.collapsed_law();
                let mins: Vec<f64> = x_law
                    .iter()
                    .zip(&y_law)
                    .map(|(&a, &b)| a.min(b))
                    .collect();
                let agree: f64 = mins.iter().sum();
                let u = shared.next_unit();
                if u <= agree {
                    // Agreement: conditioned on u <= agree the draw is
                    // uniform on [0, agree], so it locates the channel
                    // inside the overlap mass directly.
                    let mut acc = 0.0;
                    let mut idx = mins.len() - 1;
                    for (i, &w) in mins.iter().enumerate() {
                        acc += w;
                        if u <= acc {
                            idx = i;
                            break;
                        }
                    }
                    let target = patch.channels().nth(idx).expect("channel in range").0;
                    let zx = exit_z_bit(env, &patch, idx, &mut xs);
                    x_side.push((CollapsedState::At(target), zx));
                    y_side.push((CollapsedState::At(target), false));
                    cur = CollapsedState::At(target);
                } else {
                    // Residual product rule: each side draws its residual
                    // independently; the pair is decoupled from here on.
                    let xr: Vec<f64> = x_law.iter().zip(&mins).map(|(&a, &m)| a - m).collect();
                    let yr: Vec<f64> = y_law.iter().zip(&mins).map(|(&b, &m)| b - m).collect();
                    let xtot: f64 = xr.iter().sum();
                    let ytot: f64 = yr.iter().sum();
                    let xi = pick_weighted(&xr, xtot, &mut xs);
                    let yi = pick_weighted(&yr, ytot, &mut ys);
                    let xv = patch.channels().nth(xi).expect("channel in range").0;
                    let yv = patch.channels().nth(yi).expect("channel in range").0;
                    let zx = exit_z_bit(env, &patch, xi, &mut xs);
                    decoupling_time = Some(x_side.len() as u64);
                    x_side.push((CollapsedState::At(xv), zx));
                    y_side.push((CollapsedState::At(yv), false));
                    x_cur = CollapsedState::At(xv);
                    y_cur = CollapsedState::At(yv);
                }
            }
        }
        if decoupling_time.is_none() {
            x_cur = cur;
            y_cur = cur;
        }
    }

    // Decoupled phase: independent evolution of both marginals.
    let mut x_entry = entry;
    while x_side.len() <= horizon as usize {
        let (next, z) = advance_trace_side(env, &patch, x_cur, &mut x_entry, &mut xs);
        x_cur = next;
        x_side.push((x_cur, z));
    }
    while y_side.len() <= horizon as usize {
        let (next, z) = match y_cur {
            CollapsedState::At(v) => {
                let kernel = kernel_at(env, v);
                let (d, z) = draw_step(&kernel, dim, ys.next_unit());
                let target = step(v, d, dim);
                match patch.side_of(target) {
                    Some(_) => (CollapsedState::Xe, z),
                    None => (CollapsedState::At(target), z),
                }
            }
            CollapsedState::Xe => {
                let weights: Vec<f64> = patch.channels().map(|&(_, w)| w).collect();
                let idx = pick_weighted(&weights, patch.pi_xe, &mut ys);
                (
                    CollapsedState::At(patch.channels().nth(idx).expect("channel in range").0),
                    false,
                )
            }
        };
        y_cur = next;
        y_side.push((y_cur, z));
    }

    Ok(CoupledRun {
        x_side,
        y_side,
        decoupling_time,
    })
}

/// Literal trace of a true enhanced walk on the collapsed state space:
/// runs the full walk and drops steps internal to the edge. The reference
/// law for [`trace_walk_marginal`].
pub fn trace_of_true_walk<E: Environment>(
    env: &E,
    e: LatticeEdge,
    start: Point,
    trace_steps: u64,
    rng: WalkRng,
) -> Result<Vec<(CollapsedState, bool)>, TrapError> {
    if e.touches(start) {
        return Err(TrapError::Precondition("start off the collapsed edge"));
    }
    let mut stepper = Stepper::new(env, start, rng);
    let mut out = Vec::with_capacity(trace_steps as usize + 1);
    out.push((CollapsedState::At(start), false));
    while out.len() <= trace_steps as usize {
        let was_inside = e.touches(stepper.pos);
        let o = stepper.advance();
        let now_inside = e.touches(stepper.pos);
        if was_inside && now_inside {
            continue; // a move within the edge is not a trace step
        }
        let state = if now_inside {
            CollapsedState::Xe
        } else {
            CollapsedState::At(stepper.pos)
        };
        out.push((state, o.z));
    }
    Ok(out)
}

/// Modified regeneration times of a collapsed trajectory: the chained
/// iteration with candidates barred from the merged vertex (the candidate
/// state and the two before it must be ordinary vertices) and the level
/// conventions split by check type. Exposed for marginal sanity checks.
pub fn collapsed_regeneration_times<E: Environment>(
    env: &E,
    traj: &CollapsedTrajectory,
    margin_level: f64,
) -> Vec<u64> {
    let n = traj.states.len();
    let mut taus = Vec::new();
    let mut base = 0usize;
    let mut m_level = traj.levels_max[base];
    let mut m_floor = base;
    'outer: loop {
        let mut t_h = None;
        for t in m_floor..n {
            if traj.levels_max[t] > m_level {
                t_h = Some(t);
                break;
            }
        }
        let t_h = match t_h {
            Some(t) => t,
            None => return taus,
        };
        // Candidate: double forward step onto an open ordinary vertex,
        // fresh record within the shift, merged vertex excluded.
        let mut cand = None;
        let mut run_max = f64::NEG_INFINITY;
        for i in 2..n - t_h {
            if i > 2 {
                run_max = run_max.max(traj.levels_max[t_h + i - 3]);
            }
            let (s0, s1, s2) = (
                traj.states[t_h + i - 2],
                traj.states[t_h + i - 1],
                traj.states[t_h + i],
            );
            let (p0, p1, p2) = match (s0, s1, s2) {
                (CollapsedState::At(a), CollapsedState::At(b), CollapsedState::At(c)) => (a, b, c),
                _ => continue,
            };
            if !is_e1(p0, p1) || !is_e1(p1, p2) {
                continue;
            }
            if i > 2 && traj.levels_max[t_h + i - 2] <= run_max {
                continue;
            }
            if crate::env::classify_vertex(env, p2) != crate::env::VertexClass::Open {
                continue;
            }
            cand = Some(t_h + i);
            break;
        }
        let s = match cand {
            Some(s) => s,
            None => return taus,
        };
        // Backtracking check from s with the minimum level convention; the
        // merged vertex never matches the neighbour-return clause.
        let origin_level = traj.levels_min[s];
        let origin = match traj.states[s] {
            CollapsedState::At(p) => p,
            CollapsedState::Xe => unreachable!("candidates are ordinary vertices"),
        };
        let mut outcome = None; // None = censored
        for t in s + 1..n {
            let rel = traj.levels_min[t] - origin_level;
            if traj.zbits[t] == false && t == s + 1 {
                outcome = Some(Err(t - s));
                break;
            }
            if !traj.zbits[t] {
                if let CollapsedState::At(prev) = traj.states[t - 1] {
                    let mut diff = [0i64; MAX_DIM];
                    for k in 0..MAX_DIM {
                        diff[k] = prev[k] - origin[k];
                    }
                    let mut hit = false;
                    for j in 0..env.dim() {
                        let mut unit = [0i64; MAX_DIM];
                        unit[j] = 1;
                        if diff == unit {
                            hit = true;
                            break;
                        }
                    }
                    if hit {
                        outcome = Some(Err(t - s));
                        break;
                    }
                }
            }
            if rel <= 0.0 {
                outcome = Some(Err(t - s));
                break;
            }
            if rel >= margin_level {
                outcome = Some(Ok(()));
                break;
            }
        }
        match outcome {
            Some(Ok(())) => {
                taus.push(s as u64);
                base = s;
                m_level = traj.levels_max[base];
                m_floor = base;
            }
            Some(Err(d)) => {
                let r = (s + d).min(n - 1);
                let mut sup = f64::NEG_INFINITY;
                for t in base..=r {
                    sup = sup.max(traj.levels_max[t]);
                }
                m_level = sup;
                m_floor = r;
                continue 'outer;
            }
            None => return taus,
        }
    }
}

fn is_e1(a: Point, b: Point) -> bool {
    let mut d = a;
    d[0] += 1;
    d == b
}

/// Per-trap observables of one block.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrapObservables {
    /// Entries into the principal edge from outside it.
    pub v_n: u64,
    /// Tilt-free collapsed weight of the merged vertex.
    pub pi_bar: f64,
    /// Steps spent on the principal edge's endpoints.
    pub t_on_edge: u64,
    /// Occupation time scaled by the edge conductance.
    pub w_n: f64,
    /// Synthesized limit sample: (2 / pi_bar) sum of v_n unit
    /// exponentials, drawn from a stream separated from walk randomness.
    pub w_infty_sample: f64,
}

/// Recounts trap observables of an LT block from its trajectory and draws
/// the matching synthesized limit sample.
///
/// When the large-trap threshold exceeds the openness threshold K (the
/// operating regime), a block's principal edge has closed endpoints, the
/// regeneration point cannot sit on it, and the entry count is at least 1.
/// Outside that regime a boundary-straddling edge can yield zero entries;
/// the observables are still returned, with a zero limit sample.
pub fn collect_trap_observables<E: Environment, R: UnitSource>(
    env: &E,
    traj: &EnhancedTrajectory,
    block: &RegenBlock,
    n: f64,
    rng: &mut R,
) -> Result<TrapObservables, TrapError> {
    if !block.flags.lt {
        return Err(TrapError::NotLargeTrap);
    }
    let e = block.principal_edge.ok_or(TrapError::NotLargeTrap)?;
    let c_e = env.conductance(e);
    if c_e < n {
        return Err(TrapError::NotLargeTrap);
    }
    let start = block.start_time as usize;
    let end = block.end_time as usize;
    if end >= traj.len() {
        return Err(TrapError::Precondition("block range within trajectory"));
    }
    let mut v_n = 0u64;
    let mut t_on = 0u64;
    for s in start..end {
        if e.touches(traj.positions[s]) {
            t_on += 1;
            // An entry is an arrival from outside the edge; the walk's
            // start state counts as arriving from outside.
            if s == 0 || !e.touches(traj.positions[s - 1]) {
                v_n += 1;
            }
        }
    }
    let pi_bar = collapsed_weight(env, e);
    let mut sum = 0.0;
    for _ in 0..v_n {
        sum += 2.0 * sample_exponential(rng, 1.0);
    }
    Ok(TrapObservables {
        v_n,
        pi_bar,
        t_on_edge: t_on,
        w_n: t_on as f64 / c_e,
        w_infty_sample: sum / pi_bar,
    })
}
