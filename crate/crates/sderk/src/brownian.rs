//! Wiener increment generation and the binary Brownian tree.
//!
//! Step rejection must never discard realized noise. Increments live on a
//! dyadic grid: one base step spans `2^max_depth` integer ticks, and every
//! node covers an aligned power-of-two tick span. Rejected intervals are
//! halved with the first half drawn from the conditional law
//! `N(dW/2, dt/4)` given the parent increment, and the second half defined
//! by exact subtraction, so the realized path is preserved bitwise. Merging
//! two sibling halves back into their parent is the exact inverse.

use crate::error::{Error, Result};

/// Default dyadic refinement depth: a base step may be halved 40 times.
pub const DEFAULT_MAX_DEPTH: u32 = 40;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based stream of standard normal deviates.
///
/// Every value is a pure function of `(master_seed, stream, position)`,
/// so replaying a trajectory is independent of host scheduling and worker
/// count. Sequential draws advance an internal counter; the Brownian tree
/// instead keys each deviate by its interval position, which makes the
/// realized path independent of the order in which the tree is explored
/// (and hence identical across tolerance settings for the same seed).
/// Normals come from the Box-Muller transform of two keyed draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

/// Key domains separating draw roles within one stream.
const DOMAIN_SEQUENTIAL: u64 = 1;
const DOMAIN_FRESH: u64 = 2;
const DOMAIN_SPLIT: u64 = 3;

impl RngStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        RngStream {
            key: mix64(master_seed ^ mix64(stream.wrapping_mul(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    fn keyed(&self, domain: u64, a: u64, b: u64, c: u64, sub: u64) -> u64 {
        let mut h = self.key;
        for x in [domain, a, b, c, sub] {
            h = mix64(h ^ x.wrapping_mul(GOLDEN_GAMMA));
        }
        h
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.keyed(DOMAIN_SEQUENTIAL, self.counter, 0, 0, 0);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform deviate in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// One standard normal deviate; consumes exactly two counter draws.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn normal_keyed(&self, domain: u64, a: u64, b: u64, c: u64) -> f64 {
        let u1 = 1.0 - (self.keyed(domain, a, b, c, 0) >> 11) as f64 * (1.0 / 9007199254740992.0);
        let u2 = (self.keyed(domain, a, b, c, 1) >> 11) as f64 * (1.0 / 9007199254740992.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal deviate for splitting the interval at `(start, span)`,
    /// Wiener component `k`. Identical across runs of the same stream.
    pub fn split_normal(&self, start: u64, span: u64, k: usize) -> f64 {
        self.normal_keyed(DOMAIN_SPLIT, start, span, k as u64)
    }

    /// Normal deviate for the fresh base interval starting at `start`,
    /// Wiener component `k`.
    pub fn fresh_normal(&self, start: u64, k: usize) -> f64 {
        self.normal_keyed(DOMAIN_FRESH, start, 0, k as u64)
    }

    pub fn draws_consumed(&self) -> u64 {
        self.counter
    }
}

/// `m` independent draws from `N(0, dt)`.
pub fn sample_increment(rng: &mut RngStream, dt: f64, m: usize) -> Vec<f64> {
    debug_assert!(dt >= 0.0);
    let scale = dt.sqrt();
    (0..m).map(|_| rng.standard_normal() * scale).collect()
}

/// Conversion between integer ticks and physical time: tick `k` sits at
/// `origin + base_step * k / 2^max_depth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScale {
    origin: f64,
    base_step: f64,
    max_depth: u32,
}

impl GridScale {
    pub fn new(origin: f64, base_step: f64, max_depth: u32) -> Self {
        assert!(base_step > 0.0, "base step must be positive");
        assert!(max_depth >= 1 && max_depth < 63, "max depth out of range");
        GridScale {
            origin,
            base_step,
            max_depth,
        }
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    /// Ticks per base step: `2^max_depth`.
    pub fn ticks_per_base(&self) -> u64 {
        1u64 << self.max_depth
    }

    pub fn time_at(&self, ticks: u64) -> f64 {
        // ticks * 2^-max_depth is exact; one rounding in the multiply
        self.origin + self.base_step * (ticks as f64 * exp2_neg(self.max_depth))
    }

    pub fn span_length(&self, span: u64) -> f64 {
        self.base_step * (span as f64 * exp2_neg(self.max_depth))
    }

    /// Tick span of a dyadic step `base_step / 2^k`, or an error when `dt`
    /// is not such a fraction.
    pub fn span_of(&self, dt: f64) -> Result<u64> {
        let ratio = dt / self.base_step;
        let span = (ratio * self.ticks_per_base() as f64).round() as u64;
        let dyadic = span > 0 && span.is_power_of_two() && span <= self.ticks_per_base();
        let reconstructs = dyadic && (self.span_length(span) - dt).abs() <= 1e-9 * self.base_step;
        if !reconstructs {
            return Err(Error::NonDyadic {
                requested: dt,
                base_step: self.base_step,
            });
        }
        Ok(span)
    }
}

fn exp2_neg(k: u32) -> f64 {
    1.0 / (1u64 << k) as f64
}

/// A contiguous time interval together with its Wiener increments.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementNode {
    /// Interval start in grid ticks.
    pub start: u64,
    /// Interval length in grid ticks; always a power of two.
    pub span: u64,
    /// One increment per Wiener component.
    pub dw: Vec<f64>,
}

impl IncrementNode {
    pub fn new(start: u64, span: u64, dw: Vec<f64>) -> Self {
        debug_assert!(span > 0);
        IncrementNode { start, span, dw }
    }

    /// Convenience constructor from physical times, rounding to ticks.
    pub fn from_times(grid: &GridScale, t0: f64, dt: f64, dw: Vec<f64>) -> Self {
        let per_unit = grid.ticks_per_base() as f64 / grid.base_step();
        let start = ((t0 - grid.origin()) * per_unit).round() as u64;
        let span = (dt * per_unit).round().max(1.0) as u64;
        IncrementNode { start, span, dw }
    }

    pub fn end(&self) -> u64 {
        self.start + self.span
    }

    pub fn t0(&self, grid: &GridScale) -> f64 {
        grid.time_at(self.start)
    }

    pub fn dt(&self, grid: &GridScale) -> f64 {
        grid.span_length(self.span)
    }
}

/// Splits an interval in half. The first half's increments are drawn from
/// the conditional density `N(dW/2, dt/4)` given the parent increment; the
/// second half is the exact remainder so that `left.dw + right.dw`
/// reproduces the parent bitwise through the actual computation path.
///
/// The underlying deviates are keyed by the interval position, so the same
/// interval always splits the same way within one stream.
pub fn split_node(rng: &RngStream, grid: &GridScale, node: &IncrementNode) -> Result<(IncrementNode, IncrementNode)> {
    let deviates: Vec<f64> = (0..node.dw.len())
        .map(|k| rng.split_normal(node.start, node.span, k))
        .collect();
    split_node_with(grid, node, &deviates)
}

/// Deterministic core of [`split_node`]: the caller supplies one standard
/// normal deviate per Wiener component.
pub fn split_node_with(
    grid: &GridScale,
    node: &IncrementNode,
    deviates: &[f64],
) -> Result<(IncrementNode, IncrementNode)> {
    if node.span < 2 {
        return Err(Error::StepSizeUnderflow {
            t: node.t0(grid),
        });
    }
    debug_assert_eq!(deviates.len(), node.dw.len());
    let half = node.span / 2;
    let half_dt = grid.span_length(half);
    let sigma = (half_dt / 2.0).sqrt(); // sqrt(dt/4) with dt the parent length
    let mut left_dw = Vec::with_capacity(node.dw.len());
    let mut right_dw = Vec::with_capacity(node.dw.len());
    for (k, &w) in node.dw.iter().enumerate() {
        let (a, b) = exact_pair(w, 0.5 * w + sigma * deviates[k]);
        left_dw.push(a);
        right_dw.push(b);
    }
    Ok((
        IncrementNode::new(node.start, half, left_dw),
        IncrementNode::new(node.start + half, half, right_dw),
    ))
}

/// Splits `w` into `(a, w - a)` and moves the rounding residual into the
/// smaller-magnitude part until the float sum reproduces `w` bitwise.
///
/// A hit is guaranteed whenever one part is not much larger than `w`
/// itself; when the parent is the tiny difference of two large halves no
/// representable pair sums to it exactly, and the pair is returned with
/// the residual below one rounding of the larger part. The tree never
/// reads a parent increment again after splitting it, so either way the
/// realized path stays self-consistent.
fn exact_pair(w: f64, a0: f64) -> (f64, f64) {
    let mut a = a0;
    let mut b = w - a;
    for _ in 0..8 {
        let s = a + b;
        if s == w || !s.is_finite() {
            break;
        }
        let d = s - w;
        let target_a = a.abs() <= b.abs();
        let (t, other) = if target_a { (a, b) } else { (b, a) };
        let mut adjusted = t - d;
        // the jump can land half a grid step short; try both neighbours
        if adjusted + other != w {
            if adjusted.next_up() + other == w {
                adjusted = adjusted.next_up();
            } else if adjusted.next_down() + other == w {
                adjusted = adjusted.next_down();
            }
        }
        if adjusted == t {
            // residual below the grid of the finer part: unreachable target
            break;
        }
        if target_a {
            a = adjusted;
        } else {
            b = adjusted;
        }
    }
    (a, b)
}

/// Merges two adjacent intervals by increment additivity; the inverse of a
/// split up to one floating rounding in each component.
pub fn merge_nodes(left: &IncrementNode, right: &IncrementNode) -> Result<IncrementNode> {
    if left.end() != right.start {
        return Err(Error::NonContiguous {
            left_end: left.end(),
            right_start: right.start,
        });
    }
    if left.dw.len() != right.dw.len() {
        return Err(Error::Dimension {
            what: "merge increments",
            expected: left.dw.len(),
            actual: right.dw.len(),
        });
    }
    let dw = left.dw.iter().zip(&right.dw).map(|(a, b)| a + b).collect();
    Ok(IncrementNode::new(left.start, left.span + right.span, dw))
}

/// Last-in-first-out store of pending increment intervals plus the sampling
/// horizon. One stack per trajectory; never shared.
#[derive(Debug, Clone)]
pub struct BrownianStack {
    grid: GridScale,
    wiener_dim: usize,
    /// Pending nodes; the top of the stack is the earliest interval.
    pending: Vec<IncrementNode>,
    /// Tick up to which increments have been realized.
    horizon: u64,
}

impl BrownianStack {
    pub fn new(grid: GridScale, wiener_dim: usize) -> Self {
        BrownianStack {
            grid,
            wiener_dim,
            pending: Vec::new(),
            horizon: 0,
        }
    }

    /// Stack preloaded with contiguous nodes starting at tick 0, replayed
    /// in time order.
    pub fn from_nodes(grid: GridScale, wiener_dim: usize, nodes: Vec<IncrementNode>) -> Result<Self> {
        let mut cursor = 0u64;
        for node in &nodes {
            if node.start != cursor {
                return Err(Error::NonContiguous {
                    left_end: cursor,
                    right_start: node.start,
                });
            }
            if node.dw.len() != wiener_dim {
                return Err(Error::Dimension {
                    what: "preloaded node increments",
                    expected: wiener_dim,
                    actual: node.dw.len(),
                });
            }
            cursor = node.end();
        }
        let mut pending = nodes;
        pending.reverse();
        Ok(BrownianStack {
            grid,
            wiener_dim,
            pending,
            horizon: cursor,
        })
    }

    pub fn grid(&self) -> &GridScale {
        &self.grid
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener_dim
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Span of the next interval to be replayed, if any.
    pub fn pending_top_span(&self) -> Option<u64> {
        self.pending.last().map(|n| n.span)
    }

    /// Pushes an interval back for replay. The stack is LIFO: push the
    /// right sibling before the left so the left is retried first.
    pub fn push_pending(&mut self, node: IncrementNode) {
        debug_assert!(self
            .pending
            .last()
            .map(|top| node.end() == top.start)
            .unwrap_or(node.end() == self.horizon));
        self.pending.push(node);
    }

    /// Produces the next interval, of length at most `proposed_dt`.
    ///
    /// Pending intervals are replayed first, split as needed until the top
    /// fits the proposal; adjacent pending siblings are merged while the
    /// proposal allows a coarser node. With no pending work a fresh base
    /// interval is sampled at the horizon and refined down like any other
    /// node, so the realized path depends only on which tree positions get
    /// visited, never on the visiting order.
    pub fn next_node(&mut self, rng: &RngStream, proposed_dt: f64) -> Result<IncrementNode> {
        let span = self.grid.span_of(proposed_dt)?;
        self.next_node_span(rng, span)
    }

    /// Tick-space form of [`next_node`]; `proposed_span` must be a power of
    /// two no larger than a base step.
    pub fn next_node_span(&mut self, rng: &RngStream, proposed_span: u64) -> Result<IncrementNode> {
        debug_assert!(proposed_span.is_power_of_two());
        debug_assert!(proposed_span <= self.grid.ticks_per_base());
        if self.pending.is_empty() {
            // fresh intervals always enter at full base span; the horizon
            // only ever advances by whole base steps, keeping alignment
            let span = self.grid.ticks_per_base();
            let dt = self.grid.span_length(span);
            let scale = dt.sqrt();
            let dw = (0..self.wiener_dim)
                .map(|k| rng.fresh_normal(self.horizon, k) * scale)
                .collect();
            let node = IncrementNode::new(self.horizon, span, dw);
            self.horizon = node.end();
            self.pending.push(node);
        }
        let mut node = self.pending.pop().expect("pending nonempty");
        while node.span > proposed_span {
            let (left, right) = split_node(rng, &self.grid, &node)?;
            self.pending.push(right);
            node = left;
        }
        while node.span < proposed_span {
            // grow by absorbing the right sibling when the merged interval
            // is a dyadic node of the tree
            let aligned = node.start % (2 * node.span) == 0;
            let sibling = match self.pending.last() {
                Some(top) if aligned && top.span == node.span && top.start == node.end() => {
                    self.pending.pop().unwrap()
                }
                _ => break,
            };
            node = merge_nodes(&node, &sibling)?;
        }
        Ok(node)
    }
}
