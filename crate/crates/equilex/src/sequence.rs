//! Deterministic vector generators and the tail-limit machinery that turns
//! them into stabilized sequences: windowed limits, rescaling to a common
//! pairwise distance, and elimination of nonvanishing functional limits by
//! pairwise differencing.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::norm::NormOracle;
use crate::point::Point;

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;
/// lambda must exceed 1 by this margin for the downstream constants to be usable.
pub const LAMBDA_FLOOR_MARGIN: f64 = 0.05;
const BRACKET_SLACK: f64 = 0.25;
const BRACKET_EXPANSIONS: usize = 4;
const RATIO_DENOM_FLOOR: f64 = 1e-12;
const MAX_PREFIX_DROP: usize = 8;
const SEMI_NORM_LO: f64 = 0.5;
const SEMI_NORM_HI: f64 = 2.0;

/// Where and how tightly sequences are required to stabilize. A tail limit is
/// declared over the window [start, start + window); spread above `tol` is a
/// stabilization failure, not noise to be averaged away.
#[derive(Debug, Clone, PartialEq)]
pub struct TailPolicy {
    pub start: usize,
    pub window: usize,
    pub tol: f64,
}

impl TailPolicy {
    pub fn new(start: usize, window: usize, tol: f64) -> Result<Self> {
        if start < 1 {
            return Err(Error::InvalidParameter("tail start must be >= 1".into()));
        }
        if window < 3 {
            return Err(Error::InvalidParameter("tail window must be >= 3".into()));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidParameter(
                "tail tol must be positive and finite".into(),
            ));
        }
        Ok(TailPolicy { start, window, tol })
    }

    /// Default depth for building an n_target-point set.
    pub fn default_for_target(n_target: usize) -> Self {
        TailPolicy {
            start: 2 * n_target + 8,
            window: DEFAULT_WINDOW,
            tol: DEFAULT_TAIL_TOL,
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.window
    }

    /// Same policy with the window moved past `n` when `n` would fall inside
    /// it; windows not containing `n` are left where they are.
    pub fn shifted_past(&self, n: usize) -> TailPolicy {
        let start = if (self.start..self.end()).contains(&n) {
            n + 1
        } else {
            self.start
        };
        TailPolicy { start, ..*self }
    }

    /// Deepest index that may be probed against double tails (stays below the
    /// outer window).
    pub fn probe_max(&self) -> usize {
        self.start + self.window - 1
    }

    pub fn outer_start(&self) -> usize {
        self.start + self.window
    }

    pub fn inner_start(&self) -> usize {
        self.start + 2 * self.window
    }

    /// Deepest index touched by a double tail at this policy.
    pub fn required_max_index(&self) -> usize {
        self.start + 3 * self.window - 1
    }
}

/// Declared limit of f over the policy window: the mean, provided the spread
/// stays within tol.
pub fn tail_limit<F>(mut f: F, policy: &TailPolicy, max_index: usize) -> Result<f64>
where
    F: FnMut(usize) -> Result<f64>,
{
    let end = policy.end();
    if end - 1 > max_index {
        return Err(Error::TailOutOfRange {
            start: policy.start,
            end,
            max_index,
        });
    }
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in policy.start..end {
        let v = f(j)?;
        if !v.is_finite() {
            return Err(Error::NonFinite { index: j });
        }
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let spread = hi - lo;
    if spread > policy.tol {
        return Err(Error::NonStabilizing {
            start: policy.start,
            end,
            spread,
            tol: policy.tol,
        });
    }
    Ok(sum / policy.window as f64)
}

/// Iterated limit over i then k of g(k, i) with staggered windows: the outer
/// index k runs over [start+window, start+2·window) and the inner index i over
/// [start+2·window, start+3·window), so that probe < k < i always holds and
/// the two windows never overlap.
pub fn double_tail_limit<G>(mut g: G, policy: &TailPolicy, max_index: usize) -> Result<f64>
where
    G: FnMut(usize, usize) -> Result<f64>,
{
    let outer = TailPolicy {
        start: policy.outer_start(),
        ..*policy
    };
    tail_limit(
        |k| {
            let inner = TailPolicy {
                start: policy.inner_start().max(k + 1),
                ..*policy
            };
            tail_limit(|i| g(k, i), &inner, max_index)
        },
        &outer,
        max_index,
    )
}

enum Gen {
    UnitBasis,
    PerturbedBasis { beta: f64 },
    Block { width: usize, profile: Vec<f64> },
    Stored { points: Vec<Point> },
    Map { f: Box<dyn Fn(usize) -> Result<Point> + Send + Sync> },
}

struct Inner {
    dim: usize,
    max_index: usize,
    gen: Gen,
}

/// Deterministic generator of the raw vector sequence x_1, x_2, ...; indices
/// are 1-based and capped by max_index. Cloning is cheap (shared immutable
/// state), and generation is pure: same index, same point.
#[derive(Clone)]
pub struct SequenceSource {
    inner: Arc<Inner>,
}

impl fmt::Debug for SequenceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SequenceSource(kind={}, dim={}, max_index={})",
            self.kind(),
            self.dim(),
            self.max_index()
        )
    }
}

impl SequenceSource {
    /// x_i = e_i.
    pub fn unit_basis(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter("dim must be >= 2".into()));
        }
        Ok(SequenceSource {
            inner: Arc::new(Inner {
                dim,
                max_index: dim,
                gen: Gen::UnitBasis,
            }),
        })
    }

    /// x_i = e_{i+1} + beta^i e_1: coordinate 1 carries a geometrically
    /// decaying overlap, the moving coordinate keeps the vectors separated.
    pub fn perturbed_basis(dim: usize, beta: f64) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidParameter("dim must be >= 3".into()));
        }
        if !(beta.is_finite() && beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta = {beta} must lie in (0, 1)"
            )));
        }
        Ok(SequenceSource {
            inner: Arc::new(Inner {
                dim,
                max_index: dim - 1,
                gen: Gen::PerturbedBasis { beta },
            }),
        })
    }

    /// x_i supported on coordinates ((i-1)·width, i·width] with the given
    /// in-block profile (default: all coordinates 1/sqrt(width)).
    pub fn block(dim: usize, width: usize, profile: Option<Vec<f64>>) -> Result<Self> {
        if width < 1 {
            return Err(Error::InvalidParameter("block width must be >= 1".into()));
        }
        if dim < 2 * width {
            return Err(Error::InvalidParameter(
                "dim must fit at least two blocks".into(),
            ));
        }
        let profile = profile.unwrap_or_else(|| vec![1.0 / (width as f64).sqrt(); width]);
        if profile.len() != width {
            return Err(Error::InvalidParameter(format!(
                "block profile length {} != width {width}",
                profile.len()
            )));
        }
        if profile.iter().any(|v| !v.is_finite()) || profile.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidParameter(
                "block profile must be finite and not identically zero".into(),
            ));
        }
        Ok(SequenceSource {
            inner: Arc::new(Inner {
                dim,
                max_index: dim / width,
                gen: Gen::Block { width, profile },
            }),
        })
    }

    /// Arbitrary deterministic generator; outputs are validated per call.
    pub fn from_fn<F>(dim: usize, max_index: usize, f: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<Point> + Send + Sync + 'static,
    {
        if dim < 1 || max_index < 1 {
            return Err(Error::InvalidParameter(
                "dim and max_index must be >= 1".into(),
            ));
        }
        Ok(SequenceSource {
            inner: Arc::new(Inner {
                dim,
                max_index,
                gen: Gen::Map { f: Box::new(f) },
            }),
        })
    }

    /// Source backed by an explicit list (index i returns points[i-1]).
    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.dim(),
            None => return Err(Error::InvalidParameter("empty point list".into())),
        };
        for p in &points {
            p.validate(dim)?;
        }
        Ok(SequenceSource {
            inner: Arc::new(Inner {
                dim,
                max_index: points.len(),
                gen: Gen::Stored { points },
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn max_index(&self) -> usize {
        self.inner.max_index
    }

    pub fn kind(&self) -> &'static str {
        match self.inner.gen {
            Gen::UnitBasis => "unit-basis",
            Gen::PerturbedBasis { .. } => "perturbed-basis",
            Gen::Block { .. } => "block",
            Gen::Stored { .. } | Gen::Map { .. } => "composed",
        }
    }

    pub fn point(&self, index: usize) -> Result<Point> {
        if index < 1 || index > self.inner.max_index {
            return Err(Error::InvalidParameter(format!(
                "sequence index {index} outside [1, {}]",
                self.inner.max_index
            )));
        }
        let dim = self.inner.dim;
        match &self.inner.gen {
            Gen::UnitBasis => Ok(Point::basis(dim, index)),
            Gen::PerturbedBasis { beta } => {
                let mut p = Point::basis(dim, index + 1);
                p.coords_mut()[0] = beta.powi(index as i32);
                Ok(p)
            }
            Gen::Block { width, profile } => {
                let mut coords = vec![0.0; dim];
                let base = (index - 1) * width;
                coords[base..base + width].copy_from_slice(profile);
                Ok(Point::new(coords))
            }
            Gen::Stored { points } => Ok(points[index - 1].clone()),
            Gen::Map { f } => {
                let p = f(index)?;
                p.validate(dim)?;
                Ok(p)
            }
        }
    }

    /// Source generating scalars[i-1] · x_i.
    pub fn scaled(&self, scalars: Vec<f64>) -> Result<SequenceSource> {
        if scalars.is_empty() || scalars.len() > self.max_index() {
            return Err(Error::InvalidParameter(format!(
                "scalar count {} outside [1, {}]",
                scalars.len(),
                self.max_index()
            )));
        }
        if scalars.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("scalars must be finite".into()));
        }
        let base = self.clone();
        let max_index = scalars.len();
        SequenceSource::from_fn(self.dim(), max_index, move |i| {
            Ok(base.point(i)?.scale(scalars[i - 1]))
        })
    }

    /// Source with the first `drop` indices removed (index i maps to i+drop).
    pub fn shifted(&self, drop: usize) -> Result<SequenceSource> {
        if drop == 0 {
            return Ok(self.clone());
        }
        if drop >= self.max_index() {
            return Err(Error::InvalidParameter(format!(
                "cannot drop {drop} of {} indices",
                self.max_index()
            )));
        }
        let base = self.clone();
        SequenceSource::from_fn(self.dim(), self.max_index() - drop, move |i| {
            base.point(i + drop)
        })
    }
}

/// Output of the stabilization pipeline: a sequence whose pairwise tail
/// distances agree on a common lambda and whose double-limit functional values
/// vanish within tolerance, together with the constants consumed downstream.
#[derive(Clone)]
pub struct StabilizedSequence {
    source: SequenceSource,
    lambda: f64,
    c: f64,
    scalars: Vec<f64>,
    b_initial: Vec<f64>,
    b_final: Vec<f64>,
    differenced: bool,
    dropped: usize,
}

impl fmt::Debug for StabilizedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StabilizedSequence")
            .field("source", &self.source)
            .field("lambda", &self.lambda)
            .field("c", &self.c)
            .field("differenced", &self.differenced)
            .field("dropped", &self.dropped)
            .finish()
    }
}

impl StabilizedSequence {
    pub fn source(&self) -> &SequenceSource {
        &self.source
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// C = (lambda - 1)/8, the separation constant for the matrix gate.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Scalars applied by the last rescaling stage.
    pub fn scalars(&self) -> &[f64] {
        &self.scalars
    }

    /// Functional limits observed on the input sequence.
    pub fn b_initial(&self) -> &[f64] {
        &self.b_initial
    }

    /// Functional limits certified on the output sequence.
    pub fn b_final(&self) -> &[f64] {
        &self.b_final
    }

    pub fn differenced(&self) -> bool {
        self.differenced
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

fn check_dims(src: &SequenceSource, oracle: &NormOracle) -> Result<()> {
    if src.dim() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            got: src.dim(),
        });
    }
    Ok(())
}

/// Tail distance from x_n to the sequence, with the window moved past n when
/// it would collide.
fn tail_distance(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
    n: usize,
) -> Result<f64> {
    let xn = src.point(n)?;
    let shifted = policy.shifted_past(n);
    tail_limit(
        |i| oracle.norm(&src.point(i)?.axpy(-1.0, &xn)),
        &shifted,
        src.max_index(),
    )
}

fn common_lambda(src: &SequenceSource, oracle: &NormOracle, policy: &TailPolicy) -> Result<f64> {
    let lambda = tail_limit(
        |n| tail_distance(src, oracle, policy, n),
        policy,
        src.max_index(),
    )?;
    let floor = 1.0 + LAMBDA_FLOOR_MARGIN;
    if !(lambda > floor) {
        return Err(Error::LambdaTooSmall { lambda, floor });
    }
    Ok(lambda)
}

/// Scalars a_n with tail_limit(i -> |a_n x_n - x_i|) = lambda for every n, and
/// the common lambda itself. Indices whose own tail distance already equals
/// lambda within tol keep a_n = 1 exactly.
pub fn rescale_to_common_lambda(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
) -> Result<(Vec<f64>, f64)> {
    check_dims(src, oracle)?;
    let lambda = common_lambda(src, oracle, policy)?;
    let eps = (lambda - 1.0) / 4.0;
    let max = src.max_index();
    let mut scalars = Vec::with_capacity(max);
    for n in 1..=max {
        let lambda_n = tail_distance(src, oracle, policy, n)?;
        if (lambda_n - lambda).abs() <= policy.tol {
            scalars.push(1.0);
        } else {
            scalars.push(solve_scale(src, oracle, policy, n, lambda_n, lambda, eps)?);
        }
    }
    Ok((scalars, lambda))
}

/// Bracketed bisection on a -> tail_limit(i -> |a x_n - x_i|) - lambda over
/// [0, 1 + (lambda - lambda_n)/eps + slack], doubling the upper end a bounded
/// number of times if the bracket misses the sign change.
fn solve_scale(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
    n: usize,
    lambda_n: f64,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    let xn = src.point(n)?;
    let shifted = policy.shifted_past(n);
    let window: Vec<Point> = (shifted.start..shifted.end())
        .map(|i| src.point(i))
        .collect::<Result<_>>()?;
    let g = |a: f64| -> Result<f64> {
        let val = tail_limit(
            |i| oracle.norm(&window[i - shifted.start].axpy(-a, &xn)),
            &shifted,
            src.max_index(),
        )?;
        Ok(val - lambda)
    };
    let lo = 0.0;
    let mut hi = (1.0 + (lambda - lambda_n) / eps + BRACKET_SLACK).max(0.5);
    let g_lo = g(lo)?;
    if g_lo == 0.0 {
        return Ok(0.0);
    }
    let mut g_hi = g(hi)?;
    let mut expansions = 0;
    while g_lo.signum() == g_hi.signum() && expansions < BRACKET_EXPANSIONS {
        hi *= 2.0;
        g_hi = g(hi)?;
        expansions += 1;
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::RootBracketing { index: n, upper: hi });
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut g_lo = g_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-13 * mid.abs().max(1.0) {
            return Ok(mid);
        }
        let g_mid = g(mid)?;
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// b_l for every probe index: the double-tail limit of phi_{x_k - x_i}(x_l).
fn probe_functional_limits(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
) -> Result<Vec<f64>> {
    let max = src.max_index();
    if policy.required_max_index() > max {
        return Err(Error::TailOutOfRange {
            start: policy.inner_start(),
            end: policy.inner_start() + policy.window,
            max_index: max,
        });
    }
    let w = policy.window;
    let o0 = policy.outer_start();
    let i0 = policy.inner_start();
    let mut phis = Vec::with_capacity(w * w);
    for k in o0..o0 + w {
        let xk = src.point(k)?;
        for i in i0..i0 + w {
            let diff = xk.axpy(-1.0, &src.point(i)?);
            phis.push(oracle.support_functional(&diff)?);
        }
    }
    let probe_max = policy.probe_max().min(max);
    let mut b = Vec::with_capacity(probe_max);
    for l in 1..=probe_max {
        let xl = src.point(l)?;
        let bl = double_tail_limit(
            |k, i| phis[(k - o0) * w + (i - i0)].apply(&xl),
            policy,
            max,
        )?;
        b.push(bl);
    }
    Ok(b)
}

/// Guard inequalities consumed by the point builder, checked over the prefix
/// of indices a construction at this policy can touch:
///   |z_k - z_i| > (1+lambda)/2,  |z_i| < (3+lambda)/4,
///   phi_{z_k - z_i}(z_k) > (lambda-1)/4 for both orderings of each pair.
fn check_sequence_guards(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
    lambda: f64,
) -> Result<()> {
    let cap = policy.required_max_index().min(src.max_index());
    let pts: Vec<Point> = (1..=cap).map(|i| src.point(i)).collect::<Result<_>>()?;
    let dist_floor = (1.0 + lambda) / 2.0;
    let norm_ceil = (3.0 + lambda) / 4.0;
    let func_floor = (lambda - 1.0) / 4.0;
    let violation = |property: String, measured: f64, threshold: f64| {
        Err(Error::InvariantViolation {
            step: 0,
            property,
            measured,
            threshold,
        })
    };
    for (i, z) in pts.iter().enumerate() {
        let nz = oracle.norm(z)?;
        if !(nz < norm_ceil) {
            return violation(
                format!("|z_{}| < (3+lambda)/4", i + 1),
                nz,
                norm_ceil,
            );
        }
    }
    for k in 0..cap {
        for i in (k + 1)..cap {
            let diff = pts[k].axpy(-1.0, &pts[i]);
            let dist = oracle.norm(&diff)?;
            if !(dist > dist_floor) {
                return violation(
                    format!("|z_{} - z_{}| > (1+lambda)/2", k + 1, i + 1),
                    dist,
                    dist_floor,
                );
            }
            let phi = oracle.support_functional(&diff)?;
            let on_k = phi.apply(&pts[k])?;
            if !(on_k > func_floor) {
                return violation(
                    format!("phi_(z_{} - z_{})(z_{}) > (lambda-1)/4", k + 1, i + 1, k + 1),
                    on_k,
                    func_floor,
                );
            }
            let on_i = phi.apply(&pts[i])?;
            if !(-on_i > func_floor) {
                return violation(
                    format!("phi_(z_{} - z_{})(z_{}) > (lambda-1)/4", i + 1, k + 1, i + 1),
                    -on_i,
                    func_floor,
                );
            }
        }
    }
    Ok(())
}

fn finalize_with_guards(
    seq: StabilizedSequence,
    oracle: &NormOracle,
    policy: &TailPolicy,
) -> Result<StabilizedSequence> {
    let mut last_violation: Option<Error> = None;
    for drop in 0..=MAX_PREFIX_DROP {
        let cand = seq.source.shifted(drop)?;
        if cand.max_index() < policy.required_max_index() {
            break;
        }
        match check_sequence_guards(&cand, oracle, policy, seq.lambda) {
            Ok(()) => {
                return Ok(StabilizedSequence {
                    source: cand,
                    dropped: drop,
                    ..seq
                });
            }
            Err(e @ Error::InvariantViolation { .. }) => last_violation = Some(e),
            Err(other) => return Err(other),
        }
    }
    Err(last_violation
        .unwrap_or_else(|| Error::InvalidParameter("no usable prefix for guard checks".into())))
}

/// Eliminate nonvanishing double-limit functional values from a rescaled
/// sequence. If every probed b_l already vanishes within tol the input passes
/// through; otherwise consecutive pairs are differenced,
///   v_l = x_{2l+1} - (b_{2l+1}/b_{2l}) x_{2l},
/// normalized, rescaled to a fresh common lambda, and the output is re-probed.
/// Ratios beyond the probed depth are taken as 0 (the limits of a usable
/// source have decayed by then); the mandatory re-probe certifies it.
pub fn kill_functional_limits(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
) -> Result<StabilizedSequence> {
    check_dims(src, oracle)?;
    let lambda = common_lambda(src, oracle, policy)?;
    let b = probe_functional_limits(src, oracle, policy)?;
    if b.iter().all(|v| v.abs() <= policy.tol) {
        let seq = StabilizedSequence {
            source: src.clone(),
            lambda,
            c: (lambda - 1.0) / 8.0,
            scalars: vec![1.0; src.max_index()],
            b_initial: b.clone(),
            b_final: b,
            differenced: false,
            dropped: 0,
        };
        return finalize_with_guards(seq, oracle, policy);
    }
    let half = (src.max_index() - 1) / 2;
    let mut vs = Vec::with_capacity(half);
    for l in 1..=half {
        let (even, odd) = (2 * l, 2 * l + 1);
        let ratio = if odd <= b.len() {
            let (b_even, b_odd) = (b[even - 1], b[odd - 1]);
            if b_odd.abs() <= policy.tol {
                0.0
            } else if b_even.abs() < RATIO_DENOM_FLOOR {
                return Err(Error::DivisionGuard {
                    index: even,
                    denominator: b_even,
                });
            } else {
                b_odd / b_even
            }
        } else {
            0.0
        };
        let v = src.point(odd)?.axpy(-ratio, &src.point(even)?);
        let nv = oracle.norm(&v)?;
        if nv < 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "differenced vector at pair ({even}, {odd}) is numerically zero"
            )));
        }
        vs.push(v.scale(1.0 / nv));
    }
    let v_src = SequenceSource::from_points(vs)?;
    let (c_scalars, lambda_out) = rescale_to_common_lambda(&v_src, oracle, policy)?;
    let out = v_src.scaled(c_scalars.clone())?;
    let b_out = probe_functional_limits(&out, oracle, policy)?;
    if let Some((idx, worst)) = b_out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    {
        if worst.abs() > policy.tol {
            return Err(Error::InvariantViolation {
                step: 0,
                property: format!("double-limit functional vanishes at probe {}", idx + 1),
                measured: worst.abs(),
                threshold: policy.tol,
            });
        }
    }
    let seq = StabilizedSequence {
        source: out,
        lambda: lambda_out,
        c: (lambda_out - 1.0) / 8.0,
        scalars: c_scalars,
        b_initial: b,
        b_final: b_out,
        differenced: true,
        dropped: 0,
    };
    finalize_with_guards(seq, oracle, policy)
}

/// Full pipeline: semi-normalization check, rescale to a common lambda, then
/// functional-limit elimination with guard verification.
pub fn stabilize(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
) -> Result<StabilizedSequence> {
    check_dims(src, oracle)?;
    let depth = policy.required_max_index().min(src.max_index());
    for i in 1..=depth {
        let n = oracle.norm(&src.point(i)?)?;
        if !(SEMI_NORM_LO - 1e-9..=SEMI_NORM_HI + 1e-9).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "source not semi-normalized: |x_{i}| = {n} outside [{SEMI_NORM_LO}, {SEMI_NORM_HI}]"
            )));
        }
    }
    let (a, _lambda) = rescale_to_common_lambda(src, oracle, policy)?;
    let scaled = src.scaled(a.clone())?;
    let mut out = kill_functional_limits(&scaled, oracle, policy)?;
    if !out.differenced {
        out.scalars = a;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l2(dim: usize) -> NormOracle {
        NormOracle::lp(2.0, dim).unwrap()
    }

    #[test]
    fn tail_of_constant_is_exact() {
        let policy = TailPolicy::new(10, 5, 1e-12).unwrap();
        let got = tail_limit(|_| Ok(0.375), &policy, usize::MAX).unwrap();
        assert_eq!(got, 0.375);
    }

    #[test]
    fn tail_of_geometric_decay_converges() {
        let policy = TailPolicy::new(20, 5, 1e-6).unwrap();
        let got = tail_limit(|j| Ok(2f64.sqrt() + 4f64.powi(-(j as i32))), &policy, 1000).unwrap();
        assert!((got - 2f64.sqrt()).abs() <= 1e-6);
        assert!((got - 2f64.sqrt()).abs() <= 1e-11, "window mean carries the residual bias");
    }

    #[test]
    fn tail_of_oscillation_fails() {
        let policy = TailPolicy::new(5, 3, 0.1).unwrap();
        let err = tail_limit(|j| Ok(if j % 2 == 0 { 1.0 } else { -1.0 }), &policy, 1000)
            .unwrap_err();
        match err {
            Error::NonStabilizing { spread, .. } => assert!((spread - 2.0).abs() < 1e-15),
            other => panic!("expected NonStabilizing, got {other:?}"),
        }
    }

    #[test]
    fn tail_window_beyond_range_rejected() {
        let policy = TailPolicy::new(10, 5, 1e-8).unwrap();
        assert!(matches!(
            tail_limit(|_| Ok(1.0), &policy, 12),
            Err(Error::TailOutOfRange { max_index: 12, .. })
        ));
    }

    #[test]
    fn double_tail_visits_staggered_windows() {
        let policy = TailPolicy::new(10, 3, 1e-6).unwrap();
        let mut visited = Vec::new();
        let got = double_tail_limit(
            |k, i| {
                visited.push((k, i));
                Ok(1.5 + 1e-3 * 2f64.powi(-(k as i32)) + 4f64.powi(-(i as i32)))
            },
            &policy,
            1000,
        )
        .unwrap();
        assert!(got > 1.5 && got - 1.5 < 1e-6);
        for &(k, i) in &visited {
            assert!((13..16).contains(&k), "outer index {k}");
            assert!((16..19).contains(&i), "inner index {i}");
            assert!(i > k);
        }
        assert_eq!(visited.len(), 9);
    }

    #[test]
    fn source_generation_is_deterministic_and_shaped() {
        let src = SequenceSource::perturbed_basis(16, 0.5).unwrap();
        let a = src.point(3).unwrap();
        let b = src.point(3).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_eq!(a.coords()[0], 0.125);
        assert_eq!(a.coords()[3], 1.0);
        assert_eq!(src.max_index(), 15);

        let blk = SequenceSource::block(12, 3, Some(vec![0.5, -0.25, 0.75])).unwrap();
        let p2 = blk.point(2).unwrap();
        assert_eq!(&p2.coords()[3..6], &[0.5, -0.25, 0.75]);
        assert!(p2.coords()[..3].iter().all(|v| *v == 0.0));
        assert!(p2.coords()[6..].iter().all(|v| *v == 0.0));
        assert_eq!(blk.max_index(), 4);
    }

    #[test]
    fn scaled_and_shifted_compose() {
        let src = SequenceSource::unit_basis(8).unwrap();
        let scaled = src.scaled(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(scaled.point(3).unwrap().coords()[2], 3.0);
        let shifted = scaled.shifted(2).unwrap();
        assert_eq!(shifted.max_index(), 6);
        assert_eq!(shifted.point(1).unwrap().coords()[2], 3.0);
    }

    #[test]
    fn rescale_unit_basis_is_exact_identity() {
        for p in [1.5, 2.0, 3.0] {
            let oracle = NormOracle::lp(p, 48).unwrap();
            let src = SequenceSource::unit_basis(48).unwrap();
            let policy = TailPolicy::new(24, 5, 1e-8).unwrap();
            let (a, lambda) = rescale_to_common_lambda(&src, &oracle, &policy).unwrap();
            assert!(a.iter().all(|v| *v == 1.0), "snap rule must keep a_n = 1 exactly");
            assert!((lambda - 2f64.powf(1.0 / p)).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_perturbed_basis_matches_closed_form() {
        // Independent oracle: |a z_k - z_i|^2 = a^2 (1 + beta^(2k)) + 1 + o(1),
        // so the common-lambda scalar is a_k = (1 + beta^(2k))^(-1/2).
        let oracle = l2(64);
        let src = SequenceSource::perturbed_basis(64, 0.5).unwrap();
        let policy = TailPolicy::new(32, 5, 1e-8).unwrap();
        let (a, lambda) = rescale_to_common_lambda(&src, &oracle, &policy).unwrap();
        assert!((lambda - 2f64.sqrt()).abs() <= 1e-9);
        for k in 1..=12usize {
            let expected = 1.0 / (1.0 + 4f64.powi(-(k as i32))).sqrt();
            assert!(
                (a[k - 1] - expected).abs() <= 1e-8,
                "a_{k} = {} vs {expected}",
                a[k - 1]
            );
        }
    }

    #[test]
    fn rescale_constant_sequence_degenerates() {
        let oracle = l2(8);
        let src = SequenceSource::from_fn(8, 100, |_| Ok(Point::basis(8, 1))).unwrap();
        let policy = TailPolicy::new(10, 5, 1e-8).unwrap();
        assert!(matches!(
            rescale_to_common_lambda(&src, &oracle, &policy),
            Err(Error::LambdaTooSmall { .. })
        ));
    }

    #[test]
    fn rescale_shrunk_basis_respects_proximity_bound() {
        // x_i = (1 - 0.3 q^i) e_i in l_2 puts every lambda_n below lambda;
        // the scalars must obey |a_n - 1| <= |lambda_n - lambda| / ((lambda-1)/4).
        let oracle = l2(40);
        let q: f64 = 0.35;
        let src = SequenceSource::from_fn(40, 40, move |i| {
            Ok(Point::basis(40, i).scale(1.0 - 0.3 * q.powi(i as i32)))
        })
        .unwrap();
        let policy = TailPolicy::new(20, 5, 1e-8).unwrap();
        let (a, lambda) = rescale_to_common_lambda(&src, &oracle, &policy).unwrap();
        let eps = (lambda - 1.0) / 4.0;
        for n in 1..=10usize {
            let lambda_n = tail_distance(&src, &oracle, &policy, n).unwrap();
            assert!(lambda_n < lambda);
            assert!(
                (a[n - 1] - 1.0).abs() <= (lambda_n - lambda).abs() / eps + 1e-9,
                "n = {n}: |a - 1| = {} bound {}",
                (a[n - 1] - 1.0).abs(),
                (lambda_n - lambda).abs() / eps
            );
        }
    }

    #[test]
    fn kill_unit_basis_passes_through_with_exact_zeros() {
        let oracle = NormOracle::lp(3.0, 48).unwrap();
        let src = SequenceSource::unit_basis(48).unwrap();
        let policy = TailPolicy::new(8, 5, 1e-8).unwrap();
        let seq = kill_functional_limits(&src, &oracle, &policy).unwrap();
        assert!(!seq.differenced());
        assert_eq!(seq.dropped(), 0);
        assert!(seq.b_initial().iter().all(|b| *b == 0.0), "disjoint supports pair to exactly 0");
        assert!((seq.lambda() - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((seq.c() - (seq.lambda() - 1.0) / 8.0).abs() < 1e-15);
        let z5 = seq.source().point(5).unwrap();
        assert_eq!(z5.coords(), Point::basis(48, 5).coords());
    }

    #[test]
    fn stabilize_perturbed_basis_passes_through() {
        let oracle = l2(64);
        let src = SequenceSource::perturbed_basis(64, 0.5).unwrap();
        let policy = TailPolicy::new(32, 5, 1e-8).unwrap();
        let seq = stabilize(&src, &oracle, &policy).unwrap();
        assert!(!seq.differenced());
        assert_eq!(seq.dropped(), 0);
        assert!((seq.lambda() - 2f64.sqrt()).abs() <= 1e-9);
        assert!(seq.b_final().iter().all(|b| b.abs() <= policy.tol));
        for i in 1..=10 {
            let nz = oracle.norm(&seq.source().point(i).unwrap()).unwrap();
            assert!((nz - 1.0).abs() <= 1e-9, "rescale normalizes the perturbed family");
        }
    }

    /// Overlap on coordinate 1 that is present for all indices up to the end
    /// of the outer window and absent beyond it: functional limits stabilize
    /// at a common nonzero value at every probe, forcing the differencing path.
    fn overlap_source(dim: usize, gamma: f64, cut: usize) -> SequenceSource {
        SequenceSource::from_fn(dim, dim - 1, move |l| {
            let mut p = Point::basis(dim, l + 1);
            if l <= cut {
                p.coords_mut()[0] = gamma;
            }
            Ok(p)
        })
        .unwrap()
    }

    #[test]
    fn kill_overlap_source_differences_and_certifies() {
        let dim = 48;
        let gamma = 0.6865f64;
        let oracle = l2(dim);
        let policy = TailPolicy::new(13, 3, 1e-8).unwrap();
        let cut = policy.inner_start() - 1;
        let src = overlap_source(dim, gamma, cut);
        let seq = stabilize(&src, &oracle, &policy).unwrap();
        assert!(seq.differenced());
        assert_eq!(seq.dropped(), 0);
        assert!((seq.lambda() - 2f64.sqrt()).abs() <= 1e-12);
        // Closed-form oracle for the observed limits: after rescaling, the
        // window differences have norm sqrt(2) and e_1-coordinate gamma, so
        // every probe pairs to gamma^2 / sqrt(2).
        let expected_b = gamma * gamma / 2f64.sqrt();
        for (l, b) in seq.b_initial().iter().enumerate() {
            assert!(
                (b - expected_b).abs() <= 1e-9,
                "b_{} = {b} vs {expected_b}",
                l + 1
            );
        }
        assert!(seq.b_final().iter().all(|b| *b == 0.0));
        // Brute-force re-derivation of the output limits, bypassing
        // double_tail_limit: plain window means of phi_{z_k - z_i}(z_l).
        let out = seq.source();
        for l in 1..=policy.probe_max() {
            let zl = out.point(l).unwrap();
            let mut outer_vals = Vec::new();
            for k in policy.outer_start()..policy.outer_start() + policy.window {
                let zk = out.point(k).unwrap();
                let mut inner_sum = 0.0;
                for i in policy.inner_start()..policy.inner_start() + policy.window {
                    let diff = zk.axpy(-1.0, &out.point(i).unwrap());
                    let phi = oracle.support_functional(&diff).unwrap();
                    inner_sum += phi.apply(&zl).unwrap();
                }
                outer_vals.push(inner_sum / policy.window as f64);
            }
            let b = outer_vals.iter().sum::<f64>() / policy.window as f64;
            assert!(b.abs() <= 1e-8, "output b_{l} = {b}");
        }
        for i in 1..=out.max_index().min(policy.required_max_index()) {
            let nz = oracle.norm(&out.point(i).unwrap()).unwrap();
            assert!((nz - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn kill_division_guard_fires_on_vanishing_even_limit() {
        // Bump only odd probe indices (plus the whole window prefix), so
        // b_2 = 0 while b_3 stays large: the pair ratio is undefined.
        let dim = 32;
        let gamma = 0.6865f64;
        let policy = TailPolicy::new(13, 3, 1e-8).unwrap();
        let cut = policy.inner_start() - 1;
        let src = SequenceSource::from_fn(dim, dim - 1, move |l| {
            let mut p = Point::basis(dim, l + 1);
            if (l <= 12 && l % 2 == 1) || (13..=cut).contains(&l) {
                p.coords_mut()[0] = gamma;
            }
            Ok(p)
        })
        .unwrap();
        let oracle = l2(dim);
        let err = stabilize(&src, &oracle, &policy).unwrap_err();
        assert!(
            matches!(err, Error::DivisionGuard { index: 2, .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn stabilize_drops_prefix_when_early_pairs_crowd() {
        // beta = 0.8 keeps z_1 and z_2 too close after rescaling:
        // |z_1 - z_2| < (1+lambda)/2, so the first index must be dropped.
        let dim = 128;
        let oracle = l2(dim);
        let src = SequenceSource::perturbed_basis(dim, 0.8).unwrap();
        let policy = TailPolicy::new(100, 3, 1e-8).unwrap();
        let seq = stabilize(&src, &oracle, &policy).unwrap();
        assert_eq!(seq.dropped(), 1);
        assert!(!seq.differenced());
        // The surviving prefix passes the distance guard.
        let z1 = seq.source().point(1).unwrap();
        let z2 = seq.source().point(2).unwrap();
        let d = oracle.norm(&z1.axpy(-1.0, &z2)).unwrap();
        assert!(d > (1.0 + seq.lambda()) / 2.0);
    }

    #[test]
    fn stabilize_rejects_non_semi_normalized_source() {
        let oracle = l2(16);
        let src = SequenceSource::from_fn(16, 16, |i| Ok(Point::basis(16, i).scale(3.0))).unwrap();
        let policy = TailPolicy::new(4, 3, 1e-8).unwrap();
        assert!(matches!(
            stabilize(&src, &oracle, &policy),
            Err(Error::InvalidParameter(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_tail_mean_lies_in_window_hull(
            c in -5.0f64..5.0,
            r in -1.0f64..1.0,
            q in 0.1f64..0.9,
        ) {
            let policy = TailPolicy::new(30, 5, 1e-6).unwrap();
            let f = |j: usize| c + r * q.powi(j as i32);
            let vals: Vec<f64> = (policy.start..policy.end()).map(f).collect();
            let got = tail_limit(|j| Ok(f(j)), &policy, 1000);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            match got {
                Ok(v) => {
                    prop_assert!(hi - lo <= policy.tol);
                    prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
                }
                Err(Error::NonStabilizing { spread, .. }) => {
                    prop_assert!(spread > policy.tol);
                    prop_assert!((spread - (hi - lo)).abs() <= 1e-15);
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e:?}"))),
            }
        }

        #[test]
        fn prop_rescale_scalars_close_to_one_for_shrunk_sources(
            d in 0.05f64..0.3,
            q in 0.2f64..0.4,
        ) {
            let oracle = l2(40);
            let src = SequenceSource::from_fn(40, 40, move |i| {
                Ok(Point::basis(40, i).scale(1.0 - d * q.powi(i as i32)))
            })
            .unwrap();
            let policy = TailPolicy::new(20, 5, 1e-8).unwrap();
            let (a, lambda) = rescale_to_common_lambda(&src, &oracle, &policy).unwrap();
            let eps = (lambda - 1.0) / 4.0;
            for n in 1..=8usize {
                let lambda_n = tail_distance(&src, &oracle, &policy, n).unwrap();
                prop_assert!(
                    (a[n - 1] - 1.0).abs() <= (lambda_n - lambda).abs() / eps + 1e-9
                );
            }
        }
    }
}
