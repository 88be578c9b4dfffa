//! Norm evaluation, support functionals (duality map), modulus-of-smoothness
//! estimation, and the rank-one extension of a norm along a stabilized tail.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::point::Point;
use crate::sequence::{tail_limit, SequenceSource, TailPolicy};

/// Dual-norm certification tolerance for support functionals.
pub const DUAL_NORM_TOL: f64 = 1e-8;
/// Tolerance for the certifying identity apply(phi_x, x) = |x|.
pub const SUPPORT_IDENTITY_TOL: f64 = 1e-10;
/// Relative tolerance for sampled homogeneity / triangle checks on custom norms.
const CUSTOM_VALIDATION_TOL: f64 = 1e-12;
/// Admissible exponent range for l_p oracles.
const P_MIN: f64 = 1.01;
const P_MAX: f64 = 100.0;

/// Caller-supplied norm evaluator for [`NormOracle::custom`].
pub type NormFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Lp { p: f64 },
    Custom { eval: NormFn, gradient_step: f64 },
}

/// A norm on R^dim together with its duality map.
///
/// Stateless after construction: every operation is a pure function of its
/// arguments, so a single oracle can be shared across threads.
#[derive(Clone)]
pub struct NormOracle {
    kind: Kind,
    dim: usize,
}

impl fmt::Debug for NormOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Lp { p } => write!(f, "NormOracle::lp(p={}, dim={})", p, self.dim),
            Kind::Custom { gradient_step, .. } => write!(
                f,
                "NormOracle::custom(dim={}, gradient_step={})",
                self.dim, gradient_step
            ),
        }
    }
}

/// Support functional phi_x: the unique norming functional of its base point,
/// represented by its coefficient vector in the dual pairing.
#[derive(Debug, Clone)]
pub struct SupportFunctional {
    coeffs: Vec<f64>,
    base_norm: f64,
}

impl SupportFunctional {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn base_norm(&self) -> f64 {
        self.base_norm
    }

    /// Pairing <phi, y>.
    pub fn apply(&self, y: &Point) -> Result<f64> {
        y.validate(self.coeffs.len())?;
        Ok(self
            .coeffs
            .iter()
            .zip(y.coords())
            .map(|(c, v)| c * v)
            .sum())
    }
}

impl NormOracle {
    /// l_p oracle. Exponents outside (1, infinity) are not uniformly smooth
    /// and are rejected; the practical range is further clamped to
    /// [1.01, 100] where the duality-map arithmetic stays well conditioned.
    pub fn lp(p: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if p.is_nan() {
            return Err(Error::InvalidParameter("p must be a number".into()));
        }
        if p <= 1.0 || p.is_infinite() {
            return Err(Error::NotUniformlySmooth { p });
        }
        if !(P_MIN..=P_MAX).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "p = {p} outside supported range [{P_MIN}, {P_MAX}]"
            )));
        }
        Ok(NormOracle {
            kind: Kind::Lp { p },
            dim,
        })
    }

    /// Oracle for a caller-supplied smooth norm. The closure is validated by
    /// seeded sampling: homogeneity and the triangle inequality must hold to
    /// 1e-12 relative. The duality map is recovered by central differences
    /// with the given step.
    pub fn custom(dim: usize, eval: NormFn, gradient_step: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !(gradient_step > 0.0 && gradient_step.is_finite()) {
            return Err(Error::InvalidParameter(
                "gradient_step must be positive and finite".into(),
            ));
        }
        let oracle = NormOracle {
            kind: Kind::Custom {
                eval,
                gradient_step,
            },
            dim,
        };
        oracle.validate_custom()?;
        Ok(oracle)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Exponent for l_p oracles, None for custom ones.
    pub fn p(&self) -> Option<f64> {
        match &self.kind {
            Kind::Lp { p } => Some(*p),
            Kind::Custom { .. } => None,
        }
    }

    fn validate_custom(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f726d);
        if self.norm_slice(&vec![0.0; self.dim]) != 0.0 {
            return Err(Error::InvalidParameter(
                "custom norm must vanish at the origin".into(),
            ));
        }
        for _ in 0..16 {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let nx = self.norm_slice(&x);
            let ny = self.norm_slice(&y);
            if !(nx.is_finite() && nx > 0.0) {
                return Err(Error::InvalidParameter(
                    "custom norm must be positive and finite on nonzero vectors".into(),
                ));
            }
            for c in [-2.5f64, 0.5, 3.0] {
                let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
                let lhs = self.norm_slice(&cx);
                let rhs = c.abs() * nx;
                if (lhs - rhs).abs() > CUSTOM_VALIDATION_TOL * rhs.max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "custom norm fails homogeneity: |{c}x| = {lhs}, |c||x| = {rhs}"
                    )));
                }
            }
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let ns = self.norm_slice(&sum);
            if ns > nx + ny + CUSTOM_VALIDATION_TOL * (nx + ny).max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "custom norm fails triangle inequality: {ns} > {nx} + {ny}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn norm_slice(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Lp { p } => lp_norm(*p, x),
            Kind::Custom { eval, .. } => eval(x),
        }
    }

    pub fn norm(&self, x: &Point) -> Result<f64> {
        x.validate(self.dim)?;
        Ok(self.norm_slice(x.coords()))
    }

    /// The norming functional phi_x: dual norm 1 and phi_x(x) = |x|.
    /// Both identities are certified on every call.
    pub fn support_functional(&self, x: &Point) -> Result<SupportFunctional> {
        x.validate(self.dim)?;
        let nx = self.norm_slice(x.coords());
        if nx == 0.0 {
            return Err(Error::ZeroVector);
        }
        let mut coeffs = match &self.kind {
            Kind::Lp { p } => lp_gradient(*p, x.coords(), nx),
            Kind::Custom { gradient_step, .. } => {
                let mut g = vec![0.0; self.dim];
                let mut fwd = x.coords().to_vec();
                for i in 0..self.dim {
                    let orig = fwd[i];
                    fwd[i] = orig + gradient_step;
                    let plus = self.norm_slice(&fwd);
                    fwd[i] = orig - gradient_step;
                    let minus = self.norm_slice(&fwd);
                    fwd[i] = orig;
                    g[i] = (plus - minus) / (2.0 * gradient_step);
                }
                g
            }
        };
        // Enforce the norming identity exactly; for l_p this is a ~1 ulp
        // correction, for finite differences it absorbs the O(h^2) bias.
        let pairing: f64 = coeffs.iter().zip(x.coords()).map(|(c, v)| c * v).sum();
        if pairing <= 0.0 || !pairing.is_finite() {
            return Err(Error::NonSmoothPoint {
                dual_norm: f64::NAN,
                tol: DUAL_NORM_TOL,
            });
        }
        let scale = nx / pairing;
        for c in coeffs.iter_mut() {
            *c *= scale;
        }
        let dual = self.dual_norm_estimate(&coeffs, x, nx);
        if (dual - 1.0).abs() > DUAL_NORM_TOL {
            return Err(Error::NonSmoothPoint {
                dual_norm: dual,
                tol: DUAL_NORM_TOL,
            });
        }
        Ok(SupportFunctional {
            coeffs,
            base_norm: nx,
        })
    }

    fn dual_norm_estimate(&self, coeffs: &[f64], x: &Point, nx: f64) -> f64 {
        match &self.kind {
            Kind::Lp { p } => {
                let q = p / (p - 1.0);
                lp_norm(q, coeffs)
            }
            Kind::Custom { .. } => {
                // phi(x/|x|) = 1 by the rescale above, so the sampled sup over
                // the unit sphere starts at 1 and can only reveal violations.
                let mut sup: f64 = coeffs
                    .iter()
                    .zip(x.coords())
                    .map(|(c, v)| c * v / nx)
                    .sum();
                let mut rng = ChaCha8Rng::seed_from_u64(0x6475616c);
                for _ in 0..64 {
                    let y: Vec<f64> =
                        (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                    let ny = self.norm_slice(&y);
                    if ny < 1e-12 {
                        continue;
                    }
                    let val: f64 = coeffs.iter().zip(&y).map(|(c, v)| c * v / ny).sum();
                    sup = sup.max(val.abs());
                }
                sup
            }
        }
    }

    /// Sampled modulus of smoothness: the max over seeded unit-sphere pairs of
    ///   (|x + tau*y| + |x - tau*y|)/2 - 1.
    /// The sample stream depends only on the seed, so estimates at different
    /// tau values share pairs and are monotone in tau.
    pub fn modulus_of_smoothness(&self, tau: f64, samples: usize, seed: u64) -> Result<f64> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(
                "tau must be nonnegative and finite".into(),
            ));
        }
        if samples == 0 {
            return Err(Error::InvalidParameter("samples must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::NEG_INFINITY;
        let mut x = vec![0.0; self.dim];
        let mut y = vec![0.0; self.dim];
        let mut plus = vec![0.0; self.dim];
        let mut minus = vec![0.0; self.dim];
        for _ in 0..samples {
            self.sample_unit_sphere(&mut rng, &mut x);
            self.sample_unit_sphere(&mut rng, &mut y);
            for i in 0..self.dim {
                plus[i] = x[i] + tau * y[i];
                minus[i] = x[i] - tau * y[i];
            }
            let val = 0.5 * self.norm_slice(&plus) + 0.5 * self.norm_slice(&minus) - 1.0;
            best = best.max(val);
        }
        Ok(best)
    }

    fn sample_unit_sphere(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        loop {
            for v in out.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let n = self.norm_slice(out);
            if n > 1e-8 {
                for v in out.iter_mut() {
                    *v /= n;
                }
                return;
            }
        }
    }
}

fn lp_norm(p: f64, x: &[f64]) -> f64 {
    if p == 2.0 {
        let m = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m == 0.0 {
            return 0.0;
        }
        let s: f64 = x
            .iter()
            .map(|v| {
                let t = v / m;
                t * t
            })
            .sum();
        return m * s.sqrt();
    }
    let m = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = x.iter().map(|v| (v.abs() / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

/// Gradient of the l_p norm at x: sign(x_i) (|x_i| / |x|)^(p-1).
fn lp_gradient(p: f64, x: &[f64], nx: f64) -> Vec<f64> {
    if p == 2.0 {
        return x.iter().map(|v| v / nx).collect();
    }
    x.iter()
        .map(|v| {
            if *v == 0.0 {
                0.0
            } else {
                v.signum() * (v.abs() / nx).powf(p - 1.0)
            }
        })
        .collect()
}

/// Norm of (y, a) in the rank-one extension along `tail`:
/// the stabilized limit of j -> |y - a * tail(j)|.
pub fn extended_norm(
    oracle: &NormOracle,
    y: &Point,
    a: f64,
    tail: &SequenceSource,
    policy: &TailPolicy,
) -> Result<f64> {
    y.validate(oracle.dim())?;
    if !a.is_finite() {
        return Err(Error::InvalidParameter("scalar part must be finite".into()));
    }
    tail_limit(
        |j| {
            let t = tail.point(j)?;
            oracle.norm(&y.axpy(-a, &t))
        },
        policy,
        tail.max_index(),
    )
}

/// Pairing of the extended support functional at (y, a) with (z, b):
/// the stabilized limit of j -> phi_{y - a*tail(j)}(z - b*tail(j)).
pub fn extended_support_apply(
    oracle: &NormOracle,
    y: &Point,
    a: f64,
    z: &Point,
    b: f64,
    tail: &SequenceSource,
    policy: &TailPolicy,
) -> Result<f64> {
    y.validate(oracle.dim())?;
    z.validate(oracle.dim())?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter("scalar parts must be finite".into()));
    }
    tail_limit(
        |j| {
            let t = tail.point(j)?;
            let base = y.axpy(-a, &t);
            let phi = oracle.support_functional(&base)?;
            phi.apply(&z.axpy(-b, &t))
        },
        policy,
        tail.max_index(),
    )
}

/// Sampled modulus of smoothness of the extended norm on (R^dim) + R.
pub fn extended_modulus_of_smoothness(
    oracle: &NormOracle,
    tail: &SequenceSource,
    policy: &TailPolicy,
    tau: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(
            "tau must be nonnegative and finite".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let dim = oracle.dim();
    // Sampled vectors must live in the head of the space: a coordinate inside
    // the probe window would make j -> |y - a t_j| drift and the tail limit
    // would not stabilize.
    let head = policy.start.saturating_sub(1).min(dim);
    if head == 0 {
        return Err(Error::InvalidParameter(
            "tail start leaves no head coordinates to sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let ext_norm = |y: &Point, a: f64| -> Result<f64> { extended_norm(oracle, y, a, tail, policy) };
    for _ in 0..samples {
        let draw = |rng: &mut ChaCha8Rng| -> Result<(Point, f64)> {
            loop {
                let v: Vec<f64> = (0..dim)
                    .map(|i| {
                        if i < head {
                            rng.sample(StandardNormal)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let s: f64 = rng.sample(StandardNormal);
                let y = Point::new(v);
                let n = ext_norm(&y, s)?;
                if n > 1e-8 {
                    return Ok((y.scale(1.0 / n), s / n));
                }
            }
        };
        let (y, a) = draw(&mut rng)?;
        let (z, b) = draw(&mut rng)?;
        let plus = ext_norm(&y.axpy(tau, &z), a + tau * b)?;
        let minus = ext_norm(&y.axpy(-tau, &z), a - tau * b)?;
        best = best.max(0.5 * plus + 0.5 * minus - 1.0);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l2(dim: usize) -> NormOracle {
        NormOracle::lp(2.0, dim).unwrap()
    }

    #[test]
    fn lp_norm_matches_scalar_arithmetic_oracle() {
        // Independent route: direct unscaled powf arithmetic.
        let oracle = NormOracle::lp(1.5, 2).unwrap();
        let x = Point::new(vec![3.0, 4.0]);
        let expected = (3f64.powf(1.5) + 4f64.powf(1.5)).powf(1.0 / 1.5);
        let got = oracle.norm(&x).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn l3_support_functional_matches_closed_form() {
        let oracle = NormOracle::lp(3.0, 2).unwrap();
        let x = Point::new(vec![2.0, 1.0]);
        let nx = oracle.norm(&x).unwrap();
        assert!((nx - 9f64.powf(1.0 / 3.0)).abs() < 1e-13);
        let phi = oracle.support_functional(&x).unwrap();
        let denom = 9f64.powf(2.0 / 3.0);
        assert!((phi.coeffs()[0] - 4.0 / denom).abs() < 1e-13);
        assert!((phi.coeffs()[1] - 1.0 / denom).abs() < 1e-13);
        let e2 = Point::basis(2, 2);
        let val = phi.apply(&x.add(&e2)).unwrap();
        assert!((val - nx - 1.0 / denom).abs() < 1e-13, "phi(x + e2) = |x| + 1/9^(2/3)");
    }

    #[test]
    fn support_identities_certified() {
        for p in [1.5, 2.0, 3.0, 7.0] {
            let oracle = NormOracle::lp(p, 6).unwrap();
            let x = Point::new(vec![0.3, -1.2, 0.0, 2.5, -0.01, 0.7]);
            let nx = oracle.norm(&x).unwrap();
            let phi = oracle.support_functional(&x).unwrap();
            assert!((phi.apply(&x).unwrap() - nx).abs() <= SUPPORT_IDENTITY_TOL);
            let q = p / (p - 1.0);
            let dual = lp_norm(q, phi.coeffs());
            assert!((dual - 1.0).abs() <= DUAL_NORM_TOL);
        }
    }

    #[test]
    fn zero_vector_rejected() {
        let oracle = l2(3);
        assert!(matches!(
            oracle.support_functional(&Point::zeros(3)),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn boundary_exponents_rejected() {
        assert!(matches!(
            NormOracle::lp(1.0, 4),
            Err(Error::NotUniformlySmooth { .. })
        ));
        assert!(matches!(
            NormOracle::lp(f64::INFINITY, 4),
            Err(Error::NotUniformlySmooth { .. })
        ));
        assert!(matches!(
            NormOracle::lp(1.005, 4),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            NormOracle::lp(250.0, 4),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn custom_oracle_weighted_l2_gradient() {
        // |x| = sqrt(sum w_i x_i^2) has gradient w_i x_i / |x|.
        let w = [1.0, 4.0, 0.25, 2.0];
        let eval = Arc::new(move |x: &[f64]| {
            x.iter()
                .zip(w.iter())
                .map(|(v, wi)| wi * v * v)
                .sum::<f64>()
                .sqrt()
        });
        let oracle = NormOracle::custom(4, eval, 1e-6).unwrap();
        let x = Point::new(vec![1.0, -0.5, 2.0, 0.25]);
        let nx = oracle.norm(&x).unwrap();
        let phi = oracle.support_functional(&x).unwrap();
        for i in 0..4 {
            let expected = w[i] * x.coords()[i] / nx;
            assert!(
                (phi.coeffs()[i] - expected).abs() < 1e-9,
                "coefficient {i}: {} vs {}",
                phi.coeffs()[i],
                expected
            );
        }
        assert!((phi.apply(&x).unwrap() - nx).abs() <= SUPPORT_IDENTITY_TOL);
    }

    #[test]
    fn custom_support_agrees_with_finite_differences_at_matching_step() {
        // Agreement bound 10*h^2 is meaningful where truncation dominates
        // roundoff, i.e. steps well above sqrt(ulp).
        let eval = Arc::new(|x: &[f64]| {
            x.iter().map(|v| v.powi(4)).sum::<f64>().powf(0.25)
        });
        for h in [1e-4, 1e-5] {
            let oracle = NormOracle::custom(5, eval.clone(), h).unwrap();
            let x = Point::new(vec![0.9, -0.4, 0.6, 1.1, -0.8]);
            let phi = oracle.support_functional(&x).unwrap();
            // Independent central-difference oracle at the same step.
            let mut buf = x.coords().to_vec();
            for i in 0..5 {
                let orig = buf[i];
                buf[i] = orig + h;
                let plus = eval(&buf);
                buf[i] = orig - h;
                let minus = eval(&buf);
                buf[i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    (phi.coeffs()[i] - fd).abs() <= 10.0 * h * h,
                    "step {h}, coord {i}: {} vs {}",
                    phi.coeffs()[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn non_homogeneous_custom_norm_rejected() {
        let eval = Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>());
        assert!(matches!(
            NormOracle::custom(3, eval, 1e-6),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn modulus_l2_matches_closed_form() {
        let oracle = l2(48);
        for tau in [0.1f64, 0.5, 1.0] {
            let closed = (1.0 + tau * tau).sqrt() - 1.0;
            let est = oracle.modulus_of_smoothness(tau, 20_000, 7).unwrap();
            assert!(est <= closed + 1e-9, "estimate above the supremum");
            assert!(est >= closed - 5e-3, "estimate too far below: {est} vs {closed}");
        }
    }

    #[test]
    fn modulus_vanishes_superlinearly_at_zero() {
        let oracle = l2(16);
        let tau = 1e-4;
        let est = oracle.modulus_of_smoothness(tau, 2_000, 11).unwrap();
        assert!(est / tau <= 0.01, "estimate/tau = {}", est / tau);
    }

    #[test]
    fn modulus_monotone_on_grid() {
        let oracle = NormOracle::lp(3.0, 12).unwrap();
        let taus = [0.05, 0.1, 0.2, 0.4, 0.8, 1.0];
        let mut prev = -1.0;
        for tau in taus {
            let est = oracle.modulus_of_smoothness(tau, 500, 99).unwrap();
            assert!(est >= prev - 1e-15, "not monotone at tau = {tau}");
            prev = est;
        }
    }

    #[test]
    fn extended_norm_unit_basis_pythagoras() {
        // |(e_1, 1)| along the unit basis tail = lim |e_1 - e_j| = sqrt(2).
        let oracle = l2(40);
        let tail = SequenceSource::unit_basis(40).unwrap();
        let policy = TailPolicy::new(20, 5, 1e-6).unwrap();
        let y = Point::basis(40, 1);
        let got = extended_norm(&oracle, &y, 1.0, &tail, &policy).unwrap();
        assert!((got - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn extended_support_apply_closed_form_and_annihilation() {
        // l_3, (y,a) = (e_1, 1), unit-basis tail: phi_{e_1 - e_j} has
        // coefficients (1, 0, ..., -1)/2^(2/3), so pairing with (e_1, 0) gives
        // 2^(-2/3) and pairing with (e_2, 0) gives exactly 0.
        let oracle = NormOracle::lp(3.0, 40).unwrap();
        let tail = SequenceSource::unit_basis(40).unwrap();
        let policy = TailPolicy::new(20, 5, 1e-6).unwrap();
        let y = Point::basis(40, 1);
        let got_self =
            extended_support_apply(&oracle, &y, 1.0, &Point::basis(40, 1), 0.0, &tail, &policy)
                .unwrap();
        let expected = 2f64.powf(-2.0 / 3.0);
        assert!((got_self - expected).abs() < 1e-12);
        let got_disjoint =
            extended_support_apply(&oracle, &y, 1.0, &Point::basis(40, 2), 0.0, &tail, &policy)
                .unwrap();
        assert_eq!(got_disjoint, 0.0);
    }

    #[test]
    fn extended_norm_restricted_to_zero_scalar_is_base_norm() {
        let oracle = l2(30);
        let tail = SequenceSource::unit_basis(30).unwrap();
        let policy = TailPolicy::new(15, 5, 1e-9).unwrap();
        let y = Point::new((0..30).map(|i| ((i * 7 % 5) as f64) - 2.0).collect());
        let base = oracle.norm(&y).unwrap();
        let ext = extended_norm(&oracle, &y, 0.0, &tail, &policy).unwrap();
        assert_eq!(ext, base);
    }

    #[test]
    fn extended_modulus_tracks_base_for_l2_unit_tail() {
        // With a unit-basis tail the extended l_2 norm is again euclidean, so
        // the sampled extended modulus must sit at (or below) the base one.
        let oracle = l2(12);
        let tail = SequenceSource::unit_basis(12).unwrap();
        let policy = TailPolicy::new(4, 5, 1e-8).unwrap();
        let tau = 0.5;
        let base = oracle.modulus_of_smoothness(tau, 4000, 3).unwrap();
        let ext =
            extended_modulus_of_smoothness(&oracle, &tail, &policy, tau, 4000, 3).unwrap();
        assert!(ext <= base + 1e-6, "ext {ext} vs base {base}");
        let closed = (1.0 + tau * tau).sqrt() - 1.0;
        assert!(ext <= closed + 1e-9);
        assert!(ext >= closed - 5e-2);
    }

    proptest! {
        #[test]
        fn prop_homogeneity_and_triangle(
            p in 1.05f64..8.0,
            xs in proptest::collection::vec(-10.0f64..10.0, 6),
            ys in proptest::collection::vec(-10.0f64..10.0, 6),
            c in -5.0f64..5.0,
        ) {
            let oracle = NormOracle::lp(p, 6).unwrap();
            let x = Point::new(xs);
            let y = Point::new(ys);
            let nx = oracle.norm(&x).unwrap();
            let ny = oracle.norm(&y).unwrap();
            let ncx = oracle.norm(&x.scale(c)).unwrap();
            prop_assert!((ncx - c.abs() * nx).abs() <= 1e-12 * (c.abs() * nx).max(1.0));
            let nsum = oracle.norm(&x.add(&y)).unwrap();
            prop_assert!(nsum <= nx + ny + 1e-12 * (nx + ny).max(1.0));
        }

        #[test]
        fn prop_duality_identities(
            p in 1.05f64..8.0,
            xs in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let x = Point::new(xs);
            prop_assume!(x.coords().iter().any(|v| v.abs() > 1e-6));
            let oracle = NormOracle::lp(p, 6).unwrap();
            let nx = oracle.norm(&x).unwrap();
            let phi = oracle.support_functional(&x).unwrap();
            prop_assert!((phi.apply(&x).unwrap() - nx).abs() <= SUPPORT_IDENTITY_TOL * nx.max(1.0));
            let q = p / (p - 1.0);
            prop_assert!((lp_norm(q, phi.coeffs()) - 1.0).abs() <= DUAL_NORM_TOL);
        }
    }
}
