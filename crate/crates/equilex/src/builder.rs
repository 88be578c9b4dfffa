//! Inductive construction of an equilateral set. Starting from the first
//! stabilized vector, each step picks a pool index K, assembles the duality
//! Jacobian at the origin, gates it (class membership plus a measured
//! inverse-norm budget), then solves the (N+1)-dimensional system
//! f^K(a) = (λ, …, λ) with the guarded Newton engine. The accepted point is
//! g^K(a) = (1 + a_{N+1})·z_K + Σ a_i·x_i, after which the pool is truncated
//! past K and all induction properties are re-verified from scratch.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{self, EpsSchedule, GateMatrix};
use crate::newton::{self, DifferentiableMap, GuardCertificate, NewtonOptions};
use crate::norm::{extended_norm, extended_support_apply, NormOracle};
use crate::point::Point;
use crate::sequence::{
    double_tail_limit, stabilize, tail_limit, SequenceSource, StabilizedSequence, TailPolicy,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BuildParams {
    pub n_points: usize,
    pub prop_tol: f64,
    pub final_tol: f64,
    pub delta_cap: f64,
    pub k_retries: usize,
    pub newton: NewtonOptions,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            n_points: 8,
            prop_tol: 1e-7,
            final_tol: 1e-8,
            delta_cap: 0.1,
            k_retries: 12,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepLog {
    /// Index of the point this step added (the new N).
    pub step: usize,
    pub chosen_k: usize,
    /// Candidates rejected by screening or the class gate before K.
    pub skipped_gate: usize,
    pub solver_failures: usize,
    pub delta: f64,
    pub target_norm: f64,
    pub newton_iterations: usize,
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    pub guard: Option<GuardCertificate>,
    pub inverse_norm: f64,
    pub a_norm: f64,
}

#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub id: u8,
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    /// True when the check requires measured > threshold instead of <=.
    pub lower_bound: bool,
    pub pass: bool,
    pub vacuous: bool,
}

impl PropertyCheck {
    pub fn slack(&self) -> f64 {
        if self.lower_bound {
            self.measured - self.threshold
        } else {
            self.threshold - self.measured
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| !c.pass)
    }
}

#[derive(Debug, Clone)]
pub struct EquilateralSet {
    pub points: Vec<Point>,
    pub lambda: f64,
    pub defect: f64,
    pub c: f64,
    pub eps: Vec<f64>,
    pub r: Vec<f64>,
    pub properties: PropertyReport,
    pub steps: Vec<StepLog>,
    pub differenced: bool,
    pub dropped: usize,
}

#[derive(Debug)]
pub struct ConstructionState {
    oracle: NormOracle,
    stab: StabilizedSequence,
    points: Vec<Point>,
    pool: Vec<usize>,
    lambda: f64,
    c: f64,
    sched: EpsSchedule,
    policy: TailPolicy,
    params: BuildParams,
    steps: Vec<StepLog>,
}

impl ConstructionState {
    pub fn new(
        oracle: NormOracle,
        stab: StabilizedSequence,
        policy: TailPolicy,
        params: BuildParams,
    ) -> Result<Self> {
        if params.n_points < 1 {
            return Err(Error::InvalidParameter("n_points must be >= 1".into()));
        }
        if !(params.prop_tol > 0.0 && params.final_tol > 0.0 && params.delta_cap > 0.0) {
            return Err(Error::InvalidParameter(
                "prop_tol, final_tol and delta_cap must be positive".into(),
            ));
        }
        let lambda = stab.lambda();
        let c = stab.c();
        let sched = EpsSchedule::new(c, params.n_points.max(2))?;
        let first = stab.source().point(1)?;
        let pool: Vec<usize> = (2..=stab.source().max_index()).collect();
        Ok(ConstructionState {
            oracle,
            stab,
            points: vec![first],
            pool,
            lambda,
            c,
            sched,
            policy,
            params,
            steps: Vec::new(),
        })
    }

    pub fn oracle(&self) -> &NormOracle {
        &self.oracle
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sched(&self) -> &EpsSchedule {
        &self.sched
    }

    pub fn steps(&self) -> &[StepLog] {
        &self.steps
    }

    fn z(&self, index: usize) -> Result<Point> {
        self.stab.source().point(index)
    }

    fn pool_points_after(&self, pos: usize) -> Result<Vec<Point>> {
        self.pool[pos..]
            .iter()
            .map(|&l| self.z(l))
            .collect::<Result<Vec<_>>>()
    }
}

/// The shifted residual map a ↦ f^K(a) − f^K(0) over a ∈ ℝ^{N+1}, where the
/// first N components of f^K are ‖g^K(a) − x_j‖ and the last is the tail
/// limit of ‖g^K(a) − z_m‖ over the pool past K.
pub struct ResidualMap {
    oracle: NormOracle,
    xs: Vec<Point>,
    zk: Point,
    tail: SequenceSource,
    policy: TailPolicy,
    f0: Vec<f64>,
    radius: f64,
}

impl ResidualMap {
    fn assemble(
        oracle: NormOracle,
        xs: Vec<Point>,
        zk: Point,
        tail: SequenceSource,
        policy: TailPolicy,
        radius: f64,
    ) -> Result<Self> {
        let mut rm = ResidualMap {
            oracle,
            xs,
            zk,
            tail,
            policy,
            f0: Vec::new(),
            radius,
        };
        rm.f0 = rm.raw_components(&Point::zeros(rm.dim()))?;
        Ok(rm)
    }

    pub fn g_point(&self, a: &Point) -> Point {
        let n = self.xs.len();
        let mut g = self.zk.scale(1.0 + a.coords()[n]);
        for (i, x) in self.xs.iter().enumerate() {
            g = g.axpy(a.coords()[i], x);
        }
        g
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn set_radius(&mut self, radius: f64) {
        self.radius = radius;
    }

    fn raw_components(&self, a: &Point) -> Result<Vec<f64>> {
        let g = self.g_point(a);
        let mut out = Vec::with_capacity(self.dim());
        for x in &self.xs {
            out.push(self.oracle.norm(&g.sub(x))?);
        }
        out.push(extended_norm(
            &self.oracle,
            &g,
            1.0,
            &self.tail,
            &self.policy,
        )?);
        Ok(out)
    }
}

impl DifferentiableMap for ResidualMap {
    fn dim(&self) -> usize {
        self.xs.len() + 1
    }

    fn eval(&self, a: &Point) -> Result<Point> {
        let raw = self.raw_components(a)?;
        Ok(Point::new(
            raw.iter().zip(&self.f0).map(|(r, f)| r - f).collect(),
        ))
    }

    fn jacobian(&self, a: &Point) -> Result<DMatrix<f64>> {
        let n = self.xs.len();
        let dim = n + 1;
        let g = self.g_point(a);
        let mut out = DMatrix::zeros(dim, dim);
        for (j, x) in self.xs.iter().enumerate() {
            let phi = self.oracle.support_functional(&g.sub(x))?;
            for (col, xn) in self.xs.iter().enumerate() {
                out[(j, col)] = phi.apply(xn)?;
            }
            out[(j, n)] = phi.apply(&self.zk)?;
        }
        for (col, xn) in self.xs.iter().enumerate() {
            out[(n, col)] =
                extended_support_apply(&self.oracle, &g, 1.0, xn, 0.0, &self.tail, &self.policy)?;
        }
        out[(n, n)] = extended_support_apply(
            &self.oracle,
            &g,
            1.0,
            &self.zk,
            0.0,
            &self.tail,
            &self.policy,
        )?;
        Ok(out)
    }

    fn domain_radius(&self) -> f64 {
        self.radius
    }
}

/// Residual map for candidate pool index K of the current state.
pub fn residual_map(state: &ConstructionState, k: usize) -> Result<ResidualMap> {
    let pos = state
        .pool
        .iter()
        .position(|&l| l == k)
        .ok_or_else(|| Error::InvalidParameter(format!("candidate index {k} not in pool")))?;
    let tail_pts = state.pool_points_after(pos + 1)?;
    let tail = SequenceSource::from_points(tail_pts)?;
    ResidualMap::assemble(
        state.oracle.clone(),
        state.points.clone(),
        state.z(k)?,
        tail,
        state.policy.clone(),
        state.params.delta_cap,
    )
}

/// Duality-map Jacobian of f^K at a = 0: entry (j, n) = φ_{z_K − x_j}(x_n),
/// entry (j, N+1) = φ_{z_K − x_j}(z_K), with row N+1 computed as tail limits
/// over the pool past K.
pub fn jacobian_at_zero(state: &ConstructionState, k: usize) -> Result<GateMatrix> {
    let rm = residual_map(state, k)?;
    let m = rm.jacobian(&Point::zeros(rm.dim()))?;
    Ok(GateMatrix::from_fn(m.nrows(), |i, j| m[(i, j)]))
}

fn solver_failure(err: &Error) -> bool {
    matches!(
        err,
        Error::GuardFailed { .. }
            | Error::NoConvergence { .. }
            | Error::LeftDomain { .. }
            | Error::SingularMatrix { .. }
            | Error::InvariantViolation { .. }
            | Error::NonStabilizing { .. }
    )
}

/// One induction step: scan the pool for a candidate K whose origin Jacobian
/// passes screening, the class gate and the inverse-norm budget, then solve
/// for the perturbation a and accept x_{N+1} = g^K(a).
pub fn extend_one(state: &mut ConstructionState) -> Result<()> {
    let n = state.points.len();
    let step = n + 1;
    if step > state.params.n_points {
        return Err(Error::InvalidParameter(format!(
            "construction already has {} points",
            n
        )));
    }
    let eps_next = state.sched.eps(step.max(2))?;
    let r_budget = state.sched.r(step)?;
    let lambda = state.lambda;

    let mut skipped_gate = 0usize;
    let mut solver_failures = 0usize;
    let mut tried = 0usize;

    for pos in 0..state.pool.len() {
        let k = state.pool[pos];
        if state.pool.len() - (pos + 1) < state.policy.required_max_index() {
            break;
        }
        tried += 1;

        let mut rm = residual_map(state, k)?;
        let j0 = rm.jacobian(&Point::zeros(step))?;

        // K_1 screening: the tail row must be concentrated on its diagonal.
        let screened = (0..n).all(|col| j0[(n, col)].abs() < eps_next);
        if !screened {
            skipped_gate += 1;
            continue;
        }

        let gate = GateMatrix::from_fn(step, |i, j| j0[(j, i)]);
        if !matrix::in_class(&gate, state.c, &state.sched) {
            skipped_gate += 1;
            continue;
        }
        let (within_budget, inverse_norm) = match matrix::inverse_norm_check(&gate, r_budget) {
            Ok(v) => v,
            Err(e) if solver_failure(&e) => {
                solver_failures += 1;
                if solver_failures > state.params.k_retries {
                    return Err(Error::ExhaustedPool {
                        step,
                        candidates_tried: tried,
                    });
                }
                continue;
            }
            Err(e) => return Err(e.with_step(step)),
        };
        if !within_budget {
            skipped_gate += 1;
            continue;
        }

        let target = Point::new(rm.f0().iter().map(|f| lambda - f).collect());
        let target_vec = DVector::from_column_slice(target.coords());
        let j0_inv = match matrix::invert(&j0) {
            Ok(v) => v,
            Err(_) => {
                solver_failures += 1;
                if solver_failures > state.params.k_retries {
                    return Err(Error::ExhaustedPool {
                        step,
                        candidates_tried: tried,
                    });
                }
                continue;
            }
        };
        let seed_norm = (&j0_inv * &target_vec).norm();
        let delta = state
            .params
            .delta_cap
            .min((eps_next / 4.0).max(8.0 * seed_norm));
        rm.set_radius(delta);

        match newton::solve(&rm, &target, delta, &state.params.newton) {
            Ok((a, trace)) => {
                let x_new = rm.g_point(&a);
                let a_norm = a.coords().iter().map(|v| v * v).sum::<f64>().sqrt();
                state.points.push(x_new);
                state.pool.retain(|&l| l > k);
                state.steps.push(StepLog {
                    step,
                    chosen_k: k,
                    skipped_gate,
                    solver_failures,
                    delta,
                    target_norm: target_vec.norm(),
                    newton_iterations: trace.iterations,
                    radii: trace.radii,
                    residuals: trace.residuals,
                    guard: trace.certificates.last().cloned(),
                    inverse_norm,
                    a_norm,
                });
                let report = verify_properties(state)?;
                if let Some(fail) = report.first_failure() {
                    return Err(Error::InvariantViolation {
                        step,
                        property: fail.name.to_string(),
                        measured: fail.measured,
                        threshold: fail.threshold,
                    });
                }
                return Ok(());
            }
            Err(e) if solver_failure(&e) => {
                solver_failures += 1;
                if solver_failures > state.params.k_retries {
                    return Err(Error::ExhaustedPool {
                        step,
                        candidates_tried: tried,
                    });
                }
                continue;
            }
            Err(e) => return Err(e.with_step(step)),
        }
    }

    Err(Error::ExhaustedPool {
        step,
        candidates_tried: tried,
    })
}

fn sample_positions(policy: &TailPolicy, len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=3.min(len)).collect();
    for pos in policy.start..policy.end() {
        if pos <= len && !out.contains(&pos) {
            out.push(pos);
        }
    }
    out
}

/// Recompute every induction property from scratch and report measured
/// values; violations are reported, never thrown.
pub fn verify_properties(state: &ConstructionState) -> Result<PropertyReport> {
    let n = state.points.len();
    let lambda = state.lambda;
    let tol = state.params.prop_tol;
    let policy = &state.policy;
    let pool_pts = state.pool_points_after(0)?;
    let len = pool_pts.len();
    let mut checks = Vec::with_capacity(6);

    let mut pairwise_dev = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = state.oracle.norm(&state.points[i].sub(&state.points[j]))?;
            pairwise_dev = pairwise_dev.max((d - lambda).abs());
        }
    }
    checks.push(PropertyCheck {
        id: 1,
        name: "pairwise distances equal lambda",
        measured: pairwise_dev,
        threshold: tol,
        lower_bound: false,
        pass: pairwise_dev <= tol,
        vacuous: n < 2,
    });

    let mut tail_dev = 0.0f64;
    for x in &state.points {
        let t = tail_limit(|j| state.oracle.norm(&x.sub(&pool_pts[j - 1])), policy, len)?;
        tail_dev = tail_dev.max((t - lambda).abs());
    }
    checks.push(PropertyCheck {
        id: 2,
        name: "tail distances to pool equal lambda",
        measured: tail_dev,
        threshold: tol,
        lower_bound: false,
        pass: tail_dev <= tol,
        vacuous: false,
    });

    let mut max_norm = 0.0f64;
    for x in &state.points {
        max_norm = max_norm.max(state.oracle.norm(x)?);
    }
    checks.push(PropertyCheck {
        id: 3,
        name: "point norms within 2",
        measured: max_norm,
        threshold: 2.0,
        lower_bound: false,
        pass: max_norm <= 2.0,
        vacuous: false,
    });

    let mut functional_dev = 0.0f64;
    for x in &state.points {
        let d = double_tail_limit(
            |kpos, ipos| {
                let diff = pool_pts[kpos - 1].sub(&pool_pts[ipos - 1]);
                state.oracle.support_functional(&diff)?.apply(x)
            },
            policy,
            len,
        )?;
        functional_dev = functional_dev.max(d.abs());
    }
    checks.push(PropertyCheck {
        id: 4,
        name: "pool difference functionals vanish on points",
        measured: functional_dev,
        threshold: tol,
        lower_bound: false,
        pass: functional_dev <= tol,
        vacuous: false,
    });

    let samples = sample_positions(policy, len);
    let mut cross_ratio = 0.0f64;
    for k in 1..n {
        let eps_k = state.sched.eps(k + 1)?;
        for i in 0..k {
            for &pos in &samples {
                let v = pool_pts[pos - 1].sub(&state.points[k]);
                let phi = state.oracle.support_functional(&v)?;
                cross_ratio = cross_ratio.max(phi.apply(&state.points[i])?.abs() / eps_k);
            }
        }
    }
    checks.push(PropertyCheck {
        id: 5,
        name: "cross functionals below eps schedule",
        measured: cross_ratio,
        threshold: 1.0,
        lower_bound: false,
        pass: cross_ratio < 1.0,
        vacuous: n < 2,
    });

    let mut diag_min = f64::INFINITY;
    for x in &state.points {
        for &pos in &samples {
            let v = pool_pts[pos - 1].sub(x);
            let phi = state.oracle.support_functional(&v)?;
            diag_min = diag_min.min(phi.apply(x)?.abs());
        }
    }
    checks.push(PropertyCheck {
        id: 6,
        name: "diagonal functionals above C",
        measured: diag_min,
        threshold: state.c,
        lower_bound: true,
        pass: diag_min > state.c,
        vacuous: false,
    });

    Ok(PropertyReport { checks })
}

/// Full pipeline: stabilize the source, seed x_1 = z_1, extend to n_points,
/// and verify the final defect by direct recomputation.
pub fn build_set(
    src: &SequenceSource,
    oracle: &NormOracle,
    policy: &TailPolicy,
    params: &BuildParams,
) -> Result<EquilateralSet> {
    let stab = stabilize(src, oracle, policy)?;
    let mut state = ConstructionState::new(
        oracle.clone(),
        stab,
        policy.clone(),
        params.clone(),
    )?;

    let base = verify_properties(&state)?;
    if let Some(fail) = base.first_failure() {
        return Err(Error::InvariantViolation {
            step: 1,
            property: fail.name.to_string(),
            measured: fail.measured,
            threshold: fail.threshold,
        });
    }

    while state.points.len() < params.n_points {
        extend_one(&mut state)?;
    }

    let lambda = state.lambda;
    let mut defect = 0.0f64;
    for i in 0..state.points.len() {
        for j in (i + 1)..state.points.len() {
            let d = oracle.norm(&state.points[i].sub(&state.points[j]))?;
            defect = defect.max((d - lambda).abs());
        }
    }
    if defect > params.final_tol {
        return Err(Error::FinalDefect {
            defect,
            tol: params.final_tol,
        });
    }

    let properties = verify_properties(&state)?;
    Ok(EquilateralSet {
        points: state.points.clone(),
        lambda,
        defect,
        c: state.c,
        eps: state.sched.eps_all().to_vec(),
        r: state.sched.r_all().to_vec(),
        properties,
        steps: state.steps.clone(),
        differenced: state.stab.differenced(),
        dropped: state.stab.dropped(),
    })
}
