//! One-parameter groups of transformations of the (t, x, d, y) space, their
//! infinitesimal generators, prolongations to first derivatives, and
//! time-scale classification.

use crate::fd::FdPolicy;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

pub type TimeMap = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type StateMap = Arc<dyn Fn(f64, f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type InputMap =
    Arc<dyn Fn(f64, f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type OutputMap = Arc<dyn Fn(f64, f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DomPlus = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type DomainTest =
    Arc<dyn Fn(f64, f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> bool + Send + Sync>;

/// A point of the extended space the group acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: DVector<f64>,
    pub d: DVector<f64>,
    pub y: DVector<f64>,
}

impl Point {
    pub fn new(t: f64, x: DVector<f64>, d: DVector<f64>, y: DVector<f64>) -> Self {
        Point { t, x, d, y }
    }

    pub fn norm_diff(&self, other: &Point) -> f64 {
        let mut s = (self.t - other.t).powi(2);
        s += (&self.x - &other.x).norm_squared();
        s += (&self.d - &other.d).norm_squared();
        s += (&self.y - &other.y).norm_squared();
        s.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

/// Optional analytic partial derivatives of the action; any entry left
/// unset falls back to central finite differences.
#[derive(Default, Clone)]
pub struct AnalyticJacobians {
    /// dPsi^t/dt (p, t)
    pub dpsi_t_dt: Option<TimeMap>,
    /// dPsi^x/dt (p, t, x)
    pub dpsi_x_dt: Option<StateMap>,
    /// dPsi^x/dx (p, t, x)
    pub dpsi_x_dx: Option<Arc<dyn Fn(f64, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// dPsi^x_{-p}/dx evaluated at a transformed point (p, t_p, x_bar)
    pub dpsi_x_inv_dx: Option<Arc<dyn Fn(f64, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>>,
}

/// A one-parameter group action on (t, x, d, y), structured so that the time
/// map depends only on (p, t), the state map on (p, t, x), the input map on
/// (p, t, x, d) and the output map on (p, t, y).
#[derive(Clone)]
pub struct GroupAction {
    pub dims: Dims,
    pub psi_t: TimeMap,
    pub psi_x: StateMap,
    pub psi_d: InputMap,
    pub psi_y: OutputMap,
    /// sup { a >= 0 : [0, a) is inside Dom(Psi^t_p) }, `inf` when global.
    pub dom_plus_t: DomPlus,
    pub domain_test: DomainTest,
    pub jac: AnalyticJacobians,
}

impl GroupAction {
    /// Globally defined action: domain test always true, Dom^+ infinite.
    pub fn global(
        dims: Dims,
        psi_t: TimeMap,
        psi_x: StateMap,
        psi_d: InputMap,
        psi_y: OutputMap,
    ) -> Self {
        GroupAction {
            dims,
            psi_t,
            psi_x,
            psi_d,
            psi_y,
            dom_plus_t: Arc::new(|_| f64::INFINITY),
            domain_test: Arc::new(|_, _, _, _, _| true),
            jac: AnalyticJacobians::default(),
        }
    }

    pub fn with_domain(mut self, dom_plus_t: DomPlus, domain_test: DomainTest) -> Self {
        self.dom_plus_t = dom_plus_t;
        self.domain_test = domain_test;
        self
    }

    pub fn with_jacobians(mut self, jac: AnalyticJacobians) -> Self {
        self.jac = jac;
        self
    }

    pub fn in_domain(&self, p: f64, point: &Point) -> bool {
        (self.domain_test)(p, point.t, &point.x, &point.d, &point.y)
    }

    /// dPsi^t_p/dt, analytic when supplied.
    pub fn dpsi_t_dt(&self, p: f64, t: f64, fd: &FdPolicy) -> f64 {
        match &self.jac.dpsi_t_dt {
            Some(j) => j(p, t),
            None => {
                let psi_t = self.psi_t.clone();
                fd.d_scalar(|s| psi_t(p, s), t)
            }
        }
    }

    /// dPsi^x_p/dt, analytic when supplied.
    pub fn dpsi_x_dt(&self, p: f64, t: f64, x: &DVector<f64>, fd: &FdPolicy) -> DVector<f64> {
        match &self.jac.dpsi_x_dt {
            Some(j) => j(p, t, x),
            None => {
                let psi_x = self.psi_x.clone();
                fd.d_vector(|s| psi_x(p, s, x), t)
            }
        }
    }

    /// dPsi^x_p/dx, analytic when supplied.
    pub fn dpsi_x_dx(&self, p: f64, t: f64, x: &DVector<f64>, fd: &FdPolicy) -> DMatrix<f64> {
        match &self.jac.dpsi_x_dx {
            Some(j) => j(p, t, x),
            None => {
                let psi_x = self.psi_x.clone();
                fd.jacobian(|v| psi_x(p, t, v), x)
            }
        }
    }

    /// dPsi^x_{-p}/dx_bar at a transformed point (t_p, x_bar).
    pub fn dpsi_x_inv_dx(
        &self,
        p: f64,
        t_p: f64,
        x_bar: &DVector<f64>,
        fd: &FdPolicy,
    ) -> DMatrix<f64> {
        match &self.jac.dpsi_x_inv_dx {
            Some(j) => j(p, t_p, x_bar),
            None => {
                let psi_x = self.psi_x.clone();
                fd.jacobian(|v| psi_x(-p, t_p, v), x_bar)
            }
        }
    }
}

pub type GenTime = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type GenState = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type GenInput =
    Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type GenOutput = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Growth/regularity constants of a generator used by the global observer:
/// `g^t(t) <= h t`, a class-K bound on the x-Jacobian increment, and the sup
/// of the x-Jacobian at the origin.
#[derive(Clone)]
pub struct GeneratorRegularity {
    pub h: f64,
    pub kappa: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dgx0_sup: f64,
}

/// Infinitesimal generator of a [`GroupAction`]: the p-derivative of the
/// action at p = 0, with the same block structure.
#[derive(Clone)]
pub struct Generator {
    pub dims: Dims,
    pub g_t: GenTime,
    pub g_x: GenState,
    pub g_d: GenInput,
    pub g_y: GenOutput,
    pub regularity: Option<GeneratorRegularity>,
}

impl Generator {
    pub fn new(dims: Dims, g_t: GenTime, g_x: GenState, g_d: GenInput, g_y: GenOutput) -> Self {
        Generator { dims, g_t, g_x, g_d, g_y, regularity: None }
    }

    pub fn with_regularity(mut self, reg: GeneratorRegularity) -> Self {
        self.regularity = Some(reg);
        self
    }

    /// dg^x/dx at (t, x).
    pub fn dgx_dx(&self, t: f64, x: &DVector<f64>, fd: &FdPolicy) -> DMatrix<f64> {
        let g_x = self.g_x.clone();
        fd.jacobian(|v| g_x(t, v), x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScaleTag {
    /// Unbounded time scales map to unbounded ones (Dom^+ infinite).
    Uu,
    /// Bounded Dom^+ with the transformed scale blowing up at Dom^+.
    Bu,
    /// BU with Dom^+ shrinking to zero as p grows.
    Cbu,
    Other,
}

#[derive(Debug, Clone)]
pub struct TimeScaleClass {
    pub tag: TimeScaleTag,
    /// (p, Dom^+ Psi^t_p, limit estimate) per sampled parameter.
    pub evidence: Vec<(f64, f64, f64)>,
}

/// Transform a point by the group element `p`.
pub fn apply(action: &GroupAction, p: f64, point: &Point) -> Result<Point> {
    if !action.in_domain(p, point) {
        return Err(Error::DomainViolation {
            what: format!("point at t = {} outside Dom(Psi) for p = {p}", point.t),
        });
    }
    Ok(Point {
        t: (action.psi_t)(p, point.t),
        x: (action.psi_x)(p, point.t, &point.x),
        d: (action.psi_d)(p, point.t, &point.x, &point.d),
        y: (action.psi_y)(p, point.t, &point.y),
    })
}

const TIME_JAC_TOL: f64 = 1e-12;

/// First-order prolongation of the action: transports (x, x1) with
/// x1' = (dPsi^t/dt)^{-1} (dPsi^x/dt + dPsi^x/dx x1).
pub fn prolong_point(
    action: &GroupAction,
    p: f64,
    t: f64,
    x: &DVector<f64>,
    x1: &DVector<f64>,
    fd: &FdPolicy,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let jt = action.dpsi_t_dt(p, t, fd);
    if jt.abs() < TIME_JAC_TOL {
        return Err(Error::SingularTimeJacobian { p, t, jac: jt });
    }
    let x_p = (action.psi_x)(p, t, x);
    let x1_p = (action.dpsi_x_dt(p, t, x, fd) + action.dpsi_x_dx(p, t, x, fd) * x1) / jt;
    Ok((x_p, x1_p))
}

/// First-order prolongation of the generator:
/// g^{x_j^(1)} = (dg^{x_j}/dx) x1 + dg^{x_j}/dt - (dg^t/dt) x1_j.
pub fn prolong_generator(
    gen: &Generator,
    t: f64,
    x: &DVector<f64>,
    x1: &DVector<f64>,
    fd: &FdPolicy,
) -> DVector<f64> {
    let gx_dx = gen.dgx_dx(t, x, fd);
    let g_x = gen.g_x.clone();
    let gx_dt = fd.d_vector(|s| g_x(s, x), t);
    let g_t = gen.g_t.clone();
    let gt_dt = fd.d_scalar(|s| g_t(s), t);
    gx_dx * x1 + gx_dt - x1 * gt_dt
}

/// Numerical evidence thresholds for the time-scale probes. A limit counts
/// as +infinity only above `LIMIT_BIG`; values between `LIMIT_SMALL` and
/// `LIMIT_BIG` are reported as inconclusive rather than guessed.
const LIMIT_BIG: f64 = 1e8;
const LIMIT_SMALL: f64 = 1e6;

/// Classify the time-scale behavior of the action over a grid of positive
/// parameters. `Dom^+` is trusted from the action's metadata; only the
/// limits are probed numerically.
pub fn classify_time_scale(
    action: &GroupAction,
    p_grid: &[f64],
    horizon: f64,
) -> Result<TimeScaleClass> {
    if p_grid.iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidConfig { detail: "p grid must be strictly positive".into() });
    }
    #[derive(PartialEq, Clone, Copy)]
    enum Probe {
        UnboundedAtInf,
        BlowsAtDomPlus,
        Bounded,
    }
    let mut evidence = Vec::new();
    let mut probes = Vec::new();
    for &p in p_grid {
        let dp = (action.dom_plus_t)(p);
        let (probe, limit) = if dp.is_infinite() {
            let v = (action.psi_t)(p, horizon);
            if v >= LIMIT_BIG {
                (Probe::UnboundedAtInf, v)
            } else if v < LIMIT_SMALL {
                (Probe::Bounded, v)
            } else {
                return Err(Error::InconclusiveClassification {
                    detail: format!("Psi^t_{p}({horizon}) = {v:e} in the gray zone"),
                });
            }
        } else if dp > 0.0 {
            let mut best = f64::NEG_INFINITY;
            for k in 4..=12 {
                let t = dp * (1.0 - 10f64.powi(-k));
                best = best.max((action.psi_t)(p, t));
            }
            if best >= LIMIT_BIG {
                (Probe::BlowsAtDomPlus, best)
            } else if best < LIMIT_SMALL {
                (Probe::Bounded, best)
            } else {
                return Err(Error::InconclusiveClassification {
                    detail: format!("Psi^t_{p} near Dom^+ = {dp} peaked at {best:e}"),
                });
            }
        } else {
            (Probe::Bounded, 0.0)
        };
        evidence.push((p, dp, limit));
        probes.push(probe);
    }

    let all_uu = probes.iter().all(|&q| q == Probe::UnboundedAtInf);
    let all_bu = probes.iter().all(|&q| q == Probe::BlowsAtDomPlus);
    let tag = if all_uu {
        TimeScaleTag::Uu
    } else if all_bu {
        let doms: Vec<f64> = evidence.iter().map(|e| e.1).collect();
        let decreasing = doms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        let first = doms.first().copied().unwrap_or(f64::INFINITY);
        let last = doms.last().copied().unwrap_or(f64::INFINITY);
        // "toward zero": strong shrink relative to the first sample and an
        // absolute small tail value.
        if decreasing && last <= 0.25 * first && last <= 0.2 {
            TimeScaleTag::Cbu
        } else {
            TimeScaleTag::Bu
        }
    } else {
        TimeScaleTag::Other
    };
    Ok(TimeScaleClass { tag, evidence })
}

#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub max_identity: f64,
    pub max_inversion: f64,
    pub max_composition: f64,
    pub tested: usize,
    pub skipped: usize,
}

impl AxiomReport {
    pub fn max_residual(&self) -> f64 {
        self.max_identity.max(self.max_inversion).max(self.max_composition)
    }

    pub fn pass(&self, tol: f64) -> bool {
        self.max_residual() < tol
    }
}

/// Check identity / inversion / composition on a sample set. Out-of-domain
/// combinations are skipped and counted.
pub fn check_group_axioms(
    action: &GroupAction,
    samples: &[Point],
    p_pairs: &[(f64, f64)],
) -> AxiomReport {
    let mut report = AxiomReport {
        max_identity: 0.0,
        max_inversion: 0.0,
        max_composition: 0.0,
        tested: 0,
        skipped: 0,
    };
    for pt in samples {
        if let Ok(image) = apply(action, 0.0, pt) {
            report.max_identity = report.max_identity.max(image.norm_diff(pt));
            report.tested += 1;
        } else {
            report.skipped += 1;
        }
        for &(p1, p2) in p_pairs {
            for p in [p1, p2] {
                match apply(action, p, pt).and_then(|img| apply(action, -p, &img)) {
                    Ok(back) => {
                        report.max_inversion = report.max_inversion.max(back.norm_diff(pt));
                        report.tested += 1;
                    }
                    Err(_) => report.skipped += 1,
                }
            }
            let composed = apply(action, p2, pt).and_then(|img| apply(action, p1, &img));
            let direct = apply(action, p1 + p2, pt);
            match (composed, direct) {
                (Ok(a), Ok(b)) => {
                    report.max_composition = report.max_composition.max(a.norm_diff(&b));
                    report.tested += 1;
                }
                _ => report.skipped += 1,
            }
        }
    }
    report
}

/// Residual of the generator/group consistency check
/// `(Psi_h(t,z) - Psi_{-h}(t,z)) / (2h) - g(t,z)` at step `h`.
pub fn generator_consistency_residual(
    action: &GroupAction,
    gen: &Generator,
    point: &Point,
    h: f64,
) -> Result<f64> {
    let plus = apply(action, h, point)?;
    let minus = apply(action, -h, point)?;
    let dt = (plus.t - minus.t) / (2.0 * h) - (gen.g_t)(point.t);
    let dx = (&plus.x - &minus.x) / (2.0 * h) - (gen.g_x)(point.t, &point.x);
    let dd = (&plus.d - &minus.d) / (2.0 * h) - (gen.g_d)(point.t, &point.x, &point.d);
    let dy = (&plus.y - &minus.y) / (2.0 * h) - (gen.g_y)(point.t, &point.y);
    Ok((dt * dt + dx.norm_squared() + dd.norm_squared() + dy.norm_squared()).sqrt())
}
