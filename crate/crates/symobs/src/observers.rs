//! Observer assembly: gain synthesis, the group-parameter tuning procedure,
//! the right-hand sides of the five symmetry-based filters, the high-gain and
//! sliding-mode baselines, the inverse-transform output map and the
//! theoretical error bound.

use crate::contraction::{sat_scalar, ContractionCertificate};
use crate::fd::FdPolicy;
use crate::groups::{Generator, GroupAction, Point};
use crate::linalg;
use crate::norm_est::{dp_dt, p_of_t, PSchedule};
use crate::sysmap::{delta_sigma_inf, stack, AsymptoticPair, SystemMap};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MatrixOfTime = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Output-injection gain K(t) with the Lyapunov certificate P(t) and the
/// sup-norm bounds used by the tuning predicates and the error bound.
#[derive(Clone)]
pub struct GainSchedule {
    pub k: MatrixOfTime,
    pub p_mat: MatrixOfTime,
    pub p_lower: f64,
    pub p_upper: f64,
    pub sup_k: f64,
    pub sup_b: f64,
    pub sup_d: f64,
}

/// Safety margin added to the -2I right-hand side of the stationary Lyapunov
/// equation so the certificate inequality holds strictly at sampled times.
const LYAP_MARGIN: f64 = 0.2;

/// Constant-gain synthesis: pole placement on (C, A), P from the stationary
/// Lyapunov equation, sup-norm bounds by grid maximization over the horizon
/// (1e4 points, 5% pad; exact for time-invariant benchmarks).
pub fn build_gains(map: &SystemMap, poles: &[f64], horizon: f64) -> Result<GainSchedule> {
    let a0 = (map.a)(0.0);
    let c0 = (map.c)(0.0);
    let k = linalg::place_observer_gain(&a0, &c0, poles)?;
    let m = &a0 - &k * &c0;
    let q = DMatrix::identity(map.dims.n, map.dims.n) * (2.0 + LYAP_MARGIN);
    let p = linalg::solve_lyapunov(&m, &q)?;
    let (p_lower, p_upper) = linalg::sym_eig_bounds(&p);
    if p_lower <= 0.0 {
        return Err(Error::UnstabilizablePair);
    }

    let sup_k = linalg::spectral_norm(&k);
    let grid = 10_000;
    let mut sup_b: f64 = 0.0;
    let mut sup_d: f64 = 0.0;
    for i in 0..=grid {
        let t = horizon * (i as f64) / (grid as f64);
        sup_b = sup_b.max(linalg::spectral_norm(&(map.b)(t)));
        sup_d = sup_d.max(linalg::spectral_norm(&(map.d)(t)));
    }
    let kc = k.clone();
    let pc = p.clone();
    Ok(GainSchedule {
        k: Arc::new(move |_t| kc.clone()),
        p_mat: Arc::new(move |_t| pc.clone()),
        p_lower,
        p_upper,
        sup_k,
        sup_b: sup_b * 1.05,
        sup_d: sup_d * 1.05,
    })
}

#[derive(Debug, Clone)]
pub struct PredicateCheck {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl PredicateCheck {
    pub fn slack(&self) -> f64 {
        self.bound - self.value
    }
}

/// Record of a tuning run: the selected omega, the resulting group parameter
/// `p_star = sigma(omega)`, and the evaluated predicate values.
#[derive(Clone)]
pub struct TuningRecord {
    pub epsilon: f64,
    pub n_bound: f64,
    pub omega: f64,
    pub p_star: f64,
    pub pi1_0: f64,
    pub pi2_at_p: f64,
    pub predicate_log: Vec<PredicateCheck>,
}

const OMEGA_CAP: f64 = 1e6;

fn tuning_predicates(
    cert: &ContractionCertificate,
    gains: &GainSchedule,
    map: &SystemMap,
    pi1: &ScalarFn,
    epsilon: f64,
    p: f64,
) -> Vec<PredicateCheck> {
    let n = map.dims.n as f64;
    let m = map.dims.m as f64;
    let mu_p = (cert.mu)(p);
    let phi = (1.0 + gains.sup_k) * (map.xi)((n + m) * mu_p);
    let pb = gains.p_upper;
    let pl = gains.p_lower;
    let pi1_0 = pi1(0.0);
    let bd = gains.sup_b + gains.sup_d;
    let c_scale = 4.0 * pb * (2.0 * pb / pl).sqrt();
    vec![
        PredicateCheck { name: "damping", value: 8.0 * pb * pb * phi / pl, bound: 1.0 },
        PredicateCheck { name: "inverse-map", value: pi1(n * mu_p), bound: 2.0 * pi1_0 },
        PredicateCheck {
            name: "gain-mismatch",
            value: (1.0 + gains.sup_k) * ((bd + phi).powi(2) - bd * bd),
            bound: epsilon * epsilon / (4.0 * pi1_0 * pi1_0) / (c_scale * c_scale),
        },
    ]
}

/// Select the smallest omega > max{sigma^{-1}(p0), N} whose parameter
/// `p = sigma(omega)` satisfies the three tuning predicates; doubling until
/// feasible, then 40 bisection steps.
pub fn tune_p(
    cert: &ContractionCertificate,
    gains: &GainSchedule,
    map: &SystemMap,
    pi1: &ScalarFn,
    pi2: &ScalarFn,
    epsilon: f64,
    n_bound: f64,
    p0: f64,
) -> Result<TuningRecord> {
    if epsilon <= 0.0 || n_bound <= 0.0 {
        return Err(Error::InvalidConfig { detail: "epsilon and N must be positive".into() });
    }
    let omega_min = cert.sigma_inverse(p0).max(n_bound);
    let feasible = |omega: f64| -> bool {
        let p = (cert.sigma)(omega);
        tuning_predicates(cert, gains, map, pi1, epsilon, p)
            .iter()
            .all(|c| c.value <= c.bound)
    };
    let mut hi = (omega_min * 2.0).max(1e-3);
    while !feasible(hi) {
        hi *= 2.0;
        if hi > OMEGA_CAP {
            return Err(Error::TuningDiverged { omega_cap: OMEGA_CAP });
        }
    }
    let mut lo = omega_min;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) && mid > omega_min {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let omega = hi;
    let p_star = (cert.sigma)(omega);
    Ok(TuningRecord {
        epsilon,
        n_bound,
        omega,
        p_star,
        pi1_0: pi1(0.0),
        pi2_at_p: pi2(p_star),
        predicate_log: tuning_predicates(cert, gains, map, pi1, epsilon, p_star),
    })
}

/// Asymptotic error bound of the tuned filter:
/// `{eps + 8 p_up sqrt(2 p_up / p_lo) (1 + sup|K|)(sup|B| + sup|D|) pi1(0)} pi3(sup|d|)`.
pub fn error_bound(
    gains: &GainSchedule,
    pi1_0: f64,
    pi3: &ScalarFn,
    sup_d_signal: f64,
    epsilon: f64,
) -> f64 {
    let pb = gains.p_upper;
    let pl = gains.p_lower;
    let core = 8.0 * pb * (2.0 * pb / pl).sqrt()
        * (1.0 + gains.sup_k)
        * (gains.sup_b + gains.sup_d)
        * pi1_0;
    (epsilon + core) * pi3(sup_d_signal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Semiglobal,
    PartialSi,
    Global,
    FiniteTime,
    Avs,
    Hgo,
    Slo,
}

/// Baseline observer data for the two-state triangular family: the gain
/// parameter, the saturation level of the model nonlinearity, and the
/// injection gains.
#[derive(Clone)]
pub struct BaselineParams {
    pub gamma: f64,
    pub sat_level: f64,
    pub k1: f64,
    pub k2: f64,
    /// model nonlinearity of the second state row, already saturated
    pub nonlin: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// deadzone width on the output error for the sliding-mode injection
    pub deadzone: f64,
}

pub type F1Map = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// An assembled observer. The filter state lives in `chi`; right-hand-side
/// functions take the state explicitly so integrator stages can evaluate at
/// intermediate points.
#[derive(Clone)]
pub struct ObserverRig {
    pub variant: Variant,
    pub chi: DVector<f64>,
    pub p_value: f64,
    /// model the filter is built on (the plant map, or the asymptotic target)
    pub map: Arc<SystemMap>,
    /// the true plant map (differs from `map` for the AVS variant)
    pub plant_map: Arc<SystemMap>,
    pub action: Option<Arc<GroupAction>>,
    pub cert: Option<Arc<ContractionCertificate>>,
    pub gains: Option<GainSchedule>,
    pub generator: Option<Arc<Generator>>,
    pub pair: Option<Arc<AsymptoticPair>>,
    pub schedule: Option<PSchedule>,
    /// measured block size for the partial variant
    pub measured: usize,
    pub f1: Option<F1Map>,
    pub baseline: Option<BaselineParams>,
    pub tuning: Option<TuningRecord>,
    pub fd: FdPolicy,
}

impl ObserverRig {
    pub fn semiglobal(
        map: Arc<SystemMap>,
        action: Arc<GroupAction>,
        cert: Arc<ContractionCertificate>,
        gains: GainSchedule,
        p: f64,
    ) -> Self {
        let n = map.dims.n;
        ObserverRig {
            variant: Variant::Semiglobal,
            chi: DVector::zeros(n),
            p_value: p,
            plant_map: map.clone(),
            map,
            action: Some(action),
            cert: Some(cert),
            gains: Some(gains),
            generator: None,
            pair: None,
            schedule: None,
            measured: 0,
            f1: None,
            baseline: None,
            tuning: None,
            fd: FdPolicy::default(),
        }
    }

    pub fn partial(
        map: Arc<SystemMap>,
        action: Arc<GroupAction>,
        cert: Arc<ContractionCertificate>,
        gains: GainSchedule,
        p: f64,
        measured: usize,
        f1: F1Map,
    ) -> Self {
        let mut rig = Self::semiglobal(map, action, cert, gains, p);
        rig.variant = Variant::PartialSi;
        rig.measured = measured;
        rig.f1 = Some(f1);
        rig
    }

    pub fn global(
        map: Arc<SystemMap>,
        action: Arc<GroupAction>,
        cert: Arc<ContractionCertificate>,
        gains: GainSchedule,
        generator: Arc<Generator>,
        schedule: PSchedule,
    ) -> Self {
        let mut rig = Self::semiglobal(map, action, cert, gains, 0.0);
        rig.variant = Variant::Global;
        rig.generator = Some(generator);
        rig.p_value = p_of_t(rig.schedule.insert(schedule), rig.schedule.as_ref().unwrap().vhat0);
        rig
    }

    pub fn finite_time(
        map: Arc<SystemMap>,
        action: Arc<GroupAction>,
        gains: GainSchedule,
        p: f64,
    ) -> Self {
        let n = map.dims.n;
        ObserverRig {
            variant: Variant::FiniteTime,
            chi: DVector::zeros(n),
            p_value: p,
            plant_map: map.clone(),
            map,
            action: Some(action),
            cert: None,
            gains: Some(gains),
            generator: None,
            pair: None,
            schedule: None,
            measured: 0,
            f1: None,
            baseline: None,
            tuning: None,
            fd: FdPolicy::default(),
        }
    }

    pub fn avs(
        plant_map: Arc<SystemMap>,
        pair: Arc<AsymptoticPair>,
        action: Arc<GroupAction>,
        cert: Arc<ContractionCertificate>,
        gains: GainSchedule,
        p: f64,
    ) -> Self {
        let n = plant_map.dims.n;
        ObserverRig {
            variant: Variant::Avs,
            chi: DVector::zeros(n),
            p_value: p,
            map: pair.sigma_inf.clone(),
            plant_map,
            action: Some(action),
            cert: Some(cert),
            gains: Some(gains),
            generator: None,
            pair: Some(pair),
            schedule: None,
            measured: 0,
            f1: None,
            baseline: None,
            tuning: None,
            fd: FdPolicy::default(),
        }
    }

    pub fn baseline(variant: Variant, plant_map: Arc<SystemMap>, params: BaselineParams) -> Self {
        let n = plant_map.dims.n;
        ObserverRig {
            variant,
            chi: DVector::zeros(n),
            p_value: 0.0,
            map: plant_map.clone(),
            plant_map,
            action: None,
            cert: None,
            gains: None,
            generator: None,
            pair: None,
            schedule: None,
            measured: 0,
            f1: None,
            baseline: Some(params),
            tuning: None,
            fd: FdPolicy::default(),
        }
    }

    /// Saturated filter state: certified components pass through
    /// `Gamma_{-p} sat_{mu(p)} (Gamma_p chi)`, the rest untouched.
    pub fn chi_sat(&self, p: f64, chi: &DVector<f64>) -> DVector<f64> {
        match &self.cert {
            Some(cert) => chi_saturated(cert, p, chi),
            None => chi.clone(),
        }
    }
}

pub fn chi_saturated(cert: &ContractionCertificate, p: f64, chi: &DVector<f64>) -> DVector<f64> {
    let mu = (cert.mu)(p);
    let gx = (cert.group.gamma_x)(p);
    let gx_inv = (cert.group.gamma_x)(-p);
    let mut out = chi.clone();
    for (slot, &i) in cert.group.index_x.iter().enumerate() {
        out[i] = gx_inv[slot] * sat_scalar(mu, gx[slot] * chi[i]);
    }
    out
}

const TIME_JAC_TOL: f64 = 1e-12;

fn time_jac(rig: &ObserverRig, p: f64, t: f64) -> Result<(f64, f64)> {
    let action = rig.action.as_ref().expect("variant requires an action");
    let ts = (action.psi_t)(p, t);
    let jt = action.dpsi_t_dt(p, t, &rig.fd);
    if jt.abs() < TIME_JAC_TOL {
        return Err(Error::SingularTimeJacobian { p, t, jac: jt });
    }
    Ok((ts, jt))
}

/// Semiglobal filter: transformed-time linear part, saturated remainder and
/// output injection against the transformed measurement.
///
/// Returns (D_t chi, zeta) with zeta the filter's output estimate.
pub fn semiglobal_rhs(
    rig: &ObserverRig,
    t: f64,
    y: &DVector<f64>,
    chi: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let action = rig.action.as_ref().unwrap();
    let gains = rig.gains.as_ref().unwrap();
    let p = rig.p_value;
    let (ts, jt) = time_jac(rig, p, t)?;
    let n = rig.map.dims.n;

    let chi_sat = rig.chi_sat(p, chi);
    let dl = (rig.map.delta_l)(ts, &chi_sat, &DVector::zeros(rig.map.dims.m));
    let zeta = (rig.map.c)(ts) * chi + dl.rows(n, rig.map.dims.p);
    let y_p = (action.psi_y)(p, t, y);
    let dchi =
        ((rig.map.a)(ts) * chi + dl.rows(0, n) + (gains.k)(ts) * (y_p - &zeta)) * jt;
    Ok((dchi, zeta))
}

/// Partial-contraction filter: the measured block enters through the
/// transformed output, only the unmeasured block is saturated.
pub fn partial_rhs(
    rig: &ObserverRig,
    t: f64,
    y: &DVector<f64>,
    chi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let action = rig.action.as_ref().unwrap();
    let gains = rig.gains.as_ref().unwrap();
    let p = rig.p_value;
    let (ts, jt) = time_jac(rig, p, t)?;
    let n = rig.map.dims.n;
    let meas = rig.measured;

    let y_p = (action.psi_y)(p, t, y);
    let chi_sat = rig.chi_sat(p, chi);
    let mut xsub = chi_sat.clone();
    for i in 0..meas {
        xsub[i] = y_p[i];
    }
    let dl = (rig.map.delta_l)(ts, &xsub, &DVector::zeros(rig.map.dims.m));
    let f1 = rig.f1.as_ref().map(|f| f(ts, &y_p)).unwrap_or_else(|| DVector::zeros(n));
    let chi1 = DVector::from_iterator(meas, chi.iter().take(meas).copied());
    let dchi = ((rig.map.a)(ts) * chi + f1 + dl.rows(0, n) + (gains.k)(ts) * (y_p - chi1)) * jt;
    Ok(dchi)
}

/// Global filter: the semiglobal right-hand side plus the two generator
/// correction terms driven by D_t p.
///
/// Returns (D_t chi, zeta, p, D_t p).
pub fn global_rhs(
    rig: &ObserverRig,
    t: f64,
    y: &DVector<f64>,
    chi: &DVector<f64>,
    vhat: f64,
    dvhat: f64,
) -> Result<(DVector<f64>, DVector<f64>, f64, f64)> {
    let action = rig.action.as_ref().unwrap();
    let gains = rig.gains.as_ref().unwrap();
    let gen = rig.generator.as_ref().expect("global variant requires a generator");
    let sched = rig.schedule.as_ref().expect("global variant requires a schedule");

    let p = p_of_t(sched, vhat);
    let dp = dp_dt(sched, vhat, dvhat, &rig.fd);
    let ts = (action.psi_t)(p, t);
    let jt = action.dpsi_t_dt(p, t, &rig.fd);
    if jt.abs() < TIME_JAC_TOL {
        return Err(Error::SingularTimeJacobian { p, t, jac: jt });
    }
    let n = rig.map.dims.n;

    let chi_sat = match &rig.cert {
        Some(cert) => chi_saturated(cert, p, chi),
        None => chi.clone(),
    };
    let dl = (rig.map.delta_l)(ts, &chi_sat, &DVector::zeros(rig.map.dims.m));
    let zeta = (rig.map.c)(ts) * chi + dl.rows(n, rig.map.dims.p);
    let y_p = (action.psi_y)(p, t, y);

    let g0 = gen.dgx_dx(ts, &DVector::zeros(n), &rig.fd);
    let lin_corr = &g0 * chi * (dp / jt);
    let nonlin_corr = ((gen.g_x)(ts, &chi_sat) - &g0 * &chi_sat) * (dp / jt);

    let dchi = ((rig.map.a)(ts) * chi
        + lin_corr
        + dl.rows(0, n)
        + nonlin_corr
        + (gains.k)(ts) * (y_p - &zeta))
        * jt;
    Ok((dchi, zeta, p, dp))
}

/// Guard distance from the blow-up horizon.
pub const BLOWUP_GUARD: f64 = 1e-6;

/// Finite-time filter for linear time-varying plants on a contractively
/// bounded time scale.
pub fn finite_time_rhs(
    rig: &ObserverRig,
    t: f64,
    y: &DVector<f64>,
    chi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let action = rig.action.as_ref().unwrap();
    let gains = rig.gains.as_ref().unwrap();
    let p = rig.p_value;
    let dom = (action.dom_plus_t)(p);
    if dom.is_finite() && t >= dom - BLOWUP_GUARD {
        return Err(Error::PastBlowup { t, dom_plus: dom });
    }
    let (ts, jt) = time_jac(rig, p, t)?;
    let y_p = (action.psi_y)(p, t, y);
    let k = (gains.k)(ts);
    let m = (rig.map.a)(ts) - &k * (rig.map.c)(ts);
    Ok((m * chi + k * y_p) * jt)
}

/// Asymptotic-variational filter: the semiglobal structure built on the
/// target map, plus the orbit-form residual term of the true plant.
pub fn avs_rhs(
    rig: &ObserverRig,
    t: f64,
    y: &DVector<f64>,
    chi: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let action = rig.action.as_ref().unwrap();
    let gains = rig.gains.as_ref().unwrap();
    let p = rig.p_value;
    let (ts, jt) = time_jac(rig, p, t)?;
    let n = rig.map.dims.n;
    let m_dim = rig.map.dims.m;

    let chi_sat = rig.chi_sat(p, chi);
    let zero_d = DVector::zeros(m_dim);
    let dl = (rig.map.delta_l)(ts, &chi_sat, &zero_d);
    let mismatch = delta_sigma_inf(&rig.plant_map, &rig.map, action, p, ts, &chi_sat, &zero_d, &rig.fd)?;
    let zeta = (rig.map.c)(ts) * chi + dl.rows(n, rig.map.dims.p) + mismatch.rows(n, rig.map.dims.p);
    let y_p = (action.psi_y)(p, t, y);
    let dchi = ((rig.map.a)(ts) * chi
        + mismatch.rows(0, n)
        + dl.rows(0, n)
        + (gains.k)(ts) * (y_p - &zeta))
        * jt;
    Ok((dchi, zeta))
}

/// Signed power `sgn(s) |s|^k`.
pub fn signed_pow(s: f64, k: f64) -> f64 {
    s.signum() * s.abs().powf(k)
}

/// Classical semiglobal high-gain observer for the two-state triangular form.
pub fn baseline_hgo_rhs(rig: &ObserverRig, _t: f64, y: &DVector<f64>, chi: &DVector<f64>) -> DVector<f64> {
    let bp = rig.baseline.as_ref().unwrap();
    let yerr = y[0] - chi[0];
    DVector::from_vec(vec![
        chi[1] + bp.gamma * bp.k1 * yerr,
        (bp.nonlin)(chi[0], chi[1]) + bp.gamma * bp.gamma * bp.k2 * yerr,
    ])
}

/// Sliding-mode observer with half-power and signed injections; a small
/// deadzone on the output error avoids fixed-step chattering artifacts.
pub fn baseline_slo_rhs(rig: &ObserverRig, _t: f64, y: &DVector<f64>, chi: &DVector<f64>) -> DVector<f64> {
    let bp = rig.baseline.as_ref().unwrap();
    let mut yerr = y[0] - chi[0];
    if yerr.abs() < bp.deadzone {
        yerr = 0.0;
    }
    DVector::from_vec(vec![
        chi[1] + bp.gamma * bp.k1 * signed_pow(yerr, 0.5),
        (bp.nonlin)(chi[0], chi[1]) + bp.gamma * bp.gamma * bp.k2 * yerr,
    ])
}

/// State estimate from the filter state: inverse transform of the saturated
/// state at the transformed time; the partial variant prepends the measured
/// output, the finite-time variant inverts without saturation, baselines are
/// already in plant coordinates.
pub fn output_map(rig: &ObserverRig, t: f64, y: &DVector<f64>, chi: &DVector<f64>) -> Result<DVector<f64>> {
    match rig.variant {
        Variant::Hgo | Variant::Slo => Ok(chi.clone()),
        Variant::FiniteTime => {
            let action = rig.action.as_ref().unwrap();
            let p = rig.p_value;
            let ts = (action.psi_t)(p, t);
            Ok((action.psi_x)(-p, ts, chi))
        }
        Variant::PartialSi => {
            let action = rig.action.as_ref().unwrap();
            let p = rig.p_value;
            let ts = (action.psi_t)(p, t);
            let y_p = (action.psi_y)(p, t, y);
            let chi_sat = rig.chi_sat(p, chi);
            let mut assembled = chi_sat;
            for i in 0..rig.measured {
                assembled[i] = y_p[i];
            }
            let inv = (action.psi_x)(-p, ts, &assembled);
            let mut out = inv;
            for i in 0..rig.measured {
                out[i] = y[i];
            }
            Ok(out)
        }
        _ => {
            let action = rig.action.as_ref().unwrap();
            let p = rig.p_value;
            let ts = (action.psi_t)(p, t);
            let chi_sat = rig.chi_sat(p, chi);
            let probe = Point::new(
                ts,
                chi_sat.clone(),
                DVector::zeros(rig.map.dims.m),
                DVector::zeros(rig.map.dims.p),
            );
            if !action.in_domain(-p, &probe) {
                return Err(Error::DomainViolation {
                    what: format!("saturated filter state outside Dom(Psi_{{-p}}) at t = {t}"),
                });
            }
            Ok((action.psi_x)(-p, ts, &chi_sat))
        }
    }
}
