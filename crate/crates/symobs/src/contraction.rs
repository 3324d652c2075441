//! Diagonal non-contracting groups, state-input contraction certificates and
//! the saturation primitive.

use crate::groups::{GroupAction, Point};
use crate::{Error, Result};
use nalgebra::DVector;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type DiagFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Componentwise clamp to [-c, c]; identity inside, bound c, 1-Lipschitz.
pub fn saturate(c: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if c <= 0.0 {
        return Err(Error::NonPositiveBound { c });
    }
    Ok(v.map(|s| s.clamp(-c, c)))
}

pub fn sat_scalar(c: f64, s: f64) -> f64 {
    s.clamp(-c, c)
}

/// One-parameter group of diagonal, parameter-monotone scalings acting on a
/// subset of the state components and a subset of the input components. The
/// index sets cover the full range for SI certificates.
#[derive(Clone)]
pub struct DiagonalGroup {
    pub gamma_x: DiagFn,
    pub gamma_d: DiagFn,
    pub index_x: Vec<usize>,
    pub index_d: Vec<usize>,
}

impl DiagonalGroup {
    /// Exponential-rate group `diag(e^{r_i p})`; rates must be >= 0 for the
    /// non-contracting property.
    pub fn from_rates(rates_x: Vec<f64>, rates_d: Vec<f64>, index_x: Vec<usize>, index_d: Vec<usize>) -> Self {
        let rx = rates_x.clone();
        let rd = rates_d.clone();
        DiagonalGroup {
            gamma_x: Arc::new(move |p| DVector::from_iterator(rx.len(), rx.iter().map(|r| (r * p).exp()))),
            gamma_d: Arc::new(move |p| DVector::from_iterator(rd.len(), rd.iter().map(|r| (r * p).exp()))),
            index_x,
            index_d,
        }
    }

    /// Identity group on the given index sets.
    pub fn identity(index_x: Vec<usize>, index_d: Vec<usize>) -> Self {
        let zx = vec![0.0; index_x.len()];
        let zd = vec![0.0; index_d.len()];
        Self::from_rates(zx, zd, index_x, index_d)
    }

    /// Norm of the scaled certified components of (x, d).
    pub fn scale_full(&self, p: f64, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let gx = (self.gamma_x)(p);
        let gd = (self.gamma_d)(p);
        let mut s = 0.0;
        for (slot, &i) in self.index_x.iter().enumerate() {
            let v = gx[slot] * x[i];
            s += v * v;
        }
        for (slot, &i) in self.index_d.iter().enumerate() {
            let v = gd[slot] * d[i];
            s += v * v;
        }
        s.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertKind {
    Si,
    Psi,
}

/// Contracting maps (sigma, mu, Gamma) certifying that the transformed
/// certified components fall below mu(p) once p >= sigma(|(x, d)|).
#[derive(Clone)]
pub struct ContractionCertificate {
    pub sigma: ScalarFn,
    /// Analytic inverse of sigma when available; bisection otherwise.
    pub sigma_inv: Option<ScalarFn>,
    pub mu: ScalarFn,
    pub group: DiagonalGroup,
    pub kind: CertKind,
}

impl ContractionCertificate {
    pub fn sigma_inverse(&self, p: f64) -> f64 {
        if let Some(inv) = &self.sigma_inv {
            return inv(p);
        }
        // sigma is class K-infinity: bisect on [0, hi]
        if p <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while (self.sigma)(hi) < p {
            hi *= 2.0;
            if hi > 1e15 {
                return hi;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (self.sigma)(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContractionSample {
    pub lhs: f64,
    pub rhs: f64,
    pub applicable: bool,
    pub satisfied: bool,
}

/// Evaluate the contraction inequality at one point. Points with
/// p < sigma(|(x, d)|) or outside the domain are flagged inapplicable.
pub fn contraction_residual(
    cert: &ContractionCertificate,
    action: &GroupAction,
    p: f64,
    t: f64,
    x: &DVector<f64>,
    d: &DVector<f64>,
) -> ContractionSample {
    let s = crate::sysmap::stack(x, d).norm();
    let y_probe = DVector::zeros(action.dims.p);
    let pt = Point::new(t, x.clone(), d.clone(), y_probe);
    let applicable = p >= (cert.sigma)(s) && action.in_domain(p, &pt);
    if !applicable {
        return ContractionSample { lhs: f64::NAN, rhs: (cert.mu)(p), applicable, satisfied: false };
    }
    let x_p = (action.psi_x)(p, t, x);
    let d_p = (action.psi_d)(p, t, x, d);
    let lhs = cert.group.scale_full(p, &x_p, &d_p);
    let rhs = (cert.mu)(p);
    ContractionSample { lhs, rhs, applicable, satisfied: lhs <= rhs }
}

#[derive(Debug, Clone)]
pub struct CertReport {
    pub applicable: usize,
    pub satisfied: usize,
    pub failures: Vec<(f64, f64, DVector<f64>, DVector<f64>)>,
}

impl CertReport {
    pub fn pass(&self) -> bool {
        self.applicable > 0 && self.satisfied == self.applicable
    }
}

/// Sweep the certificate over a sample box and a parameter grid; for each
/// sampled (t, x, d) the boundary value p = sigma(|(x, d)|) is tested too.
pub fn verify_certificate(
    cert: &ContractionCertificate,
    action: &GroupAction,
    sample_box: &crate::bench::SampleBox,
    p_grid: &[f64],
    n_samples: usize,
    rng: &mut impl rand::Rng,
) -> CertReport {
    let mut report = CertReport { applicable: 0, satisfied: 0, failures: Vec::new() };
    for _ in 0..n_samples {
        let pt = sample_box.sample(rng);
        let s = crate::sysmap::stack(&pt.x, &pt.d).norm();
        let boundary = (cert.sigma)(s);
        for &p in p_grid.iter().chain(std::iter::once(&boundary)) {
            let sample = contraction_residual(cert, action, p, pt.t, &pt.x, &pt.d);
            if sample.applicable {
                report.applicable += 1;
                if sample.satisfied {
                    report.satisfied += 1;
                } else if report.failures.len() < 16 {
                    report.failures.push((p, pt.t, pt.x.clone(), pt.d.clone()));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;

    #[test]
    fn saturation_defining_properties() {
        assert_eq!(sat_scalar(1.0, 0.5), 0.5);
        assert_eq!(sat_scalar(1.0, 3.0), 1.0);
        let v = saturate(2.0, &DVector::from_vec(vec![-5.0, 0.3])).unwrap();
        assert_eq!(v, DVector::from_vec(vec![-2.0, 0.3]));
        assert!(matches!(saturate(0.0, &v), Err(Error::NonPositiveBound { .. })));
    }

    #[test]
    fn origin_is_always_applicable() {
        let b = bench::bench_ex3(2).unwrap();
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let sample = contraction_residual(
            cert,
            &att.action,
            0.0,
            0.0,
            &DVector::zeros(2),
            &DVector::zeros(1),
        );
        assert!(sample.applicable);
        assert!(sample.lhs <= (cert.mu)(0.0));
    }

    #[test]
    fn triangular_certificate_holds_at_boundary() {
        let b = bench::bench_ex3(2).unwrap();
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let mut rng = bench::test_rng(31);
        for _ in 0..100 {
            let pt = b.sample_box.sample(&mut rng);
            let p = (cert.sigma)(crate::sysmap::stack(&pt.x, &pt.d).norm());
            let sample = contraction_residual(cert, &att.action, p, pt.t, &pt.x, &pt.d);
            assert!(sample.applicable && sample.satisfied, "lhs {} rhs {}", sample.lhs, sample.rhs);
        }
    }

    #[test]
    fn partial_certificate_excludes_uncontracted_component() {
        let b = bench::bench_ex1();
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        assert_eq!(cert.kind, CertKind::Psi);
        assert_eq!(cert.group.index_x, vec![1]);
        let mut rng = bench::test_rng(37);
        for _ in 0..100 {
            let pt = b.sample_box.sample(&mut rng);
            let p = (cert.sigma)(crate::sysmap::stack(&pt.x, &pt.d).norm());
            let sample = contraction_residual(cert, &att.action, p, pt.t, &pt.x, &pt.d);
            assert!(sample.applicable && sample.satisfied, "lhs {} rhs {}", sample.lhs, sample.rhs);
        }
    }

    #[test]
    fn certificate_sweeps_pass_and_mutation_fails() {
        let b = bench::bench_ex3(2).unwrap();
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let mut rng = bench::test_rng(41);
        let grid = [0.5, 1.0, 2.0, 4.0];
        let report = verify_certificate(cert, &att.action, &b.sample_box, &grid, 100, &mut rng);
        assert!(report.pass(), "{} of {}", report.satisfied, report.applicable);

        // the local symmetry certificate of the first example also passes
        let b1 = bench::bench_ex1();
        let att_local = &b1.actions[1];
        let cert_local = att_local.cert.as_ref().unwrap();
        let report1 =
            verify_certificate(cert_local, &att_local.action, &b1.sample_box, &grid, 100, &mut rng);
        assert!(report1.pass(), "{} of {}", report1.satisfied, report1.applicable);

        // shrinking mu by 10x must produce witnessed failures
        let mut bad = cert.as_ref().clone();
        let mu = bad.mu.clone();
        bad.mu = Arc::new(move |s| mu(s) / 10.0);
        let report2 = verify_certificate(&bad, &att.action, &b.sample_box, &grid, 100, &mut rng);
        assert!(!report2.pass());
        assert!(!report2.failures.is_empty());
    }

    #[test]
    fn diagonal_group_never_contracts() {
        let b = bench::bench_e8(2, 6.0).unwrap();
        let group = &b.actions[0].cert.as_ref().unwrap().group;
        let mut rng = bench::test_rng(43);
        for _ in 0..100 {
            let pt = b.sample_box.sample(&mut rng);
            let base = crate::sysmap::stack(&pt.x, &pt.d).norm();
            for &p in &[0.0, 0.5, 1.0, 3.0] {
                assert!(group.scale_full(p, &pt.x, &pt.d) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_group_properties_on_grid() {
        let g = DiagonalGroup::from_rates(vec![0.0, 6.0], vec![4.0], vec![0, 1], vec![0]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let d = DVector::from_vec(vec![1.0]);
        // identity at zero
        assert!((g.scale_full(0.0, &x, &d) - 3f64.sqrt()).abs() < 1e-12);
        // group property via entrywise product
        for &(p1, p2) in &[(0.3, 0.4), (1.0, -0.5), (2.0, 2.0)] {
            let a = (g.gamma_x)(p1).component_mul(&(g.gamma_x)(p2));
            let b = (g.gamma_x)(p1 + p2);
            assert!((a - b).norm() < 1e-10);
        }
        // monotone entries in p
        let mut prev = (g.gamma_x)(0.0);
        for k in 1..=10 {
            let cur = (g.gamma_x)(k as f64 * 0.5);
            assert!(cur.iter().zip(prev.iter()).all(|(c, q)| c >= q));
            prev = cur;
        }
    }

    #[test]
    fn si_lhs_decays_for_global_domain_actions() {
        let b = bench::bench_ex3(2).unwrap();
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let x = DVector::from_vec(vec![2.0, -1.0]);
        let d = DVector::from_vec(vec![1.5]);
        let start = (cert.sigma)(crate::sysmap::stack(&x, &d).norm());
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let p = start + k as f64;
            let sample = contraction_residual(cert, &att.action, p, 0.3, &x, &d);
            assert!(sample.applicable);
            assert!(sample.lhs <= prev + 1e-12);
            prev = sample.lhs;
        }
        assert!(prev < 1e-2);
    }
}
