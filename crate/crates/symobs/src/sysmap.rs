//! System maps `Sigma = (x' - F, y - H)`, their linearization data, and the
//! numerical residuals for exact, asymptotic and variational symmetry
//! conditions.

use crate::contraction::ContractionCertificate;
use crate::fd::FdPolicy;
use crate::groups::{apply, prolong_generator, prolong_point, Dims, Generator, GroupAction, Point};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

pub type FieldMap =
    Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixOfTime = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The pair (F, H) with its linearization at (x, d) = 0 and the remainder
/// `DeltaSigma_L = (F; H) - [A B; C D] (x; d)`.
#[derive(Clone)]
pub struct SystemMap {
    pub dims: Dims,
    pub f: FieldMap,
    pub h: FieldMap,
    pub a: MatrixOfTime,
    pub b: MatrixOfTime,
    pub c: MatrixOfTime,
    pub d: MatrixOfTime,
    /// Remainder rows (n state rows, then p output rows).
    pub delta_l: FieldMap,
    /// Class-K envelope of the remainder Jacobian norm.
    pub xi: ScalarFn,
}

impl SystemMap {
    /// Stacked value (F; H) at a point.
    pub fn fh(&self, t: f64, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let fv = (self.f)(t, x, d);
        let hv = (self.h)(t, x, d);
        stack(&fv, &hv)
    }
}

pub fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Class K+L envelope evaluators for the asymptotic relaxations.
pub type KpL = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// An asymptotic target system together with its residual envelopes:
/// `nu` bounds the transformed residual of `sigma_inf` on the solution
/// manifold, `lambda` bounds its state/input Jacobian.
#[derive(Clone)]
pub struct AsymptoticPair {
    pub sigma_inf: Arc<SystemMap>,
    pub nu: KpL,
    pub lambda: KpL,
}

/// Value of the system map: `(x1 - F(t,x,d); y - H(t,x,d))`. Zero exactly on
/// the solution manifold.
pub fn evaluate_sigma(
    map: &SystemMap,
    t: f64,
    x: &DVector<f64>,
    x1: &DVector<f64>,
    d: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let fv = (map.f)(t, x, d);
    let hv = (map.h)(t, x, d);
    stack(&(x1 - fv), &(y - hv))
}

/// Lie-derivative residual of the symmetry condition along the prolonged
/// generator, evaluated on the manifold point (x1 := F, y := H).
///
/// The residual stacks
/// `g^{x^(1)} - F_t g^t - F_x g^x - F_d g^d` and
/// `g^y - H_t g^t - H_x g^x - H_d g^d`.
pub fn lie_symmetry_residual(
    map: &SystemMap,
    gen: &Generator,
    t: f64,
    x: &DVector<f64>,
    d: &DVector<f64>,
    fd: &FdPolicy,
) -> f64 {
    let x1 = (map.f)(t, x, d);
    let y = (map.h)(t, x, d);

    let f = map.f.clone();
    let h = map.h.clone();
    let ft = fd.d_vector(|s| f(s, x, d), t);
    let ht = fd.d_vector(|s| h(s, x, d), t);
    let fx = fd.jacobian(|v| f(t, v, d), x);
    let hx = fd.jacobian(|v| h(t, v, d), x);
    let fu = fd.jacobian(|v| f(t, x, v), d);
    let hu = fd.jacobian(|v| h(t, x, v), d);

    let gt = (gen.g_t)(t);
    let gx = (gen.g_x)(t, x);
    let gd = (gen.g_d)(t, x, d);
    let gy = (gen.g_y)(t, &y);
    let gx1 = prolong_generator(gen, t, x, &x1, fd);

    let state_rows = gx1 - ft * gt - &fx * &gx - &fu * &gd;
    let out_rows = gy - ht * gt - &hx * &gx - &hu * &gd;
    stack(&state_rows, &out_rows).norm()
}

/// Pushforward residual: transform the manifold point (t, x, F, d, H) by the
/// group element and evaluate the system map at the image. Zero for an exact
/// symmetry.
pub fn pushforward_residual(
    map: &SystemMap,
    action: &GroupAction,
    p: f64,
    t: f64,
    x: &DVector<f64>,
    d: &DVector<f64>,
    fd: &FdPolicy,
) -> Result<f64> {
    let x1 = (map.f)(t, x, d);
    let y = (map.h)(t, x, d);
    let pt = Point::new(t, x.clone(), d.clone(), y);
    let image = apply(action, p, &pt)?;
    let (_, x1_p) = prolong_point(action, p, t, x, &x1, fd)?;
    Ok(evaluate_sigma(map, image.t, &image.x, &x1_p, &image.d, &image.y).norm())
}

/// Orbit-form residual of the asymptotic target at a transformed point
/// `(t_bar, x_bar, u_bar)`: pull the point back, place it on the Sigma = 0
/// manifold, transform the prolonged point forward, and evaluate the target
/// map there.
pub fn delta_sigma_inf(
    plant: &SystemMap,
    target: &SystemMap,
    action: &GroupAction,
    p: f64,
    t_bar: f64,
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    fd: &FdPolicy,
) -> Result<DVector<f64>> {
    let t = (action.psi_t)(-p, t_bar);
    let x = (action.psi_x)(-p, t_bar, x_bar);
    let d = (action.psi_d)(-p, t_bar, x_bar, u_bar);

    let x1 = (plant.f)(t, &x, &d);
    let y = (plant.h)(t, &x, &d);
    let (_, x1_p) = prolong_point(action, p, t, &x, &x1, fd)?;
    let y_p = (action.psi_y)(p, t, &y);

    let f_inf = (target.f)(t_bar, x_bar, u_bar);
    let h_inf = (target.h)(t_bar, x_bar, u_bar);
    Ok(stack(&(x1_p - f_inf), &(y_p - h_inf)))
}

/// Left- and right-hand side of the asymptotic symmetry inequality at a
/// sample (t, x, d): `|DeltaSigma_inf| <= nu(|Gamma (x_p, d_p)|, p) |(x_p, d_p)|`.
pub fn asymptotic_residual(
    map: &SystemMap,
    pair: &AsymptoticPair,
    action: &GroupAction,
    cert: &ContractionCertificate,
    p: f64,
    t: f64,
    x: &DVector<f64>,
    d: &DVector<f64>,
    fd: &FdPolicy,
) -> Result<(f64, f64)> {
    let y = (map.h)(t, x, d);
    let pt = Point::new(t, x.clone(), d.clone(), y);
    let image = apply(action, p, &pt)?;

    let lhs =
        delta_sigma_inf(map, &pair.sigma_inf, action, p, image.t, &image.x, &image.d, fd)?.norm();

    let scaled = cert.group.scale_full(p, &image.x, &image.d);
    let xp_dp = stack(&image.x, &image.d).norm();
    let rhs = (pair.nu)(scaled, p) * xp_dp;
    Ok((lhs, rhs))
}

/// Left- and right-hand side of the variational inequality: the Jacobian of
/// the orbit-form residual with respect to the transformed state/input,
/// evaluated at the transformed sample, against the lambda envelope.
pub fn variational_residual(
    map: &SystemMap,
    pair: &AsymptoticPair,
    action: &GroupAction,
    cert: &ContractionCertificate,
    p: f64,
    t: f64,
    x: &DVector<f64>,
    d: &DVector<f64>,
    fd: &FdPolicy,
) -> Result<(f64, f64)> {
    let y = (map.h)(t, x, d);
    let pt = Point::new(t, x.clone(), d.clone(), y);
    let image = apply(action, p, &pt)?;

    let n = map.dims.n;
    let m = map.dims.m;
    let packed = stack(&image.x, &image.d);
    let plant = map.clone();
    let target = pair.sigma_inf.clone();
    let act = action.clone();
    let fd2 = *fd;
    let t_bar = image.t;
    let eval = move |v: &DVector<f64>| -> DVector<f64> {
        let xb = DVector::from_iterator(n, v.iter().take(n).copied());
        let ub = DVector::from_iterator(m, v.iter().skip(n).take(m).copied());
        delta_sigma_inf(&plant, &target, &act, p, t_bar, &xb, &ub, &fd2)
            .unwrap_or_else(|_| DVector::from_element(n + plant.dims.p, f64::NAN))
    };
    let jac = fd.jacobian(eval, &packed);
    let lhs = crate::linalg::spectral_norm(&jac);

    let scaled = cert.group.scale_full(p, &image.x, &image.d);
    let rhs = (pair.lambda)(scaled, p);
    Ok((lhs, rhs))
}

/// Residual of the stacking identity
/// `(F; H)(t, x, d) = [A B; C D](t) (x; d) + DeltaSigma_L(t, x, d)`.
pub fn stacking_residual(map: &SystemMap, t: f64, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let lin_state = (map.a)(t) * x + (map.b)(t) * d;
    let lin_out = (map.c)(t) * x + (map.d)(t) * d;
    let lin = stack(&lin_state, &lin_out);
    (map.fh(t, x, d) - lin - (map.delta_l)(t, x, d)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;

    fn fd() -> FdPolicy {
        FdPolicy::default()
    }

    #[test]
    fn sigma_vanishes_on_manifold() {
        // triangular map, k = 2: F(0, (1,2), 3) = (2, 2*1 + 2*3) = (2, 8)
        let b = bench::bench_ex3(2).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let d = DVector::from_vec(vec![3.0]);
        let y = DVector::from_vec(vec![1.0]);
        let r = evaluate_sigma(&b.map, 0.0, &x, &DVector::from_vec(vec![2.0, 8.0]), &d, &y);
        assert!(r.norm() < 1e-14);
        let r2 = evaluate_sigma(&b.map, 0.0, &x, &DVector::from_vec(vec![2.0, 0.0]), &d, &y);
        assert!((r2 - DVector::from_vec(vec![0.0, -8.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn zero_generator_has_zero_lie_residual() {
        let b = bench::bench_ex3(2).unwrap();
        let dims = b.map.dims;
        let zero = Generator::new(
            dims,
            Arc::new(|_| 0.0),
            Arc::new(move |_, x: &DVector<f64>| DVector::zeros(x.len())),
            Arc::new(|_, _x: &DVector<f64>, d: &DVector<f64>| DVector::zeros(d.len())),
            Arc::new(|_, y: &DVector<f64>| DVector::zeros(y.len())),
        );
        let r = lie_symmetry_residual(
            &b.map,
            &zero,
            0.2,
            &DVector::from_vec(vec![0.4, -0.7]),
            &DVector::from_vec(vec![0.9]),
            &fd(),
        );
        assert!(r < 1e-12);
    }

    #[test]
    fn triangular_generator_is_a_symmetry() {
        let b = bench::bench_ex3(2).unwrap();
        let mut rng = bench::test_rng(11);
        for _ in 0..20 {
            let pt = b.sample_box.sample(&mut rng);
            let r = lie_symmetry_residual(&b.map, &b.actions[0].generator, pt.t, &pt.x, &pt.d, &fd());
            assert!(r < 1e-6, "residual {r}");
        }
    }

    #[test]
    fn scaled_generator_is_flagged() {
        let b = bench::bench_ex3(2).unwrap();
        let base = b.actions[0].generator.as_ref().clone();
        let inner = base.g_x.clone();
        let mutated = Generator {
            g_x: Arc::new(move |t, x| {
                let mut g = inner(t, x);
                g[1] *= 1.1;
                g
            }),
            ..base
        };
        let r = lie_symmetry_residual(
            &b.map,
            &mutated,
            0.5,
            &DVector::from_vec(vec![1.2, -0.8]),
            &DVector::from_vec(vec![0.7]),
            &fd(),
        );
        assert!(r > 1e-3, "mutated residual {r}");
    }

    #[test]
    fn pushforward_residual_zero_at_identity() {
        let b = bench::bench_ex3(2).unwrap();
        let r = pushforward_residual(
            &b.map,
            &b.actions[0].action,
            0.0,
            0.3,
            &DVector::from_vec(vec![0.5, 1.5]),
            &DVector::from_vec(vec![-0.4]),
            &fd(),
        )
        .unwrap();
        assert!(r < 1e-9);
    }

    #[test]
    fn pushforward_residual_vanishes_for_shipped_symmetries() {
        // linear benchmark with its Moebius symmetry, in-domain t < 1/p
        let b2 = bench::bench_ex2();
        let mut rng = bench::test_rng(13);
        for &p in &[0.3, 0.7] {
            for _ in 0..20 {
                let mut pt = b2.sample_box.sample(&mut rng);
                pt.t = pt.t.min(0.9 / p);
                let r =
                    pushforward_residual(&b2.map, &b2.actions[0].action, p, pt.t, &pt.x, &pt.d, &fd())
                        .unwrap();
                assert!(r < 1e-8, "ex2 residual {r}");
            }
        }
        // Example 1 pair with its global symmetry at p = 1
        let b1 = bench::bench_ex1();
        for _ in 0..20 {
            let pt = b1.sample_box.sample(&mut rng);
            let r =
                pushforward_residual(&b1.map, &b1.actions[0].action, 1.0, pt.t, &pt.x, &pt.d, &fd())
                    .unwrap();
            assert!(r < 1e-8, "ex1 residual {r}");
        }
    }

    #[test]
    fn asymptotic_inequality_holds_for_e8() {
        let b = bench::bench_e8(2, 6.0).unwrap();
        let pair = &b.asymptotic.as_ref().unwrap().pair;
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let mut rng = bench::test_rng(17);
        for i in 0..50 {
            let pt = b.sample_box.sample(&mut rng);
            let p = 5.0 * (i as f64) / 49.0;
            let (lhs, rhs) =
                asymptotic_residual(&b.map, pair, &att.action, cert, p, pt.t, &pt.x, &pt.d, &fd())
                    .unwrap();
            assert!(lhs <= rhs + 1e-12, "p = {p}: lhs {lhs} > rhs {rhs}");
        }
    }

    #[test]
    fn asymptotic_lhs_decays_with_p() {
        let b = bench::bench_e8(2, 6.0).unwrap();
        let pair = &b.asymptotic.as_ref().unwrap().pair;
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let x = DVector::from_vec(vec![1.1, -0.7]);
        let d = DVector::from_vec(vec![0.8]);
        let mut prev = f64::INFINITY;
        for k in 0..=8 {
            let p = k as f64;
            let (lhs, _) =
                asymptotic_residual(&b.map, pair, &att.action, cert, p, 0.4, &x, &d, &fd()).unwrap();
            assert!(lhs <= prev + 1e-9, "lhs not decaying at p = {p}");
            prev = lhs;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn variational_inequality_holds_for_e8() {
        let b = bench::bench_e8(2, 6.0).unwrap();
        let pair = &b.asymptotic.as_ref().unwrap().pair;
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let mut rng = bench::test_rng(19);
        for i in 0..50 {
            let pt = b.sample_box.sample(&mut rng);
            let p = 5.0 * (i as f64) / 49.0;
            let (lhs, rhs) =
                variational_residual(&b.map, pair, &att.action, cert, p, pt.t, &pt.x, &pt.d, &fd())
                    .unwrap();
            // finite-difference Jacobian, so allow a small absolute slack
            assert!(lhs <= rhs + 1e-5, "p = {p}: lhs {lhs} > rhs {rhs}");
        }
    }

    #[test]
    fn variational_rhs_decays_at_rate_three() {
        // lambda(r, s) = e^{-3 s}(1 + 3r + 3r) for k = 2, g^t = 6
        let b = bench::bench_e8(2, 6.0).unwrap();
        let pair = &b.asymptotic.as_ref().unwrap().pair;
        let r0 = (pair.lambda)(0.5, 0.0);
        let r1 = (pair.lambda)(0.5, 1.0);
        assert!((r1 / r0 - (-3.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn exact_symmetry_gives_zero_asymptotic_lhs() {
        // Sigma_inf = Sigma with the exact triangular symmetry: limit case.
        let b = bench::bench_ex3(2).unwrap();
        let att = &b.actions[0];
        let cert = att.cert.as_ref().unwrap();
        let pair = AsymptoticPair {
            sigma_inf: b.map.clone(),
            nu: Arc::new(|_r, _s| 1.0),
            lambda: Arc::new(|_r, _s| 1.0),
        };
        let (lhs, _) = asymptotic_residual(
            &b.map,
            &pair,
            &att.action,
            cert,
            1.3,
            0.6,
            &DVector::from_vec(vec![0.9, -0.2]),
            &DVector::from_vec(vec![0.4]),
            &fd(),
        )
        .unwrap();
        assert!(lhs < 1e-8, "lhs {lhs}");
    }

    #[test]
    fn stacking_identity_holds_on_benchmarks() {
        for b in [
            bench::bench_ex1(),
            bench::bench_ex2(),
            bench::bench_ex3(2).unwrap(),
            bench::bench_ex3(3).unwrap(),
            bench::bench_ex3_input_insensitive(2).unwrap(),
        ] {
            let mut rng = bench::test_rng(23);
            for _ in 0..200 {
                let pt = b.sample_box.sample(&mut rng);
                let r = stacking_residual(&b.map, pt.t, &pt.x, &pt.d);
                assert!(r < 1e-10, "{}: stacking residual {r}", b.name);
            }
        }
    }

    #[test]
    fn remainder_jacobian_is_inside_xi_envelope() {
        for b in [bench::bench_ex1(), bench::bench_ex3(2).unwrap(), bench::bench_ex3(3).unwrap()] {
            let map = b.map.clone();
            let n = map.dims.n;
            let m = map.dims.m;
            let grid = 20;
            for i in 0..grid {
                for j in 0..grid {
                    for l in 0..grid {
                        let x1 = -3.0 + 6.0 * (i as f64) / (grid - 1) as f64;
                        let x2 = -3.0 + 6.0 * (j as f64) / (grid - 1) as f64;
                        let dv = -2.0 + 4.0 * (l as f64) / (grid - 1) as f64;
                        let x = DVector::from_vec(vec![x1, x2]);
                        let d = DVector::from_vec(vec![dv]);
                        let packed = stack(&x, &d);
                        let mp = map.clone();
                        let jac = fd().jacobian(
                            |v| {
                                let xx = DVector::from_iterator(n, v.iter().take(n).copied());
                                let dd =
                                    DVector::from_iterator(m, v.iter().skip(n).take(m).copied());
                                (mp.delta_l)(0.0, &xx, &dd)
                            },
                            &packed,
                        );
                        let norm = crate::linalg::spectral_norm(&jac);
                        let bound = (map.xi)(packed.norm());
                        assert!(
                            norm <= bound + 1e-4,
                            "{}: |dDelta| = {norm} > xi = {bound} at ({x1},{x2},{dv})",
                            b.name
                        );
                    }
                }
            }
        }
    }
}
