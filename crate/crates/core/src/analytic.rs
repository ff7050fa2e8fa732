//! Large-intensity limits of the radius of gyration and the asphericity.
//!
//! As the observation intensity grows, the tether-point gyration tensor of a
//! tracked bridge converges to its continuous-time counterpart. Its mean trace
//! `r2` and asphericity `A = 1 - 4 alpha / beta` then depend on the kernel only
//! through `M0`, `M1` and `M2`:
//!
//! ```text
//! r2    = 2 M1(1) - 4 M2(1)
//! alpha = 4 M0(1)(M1(1) - 2 M2(1)) - M1(1)^2 + 4 M1(1) M2(1)
//!         + 4 int t mu (2 M2 - t M1) - 2 int t M0^2 - 2 int (M1 - t M0)^2
//! beta  = -4 (M1(1)^2 - 4 M1(1) M2(1) + 8 M2(1)^2)
//!         + 8 int (1 - t) t M0^2 + 16 int (1 - 2t) M0 (2 M2 - t M1)
//!         + 8 int M1 ((1 - 4t) M1 + 8 M2)
//! ```
//!
//! [`asphericity_quadrature`] evaluates the integrals numerically for any
//! kernel; [`closed_form`] gives exact expressions for the five named
//! families and serves as an independent oracle for the quadrature route.

use serde::{Deserialize, Serialize};

use crate::kernel::{Kernel, KernelSpec};
use crate::quadrature::integrate;
use crate::{Error, Result};

/// Per-integral absolute tolerance used when none is given.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Radius of gyration and asphericity of a kernel in the `c -> infinity` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub r2: f64,
    pub asphericity: f64,
    /// Numerator block of the asphericity; only the quadrature route sets it.
    pub alpha: Option<f64>,
    /// Denominator block of the asphericity; only the quadrature route sets it.
    pub beta: Option<f64>,
}

/// Horizon and volatility of a bridge on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    horizon: f64,
    sigma: f64,
}

impl ScalingParams {
    pub fn new(horizon: f64, sigma: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "horizon and volatility must be positive and finite, got T = {horizon}, sigma = {sigma}"
            )));
        }
        Ok(ScalingParams { horizon, sigma })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Factor applied to squared lengths: `sigma^2 T`.
    pub fn length_squared_factor(&self) -> f64 {
        self.sigma * self.sigma * self.horizon
    }
}

/// Smallest absolute error requested of a single integral term; below this
/// rounding in the integrands dominates.
const TERM_TOL_FLOOR: f64 = 1e-14;

/// `r2 = 2 M1(1) - 4 M2(1)`.
pub fn gyration_radius(kernel: &Kernel) -> f64 {
    let m = kernel.moments();
    2.0 * m.m1(1.0) - 4.0 * m.m2(1.0)
}

/// Evaluates `alpha`, `beta` and the asphericity by adaptive quadrature.
///
/// `alpha` and `beta` scale like `r2^2` but are differences of terms of
/// order one, so each of the six integral terms is computed to absolute
/// error `tol * min(1, r2^2)`, floored at `TERM_TOL_FLOOR`.
pub fn asphericity_quadrature(kernel: &Kernel, tol: f64) -> Result<ShapeStats> {
    if !(tol > 1e-14 && tol < 1e-3) {
        return Err(Error::Domain(format!(
            "quadrature tolerance must lie in (1e-14, 1e-3), got {tol}"
        )));
    }
    let m = kernel.moments();
    let splits = kernel.breakpoints();
    let r2 = gyration_radius(kernel);
    let term_tol = (tol * (r2 * r2).min(1.0)).max(TERM_TOL_FLOOR);
    let term = |name: &str, f: &dyn Fn(f64) -> f64| -> Result<f64> {
        integrate(f, 0.0, 1.0, term_tol, &splits)
            .map(|r| r.value)
            .map_err(|e| e.annotate(format!("integral term `{name}`")))
    };

    let (a0, a1, a2) = m.all(1.0);

    let weighted = term("t mu (2 M2 - t M1)", &|t| {
        let (_, m1, m2) = m.all(t);
        t * kernel.density_unchecked(t) * (2.0 * m2 - t * m1)
    })?;
    let t_m0_sq = term("t M0^2", &|t| {
        let m0 = m.m0(t);
        t * m0 * m0
    })?;
    let drift_sq = term("(M1 - t M0)^2", &|t| {
        let (m0, m1, _) = m.all(t);
        let d = m1 - t * m0;
        d * d
    })?;
    let bridge_m0_sq = term("(1 - t) t M0^2", &|t| {
        let m0 = m.m0(t);
        (1.0 - t) * t * m0 * m0
    })?;
    let cross = term("(1 - 2t) M0 (2 M2 - t M1)", &|t| {
        let (m0, m1, m2) = m.all(t);
        (1.0 - 2.0 * t) * m0 * (2.0 * m2 - t * m1)
    })?;
    let m1_block = term("M1 ((1 - 4t) M1 + 8 M2)", &|t| {
        let (_, m1, m2) = m.all(t);
        m1 * ((1.0 - 4.0 * t) * m1 + 8.0 * m2)
    })?;

    let alpha = 4.0 * a0 * (a1 - 2.0 * a2) - a1 * a1 + 4.0 * a1 * a2 + 4.0 * weighted
        - 2.0 * t_m0_sq
        - 2.0 * drift_sq;
    let beta = -4.0 * (a1 * a1 - 4.0 * a1 * a2 + 8.0 * a2 * a2)
        + 8.0 * bridge_m0_sq
        + 16.0 * cross
        + 8.0 * m1_block;
    if !(beta > 0.0) {
        return Err(Error::Numeric(format!("non-positive beta = {beta:e}")));
    }
    Ok(ShapeStats {
        r2,
        asphericity: 1.0 - 4.0 * alpha / beta,
        alpha: Some(alpha),
        beta: Some(beta),
    })
}

/// Exact radius of gyration and asphericity for the five named families.
/// Returns `None` for tabulated kernels.
pub fn closed_form(spec: &KernelSpec) -> Option<ShapeStats> {
    let (r2, asphericity) = match *spec {
        KernelSpec::Uniform { s } => (
            s - 2.0 * s * s / 3.0,
            1.0 - (15.0 - 12.0 * s) / (40.0 * s * s - 108.0 * s + 75.0),
        ),
        KernelSpec::Exponential { lambda } => {
            (exponential_r2(lambda), exponential_asphericity(lambda))
        }
        KernelSpec::Triangular { a } => {
            let p = a * a * (a * a - 2.0 * a);
            (
                (-a * a + a + 1.0) / 3.0,
                (15.0 * p + 9.0 * a * a + 6.0 * a + 3.0) / (11.0 * p + a * a + 10.0 * a + 5.0),
            )
        }
        KernelSpec::InvertedTriangular { a } => {
            let p = a * a * (a * a - 2.0 * a);
            (
                (a * a - a + 1.0) / 3.0,
                (37.0 * p + 11.0 * a * a + 26.0 * a - 15.0) / (p - 47.0 * a * a + 48.0 * a - 25.0),
            )
        }
        KernelSpec::UShaped { k } => {
            let k = f64::from(k);
            (
                1.0 / (3.0 + 2.0 * k),
                4.0 * (2.0 * k * k + 4.0 * k + 3.0) / (20.0 * k * k + 40.0 * k + 21.0),
            )
        }
        KernelSpec::Tabulated { .. } => return None,
    };
    Some(ShapeStats {
        r2,
        asphericity,
        alpha: None,
        beta: None,
    })
}

/// `2 (e^l (l - 2) + l + 2) / ((e^l - 1) l^2)`.
///
/// Below `l = 2` the numerator is summed as its Taylor series
/// `sum_{m >= 3} (m - 2) l^m / m!`, which has no cancellation.
fn exponential_r2(lambda: f64) -> f64 {
    if lambda < 2.0 {
        let mut term = 1.0; // l^m / m!
        let mut num = 0.0;
        for m in 1..80 {
            term *= lambda / f64::from(m);
            if m >= 3 {
                num += f64::from(m - 2) * term;
            }
            if m > 3 && term < 1e-18 * num {
                break;
            }
        }
        2.0 * num / (lambda.exp_m1() * lambda * lambda)
    } else {
        let decay = (-lambda).exp();
        2.0 * ((lambda - 2.0) + (lambda + 2.0) * decay) / ((1.0 - decay) * lambda * lambda)
    }
}

/// Asphericity of the exponential strategy.
///
/// Numerator and denominator of
/// `2((l^2 + 8) cosh l - 5 l sinh l - 8) / (2(l^2 - 8) + (3 l^2 + 16) cosh l - 13 l sinh l)`
/// both vanish to sixth order at zero. For small `l` they are summed as the
/// positive series `sum_{n >= 3} c_n l^(2n) / (2n)!` with
/// `c_n = 8 (n - 1)(n - 2)` and `4 (3n - 2)(n - 2)`; for large `l` both are
/// divided through by `cosh l`.
fn exponential_asphericity(lambda: f64) -> f64 {
    if lambda < 5.0 {
        let x2 = lambda * lambda;
        let mut term = 1.0; // l^(2n - 6) * 6! / (2n)!, starting at n = 3
        let (mut num, mut den) = (0.0, 0.0);
        for n in 3..120u32 {
            if n > 3 {
                term *= x2 / f64::from((2 * n - 1) * (2 * n));
            }
            let nf = f64::from(n);
            let dn = 8.0 * (nf - 1.0) * (nf - 2.0) * term;
            num += dn;
            den += 4.0 * (3.0 * nf - 2.0) * (nf - 2.0) * term;
            if dn < 1e-18 * num {
                break;
            }
        }
        num / den
    } else {
        let tanh = lambda.tanh();
        let sech = 1.0 / lambda.cosh();
        let x2 = lambda * lambda;
        2.0 * ((x2 + 8.0) - 5.0 * lambda * tanh - 8.0 * sech)
            / (2.0 * (x2 - 8.0) * sech + (3.0 * x2 + 16.0) - 13.0 * lambda * tanh)
    }
}

/// Closed form where one exists, quadrature otherwise.
pub fn shape_stats(kernel: &Kernel, tol: f64) -> Result<ShapeStats> {
    match closed_form(kernel.spec()) {
        Some(stats) => Ok(stats),
        None => asphericity_quadrature(kernel, tol),
    }
}

/// Moves unit-interval statistics to a bridge on `[0, T]` with volatility
/// `sigma`, observed with the density `nu(u) = mu(u / T) / T`.
///
/// Squared lengths scale by `sigma^2 T`; the asphericity is dimensionless and
/// is copied unchanged.
pub fn rescale(stats: ShapeStats, scale: ScalingParams) -> ShapeStats {
    let f = scale.length_squared_factor();
    ShapeStats {
        r2: stats.r2 * f,
        asphericity: stats.asphericity,
        alpha: stats.alpha.map(|a| a * f * f),
        beta: stats.beta.map(|b| b * f * f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k(spec: KernelSpec) -> Kernel {
        Kernel::new(spec).unwrap()
    }

    #[test]
    fn gyration_radius_examples() {
        assert_relative_eq!(
            gyration_radius(&k(KernelSpec::Uniform { s: 0.75 })),
            3.0 / 8.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            gyration_radius(&k(KernelSpec::Triangular { a: 0.5 })),
            5.0 / 12.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            gyration_radius(&k(KernelSpec::UShaped { k: 1 })),
            0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn quadrature_examples() {
        let tol = DEFAULT_TOL;
        let u = asphericity_quadrature(&k(KernelSpec::Uniform { s: 1.0 }), tol).unwrap();
        assert_relative_eq!(u.asphericity, 4.0 / 7.0, epsilon = 1e-10);
        assert_relative_eq!(u.alpha.unwrap(), 1.0 / 60.0, epsilon = 1e-12);
        assert_relative_eq!(u.beta.unwrap(), 7.0 / 45.0, epsilon = 1e-12);

        let e = asphericity_quadrature(&k(KernelSpec::Exponential { lambda: 1e-4 }), tol).unwrap();
        assert!((e.asphericity - 4.0 / 7.0).abs() < 1e-4);

        let inv =
            asphericity_quadrature(&k(KernelSpec::InvertedTriangular { a: 0.5 }), tol).unwrap();
        assert_relative_eq!(inv.asphericity, 11.0 / 23.0, epsilon = 1e-9);
    }

    #[test]
    fn alpha_beta_identity_holds() {
        let s = asphericity_quadrature(&k(KernelSpec::Triangular { a: 0.2 }), 1e-11).unwrap();
        assert_eq!(
            s.asphericity,
            1.0 - 4.0 * s.alpha.unwrap() / s.beta.unwrap()
        );
    }

    #[test]
    fn quadrature_rejects_bad_tolerance() {
        let u = k(KernelSpec::Uniform { s: 1.0 });
        assert!(asphericity_quadrature(&u, 1e-15).is_err());
        assert!(asphericity_quadrature(&u, 1e-2).is_err());
    }

    #[test]
    fn closed_form_limits() {
        // The approach to 2/3 is slow, roughly 0.45 / lambda.
        for lambda in [50.0, 200.0, 1000.0, 1e5] {
            let e = closed_form(&KernelSpec::Exponential { lambda }).unwrap();
            let gap = 2.0 / 3.0 - e.asphericity;
            assert!(
                gap > 0.0 && gap * lambda > 0.4 && gap * lambda < 0.5,
                "{lambda}: {gap}"
            );
        }
        let t = closed_form(&KernelSpec::Triangular { a: 0.5 }).unwrap();
        assert_relative_eq!(t.asphericity, 87.0 / 131.0, max_relative = 1e-14);
        let u = closed_form(&KernelSpec::UShaped { k: 500 }).unwrap();
        assert!((u.asphericity - 0.4).abs() < 1e-3);
        assert!(closed_form(&KernelSpec::Tabulated {
            knots: vec![(0.0, 1.0), (1.0, 1.0)]
        })
        .is_none());
        assert!(t.alpha.is_none() && t.beta.is_none());
    }

    /// Values from 50-digit evaluation of the unrearranged formulas.
    #[test]
    fn exponential_closed_form_is_stable_for_small_rates() {
        let cases = [
            (
                1e-4,
                0.571_428_571_443_148_688_04,
                0.333_333_333_277_777_777_79,
            ),
            (
                1e-3,
                0.571_428_572_886_297_350_31,
                0.333_333_327_777_777_910_05,
            ),
            (
                1e-2,
                0.571_428_717_200_908_352_12,
                0.333_332_777_779_100_525_79,
            ),
            (
                0.5,
                0.571_791_398_334_368_830_92,
                0.331_952_660_294_386_273_05,
            ),
            (
                1.0,
                0.572_860_947_579_252_922_59,
                0.327_906_827_477_305_697_54,
            ),
            (5.0, 0.596_617_997_567_833_052, 0.245_426_923_925_043_384_88),
            (
                20.0,
                0.644_351_462_187_835_521_87,
                0.090_000_000_412_230_725_337,
            ),
        ];
        for (lambda, a, r2) in cases {
            let s = closed_form(&KernelSpec::Exponential { lambda }).unwrap();
            assert_relative_eq!(s.asphericity, a, max_relative = 1e-13);
            assert_relative_eq!(s.r2, r2, max_relative = 1e-13);
        }
    }

    #[test]
    fn exponential_branches_agree_at_the_switch() {
        let below = exponential_asphericity(5.0 - 1e-12);
        let above = exponential_asphericity(5.0);
        assert_relative_eq!(below, above, max_relative = 1e-13);
        assert_relative_eq!(
            exponential_r2(2.0 - 1e-12),
            exponential_r2(2.0),
            max_relative = 1e-13
        );
    }

    #[test]
    fn rescale_examples() {
        let base = ShapeStats {
            r2: 1.0 / 3.0,
            asphericity: 4.0 / 7.0,
            alpha: Some(0.1),
            beta: Some(0.5),
        };
        let same = rescale(base, ScalingParams::new(1.0, 1.0).unwrap());
        assert_eq!(same, base);
        let stretched = rescale(base, ScalingParams::new(4.0, 1.0).unwrap());
        assert_relative_eq!(stretched.r2, 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(stretched.asphericity.to_bits(), base.asphericity.to_bits());
        assert!(ScalingParams::new(0.0, 1.0).is_err());
        assert!(ScalingParams::new(1.0, -2.0).is_err());
    }

    #[test]
    fn rescale_scales_alpha_and_beta_quadratically() {
        let unit = k(KernelSpec::Uniform { s: 1.0 });
        let stats = asphericity_quadrature(&unit, 1e-11).unwrap();
        let scaled = rescale(stats, ScalingParams::new(3.0, 2.0).unwrap());
        assert_relative_eq!(scaled.asphericity, 4.0 / 7.0, epsilon = 1e-10);
        let f = 4.0 * 3.0;
        assert_relative_eq!(
            scaled.alpha.unwrap() / scaled.beta.unwrap(),
            stats.alpha.unwrap() / stats.beta.unwrap(),
            max_relative = 1e-14
        );
        assert_relative_eq!(scaled.r2, stats.r2 * f, max_relative = 1e-15);
    }
}
