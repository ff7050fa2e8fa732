//! Tracking strategies and their iterated integrals.
//!
//! A tracking strategy is a probability density `mu` on `[0, 1]`. Everything
//! the analytic formulas need from it is captured by three iterated integrals:
//!
//! ```text
//! M0(t) = int_0^t mu(s) ds,   M1(t) = int_0^t M0(s) ds,   M2(t) = int_0^t M1(s) ds
//! ```
//!
//! The uniform, triangular, inverted triangular and tabulated strategies are
//! piecewise linear, so their iterated integrals are exact piecewise
//! polynomials. The exponential and U-shaped strategies have dedicated closed
//! forms.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on the trapezoid integral of a tabulated kernel inside which it
/// is silently renormalized to one.
pub const TABULATED_NORMALIZATION_TOL: f64 = 1e-6;

/// A tracking strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `mu(t) = 1/s` on `[0, s]`, zero afterwards.
    Uniform { s: f64 },
    /// `mu(t) = lambda exp(-lambda t) / (1 - exp(-lambda))`.
    Exponential { lambda: f64 },
    /// Tent with its peak at `a`.
    Triangular { a: f64 },
    /// V shape with its trough (zero) at `a`.
    InvertedTriangular { a: f64 },
    /// `mu(t) = (2k + 1)(2t - 1)^(2k)`.
    UShaped { k: u32 },
    /// Piecewise-linear interpolant through `(t, mu)` knots.
    Tabulated { knots: Vec<(f64, f64)> },
}

/// Kernel family names as used on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Uniform,
    Exponential,
    Triangular,
    InvertedTriangular,
    UShaped,
    Tabulated,
}

impl Family {
    pub const NAMED: [Family; 5] = [
        Family::Uniform,
        Family::Exponential,
        Family::Triangular,
        Family::InvertedTriangular,
        Family::UShaped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Exponential => "exponential",
            Family::Triangular => "triangular",
            Family::InvertedTriangular => "inverted-triangular",
            Family::UShaped => "u-shaped",
            Family::Tabulated => "tabulated",
        }
    }

    /// Builds the single-parameter kernel of this family.
    ///
    /// Tabulated kernels have no scalar parameter and are rejected here.
    pub fn with_param(self, param: f64) -> Result<KernelSpec> {
        let spec = match self {
            Family::Uniform => KernelSpec::Uniform { s: param },
            Family::Exponential => KernelSpec::Exponential { lambda: param },
            Family::Triangular => KernelSpec::Triangular { a: param },
            Family::InvertedTriangular => KernelSpec::InvertedTriangular { a: param },
            Family::UShaped => {
                if param.fract() != 0.0 || !(1.0..=f64::from(u32::MAX)).contains(&param) {
                    return Err(Error::InvalidKernel(format!(
                        "u-shaped order must be a positive integer, got {param}"
                    )));
                }
                KernelSpec::UShaped { k: param as u32 }
            }
            Family::Tabulated => {
                return Err(Error::InvalidKernel(
                    "tabulated kernels are loaded from a file, not a parameter".into(),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let family = match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "uniform" => Family::Uniform,
            "exponential" | "exp" => Family::Exponential,
            "triangular" => Family::Triangular,
            "inverted-triangular" => Family::InvertedTriangular,
            "u-shaped" | "ushaped" => Family::UShaped,
            "tabulated" => Family::Tabulated,
            other => return Err(Error::Parse(format!("unknown kernel family `{other}`"))),
        };
        Ok(family)
    }
}

impl KernelSpec {
    pub fn family(&self) -> Family {
        match self {
            KernelSpec::Uniform { .. } => Family::Uniform,
            KernelSpec::Exponential { .. } => Family::Exponential,
            KernelSpec::Triangular { .. } => Family::Triangular,
            KernelSpec::InvertedTriangular { .. } => Family::InvertedTriangular,
            KernelSpec::UShaped { .. } => Family::UShaped,
            KernelSpec::Tabulated { .. } => Family::Tabulated,
        }
    }

    /// The scalar family parameter, absent for tabulated kernels.
    pub fn param(&self) -> Option<f64> {
        match *self {
            KernelSpec::Uniform { s } => Some(s),
            KernelSpec::Exponential { lambda } => Some(lambda),
            KernelSpec::Triangular { a } | KernelSpec::InvertedTriangular { a } => Some(a),
            KernelSpec::UShaped { k } => Some(f64::from(k)),
            KernelSpec::Tabulated { .. } => None,
        }
    }

    /// Checks the parameter-domain invariants. Tabulated knots are checked
    /// for shape only; normalization happens in [`Kernel::new`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidKernel(msg));
        match *self {
            KernelSpec::Uniform { s } if !(s > 0.0 && s <= 1.0) => {
                bad(format!("uniform cutoff must lie in (0, 1], got {s}"))
            }
            KernelSpec::Exponential { lambda } if !(lambda > 0.0 && lambda.is_finite()) => bad(
                format!("exponential rate must be positive and finite, got {lambda}"),
            ),
            KernelSpec::Triangular { a } | KernelSpec::InvertedTriangular { a }
                if !(a > 0.0 && a < 1.0) =>
            {
                bad(format!("triangular apex must lie in (0, 1), got {a}"))
            }
            KernelSpec::UShaped { k } if k == 0 || k > 1 << 20 => {
                bad(format!("u-shaped order must lie in [1, 2^20], got {k}"))
            }
            KernelSpec::Tabulated { ref knots } => validate_knots(knots),
            _ => Ok(()),
        }
    }

    /// Parses a tabulated kernel from CSV text with header `t,mu`.
    pub fn tabulated_from_csv_str(text: &str) -> Result<Self> {
        Self::tabulated_from_csv(text.as_bytes())
    }

    /// Reads a tabulated kernel from a CSV stream with header `t,mu`.
    pub fn tabulated_from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "mu" {
            return Err(Error::Parse(format!(
                "tabulated kernel CSV must have header `t,mu`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut knots = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::Parse(format!(
                    "row {}: expected 2 columns",
                    line + 1
                )));
            }
            let field = |i: usize| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{}`: {e}", line + 1, &record[i])))
            };
            knots.push((field(0)?, field(1)?));
        }
        let spec = KernelSpec::Tabulated { knots };
        spec.validate()?;
        Ok(spec)
    }
}

fn validate_knots(knots: &[(f64, f64)]) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidKernel(msg));
    if knots.len() < 2 {
        return bad(format!(
            "tabulated kernel needs at least 2 knots, got {}",
            knots.len()
        ));
    }
    if knots.iter().any(|&(t, m)| !t.is_finite() || !m.is_finite()) {
        return bad("tabulated kernel has non-finite values".into());
    }
    if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
        return bad("tabulated knots must start at t = 0 and end at t = 1".into());
    }
    if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
        return bad("tabulated knots must be strictly increasing in t".into());
    }
    if knots.iter().any(|&(_, m)| m < 0.0) {
        return bad("tabulated density values must be nonnegative".into());
    }
    Ok(())
}

/// A validated tracking strategy with its iterated integrals prepared.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    moments: KernelMoments,
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        let (spec, repr) = match spec {
            KernelSpec::Uniform { s } => {
                let mut knots = vec![(0.0, 1.0 / s), (s, 1.0 / s)];
                if s < 1.0 {
                    knots.push((s, 0.0));
                    knots.push((1.0, 0.0));
                }
                (spec, Repr::Piecewise(Piecewise::from_knots(&knots)))
            }
            KernelSpec::Triangular { a } => {
                let knots = [(0.0, 0.0), (a, 2.0), (1.0, 0.0)];
                (spec, Repr::Piecewise(Piecewise::from_knots(&knots)))
            }
            KernelSpec::InvertedTriangular { a } => {
                let knots = [(0.0, 2.0), (a, 0.0), (1.0, 2.0)];
                (spec, Repr::Piecewise(Piecewise::from_knots(&knots)))
            }
            KernelSpec::Exponential { lambda } => {
                (spec, Repr::Exponential(Exponential::new(lambda)))
            }
            KernelSpec::UShaped { k } => (spec, Repr::UShaped { order: k }),
            KernelSpec::Tabulated { knots } => {
                let knots = normalize_knots(knots)?;
                let piecewise = Piecewise::from_knots(&knots);
                (KernelSpec::Tabulated { knots }, Repr::Piecewise(piecewise))
            }
        };
        Ok(Kernel {
            spec,
            moments: KernelMoments { repr },
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family()
    }

    /// The density `mu(t)`.
    pub fn density(&self, t: f64) -> Result<f64> {
        check_unit(t)?;
        Ok(self.density_unchecked(t))
    }

    /// `mu(t)` without the domain check; `t` must lie in `[0, 1]`.
    pub fn density_unchecked(&self, t: f64) -> f64 {
        match self.spec {
            KernelSpec::Uniform { s } => {
                if t <= s {
                    1.0 / s
                } else {
                    0.0
                }
            }
            KernelSpec::Exponential { lambda } => {
                lambda * (-lambda * t).exp() / -(-lambda).exp_m1()
            }
            KernelSpec::Triangular { a } => {
                if t <= a {
                    2.0 * t / a
                } else {
                    2.0 * (1.0 - t) / (1.0 - a)
                }
            }
            KernelSpec::InvertedTriangular { a } => {
                if t <= a {
                    2.0 - 2.0 * t / a
                } else {
                    2.0 * (t - a) / (1.0 - a)
                }
            }
            KernelSpec::UShaped { k } => {
                let n = 2 * k;
                f64::from(n + 1) * (2.0 * t - 1.0).powi(n as i32)
            }
            KernelSpec::Tabulated { ref knots } => interpolate(knots, t),
        }
    }

    pub fn moments(&self) -> &KernelMoments {
        &self.moments
    }

    /// Smallest `t` with `M0(t) = u`, for `u` clamped to `[0, 1]`.
    pub fn inverse_m0(&self, u: f64) -> f64 {
        self.moments.inverse_m0(u)
    }

    /// Interior points in `(0, 1)` where `mu` is not smooth, or where it is
    /// sharply peaked. Quadrature subdivides there first.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.spec {
            KernelSpec::Uniform { s } if s < 1.0 => vec![s],
            KernelSpec::Uniform { .. } | KernelSpec::Exponential { .. } => vec![],
            KernelSpec::Triangular { a } | KernelSpec::InvertedTriangular { a } => vec![a],
            KernelSpec::UShaped { .. } => vec![0.5],
            KernelSpec::Tabulated { ref knots } => {
                knots[1..knots.len() - 1].iter().map(|&(t, _)| t).collect()
            }
        }
    }

    /// Supremum of `mu` over `[0, 1]`.
    pub fn max_density(&self) -> f64 {
        match self.spec {
            KernelSpec::Uniform { s } => 1.0 / s,
            KernelSpec::Exponential { .. } => self.density_unchecked(0.0),
            KernelSpec::Triangular { .. } | KernelSpec::InvertedTriangular { .. } => 2.0,
            KernelSpec::UShaped { k } => f64::from(2 * k + 1),
            KernelSpec::Tabulated { ref knots } => {
                knots.iter().map(|&(_, m)| m).fold(0.0, f64::max)
            }
        }
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("t = {t} lies outside [0, 1]")))
    }
}

fn interpolate(knots: &[(f64, f64)], t: f64) -> f64 {
    let i = knots.partition_point(|&(k, _)| k <= t);
    if i == 0 {
        return knots[0].1;
    }
    if i == knots.len() {
        return knots[knots.len() - 1].1;
    }
    let (t0, m0) = knots[i - 1];
    let (t1, m1) = knots[i];
    m0 + (m1 - m0) * (t - t0) / (t1 - t0)
}

fn normalize_knots(knots: Vec<(f64, f64)>) -> Result<Vec<(f64, f64)>> {
    validate_knots(&knots)?;
    let mass: f64 = knots
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    if (mass - 1.0).abs() > TABULATED_NORMALIZATION_TOL {
        return Err(Error::InvalidKernel(format!(
            "tabulated kernel integrates to {mass}, expected 1"
        )));
    }
    Ok(knots.into_iter().map(|(t, m)| (t, m / mass)).collect())
}

/// The iterated integrals `M0`, `M1`, `M2` of a kernel.
#[derive(Debug, Clone)]
pub struct KernelMoments {
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Piecewise(Piecewise),
    Exponential(Exponential),
    UShaped { order: u32 },
}

impl KernelMoments {
    /// `M0(t)`, the cumulative distribution of the kernel.
    pub fn m0(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.repr {
            Repr::Piecewise(p) => p.eval(t).0,
            Repr::Exponential(e) => e.m0(t),
            Repr::UShaped { order } => ushaped::m0(*order, t),
        }
    }

    pub fn m1(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.repr {
            Repr::Piecewise(p) => p.eval(t).1,
            Repr::Exponential(e) => e.m1(t),
            Repr::UShaped { order } => ushaped::m1(*order, t),
        }
    }

    pub fn m2(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.repr {
            Repr::Piecewise(p) => p.eval(t).2,
            Repr::Exponential(e) => e.m2(t),
            Repr::UShaped { order } => ushaped::m2(*order, t),
        }
    }

    /// `(M0(t), M1(t), M2(t))` in one pass.
    pub fn all(&self, t: f64) -> (f64, f64, f64) {
        match &self.repr {
            Repr::Piecewise(p) => p.eval(t.clamp(0.0, 1.0)),
            _ => (self.m0(t), self.m1(t), self.m2(t)),
        }
    }

    /// Smallest `t` with `M0(t) = u`. Where `M0` is flat the left endpoint of
    /// the flat stretch is returned, so no time is ever produced inside a
    /// zero-density gap.
    pub fn inverse_m0(&self, u: f64) -> f64 {
        if u.is_nan() {
            return f64::NAN;
        }
        let u = u.clamp(0.0, 1.0);
        match &self.repr {
            Repr::Piecewise(p) => p.inverse_m0(u),
            Repr::Exponential(e) => e.inverse_m0(u),
            Repr::UShaped { order } => ushaped::inverse_m0(*order, u),
        }
    }
}

/// Piecewise-linear density with exact polynomial iterated integrals.
#[derive(Debug, Clone)]
struct Piecewise {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    len: f64,
    /// Density at the left end of the segment.
    value: f64,
    slope: f64,
    /// `M0, M1, M2` at `start`.
    base: (f64, f64, f64),
    /// `M0` at `start + len`.
    m0_end: f64,
}

impl Segment {
    fn eval(&self, h: f64) -> (f64, f64, f64) {
        let (b0, b1, b2) = self.base;
        let (p, q) = (self.value, self.slope);
        let h2 = h * h;
        let h3 = h2 * h;
        let m0 = b0 + p * h + q * h2 / 2.0;
        let m1 = b1 + b0 * h + p * h2 / 2.0 + q * h3 / 6.0;
        let m2 = b2 + b1 * h + b0 * h2 / 2.0 + p * h3 / 6.0 + q * h3 * h / 24.0;
        (m0, m1, m2)
    }
}

impl Piecewise {
    /// Knots may repeat a `t` value to encode a jump; zero-length pieces are
    /// dropped.
    fn from_knots(knots: &[(f64, f64)]) -> Self {
        let mut segments: Vec<Segment> = Vec::with_capacity(knots.len());
        let mut base = (0.0, 0.0, 0.0);
        for w in knots.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            let len = t1 - t0;
            if len <= 0.0 {
                continue;
            }
            let mut seg = Segment {
                start: t0,
                len,
                value: v0,
                slope: (v1 - v0) / len,
                base,
                m0_end: 0.0,
            };
            let end = seg.eval(len);
            seg.m0_end = end.0;
            segments.push(seg);
            base = end;
        }
        Piecewise { segments }
    }

    fn locate(&self, t: f64) -> usize {
        self.segments
            .partition_point(|s| s.start <= t)
            .saturating_sub(1)
    }

    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let seg = &self.segments[self.locate(t)];
        seg.eval((t - seg.start).clamp(0.0, seg.len))
    }

    fn inverse_m0(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let i = self
            .segments
            .partition_point(|s| s.m0_end < u)
            .min(self.segments.len() - 1);
        let seg = &self.segments[i];
        let d = u - seg.base.0;
        if d <= 0.0 {
            return seg.start;
        }
        // Smallest root of q h^2 / 2 + p h - d = 0 with p >= 0.
        let (p, q) = (seg.value, seg.slope);
        let disc = (p * p + 2.0 * q * d).max(0.0);
        let denom = p + disc.sqrt();
        let h = if denom > 0.0 {
            2.0 * d / denom
        } else {
            seg.len
        };
        seg.start + h.clamp(0.0, seg.len)
    }
}

/// `sum_{n >= 0} (-x)^n / (n + offset)!`, for small `x`.
fn alternating_exp_tail(x: f64, offset: u32) -> f64 {
    let mut term = 1.0 / (1..=offset).map(f64::from).product::<f64>();
    let mut sum = term;
    for n in 1..60 {
        term *= -x / f64::from(n + offset);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

#[derive(Debug, Clone, Copy)]
struct Exponential {
    lambda: f64,
    /// `1 - exp(-lambda)`.
    norm: f64,
}

impl Exponential {
    fn new(lambda: f64) -> Self {
        Exponential {
            lambda,
            norm: -(-lambda).exp_m1(),
        }
    }

    fn m0(&self, t: f64) -> f64 {
        (-(-self.lambda * t).exp_m1() / self.norm).min(1.0)
    }

    /// `(x - 1 + e^-x) / x^2`
    fn e2(x: f64) -> f64 {
        if x < 1.0 {
            alternating_exp_tail(x, 2)
        } else {
            (x - 1.0 + (-x).exp()) / (x * x)
        }
    }

    /// `(x^2/2 - x + 1 - e^-x) / x^3`
    fn e3(x: f64) -> f64 {
        if x < 1.0 {
            alternating_exp_tail(x, 3)
        } else {
            (x * x / 2.0 - x + 1.0 - (-x).exp()) / (x * x * x)
        }
    }

    fn m1(&self, t: f64) -> f64 {
        self.lambda / self.norm * t * t * Self::e2(self.lambda * t)
    }

    fn m2(&self, t: f64) -> f64 {
        self.lambda / self.norm * t * t * t * Self::e3(self.lambda * t)
    }

    fn inverse_m0(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return 1.0;
        }
        (-(-u * self.norm).ln_1p() / self.lambda).clamp(0.0, 1.0)
    }
}

mod ushaped {
    //! `mu(t) = (2k + 1)(2t - 1)^(2k)`, written with `n = 2k`.

    /// `(2t - 1)^m + 1` for odd `m`.
    fn odd_plus_one(m: u32, t: f64) -> f64 {
        if t < 0.5 {
            -(f64::from(m) * (-2.0 * t).ln_1p()).exp_m1()
        } else {
            1.0 + (2.0 * t - 1.0).powi(m as i32)
        }
    }

    /// `(2t - 1)^m - 1` for even `m`.
    fn even_minus_one(m: u32, t: f64) -> f64 {
        let r = (2.0 * t - 1.0).abs();
        (f64::from(m) * (r - 1.0).ln_1p()).exp_m1()
    }

    pub(super) fn m0(k: u32, t: f64) -> f64 {
        odd_plus_one(2 * k + 1, t) / 2.0
    }

    pub(super) fn m1(k: u32, t: f64) -> f64 {
        let m = 2 * k + 2;
        (t / 2.0 + even_minus_one(m, t) / (4.0 * f64::from(m))).max(0.0)
    }

    pub(super) fn m2(k: u32, t: f64) -> f64 {
        let m = f64::from(2 * k + 2);
        let v = t * t / 4.0 + odd_plus_one(2 * k + 3, t) / (8.0 * m * (m + 1.0)) - t / (4.0 * m);
        v.max(0.0)
    }

    pub(super) fn inverse_m0(k: u32, u: f64) -> f64 {
        let inv = 1.0 / f64::from(2 * k + 1);
        if u < 0.5 {
            -((-2.0 * u).ln_1p() * inv).exp_m1() / 2.0
        } else if u >= 1.0 {
            1.0
        } else {
            (1.0 + (2.0 * u - 1.0).powf(inv)) / 2.0
        }
    }
}
