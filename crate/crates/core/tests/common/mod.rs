//! Test-side oracles, written independently of the library's formulas.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One-sample Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value for a KS statistic `d` with `n` observations,
/// with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Chi-square homogeneity test of two binned samples; returns the p-value.
/// Bins empty in both samples are dropped.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut bins = 0;
    for (&x, &y) in a.iter().zip(b) {
        let total = (x + y) as f64;
        if total == 0.0 {
            continue;
        }
        bins += 1;
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dist = ChiSquared::new((bins - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

pub type Cdf = Box<dyn Fn(f64) -> f64>;

/// Lewis-Shedler thinning: a homogeneous process with rate `c * bound`,
/// each point kept with probability `mu(t) / bound`.
pub fn thinning(mu: &dyn Fn(f64) -> f64, bound: f64, c: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = Poisson::new(c * bound).unwrap().sample(rng) as usize;
    let mut out = Vec::new();
    for _ in 0..n {
        let t: f64 = rng.random();
        if rng.random::<f64>() * bound < mu(t) {
            out.push(t);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Cumulative distribution functions of the named kernels, transcribed
/// directly from the densities.
pub mod cdf {
    pub fn uniform(s: f64) -> impl Fn(f64) -> f64 {
        move |t| (t / s).min(1.0)
    }

    pub fn exponential(lambda: f64) -> impl Fn(f64) -> f64 {
        move |t| (1.0 - (-lambda * t).exp()) / (1.0 - (-lambda).exp())
    }

    pub fn triangular(a: f64) -> impl Fn(f64) -> f64 {
        move |t| {
            if t <= a {
                t * t / a
            } else {
                1.0 - (1.0 - t).powi(2) / (1.0 - a)
            }
        }
    }

    pub fn inverted_triangular(a: f64) -> impl Fn(f64) -> f64 {
        // Density 2(a - t)/a on [0, a] and 2(t - a)/(1 - a) on [a, 1].
        move |t| {
            if t <= a {
                (2.0 * a * t - t * t) / a
            } else {
                a + (t - a).powi(2) / (1.0 - a)
            }
        }
    }

    pub fn u_shaped(k: u32) -> impl Fn(f64) -> f64 {
        move |t| ((2.0 * t - 1.0).powi(2 * k as i32 + 1) + 1.0) / 2.0
    }
}

/// Densities matching [`cdf`].
pub mod density {
    pub fn uniform(s: f64) -> impl Fn(f64) -> f64 {
        move |t| if t <= s { 1.0 / s } else { 0.0 }
    }

    pub fn exponential(lambda: f64) -> impl Fn(f64) -> f64 {
        move |t| lambda * (-lambda * t).exp() / (1.0 - (-lambda).exp())
    }

    pub fn triangular(a: f64) -> impl Fn(f64) -> f64 {
        move |t| {
            if t <= a {
                2.0 * t / a
            } else {
                2.0 * (1.0 - t) / (1.0 - a)
            }
        }
    }

    pub fn inverted_triangular(a: f64) -> impl Fn(f64) -> f64 {
        move |t| {
            if t <= a {
                2.0 * (a - t) / a
            } else {
                2.0 * (t - a) / (1.0 - a)
            }
        }
    }

    pub fn u_shaped(k: u32) -> impl Fn(f64) -> f64 {
        move |t| (2 * k + 1) as f64 * (2.0 * t - 1.0).powi(2 * k as i32)
    }
}

/// Closed-form large-intensity values, transcribed as plain expressions.
pub mod formula {
    pub fn uniform_r2(s: f64) -> f64 {
        s - 2.0 * s * s / 3.0
    }

    pub fn uniform_a(s: f64) -> f64 {
        1.0 - (15.0 - 12.0 * s) / (40.0 * s * s - 108.0 * s + 75.0)
    }

    pub fn exponential_r2(l: f64) -> f64 {
        2.0 * (l.exp() * (l - 2.0) + l + 2.0) / ((l.exp() - 1.0) * l * l)
    }

    pub fn exponential_a(l: f64) -> f64 {
        let (c, s) = (l.cosh(), l.sinh());
        2.0 * ((l * l + 8.0) * c - 5.0 * l * s - 8.0)
            / (2.0 * (l * l - 8.0) + (3.0 * l * l + 16.0) * c - 13.0 * l * s)
    }

    pub fn triangular_r2(a: f64) -> f64 {
        (-a * a + a + 1.0) / 3.0
    }

    pub fn triangular_a(a: f64) -> f64 {
        let a2 = a * a;
        (15.0 * a2 * a2 - 30.0 * a2 * a + 9.0 * a2 + 6.0 * a + 3.0)
            / (11.0 * a2 * a2 - 22.0 * a2 * a + a2 + 10.0 * a + 5.0)
    }

    pub fn inverted_triangular_r2(a: f64) -> f64 {
        (a * a - a + 1.0) / 3.0
    }

    pub fn inverted_triangular_a(a: f64) -> f64 {
        let a2 = a * a;
        (37.0 * a2 * a2 - 74.0 * a2 * a + 11.0 * a2 + 26.0 * a - 15.0)
            / (a2 * a2 - 2.0 * a2 * a - 47.0 * a2 + 48.0 * a - 25.0)
    }

    pub fn u_shaped_r2(k: u32) -> f64 {
        1.0 / (3.0 + 2.0 * k as f64)
    }

    pub fn u_shaped_a(k: u32) -> f64 {
        let k = k as f64;
        4.0 * (2.0 * k * k + 4.0 * k + 3.0) / (20.0 * k * k + 40.0 * k + 21.0)
    }
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn gauss5(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * f(m + h * x))
        .sum::<f64>()
        * h
}

/// Large-intensity `(r2, A)` from bridge second moments alone.
///
/// With `K(s, t) = min(s, t)(1 - max(s, t))` the limiting tensor has
/// `E[trace] = 2m` and `A = 2I / (m^2 + I)`, where `m = int mu K(t, t)` and
/// `I = int int mu(s) mu(t) K(s, t)^2`. Integrals use 5-point Gauss-Legendre
/// on `panels` equal panels between consecutive `cuts`, which is exact for
/// piecewise polynomial densities when the cuts include every kink.
pub fn second_moment_oracle(mu: impl Fn(f64) -> f64, cuts: &[f64], panels: usize) -> (f64, f64) {
    let mut edges = vec![0.0];
    edges.extend(cuts.iter().copied().filter(|&c| c > 0.0 && c < 1.0));
    edges.push(1.0);
    let mut grid = Vec::new();
    for w in edges.windows(2) {
        for p in 0..panels {
            grid.push(w[0] + (w[1] - w[0]) * p as f64 / panels as f64);
        }
    }
    grid.push(1.0);

    let m: f64 = grid
        .windows(2)
        .map(|w| gauss5(|t| mu(t) * t * (1.0 - t), w[0], w[1]))
        .sum();

    // I = 2 int_0^1 mu(t) (1 - t)^2 G(t) dt with G(t) = int_0^t mu(s) s^2 ds.
    let s2 = |s: f64| mu(s) * s * s;
    let mut g_left = 0.0;
    let mut i_total = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let g = |t: f64| g_left + gauss5(s2, a, t);
        i_total += gauss5(|t| mu(t) * (1.0 - t).powi(2) * g(t), a, b);
        g_left += gauss5(s2, a, b);
    }
    let i = 2.0 * i_total;
    (2.0 * m, 2.0 * i / (m * m + i))
}
