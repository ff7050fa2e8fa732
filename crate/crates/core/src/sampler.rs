//! Exact simulation of tracked two-dimensional Brownian bridges.
//!
//! Observation times are the arrivals of a Poisson process with intensity
//! `c * mu(t)`. Given the current arrival `T_k`, the next one has conditional
//! distribution `P(t) = 1 - exp(-c (M0(t) - M0(T_k)))`, so it is obtained by
//! inversion as `M0^-1(M0(T_k) - ln(1 - U) / c)`, or the walk ends when that
//! argument passes one. Bridge positions are then built from Gaussian
//! increments of two independent Brownian motions, pinned with
//! `B(t) - t B(1)`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytic::ScalingParams;
use crate::kernel::Kernel;
use crate::rng::RngStream;
use crate::{Error, Result};

/// Observation times `S ∪ {0, 1}`, sorted and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArrivalTimes {
    times: Vec<f64>,
}

impl ArrivalTimes {
    /// Wraps a full time list, endpoints included.
    pub fn new(times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        if n < 2 || times[0] != 0.0 || times[n - 1] != 1.0 {
            return Err(Error::Domain(
                "arrival times must start at 0 and end at 1".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "arrival times must be strictly increasing".into(),
            ));
        }
        Ok(ArrivalTimes { times })
    }

    /// Builds arrivals from interior times in `(0, 1)`, which must already
    /// be strictly increasing.
    pub fn from_interior(interior: &[f64]) -> Result<Self> {
        let mut times = Vec::with_capacity(interior.len() + 2);
        times.push(0.0);
        times.extend_from_slice(interior);
        times.push(1.0);
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Interior observation times, endpoints excluded.
    pub fn interior(&self) -> &[f64] {
        &self.times[1..self.times.len() - 1]
    }

    /// `|S|`.
    pub fn interior_count(&self) -> usize {
        self.times.len() - 2
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Bridge positions at every observation time; pinned to the origin at both
/// endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedBridge {
    #[serde(rename = "t")]
    arrivals: ArrivalTimes,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TrackedBridge {
    pub fn new(arrivals: ArrivalTimes, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = arrivals.len();
        if x.len() != n || y.len() != n {
            return Err(Error::Domain(format!(
                "positions have lengths {} and {}, expected {n}",
                x.len(),
                y.len()
            )));
        }
        if x[0] != 0.0 || y[0] != 0.0 || x[n - 1] != 0.0 || y[n - 1] != 0.0 {
            return Err(Error::Domain(
                "bridge must be pinned to the origin at both ends".into(),
            ));
        }
        Ok(TrackedBridge { arrivals, x, y })
    }

    pub fn arrivals(&self) -> &ArrivalTimes {
        &self.arrivals
    }

    pub fn times(&self) -> &[f64] {
        self.arrivals.times()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Interior observed positions.
    pub fn interior_points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        let n = self.len();
        self.x[1..n - 1]
            .iter()
            .zip(&self.y[1..n - 1])
            .map(|(&x, &y)| [x, y])
    }

    /// Same observation times, new positions. Endpoints are re-pinned.
    pub(crate) fn with_positions(&self, mut x: Vec<f64>, mut y: Vec<f64>) -> Self {
        let n = x.len();
        for v in [&mut x, &mut y] {
            v[0] = 0.0;
            v[n - 1] = 0.0;
        }
        TrackedBridge {
            arrivals: self.arrivals.clone(),
            x,
            y,
        }
    }

    /// The same sample path seen on `[0, T]` with volatility `sigma`: times
    /// are multiplied by `T` and positions by `sigma sqrt(T)`.
    pub fn stretched(&self, scale: ScalingParams) -> StretchedBridge {
        let pos = scale.sigma() * scale.horizon().sqrt();
        StretchedBridge {
            t: self.times().iter().map(|t| t * scale.horizon()).collect(),
            x: self.x.iter().map(|v| v * pos).collect(),
            y: self.y.iter().map(|v| v * pos).collect(),
        }
    }

    /// CSV with header `t,x,y`, one row per observation time.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "y"])?;
        for ((t, x), y) in self.times().iter().zip(&self.x).zip(&self.y) {
            w.write_record([t.to_string(), x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON object `{"t": [...], "x": [...], "y": [...]}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// A tracked bridge on `[0, T]`; see [`TrackedBridge::stretched`].
#[derive(Debug, Clone, PartialEq)]
pub struct StretchedBridge {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn check_intensity(c: f64) -> Result<()> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "intensity must be finite and nonnegative, got {c}"
        )))
    }
}

/// Draws the observation times of one tracked bridge.
///
/// The cumulative mass `M0(T_k)` is carried forward exactly instead of being
/// recomputed from `T_k`, which keeps flat stretches of `M0` from stalling the
/// recursion.
pub fn sample_arrivals(kernel: &Kernel, c: f64, rng: &mut RngStream) -> Result<ArrivalTimes> {
    check_intensity(c)?;
    let mut times = Vec::with_capacity(if c > 0.0 { (c * 1.1) as usize + 8 } else { 2 });
    times.push(0.0);
    if c > 0.0 {
        let mut mass = 0.0;
        let mut last = 0.0;
        loop {
            // U in [0, 1), so ln(1 - U) is finite.
            let u: f64 = rng.random();
            mass += -(-u).ln_1p() / c;
            if mass > 1.0 {
                break;
            }
            let t = kernel.inverse_m0(mass);
            if t >= 1.0 {
                break;
            }
            // A zero-length step (U == 0 or rounding at huge c) would
            // duplicate the previous time; the event has probability zero.
            if t > last {
                times.push(t);
                last = t;
            }
        }
    }
    times.push(1.0);
    Ok(ArrivalTimes { times })
}

/// Positions of a two-dimensional Brownian bridge at the given times.
pub fn sample_bridge(arrivals: &ArrivalTimes, rng: &mut RngStream) -> TrackedBridge {
    let times = arrivals.times();
    let n = times.len();
    let mut bx = Vec::with_capacity(n);
    let mut by = Vec::with_capacity(n);
    let (mut wx, mut wy) = (0.0f64, 0.0f64);
    bx.push(0.0);
    by.push(0.0);
    for w in times.windows(2) {
        let sd = (w[1] - w[0]).sqrt();
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        wx += sd * zx;
        wy += sd * zy;
        bx.push(wx);
        by.push(wy);
    }
    let (end_x, end_y) = (wx, wy);
    for (k, &t) in times.iter().enumerate() {
        bx[k] -= t * end_x;
        by[k] -= t * end_y;
    }
    bx[n - 1] = 0.0;
    by[n - 1] = 0.0;
    TrackedBridge {
        arrivals: arrivals.clone(),
        x: bx,
        y: by,
    }
}

/// Arrivals and positions from a single stream.
pub fn sample_tracked_bridge(
    kernel: &Kernel,
    c: f64,
    rng: &mut RngStream,
) -> Result<TrackedBridge> {
    let arrivals = sample_arrivals(kernel, c, rng)?;
    Ok(sample_bridge(&arrivals, rng))
}
