//! Material constants, oven air-temperature profiles, nondimensional scaling,
//! and the separation-of-variables series solution used as an independent oracle.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Thermal properties of the heated part. SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps {
    /// Conductivity, W/(m·K).
    pub k: f64,
    /// Density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg·K).
    pub cp: f64,
}

impl MaterialProps {
    pub fn new(k: f64, rho: f64, cp: f64) -> Result<Self> {
        if !(k > 0.0 && rho > 0.0 && cp > 0.0) {
            return Err(CoreError::contract(format!(
                "material properties must be strictly positive, got k={k}, rho={rho}, cp={cp}"
            )));
        }
        Ok(Self { k, rho, cp })
    }

    /// Thermal diffusivity α = k / (ρ·cp), m²/s.
    pub fn diffusivity(&self) -> f64 {
        self.k / (self.rho * self.cp)
    }
}

/// One segment of a piecewise-linear air-temperature cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSegment {
    /// Ramp at `rate` °C/min toward `target` °C; duration is implied.
    Ramp { rate: f64, target: f64 },
    /// Hold the current temperature for `minutes`.
    Hold { minutes: f64 },
}

/// Piecewise-linear oven air temperature T∞(t). Times in minutes, temps in °C.
///
/// The profile is continuous. After the last segment the temperature holds at
/// its final value until `total_minutes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirProfile {
    pub start_temp: f64,
    pub segments: Vec<ProfileSegment>,
    pub total_minutes: f64,
    /// Breakpoints (t_min, temp) derived from the segments; first is (0, start_temp).
    #[serde(skip)]
    breakpoints: Vec<(f64, f64)>,
}

impl AirProfile {
    pub fn new(start_temp: f64, segments: Vec<ProfileSegment>, total_minutes: f64) -> Result<Self> {
        let mut breakpoints = vec![(0.0, start_temp)];
        let (mut t, mut temp) = (0.0_f64, start_temp);
        for seg in &segments {
            match *seg {
                ProfileSegment::Ramp { rate, target } => {
                    if !(rate > 0.0) {
                        return Err(CoreError::contract("ramp rate must be > 0"));
                    }
                    let dt = (target - temp).abs() / rate;
                    if dt <= 0.0 {
                        return Err(CoreError::contract("ramp target equals current temperature"));
                    }
                    t += dt;
                    temp = target;
                }
                ProfileSegment::Hold { minutes } => {
                    if !(minutes > 0.0) {
                        return Err(CoreError::contract("hold duration must be > 0"));
                    }
                    t += minutes;
                }
            }
            breakpoints.push((t, temp));
        }
        if total_minutes < t - 1e-9 {
            return Err(CoreError::contract(format!(
                "total_minutes {total_minutes} ends before the last segment at {t} min"
            )));
        }
        Ok(Self {
            start_temp,
            segments,
            total_minutes,
            breakpoints,
        })
    }

    /// The ramp-and-hold cycle used throughout: ramp at `rate` °C/min from
    /// `start` to `hold_temp`, then hold until `total_minutes`.
    pub fn ramp_hold(start: f64, rate: f64, hold_temp: f64, total_minutes: f64) -> Result<Self> {
        Self::new(
            start,
            vec![ProfileSegment::Ramp {
                rate,
                target: hold_temp,
            }],
            total_minutes,
        )
    }

    pub fn constant(temp: f64, total_minutes: f64) -> Result<Self> {
        if !(total_minutes > 0.0) {
            return Err(CoreError::contract("total_minutes must be > 0"));
        }
        Ok(Self {
            start_temp: temp,
            segments: Vec::new(),
            total_minutes,
            breakpoints: vec![(0.0, temp)],
        })
    }

    /// Rebuild the derived breakpoints, e.g. after deserializing.
    pub fn rebuilt(self) -> Result<Self> {
        Self::new(self.start_temp, self.segments, self.total_minutes)
    }

    /// Air temperature at `t_min` minutes. Errors outside [0, total_minutes].
    pub fn temperature(&self, t_min: f64) -> Result<f64> {
        if !(0.0..=self.total_minutes + 1e-12).contains(&t_min) || !t_min.is_finite() {
            return Err(CoreError::domain(format!(
                "air profile queried at t = {t_min} min outside [0, {}]",
                self.total_minutes
            )));
        }
        let bp = &self.breakpoints;
        let last = bp[bp.len() - 1];
        if t_min >= last.0 {
            return Ok(last.1);
        }
        // Linear interpolation within the containing segment; exact at endpoints.
        let idx = bp.partition_point(|&(bt, _)| bt <= t_min);
        let (t0, v0) = bp[idx - 1];
        let (t1, v1) = bp[idx];
        if t_min == t0 {
            return Ok(v0);
        }
        Ok(v0 + (v1 - v0) * (t_min - t0) / (t1 - t0))
    }

    /// Times (minutes) where the slope of T∞ changes, always including t = 0.
    pub fn kink_times(&self) -> Vec<f64> {
        let bp = &self.breakpoints;
        let mut kinks = vec![0.0];
        let slope = |i: usize| -> f64 {
            // slope of the interval starting at breakpoint i; flat after the end
            if i + 1 < bp.len() {
                (bp[i + 1].1 - bp[i].1) / (bp[i + 1].0 - bp[i].0)
            } else {
                0.0
            }
        };
        for i in 1..bp.len() {
            let before = slope(i - 1);
            let after = if bp[i].0 >= self.total_minutes {
                before // breakpoint at the very end: no interval after it
            } else {
                slope(i)
            };
            if (before - after).abs() > 1e-12 {
                kinks.push(bp[i].0);
            }
        }
        kinks
    }

    /// Extremes of T∞ over [0, t_end_min], used for solution bounds.
    pub fn range(&self, t_end_min: f64) -> (f64, f64) {
        let mut lo = self.start_temp;
        let mut hi = self.start_temp;
        for &(bt, bv) in &self.breakpoints {
            if bt <= t_end_min {
                lo = lo.min(bv);
                hi = hi.max(bv);
            }
        }
        // value at t_end itself (mid-segment or in the trailing hold)
        if let Ok(v) = self.temperature(t_end_min.min(self.total_minutes)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }
}

/// Part geometry; 1D uses only `lx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Thickness / x-extent, m.
    pub lx: f64,
    /// y-extent for 2D problems, m.
    pub ly: Option<f64>,
}

impl Geometry {
    pub fn one_d(lx: f64) -> Result<Self> {
        if !(lx > 0.0) {
            return Err(CoreError::contract("length must be > 0"));
        }
        Ok(Self { lx, ly: None })
    }

    pub fn two_d(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(CoreError::contract("lengths must be > 0"));
        }
        Ok(Self { lx, ly: Some(ly) })
    }

    pub fn dimensionality(&self) -> usize {
        if self.ly.is_some() {
            2
        } else {
            1
        }
    }
}

/// Reference quantities mapping the physical problem onto the unit box the
/// network is trained in: x̂ = x/lx, ŷ = y/ly, t̂ = t/time_ref, T̂ = T/temp_ref,
/// ĥ = h/h_ref.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// x length reference, m.
    pub length_ref_x: f64,
    /// y length reference for 2D, m.
    pub length_ref_y: Option<f64>,
    /// Time reference (the training window), s.
    pub time_ref: f64,
    /// Temperature reference (typically the hold temperature), °C.
    pub temp_ref: f64,
    /// Heat-transfer-coefficient reference, W/(m²·K).
    pub h_ref: f64,
}

impl Scaling {
    pub fn validate(&self) -> Result<()> {
        let ok = self.length_ref_x > 0.0
            && self.length_ref_y.map_or(true, |l| l > 0.0)
            && self.time_ref > 0.0
            && self.temp_ref > 0.0
            && self.h_ref > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::contract("scaling references must be strictly positive"))
        }
    }

    pub fn x_hat(&self, x_m: f64) -> f64 {
        x_m / self.length_ref_x
    }

    pub fn y_hat(&self, y_m: f64) -> f64 {
        y_m / self.length_ref_y.expect("scaling has no y reference")
    }

    pub fn t_hat(&self, t_s: f64) -> f64 {
        t_s / self.time_ref
    }

    pub fn h_hat(&self, h: f64) -> f64 {
        h / self.h_ref
    }

    pub fn temp_hat(&self, temp_c: f64) -> f64 {
        temp_c / self.temp_ref
    }

    pub fn temp_c(&self, temp_hat: f64) -> f64 {
        temp_hat * self.temp_ref
    }

    pub fn x_m(&self, x_hat: f64) -> f64 {
        x_hat * self.length_ref_x
    }

    pub fn t_s(&self, t_hat: f64) -> f64 {
        t_hat * self.time_ref
    }
}

/// Finite truncation of the insulated-slab cosine series
/// T(x,t) = T0 + (TMax − T0) Σ A_n exp(−α (nπ/L)² t) cos(nπ x / L).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSolution {
    pub base_temp: f64,
    pub peak_temp: f64,
    /// (mode index n ≥ 0, weight A_n); indices distinct.
    pub mode_weights: Vec<(u32, f64)>,
}

impl SeriesSolution {
    pub fn single_mode(base_temp: f64, peak_temp: f64, n: u32, weight: f64) -> Self {
        Self {
            base_temp,
            peak_temp,
            mode_weights: vec![(n, weight)],
        }
    }

    /// Project an initial profile f(x) on [0, L] onto the cosine basis.
    /// A_n = (2 − δ_n0)/L ∫ (f(x) − T0)/(TMax − T0) · cos(nπx/L) dx,
    /// evaluated with composite Simpson quadrature.
    pub fn fit_initial<F: Fn(f64) -> f64>(
        base_temp: f64,
        peak_temp: f64,
        length: f64,
        init: F,
        modes: usize,
    ) -> Result<Self> {
        if peak_temp == base_temp {
            return Err(CoreError::contract("peak_temp must differ from base_temp"));
        }
        let n_panels = 2000usize; // even
        let h = length / n_panels as f64;
        let mut mode_weights = Vec::with_capacity(modes);
        for n in 0..modes as u32 {
            let integrand = |x: f64| {
                let g = (init(x) - base_temp) / (peak_temp - base_temp);
                g * (n as f64 * PI * x / length).cos()
            };
            let mut acc = integrand(0.0) + integrand(length);
            for i in 1..n_panels {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * integrand(i as f64 * h);
            }
            let integral = acc * h / 3.0;
            let factor = if n == 0 { 1.0 } else { 2.0 };
            mode_weights.push((n, factor * integral / length));
        }
        Ok(Self {
            base_temp,
            peak_temp,
            mode_weights,
        })
    }

    /// Evaluate the truncated series at position `x` (m) and time `t` (s).
    pub fn evaluate(&self, props: &MaterialProps, length: f64, x: f64, t: f64) -> f64 {
        let alpha = props.diffusivity();
        let mut sum = 0.0;
        for &(n, a_n) in &self.mode_weights {
            let wave = n as f64 * PI / length;
            sum += a_n * (-alpha * wave * wave * t).exp() * (wave * x).cos();
        }
        self.base_temp + (self.peak_temp - self.base_temp) * sum
    }
}

/// α = k/(ρ·cp). See [`MaterialProps::diffusivity`].
pub fn thermal_diffusivity(props: &MaterialProps) -> f64 {
    props.diffusivity()
}
