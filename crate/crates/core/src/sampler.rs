//! Per-epoch random collocation batches, with a configurable share of each
//! batch placed near the air-profile kinks (including t = 0) where training
//! accuracy otherwise suffers.

use crate::autodiff::InputPoint;
use crate::error::{CoreError, Result};
use crate::loss::{CollocationBatch, SideId};
use crate::physics::{AirProfile, Geometry, Scaling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How boundary coefficients are attached to sampled points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HMode {
    /// Every point carries these physical h values exactly (two-input mode).
    Fixed { h1: f64, h2: f64 },
    /// h1 and h2 drawn log-uniformly from [lo, hi] W/(m²·K) per point
    /// (h-as-inputs mode; log-uniform because h enters the residual as 1/h).
    LogUniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Points per loss term per epoch.
    pub batch_per_term: usize,
    /// Share of each time-carrying list drawn near a kink.
    pub densify_fraction: f64,
    /// Half-width of the kink window in nondimensional time.
    pub kink_window: f64,
    pub h_mode: HMode,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_per_term == 0 {
            return Err(CoreError::contract("batch_per_term must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.densify_fraction) {
            return Err(CoreError::contract("densify_fraction must be in [0, 1)"));
        }
        if !(self.kink_window > 0.0) {
            return Err(CoreError::contract("kink_window must be > 0"));
        }
        if let HMode::LogUniform { lo, hi } = self.h_mode {
            if !(lo > 0.0 && hi > lo) {
                return Err(CoreError::contract("h range needs 0 < lo < hi"));
            }
        }
        if let HMode::Fixed { h1, h2 } = self.h_mode {
            if !(h1 > 0.0 && h2 > 0.0) {
                return Err(CoreError::contract("fixed h values must be > 0"));
            }
        }
        Ok(())
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_per_term: 150,
            densify_fraction: 0.3,
            kink_window: 0.05,
            h_mode: HMode::LogUniform { lo: 20.0, hi: 200.0 },
            seed: 0,
        }
    }
}

/// Stream cipher seeded by (seed, epoch) through a splitmix finalizer, so
/// every epoch gets an independent, reproducible stream.
fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut z = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Draw one epoch's collocation batch. Deterministic given (config.seed, epoch).
pub fn sample_batch(
    config: &SamplerConfig,
    geometry: &Geometry,
    profile: &AirProfile,
    scaling: &Scaling,
    epoch: u64,
) -> Result<CollocationBatch> {
    config.validate()?;
    scaling.validate()?;
    let two_d = geometry.dimensionality() == 2;
    let mut rng = epoch_rng(config.seed, epoch);

    // kink times in nondimensional units, clipped to the training window
    let kinks: Vec<f64> = profile
        .kink_times()
        .iter()
        .map(|k| k * 60.0 / scaling.time_ref)
        .filter(|k| *k <= 1.0)
        .collect();
    let kinks = if kinks.is_empty() { vec![0.0] } else { kinks };

    let b = config.batch_per_term;
    let densified = (config.densify_fraction * b as f64).round() as usize;

    let mut draw_t = |rng: &mut ChaCha8Rng, index: usize| -> f64 {
        if index < densified {
            let kink = kinks[rng.gen_range(0..kinks.len())];
            let offset = config.kink_window * (2.0 * rng.gen::<f64>() - 1.0);
            (kink + offset).clamp(0.0, 1.0)
        } else {
            rng.gen::<f64>()
        }
    };
    let h_ref = scaling.h_ref;
    let draw_h = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        match config.h_mode {
            HMode::Fixed { h1, h2 } => (h1 / h_ref, h2 / h_ref),
            HMode::LogUniform { lo, hi } => {
                let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
                let a = (ln_lo + (ln_hi - ln_lo) * rng.gen::<f64>()).exp() / h_ref;
                let b = (ln_lo + (ln_hi - ln_lo) * rng.gen::<f64>()).exp() / h_ref;
                (a, b)
            }
        }
    };

    let mut interior = Vec::with_capacity(b);
    for i in 0..b {
        let x = rng.gen::<f64>();
        let y = two_d.then(|| rng.gen::<f64>());
        let t = draw_t(&mut rng, i);
        let (h1, h2) = draw_h(&mut rng);
        interior.push(InputPoint { x, y, t, h1, h2 });
    }

    let side_ids: &[SideId] = if two_d {
        &[SideId::X0, SideId::X1, SideId::Y0, SideId::Y1]
    } else {
        &[SideId::X0, SideId::X1]
    };
    let mut sides = Vec::with_capacity(side_ids.len());
    for &side in side_ids {
        let mut pts = Vec::with_capacity(b);
        for i in 0..b {
            // the pinned coordinate is bit-exact 0 or 1
            let (x, y) = match side {
                SideId::X0 => (0.0, two_d.then(|| rng.gen::<f64>())),
                SideId::X1 => (1.0, two_d.then(|| rng.gen::<f64>())),
                SideId::Y0 => (rng.gen::<f64>(), Some(0.0)),
                SideId::Y1 => (rng.gen::<f64>(), Some(1.0)),
            };
            let t = draw_t(&mut rng, i);
            let (h1, h2) = draw_h(&mut rng);
            pts.push(InputPoint { x, y, t, h1, h2 });
        }
        sides.push((side, pts));
    }

    let mut initial = Vec::with_capacity(b);
    for _ in 0..b {
        let x = rng.gen::<f64>();
        let y = two_d.then(|| rng.gen::<f64>());
        let (h1, h2) = draw_h(&mut rng);
        initial.push(InputPoint { x, y, t: 0.0, h1, h2 });
    }

    Ok(CollocationBatch { interior, sides, initial })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaling() -> Scaling {
        Scaling {
            length_ref_x: 0.01,
            length_ref_y: None,
            time_ref: 900.0,
            temp_ref: 50.0,
            h_ref: 100.0,
        }
    }

    fn geometry() -> Geometry {
        Geometry::one_d(0.01).unwrap()
    }

    fn profile() -> AirProfile {
        AirProfile::ramp_hold(0.0, 5.0, 50.0, 15.0).unwrap()
    }

    fn config(densify: f64, batch: usize) -> SamplerConfig {
        SamplerConfig {
            batch_per_term: batch,
            densify_fraction: densify,
            kink_window: 0.05,
            h_mode: HMode::LogUniform { lo: 20.0, hi: 200.0 },
            seed: 7,
        }
    }

    #[test]
    fn reproducible_per_seed_and_epoch() {
        let cfg = config(0.3, 150);
        let a = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 12).unwrap();
        let b = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 12).unwrap();
        assert_eq!(a, b);
        let c = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 13).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn boundary_coordinates_are_bit_exact() {
        let cfg = config(0.3, 200);
        let batch = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 5).unwrap();
        for (side, pts) in &batch.sides {
            for p in pts {
                match side {
                    SideId::X0 => assert_eq!(p.x.to_bits(), 0.0_f64.to_bits()),
                    SideId::X1 => assert_eq!(p.x.to_bits(), 1.0_f64.to_bits()),
                    _ => unreachable!("1D batch"),
                }
            }
        }
        for p in &batch.initial {
            assert_eq!(p.t.to_bits(), 0.0_f64.to_bits());
        }
    }

    #[test]
    fn undensified_time_distribution_is_uniform() {
        // Kolmogorov–Smirnov statistic of interior t̂ over 10⁴ points < 0.05
        let cfg = config(0.0, 10_000);
        let batch = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 0).unwrap();
        let mut ts: Vec<f64> = batch.interior.iter().map(|p| p.t).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = ts.len() as f64;
        let mut ks = 0.0_f64;
        for (i, t) in ts.iter().enumerate() {
            let ecdf_hi = (i + 1) as f64 / n;
            let ecdf_lo = i as f64 / n;
            ks = ks.max((ecdf_hi - t).abs()).max((t - ecdf_lo).abs());
        }
        assert!(ks < 0.05, "KS statistic {ks}");
    }

    #[test]
    fn densified_fraction_lands_near_kinks() {
        let cfg = config(0.3, 10_000);
        let batch = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 3).unwrap();
        // kinks at t̂ = 0 and t̂ = 600 s / 900 s = 2/3
        let kinks = [0.0, 600.0 / 900.0];
        let w = cfg.kink_window;
        let near = batch
            .interior
            .iter()
            .filter(|p| kinks.iter().any(|k| (p.t - k).abs() <= w))
            .count();
        assert!(
            near as f64 >= 0.25 * batch.interior.len() as f64,
            "only {near} of {} near kinks",
            batch.interior.len()
        );
    }

    #[test]
    fn fixed_h_mode_pins_coefficients() {
        let cfg = SamplerConfig {
            h_mode: HMode::Fixed { h1: 100.0, h2: 50.0 },
            ..config(0.3, 64)
        };
        let batch = sample_batch(&cfg, &geometry(), &profile(), &scaling(), 2).unwrap();
        for p in batch
            .interior
            .iter()
            .chain(batch.initial.iter())
            .chain(batch.sides.iter().flat_map(|(_, pts)| pts))
        {
            assert_eq!(p.h1, 1.0);
            assert_eq!(p.h2, 0.5);
        }
    }

    #[test]
    fn two_d_batches_cover_four_sides() {
        let cfg = config(0.2, 32);
        let geo = Geometry::two_d(0.06, 0.02).unwrap();
        let sc = Scaling {
            length_ref_y: Some(0.02),
            length_ref_x: 0.06,
            ..scaling()
        };
        let batch = sample_batch(&cfg, &geo, &profile(), &sc, 1).unwrap();
        assert_eq!(batch.sides.len(), 4);
        for (side, pts) in &batch.sides {
            for p in pts {
                match side {
                    SideId::X0 => assert_eq!(p.x, 0.0),
                    SideId::X1 => assert_eq!(p.x, 1.0),
                    SideId::Y0 => assert_eq!(p.y.unwrap(), 0.0),
                    SideId::Y1 => assert_eq!(p.y.unwrap(), 1.0),
                }
            }
            assert_eq!(pts.len(), 32);
        }
    }

    #[test]
    fn sampled_points_satisfy_invariants() {
        let cfg = config(0.4, 500);
        for epoch in 0..20 {
            let batch = sample_batch(&cfg, &geometry(), &profile(), &scaling(), epoch).unwrap();
            for p in batch
                .interior
                .iter()
                .chain(batch.initial.iter())
                .chain(batch.sides.iter().flat_map(|(_, pts)| pts))
            {
                p.validate().unwrap();
                assert!((0.0..=1.0).contains(&p.x));
                assert!((0.0..=1.0).contains(&p.t));
                assert!(p.h1 >= 0.2 && p.h1 <= 2.0);
            }
        }
    }
}
