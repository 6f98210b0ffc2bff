//! Maps a target compression rate β to a (ρ, L) plan.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_update, quantize, sparsify, dequantize, CompressionPlan, UpdateHeader, MAX_LEVELS};
use crate::error::{Error, Result};
use crate::model::GradientUpdate;
use crate::rng::{self, Purpose};

/// Measured grid plus the Pareto curve derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePredictor {
    /// `(rho, L, measured ratio)` for every grid point
    pub points: Vec<(f64, u16, f64)>,
    /// `(beta, rho, L)` with strictly increasing beta
    pub curve: Vec<(f64, f64, u16)>,
}

impl RatePredictor {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.curve.is_empty() {
            return Err(Error::InvalidArgument("predictor curve is empty".into()));
        }
        for w in self.curve.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument("predictor curve betas not increasing".into()));
            }
        }
        for &(beta, rho, l) in &self.curve {
            if !(beta > 0.0 && beta.is_finite()) || !(0.0..1.0).contains(&rho) || l == 0 {
                return Err(Error::InvalidArgument(format!(
                    "bad curve point ({beta}, {rho}, {l})"
                )));
            }
        }
        Ok(())
    }
}

/// `rho = 1 - sqrt(beta)`, `L = round(2^(32 sqrt(beta)))` clamped to the
/// representable range.
pub fn analytic_plan(beta: f64) -> CompressionPlan {
    let s = beta.clamp(0.0, 1.0).sqrt();
    let levels = 2f64.powf(32.0 * s).round().clamp(1.0, MAX_LEVELS as f64) as u16;
    CompressionPlan {
        rho: (1.0 - s).max(0.0),
        levels,
    }
}

/// Default calibration grid: dense sparsity near 1, power-of-two levels.
pub fn default_grid() -> Vec<CompressionPlan> {
    let mut rhos: Vec<f64> = (0..19).map(|i| i as f64 * 0.05).collect();
    rhos.extend([0.92, 0.94, 0.96, 0.97, 0.98, 0.99]);
    let mut levels: Vec<u16> = (0..16).map(|e| 1u16 << e).collect();
    levels.push(MAX_LEVELS);
    rhos.iter()
        .flat_map(|&rho| levels.iter().map(move |&l| CompressionPlan { rho, levels: l }))
        .collect()
}

struct Measurement {
    plan: CompressionPlan,
    ratio: f64,
    distortion: f64,
}

fn measure(samples: &[GradientUpdate], plan: CompressionPlan, seed: u64, index: u64) -> Result<Measurement> {
    let mut ratio = 0.0;
    let mut distortion = 0.0;
    for (s, u) in samples.iter().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Calibrate, index, s as u64);
        let sparse = sparsify(u, plan.rho)?;
        let shapes = u.shapes();
        let q = quantize(&sparse, plan.levels, &mut rng)?;
        let header = UpdateHeader {
            alpha: 1.0,
            beta: 1.0,
            shapes: shapes.clone(),
        };
        let bits = encode_update(&q, &header)?.size_bits();
        ratio += bits as f64 / (32.0 * u.len() as f64);
        let back = dequantize(&q, &shapes)?;
        let err: f64 = u
            .values()
            .zip(back.values())
            .map(|(a, b)| (a as f64 - b as f64).powi(2))
            .sum();
        distortion += err / u.norm_sq();
    }
    let n = samples.len() as f64;
    Ok(Measurement {
        plan,
        ratio: ratio / n,
        distortion: distortion / n,
    })
}

/// Encodes every sample at every grid point and keeps the Pareto frontier of
/// (ratio, relative distortion) as the prediction curve.
pub fn calibrate_predictor(
    samples: &[GradientUpdate],
    grid: &[CompressionPlan],
    seed: u64,
) -> Result<RatePredictor> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples("calibration needs at least one sample".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("calibration grid is empty".into()));
    }
    for p in grid {
        if !(0.0..1.0).contains(&p.rho) || p.levels == 0 {
            return Err(Error::InvalidArgument(format!("bad grid point {p:?}")));
        }
    }
    if samples.iter().any(|u| u.norm_sq() == 0.0) {
        return Err(Error::EmptyUpdate);
    }
    let measured: Vec<Measurement> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &plan)| measure(samples, plan, seed, i as u64))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..measured.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&measured[a], &measured[b]);
        ma.ratio
            .total_cmp(&mb.ratio)
            .then(ma.distortion.total_cmp(&mb.distortion))
            .then(a.cmp(&b))
    });
    let mut curve = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        let m = &measured[i];
        if m.distortion < best {
            best = m.distortion;
            curve.push((m.ratio, m.plan.rho, m.plan.levels));
        }
    }
    Ok(RatePredictor {
        points: measured
            .iter()
            .map(|m| (m.plan.rho, m.plan.levels, m.ratio))
            .collect(),
        curve,
    })
}

/// Plan for target `beta`: interpolated along the calibrated curve (ρ
/// linearly, L geometrically), clamped to its ends, or the analytic plan
/// when no predictor is given.
pub fn plan_from_beta(pred: Option<&RatePredictor>, beta: f64) -> Result<CompressionPlan> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("compression rate {beta} must be > 0")));
    }
    let Some(pred) = pred else {
        return Ok(analytic_plan(beta));
    };
    let curve = &pred.curve;
    let to_plan = |&(_, rho, levels): &(f64, f64, u16)| CompressionPlan { rho, levels };
    let first = curve.first().ok_or_else(|| Error::InvalidArgument("empty predictor".into()))?;
    let last = curve.last().expect("non-empty");
    if beta <= first.0 {
        return Ok(to_plan(first));
    }
    if beta >= last.0 {
        return Ok(to_plan(last));
    }
    let hi = curve.partition_point(|p| p.0 <= beta);
    let (a, b) = (&curve[hi - 1], &curve[hi]);
    if beta == a.0 {
        return Ok(to_plan(a));
    }
    let t = (beta - a.0) / (b.0 - a.0);
    let rho = a.1 + t * (b.1 - a.1);
    let ln_l = (a.2 as f64).ln() + t * ((b.2 as f64).ln() - (a.2 as f64).ln());
    Ok(CompressionPlan {
        rho: rho.clamp(0.0, 1.0 - 1e-12),
        levels: ln_l.exp().round().clamp(1.0, MAX_LEVELS as f64) as u16,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample(seed: u64, shapes: &[(usize, usize)]) -> GradientUpdate {
        let mut rng = rng::stream(seed, Purpose::Data, 0, 0);
        let mut u = GradientUpdate::zeros_like(shapes, 0.1);
        for l in &mut u.layers {
            for v in &mut l.data {
                *v = rng.gen_range(-1.0f32..1.0);
            }
        }
        u
    }

    #[test]
    fn analytic_examples() {
        let p = analytic_plan(1.0);
        assert_eq!(p.rho, 0.0);
        assert_eq!(p.levels, MAX_LEVELS);
        let p = analytic_plan(1.0 / 16.0);
        assert_eq!(p.rho, 0.75);
        assert_eq!(p.levels, 256);
        assert_eq!(plan_from_beta(None, 1.0 / 16.0).unwrap(), p);
        assert!(plan_from_beta(None, 0.0).is_err());
        assert!(plan_from_beta(None, -1.0).is_err());
        assert!(plan_from_beta(None, f64::NAN).is_err());
    }

    #[test]
    fn near_lossless_corner_costs_about_full_size() {
        let samples = [sample(1, &[(256, 127)])];
        let grid = [CompressionPlan { rho: 0.0, levels: MAX_LEVELS }];
        let p = calibrate_predictor(&samples, &grid, 0).unwrap();
        let ratio = p.points[0].2;
        // 1 mask bit + 1 sign bit + ~15 level bits per element, plus the table
        assert!(ratio > 0.45 && ratio < 1.2, "{ratio}");
    }

    #[test]
    fn ratio_non_increasing_in_rho() {
        let samples = [sample(2, &[(64, 31), (16, 64)])];
        for levels in [1u16, 16, 1024] {
            let grid: Vec<CompressionPlan> = (0..10)
                .map(|i| CompressionPlan { rho: i as f64 * 0.1, levels })
                .collect();
            let p = calibrate_predictor(&samples, &grid, 0).unwrap();
            for w in p.points.windows(2) {
                assert!(w[1].2 <= w[0].2 + 1e-12, "L={levels}: {:?}", p.points);
            }
        }
    }

    #[test]
    fn frontier_and_plan_at_curve_points() {
        let samples = [sample(3, &[(64, 31), (16, 64)]), sample(4, &[(64, 31), (16, 64)])];
        let grid = default_grid();
        let pred = calibrate_predictor(&samples, &grid, 9).unwrap();
        // curve betas strictly increase and each is a measured grid point
        for w in pred.curve.windows(2) {
            assert!(w[1].0 > w[0].0);
        }
        for &(beta, rho, l) in &pred.curve {
            let plan = plan_from_beta(Some(&pred), beta).unwrap();
            assert_eq!(plan, CompressionPlan { rho, levels: l });
            let ratio = pred
                .points
                .iter()
                .find(|p| p.0 == rho && p.1 == l)
                .map(|p| p.2)
                .unwrap();
            assert!(ratio <= beta);
        }
        let json = pred.to_json().unwrap();
        let back = RatePredictor::from_json(&json).unwrap();
        for beta in [0.02, 0.1, 0.3] {
            assert_eq!(
                plan_from_beta(Some(&pred), beta).unwrap(),
                plan_from_beta(Some(&back), beta).unwrap()
            );
        }
    }

    #[test]
    fn plans_clamp_to_curve_ends() {
        let pred = RatePredictor {
            points: vec![],
            curve: vec![(0.1, 0.9, 4), (0.4, 0.2, 64)],
        };
        assert_eq!(plan_from_beta(Some(&pred), 0.01).unwrap(), CompressionPlan { rho: 0.9, levels: 4 });
        assert_eq!(plan_from_beta(Some(&pred), 0.9).unwrap(), CompressionPlan { rho: 0.2, levels: 64 });
        let mid = plan_from_beta(Some(&pred), 0.25).unwrap();
        assert!((mid.rho - 0.55).abs() < 1e-12);
        assert_eq!(mid.levels, 16);
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(RatePredictor::from_json(r#"{"points":[],"curve":[]}"#).is_err());
        assert!(RatePredictor::from_json(r#"{"points":[],"curve":[[0.2,0.5,4],[0.1,0.6,2]]}"#).is_err());
        assert!(RatePredictor::from_json(r#"{"points":[],"curve":[[0.2,1.5,4]]}"#).is_err());
    }
}
