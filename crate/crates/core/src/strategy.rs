//! Closed-form per-device strategy (α, β, f) under latency and energy
//! budgets, plus the analytic gain, divergence and convergence calculators.

use serde::{Deserialize, Serialize};

use crate::aggregate::{divergence_factor, AggregationWeights};
use crate::error::{Error, Result};
use crate::sysmodel::DeviceProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    /// workload units per training sample
    pub workload: f64,
    /// uncompressed update size in bits
    pub update_bits: f64,
    /// local epochs
    pub tau: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub t_max: f64,
    pub e_max: f64,
    pub alpha_min: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_max > 0.0
            && self.e_max > 0.0
            && self.alpha_min > 0.0
            && self.alpha_min <= 1.0
            && self.beta_min > 0.0
            && self.beta_min <= self.beta_max
            && self.beta_max <= 1.0
            && self.f_min > 0.0
            && self.f_min <= self.f_max
            && self.f_max.is_finite()
            && self.t_max.is_finite()
            && self.e_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid budget {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStrategy {
    pub alpha: f64,
    pub beta: f64,
    pub f: f64,
    /// share of the latency budget spent computing
    pub phi: f64,
    /// share of the energy budget spent computing
    pub varphi: f64,
    pub kappa: f64,
    pub psi: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// stationary points and bounds that lie inside `[phi_min, phi_max]`
    pub phi_candidates: Vec<f64>,
    pub gain: f64,
    pub feasible: bool,
    /// no box constraint on α, β or f was active
    pub interior: bool,
}

impl TrainingStrategy {
    fn infeasible(kappa: f64, psi: f64, phi_min: f64, phi_max: f64) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            f: 0.0,
            phi: 0.0,
            varphi: 0.0,
            kappa,
            psi,
            phi_min,
            phi_max,
            phi_candidates: Vec::new(),
            gain: 0.0,
            feasible: false,
            interior: false,
        }
    }

    /// The uncompressed, full-width strategy at `f` used by the baseline.
    pub fn full(f: f64) -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            f,
            phi: 1.0,
            varphi: 1.0,
            kappa: 0.0,
            psi: 0.0,
            phi_min: 0.0,
            phi_max: 1.0,
            phi_candidates: Vec::new(),
            gain: 1.0,
            feasible: true,
            interior: false,
        }
    }
}

/// `kappa (E - (1 - phi) T P) (phi^2 - phi^3)`.
pub fn local_gain(phi: f64, e_max: f64, t_max: f64, p_com: f64, kappa: f64) -> f64 {
    kappa * (e_max - (1.0 - phi) * t_max * p_com) * (phi * phi - phi * phi * phi)
}

/// `4 (P T)^2 - 4 E P T + 9 E^2`.
pub fn discriminant(e_max: f64, t_max: f64, p_com: f64) -> f64 {
    let pt = p_com * t_max;
    4.0 * pt * pt - 4.0 * e_max * pt + 9.0 * e_max * e_max
}

/// Roots of the gain's first-order condition.
pub fn stationary_points(e_max: f64, t_max: f64, p_com: f64) -> (f64, f64) {
    let pt = p_com * t_max;
    let root = discriminant(e_max, t_max, p_com).sqrt();
    (
        (root - 3.0 * e_max) / (8.0 * pt) + 0.75,
        -(root + 3.0 * e_max) / (8.0 * pt) - 0.75,
    )
}

/// The latency-split subproblem: bounds on φ, the stationary points of the
/// gain, and the maximizing candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSolution {
    pub kappa: f64,
    pub psi: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_candidates: Vec<f64>,
    /// `None` when `phi_min > phi_max`
    pub phi: Option<f64>,
}

fn check_inputs(device: &DeviceProfile, task: &TaskProfile, budget: &Budget, rate_bps: f64) -> Result<()> {
    budget.validate()?;
    if !(rate_bps > 0.0) || !(task.workload > 0.0) || !(task.update_bits > 0.0) || task.tau == 0 {
        return Err(Error::InvalidArgument("rate and task profile must be positive".into()));
    }
    if device.shard_size == 0 || !(device.energy_coeff > 0.0) || !(device.tx_power_w > 0.0) {
        return Err(Error::InvalidArgument(format!("device {} has an empty profile", device.id)));
    }
    Ok(())
}

/// Total workload of one full-width round.
fn round_workload(device: &DeviceProfile, task: &TaskProfile) -> f64 {
    task.tau as f64 * device.shard_size as f64 * task.workload
}

pub fn solve_split(
    device: &DeviceProfile,
    task: &TaskProfile,
    budget: &Budget,
    rate_bps: f64,
) -> Result<SplitSolution> {
    check_inputs(device, task, budget, rate_bps)?;
    let Budget {
        t_max: t,
        e_max: e,
        alpha_min,
        beta_min,
        beta_max,
        f_min,
        f_max,
    } = *budget;
    let p = device.tx_power_w;
    let s = task.update_bits;
    let r = rate_bps;
    let x = round_workload(device, task);

    let kappa = r / (s * device.energy_coeff) * (t / x).powi(3);
    let psi = discriminant(e, t, p);
    let phi_min = [
        alpha_min * x / (f_max * t),
        1.0 - beta_max * s / (r * t),
        1.0 - e / (t * p),
        0.0,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let phi_max = [x / (f_min * t), 1.0 - alpha_min * beta_min * s / (r * t), 1.0]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if phi_min > phi_max {
        return Ok(SplitSolution {
            kappa,
            psi,
            phi_min,
            phi_max,
            phi_candidates: Vec::new(),
            phi: None,
        });
    }
    let (s1, s2) = stationary_points(e, t, p);
    let phi_candidates: Vec<f64> = [phi_min, phi_max, s1, s2]
        .into_iter()
        .filter(|&c| c >= phi_min && c <= phi_max)
        .collect();
    let mut best = (phi_candidates[0], f64::NEG_INFINITY);
    for &c in &phi_candidates {
        let v = local_gain(c, e, t, p, kappa);
        if v > best.1 {
            best = (c, v);
        }
    }
    Ok(SplitSolution {
        kappa,
        psi,
        phi_min,
        phi_max,
        phi_candidates,
        phi: Some(best.0),
    })
}

/// Maximizes `alpha^4 beta` for one device from its own state only.
const BOUND_SLACK: f64 = 1e-9;

pub fn solve_strategy(
    device: &DeviceProfile,
    task: &TaskProfile,
    budget: &Budget,
    rate_bps: f64,
) -> Result<TrainingStrategy> {
    let split = solve_split(device, task, budget, rate_bps)?;
    let Budget {
        t_max: t,
        e_max: e,
        alpha_min,
        beta_min,
        beta_max,
        f_min,
        f_max,
    } = *budget;
    let (kappa, psi, phi_min, phi_max) = (split.kappa, split.psi, split.phi_min, split.phi_max);
    let p = device.tx_power_w;
    let eps = device.energy_coeff;
    let s = task.update_bits;
    let r = rate_bps;
    let x = round_workload(device, task);
    let phi = match split.phi {
        Some(phi) if phi > 0.0 && phi < 1.0 => phi,
        _ => return Ok(TrainingStrategy::infeasible(kappa, psi, phi_min, phi_max)),
    };
    let phi_candidates = split.phi_candidates;

    let varphi = 1.0 - (1.0 - phi) * t * p / e;
    let mut alpha = ((phi * t).powi(2) * varphi * e / (eps * x.powi(3))).cbrt();
    let mut interior = true;
    if alpha > 1.0 {
        alpha = 1.0;
        interior = false;
    }
    let mut f = alpha * x / (phi * t);
    if f > f_max {
        f = f_max;
        alpha = f_max * phi * t / x;
        interior = false;
    } else if f < f_min {
        f = f_min;
        alpha = alpha.min(varphi * e / (eps * f_min * f_min * x));
        interior = false;
    }
    // the split bounds guarantee alpha_min and beta_min up to rounding
    if alpha < alpha_min * (1.0 - BOUND_SLACK) {
        return Ok(TrainingStrategy::infeasible(kappa, psi, phi_min, phi_max));
    }
    let alpha = alpha.max(alpha_min);
    let mut beta = r * (1.0 - phi) * t / (alpha * s);
    if beta > beta_max {
        beta = beta_max;
        interior = false;
    }
    if beta < beta_min * (1.0 - BOUND_SLACK) {
        return Ok(TrainingStrategy::infeasible(kappa, psi, phi_min, phi_max));
    }
    let beta = beta.max(beta_min);
    Ok(TrainingStrategy {
        alpha,
        beta,
        f,
        phi,
        varphi,
        kappa,
        psi,
        phi_min,
        phi_max,
        phi_candidates,
        gain: alpha.powi(4) * beta,
        feasible: true,
        interior,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub per_device: Vec<f64>,
    /// mean over all devices; skipped devices count as 0
    pub global: f64,
}

pub fn learning_gains(strategies: &[TrainingStrategy]) -> GainReport {
    let per_device: Vec<f64> = strategies
        .iter()
        .map(|s| if s.feasible { s.alpha.powi(4) * s.beta } else { 0.0 })
        .collect();
    let global = if per_device.is_empty() {
        0.0
    } else {
        per_device.iter().sum::<f64>() / per_device.len() as f64
    };
    GainReport { per_device, global }
}

/// Bound on `||u - cmprs([u]^alpha, beta)||^2` for a device.
pub fn divergence_bound(alpha: f64, beta: f64, u_norm_sq: f64) -> f64 {
    divergence_factor(alpha, beta).powi(2) * u_norm_sq
}

/// Bound on the aggregated divergence for the given coefficients.
pub fn global_divergence_bound(
    strategies: &[(f64, f64)],
    weights: &AggregationWeights,
    eps_ratio: f64,
    eta: f64,
    grad_norm_sq: f64,
) -> Result<f64> {
    if strategies.len() != weights.p.len() {
        return Err(Error::ShapeMismatch("one weight per strategy required".into()));
    }
    let n = strategies.len() as f64;
    let sum: f64 = strategies
        .iter()
        .zip(&weights.p)
        .map(|(&(a, b), &p)| p * p * divergence_factor(a, b).powi(2))
        .sum();
    Ok(n * eps_ratio * eta * eta * sum * grad_norm_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub lambda: f64,
    pub nu: f64,
    pub eps_ratio: f64,
    pub eta: f64,
}

/// `1 - (nu / lambda) (1 - eps (1 - g_min))`.
pub fn convergence_factor(params: &TheoryParams, g_min: f64) -> Result<f64> {
    if !(params.nu > 0.0 && params.nu <= params.lambda) || params.eps_ratio < 0.0 {
        return Err(Error::InvalidArgument("need 0 < nu <= lambda and eps >= 0".into()));
    }
    if !(0.0..=1.0).contains(&g_min) {
        return Err(Error::InvalidArgument(format!("g_min {g_min} outside [0, 1]")));
    }
    Ok(1.0 - params.nu / params.lambda * (1.0 - params.eps_ratio * (1.0 - g_min)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::optimal_coefficients;
    use crate::sysmodel::round_cost;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn device(shard_size: usize, energy_coeff: f64) -> DeviceProfile {
        DeviceProfile {
            id: 0,
            shard_size,
            energy_coeff,
            bandwidth_hz: 1e6,
            tx_power_w: 0.1,
            f_min: 1e8,
            f_max: 2e9,
            energy_budget_j: [3.0, 9.0],
        }
    }

    fn budget(e_max: f64) -> Budget {
        Budget {
            t_max: 10.0,
            e_max,
            alpha_min: 0.25,
            beta_min: 1e-4,
            beta_max: 1.0 / 15.0,
            f_min: 1e8,
            f_max: 2e9,
        }
    }

    const TASK: TaskProfile = TaskProfile {
        workload: 4e7,
        update_bits: 4e8,
        tau: 1,
    };

    #[test]
    fn gain_endpoints() {
        assert_eq!(local_gain(0.0, 5.0, 10.0, 0.1, 1.0), 0.0);
        assert_eq!(local_gain(1.0, 5.0, 10.0, 0.1, 1.0), 0.0);
    }

    #[test]
    fn worked_instance() {
        assert_eq!(discriminant(5.0, 10.0, 0.1), 209.0);
        let (s1, s2) = stationary_points(5.0, 10.0, 0.1);
        assert!((s1 - (209f64.sqrt() - 9.0) / 8.0).abs() < 1e-12);
        assert!((s1 - 0.68210).abs() < 1e-5);
        assert!(s2 < 0.0);
        // the dense grid agrees with the analytic root
        let best = (0..=1_000_000)
            .map(|k| k as f64 * 1e-6)
            .max_by(|a, b| local_gain(*a, 5.0, 10.0, 0.1, 1.0).total_cmp(&local_gain(*b, 5.0, 10.0, 0.1, 1.0)))
            .unwrap();
        assert!((best - s1).abs() < 1e-5);
        let g = local_gain(s1, 5.0, 10.0, 0.1, 1.0);
        let direct = (4.0 + s1) * (s1 * s1 - s1.powi(3));
        assert!((g - direct).abs() < 1e-12);
        assert!((g - 0.692512).abs() < 1e-6, "{g}");
    }

    #[test]
    fn wide_bounds_pick_clamped_stationary_point() {
        let d = device(100, 7.5e-27);
        let s = solve_strategy(&d, &TASK, &budget(5.0), 3e6).unwrap();
        assert!(s.feasible);
        let (s1, _) = stationary_points(5.0, 10.0, 0.1);
        assert!((s.phi - s1.clamp(s.phi_min, s.phi_max)).abs() < 1e-12);
    }

    fn check_costs(d: &DeviceProfile, b: &Budget, rate: f64, s: &TrainingStrategy) {
        let c = round_cost(s.alpha, s.beta, s.f, d, &TASK, rate).unwrap();
        assert!(c.latency() <= b.t_max * (1.0 + 1e-9), "{c:?} {s:?}");
        assert!(c.energy() <= b.e_max * (1.0 + 1e-9), "{c:?} {s:?}");
        assert!(s.alpha >= b.alpha_min && s.alpha <= 1.0);
        assert!(s.beta >= b.beta_min && s.beta <= b.beta_max);
        assert!(s.f >= b.f_min && s.f <= b.f_max);
        if s.interior {
            assert!((c.latency() - b.t_max).abs() <= 1e-6 * b.t_max, "{c:?}");
            assert!((c.energy() - b.e_max).abs() <= 1e-6 * b.e_max, "{c:?}");
            assert!((c.t_cmp - s.phi * b.t_max).abs() <= 1e-6 * b.t_max);
            assert!((c.e_cmp - s.varphi * b.e_max).abs() <= 1e-6 * b.e_max);
        }
    }

    #[test]
    fn random_environments_respect_budgets() {
        let mut rng = rng::stream(5, Purpose::Population, 0, 0);
        let mut interior = 0;
        for _ in 0..5000 {
            let d = device(rng.gen_range(20..300), rng.gen_range(5e-27..1e-26));
            let b = budget(rng.gen_range(3.0..9.0));
            let rate = rng.gen_range(1e5..2e7);
            let s = solve_strategy(&d, &TASK, &b, rate).unwrap();
            if s.feasible {
                check_costs(&d, &b, rate, &s);
                interior += usize::from(s.interior);
            }
        }
        assert!(interior > 100, "{interior}");
    }

    #[test]
    fn tiny_energy_is_infeasible() {
        let d = device(100, 7.5e-27);
        let s = solve_strategy(&d, &TASK, &budget(1e-6), 3e6).unwrap();
        assert!(!s.feasible);
        assert_eq!(s.gain, 0.0);
    }

    proptest! {
        #[test]
        fn more_energy_never_hurts(e in 0.5f64..20.0, extra in 0.0f64..10.0, rate in 1e5f64..2e7, n in 20usize..300) {
            let d = device(n, 7.5e-27);
            let a = solve_strategy(&d, &TASK, &budget(e), rate).unwrap();
            let b = solve_strategy(&d, &TASK, &budget(e + extra), rate).unwrap();
            prop_assert!(b.gain >= a.gain * (1.0 - 1e-9), "{} -> {}", a.gain, b.gain);
        }
    }

    #[test]
    fn gains() {
        let full = TrainingStrategy::full(1e9);
        let half = TrainingStrategy {
            alpha: 0.5,
            beta: 0.5,
            ..full.clone()
        };
        let skip = TrainingStrategy {
            feasible: false,
            ..full.clone()
        };
        assert_eq!(learning_gains(std::slice::from_ref(&full)).per_device, vec![1.0]);
        assert_eq!(learning_gains(&[half]).per_device, vec![0.03125]);
        assert_eq!(learning_gains(&[full, skip]).global, 0.5);
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(divergence_bound(1.0, 1.0, 3.0), 0.0);
        assert!((divergence_bound(0.5, 0.25, 1.0) - 0.390625).abs() < 1e-15);
        let w = AggregationWeights { p: vec![1.0] };
        let g = global_divergence_bound(&[(0.5, 0.25)], &w, 0.3, 0.1, 2.0).unwrap();
        assert!((g - 0.01 * 0.3 * 0.390625 * 2.0).abs() < 1e-15);
        let lossless = AggregationWeights { p: vec![0.5, 0.5] };
        assert_eq!(global_divergence_bound(&[(1.0, 1.0); 2], &lossless, 0.3, 0.1, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn optimal_weights_beat_uniform() {
        let mut rng = rng::stream(8, Purpose::Population, 0, 0);
        for _ in 0..100 {
            let n = rng.gen_range(2..20);
            let strategies: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.25..1.0), rng.gen_range(1e-3..1.0 / 15.0)))
                .collect();
            let opt = optimal_coefficients(&strategies).unwrap();
            let uni = AggregationWeights { p: vec![1.0 / n as f64; n] };
            let a = global_divergence_bound(&strategies, &opt, 0.5, 0.1, 1.0).unwrap();
            let b = global_divergence_bound(&strategies, &uni, 0.5, 0.1, 1.0).unwrap();
            assert!(a <= b * (1.0 + 1e-12));
        }
    }

    #[test]
    fn convergence_examples() {
        let p = TheoryParams {
            lambda: 4.0,
            nu: 1.0,
            eps_ratio: 0.5,
            eta: 0.25,
        };
        assert!((convergence_factor(&p, 1.0).unwrap() - 0.75).abs() < 1e-15);
        let z0 = TheoryParams { eps_ratio: 0.0, ..p };
        assert_eq!(convergence_factor(&z0, 0.2).unwrap(), convergence_factor(&z0, 0.9).unwrap());
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let z = convergence_factor(&p, k as f64 / 100.0).unwrap();
            assert!(z <= prev);
            prev = z;
        }
        assert!(convergence_factor(&TheoryParams { nu: 5.0, ..p }, 0.5).is_err());
        assert!(convergence_factor(&p, 1.5).is_err());
    }
}
