//! Device population, wireless uplink and per-round cost accounting.

mod data;

pub use data::{partition_data, read_idx, synthetic_mixture, Dataset, Partition, SyntheticSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::strategy::TaskProfile;

/// Radio, hardware and budget ranges shared by the whole population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub cell_radius_m: f64,
    /// positions closer to the base station are pushed out to this distance
    pub min_distance_m: f64,
    pub path_loss_exponent: f64,
    pub noise_dbm_per_mhz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    /// reference gain is chosen so that this SNR holds at `reference_distance_m`
    pub reference_snr_db: f64,
    pub reference_distance_m: f64,
    /// `[lo, hi]` for the per-device energy coefficient
    pub energy_coeff: [f64; 2],
    /// `[lo, hi]` joules, drawn per device per round
    pub energy_budget_j: [f64; 2],
    pub latency_budget_s: f64,
    /// workload units per second
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            cell_radius_m: 550.0,
            min_distance_m: 1.0,
            path_loss_exponent: 3.76,
            noise_dbm_per_mhz: -114.0,
            bandwidth_hz: 1e6,
            tx_power_w: 0.1,
            reference_snr_db: 10.0,
            reference_distance_m: 400.0,
            energy_coeff: [5e-27, 1e-26],
            energy_budget_j: [3.0, 9.0],
            latency_budget_s: 10.0,
            f_min: 1e8,
            f_max: 2e9,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let positive = [
            ("system.cell_radius_m", self.cell_radius_m),
            ("system.min_distance_m", self.min_distance_m),
            ("system.path_loss_exponent", self.path_loss_exponent),
            ("system.bandwidth_hz", self.bandwidth_hz),
            ("system.tx_power_w", self.tx_power_w),
            ("system.reference_distance_m", self.reference_distance_m),
            ("system.latency_budget_s", self.latency_budget_s),
            ("system.f_min", self.f_min),
            ("system.f_max", self.f_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("system.noise_dbm_per_mhz", self.noise_dbm_per_mhz),
            ("system.reference_snr_db", self.reference_snr_db),
        ] {
            if !v.is_finite() {
                errors.push(format!("{name} must be finite"));
            }
        }
        if self.min_distance_m > self.cell_radius_m {
            errors.push("system.min_distance_m exceeds cell_radius_m".into());
        }
        if self.f_min > self.f_max {
            errors.push("system.f_min exceeds f_max".into());
        }
        for (name, [lo, hi]) in [
            ("system.energy_coeff", self.energy_coeff),
            ("system.energy_budget_j", self.energy_budget_j),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                errors.push(format!("{name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
            }
        }
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_density(&self) -> f64 {
        // dBm/MHz -> mW/MHz -> W/Hz
        10f64.powf(self.noise_dbm_per_mhz / 10.0) * 1e-3 / 1e6
    }

    /// Reference gain `G` in `|h| = G d^-n`.
    pub fn reference_gain(&self) -> f64 {
        let snr = 10f64.powf(self.reference_snr_db / 10.0);
        snr * self.noise_density() * self.bandwidth_hz
            / (self.tx_power_w * self.reference_distance_m.powf(-self.path_loss_exponent))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: usize,
    pub shard_size: usize,
    pub energy_coeff: f64,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub energy_budget_j: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub distance_m: f64,
    pub path_gain: f64,
    pub rate_bps: f64,
    pub noise_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub t_cmp: f64,
    pub t_com: f64,
    pub e_cmp: f64,
    pub e_com: f64,
}

impl CostBreakdown {
    pub fn latency(&self) -> f64 {
        self.t_cmp + self.t_com
    }

    pub fn energy(&self) -> f64 {
        self.e_cmp + self.e_com
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// `b log2(1 + |h| P / (N0 b))`.
pub fn link_rate(path_gain: f64, bandwidth_hz: f64, tx_power_w: f64, noise_density: f64) -> f64 {
    bandwidth_hz * (1.0 + path_gain * tx_power_w / (noise_density * bandwidth_hz)).log2()
}

/// One profile per shard; energy coefficients drawn from the configured range.
pub fn sample_devices(cfg: &SystemConfig, shard_sizes: &[usize], seed: u64) -> Vec<DeviceProfile> {
    shard_sizes
        .iter()
        .enumerate()
        .map(|(id, &shard_size)| {
            let mut rng = rng::stream(seed, Purpose::Population, 0, id as u64);
            DeviceProfile {
                id,
                shard_size,
                energy_coeff: uniform(&mut rng, cfg.energy_coeff),
                bandwidth_hz: cfg.bandwidth_hz,
                tx_power_w: cfg.tx_power_w,
                f_min: cfg.f_min,
                f_max: cfg.f_max,
                energy_budget_j: cfg.energy_budget_j,
            }
        })
        .collect()
}

/// Fresh uniform-in-disk positions and the resulting path-loss channels.
pub fn refresh_channels(cfg: &SystemConfig, devices: &[DeviceProfile], round: u64, seed: u64) -> Vec<ChannelState> {
    let n0 = cfg.noise_density();
    let g_ref = cfg.reference_gain();
    devices
        .iter()
        .map(|d| {
            let mut rng = rng::stream(seed, Purpose::Channel, round, d.id as u64);
            let u: f64 = rng.gen();
            let distance_m = (cfg.cell_radius_m * u.sqrt()).max(cfg.min_distance_m);
            let path_gain = g_ref * distance_m.powf(-cfg.path_loss_exponent);
            ChannelState {
                distance_m,
                path_gain,
                rate_bps: link_rate(path_gain, d.bandwidth_hz, d.tx_power_w, n0),
                noise_density: n0,
            }
        })
        .collect()
}

/// Per-round energy budgets, one per device.
pub fn draw_energy_budgets(devices: &[DeviceProfile], round: u64, seed: u64) -> Vec<f64> {
    devices
        .iter()
        .map(|d| {
            let mut rng = rng::stream(seed, Purpose::Energy, round, d.id as u64);
            uniform(&mut rng, d.energy_budget_j)
        })
        .collect()
}

/// Computation and uplink cost of one round at shrink ratio `alpha`,
/// compression rate `beta` and frequency `f`.
pub fn round_cost(
    alpha: f64,
    beta: f64,
    f: f64,
    device: &DeviceProfile,
    task: &TaskProfile,
    rate_bps: f64,
) -> Result<CostBreakdown> {
    if !(f > 0.0) || !(rate_bps > 0.0) {
        return Err(Error::InvalidArgument("frequency and rate must be positive".into()));
    }
    let work = task.tau as f64 * device.shard_size as f64 * alpha * task.workload;
    let t_com = alpha * beta * task.update_bits / rate_bps;
    Ok(CostBreakdown {
        t_cmp: work / f,
        e_cmp: device.energy_coeff * f * f * work,
        t_com,
        e_com: t_com * device.tx_power_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(shard_size: usize, energy_coeff: f64) -> DeviceProfile {
        DeviceProfile {
            id: 0,
            shard_size,
            energy_coeff,
            bandwidth_hz: 1e6,
            tx_power_w: 0.1,
            f_min: 1e6,
            f_max: 1e9,
            energy_budget_j: [3.0, 9.0],
        }
    }

    #[test]
    fn rate_examples() {
        let n0 = 1e-12;
        let b = 1e6;
        // SNR = |h| P / (N0 b)
        assert!((link_rate(1e-5, b, 0.1, n0) - b).abs() < 1e-6);
        assert!((link_rate(3e-5, b, 0.1, n0) - 2.0 * b).abs() < 1e-6);
    }

    #[test]
    fn rate_monotone_in_distance_and_bandwidth() {
        let cfg = SystemConfig::default();
        let n0 = cfg.noise_density();
        assert!((n0 - 3.981e-21).abs() < 1e-24);
        let mut prev = f64::INFINITY;
        for d in (1..=550).step_by(3) {
            let r = link_rate((d as f64).powf(-3.76), 1e6, 0.1, n0);
            assert!(r < prev);
            prev = r;
        }
        let mut prev = 0.0;
        for b in [1e5, 5e5, 1e6, 2e6, 1e7] {
            let r = link_rate(1e-12, b, 0.1, n0);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn reference_snr_holds() {
        let cfg = SystemConfig::default();
        let h = cfg.reference_gain() * 400f64.powf(-3.76);
        let snr = h * cfg.tx_power_w / (cfg.noise_density() * cfg.bandwidth_hz);
        assert!((snr - 10.0).abs() < 1e-9);
        let ratio = 550f64.powf(-3.76) / 1f64.powf(-3.76);
        assert!((cfg.reference_gain() * 550f64.powf(-3.76) / cfg.reference_gain() - ratio).abs() < 1e-20);
    }

    #[test]
    fn cost_examples() {
        let task = TaskProfile {
            workload: 1e6,
            update_bits: 1e6,
            tau: 1,
        };
        let c = round_cost(0.5, 0.1, 1e7, &device(100, 1e-16), &task, 1e5).unwrap();
        assert!((c.t_cmp - 5.0).abs() < 1e-12);
        assert!((c.e_cmp - 1e-16 * 1e14 * 5e7).abs() < 1e-6);
        let c22 = round_cost(0.5, 0.1, 1e7, &device(100, 1e-22), &task, 1e5).unwrap();
        assert!((c22.e_cmp - 0.5).abs() < 1e-12);
        assert!((c.t_com - 0.5).abs() < 1e-12);
        assert!((c.e_com - 0.05).abs() < 1e-12);
        assert!(round_cost(0.5, 0.1, 0.0, &device(1, 1.0), &task, 1.0).is_err());
    }

    #[test]
    fn population_is_deterministic() {
        let cfg = SystemConfig::default();
        let a = sample_devices(&cfg, &[10; 60], 3);
        assert_eq!(a.len(), 60);
        assert_eq!(a, sample_devices(&cfg, &[10; 60], 3));
        assert_ne!(a, sample_devices(&cfg, &[10; 60], 4));
        assert!(a.iter().all(|d| (5e-27..1e-26).contains(&d.energy_coeff)));
        let flat = SystemConfig {
            energy_coeff: [7e-27, 7e-27],
            ..cfg
        };
        assert!(sample_devices(&flat, &[10; 5], 3).iter().all(|d| d.energy_coeff == 7e-27));
    }

    #[test]
    fn disk_sampling_second_moment() {
        let cfg = SystemConfig {
            min_distance_m: 1e-9,
            ..SystemConfig::default()
        };
        let devices = sample_devices(&cfg, &[1; 200], 0);
        let rounds = 100;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0.0;
        for t in 0..rounds {
            for c in refresh_channels(&cfg, &devices, t, 0) {
                assert!(c.distance_m <= cfg.cell_radius_m && c.rate_bps > 0.0);
                let d2 = c.distance_m * c.distance_m;
                sum += d2;
                sum_sq += d2 * d2;
                n += 1.0;
            }
        }
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / n).sqrt();
        let expect = cfg.cell_radius_m.powi(2) / 2.0;
        assert!((mean - expect).abs() < 4.0 * se, "{mean} vs {expect} (se {se})");
    }

    #[test]
    fn channels_vary_across_rounds() {
        let cfg = SystemConfig::default();
        let devices = sample_devices(&cfg, &[1; 5], 0);
        let a = refresh_channels(&cfg, &devices, 0, 0);
        let b = refresh_channels(&cfg, &devices, 1, 0);
        assert_ne!(a, b);
        assert_eq!(a, refresh_channels(&cfg, &devices, 0, 0));
        let e = draw_energy_budgets(&devices, 0, 0);
        assert!(e.iter().all(|&x| (3.0..9.0).contains(&x)));
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut errors = Vec::new();
        SystemConfig {
            f_min: 5e9,
            energy_budget_j: [9.0, 3.0],
            cell_radius_m: -1.0,
            ..SystemConfig::default()
        }
        .validate(&mut errors);
        assert_eq!(errors.len(), 4, "{errors:?}");
    }
}
