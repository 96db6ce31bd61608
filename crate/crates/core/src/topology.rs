//! Network geometry and large-scale fading.
//!
//! APs and users are dropped uniformly on a `D x D` square whose edges wrap
//! around, so every node sees the same statistical environment. The gain
//! `beta[(m, k)]` between AP `m` and user `k` is a three-slope path loss
//! (flat near field, 20 dB/decade, then COST-231 Hata at 35 dB/decade)
//! times log-normal shadowing in the far region.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOLTZMANN: f64 = 1.381e-23;

/// Closest AP-user separation the path-loss model will evaluate, in metres.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Thermal noise power `BW * k_B * T0 * NF` in watts.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64, temperature_k: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0 && temperature_k > 0.0 && noise_figure_db.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise power needs positive bandwidth and temperature, got BW={bandwidth_hz} T={temperature_k}"
        )));
    }
    // A 0 dB noise figure is a unit linear factor; only the linear value must be positive.
    Ok(bandwidth_hz * BOLTZMANN * temperature_k * 10f64.powf(noise_figure_db / 10.0))
}

/// Transmit powers and receiver noise in physical units. Only used to derive
/// the normalized SNRs stored in [`SimParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioBudget {
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub temperature_k: f64,
    pub pilot_power_w: f64,
    pub data_power_w: f64,
}

impl Default for RadioBudget {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            noise_figure_db: 9.0,
            temperature_k: 290.0,
            pilot_power_w: 0.1,
            data_power_w: 0.1,
        }
    }
}

impl RadioBudget {
    /// Returns `(pilot_snr, rho)`, both dimensionless.
    pub fn normalized(&self) -> Result<(f64, f64)> {
        let pn = noise_power(self.bandwidth_hz, self.noise_figure_db, self.temperature_k)?;
        if !(self.pilot_power_w > 0.0 && self.data_power_w > 0.0) {
            return Err(Error::Parameter("transmit powers must be positive".into()));
        }
        Ok((self.pilot_power_w / pn, self.data_power_w / pn))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub num_aps: usize,
    pub num_users: usize,
    /// Side of the square area in km.
    pub side_km: f64,
    /// Pilot sequence length in symbols.
    pub tau: usize,
    pub shadow_std_db: f64,
    /// Normalized uplink data SNR.
    pub rho: f64,
    /// Normalized pilot SNR.
    pub pilot_snr: f64,
    /// Normalized per-user power limit (applied to every user).
    pub p_max: f64,
    pub carrier_mhz: f64,
    pub ap_height_m: f64,
    pub user_height_m: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        let (pilot_snr, rho) = RadioBudget::default()
            .normalized()
            .expect("default radio budget is valid");
        Self {
            num_aps: 60,
            num_users: 20,
            side_km: 1.0,
            tau: 20,
            shadow_std_db: 8.0,
            rho,
            pilot_snr,
            p_max: 1.0,
            carrier_mhz: 1900.0,
            ap_height_m: 15.0,
            user_height_m: 1.65,
            d0_m: 10.0,
            d1_m: 50.0,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Parameter(msg.to_string()));
        if self.num_aps == 0 || self.num_users == 0 {
            return bad("need at least one AP and one user");
        }
        if self.tau == 0 {
            return bad("pilot length must be at least 1");
        }
        if !(self.side_km > 0.0) {
            return bad("side length must be positive");
        }
        if !(self.rho > 0.0 && self.pilot_snr > 0.0 && self.p_max > 0.0) {
            return bad("rho, pilot_snr and p_max must be positive");
        }
        if !(self.shadow_std_db >= 0.0) {
            return bad("shadowing std must be non-negative");
        }
        if !(self.d0_m > 0.0 && self.d0_m < self.d1_m) {
            return bad("path-loss breakpoints need 0 < d0 < d1");
        }
        if !(self.carrier_mhz > 0.0 && self.ap_height_m > 0.0 && self.user_height_m > 0.0) {
            return bad("carrier frequency and antenna heights must be positive");
        }
        Ok(())
    }

    pub fn side_m(&self) -> f64 {
        self.side_km * 1000.0
    }

    pub fn p_max_vec(&self) -> Vec<f64> {
        vec![self.p_max; self.num_users]
    }

    /// Hata-COST231 frequency and height dependent offset `L` in dB.
    fn hata_offset_db(&self) -> f64 {
        let lf = self.carrier_mhz.log10();
        46.3 + 33.9 * lf - 13.82 * self.ap_height_m.log10() - (1.1 * lf - 0.7) * self.user_height_m
            + (1.56 * lf - 0.8)
    }

    /// Path loss in dB (a negative number), without shadowing.
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        let d_km = distance_m.max(MIN_DISTANCE_M) / 1000.0;
        let d0 = self.d0_m / 1000.0;
        let d1 = self.d1_m / 1000.0;
        let l = self.hata_offset_db();
        if d_km > d1 {
            -l - 35.0 * d_km.log10()
        } else if d_km > d0 {
            -l - 15.0 * d1.log10() - 20.0 * d_km.log10()
        } else {
            -l - 15.0 * d1.log10() - 20.0 * d0.log10()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Distance between `a` and the nearest of the nine periodic images of `b`.
pub fn wrap_distance(a: Point, b: Point, side: f64) -> f64 {
    let mut best = f64::INFINITY;
    for sx in [-side, 0.0, side] {
        for sy in [-side, 0.0, side] {
            let dx = a.x - (b.x + sx);
            let dy = a.y - (b.y + sy);
            best = best.min(dx.hypot(dy));
        }
    }
    best
}

/// Linear large-scale gain at `distance_m` for shadowing draw `shadow_z`.
pub fn large_scale_fading(params: &SimParams, distance_m: f64, shadow_z: f64) -> f64 {
    let mut db = params.path_loss_db(distance_m);
    if distance_m > params.d1_m {
        db += params.shadow_std_db * shadow_z;
    }
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    /// M x K linear gains.
    pub beta: DMatrix<f64>,
    /// M x K standard-normal shadowing draws.
    pub shadow_z: DMatrix<f64>,
}

impl Topology {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Drops APs and users uniformly and computes their large-scale gains.
///
/// Draw order is fixed (APs, users, then shadowing row by row) so the
/// result depends only on `params` and the RNG state.
pub fn generate_topology<R: Rng + ?Sized>(params: &SimParams, rng: &mut R) -> Result<Topology> {
    params.validate()?;
    let side = params.side_m();
    let mut drop = |n: usize| -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect()
    };
    let ap_positions = drop(params.num_aps);
    let user_positions = drop(params.num_users);

    let (m, k) = (params.num_aps, params.num_users);
    let mut shadow_z = DMatrix::zeros(m, k);
    for i in 0..m {
        for j in 0..k {
            shadow_z[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let beta = DMatrix::from_fn(m, k, |i, j| {
        let d = wrap_distance(ap_positions[i], user_positions[j], side);
        large_scale_fading(params, d, shadow_z[(i, j)])
    });

    Ok(Topology {
        ap_positions,
        user_positions,
        beta,
        shadow_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_power_values() {
        let pn = noise_power(20e6, 9.0, 290.0).unwrap();
        assert!((pn - 6.3624e-13).abs() / 6.3624e-13 < 1e-4, "{pn}");
        let pn0 = noise_power(20e6, 0.0, 290.0).unwrap();
        assert!((pn0 - 20e6 * 1.381e-23 * 290.0).abs() < 1e-25);
        assert!((pn0 - 8.0098e-14).abs() / 8.0098e-14 < 1e-4);
        let double = noise_power(40e6, 9.0, 290.0).unwrap();
        assert_eq!(double, 2.0 * pn);
        assert!(noise_power(0.0, 9.0, 290.0).is_err());
        assert!(noise_power(20e6, 9.0, -1.0).is_err());
    }

    #[test]
    fn wrap_distance_examples() {
        let d = 1000.0;
        let o = Point::new(0.0, 0.0);
        assert!((wrap_distance(o, Point::new(0.9 * d, 0.0), d) - 0.1 * d).abs() < 1e-9);
        assert_eq!(
            wrap_distance(Point::new(3.0, 4.0), Point::new(3.0, 4.0), d),
            0.0
        );
        let far = wrap_distance(o, Point::new(d / 2.0, d / 2.0), d);
        assert!((far - d / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn shadowing_factor_and_near_field() {
        let p = SimParams::default();
        let near = large_scale_fading(&p, 5.0, 0.0);
        assert_eq!(near, large_scale_fading(&p, 5.0, 3.0));
        assert_eq!(near, large_scale_fading(&p, p.d0_m, 0.0));
        let r = large_scale_fading(&p, 300.0, 1.0) / large_scale_fading(&p, 300.0, 0.0);
        assert!((r - 10f64.powf(0.8)).abs() < 1e-12);
    }

    #[test]
    fn path_loss_continuous_and_monotone() {
        let p = SimParams::default();
        for bp in [p.d0_m, p.d1_m] {
            let lo = p.path_loss_db(bp * (1.0 - 1e-9));
            let hi = p.path_loss_db(bp * (1.0 + 1e-9));
            assert!((lo - hi).abs() < 1e-6, "jump at {bp}: {lo} vs {hi}");
        }
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let d = 0.5 + i as f64;
            let g = large_scale_fading(&p, d, 0.0);
            assert!(g <= prev);
            if d > p.d0_m + 1.0 {
                assert!(g < prev);
            }
            prev = g;
        }
    }

    #[test]
    fn topology_shape_and_determinism() {
        let params = SimParams {
            num_aps: 60,
            num_users: 20,
            ..SimParams::default()
        };
        let a = generate_topology(&params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = generate_topology(&params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.beta.shape(), (60, 20));
        assert!(a.beta.iter().all(|&x| x > 0.0));
        let side = params.side_m();
        assert!(a
            .ap_positions
            .iter()
            .chain(&a.user_positions)
            .all(|p| (0.0..side).contains(&p.x) && (0.0..side).contains(&p.y)));
        let back = Topology::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn user_positions_centered_on_average() {
        let params = SimParams {
            num_aps: 1,
            num_users: 50,
            ..SimParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..400 {
            let t = generate_topology(&params, &mut rng).unwrap();
            for p in &t.user_positions {
                sx += p.x;
                sy += p.y;
                n += 1.0;
            }
        }
        let side = params.side_m();
        // std of uniform mean over 20000 samples is side/sqrt(12*20000) ~ 0.002 side
        assert!((sx / n - side / 2.0).abs() < 0.01 * side);
        assert!((sy / n - side / 2.0).abs() < 0.01 * side);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SimParams::default();
        p.d0_m = 60.0;
        assert!(p.validate().is_err());
        let p = SimParams {
            num_users: 0,
            ..SimParams::default()
        };
        assert!(generate_topology(&p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    proptest! {
        #[test]
        fn wrap_distance_is_a_metric(
            ax in 0.0..1.0f64, ay in 0.0..1.0f64,
            bx in 0.0..1.0f64, by in 0.0..1.0f64,
            cx in 0.0..1.0f64, cy in 0.0..1.0f64,
        ) {
            let d = 1000.0;
            let (a, b, c) = (
                Point::new(ax * d, ay * d),
                Point::new(bx * d, by * d),
                Point::new(cx * d, cy * d),
            );
            let ab = wrap_distance(a, b, d);
            prop_assert!((ab - wrap_distance(b, a, d)).abs() < 1e-9);
            prop_assert!(ab <= d / 2f64.sqrt() + 1e-9);
            prop_assert!(ab <= wrap_distance(a, c, d) + wrap_distance(c, b, d) + 1e-9);
        }
    }
}
