//! Network configuration with defaults matching the reference indoor setup,
//! loadable from flat JSON.
//!
//! A configuration file must list every key unless it sets
//! `"base": "defaults"`, in which case omitted keys take their default
//! values. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::channel::{ap_grid, AccessPoint, RoomConfig, TransceiverConfig};
use crate::downlink::OfdmaConfig;
use crate::error::{Error, Result};
use crate::uplink::MacParams;

/// How the one-bit feedback threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    /// Linear SINR value.
    Fixed(f64),
    /// `"cell-min"` or `"cell-median"`.
    Named(NamedThreshold),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedThreshold {
    CellMin,
    CellMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub room_width_m: f64,
    pub room_depth_m: f64,
    pub room_height_m: f64,
    pub n_ap: usize,
    pub cell_radius_m: f64,
    pub half_intensity_deg: f64,
    pub fov_deg: f64,
    pub pd_area_cm2: f64,
    pub optical_filter_gain: f64,
    pub refractive_index: f64,
    pub pd_responsivity_a_per_w: f64,
    pub wall_reflectivity: f64,
    pub n_subcarriers: usize,
    pub downlink_power_w: f64,
    pub downlink_bandwidth_mhz: f64,
    pub w0_mrad_s: f64,
    pub conversion_factor: f64,
    pub noise_psd_a2_per_hz: f64,

    pub uplink_power_w: f64,
    pub uplink_bandwidth_mhz: f64,
    pub data_length_bytes: f64,
    pub phy_header_bits: f64,
    pub mac_header_bits: f64,
    pub rts_bits: f64,
    pub cts_bits: f64,
    pub ack_bits: f64,
    pub sifs_us: f64,
    pub difs_us: f64,
    pub slot_us: f64,
    pub propagation_delay_us: f64,
    pub feedback_duration_ms: f64,

    pub frame_duration_ms: f64,
    pub bits_per_sinr: u32,
    pub vertical_separation_m: f64,
    pub wall_patch_resolution_m: f64,

    #[serde(rename = "sim.n_ues")]
    pub n_ues: usize,
    #[serde(rename = "sim.contention_window")]
    pub contention_window: u32,
    #[serde(rename = "sim.r_req_mbps")]
    pub r_req_mbps: f64,
    #[serde(rename = "sim.w_u")]
    pub w_u: f64,
    #[serde(rename = "sim.w_d")]
    pub w_d: f64,
    #[serde(rename = "sim.overload_lambda")]
    pub overload_lambda: f64,
    /// Frame-transmission rate for the MAC timing; `null` selects the
    /// cell-edge Shannon rate.
    #[serde(rename = "sim.control_rate_mbps")]
    pub control_rate_mbps: Option<f64>,
    #[serde(rename = "sim.onebit_threshold")]
    pub onebit_threshold: ThresholdSetting,
    #[serde(rename = "sim.approx_guard")]
    pub approx_guard: f64,
    #[serde(rename = "sim.mc_patch_resolution_m")]
    pub mc_patch_resolution_m: f64,
    #[serde(rename = "sim.quadrature_order")]
    pub quadrature_order: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            room_width_m: 10.0,
            room_depth_m: 10.0,
            room_height_m: 2.15,
            n_ap: 9,
            cell_radius_m: 2.35,
            half_intensity_deg: 60.0,
            fov_deg: 90.0,
            pd_area_cm2: 1.0,
            optical_filter_gain: 1.0,
            refractive_index: 1.0,
            pd_responsivity_a_per_w: 1.0,
            wall_reflectivity: 0.85,
            n_subcarriers: 2048,
            downlink_power_w: 8.0,
            downlink_bandwidth_mhz: 10.0,
            w0_mrad_s: 45.3,
            conversion_factor: 3.0,
            noise_psd_a2_per_hz: 1e-21,

            uplink_power_w: 0.2,
            uplink_bandwidth_mhz: 5.0,
            data_length_bytes: 2000.0,
            phy_header_bits: 128.0,
            mac_header_bits: 272.0,
            rts_bits: 288.0,
            cts_bits: 240.0,
            ack_bits: 240.0,
            sifs_us: 16.0,
            difs_us: 32.0,
            slot_us: 8.0,
            propagation_delay_us: 1.0,
            feedback_duration_ms: 0.8,

            frame_duration_ms: 1.6,
            bits_per_sinr: 10,
            vertical_separation_m: 2.15,
            wall_patch_resolution_m: 0.1,

            n_ues: 5,
            contention_window: 16,
            r_req_mbps: 5.0,
            w_u: 1.0,
            w_d: 1.0,
            overload_lambda: 1.0,
            control_rate_mbps: None,
            onebit_threshold: ThresholdSetting::Named(NamedThreshold::CellMin),
            approx_guard: 5.0,
            mc_patch_resolution_m: 0.25,
            quadrature_order: 64,
        }
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn same_shape(default: &Value, given: &Value) -> bool {
    match (default, given) {
        (Value::Number(d), Value::Number(g)) => !(d.is_u64() && !g.is_u64()),
        (Value::Null, Value::Null | Value::Number(_)) => true,
        (Value::String(_), Value::String(_) | Value::Number(_)) => true,
        (Value::Number(_), Value::String(_)) => false,
        (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
    }
}

impl NetworkConfig {
    /// Parses a flat JSON object.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| config_err("<file>", e.to_string()))?;
        let Value::Object(mut given) = root else {
            return Err(config_err("<file>", "top level must be a JSON object"));
        };
        let partial = match given.remove("base") {
            None => false,
            Some(Value::String(s)) if s == "defaults" => true,
            Some(other) => return Err(config_err("base", format!("expected \"defaults\", got {other}"))),
        };
        let Value::Object(defaults) = serde_json::to_value(NetworkConfig::default()).unwrap() else {
            unreachable!()
        };
        for key in given.keys() {
            if !defaults.contains_key(key) {
                return Err(config_err(key, "unknown key"));
            }
        }
        let mut merged = Map::new();
        for (key, dv) in &defaults {
            match given.get(key) {
                Some(v) => {
                    if !same_shape(dv, v) {
                        return Err(config_err(key, format!("expected a value like {dv}, got {v}")));
                    }
                    merged.insert(key.clone(), v.clone());
                }
                None if partial => {
                    merged.insert(key.clone(), dv.clone());
                }
                None => return Err(config_err(key, "missing key")),
            }
        }
        let cfg: NetworkConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| config_err("<file>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Full configuration as a flat JSON object.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("room_width_m", self.room_width_m),
            ("room_depth_m", self.room_depth_m),
            ("room_height_m", self.room_height_m),
            ("cell_radius_m", self.cell_radius_m),
            ("fov_deg", self.fov_deg),
            ("pd_area_cm2", self.pd_area_cm2),
            ("optical_filter_gain", self.optical_filter_gain),
            ("pd_responsivity_a_per_w", self.pd_responsivity_a_per_w),
            ("downlink_power_w", self.downlink_power_w),
            ("downlink_bandwidth_mhz", self.downlink_bandwidth_mhz),
            ("w0_mrad_s", self.w0_mrad_s),
            ("conversion_factor", self.conversion_factor),
            ("noise_psd_a2_per_hz", self.noise_psd_a2_per_hz),
            ("uplink_power_w", self.uplink_power_w),
            ("uplink_bandwidth_mhz", self.uplink_bandwidth_mhz),
            ("data_length_bytes", self.data_length_bytes),
            ("phy_header_bits", self.phy_header_bits),
            ("mac_header_bits", self.mac_header_bits),
            ("rts_bits", self.rts_bits),
            ("cts_bits", self.cts_bits),
            ("ack_bits", self.ack_bits),
            ("sifs_us", self.sifs_us),
            ("difs_us", self.difs_us),
            ("slot_us", self.slot_us),
            ("propagation_delay_us", self.propagation_delay_us),
            ("feedback_duration_ms", self.feedback_duration_ms),
            ("frame_duration_ms", self.frame_duration_ms),
            ("vertical_separation_m", self.vertical_separation_m),
            ("wall_patch_resolution_m", self.wall_patch_resolution_m),
            ("sim.r_req_mbps", self.r_req_mbps),
            ("sim.approx_guard", self.approx_guard),
            ("sim.mc_patch_resolution_m", self.mc_patch_resolution_m),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(key, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.half_intensity_deg > 0.0 && self.half_intensity_deg < 90.0) {
            return Err(config_err("half_intensity_deg", "must lie in (0, 90)"));
        }
        if self.fov_deg > 90.0 {
            return Err(config_err("fov_deg", "must not exceed 90"));
        }
        if self.refractive_index < 1.0 {
            return Err(config_err("refractive_index", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.wall_reflectivity) {
            return Err(config_err("wall_reflectivity", "must lie in [0, 1]"));
        }
        let side = (self.n_ap as f64).sqrt().round() as usize;
        if self.n_ap == 0 || side * side != self.n_ap {
            return Err(config_err("n_ap", "must be a positive perfect square"));
        }
        if self.n_subcarriers < 4 || !self.n_subcarriers.is_multiple_of(2) {
            return Err(config_err("n_subcarriers", "must be even and at least 4"));
        }
        if self.vertical_separation_m > self.room_height_m {
            return Err(config_err("vertical_separation_m", "must not exceed the room height"));
        }
        if self.bits_per_sinr == 0 {
            return Err(config_err("bits_per_sinr", "must be at least 1"));
        }
        if self.feedback_duration_ms > self.frame_duration_ms {
            return Err(config_err("feedback_duration_ms", "must not exceed the frame duration"));
        }
        if self.n_ues == 0 {
            return Err(config_err("sim.n_ues", "must be at least 1"));
        }
        if self.contention_window < 2 {
            return Err(config_err("sim.contention_window", "must be at least 2"));
        }
        if !(self.w_u >= 0.0 && self.w_d >= 0.0 && self.w_u + self.w_d > 0.0) {
            return Err(config_err("sim.w_u", "weights must be non-negative and not both zero"));
        }
        if !(self.overload_lambda > 0.0 && self.overload_lambda <= 1.0) {
            return Err(config_err("sim.overload_lambda", "must lie in (0, 1]"));
        }
        if let Some(r) = self.control_rate_mbps {
            if !(r > 0.0) {
                return Err(config_err("sim.control_rate_mbps", "must be positive or null"));
            }
        }
        if let ThresholdSetting::Fixed(t) = self.onebit_threshold {
            if !(t > 0.0) {
                return Err(config_err("sim.onebit_threshold", "must be positive"));
            }
        }
        if self.quadrature_order < 2 {
            return Err(config_err("sim.quadrature_order", "must be at least 2"));
        }
        let min_dim = self.room_width_m.min(self.room_depth_m).min(self.room_height_m);
        for (key, r) in [
            ("wall_patch_resolution_m", self.wall_patch_resolution_m),
            ("sim.mc_patch_resolution_m", self.mc_patch_resolution_m),
        ] {
            if r > min_dim {
                return Err(config_err(key, "must not exceed the smallest room dimension"));
            }
        }
        Ok(())
    }

    pub fn room(&self) -> RoomConfig {
        RoomConfig {
            width_m: self.room_width_m,
            depth_m: self.room_depth_m,
            height_m: self.room_height_m,
            wall_reflectivity: self.wall_reflectivity,
            wall_patch_resolution: self.wall_patch_resolution_m,
        }
    }

    pub fn transceiver(&self) -> TransceiverConfig {
        TransceiverConfig {
            pd_area: self.pd_area_cm2 * 1e-4,
            fov: self.fov_deg.to_radians(),
            optical_filter_gain: self.optical_filter_gain,
            refractive_index: self.refractive_index,
            half_intensity_angle: self.half_intensity_deg.to_radians(),
            pd_responsivity: self.pd_responsivity_a_per_w,
            led_corner: self.w0_mrad_s * 1e6,
            conversion_factor: self.conversion_factor,
        }
    }

    pub fn access_points(&self) -> Vec<AccessPoint> {
        let side = (self.n_ap as f64).sqrt().round() as usize;
        ap_grid(&self.room(), side, self.downlink_power_w)
    }

    pub fn ofdma(&self) -> OfdmaConfig {
        OfdmaConfig {
            n_subcarriers: self.n_subcarriers,
            bandwidth: self.downlink_bandwidth_mhz * 1e6,
            dc_bias_factor: self.conversion_factor,
            noise_psd: self.noise_psd_a2_per_hz,
        }
    }

    pub fn mac_params(&self) -> MacParams {
        MacParams {
            contention_window: self.contention_window,
            n_ues: self.n_ues,
            t_slot: self.slot_us * 1e-6,
            sifs: self.sifs_us * 1e-6,
            difs: self.difs_us * 1e-6,
            t_delay: self.propagation_delay_us * 1e-6,
            l_rts: self.rts_bits,
            l_cts: self.cts_bits,
            l_ack: self.ack_bits,
            l_data_bytes: self.data_length_bytes,
            h_phy: self.phy_header_bits,
            h_mac: self.mac_header_bits,
            bandwidth: self.uplink_bandwidth_mhz * 1e6,
            optical_power: self.uplink_power_w,
            frame_duration: self.frame_duration_ms * 1e-3,
        }
    }

    pub fn link(&self) -> LinkBudget {
        LinkBudget::new(self)
    }

    pub fn t_fb(&self) -> f64 {
        self.feedback_duration_ms * 1e-3
    }

    pub fn t_fr(&self) -> f64 {
        self.frame_duration_ms * 1e-3
    }

    pub fn r_req(&self) -> f64 {
        self.r_req_mbps * 1e6
    }
}

/// Closed-form LOS link constants shared by the simplified SINR models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Vertical AP–UE separation h.
    pub h: f64,
    /// Lambertian order m.
    pub m: f64,
    /// LOS gain numerator: gain = g0 / d^(m+3).
    pub g0: f64,
    /// Downlink SINR constant G.
    pub g_dl: f64,
    /// Uplink SINR constant G_u.
    pub g_ul: f64,
    pub n_subcarriers: usize,
    pub b_dn: f64,
    pub b_un: f64,
    pub w0: f64,
    pub cell_radius: f64,
}

impl LinkBudget {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let tx = cfg.transceiver();
        let m = tx.lambertian_order();
        let h = cfg.vertical_separation_m;
        let g0 = tx.lambertian_prefactor() * h.powf(m + 1.0);
        let k = cfg.n_subcarriers as f64;
        let eta = cfg.conversion_factor;
        let n0 = cfg.noise_psd_a2_per_hz;
        let b_dn = cfg.downlink_bandwidth_mhz * 1e6;
        let b_un = cfg.uplink_bandwidth_mhz * 1e6;
        let rp_d = tx.pd_responsivity * cfg.downlink_power_w;
        let rp_u = tx.pd_responsivity * cfg.uplink_power_w;
        LinkBudget {
            h,
            m,
            g0,
            g_dl: k * (g0 * rp_d).powi(2) / ((k - 2.0) * eta * eta * n0 * b_dn),
            g_ul: (g0 * rp_u).powi(2) / (eta * eta * n0 * b_un),
            n_subcarriers: cfg.n_subcarriers,
            b_dn,
            b_un,
            w0: tx.led_corner,
            cell_radius: cfg.cell_radius_m,
        }
    }

    /// Path-loss denominator `(r² + h²)^(m+3)`.
    pub fn path_loss(&self, r: f64) -> f64 {
        (r * r + self.h * self.h).powf(self.m + 3.0)
    }

    /// SINR decay per subcarrier index, `4π B_dn / (K w_0)`.
    pub fn subcarrier_decay(&self) -> f64 {
        4.0 * PI * self.b_dn / (self.n_subcarriers as f64 * self.w0)
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.b_dn / self.n_subcarriers as f64
    }

    pub fn data_subcarriers(&self) -> usize {
        self.n_subcarriers / 2 - 1
    }
}
