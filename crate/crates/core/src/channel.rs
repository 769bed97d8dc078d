//! Optical channel: Lambertian LOS gain, first-order wall reflections, LED
//! low-pass response and the multipath frequency response built from them.
//!
//! Coordinates put the origin at the centre of the floor, `z` up, and the
//! access points on the ceiling plane facing straight down. Receivers face
//! straight up.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn horizontal_distance(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

const N_TX: Vec3 = Vec3::new(0.0, 0.0, -1.0);
const N_RX: Vec3 = Vec3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub width_m: f64,
    pub depth_m: f64,
    pub height_m: f64,
    pub wall_reflectivity: f64,
    /// Side length of one wall patch.
    pub wall_patch_resolution: f64,
}

impl RoomConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width_m", self.width_m),
            ("depth_m", self.depth_m),
            ("height_m", self.height_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.wall_reflectivity) {
            return Err(Error::param(
                "wall_reflectivity",
                format!("must lie in [0, 1], got {}", self.wall_reflectivity),
            ));
        }
        let min_dim = self.width_m.min(self.depth_m).min(self.height_m);
        if !(self.wall_patch_resolution > 0.0 && self.wall_patch_resolution <= min_dim) {
            return Err(Error::param(
                "wall_patch_resolution",
                format!("must lie in (0, {min_dim}], got {}", self.wall_patch_resolution),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransceiverConfig {
    /// Photodiode area in m².
    pub pd_area: f64,
    /// Receiver field of view Ψ_c in radians.
    pub fov: f64,
    pub optical_filter_gain: f64,
    pub refractive_index: f64,
    /// Φ_1/2 in radians.
    pub half_intensity_angle: f64,
    /// A/W.
    pub pd_responsivity: f64,
    /// LED corner frequency w_0 in rad/s.
    pub led_corner: f64,
    /// Optical-to-electrical conversion / DC bias factor η.
    pub conversion_factor: f64,
}

impl TransceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pd_area > 0.0) {
            return Err(Error::param("pd_area", "must be positive"));
        }
        if !(self.fov > 0.0 && self.fov <= PI / 2.0) {
            return Err(Error::param("fov", "must lie in (0, π/2]"));
        }
        if !(self.refractive_index >= 1.0) {
            return Err(Error::param("refractive_index", "must be at least 1"));
        }
        if !(self.optical_filter_gain > 0.0) {
            return Err(Error::param("optical_filter_gain", "must be positive"));
        }
        if !(self.pd_responsivity > 0.0) {
            return Err(Error::param("pd_responsivity", "must be positive"));
        }
        if !(self.led_corner > 0.0) {
            return Err(Error::param("led_corner", "must be positive"));
        }
        if !(self.conversion_factor > 0.0) {
            return Err(Error::param("conversion_factor", "must be positive"));
        }
        lambertian_order(self.half_intensity_angle).map(|_| ())
    }

    pub fn lambertian_order(&self) -> f64 {
        lambertian_order(self.half_intensity_angle).unwrap_or(f64::NAN)
    }

    /// Concentrator gain inside the field of view.
    pub fn concentrator_gain(&self) -> f64 {
        let s = self.fov.sin();
        self.refractive_index * self.refractive_index / (s * s)
    }

    /// The distance-free part of the LOS gain, `(m+1)A g_f g(ψ) / 2π`.
    pub fn lambertian_prefactor(&self) -> f64 {
        let m = self.lambertian_order();
        (m + 1.0) * self.pd_area * self.optical_filter_gain * self.concentrator_gain() / (2.0 * PI)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub position: Vec3,
    /// Downlink optical power P_d,opt in W.
    pub optical_power: f64,
    /// Indices of the other access points that reuse this one's band.
    pub co_channel_set: Vec<usize>,
}

impl AccessPoint {
    pub fn validate(&self, index: usize, room: &RoomConfig) -> Result<()> {
        if !self.position.is_finite() || (self.position.z - room.height_m).abs() > 1e-9 {
            return Err(Error::param("position", "access point must sit on the ceiling"));
        }
        if !(self.optical_power > 0.0) {
            return Err(Error::param("optical_power", "must be positive"));
        }
        if self.co_channel_set.contains(&index) {
            return Err(Error::param("co_channel_set", "access point listed as its own interferer"));
        }
        Ok(())
    }
}

/// `side × side` grid of access points centred in the room with a 4-colour
/// reuse plan: two access points share a band when their row and column
/// parities match.
pub fn ap_grid(room: &RoomConfig, side: usize, optical_power: f64) -> Vec<AccessPoint> {
    let pitch_x = room.width_m / side as f64;
    let pitch_y = room.depth_m / side as f64;
    let coord = |i: usize, pitch: f64| (i as f64 + 0.5) * pitch - pitch * side as f64 / 2.0;
    let mut aps = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let co = (0..side * side)
                .filter(|&o| {
                    let (r, c) = (o / side, o % side);
                    o != row * side + col && r % 2 == row % 2 && c % 2 == col % 2
                })
                .collect();
            aps.push(AccessPoint {
                position: Vec3::new(coord(col, pitch_x), coord(row, pitch_y), room.height_m),
                optical_power,
                co_channel_set: co,
            });
        }
    }
    aps
}

pub fn lambertian_order(half_intensity_angle: f64) -> Result<f64> {
    let c = half_intensity_angle.cos();
    if !(c > 1e-12 && c < 1.0) {
        return Err(Error::Domain(format!(
            "half-intensity angle {half_intensity_angle} rad gives cos = {c}, outside (0, 1)"
        )));
    }
    let m = -1.0 / c.log2();
    // Snap rounding noise so 60° gives exactly m = 1.
    Ok(if (m - m.round()).abs() < 1e-9 { m.round() } else { m })
}

pub fn los_gain(ap: &AccessPoint, ue_pos: Vec3, cfg: &TransceiverConfig) -> Result<f64> {
    let d = ue_pos - ap.position;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(Error::DegenerateGeometry("access point and receiver coincide".into()));
    }
    Ok(los_gain_unchecked(d, dist, cfg))
}

fn los_gain_unchecked(d: Vec3, dist: f64, cfg: &TransceiverConfig) -> f64 {
    let cos_phi = d.dot(N_TX) / dist;
    let cos_psi = -d.dot(N_RX) / dist;
    if cos_phi <= 0.0 || cos_psi <= 0.0 || cos_psi < cfg.fov.cos() {
        return 0.0;
    }
    let m = cfg.lambertian_order();
    cfg.lambertian_prefactor() / (dist * dist) * cos_phi.powf(m) * cos_psi
}

/// One reflecting wall element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallPatch {
    pub center: Vec3,
    /// Unit normal pointing into the room.
    pub normal: Vec3,
    pub area: f64,
}

/// Tiles the four walls into patches no larger than the configured
/// resolution. Floor and ceiling are not reflective.
pub fn wall_patches(room: &RoomConfig) -> Vec<WallPatch> {
    let res = room.wall_patch_resolution;
    let (hw, hd, h) = (room.width_m / 2.0, room.depth_m / 2.0, room.height_m);
    let nz = (h / res).ceil() as usize;
    let dz = h / nz as f64;
    let mut out = Vec::new();
    let mut wall = |len: f64, place: &dyn Fn(f64, f64) -> Vec3, normal: Vec3| {
        let n = (len / res).ceil() as usize;
        let ds = len / n as f64;
        for i in 0..n {
            let s = -len / 2.0 + (i as f64 + 0.5) * ds;
            for j in 0..nz {
                let z = (j as f64 + 0.5) * dz;
                out.push(WallPatch {
                    center: place(s, z),
                    normal,
                    area: ds * dz,
                });
            }
        }
    };
    wall(room.depth_m, &|s, z| Vec3::new(-hw, s, z), Vec3::new(1.0, 0.0, 0.0));
    wall(room.depth_m, &|s, z| Vec3::new(hw, s, z), Vec3::new(-1.0, 0.0, 0.0));
    wall(room.width_m, &|s, z| Vec3::new(s, -hd, z), Vec3::new(0.0, 1.0, 0.0));
    wall(room.width_m, &|s, z| Vec3::new(s, hd, z), Vec3::new(0.0, -1.0, 0.0));
    out
}

/// Gain and extra path length of a single reflection via `patch`.
fn reflection(
    ap: &AccessPoint,
    ue_pos: Vec3,
    patch: &WallPatch,
    cfg: &TransceiverConfig,
    rho: f64,
    m: f64,
    cos_fov: f64,
) -> Option<(f64, f64)> {
    let a = patch.center - ap.position;
    let d1 = a.norm();
    let b = ue_pos - patch.center;
    let d2 = b.norm();
    if d1 == 0.0 || d2 == 0.0 {
        return None;
    }
    let cos_phi = a.dot(N_TX) / d1;
    let cos_alpha = -a.dot(patch.normal) / d1;
    let cos_beta = b.dot(patch.normal) / d2;
    let cos_psi = -b.dot(N_RX) / d2;
    if cos_phi <= 0.0 || cos_alpha <= 0.0 || cos_beta <= 0.0 || cos_psi <= 0.0 || cos_psi < cos_fov {
        return None;
    }
    let g = rho * (m + 1.0) * cfg.pd_area * patch.area
        / (2.0 * PI * PI * d1 * d1 * d2 * d2)
        * cos_phi.powf(m)
        * cos_alpha
        * cos_beta
        * cos_psi
        * cfg.optical_filter_gain
        * cfg.concentrator_gain();
    Some((g, d1 + d2))
}

pub fn nlos_gain(
    ap: &AccessPoint,
    ue_pos: Vec3,
    room: &RoomConfig,
    cfg: &TransceiverConfig,
) -> Result<f64> {
    room.validate()?;
    Ok(nlos_gain_over(ap, ue_pos, &wall_patches(room), room.wall_reflectivity, cfg))
}

/// First-order reflected gain summed over a precomputed patch set.
pub fn nlos_gain_over(
    ap: &AccessPoint,
    ue_pos: Vec3,
    patches: &[WallPatch],
    rho: f64,
    cfg: &TransceiverConfig,
) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let m = cfg.lambertian_order();
    let cos_fov = cfg.fov.cos();
    patches
        .iter()
        .filter_map(|p| reflection(ap, ue_pos, p, cfg, rho, m, cos_fov))
        .map(|(g, _)| g)
        .sum()
}

pub fn total_gain(
    ap: &AccessPoint,
    ue_pos: Vec3,
    room: &RoomConfig,
    cfg: &TransceiverConfig,
) -> Result<f64> {
    Ok(los_gain(ap, ue_pos, cfg)? + nlos_gain(ap, ue_pos, room, cfg)?)
}

/// LED low-pass magnitude on subcarrier `k` of `n_subcarriers`.
pub fn led_response(k: usize, n_subcarriers: usize, bandwidth: f64, w0: f64) -> f64 {
    (-2.0 * PI * k as f64 * bandwidth / (n_subcarriers as f64 * w0)).exp()
}

/// A single propagation path: DC gain and delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: f64,
    pub delay: f64,
}

/// LOS path plus first-order reflections between one access point and one
/// receiver position.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipath {
    pub los: Path,
    pub reflections: Vec<Path>,
}

impl Multipath {
    pub fn compute(
        ap: &AccessPoint,
        ue_pos: Vec3,
        patches: &[WallPatch],
        rho: f64,
        cfg: &TransceiverConfig,
    ) -> Result<Self> {
        let d = ue_pos - ap.position;
        let dist = d.norm();
        if dist == 0.0 {
            return Err(Error::DegenerateGeometry("access point and receiver coincide".into()));
        }
        let los = Path {
            gain: los_gain_unchecked(d, dist, cfg),
            delay: dist / SPEED_OF_LIGHT,
        };
        let reflections = if rho == 0.0 {
            Vec::new()
        } else {
            let m = cfg.lambertian_order();
            let cos_fov = cfg.fov.cos();
            patches
                .iter()
                .filter_map(|p| reflection(ap, ue_pos, p, cfg, rho, m, cos_fov))
                .map(|(gain, len)| Path {
                    gain,
                    delay: len / SPEED_OF_LIGHT,
                })
                .collect()
        };
        Ok(Multipath { los, reflections })
    }

    pub fn nlos_gain(&self) -> f64 {
        self.reflections.iter().map(|p| p.gain).sum()
    }

    pub fn dc_gain(&self) -> f64 {
        self.los.gain + self.nlos_gain()
    }

    pub fn response(&self, f: f64) -> Complex64 {
        let tap = |p: &Path| Complex64::from_polar(p.gain, -2.0 * PI * f * p.delay);
        self.reflections.iter().map(tap).sum::<Complex64>() + tap(&self.los)
    }

    /// Merges reflections whose delays fall in the same `bin` seconds wide
    /// window into one path at their gain-weighted mean delay.
    pub fn binned(&self, bin: f64) -> Multipath {
        if self.reflections.is_empty() {
            return self.clone();
        }
        let t0 = self.reflections.iter().map(|p| p.delay).fold(f64::INFINITY, f64::min);
        let mut acc: Vec<(f64, f64)> = Vec::new();
        for p in &self.reflections {
            let i = ((p.delay - t0) / bin) as usize;
            if i >= acc.len() {
                acc.resize(i + 1, (0.0, 0.0));
            }
            acc[i].0 += p.gain;
            acc[i].1 += p.gain * p.delay;
        }
        let reflections = acc
            .into_iter()
            .filter(|&(g, _)| g > 0.0)
            .map(|(g, gd)| Path { gain: g, delay: gd / g })
            .collect();
        Multipath {
            los: self.los,
            reflections,
        }
    }

    /// `|H(k·spacing)|²` for `k = 1..=n`.
    pub fn power_response(&self, n: usize, spacing: f64) -> Vec<f64> {
        let paths: Vec<&Path> = std::iter::once(&self.los).chain(&self.reflections).collect();
        let steps: Vec<Complex64> = paths
            .iter()
            .map(|p| Complex64::from_polar(1.0, -2.0 * PI * spacing * p.delay))
            .collect();
        let mut phasors: Vec<Complex64> = paths.iter().map(|p| Complex64::new(p.gain, 0.0)).collect();
        let mut out = Vec::with_capacity(n);
        for k in 1..=n {
            // Re-anchor periodically so the recurrence does not drift.
            if k % 256 == 0 {
                for (ph, p) in phasors.iter_mut().zip(&paths) {
                    *ph = Complex64::from_polar(p.gain, -2.0 * PI * spacing * k as f64 * p.delay);
                }
            } else {
                for (ph, s) in phasors.iter_mut().zip(&steps) {
                    *ph *= s;
                }
            }
            out.push(phasors.iter().sum::<Complex64>().norm_sqr());
        }
        out
    }
}

/// `|H(f)|² / |H_LOS|²` over `freq_grid`.
///
/// When the LOS path is blocked by the field of view the DC value of the
/// full response is used as the reference instead.
pub fn normalized_frequency_response(
    ap: &AccessPoint,
    ue_pos: Vec3,
    room: &RoomConfig,
    cfg: &TransceiverConfig,
    freq_grid: &[f64],
) -> Result<Vec<f64>> {
    if freq_grid.is_empty() {
        return Err(Error::param("freq_grid", "must not be empty"));
    }
    room.validate()?;
    let mp = Multipath::compute(ap, ue_pos, &wall_patches(room), room.wall_reflectivity, cfg)?;
    let reference = if mp.los.gain > 0.0 {
        mp.los.gain * mp.los.gain
    } else {
        mp.dc_gain().powi(2)
    };
    Ok(freq_grid
        .iter()
        .map(|&f| mp.response(f).norm_sqr() / reference)
        .collect())
}

/// Peak-to-trough spread of a positive response in dB.
pub fn fluctuation_db(ratios: &[f64]) -> f64 {
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    10.0 * (max / min).log10()
}

/// Index of the access point with the largest DC gain at `ue_pos`.
pub fn serving_ap(
    aps: &[AccessPoint],
    ue_pos: Vec3,
    patches: &[WallPatch],
    rho: f64,
    cfg: &TransceiverConfig,
) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, ap) in aps.iter().enumerate() {
        let g = los_gain(ap, ue_pos, cfg)? + nlos_gain_over(ap, ue_pos, patches, rho, cfg);
        if g > best.1 {
            best = (i, g);
        }
    }
    if aps.is_empty() {
        return Err(Error::param("aps", "no access points configured"));
    }
    Ok(best.0)
}

/// Room, optics, access points and the wall tiling, ready for repeated
/// channel evaluations.
#[derive(Debug, Clone)]
pub struct Scene {
    pub room: RoomConfig,
    pub transceiver: TransceiverConfig,
    pub aps: Vec<AccessPoint>,
    patches: Vec<WallPatch>,
    /// Reflection delay bin width used for per-subcarrier responses.
    pub delay_bin: f64,
}

impl Scene {
    pub fn new(room: RoomConfig, transceiver: TransceiverConfig, aps: Vec<AccessPoint>) -> Result<Self> {
        room.validate()?;
        transceiver.validate()?;
        for (i, ap) in aps.iter().enumerate() {
            ap.validate(i, &room)?;
            if let Some(&bad) = ap.co_channel_set.iter().find(|&&o| o >= aps.len()) {
                return Err(Error::param("co_channel_set", format!("index {bad} out of range")));
            }
        }
        Ok(Scene {
            patches: wall_patches(&room),
            room,
            transceiver,
            aps,
            delay_bin: 1e-9,
        })
    }

    pub fn patches(&self) -> &[WallPatch] {
        &self.patches
    }

    pub fn multipath(&self, ap: usize, ue_pos: Vec3) -> Result<Multipath> {
        Multipath::compute(
            &self.aps[ap],
            ue_pos,
            &self.patches,
            self.room.wall_reflectivity,
            &self.transceiver,
        )
    }

    pub fn dc_gain(&self, ap: usize, ue_pos: Vec3) -> Result<f64> {
        Ok(los_gain(&self.aps[ap], ue_pos, &self.transceiver)?
            + nlos_gain_over(
                &self.aps[ap],
                ue_pos,
                &self.patches,
                self.room.wall_reflectivity,
                &self.transceiver,
            ))
    }

    pub fn serving_ap(&self, ue_pos: Vec3) -> Result<usize> {
        serving_ap(
            &self.aps,
            ue_pos,
            &self.patches,
            self.room.wall_reflectivity,
            &self.transceiver,
        )
    }
}

/// Writes `x,y,gain` rows, one per grid point.
pub fn write_gain_map<W: std::io::Write>(w: W, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "gain"])?;
    for &(x, y, g) in rows {
        wr.write_record([format!("{x}"), format!("{y}"), format!("{g:e}")])?;
    }
    wr.flush()?;
    Ok(())
}
