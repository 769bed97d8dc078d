//! Uplink CSMA/CA with mandatory RTS/CTS and an AP channel-busy tone:
//! saturation throughput in closed form and a slot-level simulator that
//! checks it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Scene, Vec3};
use crate::config::LinkBudget;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    /// w, in slots.
    pub contention_window: u32,
    pub n_ues: usize,
    pub t_slot: f64,
    pub sifs: f64,
    pub difs: f64,
    pub t_delay: f64,
    /// Frame lengths in bits.
    pub l_rts: f64,
    pub l_cts: f64,
    pub l_ack: f64,
    /// Payload length in bytes.
    pub l_data_bytes: f64,
    pub h_phy: f64,
    pub h_mac: f64,
    /// B_un in Hz.
    pub bandwidth: f64,
    /// P_u,opt in W.
    pub optical_power: f64,
    /// t_fr in s.
    pub frame_duration: f64,
}

impl MacParams {
    pub fn validate(&self) -> Result<()> {
        if self.contention_window < 2 {
            return Err(Error::param("contention_window", "must be at least 2"));
        }
        if self.n_ues == 0 {
            return Err(Error::param("n_ues", "must be at least 1"));
        }
        let positive = [
            ("t_slot", self.t_slot),
            ("sifs", self.sifs),
            ("difs", self.difs),
            ("t_delay", self.t_delay),
            ("l_rts", self.l_rts),
            ("l_cts", self.l_cts),
            ("l_ack", self.l_ack),
            ("l_data_bytes", self.l_data_bytes),
            ("h_phy", self.h_phy),
            ("h_mac", self.h_mac),
            ("bandwidth", self.bandwidth),
            ("optical_power", self.optical_power),
            ("frame_duration", self.frame_duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacTiming {
    pub t_rts: f64,
    pub t_cts: f64,
    pub t_ack: f64,
    pub t_hdr: f64,
    pub t_data: f64,
    /// Duration of a successful exchange.
    pub t_success: f64,
    /// Duration of a collision.
    pub t_collision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessProbabilities {
    /// Per-slot transmission probability τ.
    pub tau: f64,
    /// Probability that at least one station transmits.
    pub p_transmit: f64,
    /// Probability that a transmission succeeds.
    pub p_success: f64,
}

pub fn access_probabilities(w: u32, n: usize) -> AccessProbabilities {
    let tau = 2.0 / (w as f64 + 1.0);
    let idle = (1.0 - tau).powi(n as i32);
    let p_transmit = 1.0 - idle;
    let p_success = if n == 1 {
        1.0
    } else {
        (n as f64 * tau * (1.0 - tau).powi(n as i32 - 1) / p_transmit).min(1.0)
    };
    AccessProbabilities {
        tau,
        p_transmit,
        p_success,
    }
}

/// Frame durations when every frame is sent at `phy_rate` bit/s.
pub fn timing_components(params: &MacParams, phy_rate: f64) -> Result<MacTiming> {
    if !(phy_rate > 0.0) {
        return Err(Error::param("phy_rate", "must be positive"));
    }
    let t_rts = params.l_rts / phy_rate;
    let t_cts = params.l_cts / phy_rate;
    let t_ack = params.l_ack / phy_rate;
    let t_hdr = (params.h_phy + params.h_mac) / phy_rate;
    let t_data = 8.0 * params.l_data_bytes / phy_rate;
    let d = params.t_delay;
    let t_success = t_rts
        + params.sifs
        + d
        + t_cts
        + params.sifs
        + d
        + t_hdr
        + t_data
        + params.sifs
        + d
        + t_ack
        + params.difs
        + d;
    let t_collision = t_rts + params.difs + d;
    Ok(MacTiming {
        t_rts,
        t_cts,
        t_ack,
        t_hdr,
        t_data,
        t_success,
        t_collision,
    })
}

/// Saturation throughput normalised to the channel rate, T̃_u.
pub fn normalized_mac_throughput(params: &MacParams, timing: &MacTiming) -> f64 {
    let p = access_probabilities(params.contention_window, params.n_ues);
    let busy_ok = p.p_transmit * p.p_success;
    busy_ok * timing.t_data
        / ((1.0 - p.p_transmit) * params.t_slot
            + busy_ok * timing.t_success
            + p.p_transmit * (1.0 - p.p_success) * timing.t_collision)
}

/// LOS-only uplink SINR G_u / (r² + h²)^(m+3).
pub fn uplink_sinr(r: f64, link: &LinkBudget) -> f64 {
    link.g_ul / link.path_loss(r)
}

/// Uplink SINR at the serving AP with DC gains from `scene` and
/// interference from co-channel UEs at `interferers`.
pub fn uplink_sinr_exact(
    scene: &Scene,
    ue_pos: Vec3,
    serving: usize,
    interferers: &[Vec3],
    params: &MacParams,
    noise_psd: f64,
) -> Result<f64> {
    let rp = scene.transceiver.pd_responsivity * params.optical_power;
    let eta = scene.transceiver.conversion_factor;
    let signal = (rp * scene.dc_gain(serving, ue_pos)?).powi(2);
    let mut interference = 0.0;
    for &p in interferers {
        interference += (rp * scene.dc_gain(serving, p)?).powi(2);
    }
    Ok(signal / (eta * eta * noise_psd * params.bandwidth + interference))
}

/// Control-frame rate used when none is configured: the Shannon rate of a
/// cell-edge UE, floored at 1 Mbit/s.
pub fn default_control_rate(link: &LinkBudget) -> f64 {
    (link.b_un * (1.0 + uplink_sinr(link.cell_radius, link)).log2()).max(1e6)
}

/// Per-UE uplink rate. `t_u = None` means no feedback is carried.
pub fn uplink_rate(
    params: &MacParams,
    timing: &MacTiming,
    gamma_u: f64,
    t_fb: f64,
    t_u: Option<f64>,
) -> Result<f64> {
    let share = match t_u {
        None => 1.0,
        Some(t_u) => {
            if !(t_fb >= 0.0 && t_fb < t_u) {
                return Err(Error::InvalidInterval { t_fb, t_u });
            }
            1.0 - t_fb / t_u
        }
    };
    Ok(share * normalized_mac_throughput(params, timing) * params.bandwidth / params.n_ues as f64
        * (1.0 + gamma_u).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotEvent {
    Idle,
    Success,
    Collision,
}

impl SlotEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotEvent::Idle => "idle",
            SlotEvent::Success => "success",
            SlotEvent::Collision => "collision",
        }
    }
}

/// What stations that did not transmit do with their counters during a busy
/// period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FreezeRule {
    /// The busy period counts as one backoff step.
    #[default]
    ConsumeSlot,
    /// Counters hold their value until the channel is idle again.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub p_transmit: f64,
    pub p_success: f64,
    pub throughput: f64,
    pub slots: u64,
}

/// Runs `n_slots` generic slots of the contention process.
///
/// Every station draws its counter uniformly from `[0, w−1]` and transmits
/// an RTS when it reaches zero. The AP's busy tone reaches every station
/// instantly, so there are no hidden terminals. A lone transmitter succeeds;
/// two or more collide. Transmitters redraw after every attempt.
pub fn simulate_slotted_mac<R: Rng + ?Sized>(
    rng: &mut R,
    params: &MacParams,
    timing: &MacTiming,
    n_slots: u64,
    rule: FreezeRule,
    mut trace: Option<&mut Vec<SlotEvent>>,
) -> SlotStats {
    let w = params.contention_window;
    let mut counters: Vec<u32> = (0..params.n_ues).map(|_| rng.random_range(0..w)).collect();
    let (mut idle, mut ok, mut coll) = (0u64, 0u64, 0u64);
    for _ in 0..n_slots {
        let tx = counters.iter().filter(|&&c| c == 0).count();
        let ev = match tx {
            0 => SlotEvent::Idle,
            1 => SlotEvent::Success,
            _ => SlotEvent::Collision,
        };
        for c in counters.iter_mut() {
            if *c == 0 {
                *c = rng.random_range(0..w);
            } else if tx == 0 || rule == FreezeRule::ConsumeSlot {
                *c -= 1;
            }
        }
        match ev {
            SlotEvent::Idle => idle += 1,
            SlotEvent::Success => ok += 1,
            SlotEvent::Collision => coll += 1,
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(ev);
        }
    }
    let busy = ok + coll;
    let time = idle as f64 * params.t_slot + ok as f64 * timing.t_success + coll as f64 * timing.t_collision;
    SlotStats {
        p_transmit: busy as f64 / n_slots as f64,
        p_success: if busy == 0 { 0.0 } else { ok as f64 / busy as f64 },
        throughput: ok as f64 * timing.t_data / time,
        slots: n_slots,
    }
}

/// Writes `slot,event` rows.
pub fn write_trace_csv<W: std::io::Write>(w: W, events: &[SlotEvent]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["slot", "event"])?;
    for (i, e) in events.iter().enumerate() {
        wr.write_record([i.to_string(), e.as_str().to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
