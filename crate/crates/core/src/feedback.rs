//! Feedback schemes: full SINR vectors, one-bit threshold reports,
//! limited-content (LCF) average-power updates and limited-frequency (LFF)
//! periodic full reports, plus their airtime and bit overheads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LinkBudget, NamedThreshold, ThresholdSetting};
use crate::downlink::{simplified_sinr, Allocation, SinrVector, UeDemand};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SchemeKind {
    Full,
    /// Linear SINR threshold.
    OneBit { threshold: f64 },
    Lcf,
    /// Seconds between full reports.
    Lff { update_interval: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackScheme {
    pub kind: SchemeKind,
    /// 𝓑, bits per quantised SINR value.
    pub bits_per_sinr: u32,
}

impl FeedbackScheme {
    pub fn new(kind: SchemeKind, bits_per_sinr: u32) -> Result<Self> {
        let s = FeedbackScheme { kind, bits_per_sinr };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits_per_sinr == 0 {
            return Err(Error::param("bits_per_sinr", "must be at least 1"));
        }
        match self.kind {
            SchemeKind::OneBit { threshold } if !(threshold > 0.0) => {
                Err(Error::param("threshold", "must be positive"))
            }
            SchemeKind::Lff { update_interval } if !(update_interval > 0.0) => {
                Err(Error::param("update_interval", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SchemeKind::Full => "ff",
            SchemeKind::OneBit { .. } => "onebit",
            SchemeKind::Lcf => "lcf",
            SchemeKind::Lff { .. } => "lff",
        }
    }

    /// What a UE with channel `sinr` sends this frame. `first` marks the
    /// first report after attaching to an access point.
    pub fn report(&self, sinr: &SinrVector, first: bool, frame_time: f64) -> FeedbackReport {
        match self.kind {
            SchemeKind::Full => FeedbackReport::Full(sinr.clone()),
            SchemeKind::OneBit { threshold } => FeedbackReport::Bits(
                sinr.per_subcarrier
                    .iter()
                    .map(|&g| one_bit_report(g, threshold))
                    .collect(),
            ),
            SchemeKind::Lcf if first => FeedbackReport::Full(sinr.clone()),
            SchemeKind::Lcf => FeedbackReport::AvgPower(sinr.avg_power_ref),
            SchemeKind::Lff { update_interval } => {
                if first || frame_time % update_interval < 1e-12 {
                    FeedbackReport::Full(sinr.clone())
                } else {
                    FeedbackReport::Deferred
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeedbackReport {
    Full(SinrVector),
    Bits(Vec<bool>),
    AvgPower(f64),
    Deferred,
}

/// ε = t_fb / t_u.
pub fn feedback_ratio(t_fb: f64, t_u: f64) -> Result<f64> {
    if !(t_fb > 0.0 && t_fb <= t_u) {
        return Err(Error::InvalidInterval { t_fb, t_u });
    }
    Ok(t_fb / t_u)
}

/// ε from frame counts: `N_f t_fb / ((N_D + N_f) t_fr)`.
pub fn feedback_ratio_frames(n_data: u64, n_feedback: u64, t_fb: f64, t_fr: f64) -> f64 {
    n_feedback as f64 * t_fb / ((n_data + n_feedback) as f64 * t_fr)
}

/// Rescales a stored SINR vector by the ratio of current to stored average
/// power.
pub fn lcf_estimate(initial: &SinrVector, current_avg_power: f64) -> Result<SinrVector> {
    if !(initial.avg_power_ref > 0.0) {
        return Err(Error::ZeroReference);
    }
    let s = current_avg_power / initial.avg_power_ref;
    Ok(SinrVector {
        per_subcarrier: initial.per_subcarrier.iter().map(|g| g * s).collect(),
        avg_power_ref: current_avg_power,
    })
}

pub fn one_bit_report(sinr: f64, threshold: f64) -> bool {
    sinr >= threshold
}

/// Uniform choice among the set bits. With `fallback`, an all-zero report
/// yields a uniform choice over every UE instead of `None`.
pub fn ap_select<R: Rng + ?Sized>(bits: &[bool], rng: &mut R, fallback: bool) -> Option<usize> {
    let ones = bits.iter().filter(|&&b| b).count();
    if ones == 0 {
        return if fallback && !bits.is_empty() {
            Some(rng.random_range(0..bits.len()))
        } else {
            None
        };
    }
    let pick = rng.random_range(0..ones);
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .nth(pick)
        .map(|(i, _)| i)
}

/// Scheme tag for the overhead table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverheadScheme {
    Full,
    OneBit,
    Lcf,
    /// Full report every `m` frames.
    Lff { m: u64 },
}

/// Feedback bits per frame for one UE.
pub fn overhead_per_frame(scheme: OverheadScheme, n_subcarriers: u64, bits_per_sinr: u64) -> Result<u64> {
    let data = n_subcarriers / 2 - 1;
    Ok(match scheme {
        OverheadScheme::Full => bits_per_sinr * data,
        OverheadScheme::OneBit => data,
        OverheadScheme::Lcf => bits_per_sinr,
        OverheadScheme::Lff { m } => {
            if m == 0 {
                return Err(Error::param("m", "must be at least 1"));
            }
            bits_per_sinr * data / m
        }
    })
}

/// Same as [`overhead_per_frame`] without integer truncation.
pub fn overhead_per_frame_exact(scheme: OverheadScheme, n_subcarriers: u64, bits_per_sinr: u64) -> f64 {
    let data = (n_subcarriers / 2 - 1) as f64;
    let b = bits_per_sinr as f64;
    match scheme {
        OverheadScheme::Full => b * data,
        OverheadScheme::OneBit => data,
        OverheadScheme::Lcf => b,
        OverheadScheme::Lff { m } => b * data / m as f64,
    }
}

/// Frames per LFF period, `⌈t_u / t_fr⌉`.
pub fn lff_frames(t_u: f64, t_fr: f64) -> u64 {
    if t_u.is_infinite() {
        return u64::MAX;
    }
    (t_u / t_fr - 1e-9).ceil().max(1.0) as u64
}

/// Uplink airtime spent on feedback when a full report of `𝓑(K/2−1)` bits
/// occupies `t_fb` of every `t_fr` frame.
pub fn airtime_fraction(bits_per_frame: f64, n_subcarriers: u64, bits_per_sinr: u64, t_fb: f64, t_fr: f64) -> f64 {
    let full = (bits_per_sinr * (n_subcarriers / 2 - 1)) as f64;
    bits_per_frame / full * t_fb / t_fr
}

/// Resolves a threshold setting against the LOS cell model.
pub fn resolve_threshold(setting: ThresholdSetting, link: &LinkBudget) -> f64 {
    match setting {
        ThresholdSetting::Fixed(t) => t,
        ThresholdSetting::Named(NamedThreshold::CellMin) => {
            simplified_sinr(link.cell_radius, link.data_subcarriers(), link)
        }
        ThresholdSetting::Named(NamedThreshold::CellMedian) => median_cell_sinr(link),
    }
}

/// Median of the simplified SINR over an area-uniform position in the cell
/// and a uniform data subcarrier.
pub fn median_cell_sinr(link: &LinkBudget) -> f64 {
    let n = link.data_subcarriers();
    let rc2 = link.cell_radius * link.cell_radius;
    let h2 = link.h * link.h;
    let cdf = |x: f64| -> f64 {
        let mut below = 0.0;
        for k in 1..=n {
            // γ(r,k) ≤ x  ⇔  r² ≥ (G e^{−ck} / x)^{1/(m+3)} − h².
            let g = link.g_dl * (-link.subcarrier_decay() * k as f64).exp();
            let r2 = (g / x).powf(1.0 / (link.m + 3.0)) - h2;
            below += 1.0 - (r2 / rc2).clamp(0.0, 1.0);
        }
        below / n as f64
    };
    let (mut lo, mut hi) = (
        simplified_sinr(link.cell_radius, n, link),
        simplified_sinr(0.0, 1, link),
    );
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if cdf(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// One-bit scheduling: each subcarrier, in ascending order, goes to a
/// uniformly chosen UE that reported `1` on it and has not yet been promised
/// its requested rate. Promised rate accrues at `rate_per_subcarrier`.
pub fn one_bit_schedule<R: Rng + ?Sized>(
    ues: &[UeDemand],
    bits: &[Vec<bool>],
    rate_per_subcarrier: f64,
    rng: &mut R,
    fallback: bool,
) -> Result<Allocation> {
    if ues.len() != bits.len() {
        return Err(Error::LengthMismatch {
            expected: ues.len(),
            got: bits.len(),
        });
    }
    let n = bits.first().map_or(0, |b| b.len());
    let mut promised = vec![0.0; ues.len()];
    let mut alloc = Allocation::empty(n);
    let mut needy = Vec::with_capacity(ues.len());
    let mut flags = Vec::with_capacity(ues.len());
    for k in 0..n {
        needy.clear();
        flags.clear();
        for (j, u) in ues.iter().enumerate() {
            if promised[j] < u.r_req {
                needy.push(j);
                flags.push(bits[j][k]);
            }
        }
        if needy.is_empty() {
            break;
        }
        if let Some(i) = ap_select(&flags, rng, fallback) {
            let j = needy[i];
            promised[j] += rate_per_subcarrier;
            alloc.owner[k] = Some(j);
        }
    }
    Ok(alloc)
}

/// Rate actually carried under one-bit scheduling: each owned subcarrier
/// delivers the fixed rate if the true SINR clears the threshold.
pub fn one_bit_rate(alloc: &Allocation, true_sinrs: &[SinrVector], threshold: f64, spacing: f64) -> Vec<f64> {
    let per = spacing * (1.0 + threshold).log2();
    let mut out = vec![0.0; true_sinrs.len()];
    for (i, o) in alloc.owner.iter().enumerate() {
        if let Some(j) = *o {
            if true_sinrs[j].per_subcarrier[i] >= threshold {
                out[j] += per;
            }
        }
    }
    out
}
