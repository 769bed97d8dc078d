//! DCO-OFDM downlink: frame layout, per-subcarrier SINR, the rate-fair
//! scheduler and the rates and subcarrier counts that follow from them.

use std::f64::consts::{LOG2_E, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{led_response, Scene, Vec3};
use crate::config::LinkBudget;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmaConfig {
    /// K, total IFFT size.
    pub n_subcarriers: usize,
    /// B_dn in Hz.
    pub bandwidth: f64,
    /// η.
    pub dc_bias_factor: f64,
    /// N_0 in A²/Hz.
    pub noise_psd: f64,
}

impl OfdmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 4 || !self.n_subcarriers.is_multiple_of(2) {
            return Err(Error::param("n_subcarriers", "must be even and at least 4"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::param("bandwidth", "must be positive"));
        }
        Ok(())
    }

    /// ζ = √(K/(K−2)).
    pub fn zeta(&self) -> f64 {
        let k = self.n_subcarriers as f64;
        (k / (k - 2.0)).sqrt()
    }

    /// Number of data-bearing subcarriers, K/2 − 1.
    pub fn data_subcarriers(&self) -> usize {
        self.n_subcarriers / 2 - 1
    }

    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.n_subcarriers as f64
    }

    /// σ² = N_0 B_dn / K.
    pub fn noise_per_subcarrier(&self) -> f64 {
        self.noise_psd * self.spacing()
    }
}

/// Downlink SINR of one UE on subcarriers 1..=K/2−1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrVector {
    /// Entry `i` belongs to subcarrier `i + 1`.
    pub per_subcarrier: Vec<f64>,
    /// DC-limit SINR γ_{d,j,0}.
    pub avg_power_ref: f64,
}

impl SinrVector {
    pub fn new(per_subcarrier: Vec<f64>, avg_power_ref: f64) -> Result<Self> {
        if per_subcarrier.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::param("per_subcarrier", "SINR entries must be non-negative"));
        }
        if !(avg_power_ref > 0.0) {
            return Err(Error::param("avg_power_ref", "must be positive"));
        }
        Ok(SinrVector {
            per_subcarrier,
            avg_power_ref,
        })
    }

    /// SINR on subcarrier `k` (1-based).
    pub fn at(&self, k: usize) -> f64 {
        self.per_subcarrier[k - 1]
    }

    pub fn len(&self) -> usize {
        self.per_subcarrier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_subcarrier.is_empty()
    }
}

/// Subcarrier ownership for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    /// Entry `i` is the owner of subcarrier `i + 1`.
    pub owner: Vec<Option<usize>>,
}

impl Allocation {
    pub fn empty(data_subcarriers: usize) -> Self {
        Allocation {
            owner: vec![None; data_subcarriers],
        }
    }

    pub fn owner_of(&self, k: usize) -> Option<usize> {
        self.owner[k - 1]
    }

    /// Subcarrier indices (1-based) owned by `ue`.
    pub fn subcarriers_of(&self, ue: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner
            .iter()
            .enumerate()
            .filter(move |(_, o)| **o == Some(ue))
            .map(|(i, _)| i + 1)
    }

    pub fn count(&self, ue: usize) -> usize {
        self.owner.iter().filter(|o| **o == Some(ue)).count()
    }

    pub fn assigned(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }
}

/// Places `symbols` on subcarriers 1..K/2−1, mirrors their conjugates onto
/// the upper half and scales by ζ so the time-domain signal is real.
pub fn build_ofdma_frame(symbols: &[Complex64], cfg: &OfdmaConfig) -> Result<Vec<Complex64>> {
    let k = cfg.n_subcarriers;
    if symbols.len() != cfg.data_subcarriers() {
        return Err(Error::LengthMismatch {
            expected: cfg.data_subcarriers(),
            got: symbols.len(),
        });
    }
    let z = cfg.zeta();
    let mut frame = vec![Complex64::new(0.0, 0.0); k];
    for (i, s) in symbols.iter().enumerate() {
        frame[i + 1] = s * z;
        frame[k - i - 1] = s.conj() * z;
    }
    Ok(frame)
}

/// Exact SINR on subcarrier `k` (1-based) with multipath responses from
/// `scene` and interference from the serving AP's co-channel set.
pub fn downlink_sinr(
    scene: &Scene,
    ue_pos: Vec3,
    serving: usize,
    k: usize,
    cfg: &OfdmaConfig,
) -> Result<f64> {
    let f = k as f64 * cfg.spacing();
    let led = led_response(k, cfg.n_subcarriers, cfg.bandwidth, scene.transceiver.led_corner);
    let rpd = scene.transceiver.pd_responsivity;
    let rx_power = |ap: usize| -> Result<f64> {
        let h = scene.multipath(ap, ue_pos)?.response(f).norm();
        Ok((rpd * scene.aps[ap].optical_power * h * led).powi(2))
    };
    let signal = rx_power(serving)?;
    let mut interference = 0.0;
    for &i in &scene.aps[serving].co_channel_set {
        interference += rx_power(i)?;
    }
    Ok(signal / (noise_term(cfg) + interference))
}

fn noise_term(cfg: &OfdmaConfig) -> f64 {
    (cfg.n_subcarriers as f64 - 2.0) * cfg.dc_bias_factor.powi(2) * cfg.noise_per_subcarrier()
}

/// Exact SINR on every data subcarrier, with the DC-limit SINR as reference.
///
/// Reflections are grouped into 1 ns delay bins before the per-subcarrier
/// sweep.
pub fn downlink_sinr_vector(
    scene: &Scene,
    ue_pos: Vec3,
    serving: usize,
    cfg: &OfdmaConfig,
) -> Result<SinrVector> {
    let n = cfg.data_subcarriers();
    let rpd = scene.transceiver.pd_responsivity;
    let w0 = scene.transceiver.led_corner;
    let response = |ap: usize| -> Result<(Vec<f64>, f64)> {
        let mp = scene.multipath(ap, ue_pos)?;
        let scale = (rpd * scene.aps[ap].optical_power).powi(2);
        let dc = scale * mp.dc_gain().powi(2);
        let per = mp
            .binned(scene.delay_bin)
            .power_response(n, cfg.spacing())
            .into_iter()
            .map(|p| p * scale)
            .collect();
        Ok((per, dc))
    };
    let (signal, signal_dc) = response(serving)?;
    let mut interf = vec![0.0; n];
    let mut interf_dc = 0.0;
    for &i in &scene.aps[serving].co_channel_set {
        let (p, dc) = response(i)?;
        interf.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        interf_dc += dc;
    }
    let noise = noise_term(cfg);
    let per = (1..=n)
        .map(|k| {
            let led2 = led_response(k, cfg.n_subcarriers, cfg.bandwidth, w0).powi(2);
            signal[k - 1] * led2 / (noise + interf[k - 1] * led2)
        })
        .collect();
    SinrVector::new(per, signal_dc / (noise + interf_dc))
}

/// LOS-only, interference-free SINR at horizontal distance `r` on
/// subcarrier `k`.
pub fn simplified_sinr(r: f64, k: usize, link: &LinkBudget) -> f64 {
    link.g_dl * (-link.subcarrier_decay() * k as f64).exp() / link.path_loss(r)
}

pub fn simplified_sinr_vector(r: f64, link: &LinkBudget) -> SinrVector {
    let base = link.g_dl / link.path_loss(r);
    let decay = (-link.subcarrier_decay()).exp();
    let mut g = base;
    let per = (0..link.data_subcarriers())
        .map(|_| {
            g *= decay;
            g
        })
        .collect();
    SinrVector {
        per_subcarrier: per,
        avg_power_ref: base,
    }
}

/// Scheduler state for one UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeDemand {
    pub r_req: f64,
    pub running_avg: f64,
}

/// Initial running average, in bit/s.
pub const SCHEDULER_DELTA: f64 = 1.0;

impl UeDemand {
    pub fn fresh(r_req: f64) -> Self {
        UeDemand {
            r_req,
            running_avg: SCHEDULER_DELTA,
        }
    }
}

/// Assigns each subcarrier in ascending order to the UE with the largest
/// `R_req / R̄` among those still short of `R_req`. Ties go to the lower
/// index.
pub fn fair_schedule(ues: &[UeDemand], sinrs: &[SinrVector], cfg: &OfdmaConfig) -> Result<Allocation> {
    if ues.len() != sinrs.len() {
        return Err(Error::LengthMismatch {
            expected: ues.len(),
            got: sinrs.len(),
        });
    }
    if let Some(bad) = ues.iter().find(|u| !(u.r_req > 0.0) || !(u.running_avg > 0.0)) {
        return Err(Error::param("r_req", format!("must be positive, got {bad:?}")));
    }
    let n = cfg.data_subcarriers();
    if let Some(s) = sinrs.iter().find(|s| s.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            got: s.len(),
        });
    }
    let df = cfg.spacing();
    Ok(schedule_by(ues, n, |j, k| df * (1.0 + sinrs[j].at(k)).log2()))
}

/// Rate-fair assignment driven by an arbitrary believed per-subcarrier rate.
pub fn schedule_by(ues: &[UeDemand], n_sub: usize, rate: impl Fn(usize, usize) -> f64) -> Allocation {
    let mut avg: Vec<f64> = ues.iter().map(|u| u.running_avg).collect();
    let mut got = vec![0.0; ues.len()];
    let mut alloc = Allocation::empty(n_sub);
    for k in 1..=n_sub {
        let mut best: Option<(usize, f64)> = None;
        for (j, u) in ues.iter().enumerate() {
            if got[j] >= u.r_req {
                continue;
            }
            let metric = u.r_req / avg[j];
            if best.is_none_or(|(_, m)| metric > m) {
                best = Some((j, metric));
            }
        }
        let Some((j, _)) = best else { break };
        let inc = rate(j, k);
        avg[j] += inc;
        got[j] += inc;
        alloc.owner[k - 1] = Some(j);
    }
    alloc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RateMode {
    #[default]
    Exact,
    HighSnr,
}

/// Per-UE downlink rate in bit/s.
pub fn downlink_rate(
    alloc: &Allocation,
    sinrs: &[SinrVector],
    cfg: &OfdmaConfig,
    mode: RateMode,
) -> Vec<f64> {
    let mut rates = vec![0.0; sinrs.len()];
    for (i, owner) in alloc.owner.iter().enumerate() {
        if let Some(j) = *owner {
            let g = sinrs[j].per_subcarrier[i];
            rates[j] += match mode {
                RateMode::Exact => (1.0 + g).log2(),
                RateMode::HighSnr => g.log2(),
            };
        }
    }
    rates.iter_mut().for_each(|r| *r *= cfg.spacing());
    rates
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KreqMode {
    Exact,
    Approx,
}

/// `log2(G / (r² + h²)^(m+3))`.
pub fn log_sinr_ref(r: f64, link: &LinkBudget) -> f64 {
    (link.g_dl / link.path_loss(r)).log2()
}

/// Continuous smaller root of the subcarrier-count quadratic.
pub fn k_req_continuous(r0: f64, r_req: f64, link: &LinkBudget) -> Result<f64> {
    if !(r_req >= 0.0) {
        return Err(Error::param("r_req", "must be non-negative"));
    }
    let l0 = log_sinr_ref(r0, link);
    if !(l0 > 0.0) {
        return Err(Error::InfeasibleRate(format!("reference SINR below 0 dB at r = {r0}")));
    }
    let df = link.subcarrier_spacing();
    let a = 2.0 * PI * df / link.w0 * LOG2_E;
    let c = l0 / a;
    let b = 1.0 - c;
    let disc = b * b - 4.0 * r_req / (a * df);
    if disc < 0.0 {
        return Err(Error::InfeasibleRate(format!(
            "{r_req} bit/s exceeds what any subcarrier count can deliver at r = {r0}"
        )));
    }
    Ok(((c - 1.0) - disc.sqrt()) / 2.0)
}

/// High-SNR rate from the `n` lowest subcarriers at distance `r0`.
pub fn lowest_subcarriers_rate(r0: f64, n: usize, link: &LinkBudget) -> f64 {
    let l0 = log_sinr_ref(r0, link);
    let a = link.subcarrier_decay() * LOG2_E;
    let nf = n as f64;
    link.subcarrier_spacing() * (nf * l0 - a * nf * (nf + 1.0) / 2.0)
}

/// Subcarriers needed by a UE at `r0` to reach `r_req` on the lowest
/// subcarriers under the high-SNR rate.
pub fn k_req(r0: f64, r_req: f64, link: &LinkBudget, mode: KreqMode) -> Result<usize> {
    let max = link.data_subcarriers();
    let k = match mode {
        KreqMode::Exact => {
            let kc = k_req_continuous(r0, r_req, link)?;
            let mut k = kc.ceil().max(0.0) as usize;
            if k > 0 && lowest_subcarriers_rate(r0, k - 1, link) >= r_req {
                k -= 1;
            }
            if lowest_subcarriers_rate(r0, k, link) < r_req {
                k += 1;
            }
            k
        }
        KreqMode::Approx => {
            let l0 = log_sinr_ref(r0, link);
            if !(l0 > 0.0) {
                return Err(Error::InfeasibleRate(format!("reference SINR below 0 dB at r = {r0}")));
            }
            (r_req / (link.subcarrier_spacing() * l0)).ceil() as usize
        }
    };
    if k > max {
        return Err(Error::InfeasibleRate(format!(
            "{k} subcarriers needed, only {max} available"
        )));
    }
    Ok(k)
}

/// Writes `k,owner,sinr_db` rows; the SINR is the owner's on that
/// subcarrier.
pub fn write_allocation_csv<W: std::io::Write>(
    w: W,
    alloc: &Allocation,
    sinrs: &[SinrVector],
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "owner", "sinr_db"])?;
    for (i, owner) in alloc.owner.iter().enumerate() {
        let (o, s) = match owner {
            Some(j) => (j.to_string(), format!("{:.6}", 10.0 * sinrs[*j].per_subcarrier[i].log10())),
            None => (String::new(), String::new()),
        };
        wr.write_record([(i + 1).to_string(), o, s])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg8() -> OfdmaConfig {
        OfdmaConfig {
            n_subcarriers: 8,
            bandwidth: 1e6,
            dc_bias_factor: 3.0,
            noise_psd: 1e-21,
        }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn frame_layout_small() {
        let f = build_ofdma_frame(&[c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0)], &cfg8()).unwrap();
        let z = (8.0f64 / 6.0).sqrt();
        let want = [
            c(0.0, 0.0),
            c(1.0, 0.0),
            c(0.0, 1.0),
            c(2.0, 0.0),
            c(0.0, 0.0),
            c(2.0, 0.0),
            c(0.0, -1.0),
            c(1.0, 0.0),
        ];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b * z).norm() < 1e-15);
        }
        assert!(matches!(
            build_ofdma_frame(&[c(1.0, 0.0)], &cfg8()),
            Err(Error::LengthMismatch { expected: 3, got: 1 })
        ));
        let zero = build_ofdma_frame(&[c(0.0, 0.0); 3], &cfg8()).unwrap();
        assert!(zero.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn simplified_reference_value() {
        let link = NetworkConfig::default().link();
        assert_relative_eq!(link.g_dl / link.path_loss(0.0), 3.38e4, max_relative = 2e-3);
        assert!(simplified_sinr(0.5, 3, &link) > simplified_sinr(0.6, 3, &link));
        assert!(simplified_sinr(0.5, 3, &link) > simplified_sinr(0.5, 4, &link));
        let v = simplified_sinr_vector(1.3, &link);
        assert_relative_eq!(v.at(17), simplified_sinr(1.3, 17, &link), max_relative = 1e-12);
        assert_relative_eq!(v.at(1023), simplified_sinr(1.3, 1023, &link), max_relative = 1e-11);
    }

    #[test]
    fn rate_modes() {
        let cfg = cfg8();
        let mut a = Allocation::empty(3);
        let s = vec![SinrVector::new(vec![1.0, 200.0, 300.0], 1.0).unwrap()];
        assert_eq!(downlink_rate(&a, &s, &cfg, RateMode::Exact), vec![0.0]);
        a.owner[0] = Some(0);
        assert_relative_eq!(downlink_rate(&a, &s, &cfg, RateMode::Exact)[0], cfg.spacing());
        let mut b = Allocation::empty(3);
        b.owner[1] = Some(0);
        b.owner[2] = Some(0);
        let ex = downlink_rate(&b, &s, &cfg, RateMode::Exact)[0];
        let hi = downlink_rate(&b, &s, &cfg, RateMode::HighSnr)[0];
        assert!((ex - hi).abs() / ex < 0.01);
    }

    #[test]
    fn single_ue_stops_at_requirement() {
        let cfg = NetworkConfig::default().ofdma();
        let link = NetworkConfig::default().link();
        let s = vec![simplified_sinr_vector(0.0, &link)];
        let a = fair_schedule(&[UeDemand::fresh(5e6)], &s, &cfg).unwrap();
        let rate = downlink_rate(&a, &s, &cfg, RateMode::Exact)[0];
        assert!(rate >= 5e6);
        let n = a.count(0);
        assert!(n < cfg.data_subcarriers());
        assert!(rate - cfg.spacing() * (1.0 + s[0].at(n)).log2() < 5e6);
    }

    #[test]
    fn identical_ues_split_evenly() {
        let cfg = NetworkConfig::default().ofdma();
        let link = NetworkConfig::default().link();
        let s = vec![simplified_sinr_vector(1.0, &link); 2];
        let a = fair_schedule(&[UeDemand::fresh(50e6); 2], &s, &cfg).unwrap();
        assert!(a.count(0).abs_diff(a.count(1)) <= 1);
        assert_eq!(a.assigned(), cfg.data_subcarriers());
    }

    #[test]
    fn k_req_values() {
        let link = NetworkConfig::default().link();
        let ratio = 5e6 / (link.subcarrier_spacing() * log_sinr_ref(0.0, &link));
        assert_relative_eq!(ratio, 68.07, max_relative = 2e-3);
        assert_eq!(k_req(0.0, 5e6, &link, KreqMode::Approx).unwrap(), 69);
        assert_eq!(k_req(0.0, 0.0, &link, KreqMode::Exact).unwrap(), 0);
        assert_eq!(k_req(0.0, 0.0, &link, KreqMode::Approx).unwrap(), 0);
        assert!(k_req(2.35, 400e6, &link, KreqMode::Exact).is_err());
        let kc = k_req_continuous(0.7, 5e6, &link).unwrap();
        let df = link.subcarrier_spacing();
        let a = link.subcarrier_decay() * LOG2_E;
        let l0 = log_sinr_ref(0.7, &link);
        assert_relative_eq!(df * (kc * l0 - a * kc * (kc + 1.0) / 2.0), 5e6, max_relative = 1e-9);
    }

    #[test]
    fn allocation_csv_columns() {
        let mut a = Allocation::empty(3);
        a.owner[1] = Some(0);
        let s = vec![SinrVector::new(vec![1.0, 100.0, 1.0], 1.0).unwrap()];
        let mut buf = Vec::new();
        write_allocation_csv(&mut buf, &a, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "k,owner,sinr_db\n1,,\n2,0,20.000000\n3,,\n");
    }

    proptest! {
        #[test]
        fn frame_is_conjugate_symmetric(re in prop::collection::vec(-5.0f64..5.0, 31), im in prop::collection::vec(-5.0f64..5.0, 31)) {
            let cfg = OfdmaConfig { n_subcarriers: 64, ..cfg8() };
            let s: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| c(*a, *b)).collect();
            let f = build_ofdma_frame(&s, &cfg).unwrap();
            prop_assert_eq!(f[0], c(0.0, 0.0));
            prop_assert_eq!(f[32], c(0.0, 0.0));
            for k in 1..64 {
                prop_assert_eq!(f[k], f[64 - k].conj());
            }
        }

        #[test]
        fn schedule_never_double_assigns(n in 1usize..8, req in 1e6f64..40e6, seed in 0u64..1000) {
            let cfg = NetworkConfig::default().ofdma();
            let link = NetworkConfig::default().link();
            let s: Vec<SinrVector> = (0..n)
                .map(|j| simplified_sinr_vector(((seed + j as u64 * 37) % 235) as f64 / 100.0, &link))
                .collect();
            let a = fair_schedule(&vec![UeDemand::fresh(req); n], &s, &cfg).unwrap();
            prop_assert_eq!(a.owner.len(), cfg.data_subcarriers());
            let total: usize = (0..n).map(|j| a.count(j)).sum();
            prop_assert_eq!(total, a.assigned());
        }

        #[test]
        fn exact_k_req_never_below_approx(r0 in 0.0f64..2.35, req in 1e5f64..50e6) {
            let link = NetworkConfig::default().link();
            let (Ok(e), Ok(a)) = (
                k_req(r0, req, &link, KreqMode::Exact),
                k_req(r0, req, &link, KreqMode::Approx),
            ) else {
                return Ok(());
            };
            prop_assert!(e + 1 >= a);
        }

        #[test]
        fn exact_and_approx_k_req_close_at_low_rate(r0 in 0.0f64..2.35, req in 1e5f64..5e6) {
            let link = NetworkConfig::default().link();
            let e = k_req(r0, req, &link, KreqMode::Exact).unwrap();
            let a = k_req(r0, req, &link, KreqMode::Approx).unwrap();
            prop_assert!(e.abs_diff(a) <= 2);
        }
    }
}
