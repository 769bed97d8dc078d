//! Per-interval average uplink and downlink rates of a moving UE, their
//! derivatives in the update interval, and the optimal interval.

use std::f64::consts::{LN_2, LOG2_E, PI};

use serde::{Deserialize, Serialize};

use crate::config::{LinkBudget, NetworkConfig};
use crate::downlink::{k_req_continuous, log_sinr_ref};
use crate::error::{Error, Result};
use crate::quad::{PolarExpectation, Rule};
use crate::uplink::{default_control_rate, normalized_mac_throughput, timing_components};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateIntervalParams {
    pub w_u: f64,
    pub w_d: f64,
    pub t_fb: f64,
    pub v: f64,
    pub r_req: f64,
    pub n_ues: usize,
    /// Overload factor λ.
    pub lambda: f64,
    pub link: LinkBudget,
    /// Normalised MAC throughput T̃_u.
    pub mac_throughput: f64,
    /// The small-displacement approximation is flagged once `v t_u ≥ h / guard`.
    pub approx_guard: f64,
    /// Points per axis of the (r0, θ) quadrature.
    pub quadrature_order: usize,
}

impl UpdateIntervalParams {
    pub fn from_config(cfg: &NetworkConfig, v: f64) -> Result<Self> {
        cfg.validate()?;
        let link = cfg.link();
        let mac = cfg.mac_params();
        let rate = cfg
            .control_rate_mbps
            .map(|r| r * 1e6)
            .unwrap_or_else(|| default_control_rate(&link));
        let timing = timing_components(&mac, rate)?;
        let p = UpdateIntervalParams {
            w_u: cfg.w_u,
            w_d: cfg.w_d,
            t_fb: cfg.t_fb(),
            v,
            r_req: cfg.r_req(),
            n_ues: cfg.n_ues,
            lambda: cfg.overload_lambda,
            link,
            mac_throughput: normalized_mac_throughput(&mac, &timing),
            approx_guard: cfg.approx_guard,
            quadrature_order: cfg.quadrature_order,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_u >= 0.0 && self.w_d >= 0.0 && self.w_u + self.w_d > 0.0) {
            return Err(Error::param("w_u", "weights must be non-negative and not both zero"));
        }
        if !(self.t_fb > 0.0) {
            return Err(Error::param("t_fb", "must be positive"));
        }
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return Err(Error::param("v", "must be non-negative"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::param("lambda", "must lie in (0, 1]"));
        }
        if self.n_ues == 0 {
            return Err(Error::param("n_ues", "must be at least 1"));
        }
        if !(self.r_req >= 0.0) {
            return Err(Error::param("r_req", "must be non-negative"));
        }
        Ok(())
    }

    /// Upper end of the admissible interval range, `2 r_c / v`.
    pub fn max_interval(&self) -> f64 {
        if self.v == 0.0 {
            f64::INFINITY
        } else {
            2.0 * self.link.cell_radius / self.v
        }
    }

    /// Uplink rate scale T̃_u B_un / N.
    pub fn uplink_scale(&self) -> f64 {
        self.mac_throughput * self.link.b_un / self.n_ues as f64
    }

    /// Rate each UE is provisioned for: λ R_req.
    pub fn served_rate(&self) -> f64 {
        self.lambda * self.r_req
    }

    fn check_interval(&self, t_u: f64) -> Result<()> {
        let max = self.max_interval();
        if !(t_u > 0.0 && t_u < max) {
            return Err(Error::IntervalOutOfRange { t_u, max });
        }
        if self.t_fb >= t_u {
            return Err(Error::InvalidInterval { t_fb: self.t_fb, t_u });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputBreakdown {
    pub avg_uplink: f64,
    pub avg_downlink: f64,
    pub weighted_sum: f64,
}

impl ThroughputBreakdown {
    pub fn new(avg_uplink: f64, avg_downlink: f64, w_u: f64, w_d: f64) -> Self {
        ThroughputBreakdown {
            avg_uplink,
            avg_downlink,
            weighted_sum: w_u * avg_uplink + w_d * avg_downlink,
        }
    }
}

/// Straight-leg geometry of one UE.
#[derive(Debug, Clone, Copy)]
struct Leg {
    r0: f64,
    cos: f64,
    /// √(h² + r0² sin²θ), the closest approach to the AP.
    s: f64,
    v: f64,
    h: f64,
    /// m + 3.
    p: f64,
}

impl Leg {
    fn new(r0: f64, theta: f64, v: f64, link: &LinkBudget) -> Self {
        let (sin, cos) = theta.sin_cos();
        Leg {
            r0,
            cos,
            s: (link.h * link.h + r0 * r0 * sin * sin).sqrt(),
            v,
            h: link.h,
            p: link.m + 3.0,
        }
    }

    /// r(t)² + h².
    fn sq(&self, t: f64) -> f64 {
        let u = self.v * t - self.r0 * self.cos;
        u * u + self.s * self.s
    }

    /// L(t) = −(m+3) log2(r(t)² + h²).
    fn log_loss(&self, t: f64) -> f64 {
        -self.p * self.sq(t).log2()
    }

    /// Time average of L over [0, t_u].
    fn mean_log_loss(&self, t_u: f64) -> f64 {
        let vt = self.v * t_u;
        if vt <= 1e-4 * self.h {
            return Rule::new(12).integrate(0.0, t_u, |t| self.log_loss(t)) / t_u;
        }
        let rc = self.r0 * self.cos;
        let end = self.sq(t_u);
        let start = self.r0 * self.r0 + self.h * self.h;
        let at = ((vt - rc) / self.s).atan() + (rc / self.s).atan();
        2.0 * self.p
            * (-0.5 * end.log2() + rc / (2.0 * vt) * (end / start).log2() + 1.0 / LN_2
                - self.s / (vt * LN_2) * at)
    }
}

/// Downlink constants for one UE fixed at the start of an interval.
#[derive(Debug, Clone, Copy)]
struct DownlinkFrame {
    /// k_req B_dn / K.
    scale: f64,
    /// log2 G − 2π(k_req+1) B_dn / (K w_0) log2 e.
    offset: f64,
}

impl DownlinkFrame {
    fn new(r0: f64, p: &UpdateIntervalParams) -> Result<Self> {
        let link = &p.link;
        let k = k_req_continuous(r0, p.served_rate(), link)?;
        if k > link.data_subcarriers() as f64 {
            return Err(Error::InfeasibleRate(format!(
                "{k:.1} subcarriers needed at r0 = {r0}, only {} available",
                link.data_subcarriers()
            )));
        }
        Ok(DownlinkFrame {
            scale: k * link.subcarrier_spacing(),
            offset: link.g_dl.log2()
                - 2.0 * PI * (k + 1.0) * link.subcarrier_spacing() / link.w0 * LOG2_E,
        })
    }
}

/// Average high-SNR uplink rate over `[0, t_u]` including the feedback
/// share `1 − t_fb/t_u`.
pub fn avg_uplink_rate(t_u: f64, r0: f64, theta: f64, p: &UpdateIntervalParams) -> Result<f64> {
    p.check_interval(t_u)?;
    let leg = Leg::new(r0, theta, p.v, &p.link);
    Ok((1.0 - p.t_fb / t_u) * p.uplink_scale() * (p.link.g_ul.log2() + leg.mean_log_loss(t_u)))
}

/// Average high-SNR downlink rate over `[0, t_u]` on the `k_req`
/// subcarriers fixed at `t = 0`. `k_req` is kept continuous so a stationary
/// UE receives exactly `λ R_req`.
pub fn avg_downlink_rate(t_u: f64, r0: f64, theta: f64, p: &UpdateIntervalParams) -> Result<f64> {
    p.check_interval(t_u)?;
    let leg = Leg::new(r0, theta, p.v, &p.link);
    let d = DownlinkFrame::new(r0, p)?;
    Ok(d.scale * (d.offset + leg.mean_log_loss(t_u)))
}

pub fn breakdown(t_u: f64, r0: f64, theta: f64, p: &UpdateIntervalParams) -> Result<ThroughputBreakdown> {
    Ok(ThroughputBreakdown::new(
        avg_uplink_rate(t_u, r0, theta, p)?,
        avg_downlink_rate(t_u, r0, theta, p)?,
        p.w_u,
        p.w_d,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeMode {
    Exact,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDerivatives {
    pub uplink: f64,
    pub downlink: f64,
    /// Set when `v t_u ≥ h / guard`, outside the small-displacement regime.
    pub outside_approx_domain: bool,
}

pub fn rate_derivatives(
    t_u: f64,
    r0: f64,
    theta: f64,
    p: &UpdateIntervalParams,
    mode: DerivativeMode,
) -> Result<RateDerivatives> {
    p.check_interval(t_u)?;
    let d = DownlinkFrame::new(r0, p)?;
    Ok(derivatives_with(t_u, r0, theta, p, mode, &d))
}

fn derivatives_with(
    t_u: f64,
    r0: f64,
    theta: f64,
    p: &UpdateIntervalParams,
    mode: DerivativeMode,
    d: &DownlinkFrame,
) -> RateDerivatives {
    let link = &p.link;
    let cu = p.uplink_scale();
    let outside = p.v * t_u >= link.h / p.approx_guard;
    let (uplink, downlink) = match mode {
        DerivativeMode::Exact => {
            let leg = Leg::new(r0, theta, p.v, link);
            let mean = leg.mean_log_loss(t_u);
            // d/dt [(1/t)∫₀ᵗ L] = (L(t) − mean) / t.
            let slope = (leg.log_loss(t_u) - mean) / t_u;
            let up = p.t_fb / (t_u * t_u) * cu * (link.g_ul.log2() + mean)
                + (1.0 - p.t_fb / t_u) * cu * slope;
            (up, d.scale * slope)
        }
        DerivativeMode::Approx => {
            let q = motion_factor(r0, theta, link.h);
            let drift = -2.0 * (link.m + 3.0) * p.v * p.v * q * t_u / (3.0 * LN_2);
            let up = cu * drift + cu * p.t_fb / (t_u * t_u) * (link.g_ul / link.path_loss(r0)).log2();
            (up, d.scale * drift)
        }
    };
    RateDerivatives {
        uplink,
        downlink,
        outside_approx_domain: outside,
    }
}

/// (h² + r0² sin²θ)² / (h² + r0²)³.
fn motion_factor(r0: f64, theta: f64, h: f64) -> f64 {
    let s = theta.sin();
    let a = h * h + r0 * r0 * s * s;
    let b = h * h + r0 * r0;
    a * a / (b * b * b)
}

/// Constants `(C1, C2)` of the closed-form optimum.
pub fn expectation_constants(p: &UpdateIntervalParams) -> Result<(f64, f64)> {
    let link = &p.link;
    let edge = link.path_loss(link.cell_radius);
    if !(link.g_dl > edge && link.g_ul > edge) {
        return Err(Error::NegativeLog(format!(
            "SINR constants G = {:.3e}, G_u = {:.3e} must exceed {edge:.3e}",
            link.g_dl, link.g_ul
        )));
    }
    let q = PolarExpectation::new(link.cell_radius, p.quadrature_order, p.quadrature_order);
    let e_up = q.expect(|r, _| (link.g_ul / link.path_loss(r)).log2());
    let e_dn = q.expect(|r, _| log_sinr_ref(r, link));
    let e_x = q.expect(|r, t| motion_factor(r, t, link.h));
    Ok((e_up * e_dn / e_x, e_dn))
}

/// Small-displacement optimum `t̃_u,opt`. With `overloaded`, the requested
/// rate is replaced by `λ R_req`.
pub fn t_opt_closed_form(p: &UpdateIntervalParams, overloaded: bool) -> Result<f64> {
    if !(p.v > 0.0) {
        return Err(Error::param("v", "closed form needs a positive speed"));
    }
    let (c1, c2) = expectation_constants(p)?;
    Ok(t_opt_from_constants(p, c1, c2, overloaded))
}

pub fn t_opt_from_constants(p: &UpdateIntervalParams, c1: f64, c2: f64, overloaded: bool) -> f64 {
    let tb = p.mac_throughput * p.link.b_un;
    let r = if overloaded { p.lambda * p.r_req } else { p.r_req };
    let num = 3.0 * LN_2 / (2.0 * (p.link.m + 3.0)) * p.w_u * p.t_fb * tb * c1;
    let den = p.w_d * p.v * p.v * p.n_ues as f64 * r + c2 * p.w_u * p.v * p.v * tb;
    (num / den).cbrt()
}

/// Quadrature nodes with their per-UE downlink constants, reused across
/// interval evaluations.
pub struct ExpectationGrid {
    points: Vec<(f64, f64, f64, DownlinkFrame)>,
}

impl ExpectationGrid {
    pub fn new(p: &UpdateIntervalParams) -> Result<Self> {
        let q = PolarExpectation::new(p.link.cell_radius, p.quadrature_order, p.quadrature_order);
        let mut points = Vec::with_capacity(q.points().len());
        for &(r, t, w) in q.points() {
            points.push((r, t, w, DownlinkFrame::new(r, p)?));
        }
        Ok(ExpectationGrid { points })
    }

    /// E[w_u ∂R̄_u/∂t_u + w_d ∂R̄_d/∂t_u].
    pub fn expected_derivative(&self, t_u: f64, p: &UpdateIntervalParams, mode: DerivativeMode) -> f64 {
        let mut acc = crate::stats::NeumaierSum::default();
        for (r, t, w, d) in &self.points {
            let g = derivatives_with(t_u, *r, *t, p, mode, d);
            acc.add(w * (p.w_u * g.uplink + p.w_d * g.downlink));
        }
        acc.total()
    }

    /// E over (r0, θ) of the per-interval averages.
    pub fn expected_breakdown(&self, t_u: f64, p: &UpdateIntervalParams) -> ThroughputBreakdown {
        let (mut up, mut dn) = (crate::stats::NeumaierSum::default(), crate::stats::NeumaierSum::default());
        for (r, t, w, d) in &self.points {
            let leg = Leg::new(*r, *t, p.v, &p.link);
            let mean = leg.mean_log_loss(t_u);
            up.add(w * (1.0 - p.t_fb / t_u) * p.uplink_scale() * (p.link.g_ul.log2() + mean));
            dn.add(w * d.scale * (d.offset + mean));
        }
        ThroughputBreakdown::new(up.total(), dn.total(), p.w_u, p.w_d)
    }
}

/// Expected weighted sum rate at interval `t_u`, by quadrature.
pub fn expected_breakdown(t_u: f64, p: &UpdateIntervalParams) -> Result<ThroughputBreakdown> {
    p.check_interval(t_u)?;
    Ok(ExpectationGrid::new(p)?.expected_breakdown(t_u, p))
}

/// Root of the expected exact derivative: a 20-point log-spaced scan on
/// `(1.01 t_fb, 2 r_c / v)` for the first sign change, then bisection to
/// 10 µs.
pub fn t_opt_numeric(p: &UpdateIntervalParams) -> Result<f64> {
    if !(p.v > 0.0) {
        return Err(Error::param("v", "numeric optimum needs a positive speed"));
    }
    let grid = ExpectationGrid::new(p)?;
    let lo = 1.01 * p.t_fb;
    let hi = p.max_interval() * (1.0 - 1e-9);
    let f = |t: f64| grid.expected_derivative(t, p, DerivativeMode::Exact);
    let n = 20;
    let pts: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    let mut prev = (pts[0], f(pts[0]));
    for &t in &pts[1..] {
        let ft = f(t);
        if prev.1 > 0.0 && ft <= 0.0 {
            return Ok(bisect(&f, prev.0, t, 1e-5));
        }
        prev = (t, ft);
    }
    Err(Error::NoRoot { lo, hi })
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    while b - a > tol {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(v: f64) -> UpdateIntervalParams {
        UpdateIntervalParams::from_config(&NetworkConfig::default(), v).unwrap()
    }

    #[test]
    fn stationary_limits() {
        let p = params(0.0);
        let link = p.link;
        let up = avg_uplink_rate(0.5, 1.1, 0.7, &p).unwrap();
        let want = (1.0 - p.t_fb / 0.5) * p.uplink_scale() * (link.g_ul / link.path_loss(1.1)).log2();
        assert_relative_eq!(up, want, max_relative = 1e-12);
        let dn = avg_downlink_rate(0.5, 1.1, 0.7, &p).unwrap();
        assert_relative_eq!(dn, p.r_req, max_relative = 1e-9);
    }

    #[test]
    fn tangential_motion_only_loses_downlink() {
        let p = params(1.0);
        let a = avg_downlink_rate(0.01, 1.0, PI / 2.0, &p).unwrap();
        let b = avg_downlink_rate(0.02, 1.0, PI / 2.0, &p).unwrap();
        assert!(b < a && a < p.r_req);
    }

    #[test]
    fn interval_checks() {
        let p = params(1.0);
        assert!(matches!(avg_uplink_rate(5.0, 1.0, 1.0, &p), Err(Error::IntervalOutOfRange { .. })));
        assert!(matches!(avg_uplink_rate(0.5e-3, 1.0, 1.0, &p), Err(Error::InvalidInterval { .. })));
    }

    #[test]
    fn constants_reference_values() {
        let (c1, c2) = expectation_constants(&params(1.0)).unwrap();
        assert_relative_eq!(c1, 337.26, max_relative = 1e-3);
        assert_relative_eq!(c2, 12.4806, max_relative = 1e-4);
    }

    #[test]
    fn degenerate_cell_constant() {
        let mut p = params(1.0);
        p.link.cell_radius = 1e-9;
        let (_, c2) = expectation_constants(&p).unwrap();
        assert_relative_eq!(c2, (p.link.g_dl / p.link.h.powi(8)).log2(), max_relative = 1e-12);
    }

    #[test]
    fn closed_form_values_and_scaling() {
        assert_relative_eq!(t_opt_closed_form(&params(1.0), false).unwrap(), 0.1570, max_relative = 2e-3);
        assert_relative_eq!(t_opt_closed_form(&params(0.5), false).unwrap(), 0.2492, max_relative = 2e-3);
        let a = t_opt_closed_form(&params(0.7), false).unwrap();
        let b = t_opt_closed_form(&params(2.8), false).unwrap();
        assert_relative_eq!(b / a, 4f64.powf(-2.0 / 3.0), max_relative = 1e-12);
        assert!(t_opt_closed_form(&params(0.0), false).is_err());
    }

    #[test]
    fn closed_form_monotone_in_lambda_and_t_fb() {
        let mut p = params(1.0);
        p.lambda = 0.5;
        let half = t_opt_closed_form(&p, true).unwrap();
        p.lambda = 1.0;
        let full = t_opt_closed_form(&p, true).unwrap();
        assert!(half > full);
        assert_relative_eq!(full, t_opt_closed_form(&p, false).unwrap());
        let mut q = params(1.0);
        q.t_fb *= 2.0;
        assert!(t_opt_numeric(&q).unwrap() > t_opt_numeric(&params(1.0)).unwrap());
    }

    #[test]
    fn uplink_only_weights() {
        let mut p = params(1.0);
        p.w_d = 0.0;
        let a = t_opt_closed_form(&p, false).unwrap();
        p.r_req = 20e6;
        assert_eq!(a, t_opt_closed_form(&p, false).unwrap());
    }

    #[test]
    fn numeric_close_to_closed_form() {
        for v in [0.5, 1.0, 2.5] {
            let p = params(v);
            let num = t_opt_numeric(&p).unwrap();
            let cf = t_opt_closed_form(&p, false).unwrap();
            assert!((num - cf).abs() / num < 0.15, "v = {v}: {num} vs {cf}");
        }
    }

    #[test]
    fn approx_matches_exact_for_tangential_start() {
        let p = params(1.0);
        let t = p.link.h / 10.0;
        for r0 in [0.0, 0.8, 2.0] {
            let e = rate_derivatives(t, r0, PI / 2.0, &p, DerivativeMode::Exact).unwrap();
            let a = rate_derivatives(t, r0, PI / 2.0, &p, DerivativeMode::Approx).unwrap();
            assert!(((a.downlink - e.downlink) / e.downlink).abs() < 0.05);
            assert!(((a.uplink - e.uplink) / e.uplink).abs() < 0.05);
            assert!(!a.outside_approx_domain);
        }
        let far = rate_derivatives(1.0, 1.0, 1.0, &p, DerivativeMode::Approx).unwrap();
        assert!(far.outside_approx_domain);
    }

    #[test]
    fn exact_slope_follows_second_order_taylor_in_expectation() {
        // Averaged over θ the first-order term cancels and the slope of the
        // mean log loss is −(2(m+3)/(3 ln 2)) v² t (h² + r0² sin²θ − r0² cos²θ) / R0².
        let p = params(1.0);
        let t = p.link.h / 10.0;
        let h = p.link.h;
        let q = PolarExpectation::new(p.link.cell_radius, 48, 48);
        let exact = q.expect(|r, th| {
            let leg = Leg::new(r, th, p.v, &p.link);
            (leg.log_loss(t) - leg.mean_log_loss(t)) / t
        });
        let taylor = q.expect(|r, th| {
            let (s, c) = th.sin_cos();
            let r0 = h * h + r * r;
            -2.0 * (p.link.m + 3.0) * p.v * p.v * t * (h * h + r * r * (s * s - c * c))
                / (3.0 * LN_2 * r0 * r0)
        });
        assert_relative_eq!(exact, taylor, max_relative = 0.02);
    }

    #[test]
    fn approx_downlink_slope_nonpositive_and_linear() {
        let p = params(1.3);
        let a = rate_derivatives(0.01, 0.9, 2.0, &p, DerivativeMode::Approx).unwrap();
        let b = rate_derivatives(0.02, 0.9, 2.0, &p, DerivativeMode::Approx).unwrap();
        assert!(a.downlink <= 0.0);
        assert_relative_eq!(b.downlink / a.downlink, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn expected_derivative_changes_sign_once() {
        let p = params(1.0);
        let g = ExpectationGrid::new(&p).unwrap();
        let lo: f64 = 1.01 * p.t_fb;
        let hi = p.max_interval() * 0.999;
        let signs: Vec<bool> = (0..200)
            .map(|i| lo * (hi / lo).powf(i as f64 / 199.0))
            .map(|t| g.expected_derivative(t, &p, DerivativeMode::Exact) > 0.0)
            .collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1);
        assert!(signs[0]);
    }
}
