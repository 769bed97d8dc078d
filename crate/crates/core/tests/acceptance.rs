//! Acceptance gate. Every test prints one `PASS`/`FAIL` line for its
//! criterion before asserting, so `--nocapture` gives a readable report.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use lifi_feedback::config::NetworkConfig;
use lifi_feedback::downlink::{k_req, KreqMode};
use lifi_feedback::feedback::{overhead_per_frame, overhead_per_frame_exact, OverheadScheme};
use lifi_feedback::interval::{
    avg_downlink_rate, avg_uplink_rate, rate_derivatives, t_opt_closed_form, DerivativeMode,
    UpdateIntervalParams,
};
use lifi_feedback::montecarlo::{
    channel_flatness, compare_schemes_downlink, greedy_search_topt, overload_sweep, power_sweep,
    scenario_sweep, table4, topt_grid, ExperimentConfig, OverloadParam,
};
use lifi_feedback::uplink::{
    access_probabilities, normalized_mac_throughput, simulate_slotted_mac, timing_components, FreezeRule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written to the raw stderr handle so the line survives output capture.
fn report(id: &str, ok: bool, detail: &str) {
    let line = format!("{} criterion {id}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed <= Duration::from_secs(budget_s)
}

fn params(v: f64) -> UpdateIntervalParams {
    UpdateIntervalParams::from_config(&NetworkConfig::default(), v).unwrap()
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `eps`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), eps, 40)
}

/// Random `(r0, θ, t_u)` inside the admissible interval range.
fn random_tuple(rng: &mut ChaCha8Rng, p: &UpdateIntervalParams) -> (f64, f64, f64) {
    let rc = p.link.cell_radius;
    let r0 = rc * rng.random::<f64>().sqrt();
    let th = PI * rng.random::<f64>();
    let lo = 1.5 * p.t_fb;
    let hi = 0.95 * p.max_interval();
    let t = lo * (hi / lo).powf(rng.random::<f64>());
    (r0, th, t)
}

#[test]
fn criterion_01_table4() {
    let start = Instant::now();
    let net = NetworkConfig::default();
    let exp = ExperimentConfig {
        velocity_grid: vec![0.0, 1.0],
        ..ExperimentConfig::new(10_000, 2024)
    };
    let t = table4(&net, &exp).unwrap();
    let reference = [
        ("ff", 0.0, 6.67),
        ("onebit", 0.0, 7.64),
        ("lcf", 0.0, 8.33),
        ("lff", 0.0, 8.35),
        ("onebit", 1.0, 7.47),
        ("lff", 1.0, 8.08),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (s, v, want) in reference {
        let got = t.get(s, v).unwrap().mean;
        let rel = (got - want) / want;
        let pass = rel.abs() <= 0.05;
        ok &= pass;
        detail.push(format!("{s}@v={v}: {got:.3} vs {want} ({:+.1}%{})", 100.0 * rel, if pass { "" } else { " out" }));
    }
    let el = start.elapsed();
    ok &= within(el, 300);
    report("1 (Table IV within 5%)", ok, &format!("{} [{:.1?}]", detail.join("; "), el));
    assert!(ok);
}

#[test]
fn criterion_02_closed_form_vs_greedy() {
    let start = Instant::now();
    let net = NetworkConfig::default();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for r in [5e6, 20e6] {
        for v in [0.5, 1.0, 1.4, 2.0, 2.5] {
            let mut p = UpdateIntervalParams::from_config(&net, v).unwrap();
            p.r_req = r;
            let exp = ExperimentConfig {
                t_u_grid: topt_grid(&p, 200).unwrap(),
                ..ExperimentConfig::new(10_000, 77)
            };
            let g = greedy_search_topt(&p, &exp).unwrap();
            let c = t_opt_closed_form(&p, false).unwrap();
            let rel = (c - g).abs() / g;
            worst = worst.max(rel);
            detail.push(format!("{}M/v{v}: {c:.4}/{g:.4}", r / 1e6));
        }
    }
    let el = start.elapsed();
    let ok = worst <= 0.15 && within(el, 600);
    report(
        "2 (closed form vs greedy within 15%)",
        ok,
        &format!("worst {:.1}%; {} [{el:.1?}]", 100.0 * worst, detail.join(" ")),
    );
    assert!(ok);
}

#[test]
fn criterion_03_power_law() {
    let mut worst: f64 = 0.0;
    for v in [0.3, 0.5, 1.0, 1.7, 2.5] {
        let a = t_opt_closed_form(&params(v), false).unwrap();
        let b = t_opt_closed_form(&params(4.0 * v), false).unwrap();
        worst = worst.max((b / a / 4f64.powf(-2.0 / 3.0) - 1.0).abs());
    }
    let ok = worst <= 1e-12;
    report("3 (t_opt(4v)/t_opt(v) = 4^(-2/3))", ok, &format!("max relative deviation {worst:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_04_derivatives_vs_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let v = [0.5, 1.0, 1.4, 2.5][i % 4];
        let p = params(v);
        let (r0, th, t) = random_tuple(&mut rng, &p);
        let d = rate_derivatives(t, r0, th, &p, DerivativeMode::Exact).unwrap();
        // Richardson-extrapolated central differences.
        let cd = |f: &dyn Fn(f64) -> f64, h: f64| (f(t + h) - f(t - h)) / (2.0 * h);
        let fd = |f: &dyn Fn(f64) -> f64| {
            let h = 1e-2 * t;
            (4.0 * cd(f, h / 2.0) - cd(f, h)) / 3.0
        };
        let up = fd(&|x| avg_uplink_rate(x, r0, th, &p).unwrap());
        let dn = fd(&|x| avg_downlink_rate(x, r0, th, &p).unwrap());
        worst = worst.max(((d.uplink - up) / up).abs()).max(((d.downlink - dn) / dn).abs());
    }
    let el = start.elapsed();
    let ok = worst <= 1e-6 && within(el, 10);
    report("4 (exact derivatives vs central differences)", ok, &format!("max relative error {worst:.2e} [{el:.1?}]"));
    assert!(ok);
}

#[test]
fn criterion_05_mac_simulation() {
    let start = Instant::now();
    let net = NetworkConfig::default();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for n in [1usize, 2, 5, 10] {
        let mut mac = net.mac_params();
        mac.n_ues = n;
        mac.contention_window = 16;
        let rate = lifi_feedback::uplink::default_control_rate(&net.link());
        let timing = timing_components(&mac, rate).unwrap();
        let a = access_probabilities(16, n);
        let th = normalized_mac_throughput(&mac, &timing);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + n as u64);
        let s = simulate_slotted_mac(&mut rng, &mac, &timing, 1_000_000, FreezeRule::ConsumeSlot, None);
        let rel = |x: f64, y: f64| ((x - y) / y).abs();
        let e = rel(s.p_transmit, a.p_transmit).max(rel(s.p_success, a.p_success)).max(rel(s.throughput, th));
        worst = worst.max(e);
        detail.push(format!(
            "N={n}: P_t {:.4}/{:.4} P_s {:.4}/{:.4} T {:.4}/{:.4}",
            s.p_transmit, a.p_transmit, s.p_success, a.p_success, s.throughput, th
        ));
    }
    let el = start.elapsed();
    let ok = worst <= 0.02 && within(el, 60);
    report(
        "5 (MAC analysis vs slot simulation within 2%)",
        ok,
        &format!("worst {:.2}%; {} [{el:.1?}]", 100.0 * worst, detail.join("; ")),
    );
    assert!(ok);
}

#[test]
fn criterion_06_channel_flatness() {
    let start = Instant::now();
    let net = NetworkConfig::default();
    let positions = [(0.0, 0.0), (1.2, -0.8), (-3.0, 2.5), (3.9, 3.9), (-4.5, -1.0)];
    let spread = channel_flatness(&net, &positions).unwrap();
    let worst = spread.iter().copied().fold(0.0, f64::max);
    let el = start.elapsed();
    let ok = worst < 1.0 && within(el, 60);
    report(
        "6 (frequency response fluctuation below 1 dB)",
        ok,
        &format!("per position {:.3?} dB [{el:.1?}]", spread),
    );
    assert!(ok);
}

#[test]
fn criterion_07_overhead_table() {
    let b = 10u64;
    let mut ok = true;
    for k in [64u64, 512, 2048] {
        let d = k / 2 - 1;
        ok &= overhead_per_frame(OverheadScheme::Full, k, b).unwrap() == b * d;
        ok &= overhead_per_frame(OverheadScheme::OneBit, k, b).unwrap() == d;
        ok &= overhead_per_frame(OverheadScheme::Lcf, k, b).unwrap() == b;
        for m in [1u64, d, b * d] {
            ok &= overhead_per_frame(OverheadScheme::Lff { m }, k, b).unwrap() == b * d / m;
        }
        for m in 1..=2 * k {
            let lff = overhead_per_frame_exact(OverheadScheme::Lff { m }, k, b);
            let below_onebit = lff < overhead_per_frame_exact(OverheadScheme::OneBit, k, b);
            let below_lcf = lff < overhead_per_frame_exact(OverheadScheme::Lcf, k, b);
            ok &= below_onebit == (m > b);
            ok &= below_lcf == (m >= k / 2);
        }
    }
    report(
        "7 (overhead formulas and crossovers M >= B+1, M >= K/2)",
        ok,
        "K in {64, 512, 2048}, B = 10",
    );
    assert!(ok);
}

#[test]
fn criterion_08_scheme_ordering() {
    let start = Instant::now();
    let net = NetworkConfig::default();
    let exp = ExperimentConfig::new(1_000, 8);
    let t = compare_schemes_downlink(&net, &exp, &[5, 10, 15, 20], 20e6).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    let mut gaps: Vec<(f64, f64)> = Vec::new();
    for n in [5.0, 10.0, 15.0, 20.0] {
        let ff = t.get("ff", n).unwrap();
        let lcf = t.get("lcf", n).unwrap();
        let ob = t.get("onebit", n).unwrap();
        ok &= ff.mean + ff.stderr.max(lcf.stderr) >= lcf.mean;
        ok &= lcf.mean + lcf.stderr.max(ob.stderr) >= ob.mean;
        gaps.push((ff.mean - ob.mean, ff.stderr.hypot(ob.stderr)));
        detail.push(format!("N={n}: {:.2}/{:.2}/{:.2}", ff.mean, lcf.mean, ob.mean));
    }
    // FF minus one-bit gap non-decreasing in N within one combined stderr.
    ok &= gaps.windows(2).all(|w| w[1].0 + w[0].1.hypot(w[1].1) >= w[0].0);
    let gap_text: Vec<String> = gaps.iter().map(|g| format!("{:.2}", g.0)).collect();
    let el = start.elapsed();
    ok &= within(el, 300);
    report(
        "8 (FF >= LCF >= one-bit within 1 stderr, FF-one-bit gap grows with N)",
        ok,
        &format!("FF/LCF/one-bit Mbit/s {}; gaps {} [{el:.1?}]", detail.join("; "), gap_text.join(", ")),
    );
    assert!(ok);
}

#[test]
fn criterion_09_scenario_ranking() {
    let start = Instant::now();
    let net = NetworkConfig::default();
    let exp = ExperimentConfig {
        velocity_grid: vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5],
        ..ExperimentConfig::new(1_000, 9)
    };
    let t = scenario_sweep(&net, &exp, 20e6, 0.01).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for &v in &exp.velocity_grid {
        let (i, ii, iii) = (
            t.get("I", v).unwrap().mean,
            t.get("II", v).unwrap().mean,
            t.get("III", v).unwrap().mean,
        );
        ok &= iii >= ii;
        if v <= 0.5 {
            ok &= ii < i;
        }
        detail.push(format!("v={v}: {i:.2}/{ii:.2}/{iii:.2}"));
    }
    let el = start.elapsed();
    ok &= within(el, 300);
    report(
        "9 (III >= II everywhere, II < I for v <= 0.5)",
        ok,
        &format!("I/II/III Mbit/s {} [{el:.1?}]", detail.join("; ")),
    );
    assert!(ok);
}

#[test]
fn criterion_10_k_req_oracle() {
    let start = Instant::now();
    let link = NetworkConfig::default().link();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ok = true;
    for _ in 0..50 {
        let r0 = link.cell_radius * rng.random::<f64>().sqrt();
        let r = 50e6 * rng.random::<f64>();
        let df = link.b_dn / link.n_subcarriers as f64;
        let c = 4.0 * PI * link.b_dn / (link.n_subcarriers as f64 * link.w0);
        let p = (r0 * r0 + link.h * link.h).powf(link.m + 3.0);
        let mut total = 0.0;
        let mut oracle = None;
        for k in 1..=link.n_subcarriers / 2 - 1 {
            if total >= r {
                oracle = Some(k - 1);
                break;
            }
            total += df * (link.g_dl * (-c * k as f64).exp() / p).log2();
        }
        if oracle.is_none() && total >= r {
            oracle = Some(link.n_subcarriers / 2 - 1);
        }
        let got = k_req(r0, r, &link, KreqMode::Exact).ok();
        ok &= got == oracle;
    }
    let el = start.elapsed();
    ok &= within(el, 10);
    report("10 (k_req quadratic root vs summation search)", ok, &format!("50 pairs [{el:.1?}]"));
    assert!(ok);
}

#[test]
fn criterion_11_closed_form_rates_vs_quadrature() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let v = [0.5, 1.0, 1.4, 2.5][i % 4];
        let p = params(v);
        let (r0, th, t) = random_tuple(&mut rng, &p);
        let link = p.link;
        let r2 = |s: f64| r0 * r0 + v * v * s * s - 2.0 * r0 * v * s * th.cos();
        let loss = |s: f64| (r2(s) + link.h * link.h).powf(link.m + 3.0);
        let cu = p.mac_throughput * link.b_un / p.n_ues as f64;
        let up_int = adaptive_simpson(&|s| (link.g_ul / loss(s)).log2(), 0.0, t, 1e-12 * t);
        let up = (1.0 - p.t_fb / t) * cu * up_int / t;
        // Downlink: k_req from the stationary rate equation, then the time
        // average of the high-SNR rate on those subcarriers.
        let df = link.b_dn / link.n_subcarriers as f64;
        let a = 2.0 * PI * df / link.w0 * std::f64::consts::LOG2_E;
        let l0 = (link.g_dl / loss(0.0)).log2();
        let (mut lo, mut hi) = (0.0, link.n_subcarriers as f64 / 2.0);
        for _ in 0..200 {
            let k = 0.5 * (lo + hi);
            if df * (k * l0 - a * k * (k + 1.0)) < p.r_req {
                lo = k;
            } else {
                hi = k;
            }
        }
        let k = 0.5 * (lo + hi);
        let dn_int = adaptive_simpson(
            &|s| df * (k * (link.g_dl / loss(s)).log2() - a * k * (k + 1.0)),
            0.0,
            t,
            1e-6 * t,
        );
        let dn = dn_int / t;
        let gu = avg_uplink_rate(t, r0, th, &p).unwrap();
        let gd = avg_downlink_rate(t, r0, th, &p).unwrap();
        worst = worst.max(((gu - up) / up).abs()).max(((gd - dn) / dn).abs());
    }
    let el = start.elapsed();
    let ok = worst <= 1e-6 && within(el, 30);
    report("11 (closed-form average rates vs adaptive quadrature)", ok, &format!("max relative error {worst:.2e} [{el:.1?}]"));
    assert!(ok);
}

#[test]
fn criterion_12_power_sweep_variation() {
    let net = NetworkConfig::default();
    let exp = ExperimentConfig {
        velocity_grid: vec![1.0],
        ..ExperimentConfig::new(1, 0)
    };
    let powers: Vec<f64> = (1..=20).map(|i| i as f64).collect();
    let t = power_sweep(&net, &exp, &powers).unwrap();
    let ts: Vec<f64> = t.series("closed-v1").iter().map(|r| r.mean).collect();
    let spread = ts.iter().copied().fold(f64::MIN, f64::max) - ts.iter().copied().fold(f64::MAX, f64::min);
    let increments: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    let saturating = increments.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let ok = spread < 0.030 && saturating;
    report(
        "12 (t_opt variation over 1-20 W below 30 ms, saturating)",
        ok,
        &format!("spread {:.1} ms", spread * 1e3),
    );
    assert!(ok);
}

#[test]
fn criterion_13_overload_speed_ordering() {
    let net = NetworkConfig::default();
    let exp = ExperimentConfig {
        velocity_grid: vec![1.0, 1.4, 2.0],
        ..ExperimentConfig::new(2_000, 13)
    };
    let lambdas = [0.2, 0.4, 0.6, 0.8, 1.0];
    let mut ok = true;
    for param in [OverloadParam::AchievedFraction, OverloadParam::RequestScaling] {
        let t = overload_sweep(&net, &exp, &lambdas, param, 120).unwrap();
        for &l in &lambdas {
            for series in ["closed", "greedy"] {
                let ts: Vec<f64> = exp
                    .velocity_grid
                    .iter()
                    .map(|v| t.get(&format!("{series}-v{v}"), l).unwrap().mean)
                    .collect();
                ok &= ts.windows(2).all(|w| w[1] < w[0]);
            }
        }
    }
    report("13 (overload sweep: t_opt ordered by speed at every lambda)", ok, "speeds 1, 1.4, 2 m/s");
    assert!(ok);
}
