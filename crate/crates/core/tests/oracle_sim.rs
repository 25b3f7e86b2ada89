use fdf_core::model::{concatenate_sections, FaultType, LineParameters, FREQ_HZ};
use fdf_core::sim::{self, add_noise, inject_bad_data, FaultScenario, SimOptions, Sources, Waveforms, CHANNELS};
use nalgebra::{Complex, DMatrix, Matrix4};

fn opts(n: usize, t_end: f64) -> SimOptions {
    SimOptions { dt: 1e-4, n_sections: n, t_end, stub_km: 0.032, record_internal: true }
}

fn ag(rf: f64, km: f64, t0: f64, t1: f64) -> FaultScenario {
    FaultScenario { event_id: 1, fault_type: FaultType::AG, rf, location_km: km, t_start: t0, t_end: t1, internal: true }
}

fn healthy(n: usize, t_end: f64) -> Waveforms {
    sim::simulate(&[], &LineParameters::table1(), &Sources::default(), &opts(n, t_end)).unwrap()
}

fn max_pu_diff(a: &Waveforms, b: &Waveforms) -> f64 {
    let bases = LineParameters::table1().bases();
    let mut m = 0.0f64;
    for k in 0..a.len() {
        for c in 0..8 {
            m = m.max((a.currents[k][c] - b.currents[k][c]).abs() / bases.i_base);
            m = m.max((a.voltages[k][c] - b.voltages[k][c]).abs() / bases.v_base);
        }
    }
    m
}

#[test]
fn single_section_satisfies_line_equations() {
    let p = LineParameters::table1();
    let b = p.bases();
    let w = healthy(1, 0.05);
    let internal = w.internal.as_ref().unwrap();
    let dt = w.dt;
    let mut worst = 0.0f64;
    for k in 0..w.len() - 1 {
        let v = |k: usize, side: usize| nalgebra::Vector4::from_fn(|i, _| w.voltages[k][4 * side + i]);
        let i = |k: usize, side: usize| nalgebra::Vector4::from_fn(|j, _| w.currents[k][4 * side + j]);
        let il = |k: usize| nalgebra::Vector4::from_fn(|j, _| internal[k][j]);
        let avg = |a: nalgebra::Vector4<f64>, b: nalgebra::Vector4<f64>| (a + b) * 0.5;
        let kcl1 = p.cap.0 * (v(k + 1, 0) - v(k, 0)) / dt - avg(i(k, 0) - il(k), i(k + 1, 0) - il(k + 1));
        let kcl2 = p.cap.0 * (v(k + 1, 1) - v(k, 1)) / dt - avg(i(k, 1) + il(k), i(k + 1, 1) + il(k + 1));
        let drop = |k: usize| v(k, 0) - v(k, 1) - p.r.0 * il(k);
        let kvl = p.l.0 * (il(k + 1) - il(k)) / dt - avg(drop(k), drop(k + 1));
        worst = worst.max(kcl1.amax() / b.i_base).max(kcl2.amax() / b.i_base).max(kvl.amax() / b.v_base);
    }
    assert!(worst < 1e-6, "line equation residual {worst:e} pu");
}

#[test]
fn huge_fault_resistance_matches_healthy() {
    let p = LineParameters::table1();
    let base = healthy(4, 0.1);
    let w = sim::simulate(&[ag(1e9, 64.0, 0.03, 0.07)], &p, &Sources::default(), &opts(4, 0.1)).unwrap();
    let d = max_pu_diff(&base, &w);
    assert!(d < 1e-6, "{d:e}");
}

/// Chain matrix of a π section with shunt Y/2 at each end, 4×4 blocks.
fn pi_abcd(z: &DMatrix<Complex<f64>>, y_half: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
    let i = DMatrix::<Complex<f64>>::identity(4, 4);
    let a = &i + z * y_half;
    let b = z.clone();
    let c = y_half * Complex::new(2.0, 0.0) + y_half * z * y_half;
    let d = &i + y_half * z;
    let mut m = DMatrix::zeros(8, 8);
    m.view_mut((0, 0), (4, 4)).copy_from(&a);
    m.view_mut((0, 4), (4, 4)).copy_from(&b);
    m.view_mut((4, 0), (4, 4)).copy_from(&c);
    m.view_mut((4, 4), (4, 4)).copy_from(&d);
    m
}

fn ladder_abcd(p: &LineParameters, n: usize) -> DMatrix<Complex<f64>> {
    let lad = concatenate_sections(p, n).unwrap();
    let w = 2.0 * std::f64::consts::PI * FREQ_HZ;
    let cx = |m: &Matrix4<f64>, s: Complex<f64>| DMatrix::from_fn(4, 4, |i, j| s * m[(i, j)]);
    let z = cx(&lad.r_section, Complex::new(1.0, 0.0)) + cx(&lad.l_section, Complex::new(0.0, w));
    // ladder end shunt is one section's half-shunt
    let y_half = cx(&lad.shunt[0], Complex::new(0.0, w));
    let sec = pi_abcd(&z, &y_half);
    let mut m = DMatrix::identity(8, 8);
    for _ in 0..n {
        m = m * &sec;
    }
    m
}

#[test]
fn two_section_impedance_close_to_one_section() {
    let p = LineParameters::table1();
    let (m1, m2) = (ladder_abcd(&p, 1), ladder_abcd(&p, 2));
    // driving-point impedance with the far end shorted: B·D⁻¹
    let zsc = |m: &DMatrix<Complex<f64>>| {
        let b = m.view((0, 4), (4, 4)).into_owned();
        let d = m.view((4, 4), (4, 4)).into_owned();
        b * d.try_inverse().unwrap()
    };
    let (z1, z2) = (zsc(&m1), zsc(&m2));
    let rel = (&z1 - &z2).norm() / z1.norm();
    assert!(rel < 0.02, "short-circuit impedance differs by {rel}");

    // the simulated terminal currents agree to the same order
    let bases = p.bases();
    let (w1, w2) = (healthy(1, 0.1), healthy(2, 0.1));
    let fundamental = |w: &Waveforms, ch: usize| {
        let n = (1.0 / (FREQ_HZ * w.dt)).round() as usize;
        let start = w.len() - n;
        let mut acc = Complex::new(0.0, 0.0);
        for k in 0..n {
            acc += Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64) * w.currents[start + k][ch];
        }
        acc * Complex::new(2.0 / n as f64 / bases.i_base, 0.0)
    };
    for ch in [0, 1, 2, 4, 5, 6] {
        let (a, b) = (fundamental(&w1, ch), fundamental(&w2, ch));
        assert!((a - b).norm() / a.norm() < 0.02, "channel {ch}: {a} vs {b}");
    }
}

#[test]
fn eight_sections_reach_periodic_steady_state() {
    // three cycles span a whole number of samples at dt = 1e-4
    let period = 3.0 / FREQ_HZ;
    let w = healthy(8, 2.0 * period + 1e-9);
    let bases = LineParameters::table1().bases();
    let n = (period / w.dt).round() as usize;
    let mut worst = 0.0f64;
    for ch in 0..8 {
        let mut acc = 0.0;
        for k in 0..n {
            let d = (w.currents[k + n][ch] - w.currents[k][ch]) / bases.i_base;
            acc += d * d;
        }
        worst = worst.max((acc / n as f64).sqrt());
    }
    assert!(worst < 1e-4, "period-over-period RMS {worst:e} pu");
}

#[test]
fn noise_statistics() {
    let bases = LineParameters::table1().bases();
    let w = healthy(1, 0.1);
    assert_eq!(add_noise(&w, 0.0, &bases, 1).unwrap(), w);
    assert!(add_noise(&w, -0.1, &bases, 1).is_err());
    let long = Waveforms { dt: 1e-4, currents: vec![[0.0; 8]; 100_000], voltages: vec![[0.0; 8]; 100_000], internal: None };
    let noisy = add_noise(&long, 0.02, &bases, 42).unwrap();
    let samples: Vec<f64> = noisy.currents.iter().map(|c| c[0] / bases.i_base).collect();
    let max = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mean = samples.iter().map(|x| x.abs()).sum::<f64>() / samples.len() as f64;
    assert!(max <= 0.02);
    assert!((mean - 0.01).abs() < 2e-4, "mean |noise| {mean}");
    assert!(noisy.voltages.iter().all(|v| v[3] == 0.0 && v[7] == 0.0));
    assert!(noisy.voltages.iter().any(|v| v[0] != 0.0));
}

#[test]
fn bad_data_injection() {
    let w = healthy(1, 0.1);
    let lost = inject_bad_data(&w, "ia1", 0.02, 0.05).unwrap();
    for k in 0..w.len() {
        let t = w.time(k);
        let inside = (0.02..0.05).contains(&(t + 1e-12));
        assert_eq!(lost.currents[k][0] == 0.0, inside || w.currents[k][0] == 0.0, "sample {k}");
        assert_eq!(&lost.currents[k][1..], &w.currents[k][1..]);
        assert_eq!(lost.voltages[k], w.voltages[k]);
    }
    assert_eq!(inject_bad_data(&w, "ia1", 0.03, 0.03).unwrap(), w);
    assert_eq!(inject_bad_data(&lost, "ia1", 0.02, 0.05).unwrap(), lost);
    assert!(matches!(inject_bad_data(&w, "va1", 0.0, 0.01), Err(fdf_core::Error::Unsupported(_))));
}

#[test]
fn ground_fault_is_fed_from_both_ends() {
    let p = LineParameters::table1();
    let (rf, n) = (1000.0, 16);
    let sc = ag(rf, 48.0, 0.05, 0.15);
    let w = sim::simulate(&[sc], &p, &Sources::default(), &opts(n, 0.12)).unwrap();
    let base = healthy(n, 0.12);
    let (a, b) = (w.index_at(0.08), w.index_at(0.12));
    let delta_rms = |ch: usize| {
        (a..b).map(|k| (w.currents[k][ch] - base.currents[k][ch]).powi(2)).sum::<f64>().sqrt() / ((b - a) as f64).sqrt()
    };
    let fault_rms = (94_000.0 / rf) / 2f64.sqrt();
    let zero_seq = |w: &Waveforms, side: usize| {
        w.currents[a..b].iter().map(|c| (c[4 * side] + c[4 * side + 1] + c[4 * side + 2]).abs()).fold(0.0, f64::max)
    };
    for side in 0..2 {
        assert!(delta_rms(4 * side) > 0.1 * fault_rms, "side {side}");
        assert!(zero_seq(&w, side) > 1.5 * zero_seq(&base, side), "side {side}");
    }
    // the extra current drawn at both terminals leaves through the fault
    let rec = w.internal.as_ref().unwrap();
    let j = 6;
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for k in a..b {
        let extra: f64 = (0..8).map(|c| w.currents[k][c] - base.currents[k][c]).sum();
        let i_f = rec[k][4 * n + 4 * j] / rf;
        worst = worst.max((extra - i_f).abs());
        peak = peak.max(i_f.abs());
    }
    assert!(worst < 0.05 * peak, "terminal increment off fault current by {worst} A (peak {peak} A)");
}

#[test]
fn energy_balance() {
    let p = LineParameters::table1();
    let n = 2;
    let run = |scenarios: &[FaultScenario]| {
        sim::simulate(scenarios, &p, &Sources::default(), &opts(n, 0.08)).unwrap()
    };
    let lad = concatenate_sections(&p, n).unwrap();
    let check = |w: &Waveforms, fault: Option<(usize, f64)>| {
        let rec = w.internal.as_ref().unwrap();
        let il = |k: usize, s: usize| nalgebra::Vector4::from_fn(|i, _| rec[k][4 * s + i]);
        let vn = |k: usize, j: usize| nalgebra::Vector4::from_fn(|i, _| rec[k][4 * n + 4 * j + i]);
        let stored = |k: usize| {
            let mut e = 0.0;
            for j in 0..=n {
                e += 0.5 * vn(k, j).dot(&(lad.shunt[j] * vn(k, j)));
            }
            for s in 0..n {
                e += 0.5 * il(k, s).dot(&(lad.l_section * il(k, s)));
            }
            e
        };
        let mut delivered = 0.0;
        let mut dissipated = 0.0;
        let mut in_fault = 0.0;
        for k in 0..w.len() - 1 {
            let on = w.time(k) >= 0.02 - 1e-12;
            for side in 0..2 {
                let v = (nalgebra::Vector4::from_fn(|i, _| w.voltages[k][4 * side + i] + w.voltages[k + 1][4 * side + i])) * 0.5;
                let i = (nalgebra::Vector4::from_fn(|j, _| w.currents[k][4 * side + j] + w.currents[k + 1][4 * side + j])) * 0.5;
                delivered += w.dt * v.dot(&i);
            }
            for s in 0..n {
                let i = (il(k, s) + il(k + 1, s)) * 0.5;
                dissipated += w.dt * i.dot(&(lad.r_section * i));
            }
            if let (Some((j, g)), true) = (fault, on) {
                let va = 0.5 * (vn(k, j)[0] + vn(k + 1, j)[0]);
                in_fault += w.dt * g * va * va;
            }
        }
        let stored_gain = stored(w.len() - 1) - stored(0);
        (delivered, stored_gain, dissipated, in_fault)
    };
    let h = run(&[]);
    let (d, s, r, _) = check(&h, None);
    assert!((d - s - r).abs() <= 1e-6 * d.abs().max(r), "healthy balance {} vs {}", d, s + r);

    let f = run(&[ag(50.0, 64.0, 0.02, 0.2)]);
    let (d, s, r, q) = check(&f, Some((1, 1.0 / 50.0)));
    assert!(d >= s + r - 1e-6 * d.abs(), "delivered {d} < stored {s} + dissipated {r}");
    assert!(d - s - r >= q * (1.0 - 1e-2), "fault dissipation {q} not accounted for by {}", d - s - r);
}

#[test]
fn states_continuous_across_fault_insertion() {
    let p = LineParameters::table1();
    let w = sim::simulate(&[ag(10.0, 64.0, 0.0505, 0.2)], &p, &Sources::default(), &opts(4, 0.06)).unwrap();
    let rec = w.internal.as_ref().unwrap();
    let k0 = w.index_at(0.0505);
    // series inductor currents lead the record
    let step = |k: usize| rec[k + 1][..16].iter().zip(&rec[k][..16]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let typical = (k0 - 20..k0 - 1).chain(k0 + 2..k0 + 20).map(step).fold(0.0, f64::max);
    let at_switch = step(k0 - 1).max(step(k0));
    assert!(at_switch <= 2.0 * typical, "jump {at_switch} vs typical step {typical}");
}

#[test]
fn event_table_schedule() {
    let t = sim::table2();
    assert_eq!(t.len(), 15);
    let starts: Vec<f64> = t.iter().map(|s| s.t_start).collect();
    let expect: Vec<f64> = (0..15).map(|i| 0.6 + 0.4 * i as f64).collect();
    for (a, b) in starts.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(t.iter().all(|s| (s.t_end - s.t_start - 0.2).abs() < 1e-12));
    let e7 = &t[6];
    assert!(!e7.internal && (e7.location_km - 128.032).abs() < 1e-12);
    assert!(sim::HEALTHY_WINDOW.1 <= t[0].t_start);
    for (i, s) in t[9..].iter().enumerate() {
        let ch = ["ia1", "ib1", "ic1", "ia2", "ib2", "ic2"][i];
        assert_eq!(s.fault_type, FaultType::BadData(CHANNELS.iter().position(|c| *c == ch).unwrap()));
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let p = LineParameters::table1();
    let s = Sources::default();
    let o = opts(4, 0.01);
    assert!(sim::simulate(&[ag(10.0, 200.0, 0.0, 0.01)], &p, &s, &o).is_err());
    assert!(sim::simulate(&[ag(-1.0, 64.0, 0.0, 0.01)], &p, &s, &o).is_err());
    assert!(sim::simulate(&[ag(10.0, 64.0, 0.0, 0.01), ag(10.0, 32.0, 0.005, 0.02)], &p, &s, &o).is_err());
}
