//! Observer residuals, window statistics, classification and location.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::FilterDesign;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{FaultType, FREQ_HZ, NF, NX, NY};
use crate::scalar::Real;
use crate::sim::FaultScenario;

pub const PHASE_CHANNELS: [usize; 6] = [0, 1, 2, 4, 5, 6];
pub const CORRELATION_MIN: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputHold {
    Zero,
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState<T: Real> {
    pub x_hat: DVector<T>,
    pub k: usize,
    /// Input and residual of the previous sample, applied once the next input arrives.
    pub pending: Option<(DVector<T>, DVector<T>)>,
}

impl<T: Real> ObserverState<T> {
    pub fn zero() -> Self {
        ObserverState { x_hat: DVector::zeros(NX), k: 0, pending: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFrame<T: Real> {
    pub t: f64,
    pub raw: DVector<T>,
    pub canonical: DVector<T>,
}

fn pad_input<T: Real>(u: &[T]) -> DVector<T> {
    let mut v = DVector::zeros(NX);
    for (i, x) in u.iter().take(NX).enumerate() {
        v[i] = *x;
    }
    v
}

/// Discrete Luenberger observer over a fixed design.
#[derive(Debug, Clone)]
pub struct Observer<T: Real> {
    ad: DMatrix<T>,
    bd: DMatrix<T>,
    bs: Option<DMatrix<T>>,
    c: DMatrix<T>,
    d: DMatrix<T>,
    tm_inv: DMatrix<T>,
    dt: f64,
    hold: InputHold,
    pub state: ObserverState<T>,
}

impl<T: Real> Observer<T> {
    pub fn new(design: &FilterDesign<T>, hold: InputHold) -> Result<Self> {
        let dt = design.model.dt().ok_or_else(|| Error::Domain("observer needs a discrete design".into()))?;
        let tm_inv = design
            .tm
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Infeasible("Tm singular".into()))?;
        let bs = match hold {
            InputHold::First => design.model.b_slope.clone(),
            InputHold::Zero => None,
        };
        Ok(Observer {
            ad: design.model.a.clone(),
            bd: design.model.b.clone(),
            bs,
            c: design.model.c.clone(),
            d: design.d.clone(),
            tm_inv,
            dt,
            hold,
            state: ObserverState::zero(),
        })
    }

    pub fn reset(&mut self) {
        self.state = ObserverState::zero();
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Consumes sample k; the residual uses x̂[k] before any update with y[k].
    pub fn step(&mut self, u: &[T], y: &[T]) -> Result<ResidualFrame<T>> {
        let k = self.state.k;
        if !(u.len() == NF || u.len() == NX) || y.len() != NY {
            return Err(Error::Stream { index: k, msg: format!("expected {NF} or {NX} inputs and {NY} outputs") });
        }
        if u.iter().chain(y.iter()).any(|x| !x.f64().is_finite()) {
            return Err(Error::Stream { index: k, msg: "non-finite sample".into() });
        }
        let u = pad_input(u);
        if let Some((u0, r0)) = self.state.pending.take() {
            let mut next = &self.ad * &self.state.x_hat + &self.d * r0;
            match (self.hold, &self.bs) {
                (InputHold::First, Some(bs)) => {
                    next += &self.bd * ((&u0 + &u) * T::c(0.5)) + bs * (&u - &u0);
                }
                _ => next += &self.bd * &u0,
            }
            self.state.x_hat = next;
        }
        let yv = DVector::from_column_slice(y);
        let raw = yv - &self.c * &self.state.x_hat;
        let canonical = &self.tm_inv * &raw;
        self.state.pending = Some((u, raw.clone()));
        self.state.k += 1;
        Ok(ResidualFrame { t: k as f64 * self.dt, raw, canonical })
    }
}

/// Pure form of one observer step.
pub fn observer_step<T: Real>(
    state: &ObserverState<T>,
    u: &[T],
    y: &[T],
    design: &FilterDesign<T>,
    hold: InputHold,
) -> Result<(ObserverState<T>, ResidualFrame<T>)> {
    let mut obs = Observer::new(design, hold)?;
    obs.state = state.clone();
    let frame = obs.step(u, y)?;
    Ok((obs.state, frame))
}

pub fn run_observer<T: Real>(
    design: &FilterDesign<T>,
    hold: InputHold,
    u: &[[f64; 8]],
    y: &[[f64; 8]],
) -> Result<Vec<ResidualFrame<T>>> {
    if u.len() != y.len() {
        return Err(Error::Ingest(format!("{} input samples but {} output samples", u.len(), y.len())));
    }
    let mut obs = Observer::new(design, hold)?;
    let mut out = Vec::with_capacity(u.len());
    for (uk, yk) in u.iter().zip(y) {
        let ut: Vec<T> = uk.iter().map(|x| T::c(*x)).collect();
        let yt: Vec<T> = yk.iter().map(|x| T::c(*x)).collect();
        out.push(obs.step(&ut, &yt)?);
    }
    Ok(out)
}

/// Samples per fundamental cycle.
pub fn cycle_samples(dt: f64) -> usize {
    (1.0 / (FREQ_HZ * dt)).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub t0: f64,
    pub t1: f64,
    pub phasors: [Complex<f64>; 8],
    /// RMS of the fundamental component.
    pub fundamental: [f64; 8],
    pub rms: [f64; 8],
    pub max: [f64; 8],
}

pub fn window_stats<T: Real>(frames: &[ResidualFrame<T>]) -> WindowStats {
    let n = frames.len().max(1);
    let mut phasors = [Complex::new(0.0, 0.0); 8];
    let mut rms = [0.0; 8];
    let mut max = [0.0f64; 8];
    for (k, fr) in frames.iter().enumerate() {
        let w = Complex::from_polar(1.0, -2.0 * PI * k as f64 / n as f64);
        for ch in 0..8 {
            let x = fr.canonical[ch].f64();
            phasors[ch] += w * x;
            rms[ch] += x * x;
            max[ch] = max[ch].max(x.abs());
        }
    }
    let scale = 2.0 / n as f64 / 2f64.sqrt();
    let fundamental = phasors.map(|p| p.norm() * scale);
    WindowStats {
        t0: frames.first().map_or(0.0, |f| f.t),
        t1: frames.last().map_or(0.0, |f| f.t),
        phasors,
        fundamental,
        rms: rms.map(|s| (s / n as f64).sqrt()),
        max,
    }
}

fn cos_between(a: Complex<f64>, b: Complex<f64>) -> f64 {
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return 0.0;
    }
    (a * b.conj()).re / (a.norm() * b.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    None,
    Fault { fault_type: FaultType },
    BadData { channel: usize },
    Unclassified,
}

impl Verdict {
    pub fn label(&self) -> String {
        match self {
            Verdict::None => "none".into(),
            Verdict::Fault { fault_type } => fault_type.label(),
            Verdict::BadData { channel } => FaultType::BadData(*channel).label(),
            Verdict::Unclassified => "unclassified".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub verdict: Verdict,
    pub t0: f64,
    pub t1: f64,
    pub alpha: Option<f64>,
    pub alpha_uncorrected: Option<f64>,
    pub location_km: Option<f64>,
    /// Fundamental-component RMS per canonical channel (pu).
    pub magnitudes: [f64; 8],
    pub rms: [f64; 8],
    pub max: [f64; 8],
    pub windows: usize,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub phasors: Option<[Complex<f64>; 8]>,
}

/// Pattern rules on the phase channels; the most specific pattern wins.
pub fn classify_stats(stats: &WindowStats, threshold_pu: f64) -> Diagnosis {
    let m = stats.fundamental;
    let p = stats.phasors;
    let above: Vec<usize> = PHASE_CHANNELS.iter().cloned().filter(|&i| m[i] > threshold_pu).collect();
    let mut notes = Vec::new();
    let verdict = match above.len() {
        6 => Verdict::Fault { fault_type: FaultType::ABC },
        4 => {
            let left: Vec<usize> = above.iter().cloned().filter(|&i| i < 4).collect();
            let right: Vec<usize> = above.iter().cloned().filter(|&i| i >= 4).collect();
            if left.len() == 2 && right == [left[0] + 4, left[1] + 4] {
                let cl = cos_between(p[left[0]], p[left[1]]);
                let cr = cos_between(p[right[0]], p[right[1]]);
                if cl < -CORRELATION_MIN && cr < -CORRELATION_MIN {
                    Verdict::Fault { fault_type: FaultType::phase_phase(left[0], left[1]) }
                } else {
                    notes.push(format!("phase-pair correlation {cl:.3}/{cr:.3} not opposed"));
                    Verdict::Unclassified
                }
            } else {
                Verdict::Unclassified
            }
        }
        2 if above[1] == above[0] + 4 => {
            let c = cos_between(p[above[0]], p[above[1]]);
            if c > CORRELATION_MIN {
                Verdict::Fault { fault_type: FaultType::single_phase_to_ground(above[0]) }
            } else {
                notes.push(format!("terminal correlation {c:.3} not positive"));
                Verdict::Unclassified
            }
        }
        1 => Verdict::BadData { channel: above[0] },
        0 => Verdict::None,
        _ => Verdict::Unclassified,
    };
    Diagnosis {
        verdict,
        t0: stats.t0,
        t1: stats.t1,
        alpha: None,
        alpha_uncorrected: None,
        location_km: None,
        magnitudes: m,
        rms: stats.rms,
        max: stats.max,
        windows: 1,
        notes,
        phasors: Some(p),
    }
}

pub fn classify<T: Real>(window: &[ResidualFrame<T>], threshold_pu: f64) -> Diagnosis {
    classify_stats(&window_stats(window), threshold_pu)
}

/// Inverse of the model's 60 Hz transfer from continuous channel injections to canonical residual phasors.
#[derive(Debug, Clone)]
pub struct Decoupler {
    m_inv: DMatrix<Complex<f64>>,
}

impl Decoupler {
    pub fn new<T: Real>(design: &FilterDesign<T>) -> Result<Self> {
        Ok(Decoupler { m_inv: Self::transfer(design)?.try_inverse().ok_or(Error::Infeasible("singular transfer".into()))? })
    }

    pub fn identity() -> Self {
        Decoupler { m_inv: DMatrix::identity(NF, NF) }
    }

    pub fn transfer<T: Real>(design: &FilterDesign<T>) -> Result<DMatrix<Complex<f64>>> {
        let dt = design.model.dt().ok_or_else(|| Error::Domain("discrete design required".into()))?;
        let cx = |m: &DMatrix<T>| linalg::to_f64(m).map(|x| Complex::new(x, 0.0));
        let z = Complex::from_polar(1.0, 2.0 * PI * FREQ_HZ * dt);
        let bd = cx(&design.model.b);
        let mut phi = &bd * ((Complex::new(1.0, 0.0) + z) * 0.5);
        if let Some(bs) = &design.model.b_slope {
            phi += cx(bs) * (z - Complex::new(1.0, 0.0));
        }
        let phi = phi.columns(0, NF).into_owned();
        let acl = cx(&design.closed_loop());
        let lhs = DMatrix::<Complex<f64>>::identity(NX, NX) * z - acl;
        let x = lhs.lu().solve(&phi).ok_or(Error::Infeasible("singular resolvent at 60 Hz".into()))?;
        let tm = cx(&design.tm);
        let c = cx(&design.model.c);
        tm.lu().solve(&(c * x)).ok_or(Error::Infeasible("Tm singular".into()))
    }

    pub fn apply(&self, p: &[Complex<f64>; 8]) -> [Complex<f64>; 8] {
        let v = &self.m_inv * DVector::from_column_slice(p);
        std::array::from_fn(|i| v[i])
    }
}

fn alpha_from(mag: &[f64; 8], pairs: &[usize]) -> f64 {
    let s: f64 = pairs.iter().map(|&i| mag[i + 4] / (mag[i] + mag[i + 4])).sum();
    s / pairs.len() as f64
}

/// α = m_R/(m_L + m_R) from decoupled fundamental magnitudes, averaged over the faulted phases.
pub fn locate(diag: &Diagnosis, decoupler: &Decoupler, length_km: f64, threshold_pu: f64) -> Result<(f64, f64)> {
    let Verdict::Fault { fault_type } = diag.verdict else {
        return Err(Error::Locate("not a fault verdict".into()));
    };
    let pairs = fault_type.phases();
    for &i in pairs {
        if diag.magnitudes[i] + diag.magnitudes[i + 4] < threshold_pu {
            return Err(Error::Locate(format!("phase {} magnitudes below threshold", i)));
        }
    }
    let scale = 2.0f64.sqrt();
    let mag = match diag.phasors {
        Some(p) => decoupler.apply(&p).map(|z| z.norm() * scale),
        None => diag.magnitudes,
    };
    let alpha = alpha_from(&mag, pairs);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Locate(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok((alpha, alpha * length_km))
}

fn locate_into(d: &mut Diagnosis, decoupler: &Decoupler, length_km: f64, threshold_pu: f64) {
    if let Verdict::Fault { fault_type } = d.verdict {
        match locate(d, decoupler, length_km, threshold_pu) {
            Ok((a, km)) => {
                d.alpha = Some(a);
                d.location_km = Some(km);
                d.alpha_uncorrected = Some(alpha_from(&d.magnitudes, fault_type.phases()));
            }
            Err(e) => d.notes.push(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub threshold_pu: f64,
    pub length_km: f64,
    pub hold: InputHold,
    /// Windows starting before this time are dropped while the observer converges from zero.
    pub startup_s: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig { threshold_pu: 0.02, length_km: 128.0, hold: InputHold::First, startup_s: 2.0 / FREQ_HZ }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub windows: Vec<Diagnosis>,
    pub diagnoses: Vec<Diagnosis>,
    pub warnings: Vec<String>,
}

/// One-cycle windows with half-cycle stride over precomputed residual frames.
pub fn window_diagnoses<T: Real>(
    frames: &[ResidualFrame<T>],
    dt: f64,
    decoupler: &Decoupler,
    cfg: &StreamConfig,
) -> Vec<Diagnosis> {
    let n = cycle_samples(dt);
    let stride = (n / 2).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + n <= frames.len() {
        let mut d = classify(&frames[start..start + n], cfg.threshold_pu);
        locate_into(&mut d, decoupler, cfg.length_km, cfg.threshold_pu);
        out.push(d);
        start += stride;
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn merge_group(group: &[Diagnosis], length_km: f64) -> Diagnosis {
    let first = &group[0];
    let per = |f: &dyn Fn(&Diagnosis) -> [f64; 8]| -> [f64; 8] {
        std::array::from_fn(|i| median(group.iter().map(|d| f(d)[i]).collect()))
    };
    let alphas: Vec<f64> = group.iter().filter_map(|d| d.alpha).collect();
    let raw: Vec<f64> = group.iter().filter_map(|d| d.alpha_uncorrected).collect();
    let alpha = (!alphas.is_empty()).then(|| median(alphas));
    let mut notes: Vec<String> = Vec::new();
    for d in group {
        for n in &d.notes {
            if !notes.contains(n) {
                notes.push(n.clone());
            }
        }
    }
    Diagnosis {
        verdict: first.verdict,
        t0: first.t0,
        t1: group[group.len() - 1].t1,
        alpha,
        alpha_uncorrected: (!raw.is_empty()).then(|| median(raw)),
        location_km: alpha.map(|a| a * length_km),
        magnitudes: per(&|d| d.magnitudes),
        rms: per(&|d| d.rms),
        max: std::array::from_fn(|i| group.iter().map(|d| d.max[i]).fold(0.0, f64::max)),
        windows: group.len(),
        notes,
        phasors: None,
    }
}

/// Consecutive windows with identical verdicts merged into one diagnosis.
/// A lone window between two windows that agree takes their verdict and leaves a note.
pub fn merge_windows(windows: &[Diagnosis], length_km: f64) -> Vec<Diagnosis> {
    let mut w = windows.to_vec();
    for i in 1..w.len().saturating_sub(1) {
        let (prev, cur, next) = (w[i - 1].verdict, w[i].verdict, w[i + 1].verdict);
        if cur != prev && prev == next {
            let note = format!("isolated {} window at {:.4} s absorbed", cur.label(), w[i].t0);
            w[i].notes.push(note);
            w[i].verdict = prev;
            w[i].alpha = None;
            w[i].alpha_uncorrected = None;
            w[i].location_km = None;
        }
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < w.len() {
        let mut j = i + 1;
        while j < w.len() && w[j].verdict == w[i].verdict {
            j += 1;
        }
        out.push(merge_group(&w[i..j], length_km));
        i = j;
    }
    out
}

pub fn run_stream<T: Real>(
    u: &[[f64; 8]],
    y: &[[f64; 8]],
    design: &FilterDesign<T>,
    cfg: &StreamConfig,
) -> Result<StreamResult> {
    let dt = design.model.dt().ok_or_else(|| Error::Domain("discrete design required".into()))?;
    let mut warnings = Vec::new();
    if u.len() < cycle_samples(dt) {
        if !u.is_empty() {
            warnings.push(format!("stream of {} samples is shorter than one cycle", u.len()));
        }
        return Ok(StreamResult { windows: Vec::new(), diagnoses: Vec::new(), warnings });
    }
    let frames = run_observer(design, cfg.hold, u, y)?;
    let decoupler = Decoupler::new(design)?;
    let mut windows = window_diagnoses(&frames, dt, &decoupler, cfg);
    let before = windows.len();
    windows.retain(|d| d.t0 >= cfg.startup_s - 1e-12);
    if windows.len() < before {
        warnings.push(format!("{} start-up window(s) before {:.4} s skipped", before - windows.len(), cfg.startup_s));
    }
    let diagnoses = merge_windows(&windows, cfg.length_km);
    Ok(StreamResult { windows, diagnoses, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub verdict: Verdict,
    pub votes: usize,
    pub total: usize,
    pub alpha: Option<f64>,
    pub alpha_uncorrected: Option<f64>,
    pub magnitudes: [f64; 8],
}

/// Majority verdict of the windows lying inside [t0 + settle, t1].
pub fn summarize_interval(windows: &[Diagnosis], t0: f64, t1: f64, settle: f64) -> Option<IntervalSummary> {
    let inside: Vec<&Diagnosis> = windows.iter().filter(|d| d.t0 >= t0 + settle - 1e-9 && d.t1 <= t1 + 1e-9).collect();
    if inside.is_empty() {
        return None;
    }
    let mut counts: Vec<(Verdict, usize)> = Vec::new();
    for d in &inside {
        match counts.iter_mut().find(|(v, _)| *v == d.verdict) {
            Some((_, c)) => *c += 1,
            None => counts.push((d.verdict, 1)),
        }
    }
    let (verdict, votes) = counts.iter().cloned().max_by_key(|(_, c)| *c).expect("non-empty");
    let chosen: Vec<&&Diagnosis> = inside.iter().filter(|d| d.verdict == verdict).collect();
    let alphas: Vec<f64> = chosen.iter().filter_map(|d| d.alpha).collect();
    let raw: Vec<f64> = chosen.iter().filter_map(|d| d.alpha_uncorrected).collect();
    Some(IntervalSummary {
        verdict,
        votes,
        total: inside.len(),
        alpha: (!alphas.is_empty()).then(|| median(alphas)),
        alpha_uncorrected: (!raw.is_empty()).then(|| median(raw)),
        magnitudes: std::array::from_fn(|i| median(chosen.iter().map(|d| d.magnitudes[i]).collect())),
    })
}

/// Location tolerance in percent of line length for a fault of resistance `rf`.
pub fn location_tolerance_pct(rf: f64) -> f64 {
    if rf <= 20.0 {
        0.5
    } else {
        2.5
    }
}

pub fn expected_verdict(s: &FaultScenario) -> Verdict {
    match s.fault_type {
        FaultType::BadData(ch) => Verdict::BadData { channel: ch },
        _ if !s.internal => Verdict::None,
        ft => Verdict::Fault { fault_type: ft },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub event_id: u32,
    pub expected: Verdict,
    pub got: Option<Verdict>,
    pub votes: usize,
    pub total: usize,
    pub true_km: Option<f64>,
    pub location_km: Option<f64>,
    pub location_uncorrected_km: Option<f64>,
    pub error_pct: Option<f64>,
    pub tolerance_pct: Option<f64>,
    pub verdict_ok: bool,
    pub location_ok: bool,
}

impl EventOutcome {
    pub fn pass(&self) -> bool {
        self.verdict_ok && self.location_ok
    }
}

/// Compares window verdicts against a scenario list; the first cycle after each inception is skipped.
pub fn evaluate_events(windows: &[Diagnosis], scenarios: &[FaultScenario], length_km: f64) -> Vec<EventOutcome> {
    let settle = 1.0 / FREQ_HZ;
    scenarios
        .iter()
        .map(|s| {
            let expected = expected_verdict(s);
            let sum = summarize_interval(windows, s.t_start, s.t_end, settle);
            let got = sum.as_ref().map(|x| x.verdict);
            let verdict_ok = got == Some(expected);
            let locating = matches!(expected, Verdict::Fault { .. });
            let location_km = sum.as_ref().and_then(|x| x.alpha).map(|a| a * length_km);
            let error_pct = location_km.filter(|_| locating).map(|km| 100.0 * (km - s.location_km).abs() / length_km);
            let tolerance_pct = locating.then(|| location_tolerance_pct(s.rf));
            let location_ok = !locating || matches!((error_pct, tolerance_pct), (Some(e), Some(t)) if e <= t);
            EventOutcome {
                event_id: s.event_id,
                expected,
                got,
                votes: sum.as_ref().map_or(0, |x| x.votes),
                total: sum.as_ref().map_or(0, |x| x.total),
                true_km: locating.then_some(s.location_km),
                location_km: location_km.filter(|_| locating),
                location_uncorrected_km: sum
                    .as_ref()
                    .and_then(|x| x.alpha_uncorrected)
                    .filter(|_| locating)
                    .map(|a| a * length_km),
                error_pct,
                tolerance_pct,
                verdict_ok,
                location_ok,
            }
        })
        .collect()
}

/// Windows inside [t0, t1] whose verdict is not none.
pub fn false_alarms(windows: &[Diagnosis], t0: f64, t1: f64) -> Vec<&Diagnosis> {
    windows.iter().filter(|d| d.t0 >= t0 && d.t1 <= t1 && d.verdict != Verdict::None).collect()
}
