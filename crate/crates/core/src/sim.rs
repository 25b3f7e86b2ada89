//! Independent time-domain oracle: trapezoidal nodal simulation of the two-bus test system.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    channel_index, concatenate_sections, fault_conductance, k_matrix, FaultType, LineParameters, PuBases,
    StateSpaceModel, FREQ_HZ,
};
use crate::scalar::Real;

pub const CHANNELS: [&str; 16] = [
    "ia1", "ib1", "ic1", "in1", "ia2", "ib2", "ic2", "in2", "va1", "vb1", "vc1", "vn1", "va2", "vb2", "vc2", "vn2",
];

/// Three-phase Thevenin source behind one terminal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// Line-to-line RMS voltage.
    pub v_ll: f64,
    pub angle_deg: f64,
    pub r_ohm: f64,
    pub l_h: f64,
}

impl SourceModel {
    pub fn phase_peak(&self) -> f64 {
        self.v_ll * (2.0f64 / 3.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_ll > 0.0) {
            return Err(Error::Parameter(format!("source amplitude must be > 0 (got {})", self.v_ll)));
        }
        if !(self.r_ohm >= 0.0 && self.l_h >= 0.0) || (self.r_ohm == 0.0 && self.l_h == 0.0) {
            return Err(Error::Parameter("source impedance must be non-negative and non-zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sources {
    pub left: SourceModel,
    pub right: SourceModel,
}

impl Default for Sources {
    fn default() -> Self {
        let s = SourceModel { v_ll: 115e3, angle_deg: 0.0, r_ohm: 1.0, l_h: 0.01 };
        Sources { left: s, right: SourceModel { angle_deg: -10.0, ..s } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub event_id: u32,
    pub fault_type: FaultType,
    pub rf: f64,
    pub location_km: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub internal: bool,
}

impl FaultScenario {
    pub fn is_bad_data(&self) -> bool {
        matches!(self.fault_type, FaultType::BadData(_))
    }

    pub fn validate(&self, length_km: f64) -> Result<()> {
        if !(self.t_start < self.t_end) {
            return Err(Error::Domain(format!("event {}: t_start must precede t_end", self.event_id)));
        }
        if self.is_bad_data() {
            return Ok(());
        }
        if !(self.rf > 0.0) {
            return Err(Error::Domain(format!("event {}: Rf must be > 0 (got {})", self.event_id, self.rf)));
        }
        if !(self.location_km >= 0.0) {
            return Err(Error::Domain(format!("event {}: location must be >= 0", self.event_id)));
        }
        if self.internal && !(self.location_km > 0.0 && self.location_km < length_km) {
            return Err(Error::Domain(format!(
                "event {}: internal fault at {} km lies outside the line (0, {length_km})",
                self.event_id, self.location_km
            )));
        }
        if !self.internal && self.location_km <= length_km {
            return Err(Error::Domain(format!(
                "event {}: external fault must lie beyond the right terminal",
                self.event_id
            )));
        }
        Ok(())
    }
}

/// The sixteen rows of the reference event table (row 0 is the healthy interval and has no scenario).
pub fn table2() -> Vec<FaultScenario> {
    use FaultType::*;
    let line = |id, ft, rf, km, t0, t1| FaultScenario {
        event_id: id,
        fault_type: ft,
        rf,
        location_km: km,
        t_start: t0,
        t_end: t1,
        internal: km < 128.0,
    };
    let bad = |id, ch: &str, t0, t1| FaultScenario {
        event_id: id,
        fault_type: BadData(channel_index(ch).expect("known channel")),
        rf: 0.0,
        location_km: 0.0,
        t_start: t0,
        t_end: t1,
        internal: false,
    };
    vec![
        line(1, AG, 1000.0, 48.0, 0.6, 0.8),
        line(2, BG, 500.0, 48.0, 1.0, 1.2),
        line(3, BC, 0.5, 48.0, 1.4, 1.6),
        line(4, CG, 500.0, 64.0, 1.8, 2.0),
        line(5, CA, 10.0, 64.0, 2.2, 2.4),
        line(6, AB, 20.0, 64.0, 2.6, 2.8),
        line(7, ABC, 1.0, 128.032, 3.0, 3.2),
        line(8, ABC, 2.0, 16.0, 3.4, 3.6),
        line(9, AG, 1.0, 16.0, 3.8, 4.0),
        bad(10, "ia1", 4.2, 4.4),
        bad(11, "ib1", 4.6, 4.8),
        bad(12, "ic1", 5.0, 5.2),
        bad(13, "ia2", 5.4, 5.6),
        bad(14, "ib2", 5.8, 6.0),
        bad(15, "ic2", 6.2, 6.4),
    ]
}

pub const HEALTHY_WINDOW: (f64, f64) = (0.1, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub n_sections: usize,
    pub t_end: f64,
    pub stub_km: f64,
    /// Keep series currents and ladder node voltages (diagnostic use).
    pub record_internal: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { dt: 1e-4, n_sections: 16, t_end: 6.5, stub_km: 0.032, record_internal: false }
    }
}

/// Sampled terminal measurements, SI units, sample k at t = k·dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveforms {
    pub dt: f64,
    /// ia1, ib1, ic1, in1, ia2, ib2, ic2, in2 (A), positive into the line.
    pub currents: Vec<[f64; 8]>,
    /// va1 … vn1, va2 … vn2 (V) to ground.
    pub voltages: Vec<[f64; 8]>,
    /// Per sample: 4n series currents, section by section, then 4(n+1) ladder node voltages.
    #[serde(skip)]
    pub internal: Option<Vec<Vec<f64>>>,
}

impl Waveforms {
    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn index_at(&self, t: f64) -> usize {
        ((t / self.dt) - 1e-9).ceil().max(0.0) as usize
    }

    /// Per-unit observer streams: u = [i1; i2], y = [K·v1; K·v2].
    pub fn to_pu(&self, bases: &PuBases) -> (Vec<[f64; 8]>, Vec<[f64; 8]>) {
        let k = k_matrix();
        let u = self.currents.iter().map(|c| c.map(|x| x / bases.i_base)).collect();
        let y = self
            .voltages
            .iter()
            .map(|v| {
                let mut out = [0.0; 8];
                for side in 0..2 {
                    for i in 0..4 {
                        let mut acc = 0.0;
                        for j in 0..4 {
                            acc += k[(i, j)] * v[4 * side + j];
                        }
                        out[4 * side + i] = acc / bases.v_base;
                    }
                }
                out
            })
            .collect();
        (u, y)
    }

    pub fn channel(&self, idx: usize) -> Vec<f64> {
        if idx < 8 {
            self.currents.iter().map(|c| c[idx]).collect()
        } else {
            self.voltages.iter().map(|v| v[idx - 8]).collect()
        }
    }
}

pub fn add_noise(w: &Waveforms, amplitude_pu: f64, bases: &PuBases, seed: u64) -> Result<Waveforms> {
    if !(amplitude_pu >= 0.0) {
        return Err(Error::Domain(format!("noise amplitude must be >= 0 (got {amplitude_pu})")));
    }
    let mut out = w.clone();
    if amplitude_pu == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ia, va) = (amplitude_pu * bases.i_base, amplitude_pu * bases.v_base);
    for (c, v) in out.currents.iter_mut().zip(out.voltages.iter_mut()) {
        for x in c.iter_mut() {
            *x += rng.random_range(-ia..=ia);
        }
        for (j, x) in v.iter_mut().enumerate() {
            if j % 4 != 3 {
                *x += rng.random_range(-va..=va);
            }
        }
    }
    Ok(out)
}

/// Forces a current channel to zero on [t_start, t_end).
pub fn inject_bad_data(w: &Waveforms, channel: &str, t_start: f64, t_end: f64) -> Result<Waveforms> {
    let idx = match CHANNELS.iter().position(|c| *c == channel) {
        Some(i) if i < 8 => i,
        Some(_) => return Err(Error::Unsupported(format!("loss-of-data on voltage channel {channel}"))),
        None => return Err(Error::Parameter(format!("unknown channel {channel}"))),
    };
    let mut out = w.clone();
    let (a, b) = (w.index_at(t_start), w.index_at(t_end).min(w.len()));
    for c in out.currents.iter_mut().take(b).skip(a) {
        c[idx] = 0.0;
    }
    Ok(out)
}

struct Rl {
    p: Vec<Option<usize>>,
    q: Vec<Option<usize>>,
    r: DMatrix<f64>,
    l: DMatrix<f64>,
    src: Option<(f64, f64)>,
    i: DVector<f64>,
    hist: DVector<f64>,
    y_trap: DMatrix<f64>,
    k_trap: DMatrix<f64>,
    y_be: DMatrix<f64>,
    l_be: DMatrix<f64>,
}

struct Shunt {
    p: Vec<Option<usize>>,
    c: DMatrix<f64>,
    i: DVector<f64>,
    hist: DVector<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Life {
    Pending,
    On,
    Clearing,
    Gone,
}

struct FaultBranch {
    scenario: usize,
    p: Option<usize>,
    q: Option<usize>,
    g: f64,
    life: Life,
    last: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    Trap,
    Euler,
}

fn m4(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| m[(i, j)])
}

fn gather(v: &DVector<f64>, nodes: &[Option<usize>]) -> DVector<f64> {
    DVector::from_iterator(nodes.len(), nodes.iter().map(|n| n.map_or(0.0, |k| v[k])))
}

fn stamp(y: &mut DMatrix<f64>, p: &[Option<usize>], q: Option<&[Option<usize>]>, m: &DMatrix<f64>) {
    for (a, ra) in p.iter().enumerate() {
        for (b, rb) in p.iter().enumerate() {
            if let (Some(i), Some(j)) = (ra, rb) {
                y[(*i, *j)] += m[(a, b)];
            }
        }
    }
    let Some(q) = q else { return };
    for (a, ra) in q.iter().enumerate() {
        for (b, rb) in q.iter().enumerate() {
            if let (Some(i), Some(j)) = (ra, rb) {
                y[(*i, *j)] += m[(a, b)];
            }
        }
    }
    for (a, ra) in p.iter().enumerate() {
        for (b, rb) in q.iter().enumerate() {
            if let (Some(i), Some(j)) = (ra, rb) {
                y[(*i, *j)] -= m[(a, b)];
                y[(*j, *i)] -= m[(b, a)];
            }
        }
    }
}

fn stamp_c(y: &mut DMatrix<Complex<f64>>, p: &[Option<usize>], q: Option<&[Option<usize>]>, m: &DMatrix<Complex<f64>>) {
    let mut re = DMatrix::zeros(y.nrows(), y.ncols());
    let mut im = DMatrix::zeros(y.nrows(), y.ncols());
    stamp(&mut re, p, q, &m.map(|z| z.re));
    stamp(&mut im, p, q, &m.map(|z| z.im));
    *y += re.zip_map(&im, Complex::new);
}

fn inject(j: &mut DVector<f64>, nodes: &[Option<usize>], vals: &DVector<f64>, sign: f64) {
    for (n, v) in nodes.iter().zip(vals.iter()) {
        if let Some(k) = n {
            j[*k] += sign * v;
        }
    }
}

struct Network {
    n: usize,
    size: usize,
    rl: Vec<Rl>,
    shunts: Vec<Shunt>,
    faults: Vec<FaultBranch>,
    /// Free-node index of (ladder node, conductor); None when grounded.
    node: Vec<[Option<usize>; 4]>,
}

impl Network {
    fn build(line: &LineParameters, sources: &Sources, opts: &SimOptions) -> Result<Self> {
        let ladder = concatenate_sections(line, opts.n_sections)?;
        let n = ladder.n;
        let mut node = Vec::with_capacity(n + 2);
        let mut next = 0;
        for j in 0..n + 2 {
            let mut row = [None; 4];
            for (c, slot) in row.iter_mut().enumerate() {
                let grounded = c == 3 && (j == 0 || j == n);
                if !grounded {
                    *slot = Some(next);
                    next += 1;
                }
            }
            node.push(row);
        }
        let mk = |p: Vec<Option<usize>>, q: Vec<Option<usize>>, r: DMatrix<f64>, l: DMatrix<f64>, src| {
            let k = r.nrows();
            Rl {
                p,
                q,
                r,
                l,
                src,
                i: DVector::zeros(k),
                hist: DVector::zeros(k),
                y_trap: DMatrix::zeros(k, k),
                k_trap: DMatrix::zeros(k, k),
                y_be: DMatrix::zeros(k, k),
                l_be: DMatrix::zeros(k, k),
            }
        };
        let mut rl = Vec::new();
        for j in 0..n {
            rl.push(mk(
                node[j].to_vec(),
                node[j + 1].to_vec(),
                m4(&ladder.r_section),
                m4(&ladder.l_section),
                None,
            ));
        }
        let s = opts.stub_km / line.length_km;
        rl.push(mk(node[n].to_vec(), node[n + 1].to_vec(), m4(&(line.r.0 * s)), m4(&(line.l.0 * s)), None));
        for (side, src) in [(0usize, &sources.left), (1, &sources.right)] {
            src.validate()?;
            let bus = if side == 0 { 0 } else { n };
            rl.push(mk(
                vec![None; 3],
                node[bus][..3].to_vec(),
                DMatrix::identity(3, 3) * src.r_ohm,
                DMatrix::identity(3, 3) * src.l_h,
                Some((src.phase_peak(), src.angle_deg.to_radians())),
            ));
        }
        let shunts = ladder
            .shunt
            .iter()
            .enumerate()
            .map(|(j, c)| Shunt { p: node[j].to_vec(), c: m4(c), i: DVector::zeros(4), hist: DVector::zeros(4) })
            .collect();
        let mut net = Network { n, size: next, rl, shunts, faults: Vec::new(), node };
        net.prepare(opts.dt);
        Ok(net)
    }

    fn prepare(&mut self, dt: f64) {
        let h = dt / 2.0;
        for b in &mut self.rl {
            let trap = &b.r + &b.l * (2.0 / dt);
            b.y_trap = trap.try_inverse().expect("series branch impedance invertible");
            b.k_trap = &b.l * (2.0 / dt) - &b.r;
            let be = &b.r + &b.l / h;
            b.y_be = be.try_inverse().expect("series branch impedance invertible");
            b.l_be = &b.l / h;
        }
    }

    fn add_fault(&mut self, idx: usize, sc: &FaultScenario, length_km: f64) -> Result<()> {
        let j = if sc.internal {
            ((sc.location_km / length_km) * self.n as f64).round() as usize
        } else {
            self.n + 1
        };
        let g = fault_conductance(sc.fault_type, sc.rf)?;
        let nodes = self.node[j];
        let mut add = |p: usize, q: Option<usize>, cond: f64| {
            self.faults.push(FaultBranch {
                scenario: idx,
                p: nodes[p],
                q: q.and_then(|q| nodes[q]),
                g: cond,
                life: Life::Pending,
                last: None,
            })
        };
        let ph = sc.fault_type.phases();
        match ph.len() {
            1 => add(ph[0], None, g[(ph[0], ph[0])]),
            2 => add(ph[0], Some(ph[1]), -g[(ph[0], ph[1])]),
            _ => {
                for (p, q) in [(0, 1), (1, 2), (2, 0)] {
                    add(p, Some(q), -g[(p, q)]);
                }
            }
        }
        Ok(())
    }

    fn emf(&self, b: &Rl, t: f64) -> DVector<f64> {
        let w = 2.0 * PI * FREQ_HZ;
        match b.src {
            Some((vm, th)) => DVector::from_fn(3, |q, _| vm * (w * t + th - 2.0 * PI * q as f64 / 3.0).cos()),
            None => DVector::zeros(b.r.nrows()),
        }
    }

    /// Periodic steady state of the trapezoidal recursion at step dt.
    fn init_phasor(&mut self, dt: f64) -> DVector<f64> {
        let w = (2.0 / dt) * (PI * FREQ_HZ * dt).tan();
        let mut y = DMatrix::<Complex<f64>>::zeros(self.size, self.size);
        let mut j = DVector::<Complex<f64>>::zeros(self.size);
        let mut ys = Vec::new();
        for b in &self.rl {
            let z = b.r.map(|x| Complex::new(x, 0.0)) + b.l.map(|x| Complex::new(0.0, w * x));
            let yb = z.try_inverse().expect("branch impedance invertible");
            stamp_c(&mut y, &b.p, Some(&b.q), &yb);
            let e = match b.src {
                Some((vm, th)) => DVector::from_fn(3, |q, _| Complex::from_polar(vm, th - 2.0 * PI * q as f64 / 3.0)),
                None => DVector::zeros(b.r.nrows()),
            };
            let ie = &yb * &e;
            for (n, v) in b.q.iter().zip(ie.iter()) {
                if let Some(k) = n {
                    j[*k] += v;
                }
            }
            for (n, v) in b.p.iter().zip(ie.iter()) {
                if let Some(k) = n {
                    j[*k] -= v;
                }
            }
            ys.push((yb, e));
        }
        for s in &self.shunts {
            stamp_c(&mut y, &s.p, None, &s.c.map(|x| Complex::new(0.0, w * x)));
        }
        let v = y.lu().solve(&j).expect("network admittance nonsingular");
        let gc = |nodes: &[Option<usize>]| {
            DVector::from_iterator(nodes.len(), nodes.iter().map(|n| n.map_or(Complex::new(0.0, 0.0), |k| v[k])))
        };
        for (b, (yb, e)) in self.rl.iter_mut().zip(ys) {
            let wv = gc(&b.p) - gc(&b.q) + e;
            b.i = (yb * wv).map(|z| z.re);
        }
        for s in &mut self.shunts {
            s.i = (s.c.map(|x| Complex::new(0.0, w * x)) * gc(&s.p)).map(|z| z.re);
        }
        v.map(|z| z.re)
    }

    /// Trapezoidal at dt and backward Euler at dt/2 share this matrix.
    fn admittance(&self, active: &[usize], dt: f64) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.size, self.size);
        for b in &self.rl {
            stamp(&mut y, &b.p, Some(&b.q), &b.y_trap);
        }
        for s in &self.shunts {
            stamp(&mut y, &s.p, None, &(&s.c * (2.0 / dt)));
        }
        for &f in active {
            let fb = &self.faults[f];
            let g = DMatrix::from_element(1, 1, fb.g);
            stamp(&mut y, &[fb.p], Some(&[fb.q]), &g);
        }
        y
    }

    fn step(&mut self, v: &DVector<f64>, t0: f64, h: f64, method: Method, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> DVector<f64> {
        let mut j = DVector::zeros(self.size);
        let t1 = t0 + h;
        for idx in 0..self.rl.len() {
            let e0 = self.emf(&self.rl[idx], t0);
            let e1 = self.emf(&self.rl[idx], t1);
            let b = &mut self.rl[idx];
            let hist = match method {
                Method::Trap => {
                    let wk = gather(v, &b.p) - gather(v, &b.q) + e0;
                    &b.y_trap * (wk + &b.k_trap * &b.i) + &b.y_trap * e1
                }
                Method::Euler => &b.y_be * (&b.l_be * &b.i + e1),
            };
            inject(&mut j, &b.p, &hist, -1.0);
            inject(&mut j, &b.q, &hist, 1.0);
            b.hist = hist;
        }
        for s in &mut self.shunts {
            let vk = gather(v, &s.p);
            let hist = match method {
                Method::Trap => -(&s.c * (2.0 / h) * vk + &s.i),
                Method::Euler => -(&s.c / h * vk),
            };
            inject(&mut j, &s.p, &hist, -1.0);
            s.hist = hist;
        }
        let vn = lu.solve(&j).expect("factorized admittance");
        for b in &mut self.rl {
            let yb = if method == Method::Trap { &b.y_trap } else { &b.y_be };
            b.i = yb * (gather(&vn, &b.p) - gather(&vn, &b.q)) + &b.hist;
        }
        for s in &mut self.shunts {
            let k = if method == Method::Trap { 2.0 / h } else { 1.0 / h };
            s.i = &s.c * k * gather(&vn, &s.p) + &s.hist;
        }
        vn
    }
}

/// Switched conductance (pu) below which a topology change is integrated without damping half-steps.
pub const SWITCH_G_PU: f64 = 1e-6;

/// Simulates the two-bus system; bad-data scenarios are applied to the recorded currents afterwards.
pub fn simulate(
    scenarios: &[FaultScenario],
    line: &LineParameters,
    sources: &Sources,
    opts: &SimOptions,
) -> Result<Waveforms> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) || !(opts.t_end >= 0.0) {
        return Err(Error::Domain("dt must be > 0 and t_end >= 0".into()));
    }
    if !(opts.stub_km > 0.0) {
        return Err(Error::Domain("stub length must be > 0".into()));
    }
    for s in scenarios {
        s.validate(line.length_km)?;
    }
    let mut line_events: Vec<&FaultScenario> = scenarios.iter().filter(|s| !s.is_bad_data()).collect();
    line_events.sort_by(|a, b| a.t_start.partial_cmp(&b.t_start).unwrap());
    for w in line_events.windows(2) {
        if w[1].t_start < w[0].t_end {
            return Err(Error::Domain(format!("events {} and {} overlap", w[0].event_id, w[1].event_id)));
        }
    }
    let mut net = Network::build(line, sources, opts)?;
    for (i, sc) in line_events.iter().enumerate() {
        net.add_fault(i, sc, line.length_km)?;
    }
    let dt = opts.dt;
    let z_base = line.bases().z_base();
    let steps = (opts.t_end / dt).round() as usize;
    let mut v = net.init_phasor(dt);
    let mut cur = Vec::with_capacity(steps + 1);
    let mut vol = Vec::with_capacity(steps + 1);
    let mut internal = opts.record_internal.then(Vec::new);
    let n = net.n;
    let record = |net: &Network, v: &DVector<f64>, cur: &mut Vec<[f64; 8]>, vol: &mut Vec<[f64; 8]>| {
        let i1 = &net.shunts[0].i + &net.rl[0].i;
        let i2 = &net.shunts[n].i - &net.rl[n - 1].i;
        let v1 = gather(v, &net.node[0]);
        let v2 = gather(v, &net.node[n]);
        let mut c = [0.0; 8];
        let mut u = [0.0; 8];
        for k in 0..4 {
            c[k] = i1[k];
            c[k + 4] = i2[k];
            u[k] = v1[k];
            u[k + 4] = v2[k];
        }
        cur.push(c);
        vol.push(u);
    };
    let snap = |net: &Network, v: &DVector<f64>| {
        let mut out: Vec<f64> = net.rl[..n].iter().flat_map(|b| b.i.iter().cloned()).collect();
        for j in 0..=n {
            out.extend(gather(v, &net.node[j]).iter());
        }
        out
    };
    record(&net, &v, &mut cur, &mut vol);
    if let Some(rec) = internal.as_mut() {
        rec.push(snap(&net, &v));
    }
    let mut cache: HashMap<Vec<usize>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = HashMap::new();
    let mut prev: Vec<usize> = Vec::new();
    for k in 0..steps {
        let t0 = k as f64 * dt;
        for fb in &mut net.faults {
            let sc = line_events[fb.scenario];
            // a switch at t_s takes effect for the step starting at t_s
            if fb.life == Life::Pending && sc.t_start <= t0 + 1e-12 && t0 + 1e-12 < sc.t_end {
                fb.life = Life::On;
            }
            if fb.life == Life::On && t0 + 1e-12 >= sc.t_end {
                fb.life = Life::Clearing;
            }
        }
        let active: Vec<usize> = net
            .faults
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.life, Life::On | Life::Clearing))
            .map(|(i, _)| i)
            .collect();
        let lu = cache.entry(active.clone()).or_insert_with(|| net.admittance(&active, dt).lu());
        let significant = |i: &usize| net.faults[*i].g * z_base > SWITCH_G_PU;
        let switched = active.iter().filter(|i| !prev.contains(i)).chain(prev.iter().filter(|i| !active.contains(i)));
        if switched.into_iter().any(|i| significant(i)) {
            v = net.step(&v, t0, dt / 2.0, Method::Euler, lu);
            v = net.step(&v, t0 + dt / 2.0, dt / 2.0, Method::Euler, lu);
        } else {
            v = net.step(&v, t0, dt, Method::Trap, lu);
        }
        prev = active;
        record(&net, &v, &mut cur, &mut vol);
        if let Some(rec) = internal.as_mut() {
            rec.push(snap(&net, &v));
        }
        for fb in &mut net.faults {
            if matches!(fb.life, Life::On | Life::Clearing) {
                let i = fb.g * (fb.p.map_or(0.0, |x| v[x]) - fb.q.map_or(0.0, |x| v[x]));
                if fb.life == Life::Clearing {
                    if let Some(last) = fb.last {
                        if i == 0.0 || i.signum() != last.signum() {
                            fb.life = Life::Gone;
                        }
                    }
                }
                fb.last = Some(i);
            }
        }
    }
    let mut w = Waveforms { dt, currents: cur, voltages: vol, internal };
    for sc in scenarios.iter().filter(|s| s.is_bad_data()) {
        if let FaultType::BadData(ch) = sc.fault_type {
            w = inject_bad_data(&w, CHANNELS[ch], sc.t_start, sc.t_end)?;
        }
    }
    Ok(w)
}

/// Full reference event schedule.
pub fn run_event_table(line: &LineParameters, sources: &Sources, opts: &SimOptions) -> Result<(Waveforms, Vec<FaultScenario>)> {
    let table = table2();
    let w = simulate(&table, line, sources, opts)?;
    Ok((w, table))
}

/// Output of a discrete model driven by input samples with first-order-hold intersample behaviour.
pub fn matched_model_stream<T: Real>(
    model: &StateSpaceModel<T>,
    x0: &DVector<T>,
    inputs: &[DVector<T>],
) -> Vec<DVector<T>> {
    let half = T::c(0.5);
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        out.push(&model.c * &x);
        if k + 1 < inputs.len() {
            let (u0, u1) = (&inputs[k], &inputs[k + 1]);
            let mut next = &model.a * &x + &model.b * ((u0 + u1) * half);
            if let Some(s) = &model.b_slope {
                next += s * (u1 - u0);
            }
            x = next;
        }
    }
    out
}
