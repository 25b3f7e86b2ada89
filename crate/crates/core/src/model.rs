//! Single-section line model in scaled coordinates z = B1·x, x = [v1; v2; iL].

use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

pub const NX: usize = 12;
pub const NY: usize = 8;
pub const NF: usize = 8;
pub const CONDUCTORS: [&str; 4] = ["A", "B", "C", "N"];
pub const FREQ_HZ: f64 = 60.0;

/// 4×4 phase-domain matrix indexed A, B, C, N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatrix(pub Matrix4<f64>);

impl PhaseMatrix {
    pub fn from_rows(rows: [[f64; 4]; 4]) -> Self {
        PhaseMatrix(Matrix4::from_fn(|i, j| rows[i][j]))
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.0[(i, j)];
            }
        }
        out
    }

    pub fn is_symmetric(&self, rtol: f64) -> bool {
        let scale = self.0.abs().max();
        (self.0 - self.0.transpose()).abs().max() <= rtol * scale
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.cholesky().is_some()
    }

    pub fn scaled(&self, s: f64) -> Self {
        PhaseMatrix(self.0 * s)
    }

    /// Entries given in micro-units; divides so that `to_micro` recovers them bit for bit.
    pub fn from_micro(rows: [[f64; 4]; 4]) -> Self {
        PhaseMatrix(Matrix4::from_fn(|i, j| rows[i][j] / 1e6))
    }

    pub fn to_micro(&self) -> [[f64; 4]; 4] {
        self.scaled(1e6).rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParameters {
    pub r: PhaseMatrix,
    pub l: PhaseMatrix,
    pub cap: PhaseMatrix,
    pub length_km: f64,
    pub v_rated: f64,
    pub i_rated: f64,
    /// Three-phase power base for the current base.
    pub s_base_mva: f64,
}

/// Per-unit bases: phase-to-neutral peak voltage and the matching peak current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuBases {
    pub v_base: f64,
    pub i_base: f64,
}

impl PuBases {
    pub fn z_base(&self) -> f64 {
        self.v_base / self.i_base
    }
}

impl LineParameters {
    /// Reference test line (128 km, 115 kV, 1300 A).
    pub fn table1() -> Self {
        LineParameters {
            r: PhaseMatrix::from_rows([
                [12.270, 7.180, 7.197, 6.748],
                [7.180, 12.310, 7.216, 6.750],
                [7.197, 7.216, 12.350, 6.757],
                [6.748, 6.750, 6.757, 147.3],
            ]),
            l: PhaseMatrix::from_rows([
                [0.2881, 0.1521, 0.1342, 0.1472],
                [0.1521, 0.2878, 0.1519, 0.1331],
                [0.1342, 0.1519, 0.2878, 0.1234],
                [0.1472, 0.1331, 0.1234, 0.4356],
            ]),
            cap: PhaseMatrix::from_micro([
                [0.5624, -0.1447, -0.0728, -0.1086],
                [-0.1447, 0.5807, -0.1479, -0.0565],
                [-0.0728, -0.1479, 0.5525, -0.0387],
                [-0.1086, -0.0565, -0.0387, 0.4104],
            ]),
            length_km: 128.0,
            v_rated: 115e3,
            i_rated: 1300.0,
            s_base_mva: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("R", &self.r), ("L", &self.l), ("Cap", &self.cap)] {
            if !m.0.iter().all(|x| x.is_finite()) {
                return Err(Error::Parameter(format!("{name} has non-finite entries")));
            }
            if !m.is_symmetric(1e-9) {
                return Err(Error::Parameter(format!("{name} is not symmetric")));
            }
        }
        if !self.r.is_positive_definite() {
            return Err(Error::Parameter("R is not positive definite".into()));
        }
        if !self.l.is_positive_definite() {
            return Err(Error::SingularParameter("L"));
        }
        if self.cap.0.try_inverse().is_none() || self.cap.0.determinant().abs() < 1e-300 {
            return Err(Error::SingularParameter("Cap"));
        }
        for (name, v) in [
            ("length_km", self.length_km),
            ("v_rated", self.v_rated),
            ("i_rated", self.i_rated),
            ("s_base_mva", self.s_base_mva),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be > 0 (got {v})")));
            }
        }
        Ok(())
    }

    pub fn bases(&self) -> PuBases {
        let v_base = self.v_rated * (2.0f64 / 3.0).sqrt();
        let i_base = 2.0f64.sqrt() * self.s_base_mva * 1e6 / (3.0f64.sqrt() * self.v_rated);
        PuBases { v_base, i_base }
    }
}

/// K maps phase-to-ground voltages [va, vb, vc, vn] to [va−vn, vb−vn, vc−vn, vn].
pub fn k_matrix() -> Matrix4<f64> {
    Matrix4::new(
        1.0, 0.0, 0.0, -1.0, //
        0.0, 1.0, 0.0, -1.0, //
        0.0, 0.0, 1.0, -1.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordinates {
    ScaledZ,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeDomain {
    Continuous,
    Discrete { dt: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    /// First-order-hold slope map (Γ1 − Γ0/2)·B, discrete models only.
    pub b_slope: Option<DMatrix<T>>,
    pub coords: Coordinates,
    pub time: TimeDomain,
}

impl<T: Real> StateSpaceModel<T> {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn dt(&self) -> Option<f64> {
        match self.time {
            TimeDomain::Discrete { dt } => Some(dt),
            TimeDomain::Continuous => None,
        }
    }

    pub fn cast<U: Real>(&self) -> StateSpaceModel<U> {
        let cv = |m: &DMatrix<T>| linalg::from_f64::<U>(&linalg::to_f64(m));
        StateSpaceModel {
            a: cv(&self.a),
            b: cv(&self.b),
            c: cv(&self.c),
            b_slope: self.b_slope.as_ref().map(cv),
            coords: self.coords,
            time: self.time,
        }
    }
}

fn block4<T: Real>(out: &mut DMatrix<T>, bi: usize, bj: usize, m: &Matrix4<f64>) {
    for i in 0..4 {
        for j in 0..4 {
            out[(4 * bi + i, 4 * bj + j)] = T::c(m[(i, j)]);
        }
    }
}

/// Continuous model from per-unit matrices (R, L in pu impedance·s^k, Cap in pu admittance·s).
pub fn model_from_pu<T: Real>(r: &Matrix4<f64>, l: &Matrix4<f64>, cap: &Matrix4<f64>) -> Result<StateSpaceModel<T>> {
    let li = l.try_inverse().ok_or(Error::SingularParameter("L"))?;
    let ci = cap.try_inverse().ok_or(Error::SingularParameter("Cap"))?;
    let mut a = DMatrix::<T>::zeros(NX, NX);
    block4(&mut a, 0, 2, &(-li));
    block4(&mut a, 1, 2, &li);
    block4(&mut a, 2, 0, &ci);
    block4(&mut a, 2, 1, &(-ci));
    block4(&mut a, 2, 2, &(-(r * li)));
    let mut b = DMatrix::<T>::zeros(NX, NX);
    for i in 0..NF {
        b[(i, i)] = T::one();
    }
    let kc = k_matrix() * ci;
    let mut c = DMatrix::<T>::zeros(NY, NX);
    block4(&mut c, 0, 0, &kc);
    block4(&mut c, 1, 1, &kc);
    Ok(StateSpaceModel { a, b, c, b_slope: None, coords: Coordinates::ScaledZ, time: TimeDomain::Continuous })
}

/// Healthy single-section π-model, per-unit, time in seconds.
pub fn build_single_section<T: Real>(params: &LineParameters) -> Result<StateSpaceModel<T>> {
    params.validate()?;
    let zb = params.bases().z_base();
    model_from_pu(&(params.r.0 / zb), &(params.l.0 / zb), &(params.cap.0 * zb))
}

/// F = [E4 0; 0 E4; 0 0].
#[derive(Debug, Clone, PartialEq)]
pub struct FaultEventBasis<T: Real> {
    pub f: DMatrix<T>,
}

pub fn fault_event_basis<T: Real>() -> FaultEventBasis<T> {
    let mut f = DMatrix::zeros(NX, NF);
    for i in 0..NF {
        f[(i, i)] = T::one();
    }
    FaultEventBasis { f }
}

/// Orthonormal basis of null(C) built from its known structure: the iL coordinates.
pub fn null_c_basis<T: Real>() -> DMatrix<T> {
    let mut z = DMatrix::zeros(NX, 4);
    for i in 0..4 {
        z[(8 + i, i)] = T::one();
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FaultType {
    AG,
    BG,
    CG,
    AB,
    BC,
    CA,
    ABC,
    /// Loss of a terminal current measurement, channel 0..8 (ia1..in2).
    BadData(usize),
}

pub const CURRENT_CHANNELS: [&str; 8] = ["ia1", "ib1", "ic1", "in1", "ia2", "ib2", "ic2", "in2"];

impl FaultType {
    pub fn label(&self) -> String {
        match self {
            FaultType::AG => "A-G".into(),
            FaultType::BG => "B-G".into(),
            FaultType::CG => "C-G".into(),
            FaultType::AB => "A-B".into(),
            FaultType::BC => "B-C".into(),
            FaultType::CA => "C-A".into(),
            FaultType::ABC => "A-B-C".into(),
            FaultType::BadData(ch) => format!("bad-data({})", CURRENT_CHANNELS.get(*ch).unwrap_or(&"?")),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase().replace(['_', ' '], "-");
        Ok(match t.as_str() {
            "A-G" | "AG" => FaultType::AG,
            "B-G" | "BG" => FaultType::BG,
            "C-G" | "CG" => FaultType::CG,
            "A-B" | "B-A" | "AB" => FaultType::AB,
            "B-C" | "C-B" | "BC" => FaultType::BC,
            "C-A" | "A-C" | "CA" => FaultType::CA,
            "A-B-C" | "ABC" => FaultType::ABC,
            _ => {
                let low = s.trim().to_ascii_lowercase();
                let inner = low.strip_prefix("bad-data(").and_then(|x| x.strip_suffix(')'));
                match inner.and_then(channel_index) {
                    Some(ch) => FaultType::BadData(ch),
                    None => return Err(Error::Parameter(format!("unknown fault type '{s}'"))),
                }
            }
        })
    }

    /// Faulted phases (0 = A, 1 = B, 2 = C) for line faults.
    pub fn phases(&self) -> &'static [usize] {
        match self {
            FaultType::AG => &[0],
            FaultType::BG => &[1],
            FaultType::CG => &[2],
            FaultType::AB => &[0, 1],
            FaultType::BC => &[1, 2],
            FaultType::CA => &[0, 2],
            FaultType::ABC => &[0, 1, 2],
            FaultType::BadData(_) => &[],
        }
    }

    pub fn is_ground(&self) -> bool {
        matches!(self, FaultType::AG | FaultType::BG | FaultType::CG)
    }

    pub fn single_phase_to_ground(phase: usize) -> Self {
        [FaultType::AG, FaultType::BG, FaultType::CG][phase]
    }

    pub fn phase_phase(p: usize, q: usize) -> Self {
        match (p.min(q), p.max(q)) {
            (0, 1) => FaultType::AB,
            (1, 2) => FaultType::BC,
            _ => FaultType::CA,
        }
    }
}

impl From<FaultType> for String {
    fn from(f: FaultType) -> String {
        f.label()
    }
}

impl TryFrom<String> for FaultType {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        FaultType::parse(&s)
    }
}

pub fn channel_index(name: &str) -> Option<usize> {
    CURRENT_CHANNELS.iter().position(|c| *c == name.trim())
}

/// Fault conductance matrix G for the faulted DAE, G·vf = fault current leaving each conductor.
pub fn fault_conductance(fault_type: FaultType, rf: f64) -> Result<Matrix4<f64>> {
    if !(rf > 0.0) {
        return Err(Error::Domain(format!("fault resistance must be > 0 (got {rf})")));
    }
    let g = 1.0 / rf;
    let mut m = Matrix4::zeros();
    match fault_type {
        FaultType::AG | FaultType::BG | FaultType::CG => {
            let p = fault_type.phases()[0];
            m[(p, p)] = g;
        }
        FaultType::AB | FaultType::BC | FaultType::CA => {
            let ph = fault_type.phases();
            let (p, q) = (ph[0], ph[1]);
            m[(p, p)] = g;
            m[(q, q)] = g;
            m[(p, q)] = -g;
            m[(q, p)] = -g;
        }
        FaultType::ABC => {
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = if i == j { 2.0 * g } else { -g };
                }
            }
        }
        FaultType::BadData(_) => {
            return Err(Error::Domain("bad data has no fault conductance".into()));
        }
    }
    Ok(m)
}

/// Signature as coefficients on the event vectors f1..f8.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSignature {
    pub fault_type: FaultType,
    pub terms: Vec<(usize, f64)>,
    pub magnitude: String,
}

impl FaultSignature {
    pub fn coefficients(&self) -> [f64; NF] {
        let mut c = [0.0; NF];
        for &(i, v) in &self.terms {
            c[i] += v;
        }
        c
    }

    pub fn column<T: Real>(&self, f: &DMatrix<T>) -> DVector<T> {
        let c = self.coefficients();
        let mut out = DVector::zeros(f.nrows());
        for (i, ci) in c.iter().enumerate() {
            if *ci != 0.0 {
                out += f.column(i) * T::c(*ci);
            }
        }
        out
    }
}

pub fn fault_signature(fault_type: FaultType, alpha: f64) -> Result<FaultSignature> {
    if let FaultType::BadData(ch) = fault_type {
        if ch >= NF {
            return Err(Error::Domain(format!("bad-data channel {ch} out of range")));
        }
        return Ok(FaultSignature {
            fault_type,
            terms: vec![(ch, 1.0)],
            magnitude: format!("{}(t)", CURRENT_CHANNELS[ch]),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1) (got {alpha})")));
    }
    let (l, r) = (1.0 - alpha, alpha);
    let ph = fault_type.phases();
    let (terms, magnitude) = match fault_type {
        FaultType::AG | FaultType::BG | FaultType::CG => {
            let p = ph[0];
            (vec![(p, l), (p + 4, r)], format!("v{}f(t)/Rf", CONDUCTORS[p].to_lowercase()))
        }
        FaultType::AB | FaultType::BC | FaultType::CA => {
            let (p, q) = (ph[0], ph[1]);
            let (a, b) = (CONDUCTORS[p].to_lowercase(), CONDUCTORS[q].to_lowercase());
            (vec![(p, l), (q, -l), (p + 4, r), (q + 4, -r)], format!("(v{a}f(t) − v{b}f(t))/Rf"))
        }
        _ => (
            vec![(0, l), (1, l), (2, l), (4, r), (5, r), (6, r)],
            "per phase p: (2vpf − vqf − vrf)/Rf".into(),
        ),
    };
    Ok(FaultSignature { fault_type, terms, magnitude })
}

/// Per-phase magnitude weights of the three-phase signature given fault-point voltages.
pub fn three_phase_magnitudes(vf: [f64; 3], rf: f64) -> [f64; 3] {
    [
        (2.0 * vf[0] - vf[1] - vf[2]) / rf,
        (2.0 * vf[1] - vf[2] - vf[0]) / rf,
        (2.0 * vf[2] - vf[0] - vf[1]) / rf,
    ]
}

fn check_continuous<T: Real>(model: &StateSpaceModel<T>, dt: f64) -> Result<()> {
    if model.time != TimeDomain::Continuous {
        return Err(Error::Domain("model is already discrete".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be > 0 (got {dt})")));
    }
    Ok(())
}

/// Exact zero-order-hold discretization.
pub fn discretize<T: Real>(model: &StateSpaceModel<T>, dt: f64) -> Result<StateSpaceModel<T>> {
    check_continuous(model, dt)?;
    let n = model.nx();
    let h = T::c(dt);
    let mut m = DMatrix::<T>::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(&model.a * h));
    m.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    let e = m.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let gamma0 = e.view((0, n), (n, n)) * h;
    Ok(StateSpaceModel {
        a: ad,
        b: gamma0 * &model.b,
        c: model.c.clone(),
        b_slope: None,
        coords: model.coords,
        time: TimeDomain::Discrete { dt },
    })
}

/// Zero-order-hold discretization plus the first-order-hold slope map.
pub fn discretize_foh<T: Real>(model: &StateSpaceModel<T>, dt: f64) -> Result<StateSpaceModel<T>> {
    check_continuous(model, dt)?;
    let n = model.nx();
    let h = T::c(dt);
    let mut m = DMatrix::<T>::zeros(3 * n, 3 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(&model.a * h));
    m.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    m.view_mut((n, 2 * n), (n, n)).copy_from(&DMatrix::identity(n, n));
    let e = m.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let gamma0 = e.view((0, n), (n, n)) * h;
    let gamma1 = e.view((0, 2 * n), (n, n)) * h;
    let half = T::c(0.5);
    let slope = (&gamma1 - &gamma0 * half) * &model.b;
    Ok(StateSpaceModel {
        a: ad,
        b: gamma0 * &model.b,
        c: model.c.clone(),
        b_slope: Some(slope),
        coords: model.coords,
        time: TimeDomain::Discrete { dt },
    })
}

/// Uniform ladder of n π-sections for the oracle simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub n: usize,
    pub r_section: Matrix4<f64>,
    pub l_section: Matrix4<f64>,
    /// Shunt capacitance at each of the n+1 nodes; each section carries Cap/n at both ends.
    pub shunt: Vec<Matrix4<f64>>,
    pub length_km: f64,
}

impl Ladder {
    pub fn node_km(&self, j: usize) -> f64 {
        self.length_km * j as f64 / self.n as f64
    }

    pub fn nearest_node(&self, km: f64) -> usize {
        ((km / self.length_km) * self.n as f64).round().clamp(0.0, self.n as f64) as usize
    }
}

pub fn concatenate_sections(params: &LineParameters, n: usize) -> Result<Ladder> {
    if n == 0 {
        return Err(Error::Domain("n_sections must be >= 1".into()));
    }
    params.validate()?;
    let k = n as f64;
    let end = params.cap.0 / k;
    let shunt = (0..=n).map(|j| if j == 0 || j == n { end } else { end * 2.0 }).collect();
    Ok(Ladder {
        n,
        r_section: params.r.0 / k,
        l_section: params.l.0 / k,
        shunt,
        length_km: params.length_km,
    })
}
