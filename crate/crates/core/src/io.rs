//! Config files, waveform CSV, design JSON, diagnosis records and residual CSV.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::{EventMapping, FilterDesign};
use crate::engine::{Diagnosis, InputHold, ResidualFrame, StreamConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Coordinates, FaultType, LineParameters, PhaseMatrix, PuBases, StateSpaceModel, TimeDomain};
use crate::scalar::Real;
use crate::sim::{self, FaultScenario, SimOptions, SourceModel, Sources, Waveforms, CHANNELS};

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub length_km: Option<f64>,
    /// Line-to-line RMS (V).
    pub v_rated: Option<f64>,
    /// Rated current (A RMS).
    pub i_rated: Option<f64>,
    pub s_base_mva: Option<f64>,
    pub r_ohm: Option<[[f64; 4]; 4]>,
    pub l_h: Option<[[f64; 4]; 4]>,
    pub cap_uf: Option<[[f64; 4]; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub v_ll: Option<f64>,
    pub angle_left_deg: Option<f64>,
    pub angle_right_deg: Option<f64>,
    pub r_ohm: Option<f64>,
    pub l_h: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub n_sections: Option<usize>,
    pub t_end: Option<f64>,
    pub stub_km: Option<f64>,
    pub noise_pu: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub eigenvalues: Option<Vec<f64>>,
    /// "discrete" or "continuous"
    pub event_mapping: Option<String>,
    /// "first" or "zero"
    pub input_hold: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub threshold_pu: Option<f64>,
    pub startup_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub id: u32,
    /// "A-G", "B-C", "A-B-C", … or "loss" for a lost current measurement.
    #[serde(rename = "type")]
    pub kind: String,
    pub rf_ohm: Option<f64>,
    pub location_km: Option<f64>,
    pub channel: Option<String>,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Raw file layout; every field optional so that missing ones can be listed together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub line: Option<LineSection>,
    pub source: Option<SourceSection>,
    pub sim: Option<SimSection>,
    pub design: Option<DesignSection>,
    pub engine: Option<EngineSection>,
    pub events: Option<Vec<EventEntry>>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub line: LineParameters,
    pub sources: Sources,
    pub sim: SimOptions,
    pub noise_pu: f64,
    pub seed: u64,
    pub eigenvalues: Vec<f64>,
    pub mapping: EventMapping,
    pub stream: StreamConfig,
    pub events: Vec<FaultScenario>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let line = LineParameters::table1();
        RunConfig {
            stream: StreamConfig { length_km: line.length_km, ..StreamConfig::default() },
            line,
            sources: Sources::default(),
            sim: SimOptions::default(),
            noise_pu: 0.02,
            seed: 7,
            eigenvalues: vec![0.1],
            mapping: EventMapping::Discrete,
            events: sim::table2(),
            output_dir: PathBuf::from("out"),
        }
    }
}

const REQUIRED_LINE: [&str; 6] =
    ["line.length_km", "line.v_rated", "line.i_rated", "line.r_ohm", "line.l_h", "line.cap_uf"];

fn event_from_entry(e: &EventEntry, length_km: f64) -> Result<FaultScenario> {
    let bad = |what: &str| Error::Config(format!("events[id={}]: {what}", e.id));
    let sc = if e.kind.trim().eq_ignore_ascii_case("loss") {
        let ch = e.channel.as_deref().ok_or_else(|| bad("loss events need 'channel'"))?;
        let idx = crate::model::channel_index(ch).ok_or_else(|| bad(&format!("'{ch}' is not a current channel")))?;
        FaultScenario {
            event_id: e.id,
            fault_type: FaultType::BadData(idx),
            rf: 0.0,
            location_km: 0.0,
            t_start: e.t_start,
            t_end: e.t_end,
            internal: false,
        }
    } else {
        let ft = FaultType::parse(&e.kind).map_err(|_| bad(&format!("unknown type '{}'", e.kind)))?;
        let rf = e.rf_ohm.ok_or_else(|| bad("missing rf_ohm"))?;
        let km = e.location_km.ok_or_else(|| bad("missing location_km"))?;
        FaultScenario {
            event_id: e.id,
            fault_type: ft,
            rf,
            location_km: km,
            t_start: e.t_start,
            t_end: e.t_end,
            internal: km < length_km,
        }
    };
    sc.validate(length_km).map_err(|err| Error::Config(err.to_string()))?;
    Ok(sc)
}

fn entry_from_event(s: &FaultScenario) -> EventEntry {
    match s.fault_type {
        FaultType::BadData(ch) => EventEntry {
            id: s.event_id,
            kind: "loss".into(),
            rf_ohm: None,
            location_km: None,
            channel: Some(crate::model::CURRENT_CHANNELS[ch].into()),
            t_start: s.t_start,
            t_end: s.t_end,
        },
        ft => EventEntry {
            id: s.event_id,
            kind: ft.label(),
            rf_ohm: Some(s.rf),
            location_km: Some(s.location_km),
            channel: None,
            t_start: s.t_start,
            t_end: s.t_end,
        },
    }
}

fn parse_mapping(s: &str) -> Result<EventMapping> {
    match s.to_ascii_lowercase().as_str() {
        "discrete" => Ok(EventMapping::Discrete),
        "continuous" => Ok(EventMapping::Continuous),
        _ => Err(Error::Config(format!("design.event_mapping must be 'discrete' or 'continuous' (got '{s}')"))),
    }
}

fn parse_hold(s: &str) -> Result<InputHold> {
    match s.to_ascii_lowercase().as_str() {
        "first" => Ok(InputHold::First),
        "zero" => Ok(InputHold::Zero),
        _ => Err(Error::Config(format!("design.input_hold must be 'first' or 'zero' (got '{s}')"))),
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be > 0 (got {v})")))
    }
}

impl RunConfig {
    pub fn from_file(raw: &ConfigFile) -> Result<Self> {
        let d = RunConfig::default();
        let line = raw.line.clone().unwrap_or_default();
        let present = [
            line.length_km.is_some(),
            line.v_rated.is_some(),
            line.i_rated.is_some(),
            line.r_ohm.is_some(),
            line.l_h.is_some(),
            line.cap_uf.is_some(),
        ];
        let missing: Vec<&str> =
            REQUIRED_LINE.iter().zip(present).filter(|(_, p)| !p).map(|(n, _)| *n).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing required field(s): {}", missing.join(", "))));
        }
        let line = LineParameters {
            r: PhaseMatrix::from_rows(line.r_ohm.unwrap()),
            l: PhaseMatrix::from_rows(line.l_h.unwrap()),
            cap: PhaseMatrix::from_micro(line.cap_uf.unwrap()),
            length_km: line.length_km.unwrap(),
            v_rated: line.v_rated.unwrap(),
            i_rated: line.i_rated.unwrap(),
            s_base_mva: line.s_base_mva.unwrap_or(d.line.s_base_mva),
        };
        line.validate().map_err(|e| Error::Config(format!("line: {e}")))?;

        let src = raw.source.clone().unwrap_or_default();
        let base = SourceModel {
            v_ll: src.v_ll.unwrap_or(d.sources.left.v_ll),
            angle_deg: src.angle_left_deg.unwrap_or(d.sources.left.angle_deg),
            r_ohm: src.r_ohm.unwrap_or(d.sources.left.r_ohm),
            l_h: src.l_h.unwrap_or(d.sources.left.l_h),
        };
        let sources = Sources {
            left: base,
            right: SourceModel { angle_deg: src.angle_right_deg.unwrap_or(d.sources.right.angle_deg), ..base },
        };
        sources.left.validate().map_err(|e| Error::Config(format!("source: {e}")))?;

        let s = raw.sim.clone().unwrap_or_default();
        let sim = SimOptions {
            dt: positive("sim.dt", s.dt.unwrap_or(d.sim.dt))?,
            n_sections: s.n_sections.unwrap_or(d.sim.n_sections),
            t_end: positive("sim.t_end", s.t_end.unwrap_or(d.sim.t_end))?,
            stub_km: positive("sim.stub_km", s.stub_km.unwrap_or(d.sim.stub_km))?,
            record_internal: false,
        };
        if sim.n_sections == 0 {
            return Err(Error::Config("sim.n_sections must be >= 1".into()));
        }
        let noise_pu = s.noise_pu.unwrap_or(d.noise_pu);
        if !(noise_pu >= 0.0 && noise_pu.is_finite()) {
            return Err(Error::Config(format!("sim.noise_pu must be >= 0 (got {noise_pu})")));
        }

        let ds = raw.design.clone().unwrap_or_default();
        let eigenvalues = ds.eigenvalues.unwrap_or(d.eigenvalues.clone());
        if !(eigenvalues.len() == 1 || eigenvalues.len() == crate::model::NF) {
            return Err(Error::Config(format!("design.eigenvalues needs 1 or 8 entries (got {})", eigenvalues.len())));
        }
        if let Some(bad) = eigenvalues.iter().find(|x| !(x.abs() < 1.0)) {
            return Err(Error::Config(format!("design.eigenvalues must lie in (-1, 1) (got {bad})")));
        }
        let mapping = ds.event_mapping.as_deref().map(parse_mapping).transpose()?.unwrap_or(d.mapping);
        let hold = ds.input_hold.as_deref().map(parse_hold).transpose()?.unwrap_or(d.stream.hold);

        let en = raw.engine.clone().unwrap_or_default();
        let stream = StreamConfig {
            threshold_pu: positive("engine.threshold_pu", en.threshold_pu.unwrap_or(d.stream.threshold_pu))?,
            length_km: line.length_km,
            hold,
            startup_s: en.startup_s.unwrap_or(d.stream.startup_s).max(0.0),
        };

        let events = match &raw.events {
            Some(list) => list.iter().map(|e| event_from_entry(e, line.length_km)).collect::<Result<Vec<_>>>()?,
            None => d.events.clone(),
        };
        let output_dir = raw.output.as_ref().and_then(|o| o.dir.clone()).unwrap_or(d.output_dir);
        Ok(RunConfig {
            line,
            sources,
            sim,
            noise_pu,
            seed: s.seed.unwrap_or(d.seed),
            eigenvalues,
            mapping,
            stream,
            events,
            output_dir,
        })
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            line: Some(LineSection {
                length_km: Some(self.line.length_km),
                v_rated: Some(self.line.v_rated),
                i_rated: Some(self.line.i_rated),
                s_base_mva: Some(self.line.s_base_mva),
                r_ohm: Some(self.line.r.rows()),
                l_h: Some(self.line.l.rows()),
                cap_uf: Some(self.line.cap.to_micro()),
            }),
            source: Some(SourceSection {
                v_ll: Some(self.sources.left.v_ll),
                angle_left_deg: Some(self.sources.left.angle_deg),
                angle_right_deg: Some(self.sources.right.angle_deg),
                r_ohm: Some(self.sources.left.r_ohm),
                l_h: Some(self.sources.left.l_h),
            }),
            sim: Some(SimSection {
                dt: Some(self.sim.dt),
                n_sections: Some(self.sim.n_sections),
                t_end: Some(self.sim.t_end),
                stub_km: Some(self.sim.stub_km),
                noise_pu: Some(self.noise_pu),
                seed: Some(self.seed),
            }),
            design: Some(DesignSection {
                eigenvalues: Some(self.eigenvalues.clone()),
                event_mapping: Some(match self.mapping {
                    EventMapping::Discrete => "discrete".into(),
                    EventMapping::Continuous => "continuous".into(),
                }),
                input_hold: Some(match self.stream.hold {
                    InputHold::First => "first".into(),
                    InputHold::Zero => "zero".into(),
                }),
            }),
            engine: Some(EngineSection {
                threshold_pu: Some(self.stream.threshold_pu),
                startup_s: Some(self.stream.startup_s),
            }),
            events: Some(self.events.iter().map(entry_from_event).collect()),
            output: Some(OutputSection { dir: Some(self.output_dir.clone()) }),
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    RunConfig::from_file(&raw)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn config_to_string(cfg: &RunConfig) -> Result<String> {
    toml::to_string(&cfg.to_file()).map_err(|e| Error::Config(e.to_string()))
}

// ---------------------------------------------------------------- waveforms

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMeta {
    pub dt: f64,
    pub samples: usize,
    pub units: String,
    pub channels: Vec<String>,
    pub v_base: f64,
    pub i_base: f64,
    pub voltage_base: String,
    pub current_base: String,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

pub fn write_waveforms(w: &Waveforms, path: &Path, bases: &PuBases) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(CHANNELS.iter().map(|c| c.to_string()));
    wr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(17);
    for k in 0..w.len() {
        row.clear();
        row.push(w.time(k).to_string());
        row.extend(w.currents[k].iter().map(|x| x.to_string()));
        row.extend(w.voltages[k].iter().map(|x| x.to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    let meta = WaveformMeta {
        dt: w.dt,
        samples: w.len(),
        units: "SI (A, V, s)".into(),
        channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
        v_base: bases.v_base,
        i_base: bases.i_base,
        voltage_base: "phase-to-neutral peak".into(),
        current_base: "sqrt(2)*S_base/(sqrt(3)*V_ll) peak".into(),
    };
    fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_waveforms(path: &Path) -> Result<Waveforms> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let t_col = col("t").ok_or_else(|| Error::Ingest("missing time column 't'".into()))?;
    let mut idx = [0usize; 16];
    for (i, name) in CHANNELS.iter().enumerate() {
        idx[i] = col(name).ok_or_else(|| Error::Ingest(format!("missing channel '{name}'")))?;
    }
    let mut times = Vec::new();
    let mut currents = Vec::new();
    let mut voltages = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| Error::Ingest(format!("row {row}: too few fields")))?;
            s.trim().parse::<f64>().map_err(|_| Error::Ingest(format!("row {row}: '{s}' is not a number")))
        };
        let t = num(t_col)?;
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return Err(Error::Ingest(format!("row {row}: time {t} is not increasing")));
            }
        }
        times.push(t);
        let mut c = [0.0; 8];
        let mut v = [0.0; 8];
        for i in 0..8 {
            c[i] = num(idx[i])?;
            v[i] = num(idx[8 + i])?;
        }
        currents.push(c);
        voltages.push(v);
    }
    let dt = match fs::read_to_string(meta_path(path)) {
        Ok(text) => serde_json::from_str::<WaveformMeta>(&text)?.dt,
        Err(_) if times.len() >= 2 => (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64,
        Err(_) => return Err(Error::Ingest("cannot infer dt from fewer than two samples without metadata".into())),
    };
    if !(dt > 0.0) {
        return Err(Error::Ingest(format!("dt must be > 0 (got {dt})")));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-6 * dt.max(1e-12) + 1e-9 * t.abs() {
            return Err(Error::Ingest(format!("row {}: time {t} off the uniform grid k·dt", k + 2)));
        }
    }
    Ok(Waveforms { dt, currents, voltages, internal: None })
}

// ---------------------------------------------------------------- design

/// Row-major matrix for JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix<T: Real>(m: &DMatrix<T>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)].f64());
            }
        }
        MatrixRecord { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Ingest(format!("matrix {}x{} has {} entries", self.rows, self.cols, self.data.len())));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub format: String,
    pub dt: f64,
    pub event_mapping: EventMapping,
    pub ad: MatrixRecord,
    pub bd: MatrixRecord,
    pub b_slope: Option<MatrixRecord>,
    pub c: MatrixRecord,
    pub d: MatrixRecord,
    pub t: MatrixRecord,
    pub tm: MatrixRecord,
    pub generators: MatrixRecord,
    pub event_vectors: MatrixRecord,
    pub excess_basis: MatrixRecord,
    pub assigned_eigenvalues: Vec<f64>,
    /// [re, im] pairs.
    pub unassignable_eigenvalues: Vec<[f64; 2]>,
    pub cond_cg: f64,
}

pub const DESIGN_FORMAT: &str = "fdf-design/1";

impl DesignRecord {
    pub fn from_design<T: Real>(d: &FilterDesign<T>) -> Result<Self> {
        let dt = d.model.dt().ok_or_else(|| Error::Domain("only discrete designs are serialised".into()))?;
        Ok(DesignRecord {
            format: DESIGN_FORMAT.into(),
            dt,
            event_mapping: d.mapping,
            ad: MatrixRecord::from_matrix(&d.model.a),
            bd: MatrixRecord::from_matrix(&d.model.b),
            b_slope: d.model.b_slope.as_ref().map(MatrixRecord::from_matrix),
            c: MatrixRecord::from_matrix(&d.model.c),
            d: MatrixRecord::from_matrix(&d.d),
            t: MatrixRecord::from_matrix(&d.t),
            tm: MatrixRecord::from_matrix(&d.tm),
            generators: MatrixRecord::from_matrix(&d.generators),
            event_vectors: MatrixRecord::from_matrix(&d.event_vectors),
            excess_basis: MatrixRecord::from_matrix(&d.excess_basis),
            assigned_eigenvalues: d.assigned_eigenvalues.iter().map(|x| x.f64()).collect(),
            unassignable_eigenvalues: d.unassignable_eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            cond_cg: d.cond_cg,
        })
    }

    pub fn to_design<T: Real>(&self) -> Result<FilterDesign<T>> {
        if self.format != DESIGN_FORMAT {
            return Err(Error::Ingest(format!("unknown design format '{}'", self.format)));
        }
        let m = |r: &MatrixRecord| r.to_matrix().map(|x| linalg::from_f64::<T>(&x));
        let model = StateSpaceModel {
            a: m(&self.ad)?,
            b: m(&self.bd)?,
            c: m(&self.c)?,
            b_slope: self.b_slope.as_ref().map(m).transpose()?,
            coords: Coordinates::ScaledZ,
            time: TimeDomain::Discrete { dt: self.dt },
        };
        Ok(FilterDesign {
            d: m(&self.d)?,
            t: m(&self.t)?,
            tm: m(&self.tm)?,
            generators: m(&self.generators)?,
            event_vectors: m(&self.event_vectors)?,
            excess_basis: m(&self.excess_basis)?,
            assigned_eigenvalues: self.assigned_eigenvalues.iter().map(|x| T::c(*x)).collect(),
            unassignable_eigenvalues: self.unassignable_eigenvalues.iter().map(|z| Complex::new(z[0], z[1])).collect(),
            mapping: self.event_mapping,
            cond_cg: self.cond_cg,
            model,
        })
    }
}

pub fn write_design<T: Real>(d: &FilterDesign<T>, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&DesignRecord::from_design(d)?)?)?;
    Ok(())
}

pub fn read_design(path: &Path) -> Result<FilterDesign<f64>> {
    let rec: DesignRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
    rec.to_design()
}

// ---------------------------------------------------------------- diagnoses

pub fn diagnosis_line(d: &Diagnosis) -> Result<String> {
    let mut v = serde_json::to_value(d)?;
    v["label"] = Value::String(d.verdict.label());
    Ok(serde_json::to_string(&v)?)
}

pub fn write_diagnoses(ds: &[Diagnosis], path: &Path) -> Result<()> {
    let mut out = String::new();
    for d in ds {
        out.push_str(&diagnosis_line(d)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn expect_num(v: &Value, key: &str) -> Result<f64> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| Error::Ingest(format!("'{key}' must be a number")))
}

fn expect_opt_num(v: &Value, key: &str) -> Result<Option<f64>> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(x) => x.as_f64().map(Some).ok_or_else(|| Error::Ingest(format!("'{key}' must be a number or null"))),
    }
}

fn expect_array8(v: &Value, key: &str) -> Result<()> {
    let a = v.get(key).and_then(Value::as_array).ok_or_else(|| Error::Ingest(format!("'{key}' must be an array")))?;
    if a.len() != 8 || !a.iter().all(|x| x.as_f64().is_some_and(|f| f >= 0.0)) {
        return Err(Error::Ingest(format!("'{key}' must hold 8 non-negative numbers")));
    }
    Ok(())
}

/// Structural check of one diagnosis record.
pub fn check_diagnosis_record(v: &Value) -> Result<()> {
    let t0 = expect_num(v, "t0")?;
    let t1 = expect_num(v, "t1")?;
    if t1 < t0 {
        return Err(Error::Ingest("t1 precedes t0".into()));
    }
    let verdict = v.get("verdict").ok_or_else(|| Error::Ingest("missing 'verdict'".into()))?;
    let kind = verdict.get("kind").and_then(Value::as_str).ok_or_else(|| Error::Ingest("verdict.kind missing".into()))?;
    let alpha = expect_opt_num(v, "alpha")?;
    let km = expect_opt_num(v, "location_km")?;
    expect_opt_num(v, "alpha_uncorrected")?;
    match kind {
        "none" | "unclassified" => {}
        "bad_data" => {
            let ch = verdict.get("channel").and_then(Value::as_u64);
            if !ch.is_some_and(|c| c < 8) {
                return Err(Error::Ingest("bad_data verdict needs channel 0..7".into()));
            }
        }
        "fault" => {
            let ft = verdict.get("fault_type").and_then(Value::as_str).ok_or_else(|| Error::Ingest("fault_type missing".into()))?;
            FaultType::parse(ft).map_err(|e| Error::Ingest(e.to_string()))?;
            if let Some(a) = alpha {
                if !(a > 0.0 && a < 1.0) {
                    return Err(Error::Ingest(format!("alpha {a} outside (0, 1)")));
                }
                if km.is_none() {
                    return Err(Error::Ingest("alpha without location_km".into()));
                }
            }
        }
        other => return Err(Error::Ingest(format!("unknown verdict kind '{other}'"))),
    }
    for key in ["magnitudes", "rms", "max"] {
        expect_array8(v, key)?;
    }
    if !v.get("windows").and_then(Value::as_u64).is_some_and(|n| n >= 1) {
        return Err(Error::Ingest("'windows' must be a positive integer".into()));
    }
    if !v.get("notes").is_some_and(Value::is_array) {
        return Err(Error::Ingest("'notes' must be an array".into()));
    }
    Ok(())
}

/// Checks every line of a diagnosis file; returns the record count.
pub fn check_diagnosis_file(text: &str) -> Result<usize> {
    let mut n = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Ingest(format!("line {}: {e}", i + 1)))?;
        check_diagnosis_record(&v).map_err(|e| Error::Ingest(format!("line {}: {e}", i + 1)))?;
        n += 1;
    }
    Ok(n)
}

pub fn read_diagnoses(path: &Path) -> Result<Vec<Diagnosis>> {
    let text = fs::read_to_string(path)?;
    check_diagnosis_file(&text)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

// ---------------------------------------------------------------- residuals

pub const RESIDUAL_COLUMNS: [&str; 17] = [
    "t", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "r8", "raw1", "raw2", "raw3", "raw4", "raw5", "raw6", "raw7", "raw8",
];

pub fn write_residuals<T: Real>(frames: &[ResidualFrame<T>], path: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(RESIDUAL_COLUMNS)?;
    for f in frames {
        let mut row = vec![f.t.to_string()];
        row.extend(f.canonical.iter().map(|x| x.f64().to_string()));
        row.extend(f.raw.iter().map(|x| x.f64().to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Column-major table read back from a residual CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rd = csv::Reader::from_path(path)?;
    let columns: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Ingest(format!("row {}: '{s}' is not a number", r + 2))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Rows with t in [t0, t1], selected columns (time first), every `every`-th row.
pub fn slice_table(table: &Table, t0: f64, t1: f64, columns: &[String], every: usize) -> Result<Table> {
    let tcol = table.columns.iter().position(|c| c == "t").ok_or_else(|| Error::Ingest("no 't' column".into()))?;
    let mut pick = vec![tcol];
    for c in columns {
        let i = table.columns.iter().position(|x| x == c).ok_or_else(|| Error::Ingest(format!("no column '{c}'")))?;
        if i != tcol {
            pick.push(i);
        }
    }
    let rows = table
        .rows
        .iter()
        .filter(|r| r[tcol] >= t0 && r[tcol] <= t1)
        .step_by(every.max(1))
        .map(|r| pick.iter().map(|&i| r[i]).collect())
        .collect();
    Ok(Table { columns: pick.iter().map(|&i| table.columns[i].clone()).collect(), rows })
}

pub fn write_table(table: &Table, path: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(&table.columns)?;
    for r in &table.rows {
        wr.write_record(r.iter().map(|x| x.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
