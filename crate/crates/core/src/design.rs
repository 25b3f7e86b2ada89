//! Detection-filter synthesis: detection spaces, generators, feedback and canonical transforms.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{fault_event_basis, StateSpaceModel};
use crate::scalar::Real;

/// Subspace with an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace<T: Real> {
    pub basis: DMatrix<T>,
}

impl<T: Real> Subspace<T> {
    pub fn from_columns(m: &DMatrix<T>) -> Self {
        Subspace { basis: linalg::orth(m) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn contains(&self, m: &DMatrix<T>, tol: f64) -> bool {
        linalg::projection_residual(&self.basis, m).f64() <= tol * m.norm().f64().max(1.0)
    }
}

pub(crate) fn tol<T: Real>(nominal: f64) -> f64 {
    if T::RANK_RTOL > 1e-8 {
        nominal.max(1e-3)
    } else {
        nominal
    }
}

fn solve<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Option<DMatrix<T>> {
    a.clone().lu().solve(b)
}

/// Stacked matrix M_d′ = [C′; C′Ā; …; C′Ā^{n−1}] for event vectors F (observability construction).
pub fn detection_matrix<T: Real>(model: &StateSpaceModel<T>, f: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = model.nx();
    let cf = &model.c * f;
    let rank_cf = linalg::rank(&cf);
    if rank_cf < f.ncols() {
        if f.ncols() == 1 {
            return Err(Error::Unobservable);
        }
        return Err(Error::NotSeparable { rank_f: linalg::rank(f), rank_cf });
    }
    let gram = cf.transpose() * &cf;
    let pinv = solve(&gram, &cf.transpose()).ok_or(Error::Unobservable)?;
    let df = &model.a * f * &pinv;
    let proj = &cf * &pinv;
    let c_prime = (DMatrix::identity(model.ny(), model.ny()) - proj) * &model.c;
    let a_bar = &model.a - df * &model.c;
    let mut blocks = Vec::with_capacity(n);
    let mut cur = c_prime;
    for _ in 0..n {
        let next = &cur * &a_bar;
        blocks.push(cur);
        cur = next;
    }
    let refs: Vec<&DMatrix<T>> = blocks.iter().collect();
    Ok(linalg::vstack(&refs))
}

/// Reference magnitude for rank decisions on M_d′, so that a roundoff-only matrix has rank 0.
pub fn detection_scale<T: Real>(model: &StateSpaceModel<T>) -> T {
    linalg::spectral_norm(&model.c)
}

/// Numerical rank of M_d′, d(M_d′).
pub fn detection_rank<T: Real>(model: &StateSpaceModel<T>, md: &DMatrix<T>) -> usize {
    linalg::rank_scaled(md, detection_scale(model))
}

/// Detection space of a single event vector: null(M_d′).
pub fn detection_space<T: Real>(model: &StateSpaceModel<T>, f: &DVector<T>) -> Result<Subspace<T>> {
    let fm = DMatrix::from_column_slice(f.len(), 1, f.as_slice());
    multiple_detection_space(model, &fm)
}

/// Detection space for a set of event vectors.
pub fn multiple_detection_space<T: Real>(model: &StateSpaceModel<T>, f: &DMatrix<T>) -> Result<Subspace<T>> {
    let md = detection_matrix(model, f)?;
    Ok(Subspace { basis: linalg::null_space_scaled(&md, detection_scale(model)) })
}

/// Generator g with C·A^k·g = 0 for k < v−1 and C·A^{v−1}·g = C·f inside the detection space.
pub fn detection_generator<T: Real>(
    model: &StateSpaceModel<T>,
    f: &DVector<T>,
    space: &Subspace<T>,
) -> Result<DVector<T>> {
    let v = space.dim();
    if v == 0 {
        return Err(Error::Degenerate(f64::INFINITY));
    }
    let fm = DMatrix::from_column_slice(f.len(), 1, f.as_slice());
    if v == 1 && space.contains(&fm, tol::<T>(1e-9)) {
        return Ok(f.clone());
    }
    let ny = model.ny();
    let mut lhs = DMatrix::<T>::zeros(ny * v, v);
    let mut rhs = DVector::<T>::zeros(ny * v);
    let mut ak = DMatrix::<T>::identity(model.nx(), model.nx());
    for k in 0..v {
        let blk = &model.c * &ak * &space.basis;
        lhs.view_mut((k * ny, 0), (ny, v)).copy_from(&blk);
        if k == v - 1 {
            rhs.rows_mut(k * ny, ny).copy_from(&(&model.c * f));
        }
        ak = &model.a * ak;
    }
    let svd = lhs.clone().svd(true, true);
    let coef = svd
        .solve(&rhs, T::c(1e-14))
        .map_err(|_| Error::Degenerate(f64::INFINITY))?;
    let resid = (&lhs * &coef - &rhs).norm().f64();
    if resid > tol::<T>(1e-8) * rhs.norm().f64().max(1.0) {
        return Err(Error::Degenerate(resid));
    }
    Ok(&space.basis * coef)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub separable: bool,
    pub rank_f: usize,
    pub rank_cf: usize,
}

pub fn check_output_separable<T: Real>(model: &StateSpaceModel<T>, f: &DMatrix<T>) -> SeparabilityReport {
    let rank_f = linalg::rank(f);
    let rank_cf = linalg::rank(&(&model.c * f));
    SeparabilityReport { separable: rank_f == rank_cf && rank_f == f.ncols(), rank_f, rank_cf }
}

pub fn check_mutually_detectable<T: Real>(spaces: &[Subspace<T>], total: &Subspace<T>) -> bool {
    spaces.iter().map(|s| s.dim()).sum::<usize>() == total.dim()
}

/// Complement of ⊕R̄_i inside R̄_F, required to lie in null(C).
pub fn excess_subspace<T: Real>(
    model: &StateSpaceModel<T>,
    total: &Subspace<T>,
    spaces: &[Subspace<T>],
) -> Result<Subspace<T>> {
    let parts: Vec<&DMatrix<T>> = spaces.iter().map(|s| &s.basis).collect();
    let joined = if parts.is_empty() {
        DMatrix::zeros(total.ambient(), 0)
    } else {
        linalg::hstack(&parts)
    };
    let sum_dim = linalg::rank(&joined);
    let want = total.dim().checked_sub(sum_dim).ok_or_else(|| {
        Error::Infeasible(format!("detection spaces ({sum_dim}) exceed the joint space ({})", total.dim()))
    })?;
    if want == 0 {
        return Ok(Subspace { basis: DMatrix::zeros(total.ambient(), 0) });
    }
    let null_c = linalg::null_space(&model.c);
    let cand = linalg::intersect(&total.basis, &null_c);
    if cand.ncols() != want || linalg::rank(&linalg::hstack(&[&joined, &cand])) != total.dim() {
        return Err(Error::Infeasible(format!(
            "complement of dimension {want} not found inside null(C) (candidate dimension {})",
            cand.ncols()
        )));
    }
    Ok(Subspace { basis: cand })
}

/// D with D·C·g_i = A·g_i − λ_i·g_i; returns D and cond([Cg]).
pub fn compute_feedback<T: Real>(
    model: &StateSpaceModel<T>,
    generators: &DMatrix<T>,
    eigenvalues: &[T],
) -> Result<(DMatrix<T>, f64)> {
    let k = generators.ncols();
    if eigenvalues.len() != k {
        return Err(Error::Parameter(format!("{} eigenvalues for {k} generators", eigenvalues.len())));
    }
    let cg = &model.c * generators;
    let mut psi = &model.a * generators;
    for (i, lam) in eigenvalues.iter().enumerate() {
        let col = generators.column(i) * *lam;
        let mut c = psi.column_mut(i);
        c -= col;
    }
    let singular = || {
        let mut dep = Vec::new();
        for i in 0..k {
            let mut cols: Vec<DVector<T>> = Vec::new();
            for j in 0..k {
                if j != i {
                    cols.push(cg.column(j).into_owned());
                }
            }
            if linalg::rank(&DMatrix::from_columns(&cols)) == linalg::rank(&cg) {
                dep.push(i + 1);
            }
        }
        Error::SingularGenerators(dep)
    };
    if cg.nrows() != k || linalg::rank(&cg) < k {
        return Err(singular());
    }
    let dt = solve(&cg.transpose(), &psi.transpose()).ok_or_else(singular)?;
    Ok((dt.transpose(), linalg::cond(&cg)))
}

/// T = [g_1 … g_k, excess], Tm = [C g_1 … C g_k].
pub fn canonical_transform<T: Real>(
    model: &StateSpaceModel<T>,
    generators: &DMatrix<T>,
    excess: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let t = linalg::hstack(&[generators, excess]);
    let mut unit = t.clone();
    for mut c in unit.column_iter_mut() {
        let n = c.norm();
        if n > T::zero() {
            c /= n;
        }
    }
    if t.nrows() != t.ncols() || linalg::rank(&unit) < t.ncols() {
        return Err(Error::Infeasible("generators and excess basis are not independent".into()));
    }
    let tm = &model.c * generators;
    if linalg::rank(&tm) < tm.ncols() {
        return Err(Error::Infeasible("output transform Tm is singular".into()));
    }
    Ok((t, tm))
}

/// Which vectors the synthesis treats as event directions on the discrete model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventMapping {
    /// The columns of F as given.
    Continuous,
    /// Their one-step input images Bd·F.
    Discrete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDesign<T: Real> {
    pub d: DMatrix<T>,
    pub t: DMatrix<T>,
    pub tm: DMatrix<T>,
    pub generators: DMatrix<T>,
    pub event_vectors: DMatrix<T>,
    pub excess_basis: DMatrix<T>,
    pub assigned_eigenvalues: Vec<T>,
    pub unassignable_eigenvalues: Vec<Complex<f64>>,
    pub mapping: EventMapping,
    pub cond_cg: f64,
    pub model: StateSpaceModel<T>,
}

impl<T: Real> FilterDesign<T> {
    pub fn closed_loop(&self) -> DMatrix<T> {
        &self.model.a - &self.d * &self.model.c
    }

    pub fn canonical(&self) -> Result<(DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
        let a_hat = solve(&self.t, &(&self.model.a * &self.t)).ok_or(Error::Infeasible("T singular".into()))?;
        let c_hat = solve(&self.tm, &(&self.model.c * &self.t)).ok_or(Error::Infeasible("Tm singular".into()))?;
        let d_hat = solve(&self.t, &(&self.d * &self.tm)).ok_or(Error::Infeasible("T singular".into()))?;
        Ok((a_hat, c_hat, d_hat))
    }

    pub fn detection_spaces(&self) -> Vec<Subspace<T>> {
        (0..self.generators.ncols())
            .map(|i| Subspace::from_columns(&self.generators.columns(i, 1).into_owned()))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> FilterDesign<U> {
        let cv = |m: &DMatrix<T>| linalg::from_f64::<U>(&linalg::to_f64(m));
        FilterDesign {
            d: cv(&self.d),
            t: cv(&self.t),
            tm: cv(&self.tm),
            generators: cv(&self.generators),
            event_vectors: cv(&self.event_vectors),
            excess_basis: cv(&self.excess_basis),
            assigned_eigenvalues: self.assigned_eigenvalues.iter().map(|x| U::c(x.f64())).collect(),
            unassignable_eigenvalues: self.unassignable_eigenvalues.clone(),
            mapping: self.mapping,
            cond_cg: self.cond_cg,
            model: self.model.cast(),
        }
    }
}

/// Full synthesis on a discrete model with the standard event basis.
pub fn design_filter<T: Real>(
    model: &StateSpaceModel<T>,
    mapping: EventMapping,
    eigenvalues: &[T],
) -> Result<FilterDesign<T>> {
    design_with_events(model, &fault_event_basis::<T>().f, mapping, eigenvalues)
}

pub fn design_with_events<T: Real>(
    model: &StateSpaceModel<T>,
    f: &DMatrix<T>,
    mapping: EventMapping,
    eigenvalues: &[T],
) -> Result<FilterDesign<T>> {
    if model.dt().is_none() {
        return Err(Error::Domain("eigenvalues are assigned on a discrete model".into()));
    }
    let k = f.ncols();
    let lams: Vec<T> = match eigenvalues.len() {
        1 => vec![eigenvalues[0]; k],
        n if n == k => eigenvalues.to_vec(),
        n => return Err(Error::Parameter(format!("expected 1 or {k} eigenvalues, got {n}"))),
    };
    for l in &lams {
        if !(l.f64().abs() < 1.0) {
            return Err(Error::Parameter(format!("assigned eigenvalue {l} is not inside the unit circle")));
        }
    }
    let events = match mapping {
        EventMapping::Continuous => f.clone(),
        EventMapping::Discrete => &model.b * f,
    };
    let sep = check_output_separable(model, &events);
    if !sep.separable {
        return Err(Error::NotSeparable { rank_f: sep.rank_f, rank_cf: sep.rank_cf });
    }
    let mut spaces = Vec::with_capacity(k);
    let mut gens = Vec::with_capacity(k);
    for i in 0..k {
        let fi = events.column(i).into_owned();
        let sp = detection_space(model, &fi)?;
        if sp.dim() != 1 {
            return Err(Error::Infeasible(format!(
                "detection space {} has dimension {}; only v = 1 spaces are supported",
                i + 1,
                sp.dim()
            )));
        }
        gens.push(detection_generator(model, &fi, &sp)?);
        spaces.push(sp);
    }
    let generators = DMatrix::from_columns(&gens);
    let total = multiple_detection_space(model, &events)?;
    let excess = excess_subspace(model, &total, &spaces)?;
    let (d, cond_cg) = compute_feedback(model, &generators, &lams)?;
    let (t, tm) = canonical_transform(model, &generators, &excess.basis)?;
    let mut design = FilterDesign {
        d,
        t,
        tm,
        generators,
        event_vectors: events,
        excess_basis: excess.basis,
        assigned_eigenvalues: lams,
        unassignable_eigenvalues: Vec::new(),
        mapping,
        cond_cg,
        model: model.clone(),
    };
    design.unassignable_eigenvalues = unassignable_eigenvalues(&design)?;
    if let Some(bad) = design.unassignable_eigenvalues.iter().find(|z| z.norm() >= 1.0) {
        return Err(Error::Infeasible(format!(
            "unassignable eigenvalue {bad} is not stable; only the accept-fixed-eigenvalues option is implemented"
        )));
    }
    Ok(design)
}

/// Spectrum of A − DC restricted to the excess coordinates.
pub fn unassignable_eigenvalues<T: Real>(design: &FilterDesign<T>) -> Result<Vec<Complex<f64>>> {
    let k = design.generators.ncols();
    let n = design.t.nrows();
    let cl = solve(&design.t, &(design.closed_loop() * &design.t)).ok_or(Error::Infeasible("T singular".into()))?;
    let block = cl.view((k, k), (n - k, n - k)).into_owned();
    let mut ev = linalg::eigenvalues(&block);
    ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub checks: Vec<Check>,
    pub unassignable: Vec<(f64, f64)>,
    pub reference_unassignable: Vec<f64>,
    pub separable: bool,
    pub mutually_detectable: bool,
    pub cond_cg: f64,
}

impl DesignReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl std::fmt::Display for DesignReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {:<34} {:>12.3e}  (limit {:.1e})",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            )?;
        }
        writeln!(f, "output separable: {}", self.separable)?;
        writeln!(f, "mutually detectable: {}", self.mutually_detectable)?;
        writeln!(f, "cond([Cg]): {:.3e}", self.cond_cg)?;
        let u: Vec<String> = self
            .unassignable
            .iter()
            .map(|(re, im)| if im.abs() > 1e-12 { format!("{re:.4}{im:+.4}i") } else { format!("{re:.4}") })
            .collect();
        writeln!(f, "unassignable eigenvalues: {}", u.join(", "))?;
        let r: Vec<String> = self.reference_unassignable.iter().map(|x| format!("{x:.4}")).collect();
        write!(f, "reference values for comparison: {}", r.join(", "))
    }
}

pub const REFERENCE_UNASSIGNABLE: [f64; 4] = [0.8118, 0.9940, 0.9957, 0.9949];

/// Self-consistency checks of a design.
pub fn verify_design<T: Real>(design: &FilterDesign<T>) -> DesignReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, limit: f64| {
        checks.push(Check { name: name.into(), value, limit, pass: value.is_finite() && value <= limit });
    };
    let n = design.t.nrows();
    let k = design.generators.ncols();
    let cl = design.closed_loop();

    let spectrum = linalg::eigenvalues(&cl);
    let mut expected: Vec<Complex<f64>> =
        design.assigned_eigenvalues.iter().map(|l| Complex::new(l.f64(), 0.0)).collect();
    expected.extend(design.unassignable_eigenvalues.iter().cloned());
    push("eigenvalue placement", linalg::multiset_distance(&spectrum, &expected), tol::<T>(1e-6));

    let mut inv = 0.0f64;
    for sp in design.detection_spaces() {
        let b = &sp.basis;
        let r = &cl * b - b * (b.transpose() * &cl * b);
        inv = inv.max(r.norm().f64());
    }
    push("detection-space invariance", inv, tol::<T>(1e-8));

    let eye_n = DMatrix::<T>::identity(n, n);
    let t_inv = design.t.clone().try_inverse();
    let tm_inv = design.tm.clone().try_inverse();
    let t_err = t_inv.as_ref().map_or(f64::INFINITY, |ti| (&design.t * ti - &eye_n).norm().f64());
    push("T·T⁻¹ = I", t_err, tol::<T>(1e-9));
    let eye_k = DMatrix::<T>::identity(k, k);
    let tm_err = tm_inv.as_ref().map_or(f64::INFINITY, |ti| (&design.tm * ti - &eye_k).norm().f64());
    push("Tm·Tm⁻¹ = I", tm_err, tol::<T>(1e-9));

    let c_scale = design.model.c.norm().f64().max(1.0);
    push("excess basis in null(C)", (&design.model.c * &design.excess_basis).norm().f64() / c_scale, tol::<T>(1e-10));

    let (canon_err, diag_err) = match design.canonical() {
        Ok((a_hat, c_hat, d_hat)) => {
            let ti = t_inv.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
            let img = &c_hat * &ti * &design.event_vectors;
            let ce = (img - DMatrix::<T>::identity(k, k)).norm().f64();
            let cl_hat = a_hat - d_hat * c_hat;
            let mut de = 0.0f64;
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { design.assigned_eigenvalues[i].f64() } else { 0.0 };
                    de = de.max((cl_hat[(i, j)].f64() - want).abs());
                }
                for r in k..n {
                    de = de.max(cl_hat[(r, i)].f64().abs());
                }
            }
            (ce, de)
        }
        Err(_) => (f64::INFINITY, f64::INFINITY),
    };
    push("canonical event images Ĉ·T⁻¹·f_i = e_i", canon_err, tol::<T>(1e-9));
    push("canonical closed loop diagonal", diag_err, tol::<T>(1e-8));

    let rho = design.unassignable_eigenvalues.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    push("unassignable spectral radius < 1", rho, 1.0 - 1e-12);

    let sep = check_output_separable(&design.model, &design.event_vectors);
    let total = multiple_detection_space(&design.model, &design.event_vectors).ok();
    let md = total
        .as_ref()
        .map(|t| check_mutually_detectable(&design.detection_spaces(), t))
        .unwrap_or(false);
    DesignReport {
        checks,
        unassignable: design.unassignable_eigenvalues.iter().map(|z| (z.re, z.im)).collect(),
        reference_unassignable: REFERENCE_UNASSIGNABLE.to_vec(),
        separable: sep.separable,
        mutually_detectable: md,
        cond_cg: design.cond_cg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_single_section, discretize_foh, Coordinates, LineParameters, TimeDomain};

    fn table1_discrete() -> StateSpaceModel<f64> {
        let m = build_single_section::<f64>(&LineParameters::table1()).unwrap();
        discretize_foh(&m, 1e-4).unwrap()
    }

    fn toy(a: &[f64], c: &[f64], n: usize, p: usize) -> StateSpaceModel<f64> {
        StateSpaceModel {
            a: DMatrix::from_row_slice(n, n, a),
            b: DMatrix::identity(n, n),
            c: DMatrix::from_row_slice(p, n, c),
            b_slope: None,
            coords: Coordinates::ScaledZ,
            time: TimeDomain::Discrete { dt: 1.0 },
        }
    }

    #[test]
    fn single_event_spaces_are_the_vectors_themselves() {
        let m = table1_discrete();
        for mapping in [EventMapping::Continuous, EventMapping::Discrete] {
            let f = match mapping {
                EventMapping::Continuous => fault_event_basis::<f64>().f,
                EventMapping::Discrete => &m.b * fault_event_basis::<f64>().f,
            };
            for i in 0..8 {
                let fi = f.column(i).into_owned();
                let md = detection_matrix(&m, &DMatrix::from_column_slice(12, 1, fi.as_slice())).unwrap();
                assert_eq!(detection_rank(&m, &md), 11);
                let sp = detection_space(&m, &fi).unwrap();
                assert_eq!(sp.dim(), 1);
                assert!(sp.contains(&DMatrix::from_column_slice(12, 1, fi.as_slice()), 1e-9));
                let g = detection_generator(&m, &fi, &sp).unwrap();
                assert_eq!(g, fi);
            }
        }
    }

    #[test]
    fn generator_is_homogeneous() {
        let m = table1_discrete();
        let f = fault_event_basis::<f64>().f.column(0).into_owned() * 2.0;
        let sp = detection_space(&m, &f).unwrap();
        assert_eq!(detection_generator(&m, &f, &sp).unwrap(), f);
    }

    #[test]
    fn unobservable_event_is_rejected() {
        let m = table1_discrete();
        let mut f = DVector::zeros(12);
        f[9] = 1.0;
        assert!(matches!(detection_space(&m, &f), Err(Error::Unobservable)));
    }

    #[test]
    fn joint_space_is_full() {
        let m = table1_discrete();
        let total = multiple_detection_space(&m, &fault_event_basis::<f64>().f).unwrap();
        assert_eq!(total.dim(), 12);
        let single = multiple_detection_space(&m, &fault_event_basis::<f64>().f.columns(0, 1).into_owned()).unwrap();
        let direct = detection_space(&m, &fault_event_basis::<f64>().f.column(0).into_owned()).unwrap();
        assert_eq!(single.dim(), direct.dim());
        assert!(single.contains(&direct.basis, 1e-9));
    }

    #[test]
    fn separability_checks() {
        let m = table1_discrete();
        let f = fault_event_basis::<f64>().f;
        let r = check_output_separable(&m, &f);
        assert!(r.separable && r.rank_f == 8 && r.rank_cf == 8);
        let dup = linalg::hstack(&[&f.columns(0, 2).into_owned(), &f.columns(0, 1).into_owned()]);
        assert!(!check_output_separable(&m, &dup).separable);
        let mut nc = f.columns(0, 2).into_owned();
        nc.set_column(1, &crate::model::null_c_basis::<f64>().column(0));
        assert!(!check_output_separable(&m, &nc).separable);
    }

    #[test]
    fn mutual_detectability_counts() {
        let e = |i: usize, n: usize| {
            let mut v = DMatrix::zeros(n, 1);
            v[(i, 0)] = 1.0;
            Subspace::<f64>::from_columns(&v)
        };
        let total2 = Subspace::from_columns(&DMatrix::<f64>::identity(2, 2));
        assert!(check_mutually_detectable(&[e(0, 2), e(1, 2)], &total2));
        assert!(check_mutually_detectable(&[e(0, 2)], &e(0, 2)));
        let total12 = Subspace::from_columns(&DMatrix::<f64>::identity(12, 12));
        let eight: Vec<_> = (0..8).map(|i| e(i, 12)).collect();
        assert!(!check_mutually_detectable(&eight, &total12));
    }

    #[test]
    fn excess_equals_null_c() {
        let m = table1_discrete();
        let d = design_filter(&m, EventMapping::Discrete, &[0.1]).unwrap();
        assert_eq!(d.excess_basis.ncols(), 4);
        assert!((&m.c * &d.excess_basis).norm() < 1e-10);
        let nc = Subspace::from_columns(&crate::model::null_c_basis::<f64>());
        assert!(nc.contains(&d.excess_basis, 1e-10));
    }

    #[test]
    fn excess_is_empty_when_mutually_detectable() {
        let m = toy(&[0.5, 0.1, 0.0, 0.3], &[1.0, 0.0, 0.0, 1.0], 2, 2);
        let f = DMatrix::<f64>::identity(2, 2);
        let total = multiple_detection_space(&m, &f).unwrap();
        let spaces: Vec<_> = (0..2).map(|i| detection_space(&m, &f.column(i).into_owned()).unwrap()).collect();
        assert_eq!(excess_subspace(&m, &total, &spaces).unwrap().dim(), 0);
    }

    #[test]
    fn feedback_places_eight_eigenvalues() {
        let m = table1_discrete();
        let d = design_filter(&m, EventMapping::Discrete, &[0.1]).unwrap();
        let ev = linalg::eigenvalues(&d.closed_loop());
        let near = ev.iter().filter(|z| (z.re - 0.1).abs() < 1e-6 && z.im.abs() < 1e-6).count();
        assert_eq!(near, 8);
        let d2 = design_filter(&m, EventMapping::Discrete, &[0.2]).unwrap();
        assert!(linalg::multiset_distance(&d.unassignable_eigenvalues, &d2.unassignable_eigenvalues) < 1e-8);
    }

    #[test]
    fn toy_feedback_matches_characteristic_polynomial() {
        let m = toy(&[0.9, 0.2, -0.1, 0.7], &[1.0, 0.5], 2, 1);
        let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let (d, _) = compute_feedback(&m, &g, &[0.3]).unwrap();
        let cl = &m.a - &d * &m.c;
        let tr = cl.trace();
        let det = cl.determinant();
        // 0.3 is a root of λ² − tr·λ + det
        assert!((0.09 - tr * 0.3 + det).abs() < 1e-12);
        assert!((&cl * &g - &g * 0.3).norm() < 1e-12);
    }

    #[test]
    fn canonical_identity_case() {
        let m = toy(&[0.5, 0.1, 0.2, 0.3], &[1.0, 0.0], 2, 1);
        let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (t, tm) = canonical_transform(&m, &g, &z).unwrap();
        assert_eq!(t, DMatrix::identity(2, 2));
        assert_eq!(tm, DMatrix::identity(1, 1));
    }

    #[test]
    fn synthetic_two_dimensional_detection_space() {
        // chain e1 -> e2 under A, only e2 measured through y1: v_f = 2 for f = e2... via A·g = f direction
        let a = [0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.2];
        let c = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let m = toy(&a, &c, 4, 3);
        let f = DVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0]);
        let sp = Subspace::from_columns(&DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let g = detection_generator(&m, &f, &sp).unwrap();
        assert!((&m.c * &g).norm() < 1e-10);
        assert!((&m.c * &m.a * &g - &m.c * &f).norm() < 1e-10);
    }

    #[test]
    fn verify_passes_and_flags_perturbation() {
        let m = table1_discrete();
        let mut d = design_filter(&m, EventMapping::Discrete, &[0.1]).unwrap();
        let rep = verify_design(&d);
        assert!(rep.passed(), "{rep}");
        assert!(!rep.mutually_detectable && rep.separable);
        let mut s = 12345u64;
        d.d = d.d.map(|x| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            x + 1e-3 * (((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5)
        });
        let rep = verify_design(&d);
        assert!(!rep.checks[0].pass);
    }

    #[test]
    fn continuous_model_is_rejected() {
        let m = build_single_section::<f64>(&LineParameters::table1()).unwrap();
        assert!(design_filter(&m, EventMapping::Continuous, &[0.1]).is_err());
    }
}
