//! Configuration ingestion, study drivers and result emission.
//!
//! A single JSON configuration file describes a case; defaults reproduce the
//! standard setup (soft isotropic panel, `E = 30 MPa`, `nu = 0.3`,
//! `a = b = 1 m`, `h = a/10`, `R = 10a`, clamped, uniform transverse load).
//! Drivers cover the single case, parameter sweeps, mesh-convergence studies
//! and the curvature/load-direction comparison; results are emitted as CSV
//! tables plus a JSON metadata sidecar per run.

use crate::assembly::{BcKind, BoundarySpec, FracParams, GlobalSystem, LoadDirection, LoadSpec};
use crate::error::{Error, Result};
use crate::mesh::{build_mesh, dof, PanelGeometry, QuadratureRule, StructuredMesh};
use crate::shell::IsotropicMaterial;
use crate::solve::{newton_raphson, solve_linear, EquilibriumPath, SolverConfig, StateVector};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Radius of curvature that serializes as a number or the string
/// `"infinite"` (flat plate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radius(pub f64);

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("infinite")
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Radius(v)),
            Repr::Text(t) if t.eq_ignore_ascii_case("infinite") || t.eq_ignore_ascii_case("inf") => {
                Ok(Radius(f64::INFINITY))
            }
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "radius must be a number or \"infinite\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub r: Radius,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            h: 0.1,
            r: Radius(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    /// Young's modulus (Pa).
    pub e: f64,
    pub nu: f64,
    pub k_s: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            e: 30.0e6,
            nu: 0.3,
            k_s: 5.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FractionalConfig {
    pub alpha: f64,
    pub l_f: f64,
    pub retain_f_r: bool,
}

impl Default for FractionalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            l_f: 0.5,
            retain_f_r: false,
        }
    }
}

/// Mesh selection: explicit even element counts, or a target dynamic rate
/// from which counts are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub dynamic_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadConfig {
    /// Pressure magnitude (Pa); exclusive with `q_bar`.
    pub q0: Option<f64>,
    /// Non-dimensional load target `q0 a^4 / (E h^4)`.
    pub q_bar: Option<f64>,
    pub direction: LoadDirection,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            q0: None,
            q_bar: Some(1.0),
            direction: LoadDirection::PosE3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisKind {
    #[default]
    Linear,
    Nonlinear,
}

/// Full case configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    pub geometry: GeometryConfig,
    pub material: MaterialConfig,
    pub fractional: FractionalConfig,
    pub mesh: MeshConfig,
    pub bc: Option<BcKind>,
    pub load: LoadConfig,
    pub analysis: AnalysisKind,
    pub solver: SolverConfig,
    pub quadrature: QuadratureRule,
}

impl CaseConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Validated, fully resolved case parameters.
#[derive(Debug, Clone)]
pub struct ResolvedCase {
    pub case_id: String,
    pub geometry: PanelGeometry,
    pub material: IsotropicMaterial,
    pub frac: FracParams,
    pub n1: usize,
    pub n2: usize,
    pub bc: BcKind,
    pub load: LoadSpec,
    pub q_bar: f64,
    pub analysis: AnalysisKind,
    pub solver: SolverConfig,
    pub quadrature: QuadratureRule,
    /// Echo of the configuration with every default filled in.
    pub echo: CaseConfig,
}

fn even_count(n: f64) -> usize {
    let mut k = n.round().max(2.0) as usize;
    if k % 2 == 1 {
        k += 1;
    }
    k
}

/// Validates a configuration and resolves mesh counts and the load magnitude.
pub fn resolve(config: &CaseConfig) -> Result<ResolvedCase> {
    let g = config.geometry;
    let geometry = PanelGeometry::new(g.a, g.b, g.h, g.r.0)?;
    let m = config.material;
    let material = IsotropicMaterial::new(m.e, m.nu, m.k_s)?;
    let f = config.fractional;
    if !(f.alpha > 0.0 && f.alpha <= 1.0) {
        return Err(Error::Config(format!(
            "fractional.alpha must lie in (0, 1], got {}",
            f.alpha
        )));
    }
    if !(f.l_f > 0.0) {
        return Err(Error::Config(format!(
            "fractional.l_f must be positive, got {}",
            f.l_f
        )));
    }

    let (n1, n2) = match (config.mesh.n1, config.mesh.n2, config.mesh.dynamic_rate) {
        (Some(n1), Some(n2), _) => {
            if n1 % 2 == 1 || n2 % 2 == 1 {
                return Err(Error::Config(format!(
                    "element counts must be even so a node sits at the panel center, got {n1} x {n2}"
                )));
            }
            (n1, n2)
        }
        (None, None, rate) => {
            let rate = rate.unwrap_or(10.0);
            if !(rate > 0.0) {
                return Err(Error::Config(format!("dynamic_rate must be positive, got {rate}")));
            }
            (
                even_count(rate * geometry.a / f.l_f),
                even_count(rate * geometry.b / f.l_f),
            )
        }
        _ => {
            return Err(Error::Config(
                "specify both mesh.n1 and mesh.n2, or neither (dynamic_rate drives the counts)"
                    .into(),
            ))
        }
    };

    let q0 = match (config.load.q0, config.load.q_bar) {
        (Some(q0), None) => q0,
        (None, Some(qb)) => qb * material.e * geometry.h.powi(4) / geometry.a.powi(4),
        (None, None) => return Err(Error::Config("load needs q0 or q_bar".into())),
        (Some(_), Some(_)) => {
            return Err(Error::Config("load.q0 and load.q_bar are exclusive".into()))
        }
    };
    let q_bar = q0 * geometry.a.powi(4) / (material.e * geometry.h.powi(4));
    let bc = config.bc.unwrap_or(BcKind::Cccc);
    config.solver.validate()?;

    let load = LoadSpec {
        q0,
        direction: config.load.direction,
    };

    let r_tag = if geometry.is_plate() {
        "inf".to_string()
    } else {
        format!("{}", geometry.r)
    };
    let dir_tag = match load.direction {
        LoadDirection::PosE3 => "+e3",
        LoadDirection::NegE3 => "-e3",
    };
    let case_id = format!(
        "a{}_lf{}_{}_{}_R{}_{}_n{}x{}",
        f.alpha,
        f.l_f,
        match bc {
            BcKind::Cccc => "CCCC",
            BcKind::Ssss => "SSSS",
        },
        match config.analysis {
            AnalysisKind::Linear => "lin",
            AnalysisKind::Nonlinear => "nl",
        },
        r_tag,
        dir_tag,
        n1,
        n2
    );

    let mut echo = config.clone();
    echo.mesh = MeshConfig {
        n1: Some(n1),
        n2: Some(n2),
        dynamic_rate: None,
    };
    echo.load = LoadConfig {
        q0: Some(q0),
        q_bar: None,
        direction: load.direction,
    };
    echo.bc = Some(bc);

    Ok(ResolvedCase {
        case_id,
        geometry,
        material,
        frac: FracParams {
            alpha: f.alpha,
            l_f: f.l_f,
            retain_f_r: f.retain_f_r,
        },
        n1,
        n2,
        bc,
        load,
        q_bar,
        analysis: config.analysis,
        solver: config.solver.clone(),
        quadrature: config.quadrature,
        echo,
    })
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// One load step of a case result (linear cases have a single synthetic step).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRow {
    pub step: usize,
    pub load_factor: f64,
    pub q_bar: f64,
    pub w_center: f64,
    pub w_local: Option<f64>,
    pub w_bar: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub notes: Vec<String>,
    pub rotation_warning: Option<String>,
    /// Verified relative residual of the linear solve.
    pub linear_residual: Option<f64>,
    /// Storage used by the direct solver ("banded" or "dense").
    pub storage: String,
    pub total_iterations: usize,
}

/// Full record of one executed case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub case_id: String,
    /// Configuration echo that reproduces this record.
    pub config: CaseConfig,
    pub n1: usize,
    pub n2: usize,
    pub n_dofs: usize,
    pub n_free: usize,
    pub element_size: (f64, f64),
    /// Dynamic rates `l_f / le` per direction.
    pub dynamic_rates: (f64, f64),
    pub q0: f64,
    pub q_bar: f64,
    /// Center deflection at full load.
    pub w_center: f64,
    /// Center deflection of the paired local (`alpha = 1`) run.
    pub w_local: Option<f64>,
    /// `w_center / w_local`; exactly 1 for local runs.
    pub w_bar: Option<f64>,
    pub path: Vec<PathRow>,
    pub elapsed_ms: f64,
    pub diagnostics: Diagnostics,
}

/// Executed case with field data retained for post-processing.
pub struct Executed {
    pub record: ResultRecord,
    pub mesh: StructuredMesh,
    /// Nodal `w0` field at full load.
    pub w_field: Vec<f64>,
    /// Full equilibrium path (nonlinear runs).
    pub path: Option<EquilibriumPath>,
}

/// Center deflections of the paired local run, one per load step (one entry
/// for linear analyses).
#[derive(Debug, Clone)]
pub struct LocalReference {
    pub per_step: Vec<f64>,
}

fn w_field(mesh: &StructuredMesh, state: &StateVector) -> Vec<f64> {
    (0..mesh.n_nodes())
        .map(|n| state.at(n, dof::W0))
        .collect()
}

fn build_system(rc: &ResolvedCase, alpha: f64) -> Result<GlobalSystem> {
    let mesh = build_mesh(rc.geometry, rc.n1, rc.n2)?;
    GlobalSystem::build(
        mesh,
        rc.material,
        BoundarySpec::new(rc.bc),
        rc.load,
        FracParams {
            alpha,
            l_f: rc.frac.l_f,
            retain_f_r: rc.frac.retain_f_r,
        },
        rc.quadrature,
    )
}

/// Runs the paired local case (same mesh, load and schedule, `alpha = 1`).
pub fn compute_local_reference(rc: &ResolvedCase) -> Result<LocalReference> {
    let sys = build_system(rc, 1.0)?;
    match rc.analysis {
        AnalysisKind::Linear => {
            let (u, _) = solve_linear(&sys, &rc.solver)?;
            Ok(LocalReference {
                per_step: vec![sys.center_deflection(u.as_slice())],
            })
        }
        AnalysisKind::Nonlinear => {
            let path = newton_raphson(&sys, &rc.solver).into_result()?;
            Ok(LocalReference {
                per_step: path.records.iter().map(|r| r.w_center).collect(),
            })
        }
    }
}

/// Executes a resolved case. `local` supplies the paired local reference;
/// when absent and the case is nonlocal, the reference is computed here
/// (`with_local` = false skips the pairing entirely).
pub fn execute(rc: &ResolvedCase, local: Option<&LocalReference>, with_local: bool) -> Result<Executed> {
    let start = Instant::now();
    let sys = build_system(rc, rc.frac.alpha)?;
    let mut diagnostics = Diagnostics {
        notes: sys.notes.clone(),
        ..Default::default()
    };

    // alpha = 1 pairs with itself (ratio exactly one), so no reference run.
    let local_ref: Option<LocalReference> = if !with_local || rc.frac.alpha == 1.0 {
        None
    } else if let Some(l) = local {
        Some(l.clone())
    } else {
        Some(compute_local_reference(rc)?)
    };

    let (path_rows, w_center, w_local, w_bar, field, path) = match rc.analysis {
        AnalysisKind::Linear => {
            let (u, diag) = solve_linear(&sys, &rc.solver)?;
            diagnostics.linear_residual = Some(diag.relative_residual);
            let w = sys.center_deflection(u.as_slice());
            let w_local = if rc.frac.alpha == 1.0 {
                Some(w)
            } else {
                local_ref.as_ref().map(|l| l.per_step[0])
            };
            let w_bar = pair_ratio(rc.frac.alpha, w, w_local);
            let rows = vec![PathRow {
                step: 1,
                load_factor: 1.0,
                q_bar: rc.q_bar,
                w_center: w,
                w_local,
                w_bar,
                iterations: 1,
                residual: diag.relative_residual,
            }];
            diagnostics.rotation_warning = sys.rotation_warning(u.as_slice());
            diagnostics.total_iterations = 1;
            let field = w_field(&sys.mesh, &u);
            (rows, w, w_local, w_bar, field, None)
        }
        AnalysisKind::Nonlinear => {
            let path = newton_raphson(&sys, &rc.solver).into_result()?;
            let mut rows = Vec::with_capacity(path.records.len());
            for (k, r) in path.records.iter().enumerate() {
                let w_local = if rc.frac.alpha == 1.0 {
                    Some(r.w_center)
                } else {
                    local_ref.as_ref().and_then(|l| l.per_step.get(k).copied())
                };
                rows.push(PathRow {
                    step: k + 1,
                    load_factor: r.load_factor,
                    q_bar: r.load_factor * rc.q_bar,
                    w_center: r.w_center,
                    w_local,
                    w_bar: pair_ratio(rc.frac.alpha, r.w_center, w_local),
                    iterations: r.iterations,
                    residual: r.residual_norm,
                });
            }
            let last = path
                .records
                .last()
                .ok_or_else(|| Error::Config("empty load schedule".into()))?;
            diagnostics.total_iterations = path.records.iter().map(|r| r.iterations).sum();
            diagnostics.rotation_warning = sys.rotation_warning(last.state.as_slice());
            let w = last.w_center;
            let w_local = rows.last().unwrap().w_local;
            let w_bar = rows.last().unwrap().w_bar;
            let field = w_field(&sys.mesh, &last.state);
            (rows, w, w_local, w_bar, field, Some(path))
        }
    };

    diagnostics.storage = if sys.uses_banded_storage() {
        "banded".into()
    } else {
        "dense".into()
    };

    let (le1, le2) = sys.mesh.element_size();
    let record = ResultRecord {
        case_id: rc.case_id.clone(),
        config: rc.echo.clone(),
        n1: rc.n1,
        n2: rc.n2,
        n_dofs: sys.mesh.n_dofs(),
        n_free: sys.n_free(),
        element_size: (le1, le2),
        dynamic_rates: (rc.frac.l_f / le1, rc.frac.l_f / le2),
        q0: rc.load.q0,
        q_bar: rc.q_bar,
        w_center,
        w_local,
        w_bar,
        path: path_rows,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        diagnostics,
    };

    let mesh = build_mesh(rc.geometry, rc.n1, rc.n2)?;
    Ok(Executed {
        record,
        mesh,
        w_field: field,
        path,
    })
}

fn pair_ratio(alpha: f64, w: f64, w_local: Option<f64>) -> Option<f64> {
    if alpha == 1.0 {
        Some(1.0)
    } else {
        w_local.map(|wl| w / wl)
    }
}

/// Non-dimensional deflection and load of a record:
/// `w_bar = w/w_local` (requires the paired local value) and
/// `q_bar = q0 a^4 / (E h^4)`.
pub fn nondimensionalize(record: &ResultRecord) -> Result<(f64, f64)> {
    let w_local = record.w_local.ok_or_else(|| {
        Error::Config("record has no paired local deflection; w_bar is undefined".into())
    })?;
    if w_local == 0.0 {
        return Err(Error::Config("paired local deflection is zero".into()));
    }
    Ok((record.w_center / w_local, record.q_bar))
}

/// Runs a single case end to end.
pub fn run_case(config: &CaseConfig) -> Result<ResultRecord> {
    let rc = resolve(config)?;
    Ok(execute(&rc, None, true)?.record)
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

/// Outcome of one sweep cell; failures keep the sweep going.
pub struct CaseOutcome {
    pub alpha: f64,
    pub l_f: f64,
    pub result: Result<ResultRecord>,
}

/// Cartesian product of fractional parameters over a base configuration.
/// Local reference runs are shared between cases with the same mesh.
pub fn sweep(base: &CaseConfig, alphas: &[f64], l_fs: &[f64]) -> Result<Vec<CaseOutcome>> {
    if alphas.is_empty() || l_fs.is_empty() {
        return Err(Error::Config("sweep needs nonempty alpha and l_f lists".into()));
    }
    let mut outcomes = Vec::with_capacity(alphas.len() * l_fs.len());
    for &l_f in l_fs {
        let mut local_cache: Option<((usize, usize), LocalReference)> = None;
        for &alpha in alphas {
            let mut config = base.clone();
            config.fractional.alpha = alpha;
            config.fractional.l_f = l_f;
            let result = resolve(&config).and_then(|rc| {
                let local = match &local_cache {
                    Some((dims, l)) if *dims == (rc.n1, rc.n2) => Some(l.clone()),
                    _ => None,
                };
                let need_local = rc.frac.alpha < 1.0 && local.is_none();
                let local = if need_local {
                    let l = compute_local_reference(&rc)?;
                    local_cache = Some(((rc.n1, rc.n2), l.clone()));
                    Some(l)
                } else {
                    local
                };
                execute(&rc, local.as_ref(), true).map(|e| e.record)
            });
            outcomes.push(CaseOutcome {
                alpha,
                l_f,
                result,
            });
        }
    }
    Ok(outcomes)
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub case_id: String,
    pub rate: f64,
    pub n1: usize,
    pub n2: usize,
    pub w_center: f64,
    pub q_bar: f64,
    /// Relative L1 difference of the transverse displacement field against
    /// the previous (coarser) rate, sampled on the coarse nodes.
    pub rel_l1_diff: Option<f64>,
}

/// Runs the same physical case at each dynamic rate and reports the relative
/// L1 transverse-displacement differences between successive refinements.
pub fn convergence_study(base: &CaseConfig, rates: &[f64]) -> Result<Vec<ConvergenceRow>> {
    if rates.is_empty() {
        return Err(Error::Config("convergence study needs at least one rate".into()));
    }
    for pair in rates.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config("rates must be strictly ascending".into()));
        }
    }
    let mut rows = Vec::new();
    let mut prev: Option<(StructuredMesh, Vec<f64>)> = None;
    for &rate in rates {
        let mut config = base.clone();
        config.mesh = MeshConfig {
            n1: None,
            n2: None,
            dynamic_rate: Some(rate),
        };
        let rc = resolve(&config)?;
        let exec = execute(&rc, None, false)?;
        let diff = prev.as_ref().map(|(coarse_mesh, coarse_w)| {
            let mut num = 0.0;
            let mut den = 0.0;
            for node in 0..coarse_mesh.n_nodes() {
                let (x, y) = coarse_mesh.node_coords(node);
                let wf = exec.mesh.interpolate(&exec.w_field, x, y);
                num += (wf - coarse_w[node]).abs();
                den += coarse_w[node].abs();
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        });
        rows.push(ConvergenceRow {
            case_id: rc.case_id.clone(),
            rate,
            n1: rc.n1,
            n2: rc.n2,
            w_center: exec.record.w_center,
            q_bar: exec.record.q_bar,
            rel_l1_diff: diff,
        });
        prev = Some((exec.mesh, exec.w_field));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Curvature / load-direction study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureRow {
    pub case_id: String,
    pub r: f64,
    pub direction: LoadDirection,
    pub step: usize,
    pub load_factor: f64,
    pub q_bar: f64,
    /// Center deflection of the local run.
    pub w_local: Option<f64>,
    /// Center deflection of the nonlocal run.
    pub w_nonlocal: Option<f64>,
    /// Softening ratio `w_nonlocal / w_local` at this load level.
    pub ratio: Option<f64>,
    /// "ok", or "instability" when a branch stopped converging there.
    pub status: String,
}

/// Paired equilibrium paths per radius, load direction and fractional order.
///
/// Divergence on a branch is reported as an instability marker row, not a
/// study failure.
pub fn curvature_study(
    base: &CaseConfig,
    radii: &[f64],
    directions: &[LoadDirection],
) -> Result<Vec<CurvatureRow>> {
    if base.analysis != AnalysisKind::Nonlinear {
        return Err(Error::Config("curvature study requires nonlinear analysis".into()));
    }
    if radii.is_empty() || directions.is_empty() {
        return Err(Error::Config("curvature study needs radii and directions".into()));
    }
    let mut rows = Vec::new();
    for &r in radii {
        for &direction in directions {
            let mut config = base.clone();
            config.geometry.r = Radius(r);
            config.load.direction = direction;
            let rc = resolve(&config)?;

            let run = |alpha: f64| -> Result<(Vec<f64>, Vec<f64>, Option<f64>)> {
                let sys = build_system(&rc, alpha)?;
                let result = newton_raphson(&sys, &rc.solver);
                let ws: Vec<f64> = result.path.records.iter().map(|p| p.w_center).collect();
                let lambdas: Vec<f64> = result.path.records.iter().map(|p| p.load_factor).collect();
                let stopped = match result.failure {
                    None => None,
                    Some(Error::Divergence { load_factor, .. })
                    | Some(Error::NonConvergence { load_factor, .. }) => Some(load_factor),
                    Some(e) => return Err(e),
                };
                Ok((lambdas, ws, stopped))
            };

            let (lam_l, w_l, stop_l) = run(1.0)?;
            let (lam_n, w_n, stop_n) = if rc.frac.alpha < 1.0 {
                run(rc.frac.alpha)?
            } else {
                (lam_l.clone(), w_l.clone(), stop_l)
            };

            let steps = lam_l.len().max(lam_n.len());
            for k in 0..steps {
                let lambda = lam_l.get(k).or(lam_n.get(k)).copied().unwrap_or(0.0);
                let wl = w_l.get(k).copied();
                let wn = w_n.get(k).copied();
                rows.push(CurvatureRow {
                    case_id: rc.case_id.clone(),
                    r,
                    direction,
                    step: k + 1,
                    load_factor: lambda,
                    q_bar: lambda * rc.q_bar,
                    w_local: wl,
                    w_nonlocal: wn,
                    ratio: match (wl, wn) {
                        (Some(a), Some(b)) if a != 0.0 => Some(b / a),
                        _ => None,
                    },
                    status: "ok".into(),
                });
            }
            for (stopped, tag) in [(stop_l, "local"), (stop_n, "nonlocal")] {
                if let Some(lf) = stopped {
                    rows.push(CurvatureRow {
                        case_id: rc.case_id.clone(),
                        r,
                        direction,
                        step: steps + 1,
                        load_factor: lf,
                        q_bar: lf * rc.q_bar,
                        w_local: None,
                        w_nonlocal: None,
                        ratio: None,
                        status: format!("instability:{tag}"),
                    });
                }
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Stencil dump
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct StencilWeightRow {
    pub node: usize,
    pub coord: f64,
    pub weight: f64,
}

/// Weights of the RC-derivative stencil at a node of a uniform grid on
/// `[0, length]`, with the horizon truncated at the ends.
pub fn stencil_dump(
    length: f64,
    n_elements: usize,
    node_index: usize,
    alpha: f64,
    l_f: f64,
) -> Result<Vec<StencilWeightRow>> {
    use crate::frac::{truncate_horizon, DiscreteFracStencil, FracOperatorSpec};
    if !(length > 0.0) {
        return Err(Error::Domain(format!("length must be positive, got {length}")));
    }
    if n_elements < 2 {
        return Err(Error::Domain("need at least 2 elements".into()));
    }
    let spacing = length / n_elements as f64;
    let x = node_index as f64 * spacing;
    let (lm, lp) = truncate_horizon(x, length, l_f)?;
    let spec = FracOperatorSpec::new(alpha, lm, lp)?;
    let st = DiscreteFracStencil::at_node(n_elements + 1, spacing, node_index, &spec)?;
    Ok(st
        .support_indices()
        .zip(st.weights())
        .map(|(node, &weight)| StencilWeightRow {
            node,
            coord: node as f64 * spacing,
            weight,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

pub const RESULTS_HEADER: [&str; 21] = [
    "case_id",
    "status",
    "alpha",
    "l_f",
    "bc",
    "analysis",
    "r",
    "direction",
    "n1",
    "n2",
    "rate1",
    "rate2",
    "q0",
    "q_bar",
    "w_center",
    "w_local",
    "w_bar",
    "steps",
    "total_iterations",
    "elapsed_ms",
    "error",
];

pub const PATH_HEADER: [&str; 9] = [
    "case_id",
    "step",
    "load_factor",
    "q_bar",
    "w_center",
    "w_local",
    "w_bar",
    "iterations",
    "residual",
];

fn sci(v: f64) -> String {
    format!("{v:e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

fn record_row(record: &ResultRecord) -> Vec<String> {
    let cfg = &record.config;
    vec![
        record.case_id.clone(),
        "ok".into(),
        sci(cfg.fractional.alpha),
        sci(cfg.fractional.l_f),
        match cfg.bc.unwrap_or(BcKind::Cccc) {
            BcKind::Cccc => "CCCC".into(),
            BcKind::Ssss => "SSSS".into(),
        },
        match cfg.analysis {
            AnalysisKind::Linear => "linear".into(),
            AnalysisKind::Nonlinear => "nonlinear".into(),
        },
        if cfg.geometry.r.0.is_finite() {
            sci(cfg.geometry.r.0)
        } else {
            "infinite".into()
        },
        match cfg.load.direction {
            LoadDirection::PosE3 => "+e3".into(),
            LoadDirection::NegE3 => "-e3".into(),
        },
        record.n1.to_string(),
        record.n2.to_string(),
        sci(record.dynamic_rates.0),
        sci(record.dynamic_rates.1),
        sci(record.q0),
        sci(record.q_bar),
        sci(record.w_center),
        opt_sci(record.w_local),
        opt_sci(record.w_bar),
        record.path.len().to_string(),
        record.diagnostics.total_iterations.to_string(),
        sci(record.elapsed_ms),
        String::new(),
    ]
}

fn error_row(alpha: f64, l_f: f64, err: &Error) -> Vec<String> {
    let mut row = vec![String::new(); RESULTS_HEADER.len()];
    row[0] = format!("alpha{alpha}_lf{l_f}");
    row[1] = "error".into();
    row[2] = sci(alpha);
    row[3] = sci(l_f);
    row[20] = format!("{}: {err}", err.category().tag());
    row
}

/// Writes the per-case results table.
pub fn write_results_csv<W: Write>(w: W, outcomes: &[CaseOutcome]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RESULTS_HEADER)?;
    for o in outcomes {
        match &o.result {
            Ok(r) => wtr.write_record(record_row(r))?,
            Err(e) => wtr.write_record(error_row(o.alpha, o.l_f, e))?,
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the long-format equilibrium-path table.
pub fn write_path_csv<W: Write>(w: W, records: &[&ResultRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PATH_HEADER)?;
    for r in records {
        for p in &r.path {
            wtr.write_record([
                r.case_id.clone(),
                p.step.to_string(),
                sci(p.load_factor),
                sci(p.q_bar),
                sci(p.w_center),
                opt_sci(p.w_local),
                opt_sci(p.w_bar),
                p.iterations.to_string(),
                sci(p.residual),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_convergence_csv<W: Write>(w: W, rows: &[ConvergenceRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["case_id", "rate", "n1", "n2", "w_center", "q_bar", "rel_l1_diff"])?;
    for r in rows {
        wtr.write_record([
            r.case_id.clone(),
            sci(r.rate),
            r.n1.to_string(),
            r.n2.to_string(),
            sci(r.w_center),
            sci(r.q_bar),
            r.rel_l1_diff.map(sci).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_curvature_csv<W: Write>(w: W, rows: &[CurvatureRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "case_id",
        "r",
        "direction",
        "step",
        "load_factor",
        "q_bar",
        "w_local",
        "w_nonlocal",
        "ratio",
        "status",
    ])?;
    for r in rows {
        wtr.write_record([
            r.case_id.clone(),
            sci(r.r),
            match r.direction {
                LoadDirection::PosE3 => "+e3".into(),
                LoadDirection::NegE3 => "-e3".into(),
            },
            r.step.to_string(),
            sci(r.load_factor),
            sci(r.q_bar),
            opt_sci(r.w_local),
            opt_sci(r.w_nonlocal),
            opt_sci(r.ratio),
            r.status.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the JSON metadata sidecar of a run.
pub fn write_meta_json<W: Write>(w: W, records: &[&ResultRecord]) -> Result<()> {
    serde_json::to_writer_pretty(w, records)?;
    Ok(())
}
