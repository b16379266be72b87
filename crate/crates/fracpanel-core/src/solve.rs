//! Linear solve and incremental-load Newton–Raphson continuation.

use crate::error::{Error, Result};
use crate::linalg::{cg_solve, norm2, SystemMatrix};
use serde::{Deserialize, Serialize};

/// Generalized midplane displacements at all nodes (full DOF ordering,
/// constrained entries pinned at zero).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Value of one generalized displacement at a node.
    pub fn at(&self, node: usize, component: usize) -> f64 {
        self.0[node * crate::mesh::DOFS_PER_NODE + component]
    }
}

/// Linear-solver backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverKind {
    /// Cholesky factorization (banded or dense, chosen by bandwidth).
    #[default]
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient,
}

/// Load stepping for the continuation solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadSchedule {
    /// `n` uniform increments up to the full load.
    Uniform(usize),
    /// Explicit strictly increasing load factors in (0, 1].
    Explicit(Vec<f64>),
}

impl Default for LoadSchedule {
    fn default() -> Self {
        LoadSchedule::Uniform(10)
    }
}

impl LoadSchedule {
    pub fn factors(&self) -> Result<Vec<f64>> {
        match self {
            LoadSchedule::Uniform(n) => {
                if *n == 0 {
                    return Err(Error::Config("load schedule needs at least one step".into()));
                }
                Ok((1..=*n).map(|k| k as f64 / *n as f64).collect())
            }
            LoadSchedule::Explicit(f) => {
                if f.is_empty() {
                    return Err(Error::Config("load schedule needs at least one step".into()));
                }
                let mut prev = 0.0;
                for &v in f {
                    if v <= prev {
                        return Err(Error::Config(format!(
                            "load factors must be strictly increasing and positive, got {v} after {prev}"
                        )));
                    }
                    prev = v;
                }
                Ok(f.clone())
            }
        }
    }
}

/// Continuation solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative residual force norm for convergence.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub load_steps: LoadSchedule,
    /// Growth factor of the residual norm that declares divergence.
    pub divergence_threshold: f64,
    pub linear_solver: LinearSolverKind,
    /// Tolerance of the iterative fallback.
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-6,
            max_iterations: 25,
            load_steps: LoadSchedule::default(),
            divergence_threshold: 1e3,
            linear_solver: LinearSolverKind::Direct,
            cg_tolerance: 1e-10,
            cg_max_iterations: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::Config("residual tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        self.load_steps.factors().map(|_| ())
    }
}

/// One converged continuation step.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub load_factor: f64,
    pub state: StateVector,
    pub w_center: f64,
    pub iterations: usize,
    /// Final relative residual norm.
    pub residual_norm: f64,
    /// Relative residual after each iteration of the step.
    pub residual_history: Vec<f64>,
}

impl PathRecord {
    /// Reduction factor of the final iteration (quadratic-regime proxy).
    pub fn last_reduction(&self) -> Option<f64> {
        let h = &self.residual_history;
        (h.len() >= 2).then(|| h[h.len() - 2] / h[h.len() - 1].max(f64::MIN_POSITIVE))
    }
}

/// Ordered list of converged steps from a continuation run.
#[derive(Debug, Clone, Default)]
pub struct EquilibriumPath {
    pub records: Vec<PathRecord>,
}

impl EquilibriumPath {
    pub fn final_state(&self) -> Option<&StateVector> {
        self.records.last().map(|r| &r.state)
    }
}

/// Continuation outcome: the converged part of the path plus the error that
/// stopped it, if any. Divergence on a branch is data, not just failure —
/// studies report it as an instability marker.
#[derive(Debug)]
pub struct PathResult {
    pub path: EquilibriumPath,
    pub failure: Option<Error>,
}

impl PathResult {
    pub fn into_result(self) -> Result<EquilibriumPath> {
        match self.failure {
            None => Ok(self.path),
            Some(e) => Err(e),
        }
    }
}

/// Assembled-system callbacks for the continuation solver. States are
/// expressed on the free DOFs; `expand` recovers the full vector.
pub trait ContinuationProblem: Sync {
    fn n_free(&self) -> usize;
    /// Reduced consistent load vector at unit load factor.
    fn f_ext(&self) -> Vec<f64>;
    /// Reduced residual `F_int(u) - lambda F_ext` with the von Kármán terms.
    fn residual(&self, u_reduced: &[f64], load_factor: f64) -> Vec<f64>;
    /// Residual with the strictly linear internal force `K u - lambda F_ext`.
    fn residual_linear(&self, u_reduced: &[f64], load_factor: f64) -> Vec<f64>;
    /// Reduced tangent stiffness.
    fn tangent(&self, u_reduced: &[f64]) -> SystemMatrix;
    /// Full-length state from the reduced one.
    fn expand(&self, u_reduced: &[f64]) -> Vec<f64>;
    /// Diagnostic center deflection.
    fn center_value(&self, u_reduced: &[f64]) -> f64;
    /// Strain energy at a state (for the iteration log).
    fn energy(&self, u_reduced: &[f64]) -> f64;
}

/// Diagnostics of a single linear solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearDiagnostics {
    /// `||K u - F|| / ||F||` verified against an independent reassembly of
    /// the internal force.
    pub relative_residual: f64,
    pub cg_iterations: Option<usize>,
}

fn solve_system(
    matrix: SystemMatrix,
    rhs: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, Option<usize>)> {
    match config.linear_solver {
        LinearSolverKind::Direct => {
            let x = matrix.factorize()?.solve(rhs)?;
            Ok((x, None))
        }
        LinearSolverKind::ConjugateGradient => {
            let (x, it) = cg_solve(&matrix, rhs, config.cg_tolerance, config.cg_max_iterations)?;
            Ok((x, Some(it)))
        }
    }
}

/// Solves the constrained linear system `K u = F` and reports the verified
/// relative residual.
pub fn solve_linear(
    problem: &dyn ContinuationProblem,
    config: &SolverConfig,
) -> Result<(StateVector, LinearDiagnostics)> {
    let f = problem.f_ext();
    let n = problem.n_free();
    if norm2(&f) == 0.0 {
        return Ok((
            StateVector(problem.expand(&vec![0.0; n])),
            LinearDiagnostics {
                relative_residual: 0.0,
                cg_iterations: None,
            },
        ));
    }
    let zeros = vec![0.0; n];
    let k = problem.tangent(&zeros);
    let (u, cg_iterations) = solve_system(k, &f, config)?;
    // Residual via the linear internal force (independent of the factors).
    let r = problem.residual_linear(&u, 1.0);
    let rel = norm2(&r) / norm2(&f);
    Ok((
        StateVector(problem.expand(&u)),
        LinearDiagnostics {
            relative_residual: rel,
            cg_iterations,
        },
    ))
}

/// Incremental-load Newton–Raphson continuation.
///
/// Each load step starts from the previous converged state and iterates
/// `u <- u - K_T^{-1} R` until the relative residual force norm drops below
/// the tolerance. Convergence failures and divergence stop the run and are
/// returned alongside the converged part of the path.
pub fn newton_raphson(problem: &dyn ContinuationProblem, config: &SolverConfig) -> PathResult {
    let mut path = EquilibriumPath::default();
    if let Err(e) = config.validate() {
        return PathResult {
            path,
            failure: Some(e),
        };
    }
    let factors = config.load_steps.factors().expect("validated");
    let f_ext = problem.f_ext();
    let f_ref = norm2(&f_ext);
    let n = problem.n_free();
    let mut u = vec![0.0; n];

    for (step, &lambda) in factors.iter().enumerate() {
        let force_scale = (lambda * f_ref).max(f64::MIN_POSITIVE);
        let mut r = problem.residual(&u, lambda);
        let mut rel = norm2(&r) / force_scale;
        let initial_rel = rel.max(1.0);
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut converged = rel <= config.residual_tolerance;

        while !converged && iterations < config.max_iterations {
            let kt = problem.tangent(&u);
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let (du, _) = match solve_system(kt, &rhs, config) {
                Ok(x) => x,
                Err(e) => {
                    return PathResult {
                        path,
                        failure: Some(e),
                    }
                }
            };
            for (ui, di) in u.iter_mut().zip(&du) {
                *ui += di;
            }
            iterations += 1;
            r = problem.residual(&u, lambda);
            rel = norm2(&r) / force_scale;
            history.push(rel);
            log::debug!(
                "step={} iter={} residual={:e} energy={:e}",
                step + 1,
                iterations,
                rel,
                problem.energy(&u)
            );
            if rel <= config.residual_tolerance {
                converged = true;
            } else if !rel.is_finite() || rel > config.divergence_threshold * initial_rel {
                return PathResult {
                    path,
                    failure: Some(Error::Divergence {
                        load_factor: lambda,
                        residual: rel,
                        threshold: config.divergence_threshold,
                    }),
                };
            }
        }

        if !converged {
            return PathResult {
                path,
                failure: Some(Error::NonConvergence {
                    load_factor: lambda,
                    residual: rel,
                    iterations,
                }),
            };
        }

        log::info!(
            "step={} converged iterations={} residual={:e} w_center={:e}",
            step + 1,
            iterations,
            rel,
            problem.center_value(&u)
        );
        path.records.push(PathRecord {
            load_factor: lambda,
            state: StateVector(problem.expand(&u)),
            w_center: problem.center_value(&u),
            iterations,
            residual_norm: rel,
            residual_history: history,
        });
    }

    PathResult {
        path,
        failure: None,
    }
}

// ---------------------------------------------------------------------------
// Problem adapter for the assembled shell system
// ---------------------------------------------------------------------------

impl ContinuationProblem for crate::assembly::GlobalSystem {
    fn n_free(&self) -> usize {
        self.dof_map.n_free()
    }

    fn f_ext(&self) -> Vec<f64> {
        self.f_ext_reduced()
    }

    fn residual(&self, u_reduced: &[f64], load_factor: f64) -> Vec<f64> {
        let full = self.dof_map.expand(u_reduced);
        crate::assembly::GlobalSystem::residual(self, &full, load_factor, true)
    }

    fn residual_linear(&self, u_reduced: &[f64], load_factor: f64) -> Vec<f64> {
        let full = self.dof_map.expand(u_reduced);
        crate::assembly::GlobalSystem::residual(self, &full, load_factor, false)
    }

    fn tangent(&self, u_reduced: &[f64]) -> SystemMatrix {
        let full = self.dof_map.expand(u_reduced);
        crate::assembly::GlobalSystem::tangent(self, &full)
    }

    fn expand(&self, u_reduced: &[f64]) -> Vec<f64> {
        self.dof_map.expand(u_reduced)
    }

    fn center_value(&self, u_reduced: &[f64]) -> f64 {
        let full = self.dof_map.expand(u_reduced);
        self.center_deflection(&full)
    }

    fn energy(&self, u_reduced: &[f64]) -> f64 {
        let full = self.dof_map.expand(u_reduced);
        self.strain_energy(&full, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{BcKind, BoundarySpec, FracParams, GlobalSystem, LoadDirection, LoadSpec};
    use crate::mesh::{build_mesh, PanelGeometry, QuadratureRule};
    use crate::shell::IsotropicMaterial;
    use approx::assert_relative_eq;

    fn system(q0: f64, alpha: f64) -> GlobalSystem {
        let geo = PanelGeometry::new(1.0, 1.0, 0.1, 10.0).unwrap();
        let mesh = build_mesh(geo, 6, 6).unwrap();
        GlobalSystem::build(
            mesh,
            IsotropicMaterial::with_default_shear(30.0e6, 0.3).unwrap(),
            BoundarySpec::new(BcKind::Cccc),
            LoadSpec {
                q0,
                direction: LoadDirection::PosE3,
            },
            FracParams {
                alpha,
                l_f: 0.5,
                retain_f_r: false,
            },
            QuadratureRule::SelectiveReduced,
        )
        .unwrap()
    }

    #[test]
    fn zero_load_gives_zero_state() {
        let sys = system(0.0, 0.8);
        let (u, diag) = solve_linear(&sys, &SolverConfig::default()).unwrap();
        assert!(u.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(diag.relative_residual, 0.0);
    }

    #[test]
    fn linear_solve_scales_with_load() {
        let config = SolverConfig::default();
        let (u1, d1) = solve_linear(&system(1000.0, 0.8), &config).unwrap();
        let (u2, _) = solve_linear(&system(2000.0, 0.8), &config).unwrap();
        assert!(d1.relative_residual < 1e-10);
        for (a, b) in u1.as_slice().iter().zip(u2.as_slice()) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-10, epsilon = 1e-18);
        }
    }

    #[test]
    fn cg_fallback_matches_direct() {
        let sys = system(1500.0, 0.9);
        let direct = solve_linear(&sys, &SolverConfig::default()).unwrap().0;
        let cg_cfg = SolverConfig {
            linear_solver: LinearSolverKind::ConjugateGradient,
            ..Default::default()
        };
        let (cg, diag) = solve_linear(&sys, &cg_cfg).unwrap();
        assert!(diag.cg_iterations.unwrap() > 0);
        let diff: Vec<f64> = direct
            .as_slice()
            .iter()
            .zip(cg.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let rel = norm2(&diff) / norm2(direct.as_slice());
        assert!(rel < 1e-6, "cg/direct relative difference {rel}");
    }

    #[test]
    fn newton_small_load_matches_linear_solve() {
        // q_bar ~ 0.5: the response is essentially linear.
        let sys = system(1500.0, 0.8);
        let config = SolverConfig {
            load_steps: LoadSchedule::Uniform(2),
            ..Default::default()
        };
        let result = newton_raphson(&sys, &config);
        let path = result.into_result().unwrap();
        assert_eq!(path.records.len(), 2);
        let (lin, _) = solve_linear(&sys, &config).unwrap();
        let w_lin = sys.center_deflection(lin.as_slice());
        let w_nl = path.records.last().unwrap().w_center;
        assert_relative_eq!(w_nl, w_lin, max_relative = 5e-3);
        for r in &path.records {
            assert!(r.residual_norm <= config.residual_tolerance);
        }
    }

    #[test]
    fn zero_load_step_converges_immediately() {
        let sys = system(0.0, 0.8);
        let config = SolverConfig {
            load_steps: LoadSchedule::Uniform(1),
            ..Default::default()
        };
        let path = newton_raphson(&sys, &config).into_result().unwrap();
        assert_eq!(path.records.len(), 1);
        assert!(path.records[0].iterations <= 1);
        assert!(path.records[0].state.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_convergence_carries_partial_path() {
        let sys = system(60000.0, 0.8); // q_bar = 20, strongly nonlinear
        let config = SolverConfig {
            load_steps: LoadSchedule::Uniform(4),
            max_iterations: 1,
            ..Default::default()
        };
        let result = newton_raphson(&sys, &config);
        assert!(result.failure.is_some());
        match result.failure.as_ref().unwrap() {
            Error::NonConvergence { .. } => {}
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn load_schedule_validation() {
        assert!(LoadSchedule::Uniform(0).factors().is_err());
        assert!(LoadSchedule::Explicit(vec![0.5, 0.4]).factors().is_err());
        assert_eq!(
            LoadSchedule::Uniform(4).factors().unwrap(),
            vec![0.25, 0.5, 0.75, 1.0]
        );
    }

    #[test]
    fn final_iterations_contract_fast() {
        // Quadratic-regime proxy: the last iteration cuts the residual by
        // at least an order of magnitude.
        let sys = system(30000.0, 0.8); // q_bar = 10
        let config = SolverConfig {
            load_steps: LoadSchedule::Uniform(4),
            ..Default::default()
        };
        let path = newton_raphson(&sys, &config).into_result().unwrap();
        for r in &path.records {
            if let Some(red) = r.last_reduction() {
                assert!(red >= 10.0, "last reduction {red} at lambda={}", r.load_factor);
            }
        }
    }
}
