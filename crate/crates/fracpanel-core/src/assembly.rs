//! Nonlocal strain-displacement operators and global assembly.
//!
//! The fractional derivative of a field at a quadrature point is a weighted
//! sum of nodal values across the truncated horizon: the 1D stencil along
//! the point's grid line composed with linear interpolation transverse to
//! it. At `alpha = 1` this collapses to the classical bilinear element
//! B-matrix. Local (non-derivative) terms enter through the element's own
//! shape functions.
//!
//! Strain components are described as small term lists over three primitive
//! rows per quadrature point (`D^a_x1`, `D^a_x2`, shape value), so stiffness
//! assembly is a stream of sparse row outer products and the residual is a
//! stream of row scatters. The von Kármán terms add state-dependent
//! contributions on the same machinery; the geometric stiffness comes from
//! the exact second variation (resultant-weighted products of the transverse
//! gradient rows), which is what gives Newton its quadratic convergence.
//!
//! Constraints are applied by symmetric elimination: constrained DOFs never
//! receive equation numbers and their rows/columns are skipped during
//! accumulation, preserving symmetry and positive definiteness.

use crate::error::{Error, Result};
use crate::frac::basis_coefficients;
use crate::linalg::SystemMatrix;
use crate::mesh::{
    build_horizon_map, dof, DofMap, HorizonStencils, QuadratureRule, StructuredMesh, DOFS_PER_NODE,
};
use crate::shell::{
    constitutive_matrices, midplane_strains, stress_resultants, ConstitutiveMatrices,
    FracGradients, GeneralizedDisplacements, IsotropicMaterial, MidplaneStrainState,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Boundary conditions
// ---------------------------------------------------------------------------

/// Supported boundary-condition kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcKind {
    /// Fully clamped: all five DOFs fixed on all four edges.
    #[serde(rename = "CCCC")]
    Cccc,
    /// Simply supported: `v0 = w0 = phi0 = 0` on the `x1` edges,
    /// `u0 = w0 = theta0 = 0` on the `x2` edges.
    #[serde(rename = "SSSS")]
    Ssss,
}

/// Boundary-condition specification with its derived constrained-DOF set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundarySpec {
    pub kind: BcKind,
}

impl BoundarySpec {
    pub fn new(kind: BcKind) -> Self {
        Self { kind }
    }

    /// Constrained flags per full DOF index. Corner nodes take the union of
    /// both edge constraint sets.
    pub fn constrained_dofs(&self, mesh: &StructuredMesh) -> Vec<bool> {
        let mut fixed = vec![false; mesh.n_dofs()];
        for node in 0..mesh.n_nodes() {
            let on1 = mesh.on_x1_edge(node);
            let on2 = mesh.on_x2_edge(node);
            if !(on1 || on2) {
                continue;
            }
            match self.kind {
                BcKind::Cccc => {
                    for c in 0..DOFS_PER_NODE {
                        fixed[DofMap::full(node, c)] = true;
                    }
                }
                BcKind::Ssss => {
                    if on1 {
                        fixed[DofMap::full(node, dof::V0)] = true;
                        fixed[DofMap::full(node, dof::W0)] = true;
                        fixed[DofMap::full(node, dof::PHI0)] = true;
                    }
                    if on2 {
                        fixed[DofMap::full(node, dof::U0)] = true;
                        fixed[DofMap::full(node, dof::W0)] = true;
                        fixed[DofMap::full(node, dof::THETA0)] = true;
                    }
                }
            }
        }
        fixed
    }
}

// ---------------------------------------------------------------------------
// Loads
// ---------------------------------------------------------------------------

/// Direction of the uniformly distributed transverse load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LoadDirection {
    #[default]
    #[serde(rename = "+e3")]
    PosE3,
    #[serde(rename = "-e3")]
    NegE3,
}

/// Uniform transverse pressure on the panel midplane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    /// Pressure magnitude (force per unit midplane area).
    pub q0: f64,
    pub direction: LoadDirection,
}

impl LoadSpec {
    pub fn signed_pressure(&self) -> f64 {
        match self.direction {
            LoadDirection::PosE3 => self.q0,
            LoadDirection::NegE3 => -self.q0,
        }
    }
}

/// Consistent load vector for the uniform transverse load, over the full DOF
/// set. Only `w0` entries are populated; their total equals `±q0·a·b`.
pub fn assemble_load(mesh: &StructuredMesh, load: &LoadSpec) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_dofs()];
    let (le1, le2) = mesh.element_size();
    let p = load.signed_pressure();
    // 2x2 Gauss integrates the bilinear shape functions exactly; each corner
    // receives a quarter of the element load.
    let share = 0.25 * le1 * le2 * p;
    for e2 in 0..mesh.n2() {
        for e1 in 0..mesh.n1() {
            for node in mesh.element_nodes(e1, e2) {
                f[DofMap::full(node, dof::W0)] += share;
            }
        }
    }
    f
}

// ---------------------------------------------------------------------------
// Per-quadrature-point operators
// ---------------------------------------------------------------------------

/// Sparse row over mesh nodes: `value = sum weights[k] * field[nodes[k]]`.
#[derive(Debug, Clone, Default)]
pub struct NodeRow {
    pub nodes: Vec<u32>,
    pub weights: Vec<f64>,
}

impl NodeRow {
    fn apply(&self, full_state: &[f64], component: usize) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&n, &w)| w * full_state[n as usize * DOFS_PER_NODE + component])
            .sum()
    }
}

/// Primitive row selector for strain terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prim {
    Dx1,
    Dx2,
    Shape,
}

/// One additive term of a strain row: `coeff * prim_row ⊗ field`.
#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub prim: Prim,
    pub field: usize,
    pub coeff: f64,
}

fn term(prim: Prim, field: usize, coeff: f64) -> Term {
    Term { prim, field, coeff }
}

/// Strain-row term lists shared by all quadrature points. Coefficients fold
/// in `1/F_theta`, the optional `F_r` terms and the curvature `1/R`.
#[derive(Debug, Clone)]
pub struct OperatorLayout {
    pub membrane: [Vec<Term>; 3],
    pub bending: [Vec<Term>; 3],
    /// Transverse-gradient rows entering the von Kármán terms.
    pub g: [Vec<Term>; 2],
    pub shear: [Vec<Term>; 2],
    pub f_theta: f64,
    pub f_r: f64,
    pub inv_r: f64,
}

impl OperatorLayout {
    pub fn new(f_theta: f64, f_r: f64, inv_r: f64) -> Result<Self> {
        if !(f_theta > 0.0) {
            return Err(Error::Domain(format!("f_theta must be positive, got {f_theta}")));
        }
        let ft = f_theta;
        let fr = f_r;
        let push_nonzero = |v: &mut Vec<Term>, t: Term| {
            if t.coeff != 0.0 {
                v.push(t);
            }
        };
        let mut e11 = Vec::new();
        push_nonzero(&mut e11, term(Prim::Dx1, dof::U0, 1.0));

        let mut e22 = Vec::new();
        push_nonzero(&mut e22, term(Prim::Dx2, dof::V0, 1.0 / ft));
        push_nonzero(&mut e22, term(Prim::Shape, dof::W0, inv_r));
        push_nonzero(&mut e22, term(Prim::Shape, dof::PHI0, -fr / ft));
        push_nonzero(&mut e22, term(Prim::Shape, dof::V0, -fr * inv_r / ft));

        let mut g12 = Vec::new();
        push_nonzero(&mut g12, term(Prim::Dx1, dof::V0, 1.0));
        push_nonzero(&mut g12, term(Prim::Dx2, dof::U0, 1.0 / ft));
        push_nonzero(&mut g12, term(Prim::Shape, dof::THETA0, -fr / ft));

        let mut k11 = Vec::new();
        push_nonzero(&mut k11, term(Prim::Dx1, dof::THETA0, 1.0));

        let mut k22 = Vec::new();
        push_nonzero(&mut k22, term(Prim::Dx2, dof::PHI0, 1.0 / ft));
        push_nonzero(&mut k22, term(Prim::Shape, dof::PHI0, -fr * inv_r / ft));

        let mut k12 = Vec::new();
        push_nonzero(&mut k12, term(Prim::Dx1, dof::PHI0, 1.0));
        push_nonzero(&mut k12, term(Prim::Dx2, dof::THETA0, 1.0 / ft));

        let mut g1 = Vec::new();
        push_nonzero(&mut g1, term(Prim::Dx1, dof::W0, 1.0));

        let mut g2 = Vec::new();
        push_nonzero(&mut g2, term(Prim::Dx2, dof::W0, 1.0 / ft));
        push_nonzero(&mut g2, term(Prim::Shape, dof::V0, -inv_r));
        push_nonzero(&mut g2, term(Prim::Shape, dof::W0, fr * inv_r / ft));

        let mut s13 = vec![term(Prim::Dx1, dof::W0, 1.0), term(Prim::Shape, dof::THETA0, 1.0)];
        let mut s23 = vec![term(Prim::Shape, dof::PHI0, 1.0)];
        s23.extend(g2.iter().copied());
        s13.shrink_to_fit();

        Ok(Self {
            membrane: [e11, e22, g12],
            bending: [k11, k22, k12],
            g: [g1, g2],
            shear: [s13, s23],
            f_theta,
            f_r,
            inv_r,
        })
    }
}

/// Primitive operator rows of one quadrature point.
#[derive(Debug, Clone)]
pub struct QpOperators {
    /// Quadrature weight (area measure included).
    pub weight: f64,
    pub x: f64,
    pub y: f64,
    /// `D^a_x1` row, `D^a_x2` row, shape-value row.
    pub rows: [NodeRow; 3],
}

impl QpOperators {
    fn row(&self, prim: Prim) -> &NodeRow {
        match prim {
            Prim::Dx1 => &self.rows[0],
            Prim::Dx2 => &self.rows[1],
            Prim::Shape => &self.rows[2],
        }
    }

    /// Fractional gradients and local values of all five fields at the point.
    pub fn kinematics(&self, full_state: &[f64]) -> (FracGradients, GeneralizedDisplacements) {
        let mut grads = FracGradients::default();
        let mut local = [0.0; DOFS_PER_NODE];
        for c in 0..DOFS_PER_NODE {
            grads.d1[c] = self.rows[0].apply(full_state, c);
            grads.d2[c] = self.rows[1].apply(full_state, c);
            local[c] = self.rows[2].apply(full_state, c);
        }
        (grads, GeneralizedDisplacements::from_slice(&local))
    }

    /// Union of the support node sets of the primitive rows.
    pub fn support_nodes(&self) -> Vec<u32> {
        let mut nodes: Vec<u32> = self
            .rows
            .iter()
            .flat_map(|r| r.nodes.iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }
}

/// Builds the per-quadrature-point operator rows from a horizon map entry:
/// stencil weights composed with transverse linear interpolation, plus the
/// element's bilinear shape row.
fn build_qp_operators(mesh: &StructuredMesh, hs: &HorizonStencils) -> QpOperators {
    let (le1, le2) = mesh.element_size();
    let (e1, e2) = hs.qp.element;
    let xi = (hs.qp.x - e1 as f64 * le1) / le1;
    let eta = (hs.qp.y - e2 as f64 * le2) / le2;

    // D^a_x1: stencil nodes along x1 at the two x2 ordinates bounding the point.
    let mut dx1 = NodeRow::default();
    for (k, &w) in hs.sx.support_indices().zip(hs.sx.weights()) {
        dx1.nodes.push(mesh.node_index(k, e2) as u32);
        dx1.weights.push(w * (1.0 - eta));
        dx1.nodes.push(mesh.node_index(k, e2 + 1) as u32);
        dx1.weights.push(w * eta);
    }

    let mut dx2 = NodeRow::default();
    for (k, &w) in hs.sy.support_indices().zip(hs.sy.weights()) {
        dx2.nodes.push(mesh.node_index(e1, k) as u32);
        dx2.weights.push(w * (1.0 - xi));
        dx2.nodes.push(mesh.node_index(e1 + 1, k) as u32);
        dx2.weights.push(w * xi);
    }

    let corners = mesh.element_nodes(e1, e2);
    let shape = NodeRow {
        nodes: corners.iter().map(|&n| n as u32).collect(),
        weights: vec![
            (1.0 - xi) * (1.0 - eta),
            xi * (1.0 - eta),
            xi * eta,
            (1.0 - xi) * eta,
        ],
    };

    QpOperators {
        weight: hs.qp.weight,
        x: hs.qp.x,
        y: hs.qp.y,
        rows: [dx1, dx2, shape],
    }
}

// ---------------------------------------------------------------------------
// Global system
// ---------------------------------------------------------------------------

/// Fractional-model parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    /// Fractional order in (0, 1]; 1 is the classical local model.
    pub alpha: f64,
    /// Nominal isotropic horizon length.
    pub l_f: f64,
    /// Keep the (small) radial basis coefficient in the strain expressions.
    pub retain_f_r: bool,
}

/// Mesh, material and operator bundle ready for assembly and solves.
pub struct GlobalSystem {
    pub mesh: StructuredMesh,
    pub material: IsotropicMaterial,
    pub matrices: ConstitutiveMatrices,
    pub frac: FracParams,
    pub layout: OperatorLayout,
    pub dof_map: DofMap,
    pub bc: BoundarySpec,
    membrane_ops: Vec<QpOperators>,
    shear_ops: Vec<QpOperators>,
    /// Full-length consistent load vector of the configured load.
    pub f_ext_full: Vec<f64>,
    load: LoadSpec,
    half_bandwidth: usize,
    /// Diagnostic notes from construction (horizon truncation etc).
    pub notes: Vec<String>,
}

impl GlobalSystem {
    /// Builds operators, DOF numbering and the load vector for a panel model.
    pub fn build(
        mesh: StructuredMesh,
        material: IsotropicMaterial,
        bc: BoundarySpec,
        load: LoadSpec,
        frac: FracParams,
        rule: QuadratureRule,
    ) -> Result<Self> {
        let geo = *mesh.geometry();
        let matrices = constitutive_matrices(&material, geo.h)?;

        // Angular horizon of the basis coefficients: the arc-length horizon
        // mapped through theta = x2/R. Flat panels and the local limit have
        // F_theta = 1 exactly.
        let (f_theta, f_r_computed) = if frac.alpha == 1.0 || geo.is_plate() {
            (1.0, 0.0)
        } else {
            let coeffs = basis_coefficients(frac.alpha, frac.l_f * geo.inv_r())?;
            (coeffs.f_theta, coeffs.f_r)
        };
        let f_r = if frac.retain_f_r { f_r_computed } else { 0.0 };
        let layout = OperatorLayout::new(f_theta, f_r, geo.inv_r())?;

        let map = build_horizon_map(&mesh, frac.l_f, frac.alpha, rule)?;
        let mut notes = map.notes.clone();
        if let Some(w) = geo.shallowness_warning() {
            notes.push(w);
        }

        let membrane_ops: Vec<QpOperators> = map
            .membrane
            .par_iter()
            .map(|hs| build_qp_operators(&mesh, hs))
            .collect();
        let shear_ops: Vec<QpOperators> = map
            .shear
            .par_iter()
            .map(|hs| build_qp_operators(&mesh, hs))
            .collect();

        let dof_map = DofMap::new(&mesh, bc.constrained_dofs(&mesh))?;
        let f_ext_full = assemble_load(&mesh, &load);

        // Bandwidth of the reduced system: widest free-DOF span of any
        // quadrature point's support.
        let mut half_bandwidth = 0usize;
        for op in membrane_ops.iter().chain(&shear_ops) {
            let mut lo = usize::MAX;
            let mut hi = 0usize;
            for node in op.support_nodes() {
                for c in 0..DOFS_PER_NODE {
                    if let Some(i) = dof_map.free(DofMap::full(node as usize, c)) {
                        lo = lo.min(i);
                        hi = hi.max(i);
                    }
                }
            }
            if lo != usize::MAX {
                half_bandwidth = half_bandwidth.max(hi - lo);
            }
        }

        Ok(Self {
            mesh,
            material,
            matrices,
            frac,
            layout,
            dof_map,
            bc,
            membrane_ops,
            shear_ops,
            f_ext_full,
            load,
            half_bandwidth,
            notes,
        })
    }

    pub fn n_free(&self) -> usize {
        self.dof_map.n_free()
    }

    pub fn load(&self) -> &LoadSpec {
        &self.load
    }

    pub fn membrane_ops(&self) -> &[QpOperators] {
        &self.membrane_ops
    }

    pub fn shear_ops(&self) -> &[QpOperators] {
        &self.shear_ops
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bandwidth
    }

    /// True when the assembled system uses band storage (narrow horizons or
    /// the local limit).
    pub fn uses_banded_storage(&self) -> bool {
        let n = self.n_free();
        SystemMatrix::zeros(n, self.half_bandwidth.min(n.saturating_sub(1))).is_banded()
    }

    /// Reduced consistent load vector.
    pub fn f_ext_reduced(&self) -> Vec<f64> {
        self.dof_map.reduce(&self.f_ext_full)
    }

    /// Transverse deflection at the node nearest the panel center.
    pub fn center_deflection(&self, full_state: &[f64]) -> f64 {
        full_state[DofMap::full(self.mesh.center_node(), dof::W0)]
    }

    /// Linear stiffness `K = Σ wt B^T C B` on the free DOFs.
    pub fn assemble_linear(&self) -> SystemMatrix {
        self.assemble_matrix(None)
    }

    /// Tangent stiffness at a state: material part with the von Kármán
    /// modification plus the resultant-weighted geometric part.
    pub fn tangent(&self, full_state: &[f64]) -> SystemMatrix {
        self.assemble_matrix(Some(full_state))
    }

    /// Internal force vector (reduced) at a state; `nonlinear` keeps the von
    /// Kármán terms, otherwise the force is exactly `K u`.
    pub fn internal_force(&self, full_state: &[f64], nonlinear: bool) -> Vec<f64> {
        let n = self.n_free();
        let chunk = (self.membrane_ops.len() / rayon::current_num_threads().max(1)).max(1);
        let mut f_int = self
            .membrane_ops
            .par_chunks(chunk)
            .map(|ops| {
                let mut acc = vec![0.0; n];
                let mut scratch = RowScratch::default();
                for op in ops {
                    self.accumulate_membrane_force(op, full_state, nonlinear, &mut acc, &mut scratch);
                }
                acc
            })
            .reduce(
                || vec![0.0; n],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                },
            );
        let mut scratch = RowScratch::default();
        for op in &self.shear_ops {
            self.accumulate_shear_force(op, full_state, &mut f_int, &mut scratch);
        }
        f_int
    }

    /// Residual `R = F_int(u) - lambda F_ext` on the free DOFs.
    pub fn residual(&self, full_state: &[f64], load_factor: f64, nonlinear: bool) -> Vec<f64> {
        let mut r = self.internal_force(full_state, nonlinear);
        for (ri, fe) in r.iter_mut().zip(self.f_ext_reduced()) {
            *ri -= load_factor * fe;
        }
        r
    }

    /// Strain energy `1/2 ∫ (N·e0 + M·k + Q·g) dΩ` by the assembly quadrature.
    pub fn strain_energy(&self, full_state: &[f64], nonlinear: bool) -> f64 {
        let mut energy = 0.0;
        for op in &self.membrane_ops {
            let (grads, disp) = op.kinematics(full_state);
            let s = midplane_strains(
                &grads,
                &disp,
                self.layout.inv_r,
                self.layout.f_r,
                self.layout.f_theta,
                nonlinear,
            )
            .expect("validated f_theta");
            let r = stress_resultants(&s, &self.matrices);
            let mut d = 0.0;
            for i in 0..3 {
                d += r.n[i] * s.membrane[i] + r.m[i] * s.curvature[i];
            }
            energy += 0.5 * op.weight * d;
        }
        for op in &self.shear_ops {
            let (grads, disp) = op.kinematics(full_state);
            let s = midplane_strains(
                &grads,
                &disp,
                self.layout.inv_r,
                self.layout.f_r,
                self.layout.f_theta,
                nonlinear,
            )
            .expect("validated f_theta");
            let r = stress_resultants(&s, &self.matrices);
            energy += 0.5 * op.weight * (r.q[0] * s.shear[0] + r.q[1] * s.shear[1]);
        }
        energy
    }

    /// External work of the configured load on a state, integrated with the
    /// membrane quadrature (a route independent of the assembled vector).
    pub fn external_work(&self, load: &LoadSpec, full_state: &[f64]) -> f64 {
        let p = load.signed_pressure();
        self.membrane_ops
            .iter()
            .map(|op| op.weight * p * op.row(Prim::Shape).apply(full_state, dof::W0))
            .sum()
    }

    /// Midplane strain states at all membrane quadrature points.
    pub fn membrane_strains(&self, full_state: &[f64], nonlinear: bool) -> Vec<MidplaneStrainState> {
        self.membrane_ops
            .iter()
            .map(|op| {
                let (grads, disp) = op.kinematics(full_state);
                midplane_strains(
                    &grads,
                    &disp,
                    self.layout.inv_r,
                    self.layout.f_r,
                    self.layout.f_theta,
                    nonlinear,
                )
                .expect("validated f_theta")
            })
            .collect()
    }

    /// Worst rotation-magnitude warning over the membrane quadrature points.
    pub fn rotation_warning(&self, full_state: &[f64]) -> Option<String> {
        self.membrane_ops
            .iter()
            .filter_map(|op| op.kinematics(full_state).1.rotation_warning())
            .next()
    }

    // -- matrix assembly -----------------------------------------------------

    fn assemble_matrix(&self, state: Option<&[f64]>) -> SystemMatrix {
        let n = self.n_free();
        let mut mat = SystemMatrix::zeros(n, self.half_bandwidth.min(n.saturating_sub(1)));
        let n_threads = rayon::current_num_threads().max(1);
        let stripe = n.div_ceil(n_threads);
        let shared = SharedMatrix(&mut mat);
        rayon::scope(|scope| {
            for t in 0..n_threads {
                let lo = t * stripe;
                let hi = ((t + 1) * stripe).min(n);
                if lo >= hi {
                    continue;
                }
                let shared_ref = &shared;
                scope.spawn(move |_| {
                    // Each task owns rows [lo, hi) exclusively.
                    let mat = unsafe { &mut *shared_ref.get() };
                    let mut scratch = RowScratch::default();
                    for op in &self.membrane_ops {
                        self.accumulate_membrane_stiffness(op, state, mat, lo, hi, &mut scratch);
                    }
                    for op in &self.shear_ops {
                        self.accumulate_shear_stiffness(op, mat, lo, hi, &mut scratch);
                    }
                });
            }
        });
        mat
    }

    /// Materializes a term list into scratch as (free index, weight) pairs,
    /// skipping constrained DOFs.
    fn prepare_row(&self, op: &QpOperators, terms: &[Term], out: &mut PreparedRow) {
        out.idx.clear();
        out.w.clear();
        for t in terms {
            let row = op.row(t.prim);
            for (&node, &w) in row.nodes.iter().zip(&row.weights) {
                if let Some(i) = self.dof_map.free(DofMap::full(node as usize, t.field)) {
                    out.idx.push(i as u32);
                    out.w.push(t.coeff * w);
                }
            }
        }
    }

    fn accumulate_membrane_stiffness(
        &self,
        op: &QpOperators,
        state: Option<&[f64]>,
        mat: &mut SystemMatrix,
        lo: usize,
        hi: usize,
        scratch: &mut RowScratch,
    ) {
        let wt = op.weight;
        for (k, terms) in self.layout.membrane.iter().enumerate() {
            self.prepare_row(op, terms, &mut scratch.membrane[k]);
        }
        for (k, terms) in self.layout.bending.iter().enumerate() {
            self.prepare_row(op, terms, &mut scratch.bending[k]);
        }

        // Von Kármán state modification of the membrane rows and the
        // geometric stiffness data.
        let mut n_hat = None;
        if let Some(u) = state {
            for (k, terms) in self.layout.g.iter().enumerate() {
                self.prepare_row(op, terms, &mut scratch.g[k]);
            }
            let (grads, disp) = op.kinematics(u);
            let strains = midplane_strains(
                &grads,
                &disp,
                self.layout.inv_r,
                self.layout.f_r,
                self.layout.f_theta,
                true,
            )
            .expect("validated f_theta");
            let res = stress_resultants(&strains, &self.matrices);
            let (g1, g2) = crate::shell::von_karman_rotations(
                &grads,
                &disp,
                self.layout.inv_r,
                self.layout.f_r,
                self.layout.f_theta,
            );
            // membrane row 1 += g1·G1; row 2 += g2·G2; row 3 += g2·G1 + g1·G2
            scratch.membrane[0].append_scaled(&scratch.g[0], g1);
            scratch.membrane[1].append_scaled(&scratch.g[1], g2);
            scratch.membrane[2].append_scaled(&scratch.g[0], g2);
            scratch.membrane[2].append_scaled(&scratch.g[1], g1);
            n_hat = Some([res.n[0], res.n[2], res.n[1]]); // N11, N12, N22
        }

        for r in 0..3 {
            for s in 0..3 {
                let c = self.matrices.a[r][s];
                if c != 0.0 {
                    outer_product(&scratch.membrane[r], &scratch.membrane[s], wt * c, mat, lo, hi);
                }
                let cd = self.matrices.d[r][s];
                if cd != 0.0 {
                    outer_product(&scratch.bending[r], &scratch.bending[s], wt * cd, mat, lo, hi);
                }
            }
        }
        if let Some([n11, n12, n22]) = n_hat {
            outer_product(&scratch.g[0], &scratch.g[0], wt * n11, mat, lo, hi);
            outer_product(&scratch.g[0], &scratch.g[1], wt * n12, mat, lo, hi);
            outer_product(&scratch.g[1], &scratch.g[0], wt * n12, mat, lo, hi);
            outer_product(&scratch.g[1], &scratch.g[1], wt * n22, mat, lo, hi);
        }
    }

    fn accumulate_shear_stiffness(
        &self,
        op: &QpOperators,
        mat: &mut SystemMatrix,
        lo: usize,
        hi: usize,
        scratch: &mut RowScratch,
    ) {
        let wt = op.weight;
        for (k, terms) in self.layout.shear.iter().enumerate() {
            self.prepare_row(op, terms, &mut scratch.shear[k]);
        }
        for r in 0..2 {
            for s in 0..2 {
                let c = self.matrices.s[r][s];
                if c != 0.0 {
                    outer_product(&scratch.shear[r], &scratch.shear[s], wt * c, mat, lo, hi);
                }
            }
        }
    }

    fn accumulate_membrane_force(
        &self,
        op: &QpOperators,
        full_state: &[f64],
        nonlinear: bool,
        f_int: &mut [f64],
        scratch: &mut RowScratch,
    ) {
        let (grads, disp) = op.kinematics(full_state);
        let strains = midplane_strains(
            &grads,
            &disp,
            self.layout.inv_r,
            self.layout.f_r,
            self.layout.f_theta,
            nonlinear,
        )
        .expect("validated f_theta");
        let res = stress_resultants(&strains, &self.matrices);
        for (k, terms) in self.layout.membrane.iter().enumerate() {
            self.prepare_row(op, terms, &mut scratch.membrane[k]);
        }
        if nonlinear {
            let (g1, g2) = crate::shell::von_karman_rotations(
                &grads,
                &disp,
                self.layout.inv_r,
                self.layout.f_r,
                self.layout.f_theta,
            );
            for (k, terms) in self.layout.g.iter().enumerate() {
                self.prepare_row(op, terms, &mut scratch.g[k]);
            }
            scratch.membrane[0].append_scaled(&scratch.g[0], g1);
            scratch.membrane[1].append_scaled(&scratch.g[1], g2);
            scratch.membrane[2].append_scaled(&scratch.g[0], g2);
            scratch.membrane[2].append_scaled(&scratch.g[1], g1);
        }
        for (k, terms) in self.layout.bending.iter().enumerate() {
            self.prepare_row(op, terms, &mut scratch.bending[k]);
        }
        let wt = op.weight;
        for k in 0..3 {
            scratch.membrane[k].scatter(wt * res.n[k], f_int);
            scratch.bending[k].scatter(wt * res.m[k], f_int);
        }
    }

    fn accumulate_shear_force(
        &self,
        op: &QpOperators,
        full_state: &[f64],
        f_int: &mut [f64],
        scratch: &mut RowScratch,
    ) {
        let (grads, disp) = op.kinematics(full_state);
        let strains = midplane_strains(
            &grads,
            &disp,
            self.layout.inv_r,
            self.layout.f_r,
            self.layout.f_theta,
            true,
        )
        .expect("validated f_theta");
        let res = stress_resultants(&strains, &self.matrices);
        for (k, terms) in self.layout.shear.iter().enumerate() {
            self.prepare_row(op, terms, &mut scratch.shear[k]);
            scratch.shear[k].scatter(op.weight * res.q[k], f_int);
        }
    }
}

/// Shared mutable matrix for row-striped parallel assembly. Tasks write
/// disjoint row ranges, which keeps both dense and banded row storage free
/// of overlap.
struct SharedMatrix(*mut SystemMatrix);
unsafe impl Sync for SharedMatrix {}
impl SharedMatrix {
    fn get(&self) -> *mut SystemMatrix {
        self.0
    }
}

#[derive(Debug, Default, Clone)]
struct PreparedRow {
    idx: Vec<u32>,
    w: Vec<f64>,
}

impl PreparedRow {
    fn append_scaled(&mut self, other: &PreparedRow, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.idx.extend_from_slice(&other.idx);
        self.w.extend(other.w.iter().map(|w| w * scale));
    }

    fn scatter(&self, scale: f64, out: &mut [f64]) {
        for (&i, &w) in self.idx.iter().zip(&self.w) {
            out[i as usize] += scale * w;
        }
    }
}

#[derive(Debug, Default)]
struct RowScratch {
    membrane: [PreparedRow; 3],
    bending: [PreparedRow; 3],
    g: [PreparedRow; 2],
    shear: [PreparedRow; 2],
}

#[inline]
fn outer_product(
    row_i: &PreparedRow,
    row_j: &PreparedRow,
    coeff: f64,
    mat: &mut SystemMatrix,
    lo: usize,
    hi: usize,
) {
    for (&i, &wi) in row_i.idx.iter().zip(&row_i.w) {
        let i = i as usize;
        if i < lo || i >= hi {
            continue;
        }
        let c = coeff * wi;
        for (&j, &wj) in row_j.idx.iter().zip(&row_j.w) {
            mat.add(i, j as usize, c * wj);
        }
    }
}
