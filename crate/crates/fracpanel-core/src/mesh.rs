//! Panel geometry, structured meshing, DOF numbering and horizon maps.
//!
//! Meshes are restricted to uniform structured grids of 4-node bilinear
//! quadrilaterals: the L1 stencils assume uniform spacing and every study
//! uses a rectangular planform. Each node carries the five generalized
//! displacements `(u0, v0, w0, theta0, phi0)` of the shear-deformable shell.
//!
//! Horizon maps are keyed by quadrature point, not node: strains are
//! evaluated at quadrature points in the weak form, so that is where the
//! truncated horizons and the fractional stencils live.

use crate::error::{Error, Result};
use crate::frac::{truncate_horizon, DiscreteFracStencil, FracOperatorSpec};
use serde::{Deserialize, Serialize};

/// Number of generalized displacement components per node.
pub const DOFS_PER_NODE: usize = 5;

/// Component indices inside a node's DOF block.
pub mod dof {
    pub const U0: usize = 0;
    pub const V0: usize = 1;
    pub const W0: usize = 2;
    pub const THETA0: usize = 3;
    pub const PHI0: usize = 4;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Shallow cylindrical panel geometry. `r = f64::INFINITY` encodes a flat
/// plate; the `x1` edges are straight, the `x2` edges are curved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelGeometry {
    /// Extent along `x1` (straight direction).
    pub a: f64,
    /// Extent along `x2` (arc direction).
    pub b: f64,
    /// Thickness.
    pub h: f64,
    /// Radius of curvature (infinite for a plate).
    pub r: f64,
}

impl PanelGeometry {
    pub fn new(a: f64, b: f64, h: f64, r: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && h > 0.0) {
            return Err(Error::Domain(format!(
                "panel extents and thickness must be positive, got a={a}, b={b}, h={h}"
            )));
        }
        if !(r > 0.0) {
            return Err(Error::Domain(format!(
                "radius of curvature must be positive or infinite, got {r}"
            )));
        }
        Ok(Self { a, b, h, r })
    }

    /// Flat-plate constructor.
    pub fn plate(a: f64, b: f64, h: f64) -> Result<Self> {
        Self::new(a, b, h, f64::INFINITY)
    }

    /// `1/R`, zero for a plate.
    pub fn inv_r(&self) -> f64 {
        if self.r.is_finite() {
            1.0 / self.r
        } else {
            0.0
        }
    }

    pub fn is_plate(&self) -> bool {
        !self.r.is_finite()
    }

    /// The shell theory assumes a shallow panel (`h/R` small); callers should
    /// surface this warning when the assumption starts to erode.
    pub fn shallowness_warning(&self) -> Option<String> {
        let ratio = self.h * self.inv_r();
        (ratio > 0.05).then(|| {
            format!("h/R = {ratio:.3} exceeds 0.05; the shallow-shell assumption is strained")
        })
    }
}

// ---------------------------------------------------------------------------
// Structured mesh
// ---------------------------------------------------------------------------

/// Uniform structured quadrilateral mesh of the panel midplane.
///
/// Nodes are numbered row-major with `x1` fastest; element connectivity is
/// counterclockwise.
#[derive(Debug, Clone)]
pub struct StructuredMesh {
    geometry: PanelGeometry,
    n1: usize,
    n2: usize,
    le1: f64,
    le2: f64,
}

/// Builds a uniform `n1 x n2`-element mesh of the panel midplane.
pub fn build_mesh(geometry: PanelGeometry, n1: usize, n2: usize) -> Result<StructuredMesh> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::Domain(format!(
            "element counts must be at least 2, got {n1} x {n2}"
        )));
    }
    Ok(StructuredMesh {
        geometry,
        n1,
        n2,
        le1: geometry.a / n1 as f64,
        le2: geometry.b / n2 as f64,
    })
}

/// Ratio of the nonlocal horizon to the element size in one direction — the
/// mesh-resolution measure for nonlocal FEM convergence.
pub fn dynamic_rate(l_f: f64, element_size: f64) -> Result<f64> {
    if !(l_f > 0.0 && element_size > 0.0) {
        return Err(Error::Domain(format!(
            "dynamic rate needs positive lengths, got l_f={l_f}, element size={element_size}"
        )));
    }
    Ok(l_f / element_size)
}

impl StructuredMesh {
    pub fn geometry(&self) -> &PanelGeometry {
        &self.geometry
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Element sizes `(le1, le2)`.
    pub fn element_size(&self) -> (f64, f64) {
        (self.le1, self.le2)
    }

    pub fn n_nodes(&self) -> usize {
        (self.n1 + 1) * (self.n2 + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn n_dofs(&self) -> usize {
        DOFS_PER_NODE * self.n_nodes()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.n1 && j <= self.n2);
        j * (self.n1 + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let i = node % (self.n1 + 1);
        let j = node / (self.n1 + 1);
        (i as f64 * self.le1, j as f64 * self.le2)
    }

    /// Counterclockwise corner nodes of element `(e1, e2)`.
    pub fn element_nodes(&self, e1: usize, e2: usize) -> [usize; 4] {
        [
            self.node_index(e1, e2),
            self.node_index(e1 + 1, e2),
            self.node_index(e1 + 1, e2 + 1),
            self.node_index(e1, e2 + 1),
        ]
    }

    /// Node closest to the panel center; exact for even element counts.
    pub fn center_node(&self) -> usize {
        self.node_index(self.n1.div_ceil(2), self.n2.div_ceil(2))
    }

    /// True if the node lies on the `x1 = 0` or `x1 = a` edge.
    pub fn on_x1_edge(&self, node: usize) -> bool {
        let i = node % (self.n1 + 1);
        i == 0 || i == self.n1
    }

    /// True if the node lies on the `x2 = 0` or `x2 = b` edge.
    pub fn on_x2_edge(&self, node: usize) -> bool {
        let j = node / (self.n1 + 1);
        j == 0 || j == self.n2
    }

    /// Bilinear interpolation of a nodal field at an arbitrary point.
    pub fn interpolate(&self, nodal: &[f64], x: f64, y: f64) -> f64 {
        let i = ((x / self.le1).floor() as usize).min(self.n1 - 1);
        let j = ((y / self.le2).floor() as usize).min(self.n2 - 1);
        let xi = (x - i as f64 * self.le1) / self.le1;
        let eta = (y - j as f64 * self.le2) / self.le2;
        let [n00, n10, n11, n01] = self.element_nodes(i, j);
        nodal[n00] * (1.0 - xi) * (1.0 - eta)
            + nodal[n10] * xi * (1.0 - eta)
            + nodal[n11] * xi * eta
            + nodal[n01] * (1.0 - xi) * eta
    }
}

// ---------------------------------------------------------------------------
// DOF numbering
// ---------------------------------------------------------------------------

/// Per-node global DOF indices with a constrained set eliminated from the
/// free numbering. Full indices are `node * 5 + component`; free indices
/// number the unconstrained DOFs consecutively.
#[derive(Debug, Clone)]
pub struct DofMap {
    free_index: Vec<Option<u32>>,
    constrained: Vec<bool>,
    n_free: usize,
}

impl DofMap {
    /// Numbers the free DOFs of a mesh given the constrained set.
    pub fn new(mesh: &StructuredMesh, constrained: Vec<bool>) -> Result<Self> {
        if constrained.len() != mesh.n_dofs() {
            return Err(Error::Shape(format!(
                "constraint set has {} entries for {} DOFs",
                constrained.len(),
                mesh.n_dofs()
            )));
        }
        let mut free_index = vec![None; constrained.len()];
        let mut next = 0u32;
        for (k, &fixed) in constrained.iter().enumerate() {
            if !fixed {
                free_index[k] = Some(next);
                next += 1;
            }
        }
        Ok(Self {
            free_index,
            constrained,
            n_free: next as usize,
        })
    }

    /// Unconstrained map (no boundary conditions).
    pub fn unconstrained(mesh: &StructuredMesh) -> Self {
        Self::new(mesh, vec![false; mesh.n_dofs()]).expect("sized constraint set")
    }

    /// Full DOF index of a node component.
    pub fn full(node: usize, component: usize) -> usize {
        node * DOFS_PER_NODE + component
    }

    /// Free equation number of a full DOF index, `None` when constrained.
    pub fn free(&self, full: usize) -> Option<usize> {
        self.free_index[full].map(|i| i as usize)
    }

    pub fn is_constrained(&self, full: usize) -> bool {
        self.constrained[full]
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_full(&self) -> usize {
        self.free_index.len()
    }

    pub fn n_constrained(&self) -> usize {
        self.n_full() - self.n_free
    }

    /// Gathers the free entries of a full-length vector.
    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free);
        for (k, idx) in self.free_index.iter().enumerate() {
            if idx.is_some() {
                out.push(full[k]);
            }
        }
        out
    }

    /// Scatters a free-DOF vector into a full-length vector (constrained
    /// entries zero).
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.free_index.len()];
        for (k, idx) in self.free_index.iter().enumerate() {
            if let Some(i) = idx {
                out[k] = reduced[*i as usize];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Quadrature and horizon map
// ---------------------------------------------------------------------------

/// Quadrature family for the element integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    /// 2x2 Gauss for membrane/bending, single-point for transverse shear.
    /// Mitigates shear locking of the bilinear element.
    #[default]
    SelectiveReduced,
    /// 2x2 Gauss everywhere; kept for locking studies.
    Full,
}

/// One quadrature point with its integration weight (area measure included).
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub element: (usize, usize),
}

/// Truncated horizons and fractional stencils of one quadrature point.
#[derive(Debug, Clone)]
pub struct HorizonStencils {
    pub qp: QuadPoint,
    /// `(l_minus, l_plus)` along `x1`.
    pub horizon1: (f64, f64),
    /// `(l_minus, l_plus)` along `x2`.
    pub horizon2: (f64, f64),
    /// RC-derivative stencil along the `x1` grid line through the point.
    pub sx: DiscreteFracStencil,
    /// RC-derivative stencil along the `x2` grid line through the point.
    pub sy: DiscreteFracStencil,
}

/// Per-quadrature-point horizon data for a whole mesh: the membrane/bending
/// family and the (possibly reduced) transverse-shear family.
#[derive(Debug, Clone)]
pub struct HorizonMap {
    pub membrane: Vec<HorizonStencils>,
    pub shear: Vec<HorizonStencils>,
    pub l_f: f64,
    pub alpha: f64,
    /// Diagnostic notes (e.g. horizon wider than the panel).
    pub notes: Vec<String>,
}

/// Builds stencils for every quadrature point of the mesh, truncating the
/// isotropic nominal horizon `l_f` at the panel edges in both directions.
///
/// A horizon larger than the panel extent is allowed — it simply truncates to
/// the full domain — and is reported in the diagnostic notes.
pub fn build_horizon_map(
    mesh: &StructuredMesh,
    l_f: f64,
    alpha: f64,
    rule: QuadratureRule,
) -> Result<HorizonMap> {
    if !(l_f > 0.0) {
        return Err(Error::Domain(format!("horizon must be positive, got {l_f}")));
    }
    let geo = mesh.geometry();
    let mut notes = Vec::new();
    if l_f >= geo.a || l_f >= geo.b {
        notes.push(format!(
            "horizon l_f = {l_f} reaches the panel extent ({} x {}); interior horizons truncate to the full domain",
            geo.a, geo.b
        ));
    }

    let (le1, le2) = mesh.element_size();
    let gauss = 0.5 / 3.0_f64.sqrt();
    let offsets = [0.5 - gauss, 0.5 + gauss];

    let stencils_at = |x: f64, y: f64, weight: f64, element: (usize, usize)| -> Result<HorizonStencils> {
        let horizon1 = truncate_horizon(x, geo.a, l_f)?;
        let horizon2 = truncate_horizon(y, geo.b, l_f)?;
        let spec1 = FracOperatorSpec::new(alpha, horizon1.0, horizon1.1)?;
        let spec2 = FracOperatorSpec::new(alpha, horizon2.0, horizon2.1)?;
        let sx = DiscreteFracStencil::at_point(mesh.n1() + 1, le1, x, &spec1)?;
        let sy = DiscreteFracStencil::at_point(mesh.n2() + 1, le2, y, &spec2)?;
        Ok(HorizonStencils {
            qp: QuadPoint { x, y, weight, element },
            horizon1,
            horizon2,
            sx,
            sy,
        })
    };

    let mut membrane = Vec::with_capacity(4 * mesh.n_elements());
    let mut shear = Vec::with_capacity(match rule {
        QuadratureRule::SelectiveReduced => mesh.n_elements(),
        QuadratureRule::Full => 4 * mesh.n_elements(),
    });
    for e2 in 0..mesh.n2() {
        for e1 in 0..mesh.n1() {
            let x0 = e1 as f64 * le1;
            let y0 = e2 as f64 * le2;
            for &oy in &offsets {
                for &ox in &offsets {
                    let hs = stencils_at(x0 + ox * le1, y0 + oy * le2, 0.25 * le1 * le2, (e1, e2))?;
                    membrane.push(hs);
                }
            }
            match rule {
                QuadratureRule::SelectiveReduced => {
                    shear.push(stencils_at(x0 + 0.5 * le1, y0 + 0.5 * le2, le1 * le2, (e1, e2))?);
                }
                QuadratureRule::Full => {
                    for &oy in &offsets {
                        for &ox in &offsets {
                            shear.push(stencils_at(
                                x0 + ox * le1,
                                y0 + oy * le2,
                                0.25 * le1 * le2,
                                (e1, e2),
                            )?);
                        }
                    }
                }
            }
        }
    }

    Ok(HorizonMap {
        membrane,
        shear,
        l_f,
        alpha,
        notes,
    })
}
