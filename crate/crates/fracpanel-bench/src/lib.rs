//! Shared fixtures for the kernel benchmarks.

use fracpanel_core::assembly::{BcKind, BoundarySpec, FracParams, GlobalSystem, LoadDirection, LoadSpec};
use fracpanel_core::mesh::{build_mesh, PanelGeometry, QuadratureRule};
use fracpanel_core::shell::IsotropicMaterial;

/// Standard clamped panel system at the requested mesh and fractional order.
pub fn panel_system(n: usize, alpha: f64, l_f: f64) -> GlobalSystem {
    let geo = PanelGeometry::new(1.0, 1.0, 0.1, 10.0).unwrap();
    let mesh = build_mesh(geo, n, n).unwrap();
    GlobalSystem::build(
        mesh,
        IsotropicMaterial::with_default_shear(30.0e6, 0.3).unwrap(),
        BoundarySpec::new(BcKind::Cccc),
        LoadSpec {
            q0: 3000.0,
            direction: LoadDirection::PosE3,
        },
        FracParams {
            alpha,
            l_f,
            retain_f_r: false,
        },
        QuadratureRule::SelectiveReduced,
    )
    .unwrap()
}
