//! Material law, shear-deformable shell kinematics and stress resultants.
//!
//! The displacement field is affine through the thickness with independent
//! rotations (`u1 = u0 + x3·theta0`, `u2 = v0 + x3·phi0`, `u3 = w0`), and the
//! membrane strains keep the von Kármán quadratic terms of the transverse
//! gradient. In-plane gradients are fractional; all through-thickness
//! derivatives reduce to classical ones because the fields are affine in
//! `x3`, so the transverse shear strains carry no nonlocal dependence on the
//! rotations.
//!
//! Azimuthal derivative terms are scaled by `1/F_theta`; the companion
//! coefficient `F_r` is far below one for shallow panels and is dropped by
//! default (`f_r = 0`), with the full expressions available for sensitivity
//! checks by passing the computed value.

use crate::error::{Error, Result};
use crate::mesh::dof;
use serde::{Deserialize, Serialize};

/// Rotation magnitude (rad) beyond which the moderate-rotation assumption of
/// the kinematics is considered strained (10–15 degrees).
pub const MODERATE_ROTATION_LIMIT: f64 = 0.26;

// ---------------------------------------------------------------------------
// Material
// ---------------------------------------------------------------------------

/// Isotropic elastic material with a transverse-shear correction factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicMaterial {
    /// Young's modulus (Pa).
    pub e: f64,
    /// Poisson's ratio.
    pub nu: f64,
    /// Shear correction factor (5/6 for homogeneous sections).
    pub k_s: f64,
}

impl IsotropicMaterial {
    pub fn new(e: f64, nu: f64, k_s: f64) -> Result<Self> {
        if !(e > 0.0) {
            return Err(Error::Domain(format!("Young's modulus must be positive, got {e}")));
        }
        if !(nu > -1.0 && nu < 0.5) {
            return Err(Error::Domain(format!(
                "Poisson's ratio must lie in (-1, 0.5), got {nu}"
            )));
        }
        if !(k_s > 0.0) {
            return Err(Error::Domain(format!(
                "shear correction factor must be positive, got {k_s}"
            )));
        }
        Ok(Self { e, nu, k_s })
    }

    /// Standard shear correction 5/6.
    pub fn with_default_shear(e: f64, nu: f64) -> Result<Self> {
        Self::new(e, nu, 5.0 / 6.0)
    }

    pub fn shear_modulus(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }
}

/// Thickness-integrated constitutive matrices: membrane `A`, coupling `B`,
/// bending `D` (3x3 on `(11, 22, 12)`) and transverse shear `S` (2x2 on
/// `(13, 23)`), with the correction factor folded into `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstitutiveMatrices {
    pub a: [[f64; 3]; 3],
    pub b: [[f64; 3]; 3],
    pub d: [[f64; 3]; 3],
    pub s: [[f64; 2]; 2],
}

/// Plane-stress law integrated through a homogeneous thickness `h`:
/// `A = E h/(1-nu^2) [[1,nu,0],[nu,1,0],[0,0,(1-nu)/2]]`, `D = A h^2/12`,
/// `B = 0`, `S = K_s G h I`.
pub fn constitutive_matrices(material: &IsotropicMaterial, h: f64) -> Result<ConstitutiveMatrices> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("thickness must be positive, got {h}")));
    }
    let e = material.e;
    let nu = material.nu;
    let am = e * h / (1.0 - nu * nu);
    let a = [
        [am, am * nu, 0.0],
        [am * nu, am, 0.0],
        [0.0, 0.0, am * (1.0 - nu) / 2.0],
    ];
    let df = h * h / 12.0;
    let d = [
        [a[0][0] * df, a[0][1] * df, 0.0],
        [a[1][0] * df, a[1][1] * df, 0.0],
        [0.0, 0.0, a[2][2] * df],
    ];
    let sg = material.k_s * material.shear_modulus() * h;
    Ok(ConstitutiveMatrices {
        a,
        b: [[0.0; 3]; 3],
        d,
        s: [[sg, 0.0], [0.0, sg]],
    })
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

/// Generalized midplane displacements at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneralizedDisplacements {
    pub u0: f64,
    pub v0: f64,
    pub w0: f64,
    pub theta0: f64,
    pub phi0: f64,
}

impl GeneralizedDisplacements {
    pub fn from_slice(values: &[f64; 5]) -> Self {
        Self {
            u0: values[dof::U0],
            v0: values[dof::V0],
            w0: values[dof::W0],
            theta0: values[dof::THETA0],
            phi0: values[dof::PHI0],
        }
    }

    /// Rotation-magnitude warning for the moderate-rotation kinematics.
    pub fn rotation_warning(&self) -> Option<String> {
        let m = self.theta0.abs().max(self.phi0.abs());
        (m > MODERATE_ROTATION_LIMIT).then(|| {
            format!("rotation magnitude {m:.3} rad exceeds the moderate-rotation range (~{MODERATE_ROTATION_LIMIT} rad)")
        })
    }
}

/// Fractional in-plane gradients of the five generalized displacements at a
/// point: `d1[c] = D^a_x1 field_c`, `d2[c] = D^a_x2 field_c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FracGradients {
    pub d1: [f64; 5],
    pub d2: [f64; 5],
}

/// Midplane strain state: membrane `(e11, e22, g12)`, curvatures
/// `(k11, k22, k12)` and transverse shears `(g13, g23)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MidplaneStrainState {
    pub membrane: [f64; 3],
    pub curvature: [f64; 3],
    pub shear: [f64; 2],
}

/// Effective transverse rotations entering the von Kármán terms:
/// `g1 = D^a_x1 w0` and `g2 = D^a_x2 w0 / F_theta + (F_r/F_theta) w0/R - v0/R`.
pub fn von_karman_rotations(
    grads: &FracGradients,
    disp: &GeneralizedDisplacements,
    inv_r: f64,
    f_r: f64,
    f_theta: f64,
) -> (f64, f64) {
    let g1 = grads.d1[dof::W0];
    let g2 = grads.d2[dof::W0] / f_theta + (f_r / f_theta) * disp.w0 * inv_r - disp.v0 * inv_r;
    (g1, g2)
}

/// Evaluates the midplane strain state from fractional gradients and local
/// displacement values.
///
/// With `nonlinear` set, the von Kármán quadratic terms are retained with
/// their brackets evaluated at the midplane (the `x3`-dependent rotation
/// contribution inside the brackets is dropped, consistent with the
/// shallow-shell ordering).
pub fn midplane_strains(
    grads: &FracGradients,
    disp: &GeneralizedDisplacements,
    inv_r: f64,
    f_r: f64,
    f_theta: f64,
    nonlinear: bool,
) -> Result<MidplaneStrainState> {
    if !(f_theta > 0.0) {
        return Err(Error::Domain(format!(
            "f_theta must be positive, got {f_theta}"
        )));
    }
    let (g1, g2) = von_karman_rotations(grads, disp, inv_r, f_r, f_theta);
    let nl = if nonlinear { 1.0 } else { 0.0 };
    let ft = f_theta;
    let fr = f_r;

    let e11 = grads.d1[dof::U0] + nl * 0.5 * g1 * g1;
    let e22 = grads.d2[dof::V0] / ft + disp.w0 * inv_r - (fr / ft) * (disp.phi0 + disp.v0 * inv_r)
        + nl * 0.5 * g2 * g2;
    let g12 = grads.d1[dof::V0] + grads.d2[dof::U0] / ft - (fr / ft) * disp.theta0 + nl * g1 * g2;

    let k11 = grads.d1[dof::THETA0];
    let k22 = grads.d2[dof::PHI0] / ft - (fr / ft) * disp.phi0 * inv_r;
    let k12 = grads.d1[dof::PHI0] + grads.d2[dof::THETA0] / ft;

    let g13 = g1 + disp.theta0;
    let g23 = disp.phi0 + g2;

    Ok(MidplaneStrainState {
        membrane: [e11, e22, g12],
        curvature: [k11, k22, k12],
        shear: [g13, g23],
    })
}

// ---------------------------------------------------------------------------
// Resultants and energy density
// ---------------------------------------------------------------------------

/// Thickness-integrated stress and moment resultants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StressResultants {
    /// `(N11, N22, N12)` — force/length.
    pub n: [f64; 3],
    /// `(M11, M22, M12)` — moment/length.
    pub m: [f64; 3],
    /// `(Q13, Q23)` — force/length, shear correction included.
    pub q: [f64; 2],
}

fn mat3_mul(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `{N} = A e0 + B k`, `{M} = B e0 + D k`, `{Q} = S g`.
pub fn stress_resultants(
    strains: &MidplaneStrainState,
    matrices: &ConstitutiveMatrices,
) -> StressResultants {
    let ae = mat3_mul(&matrices.a, &strains.membrane);
    let bk = mat3_mul(&matrices.b, &strains.curvature);
    let be = mat3_mul(&matrices.b, &strains.membrane);
    let dk = mat3_mul(&matrices.d, &strains.curvature);
    let q = [
        matrices.s[0][0] * strains.shear[0] + matrices.s[0][1] * strains.shear[1],
        matrices.s[1][0] * strains.shear[0] + matrices.s[1][1] * strains.shear[1],
    ];
    StressResultants {
        n: [ae[0] + bk[0], ae[1] + bk[1], ae[2] + bk[2]],
        m: [be[0] + dk[0], be[1] + dk[1], be[2] + dk[2]],
        q,
    }
}

/// Pointwise strain-energy density per unit midplane area,
/// `1/2 (N·e0 + M·k + Q·g)`.
pub fn energy_density(strains: &MidplaneStrainState, resultants: &StressResultants) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        acc += resultants.n[i] * strains.membrane[i] + resultants.m[i] * strains.curvature[i];
    }
    for i in 0..2 {
        acc += resultants.q[i] * strains.shear[i];
    }
    0.5 * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper_material() -> IsotropicMaterial {
        IsotropicMaterial::with_default_shear(30.0e6, 0.3).unwrap()
    }

    /// Classical von Kármán shallow-shell strains, coded independently of
    /// `midplane_strains` for the local limit cross-check.
    fn classical_strains(
        grads: &FracGradients,
        disp: &GeneralizedDisplacements,
        inv_r: f64,
        nonlinear: bool,
    ) -> MidplaneStrainState {
        let nl = if nonlinear { 1.0 } else { 0.0 };
        let wx = grads.d1[dof::W0];
        let wy = grads.d2[dof::W0] - disp.v0 * inv_r;
        MidplaneStrainState {
            membrane: [
                grads.d1[dof::U0] + nl * 0.5 * wx * wx,
                grads.d2[dof::V0] + disp.w0 * inv_r + nl * 0.5 * wy * wy,
                grads.d1[dof::V0] + grads.d2[dof::U0] + nl * wx * wy,
            ],
            curvature: [
                grads.d1[dof::THETA0],
                grads.d2[dof::PHI0],
                grads.d1[dof::PHI0] + grads.d2[dof::THETA0],
            ],
            shear: [wx + disp.theta0, disp.phi0 + wy],
        }
    }

    fn random_like(seed: u64) -> (FracGradients, GeneralizedDisplacements) {
        // Small deterministic pseudo-random values.
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let mut d1 = [0.0; 5];
        let mut d2 = [0.0; 5];
        for k in 0..5 {
            d1[k] = 0.01 * next();
            d2[k] = 0.01 * next();
        }
        let disp = GeneralizedDisplacements {
            u0: 0.01 * next(),
            v0: 0.01 * next(),
            w0: 0.01 * next(),
            theta0: 0.01 * next(),
            phi0: 0.01 * next(),
        };
        (FracGradients { d1, d2 }, disp)
    }

    #[test]
    fn material_validation() {
        assert!(IsotropicMaterial::new(30e6, 0.3, 5.0 / 6.0).is_ok());
        assert!(IsotropicMaterial::new(-1.0, 0.3, 5.0 / 6.0).is_err());
        assert!(IsotropicMaterial::new(30e6, 0.5, 5.0 / 6.0).is_err());
        assert!(IsotropicMaterial::new(30e6, 0.3, 0.0).is_err());
    }

    #[test]
    fn constitutive_matches_plane_stress_closed_form() {
        let m = constitutive_matrices(&paper_material(), 0.1).unwrap();
        assert_relative_eq!(m.a[0][0], 30.0e6 * 0.1 / 0.91, max_relative = 1e-14);
        assert_relative_eq!(m.a[0][0], 3.2967032967033e6, max_relative = 1e-12);
        assert_relative_eq!(m.a[0][1], m.a[0][0] * 0.3, max_relative = 1e-14);
        assert_relative_eq!(m.d[0][0], m.a[0][0] * 0.01 / 12.0, max_relative = 1e-14);
        // Homogeneous isotropic section: no membrane/bending coupling.
        assert_eq!(m.b, [[0.0; 3]; 3]);
        // K_s G h on the shear diagonal.
        let g = 30.0e6 / 2.6;
        assert_relative_eq!(m.s[0][0], 5.0 / 6.0 * g * 0.1, max_relative = 1e-14);

        let m0 = constitutive_matrices(&IsotropicMaterial::with_default_shear(1e6, 0.0).unwrap(), 0.1)
            .unwrap();
        assert_eq!(m0.a[0][1], 0.0);
    }

    #[test]
    fn zero_state_gives_zero_strains() {
        let s = midplane_strains(
            &FracGradients::default(),
            &GeneralizedDisplacements::default(),
            0.1,
            0.0,
            0.9999,
            true,
        )
        .unwrap();
        assert_eq!(s, MidplaneStrainState::default());
    }

    #[test]
    fn rigid_transverse_translation_of_flat_panel_is_strain_free() {
        let disp = GeneralizedDisplacements {
            w0: 0.5,
            ..Default::default()
        };
        let s = midplane_strains(&FracGradients::default(), &disp, 0.0, 0.0, 1.0, true).unwrap();
        assert_eq!(s, MidplaneStrainState::default());
    }

    #[test]
    fn pure_radial_expansion_strains() {
        // w0 = c, everything else zero: only the membrane strain c/R remains;
        // the fractional derivative of a constant vanishes, so g23 = 0.
        let disp = GeneralizedDisplacements {
            w0: 0.02,
            ..Default::default()
        };
        let s = midplane_strains(&FracGradients::default(), &disp, 0.1, 0.0, 0.9995, false).unwrap();
        assert_relative_eq!(s.membrane[1], 0.02 * 0.1, max_relative = 1e-14);
        assert_eq!(s.shear[1], 0.0);
        assert_eq!(s.membrane[0], 0.0);
        assert_eq!(s.curvature, [0.0; 3]);
    }

    #[test]
    fn local_flat_limit_matches_independent_classical_routine() {
        for seed in 0..20 {
            let (grads, disp) = random_like(seed);
            for &(inv_r, nonlinear) in &[(0.0, false), (0.0, true), (0.1, false), (0.1, true)] {
                let got = midplane_strains(&grads, &disp, inv_r, 0.0, 1.0, nonlinear).unwrap();
                let want = classical_strains(&grads, &disp, inv_r, nonlinear);
                for i in 0..3 {
                    assert_relative_eq!(got.membrane[i], want.membrane[i], max_relative = 1e-14);
                    assert_relative_eq!(got.curvature[i], want.curvature[i], max_relative = 1e-14);
                }
                for i in 0..2 {
                    assert_relative_eq!(got.shear[i], want.shear[i], max_relative = 1e-14);
                }
            }
        }
    }

    #[test]
    fn linear_strains_superpose() {
        let (ga, da) = random_like(3);
        let (gb, db) = random_like(11);
        let scale = |g: &FracGradients, d: &GeneralizedDisplacements, c: f64| {
            let mut g2 = *g;
            for k in 0..5 {
                g2.d1[k] *= c;
                g2.d2[k] *= c;
            }
            (
                g2,
                GeneralizedDisplacements {
                    u0: c * d.u0,
                    v0: c * d.v0,
                    w0: c * d.w0,
                    theta0: c * d.theta0,
                    phi0: c * d.phi0,
                },
            )
        };
        let add = |x: &FracGradients, y: &FracGradients, dx: &GeneralizedDisplacements, dy: &GeneralizedDisplacements| {
            let mut g = *x;
            for k in 0..5 {
                g.d1[k] += y.d1[k];
                g.d2[k] += y.d2[k];
            }
            (
                g,
                GeneralizedDisplacements {
                    u0: dx.u0 + dy.u0,
                    v0: dx.v0 + dy.v0,
                    w0: dx.w0 + dy.w0,
                    theta0: dx.theta0 + dy.theta0,
                    phi0: dx.phi0 + dy.phi0,
                },
            )
        };
        let (g2a, d2a) = scale(&ga, &da, 2.0);
        let (gs, ds) = add(&g2a, &gb, &d2a, &db);
        let f = |g: &FracGradients, d: &GeneralizedDisplacements| {
            midplane_strains(g, d, 0.1, 0.0, 0.9995, false).unwrap()
        };
        let sum = f(&gs, &ds);
        let ea = f(&ga, &da);
        let eb = f(&gb, &db);
        for i in 0..3 {
            assert_relative_eq!(
                sum.membrane[i],
                2.0 * ea.membrane[i] + eb.membrane[i],
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn f_theta_must_be_positive() {
        let r = midplane_strains(
            &FracGradients::default(),
            &GeneralizedDisplacements::default(),
            0.0,
            0.0,
            0.0,
            false,
        );
        assert!(r.is_err());
    }

    #[test]
    fn resultants_examples() {
        let mats = constitutive_matrices(&paper_material(), 0.1).unwrap();
        let zero = stress_resultants(&MidplaneStrainState::default(), &mats);
        assert_eq!(zero.n, [0.0; 3]);

        let mut s = MidplaneStrainState::default();
        s.membrane[0] = 1e-3;
        let r = stress_resultants(&s, &mats);
        assert_relative_eq!(r.n[0], mats.a[0][0] * 1e-3, max_relative = 1e-14);
        assert_relative_eq!(r.n[0], 3.2967032967033e3, max_relative = 1e-12);

        let mut s = MidplaneStrainState::default();
        s.curvature[0] = 0.5;
        let r = stress_resultants(&s, &mats);
        assert_relative_eq!(r.m[0], mats.d[0][0] * 0.5, max_relative = 1e-14);
        assert_eq!(r.n[0], 0.0); // B = 0 decoupling
    }

    #[test]
    fn resultants_match_thickness_quadrature() {
        // Integrate the pointwise plane-stress law through the thickness with
        // a 20-point Gauss rule and compare against the closed-form matrices.
        let mat = paper_material();
        let h = 0.1;
        let mats = constitutive_matrices(&mat, h).unwrap();
        let strains = MidplaneStrainState {
            membrane: [1.3e-3, -0.4e-3, 0.7e-3],
            curvature: [0.02, -0.03, 0.011],
            shear: [2.0e-3, -1.0e-3],
        };
        let want = stress_resultants(&strains, &mats);

        // 20-point Gauss–Legendre nodes/weights on (-1, 1).
        let (nodes, weights) = gauss_legendre_20();
        let q = mat.e / (1.0 - mat.nu * mat.nu);
        let c = [
            [q, q * mat.nu, 0.0],
            [q * mat.nu, q, 0.0],
            [0.0, 0.0, mat.e / (2.0 * (1.0 + mat.nu))],
        ];
        let g = mat.shear_modulus();
        let mut n = [0.0; 3];
        let mut m = [0.0; 3];
        let mut qv = [0.0; 2];
        for (z_hat, w) in nodes.iter().zip(&weights) {
            let z = 0.5 * h * z_hat;
            let wz = 0.5 * h * w;
            let eps = [
                strains.membrane[0] + z * strains.curvature[0],
                strains.membrane[1] + z * strains.curvature[1],
                strains.membrane[2] + z * strains.curvature[2],
            ];
            for i in 0..3 {
                let sig = c[i][0] * eps[0] + c[i][1] * eps[1] + c[i][2] * eps[2];
                n[i] += wz * sig;
                m[i] += wz * z * sig;
            }
            qv[0] += wz * mat.k_s * g * strains.shear[0];
            qv[1] += wz * mat.k_s * g * strains.shear[1];
        }
        for i in 0..3 {
            assert_relative_eq!(n[i], want.n[i], max_relative = 1e-10);
            assert_relative_eq!(m[i], want.m[i], max_relative = 1e-10);
        }
        for i in 0..2 {
            assert_relative_eq!(qv[i], want.q[i], max_relative = 1e-10);
        }
    }

    fn gauss_legendre_20() -> ([f64; 20], [f64; 20]) {
        // Nodes/weights by Newton iteration on Legendre polynomials.
        let mut x = [0.0; 20];
        let mut w = [0.0; 20];
        let n = 20;
        for i in 0..n {
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, t);
                let dt = -p / dp;
                t += dt;
                if dt.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre(n, t);
            x[i] = t;
            w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
        }
        (x, w)
    }

    fn legendre(n: usize, x: f64) -> (f64, f64) {
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, dp)
    }

    #[test]
    fn rotation_warning_threshold() {
        let ok = GeneralizedDisplacements {
            theta0: 0.1,
            ..Default::default()
        };
        assert!(ok.rotation_warning().is_none());
        let bad = GeneralizedDisplacements {
            phi0: -0.3,
            ..Default::default()
        };
        assert!(bad.rotation_warning().is_some());
    }

    #[test]
    fn energy_density_is_nonnegative_for_consistent_pairs() {
        let mats = constitutive_matrices(&paper_material(), 0.1).unwrap();
        for seed in 0..10 {
            let (grads, disp) = random_like(seed + 100);
            let s = midplane_strains(&grads, &disp, 0.1, 0.0, 0.9995, false).unwrap();
            let r = stress_resultants(&s, &mats);
            assert!(energy_density(&s, &r) >= 0.0);
        }
    }
}
