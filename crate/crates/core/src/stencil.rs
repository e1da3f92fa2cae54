//! Ten-point pressure stencils of interior elements.
//!
//! Matrices are stored as `s[l + 1][m + 1]`, the coefficient multiplying the
//! pressure at `(i + l, j + m)`.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{PermeabilityField, SchurBlocks};
use crate::error::AssemblyError;
use crate::mesh::{HierMesh, SubdomainGeometry};
use crate::reference::{coefficient_table, Mat2, Orientation};

pub type Stencil = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StencilSet {
    pub a: [[f64; 3]; 3],
    pub s_uu: Stencil,
    pub s_ud: Stencil,
    pub s_du: Stencil,
    pub s_dd: Stencil,
}

pub fn stencil_coeffs(geom: &SubdomainGeometry, k: &Mat2) -> StencilSet {
    let a = coefficient_table(&geom.up_b, geom.jac, k);
    let col = |m: usize| a[0][m] + a[1][m] + a[2][m];
    let row = |l: usize| a[l][0] + a[l][1] + a[l][2];
    let center = a[0][0] + a[0][1] + a[0][2] + a[1][1] + a[1][2] + a[2][2];

    let mut s_uu = [[0.0; 3]; 3];
    let at = |s: &mut Stencil, l: isize, m: isize, v: f64| s[(l + 1) as usize][(m + 1) as usize] = v;
    at(&mut s_uu, 0, 1, 3.0 * a[1][2]);
    at(&mut s_uu, 1, 1, 3.0 * a[0][2]);
    at(&mut s_uu, -1, 0, 3.0 * a[0][1]);
    at(&mut s_uu, 0, 0, 6.0 * center);
    at(&mut s_uu, 1, 0, 3.0 * a[0][1]);
    at(&mut s_uu, -1, -1, 3.0 * a[0][2]);
    at(&mut s_uu, 0, -1, 3.0 * a[1][2]);

    let mut s_ud = [[0.0; 3]; 3];
    at(&mut s_ud, 0, 0, -6.0 * col(1));
    at(&mut s_ud, 1, 0, -6.0 * row(0));
    at(&mut s_ud, 0, -1, -6.0 * col(2));

    let mut s_du = [[0.0; 3]; 3];
    at(&mut s_du, 0, 1, -6.0 * col(2));
    at(&mut s_du, -1, 0, -6.0 * row(0));
    at(&mut s_du, 0, 0, -6.0 * col(1));

    StencilSet {
        a,
        s_uu,
        s_ud,
        s_du,
        s_dd: s_uu,
    }
}

/// Stencil set of every subdomain where the permeability is constant.
pub fn build_stencils(mesh: &HierMesh, perm: &PermeabilityField) -> Vec<Option<StencilSet>> {
    (0..mesh.num_subdomains())
        .into_par_iter()
        .map(|k| perm.constant_on(k).map(|kt| stencil_coeffs(&mesh.geometry[k], &kt)))
        .collect()
}

/// The predicted nonzeros `(local element, value)` of an interior row.
fn predicted_row(mesh: &HierMesh, st: &StencilSet, elem: usize) -> Vec<(usize, f64)> {
    let el = mesh.element_label(elem);
    let (own, other, s_own, s_other) = match el.orientation {
        Orientation::Up => (Orientation::Up, Orientation::Down, &st.s_uu, &st.s_ud),
        Orientation::Down => (Orientation::Down, Orientation::Up, &st.s_dd, &st.s_du),
    };
    let mut out = Vec::with_capacity(10);
    for (s, o) in [(s_own, own), (s_other, other)] {
        for l in -1isize..=1 {
            for m in -1isize..=1 {
                let v = s[(l + 1) as usize][(m + 1) as usize];
                if v == 0.0 {
                    continue;
                }
                let (i, j) = (el.i as isize + l, el.j as isize + m);
                let loc = mesh
                    .local_element_index(i as usize, j as usize, o)
                    .expect("interior element has all stencil neighbors");
                out.push((loc, v));
            }
        }
    }
    out
}

/// `M P` using stencils on interior elements and stored rows elsewhere.
pub fn apply_m_stencil(
    mesh: &HierMesh,
    stencils: &[Option<StencilSet>],
    blocks: &SchurBlocks,
    p: &DVector<f64>,
) -> Result<DVector<f64>, AssemblyError> {
    if let Some(k) = stencils.iter().position(|s| s.is_none()) {
        return Err(AssemblyError::VariablePermeability(k));
    }
    let ne = mesh.elements_per_subdomain();
    let parts: Vec<Vec<f64>> = (0..mesh.num_subdomains())
        .into_par_iter()
        .map(|k| {
            let st = stencils[k].as_ref().unwrap();
            let pk = &p.as_slice()[k * ne..(k + 1) * ne];
            let m = &blocks.blocks[k].m;
            (0..ne)
                .map(|loc| {
                    let elem = k * ne + loc;
                    if mesh.is_interior(elem) {
                        predicted_row(mesh, st, elem).iter().map(|&(c, v)| v * pk[c]).sum()
                    } else {
                        let row = m.row(loc);
                        row.col_indices().iter().zip(row.values()).map(|(&c, &v)| v * pk[c]).sum()
                    }
                })
                .collect()
        })
        .collect();
    Ok(DVector::from_iterator(mesh.num_elements(), parts.into_iter().flatten()))
}

/// Outcome of comparing assembled rows with stencil predictions.
#[derive(Debug, Clone, Serialize)]
pub struct StencilReport {
    pub rows_checked: usize,
    pub max_relative: f64,
    /// `(subdomain, i, j, orientation)` of the worst row.
    pub worst: Option<(usize, usize, usize, Orientation)>,
}

/// Compare every interior row of the assembled `M` with its stencil.
pub fn validate_stencils(
    mesh: &HierMesh,
    stencils: &[Option<StencilSet>],
    blocks: &SchurBlocks,
) -> Result<StencilReport, AssemblyError> {
    if let Some(k) = stencils.iter().position(|s| s.is_none()) {
        return Err(AssemblyError::VariablePermeability(k));
    }
    let ne = mesh.elements_per_subdomain();
    let mut report = StencilReport {
        rows_checked: 0,
        max_relative: 0.0,
        worst: None,
    };
    for k in 0..mesh.num_subdomains() {
        let st = stencils[k].as_ref().unwrap();
        let m = &blocks.blocks[k].m;
        for loc in 0..ne {
            let elem = k * ne + loc;
            if !mesh.is_interior(elem) {
                continue;
            }
            let predicted = predicted_row(mesh, st, elem);
            let row = m.row(loc);
            let mut dense: Vec<(usize, f64, f64)> = predicted.iter().map(|&(c, v)| (c, v, 0.0)).collect();
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                match dense.iter_mut().find(|e| e.0 == c) {
                    Some(e) => e.2 += v,
                    None => dense.push((c, 0.0, v)),
                }
            }
            let scale = dense.iter().map(|e| e.2.abs()).fold(0.0, f64::max);
            let diff = dense.iter().map(|e| (e.1 - e.2).abs()).fold(0.0, f64::max);
            let rel = if scale > 0.0 { diff / scale } else { diff };
            report.rows_checked += 1;
            if rel > report.max_relative || report.worst.is_none() {
                let el = mesh.element_label(elem);
                if rel > report.max_relative {
                    report.max_relative = rel;
                }
                report.worst = Some((k, el.i, el.j, el.orientation));
            }
        }
    }
    Ok(report)
}

fn fmt_matrix(out: &mut String, name: &str, s: &Stencil) {
    writeln!(out, "  {name}").unwrap();
    for m in [1isize, 0, -1] {
        out.push_str("   ");
        for l in [-1isize, 0, 1] {
            write!(out, " {:>22.14e}", s[(l + 1) as usize][(m + 1) as usize]).unwrap();
        }
        out.push('\n');
    }
}

/// Aligned text dump of all stencil sets, 15 significant digits.
pub fn dump(stencils: &[Option<StencilSet>]) -> String {
    let mut out = String::new();
    for (k, st) in stencils.iter().enumerate() {
        writeln!(out, "subdomain {k}").unwrap();
        let Some(st) = st else {
            writeln!(out, "  variable permeability: no stencil").unwrap();
            continue;
        };
        writeln!(out, "  a").unwrap();
        for row in &st.a {
            out.push_str("   ");
            for v in row {
                write!(out, " {v:>22.14e}").unwrap();
            }
            out.push('\n');
        }
        fmt_matrix(&mut out, "S_UU", &st.s_uu);
        fmt_matrix(&mut out, "S_UD", &st.s_ud);
        fmt_matrix(&mut out, "S_DU", &st.s_du);
        fmt_matrix(&mut out, "S_DD", &st.s_dd);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_system, schur_blocks, Permeability};
    use crate::mesh::{BoundaryKind, BoundaryMarker, CoarseMesh};
    use crate::reference::{ref_basis, ref_vertices, Vec2, SQRT3};
    use proptest::prelude::*;

    fn single(v: [Vec2; 3]) -> CoarseMesh {
        let markers = (0..3)
            .map(|i| BoundaryMarker {
                v: [i, (i + 1) % 3],
                kind: BoundaryKind::Dirichlet,
            })
            .collect();
        CoarseMesh::new(v.to_vec(), vec![[0, 1, 2]], markers).unwrap()
    }

    fn run(v: [Vec2; 3], k: Mat2, level: u32) -> (HierMesh, Vec<Option<StencilSet>>, SchurBlocks) {
        let mesh = HierMesh::refine(single(v), level).unwrap();
        let perm = PermeabilityField::new(&mesh, &Permeability::Uniform(k)).unwrap();
        let sb = schur_blocks(&assemble_system(&mesh, &perm));
        let st = build_stencils(&mesh, &perm);
        (mesh, st, sb)
    }

    fn sum(s: &Stencil) -> f64 {
        s.iter().flatten().sum()
    }

    #[test]
    fn reference_triangle_table() {
        let r = ref_vertices();
        let mesh = HierMesh::refine(single(r), 0).unwrap();
        let st = stencil_coeffs(&mesh.geometry[0], &Mat2::identity());
        // three-point interior Gauss rule, exact for quadratics
        let pts = [(1.0 / 6.0, 1.0 / 6.0), (2.0 / 3.0, 1.0 / 6.0), (1.0 / 6.0, 2.0 / 3.0)];
        for l in 0..3 {
            for m in 0..3 {
                let q: f64 = pts
                    .iter()
                    .map(|&(u, v)| {
                        let x = r[0] + (r[1] - r[0]) * u + (r[2] - r[0]) * v;
                        ref_basis(l, x).dot(&ref_basis(m, x))
                    })
                    .sum::<f64>()
                    * SQRT3
                    / 3.0;
                assert!((st.a[l][m] - q / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn structure_and_scaling() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.3), Vec2::new(0.4, 1.5)];
        let mesh = HierMesh::refine(single(v), 2).unwrap();
        let k = Mat2::new(2.0, 1.0, 1.0, 2.0);
        let st = stencil_coeffs(&mesh.geometry[0], &k);
        let nz: Vec<(usize, usize)> = (0..3)
            .flat_map(|l| (0..3).map(move |m| (l, m)))
            .filter(|&(l, m)| st.s_ud[l][m] != 0.0)
            .collect();
        assert_eq!(nz, vec![(1, 0), (1, 1), (2, 1)]);
        let st2 = stencil_coeffs(&mesh.geometry[0], &(k * 2.0));
        for l in 0..3 {
            for m in 0..3 {
                assert_eq!(st2.a[l][m], 2.0 * st.a[l][m]);
                assert_eq!(st2.s_uu[l][m], 2.0 * st.s_uu[l][m]);
                assert_eq!(st2.s_ud[l][m], 2.0 * st.s_ud[l][m]);
            }
        }
        assert_eq!(st.s_dd, st.s_uu);
    }

    #[test]
    fn equilateral_identity_validates() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.5, 3f64.sqrt() / 2.0)];
        let (mesh, st, sb) = run(v, Mat2::identity(), 3);
        let rep = validate_stencils(&mesh, &st, &sb).unwrap();
        assert!(rep.rows_checked > 0);
        assert!(rep.max_relative <= 1e-12, "{rep:?}");
    }

    #[test]
    fn skewed_full_tensor_validates() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.4), Vec2::new(2.6, 0.9)];
        let (mesh, st, sb) = run(v, Mat2::new(2.0, 1.0, 1.0, 2.0), 3);
        let rep = validate_stencils(&mesh, &st, &sb).unwrap();
        assert!(rep.max_relative <= 1e-12, "{rep:?}");
    }

    #[test]
    fn level_zero_uses_stored_rows() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let (mesh, st, sb) = run(v, Mat2::identity(), 0);
        assert!(!mesh.is_interior(0));
        let p = DVector::from_element(1, 2.5);
        let y = apply_m_stencil(&mesh, &st, &sb, &p).unwrap();
        assert_eq!(y, sb.m_mul(&p));
    }

    #[test]
    fn refinement_invariance() {
        let v = [Vec2::new(0.1, 0.0), Vec2::new(1.3, 0.2), Vec2::new(0.5, 0.9)];
        let k = Mat2::new(1.5, -0.3, -0.3, 0.7);
        let a = HierMesh::refine(single(v), 2).unwrap();
        let b = HierMesh::refine(single(v), 5).unwrap();
        let sa = stencil_coeffs(&a.geometry[0], &k);
        let sb = stencil_coeffs(&b.geometry[0], &k);
        assert_eq!(sa.a, sb.a);
        assert_eq!(sa.s_uu, sb.s_uu);
        assert_eq!(sa.s_ud, sb.s_ud);
        assert_eq!(sa.s_du, sb.s_du);
    }

    #[test]
    fn dump_has_fifteen_digits() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let (_, st, _) = run(v, Mat2::identity(), 2);
        let text = dump(&st);
        assert!(text.contains("S_UU"));
        let first = text.lines().nth(2).unwrap().split_whitespace().next().unwrap();
        let mantissa = first.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
        assert_eq!(mantissa.len(), 15);
    }

    #[test]
    fn variable_permeability_is_refused() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let mesh = HierMesh::refine(single(v), 2).unwrap();
        let f = Permeability::Field(std::sync::Arc::new(|x: Vec2| Mat2::identity() * (1.0 + x.x)));
        let perm = PermeabilityField::new(&mesh, &f).unwrap();
        let st = build_stencils(&mesh, &perm);
        let sb = schur_blocks(&assemble_system(&mesh, &perm));
        assert!(matches!(
            validate_stencils(&mesh, &st, &sb),
            Err(AssemblyError::VariablePermeability(0))
        ));
    }

    fn spd() -> impl Strategy<Value = Mat2> {
        (0.1f64..5.0, 0.1f64..5.0, -1.0f64..1.0).prop_map(|(a, b, r)| {
            let c = r * (a * b).sqrt() * 0.95;
            Mat2::new(a, c, c, b)
        })
    }

    fn triangle() -> impl Strategy<Value = [Vec2; 3]> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
            .prop_map(|(a, b, c, d, e, f)| [Vec2::new(a, b), Vec2::new(c, d), Vec2::new(e, f)])
            .prop_filter("nondegenerate", |v| {
                let area = crate::reference::signed_area(*v).abs();
                let d2 = (v[1] - v[0]).norm_squared().max((v[2] - v[1]).norm_squared()).max((v[0] - v[2]).norm_squared());
                area > 0.05 * d2
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn symmetric_zero_sum_point_symmetric(v in triangle(), k in spd()) {
            let mesh = HierMesh::refine(single(v), 1).unwrap();
            let st = stencil_coeffs(&mesh.geometry[0], &k);
            for l in 0..3 {
                for m in 0..3 {
                    prop_assert_eq!(st.a[l][m], st.a[m][l]);
                    prop_assert_eq!(st.s_uu[l][m], st.s_uu[2 - l][2 - m]);
                }
            }
            let big = st.s_uu.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
            prop_assert!((sum(&st.s_uu) + sum(&st.s_ud)).abs() <= 1e-13 * big);
            prop_assert!((sum(&st.s_dd) + sum(&st.s_du)).abs() <= 1e-13 * big);
        }

        #[test]
        fn stencil_matvec_matches_sparse(v in triangle(), k in spd(), seed in 0u64..1000) {
            let (mesh, st, sb) = run(v, k, 3);
            let p = DVector::from_fn(mesh.num_elements(), |i, _| ((i as u64 * 7919 + seed) % 101) as f64 / 50.0 - 1.0);
            let a = apply_m_stencil(&mesh, &st, &sb, &p).unwrap();
            let b = sb.m_mul(&p);
            prop_assert!((&a - &b).norm() <= 1e-12 * b.norm().max(1e-300));
            let rep = validate_stencils(&mesh, &st, &sb).unwrap();
            prop_assert!(rep.max_relative <= 1e-12);
        }
    }
}
