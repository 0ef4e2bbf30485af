//! Forward-model checks against brute-force routes that share no code with
//! the library's B-matrix formulation.

use elastrec::fem::{
    self, element_stiffness, element_strain, solve_forward, solve_patterns, ForwardModel, LoadCase, MaterialField,
};
use elastrec::mesh::{generate_plate, signed_volume, Face, PlateSpec, TetMesh};
use elastrec::{Error, Point3};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape-function coefficients by Gaussian elimination on the 4x4 system
/// `[1 x y z] c = e_a`. Returns grad N_a for each node.
fn brute_gradients(p: &[Point3; 4]) -> [[f64; 3]; 4] {
    let mut grads = [[0.0; 3]; 4];
    for a in 0..4 {
        let mut m = [[0.0; 5]; 4];
        for r in 0..4 {
            m[r] = [1.0, p[r][0], p[r][1], p[r][2], if r == a { 1.0 } else { 0.0 }];
        }
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
                .unwrap();
            m.swap(col, pivot);
            for r in 0..4 {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..5 {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        for k in 0..3 {
            grads[a][k] = m[k + 1][4] / m[k + 1][k + 1];
        }
    }
    grads
}

/// `K[3a+i, 3b+k] = V * sum_jl dN_a/dx_j C_ijkl dN_b/dx_l` with the full
/// isotropic tensor `C_ijkl = lambda d_ij d_kl + mu (d_ik d_jl + d_il d_jk)`.
fn tensor_stiffness(p: &[Point3; 4], e: f64, nu: f64) -> DMatrix<f64> {
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let c = |i, j, k, l| lambda * delta(i, j) * delta(k, l) + mu * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k));
    let g = brute_gradients(p);
    let v = signed_volume(p).abs();
    let mut out = DMatrix::zeros(12, 12);
    for a in 0..4 {
        for b in 0..4 {
            for i in 0..3 {
                for k in 0..3 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        for l in 0..3 {
                            s += g[a][j] * c(i, j, k, l) * g[b][l];
                        }
                    }
                    out[(3 * a + i, 3 * b + k)] = v * s;
                }
            }
        }
    }
    out
}

fn unit_tet() -> [Point3; 4] {
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn random_tet(rng: &mut ChaCha8Rng) -> [Point3; 4] {
    loop {
        let mut p = [[0.0; 3]; 4];
        for q in &mut p {
            for c in q.iter_mut() {
                *c = rng.random_range(-5.0..5.0);
            }
        }
        let v = signed_volume(&p);
        if v.abs() > 0.5 {
            if v < 0.0 {
                p.swap(2, 3);
            }
            return p;
        }
    }
}

fn rel_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max()
}

#[test]
fn unit_tet_matches_tensor_oracle() {
    let k = element_stiffness(&unit_tet(), 1.0, 0.4).unwrap();
    let oracle = tensor_stiffness(&unit_tet(), 1.0, 0.4);
    let k = DMatrix::from_fn(12, 12, |r, c| k[(r, c)]);
    assert!(rel_max_diff(&k, &oracle) < 1e-13);
    // Frozen spot values: lambda = 0.4/(1.4*0.2), mu = 1/2.8, V = 1/6.
    // K[0,0] = V * (lambda + 3 mu) for node 0 with grad (-1,-1,-1) in x-x.
    let lambda = 0.4 / (1.4 * 0.2);
    let mu = 1.0 / 2.8;
    assert!((k[(0, 0)] - (lambda + 2.0 * mu + 2.0 * mu) / 6.0).abs() < 1e-14);
    // Node 1 (grad (1,0,0)) x-x: V * (lambda + 2 mu).
    assert!((k[(3, 3)] - (lambda + 2.0 * mu) / 6.0).abs() < 1e-14);
}

#[test]
fn random_tets_symmetric_rank_six_and_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let p = random_tet(&mut rng);
        let e = rng.random_range(1.0..200.0);
        let k = element_stiffness(&p, e, 0.4).unwrap();
        let kd = DMatrix::from_fn(12, 12, |r, c| k[(r, c)]);
        assert!(rel_max_diff(&kd, &tensor_stiffness(&p, e, 0.4)) < 1e-10);
        assert!(rel_max_diff(&kd.transpose(), &kd) < 1e-12);
        let eig = SymmetricEigen::new(kd.clone());
        let top = eig.eigenvalues.abs().max();
        let zero = eig.eigenvalues.iter().filter(|l| l.abs() <= 1e-9 * top).count();
        assert_eq!(zero, 6, "eigenvalues {:?}", eig.eigenvalues);
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9 * top));
        for axis in 0..3 {
            let t = DMatrix::from_fn(12, 1, |r, _| if r % 3 == axis { 1.0 } else { 0.0 });
            assert!((&kd * t).abs().max() <= 1e-9 * top);
        }
    }
}

#[test]
fn element_stiffness_linear_in_modulus() {
    let p = unit_tet();
    let a = element_stiffness(&p, 3.5, 0.3).unwrap();
    let b = element_stiffness(&p, 7.0, 0.3).unwrap();
    assert!((b - 2.0 * a).abs().max() <= 1e-14 * b.abs().max());
}

#[test]
fn element_stiffness_rejects_bad_inputs() {
    let flat = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
    assert!(matches!(element_stiffness(&flat, 1.0, 0.4), Err(Error::DegenerateElement { .. })));
    assert!(matches!(element_stiffness(&unit_tet(), 1.0, 0.5), Err(Error::Config(_))));
    assert!(element_stiffness(&unit_tet(), 0.0, 0.4).is_err());
}

fn plate(nx: usize, ny: usize, nz: usize) -> TetMesh {
    generate_plate(&PlateSpec::new(nx, ny, nz, 10.0)).unwrap()
}

#[test]
fn single_cell_assembly_properties() {
    let mesh = plate(1, 1, 1);
    let material = MaterialField::uniform(6, 35.8, 0.4).unwrap();
    let fixed = mesh.vertices_on_face(Face::XMin);
    let k = fem::assemble(&mesh, &material, &fixed).unwrap();
    assert_eq!(k.dim(), 24);
    assert!(k.asymmetry() < 1e-12);
    for axis in 0..3 {
        let t: Vec<f64> = (0..24).map(|d| if d % 3 == axis { 1.0 } else { 0.0 }).collect();
        let r = k.matvec(&t);
        assert!(r.iter().all(|v| v.abs() <= 1e-9 * k.max_abs()));
    }
    let doubled = fem::assemble(&mesh, &MaterialField::uniform(6, 71.6, 0.4).unwrap(), &fixed).unwrap();
    for (r, c, v) in k.entries() {
        assert!((doubled.get(r, c) - 2.0 * v).abs() <= 1e-14 * k.max_abs());
    }
    assert_eq!(k.fixed_dofs().len(), 12);
}

#[test]
fn plate_dimension_and_empty_fixed_set() {
    let mesh = plate(6, 6, 1);
    let material = MaterialField::uniform(216, 35.8, 0.4).unwrap();
    let k = fem::assemble(&mesh, &material, &mesh.vertices_on_face(Face::XMin)).unwrap();
    assert_eq!(k.dim(), 294);
    assert!(matches!(fem::assemble(&mesh, &material, &[]), Err(Error::Singular(_))));
}

#[test]
fn insufficient_constraints_reported() {
    let mesh = plate(2, 2, 1);
    let material = MaterialField::uniform(24, 10.0, 0.4).unwrap();
    let k = fem::assemble(&mesh, &material, &[0]).unwrap();
    let mut load = LoadCase::zeros("p", mesh.vertex_count());
    load.forces[8][1] = 1.0;
    assert!(matches!(solve_forward(&k, &load), Err(Error::Singular(_))));
}

/// Single tet fixed at three vertices; the reduced system is the 3x3 block
/// of the free vertex, solved here by Cramer's rule.
#[test]
fn single_tet_matches_dense_reduced_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let p = if trial == 0 { unit_tet() } else { random_tet(&mut rng) };
        let mesh = TetMesh::new(p.to_vec(), vec![[0, 1, 2, 3]], elastrec::mesh::Provenance::Loaded).unwrap();
        let material = MaterialField::new(vec![12.5], 0.4).unwrap();
        let k = fem::assemble(&mesh, &material, &[0, 1, 2]).unwrap();
        let mut load = LoadCase::zeros("unit", 4);
        load.forces[3] = [0.3, -1.0, 0.7];
        let u = solve_forward(&k, &load).unwrap();

        let ke = tensor_stiffness(&p, 12.5, 0.4);
        let a = |r: usize, c: usize| ke[(9 + r, 9 + c)];
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let base = [[a(0, 0), a(0, 1), a(0, 2)], [a(1, 0), a(1, 1), a(1, 2)], [a(2, 0), a(2, 1), a(2, 2)]];
        let d = det3(base);
        let f = load.forces[3];
        for i in 0..3 {
            let mut m = base;
            for r in 0..3 {
                m[r][i] = f[r];
            }
            let expected = det3(m) / d;
            assert!(
                (u.u[3][i] - expected).abs() <= 1e-10 * expected.abs().max(1e-30),
                "trial {trial} component {i}: {} vs {expected}",
                u.u[3][i]
            );
        }
        assert_eq!(u.u[0], [0.0; 3]);
        assert_eq!(u.u[1], [0.0; 3]);
        assert_eq!(u.u[2], [0.0; 3]);
    }
}

/// Contact loads at the far end of a plate in three directions.
fn end_contact_loads(mesh: &TetMesh) -> Vec<LoadCase> {
    let (_, hi) = mesh.bounding_box();
    let bottom_end: Vec<usize> = mesh
        .vertices_on_face(Face::ZMin)
        .into_iter()
        .filter(|&v| mesh.vertices()[v][0] == hi[0] && (mesh.vertices()[v][1] - hi[1] / 2.0).abs() <= 10.0)
        .collect();
    assert_eq!(bottom_end.len(), 3);
    [("+y", [0.0, 9.8, 0.0]), ("-y", [0.0, -9.8, 0.0]), ("+x", [9.8, 0.0, 0.0])]
        .into_iter()
        .map(|(id, f)| LoadCase::distributed(id, mesh.vertex_count(), &bottom_end, f))
        .collect()
}

#[test]
fn plate_solves_meet_residual_bound() {
    let mesh = plate(6, 6, 1);
    let material = MaterialField::uniform(216, 35.8, 0.4).unwrap();
    let fixed = mesh.vertices_on_face(Face::XMin);
    assert_eq!(fixed.len(), 14);
    let k = fem::assemble(&mesh, &material, &fixed).unwrap();
    let loads = end_contact_loads(&mesh);
    let fields = solve_patterns(&k, &loads).unwrap();
    assert_eq!(fields.len(), 3);
    for (u, load) in fields.iter().zip(&loads) {
        assert!(k.free_residual(u, load) <= 1e-10 * load.norm());
        for &v in &fixed {
            assert_eq!(u.u[v], [0.0; 3]);
        }
        assert_eq!(*u, solve_forward(&k, load).unwrap());
    }
    // Equal and opposite loads give opposite fields.
    for (a, b) in fields[0].flat().iter().zip(fields[1].flat()) {
        assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn zero_load_duplicate_and_empty_patterns() {
    let mesh = plate(2, 2, 1);
    let material = MaterialField::uniform(24, 35.8, 0.4).unwrap();
    let k = fem::assemble(&mesh, &material, &mesh.vertices_on_face(Face::XMin)).unwrap();
    let zero = LoadCase::zeros("zero", mesh.vertex_count());
    assert!(solve_forward(&k, &zero).unwrap().flat().iter().all(|&c| c == 0.0));
    assert!(solve_patterns(&k, &[]).unwrap().is_empty());
    let mut load = LoadCase::zeros("p", mesh.vertex_count());
    load.forces[2][1] = 1.0;
    let dup = solve_patterns(&k, &[load.clone(), load.clone()]).unwrap();
    assert_eq!(dup[0], dup[1]);
}

#[test]
fn load_on_fixed_vertex_rejected() {
    let mesh = plate(2, 2, 1);
    let material = MaterialField::uniform(24, 35.8, 0.4).unwrap();
    let k = fem::assemble(&mesh, &material, &[0, 3, 6, 9, 12, 15]).unwrap();
    let mut load = LoadCase::zeros("p", mesh.vertex_count());
    load.forces[0][0] = 1.0;
    assert!(matches!(solve_forward(&k, &load), Err(Error::Validation(_))));
}

#[test]
fn uniform_modulus_scaling_inverts_displacement() {
    let mesh = plate(3, 3, 1);
    let fixed = mesh.vertices_on_face(Face::XMin);
    let model = ForwardModel::new(&mesh, 0.4, &fixed).unwrap();
    let loads = end_contact_loads_small(&mesh);
    let base: Vec<f64> = (0..mesh.element_count()).map(|e| 20.0 + e as f64).collect();
    let scaled: Vec<f64> = base.iter().map(|e| 4.0 * e).collect();
    let u1 = model.solve_patterns(&base, &loads).unwrap();
    let u4 = model.solve_patterns(&scaled, &loads).unwrap();
    for (a, b) in u1[0].flat().iter().zip(u4[0].flat()) {
        assert!((a - 4.0 * b).abs() <= 1e-12 * a.abs().max(1e-12));
    }
}

fn end_contact_loads_small(mesh: &TetMesh) -> Vec<LoadCase> {
    let (_, hi) = mesh.bounding_box();
    let end: Vec<usize> = mesh
        .vertices_on_face(Face::XMax)
        .into_iter()
        .filter(|&v| mesh.vertices()[v][2] == 0.0)
        .collect();
    let _ = hi;
    vec![LoadCase::distributed("+y", mesh.vertex_count(), &end, [0.0, 9.8, 0.0])]
}

#[test]
fn fast_path_matches_assembled_system() {
    let mesh = plate(4, 3, 2);
    let fixed = mesh.vertices_on_face(Face::XMin);
    let youngs: Vec<f64> = (0..mesh.element_count()).map(|e| 10.0 + (e % 7) as f64 * 13.0).collect();
    let model = ForwardModel::new(&mesh, 0.4, &fixed).unwrap();
    let loads = end_contact_loads_small(&mesh);
    let fast = model.solve_patterns(&youngs, &loads).unwrap();
    let system = model.assemble(&youngs).unwrap();
    let slow = solve_patterns(&system, &loads).unwrap();
    for (a, b) in fast[0].flat().iter().zip(slow[0].flat()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-9));
    }
}

/// Prescribing `u = (a x, b x, c x)`, which vanishes on the fixed face x = 0,
/// through its equivalent nodal forces must reproduce the field exactly.
#[test]
fn patch_test_reproduces_linear_field() {
    let mesh = plate(2, 2, 2);
    let fixed = mesh.vertices_on_face(Face::XMin);
    let material = MaterialField::uniform(mesh.element_count(), 35.8, 0.4).unwrap();
    let k = fem::assemble(&mesh, &material, &fixed).unwrap();
    let (a, b, c) = (1e-3, -2e-3, 5e-4);
    let exact: Vec<Point3> = mesh.vertices().iter().map(|p| [a * p[0], b * p[0], c * p[0]]).collect();
    let flat: Vec<f64> = exact.iter().flatten().copied().collect();
    let f = k.matvec(&flat);
    let mut load = LoadCase::zeros("patch", mesh.vertex_count());
    for v in 0..mesh.vertex_count() {
        if !fixed.contains(&v) {
            load.forces[v] = [f[3 * v], f[3 * v + 1], f[3 * v + 2]];
        }
    }
    // Interior vertex carries no net force for a constant stress state.
    let centre = PlateSpec::new(2, 2, 2, 10.0).vertex_index(1, 1, 1);
    assert!(load.forces[centre].iter().all(|x| x.abs() <= 1e-12 * load.norm()));
    let u = solve_forward(&k, &load).unwrap();
    let scale = exact.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for (got, want) in u.u.iter().zip(&exact) {
        for i in 0..3 {
            assert!((got[i] - want[i]).abs() <= 1e-8 * scale);
        }
    }
    let reference = [a, 0.0, 0.0, b, 0.0, c];
    for e in 0..mesh.element_count() {
        let strain = element_strain(&mesh, e, &u).unwrap();
        for i in 0..6 {
            assert!((strain[i] - reference[i]).abs() <= 1e-8 * a.abs(), "element {e}: {strain:?}");
        }
    }
}

#[test]
fn reciprocity_of_unit_loads() {
    let mesh = plate(6, 6, 1);
    let fixed = mesh.vertices_on_face(Face::XMin);
    let youngs: Vec<f64> = (0..216).map(|e| if e % 5 == 0 { 117.6 } else { 35.8 }).collect();
    let model = ForwardModel::new(&mesh, 0.4, &fixed).unwrap();
    let factor = model.factorize(&youngs).unwrap();
    let dofs = [(6 * 3 + 1), (48 * 3), (97 * 3 + 2), (30 * 3 + 1), (55 * 3 + 2)];
    let solve_unit = |d: usize| {
        let mut l = LoadCase::zeros("e", mesh.vertex_count());
        l.forces[d / 3][d % 3] = 1.0;
        factor.solve(&l).unwrap().flat()
    };
    for &i in &dofs {
        for &j in &dofs {
            let uij = solve_unit(i)[j];
            let uji = solve_unit(j)[i];
            assert!((uij - uji).abs() <= 1e-10 * uij.abs().max(uji.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_positive_and_linear(
        forces in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 18),
        alpha in -3.0f64..3.0,
    ) {
        let mesh = plate(2, 2, 1);
        let fixed = mesh.vertices_on_face(Face::XMin);
        let model = ForwardModel::new(&mesh, 0.4, &fixed).unwrap();
        let youngs = vec![35.8; mesh.element_count()];
        let mut load = LoadCase::zeros("r", mesh.vertex_count());
        for (v, f) in forces.iter().enumerate() {
            if !model.is_fixed(v) {
                load.forces[v] = *f;
            }
        }
        prop_assume!(load.norm() > 1e-3);
        let factor = model.factorize(&youngs).unwrap();
        let u = factor.solve(&load).unwrap().flat();
        let f: Vec<f64> = load.forces.iter().flatten().copied().collect();
        let work: f64 = f.iter().zip(&u).map(|(a, b)| a * b).sum();
        prop_assert!(work > 0.0);
        let ua = factor.solve(&load.scaled(alpha)).unwrap().flat();
        for (x, y) in u.iter().zip(&ua) {
            prop_assert!((alpha * x - y).abs() <= 1e-10 * x.abs().max(1e-12));
        }
    }
}

#[test]
fn generated_plates_have_positive_volumes_summing_to_box() {
    for (nx, ny, nz) in [(1, 1, 1), (2, 3, 4), (6, 6, 1), (12, 12, 1), (5, 1, 7)] {
        let h = 2.5;
        let mesh = generate_plate(&PlateSpec::new(nx, ny, nz, h)).unwrap();
        let total: f64 = (0..mesh.element_count()).map(|e| mesh.volume(e)).sum();
        assert!((0..mesh.element_count()).all(|e| mesh.volume(e) > 0.0));
        let expected = (nx * ny * nz) as f64 * h.powi(3);
        assert!((total - expected).abs() <= 1e-10 * expected);
    }
}
