mod common;

use common::{chain_edges, random_points, rng};
use posemae_core::geom::edges_of;
use posemae_core::loss::{f_adv, l_edge, l_rec, pmd, pmd_reported, PMD_UNIT};
use posemae_core::synth::{generate_figure, FigurePose, FigureShape, FigureSpec};
use posemae_core::tensor::Tensor;

#[test]
fn pmd_of_a_mesh_with_itself_is_zero() {
    let mut r = rng(0);
    let m = random_points(&mut r, 50, 1.0);
    assert_eq!(pmd(&m, &m).unwrap(), 0.0);
}

#[test]
fn uniform_offset_gives_one_reported_unit() {
    let zero = vec![[0.0; 3]; 6890];
    let shifted = vec![[0.01, 0.0, 0.0]; 6890];
    assert_eq!(pmd_reported(&shifted, &zero).unwrap(), 1.0);
    assert_eq!(PMD_UNIT, 1e-4);
}

#[test]
fn pmd_rejects_mismatched_sizes() {
    assert!(pmd(&[[0.0; 3]; 3], &[[0.0; 3]; 4]).is_err());
}

#[test]
fn edge_loss_ignores_common_translation() {
    let mesh = generate_figure(&FigureSpec::default(), &FigureShape::sample(&mut rng(9)), &FigurePose::rest()).unwrap();
    let edges = edges_of(&mesh).unwrap();
    let mut r = rng(1);
    let out = random_points(&mut r, mesh.len(), 0.5);
    let base =
        l_edge(&Tensor::from_points(&out, false), &Tensor::from_points(&mesh.vertices, false), &edges).unwrap().item();
    for t in [[0.3, -0.2, 0.1], [-0.4, 0.0, 0.25]] {
        let moved: Vec<_> = out.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
        let gt_moved: Vec<_> = mesh.vertices.iter().map(|p| [p[0] - t[1], p[1] + t[2], p[2] + t[0]]).collect();
        let l =
            l_edge(&Tensor::from_points(&moved, false), &Tensor::from_points(&gt_moved, false), &edges).unwrap().item();
        assert!((l - base).abs() < 1e-12, "{l} vs {base}");
    }
}

#[test]
fn adversarial_objective_is_inverse_reconstruction() {
    let mut r = rng(2);
    let a = Tensor::from_points(&random_points(&mut r, 30, 0.5), false);
    let b = Tensor::from_points(&random_points(&mut r, 30, 0.5), false);
    let l = l_rec(&a, &b).unwrap().item();
    let f = f_adv(&a, &b, 1e-8).unwrap().item();
    assert!((f - 1.0 / (l + 1e-8)).abs() < 1e-9 * f);
    assert_eq!(l_edge(&a, &a, &chain_edges(30)).unwrap().item(), 0.0);
}
