mod common;

use common::{rng, toy_model, trained_tiny};
use posemae_core::attack::{generate_adversarial, norm_of, AttackConfig, AttackError, AttackMethod, NormKind, Victim};
use posemae_core::loss::pmd;
use posemae_core::synth::{Dataset, Split, Triple};
use rand::Rng;

fn triples(data: &Dataset, n: usize, seed: u64) -> Vec<Triple> {
    let pool = data.split(Split::Seen).to_vec();
    let mut r = rng(seed);
    (0..n).map(|_| pool[r.random_range(0..pool.len())]).collect()
}

#[test]
fn input_gradient_matches_finite_differences() {
    let (_, data, model) = trained_tiny();
    let t = data.split(Split::Seen)[0];
    let (pose, id, gt) =
        (&data.meshes[t.pose].vertices, &data.meshes[t.identity].vertices, &data.meshes[t.gt].vertices);
    let victim = Victim::new(&model, id, gt).unwrap();
    let plan = model.plan(pose, 0.0, false, &mut rng(0)).unwrap();
    let g = victim.input_gradient(pose, &plan, 1e-8).unwrap();
    assert_eq!(g.len(), pose.len());
    let f = |p: &[[f64; 3]]| 1.0 / (pmd(&victim.output(p, &plan).unwrap(), gt).unwrap() + 1e-8);
    let mut r = rng(1);
    let h = 1e-5;
    for _ in 0..5 {
        let (i, c) = (r.random_range(0..pose.len()), r.random_range(0..3));
        let mut plus = pose.clone();
        plus[i][c] += h;
        let mut minus = pose.clone();
        minus[i][c] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let analytic = g[i][c];
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        assert!((analytic - numeric).abs() / scale < 1e-3, "{analytic} vs {numeric}");
    }
}

#[test]
fn constant_output_model_has_degenerate_gradient() {
    let (_, data) = common::tiny_data();
    let mut model = toy_model(8, 0);
    let head = model.params().index_of("head.w").unwrap();
    model.params_mut().values_mut(head).fill(0.0);
    let t = data.split(Split::Seen)[0];
    let r = generate_adversarial(
        &model,
        &data.meshes[t.pose].cloud(),
        &data.meshes[t.identity].vertices,
        &data.meshes[t.gt].vertices,
        &AttackConfig::default(),
        &mut rng(0),
    );
    assert!(matches!(r, Err(AttackError::DegenerateGradient(_))), "{r:?}");
}

#[test]
fn small_sign_steps_increase_reconstruction_error() {
    let (_, data, model) = trained_tiny();
    for eps in [1e-4, 1e-3] {
        let cfg = AttackConfig { eps, apply_sor: false, ..AttackConfig::default() };
        let mut wins = 0;
        for (k, t) in triples(&data, 100, 7).into_iter().enumerate() {
            let (pose, id, gt) =
                (&data.meshes[t.pose].vertices, &data.meshes[t.identity].vertices, &data.meshes[t.gt].vertices);
            let victim = Victim::new(&model, id, gt).unwrap();
            let mut r = rng(k as u64);
            let plan = model.plan(pose, 0.0, false, &mut r).unwrap();
            let adv = victim.attack(pose, &plan, &cfg, &mut r).unwrap();
            let clean = pmd(&victim.output(pose, &plan).unwrap(), gt).unwrap();
            let attacked = pmd(&victim.output(&adv, &plan).unwrap(), gt).unwrap();
            wins += usize::from(attacked > clean);
        }
        assert!(wins >= 95, "eps {eps}: {wins}/100");
    }
}

#[test]
fn iterative_methods_stay_inside_the_budget() {
    let (_, data, model) = trained_tiny();
    for (k, t) in triples(&data, 4, 3).into_iter().enumerate() {
        for method in [AttackMethod::Ifgm, AttackMethod::Mifgm, AttackMethod::Pgd] {
            for norm in [NormKind::L2, NormKind::Linf] {
                let cfg = AttackConfig { method, norm, iterations: 4, apply_sor: false, ..AttackConfig::default() };
                let pose = &data.meshes[t.pose];
                let o = generate_adversarial(
                    &model,
                    &pose.cloud(),
                    &data.meshes[t.identity].vertices,
                    &data.meshes[t.gt].vertices,
                    &cfg,
                    &mut rng(k as u64),
                )
                .unwrap();
                let delta: Vec<f64> = o
                    .adversarial
                    .points
                    .iter()
                    .zip(&pose.vertices)
                    .flat_map(|(a, b)| (0..3).map(move |c| a[c] - b[c]))
                    .collect();
                assert!(norm_of(&delta, norm) <= cfg.eps + 1e-9, "{method} {norm:?}");
            }
        }
    }
}

#[test]
fn attacks_leave_parameters_and_gradients_untouched() {
    let (_, data, model) = trained_tiny();
    let before = model.clone();
    for (k, t) in triples(&data, 3, 5).into_iter().enumerate() {
        for method in [AttackMethod::Fgm, AttackMethod::Pgd] {
            let cfg = AttackConfig { method, iterations: 3, ..AttackConfig::default() };
            generate_adversarial(
                &model,
                &data.meshes[t.pose].cloud(),
                &data.meshes[t.identity].vertices,
                &data.meshes[t.gt].vertices,
                &cfg,
                &mut rng(k as u64),
            )
            .unwrap();
        }
    }
    assert!(model.params().bits_equal(before.params()));
    assert!(!model.params().has_any_grad());
}

#[test]
fn zero_budget_returns_filtered_clean_cloud() {
    let (_, data, model) = trained_tiny();
    let t = data.split(Split::Seen)[1];
    let pose = &data.meshes[t.pose];
    let cfg = AttackConfig { eps: 0.0, ..AttackConfig::default() };
    let o = generate_adversarial(
        &model,
        &pose.cloud(),
        &data.meshes[t.identity].vertices,
        &data.meshes[t.gt].vertices,
        &cfg,
        &mut rng(0),
    )
    .unwrap();
    assert_eq!(o.adversarial.points, pose.vertices);
    assert!(o.sample.len() as f64 >= 0.99 * pose.len() as f64);
    assert_eq!(o.l2, 0.0);
}

#[test]
fn same_seed_same_sample() {
    let (_, data, model) = trained_tiny();
    let t = data.split(Split::Seen)[2];
    let cfg = AttackConfig { method: AttackMethod::Pgd, iterations: 3, ..AttackConfig::default() };
    let run = || {
        generate_adversarial(
            &model,
            &data.meshes[t.pose].cloud(),
            &data.meshes[t.identity].vertices,
            &data.meshes[t.gt].vertices,
            &cfg,
            &mut rng(9),
        )
        .unwrap()
        .sample
        .points
    };
    assert_eq!(run(), run());
}
