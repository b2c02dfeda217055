use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rotq_core::diagnostics::weight_incoherence;
use rotq_core::linalg::{Matrix, SymmetricPsd};
use rotq_core::rotation::{
    learn_rotations, objective_gradient, objective_value, rotated_hessian, rotated_weight,
    LayerRecord, ObjectiveKind, ObjectiveSpec, Role, RotationSet, TrainConfig,
};

fn records(seed: u64, n: usize) -> Vec<LayerRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Role::ALL
        .iter()
        .enumerate()
        .map(|(i, &role)| {
            let w = Matrix::gaussian(n, n, 1.0, &mut rng);
            let x = Matrix::gaussian(3 * n, n, 1.0, &mut rng);
            let h = SymmetricPsd::new(x.t_matmul(&x).scale(1.0 / (3 * n) as f64)).unwrap();
            LayerRecord::new(i % 2, role, w).with_hessian(h).unwrap()
        })
        .collect()
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius() / b.frobenius().max(1e-300)
}

#[test]
fn gradients_match_finite_differences() {
    let n = 8;
    for seed in 0..3 {
        let layers = records(seed, n);
        let r = RotationSet::random(2, n, 4, n, seed + 10).unwrap();
        for kind in ObjectiveKind::ALL {
            let spec = ObjectiveSpec::new(kind);
            let (_, g) = objective_gradient(&spec, &layers, &r).unwrap();
            let step = 1e-5;
            let fd = |perturb: &dyn Fn(&mut RotationSet, f64)| {
                let mut plus = r.clone();
                perturb(&mut plus, step);
                let mut minus = r.clone();
                perturb(&mut minus, -step);
                (objective_value(&spec, &layers, &plus).unwrap()
                    - objective_value(&spec, &layers, &minus).unwrap())
                    / (2.0 * step)
            };
            let fd_r1 = Matrix::from_fn(n, n, |i, j| fd(&|s, h| s.r1[(i, j)] += h));
            assert!(rel_err(&g.r1, &fd_r1) <= 1e-5, "{kind} R1: {}", rel_err(&g.r1, &fd_r1));
            for l in 0..2 {
                let fd_r2 = Matrix::from_fn(4, 4, |i, j| fd(&|s, h| s.r2[l][(i, j)] += h));
                assert!(rel_err(&g.r2[l], &fd_r2) <= 1e-5, "{kind} R2[{l}]");
            }
        }
    }
}

#[test]
fn training_preserves_norms_and_traces() {
    let n = 8;
    let layers = records(7, n);
    let init = RotationSet::hadamard(2, n, 4, n, 1).unwrap();
    let cfg = TrainConfig {
        steps: 50,
        ..TrainConfig::for_kind(ObjectiveKind::OptRotPlus)
    };
    let out = learn_rotations(&ObjectiveSpec::new(ObjectiveKind::OptRotPlus), &layers, &cfg, &init).unwrap();
    for rec in &layers {
        let w = rotated_weight(rec, &out.rotations).unwrap();
        assert!((w.frobenius() - rec.weight.frobenius()).abs() <= 1e-9 * rec.weight.frobenius());
        let h = rec.hessian.as_ref().unwrap();
        let ht = rotated_hessian(h, rec.role, rec.layer, &out.rotations).unwrap();
        assert!((ht.trace() - h.trace()).abs() <= 1e-9 * h.trace());
    }
    assert!(out.loss_history.last().unwrap() < &out.loss_history[0]);
}

#[test]
fn optrot_lowers_weight_incoherence_of_a_gaussian_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 32;
    let layers = vec![LayerRecord::new(0, Role::Q, Matrix::gaussian(n, n, 1.0 / (n as f64).sqrt(), &mut rng))];
    let init = RotationSet::hadamard(1, n, 4, n, 3).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        ..TrainConfig::default()
    };
    let out = learn_rotations(&ObjectiveSpec::new(ObjectiveKind::OptRot), &layers, &cfg, &init).unwrap();
    let before = weight_incoherence(&rotated_weight(&layers[0], &init).unwrap()).unwrap();
    let after = weight_incoherence(&rotated_weight(&layers[0], &out.rotations).unwrap()).unwrap();
    assert!(after < before, "{after} >= {before}");
    let decreasing = out.loss_history.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(decreasing as f64 >= 0.95 * (out.loss_history.len() - 1) as f64);
}
