//! Acceptance suite: one line per criterion, pass/fail at pinned tolerances.
//! Exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rotq_core::diagnostics::{
    correction_max, gptq_error_bounds, layerwise_error, candidate_alpha, rtn_error_bound_with, ub_bound,
    weight_incoherence,
};
use rotq_core::hessian::{bounds_experiment, synthetic_calibration, BoundsGrid, SyntheticSpec};
use rotq_core::linalg::{
    constrained_ldl, jacobi_eigh, ldl_objective, ldl_upper, random_orthogonal, Matrix, SymmetricPsd,
};
use rotq_core::model::{
    apply_fused_rotations, build_toy_model, calibrated_records, max_relative_deviation, quantize_model,
    PipelineConfig, ToyModelSpec,
};
use rotq_core::quant::{brute_force_optimal, gptq_quantize, gptqs_c, gptqs_quantize, rtn_quantize, QuantConfig};
use rotq_core::rotation::{
    cayley_sgd_step, learn_rotations, objective_gradient, objective_value, rotated_weight, CayleyState,
    LayerRecord, ObjectiveKind, ObjectiveSpec, Role, RotationSet, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> rotq_core::Result<Outcome> {
    Ok(Outcome { pass, detail })
}

/// `XᵀX/N` of correlated Gaussian features.
fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> SymmetricPsd {
    let samples = 2 * n + 4;
    let x = Matrix::gaussian(samples, n, 1.0, rng);
    let mix = Matrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        base + 0.5 * rng.random::<f64>() - 0.25
    });
    let y = x.matmul(&mix);
    SymmetricPsd::new(y.t_matmul(&y).scale(1.0 / samples as f64)).unwrap()
}

fn c1_rtn_bound() -> rotq_core::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=64);
        let m = rng.random_range(1..=16);
        let w = Matrix::gaussian(m, n, rng.random_range(0.1..3.0), &mut rng);
        let h = random_psd(n, &mut rng);
        let lambda_max = jacobi_eigh(&h)?.lambda_max();
        for bits in [2u8, 3, 4] {
            let q = rtn_quantize(&w, &QuantConfig::nearest(bits))?;
            let err = layerwise_error(&w, &q.dequantized, &h)?;
            let bound = rtn_error_bound_with(&w, lambda_max, bits)?;
            checks += 1;
            if err > bound + 1e-9 {
                violations += 1;
            }
            worst = worst.max(err / bound);
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in {checks} checks, max error/bound {worst:.3}"),
    )
}

fn c2_ldl_chain() -> rotq_core::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    for i in 0..500 {
        let n = rng.random_range(2..=24);
        let h = random_psd(n, &mut rng);
        let c = [0.05, 0.2, 0.5, 1.0, 4.0][i % 5];
        let l = constrained_ldl(&h, c)?;
        let obj = ldl_objective(h.matrix(), &l.l);
        let ub = ub_bound(&h)?;
        let a = candidate_alpha(c);
        let tol = 1e-9 * h.trace();
        let mid = (1.0 + (1.0 - a) * (1.0 - a)) * ub;
        if !(obj <= mid + tol && mid <= 2.0 * ub + tol && ub <= h.trace() + tol) {
            violations += 1;
        }
    }
    let eps = 1e-3;
    let h = SymmetricPsd::new(Matrix::from_rows(&[[eps * eps, eps], [eps, 1.0]]))?;
    let tr_d = ldl_upper(&h)?.trace_d();
    let ratio = h.off_diag_sq() / (h.trace() * (h.trace() - tr_d));
    let sharp = (ratio - 2.0 / (1.0 + eps * eps)).abs() <= 1e-9 && (ratio - 2.0).abs() <= 1e-5;
    outcome(
        violations == 0 && sharp,
        format!("{violations} violations in 500 instances, sharpness ratio {ratio:.9}"),
    )
}

fn c3_gptqs_monte_carlo() -> rotq_core::Result<Outcome> {
    let (m, n, bits, delta) = (4, 8, 4u8, 0.1);
    let c = gptqs_c(m, n, delta)?;
    let mut exceed = 0;
    let mut worst: f64 = 0.0;
    let runs = 500;
    for seed in 0..runs as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let w = Matrix::gaussian(m, n, 1.0, &mut rng);
        let h = random_psd(n, &mut rng);
        let q = gptqs_quantize(&w, &h, &QuantConfig::stochastic(bits, seed), delta)?;
        let err = layerwise_error(&w, &q.dequantized, &h)?;
        let bound = gptq_error_bounds(&w, &h, &constrained_ldl(&h, c)?, bits, delta)?.trace_bound;
        if err > bound {
            exceed += 1;
        }
        worst = worst.max(err / bound);
    }
    let frac = exceed as f64 / runs as f64;
    outcome(
        frac <= delta,
        format!("exceedance {exceed}/{runs} = {frac:.3} (allowed {delta}), max error/bound {worst:.3}"),
    )
}

fn c4_gptq_vs_rtn() -> rotq_core::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut diag_equal = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=32);
        let m = rng.random_range(1..=8);
        let w = Matrix::gaussian(m, n, 1.0, &mut rng);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let h = SymmetricPsd::from_diag(&d)?;
        let cfg = QuantConfig::nearest(rng.random_range(2..=4));
        if gptq_quantize(&w, &h, &cfg)?.codes == rtn_quantize(&w, &cfg)?.codes {
            diag_equal += 1;
        }
    }

    let mut below_optimum = 0;
    let cfg = QuantConfig::nearest(2);
    for _ in 0..50 {
        let w = Matrix::gaussian(1, 4, 1.0, &mut rng);
        let h = random_psd(4, &mut rng);
        let (_, best) = brute_force_optimal(w.row(0), &h, &cfg)?;
        let err = layerwise_error(&w, &gptq_quantize(&w, &h, &cfg)?.dequantized, &h)?;
        if err < best - 1e-12 * best.abs().max(1.0) {
            below_optimum += 1;
        }
    }

    let mut ratios = Vec::new();
    for _ in 0..100 {
        let n = 16;
        let w = Matrix::gaussian(8, n, 1.0, &mut rng);
        let corr = Matrix::from_fn(n, n, |i, j| 0.9f64.powi((i as i32 - j as i32).abs()));
        let x = Matrix::gaussian(4 * n, n, 1.0, &mut rng).matmul(&corr);
        let h = SymmetricPsd::new(x.t_matmul(&x).scale(1.0 / (4 * n) as f64))?;
        let cfg = QuantConfig::nearest(3);
        let g = layerwise_error(&w, &gptq_quantize(&w, &h, &cfg)?.dequantized, &h)?;
        let r = layerwise_error(&w, &rtn_quantize(&w, &cfg)?.dequantized, &h)?;
        ratios.push(g / r);
    }
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[49] + ratios[50]);
    outcome(
        diag_equal == 100 && below_optimum == 0 && median < 1.0,
        format!(
            "diagonal H identical codes {diag_equal}/100, below brute-force optimum {below_optimum}/50, median GPTQ/RTN error {median:.3}"
        ),
    )
}

fn gradient_records(seed: u64, n: usize) -> Vec<LayerRecord> {
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

fn c5_gradients() -> rotq_core::Result<Outcome> {
    let n = 8;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let layers = gradient_records(5000 + seed, n);
        let r = RotationSet::random(2, n, 4, n, seed + 77)?;
        for kind in ObjectiveKind::ALL {
            let spec = ObjectiveSpec::new(kind);
            let (_, g) = objective_gradient(&spec, &layers, &r)?;
            let step = 1e-5;
            let fd = |perturb: &dyn Fn(&mut RotationSet, f64)| -> rotq_core::Result<f64> {
                let mut plus = r.clone();
                perturb(&mut plus, step);
                let mut minus = r.clone();
                perturb(&mut minus, -step);
                Ok((objective_value(&spec, &layers, &plus)? - objective_value(&spec, &layers, &minus)?) / (2.0 * step))
            };
            let mut fd_r1 = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    fd_r1[(i, j)] = fd(&|s, h| s.r1[(i, j)] += h)?;
                }
            }
            worst = worst.max(rel_err(&g.r1, &fd_r1));
            for l in 0..2 {
                let mut fd_r2 = Matrix::zeros(4, 4);
                for i in 0..4 {
                    for j in 0..4 {
                        fd_r2[(i, j)] = fd(&|s, h| s.r2[l][(i, j)] += h)?;
                    }
                }
                worst = worst.max(rel_err(&g.r2[l], &fd_r2));
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("max relative gradient error {worst:.2e} over 4 objectives x 20 seeds"),
    )
}

fn c6_cayley() -> rotq_core::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut r = random_orthogonal(64, 1)?;
    let mut state = CayleyState::new(0.0);
    for _ in 0..1000 {
        let g = Matrix::gaussian(64, 64, 1.0, &mut rng);
        r = cayley_sgd_step(&r, &g, 1.0, &mut state)?;
    }
    let drift = r.orthogonality_defect();

    let n = 64;
    let w = Matrix::gaussian(n, n, 1.0 / (n as f64).sqrt(), &mut rng);
    let layers = vec![LayerRecord::new(0, Role::Q, w)];
    let init = RotationSet::hadamard(1, n, 16, n, 6)?;
    let out = learn_rotations(&ObjectiveSpec::new(ObjectiveKind::OptRot), &layers, &TrainConfig::default(), &init)?;
    let mu0 = weight_incoherence(&rotated_weight(&layers[0], &init)?)?;
    let mu1 = weight_incoherence(&rotated_weight(&layers[0], &out.rotations)?)?;
    let (l0, l1) = (out.loss_history[0], *out.loss_history.last().unwrap());
    let final_drift = out.rotations.max_orthogonality_defect();
    outcome(
        drift <= 1e-6 && final_drift <= 1e-6 && l1 < l0 && mu1 < mu0,
        format!(
            "drift after 1000 steps {drift:.1e} (trained {final_drift:.1e}); loss {l0:.4e} -> {l1:.4e}; mu_W {mu0:.3} -> {mu1:.3}"
        ),
    )
}

fn c7_equivalence() -> rotq_core::Result<Outcome> {
    let spec = ToyModelSpec::default();
    let model = build_toy_model(&spec)?;
    let x = Matrix::gaussian(32, spec.d_model, 1.0, &mut ChaCha8Rng::seed_from_u64(707));
    let y = model.forward(&x, false)?.output;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let r = RotationSet::random(spec.n_layers, spec.d_model, spec.d_head_block, spec.d_ff, 7000 + seed)?;
        let rot = apply_fused_rotations(&model, &r)?;
        worst = worst.max(max_relative_deviation(&y, &rot.forward(&x, false)?.output));
    }
    outcome(
        worst <= 1e-6,
        format!("max relative output deviation {worst:.2e} over 20 rotation sets"),
    )
}

fn calibration(seed: u64, n: usize) -> rotq_core::Result<rotq_core::hessian::CalibrationSet> {
    synthetic_calibration(&SyntheticSpec {
        n,
        samples: 512,
        outlier_channels: 0,
        outlier_scale: 1.0,
        seed,
    })
}

fn c8_pipeline() -> rotq_core::Result<Outcome> {
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let spec = ToyModelSpec::planted(seed);
        let model = build_toy_model(&spec)?;
        let (calib, holdout) = (calibration(8000 + seed, spec.d_model)?, calibration(9000 + seed, spec.d_model)?);
        let cfg = PipelineConfig::default();
        let identity = RotationSet::identity(spec.n_layers, spec.d_model, spec.d_head_block, spec.d_ff);
        let base = quantize_model(&model, &identity, &calib, &holdout, &cfg)?.kl_proxy;
        let init = RotationSet::hadamard(spec.n_layers, spec.d_model, spec.d_head_block, spec.d_ff, seed)?;
        let learned = learn_rotations(
            &ObjectiveSpec::new(ObjectiveKind::OptRot),
            &model.layers,
            &TrainConfig::default(),
            &init,
        )?;
        let opt = quantize_model(&model, &learned.rotations, &calib, &holdout, &cfg)?.kl_proxy;
        if opt < base {
            wins += 1;
        }
        ratios.push(opt / base);
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    outcome(
        wins >= 9,
        format!("OptRot beats identity in {wins}/10 seeds at b=4 (worst kl ratio {worst:.3})"),
    )
}

fn c9_bounds_experiment() -> rotq_core::Result<Outcome> {
    let grid = BoundsGrid::default();
    let rows = bounds_experiment(&grid)?;
    let mut a_ok = true;
    let mut notes = Vec::new();
    for &n in &grid.dims {
        let at = |spectrum: &str, basis: Option<&str>| -> Vec<_> {
            rows.iter()
                .filter(|r| r.n == n && r.spectrum == spectrum && basis.is_none_or(|b| r.basis == b))
                .collect()
        };
        for r in rows.iter().filter(|r| r.n == n && r.basis == "hadamard") {
            a_ok &= r.tr_d <= r.inc_bound_true_q * (1.0 + 1e-9) && r.tr_d <= 2.0 * r.ub * (1.0 + 1e-9);
        }
        let random = at("polynomial", Some("random"));
        let exceed = random.iter().filter(|r| r.inc_bound_true_q > r.ub).count();
        let low = at("low-rank", None);
        let degraded = low.iter().filter(|r| r.inc_bound_recomputed_q > r.inc_bound_true_q * (1.0 + 1e-9)).count();
        a_ok &= 2 * exceed > random.len() && 2 * degraded > low.len();
        notes.push(format!("n={n}: inc>UB {exceed}/{}, recomputed worse {degraded}/{}", random.len(), low.len()));
    }
    outcome(a_ok, format!("{} rows; {}", rows.len(), notes.join("; ")))
}

fn c10_correction_gap() -> rotq_core::Result<Outcome> {
    let spec = ToyModelSpec::default();
    let model = build_toy_model(&spec)?;
    let records = calibrated_records(&model, &calibration(10_000, spec.d_model)?, 0.01)?;
    let mut above = 0;
    for rec in &records {
        let h = rec.hessian.as_ref().expect("calibrated");
        let c = gptqs_c(rec.weight.rows(), rec.weight.cols(), 0.1)?;
        if correction_max(&ldl_upper(h)?) > 1.0 + c {
            above += 1;
        }
    }
    outcome(
        2 * above > records.len(),
        format!("true-LDL correction exceeds 1+c on {above}/{} layers", records.len()),
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> rotq_core::Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "RTN error bound", Duration::from_secs(30), c1_rtn_bound),
        (2, "constrained-LDL chain and sharpness", Duration::MAX, c2_ldl_chain),
        (3, "GPTQS trace bound Monte-Carlo", Duration::MAX, c3_gptqs_monte_carlo),
        (4, "GPTQ versus RTN and brute force", Duration::MAX, c4_gptq_vs_rtn),
        (5, "objective gradients", Duration::MAX, c5_gradients),
        (6, "Cayley SGD", Duration::MAX, c6_cayley),
        (7, "fused-rotation equivalence", Duration::MAX, c7_equivalence),
        (8, "end-to-end sign test", Duration::from_secs(300), c8_pipeline),
        (9, "tr(D) bounds experiment", Duration::from_secs(60), c9_bounds_experiment),
        (10, "true-LDL correction gap", Duration::MAX, c10_correction_gap),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let result = run();
        let elapsed = t.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget_note = if budget == Duration::MAX {
            String::new()
        } else {
            format!(", budget {}s", budget.as_secs())
        };
        println!(
            "[{}] {id:>2} {name}: {detail} ({:.1}s{budget_note})",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            failed += 1;
        }
    }
    println!("acceptance: {}/10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
