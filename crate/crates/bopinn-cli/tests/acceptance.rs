//! Acceptance suite: every release criterion as one test, each printing a
//! `[PASS]`/`[FAIL]` line with the measured numbers.
//!
//! Run with `cargo test -p bopinn-cli --test acceptance` (or as part of
//! `cargo test --workspace`). The end-to-end criterion trains several
//! hundred networks and dominates the runtime.

use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use bopinn::bo::{run_bo, BoConfig};
use bopinn::field::{loss_grad, Activation, Jet2, MlpParams, ScalarObjective};
use bopinn::gp::{self, GprHyper, HyperSearch};
use bopinn::lbfgs::{minimize, LbfgsOptions};
use bopinn::wave::{add_noise, analytic_u};
use bopinn_cli::config::{ExperimentConfig, ForwardMode, Scale};
use bopinn_cli::experiment::{run_all, train_case_field, RunSummary};

fn verdict(criterion: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    eprintln!("[{tag}] criterion {criterion:2} ({name}): {detail}");
    assert!(pass, "criterion {criterion} ({name}): {detail}");
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bopinn_accept_{tag}_{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

const CASES: [f64; 3] = [0.2, 0.55, 0.85];

/// Relative L2 error of a trained field against the closed-form solution on
/// a 101x101 grid.
fn rel_l2(field: &bopinn::pinn::TrainedField, cfg: &ExperimentConfig) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=100 {
        let x = cfg.domain.length() * i as f64 / 100.0;
        for j in 0..=100 {
            let t = cfg.domain.horizon() * j as f64 / 100.0;
            let truth = analytic_u(x, t, field.c, &cfg.domain).unwrap();
            let diff = field.params.forward(x, t) - truth;
            num += diff * diff;
            den += truth * truth;
        }
    }
    (num / den).sqrt()
}

#[test]
fn criterion_01_forward_solver_fidelity() {
    let cfg = ExperimentConfig::for_scale(Scale::Desk);
    let mut detail = String::new();
    let mut pass = true;
    for (i, &c) in CASES.iter().enumerate() {
        let start = Instant::now();
        let field = train_case_field(&cfg, c, cfg.seed_base + i as u64).unwrap();
        let err = rel_l2(&field, &cfg);
        detail.push_str(&format!(
            "c={c}: rel L2 {:.4} in {:.0}s (loss {:.2e});  ",
            err,
            start.elapsed().as_secs_f64(),
            field.final_loss.j_total
        ));
        pass &= err < 0.05;
    }
    verdict(1, "forward-solver fidelity < 5%", pass, &detail);
}

#[test]
fn criterion_02_inversion_with_analytic_forward() {
    let mut cfg = ExperimentConfig::for_scale(Scale::Desk);
    cfg.forward_mode = ForwardMode::Analytic;
    cfg.out_dir = temp_dir("crit2");
    let start = Instant::now();
    let (summaries, table) = run_all(&cfg).unwrap();
    assert_eq!(table.lines().count(), 4, "expected header + 3 case rows");
    let mut detail = String::new();
    let mut pass = true;
    for s in &summaries {
        let err = (s.best_c - s.c_true).abs();
        detail.push_str(&format!(
            "c={}: |c*-c|={:.4} std_c={:.4};  ",
            s.c_true, err, s.std_c
        ));
        pass &= err <= 0.005 && s.std_c < 0.05 && (s.mean_c - s.c_true).abs() < 0.02;
    }
    detail.push_str(&format!("({:.0}s total)", start.elapsed().as_secs_f64()));
    verdict(2, "analytic-forward inversion", pass, &detail);
    std::fs::remove_dir_all(&cfg.out_dir).ok();
}

/// Shared end-to-end study: desk scale, PINN forward, 5 + 30 evaluations,
/// best of 3 runs per case. Used by criteria 3 and 10.
fn end_to_end_summaries() -> &'static (Vec<RunSummary>, f64) {
    static RESULTS: OnceLock<(Vec<RunSummary>, f64)> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let mut cfg = ExperimentConfig::for_scale(Scale::Desk);
        cfg.forward_mode = ForwardMode::Pinn;
        cfg.runs = 3;
        cfg.bo.n_iters = 30;
        cfg.out_dir = temp_dir("crit3");
        let start = Instant::now();
        let (summaries, _) = run_all(&cfg).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        std::fs::remove_dir_all(&cfg.out_dir).ok();
        (summaries, elapsed)
    })
}

#[test]
fn criterion_03_end_to_end_bopinn() {
    let (summaries, elapsed) = end_to_end_summaries();
    let mut detail = String::new();
    let mut pass = true;
    for s in summaries {
        let rel = (s.best_c - s.c_true).abs() / s.c_true;
        detail.push_str(&format!(
            "c={}: c*={:.4} rel err {:.2}% (accuracy {:.2}%);  ",
            s.c_true,
            s.best_c,
            100.0 * rel,
            100.0 * (1.0 - rel)
        ));
        pass &= rel <= 0.03;
    }
    detail.push_str(&format!("({:.0}s total)", elapsed));
    verdict(3, "end-to-end inversion rel err <= 3%", pass, &detail);
}

/// PINN-style composite objective on a small net, used by the gradient oracle.
struct SmallPinnLoss {
    points: Vec<(f64, f64)>,
    n_interior: usize,
    c2: f64,
}

impl ScalarObjective for SmallPinnLoss {
    fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
    fn term(&self, idx: usize, jet: &Jet2) -> (f64, Jet2) {
        if idx < self.n_interior {
            let r = self.c2 * jet.d_xx - jet.d_tt;
            (
                r * r,
                Jet2 {
                    d_xx: 2.0 * r * self.c2,
                    d_tt: -2.0 * r,
                    ..Jet2::default()
                },
            )
        } else {
            let target = -(std::f64::consts::PI * self.points[idx].0).sin();
            let d = jet.value - target;
            (
                d * d + jet.d_t * jet.d_t,
                Jet2 {
                    value: 2.0 * d,
                    d_t: 2.0 * jet.d_t,
                    ..Jet2::default()
                },
            )
        }
    }
}

#[test]
fn criterion_04_gradient_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);

    // Second derivatives against central differences on 100 random points.
    let mut max_jet_err = 0.0f64;
    for trial in 0..100u64 {
        let params = MlpParams::init(&[2, 8, 8, 1], Activation::Tanh, 0.0, trial).unwrap();
        let (x, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let jet = params.forward_jet2(x, t);
        let h = 1e-4;
        let f = |x: f64, t: f64| params.forward(x, t);
        let fd_xx = (f(x + h, t) - 2.0 * f(x, t) + f(x - h, t)) / (h * h);
        let fd_tt = (f(x, t + h) - 2.0 * f(x, t) + f(x, t - h)) / (h * h);
        for (a, b) in [(jet.d_xx, fd_xx), (jet.d_tt, fd_tt)] {
            max_jet_err = max_jet_err.max((a - b).abs() / a.abs().max(b.abs()).max(1e-1));
        }
    }

    // Full-loss parameter gradient against central differences on 20 coords.
    let params = MlpParams::init(&[2, 4, 1], Activation::Tanh, 0.0, 9).unwrap();
    let mut points: Vec<(f64, f64)> = (0..10)
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .collect();
    let n_interior = points.len();
    points.extend((0..4).map(|_| (rng.gen_range(0.0..1.0), 0.0)));
    let loss = SmallPinnLoss {
        points,
        n_interior,
        c2: 0.85 * 0.85,
    };
    let (_, grad) = loss_grad(&params, &loss).unwrap();
    let flat = params.flatten();
    let mut max_grad_err = 0.0f64;
    for _ in 0..20 {
        let i = rng.gen_range(0..flat.len());
        let h = 1e-4;
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let fp = loss_grad(&params.with_flat(&plus).unwrap(), &loss).unwrap().0;
        let fm = loss_grad(&params.with_flat(&minus).unwrap(), &loss).unwrap().0;
        let fd = (fp - fm) / (2.0 * h);
        max_grad_err = max_grad_err.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8));
    }

    let pass = max_jet_err < 1e-5 && max_grad_err < 1e-5;
    verdict(
        4,
        "gradient oracle",
        pass,
        &format!("max jet rel err {max_jet_err:.2e}, max grad rel err {max_grad_err:.2e}"),
    );
}

#[test]
fn criterion_05_lbfgs_benchmark() {
    let rosenbrock = |x: &[f64]| -> bopinn::Result<(f64, Vec<f64>)> {
        let (a, b) = (1.0, 100.0);
        let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
        Ok((
            f,
            vec![
                -2.0 * (a - x[0]) - 4.0 * b * (x[1] - x[0] * x[0]) * x[0],
                2.0 * b * (x[1] - x[0] * x[0]),
            ],
        ))
    };
    let opts = LbfgsOptions {
        max_iters: 200,
        grad_tol: 1e-10,
        ..LbfgsOptions::default()
    };
    let (_, f_star, trace) = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();

    let target: Vec<f64> = (0..50).map(|i| i as f64 * 0.13 - 3.0).collect();
    let quad_target = target.clone();
    let quadratic = move |x: &[f64]| -> bopinn::Result<(f64, Vec<f64>)> {
        let f: f64 = x.iter().zip(&quad_target).map(|(xi, ai)| (xi - ai) * (xi - ai)).sum();
        Ok((f, x.iter().zip(&quad_target).map(|(xi, ai)| 2.0 * (xi - ai)).collect()))
    };
    let (x_star, _, quad_trace) = minimize(quadratic, &vec![0.0; 50], &opts).unwrap();
    let quad_err = x_star
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    let pass = f_star < 1e-10 && quad_trace.iterations <= 10 && quad_err < 1e-8;
    verdict(
        5,
        "L-BFGS benchmark",
        pass,
        &format!(
            "rosenbrock f* = {f_star:.2e} ({} iters); 50-dim quadratic {} iters, max err {quad_err:.2e}",
            trace.iterations, quad_trace.iterations
        ),
    );
}

/// Dense direct solver (Gaussian elimination with partial pivoting).
fn dense_solve(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        for row in (col + 1)..n {
            let f = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in (row + 1)..n {
            s -= m[row * n + k] * x[k];
        }
        x[row] = s / m[row * n + row];
    }
    x
}

#[test]
fn criterion_06_gpr_oracle_equivalence() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let mut max_mean = 0.0f64;
    let mut max_var = 0.0f64;
    let mut max_lml = 0.0f64;
    for _ in 0..5 {
        let n = 10;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let (amp, freq, phase) = (rng.gen_range(0.5..2.0), rng.gen_range(1.0..6.0), rng.gen_range(0.0..3.0));
        let ys: Vec<f64> = xs.iter().map(|x| amp * (freq * x + phase).sin()).collect();
        let hyper = GprHyper::new(rng.gen_range(0.5..2.0), rng.gen_range(0.05..0.5), rng.gen_range(1e-6..1e-3)).unwrap();
        let model = gp::fit(&xs, &ys, HyperSearch::Fixed(hyper)).unwrap();

        // Dense-solve oracle for mean, variance, log marginal likelihood.
        let hyper = *model.hyper();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = gp::rbf_kernel(xs[i], xs[j], &hyper);
                if i == j {
                    k[i * n + j] += hyper.noise_variance;
                }
            }
        }
        let alpha = dense_solve(&k, n, &ys);
        for q in [0.1, 0.37, 0.62, 0.95] {
            let k_star: Vec<f64> = xs.iter().map(|&x| gp::rbf_kernel(q, x, &hyper)).collect();
            let mean: f64 = k_star.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let kinv_k = dense_solve(&k, n, &k_star);
            let var = hyper.signal_variance - k_star.iter().zip(&kinv_k).map(|(a, b)| a * b).sum::<f64>();
            let (m, s) = model.predict(q);
            max_mean = max_mean.max((m - mean).abs());
            max_var = max_var.max((s * s - var.max(0.0)).abs());
        }
        // log det via the diagonal of an unpivoted elimination is fragile;
        // reuse the Cholesky-free identity lml = -0.5 y' a - 0.5 ln det - ...
        let det = {
            let mut m = k.clone();
            let mut det = 1.0;
            for col in 0..n {
                let piv = (col..n)
                    .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
                    .unwrap();
                if piv != col {
                    for t in 0..n {
                        m.swap(col * n + t, piv * n + t);
                    }
                    det = -det;
                }
                det *= m[col * n + col];
                for row in (col + 1)..n {
                    let f = m[row * n + col] / m[col * n + col];
                    for t in col..n {
                        m[row * n + t] -= f * m[col * n + t];
                    }
                }
            }
            det
        };
        let lml = -0.5 * ys.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
            - 0.5 * det.ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        max_lml = max_lml.max((model.log_marginal_likelihood() - lml).abs());
    }

    // Jitter-level interpolation.
    let model = gp::fit(
        &[0.2, 0.5, 0.8],
        &[0.4, -0.2, 0.9],
        HyperSearch::Fixed(GprHyper::new(1.0, 0.15, gp::JITTER).unwrap()),
    )
    .unwrap();
    let (m, s) = model.predict(0.5);
    let interp_ok = (m - (-0.2)).abs() < 1e-6 && s < 1e-4;

    let pass = max_mean < 1e-8 && max_var < 1e-8 && max_lml < 1e-8 && interp_ok;
    verdict(
        6,
        "GPR dense-oracle equivalence",
        pass,
        &format!("max |dmean| {max_mean:.1e}, |dvar| {max_var:.1e}, |dlml| {max_lml:.1e}, interpolation {interp_ok}"),
    );
}

#[test]
fn criterion_07_bo_unit_target() {
    let cfg = BoConfig {
        n_iters: 25,
        seed: 7,
        ..BoConfig::default()
    };
    let trace = run_bo(|c| Ok(-(c - 0.55) * (c - 0.55)), &cfg).unwrap();
    let (c_star, _) = trace.best();
    // Brute-force maximum of the same target over the acquisition grid.
    let brute = (0..cfg.acq_grid)
        .map(|i| 0.1 + 0.9 * i as f64 / (cfg.acq_grid - 1) as f64)
        .max_by(|&a, &b| (-(a - 0.55f64).powi(2)).total_cmp(&-(b - 0.55f64).powi(2)))
        .unwrap();
    let pass = (c_star - 0.55).abs() <= 0.005 && (brute - 0.55).abs() < 1e-12;
    verdict(
        7,
        "BO unit target",
        pass,
        &format!("c* = {c_star:.4}, brute-force grid max = {brute:.4}"),
    );
}

#[test]
fn criterion_08_noise_calibration() {
    let signal: Vec<f64> = (0..1000)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 125.0).sin())
        .collect();
    let p_sig = signal.iter().map(|u| u * u).sum::<f64>() / signal.len() as f64;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let noisy = add_noise(&signal, 36.34, seed).unwrap();
        let p_noise = signal
            .iter()
            .zip(&noisy)
            .map(|(s, n)| (n - s) * (n - s))
            .sum::<f64>()
            / signal.len() as f64;
        let snr = 10.0 * (p_sig / p_noise).log10();
        worst = worst.max((snr - 36.34).abs());
    }
    verdict(
        8,
        "noise calibration",
        worst < 0.5,
        &format!("max |empirical - 36.34| = {worst:.3} dB over 5 seeds"),
    );
}

#[test]
fn criterion_09_cli_determinism() {
    let dir = temp_dir("crit9");
    std::fs::create_dir_all(&dir).unwrap();
    let conf = dir.join("exp.conf");
    std::fs::write(&conf, "forward = analytic\nruns = 2\nbo.n_iters = 6\n").unwrap();

    let run = |out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_bopinn"))
            .args(["run", "--config"])
            .arg(&conf)
            .args(["--out"])
            .arg(dir.join(out))
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("a");
    run("b");

    let mut pass = true;
    let mut detail = String::new();
    for rel in ["summary.csv", "case1/run0/trace.csv", "case2/run1/trace.csv"] {
        let a = std::fs::read(dir.join("a").join(rel)).unwrap();
        let b = std::fs::read(dir.join("b").join(rel)).unwrap();
        let same = a == b;
        pass &= same;
        detail.push_str(&format!("{rel}: {};  ", if same { "identical" } else { "DIFFERS" }));
    }
    verdict(9, "CLI determinism", pass, &detail);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn criterion_10_target_magnitude() {
    let (summaries, _) = end_to_end_summaries();
    let mut pass = true;
    let mut detail = String::new();
    for s in summaries {
        let g = s.best_g;
        detail.push_str(&format!("c={}: g* = {g:.3e};  ", s.c_true));
        pass &= g < 0.0 && (1e-6..=1e-3).contains(&g.abs());
    }
    verdict(10, "target-function magnitude", pass, &detail);
}
