//! Acceptance suite: oracle equivalence, invariants, determinism and the
//! directional planner/mapping comparisons at desk scale. Prints one line per
//! criterion and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use amap_core::cmaes::{cmaes_minimize, CmaesOptions};
use amap_core::gp::{gp_predict, KernelMode, KernelSpec, ObservedInput, QueryGrid, TrainingSet};
use amap_core::planner::PlannerKind;
use amap_core::slam::*;
use amap_core::uncertain::{expected_kernel, gauss_hermite_rule, UncertainPoint};
use amap_core::utility::{info_gain_renyi, utility_evaluate, PredictionBundle, UtilityKind};
use amap_harness::config::{parse_config, ExperimentConfig, MappingMode, UtilityChoice};
use amap_harness::experiment::{run_experiment, RunOptions};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

fn se(s2: f64, l: f64, x: &[f64; 3], y: &[f64; 3]) -> f64 {
    let r2: f64 = (0..3).map(|i| (x[i] - y[i]).powi(2)).sum();
    s2 * (-r2 / (2.0 * l * l)).exp()
}

fn gp_posterior() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let grid = QueryGrid::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), Vector3::new(0.5, 0.5, 0.5)).unwrap();
    let gp: Vec<[f64; 3]> = grid.points().iter().map(|p| [p.x, p.y, p.z]).collect();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (s2, l, sn, m) = (rng.random_range(0.5..2.0), rng.random_range(0.3..1.0), rng.random_range(0.01..0.1), rng.random_range(-1.0..1.0));
        let xs: Vec<[f64; 3]> = (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let train = TrainingSet::new(xs.iter().map(|x| ObservedInput::exact(Vector3::from(*x))).collect(), ys.clone()).unwrap();
        let spec = KernelSpec::squared_exponential(s2, l, sn).unwrap();
        let post = gp_predict(&train, &grid, &spec, &KernelMode::Plain, m).unwrap();

        let a: Vec<Vec<f64>> = (0..10).map(|i| (0..10).map(|j| se(s2, l, &xs[i], &xs[j]) + if i == j { sn } else { 0.0 }).collect()).collect();
        let ai = invert(a);
        let ksx: Vec<Vec<f64>> = gp.iter().map(|g| xs.iter().map(|x| se(s2, l, g, x)).collect()).collect();
        for p in 0..gp.len() {
            let mut mean = m;
            for i in 0..10 {
                for j in 0..10 {
                    mean += ksx[p][i] * ai[i][j] * (ys[j] - m);
                }
            }
            worst = worst.max((post.mean[p] - mean).abs());
            for q in 0..gp.len() {
                let mut v = se(s2, l, &gp[p], &gp[q]);
                for i in 0..10 {
                    for j in 0..10 {
                        v -= ksx[p][i] * ai[i][j] * ksx[q][j];
                    }
                }
                worst = worst.max((post.covariance[(p, q)] - v).abs());
            }
        }
    }
    verdict(worst < 1e-9, format!("max abs error {worst:.3e} over 50 problems (tol 1e-9)"))
}

// ---------------------------------------------------------------- 2

fn expected_kernel_monte_carlo() -> Verdict {
    let l = 0.5;
    let spec = KernelSpec::squared_exponential(1.0, l, 0.01).unwrap();
    let rule = gauss_hermite_rule(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let p = Vector3::new(0.3, -0.2, 0.5);
    let dir = Vector3::new(1.0, 2.0, -1.0).normalize();
    let mut worst = 0.0f64;
    for s in [0.0, 0.025, 0.05, 0.075, 0.1] {
        for off in [0.0, 0.5 * l, l, 2.0 * l] {
            let a = UncertainPoint::new(p, Matrix3::identity() * s).unwrap();
            let q = p + dir * off;
            let sd = s.sqrt();
            let n = 1_000_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                acc += spec.eval(&(p + z * sd), &q);
            }
            let mc = acc / n as f64;
            let gh = expected_kernel(&spec, &a, &q, &rule);
            worst = worst.max((gh - mc).abs() / mc);
        }
    }
    verdict(worst < 0.01, format!("max relative deviation {worst:.3e} over 20 cases (tol 1e-2)"))
}

// ---------------------------------------------------------------- 3

fn gauss_hermite_monomials() -> Verdict {
    let rule = gauss_hermite_rule(5).unwrap();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut worst = 0.0f64;
    for k in 0..=9 {
        let got: f64 = rule.nodes().iter().zip(rule.weights()).map(|(u, w)| w * u.powi(k)).sum();
        let err = if k % 2 == 1 {
            got.abs() / sqrt_pi
        } else {
            let dfact: f64 = (1..k).step_by(2).map(|v| v as f64).product();
            let exact = dfact * sqrt_pi / 2f64.powi(k / 2);
            (got - exact).abs() / exact
        };
        worst = worst.max(err);
    }
    verdict(worst < 1e-10, format!("max relative error {worst:.3e} for u^0..u^9 (tol 1e-10)"))
}

// ---------------------------------------------------------------- 4

struct SlamProblem {
    graph: PoseGraph,
    anchor: PoseBelief,
    landmark_ids: Vec<usize>,
}

fn slam_problem(seed: u64) -> SlamProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = CameraModel::default();
    let landmarks: Vec<Landmark> = (0..rng.random_range(2..6))
        .map(|id| Landmark { id, position: Vector3::new(rng.random_range(0.0..1.5), rng.random_range(0.0..1.5), -1.0) })
        .collect();
    let anchor = PoseBelief::new(
        Vector3::new(rng.random_range(0.3..1.2), rng.random_range(0.3..1.2), rng.random_range(0.3..1.0)),
        Matrix3::identity() * 1e-4,
    );
    let noise = ControlNoiseModel::uniform(0.01);
    let mut graph = PoseGraph::new(cam, anchor.clone()).unwrap();
    let mut truth = anchor.mean;
    for k in 0..=rng.random_range(4..15) {
        if k > 0 {
            let control = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1));
            let (t, odo) = simulate_step(&truth, &control, &noise, &mut rng);
            truth = t;
            graph.add_odometry(odo, noise.covariance(&control));
        }
        let node = graph.last_node();
        for obs in observe_landmarks(&truth, &landmarks, &cam, &mut rng) {
            graph.add_observation(node, &obs).unwrap();
        }
    }
    let mut landmark_ids: Vec<usize> = graph.landmark_estimates().iter().map(|(id, _)| *id).collect();
    landmark_ids.sort();
    SlamProblem { graph, anchor, landmark_ids }
}

fn fd_jacobian(cam: &CameraModel, rel: &Vector3<f64>) -> Matrix3<f64> {
    let h = 1e-6;
    Matrix3::from_fn(|r, c| {
        let mut e = Vector3::zeros();
        e[c] = h;
        (cam.project(&(rel + e))[r] - cam.project(&(rel - e))[r]) / (2.0 * h)
    })
}

/// Kalman filter in information form over [pose; landmarks], linearized at
/// the solver's estimates; each old pose is marginalized after its odometry
/// step, which makes the final filtered marginal the smoothed one.
fn kalman_final(p: &SlamProblem, nodes: &[Vector3<f64>], lms: &[(usize, Vector3<f64>)]) -> (Vector3<f64>, Matrix3<f64>) {
    let cam = p.graph.camera();
    let dim = 3 + 3 * p.landmark_ids.len();
    let slot = |id: usize| 3 + 3 * p.landmark_ids.iter().position(|&l| l == id).unwrap();
    let lm_at = |id: usize| lms.iter().find(|(l, _)| *l == id).unwrap().1;
    let mut lambda = DMatrix::zeros(dim, dim);
    let mut eta = DVector::zeros(dim);
    let w0 = p.anchor.covariance.try_inverse().unwrap();
    lambda.view_mut((0, 0), (3, 3)).copy_from(&w0);
    eta.rows_mut(0, 3).copy_from(&(w0 * p.anchor.mean));

    let observe = |node: usize, lambda: &mut DMatrix<f64>, eta: &mut DVector<f64>| {
        for f in p.graph.landmark_factors().iter().filter(|f| f.node == node) {
            let (x, l) = (nodes[node], lm_at(f.landmark));
            let hl = fd_jacobian(cam, &(l - x));
            let s = slot(f.landmark);
            let mut jac = DMatrix::zeros(3, dim);
            jac.view_mut((0, 0), (3, 3)).copy_from(&(-hl));
            jac.view_mut((0, s), (3, 3)).copy_from(&hl);
            let mut lin = DVector::zeros(dim);
            lin.rows_mut(0, 3).copy_from(&x);
            lin.rows_mut(s, 3).copy_from(&l);
            let z = DVector::from_column_slice((f.measurement - cam.project(&(l - x))).as_slice()) + &jac * &lin;
            let rinv = DMatrix::from_column_slice(3, 3, f.covariance.try_inverse().unwrap().as_slice());
            *lambda += jac.transpose() * &rinv * &jac;
            *eta += jac.transpose() * &rinv * z;
        }
    };

    observe(0, &mut lambda, &mut eta);
    for (k, odo) in p.graph.odometry_factors().iter().enumerate() {
        let q = odo.covariance.try_inverse().unwrap();
        let mut big = DMatrix::zeros(dim + 3, dim + 3);
        let mut beta = DVector::zeros(dim + 3);
        let remap = |i: usize| if i < 3 { i } else { i + 3 };
        for i in 0..dim {
            beta[remap(i)] = eta[i];
            for j in 0..dim {
                big[(remap(i), remap(j))] = lambda[(i, j)];
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                big[(i, j)] += q[(i, j)];
                big[(3 + i, 3 + j)] += q[(i, j)];
                big[(i, 3 + j)] -= q[(i, j)];
                big[(3 + i, j)] -= q[(i, j)];
            }
        }
        let qd = q * odo.delta;
        for i in 0..3 {
            beta[i] -= qd[i];
            beta[3 + i] += qd[i];
        }
        let aa_inv = big.view((0, 0), (3, 3)).into_owned().try_inverse().unwrap();
        let ab = big.view((0, 3), (3, dim)).into_owned();
        lambda = big.view((3, 3), (dim, dim)).into_owned() - ab.transpose() * &aa_inv * &ab;
        eta = beta.rows(3, dim).into_owned() - ab.transpose() * &aa_inv * beta.rows(0, 3);
        observe(k + 1, &mut lambda, &mut eta);
    }
    let cov = lambda.try_inverse().unwrap();
    let mean = &cov * &eta;
    (Vector3::new(mean[0], mean[1], mean[2]), Matrix3::from_fn(|i, j| cov[(i, j)]))
}

fn slam_kalman() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut p = slam_problem(seed);
        let beliefs = match solve_graph(&mut p.graph) {
            Ok(b) => b,
            Err(e) => return verdict(false, format!("problem {seed}: {e}")),
        };
        let nodes: Vec<Vector3<f64>> = (0..p.graph.node_count()).map(|i| p.graph.node_estimate(i)).collect();
        let lms = p.graph.landmark_estimates().to_vec();
        let (mean, cov) = kalman_final(&p, &nodes, &lms);
        let last = beliefs.last().unwrap();
        worst = worst.max((last.covariance - cov).abs().max()).max((last.mean - mean).abs().max());
    }
    verdict(worst < 1e-6, format!("max final marginal error {worst:.3e} over 20 problems (tol 1e-6)"))
}

// ---------------------------------------------------------------- 5

fn cmaes_benchmarks() -> Verdict {
    let rosen = |x: &DVector<f64>| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let (mut sphere_worst, mut rosen_worst) = (0.0f64, 0.0f64);
    let mut over_budget = false;
    for seed in 0..5 {
        let opts = CmaesOptions { max_evaluations: 10_000, seed, ..Default::default() };
        let r = cmaes_minimize(|x| x.norm_squared(), &DVector::from_element(10, 1.0), 0.3, &opts);
        sphere_worst = sphere_worst.max(r.value);
        over_budget |= r.evaluations > 10_000;
        let opts = CmaesOptions { max_evaluations: 20_000, seed, ..Default::default() };
        let r = cmaes_minimize(rosen, &DVector::zeros(2), 0.3, &opts);
        rosen_worst = rosen_worst.max(r.value);
        over_budget |= r.evaluations > 20_000;
    }
    verdict(
        sphere_worst < 1e-6 && rosen_worst < 1e-4 && !over_budget,
        format!("worst of 5 seeds: sphere-10D {sphere_worst:.2e} (tol 1e-6), rosenbrock-2D {rosen_worst:.2e} (tol 1e-4)"),
    )
}

// ---------------------------------------------------------------- 6

fn random_bundle(rng: &mut ChaCha8Rng) -> PredictionBundle {
    let prior = 10f64.powf(rng.random_range(-3.0..3.0));
    let n = rng.random_range(1..8);
    PredictionBundle {
        prior_trace: prior,
        posterior_trace: prior * rng.random_range(1e-6..1.0),
        pose_traces: (0..n).map(|_| rng.random_range(0.0..5.0)).collect(),
        duration: rng.random_range(0.1..30.0),
    }
}

fn utility_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let gain = |b: &PredictionBundle| info_gain_renyi(b).unwrap();
    let shannon = |b: &PredictionBundle| utility_evaluate(&UtilityKind::ShannonOnly, b).unwrap();
    let (mut monotone_bad, mut argmax_bad) = (0, 0);
    let (mut limit_err, mut offset_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let b = random_bundle(&mut rng);
        let mut worse = b.clone();
        let i = rng.random_range(0..b.pose_traces.len());
        worse.pose_traces[i] += rng.random_range(0.0..3.0);
        if gain(&worse) > gain(&b) + 1e-12 {
            monotone_bad += 1;
        }

        let mut lim = b.clone();
        lim.pose_traces = vec![1e9; b.pose_traces.len()];
        limit_err = limit_err.max((gain(&lim) - shannon(&lim)).abs());
        lim.pose_traces = vec![1e-9; b.pose_traces.len()];
        offset_err = offset_err.max((gain(&lim) - shannon(&lim) - 1.0).abs());

        let cands: Vec<PredictionBundle> = (0..rng.random_range(2..10)).map(|_| random_bundle(&mut rng)).collect();
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let argmax = |cs: &[PredictionBundle]| {
            cs.iter().enumerate().map(|(i, b)| (i, gain(b))).fold((0, f64::NEG_INFINITY), |a, x| if x.1 > a.1 { x } else { a })
        };
        let scaled: Vec<PredictionBundle> = cands
            .iter()
            .map(|b| PredictionBundle { prior_trace: b.prior_trace * scale, posterior_trace: b.posterior_trace * scale, ..b.clone() })
            .collect();
        let ((ia, va), (ib, _)) = (argmax(&cands), argmax(&scaled));
        if ia != ib && (gain(&cands[ib]) - va).abs() > 1e-9 {
            argmax_bad += 1;
        }
    }
    verdict(
        monotone_bad == 0 && argmax_bad == 0 && limit_err < 1e-6 && offset_err < 1e-6,
        format!(
            "1000 bundles: {monotone_bad} monotonicity and {argmax_bad} argmax violations, shannon-limit error {limit_err:.1e}, \
             perfect-localization offset error {offset_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn collapsing_limit() -> Verdict {
    let rule = gauss_hermite_rule(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let spec = KernelSpec::squared_exponential(rng.random_range(0.5..2.0), rng.random_range(0.2..1.5), 0.01).unwrap();
        let p = Vector3::from_fn(|_, _| rng.random_range(0.0..2.0));
        let q = Vector3::from_fn(|_, _| rng.random_range(0.0..2.0));
        let a = UncertainPoint::new(p, Matrix3::identity() * 1e-14).unwrap();
        let plain = spec.eval(&p, &q);
        worst = worst.max((expected_kernel(&spec, &a, &q, &rule) - plain).abs() / plain);
    }
    verdict(worst < 1e-6, format!("max relative deviation {worst:.3e} over 100 pairs (tol 1e-6)"))
}

// ---------------------------------------------------------------- 8..11

fn desk_config(out: &Path) -> ExperimentConfig {
    let mut cfg = parse_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.cfg")).expect("bundled desk config");
    cfg.output = out.to_path_buf();
    cfg
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

fn determinism() -> Verdict {
    let mut cfg = desk_config(&scratch("threads1"));
    cfg.trials = 3;
    let run = |cfg: &ExperimentConfig, threads| run_experiment(cfg, &RunOptions { threads: Some(threads), dump_first_trial: false });
    let a = match run(&cfg, 1) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    cfg.output = scratch("threads8");
    let b = match run(&cfg, 8) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let mut same = true;
    for (x, y) in a.combinations.iter().zip(&b.combinations) {
        same &= std::fs::read(&x.csv).unwrap() == std::fs::read(&y.csv).unwrap();
    }
    verdict(same, format!("{} configurations x 3 trials, 1 vs 8 threads: CSVs {}", a.combinations.len(), if same { "identical" } else { "differ" }))
}

#[derive(Debug, Clone, Copy, Default)]
struct Finals {
    tr_sigma: f64,
    rmse: f64,
    trials: usize,
}

/// Mean over trials of the last record of each trial, per CSV.
fn finals(csv: &Path) -> Finals {
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let mut last: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let t: f64 = rec[2].parse().unwrap();
        let row = (t, rec[4].parse().unwrap(), rec[5].parse().unwrap());
        let e = last.entry(rec[0].to_string()).or_insert(row);
        if t >= e.0 {
            *e = row;
        }
    }
    let n = last.len();
    let rmse = last.values().map(|v| v.1).sum::<f64>() / n as f64;
    let tr_sigma = last.values().map(|v| v.2).sum::<f64>() / n as f64;
    Finals { tr_sigma, rmse, trials: n }
}

fn comparisons() -> Result<BTreeMap<String, Finals>, String> {
    let groups: [(&str, Vec<PlannerKind>, Vec<UtilityChoice>, Vec<MappingMode>); 3] = [
        ("utility", vec![PlannerKind::TwoStep], vec![UtilityChoice::Renyi, UtilityChoice::Shannon], vec![MappingMode::Expected]),
        ("mapping", vec![PlannerKind::TwoStep], vec![UtilityChoice::Renyi], vec![MappingMode::Plain]),
        ("planners", vec![PlannerKind::RigTree, PlannerKind::Random], vec![UtilityChoice::Renyi], vec![MappingMode::Expected]),
    ];
    let mut out = BTreeMap::new();
    for (name, kinds, utilities, modes) in groups {
        let mut cfg = desk_config(&scratch(name));
        cfg.name = format!("desk_{name}");
        cfg.planner.kinds = kinds;
        cfg.utilities = utilities;
        cfg.mapping_modes = modes;
        let report = run_experiment(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
        for c in &report.combinations {
            out.insert(c.combination.label(), finals(&c.csv));
        }
    }
    Ok(out)
}

fn ratio_line(label: &str, num: f64, den: f64, need: f64) -> (bool, String) {
    let r = num / den;
    (r >= need, format!("{label} {r:.3} (need >= {need})"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !v.pass {
            failed += 1;
        }
        println!("criterion {id:>2} {} {name}: {} [{:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, start.elapsed().as_secs_f64());
    };

    report(1, "gp posterior vs direct formula", &gp_posterior);
    report(2, "expected kernel vs monte carlo", &expected_kernel_monte_carlo);
    report(3, "gauss-hermite order 5 monomials", &gauss_hermite_monomials);
    report(4, "graph solver vs kalman oracle", &slam_kalman);
    report(5, "cma-es benchmarks", &cmaes_benchmarks);
    report(6, "utility invariants", &utility_invariants);
    report(7, "expected kernel collapsing limit", &collapsing_limit);
    report(8, "mission determinism across threads", &determinism);

    let start = Instant::now();
    let results = catch_unwind(comparisons).map_err(|_| "panicked".to_string()).and_then(|r| r);
    let elapsed = start.elapsed().as_secs_f64();
    match results {
        Err(e) => {
            for (id, name) in [(9, "renyi vs shannon"), (10, "expected vs plain mapping"), (11, "informed planners vs random")] {
                report(id, name, &|| verdict(false, format!("experiment failed: {e}")));
            }
        }
        Ok(m) => {
            let get = |label: &str| m[label];
            let renyi = get("twostep_renyi_expected");
            let shannon = get("twostep_shannon_expected");
            let plain = get("twostep_renyi_plain");
            let rig = get("rig_renyi_expected");
            let random = get("random_renyi_expected");
            let n = renyi.trials;
            println!(
                "  desk comparison over {n} seeds ({elapsed:.0}s): final (Tr Sigma, RMSE) renyi ({:.4}, {:.4}) shannon ({:.4}, {:.4}) \
                 plain ({:.4}, {:.4}) rig ({:.4}, {:.4}) random ({:.4}, {:.4})",
                renyi.tr_sigma, renyi.rmse, shannon.tr_sigma, shannon.rmse, plain.tr_sigma, plain.rmse, rig.tr_sigma, rig.rmse,
                random.tr_sigma, random.rmse
            );
            report(9, "renyi vs shannon", &|| {
                let (a, la) = ratio_line("Tr(Sigma) shannon/renyi", shannon.tr_sigma, renyi.tr_sigma, 1.1);
                let rmse_ok = renyi.rmse <= 1.1 * shannon.rmse;
                verdict(a && rmse_ok, format!("{la}; RMSE renyi/shannon {:.3} (need <= 1.1)", renyi.rmse / shannon.rmse))
            });
            report(10, "expected vs plain mapping", &|| {
                let (a, la) = ratio_line("RMSE plain/expected", plain.rmse, renyi.rmse, 1.1);
                verdict(a, la)
            });
            report(11, "informed planners vs random", &|| {
                let (a, la) = ratio_line("RMSE random/twostep", random.rmse, renyi.rmse, 1.2);
                let (b, lb) = ratio_line("random/rig", random.rmse, rig.rmse, 1.2);
                verdict(a && b, format!("{la}; {lb}"))
            });
        }
    }

    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
