//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.
//!
//! Run a subset with `cargo test --test acceptance -- 2 5`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use geogress::baselines::{batch_svd_subspace, per_timepoint_svd, static_as_geodesic};
use geogress::estimator::majorizer::{curvature, derivative, majorizer, term_value};
use geogress::estimator::{loss, theta_constants};
use geogress::experiment::{run_experiment, ExperimentKind, ExperimentSpec, InitKind};
use geogress::landscape::{linspace, loss_surface_2d, planar_model};
use geogress::piecewise::{
    continuity_gap, fit_piecewise_continuation, lambda_schedule, PiecewiseConfig,
};
use geogress::synth::{permute_times, planted_from_truth, planted_instance, planted_piecewise};
use geogress::{
    fit, geodesic_error, random_geodesic, subspace_error, DMatrix, Dataset, EstimatorConfig,
    GeodesicModel, Init, OrthonormalBasis,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_init(rank: usize, seed: u64) -> EstimatorConfig {
    EstimatorConfig::new(Init::Random {
        rank,
        theta_max: 1.0,
        seed,
    })
}

/// Every consecutive pair of losses, starting from the initial one, obeys
/// `next <= prev * (1 + 1e-10)`.
fn monotone_descent() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sigmas = [0.0, 1e-3, 1e-1];
    let mut pairs = 0;
    for i in 0..100 {
        let d = rng.random_range(4..=40);
        let k = rng.random_range(1..=(d / 2).min(6));
        let ell = rng.random_range(1..=3);
        let n = rng.random_range(2..=25);
        let theta_max = rng.random_range(0.2..1.5);
        let inst = planted_instance(d, k, ell, n, sigmas[i % 3], theta_max, i as u64)
            .map_err(|e| e.to_string())?;
        let cfg = random_init(k, 1000 + i as u64).with_outer_iters(100);
        let report = fit(&inst.dataset, &cfg).map_err(|e| e.to_string())?;
        let mut prev = report.initial_loss;
        for (n_iter, &cur) in report.loss_per_outer_iter.iter().enumerate() {
            ensure(cur <= prev * (1.0 + 1e-10), || {
                format!(
                    "instance {i} (d={d} k={k}) iteration {}: {prev:e} -> {cur:e}",
                    n_iter + 1
                )
            })?;
            prev = cur;
            pairs += 1;
        }
    }
    Ok(format!("100 instances, {pairs} loss pairs non-increasing"))
}

/// Median geodesic error per `(k, T)` cell: small once `T >= 2k`, large
/// below `T = k`.
fn phase_transition() -> Outcome {
    let mut worst_good: f64 = 0.0;
    let mut best_bad: f64 = 1.0;
    for k in [2usize, 4, 8] {
        let mut spec = ExperimentSpec::preset(ExperimentKind::PhaseTransition);
        spec.k = vec![k];
        // k <= T < 2k is the transition band and carries no requirement
        spec.n_times = (1..k).chain(2 * k..=4 * k).collect();
        spec.estimator.init = Some(InitKind::Endpoints);
        let table = run_experiment(&spec).map_err(|e| e.to_string())?;
        for s in table.summary() {
            let med = s.median_geodesic_error.ok_or("missing error")?;
            let n = s.cell.n_times;
            if n >= 2 * k {
                worst_good = worst_good.max(med);
                ensure(med <= 1e-3, || {
                    format!("k={k} T={n}: median error {med:e} > 1e-3")
                })?;
            } else if n < k {
                best_bad = best_bad.min(med);
                ensure(med >= 0.1, || {
                    format!("k={k} T={n}: median error {med:e} < 0.1")
                })?;
            }
        }
    }
    Ok(format!(
        "worst median for T >= 2k: {worst_good:.2e}; best median for T < k: {best_bad:.3}"
    ))
}

/// Fits started from the rank-k SVD subspace land between the rank-2k and
/// rank-k SVD losses.
fn loss_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut min_slack = f64::INFINITY;
    for i in 0..50 {
        let d: usize = rng.random_range(6..=30);
        let k: usize = rng.random_range(1..=(d / 2).min(4));
        let ell: usize = rng.random_range(1..=3);
        let n: usize = rng.random_range((2 * k).div_ceil(ell).max(2)..=20);
        let sigma = [1e-3, 1e-2, 1e-1][i % 3];
        let inst = planted_instance(d, k, ell, n, sigma, 1.4, 500 + i as u64)
            .map_err(|e| e.to_string())?;
        let (u, svd_k) = batch_svd_subspace(&inst.dataset, k).map_err(|e| e.to_string())?;
        let (_, svd_2k) = batch_svd_subspace(&inst.dataset, 2 * k).map_err(|e| e.to_string())?;
        let init = static_as_geodesic(&u).map_err(|e| e.to_string())?;
        let cfg = EstimatorConfig::new(Init::Provided(init));
        let geo = fit(&inst.dataset, &cfg)
            .map_err(|e| e.to_string())?
            .final_loss();
        ensure(svd_2k - 1e-9 <= geo && geo <= svd_k + 1e-9, || {
            format!("instance {i}: {svd_2k:e} <= {geo:e} <= {svd_k:e} violated")
        })?;
        min_slack = min_slack.min((svd_k - geo).min(geo - svd_2k));
    }
    Ok(format!(
        "50 instances inside the SVD bounds (min margin {min_slack:.2e})"
    ))
}

/// Shuffling which matrix belongs to which time raises the fitted loss.
fn permutation_degradation() -> Outcome {
    let (mut ordered, mut permuted) = (Vec::new(), Vec::new());
    for trial in 0..20u64 {
        let base = random_geodesic(40, 2, 0.0, 900 + trial).map_err(|e| e.to_string())?;
        let truth = GeodesicModel::new(base.h().clone(), base.y().clone(), vec![1.5, -1.45])
            .map_err(|e| e.to_string())?;
        let inst =
            planted_from_truth(truth, 1, 50, 1e-3, 900 + trial).map_err(|e| e.to_string())?;
        let shuffled = permute_times(&inst.dataset, 31 + trial);
        for (data, out) in [(&inst.dataset, &mut ordered), (&shuffled, &mut permuted)] {
            let (u, _) = batch_svd_subspace(data, 2).map_err(|e| e.to_string())?;
            let init = static_as_geodesic(&u).map_err(|e| e.to_string())?;
            let report = fit(data, &EstimatorConfig::new(Init::Provided(init)))
                .map_err(|e| e.to_string())?;
            out.push(report.final_loss());
        }
    }
    let ratio = mean(&permuted) / mean(&ordered);
    ensure(ratio >= 1.5, || {
        format!("permuted/ordered loss ratio {ratio:.3} < 1.5")
    })?;
    Ok(format!(
        "mean loss ordered {:.3e}, permuted {:.3e}, ratio {ratio:.1}",
        mean(&ordered),
        mean(&permuted)
    ))
}

/// Random starts reach an error comparable to the noise level.
fn noise_floor_recovery() -> Outcome {
    let sigma = 1e-3;
    let threshold = 10.0 * sigma * 40f64.sqrt();
    let mut report_parts = Vec::new();
    for k in [1usize, 2, 4] {
        let mut hits = 0;
        for trial in 0..20u64 {
            let seed = 10_000 * k as u64 + trial;
            let inst =
                planted_instance(40, k, 1, 100, sigma, 1.5, seed).map_err(|e| e.to_string())?;
            let cfg = random_init(k, seed ^ 0xabc).with_outer_iters(500);
            let model = fit(&inst.dataset, &cfg).map_err(|e| e.to_string())?.model;
            let err = geodesic_error(&model, &inst.truth, 201).map_err(|e| e.to_string())?;
            hits += usize::from(err <= threshold);
        }
        ensure(hits >= 16, || {
            format!("k={k}: only {hits}/20 trials within {threshold:.3e}")
        })?;
        report_parts.push(format!("k={k}: {hits}/20"));
    }
    Ok(format!(
        "{} within 10σ√d = {threshold:.3e}",
        report_parts.join(", ")
    ))
}

fn mean_timepoint_error(model: &GeodesicModel, dataset: &Dataset, truth: &GeodesicModel) -> f64 {
    mean(
        &dataset
            .times()
            .iter()
            .map(|&t| subspace_error(&model.eval(t), &truth.eval(t)).expect("same shape"))
            .collect::<Vec<_>>(),
    )
}

/// One vector per time still identifies a rank-4 geodesic, and beats
/// independent per-time SVDs that see six vectors per time.
fn fewer_vectors_than_rank() -> Outcome {
    let (k, n, sigma, d) = (4usize, 44usize, 1e-2, 40usize);
    let (mut geo1, mut geo1_path, mut svd6) = (Vec::new(), Vec::new(), Vec::new());
    for trial in 0..10u64 {
        let seed = 4_000 + trial;
        let one = planted_instance(d, k, 1, n, sigma, 1.5, seed).map_err(|e| e.to_string())?;
        let six = planted_instance(d, k, 6, n, sigma, 1.5, seed).map_err(|e| e.to_string())?;
        ensure(one.truth == six.truth, || {
            "matched configs differ in truth".into()
        })?;
        ensure(per_timepoint_svd(&one.dataset, k).is_err(), || {
            "per-time SVD should be infeasible at ell=1".into()
        })?;
        let cfg = EstimatorConfig::new(Init::Endpoints {
            rank: k,
            pool_fraction: 0.5,
        })
        .with_outer_iters(500);
        let model = fit(&one.dataset, &cfg).map_err(|e| e.to_string())?.model;
        geo1.push(mean_timepoint_error(&model, &one.dataset, &one.truth));
        geo1_path.push(geodesic_error(&model, &one.truth, 201).map_err(|e| e.to_string())?);
        let bases = per_timepoint_svd(&six.dataset, k).map_err(|e| e.to_string())?;
        svd6.push(mean(
            &bases
                .iter()
                .zip(six.dataset.times())
                .map(|(b, t)| subspace_error(b, &six.truth.eval(t)).expect("same shape"))
                .collect::<Vec<_>>(),
        ));
    }
    let (g, p, s) = (mean(&geo1), mean(&geo1_path), mean(&svd6));
    ensure(g < s, || {
        format!("geodesic (ell=1) {g:.3e} not below per-time SVD (ell=6) {s:.3e}")
    })?;
    ensure(p <= 0.1, || {
        format!("geodesic error at ell=1 is {p:.3e} > 0.1")
    })?;
    Ok(format!(
        "ell=1 geodesic {g:.3e} < ell=6 per-time SVD {s:.3e}; geodesic error {p:.3e}"
    ))
}

/// The quadratic majorizer dominates each term, touches it at the anchor and
/// has curvature `4t²r` at the touch points.
fn majorizer_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_gap = f64::INFINITY;
    for case in 0..100 {
        let r = rng.random_range(0.01..5.0);
        let phi = rng.random_range(-PI..PI);
        let t = rng.random_range(0.02..1.0);
        let b = rng.random_range(-1.0..1.0);
        let anchor = rng.random_range(-3.0..3.0);
        let err = |e: geogress::Error| e.to_string();
        let touch = majorizer(anchor, anchor, t, r, phi, b).map_err(err)?;
        let f_anchor = term_value(anchor, t, r, phi, b);
        ensure(
            (touch - f_anchor).abs() <= 1e-12 * (1.0 + f_anchor.abs()),
            || format!("case {case}: q(θ';θ') = {touch} but f(θ') = {f_anchor}"),
        )?;
        let span = 2.0 * PI / t;
        for g in linspace(anchor - span, anchor + span, 10_000) {
            let q = majorizer(g, anchor, t, r, phi, b).map_err(err)?;
            let f = term_value(g, t, r, phi, b);
            worst_gap = worst_gap.min(q - f);
            ensure(q >= f - 1e-9, || {
                format!("case {case}: q({g}) = {q} < f = {f} (r={r}, φ={phi}, t={t}, θ'={anchor})")
            })?;
        }
        // touch points: the minimizers (φ + 2πm)/(2t)
        let limit = 4.0 * t * t * r;
        for m in -2..=2 {
            let star = (phi + 2.0 * PI * m as f64) / (2.0 * t);
            let w = curvature(star, t, r, phi).map_err(err)?;
            ensure((w - limit).abs() <= 1e-9 * limit, || {
                format!("case {case}: w at touch point {w} vs 4t²r {limit}")
            })?;
            // direct ratio f'/(θ − θ*) slightly off the touch point
            let h = 1e-6;
            let ratio = derivative(star + h, t, r, phi) / h;
            ensure((ratio - limit).abs() <= 1e-6 * limit, || {
                format!("case {case}: f'/δ near touch {ratio} vs 4t²r {limit}")
            })?;
        }
    }
    Ok(format!(
        "100 configurations x 10^4 points, min q - f = {worst_gap:.2e}"
    ))
}

/// `Σ f'` against central differences of the full loss in each angle.
fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let d = rng.random_range(4..=12);
        let k = rng.random_range(1..=d / 2);
        let n = rng.random_range(2..=10);
        let inst =
            planted_instance(d, k, 2, n, 0.3, 1.2, 3_000 + case).map_err(|e| e.to_string())?;
        let model = random_geodesic(d, k, 1.5, 7_000 + case).map_err(|e| e.to_string())?;
        let consts =
            theta_constants(&inst.dataset, model.h(), model.y()).map_err(|e| e.to_string())?;
        let times = inst.dataset.times();
        let j = rng.random_range(0..k);
        let analytic = consts.separable_gradient(j, model.theta()[j], &times);
        let step = 1e-6;
        let at = |delta: f64| {
            let mut theta = model.theta().clone();
            theta[j] += delta;
            let m = GeodesicModel::new(model.h().clone(), model.y().clone(), theta).unwrap();
            loss(&inst.dataset, &m).unwrap()
        };
        let fd = (at(step) - at(-step)) / (2.0 * step);
        let scale = analytic
            .abs()
            .max(fd.abs())
            .max(1e-6 * inst.dataset.energy());
        let rel = (analytic - fd).abs() / scale;
        worst = worst.max(rel);
        ensure(rel <= 1e-5, || {
            format!("case {case}: analytic {analytic:e} vs finite difference {fd:e}")
        })?;
    }
    Ok(format!(
        "100 configurations, worst relative error {worst:.2e}"
    ))
}

/// Cross-checks against independent formulations.
fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let err = |e: geogress::Error| e.to_string();
    let (mut w_loss, mut w_const, mut w_surf, mut w_sub): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for case in 0..50u64 {
        let d = rng.random_range(4..=20);
        let k = rng.random_range(1..=(d / 2).min(4));
        let ell = rng.random_range(1..=4);
        let n = rng.random_range(1..=12);
        let inst = planted_instance(d, k, ell, n, 0.2, 1.3, case).map_err(err)?;
        let model = random_geodesic(d, k, 1.5, 100 + case).map_err(err)?;

        // least squares for the loadings, solved by SVD
        let mut oracle = 0.0;
        for s in &inst.dataset {
            let u = model.eval_matrix(s.t);
            let g = u
                .clone()
                .svd(true, true)
                .solve(&s.x, 1e-14)
                .map_err(|e| e.to_string())?;
            oracle += (&s.x - &u * g).norm_squared();
        }
        let l = loss(&inst.dataset, &model).map_err(err)?;
        let rel = (l - oracle).abs() / oracle.max(1e-300);
        w_loss = w_loss.max(rel);
        ensure(rel <= 1e-10, || {
            format!("case {case}: loss {l:e} vs least squares {oracle:e}")
        })?;

        // θ constants from dense XXᵀ quadratic forms
        let consts = theta_constants(&inst.dataset, model.h(), model.y()).map_err(err)?;
        for (i, s) in inst.dataset.iter().enumerate() {
            let xx = &s.x * s.x.transpose();
            let a = model.h().transpose() * &xx * model.h();
            let bm = model.y().transpose() * &xx * model.h();
            let c = model.y().transpose() * &xx * model.y();
            let scale = xx.norm().max(1e-300);
            for j in 0..k {
                for (got, want) in [
                    (consts.alpha[(i, j)], a[(j, j)]),
                    (consts.beta[(i, j)], bm[(j, j)]),
                    (consts.gamma[(i, j)], c[(j, j)]),
                    (consts.b[(i, j)], 0.5 * (a[(j, j)] + c[(j, j)])),
                    (
                        consts.r[(i, j)],
                        (0.25 * (a[(j, j)] - c[(j, j)]).powi(2) + bm[(j, j)].powi(2)).sqrt(),
                    ),
                ] {
                    let rel = (got - want).abs() / scale;
                    w_const = w_const.max(rel);
                    ensure(rel <= 1e-12, || {
                        format!("case {case}: constant {got:e} vs {want:e}")
                    })?;
                }
            }
        }
    }

    for case in 0..10u64 {
        let inst = planted_instance(2, 1, 2, 9, 0.2, 1.4, 60 + case).map_err(err)?;
        let omegas = linspace(-FRAC_PI_2, FRAC_PI_2, 13);
        let thetas = linspace(-PI, PI, 13);
        let surf = loss_surface_2d(&inst.dataset, &omegas, &thetas).map_err(err)?;
        for (a, &w) in omegas.iter().enumerate() {
            for (b, &th) in thetas.iter().enumerate() {
                let direct = loss(&inst.dataset, &planar_model(w, th)).map_err(err)?;
                let rel = (surf[(a, b)] - direct).abs() / direct.max(1e-300);
                w_surf = w_surf.max(rel);
                ensure(rel <= 1e-12, || {
                    format!("surface ({w}, {th}): {} vs {direct}", surf[(a, b)])
                })?;
            }
        }
    }

    for _ in 0..200 {
        let d = rng.random_range(2..=6);
        let r = rng.random_range(1..=d);
        let draw = |rng: &mut ChaCha8Rng| {
            let m = DMatrix::from_fn(d, r, |_, _| rng.random_range(-1.0..1.0));
            OrthonormalBasis::orthonormalize(&m).unwrap()
        };
        let (u, v) = (draw(&mut rng), draw(&mut rng));
        let oracle = (u.projector() - v.projector()).norm() / (2.0 * r as f64).sqrt();
        let e = subspace_error(&u, &v).map_err(err)?;
        w_sub = w_sub.max((e - oracle).abs());
        ensure((e - oracle).abs() <= 1e-10, || {
            format!("subspace error {e} vs projector {oracle}")
        })?;
    }
    Ok(format!(
        "worst deviations: loss {w_loss:.1e}, constants {w_const:.1e}, surface {w_surf:.1e}, subspace {w_sub:.1e}"
    ))
}

/// λ continuation on a continuous two-piece truth closes the gap at the knot.
fn piecewise_continuity() -> Outcome {
    let err = |e: geogress::Error| e.to_string();
    let knots = [0.0, 0.5, 1.0];
    let lambdas = lambda_schedule(1e-2, 1e3);
    let mut finals = Vec::new();
    for trial in 0..3u64 {
        let inst = planted_piecewise(20, 3, 1, 10, 0.0, 1.0, &knots, 40 + trial).map_err(err)?;
        let cfg = PiecewiseConfig::new(
            EstimatorConfig::new(Init::Random {
                rank: 3,
                theta_max: 1.0,
                seed: 80 + trial,
            })
            .with_outer_iters(100),
        );
        let stages =
            fit_piecewise_continuation(&inst.dataset, &knots, &lambdas, &cfg).map_err(err)?;
        let mut prev_gap = f64::INFINITY;
        for stage in &stages {
            let gap = continuity_gap(&stage.model)[0];
            ensure(gap <= prev_gap + 1e-9, || {
                format!(
                    "trial {trial}: gap rose to {gap:e} at λ={}",
                    stage.model.lambda
                )
            })?;
            prev_gap = gap;
            for w in stage.objective_history.windows(2) {
                ensure(w[1] <= w[0] * (1.0 + 1e-10) + 1e-300, || {
                    format!(
                        "trial {trial} λ={}: objective rose {:e} -> {:e}",
                        stage.model.lambda, w[0], w[1]
                    )
                })?;
            }
        }
        let first = continuity_gap(&stages[0].model)[0];
        ensure(prev_gap <= 0.05, || {
            format!("trial {trial}: final gap {prev_gap:e} > 0.05")
        })?;
        finals.push(format!("{first:.2e} -> {prev_gap:.2e}"));
    }
    Ok(format!("gap at λ=0 vs λ=1e3: {}", finals.join(", ")))
}

const CRITERIA: [Criterion; 10] = [
    Criterion {
        id: 1,
        name: "monotone descent",
        budget: Duration::from_secs(120),
        run: monotone_descent,
    },
    Criterion {
        id: 2,
        name: "phase transition at T = 2k",
        budget: Duration::from_secs(300),
        run: phase_transition,
    },
    Criterion {
        id: 3,
        name: "loss between rank-2k and rank-k SVD",
        budget: Duration::from_secs(60),
        run: loss_sandwich,
    },
    Criterion {
        id: 4,
        name: "permutation raises loss",
        budget: Duration::from_secs(60),
        run: permutation_degradation,
    },
    Criterion {
        id: 5,
        name: "noise-floor recovery",
        budget: Duration::from_secs(300),
        run: noise_floor_recovery,
    },
    Criterion {
        id: 6,
        name: "identifiability with ell < k",
        budget: Duration::from_secs(60),
        run: fewer_vectors_than_rank,
    },
    Criterion {
        id: 7,
        name: "majorizer dominance, tangency, curvature limit",
        budget: Duration::from_secs(30),
        run: majorizer_suite,
    },
    Criterion {
        id: 8,
        name: "gradient vs finite differences",
        budget: Duration::from_secs(10),
        run: gradient_check,
    },
    Criterion {
        id: 9,
        name: "oracle equivalences",
        budget: Duration::from_secs(30),
        run: oracle_equivalences,
    },
    Criterion {
        id: 10,
        name: "piecewise continuity under λ continuation",
        budget: Duration::from_secs(60),
        run: piecewise_continuity,
    },
];

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for c in CRITERIA
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(msg) if elapsed <= c.budget => (true, msg),
            Ok(msg) => (false, format!("{msg}; exceeded budget")),
            Err(msg) => (false, msg),
        };
        failures += usize::from(!ok);
        println!(
            "[{}] {:>2}. {} ({:.1}s of {}s): {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}
