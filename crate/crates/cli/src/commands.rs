use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use geogress::baselines::{batch_svd_subspace, static_as_geodesic};
use geogress::experiment::{
    run_experiment, EstimatorOverrides, ExperimentKind, ExperimentSpec, InitKind,
};
use geogress::io::{load_dataset, load_model, save_dataset, save_model};
use geogress::landscape::{
    linspace, loss_surface_2d, planar_model, recenter_times, record_iterates,
};
use geogress::piecewise::{
    continuity_gap, fit_piecewise_continuation, lambda_schedule, PiecewiseConfig,
};
use geogress::synth::{planted_instance, planted_piecewise};
use geogress::{geodesic_error, loss, Dataset, EstimatorConfig, Init};

use crate::args::{ExperimentArgs, FitArgs, LandscapeArgs, PiecewiseArgs, Plant, SynthArgs};
use crate::Failure;

type Outcome = std::result::Result<(), Failure>;

const QUADRATURE_POINTS: usize = 201;

fn ensure_parent(path: &Path) -> Outcome {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    ensure_parent(path)?;
    csv::Writer::from_path(path)
        .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe (as with `| head`) is not an error.
fn emit(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

/// Builds a fit config from overrides; `fallback` picks the init when none is set.
fn estimator_config(
    o: &EstimatorOverrides,
    data: &Dataset,
    rank: usize,
    seed: u64,
    fallback: InitKind,
) -> Result<EstimatorConfig, Failure> {
    let init = match o.init.unwrap_or(fallback) {
        InitKind::Random => Init::Random {
            rank,
            theta_max: o.init_theta_max.unwrap_or(1.0),
            seed,
        },
        InitKind::Endpoints => Init::Endpoints {
            rank,
            pool_fraction: o.pool_fraction.unwrap_or(0.5),
        },
        InitKind::Svd => {
            let (u, _) = batch_svd_subspace(data, rank)?;
            Init::Provided(static_as_geodesic(&u)?)
        }
    };
    let cfg = EstimatorConfig::new(init)
        .with_outer_iters(
            o.outer_iters
                .unwrap_or(EstimatorConfig::DEFAULT_OUTER_ITERS),
        )
        .with_inner_mm_iters(
            o.inner_mm_iters
                .unwrap_or(EstimatorConfig::DEFAULT_INNER_MM_ITERS),
        )
        .with_rel_loss_tol(
            o.rel_loss_tol
                .unwrap_or(EstimatorConfig::DEFAULT_REL_LOSS_TOL),
        )
        .with_time_center(o.time_center)
        .with_acceleration(o.accelerate.unwrap_or(true))
        .with_refine_iters(o.refine_iters.unwrap_or(0));
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(a: SynthArgs) -> Outcome {
    let p = a.plant.resolve(Plant {
        d: 20,
        k: 2,
        ell: 1,
        n_times: 20,
        sigma: 0.01,
        theta_max: 1.0,
        seed: 0,
    });
    ensure_parent(&a.out)?;
    match &a.knots {
        None => {
            let inst = planted_instance(p.d, p.k, p.ell, p.n_times, p.sigma, p.theta_max, p.seed)?;
            save_dataset(&a.out, &inst.dataset)?;
            if let Some(path) = &a.truth_out {
                ensure_parent(path)?;
                save_model(path, &inst.truth)?;
            }
        }
        Some(knots) => {
            let inst = planted_piecewise(
                p.d,
                p.k,
                p.ell,
                p.n_times,
                p.sigma,
                p.theta_max,
                knots,
                p.seed,
            )?;
            save_dataset(&a.out, &inst.dataset)?;
            if let Some(path) = &a.truth_out {
                ensure_parent(path)?;
                for (j, seg) in inst.truth.segments.iter().enumerate() {
                    save_model(with_suffix(path, &format!("_seg{j}")), seg)?;
                }
            }
        }
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> Outcome {
    let data = load_dataset(&a.data)?;
    let o = a.estimator.overrides();
    let cfg = estimator_config(&o, &data, a.k, a.seed, InitKind::Endpoints)?;
    let report = geogress::fit(&data, &cfg)?;
    ensure_parent(&a.out)?;
    save_model(&a.out, &report.model)?;
    if let Some(path) = &a.trace {
        let mut w = csv_writer(path)?;
        w.write_record(["iteration", "loss"])?;
        let losses =
            std::iter::once(report.initial_loss).chain(report.loss_per_outer_iter.iter().copied());
        for (i, l) in losses.enumerate() {
            w.write_record([i.to_string(), format!("{l:e}")])?;
        }
        w.flush()?;
    }
    let mut text = format!(
        "initial_loss={:e}\nfinal_loss={:e}\niterations={}\nconverged={}\n",
        report.initial_loss,
        report.final_loss(),
        report.loss_per_outer_iter.len(),
        report.converged
    );
    if let Some(path) = &a.truth {
        let truth = load_model(path)?;
        let err = geodesic_error(&report.model, &truth, QUADRATURE_POINTS)?;
        text.push_str(&format!("geodesic_error={err:e}\n"));
    }
    emit(&text)
}

fn resolve_experiment(a: &ExperimentArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = match (&a.config, &a.experiment) {
        (Some(path), _) => ExperimentSpec::from_json_file(path)?,
        (None, Some(name)) => ExperimentSpec::preset(name.parse::<ExperimentKind>()?),
        (None, None) => {
            return Err(Failure::Invalid(
                "either --config or --experiment is required".into(),
            ))
        }
    };
    if let (Some(_), Some(name)) = (&a.config, &a.experiment) {
        spec.experiment = name.parse()?;
    }
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = &a.$f { spec.$f = v.clone(); })*};
    }
    set!(
        d,
        k,
        ell,
        n_times,
        sigma,
        theta_max,
        trials,
        grid_points,
        n_quadrature
    );
    macro_rules! set_opt {
        ($($f:ident),*) => {$(if a.$f.is_some() { spec.$f = a.$f.clone(); })*};
    }
    set_opt!(fit_ranks, lambdas, knots, threads);
    if let Some(seed) = a.seed {
        spec.base_seed = seed;
    }
    if a.timing {
        spec.timing = true;
    }
    if a.out.is_some() {
        spec.output = a.out.clone();
    }
    a.estimator.apply(&mut spec.estimator);
    spec.validate()?;
    Ok(spec)
}

pub fn experiment(a: ExperimentArgs) -> Outcome {
    let spec = resolve_experiment(&a)?;
    if a.print_config {
        return emit(&format!("{}\n", spec.to_json()));
    }
    if let Some(path) = &spec.output {
        ensure_parent(path)?;
    }
    let table = run_experiment(&spec)?;
    match &spec.output {
        Some(_) => emit(&table.summary_csv()),
        None => emit(&table.to_csv()),
    }
}

pub fn landscape(a: LandscapeArgs) -> Outcome {
    let p = a.plant.resolve(Plant {
        d: 2,
        k: 1,
        ell: 1,
        n_times: 21,
        sigma: 0.1,
        theta_max: 1.2,
        seed: 0,
    });
    let data = match &a.data {
        Some(path) => load_dataset(path)?,
        None => planted_instance(p.d, p.k, p.ell, p.n_times, p.sigma, p.theta_max, p.seed)?.dataset,
    };
    let omegas = linspace(-FRAC_PI_2, FRAC_PI_2, a.grid_points);
    let thetas = linspace(-PI, PI, a.grid_points);
    let surface = loss_surface_2d(&data, &omegas, &thetas)?;
    let mut w = csv_writer(&a.out)?;
    w.write_record(["omega", "theta", "loss"])?;
    for (i, om) in omegas.iter().enumerate() {
        for (j, th) in thetas.iter().enumerate() {
            w.write_record([
                om.to_string(),
                th.to_string(),
                format!("{:e}", surface[(i, j)]),
            ])?;
        }
    }
    w.flush()?;

    if let Some(path) = &a.iterates {
        let cfg = EstimatorConfig::new(Init::Random {
            rank: 1,
            theta_max: 1.0,
            seed: p.seed.wrapping_add(1),
        })
        .with_outer_iters(a.outer_iters);
        let mut w = csv_writer(path)?;
        w.write_record(["run", "iteration", "omega", "theta", "loss"])?;
        for (run, center) in [("plain", None), ("centered", Some(a.time_center))] {
            let (points, _) = record_iterates(&data, &cfg.clone().with_time_center(center))?;
            let working = match center {
                Some(c) => recenter_times(&data, c),
                None => data.clone(),
            };
            for (i, &(om, th)) in points.iter().enumerate() {
                let l = loss(&working, &planar_model(om, th))?;
                w.write_record([
                    run.to_string(),
                    (i + 1).to_string(),
                    om.to_string(),
                    th.to_string(),
                    format!("{l:e}"),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn piecewise(a: PiecewiseArgs) -> Outcome {
    let p = a.plant.resolve(Plant {
        d: 20,
        k: 2,
        ell: 1,
        n_times: 12,
        sigma: 0.0,
        theta_max: 1.0,
        seed: 0,
    });
    let data = match &a.data {
        Some(path) => load_dataset(path)?,
        None => {
            planted_piecewise(
                p.d,
                p.k,
                p.ell,
                p.n_times,
                p.sigma,
                p.theta_max,
                &a.knots,
                p.seed,
            )?
            .dataset
        }
    };
    let lambdas = a
        .lambdas
        .clone()
        .unwrap_or_else(|| lambda_schedule(1e-2, 1e3));
    let o = a.estimator.overrides();
    let mut cfg = PiecewiseConfig::new(estimator_config(&o, &data, p.k, p.seed, InitKind::Random)?);
    cfg.max_sweeps = a.max_sweeps;
    let stages = fit_piecewise_continuation(&data, &a.knots, &lambdas, &cfg)?;

    let mut w = csv_writer(&a.out)?;
    w.write_record(["lambda", "objective", "sweeps", "max_gap"])?;
    for s in &stages {
        let gap = continuity_gap(&s.model).into_iter().fold(0.0, f64::max);
        let objective = s.objective_history.last().copied().unwrap_or(f64::NAN);
        w.write_record([
            s.model.lambda.to_string(),
            format!("{objective:e}"),
            s.sweeps.to_string(),
            format!("{gap:e}"),
        ])?;
    }
    w.flush()?;

    if let (Some(dir), Some(last)) = (&a.models_dir, stages.last()) {
        fs::create_dir_all(dir)?;
        for (j, seg) in last.model.segments.iter().enumerate() {
            save_model(dir.join(format!("segment_{j}.txt")), seg)?;
        }
    }
    Ok(())
}
