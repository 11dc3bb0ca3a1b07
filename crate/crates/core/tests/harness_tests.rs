//! Experiment harness: config handling, determinism, CSV contract, rate fits.

use mdlod::harness::{
    fit_rates, run_experiment, write_csv, ExperimentConfig, RateMode, ReportRow, Session,
    CSV_HEADER,
};

fn write_cross_geometry(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("cross.toml");
    std::fs::write(
        &path,
        "domain = [0.0, 0.0, 1.0, 1.0]\ninterfaces = [[[0.5, 0.0], [0.5, 1.0]], [[0.0, 0.5], [1.0, 0.5]]]\n",
    )
    .unwrap();
    path
}

fn config_text(out: &std::path::Path, variant: &str, coarse: &str, ell: &str) -> String {
    format!(
        r#"
experiment = "t"
geometry = "cross.toml"
variant = "{variant}"
fine = 8
coarse = {coarse}
ell = {ell}
output = "{}"

[coefficients]
a0 = {{ seed = 42, lo = 0.01, hi = 1.0 }}
a1 = 1.0
b1 = 1.0

[sources]
f0 = "sin_pi"
f1 = "linear_x2y"
"#,
        out.display()
    )
}

fn load_config(dir: &std::path::Path, text: &str) -> ExperimentConfig {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::from_path(&path).unwrap()
}

#[test]
fn single_cell_run_shape() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    let cfg = load_config(dir.path(), &config_text(&out, "stabilized", "[2]", "[1]"));
    let run = run_experiment(cfg, None).unwrap();
    assert_eq!(run.rows.len(), 1);
    let row = &run.rows[0];
    assert!(row.err_energy >= 0.0);
    assert!((0.0..=1.0).contains(&row.err_rel), "err_rel {}", row.err_rel);
    assert_eq!(row.n_coarse, 8);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert_eq!(text.lines().count(), 2);
    // The temporary file of the atomic write is gone.
    assert!(!dir.path().join("r.csv.tmp").exists());
}

fn strip_wall(rows: &[ReportRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            let line = r.csv_line();
            line.rsplit_once(',').unwrap().0.to_string()
        })
        .collect()
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    let text = config_text(&out, "stabilized", "[2, 4]", "[1, 2]");
    let cfg = load_config(dir.path(), &text);
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(cfg, None).unwrap());
    let cfg = load_config(dir.path(), &text);
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| run_experiment(cfg, None).unwrap());
    assert_eq!(strip_wall(&one.rows), strip_wall(&four.rows));
    // Identical CSV bytes except the wall_seconds column.
    let cfg = load_config(dir.path(), &text);
    let again = run_experiment(cfg, None).unwrap();
    assert_eq!(strip_wall(&one.rows), strip_wall(&again.rows));
}

#[test]
fn rows_are_sorted_and_reference_norm_is_cached() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    let cfg = load_config(dir.path(), &config_text(&out, "stabilized", "[4, 2]", "[2, 1]"));
    let run = run_experiment(cfg, None).unwrap();
    assert_eq!(run.rows.len(), 4);
    let keys: Vec<(u64, usize)> = run
        .rows
        .iter()
        .map(|r| ((1.0 / r.h_coarse) as u64, r.ell))
        .collect();
    // H descending = coarse resolution ascending, ell ascending within.
    assert_eq!(keys, vec![(2, 1), (2, 2), (4, 1), (4, 2)]);
    // err_energy / err_rel reproduces one shared reference norm.
    let norms: Vec<f64> = run.rows.iter().map(|r| r.err_energy / r.err_rel).collect();
    for n in &norms {
        assert!((n - norms[0]).abs() <= 1e-12 * norms[0]);
    }
}

#[test]
fn global_variant_collapses_ell_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    let cfg = load_config(dir.path(), &config_text(&out, "global", "[2, 4]", "[1, 2, 3]"));
    let run = run_experiment(cfg, None).unwrap();
    assert_eq!(run.rows.len(), 2);
    assert!(run.rows.iter().all(|r| r.ell == 0 && r.variant == "global"));
}

#[test]
fn config_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    // Fine not a multiple of coarse.
    let bad = config_text(&out, "global", "[3]", "[1]");
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, &bad).unwrap();
    assert!(ExperimentConfig::from_path(&path).is_err());
    // Refinement factor below 2.
    let bad = config_text(&out, "global", "[8]", "[1]");
    std::fs::write(&path, &bad).unwrap();
    assert!(ExperimentConfig::from_path(&path).is_err());
    // Unknown key rejected.
    let bad = format!("{}\nunknown_key = 1\n", config_text(&out, "global", "[2]", "[1]"));
    std::fs::write(&path, &bad).unwrap();
    assert!(ExperimentConfig::from_path(&path).is_err());
    // Random coefficient without a seed does not parse.
    let bad = config_text(&out, "global", "[2]", "[1]")
        .replace("{ seed = 42, lo = 0.01, hi = 1.0 }", "{ lo = 0.01, hi = 1.0 }");
    std::fs::write(&path, &bad).unwrap();
    assert!(ExperimentConfig::from_path(&path).is_err());
    // Nodal interpolation on agglomerated meshes is rejected.
    let bad = format!("{}\nmesh = \"agglomerated\"\n", config_text(&out, "naive", "[2]", "[1]"));
    std::fs::write(&path, &bad).unwrap();
    assert!(ExperimentConfig::from_path(&path).is_err());
}

#[test]
fn seed_override_changes_random_runs_only() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    let text = config_text(&out, "stabilized", "[2]", "[1]");
    let a = run_experiment(load_config(dir.path(), &text), None).unwrap();
    let b = run_experiment(load_config(dir.path(), &text), Some(42)).unwrap();
    let c = run_experiment(load_config(dir.path(), &text), Some(7)).unwrap();
    assert_eq!(strip_wall(&a.rows), strip_wall(&b.rows));
    assert_ne!(strip_wall(&a.rows), strip_wall(&c.rows));
}

#[test]
fn solution_export_writes_every_dof() {
    let dir = tempfile::tempdir().unwrap();
    write_cross_geometry(dir.path());
    let out = dir.path().join("r.csv");
    let cfg = load_config(dir.path(), &config_text(&out, "stabilized", "[2]", "[1]"));
    let session = Session::prepare(cfg, None).unwrap();
    let (_, u, _) = session.run_cell(2, 1).unwrap();
    let sol = dir.path().join("solution.csv");
    session.dofs.write_solution_csv(&session.mesh, &u, &sol).unwrap();
    let text = std::fs::read_to_string(&sol).unwrap();
    assert_eq!(text.lines().count(), 1 + session.dofs.n_dofs());
}

#[test]
fn fit_rates_reproduces_published_decay_series() {
    // Printed localization-error series of the decay experiment, ell = 1..6.
    let errs = [
        0.524951357613358,
        0.126788150645751,
        0.019701416608526,
        0.002568974026859,
        0.000307441986633,
        3.7131984985e-05,
    ];
    let rows: Vec<ReportRow> = errs
        .iter()
        .enumerate()
        .map(|(k, &e)| ReportRow {
            experiment: "decay".into(),
            h_coarse: 0.5,
            h_fine: 1.0 / 32.0,
            ell: k + 1,
            variant: "naive".into(),
            err_energy: e,
            err_rel: e,
            n_coarse: 0,
            n_fine_free: 0,
            wall_seconds: 0.0,
        })
        .collect();
    let fit = fit_rates(&rows, RateMode::EllDecay).unwrap();
    assert!((fit.slope - (-1.939601545776449)).abs() < 1e-12, "slope {}", fit.slope);
    assert!(fit.slope <= -1.9);
}

#[test]
fn fit_rates_reproduces_published_convergence_step() {
    // First coarsening step of the published oversampling-4 series.
    let rows = [
        ReportRow {
            experiment: "conv".into(),
            h_coarse: 1.0,
            h_fine: 1.0 / 64.0,
            ell: 4,
            variant: "stabilized".into(),
            err_energy: 0.032433481153816,
            err_rel: 0.0,
            n_coarse: 0,
            n_fine_free: 0,
            wall_seconds: 0.0,
        },
        ReportRow {
            experiment: "conv".into(),
            h_coarse: 0.5,
            h_fine: 1.0 / 64.0,
            ell: 4,
            variant: "stabilized".into(),
            err_energy: 0.008044422399445,
            err_rel: 0.0,
            n_coarse: 0,
            n_fine_free: 0,
            wall_seconds: 0.0,
        },
    ];
    let fit = fit_rates(&rows, RateMode::HRate).unwrap();
    assert!((fit.per_step[0] - 2.011423137301918).abs() < 1e-12);
}

#[test]
fn csv_rewrite_is_atomic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let row = ReportRow {
        experiment: "x".into(),
        h_coarse: 0.5,
        h_fine: 0.125,
        ell: 1,
        variant: "naive".into(),
        err_energy: 1.0,
        err_rel: 0.5,
        n_coarse: 4,
        n_fine_free: 9,
        wall_seconds: 0.25,
    };
    write_csv(std::slice::from_ref(&row), &path).unwrap();
    let first = std::fs::read_to_string(&path).unwrap();
    write_csv(&[row.clone(), row], &path).unwrap();
    let second = std::fs::read_to_string(&path).unwrap();
    assert_eq!(first.lines().count(), 2);
    assert_eq!(second.lines().count(), 3);
    assert_eq!(
        first.lines().next().unwrap(),
        "experiment,H,h,ell,variant,err_energy,err_rel,n_coarse,n_fine_free,wall_seconds"
    );
}
