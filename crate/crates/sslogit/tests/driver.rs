use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sslogit::config::{Estimator, RunConfig, WindowSpec};
use sslogit::driver::{plan, run, CellOutcome};
use sslogit::io::{read_panel, write_panel, PanelSchema};
use sslogit::report::{figure_csv, results_csv, results_text};
use sslogit_core::cmle::fit_cmle;
use sslogit_core::simulate::simulate_panel;
use sslogit_core::{CommonParams, CovariatePath, Gamma, HeterogeneityDist, OptimOptions, Panel};

fn truth() -> CommonParams {
    CommonParams::dynamic(Gamma::new(2.5, -1.5, -1.5, 2.5), 1.0, 2.0)
}

/// Seeded panel with two groups and window keys 1982..=2021.
fn labelled(n: usize, seed: u64) -> Panel {
    let mut p = simulate_panel(&truth(), &HeterogeneityDist::correctly_specified(), n, 3, true, seed).unwrap();
    for (i, h) in p.households.iter_mut().enumerate() {
        h.group = if i % 3 == 0 { "b".into() } else { "a".into() };
        h.window_key = Some(1982 + (i % 40) as i64);
    }
    p
}

fn to_csv(p: &Panel) -> String {
    let mut buf = Vec::new();
    write_panel(p, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn load(text: &str) -> Panel {
    read_panel(text.as_bytes(), &PanelSchema::default()).unwrap().panel
}

#[test]
fn simulated_panels_survive_a_round_trip() {
    let mut p = labelled(200, 1);
    // awkward floats and covariates on top of the simulated outcomes
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for h in p.households.iter_mut() {
        let draw = |rng: &mut ChaCha8Rng| (0..2).map(|_| rng.random_range(-1e3..1e3) / 7.0).collect::<Vec<f64>>();
        let x1 = (0..3).map(|_| draw(&mut rng)).collect();
        let x2 = (0..3).map(|_| draw(&mut rng)).collect();
        h.x = CovariatePath::new(x1, x2).unwrap();
        h.x_initial = (draw(&mut rng), draw(&mut rng));
    }
    let back = load(&to_csv(&p));
    assert_eq!(back, p);
}

#[test]
fn row_order_does_not_change_the_report() {
    let p = labelled(1200, 3);
    let text = to_csv(&p);
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in (1..lines.len()).rev() {
        lines.swap(i, rng.random_range(0..=i));
    }
    let shuffled = format!("{header}\n{}\n", lines.join("\n"));
    assert_ne!(shuffled, text);

    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&["estimator=gmm-rho", "group_column=group", "window=10,10", "bootstrap=20"])
        .unwrap();
    let a = run(&cfg, &load(&text)).unwrap();
    let b = run(&cfg, &load(&shuffled)).unwrap();
    assert_eq!(results_csv(&a), results_csv(&b));
    assert_eq!(results_text(&a), results_text(&b));
    assert_eq!(figure_csv(&a), figure_csv(&b));
}

#[test]
fn one_group_without_windows_is_the_direct_fit() {
    let p = labelled(2000, 5);
    let cfg = RunConfig {
        estimator: Estimator::CmleRestricted,
        ..RunConfig::default()
    };
    let report = run(&cfg, &p).unwrap();
    assert_eq!(report.cells.len(), 1);
    let CellOutcome::Fitted(e) = &report.cells[0].outcome else {
        panic!("cell not fitted: {:?}", report.cells[0].outcome)
    };
    let direct = fit_cmle(&p, true, &OptimOptions::default()).unwrap();
    assert_eq!(e.estimates, direct.fit.estimates);
    assert_eq!(e.se, direct.fit.se());
    assert_eq!(e.names, direct.fit.names);
}

#[test]
fn five_year_windows_over_forty_keys() {
    let p = labelled(400, 6);
    let mut cfg = RunConfig {
        window: Some(WindowSpec { width: 5, step: 1 }),
        window_edges: false,
        ..RunConfig::default()
    };
    let cells = plan(&cfg, &p).unwrap();
    assert_eq!(cells.len(), 36);
    assert_eq!(cells[0].1.unwrap().center, 1984);
    assert_eq!(cells[35].1.unwrap().center, 2019);
    cfg.window_edges = true;
    let cells = plan(&cfg, &p).unwrap();
    assert_eq!(cells.len(), 40);
    assert_eq!(cells.iter().filter(|c| c.1.unwrap().truncated).count(), 4);
}

#[test]
fn empty_cells_are_skipped_not_failed() {
    let mut p = labelled(600, 7);
    for h in p.households.iter_mut() {
        // only every tenth key is populated
        h.window_key = Some(1982 + 10 * (h.window_key.unwrap() % 4));
    }
    let cfg = RunConfig {
        window: Some(WindowSpec { width: 1, step: 1 }),
        ..RunConfig::default()
    };
    let report = run(&cfg, &p).unwrap();
    let skipped = report
        .cells
        .iter()
        .filter(|c| matches!(c.outcome, CellOutcome::Skipped(_)))
        .count();
    assert_eq!(report.cells.len(), 31);
    assert_eq!(skipped, 27);
    assert!(report.all_ok());
    // skipped cells leave no rows in the figure data
    let fig = figure_csv(&report);
    assert_eq!(fig.lines().count(), 1 + 4 * 5);
    assert!(!fig.contains("NaN") && !fig.contains("NA"));
}

#[test]
fn figure_data_matches_the_golden_file() {
    let p = labelled(3000, 8);
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&["estimator=cmle-restricted", "group_column=group", "window=20,20"])
        .unwrap();
    let fig = figure_csv(&run(&cfg, &p).unwrap());
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/figure.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(path, &fig).unwrap();
    }
    assert_eq!(fig, std::fs::read_to_string(path).unwrap());
}

#[test]
fn cli_counts_moments() {
    let out = Command::new(env!("CARGO_BIN_EXE_sslogit"))
        .args(["count-moments", "--T", "3", "--restricted", "0", "--covariates", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "24 / 21 / 0\n");
}

#[test]
fn cli_fit_writes_reports_and_signals_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("panel.csv");
    std::fs::write(&input, to_csv(&labelled(1500, 9))).unwrap();
    let out_dir = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_sslogit"))
        .args(["fit", "--estimator", "dynamic-pooled", "--group-column", "group", "--input"])
        .arg(&input)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["results.csv", "results.txt", "figure.csv", "config.txt"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let echo = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(echo.contains("estimator = dynamic-pooled\n"));

    // T = 2 leaves the conditional likelihood unidentified in every cell
    let short = simulate_panel(&truth(), &HeterogeneityDist::correctly_specified(), 300, 2, true, 1).unwrap();
    std::fs::write(&input, to_csv(&short)).unwrap();
    let skipped = Command::new(env!("CARGO_BIN_EXE_sslogit"))
        .args(["fit", "--estimator", "cmle", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert!(skipped.status.success(), "skippable cells keep exit code 0");
    let bad = Command::new(env!("CARGO_BIN_EXE_sslogit"))
        .args(["fit", "--estimator", "cmle", "--set", "rho_low=9", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
