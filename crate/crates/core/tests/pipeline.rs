use std::fs;

use shelab::experiments::*;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        grid: GridSpec { dx: 1.0 / 16.0, ..Default::default() },
        replicates: 20,
        seed: 3,
        tails: TailSpec { samples: 600, ..Default::default() },
        hitting: HitSpec { dims: vec![1, 2], ..Default::default() },
        tasks: Task::ALL.to_vec(),
        out_dir: Some(dir.to_path_buf()),
        ..Default::default()
    }
}

fn header(path: &std::path::Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn full_run_writes_every_table_with_its_header() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_scenario(&small_config(dir.path())).unwrap();
    let p = |name: &str| dir.path().join(name);
    for name in ["aggregate.csv", "replicates.csv", "oscillation.csv", "window.csv", "cover.json", "hits.csv", "tails.csv", "calibration.json"] {
        assert!(bundle.files.contains(&p(name)), "{name} missing from the bundle");
        assert!(p(name).exists(), "{name} not written");
    }
    assert_eq!(header(&p("aggregate.csv")), "name,value,stderr,n");
    assert_eq!(header(&p("hits.csv")), "d,z_id,eps,p_hat,ci_lo,ci_hi,hits,trials");
    assert_eq!(header(&p("tails.csv")), "rho,lambda,p_hat,ci_lo,ci_hi,n");
    assert_eq!(header(&p("window.csv")), "replicate,probe,q,found,level,kappa");
    assert!(header(&p("oscillation.csv")).starts_with("replicate,t0,x0,rho,osc_n0"));

    let rows = read_aggregate(&p("aggregate.csv")).unwrap();
    assert_eq!(rows.len(), bundle.aggregate.len());
    for (a, b) in rows.iter().zip(&bundle.aggregate) {
        assert_eq!(a.name, b.name);
        assert!(a.value == b.value || (a.value.is_nan() && b.value.is_nan()), "{}", a.name);
    }
    let k_tilde = rows.iter().find(|r| r.name == "k_tilde").unwrap().value;
    let cover: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("cover.json")).unwrap()).unwrap();
    assert_eq!(cover["k_tilde"].as_f64(), Some(k_tilde));
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let cfg = |seed| ExperimentConfig {
        grid: GridSpec { dx: 1.0 / 16.0, ..Default::default() },
        replicates: 12,
        seed,
        tasks: vec![Task::Simulate, Task::Window],
        ..Default::default()
    };
    let a = run_scenario(&cfg(5)).unwrap().aggregate;
    let b = run_scenario(&cfg(5)).unwrap().aggregate;
    let c = run_scenario(&cfg(6)).unwrap().aggregate;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn linear_variance_tracks_the_oracle_at_the_default_ratio() {
    let cfg = ExperimentConfig {
        d: 1,
        grid: GridSpec { t_end: 1.0, dx: 1.0 / 16.0, ..Default::default() },
        scan_stopping: false,
        replicates: 800,
        ..Default::default()
    };
    let recs = run_simulate(&cfg).unwrap();
    let row = simulate_aggregate(&cfg, &recs).into_iter().find(|r| r.name == "var_u_marginal_k0").unwrap();
    let target = shelab::heat_kernel::n0_variance(1.0);
    assert!((row.value - target).abs() <= 4.0 * row.stderr, "{} ± {} vs {target}", row.value, row.stderr);
}
