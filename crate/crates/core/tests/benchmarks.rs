use egn::bench::{self, ModelPreset, ProfileGrid, ProfileRow, SolverGrid, SolverRow};
use egn::solvers::SolverKind;

fn grid() -> SolverGrid {
    SolverGrid {
        ds: vec![1_000, 20_000],
        bs: vec![8],
        cs: vec![1, 4],
        solvers: vec![SolverKind::EgnDg, SolverKind::Smw, SolverKind::Qr, SolverKind::DenseOracle],
        repeats: 3,
        warmup: 1,
        seed: 0,
        max_bytes: bench::DEFAULT_MAX_BYTES,
    }
}

#[test]
fn solver_report_has_one_row_per_cell_and_round_trips() {
    let g = grid();
    let rows = bench::bench_solver(&g).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    bench::write_rows(&rows, &path).unwrap();
    let back: Vec<SolverRow> = bench::read_rows(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    assert_eq!(back, rows);
    assert!(rows.iter().all(|r| r.repeats == 3));

    let find = |solver: &str, d: usize, c: usize| {
        rows.iter().find(|r| r.solver == solver && r.d == d && r.c == c).unwrap()
    };
    assert_eq!(find("qr", 1_000, 4).status, "unsupported");
    assert_eq!(find("qr", 1_000, 1).status, "ok");
    assert_eq!(find("dense", 20_000, 1).status, "unsupported");
    let egn = find("egn", 1_000, 4);
    let smw = find("smw", 1_000, 4);
    let ratio = egn.mean_seconds.unwrap() / smw.mean_seconds.unwrap();
    assert!((egn.egn_smw_ratio.unwrap() - ratio).abs() < 1e-12);
    assert_eq!(find("dense", 1_000, 4).egn_smw_ratio, egn.egn_smw_ratio);
}

#[test]
fn memory_guard_skips_large_cells() {
    let mut g = grid();
    g.max_bytes = 1 << 20;
    let rows = bench::bench_solver(&g).unwrap();
    assert_eq!(rows.len(), 16);
    let skipped = rows.iter().filter(|r| r.status == "skipped_memory").count();
    assert!(skipped > 0);
    assert!(rows
        .iter()
        .filter(|r| r.status == "skipped_memory")
        .all(|r| r.mean_seconds.is_none()));
}

#[test]
fn egn_time_grows_with_parameter_count() {
    let g = SolverGrid {
        ds: vec![1_000, 100_000],
        bs: vec![32],
        cs: vec![10],
        solvers: vec![SolverKind::EgnDg],
        repeats: 3,
        warmup: 1,
        ..Default::default()
    };
    let rows = bench::bench_solver(&g).unwrap();
    assert!(rows[0].mean_seconds.unwrap() < rows[1].mean_seconds.unwrap());
}

#[test]
fn zero_repeats_is_rejected() {
    let mut g = grid();
    g.repeats = 0;
    assert!(bench::bench_solver(&g).is_err());
}

#[test]
fn profile_reports_configured_repeats_and_fractions() {
    let grid = ProfileGrid {
        models: vec![ModelPreset::parse("1k").unwrap(), ModelPreset::parse("4-8-1").unwrap()],
        bs: vec![8, 64],
        repeats: 4,
        warmup: 1,
        seed: 0,
        max_bytes: bench::DEFAULT_MAX_BYTES,
    };
    let rows = bench::profile_batch(&grid).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].params, 1033);
    assert_eq!(rows[2].params, 49);
    for r in &rows {
        assert_eq!(r.repeats, 4);
        let f = r.solve_fraction.unwrap();
        assert!(f > 0.0 && f < 1.0);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.csv");
    bench::write_rows(&rows, &path).unwrap();
    let back: Vec<ProfileRow> = bench::read_rows(&path).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn solve_fraction_grows_with_batch_size() {
    let widths = ModelPreset::parse("10k").unwrap().widths;
    let frac = |b| {
        let (s, o) = bench::profile_cell(&widths, b, 3, 1, 0).unwrap();
        s / (s + o)
    };
    assert!(frac(256) > frac(16));
}

#[test]
fn model_presets() {
    let sizes: Vec<usize> = ["1k", "10k", "100k"]
        .iter()
        .map(|m| {
            let p = ModelPreset::parse(m).unwrap();
            egn::nn::MlpSpec::new(p.widths, egn::nn::Activation::Relu)
                .unwrap()
                .param_count()
        })
        .collect();
    assert_eq!(sizes, vec![1033, 10273, 101121]);
    assert!(ModelPreset::parse("huge").is_err());
    assert!(ModelPreset::parse("8").is_err());
}

#[test]
fn size_lists_accept_scientific_notation() {
    assert_eq!(bench::parse_sizes("1e3, 20000,1e6").unwrap(), vec![1_000, 20_000, 1_000_000]);
    assert!(bench::parse_sizes("1.5").is_err());
    assert!(bench::parse_sizes("ten").is_err());
    let kinds = bench::parse_list::<SolverKind>("egn,smw,cg:5").unwrap();
    assert_eq!(kinds[2], SolverKind::CgInexact { max_iters: 5 });
}
