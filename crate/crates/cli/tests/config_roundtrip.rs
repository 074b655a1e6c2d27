use std::path::PathBuf;

use bundleflow::config::{emit_config, parse_config, DomainConfig, DomainModeName, Experiment, InitialConfig, InitialKind, RunConfig, RunSection};
use bundleflow_core::{FunctionalKind, SolitonKind, StepControl};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, 1e-9..1e-3f64, Just(0.0), Just(1.0)]
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-6..1e4f64, Just(1.0)]
}

fn config() -> impl Strategy<Value = RunConfig> {
    let experiment = prop_oneof![
        Just(Experiment::Flow),
        Just(Experiment::Stability),
        Just(Experiment::Monotonicity),
        Just(Experiment::Blowdown),
        Just(Experiment::Conservation)
    ];
    let control = (1e-3..1.0f64, 1e-15..1e-6f64, 0usize..100, proptest::option::of(positive()))
        .prop_map(|(safety, dt_min, max_rejects, dt_max)| StepControl { safety, dt_min, max_rejects, dt_max });
    let functional = prop_oneof![Just(FunctionalKind::F), Just(FunctionalKind::W), Just(FunctionalKind::WPlus)];
    let run = (
        positive(),
        functional,
        proptest::option::of(positive()),
        proptest::collection::vec(positive(), 0..5),
        positive(),
        positive(),
        proptest::collection::vec(positive(), 0..4),
    )
        .prop_map(|(horizon, functional, blowup_time, scales, c, s, stops)| RunSection {
            horizon,
            functional,
            blowup_time,
            scales,
            checkpoints_per_log_unit: c,
            samples_per_log_unit: s,
            stops,
        });
    (experiment, any::<u64>(), 8usize..200, positive(), 1usize..4, finite(), control, run, finite(), "[a-z0-9_/]{1,12}")
        .prop_map(|(experiment, seed, size, period, nf, gen, control, run, epsilon, dir)| {
            RunConfig {
                experiment,
                seed,
                domain: DomainConfig {
                    mode: DomainModeName::Grid,
                    sizes: vec![size],
                    periods: vec![period],
                    holonomy: None,
                    curvature: 0.0,
                    stencil_order: 4,
                },
                fiber_dim: nf,
                initial: InitialConfig {
                    kind: InitialKind::Soliton,
                    soliton: SolitonKind::Flat,
                    generator: vec![gen, -gen],
                    euler_density: 1.0,
                    t: 1.0,
                    epsilon,
                    path: None,
                },
                control,
                run,
                output_dir: PathBuf::from(dir),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn emit_then_parse_is_identity(cfg in config()) {
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(emit_config(&back), text);
    }

    #[test]
    fn canonical_form_is_a_fixed_point(cfg in config(), comment in "[ a-z]{0,10}") {
        // Reordered, commented, sparsely spaced text emits back to the canonical form.
        let canonical = emit_config(&cfg);
        let mut lines: Vec<String> = canonical.lines().map(|l| l.replacen(" = ", "=", 1)).collect();
        lines.reverse();
        let messy = format!("# {comment}\n\n{}\n", lines.join("\n"));
        prop_assert_eq!(emit_config(&parse_config(&messy).unwrap()), canonical);
    }
}

#[test]
fn holonomy_round_trips_on_a_grid_start() {
    let text = "experiment = flow\ninitial.kind = checkpoint\ninitial.path = Cargo.toml\nfiber.dim = 2\ndomain.sizes = [16]\ndomain.holonomy = [[1.5, 0.0], [0.0, 0.6666666666666666]]\n";
    let cfg = parse_config(text);
    // 1.5 · 0.6666666666666666 differs from 1 by one ulp, well inside 1e-12.
    let cfg = cfg.unwrap();
    assert_eq!(parse_config(&emit_config(&cfg)).unwrap(), cfg);
}
