use curator_core::mixture::{
    build_stage1_plan, build_stage2_plan, sample_stream, MixturePlan, SourceSpec, Stage2Params,
};
use curator_core::{Error, Execution};
use proptest::prelude::*;

fn sources() -> impl Strategy<Value = Vec<SourceSpec>> {
    prop::collection::vec((1u64..1_000_000, 1u32..1000), 1..8).prop_map(|raw| {
        let total: u32 = raw.iter().map(|r| r.1).sum();
        raw.iter()
            .enumerate()
            .map(|(i, &(avail, w))| SourceSpec::new(format!("s{i}"), avail, w as f64 / total as f64))
            .collect()
    })
}

fn rows_sum_to_one(plan: &MixturePlan) -> bool {
    plan.per_step_probs()
        .iter()
        .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-6 && r.iter().all(|&p| p >= 0.0))
}

proptest! {
    #[test]
    fn stage1_respects_cap_or_reports_shortfall(
        src in sources(),
        total in 1u64..20_000_000,
        cap in 1u32..8,
    ) {
        let capacity: f64 = src.iter().map(|s| cap as f64 * s.available_tokens as f64).sum();
        match build_stage1_plan(&src, total, cap) {
            Ok(plan) => {
                prop_assert!(rows_sum_to_one(&plan));
                for r in plan.repetitions() {
                    prop_assert!(r <= cap as f64 * (1.0 + 1e-9), "{r}");
                }
                let drawn: f64 = plan.expected_draws.iter().sum();
                prop_assert!((drawn - total as f64).abs() <= 1e-6 * total as f64);
            }
            Err(Error::Planning(_)) => prop_assert!(capacity < total as f64 * (1.0 + 1e-9)),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn stage2_ramp_is_exact_and_monotone(
        src in sources(),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        steps in 1u64..400,
    ) {
        let (start, end) = (a.min(b), a.max(b));
        let params = Stage2Params {
            stem: SourceSpec::new("stem", 1_000_000, 0.0),
            stem_ratio_start: start,
            stem_ratio_end: end,
            steps,
            tokens_per_step: 0,
            repetition_cap: 5,
        };
        let plan = build_stage2_plan(&src, &params).unwrap();
        prop_assert!(rows_sum_to_one(&plan));
        let k = plan.source_names().iter().position(|n| *n == "stem").unwrap();
        let rows = plan.per_step_probs();
        prop_assert_eq!(rows.len() as u64, steps);
        prop_assert_eq!(rows[0][k], start);
        if steps > 1 {
            prop_assert_eq!(rows[rows.len() - 1][k], end);
        }
        prop_assert!(rows.windows(2).all(|w| w[1][k] >= w[0][k]));
    }
}

#[test]
fn sampled_draws_stay_under_cap() {
    // token-weighted draws over a fixed budget, with one source close to
    // its cap
    let src = vec![
        SourceSpec::new("web", 50_000_000, 0.7),
        SourceSpec::new("books", 3_000_000, 0.2),
        SourceSpec::new("code", 40_000_000, 0.1),
    ];
    let total = 60_000_000u64;
    let plan = build_stage1_plan(&src, total, 5).unwrap();
    let n = 20_000;
    let per_draw = total as f64 / n as f64;
    for seed in 0..5 {
        let names = sample_stream(&plan, seed, n, Execution::Parallel);
        for s in &plan.sources {
            let draws = names.iter().filter(|x| **x == s.name).count() as f64 * per_draw;
            assert!(draws <= 5.0 * s.available_tokens as f64, "{} {draws}", s.name);
        }
    }
}
