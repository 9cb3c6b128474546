use std::cell::Cell;
use std::collections::BTreeSet;

use proptest::prelude::*;
use vgen_core::flow_match::euler_sample;
use vgen_core::guidance::cfg_single;
use vgen_core::inf_scale::*;
use vgen_core::mmdit::{toy_text_embed, Mmdit, TextEmbedding};
use vgen_core::toy::{train_moving_square, MovingSquareConfig};
use vgen_core::{rng, Result, Tensor};

const SMOOTH: [f64; 6] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

fn toy() -> (Mmdit, MovingSquareConfig) {
    let cfg = MovingSquareConfig {
        frames: 4,
        ..MovingSquareConfig::default()
    };
    (train_moving_square(&cfg).unwrap().0, cfg)
}

fn guided<'a>(
    model: &'a Mmdit,
    text: &'a TextEmbedding,
    null: &'a TextEmbedding,
    calls: &'a Cell<usize>,
) -> impl FnMut(&Tensor, f64, usize) -> Result<Tensor> + 'a {
    move |x, t, _| {
        calls.set(calls.get() + 1);
        cfg_single(
            &model.forward(x, null, t)?,
            &model.forward(x, text, t)?,
            3.0,
        )
    }
}

fn ident(x: &Tensor) -> Result<Tensor> {
    Ok(x.clone())
}

// With a lookahead that reaches the end of sampling, candidate 0's preview
// is its own final output, so each decision can only match or improve the
// path it replaces. Shallower lookahead carries no such guarantee.
#[test]
fn selection_improves_on_the_toy_model() {
    let (model, cfg) = toy();
    let text = toy_text_embed("a square moving right", cfg.dim).unwrap();
    let null = TextEmbedding::null(cfg.dim).unwrap();
    let shape = [1, cfg.frames, cfg.size, cfg.size];
    let steps = 20;
    for seed in 0..4u64 {
        let x1 = Tensor::randn(&shape, 1.0, &mut rng::stream(seed, "noise"));
        let calls = Cell::new(0);

        let plain = euler_sample(guided(&model, &text, &null, &calls), &x1, steps, 1.0).unwrap();
        let baseline = verify_video(&plain, &SMOOTH).unwrap().motion_smoothness;

        let scaled = ScalingConfig {
            injection_steps: BTreeSet::from([1, 3]),
            variations: 4,
            lookahead: steps,
            weights: SMOOTH,
            evals_per_step: 2,
            ..ScalingConfig::default()
        };
        calls.set(0);
        let r = scaled_sample(
            guided(&model, &text, &null, &calls),
            ident,
            &x1,
            steps,
            1.0,
            &scaled,
            &mut rng::stream(seed, "branch"),
            0,
        )
        .unwrap();
        let got = verify_video(&r.output, &SMOOTH).unwrap().motion_smoothness;
        assert!(got >= baseline, "seed {seed}: {got} < {baseline}");
        assert_eq!(r.trace.len(), 2);
        assert_eq!(r.evaluations, 2 * calls.get());
        // Windows of 20 and 18 steps cover every step, so all calls are
        // lookahead calls.
        assert_eq!(r.evaluations, 2 * 4 * (20 + 18));
        for e in &r.trace {
            let best = e.scores[e.chosen].motion_smoothness;
            assert!(e.scores.iter().all(|s| s.motion_smoothness <= best));
        }
    }
}

#[test]
fn search_over_seeds_is_reproducible() {
    let x = |x: &Tensor, t: f64, _: usize| -> Result<Tensor> { x.scale(1.0 - t) };
    let cfg = ScalingConfig {
        seeds: 3,
        ..ScalingConfig::default()
    };
    let a = scaled_search(x, ident, &[1, 4, 6, 6], 8, 1.0, &cfg, 11).unwrap();
    let b = scaled_search(x, ident, &[1, 4, 6, 6], 8, 1.0, &cfg, 11).unwrap();
    assert_eq!(a.output.data(), b.output.data());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.len(), 6);
    assert_eq!(a.final_scores.len(), 3);
    let best = a.final_scores[a.best_seed].total;
    assert!(a.final_scores.iter().all(|s| s.total <= best));
    assert_eq!(a.evaluations, scaling_cost(&cfg, 8).unwrap());
}

fn config() -> impl Strategy<Value = ScalingConfig> {
    (
        prop::collection::btree_set(1usize..=30, 0..5),
        1usize..4,
        1usize..6,
        1usize..4,
        1usize..4,
    )
        .prop_map(
            |(injection_steps, seeds, variations, lookahead, evals_per_step)| ScalingConfig {
                injection_steps,
                seeds,
                variations,
                lookahead,
                evals_per_step,
                ..ScalingConfig::default()
            },
        )
}

proptest! {
    #[test]
    fn cost_is_monotone(c in config(), which in 0usize..4) {
        let before = scaling_cost(&c, 30).unwrap();
        let mut d = c.clone();
        match which {
            0 => d.seeds += 1,
            1 => d.variations += 1,
            2 => d.lookahead += 1,
            _ => { d.injection_steps.insert((1..=30).find(|s| !c.injection_steps.contains(s)).unwrap()); }
        }
        prop_assert!(scaling_cost(&d, 30).unwrap() >= before);
    }
}
