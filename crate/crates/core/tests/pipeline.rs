use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyaot::compile::{execute_plan, execute_trace, fold_constants};
use tinyaot::graph::build_graph;
use tinyaot::memory::plan_memory;
use tinyaot::model::{parse_model, to_canonical_json, OpCode};
use tinyaot::reference::{float_reference_quantized_input, naive_quantized_reference};
use tinyaot::runtime::quant::quantize;
use tinyaot::synth;

fn input(len: usize, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}

#[test]
fn random_chains_fold_equivalently() {
    for seed in 0..100 {
        let m = synth::random_chain(seed);
        let g = build_graph(&m).unwrap();
        let plan = fold_constants(&g).unwrap();
        for i in 0..3 {
            let x = input(g.input_len(), seed * 7 + i);
            assert_eq!(
                naive_quantized_reference(&g, &x).unwrap(),
                execute_plan(&plan, &x).unwrap(),
                "chain seed {seed}"
            );
        }
    }
}

#[test]
fn single_ops_stay_within_one_unit_of_float() {
    for kind in OpCode::ALL {
        for seed in 0..100 {
            let g = build_graph(&synth::random_single_op(kind, seed)).unwrap();
            let plan = fold_constants(&g).unwrap();
            let x = input(g.input_len(), seed);
            let y = execute_plan(&plan, &x).unwrap();
            let real = float_reference_quantized_input(&g.ops[0], &x);
            for (r, &q) in real.iter().zip(&y) {
                let want = quantize(*r, g.output_quant, -128, 127);
                assert!(
                    (want - q as i32).abs() <= 1,
                    "{kind} seed {seed}: {want} vs {q}"
                );
            }
        }
    }
}

#[test]
fn tiny_conv_matches_naive_reference() {
    let g = build_graph(&synth::tiny_conv(8)).unwrap();
    let plan = fold_constants(&g).unwrap();
    for seed in 0..3 {
        let x = input(g.input_len(), seed);
        assert_eq!(
            naive_quantized_reference(&g, &x).unwrap(),
            execute_plan(&plan, &x).unwrap()
        );
    }
}

#[test]
fn budgeted_plan_runs_identically() {
    let g = build_graph(&synth::tiny_conv(2)).unwrap();
    let plan = fold_constants(&g).unwrap();
    let (paged, report) = plan_memory(&plan, Some(10_000)).unwrap();
    assert!(report.steps.iter().any(|s| s.paged));
    let x = input(g.input_len(), 5);
    assert_eq!(
        execute_plan(&plan, &x).unwrap(),
        execute_plan(&paged, &x).unwrap()
    );
}

#[test]
fn trace_intermediates_have_declared_lengths() {
    let g = build_graph(&synth::mobilenet_mini(6)).unwrap();
    let plan = fold_constants(&g).unwrap();
    let trace = execute_trace(&plan, &input(g.input_len(), 0)).unwrap();
    for (k, op) in g.ops.iter().enumerate() {
        assert_eq!(trace[k + 1].len(), op.output_len());
    }
}

#[test]
fn canonical_text_round_trips_byte_identically() {
    for m in [
        synth::sine_predictor(3),
        synth::mobilenet_mini(3),
        synth::random_chain(17),
    ] {
        let text = to_canonical_json(&m);
        let again = to_canonical_json(&parse_model(&text).unwrap());
        assert_eq!(text, again);
    }
}
