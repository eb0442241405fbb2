//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinyaot::codegen::{count_kernel_calls, emit_source, EmitOptions};
use tinyaot::compile::{execute_plan, fold_constants, CompiledPlan, Kernel};
use tinyaot::graph::build_graph;
use tinyaot::memory::plan_memory;
use tinyaot::model::{load_model, OpCode};
use tinyaot::reference::{float_reference_quantized_input, naive_quantized_reference};
use tinyaot::synth;
use tinyaot_conformance::{find, CORPUS};
use tinyaot_runtime::activation::{relu, relu6, softmax, Softmax};
use tinyaot_runtime::kernels::{fully_connected, fully_connected_paged, page_count};
use tinyaot_runtime::quant::{dequantize, quantize};
use tinyaot_runtime::view::{extract_view, output_extent};
use tinyaot_runtime::{Padding, QuantParams, Window};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_input(rng: &mut ChaCha8Rng, len: usize) -> Vec<i8> {
    (0..len).map(|_| rng.gen()).collect()
}

fn compile_file(path: &std::path::Path, budget: Option<usize>) -> CompiledPlan {
    let m = load_model(path).expect("corpus model loads");
    let plan = fold_constants(&build_graph(&m).expect("graph")).expect("fold");
    plan_memory(&plan, budget).expect("memory plan").0
}

fn random_quant(rng: &mut ChaCha8Rng) -> QuantParams {
    QuantParams::new(rng.gen_range(0.01..0.5), rng.gen_range(-64..=64))
}

/// Every operator kind and activation stays within one integer unit of the
/// quantized real-valued definition.
fn operator_oracle() -> Outcome {
    const TRIALS: u64 = 1000;
    let start = Instant::now();
    let mut worst = 0;
    let mut elements = 0usize;
    for kind in OpCode::ALL {
        for seed in 0..TRIALS {
            let g = build_graph(&synth::random_single_op(kind, seed)).map_err(|e| e.to_string())?;
            let plan = fold_constants(&g).map_err(|e| e.to_string())?;
            let x = random_input(&mut rng(seed ^ 0xA5A5), g.input_len());
            let y = execute_plan(&plan, &x).map_err(|e| e.to_string())?;
            let real = float_reference_quantized_input(&g.ops[0], &x);
            for (r, &q) in real.iter().zip(&y) {
                let d = (quantize(*r, g.output_quant, -128, 127) - q as i32).abs();
                if d > 1 {
                    return Err(format!("{kind} seed {seed}: delta {d}"));
                }
                worst = worst.max(d);
                elements += 1;
            }
        }
    }

    // Standalone activations.
    let mut r = rng(77);
    for trial in 0..TRIALS {
        let (qi, qo) = (random_quant(&mut r), random_quant(&mut r));
        for x in [r.gen::<i8>(), r.gen(), r.gen(), r.gen()] {
            let real = dequantize(x as i32, qi);
            let checks = [
                ("RELU", relu(x, qi, qo), real.max(0.0)),
                ("RELU6", relu6(x, qi, qo), real.clamp(0.0, 6.0)),
            ];
            for (name, got, want) in checks {
                let d = (quantize(want, qo, -128, 127) - got as i32).abs();
                if d > 1 {
                    return Err(format!("{name} trial {trial}: x={x} delta {d}"));
                }
                worst = worst.max(d);
                elements += 1;
            }
        }
        let n = r.gen_range(1..=8);
        let row = random_input(&mut r, n);
        let s_y = 1.0 / r.gen_range(32..=256) as f64;
        let z_y = r.gen_range(-128..=(127 - (1.0 / s_y).ceil() as i32).max(-128));
        let params = Softmax {
            row_len: n,
            input_scale: qi.scale,
            output: QuantParams::new(s_y, z_y),
        };
        let mut y = vec![0i8; n];
        softmax(&row, &params, &mut y).map_err(|e| e.to_string())?;
        let reals: Vec<f64> = row.iter().map(|&v| dequantize(v as i32, qi)).collect();
        let total: f64 = reals.iter().map(|v| v.exp()).sum();
        for (v, &got) in reals.iter().zip(&y) {
            let want = quantize(v.exp() / total, params.output, -128, 127);
            let d = (want - got as i32).abs();
            if d > 1 {
                return Err(format!("SOFTMAX trial {trial}: delta {d}"));
            }
            worst = worst.max(d);
            elements += 1;
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(60) {
        return Err(format!("took {elapsed:.1?}, limit 60 s"));
    }
    Ok(format!(
        "6 op kinds + 3 activations x {TRIALS} instances, {elements} elements, max |delta| {worst}, {elapsed:.1?}"
    ))
}

/// The naive quantized reference and the folded engine agree bit for bit.
fn fold_equivalence() -> Outcome {
    let mut compared = 0;
    for seed in 0..200u64 {
        let m = synth::random_chain(10_000 + seed);
        let g = build_graph(&m).map_err(|e| format!("chain {seed}: {e}"))?;
        let plan = fold_constants(&g).map_err(|e| format!("chain {seed}: {e}"))?;
        let mut r = rng(seed);
        for _ in 0..5 {
            let x = random_input(&mut r, g.input_len());
            let naive = naive_quantized_reference(&g, &x).map_err(|e| e.to_string())?;
            let engine = execute_plan(&plan, &x).map_err(|e| e.to_string())?;
            if naive != engine {
                return Err(format!(
                    "chain {seed} ({} ops): {naive:?} vs {engine:?}",
                    g.ops.len()
                ));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "200 chains of 2-6 ops, {compared} runs, 0 mismatches"
    ))
}

/// Emitted `predict` functions agree with the plan executor.
fn emitted_parity() -> Outcome {
    let mut runs = 0;
    for entry in CORPUS {
        let plan = compile_file(&entry.model_path(), entry.ram_budget);
        let mut r = rng(entry.input_len as u64);
        for i in 0..100 {
            let x = random_input(&mut r, entry.input_len);
            let expect = execute_plan(&plan, &x).map_err(|e| e.to_string())?;
            let got = (entry.predict)(&x);
            if got != expect {
                return Err(format!("{} input {i}: {got:?} vs {expect:?}", entry.name));
            }
            runs += 1;
        }
    }
    Ok(format!(
        "{} compiled models x 100 inputs, {runs} runs, 0 mismatches",
        CORPUS.len()
    ))
}

/// Paged FullyConnected equals unpaged for every page size.
fn paging_equivalence() -> Outcome {
    let mut cases = 0;
    for (i, p) in [1usize, 16, 32, 64].into_iter().enumerate() {
        for (j, n) in [1usize, 7, 32].into_iter().enumerate() {
            let seed = (i * 10 + j) as u64;
            let g = build_graph(&synth::dense(seed, n, p)).map_err(|e| e.to_string())?;
            let plan = fold_constants(&g).map_err(|e| e.to_string())?;
            let Kernel::FullyConnected(fc) = &plan.steps[0].kernel else {
                return Err("expected a FullyConnected step".into());
            };
            let params = fc.params();
            let mut r = rng(seed);
            for _ in 0..4 {
                let x = random_input(&mut r, n);
                let mut unpaged = vec![0i8; p];
                fully_connected(&x, &params, &mut unpaged).map_err(|e| e.to_string())?;
                for page_size in 1..=p {
                    let mut page = vec![0i8; n * page_size];
                    let mut paged = vec![0i8; p];
                    let pages =
                        fully_connected_paged(&x, &params, page_size, &mut page, &mut paged)
                            .map_err(|e| e.to_string())?;
                    if paged != unpaged {
                        return Err(format!("p={p} n={n} page_size={page_size}: output differs"));
                    }
                    if pages != page_count(p, page_size) {
                        return Err(format!("p={p} page_size={page_size}: {pages} pages"));
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(format!(
        "p in {{1,16,32,64}}, every page size, {cases} cases bit-identical"
    ))
}

/// Working set of the 32x32 dense layer, unpaged and under a 2 kB budget.
fn memory_model() -> Outcome {
    let entry = find("dense32").ok_or("dense32 missing from corpus")?;
    let m = load_model(entry.model_path()).map_err(|e| e.to_string())?;
    let plan =
        fold_constants(&build_graph(&m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (_, unpaged) = plan_memory(&plan, None).map_err(|e| e.to_string())?;
    let ws = unpaged.steps[0].working_set_bytes;
    if !(5000..=5500).contains(&ws) {
        return Err(format!(
            "unpaged working set {ws} bytes outside [5000, 5500]"
        ));
    }
    let (paged_plan, paged) = plan_memory(&plan, Some(2048)).map_err(|e| e.to_string())?;
    let step = &paged.steps[0];
    let pages = paged
        .pages(&paged_plan, 0)
        .ok_or("planner did not page the layer")?;
    if !step.paged || pages > 32 || step.working_set_bytes >= 2048 {
        return Err(format!(
            "budget 2048: paged={} pages={pages} working set {}",
            step.paged, step.working_set_bytes
        ));
    }
    let (_, full) =
        plan_memory(&plan.page_all_fully_connected(1), None).map_err(|e| e.to_string())?;
    Ok(format!(
        "unpaged {ws} B; budget 2048 -> {pages} page(s) of {} neurons, {} B; 32 pages -> {} B",
        step.page_size.unwrap_or(0),
        step.working_set_bytes,
        full.steps[0].working_set_bytes
    ))
}

/// Dequantized softmax outputs sum to one within n * s_y.
fn softmax_normalization() -> Outcome {
    let mut r = rng(4242);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = r.gen_range(1..=32);
        let x = random_input(&mut r, n);
        let s_y = 1.0 / r.gen_range(32..=256) as f64;
        let z_y = r.gen_range(-128..=(127 - (1.0 / s_y).ceil() as i32).max(-128));
        let params = Softmax {
            row_len: n,
            input_scale: r.gen_range(0.005..0.5),
            output: QuantParams::new(s_y, z_y),
        };
        let mut y = vec![0i8; n];
        softmax(&x, &params, &mut y).map_err(|e| e.to_string())?;
        let sum: f64 = y.iter().map(|&q| dequantize(q as i32, params.output)).sum();
        let err = (sum - 1.0).abs();
        if err > n as f64 * s_y {
            return Err(format!("trial {trial}: sum {sum}, n={n}, s_y={s_y}"));
        }
        worst = worst.max(err / (n as f64 * s_y));
    }
    Ok(format!(
        "1000 vectors, worst |sum - 1| = {worst:.3} of the n*s_y bound"
    ))
}

/// Explicitly padded copy of the input, then direct strided slicing.
fn hand_padded_view(
    x: &[i8],
    (h, w, c): (usize, usize, usize),
    win: &Window,
    (row, col): (usize, usize),
    fill: i8,
) -> Vec<i8> {
    let (top, left) = match win.padding {
        Padding::Same => ((win.filter_h - 1) / 2, (win.filter_w - 1) / 2),
        Padding::Valid => (0, 0),
    };
    let (ph, pw) = (
        h + 2 * win.filter_h + 2 * win.stride_h,
        w + 2 * win.filter_w + 2 * win.stride_w,
    );
    let mut padded = vec![fill; ph * pw * c];
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                padded[((i + top) * pw + j + left) * c + k] = x[(i * w + j) * c + k];
            }
        }
    }
    let mut view = Vec::with_capacity(win.filter_h * win.filter_w * c);
    for a in 0..win.filter_h {
        for b in 0..win.filter_w {
            for k in 0..c {
                view.push(padded[((row * win.stride_h + a) * pw + col * win.stride_w + b) * c + k]);
            }
        }
    }
    view
}

/// View extraction agrees with a hand-padded reference everywhere.
fn view_extraction() -> Outcome {
    let mut r = rng(6);
    let mut views = 0;
    for h in 1..=6 {
        for w in 1..=6 {
            for c in 1..=2 {
                let x = random_input(&mut r, h * w * c);
                let fill: i8 = r.gen();
                for fh in 1..=3 {
                    for fw in 1..=3 {
                        for stride_h in 1..=2 {
                            for stride_w in 1..=2 {
                                for padding in [Padding::Same, Padding::Valid] {
                                    let win = Window {
                                        filter_h: fh,
                                        filter_w: fw,
                                        stride_h,
                                        stride_w,
                                        padding,
                                    };
                                    let (Some(oh), Some(ow)) = (
                                        output_extent(h, fh, stride_h, padding),
                                        output_extent(w, fw, stride_w, padding),
                                    ) else {
                                        if padding == Padding::Valid && (fh > h || fw > w) {
                                            continue;
                                        }
                                        return Err(format!("no extent for {h}x{w} {win:?}"));
                                    };
                                    let mut view = vec![0i8; fh * fw * c];
                                    for i in 0..oh {
                                        for j in 0..ow {
                                            extract_view(&x, h, w, c, i, j, &win, fill, &mut view)
                                                .map_err(|e| e.to_string())?;
                                            if view
                                                != hand_padded_view(
                                                    &x,
                                                    (h, w, c),
                                                    &win,
                                                    (i, j),
                                                    fill,
                                                )
                                            {
                                                return Err(format!(
                                                    "{h}x{w}x{c} {win:?} at ({i},{j})"
                                                ));
                                            }
                                            views += 1;
                                        }
                                    }
                                    if extract_view(&x, h, w, c, oh, 0, &win, fill, &mut view)
                                        .is_ok()
                                    {
                                        return Err(format!(
                                            "row {oh} accepted for {h}x{w} {win:?}"
                                        ));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!(
        "inputs up to 6x6, filters up to 3x3, strides 1-2, SAME/VALID: {views} views"
    ))
}

/// The 1-16-16-1 model compiles, plans, runs and emits exactly three calls.
fn sine_pipeline() -> Outcome {
    let entry = find("sine").ok_or("sine missing from corpus")?;
    let m = load_model(entry.model_path()).map_err(|e| e.to_string())?;
    let widths: Vec<_> = m
        .tensors
        .iter()
        .filter(|t| t.data.is_none())
        .map(|t| t.shape.clone())
        .collect();
    if widths != [vec![1, 1], vec![1, 16], vec![1, 16], vec![1, 1]] {
        return Err(format!("unexpected activation shapes {widths:?}"));
    }
    let g = build_graph(&m).map_err(|e| e.to_string())?;
    let plan = fold_constants(&g).map_err(|e| e.to_string())?;
    let (plan, report) = plan_memory(&plan, None).map_err(|e| e.to_string())?;
    let source = emit_source(&plan, &EmitOptions::default()).map_err(|e| e.to_string())?;
    let calls = count_kernel_calls(&source);
    if calls != 3 || count_kernel_calls(entry.source) != 3 {
        return Err(format!("{calls} kernel calls in emitted source"));
    }
    if source != entry.source {
        return Err("emission differs from the build-time source".into());
    }
    let mut outputs = Vec::new();
    for q in [-128i8, -64, 0, 64, 127] {
        let y = execute_plan(&plan, &[q]).map_err(|e| e.to_string())?;
        if y != (entry.predict)(&[q]) {
            return Err(format!("predict disagrees at input {q}"));
        }
        outputs.push(y[0]);
    }
    Ok(format!(
        "3 FULLY_CONNECTED steps, 3 kernel calls, peak RAM {} B, flash {} B, outputs {outputs:?}",
        report.peak_ram_bytes, report.flash_bytes
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("per-operator oracle equivalence", operator_oracle),
        ("fold equivalence", fold_equivalence),
        ("emitted-code parity", emitted_parity),
        ("paging equivalence", paging_equivalence),
        ("memory model", memory_model),
        ("softmax normalization", softmax_normalization),
        ("view extraction", view_extraction),
        ("sine-predictor pipeline", sine_pipeline),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
