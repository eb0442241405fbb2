//! Command-line front end.
//!
//! Machine-readable JSON goes to stdout; diagnostics go to stderr. Exit
//! codes: 0 success, 1 I/O or emission failure, 2 malformed model or
//! input, 3 shape, size or overflow problems, 4 RAM budget unreachable.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::codegen::{emit_source, EmitOptions};
use crate::compile::{execute_plan, fold_constants, CompiledPlan};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::memory::plan_memory;
use crate::model::load_model;
use crate::reference::{float_reference, naive_quantized_reference};

#[derive(Debug, Parser)]
#[command(
    name = "tinyaot",
    version,
    about = "Ahead-of-time compiler for int8 TinyML models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit source, plan and memory report for a model.
    Compile {
        model: PathBuf,
        #[arg(short = 'o', long = "out-dir")]
        out_dir: PathBuf,
        /// RAM budget in bytes; FullyConnected layers over it are paged.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        ram_budget: Option<u64>,
    },
    /// Run one inference and print the output as a JSON array.
    Run {
        model: PathBuf,
        /// JSON file holding a flat integer array.
        #[arg(long)]
        input: PathBuf,
        /// Page every FullyConnected layer.
        #[arg(long)]
        paged: bool,
        /// Neurons per page when --paged is given.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        page_size: u64,
        /// Also print both reference evaluations and per-element deltas.
        #[arg(long)]
        oracle: bool,
    },
    /// Time repeated inference on a fixed random input.
    Bench {
        model: PathBuf,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        iters: u64,
        #[arg(long)]
        paged: bool,
    },
}

fn load(path: &Path) -> Result<(Graph, CompiledPlan)> {
    let model = load_model(path)?;
    let graph = build_graph(&model)?;
    let plan = fold_constants(&graph)?;
    Ok((graph, plan))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn compile(model: &Path, out_dir: &Path, budget: Option<usize>) -> Result<serde_json::Value> {
    let (_, plan) = load(model)?;
    let (plan, report) = plan_memory(&plan, budget)?;
    let source = emit_source(&plan, &EmitOptions::default())?;
    let stem = model
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_string();
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let paths = [
        out_dir.join(format!("{stem}.rs")),
        out_dir.join(format!("{stem}.plan.json")),
        out_dir.join(format!("{stem}.memory.json")),
    ];
    write(&paths[0], &source)?;
    write(&paths[1], &pretty(&plan))?;
    write(&paths[2], &pretty(&report))?;
    Ok(json!({
        "source": paths[0],
        "plan": paths[1],
        "memory_report": paths[2],
        "flash_bytes": report.flash_bytes,
        "peak_ram_bytes": report.peak_ram_bytes,
        "paged_steps": report.steps.iter().filter(|s| s.paged).map(|s| s.op).collect::<Vec<_>>(),
    }))
}

fn read_input(path: &Path) -> Result<Vec<i8>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let values: Vec<i64> = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: "input".into(),
        message: e.to_string(),
    })?;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            i8::try_from(v).map_err(|_| Error::Format {
                path: format!("input[{i}]"),
                message: format!("{v} is outside the i8 range"),
            })
        })
        .collect()
}

fn run(
    model: &Path,
    input: &Path,
    page_size: Option<usize>,
    oracle: bool,
) -> Result<serde_json::Value> {
    let (graph, plan) = load(model)?;
    let plan = match page_size {
        Some(p) => plan.page_all_fully_connected(p),
        None => plan,
    };
    let x = read_input(input)?;
    let y = execute_plan(&plan, &x)?;
    if !oracle {
        return Ok(json!(y));
    }
    let naive = naive_quantized_reference(&graph, &x)?;
    let real = float_reference(&graph, &x)?;
    let q = graph.output_quant;
    let float_q: Vec<i32> = real
        .iter()
        .map(|&r| tinyaot_runtime::quant::quantize(r, q, -128, 127))
        .collect();
    let delta_naive: Vec<i32> = y
        .iter()
        .zip(&naive)
        .map(|(&a, &b)| a as i32 - b as i32)
        .collect();
    let delta_float: Vec<i32> = y
        .iter()
        .zip(&float_q)
        .map(|(&a, &b)| a as i32 - b)
        .collect();
    let max_abs = |d: &[i32]| d.iter().map(|v| v.abs()).max().unwrap_or(0);
    Ok(json!({
        "output": y,
        "naive_reference": naive,
        "float_reference": real,
        "float_reference_quantized": float_q,
        "delta_naive": delta_naive,
        "delta_float": delta_float,
        "max_abs_delta_naive": max_abs(&delta_naive),
        "max_abs_delta_float": max_abs(&delta_float),
    }))
}

/// Median and nearest-rank 95th percentile of `samples` (sorted in place).
pub fn summarize(samples: &mut [u128]) -> (u128, u128) {
    assert!(!samples.is_empty());
    samples.sort_unstable();
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    };
    let rank = (95 * n).div_ceil(100).max(1);
    (median, samples[rank - 1])
}

fn bench(model: &Path, iters: usize, paged: bool) -> Result<serde_json::Value> {
    let (_, plan) = load(model)?;
    let plan = if paged {
        plan.page_all_fully_connected(1)
    } else {
        plan
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<i8> = (0..plan.input.len()).map(|_| rng.gen()).collect();
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let y = execute_plan(&plan, &x)?;
        samples.push(start.elapsed().as_nanos());
        std::hint::black_box(y);
    }
    let (median, p95) = summarize(&mut samples);
    Ok(json!({
        "iterations": iters,
        "paged": paged,
        "median_ns": median as u64,
        "p95_ns": p95 as u64,
    }))
}

fn dispatch(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Compile {
            model,
            out_dir,
            ram_budget,
        } => compile(&model, &out_dir, ram_budget.map(|b| b as usize)),
        Command::Run {
            model,
            input,
            paged,
            page_size,
            oracle,
        } => run(&model, &input, paged.then_some(page_size as usize), oracle),
        Command::Bench {
            model,
            iters,
            paged,
        } => bench(&model, iters as usize, paged),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(value) => {
            println!("{value}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_median_is_the_sample() {
        assert_eq!(summarize(&mut [42]), (42, 42));
    }

    #[test]
    fn percentiles() {
        let mut s: Vec<u128> = (1..=100).rev().collect();
        assert_eq!(summarize(&mut s), (50, 95));
        assert_eq!(summarize(&mut [3, 1, 2]), (2, 3));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
