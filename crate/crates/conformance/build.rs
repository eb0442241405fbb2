//! Compiles every corpus model to a `predict` module and writes a registry.

use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::{env, fs};

use tinyaot::codegen::{emit_source, EmitOptions};
use tinyaot::{build_graph, fold_constants, load_model, plan_memory};

/// (module name, model file stem, RAM budget)
const BUILDS: &[(&str, &str, Option<usize>)] = &[
    ("sine", "sine", None),
    ("tiny_conv", "tiny_conv", None),
    ("mobilenet_mini", "mobilenet_mini", None),
    ("dense32", "dense32", None),
    ("dense32_2k", "dense32", Some(2048)),
    ("identity_reshape", "identity_reshape", None),
    ("chain_a", "chain_a", None),
    ("chain_b", "chain_b", None),
    ("chain_c", "chain_c", None),
    ("chain_d", "chain_d", None),
];

fn compile(model: &Path, budget: Option<usize>) -> String {
    let m = load_model(model).unwrap_or_else(|e| panic!("{}: {e}", model.display()));
    let g = build_graph(&m).unwrap_or_else(|e| panic!("{}: {e}", model.display()));
    let plan = fold_constants(&g).unwrap_or_else(|e| panic!("{}: {e}", model.display()));
    let (plan, _) =
        plan_memory(&plan, budget).unwrap_or_else(|e| panic!("{}: {e}", model.display()));
    emit_source(&plan, &EmitOptions::default()).expect("emission")
}

fn main() {
    let manifest = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = PathBuf::from(env::var("OUT_DIR").unwrap());
    let mut registry = String::new();
    let mut entries = String::new();
    for &(name, stem, budget) in BUILDS {
        let model = manifest.join("models").join(format!("{stem}.json"));
        println!("cargo:rerun-if-changed={}", model.display());
        fs::write(out.join(format!("{name}.rs")), compile(&model, budget)).unwrap();
        writeln!(
            registry,
            "pub mod {name} {{\n    include!(concat!(env!(\"OUT_DIR\"), \"/{name}.rs\"));\n\n    \
             pub(crate) fn run(input: &[i8]) -> Vec<i8> {{\n        \
             predict(input.try_into().expect(\"input length\")).to_vec()\n    }}\n}}\n"
        )
        .unwrap();
        writeln!(
            entries,
            "    Entry {{ name: {name:?}, model: {model:?}, ram_budget: {budget:?}, \
             input_len: {name}::INPUT_LEN, output_len: {name}::OUTPUT_LEN, \
             predict: {name}::run, source: include_str!(concat!(env!(\"OUT_DIR\"), \"/{name}.rs\")) }},",
            model = format!("models/{stem}.json"),
        )
        .unwrap();
    }
    writeln!(registry, "pub static CORPUS: &[Entry] = &[\n{entries}];").unwrap();
    fs::write(out.join("registry.rs"), registry).unwrap();
    println!("cargo:rerun-if-changed=build.rs");
}
