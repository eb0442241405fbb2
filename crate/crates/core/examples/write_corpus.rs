//! Writes the fixed model corpus used by the conformance crate.
//!
//! Usage: `cargo run -p tinyaot --example write_corpus -- <dir>`

use std::path::PathBuf;

use tinyaot::model::save_model;
use tinyaot::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).ok_or("missing output directory")?);
    std::fs::create_dir_all(&dir)?;
    let mut models = vec![
        ("sine", synth::sine_predictor(2024)),
        ("tiny_conv", synth::tiny_conv(49)),
        ("mobilenet_mini", synth::mobilenet_mini(96)),
        ("dense32", synth::dense32(32)),
        ("identity_reshape", synth::identity_reshape()),
    ];
    for seed in 0..4 {
        models.push((
            ["chain_a", "chain_b", "chain_c", "chain_d"][seed],
            synth::random_chain(7000 + seed as u64),
        ));
    }
    for (name, model) in models {
        let path = dir.join(format!("{name}.json"));
        save_model(&model, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}
