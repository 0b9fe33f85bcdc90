//! Imports a model directory (manifest plus payload files), prints it, and
//! shows that export followed by import gives the same module back.
//!
//! `cargo run --example import_model [-- <model.json>]`

use std::path::PathBuf;

use loomc::graph::print_graph;
use loomc::import::{export_model, import_model_file, MANIFEST_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("models/leakyrelu")
            .join(MANIFEST_FILE)
    });
    let module = import_model_file(&path)?;
    print!("{}", print_graph(&module));

    let dir = std::env::temp_dir().join(format!("loomc-import-{}", std::process::id()));
    export_model(&module, &dir)?;
    let again = import_model_file(&dir.join(MANIFEST_FILE))?;
    println!("// re-imported module identical: {}", again == module);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
