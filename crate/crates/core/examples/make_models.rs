//! Regenerates the bundled model directories under `models/`.
//!
//! `cargo run --example make_models [-- <dir>]`

use std::path::PathBuf;

fn main() -> Result<(), loomc::import::ImportError> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models"));
    loomc::models::write_bundled(&dir)?;
    for (name, _) in loomc::models::bundled() {
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
