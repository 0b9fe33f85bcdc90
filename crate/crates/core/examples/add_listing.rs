//! The 3×4×5 Add testcase at every level: graph, loop and affine.
//!
//! `cargo run --example add_listing`

use loomc::models::add_testcase;
use loomc::pipeline::{compile_module, CompileOptions, Emit};

fn main() -> Result<(), loomc::Error> {
    let c = compile_module(add_testcase(), &CompileOptions::default())?;
    for (title, level) in [("graph", Emit::Graph), ("loop", Emit::Loop), ("affine", Emit::Affine)] {
        println!("// ---- {title} ----");
        print!("{}", c.emit(level));
    }
    Ok(())
}
