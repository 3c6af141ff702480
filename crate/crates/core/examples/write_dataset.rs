//! Renders the bundled 30-frame synthetic scene into a dataset directory
//! usable by `svo run-vo`.
//!
//! ```text
//! cargo run --release --example write_dataset -- data/synthetic30
//! ```

use std::path::PathBuf;

fn main() -> svo_core::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/synthetic30"));
    let seq = svo_core::synthetic::bundled_sequence();
    svo_core::dataset::write_synthetic_dataset(&seq, &dir)?;
    println!("wrote {} frames to {}", seq.len(), dir.display());
    Ok(())
}
