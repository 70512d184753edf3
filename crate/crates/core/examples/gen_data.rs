//! Writes a synthetic camouflaged RGB-D set and prints its statistics.
//!
//! cargo run --release --example gen_data -- [out_dir] [count] [size] [seed]

use std::path::PathBuf;

use dganet::data::{generate, write_dataset};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("synthetic"));
    let count: usize = args.get(1).map_or(Ok(16), |s| s.parse())?;
    let size: usize = args.get(2).map_or(Ok(128), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(0), |s| s.parse())?;

    let samples = generate(count, size, seed)?;
    write_dataset(&samples, &out)?;
    for s in &samples {
        println!(
            "{}  fg {:5.3}  rgb contrast {:5.3}  depth contrast {:5.3}",
            s.id,
            s.foreground_fraction(),
            s.rgb_contrast(),
            s.depth_contrast()
        );
    }
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}
