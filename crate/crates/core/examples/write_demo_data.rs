//! Writes the demo bundle: target survey, segment CATE draws and source units.
//!
//!     cargo run --release --example write_demo_data -- data/demo

use scaled_bb::demo::{build_demo, write_demo, DemoSpec};

fn main() -> scaled_bb::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo".into());
    let demo = build_demo(&DemoSpec::default())?;
    write_demo(&demo, &dir)?;
    println!("wrote {dir}/{{target,cate_segments,source}}.csv");
    Ok(())
}
