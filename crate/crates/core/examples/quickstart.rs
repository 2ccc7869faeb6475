//! Writes a synthetic trace, its schema and a small pipeline config into a
//! directory, ready for the `svcavail` subcommands.
//!
//! ```text
//! cargo run --release --example quickstart -- /tmp/svc
//! svcavail cluster --config /tmp/svc/pipeline.toml
//! ```

use std::path::PathBuf;

use svcavail::pipeline::DatasetSchema;
use svcavail::synthetic::{generate_trace, write_trace_csv, TraceSpec};

const CONFIG: &str = r#"[paths]
input = "trace.csv"
schema = "schema.txt"
output_dir = "out"

[seeds]
cluster = 1
split = 2
stage1 = 3
stage2 = 4

[ingest]
min_count = 50

[cluster]
k_min = 1
k_max = 6
b = 5

[stage1]
max_epochs = 40

[series]
window = 64
stride = 4
gamma = 3
granularity_s = 60

[gaf]
paa = 32

[stage2]
input_size = 32
width_factor = 0.125
max_epochs = 8
precision = "f32"
"#;

fn main() -> svcavail::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "svcavail-demo".into()));
    std::fs::create_dir_all(&dir).map_err(|e| svcavail::Error::io(&dir, e))?;
    let records = generate_trace(&TraceSpec::default())?;
    write_trace_csv(&dir.join("trace.csv"), &records)?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| svcavail::Error::io(&p, e))
    };
    write("schema.txt", &DatasetSchema::default().to_text())?;
    write("pipeline.toml", CONFIG)?;
    println!("{} records written to {}", records.len(), dir.display());
    Ok(())
}
