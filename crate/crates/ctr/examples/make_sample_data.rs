//! Regenerates the bundled sample dataset under `data/` at the repository
//! root. Output is fully seeded, so re-running it reproduces the committed
//! files byte for byte:
//!
//! ```text
//! cargo run -p ctr --example make_sample_data
//! ```

use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let data_dir = root.join("data");
    std::fs::create_dir_all(&data_dir).expect("create data dir");

    ctr::synth::write_csv(&data_dir.join("sample_train.csv"), 2000, 1001).expect("train");
    ctr::synth::write_csv(&data_dir.join("sample_eval.csv"), 500, 2002).expect("eval");
    std::fs::write(data_dir.join("sample.schema"), ctr::synth::schema_text()).expect("schema");

    println!("wrote data/sample_train.csv, data/sample_eval.csv, data/sample.schema");
}
