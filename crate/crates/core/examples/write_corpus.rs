//! Regenerates the bundled synthetic corpora under `data/`.

use std::fs;
use std::path::Path;

use kerple::corpus::{synthetic_text, TEST_BYTES, TEST_SEED, TRAIN_BYTES, TRAIN_SEED};

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    fs::write(dir.join("synthetic_train.txt"), synthetic_text(TRAIN_SEED, TRAIN_BYTES))?;
    fs::write(dir.join("synthetic_test.txt"), synthetic_text(TEST_SEED, TEST_BYTES))?;
    Ok(())
}
