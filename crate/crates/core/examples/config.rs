//! Layered configuration: defaults, a TOML file, `BLASTCAST_*` variables and
//! explicit overrides, later layers winning.
//!
//! `BLASTCAST_TRAIN__BATCH_SIZE=8 cargo run --example config`

use blastcast::config::ConfigBuilder;

fn main() -> blastcast::Result<()> {
    let file = std::env::temp_dir().join("blastcast-example-config.toml");
    std::fs::write(&file, "seed = 3\n[train]\nlearning_rate = 1e-3\nbatch_size = 16\n")?;
    let cfg = ConfigBuilder::new()
        .file(&file)?
        .env()?
        .set("train.learning_rate", "2e-4")?
        .build()?;
    println!(
        "seed={} learning_rate={} batch_size={}",
        cfg.seed, cfg.train.learning_rate, cfg.train.batch_size
    );
    print!("{}", cfg.to_toml()?);
    Ok(())
}
