//! Parameter counts of the published configurations against their
//! reported sizes, with the per-tensor table for one of them.
//!
//! Usage: `cargo run --example param_table [ffc-ae|ffc-ae-ablated|ffc-unet|vanilla-unet]`

use ffc_se::models::{describe_table, published_target, Generator, ModelConfig, ModelKind};
use ffc_se::spectral::StftParams;

fn main() -> ffc_se::Result<()> {
    for cfg in [ModelConfig::v0(), ModelConfig::v1(), ModelConfig::unet_published()] {
        let n = Generator::new(cfg.clone(), StftParams::default())?.count_params();
        if let Some((label, target)) = published_target(&cfg) {
            println!("{label:<10} {n:>9}  target {:.2}M  {:+.2}%", target / 1e6, 100.0 * (n as f64 / target - 1.0));
        }
    }
    let kind = match std::env::args().nth(1) {
        Some(s) => ModelKind::parse(&s)?,
        None => ModelKind::FfcAe,
    };
    let model = Generator::new(ModelConfig::published_default(kind), StftParams::default())?;
    println!("\n{}:", kind.name());
    print!("{}", describe_table(&model.describe()));
    Ok(())
}
