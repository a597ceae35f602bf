//! Phase estimation from magnitude on synthetic harmonic clips: the FFC
//! autoencoder against its conv ablation and a vanilla U-Net, same data,
//! same budget, several seeds.
//!
//! Usage: `cargo run --release --example phase_task [steps]`
//! (set `RUST_LOG=info` for progress).

use ffc_se::models::ModelKind;
use ffc_se::phase::{run_phase_task, PhaseTaskConfig};

fn main() -> ffc_se::Result<()> {
    env_logger::init();
    let mut cfg = PhaseTaskConfig::default();
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.steps = steps;
    }
    let report = run_phase_task(&cfg)?;
    print!("{}", report.table());
    let (wins, total) = report.wins(ModelKind::FfcAe, ModelKind::FfcAeAblated);
    println!("ffc_ae >= ffc_ae_ablated on {wins}/{total} seeds");
    Ok(())
}
