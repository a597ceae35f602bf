//! Full Jacobian of one FFC layer versus its conv-only ablation: the
//! Fourier branch couples every frequency row, the ablation only
//! neighbours within the kernel radius.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ffc_se::ffc::{frequency_profile, Ffc, FfcConfig, GlobalKind};
use ffc_se::nn::Builder;
use ffc_se::tensor::{jacobian, BatchNormMode, Tensor};

const C: usize = 8;
const F: usize = 16;
const T: usize = 6;

fn main() -> ffc_se::Result<()> {
    for global in [GlobalKind::Fourier, GlobalKind::Conv] {
        let mut b = Builder::new(21);
        let layer = Ffc::new(&mut b, "ffc", FfcConfig::new(C, 0.75).with_global(global))?;
        let mut store = b.finish();
        store.mark_stats_tracked();
        let store = RefCell::new(store);
        let mut jacs = Vec::new();
        for seed in 0..4 {
            let x = Tensor::randn(&[1, C, F, T], &mut ChaCha8Rng::seed_from_u64(seed));
            jacs.push(jacobian(
                |tape, x| {
                    let mut s = store.borrow_mut();
                    let mut ctx = s.ctx(tape, BatchNormMode::Eval, false);
                    layer.forward_cat(&mut ctx, x)
                },
                &x,
            )?);
        }
        let p = frequency_profile(&jacs, C, C, F, T, 1e-12)?;
        println!(
            "{global:?}: cross-frequency density {:.3}, frequency bandwidth {}, time reach {}",
            p.cross_frequency_density, p.bandwidth, p.time_reach
        );
    }
    Ok(())
}
