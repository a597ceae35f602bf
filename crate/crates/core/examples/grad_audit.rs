//! Finite-difference audit of every differentiable op and composite path.
//!
//! Usage: `cargo run --release --example grad_audit [name-filter]`

use ffc_se::audit::{run_audit, AUDIT_TOL};

fn main() -> ffc_se::Result<()> {
    let filter = std::env::args().nth(1);
    let entries = run_audit(filter.as_deref())?;
    let mut failed = 0;
    for e in &entries {
        let tag = if e.passed() { "ok" } else { "FAIL" };
        println!("{:<20} {:>10.3e} {:>7.2}s  {tag}", e.name, e.max_rel_err, e.seconds);
        failed += usize::from(!e.passed());
    }
    println!("{} checks, {failed} above {AUDIT_TOL:e}", entries.len());
    Ok(())
}
