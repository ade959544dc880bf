//! Paired two-sided Wilcoxon signed-rank test on per-image dice scores.

use complseg::evaluation::{wilcoxon_signed_rank, SignificanceLevel};

fn main() -> complseg::Result<()> {
    let implicit = [0.91, 0.88, 0.95, 0.79, 0.85, 0.93];
    let ensemble = [0.89, 0.84, 0.90, 0.80, 0.81, 0.90];
    let r = wilcoxon_signed_rank(&implicit, &ensemble)?;
    println!(
        "n = {}, W+ = {}, W- = {}, p = {:.4} ({:?}, {:?})",
        r.n,
        r.w_plus,
        r.w_minus,
        r.p_value,
        r.method,
        SignificanceLevel::from_p(r.p_value)
    );

    // larger samples switch to the normal approximation
    let a: Vec<f64> = (0..80).map(|i| 0.80 + 0.001 * (i % 17) as f64).collect();
    let b: Vec<f64> = (0..80).map(|i| 0.78 + 0.0013 * (i % 13) as f64).collect();
    let r = wilcoxon_signed_rank(&a, &b)?;
    println!("n = {}, p = {:.3e} ({:?})", r.n, r.p_value, r.method);
    Ok(())
}
