//! Empirical measures: CDF conventions, W1, mixtures and shifts.

use rankmfg::model::monotonicity_pairing;
use rankmfg::{CdfConvention, EmpiricalMeasure, RewardSpec};

fn main() -> rankmfg::Result<()> {
    let a = EmpiricalMeasure::from_samples(vec![0.0, 0.0, 1.0, 2.0])?;
    let b = EmpiricalMeasure::dirac(1.0);

    println!("F_a(0)      = {}", a.cdf(0.0));
    println!("F_a(0-)     = {}", a.cdf_left(0.0));
    println!("regular F_a = {}", a.cdf_with(0.0, CdfConvention::Regular));
    println!("median      = {}", a.quantile(0.5)?);
    println!("W1(a, b)    = {}", a.w1_distance(&b));

    let m = a.mixture(&b, 0.5)?;
    println!("mixture atoms: {:?}", m.atoms().collect::<Vec<_>>());
    println!("shift by 1: mean {} -> {}", a.mean(), a.shift(1.0).mean());

    let r = RewardSpec::linear_rank();
    for conv in [CdfConvention::RightContinuous, CdfConvention::Regular] {
        println!("pairing ({conv:?}) = {:.3e}", monotonicity_pairing(&r, &a, &b, conv));
    }
    print!("{}", m.to_csv_string());
    Ok(())
}
