//! Closed-form value function and optimal drift against a fixed population.
//!
//! Run with `cargo run --example value_function`.

use rankmfg::value::lemma_bounds;
use rankmfg::{EmpiricalMeasure, ModelParams, RewardSpec, ValueField};

fn main() -> rankmfg::Result<()> {
    let params = ModelParams::new(1.0, 0.0, 1.0, 1.0)?;
    let reward = RewardSpec::linear_rank();
    // two camps of competitors
    let mu = EmpiricalMeasure::from_weighted(vec![(-0.5, 0.5), (0.5, 0.5)])?;
    let field = ValueField::new(params, reward.clone(), mu)?;

    println!("{:>5} {:>6} {:>10} {:>10} {:>10}", "t", "x", "v", "v_x", "a*");
    for t in [0.0, 0.5, 0.9, 0.99] {
        for x in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let p = field.value_point(t, x)?;
            println!("{t:>5} {x:>6} {:>10.6} {:>10.6} {:>10.6}", p.v, p.v_x, p.a_star);
        }
    }

    let b = lemma_bounds(&params, &reward, 0.9)?;
    println!("\nat t = 0.9: K = {:.4}, |v_x| <= {:.4}, effort cap {:.4}", b.k, b.v_x_max, b.effort_cap);
    println!("HJB residual at (0.5, 0.2): {:.2e}", field.pde_residual(0.5, 0.2, 1e-4)?);
    Ok(())
}
