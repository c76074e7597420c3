//! Pooling replicate estimates and choosing the number of fits.

use adjudicate::pipeline::{
    balanced_factorization, choose_n, credible_interval, epsilon_for_estimate, estimate_cost, mcse, variance_based_n,
};

fn main() -> adjudicate::Result<()> {
    let pilot = [0.0231, 0.0244, 0.0229, 0.0240, 0.0236, 0.0233, 0.0238, 0.0241];
    let (est, se) = mcse(&pilot)?;
    let (lo, hi) = credible_interval(est, se);
    println!("pooled {est:.5}, mcse {se:.6}, interval ({lo:.5}, {hi:.5})");

    let eps = epsilon_for_estimate(est, 1e-4);
    let sst: f64 = pilot.iter().map(|v| (v - est).powi(2)).sum();
    let literal = choose_n(&[sst], &[eps])?;
    println!("tolerance {eps}, SST {sst:.3e}");
    println!("literal rule: N = {} as M, K, L = {}, {}, {}", literal.n, literal.m, literal.k, literal.l);
    println!("variance rule: N = {}", variance_based_n(&[sst], pilot.len(), &[eps])?);
    for n in [27, 100, 210] {
        println!("balanced factorization of {n}: {:?}", balanced_factorization(n));
    }
    let cost = estimate_cost(120.0, 30.0, 5.0, 45.0, 3, 27, 8)?;
    println!("cost on 8 cores: ideal {:.0} s, realistic {:.0} s", cost.ideal, cost.realistic);
    Ok(())
}
