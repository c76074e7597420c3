//! Value, slope and area of a quadratic Legendre trajectory.

use adjudicate::legendre::{features, legendre_basis, TrajectoryCoefficients};

fn main() -> adjudicate::Result<()> {
    // systolic blood pressure rising with age on a 31-year window
    let traj = TrajectoryCoefficients::new([125.0, 6.0, 1.0], 0.0, 31.0)?;
    println!("{:>6} {:>8} {:>8} {:>10}", "age", "value", "slope", "area");
    for age in [0.0, 5.0, 10.0, 15.5, 20.0, 25.0, 31.0] {
        let f = features(&traj, 0.0, age)?;
        println!("{age:>6.1} {:>8.3} {:>8.4} {:>10.2}", f.value, f.slope, f.area);
    }
    let (p1, p2) = legendre_basis(15.5, 31.0)?;
    println!("basis at the midpoint: P1 = {p1}, P2 = {p2}");
    Ok(())
}
