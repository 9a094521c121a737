//! One EP site in isolation: tilted moments of a single observation under
//! Gaussian cavities, and the resulting site parameters.

use hetgp::ep::{tilted_moments_mn, tilted_moments_n, QuadratureGrid, VGauss};
use hetgp::gaussian::{Gauss1, Gauss2, Sym2};

fn main() -> Result<(), hetgp::error::Error> {
    let grid = QuadratureGrid::default();
    let cav_f = Gauss1::new(0.0, 1.0);
    let cav_theta = Gauss1::new(-2.0, 0.5);
    for y in [0.0, 1.0, 3.0] {
        let tm = tilted_moments_n(y, cav_f, cav_theta, &grid)?;
        let VGauss::Univariate(f) = tm.v else { unreachable!() };
        let site = f.to_natural().sub(&cav_f.to_natural());
        println!("y = {y}: log Z {:.4}  f ~ N({:.3}, {:.3})  theta ~ N({:.3}, {:.3})  site tau {:.3}", tm.log_z_hat, f.mean, f.var, tm.theta.mean, tm.theta.var, site.tau);
    }

    let cav_v = Gauss2::new([0.5, 0.0], Sym2::new(1.0, 0.2, 0.8));
    let tm = tilted_moments_mn(2.0, cav_v, cav_theta, &grid)?;
    let VGauss::Bivariate(v) = tm.v else { unreachable!() };
    println!("\nsignal-magnitude site: mean {:?}, correlation {:.3} (cavity {:.3})", v.mean, v.correlation(), cav_v.correlation());
    Ok(())
}
