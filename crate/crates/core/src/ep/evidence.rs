use crate::error::{Error, Result};
use crate::gaussian::{log_normalizer1, log_normalizer2, Gauss1, Gauss2};

use super::sites::{cavity_bivariate, cavity_univariate, SiteSet, VSites};
use super::JointPosterior;

fn shift1(g: Gauss1, m: f64) -> Gauss1 {
    Gauss1::new(g.mean - m, g.var)
}

fn shift2(g: Gauss2, m: [f64; 2]) -> Gauss2 {
    Gauss2::new([g.mean[0] - m[0], g.mean[1] - m[1]], g.cov)
}

/// EP approximation to the log marginal likelihood.
///
/// All Gaussian normalizers are taken around the prior means, which keeps the
/// expression free of the large cancelling `mᵀK⁻¹m` terms. The `2π` constants
/// cancel between cavity and marginal terms.
pub fn log_marginal_ep(post: &JointPosterior, sites: &SiteSet) -> Result<f64> {
    let n = sites.len();
    let mut total = post.v.log_z_term() + post.theta.log_z_term();
    let pm_v = post.v.prior_mean();
    let pm_t = post.theta.prior_mean();
    for i in 0..n {
        let marg = post.theta.marginal(i);
        let cav = cavity_univariate(&marg, &sites.theta[i])
            .map_err(|e| Error::numerical(format!("evidence at site {i}: {e}")))?;
        total += log_normalizer1(&shift1(cav, pm_t[i])) - log_normalizer1(&shift1(marg, pm_t[i]));
        match &sites.v {
            VSites::Univariate(s) => {
                let marg = post.v.marginal(i);
                let cav = cavity_univariate(&marg, &s[i])
                    .map_err(|e| Error::numerical(format!("evidence at site {i}: {e}")))?;
                total += log_normalizer1(&shift1(cav, pm_v[i])) - log_normalizer1(&shift1(marg, pm_v[i]));
            }
            VSites::Bivariate(s) => {
                let marg = post.v.pair_marginal(i);
                let cav = cavity_bivariate(&marg, &s[i])
                    .map_err(|e| Error::numerical(format!("evidence at site {i}: {e}")))?;
                let m = [pm_v[i], pm_v[n + i]];
                total += log_normalizer2(&shift2(cav, m)) - log_normalizer2(&shift2(marg, m));
            }
        }
        total += sites.log_z_hat[i];
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::numerical("EP log marginal likelihood is not finite"))
    }
}
