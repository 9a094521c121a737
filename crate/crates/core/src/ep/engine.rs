use faer::MatRef;
use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{Nat1, Nat2};

use super::evidence::log_marginal_ep;
use super::quadrature::QuadratureGrid;
use super::sites::{SiteSet, VSites};
use super::tilted::{tilted_moments_mn, tilted_moments_n, VGauss};
use super::{EpConfig, EpModel, JointPosterior, ModelKind};

/// Result of an EP run.
#[derive(Clone, Debug)]
pub struct EpState {
    pub sites: SiteSet,
    pub posterior: JointPosterior,
    pub log_z_ep: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `log Z_EP` after each sweep.
    pub history: Vec<f64>,
    /// Number of skipped site updates in each sweep.
    pub skipped: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
enum VSite {
    Uni(Nat1),
    Bi(Nat2),
}

#[derive(Clone, Copy, Debug)]
struct SiteTarget {
    v: VSite,
    theta: Nat1,
    log_z_hat: f64,
}

fn site_target(kind: ModelKind, y: f64, post: &JointPosterior, sites: &SiteSet, i: usize, grid: &QuadratureGrid) -> Result<SiteTarget> {
    let theta_nat = post.theta_marginal(i).to_natural();
    let cav_theta_nat = theta_nat.sub(&sites.theta[i]);
    let cav_theta = cav_theta_nat
        .to_moments()
        .ok_or_else(|| Error::Cavity(format!("theta cavity precision {} at site {i}", cav_theta_nat.tau)))?;
    let (v, tm) = match (&sites.v, post.v_marginal(i)) {
        (VSites::Univariate(s), VGauss::Univariate(marg)) => {
            let cav_nat = marg.to_natural().sub(&s[i]);
            let cav = cav_nat
                .to_moments()
                .ok_or_else(|| Error::Cavity(format!("signal cavity precision {} at site {i}", cav_nat.tau)))?;
            let tm = tilted_moments_n(y, cav, cav_theta, grid)?;
            let VGauss::Univariate(t) = tm.v else { unreachable!() };
            (VSite::Uni(t.to_natural().sub(&cav_nat)), tm)
        }
        (VSites::Bivariate(s), VGauss::Bivariate(marg)) => {
            let cav_nat = marg.to_natural().sub(&s[i]);
            let cav = cav_nat
                .to_moments()
                .ok_or_else(|| Error::Cavity(format!("signal cavity precision {:?} at site {i}", cav_nat.prec)))?;
            let tm = tilted_moments_mn(y, cav, cav_theta, grid)?;
            let VGauss::Bivariate(mut t) = tm.v else { unreachable!() };
            let mut site = if kind == ModelKind::NoiseSignalFactorized {
                t.cov.a12 = 0.0;
                let mut c = cav_nat;
                c.prec.a12 = 0.0;
                t.to_natural().sub(&c)
            } else {
                t.to_natural().sub(&cav_nat)
            };
            if kind == ModelKind::NoiseSignalFactorized {
                site.prec.a12 = 0.0;
            }
            (VSite::Bi(site), tm)
        }
        _ => return Err(Error::input("site layout does not match the posterior")),
    };
    let theta = tm.theta.to_natural().sub(&cav_theta_nat);
    let target = SiteTarget { v, theta, log_z_hat: tm.log_z_hat };
    let finite = match target.v {
        VSite::Uni(s) => s.nu.is_finite() && s.tau.is_finite(),
        VSite::Bi(s) => s.nu.iter().chain([s.prec.a11, s.prec.a12, s.prec.a22].iter()).all(|v| v.is_finite()),
    };
    if !(finite && theta.nu.is_finite() && theta.tau.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite site update at site {i}")));
    }
    Ok(target)
}

fn site_targets(kind: ModelKind, y: &[f64], post: &JointPosterior, sites: &SiteSet, grid: &QuadratureGrid) -> Vec<Option<SiteTarget>> {
    (0..y.len())
        .into_par_iter()
        .map(|i| match site_target(kind, y[i], post, sites, i, grid) {
            Ok(t) => Some(t),
            Err(e) => {
                debug!("skipping site {i}: {e}");
                None
            }
        })
        .collect()
}

fn blend(sites: &SiteSet, targets: &[Option<SiteTarget>], delta: f64) -> SiteSet {
    let mut out = sites.clone();
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = t else { continue };
        out.theta[i] = sites.theta[i].damp_towards(&t.theta, delta);
        out.log_z_hat[i] = t.log_z_hat;
        match (&mut out.v, t.v) {
            (VSites::Univariate(s), VSite::Uni(new)) => s[i] = s[i].damp_towards(&new, delta),
            (VSites::Bivariate(s), VSite::Bi(new)) => s[i] = s[i].damp_towards(&new, delta),
            _ => unreachable!("site layout checked in site_target"),
        }
    }
    out
}

/// Site drift scaled by the marginal precisions of the refreshed posterior.
fn scaled_drift(new: &SiteSet, old: &SiteSet, post: &JointPosterior) -> f64 {
    let n = new.len();
    let theta_scale: Vec<f64> = (0..n).map(|i| 1.0 / post.theta_marginal(i).var).collect();
    let v_scale: Vec<f64> = (0..n)
        .map(|i| match post.v_marginal(i) {
            VGauss::Univariate(g) => 1.0 / g.var,
            VGauss::Bivariate(g) => {
                let p = g.cov.inverse();
                p.a11.max(p.a22)
            }
        })
        .collect();
    new.relative_drift_scaled(old, &theta_scale, &v_scale)
}

/// Outcome of one damped parallel sweep.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub sites: SiteSet,
    pub skipped: usize,
}

/// One parallel EP sweep: every site update is computed from the same
/// posterior snapshot, then blended as `old + δ (new − old)`. Sites whose
/// cavity is improper or whose tilted moments fail are left unchanged.
pub fn update_sites_parallel(kind: ModelKind, y: &[f64], post: &JointPosterior, sites: &SiteSet, grid: &QuadratureGrid, delta: f64) -> Result<SweepOutcome> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::input(format!("damping must lie in (0, 1], got {delta}")));
    }
    let targets = site_targets(kind, y, post, sites, grid);
    let skipped = targets.iter().filter(|t| t.is_none()).count();
    Ok(SweepOutcome { sites: blend(sites, &targets, delta), skipped })
}

pub fn run_ep(model: &EpModel, x: MatRef<'_, f64>, y: &[f64], config: &EpConfig) -> Result<EpState> {
    run_ep_from(model, x, y, config, None)
}

/// Run EP, starting from `init` sites when they fit the model and give a
/// proper posterior, and from zero sites otherwise.
pub fn run_ep_from(model: &EpModel, x: MatRef<'_, f64>, y: &[f64], config: &EpConfig, init: Option<&SiteSet>) -> Result<EpState> {
    config.validate()?;
    let n = y.len();
    if n == 0 || x.nrows() != n {
        return Err(Error::input(format!("{} input rows for {} targets", x.nrows(), n)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("targets must be finite"));
    }
    let grid = config.grid()?;
    let (v_priors, theta_prior) = model.priors(x)?;
    let bivariate = model.kind.has_magnitude();

    let warm = init.filter(|s| s.len() == n && s.is_bivariate() == bivariate).and_then(|s| {
        let post = JointPosterior::compute(v_priors.clone(), theta_prior.clone(), s).ok()?;
        let lz = log_marginal_ep(&post, s).ok()?;
        Some((s.clone(), post, lz))
    });
    let (mut sites, mut post, mut log_z) = match warm {
        Some(w) => w,
        None => {
            let s = SiteSet::zeros(n, bivariate);
            let p = JointPosterior::compute(v_priors.clone(), theta_prior.clone(), &s)?;
            (s, p, 0.0)
        }
    };

    let mut history = Vec::new();
    let mut skipped_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let targets = site_targets(model.kind, y, &post, &sites, &grid);
        let skipped = targets.iter().filter(|t| t.is_none()).count();
        let mut delta = config.damping;
        if skipped as f64 > config.skip_fraction * n as f64 {
            delta = (delta / 2.0).max(config.min_damping);
        }
        let (new_sites, new_post) = loop {
            let cand = blend(&sites, &targets, delta);
            match JointPosterior::compute(v_priors.clone(), theta_prior.clone(), &cand) {
                Ok(p) => break (cand, p),
                Err(Error::Numerical(msg)) if delta > config.min_damping / 16.0 => {
                    debug!("sweep {iterations}: {msg}; retrying with damping {}", delta / 2.0);
                    delta /= 2.0;
                }
                Err(e) => return Err(Error::numerical(format!("sweep {iterations}: {e}"))),
            }
        };
        let new_log_z = match log_marginal_ep(&new_post, &new_sites) {
            Ok(v) => v,
            Err(e) => {
                debug!("sweep {iterations}: {e}");
                f64::NAN
            }
        };
        let drift = scaled_drift(&new_sites, &sites, &new_post);
        let dz = (new_log_z - log_z).abs();
        history.push(new_log_z);
        skipped_log.push(skipped);
        sites = new_sites;
        post = new_post;
        log_z = new_log_z;
        if dz < config.tol && drift < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("EP did not converge in {} sweeps (log Z = {log_z})", config.max_iter);
    }
    Ok(EpState { sites, posterior: post, log_z_ep: log_z, iterations, converged, history, skipped: skipped_log })
}

#[cfg(test)]
mod tests {
    use faer::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::gaussian::{Gauss1, Gauss2};
    use crate::gp_exact::{exact_log_marginal, ExactGp};
    use crate::kernels::KernelParams;
    use crate::predict::{latent_predictive, predictive_y};

    fn toy(n: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = xs.iter().map(|x| x.sin() + (0.1 + 0.2 * x.abs()) * rng.sample::<f64, _>(StandardNormal)).collect();
        (Mat::from_fn(n, 1, |i, _| xs[i]), y)
    }

    fn noise_model() -> EpModel {
        EpModel::noise_only(KernelParams::isotropic(0.0, 0.0), KernelParams::isotropic(0.0, 0.5).with_mean(-2.0))
    }

    fn mn_model() -> EpModel {
        EpModel::noise_signal(KernelParams::isotropic(0.0, 0.0), KernelParams::isotropic(-1.0, 0.7), KernelParams::isotropic(0.0, 0.5).with_mean(-2.0))
    }

    fn tight() -> EpConfig {
        EpConfig { tol: 1e-11, max_iter: 2000, ..EpConfig::default() }
    }

    fn joint(model: &EpModel, x: &Mat<f64>, sites: &SiteSet) -> JointPosterior {
        let (v, t) = model.priors(x.as_ref()).unwrap();
        JointPosterior::compute(v, t, sites).unwrap()
    }

    #[test]
    fn single_site_full_step_matches_tilted_moments() {
        let x = Mat::from_fn(1, 1, |_, _| 0.3);
        let y = [0.9];
        let grid = QuadratureGrid::default();
        for model in [noise_model(), mn_model()] {
            let sites = SiteSet::zeros(1, model.kind.has_magnitude());
            let post = joint(&model, &x, &sites);
            let out = update_sites_parallel(model.kind, &y, &post, &sites, &grid, 1.0).unwrap();
            assert_eq!(out.skipped, 0);
            let new = joint(&model, &x, &out.sites);
            let cav_t = post.theta_marginal(0);
            let (tm, v_new) = match post.v_marginal(0) {
                VGauss::Univariate(g) => (tilted_moments_n(y[0], g, cav_t, &grid).unwrap(), new.v_marginal(0)),
                VGauss::Bivariate(g) => (tilted_moments_mn(y[0], g, cav_t, &grid).unwrap(), new.v_marginal(0)),
            };
            match (tm.v, v_new) {
                (VGauss::Univariate(a), VGauss::Univariate(b)) => {
                    assert!((a.mean - b.mean).abs() < 1e-10 && (a.var - b.var).abs() < 1e-10);
                }
                (VGauss::Bivariate(a), VGauss::Bivariate(b)) => {
                    for (p, q) in [(a.mean[0], b.mean[0]), (a.mean[1], b.mean[1]), (a.cov.a11, b.cov.a11), (a.cov.a12, b.cov.a12), (a.cov.a22, b.cov.a22)] {
                        assert!((p - q).abs() < 1e-10, "{p} vs {q}");
                    }
                }
                _ => panic!("layout mismatch"),
            }
            let t = new.theta_marginal(0);
            assert!((t.mean - tm.theta.mean).abs() < 1e-10 && (t.var - tm.theta.var).abs() < 1e-10);
        }
    }

    #[test]
    fn half_damping_is_the_midpoint() {
        let (x, y) = toy(6, 1);
        let model = mn_model();
        let grid = QuadratureGrid::default();
        let s0 = SiteSet::zeros(6, true);
        let s1 = update_sites_parallel(model.kind, &y, &joint(&model, &x, &s0), &s0, &grid, 0.8).unwrap().sites;
        let post = joint(&model, &x, &s1);
        let full = update_sites_parallel(model.kind, &y, &post, &s1, &grid, 1.0).unwrap().sites;
        let half = update_sites_parallel(model.kind, &y, &post, &s1, &grid, 0.5).unwrap().sites;
        let (VSites::Bivariate(a), VSites::Bivariate(b), VSites::Bivariate(h)) = (&s1.v, &full.v, &half.v) else { panic!() };
        for i in 0..6 {
            let mid = |p: f64, q: f64| 0.5 * (p + q);
            assert!((h[i].nu[0] - mid(a[i].nu[0], b[i].nu[0])).abs() < 1e-12);
            assert!((h[i].prec.a12 - mid(a[i].prec.a12, b[i].prec.a12)).abs() < 1e-12);
            assert!((half.theta[i].tau - mid(s1.theta[i].tau, full.theta[i].tau)).abs() < 1e-12);
        }
        assert!(update_sites_parallel(model.kind, &y, &post, &s1, &grid, 0.0).is_err());
    }

    #[test]
    fn fixed_point_does_not_depend_on_damping() {
        let (x, y) = toy(2, 2);
        let model = noise_model();
        let a = run_ep(&model, x.as_ref(), &y, &EpConfig { damping: 1.0, ..tight() }).unwrap();
        let b = run_ep(&model, x.as_ref(), &y, &EpConfig { damping: 0.5, ..tight() }).unwrap();
        assert!(a.converged && b.converged);
        let (VSites::Univariate(sa), VSites::Univariate(sb)) = (&a.sites.v, &b.sites.v) else { panic!() };
        for i in 0..2 {
            assert!(sa[i].max_abs_diff(&sb[i]) < 1e-8);
            assert!(a.sites.theta[i].max_abs_diff(&b.sites.theta[i]) < 1e-8);
        }
        assert!((a.log_z_ep - b.log_z_ep).abs() < 1e-8);
    }

    #[test]
    fn prior_only_evidence_is_zero() {
        let (x, _) = toy(5, 3);
        for model in [noise_model(), mn_model()] {
            let sites = SiteSet::zeros(5, model.kind.has_magnitude());
            let lz = log_marginal_ep(&joint(&model, &x, &sites), &sites).unwrap();
            assert!(lz.abs() < 1e-12, "{lz}");
        }
    }

    #[test]
    fn point_mass_noise_evidence_matches_exact_gp() {
        let s2: f64 = 0.2;
        let x = Mat::from_fn(1, 1, |_, _| 0.5);
        let y = [0.7];
        let signal = KernelParams::isotropic(0.3, 0.0);
        let model = EpModel::noise_only(signal.clone(), KernelParams::isotropic(1e-12f64.ln(), 0.0).with_mean(s2.ln()));
        let st = run_ep(&model, x.as_ref(), &y, &EpConfig::default()).unwrap();
        let exact = exact_log_marginal(x.as_ref(), &y, &signal, s2.ln()).unwrap();
        assert!(st.converged);
        assert!((st.log_z_ep - exact).abs() < 1e-3, "{} vs {exact}", st.log_z_ep);
    }

    #[test]
    fn permutation_leaves_evidence_unchanged() {
        let (x, y) = toy(15, 4);
        let perm: Vec<usize> = (0..15).map(|i| (7 * i + 3) % 15).collect();
        let xp = Mat::from_fn(15, 1, |i, _| x[(perm[i], 0)]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        for model in [noise_model(), mn_model()] {
            let a = run_ep(&model, x.as_ref(), &y, &tight()).unwrap();
            let b = run_ep(&model, xp.as_ref(), &yp, &tight()).unwrap();
            assert!(a.converged && b.converged);
            assert!((a.log_z_ep - b.log_z_ep).abs() < 1e-8, "{} vs {}", a.log_z_ep, b.log_z_ep);
            let ap = a.sites.permuted(&perm);
            for i in 0..15 {
                assert!(ap.theta[i].max_abs_diff(&b.sites.theta[i]) < 1e-6);
            }
        }
    }

    #[test]
    fn fixed_point_matches_moments() {
        let (x, y) = toy(12, 5);
        let grid = QuadratureGrid::default();
        for model in [noise_model(), mn_model()] {
            let st = run_ep(&model, x.as_ref(), &y, &tight()).unwrap();
            assert!(st.converged);
            let post = &st.posterior;
            for i in 0..12 {
                let tm = site_target(model.kind, y[i], post, &st.sites, i, &grid).unwrap();
                let cav_t = post.theta_marginal(i).to_natural().sub(&st.sites.theta[i]);
                let t = cav_t.add(&tm.theta).to_moments().unwrap();
                let m = post.theta_marginal(i);
                assert!((t.mean - m.mean).abs() < 1e-7 && (t.var - m.var).abs() < 1e-7);
                match (tm.v, post.v_marginal(i), &st.sites.v) {
                    (VSite::Uni(s), VGauss::Univariate(g), VSites::Univariate(old)) => {
                        let tilted: Gauss1 = g.to_natural().sub(&old[i]).add(&s).to_moments().unwrap();
                        assert!((tilted.mean - g.mean).abs() < 1e-7 && (tilted.var - g.var).abs() < 1e-7);
                    }
                    (VSite::Bi(s), VGauss::Bivariate(g), VSites::Bivariate(old)) => {
                        let tilted: Gauss2 = g.to_natural().sub(&old[i]).add(&s).to_moments().unwrap();
                        assert!((tilted.mean[0] - g.mean[0]).abs() < 1e-7 && (tilted.cov.a12 - g.cov.a12).abs() < 1e-7);
                    }
                    _ => panic!("layout mismatch"),
                }
            }
        }
    }

    #[test]
    fn point_mass_latents_reproduce_the_gp() {
        let (x, y) = toy(20, 6);
        let xs = Mat::from_fn(15, 1, |i, _| -3.5 + 0.5 * i as f64);
        let (m_theta, m_phi) = (-2.0f64, 0.4f64);
        let signal = KernelParams::isotropic(0.0, 0.2);
        let flat = |mean: f64| KernelParams::isotropic(1e-10f64.ln(), 0.0).with_mean(mean);
        let gp_n = ExactGp::fit(x.as_ref(), &y, signal.clone(), m_theta).unwrap().predict(xs.as_ref()).unwrap();
        let gp_mn = ExactGp::fit(x.as_ref(), &y, KernelParams::isotropic(m_phi, 0.2), m_theta).unwrap().predict(xs.as_ref()).unwrap();
        let cases = [(EpModel::noise_only(signal.clone(), flat(m_theta)), gp_n), (EpModel::noise_signal(signal.clone(), flat(m_phi), flat(m_theta)), gp_mn)];
        for (model, gp) in cases {
            let st = run_ep(&model, x.as_ref(), &y, &EpConfig::default()).unwrap();
            assert!(st.converged, "{:?} {:?} {:?}", model.kind, &st.history[st.history.len().saturating_sub(5)..], &st.skipped[st.skipped.len().saturating_sub(5)..]);
            let lat = latent_predictive(&model, x.as_ref(), &st.posterior, xs.as_ref()).unwrap();
            for (p, g) in lat.points.iter().map(predictive_y).zip(&gp) {
                assert!((p.mean - g.mean).abs() < 1e-3 && (p.var - g.var).abs() < 1e-3, "{p:?} vs {g:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = toy(4, 7);
        assert!(run_ep(&noise_model(), x.as_ref(), &y[..3], &EpConfig::default()).is_err());
        let mut bad = y.clone();
        bad[0] = f64::NAN;
        assert!(run_ep(&noise_model(), x.as_ref(), &bad, &EpConfig::default()).is_err());
        assert!(run_ep(&noise_model(), x.as_ref(), &y, &EpConfig { damping: 1.5, ..EpConfig::default() }).is_err());
    }

    #[test]
    fn warm_start_converges_immediately() {
        let (x, y) = toy(10, 8);
        let model = mn_model();
        let a = run_ep(&model, x.as_ref(), &y, &EpConfig::default()).unwrap();
        let b = run_ep_from(&model, x.as_ref(), &y, &EpConfig::default(), Some(&a.sites)).unwrap();
        assert!(b.converged && b.iterations < a.iterations);
        assert!((a.log_z_ep - b.log_z_ep).abs() < 1e-5);
    }
}
