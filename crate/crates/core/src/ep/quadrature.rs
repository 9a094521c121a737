use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, LN_2PI};

/// Composite Simpson rule on a standardized interval `[−w, w]`.
///
/// Tilted integrals are evaluated in cavity-standardized coordinates
/// `θ = μ + σ z`, so one grid serves every site. Two-dimensional integrals use
/// the tensor product of the grid with itself.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `log(wₖ · φ(zₖ))` with `φ` the standard normal density, renormalized to
    /// unit total mass.
    log_mass: Vec<f64>,
}

pub const DEFAULT_NODES: usize = 33;
pub const DEFAULT_HALF_WIDTH: f64 = 6.0;

impl QuadratureGrid {
    pub fn simpson(n_nodes: usize, half_width: f64) -> Result<Self> {
        if n_nodes < 3 || n_nodes.is_multiple_of(2) {
            return Err(Error::input(format!("Simpson grid needs an odd node count >= 3, got {n_nodes}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::input("Simpson half-width must be positive"));
        }
        let h = 2.0 * half_width / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|k| -half_width + k as f64 * h).collect();
        let weights: Vec<f64> = (0..n_nodes)
            .map(|k| {
                let c = if k == 0 || k == n_nodes - 1 {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        let mut log_mass: Vec<f64> = nodes.iter().zip(&weights).map(|(z, w)| w.ln() - 0.5 * (LN_2PI + z * z)).collect();
        let total = log_sum_exp(&log_mass);
        log_mass.iter_mut().for_each(|m| *m -= total);
        Ok(Self { nodes, weights, log_mass })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn log_mass(&self) -> &[f64] {
        &self.log_mass
    }

    /// Same interval, twice the resolution.
    pub fn refined(&self) -> Self {
        let w = -self.nodes[0];
        Self::simpson(2 * self.len() - 1, w).expect("refining a valid grid")
    }

    /// `∫ g(z) φ(z) dz` over the grid interval.
    pub fn integrate_standard_normal(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.log_mass).map(|(z, lm)| lm.exp() * g(*z)).sum()
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self::simpson(DEFAULT_NODES, DEFAULT_HALF_WIDTH).expect("default grid is valid")
    }
}
