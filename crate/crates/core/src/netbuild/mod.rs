//! Correlation networks over patients or genes.
//!
//! Patient graphs connect two samples when their Pearson correlation is
//! significant under the Fisher z-transform; gene graphs connect two genes
//! when their correlation across a class subset exceeds a hard cutoff. The
//! gene-by-gene correlation matrix is never materialized: it is produced in
//! tiles and each tile is thresholded into edges immediately.

mod corr;
mod graph;
pub mod io;

pub use corr::{
    build_graph_blocked, correlation_matrix, pearson, Axis, BlockedOptions, CorrelationMatrix,
    Standardized,
};
pub use graph::{BuildMeta, GraphStats, NodeKind, SparseGraph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_two_sided_p;

/// Largest |ρ| fed to the Fisher transform.
pub const RHO_SATURATION: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sided {
    TwoSided,
    OneSidedPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeRule {
    /// Edge iff the Fisher-transform p-value is below `alpha`.
    FisherSignificance { alpha: f64, sided: Sided },
    /// Edge iff ρ > `rho_min` (one-sided) or |ρ| > `rho_min` (two-sided).
    HardThreshold { rho_min: f64, sided: Sided },
}

impl EdgeRule {
    pub fn fisher(alpha: f64) -> Self {
        EdgeRule::FisherSignificance {
            alpha,
            sided: Sided::TwoSided,
        }
    }

    pub fn threshold(rho_min: f64) -> Self {
        EdgeRule::HardThreshold {
            rho_min,
            sided: Sided::OneSidedPositive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EdgeRule::FisherSignificance { alpha, .. } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")))
            }
            EdgeRule::HardThreshold { rho_min, .. } if !(rho_min > 0.0 && rho_min < 1.0) => {
                Err(Error::invalid(format!("rho_min must lie in (0,1), got {rho_min}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether a pair with correlation `rho` over `n_obs` observations gets an edge.
    pub fn admits(&self, rho: f64, n_obs: usize) -> bool {
        match *self {
            EdgeRule::HardThreshold { rho_min, sided } => match sided {
                Sided::OneSidedPositive => rho > rho_min,
                Sided::TwoSided => rho.abs() > rho_min,
            },
            EdgeRule::FisherSignificance { alpha, sided } => {
                let f = fisher_z(rho, n_obs);
                let p = match sided {
                    Sided::TwoSided => f.p,
                    // Upper tail only.
                    Sided::OneSidedPositive if f.z > 0.0 => 0.5 * f.p,
                    Sided::OneSidedPositive => 1.0 - 0.5 * f.p,
                };
                p < alpha
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherResult {
    pub z: f64,
    /// Two-sided normal tail probability of `z * sqrt(n - 3)`.
    pub p: f64,
    /// `|rho|` was clamped to [`RHO_SATURATION`].
    pub saturated: bool,
}

/// Fisher z-transform of a correlation with standard error `1/sqrt(n-3)`.
pub fn fisher_transform(rho: f64, n_observations: usize) -> Result<FisherResult> {
    if n_observations < 4 {
        return Err(Error::invalid(format!(
            "Fisher transform needs at least 4 observations, got {n_observations}"
        )));
    }
    if rho.is_nan() {
        return Err(Error::invalid("correlation is NaN"));
    }
    Ok(fisher_z(rho, n_observations))
}

fn fisher_z(rho: f64, n: usize) -> FisherResult {
    let saturated = rho.abs() > RHO_SATURATION;
    let r = rho.clamp(-RHO_SATURATION, RHO_SATURATION);
    let z = r.atanh();
    let se = 1.0 / ((n as f64) - 3.0).sqrt();
    FisherResult {
        z,
        p: normal_two_sided_p(z / se),
        saturated,
    }
}

/// Degree → number of nodes with that degree.
pub fn degree_distribution(g: &SparseGraph) -> std::collections::BTreeMap<usize, usize> {
    let mut hist = std::collections::BTreeMap::new();
    for d in g.degrees() {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fisher_examples() {
        let f = fisher_transform(0.0, 10).unwrap();
        assert_eq!((f.z, f.p), (0.0, 1.0));

        let f = fisher_transform(0.8, 10).unwrap();
        assert_relative_eq!(f.z, 1.098_612_288_668_109_7, epsilon = 1e-14);

        // erfc(z * 10 / sqrt 2) at 40 digits.
        let f = fisher_transform(0.5, 103).unwrap();
        assert_relative_eq!(f.z, 0.549_306_144_334_054_8, epsilon = 1e-15);
        assert_relative_eq!(f.p, 3.950_252_784_999_222e-8, max_relative = 1e-9);
    }

    #[test]
    fn fisher_saturation_is_flagged() {
        for rho in [1.0, -1.0, 1.0 + 1e-13] {
            let f = fisher_transform(rho, 50).unwrap();
            assert!(f.saturated);
            assert!(f.z.is_finite());
            assert_eq!(f.z.signum(), rho.signum());
        }
        assert!(fisher_transform(0.3, 3).is_err());
    }

    #[test]
    fn fisher_p_monotone() {
        let mut prev = 1.0;
        for k in 1..99 {
            let p = fisher_transform(k as f64 / 100.0, 30).unwrap().p;
            assert!(p < prev, "p not decreasing in |rho| at {k}");
            prev = p;
        }
        let mut prev = 1.0;
        for n in 4..200 {
            let p = fisher_transform(-0.2, n).unwrap().p;
            assert!(p < prev, "p not decreasing in n at {n}");
            prev = p;
        }
    }

    #[test]
    fn rule_validation_and_sidedness() {
        assert!(EdgeRule::fisher(0.0).validate().is_err());
        assert!(EdgeRule::threshold(1.0).validate().is_err());
        assert!(EdgeRule::threshold(0.8).validate().is_ok());
        assert!(EdgeRule::threshold(0.8).admits(0.81, 10));
        assert!(!EdgeRule::threshold(0.8).admits(0.8, 10));
        assert!(!EdgeRule::threshold(0.8).admits(-0.9, 10));
        let two = EdgeRule::HardThreshold {
            rho_min: 0.8,
            sided: Sided::TwoSided,
        };
        assert!(two.admits(-0.9, 10));
        let pos = EdgeRule::FisherSignificance {
            alpha: 0.05,
            sided: Sided::OneSidedPositive,
        };
        assert!(pos.admits(0.5, 103));
        assert!(!pos.admits(-0.5, 103));
    }
}
