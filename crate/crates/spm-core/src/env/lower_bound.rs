//! Parameters of the adversarial lower-bound instance family.

use super::EnvError;
use serde::{Deserialize, Serialize};

/// Solution of the lower-bound design system, with per-check diagnostics.
///
/// The (η, ε) pair solves the two equalities
/// `η·K^α + ε = U` and `(T/K)·8ε²/η = 1` exactly (closed form). The two
/// inequalities `η + ε ≤ 1/4` and `η·K^α ≥ U/2` hold across the interior of
/// the admissible regime but can fail near the boundary U = K^α/4 when T is
/// small; `system_ok` reports each check so callers can restrict themselves
/// to fully valid designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub eta: f64,
    pub eps: f64,
    /// (η+ε ≤ 1/4, η·K^α+ε = U, (T/K)·8ε²/η = 1, η·K^α ≥ U/2), each to 1e−9.
    pub system_ok: [bool; 4],
    /// Signed residuals of the same four checks (≤-checks report the excess).
    pub residuals: [f64; 4],
}

const SYSTEM_TOL: f64 = 1e-9;

/// Computes (η, ε) for the adversarial lower-bound environments:
///
/// ```text
/// √η = (−√(K/8T) + √(K/8T + 4K^α·U)) / (2K^α),   ε = √(ηK/(8T))
/// ```
///
/// Requires K ≥ 4, T ≥ 4K, 1 ≤ U ≤ K^α/4; violations return `InvalidRegime`.
pub fn lower_bound_adv_params(
    k: usize,
    horizon: usize,
    alpha: f64,
    u: f64,
) -> Result<LowerBoundParams, EnvError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EnvError::InvalidRegime(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if k < 4 {
        return Err(EnvError::InvalidRegime(format!("K = {k} < 4")));
    }
    if horizon < 4 * k {
        return Err(EnvError::InvalidRegime(format!(
            "T = {horizon} < 4K = {}",
            4 * k
        )));
    }
    let k_alpha = (k as f64).powf(alpha);
    if !(u >= 1.0 && u <= k_alpha / 4.0) {
        return Err(EnvError::InvalidRegime(format!(
            "U = {u} outside [1, K^α/4] = [1, {:.6}]",
            k_alpha / 4.0
        )));
    }

    let a = k as f64 / (8.0 * horizon as f64);
    let sqrt_eta = (-a.sqrt() + (a + 4.0 * k_alpha * u).sqrt()) / (2.0 * k_alpha);
    let eta = sqrt_eta * sqrt_eta;
    let eps = (eta * k as f64 / (8.0 * horizon as f64)).sqrt();

    let residuals = [
        eta + eps - 0.25,
        eta * k_alpha + eps - u,
        (horizon as f64 / k as f64) * 8.0 * eps * eps / eta - 1.0,
        u / 2.0 - eta * k_alpha,
    ];
    let system_ok = [
        residuals[0] <= SYSTEM_TOL,
        residuals[1].abs() <= SYSTEM_TOL,
        residuals[2].abs() <= SYSTEM_TOL,
        residuals[3] <= SYSTEM_TOL,
    ];
    Ok(LowerBoundParams {
        eta,
        eps,
        system_ok,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equalities_hold_to_1e9_across_regimes() {
        for &(k, t, alpha, u) in &[
            (16usize, 6400usize, 0.5f64, 1.0f64),
            (64, 25_600, 0.5, 1.5),
            (64, 6400, 0.75, 4.0),
            (256, 102_400, 0.9, 10.0),
            (1024, 409_600, 0.6, 12.0),
        ] {
            let p = lower_bound_adv_params(k, t, alpha, u).unwrap();
            assert!(
                p.residuals[1].abs() <= 1e-9 && p.residuals[2].abs() <= 1e-9,
                "(K,T,α,U)=({k},{t},{alpha},{u}): residuals {:?}",
                p.residuals
            );
            assert!(p.system_ok[1] && p.system_ok[2]);
            assert!(p.eta > 0.0 && p.eps > 0.0 && p.eta + p.eps < 1.0);
        }
    }

    #[test]
    fn eps_definition_is_exact() {
        let p = lower_bound_adv_params(16, 6400, 0.5, 1.0).unwrap();
        let expect = (p.eta * 16.0 / (8.0 * 6400.0)).sqrt();
        assert_eq!(p.eps, expect, "ε = √(ηK/8T) by construction");
    }

    // Frozen from an independent bisection on f(η) = η·K^α + √(ηK/8T) − U
    // for K=16, T=256, α=0.5, U=K^α/4=1.
    #[test]
    fn boundary_example_matches_root_finder() {
        let p = lower_bound_adv_params(16, 256, 0.5, 1.0).unwrap();
        assert!(
            (p.eta - ROOT_FINDER_ETA).abs() < 1e-10,
            "eta {} vs oracle {ROOT_FINDER_ETA}",
            p.eta
        );
        assert!(
            (p.eps - ROOT_FINDER_EPS).abs() < 1e-10,
            "eps {} vs oracle {ROOT_FINDER_EPS}",
            p.eps
        );
        // At this boundary point the η+ε ≤ 1/4 check genuinely fails.
        assert!(!p.system_ok[0], "residuals {:?}", p.residuals);
        assert!(p.system_ok[1] && p.system_ok[2] && p.system_ok[3]);
    }

    const ROOT_FINDER_ETA: f64 = 0.2391929000998474;
    const ROOT_FINDER_EPS: f64 = 0.04322839960061045;

    #[test]
    fn all_four_checks_hold_in_the_interior() {
        // U well below K^α/4 and T well above 4K keep η+ε small.
        let p = lower_bound_adv_params(64, 64 * 200, 0.5, 1.0).unwrap();
        assert_eq!(p.system_ok, [true; 4], "residuals {:?}", p.residuals);
    }

    #[test]
    fn preconditions_are_enforced() {
        assert!(matches!(
            lower_bound_adv_params(3, 1000, 0.5, 1.0),
            Err(EnvError::InvalidRegime(_))
        ));
        assert!(matches!(
            lower_bound_adv_params(16, 63, 0.5, 1.0),
            Err(EnvError::InvalidRegime(_))
        ));
        assert!(matches!(
            lower_bound_adv_params(16, 1000, 0.5, 0.5),
            Err(EnvError::InvalidRegime(_))
        ));
        assert!(matches!(
            lower_bound_adv_params(16, 1000, 0.5, 1.1),
            Err(EnvError::InvalidRegime(_))
        ));
    }
}
