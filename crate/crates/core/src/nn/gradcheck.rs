//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero analytically are compared in absolute terms.
    pub floor: f64,
    /// Number of coordinates to probe; all of them if the vector is shorter.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
    pub pass: bool,
}

/// `(f(p + h e_k) - f(p - h e_k)) / 2h`
pub fn central_difference<F>(params: &[f64], k: usize, h: f64, loss: &mut F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    probe[k] = params[k] + h;
    let up = loss(&probe);
    probe[k] = params[k] - h;
    let down = loss(&probe);
    (up - down) / (2.0 * h)
}

/// Compares `analytic` against central differences of `loss` on a random
/// subset of coordinates.
pub fn grad_check<F, R>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    config: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let coords: Vec<usize> = if params.len() <= config.max_coords {
        (0..params.len()).collect()
    } else {
        let mut c = sample(rng, params.len(), config.max_coords).into_vec();
        c.sort_unstable();
        c
    };

    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &k in &coords {
        let numeric = central_difference(params, k, config.step, &mut loss);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
        // NaN must count as a failure
        if !(rel <= max_rel) {
            max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            worst = Some(k);
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_coord: worst,
        checked: coords.len(),
        pass: max_rel <= config.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_norm_sq(p: &[f64]) -> f64 {
        p.iter().map(|v| v * v).sum::<f64>() / 2.0
    }

    #[test]
    fn quadratic_passes_with_near_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..200).map(|i| (i as f64).sin() * 3.0).collect();
        let report = grad_check(&p, &p, half_norm_sq, &GradCheckConfig::default(), &mut rng);
        assert!(report.pass);
        assert_eq!(report.checked, 64);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn corrupted_coordinate_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mut bad = p.clone();
        bad[4] += 1.0;
        let report = grad_check(&p, &bad, half_norm_sq, &GradCheckConfig::default(), &mut rng);
        assert!(!report.pass);
        assert_eq!(report.worst_coord, Some(4));
    }
}
