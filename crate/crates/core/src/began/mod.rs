//! BEGAN-style adversarial training with an autoencoder discriminator, the
//! hybrid histogram reconstruction loss, and the proportional equilibrium
//! controller on `k`.

pub(crate) mod net;
mod train;

pub use net::{AutoEncoder, Discriminator, Generator, NetConfig, Tracking};
pub use train::{
    generator_loss, sample, sample_grid, train_gan, GanModel, GanReport, GanTrainOptions, StepLosses,
    StepRecord,
};

/// Controller state balancing discriminator and generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumState {
    /// Weight of the fake-reconstruction term in the discriminator loss.
    pub k: f64,
    /// Target ratio `L_fake / L_real`.
    pub gamma: f64,
    /// Proportional gain of the `k` update.
    pub lambda_k: f64,
}

impl Default for EquilibriumState {
    fn default() -> Self {
        EquilibriumState {
            k: 0.0,
            gamma: 0.5,
            lambda_k: 0.001,
        }
    }
}

/// One controller step: `k <- clamp(k + lambda_k * (gamma * L_real - L_fake), 0, 1)`.
/// Also returns the convergence measure `L_real + |gamma * L_real - L_fake|`.
pub fn equilibrium_update(eq: EquilibriumState, l_real: f64, l_fake: f64) -> (EquilibriumState, f64) {
    let balance = eq.gamma * l_real - l_fake;
    let k = (eq.k + eq.lambda_k * balance).clamp(0.0, 1.0);
    // a NaN loss must not poison k
    let k = if k.is_nan() { eq.k } else { k };
    (EquilibriumState { k, ..eq }, l_real + balance.abs())
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_leaves_k_unchanged() {
        let eq = EquilibriumState {
            k: 0.37,
            ..Default::default()
        };
        let (next, m) = equilibrium_update(eq, 8.0, 4.0);
        assert_eq!(next.k, 0.37);
        assert_eq!(m, 8.0);
    }

    #[test]
    fn hand_evaluated_update() {
        let eq = EquilibriumState {
            k: 1.0,
            gamma: 0.5,
            lambda_k: 0.001,
        };
        let (next, m) = equilibrium_update(eq, 0.0, 10.0);
        assert!((next.k - 0.99).abs() < 1e-15);
        assert_eq!(m, 10.0);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
