use super::Network;
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum:
/// `v ← μ·v + update`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(param_count: usize) -> Self {
        Self {
            velocity: vec![0.0; param_count],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn apply_update(&mut self, net: &mut Network, update: &[f64], lr: f64, momentum: f64) -> Result<()> {
        if update.len() != net.param_count() || self.velocity.len() != net.param_count() {
            return Err(Error::Input(format!(
                "update has {} entries, network has {}",
                update.len(),
                net.param_count()
            )));
        }
        for ((p, v), u) in net.params_mut().iter_mut().zip(&mut self.velocity).zip(update) {
            *v = momentum * *v + u;
            *p -= lr * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn small() -> Network {
        Network::build(&[LayerSpec::Flatten, LayerSpec::dense(2)], [1, 1, 2], 2, 0)
            .and_then(|mut n| {
                n.set_params(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
                Ok(n)
            })
            .unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut net = small();
        let before = net.params().to_vec();
        Sgd::new(6).apply_update(&mut net, &[1.0; 6], 0.0, 0.9).unwrap();
        assert_eq!(net.params(), before.as_slice());
    }

    #[test]
    fn no_momentum_is_plain_sgd() {
        let mut net = small();
        Sgd::new(6)
            .apply_update(&mut net, &[1.0, -1.0, 0.0, 2.0, 0.5, 0.0], 0.5, 0.0)
            .unwrap();
        assert_eq!(net.params(), &[0.5, 2.5, 3.0, 3.0, 4.75, 6.0]);
    }

    #[test]
    fn two_momentum_steps_unrolled() {
        let mut net = small();
        let mut opt = Sgd::new(6);
        let (g1, g2) = ([1.0; 6], [2.0; 6]);
        opt.apply_update(&mut net, &g1, 0.1, 0.9).unwrap();
        opt.apply_update(&mut net, &g2, 0.1, 0.9).unwrap();
        // v1 = 1, θ1 = θ0 − 0.1; v2 = 0.9 + 2 = 2.9, θ2 = θ1 − 0.29.
        for (p, p0) in net.params().iter().zip([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) {
            assert!((p - (p0 - 0.1 - 0.29)).abs() < 1e-15);
        }
        assert!(opt.velocity().iter().all(|&v| (v - 2.9).abs() < 1e-15));
    }

    #[test]
    fn length_mismatch() {
        let mut net = small();
        assert!(matches!(
            Sgd::new(6).apply_update(&mut net, &[0.0; 5], 0.1, 0.0),
            Err(Error::Input(_))
        ));
    }
}
