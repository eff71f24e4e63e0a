use super::{Param, Tensor};
use crate::error::{Error, Result};

fn check_grads(params: &[&mut Param]) -> Result<()> {
    for p in params {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient for parameter {:?}", p.name),
            });
        }
    }
    Ok(())
}

/// Plain SGD update `p <- p - lr * g`. Nothing is updated when any gradient
/// is non-finite.
pub fn sgd_step(params: &mut [&mut Param], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    check_grads(params)?;
    for p in params.iter_mut() {
        p.value.scaled_add(-lr, &p.grad);
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, mut params: Vec<&mut Param>) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(&mut params, self.lr);
        }
        check_grads(&params)?;
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.raw_dim())).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            v.zip_mut_with(&p.grad, |v, &g| *v = self.momentum * *v + g);
            p.value.scaled_add(-self.lr, v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn param(v: f64, g: f64) -> Param {
        let mut p = Param::new("p", array![v].into_dyn());
        p.grad = array![g].into_dyn();
        p
    }

    #[test]
    fn single_step() {
        let mut p = param(1.0, 2.0);
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[[0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut p = param(1.5, 0.0);
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value[[0]], 1.5);
    }

    #[test]
    fn nan_grad_aborts() {
        let mut p = param(1.0, f64::NAN);
        assert!(matches!(sgd_step(&mut [&mut p], 0.1), Err(Error::NonFinite { .. })));
        assert_eq!(p.value[[0]], 1.0);
    }

    #[test]
    fn bad_learning_rate() {
        let mut p = param(1.0, 1.0);
        assert!(sgd_step(&mut [&mut p], 0.0).is_err());
        assert!(Sgd::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn quadratic_descends() {
        // f(p) = |p|^2, grad 2p
        let mut p = Param::new("p", array![3.0, -2.0, 0.5].into_dyn());
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let loss: f64 = p.value.iter().map(|v| v * v).sum();
            assert!(loss < prev);
            prev = loss;
            p.grad = p.value.mapv(|v| 2.0 * v);
            sgd_step(&mut [&mut p], 0.05).unwrap();
        }
    }

    #[test]
    fn momentum_accelerates() {
        let run = |momentum| {
            let mut opt = Sgd::new(0.01, momentum).unwrap();
            let mut p = Param::new("p", array![1.0].into_dyn());
            for _ in 0..20 {
                p.grad = p.value.mapv(|v| 2.0 * v);
                opt.step(vec![&mut p]).unwrap();
            }
            p.value[[0]].abs()
        };
        assert!(run(0.9) < run(0.0));
    }
}
