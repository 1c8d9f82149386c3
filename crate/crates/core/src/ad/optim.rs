// SPDX-License-Identifier: Apache-2.0
use num_complex::Complex64;

use super::tensor::{Data, ParamSet};
use crate::{Error, Result};

/// Adam with bias correction. Complex parameters are treated as pairs of
/// independent real scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Forget the moment estimates and the step counter.
    pub fn reset(&mut self) {
        self.step_count = 0;
        self.m.clear();
        self.v.clear();
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Data]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dims(
                format!("{} gradients", params.len()),
                format!("{}", grads.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor(i).data();
            if p.len() != g.len() || p.is_complex() != g.is_complex() {
                return Err(Error::dims(
                    format!("gradient for `{}` with {} entries", params.name(i), p.len()),
                    format!("{} entries", g.len()),
                ));
            }
        }
        if self.m.is_empty() {
            self.m = (0..params.len())
                .map(|i| vec![0.0; params.tensor(i).data().to_reals().len()])
                .collect();
            self.v = self.m.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let g = g.to_reals();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut delta = vec![0.0; g.len()];
            for (j, &gj) in g.iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                delta[j] = -self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
            match params.tensor_mut(i).data_mut() {
                Data::Real(p) => p.iter_mut().zip(&delta).for_each(|(p, d)| *p += d),
                Data::Complex(p) => p
                    .iter_mut()
                    .zip(delta.chunks_exact(2))
                    .for_each(|(p, d)| *p += Complex64::new(d[0], d[1])),
            }
        }
        Ok(())
    }
}

/// Piecewise-constant decay: the rate is multiplied by `factor` every
/// `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub every: usize,
    pub factor: f64,
}

impl StepSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    StepSchedule {
        base_lr,
        every: 2,
        factor: 0.5,
    }
    .lr(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Tensor;

    fn one_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::real(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(0.0);
        let mut s = AdamState::new(0.004);
        s.step(&mut p, &[Data::Real(vec![1.0])]).unwrap();
        let got = p.tensor(0).as_real().unwrap()[0];
        assert!((got + 0.004).abs() < 1e-9, "{got}");
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut p = one_param(0.5);
        let mut s = AdamState::new(0.004);
        s.step(&mut p, &[Data::Real(vec![1.0])]).unwrap();
        let after_first = p.tensor(0).as_real().unwrap()[0];
        let (m1, v1) = (s.moments().0[0][0], s.moments().1[0][0]);
        let mut q = one_param(after_first);
        let mut s2 = s.clone();
        s2.step(&mut q, &[Data::Real(vec![0.0])]).unwrap();
        assert!((s2.moments().0[0][0] - 0.9 * m1).abs() < 1e-15);
        assert!((s2.moments().1[0][0] - 0.999 * v1).abs() < 1e-15);

        let mut fresh = one_param(0.5);
        let mut s3 = AdamState::new(0.004);
        s3.step(&mut fresh, &[Data::Real(vec![0.0])]).unwrap();
        assert_eq!(fresh.tensor(0).as_real().unwrap()[0], 0.5);
    }

    #[test]
    fn complex_parameters_update_componentwise() {
        let mut p = ParamSet::new();
        p.insert(
            "z",
            Tensor::complex(&[1], vec![Complex64::new(0.0, 0.0)]).unwrap(),
        )
        .unwrap();
        let mut s = AdamState::new(0.01);
        s.step(&mut p, &[Data::Complex(vec![Complex64::new(2.0, -3.0)])])
            .unwrap();
        let z = p.tensor(0).as_complex().unwrap()[0];
        assert!((z.re + 0.01).abs() < 1e-9 && (z.im - 0.01).abs() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut p = one_param(0.0);
        let mut s = AdamState::new(0.1);
        assert!(s.step(&mut p, &[Data::Real(vec![1.0, 2.0])]).is_err());
        assert!(s.step(&mut p, &[]).is_err());
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut p = one_param(0.3);
            let mut s = AdamState::new(0.004);
            for k in 0..50 {
                let g = (k as f64 * 0.37).sin();
                s.step(&mut p, &[Data::Real(vec![g])]).unwrap();
            }
            p.tensor(0).as_real().unwrap()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_schedule_halves_every_two_epochs() {
        assert_eq!(lr_schedule(0, 0.004), 0.004);
        assert_eq!(lr_schedule(1, 0.004), 0.004);
        assert_eq!(lr_schedule(2, 0.004), 0.002);
        assert!((lr_schedule(19, 0.004) - 0.004 * 0.5f64.powi(9)).abs() < 1e-18);
    }
}
