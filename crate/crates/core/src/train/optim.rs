use crate::model::LoopedWeights;
use crate::nn::Tensor2;
use crate::scalar::Scalar;

use super::config::TrainConfig;

/// AdamW moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub m: LoopedWeights<Tensor2<T>>,
    pub v: LoopedWeights<Tensor2<T>>,
    pub step: usize,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(like: &LoopedWeights<Tensor2<T>>) -> Self {
        let zeros = like.map(|t| Tensor2::zeros(t.rows(), t.cols()));
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Learning rate for the next update after linear warmup.
    pub fn current_lr(&self, config: &TrainConfig) -> f64 {
        let t = (self.step + 1) as f64;
        if config.warmup_steps == 0 {
            config.learning_rate
        } else {
            config.learning_rate * (t / config.warmup_steps as f64).min(1.0)
        }
    }

    /// One update. `grads` are in [`LoopedWeights::slots_mut`] order and are
    /// rescaled in place when their global norm exceeds the clip. Returns the
    /// pre-clip norm.
    pub fn update(&mut self, weights: &mut LoopedWeights<Tensor2<T>>, grads: &mut [Tensor2<T>], config: &TrainConfig) -> f64 {
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt();
        if config.grad_clip > 0.0 && norm > config.grad_clip {
            let s = T::lit(config.grad_clip / norm);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
        let lr = self.current_lr(config);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = T::lit(1.0 / (1.0 - b1.powi(t)));
        let c2 = T::lit(1.0 / (1.0 - b2.powi(t)));
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let (lr_t, eps) = (T::lit(lr), T::lit(config.adam_eps));
        let decay = T::lit(1.0 - lr * config.weight_decay);
        let one = T::one();
        let params = weights.slots_mut();
        let ms = self.m.slots_mut();
        let vs = self.v.slots_mut();
        for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(grads.iter()) {
            let is_matrix = p.rows() > 1 && p.cols() > 1;
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1t * md[i] + (one - b1t) * gi;
                vd[i] = b2t * vd[i] + (one - b2t) * gi * gi;
                let mhat = md[i] * c1;
                let vhat = vd[i] * c2;
                if is_matrix {
                    pd[i] *= decay;
                }
                pd[i] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}
