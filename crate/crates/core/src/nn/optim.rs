//! AdamW with global-norm gradient clipping.

use super::mat::Mat;

#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(shapes: &[(usize, usize)], lr: f32, weight_decay: f32) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    /// One update. `decay_mask[i]` selects which parameters get weight decay
    /// (matrices yes, gains and biases no).
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat], decay_mask: &[bool]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if decay_mask[i] { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                let mj = &mut m.data_mut()[j];
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                let vj = &mut v.data_mut()[j];
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = m.data()[j] / bc1;
                let vhat = v.data()[j] / bc2;
                pd[j] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + decay * pd[j]);
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f32) -> f32 {
    let total: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| (*v as f64) * (*v as f64))
        .sum();
    let norm = total.sqrt() as f32;
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_moves_against_gradient() {
        let mut p = Mat::from_vec(1, 2, vec![1.0, -1.0]);
        let mut opt = AdamW::new(&[(1, 2)], 0.1, 0.0);
        let g = Mat::from_vec(1, 2, vec![2.0, -3.0]);
        opt.step(&mut [&mut p], &[g], &[true]);
        // first Adam step has magnitude ~lr regardless of gradient scale
        assert!((p.get(0, 0) - 0.9).abs() < 1e-4);
        assert!((p.get(0, 1) + 0.9).abs() < 1e-4);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Mat::from_vec(1, 2, vec![3.0, 4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert!((n - 5.0).abs() < 1e-6);
        assert!((g[0].frobenius_norm() - 1.0).abs() < 1e-6);
    }
}
