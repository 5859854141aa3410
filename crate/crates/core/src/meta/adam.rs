/// Adam with per-entry step counters, so that resetting part of the
/// parameters also restarts their bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<u32>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: vec![0; len],
        }
    }

    /// Clears moments and counters of `range`.
    pub fn reset(&mut self, range: std::ops::Range<usize>) {
        self.m[range.clone()].iter_mut().for_each(|x| *x = 0.0);
        self.v[range.clone()].iter_mut().for_each(|x| *x = 0.0);
        self.t[range].iter_mut().for_each(|x| *x = 0);
    }

    pub fn step_count(&self, i: usize) -> u32 {
        self.t[i]
    }

    /// Descends along `grad` on the entries where `mask` is true.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: &[bool]) {
        let (b1, b2) = (self.beta1, self.beta2);
        let mut cached = (0u32, 1.0, 1.0);
        for i in 0..params.len() {
            if !mask[i] {
                continue;
            }
            let g = grad[i];
            self.t[i] += 1;
            let t = self.t[i];
            if cached.0 != t {
                cached = (t, 1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
            }
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / cached.1;
            let vhat = self.v[i] / cached.2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut a = Adam::new(3, 0.1);
        let mut p = vec![1.0, 1.0, 1.0];
        a.step(&mut p, &[2.0, -0.5, 0.0], &[true, true, true]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] - 1.1).abs() < 1e-7);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn masked_entries_untouched_and_reset_restarts() {
        let mut a = Adam::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        a.step(&mut p, &[1.0, 1.0], &[true, false]);
        assert_eq!(p[1], 0.0);
        assert_eq!((a.step_count(0), a.step_count(1)), (1, 0));
        a.step(&mut p, &[1.0, 1.0], &[true, true]);
        a.reset(0..1);
        assert_eq!((a.step_count(0), a.step_count(1)), (0, 1));
    }

    #[test]
    fn zero_lr_is_exact_noop() {
        let mut a = Adam::new(2, 0.0);
        let mut p = vec![0.3, -7.1];
        a.step(&mut p, &[5.0, -1e-3], &[true, true]);
        assert_eq!(p, vec![0.3, -7.1]);
    }
}
