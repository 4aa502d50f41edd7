/// Bias-corrected Adam over flat parameter buffers. One moment slot per
/// update entry; the entry layout must stay identical across steps.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    slots: Vec<Slot>,
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// One parameter buffer with its gradient and a per-buffer learning-rate
/// multiplier (used to give the gate logits their own step size).
pub struct AdamUpdate<'a> {
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
    pub lr_scale: f64,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { learning_rate, beta1, beta2, eps, step: 0, slots: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, updates: &mut [AdamUpdate]) {
        if self.slots.is_empty() {
            self.slots = updates
                .iter()
                .map(|u| Slot { m: vec![0.0; u.values.len()], v: vec![0.0; u.values.len()] })
                .collect();
        }
        assert_eq!(self.slots.len(), updates.len(), "update layout changed between steps");
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (slot, u) in self.slots.iter_mut().zip(updates.iter_mut()) {
            assert_eq!(slot.m.len(), u.values.len(), "parameter size changed between steps");
            if u.grad.is_empty() {
                continue; // no gradient reached this buffer
            }
            let lr = self.learning_rate * u.lr_scale;
            for i in 0..u.values.len() {
                let g = u.grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                u.values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
