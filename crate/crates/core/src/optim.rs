use crate::params::{Grads, ParamStore};

/// SGD with momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Grads::zeros_like(store).data,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = &mut store.get_mut(id).data;
            let v = &mut self.velocity[i];
            for ((w, vel), g) in p.iter_mut().zip(v.iter_mut()).zip(&grads.data[i]) {
                let d = g + self.weight_decay * *w;
                *vel = self.momentum * *vel + d;
                *w -= self.lr * *vel;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let z = Grads::zeros_like(store).data;
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: z.clone(),
            v: z,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = &mut store.get_mut(id).data;
            for k in 0..p.len() {
                let g = grads.data[i][k];
                self.m[i][k] = self.beta1 * self.m[i][k] + (1.0 - self.beta1) * g;
                self.v[i][k] = self.beta2 * self.v[i][k] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i][k] / c1;
                let vh = self.v[i][k] / c2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let n = grads.global_norm();
    if max_norm > 0.0 && n > max_norm {
        grads.scale(max_norm / n);
    }
    n
}
