//! Named parameter store, tape binding, and the Adam optimizer.

use std::collections::HashMap;

use llb_core::{Ctx, Gradients, Rng, Tensor, Var};

/// Insertion-ordered collection of named parameter tensors.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter '{name}'"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.try_get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        assert_eq!(self.entries[i].1.shape(), t.shape(), "shape change for '{name}'");
        self.entries[i].1 = t;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_elems(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Parameters bound to a context as tape leaves (or eager vars in eval mode).
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn bind(ctx: &Ctx, store: &ParamStore) -> Bound {
        let vars = store
            .iter()
            .map(|(n, t)| (n.to_string(), ctx.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    /// Collect per-parameter gradients after a backward pass. Untouched
    /// parameters get zeros.
    pub fn grads(&self, store: &ParamStore, grads: &Gradients) -> HashMap<String, Tensor> {
        store
            .iter()
            .map(|(n, _)| (n.to_string(), grads.of(self.var(n))))
            .collect()
    }
}

// ---- initializers ----

pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform(-limit, limit))
}

/// Glorot-uniform conv kernel `[K, K, Cin, Cout]`.
pub fn conv_init(k: usize, cin: usize, cout: usize, rng: &mut Rng) -> Tensor {
    glorot(&[k, k, cin, cout], k * k * cin, k * k * cout, rng)
}

pub fn linear_init(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    glorot(&[rows, cols], rows, cols, rng)
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<String, Tensor>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let g = match grads.get(&name) {
                Some(g) => g.clone(),
                None => continue,
            };
            let p = store.get(&name).clone();
            let m0 = self
                .m
                .remove(&name)
                .unwrap_or_else(|| Tensor::zeros(p.shape()));
            let v0 = self
                .v
                .remove(&name)
                .unwrap_or_else(|| Tensor::zeros(p.shape()));
            let m1 = m0.zip_map(&g, |m, gg| self.beta1 * m + (1.0 - self.beta1) * gg);
            let v1 = v0.zip_map(&g, |v, gg| self.beta2 * v + (1.0 - self.beta2) * gg * gg);
            let new_p = Tensor::from_fn(p.shape(), |i| {
                let mh = m1.at(i) / bc1;
                let vh = v1.at(i) / bc2;
                p.at(i) - self.lr * mh / (vh.sqrt() + self.eps)
            });
            store.set(&name, new_p);
            self.m.insert(name.clone(), m1);
            self.v.insert(name, v1);
        }
    }
}
