//! Shared test oracles and fixtures. Everything here is independent of the
//! implementation paths it is used to check.

use llb_core::{Rng, Tensor};

/// Dense Gaussian elimination with partial pivoting (the linear-solve side
/// of the closed-form ridge oracle).
#[allow(clippy::needless_range_loop)]
pub fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        let diag = m[col][col];
        assert!(diag.abs() > 1e-12, "singular system in oracle");
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row][col] / diag;
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    (0..n).map(|i| rhs[i] / m[i][i]).collect()
}

/// One weighted-ridge instance with a 1x1 target model: per-sample feature
/// rows, labels, and positive weights over `positions` spatial cells.
pub struct RidgeInstance {
    pub c: usize,
    pub d: usize,
    pub positions: usize,
    pub features: Vec<Tensor>, // [1, positions, c] each
    pub labels: Vec<Tensor>,   // [1, positions, d]
    pub weights: Vec<Tensor>,  // [1, positions, d]
    pub lambda: f64,
}

impl RidgeInstance {
    pub fn random(c: usize, d: usize, positions: usize, samples: usize, lambda: f64, rng: &mut Rng) -> Self {
        let gen3 = |rng: &mut Rng, ch: usize, lo: f64, hi: f64| {
            Tensor::from_fn(&[1, positions, ch], |_| rng.uniform(lo, hi))
        };
        RidgeInstance {
            c,
            d,
            positions,
            features: (0..samples).map(|_| gen3(rng, c, -1.0, 1.0)).collect(),
            labels: (0..samples).map(|_| gen3(rng, d, -1.0, 1.0)).collect(),
            weights: (0..samples).map(|_| gen3(rng, d, 0.2, 1.8)).collect(),
            lambda,
        }
    }

    /// Closed-form weighted ridge solution by direct normal equations, one
    /// output channel at a time: (sum w^2 m m^T + lambda I) tau_d = sum w^2 g m.
    #[allow(clippy::needless_range_loop)]
    pub fn closed_form(&self) -> Tensor {
        let mut tau = vec![0.0; self.c * self.d];
        for dch in 0..self.d {
            let mut ata = vec![vec![0.0; self.c]; self.c];
            let mut atb = vec![0.0; self.c];
            for cc in 0..self.c {
                ata[cc][cc] = self.lambda;
            }
            for s in 0..self.features.len() {
                let m = &self.features[s];
                let g = &self.labels[s];
                let w = &self.weights[s];
                for p in 0..self.positions {
                    let ww = w.at(p * self.d + dch) * w.at(p * self.d + dch);
                    let gv = g.at(p * self.d + dch);
                    for ci in 0..self.c {
                        let mi = m.at(p * self.c + ci);
                        atb[ci] += ww * gv * mi;
                        for cj in 0..self.c {
                            ata[ci][cj] += ww * mi * m.at(p * self.c + cj);
                        }
                    }
                }
            }
            let sol = solve_linear(&ata, &atb);
            for ci in 0..self.c {
                tau[ci * self.d + dch] = sol[ci];
            }
        }
        Tensor::from_vec(&[1, 1, self.c, self.d], tau)
    }
}

pub fn rel_frobenius(a: &Tensor, b: &Tensor) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-12)
}
