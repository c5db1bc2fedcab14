//! Deterministic moving-shapes video generator. Targets are annotated;
//! optional distractors clone a target's appearance and are not.

use llb_core::{Rng, Tensor};

use crate::datamodel::{Frame, Mask, VideoSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    pub num_objects: usize,
    pub num_distractors: usize,
    pub shapes: Vec<ShapeKind>,
    pub min_radius: f64,
    pub max_radius: f64,
    pub max_speed: f64,
    pub length: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            width: 128,
            height: 128,
            num_objects: 2,
            num_distractors: 2,
            shapes: vec![ShapeKind::Disk, ShapeKind::Square],
            min_radius: 10.0,
            max_radius: 18.0,
            max_speed: 3.0,
            length: 12,
            seed: 0,
        }
    }
}

#[derive(Clone)]
struct MovingShape {
    kind: ShapeKind,
    color: [f64; 3],
    radius: f64,
    pos: (f64, f64), // (x, y)
    vel: (f64, f64),
}

impl MovingShape {
    fn covers(&self, x: f64, y: f64) -> bool {
        let dx = x - self.pos.0;
        let dy = y - self.pos.1;
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.radius * self.radius,
            ShapeKind::Square => dx.abs() <= self.radius && dy.abs() <= self.radius,
        }
    }

    fn step(&mut self, w: f64, h: f64) {
        self.pos.0 += self.vel.0;
        self.pos.1 += self.vel.1;
        if self.pos.0 - self.radius < 0.0 {
            self.pos.0 = 2.0 * self.radius - self.pos.0;
            self.vel.0 = -self.vel.0;
        }
        if self.pos.0 + self.radius > w {
            self.pos.0 = 2.0 * (w - self.radius) - self.pos.0;
            self.vel.0 = -self.vel.0;
        }
        if self.pos.1 - self.radius < 0.0 {
            self.pos.1 = 2.0 * self.radius - self.pos.1;
            self.vel.1 = -self.vel.1;
        }
        if self.pos.1 + self.radius > h {
            self.pos.1 = 2.0 * (h - self.radius) - self.pos.1;
            self.vel.1 = -self.vel.1;
        }
    }
}

/// Static per-pixel background texture, deterministic in the seed.
fn background_noise(x: usize, y: usize, seed: u64) -> f64 {
    let mut v = seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add((x as u64) << 32 | (y as u64));
    v ^= v >> 33;
    v = v.wrapping_mul(0xFF51AFD7ED558CCD);
    v ^= v >> 33;
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Spawn points spread over a coarse grid so objects start apart.
fn spawn_position(slot: usize, w: f64, h: f64, r: f64, rng: &mut Rng) -> (f64, f64) {
    let cols = 2.0;
    let col = (slot % 2) as f64;
    let row = ((slot / 2) % 2) as f64;
    let jitter_x = rng.uniform(-0.08, 0.08) * w;
    let jitter_y = rng.uniform(-0.08, 0.08) * h;
    let x = (col + 0.5) * w / cols + jitter_x;
    let y = (row + 0.5) * h / 2.0 + jitter_y;
    let fit = |v: f64, dim: f64| {
        let (lo, hi) = (r + 1.0, dim - r - 1.0);
        if lo >= hi {
            dim / 2.0
        } else {
            v.clamp(lo, hi)
        }
    };
    (fit(x, w), fit(y, h))
}

/// Generate one sequence. Pixel ownership is resolved by object index
/// (targets first, then distractors), so target masks exactly match the
/// rendered shapes; overlaps are flagged in the name metadata below.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> VideoSequence {
    let mut rng = Rng::seed(cfg.seed ^ 0x5e9d);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let base = [
        rng.uniform(0.05, 0.2),
        rng.uniform(0.05, 0.2),
        rng.uniform(0.05, 0.2),
    ];

    let mut shapes: Vec<MovingShape> = Vec::new();
    for i in 0..cfg.num_objects {
        let kind = cfg.shapes[rng.below(cfg.shapes.len())];
        let fit_r = (w.min(h) / 2.0 - 2.0).max(2.0);
        let radius = rng.uniform(cfg.min_radius, cfg.max_radius).min(fit_r);
        let color = [
            rng.uniform(0.35, 1.0),
            rng.uniform(0.35, 1.0),
            rng.uniform(0.35, 1.0),
        ];
        let pos = spawn_position(i, w, h, radius, &mut rng);
        let speed = rng.uniform(cfg.max_speed.min(0.3), cfg.max_speed);
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        shapes.push(MovingShape {
            kind,
            color,
            radius,
            pos,
            vel: (speed * angle.cos(), speed * angle.sin()),
        });
    }
    // distractors clone a target's appearance, spawned in a different slot
    for i in 0..cfg.num_distractors {
        let twin = shapes[i % cfg.num_objects.max(1)].clone();
        let pos = spawn_position(cfg.num_objects + i, w, h, twin.radius, &mut rng);
        let speed = rng.uniform(cfg.max_speed.min(0.3), cfg.max_speed);
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        shapes.push(MovingShape {
            pos,
            vel: (speed * angle.cos(), speed * angle.sin()),
            ..twin
        });
    }

    let n_px = cfg.height * cfg.width;
    let mut frames = Vec::with_capacity(cfg.length);
    let mut masks: Vec<Vec<Option<Mask>>> = vec![Vec::with_capacity(cfg.length); cfg.num_objects];
    let mut overlapped = false;

    for t in 0..cfg.length {
        let mut pixels = vec![0.0; n_px * 3];
        let mut owner = vec![usize::MAX; n_px];
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let p = y * cfg.width + x;
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut covering = 0usize;
                for (i, s) in shapes.iter().enumerate() {
                    if s.covers(fx, fy) {
                        covering += 1;
                        if owner[p] == usize::MAX {
                            owner[p] = i;
                        }
                    }
                }
                if covering > 1 {
                    overlapped = true;
                }
                let noise = 0.06 * (background_noise(x, y, cfg.seed) - 0.5);
                for c in 0..3 {
                    pixels[p * 3 + c] = match owner[p] {
                        usize::MAX => (base[c] + noise).clamp(0.0, 1.0),
                        i => shapes[i].color[c],
                    };
                }
            }
        }
        frames.push(Frame::new(Tensor::from_vec(&[cfg.height, cfg.width, 3], pixels), t).unwrap());
        for (o, track) in masks.iter_mut().enumerate() {
            let vals = Tensor::from_fn(&[cfg.height, cfg.width], |p| {
                if owner[p] == o {
                    1.0
                } else {
                    0.0
                }
            });
            track.push(Some(Mask::new(vals, o as u32 + 1, true).unwrap()));
        }
        for s in shapes.iter_mut() {
            s.step(w, h);
        }
    }

    VideoSequence {
        name: format!(
            "synth-{:04x}{}",
            cfg.seed & 0xffff,
            if overlapped { "-overlap" } else { "" }
        ),
        frames,
        masks,
    }
}

/// A family of sequences from consecutive seeds.
pub fn gen_dataset(base: &SyntheticConfig, count: usize) -> Vec<VideoSequence> {
    (0..count)
        .map(|i| {
            let mut cfg = base.clone();
            cfg.seed = base.seed.wrapping_add(i as u64);
            gen_synthetic(&cfg)
        })
        .collect()
}
