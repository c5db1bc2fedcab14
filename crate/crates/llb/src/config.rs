//! Pipeline configuration: one flat, human-readable `key = value` file.
//!
//! Schema (defaults in parentheses; `#` starts a comment):
//!
//! ```text
//! # model
//! channels_c        = 64            # backbone feature width C at stride 16 (full scale: 512)
//! head_dim_d        = 16            # target encoding width D (full scale: 32)
//! kernel_k          = 3             # target model kernel size K (odd)
//! backbone_widths   = 16,24,32,64   # widths of the four stride-2 stages
//! attn_heads        = 4             # heads in every attention block
//! label_encoder     = tiny_transformer   # tiny_cnn | tiny_transformer
//! label_input       = bff                # bff | mask
//! label_hidden      = 32            # label encoder trunk width
//! use_afm           = true          # false -> plain pixel-wise sum fusion
//! cross_output_proj = true          # DxD projection after cross-attention
//! # learner
//! lambda            = 0.05
//! iters_train_init  = 5
//! iters_train_update = 2
//! iters_infer_init  = 20
//! iters_infer_update = 3
//! curvature_eps     = 1e-10
//! # training
//! seq_len_q         = 4
//! batch_size        = 2             # full scale: 32
//! w_cos             = 1.0
//! lr                = 1e-3
//! train_steps       = 600
//! seed              = 7             # env LLB_SEED overrides
//! # inference
//! sample_interval_t = 5
//! memory_capacity   = 20
//! crop_scale        = 5.0
//! crop_scale_mode   = area          # area | side
//! work_width        = 128           # full scale: 832
//! work_height       = 128           # full scale: 480
//! bff_threshold     = 0.5
//! ```

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoderKind {
    TinyCnn,
    TinyTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelInput {
    Bff,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CropScaleMode {
    /// `crop_scale` multiplies the box area (side grows by sqrt(scale)).
    Area,
    /// `crop_scale` multiplies the box sides directly.
    Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub channels_c: usize,
    pub head_dim_d: usize,
    pub kernel_k: usize,
    pub backbone_widths: [usize; 4],
    pub attn_heads: usize,
    pub label_encoder: LabelEncoderKind,
    pub label_input: LabelInput,
    pub label_hidden: usize,
    pub use_afm: bool,
    pub cross_output_proj: bool,

    pub lambda: f64,
    pub iters_train_init: usize,
    pub iters_train_update: usize,
    pub iters_infer_init: usize,
    pub iters_infer_update: usize,
    pub curvature_eps: f64,

    pub seq_len_q: usize,
    pub batch_size: usize,
    pub w_cos: f64,
    pub lr: f64,
    pub train_steps: usize,
    pub seed: u64,

    pub sample_interval_t: usize,
    pub memory_capacity: usize,
    pub crop_scale: f64,
    pub crop_scale_mode: CropScaleMode,
    pub work_width: usize,
    pub work_height: usize,
    pub bff_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            channels_c: 64,
            head_dim_d: 16,
            kernel_k: 3,
            backbone_widths: [16, 24, 32, 64],
            attn_heads: 4,
            label_encoder: LabelEncoderKind::TinyTransformer,
            label_input: LabelInput::Bff,
            label_hidden: 32,
            use_afm: true,
            cross_output_proj: true,

            lambda: 0.05,
            iters_train_init: 5,
            iters_train_update: 2,
            iters_infer_init: 20,
            iters_infer_update: 3,
            curvature_eps: 1e-10,

            seq_len_q: 4,
            batch_size: 2,
            w_cos: 1.0,
            lr: 1e-3,
            train_steps: 600,
            seed: 7,

            sample_interval_t: 5,
            memory_capacity: 20,
            crop_scale: 5.0,
            crop_scale_mode: CropScaleMode::Area,
            work_width: 128,
            work_height: 128,
            bff_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_k.is_multiple_of(2) {
            return Err(Error::Config("kernel_k must be odd".into()));
        }
        if self.seq_len_q < 2 {
            return Err(Error::Config("seq_len_q must be >= 2".into()));
        }
        if self.sample_interval_t < 1 || self.memory_capacity < 1 {
            return Err(Error::Config("interval and capacity must be >= 1".into()));
        }
        if !self.channels_c.is_multiple_of(self.attn_heads) || !self.head_dim_d.is_multiple_of(self.attn_heads) {
            return Err(Error::Config(
                "attn_heads must divide channels_c and head_dim_d".into(),
            ));
        }
        if !self.label_hidden.is_multiple_of(self.attn_heads) {
            return Err(Error::Config("attn_heads must divide label_hidden".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if !(0.0 < self.bff_threshold && self.bff_threshold < 1.0) {
            return Err(Error::Config("bff_threshold must lie in (0,1)".into()));
        }
        if !self.work_width.is_multiple_of(16) || !self.work_height.is_multiple_of(16) {
            return Err(Error::Config("work resolution must be divisible by 16".into()));
        }
        Ok(())
    }

    /// Parse the documented `key = value` format. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", ln + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; the `LLB_SEED` environment override applies here,
    /// not to embedded (checkpoint) configs.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env_seed();
        Ok(cfg)
    }

    /// `LLB_SEED` environment variable wins over the config file.
    pub fn apply_env_seed(&mut self) {
        self.apply_seed_override(std::env::var("LLB_SEED").ok().as_deref());
    }

    fn apply_seed_override(&mut self, value: Option<&str>) {
        if let Some(s) = value {
            if let Ok(v) = s.trim().parse::<u64>() {
                self.seed = v;
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T> {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("bad numeric value '{v}'")))
        }
        fn boolean(v: &str) -> Result<bool> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(Error::Config(format!("bad boolean '{v}'"))),
            }
        }
        match key {
            "channels_c" => self.channels_c = num(value)?,
            "head_dim_d" => self.head_dim_d = num(value)?,
            "kernel_k" => self.kernel_k = num(value)?,
            "backbone_widths" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| num(p.trim()))
                    .collect::<Result<_>>()?;
                if parts.len() != 4 {
                    return Err(Error::Config("backbone_widths needs 4 entries".into()));
                }
                self.backbone_widths = [parts[0], parts[1], parts[2], parts[3]];
            }
            "attn_heads" => self.attn_heads = num(value)?,
            "label_encoder" => {
                self.label_encoder = match value {
                    "tiny_cnn" => LabelEncoderKind::TinyCnn,
                    "tiny_transformer" => LabelEncoderKind::TinyTransformer,
                    _ => return Err(Error::Config(format!("unknown label_encoder '{value}'"))),
                }
            }
            "label_input" => {
                self.label_input = match value {
                    "bff" => LabelInput::Bff,
                    "mask" => LabelInput::Mask,
                    _ => return Err(Error::Config(format!("unknown label_input '{value}'"))),
                }
            }
            "label_hidden" => self.label_hidden = num(value)?,
            "use_afm" => self.use_afm = boolean(value)?,
            "cross_output_proj" => self.cross_output_proj = boolean(value)?,
            "lambda" => self.lambda = num(value)?,
            "iters_train_init" => self.iters_train_init = num(value)?,
            "iters_train_update" => self.iters_train_update = num(value)?,
            "iters_infer_init" => self.iters_infer_init = num(value)?,
            "iters_infer_update" => self.iters_infer_update = num(value)?,
            "curvature_eps" => self.curvature_eps = num(value)?,
            "seq_len_q" => self.seq_len_q = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "w_cos" => self.w_cos = num(value)?,
            "lr" => self.lr = num(value)?,
            "train_steps" => self.train_steps = num(value)?,
            "seed" => self.seed = num(value)?,
            "sample_interval_t" => self.sample_interval_t = num(value)?,
            "memory_capacity" => self.memory_capacity = num(value)?,
            "crop_scale" => self.crop_scale = num(value)?,
            "crop_scale_mode" => {
                self.crop_scale_mode = match value {
                    "area" => CropScaleMode::Area,
                    "side" => CropScaleMode::Side,
                    _ => return Err(Error::Config(format!("unknown crop_scale_mode '{value}'"))),
                }
            }
            "work_width" => self.work_width = num(value)?,
            "work_height" => self.work_height = num(value)?,
            "bff_threshold" => self.bff_threshold = num(value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Canonical serialization: fixed key order, used for hashing, the
    /// checkpoint header and report snapshots.
    pub fn to_canonical_string(&self) -> String {
        let enc = match self.label_encoder {
            LabelEncoderKind::TinyCnn => "tiny_cnn",
            LabelEncoderKind::TinyTransformer => "tiny_transformer",
        };
        let inp = match self.label_input {
            LabelInput::Bff => "bff",
            LabelInput::Mask => "mask",
        };
        let mode = match self.crop_scale_mode {
            CropScaleMode::Area => "area",
            CropScaleMode::Side => "side",
        };
        format!(
            "channels_c = {}\nhead_dim_d = {}\nkernel_k = {}\nbackbone_widths = {},{},{},{}\n\
             attn_heads = {}\nlabel_encoder = {}\nlabel_input = {}\nlabel_hidden = {}\n\
             use_afm = {}\ncross_output_proj = {}\nlambda = {}\niters_train_init = {}\n\
             iters_train_update = {}\niters_infer_init = {}\niters_infer_update = {}\n\
             curvature_eps = {}\nseq_len_q = {}\nbatch_size = {}\nw_cos = {}\nlr = {}\n\
             train_steps = {}\nseed = {}\nsample_interval_t = {}\nmemory_capacity = {}\n\
             crop_scale = {}\ncrop_scale_mode = {}\nwork_width = {}\nwork_height = {}\n\
             bff_threshold = {}\n",
            self.channels_c,
            self.head_dim_d,
            self.kernel_k,
            self.backbone_widths[0],
            self.backbone_widths[1],
            self.backbone_widths[2],
            self.backbone_widths[3],
            self.attn_heads,
            enc,
            inp,
            self.label_hidden,
            self.use_afm,
            self.cross_output_proj,
            self.lambda,
            self.iters_train_init,
            self.iters_train_update,
            self.iters_infer_init,
            self.iters_infer_update,
            self.curvature_eps,
            self.seq_len_q,
            self.batch_size,
            self.w_cos,
            self.lr,
            self.train_steps,
            self.seed,
            self.sample_interval_t,
            self.memory_capacity,
            self.crop_scale,
            mode,
            self.work_width,
            self.work_height,
            self.bff_threshold,
        )
    }

    /// FNV-1a over the canonical string, excluding run-only keys (seed and
    /// step counts do not change parameter shapes or meaning).
    pub fn shape_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for line in self.to_canonical_string().lines() {
            if line.starts_with("seed")
                || line.starts_with("train_steps")
                || line.starts_with("batch_size")
                || line.starts_with("lr")
            {
                continue;
            }
            for b in line.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Feature grid dims at stride 16 for the configured work resolution.
    pub fn grid(&self) -> (usize, usize) {
        (self.work_height / 16, self.work_width / 16)
    }
}
