//! Pipeline configuration: geometry, model sizes, loss weights, and the
//! bookkeeping every other module consumes.
//!
//! Config files are flat `key = value` text, one entry per line, `#` comments.
//! A handful of short aliases (`f`, `M`, `N`, `k`) map onto the long names so
//! config files can mirror the usual notation for the downsample factor,
//! query count, codebook size and selection length.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{HitaError, Result};

/// Token fusion assembly strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    /// Last-k holistic outputs take the first k grid slots, patch outputs shift right.
    Select,
    /// First k patch inputs are replaced by a mask token; holistic acts as condition.
    Partial,
    /// All patch inputs are replaced by the mask token; the patch stream is unused.
    Full,
}

impl FusionVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "select" => Ok(Self::Select),
            "partial" => Ok(Self::Partial),
            "full" => Ok(Self::Full),
            other => Err(HitaError::validation(format!(
                "fusion_variant must be one of select|partial|full, got `{other}`"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Select => "select",
            Self::Partial => "partial",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Pixels per side (square images).
    pub image_size: usize,
    /// Spatial downsample factor f of the encoder (must be a power of two).
    pub downsample_factor: usize,
    /// Number of learnable holistic queries M. Zero switches the tokenizer
    /// into the queries-off baseline used by the ablations.
    pub num_queries: usize,
    /// Selection length k: holistic outputs physically placed into the grid.
    pub selection_k: usize,
    /// Code vector dimension of the patch book.
    pub patch_code_dim: usize,
    /// Code vector dimension of the holistic book.
    pub holistic_code_dim: usize,
    /// Codebook size N, shared by both books.
    pub codebook_size: usize,
    /// Depth of each of the three tokenizer transformers.
    pub transformer_depth: usize,
    /// Transformer width C.
    pub embed_dim: usize,
    /// Encoder stage widths, one per stride-2 stage (log2 f entries).
    pub enc_channels: Vec<usize>,
    /// Semantic injection provider id ("none" disables injection).
    pub semantic_provider: String,
    /// Perceptual loss provider id ("off" disables the term).
    pub perceptual_provider: String,
    /// Fusion assembly strategy.
    pub fusion_variant: FusionVariant,
    /// Weight on the VQ losses.
    pub alpha: f64,
    /// Weight on the autoencoding losses.
    pub lambda: f64,
    /// Commitment weight inside each VQ loss.
    pub beta: f64,
    /// Weight on the adversarial generator term inside the AE loss.
    pub lambda_g: f64,
    /// Enables the patch discriminator and the adversarial term.
    pub use_discriminator: bool,
    /// Re-seed dead codebook rows from batch latents during training.
    pub codebook_reseed: bool,
    /// Classifier-free guidance scale used at sampling time.
    pub cfg_scale: f64,
    /// Probability of replacing the class id with the null class during AR training.
    pub class_dropout_prob: f64,
    /// Sampling temperature (0 = greedy argmax).
    pub temperature: f64,
    /// Top-k sampling cutoff (0 = disabled).
    pub top_k: usize,
    /// AR transformer depth.
    pub ar_depth: usize,
    /// AR transformer width.
    pub ar_width: usize,
    /// AR attention heads (0 = auto: width/64 clamped to >= 1).
    pub ar_heads: usize,
    /// AR residual dropout probability.
    pub dropout: f64,
    /// Training batch size.
    pub batch_size: usize,
    /// Tokenizer learning rate.
    pub learning_rate: f64,
    /// AR model learning rate.
    pub ar_learning_rate: f64,
    /// AdamW weight decay.
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Number of classes in the corpus.
    pub num_classes: usize,
    /// Samples per epoch of the synthetic corpus.
    pub synthetic_size: usize,
    /// Base RNG seed.
    pub seed: u64,
}

impl Default for PipelineConfig {
    /// Default profile mirrors the reference setup: 336px images, f=16,
    /// 128 queries, 16384-entry books with 8/12-dim codes, depth-3
    /// transformers and selection length 4.
    fn default() -> Self {
        Self {
            image_size: 336,
            downsample_factor: 16,
            num_queries: 128,
            selection_k: 4,
            patch_code_dim: 8,
            holistic_code_dim: 12,
            codebook_size: 16384,
            transformer_depth: 3,
            embed_dim: 512,
            enc_channels: vec![64, 128, 256, 512],
            semantic_provider: "frozen-random-conv".to_string(),
            perceptual_provider: "frozen-random-conv".to_string(),
            fusion_variant: FusionVariant::Select,
            alpha: 1.0,
            lambda: 1.0,
            beta: 0.25,
            lambda_g: 0.0,
            use_discriminator: false,
            codebook_reseed: false,
            cfg_scale: 1.5,
            class_dropout_prob: 0.1,
            temperature: 1.0,
            top_k: 0,
            ar_depth: 6,
            ar_width: 512,
            ar_heads: 0,
            dropout: 0.0,
            batch_size: 16,
            learning_rate: 1e-4,
            ar_learning_rate: 1e-4,
            weight_decay: 0.0,
            grad_clip: 1.0,
            num_classes: 4,
            synthetic_size: 512,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Desk profile: every property test and smoke training run finishes in
    /// seconds. 32px images, f=8, 4 queries, 64-entry books, depth 2, k=2.
    pub fn desk() -> Self {
        Self {
            image_size: 32,
            downsample_factor: 8,
            num_queries: 4,
            selection_k: 2,
            codebook_size: 64,
            transformer_depth: 2,
            embed_dim: 64,
            enc_channels: vec![32, 48, 64],
            ar_depth: 3,
            ar_width: 128,
            batch_size: 16,
            learning_rate: 2e-3,
            ar_learning_rate: 1e-3,
            ..Self::default()
        }
    }

    /// Side length of the patch grid, image_size / f.
    pub fn grid_side(&self) -> usize {
        self.image_size / self.downsample_factor
    }

    /// Number of patch positions G.
    pub fn grid_len(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Total token sequence length M + G.
    pub fn seq_len(&self) -> usize {
        self.num_queries + self.grid_len()
    }

    /// Attention heads for a given width: width/64 clamped to >= 1.
    pub fn heads_for(width: usize) -> usize {
        (width / 64).max(1)
    }

    pub fn ar_heads(&self) -> usize {
        if self.ar_heads > 0 {
            self.ar_heads
        } else {
            Self::heads_for(self.ar_width)
        }
    }

    /// Null-class index reserved for classifier-free guidance.
    pub fn null_class(&self) -> u32 {
        self.num_classes as u32
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let canonical = match key {
            "f" => "downsample_factor",
            "M" => "num_queries",
            "N" => "codebook_size",
            "k" => "selection_k",
            other => other,
        };
        macro_rules! parse {
            ($ty:ty) => {
                value.trim().parse::<$ty>().map_err(|_| {
                    HitaError::config(format!("key `{key}`: cannot parse `{value}`"))
                })?
            };
        }
        match canonical {
            "image_size" => self.image_size = parse!(usize),
            "downsample_factor" => self.downsample_factor = parse!(usize),
            "num_queries" => self.num_queries = parse!(usize),
            "selection_k" => self.selection_k = parse!(usize),
            "patch_code_dim" => self.patch_code_dim = parse!(usize),
            "holistic_code_dim" => self.holistic_code_dim = parse!(usize),
            "codebook_size" => self.codebook_size = parse!(usize),
            "transformer_depth" => self.transformer_depth = parse!(usize),
            "embed_dim" => self.embed_dim = parse!(usize),
            "enc_channels" => {
                let widths: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|v| v.trim().parse::<usize>()).collect();
                self.enc_channels = widths.map_err(|_| {
                    HitaError::config(format!("key `enc_channels`: cannot parse `{value}`"))
                })?;
            }
            "semantic_provider" => self.semantic_provider = value.trim().to_string(),
            "perceptual_provider" => self.perceptual_provider = value.trim().to_string(),
            "fusion_variant" => self.fusion_variant = FusionVariant::parse(value.trim())?,
            "alpha" => self.alpha = parse!(f64),
            "lambda" => self.lambda = parse!(f64),
            "beta" => self.beta = parse!(f64),
            "lambda_g" => self.lambda_g = parse!(f64),
            "use_discriminator" => self.use_discriminator = parse!(bool),
            "codebook_reseed" => self.codebook_reseed = parse!(bool),
            "cfg_scale" => self.cfg_scale = parse!(f64),
            "class_dropout_prob" => self.class_dropout_prob = parse!(f64),
            "temperature" => self.temperature = parse!(f64),
            "top_k" => self.top_k = parse!(usize),
            "ar_depth" => self.ar_depth = parse!(usize),
            "ar_width" => self.ar_width = parse!(usize),
            "ar_heads" => self.ar_heads = parse!(usize),
            "dropout" => self.dropout = parse!(f64),
            "batch_size" => self.batch_size = parse!(usize),
            "learning_rate" => self.learning_rate = parse!(f64),
            "ar_learning_rate" => self.ar_learning_rate = parse!(f64),
            "weight_decay" => self.weight_decay = parse!(f64),
            "grad_clip" => self.grad_clip = parse!(f64),
            "num_classes" => self.num_classes = parse!(usize),
            "synthetic_size" => self.synthetic_size = parse!(usize),
            "seed" => self.seed = parse!(u64),
            other => {
                return Err(HitaError::config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse from flat key-value text, starting from the default profile.
    pub fn from_str_overrides(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HitaError::config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            self.set_key(key.trim(), value)?;
        }
        Ok(())
    }

    /// `--set key=value` style overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                HitaError::config(format!("override `{item}`: expected key=value"))
            })?;
            self.set_key(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                Err(HitaError::validation(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        }
        positive("image_size", self.image_size)?;
        positive("downsample_factor", self.downsample_factor)?;
        positive("patch_code_dim", self.patch_code_dim)?;
        positive("holistic_code_dim", self.holistic_code_dim)?;
        positive("codebook_size", self.codebook_size)?;
        positive("transformer_depth", self.transformer_depth)?;
        positive("embed_dim", self.embed_dim)?;
        positive("ar_depth", self.ar_depth)?;
        positive("ar_width", self.ar_width)?;
        positive("batch_size", self.batch_size)?;
        positive("num_classes", self.num_classes)?;
        if self.image_size % self.downsample_factor != 0 {
            return Err(HitaError::validation(
                "image_size not divisible by f".to_string(),
            ));
        }
        if !self.downsample_factor.is_power_of_two() {
            return Err(HitaError::validation(
                "downsample_factor must be a power of two (stride-2 conv stages)".to_string(),
            ));
        }
        let stages = self.downsample_factor.trailing_zeros() as usize;
        if self.enc_channels.len() != stages {
            return Err(HitaError::validation(format!(
                "enc_channels must list {stages} widths (log2 of downsample_factor), got {}",
                self.enc_channels.len()
            )));
        }
        if self.grid_len() < self.selection_k {
            return Err(HitaError::validation(format!(
                "selection_k ({}) exceeds patch grid size G ({})",
                self.selection_k,
                self.grid_len()
            )));
        }
        if self.selection_k > self.num_queries {
            return Err(HitaError::validation(format!(
                "selection_k ({}) exceeds num_queries ({})",
                self.selection_k, self.num_queries
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("lambda_g", self.lambda_g),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(HitaError::validation(format!(
                    "{name} must be a non-negative real, got {v}"
                )));
            }
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 1.0) {
            return Err(HitaError::validation(format!(
                "cfg_scale must be >= 1, got {}",
                self.cfg_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.class_dropout_prob) {
            return Err(HitaError::validation(format!(
                "class_dropout_prob must lie in [0,1], got {}",
                self.class_dropout_prob
            )));
        }
        if self.ar_width % self.ar_heads() != 0 {
            return Err(HitaError::validation(format!(
                "ar_width ({}) not divisible by head count ({})",
                self.ar_width,
                self.ar_heads()
            )));
        }
        if (self.ar_width / self.ar_heads()) % 4 != 0 {
            return Err(HitaError::validation(
                "AR head dimension must be divisible by 4 for 2D rotary embeddings".to_string(),
            ));
        }
        Ok(())
    }

    /// Canonical `key = value` listing of the structural fields. Runtime-only
    /// knobs (seed, batch size, learning rates, sampling settings) are
    /// excluded so checkpoints stay loadable across runs that only vary them.
    pub fn canonical_structural(&self) -> String {
        let mut map = BTreeMap::new();
        let chans = self
            .enc_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        map.insert("image_size", self.image_size.to_string());
        map.insert("downsample_factor", self.downsample_factor.to_string());
        map.insert("num_queries", self.num_queries.to_string());
        map.insert("selection_k", self.selection_k.to_string());
        map.insert("patch_code_dim", self.patch_code_dim.to_string());
        map.insert("holistic_code_dim", self.holistic_code_dim.to_string());
        map.insert("codebook_size", self.codebook_size.to_string());
        map.insert("transformer_depth", self.transformer_depth.to_string());
        map.insert("embed_dim", self.embed_dim.to_string());
        map.insert("enc_channels", chans);
        map.insert("semantic_provider", self.semantic_provider.clone());
        map.insert("fusion_variant", self.fusion_variant.as_str().to_string());
        map.insert("ar_depth", self.ar_depth.to_string());
        map.insert("ar_width", self.ar_width.to_string());
        map.insert("ar_heads", self.ar_heads().to_string());
        map.insert("num_classes", self.num_classes.to_string());
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Full fingerprint of the structural configuration, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_structural().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// 32-bit fingerprint used by the binary token dump headers.
    pub fn fingerprint32(&self) -> u32 {
        let digest = Sha256::digest(self.canonical_structural().as_bytes());
        u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
    }
}

/// Load and validate a configuration file, overriding the default profile.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        HitaError::config(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    PipelineConfig::from_str_overrides(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_mirrors_reference_setup() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.downsample_factor, 16);
        assert_eq!(cfg.num_queries, 128);
        assert_eq!(cfg.codebook_size, 16384);
        assert_eq!(cfg.patch_code_dim, 8);
        assert_eq!(cfg.holistic_code_dim, 12);
        assert_eq!(cfg.transformer_depth, 3);
        assert_eq!(cfg.selection_k, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn desk_profile_grid() {
        let cfg = PipelineConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_len(), 16);
        assert_eq!(cfg.seq_len(), 20);
    }

    #[test]
    fn parse_grid_from_text() {
        let cfg = PipelineConfig::from_str_overrides(
            "image_size = 32\nf = 8\nenc_channels = 32,48,64\nM = 4\nk = 2\nN = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.grid_len(), 16);
    }

    #[test]
    fn paper_profile_sequence_length() {
        let cfg = PipelineConfig::from_str_overrides("image_size = 336\nf = 16\nM = 128\n").unwrap();
        assert_eq!(cfg.seq_len(), 569);
        assert_eq!(cfg.grid_len(), 441);
    }

    #[test]
    fn divisibility_error_names_constraint() {
        let err = PipelineConfig::from_str_overrides("image_size = 30\nf = 8\nenc_channels=8,8,8\n")
            .unwrap_err();
        assert!(err.to_string().contains("image_size not divisible by f"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::from_str_overrides("bogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn selection_k_bounds() {
        let err =
            PipelineConfig::from_str_overrides("image_size=32\nf=8\nenc_channels=8,8,8\nM=4\nk=5\nN=64\n")
                .unwrap_err();
        assert!(err.to_string().contains("selection_k"));
    }

    #[test]
    fn fingerprint_ignores_runtime_keys() {
        let a = PipelineConfig::desk();
        let mut b = PipelineConfig::desk();
        b.seed = 999;
        b.batch_size = 4;
        b.learning_rate = 1e-5;
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = PipelineConfig::desk();
        c.num_queries = 8;
        c.selection_k = 2;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn queries_off_baseline_requires_k_zero() {
        let mut cfg = PipelineConfig::desk();
        cfg.num_queries = 0;
        assert!(cfg.validate().is_err());
        cfg.selection_k = 0;
        cfg.validate().unwrap();
    }
}
