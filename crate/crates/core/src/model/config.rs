use crate::config::{parse_bool, parse_value, Profile};
use crate::error::{Error, Result};

/// Network sizes, ablation switches and scaling-mask targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub filter: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub pred_layers: usize,
    /// Shared vocabulary size; 0 until a vocabulary is attached.
    pub vocab: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub interactive: bool,
    pub predictor: bool,
    pub copynet: bool,
    pub joint_training: bool,
    pub mask_encoder: bool,
    pub mask_decoder: bool,
    pub mask_copynet: bool,
    /// Baseline decoder attends to the src memory before the mt memory.
    pub src_first: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl ModelConfig {
    pub fn profile(p: Profile) -> Self {
        let (d, heads, filter, n, np, dropout) = match p {
            Profile::Paper => (512, 8, 2048, 6, 3, 0.1),
            Profile::Test => (32, 2, 64, 2, 2, 0.0),
        };
        ModelConfig {
            d,
            heads,
            filter,
            enc_layers: n,
            dec_layers: n,
            pred_layers: np,
            vocab: 0,
            max_len: 128,
            dropout,
            interactive: true,
            predictor: true,
            copynet: true,
            joint_training: true,
            mask_encoder: true,
            mask_decoder: true,
            mask_copynet: true,
            src_first: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model.d = {} is not divisible by model.heads = {}",
                self.d, self.heads
            )));
        }
        if self.predictor && self.pred_layers == 0 {
            return Err(Error::config("the predictor needs model.pred_layers >= 1"));
        }
        if self.joint_training && !self.predictor {
            return Err(Error::config("joint training needs the predictor"));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::config("encoder and decoder need at least one layer"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout must lie in [0, 1)"));
        }
        if self.max_len == 0 {
            return Err(Error::config("model.max_len must be positive"));
        }
        Ok(())
    }

    /// Sets one field by name; returns false for unknown names.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "d" => self.d = parse_value(key, v)?,
            "heads" => self.heads = parse_value(key, v)?,
            "filter" => self.filter = parse_value(key, v)?,
            "enc_layers" => self.enc_layers = parse_value(key, v)?,
            "dec_layers" => self.dec_layers = parse_value(key, v)?,
            "pred_layers" => self.pred_layers = parse_value(key, v)?,
            "vocab" => self.vocab = parse_value(key, v)?,
            "max_len" => self.max_len = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "interactive" => self.interactive = parse_bool(key, v)?,
            "predictor" => self.predictor = parse_bool(key, v)?,
            "copynet" => self.copynet = parse_bool(key, v)?,
            "joint_training" => self.joint_training = parse_bool(key, v)?,
            "mask_encoder" => self.mask_encoder = parse_bool(key, v)?,
            "mask_decoder" => self.mask_decoder = parse_bool(key, v)?,
            "mask_copynet" => self.mask_copynet = parse_bool(key, v)?,
            "src_first" => self.src_first = parse_bool(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d", self.d.to_string()),
            ("heads", self.heads.to_string()),
            ("filter", self.filter.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("pred_layers", self.pred_layers.to_string()),
            ("vocab", self.vocab.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dropout", self.dropout.to_string()),
            ("interactive", self.interactive.to_string()),
            ("predictor", self.predictor.to_string()),
            ("copynet", self.copynet.to_string()),
            ("joint_training", self.joint_training.to_string()),
            ("mask_encoder", self.mask_encoder.to_string()),
            ("mask_decoder", self.mask_decoder.to_string()),
            ("mask_copynet", self.mask_copynet.to_string()),
            ("src_first", self.src_first.to_string()),
        ]
    }

    pub fn switches(&self) -> Switches {
        Switches {
            interactive: self.interactive,
            predictor: self.predictor,
            copynet: self.copynet,
            joint_training: self.joint_training,
        }
    }

    pub fn with_switches(mut self, s: Switches) -> Self {
        self.interactive = s.interactive;
        self.predictor = s.predictor;
        self.copynet = s.copynet;
        self.joint_training = s.joint_training;
        self
    }
}

/// The four ablation toggles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Switches {
    pub interactive: bool,
    pub predictor: bool,
    pub copynet: bool,
    pub joint_training: bool,
}

const fn sw(interactive: bool, predictor: bool, copynet: bool, joint_training: bool) -> Switches {
    Switches {
        interactive,
        predictor,
        copynet,
        joint_training,
    }
}

/// The seven ablation rows, in table order.
pub const ABLATION_GRID: [Switches; 7] = [
    sw(true, false, false, false),
    sw(false, false, true, false),
    sw(false, true, true, true),
    sw(true, false, true, false),
    sw(true, true, false, false),
    sw(true, true, true, false),
    sw(true, true, true, true),
];

impl Switches {
    /// Position in [`ABLATION_GRID`], or a config error for off-grid combinations.
    pub fn grid_row(&self) -> Result<usize> {
        ABLATION_GRID
            .iter()
            .position(|g| g == self)
            .ok_or_else(|| Error::config(format!("switch combination {self:?} is not an ablation row")))
    }

    fn bits(&self) -> [bool; 4] {
        [self.interactive, self.predictor, self.copynet, self.joint_training]
    }

    /// Number of toggles that differ.
    pub fn distance(&self, other: &Switches) -> usize {
        self.bits()
            .iter()
            .zip(other.bits())
            .filter(|(a, b)| **a != *b)
            .count()
    }
}
