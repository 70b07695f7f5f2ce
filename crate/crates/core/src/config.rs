//! Top-level experiment configuration tying the corpus, both stages and
//! evaluation together.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::synth::MIN_SIDE;
use crate::tokenizer::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub side: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { seed: 7, classes: 8, train: 4096, val: 512, side: 32 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.train == 0 || self.val == 0 {
            return Err(Error::Config("corpus: classes and split sizes must be positive".into()));
        }
        if self.side < MIN_SIDE {
            return Err(Error::Config(format!("corpus: side {} below {}", self.side, MIN_SIDE)));
        }
        if self.train >= 1 << 31 || self.val >= 1 << 31 {
            return Err(Error::Config("corpus: split exceeds its seed range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cfg_scales: Vec<f64>,
    /// Generated images per class for Fréchet distances.
    pub samples_per_class: usize,
    /// Training images held in for guidance-scale selection.
    pub held_in: usize,
    pub shards: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { cfg_scales: vec![1.5, 1.75, 2.0, 2.25], samples_per_class: 32, held_in: 512, shards: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Copies the sequence length, vocabulary and class count the generator
    /// inherits from the tokenizer and corpus. A zero-layer regularizer
    /// means no regularizer.
    pub fn aligned(mut self) -> Self {
        self.tokenizer.side = self.corpus.side;
        self.generator.seq_len = self.tokenizer.tokens_per_image();
        self.generator.vocab = self.tokenizer.quantizer.vocab();
        self.generator.classes = self.corpus.classes;
        if self.tokenizer.crt.layers == 0 {
            self.tokenizer.crt.enabled = false;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.tokenizer.validate()?;
        self.generator.validate()?;
        if self.tokenizer.side != self.corpus.side {
            return Err(Error::Config("tokenizer.side must equal corpus.side".into()));
        }
        if self.generator.seq_len != self.tokenizer.tokens_per_image() {
            return Err(Error::Config("generator.seq_len must equal the tokenizer's tokens per image".into()));
        }
        if self.generator.vocab < self.tokenizer.quantizer.vocab() {
            return Err(Error::Config("generator.vocab is smaller than the codebook".into()));
        }
        if self.generator.classes != self.corpus.classes {
            return Err(Error::Config("generator.classes must equal corpus.classes".into()));
        }
        if self.eval.cfg_scales.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("eval.cfg_scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_aligns_and_validates() {
        let c = ExperimentConfig::default().aligned();
        c.validate().unwrap();
        assert_eq!(c.generator.seq_len, c.tokenizer.tokens_per_image());
        let mut bad = c.clone();
        bad.generator.classes = 3;
        assert!(bad.validate().is_err());
    }
}
