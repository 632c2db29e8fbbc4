use serde::{Deserialize, Serialize};

use crate::corpus::NUM_ROLES;
use crate::text::NUM_SPECIALS;
use crate::{Error, Result};

/// Architecture and objective hyperparameters.
///
/// Defaults are a desk-scale model; the published configuration is 12+12
/// layers, `hidden_size = 1024`, `latent_size = 64`, `ngram = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub latent_size: usize,
    /// Number of predicting streams (future tokens per step).
    pub ngram: usize,
    pub max_turns: usize,
    pub num_roles: usize,
    /// Size of the token position table, shared by encoder and decoder.
    pub max_positions: usize,
    pub use_turn_ape: bool,
    pub use_role_ape: bool,
    pub use_token_rpe: bool,
    pub use_turn_rpe: bool,
    /// Buckets per sign and relative axis.
    pub rpe_num_buckets: usize,
    pub rpe_max_distance: usize,
    /// Per-dimension free-bits floor.
    pub free_bits: f64,
    pub use_latent: bool,
    pub layer_norm_eps: f64,
    /// Standard deviation of embedding initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_encoder_layers: 2,
            num_decoder_layers: 2,
            hidden_size: 32,
            ff_size: 64,
            num_heads: 4,
            vocab_size: 64,
            latent_size: 8,
            ngram: 2,
            max_turns: 8,
            num_roles: NUM_ROLES,
            max_positions: 160,
            use_turn_ape: true,
            use_role_ape: true,
            use_token_rpe: true,
            use_turn_rpe: true,
            rpe_num_buckets: 16,
            rpe_max_distance: 64,
            free_bits: 0.5,
            use_latent: true,
            layer_norm_eps: 1e-5,
            init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn uses_rpe(&self) -> bool {
        self.use_token_rpe || self.use_turn_rpe
    }

    /// Buckets along the token axis (1 when the axis is disabled).
    pub fn token_bucket_count(&self) -> usize {
        if self.use_token_rpe {
            2 * self.rpe_num_buckets
        } else {
            1
        }
    }

    pub fn turn_bucket_count(&self) -> usize {
        if self.use_turn_rpe {
            2 * self.rpe_num_buckets
        } else {
            1
        }
    }

    /// Rows of each relative-bias table.
    pub fn relative_table_size(&self) -> usize {
        self.token_bucket_count() * self.turn_bucket_count()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_size == 0 || self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.ff_size == 0 {
            return fail("ff_size must be positive".into());
        }
        if self.use_latent && self.latent_size == 0 {
            return fail("latent_size must be at least 1 when use_latent is set".into());
        }
        if self.ngram == 0 {
            return fail("ngram must be at least 1".into());
        }
        if self.vocab_size <= NUM_SPECIALS {
            return fail(format!(
                "vocab_size {} leaves no room beyond the {NUM_SPECIALS} special tokens",
                self.vocab_size
            ));
        }
        if self.max_turns == 0 || self.num_roles < NUM_ROLES {
            return fail(format!(
                "need max_turns >= 1 and num_roles >= {NUM_ROLES}, got {} and {}",
                self.max_turns, self.num_roles
            ));
        }
        if self.max_positions <= self.ngram {
            return fail("max_positions must exceed ngram".into());
        }
        if self.uses_rpe()
            && (self.rpe_num_buckets < 2 || self.rpe_max_distance <= self.rpe_num_buckets / 2)
        {
            return fail(format!(
                "relative buckets need rpe_num_buckets >= 2 and rpe_max_distance > rpe_num_buckets / 2, got {} and {}",
                self.rpe_num_buckets, self.rpe_max_distance
            ));
        }
        if !(self.free_bits >= 0.0 && self.free_bits.is_finite()) {
            return fail(format!(
                "free_bits must be a finite non-negative number, got {}",
                self.free_bits
            ));
        }
        if !(self.layer_norm_eps > 0.0) || !(self.init_std > 0.0) {
            return fail("layer_norm_eps and init_std must be positive".into());
        }
        Ok(())
    }

    /// Longest decoder input (including `[BOS]`) the position table supports.
    pub fn max_decoder_len(&self) -> usize {
        self.max_positions - self.ngram
    }
}
