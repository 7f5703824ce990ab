//! The post-editing network: copy-score predictor, interactive (or
//! separate) encoders, decoder and copy head.

mod checkpoint;
mod config;
mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{ModelConfig, Switches, ABLATION_GRID};
pub use forward::{copy_mass, Decoded, Encoded, EncodedValues, Forward, ForwardTrace, StepOutput};

use crate::error::{Error, Result};
use crate::nn::{DecoderStack, EmbeddingSet, EncoderStack, Init};
use crate::tensor::{ParamId, ParamStore, Real};

/// Predictor stack and its output weight.
#[derive(Clone, Debug)]
pub struct PredictorNet {
    pub stack: EncoderStack,
    pub w_s: ParamId,
}

#[derive(Clone, Debug)]
pub enum Encoders {
    /// One stack over the concatenated src and mt.
    Interactive(EncoderStack),
    /// Separate src and mt stacks.
    Separate { src: EncoderStack, mt: EncoderStack },
}

/// Copy attention `g` and gate `u` weights.
#[derive(Clone, Debug)]
pub struct CopyHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_h: ParamId,
    pub w_c: ParamId,
    pub bias: ParamId,
}

/// Parameter handles of every component.
#[derive(Clone, Debug)]
pub struct Network {
    pub emb: EmbeddingSet,
    pub predictor: Option<PredictorNet>,
    pub encoders: Encoders,
    pub decoder: DecoderStack,
    pub copy: Option<CopyHead>,
}

/// A configured network together with its parameter values.
#[derive(Clone, Debug)]
pub struct ApeModel<F: Real = f32> {
    pub config: ModelConfig,
    pub net: Network,
    pub params: ParamStore<F>,
}

/// Each component draws from its own stream, so switching one component
/// off leaves the initial weights of the others unchanged.
mod stream {
    pub const EMBEDDING: u64 = 0;
    pub const PREDICTOR: u64 = 1;
    pub const ENCODER: u64 = 2;
    pub const ENCODER_SRC: u64 = 3;
    pub const ENCODER_MT: u64 = 4;
    pub const DECODER: u64 = 5;
    pub const COPY: u64 = 6;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<F: Real> ApeModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab <= crate::data::RESERVED.len() {
            return Err(Error::config("model.vocab must exceed the reserved entries"));
        }
        let c = &config;
        let mut store = ParamStore::new();
        let with = |stream: u64| rng_for(seed, stream);

        let mut rng = with(stream::EMBEDDING);
        let emb = EmbeddingSet::new(&mut Init { store: &mut store, rng: &mut rng }, c.vocab, c.max_len, c.d);

        let predictor = if c.predictor {
            let mut rng = with(stream::PREDICTOR);
            let mut init = Init { store: &mut store, rng: &mut rng };
            let stack = EncoderStack::new(&mut init, "pred", c.pred_layers, c.d, c.heads, c.filter)?;
            let w_s = init.xavier("pred.w_s", c.d, 1);
            Some(PredictorNet { stack, w_s })
        } else {
            None
        };

        let encoders = if c.interactive {
            let mut rng = with(stream::ENCODER);
            let mut init = Init { store: &mut store, rng: &mut rng };
            Encoders::Interactive(EncoderStack::new(&mut init, "enc", c.enc_layers, c.d, c.heads, c.filter)?)
        } else {
            let mut rng = with(stream::ENCODER_SRC);
            let mut init = Init { store: &mut store, rng: &mut rng };
            let src = EncoderStack::new(&mut init, "enc_src", c.enc_layers, c.d, c.heads, c.filter)?;
            let mut rng = with(stream::ENCODER_MT);
            let mut init = Init { store: &mut store, rng: &mut rng };
            let mt = EncoderStack::new(&mut init, "enc_mt", c.enc_layers, c.d, c.heads, c.filter)?;
            Encoders::Separate { src, mt }
        };

        let mut rng = with(stream::DECODER);
        let memories = if c.interactive { 1 } else { 2 };
        let decoder = DecoderStack::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "dec",
            c.dec_layers,
            c.d,
            c.heads,
            c.filter,
            memories,
        )?;

        let copy = if c.copynet {
            let mut rng = with(stream::COPY);
            let mut init = Init { store: &mut store, rng: &mut rng };
            Some(CopyHead {
                w_q: init.xavier("copy.w_q", c.d, c.d),
                w_k: init.xavier("copy.w_k", c.d, c.d),
                w_h: init.xavier("copy.w_h", c.d, 1),
                w_c: init.xavier("copy.w_c", c.d, 1),
                bias: init.constant("copy.bias", &[1], 0.0),
            })
        } else {
            None
        };

        Ok(ApeModel {
            config,
            net: Network {
                emb,
                predictor,
                encoders,
                decoder,
                copy,
            },
            params: store,
        })
    }

    /// Same network in another precision.
    pub fn cast<G: Real>(&self) -> ApeModel<G> {
        ApeModel {
            config: self.config.clone(),
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }
}
