//! Hybrid CTC/attention model mapping all-layer features of distorted speech
//! to the clean deduplicated unit sequence.

mod config;
pub mod ctc;
mod decode;
mod model;
mod train;

pub use config::{DenoiserConfig, EncoderKind, Variant};
pub use decode::{beam_search_decode, decode_detailed, BeamOptions, Decoded};
pub use model::{DenoiserModel, EncoderOutput, Memory};
pub use train::{
    evaluate, finetune_encoder, train_denoiser, EpochRecord, FinetuneOptions, TrainOptions, TrainingExample, TrainingLog,
};

/// Named ablation settings over a base configuration.
pub fn ablation_variant(name: &str, base: &DenoiserConfig) -> crate::Result<(DenoiserConfig, f64)> {
    let mut c = base.clone();
    let decode_ctc_weight;
    match name {
        "encoder_only" => {
            c.variant = Variant::External;
            c.decoder_layers = 0;
            c.ctc_weight = 1.0;
            decode_ctc_weight = 1.0;
        }
        "decoder_only" => {
            c.variant = Variant::External;
            c.encoder_kind = EncoderKind::None;
            c.encoder_layers = 0;
            c.ctc_weight = 0.0;
            decode_ctc_weight = 0.0;
        }
        "encoder_decoder" => {
            c.variant = Variant::External;
            decode_ctc_weight = 0.3;
        }
        "adapter_encoder_decoder" => {
            c.variant = Variant::Adapter;
            decode_ctc_weight = 0.3;
        }
        other => return Err(crate::Error::UnknownVariant(other.to_string())),
    }
    c.validate()?;
    Ok((c, decode_ctc_weight))
}

pub const ABLATION_VARIANTS: [&str; 4] = ["encoder_only", "decoder_only", "encoder_decoder", "adapter_encoder_decoder"];
