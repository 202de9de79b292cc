//! Description encoding and the CNN-RNN text encoder.

pub mod alphabet;
pub mod encoder;

pub use alphabet::{build_alphabet, encode_chars, Alphabet, EncodedText, SEQ_LEN};
pub use encoder::{
    embed, embed_class_texts, text_backward, text_forward, text_forward_cached, TextEmbedding,
    TextEncoderConfig, TextEncoderParams, EMBED_DIM,
};
