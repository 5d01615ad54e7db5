//! Hashed word tokenizer and a small seeded text encoder producing `(77, d_emb)` conditioning.

use candle_core::{Device, Tensor};

use super::layers::{LayerNorm, Linear};
use super::params::ParamBuilder;
use super::{TextEmbedding, CONTEXT_LENGTH};
use crate::error::Result;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    /// Word tokens dropped to fit the context budget.
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab_size: u32,
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size: vocab_size as u32,
        }
    }

    fn word_id(&self, word: &str) -> u32 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        2 + (h % u64::from(self.vocab_size - 2)) as u32
    }

    /// Lowercased alphanumeric words between BOS and EOS, padded with EOS to the context length.
    pub fn encode(&self, text: &str) -> Tokenized {
        let lowered = text.to_lowercase();
        let words: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let budget = CONTEXT_LENGTH - 2;
        let dropped = words.len().saturating_sub(budget);
        let mut ids = Vec::with_capacity(CONTEXT_LENGTH);
        ids.push(BOS);
        ids.extend(words.iter().take(budget).map(|w| self.word_id(w)));
        ids.resize(CONTEXT_LENGTH, EOS);
        Tokenized { ids, dropped }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TextEncoder {
    token_table: Tensor,
    positions: Tensor,
    mix_in: Linear,
    mix_out: Linear,
    norm: LayerNorm,
}

impl TextEncoder {
    pub fn new(pb: &mut ParamBuilder, vocab: usize, d_emb: usize) -> Result<Self> {
        Ok(Self {
            token_table: pb.normal("text.token_embedding", &[vocab, d_emb], 1.0)?,
            positions: pb.normal("text.position_embedding", &[CONTEXT_LENGTH, d_emb], 0.1)?,
            mix_in: Linear::new(pb, "text.mix_in", d_emb, d_emb)?,
            mix_out: Linear::new(pb, "text.mix_out", d_emb, d_emb)?,
            norm: LayerNorm::new(pb, "text.final_norm", d_emb)?,
        })
    }

    pub fn forward(&self, tokens: &Tokenized, device: &Device) -> Result<TextEmbedding> {
        let ids = Tensor::new(tokens.ids.as_slice(), device)?;
        let h = (self.token_table.embedding(&ids)? + &self.positions)?;
        // Running mean over the sequence so later tokens see earlier ones.
        let n = h.dim(0)?;
        let counts: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let counts = Tensor::from_vec(counts, (n, 1), device)?.to_dtype(h.dtype())?;
        let context = h.cumsum(0)?.broadcast_div(&counts)?;
        let mixed = self
            .mix_out
            .forward(&self.mix_in.forward(&context)?.tanh()?)?;
        let out = self.norm.forward(&(h + mixed)?)?;
        TextEmbedding::new(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_prompt_is_bos_then_padding() {
        let tok = Tokenizer::new(4096);
        let t = tok.encode("");
        assert_eq!(t.ids.len(), 77);
        assert_eq!(t.ids[0], BOS);
        assert!(t.ids[1..].iter().all(|i| *i == EOS));
        assert_eq!(t.dropped, 0);
    }

    #[test]
    fn long_prompt_is_truncated_and_reported() {
        let tok = Tokenizer::new(4096);
        let text = vec!["word"; 100].join(" ");
        let t = tok.encode(&text);
        assert_eq!(t.ids.len(), 77);
        assert_eq!(t.dropped, 25);
        assert_eq!(
            tok.encode("A photo, of CAT").ids,
            tok.encode("a photo of cat").ids
        );
    }
}
