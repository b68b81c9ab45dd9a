//! Per-language character-level LSTM language model over canonical code.
//! Its final hidden state serves as a snippet embedding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codeprep::{CodeSnippet, Lang};
use crate::error::{Error, Result};
use crate::nncore::{clip_grad_norm, Optimizer, OptimizerKind, Parameterized, Real};

mod embeddings;
mod model;
mod vocab;

pub use embeddings::{read_embeddings, write_embeddings, EmbeddingTable};
pub use model::{CharLmDims, CharLmModel, SegmentLoss, CHECKPOINT_KIND};
pub use vocab::CharVocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharLmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Truncated-BPTT segment length, in characters.
    pub chunk: usize,
    pub epochs: usize,
    pub lr: f64,
    pub max_chars: usize,
    pub clip_norm: f64,
}

impl Default for CharLmConfig {
    fn default() -> Self {
        CharLmConfig {
            embed_dim: 32,
            hidden_dim: 128,
            chunk: 256,
            epochs: 10,
            lr: 1e-3,
            max_chars: 2048,
            clip_norm: 5.0,
        }
    }
}

impl CharLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.chunk == 0 || self.max_chars == 0 {
            return Err(Error::Config(
                "codelm embed_dim, hidden_dim, chunk and max_chars must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("codelm lr must be >= 0 and clip_norm > 0".into()));
        }
        Ok(())
    }
}

/// A trained model and its per-epoch mean training cross-entropy (nats/char).
#[derive(Clone, Debug)]
pub struct TrainedCharLm {
    pub model: CharLmModel<f32>,
    pub epoch_losses: Vec<f64>,
}

/// Trains a language model on canonical snippet texts. Each text becomes a
/// `<bos> text <eos>` stream cut into `chunk`-length segments; the recurrent
/// state carries across segments of one stream and resets between streams.
pub fn train_char_lm(
    corpus: &[String],
    lang: Lang,
    config: &CharLmConfig,
    seed: u64,
) -> Result<TrainedCharLm> {
    config.validate()?;
    let vocab = CharVocab;
    let streams: Vec<Vec<usize>> = corpus
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| vocab.stream(t))
        .collect();
    if streams.is_empty() {
        return Err(Error::EmptyInput("language-model corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = CharLmDims {
        vocab: vocab.len(),
        embed: config.embed_dim,
        hidden: config.hidden_dim,
    };
    let mut model = CharLmModel::<f32>::new(lang, dims, config.max_chars, &mut rng);
    let mut grads = model.zeros_like();
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.lr);
    let mut order: Vec<usize> = (0..streams.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for &s in &order {
            let stream = &streams[s];
            let mut state: Option<(Vec<f32>, Vec<f32>)> = None;
            let mut start = 0;
            // segments overlap by one character: the last target of one is
            // the first input of the next
            while start + 1 < stream.len() {
                let end = (start + config.chunk + 1).min(stream.len());
                let segment = &stream[start..end];
                grads.zero();
                let scale = 1.0 / (segment.len() - 1) as f32;
                let out = model.segment_loss_grad(
                    segment,
                    state.as_ref().map(|(h, c)| (h.as_slice(), c.as_slice())),
                    scale,
                    &mut grads,
                )?;
                clip_grad_norm(&mut grads, config.clip_norm as f32);
                opt.step(&mut model, &grads)?;
                total += out.loss;
                count += out.predictions;
                state = Some(out.state);
                start = end - 1;
            }
        }
        let mean = total / count as f64;
        if !mean.is_finite() || !model.all_finite() {
            return Err(Error::Input(format!(
                "language-model training diverged in epoch {}",
                epoch + 1
            )));
        }
        log::info!("codelm epoch={} loss={mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok(TrainedCharLm {
        model,
        epoch_losses,
    })
}

/// Anything that assigns next-character distributions to a stream.
pub trait CharPredictor {
    fn vocab_size(&self) -> usize;

    /// Row `t` is the log-distribution of `ids[t + 1]` given `ids[..=t]`.
    fn next_log_probs(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Real> CharPredictor for CharLmModel<T> {
    fn vocab_size(&self) -> usize {
        self.dims().vocab
    }

    fn next_log_probs(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(CharLmModel::next_log_probs(self, ids)?
            .into_iter()
            .map(|row| row.into_iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
            .collect())
    }
}

/// `exp` of the mean next-character cross-entropy over the corpus'
/// `<bos> text <eos>` streams.
pub fn perplexity<P: CharPredictor>(model: &P, corpus: &[String]) -> Result<f64> {
    let streams: Vec<Vec<usize>> = corpus.iter().map(|t| CharVocab.stream(t)).collect();
    perplexity_of_streams(model, &streams)
}

pub fn perplexity_of_streams<P: CharPredictor>(model: &P, streams: &[Vec<usize>]) -> Result<f64> {
    if streams.is_empty() {
        return Err(Error::EmptyInput("perplexity corpus is empty".into()));
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for ids in streams {
        let rows = model.next_log_probs(ids)?;
        for (row, &next) in rows.iter().zip(&ids[1..]) {
            nll -= row[next];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("perplexity corpus has no predictions".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Embedding of a question's code; `absent` marks questions without code.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeEmbedding {
    pub vector: Vec<f32>,
    pub absent: bool,
}

impl<T: Real> CharLmModel<T> {
    /// Character stream for one or more canonical texts: their characters
    /// joined by `<eos> <bos>`, cut to the last `max_chars` ids, wrapped in
    /// `<bos> ... <eos>`. `None` when every text is empty.
    pub fn embedding_stream<S: AsRef<str>>(&self, texts: &[S]) -> Option<Vec<usize>> {
        let vocab = CharVocab;
        let mut body = Vec::new();
        for t in texts.iter().map(AsRef::as_ref).filter(|t| !t.is_empty()) {
            if !body.is_empty() {
                body.extend([CharVocab::EOS, CharVocab::BOS]);
            }
            body.extend(vocab.encode(t));
        }
        if body.is_empty() {
            return None;
        }
        let tail = &body[body.len().saturating_sub(self.max_chars)..];
        let mut ids = Vec::with_capacity(tail.len() + 2);
        ids.push(CharVocab::BOS);
        ids.extend_from_slice(tail);
        ids.push(CharVocab::EOS);
        Some(ids)
    }

    /// Final hidden state over the canonical texts, or a zero vector
    /// flagged absent when there is no code.
    pub fn embed_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<CodeEmbedding> {
        match self.embedding_stream(texts) {
            None => Ok(CodeEmbedding {
                vector: vec![0.0; self.lstm.hidden_dim],
                absent: true,
            }),
            Some(ids) => Ok(CodeEmbedding {
                vector: self
                    .final_hidden(&ids)?
                    .into_iter()
                    .map(|x| x.to_f32().unwrap_or(f32::NAN))
                    .collect(),
                absent: false,
            }),
        }
    }
}

pub fn embed_snippet<T: Real>(model: &CharLmModel<T>, snippet: &CodeSnippet) -> Result<CodeEmbedding> {
    model.embed_texts(&[snippet.canonical.as_str()])
}
