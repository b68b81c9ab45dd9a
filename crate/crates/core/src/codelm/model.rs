use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::CharVocab;
use crate::codeprep::Lang;
use crate::error::{dim_err, Error, Result};
use crate::nncore::loss::{log_softmax, softmax_cross_entropy};
use crate::nncore::{Activation, Checkpoint, DenseParams, LstmParams, Parameterized, Real, Tensor};

pub const CHECKPOINT_KIND: &str = "codelm";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharLmDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// Character-level LSTM language model for one programming language.
#[derive(Clone, Debug, PartialEq)]
pub struct CharLmModel<T> {
    pub lang: Lang,
    pub max_chars: usize,
    pub embedding: Tensor<T>,
    pub lstm: LstmParams<T>,
    pub proj: DenseParams<T>,
}

/// Result of running the model over one stream segment.
#[derive(Clone, Debug)]
pub struct SegmentLoss<T> {
    /// Summed cross-entropy (nats) over the predicted positions.
    pub loss: f64,
    pub predictions: usize,
    /// Recurrent state after the segment's last input.
    pub state: (Vec<T>, Vec<T>),
}

impl<T: Real> CharLmModel<T> {
    pub fn new<R: Rng + ?Sized>(lang: Lang, dims: CharLmDims, max_chars: usize, rng: &mut R) -> Self {
        let bound = (3.0 / dims.embed as f64).sqrt().min(0.5);
        CharLmModel {
            lang,
            max_chars,
            embedding: Tensor::uniform(&[dims.vocab, dims.embed], bound, rng),
            lstm: LstmParams::new(dims.embed, dims.hidden, rng),
            proj: DenseParams::new(dims.hidden, dims.vocab, Activation::Identity, rng),
        }
    }

    pub fn dims(&self) -> CharLmDims {
        CharLmDims {
            vocab: self.embedding.rows(),
            embed: self.embedding.cols(),
            hidden: self.lstm.hidden_dim,
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let v = self.embedding.rows();
        match ids.iter().find(|&&i| i >= v) {
            Some(bad) => dim_err(format!("character id {bad} outside vocabulary of {v}")),
            None => Ok(()),
        }
    }

    fn inputs(&self, ids: &[usize]) -> Vec<&[T]> {
        ids.iter().map(|&i| self.embedding.row(i)).collect()
    }

    /// Teacher-forced loss on `segment` (predicting `segment[t+1]` from
    /// `segment[..=t]`), starting from `state`. Gradients are accumulated into
    /// `grads` with weight `scale` per prediction.
    pub fn segment_loss_grad(
        &self,
        segment: &[usize],
        state: Option<(&[T], &[T])>,
        scale: T,
        grads: &mut CharLmModel<T>,
    ) -> Result<SegmentLoss<T>> {
        self.check_ids(segment)?;
        if segment.len() < 2 {
            return Err(Error::EmptyInput("segment needs at least two characters".into()));
        }
        let inputs = &segment[..segment.len() - 1];
        let trace = self.lstm.forward(&self.inputs(inputs), state)?;
        let v = self.embedding.rows();
        let mut d_hs = Vec::with_capacity(inputs.len());
        let mut d_logits = vec![T::zero(); v];
        let mut loss = 0.0;
        for (t, step) in trace.steps.iter().enumerate() {
            let logits = self.proj.forward(&step.h)?;
            let l = softmax_cross_entropy(&logits, segment[t + 1], scale, &mut d_logits);
            loss += l.to_f64().unwrap_or(f64::NAN);
            d_hs.push(self.proj.backward(&step.h, &logits, &d_logits, &mut grads.proj));
        }
        let back = self.lstm.backward(&trace, &d_hs, &mut grads.lstm)?;
        for (&id, dx) in inputs.iter().zip(&back.dxs) {
            for (g, &d) in grads.embedding.row_mut(id).iter_mut().zip(dx) {
                *g += d;
            }
        }
        let state = (trace.last_hidden().to_vec(), trace.last_cell().to_vec());
        Ok(SegmentLoss {
            loss,
            predictions: inputs.len(),
            state,
        })
    }

    /// Summed next-character cross-entropy over a whole stream.
    pub fn stream_loss(&self, ids: &[usize]) -> Result<f64> {
        Ok(self
            .next_log_probs(ids)?
            .iter()
            .zip(&ids[1..])
            .map(|(lp, &next)| -lp[next].to_f64().unwrap_or(f64::NAN))
            .sum())
    }

    /// Log-distribution over the next character after each prefix
    /// `ids[..=t]`, for `t` in `0..ids.len()-1`.
    pub fn next_log_probs(&self, ids: &[usize]) -> Result<Vec<Vec<T>>> {
        self.check_ids(ids)?;
        if ids.len() < 2 {
            return Ok(Vec::new());
        }
        let trace = self.lstm.forward(&self.inputs(&ids[..ids.len() - 1]), None)?;
        trace
            .steps
            .iter()
            .map(|s| Ok(log_softmax(&self.proj.forward(&s.h)?)))
            .collect()
    }

    /// Final hidden state after running `ids` from the zero state.
    pub fn final_hidden(&self, ids: &[usize]) -> Result<Vec<T>> {
        self.check_ids(ids)?;
        if ids.is_empty() {
            return Err(Error::EmptyInput("no characters to encode".into()));
        }
        let trace = self.lstm.forward(&self.inputs(ids), None)?;
        Ok(trace.last_hidden().to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let d = self.dims();
        let meta = serde_json::json!({
            "lang": self.lang,
            "vocab": d.vocab,
            "embed": d.embed,
            "hidden": d.hidden,
            "max_chars": self.max_chars,
        });
        Checkpoint::from_params(CHECKPOINT_KIND, meta, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("codelm manifest lacks {k}")))
        };
        let lang: Lang = ckpt
            .meta
            .get("lang")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Checkpoint("codelm manifest lacks lang".into()))?;
        let dims = CharLmDims {
            vocab: field("vocab")?,
            embed: field("embed")?,
            hidden: field("hidden")?,
        };
        let mut model = CharLmModel::zeros(lang, dims, field("max_chars")?);
        ckpt.fill_params(&mut model)?;
        Ok(model)
    }

    pub fn zeros(lang: Lang, dims: CharLmDims, max_chars: usize) -> Self {
        CharLmModel {
            lang,
            max_chars,
            embedding: Tensor::zeros(&[dims.vocab, dims.embed]),
            lstm: LstmParams::zeros(dims.embed, dims.hidden),
            proj: DenseParams {
                weight: Tensor::zeros(&[dims.vocab, dims.hidden]),
                bias: Tensor::zeros(&[dims.vocab]),
                activation: Activation::Identity,
            },
        }
    }

    pub fn uses_char_vocab(&self) -> bool {
        self.embedding.rows() == CharVocab::SIZE
    }
}

impl<T: Real> Parameterized<T> for CharLmModel<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        out.extend(self.lstm.params().into_iter().map(|(n, t)| (format!("lstm.{n}"), t)));
        out.extend(self.proj.params().into_iter().map(|(n, t)| (format!("proj.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        out.extend(self.lstm.params_mut().into_iter().map(|(n, t)| (format!("lstm.{n}"), t)));
        out.extend(self.proj.params_mut().into_iter().map(|(n, t)| (format!("proj.{n}"), t)));
        out
    }
}
