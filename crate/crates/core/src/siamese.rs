//! Siamese pair classifier: title, body and code of each question are
//! encoded with shared-weight encoders, the six vectors are concatenated
//! and an MLP outputs the duplicate probability.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codelm::EmbeddingTable;
use crate::codeprep::{build_vocab, TokenVocab};
use crate::error::{dim_err, Error, Result};
use crate::ingest::Question;
use crate::nncore::{
    bce_logit_grad, bce_loss, Activation, Checkpoint, DenseParams, LstmParams, LstmTrace, Mlp,
    OptimizerKind, Parameterized, Real, Tensor,
};
use crate::pairgen::{QuestionPair, Split};
use crate::train::{train_pairs, PairModel, TrainConfig, TrainOutcome};

pub const CHECKPOINT_KIND: &str = "siamese";

/// Word vocabulary over question titles and bodies.
pub type TextVocab = TokenVocab;

/// Lowercased maximal runs of alphanumeric characters and underscores;
/// whitespace and punctuation only separate tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Ids of every question that appears in a train-split pair.
pub fn train_question_ids(pairs: &[QuestionPair]) -> BTreeSet<u64> {
    pairs
        .iter()
        .filter(|p| p.split == Some(Split::Train))
        .flat_map(|p| [p.id_a, p.id_b])
        .collect()
}

/// Builds the word vocabulary from titles and bodies of train-split
/// questions only.
pub fn build_text_vocab(
    questions: &[Question],
    pairs: &[QuestionPair],
    min_freq: usize,
) -> Result<TextVocab> {
    let ids = train_question_ids(pairs);
    let docs: Vec<Vec<String>> = questions
        .iter()
        .filter(|q| ids.contains(&q.id))
        .flat_map(|q| [word_tokens(&q.title), word_tokens(&q.body_text)])
        .collect();
    build_vocab(&docs, min_freq)
}

/// Word ids for `text`, cut to `max_tokens`; an empty result becomes a
/// single `<unk>`.
pub fn text_ids(vocab: &TextVocab, text: &str, max_tokens: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = word_tokens(text)
        .iter()
        .take(max_tokens)
        .map(|t| vocab.id(t))
        .collect();
    if ids.is_empty() {
        ids.push(TokenVocab::UNK_ID);
    }
    ids
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiameseConfig {
    pub word_dim: usize,
    pub title_hidden: usize,
    pub body_hidden: usize,
    pub code_out: usize,
    pub mlp_hidden: Vec<usize>,
    pub max_title_tokens: usize,
    pub max_body_tokens: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        SiameseConfig {
            word_dim: 64,
            title_hidden: 64,
            body_hidden: 128,
            code_out: 64,
            mlp_hidden: vec![128, 64],
            max_title_tokens: 64,
            max_body_tokens: 256,
            batch_size: 32,
            epochs: 10,
            lr: 1e-3,
            patience: 3,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl SiameseConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            patience: self.patience,
            clip_norm: self.clip_norm,
            optimizer: self.optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.title_hidden,
            self.body_hidden,
            self.code_out,
            self.max_title_tokens,
            self.max_body_tokens,
        ];
        if dims.contains(&0) || self.mlp_hidden.contains(&0) {
            return Err(Error::Config("siamese dimensions must be positive".into()));
        }
        self.train_config().validate()
    }
}

/// A question prepared for the model: word ids and the code vector with
/// its presence flag appended.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseInput {
    pub title: Vec<usize>,
    pub body: Vec<usize>,
    pub code: Vec<f32>,
}

pub fn prepare_input(
    q: &Question,
    vocab: &TextVocab,
    codes: Option<&EmbeddingTable>,
    config: &SiameseConfig,
) -> SiameseInput {
    let mut code = match codes {
        Some(t) => {
            let e = t.get_or_absent(q.id);
            let mut v = e.vector;
            v.push(if e.absent { 0.0 } else { 1.0 });
            v
        }
        None => vec![0.0],
    };
    // absent code is always the all-zero vector
    if code.last() == Some(&0.0) {
        code.iter_mut().for_each(|x| *x = 0.0);
    }
    SiameseInput {
        title: text_ids(vocab, &q.title, config.max_title_tokens),
        body: text_ids(vocab, &q.body_text, config.max_body_tokens),
        code,
    }
}

pub fn prepare_inputs(
    questions: &[Question],
    vocab: &TextVocab,
    codes: Option<&EmbeddingTable>,
    config: &SiameseConfig,
) -> HashMap<u64, SiameseInput> {
    questions
        .iter()
        .map(|q| (q.id, prepare_input(q, vocab, codes, config)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiameseDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub title_hidden: usize,
    pub body_hidden: usize,
    /// Length of the codelm embedding (0 when no code embeddings are used).
    pub code_dim: usize,
    pub code_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel<T> {
    pub word_emb: Tensor<T>,
    pub title_lstm: LstmParams<T>,
    pub body_lstm: LstmParams<T>,
    pub code_proj: DenseParams<T>,
    pub mlp: Mlp<T>,
}

/// The parameters one side of the pair reads. Both sides get the same
/// references.
#[derive(Clone, Copy, Debug)]
pub struct Branch<'a, T> {
    pub word_emb: &'a Tensor<T>,
    pub title: &'a LstmParams<T>,
    pub body: &'a LstmParams<T>,
    pub code: &'a DenseParams<T>,
}

/// Forward state of one encoded question.
#[derive(Clone, Debug)]
pub struct Encoded<T> {
    title: LstmTrace<T>,
    body: LstmTrace<T>,
    code_in: Vec<T>,
    code_out: Vec<T>,
}

impl<T: Real> Encoded<T> {
    pub fn title(&self) -> &[T] {
        self.title.last_hidden()
    }

    pub fn body(&self) -> &[T] {
        self.body.last_hidden()
    }

    pub fn code(&self) -> &[T] {
        &self.code_out
    }
}

impl<T: Real> SiameseModel<T> {
    pub fn new<R: Rng + ?Sized>(dims: SiameseDims, mlp_hidden: &[usize], rng: &mut R) -> Self {
        let bound = (3.0 / dims.word_dim as f64).sqrt().min(0.5);
        let joint = 2 * (dims.title_hidden + dims.body_hidden + dims.code_out);
        SiameseModel {
            word_emb: Tensor::uniform(&[dims.vocab, dims.word_dim], bound, rng),
            title_lstm: LstmParams::new(dims.word_dim, dims.title_hidden, rng),
            body_lstm: LstmParams::new(dims.word_dim, dims.body_hidden, rng),
            code_proj: DenseParams::new(dims.code_dim + 1, dims.code_out, Activation::Tanh, rng),
            mlp: Mlp::binary_head(joint, mlp_hidden, Activation::Relu, rng),
        }
    }

    pub fn dims(&self) -> SiameseDims {
        SiameseDims {
            vocab: self.word_emb.rows(),
            word_dim: self.word_emb.cols(),
            title_hidden: self.title_lstm.hidden_dim,
            body_hidden: self.body_lstm.hidden_dim,
            code_dim: self.code_proj.input_dim() - 1,
            code_out: self.code_proj.output_dim(),
        }
    }

    pub fn mlp_hidden(&self) -> Vec<usize> {
        let n = self.mlp.layers.len();
        self.mlp.layers[..n - 1].iter().map(|l| l.output_dim()).collect()
    }

    /// Parameters read by pair member `side` (0 or 1).
    pub fn branch(&self, _side: usize) -> Branch<'_, T> {
        Branch {
            word_emb: &self.word_emb,
            title: &self.title_lstm,
            body: &self.body_lstm,
            code: &self.code_proj,
        }
    }

    fn words<'a>(emb: &'a Tensor<T>, ids: &[usize]) -> Result<Vec<&'a [T]>> {
        ids.iter()
            .map(|&i| {
                if i < emb.rows() {
                    Ok(emb.row(i))
                } else {
                    dim_err(format!("word id {i} outside vocabulary of {}", emb.rows()))
                }
            })
            .collect()
    }

    pub fn encode(&self, side: usize, q: &SiameseInput) -> Result<Encoded<T>> {
        let br = self.branch(side);
        let title = br.title.forward(&Self::words(br.word_emb, &q.title)?, None)?;
        let body = br.body.forward(&Self::words(br.word_emb, &q.body)?, None)?;
        if title.is_empty() || body.is_empty() {
            return Err(Error::EmptyInput("question encodes to an empty sequence".into()));
        }
        let code_in: Vec<T> = q.code.iter().map(|&x| T::lit(x as f64)).collect();
        let code_out = br.code.forward(&code_in)?;
        Ok(Encoded {
            title,
            body,
            code_in,
            code_out,
        })
    }

    /// The `(t, b, c)` vectors of one question.
    pub fn encode_question(&self, q: &SiameseInput) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let e = self.encode(0, q)?;
        Ok((e.title().to_vec(), e.body().to_vec(), e.code().to_vec()))
    }

    fn joint(e1: &Encoded<T>, e2: &Encoded<T>) -> Vec<T> {
        [e1.title(), e1.body(), e1.code(), e2.title(), e2.body(), e2.code()].concat()
    }

    /// Probability that the ordered pair `(a, b)` is a duplicate.
    pub fn forward_pair(&self, a: &SiameseInput, b: &SiameseInput) -> Result<T> {
        let (e1, e2) = (self.encode(0, a)?, self.encode(1, b)?);
        let outs = self.mlp.forward(&Self::joint(&e1, &e2))?;
        Ok(outs.last().expect("mlp output")[0])
    }

    fn backward_branch(
        &self,
        q: &SiameseInput,
        e: &Encoded<T>,
        d: &[T],
        grads: &mut SiameseModel<T>,
    ) -> Result<()> {
        let (ht, hb) = (self.title_lstm.hidden_dim, self.body_lstm.hidden_dim);
        let (dt, rest) = d.split_at(ht);
        let (db, dc) = rest.split_at(hb);
        self.code_proj
            .backward(&e.code_in, &e.code_out, dc, &mut grads.code_proj);
        for (lstm, g, trace, ids, dh) in [
            (&self.title_lstm, &mut grads.title_lstm, &e.title, &q.title, dt),
            (&self.body_lstm, &mut grads.body_lstm, &e.body, &q.body, db),
        ] {
            let back = lstm.backward_last(trace, dh, g)?;
            for (&id, dx) in ids.iter().zip(&back.dxs) {
                for (w, &v) in grads.word_emb.row_mut(id).iter_mut().zip(dx) {
                    *w += v;
                }
            }
        }
        Ok(())
    }

    /// BCE loss of the ordered pair; gradients times `scale` are added to
    /// `grads`.
    pub fn pair_loss_grad(
        &self,
        a: &SiameseInput,
        b: &SiameseInput,
        label: T,
        scale: T,
        grads: &mut SiameseModel<T>,
    ) -> Result<T> {
        let (e1, e2) = (self.encode(0, a)?, self.encode(1, b)?);
        let x = Self::joint(&e1, &e2);
        let outs = self.mlp.forward(&x)?;
        let p = outs.last().expect("mlp output")[0];
        let d_logit = bce_logit_grad(p, label) * scale;
        let dx = self.mlp.backward_from_logit(&x, &outs, d_logit, &mut grads.mlp);
        let half = dx.len() / 2;
        self.backward_branch(a, &e1, &dx[..half], grads)?;
        self.backward_branch(b, &e2, &dx[half..], grads)?;
        Ok(bce_loss(p, label))
    }
}

impl<T: Real> Parameterized<T> for SiameseModel<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("word_emb".to_string(), &self.word_emb)];
        out.extend(self.title_lstm.params().into_iter().map(|(n, t)| (format!("title_lstm.{n}"), t)));
        out.extend(self.body_lstm.params().into_iter().map(|(n, t)| (format!("body_lstm.{n}"), t)));
        out.extend(self.code_proj.params().into_iter().map(|(n, t)| (format!("code_proj.{n}"), t)));
        out.extend(self.mlp.params().into_iter().map(|(n, t)| (format!("mlp.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("word_emb".to_string(), &mut self.word_emb)];
        out.extend(self.title_lstm.params_mut().into_iter().map(|(n, t)| (format!("title_lstm.{n}"), t)));
        out.extend(self.body_lstm.params_mut().into_iter().map(|(n, t)| (format!("body_lstm.{n}"), t)));
        out.extend(self.code_proj.params_mut().into_iter().map(|(n, t)| (format!("code_proj.{n}"), t)));
        out.extend(self.mlp.params_mut().into_iter().map(|(n, t)| (format!("mlp.{n}"), t)));
        out
    }
}

impl PairModel for SiameseModel<f32> {
    type Input = SiameseInput;

    fn prob(&self, a: &SiameseInput, b: &SiameseInput) -> Result<f64> {
        Ok(self.forward_pair(a, b)? as f64)
    }

    fn loss_grad(
        &self,
        a: &SiameseInput,
        b: &SiameseInput,
        label: f32,
        scale: f32,
        grads: &mut Self,
    ) -> Result<f64> {
        Ok(self.pair_loss_grad(a, b, label, scale, grads)? as f64)
    }
}

/// A trained classifier with everything needed to score new questions.
#[derive(Clone, Debug)]
pub struct SiameseArtifact {
    pub model: SiameseModel<f32>,
    pub vocab: TextVocab,
    pub config: SiameseConfig,
    pub threshold: f64,
}

impl SiameseArtifact {
    pub fn prepare(&self, q: &Question, codes: Option<&EmbeddingTable>) -> SiameseInput {
        prepare_input(q, &self.vocab, codes, &self.config)
    }

    pub fn code_dim(&self) -> usize {
        self.model.dims().code_dim
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "dims": self.model.dims(),
            "config": self.config,
            "vocab": self.vocab,
            "threshold": self.threshold,
        });
        Checkpoint::from_params(CHECKPOINT_KIND, meta, &self.model)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let get = |k: &str| {
            ckpt.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("siamese manifest lacks {k}")))
        };
        let dims: SiameseDims = serde_json::from_value(get("dims")?)?;
        let config: SiameseConfig = serde_json::from_value(get("config")?)?;
        let vocab = TokenVocab::from_json(&get("vocab")?)?;
        let threshold = get("threshold")?
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("siamese threshold is not a number".into()))?;
        if vocab.len() != dims.vocab {
            return Err(Error::Checkpoint("vocabulary size disagrees with dims".into()));
        }
        // initialization values are overwritten by the stored tensors
        let mut model = SiameseModel::new(dims, &config.mlp_hidden, &mut ChaCha8Rng::seed_from_u64(0));
        ckpt.fill_params(&mut model)?;
        Ok(SiameseArtifact {
            model,
            vocab,
            config,
            threshold,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_checkpoint().save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

/// Builds the vocabulary from the train split, initializes from `seed` and
/// trains with early stopping.
pub fn train_siamese(
    questions: &[Question],
    pairs: &[QuestionPair],
    codes: Option<&EmbeddingTable>,
    config: &SiameseConfig,
    min_freq: usize,
    seed: u64,
) -> Result<(SiameseArtifact, TrainOutcome<()>)> {
    config.validate()?;
    let vocab = build_text_vocab(questions, pairs, min_freq)?;
    let inputs = prepare_inputs(questions, &vocab, codes, config);
    let dims = SiameseDims {
        vocab: vocab.len(),
        word_dim: config.word_dim,
        title_hidden: config.title_hidden,
        body_hidden: config.body_hidden,
        code_dim: codes.map_or(0, |t| t.dim),
        code_out: config.code_out,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SiameseModel::new(dims, &config.mlp_hidden, &mut rng);
    let out = train_pairs(model, &inputs, pairs, &config.train_config(), rng.gen())?;
    let artifact = SiameseArtifact {
        model: out.model,
        vocab,
        config: config.clone(),
        threshold: out.threshold,
    };
    let summary = TrainOutcome {
        model: (),
        history: out.history,
        best_epoch: out.best_epoch,
        threshold: out.threshold,
    };
    Ok((artifact, summary))
}
