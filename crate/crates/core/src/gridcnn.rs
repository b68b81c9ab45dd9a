//! Feature-grid pair classifier: the cosine similarities between every
//! token of one question and every token of the other form an image that a
//! small CNN and an MLP classify.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codeprep::{build_vocab, TokenVocab};
use crate::error::{dim_err, Error, Result};
use crate::ingest::Question;
use crate::nncore::{
    bce_logit_grad, bce_loss, conv2d, conv2d_backward, cosine_sim, cosine_sim_backward,
    crop_to_multiple, maxpool2d_argmax, maxpool2d_backward, uncrop, Activation, Checkpoint, Mlp, OptimizerKind,
    Parameterized, Real, Tensor,
};
use crate::pairgen::QuestionPair;
use crate::siamese::{build_text_vocab, train_question_ids, word_tokens, TextVocab};
use crate::train::{train_pairs, PairModel, TrainConfig, TrainOutcome};

pub const CHECKPOINT_KIND: &str = "gridcnn";

/// One convolution (valid padding, followed by ReLU) and the max-pool after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Grid side `L`.
    pub side: usize,
    /// Token budgets for title, body and code.
    pub budgets: [usize; 3],
    pub embed_dim: usize,
    pub conv: Vec<ConvSpec>,
    pub mlp_hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            side: 64,
            budgets: [12, 36, 16],
            embed_dim: 64,
            conv: vec![
                ConvSpec {
                    channels: 8,
                    kernel: 3,
                    stride: 1,
                    pool: 2,
                },
                ConvSpec {
                    channels: 16,
                    kernel: 3,
                    stride: 1,
                    pool: 2,
                },
            ],
            mlp_hidden: vec![64],
            batch_size: 32,
            epochs: 10,
            lr: 1e-3,
            patience: 3,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl GridConfig {
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
        if self.side == 0 || self.embed_dim == 0 || self.mlp_hidden.contains(&0) {
            return Err(Error::Config("gridcnn side, embed_dim and mlp sizes must be positive".into()));
        }
        if self.budgets.iter().sum::<usize>() > self.side {
            return Err(Error::Config(format!(
                "gridcnn budgets {:?} exceed the grid side {}",
                self.budgets, self.side
            )));
        }
        conv_output_shape(self.side, &self.conv).map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate()
    }
}

/// Shape `[C, H, W]` after the conv stack applied to a `2 × side × side` grid.
pub fn conv_output_shape(side: usize, conv: &[ConvSpec]) -> Result<[usize; 3]> {
    let mut shape = [2, side, side];
    for (i, c) in conv.iter().enumerate() {
        if c.channels == 0 || c.kernel == 0 || c.stride == 0 || c.pool == 0 {
            return dim_err(format!("conv layer {i}: sizes must be positive"));
        }
        if shape[1] < c.kernel {
            return dim_err(format!("conv layer {i}: kernel {} larger than {}", c.kernel, shape[1]));
        }
        let out = (shape[1] - c.kernel) / c.stride + 1;
        let pooled = out / c.pool;
        if pooled == 0 {
            return dim_err(format!("conv layer {i}: {out} too small for pool {}", c.pool));
        }
        shape = [c.channels, pooled, pooled];
    }
    Ok(shape)
}

/// Splits `side` tokens between title, body and code: each segment first
/// gets up to its budget, then leftover capacity goes to segments with
/// remaining tokens in title, body, code order.
pub fn allocate_budget(lens: [usize; 3], budgets: [usize; 3], side: usize) -> [usize; 3] {
    let mut take = [0; 3];
    for k in 0..3 {
        take[k] = lens[k].min(budgets[k]);
    }
    let mut left = side.saturating_sub(take.iter().sum());
    for k in 0..3 {
        let extra = left.min(lens[k] - take[k]);
        take[k] += extra;
        left -= extra;
    }
    take
}

/// Which embedding table a grid token reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GridToken {
    Word(usize),
    Code(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Title,
    Body,
    Code,
}

/// A question as a budgeted token sequence (title ++ body ++ code).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<GridToken>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn build_token_sequence(
    q: &Question,
    words: &TextVocab,
    code_tokens: &TokenVocab,
    budgets: [usize; 3],
    side: usize,
) -> TokenSequence {
    let title: Vec<GridToken> = word_tokens(&q.title)
        .iter()
        .map(|t| GridToken::Word(words.id(t)))
        .collect();
    let body: Vec<GridToken> = word_tokens(&q.body_text)
        .iter()
        .map(|t| GridToken::Word(words.id(t)))
        .collect();
    let code: Vec<GridToken> = q
        .code_snippets
        .iter()
        .flat_map(|s| s.canonical_tokens())
        .map(|t| GridToken::Code(code_tokens.id(t)))
        .collect();
    let take = allocate_budget([title.len(), body.len(), code.len()], budgets, side);
    let mut seq = TokenSequence {
        tokens: Vec::with_capacity(side),
        segments: Vec::with_capacity(side),
    };
    for ((part, seg), n) in [(title, Segment::Title), (body, Segment::Body), (code, Segment::Code)]
        .into_iter()
        .zip(take)
    {
        seq.tokens.extend(&part[..n]);
        seq.segments.extend(std::iter::repeat(seg).take(n));
    }
    if seq.is_empty() {
        seq.tokens.push(GridToken::Word(TokenVocab::UNK_ID));
        seq.segments.push(Segment::Title);
    }
    seq
}

/// Cosine-similarity grid, zero-padded to `side × side`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid<T> {
    pub side: usize,
    pub la: usize,
    pub lb: usize,
    pub values: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Real> FeatureGrid<T> {
    pub fn value(&self, i: usize, j: usize) -> T {
        self.values.data()[i * self.side + j]
    }

    /// The `[2, side, side]` network input: similarities and mask.
    pub fn as_input(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(2 * self.side * self.side);
        data.extend_from_slice(self.values.data());
        data.extend_from_slice(self.mask.data());
        Tensor::new(&[2, self.side, self.side], data).expect("grid shape")
    }
}

pub fn build_feature_grid<T: Real, V: AsRef<[T]>>(
    seq_a: &[V],
    seq_b: &[V],
    side: usize,
) -> Result<FeatureGrid<T>> {
    let (la, lb) = (seq_a.len(), seq_b.len());
    if la == 0 || lb == 0 {
        return Err(Error::EmptyInput("feature grid needs non-empty sequences".into()));
    }
    if la > side || lb > side {
        return dim_err(format!("sequences of {la} and {lb} tokens exceed grid side {side}"));
    }
    let d = seq_a[0].as_ref().len();
    if seq_a.iter().chain(seq_b).any(|v| v.as_ref().len() != d) {
        return dim_err("token embeddings differ in dimension");
    }
    let mut values = Tensor::zeros(&[side, side]);
    let mut mask = Tensor::zeros(&[side, side]);
    for (i, a) in seq_a.iter().enumerate() {
        let vrow = &mut values.row_mut(i)[..lb];
        for (cell, b) in vrow.iter_mut().zip(seq_b) {
            *cell = cosine_sim(a.as_ref(), b.as_ref())?;
        }
        mask.row_mut(i)[..lb].fill(T::one());
    }
    Ok(FeatureGrid {
        side,
        la,
        lb,
        values,
        mask,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCnnModel<T> {
    pub side: usize,
    pub word_emb: Tensor<T>,
    pub code_emb: Tensor<T>,
    pub convs: Vec<ConvLayer<T>>,
    pub mlp: Mlp<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub side: usize,
    pub word_vocab: usize,
    pub code_vocab: usize,
    pub embed_dim: usize,
}

/// Per-layer forward state.
struct ConvCache<T> {
    input: Tensor<T>,
    activated: Tensor<T>,
    cropped_shape: Vec<usize>,
    argmax: Vec<usize>,
}

struct GridForward<T> {
    grid: FeatureGrid<T>,
    layers: Vec<ConvCache<T>>,
    flat: Vec<T>,
    outs: Vec<Vec<T>>,
}

impl<T: Real> GridCnnModel<T> {
    pub fn new<R: Rng + ?Sized>(
        dims: GridDims,
        conv: &[ConvSpec],
        mlp_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let out = conv_output_shape(dims.side, conv)?;
        let bound = (3.0 / dims.embed_dim as f64).sqrt().min(0.5);
        let mut in_ch = 2;
        let mut convs = Vec::with_capacity(conv.len());
        for &spec in conv {
            let k = spec.kernel;
            let fan_in = in_ch * k * k;
            let fan_out = spec.channels * k * k;
            convs.push(ConvLayer {
                spec,
                kernels: Tensor::glorot(&[spec.channels, in_ch, k, k], fan_in, fan_out, rng),
                bias: Tensor::zeros(&[spec.channels]),
            });
            in_ch = spec.channels;
        }
        Ok(GridCnnModel {
            side: dims.side,
            word_emb: Tensor::uniform(&[dims.word_vocab, dims.embed_dim], bound, rng),
            code_emb: Tensor::uniform(&[dims.code_vocab, dims.embed_dim], bound, rng),
            convs,
            mlp: Mlp::binary_head(out.iter().product(), mlp_hidden, Activation::Relu, rng),
        })
    }

    pub fn dims(&self) -> GridDims {
        GridDims {
            side: self.side,
            word_vocab: self.word_emb.rows(),
            code_vocab: self.code_emb.rows(),
            embed_dim: self.word_emb.cols(),
        }
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        self.convs.iter().map(|c| c.spec).collect()
    }

    pub fn mlp_hidden(&self) -> Vec<usize> {
        let n = self.mlp.layers.len();
        self.mlp.layers[..n - 1].iter().map(|l| l.output_dim()).collect()
    }

    fn token_vec(&self, t: GridToken) -> Result<&[T]> {
        let (table, id) = match t {
            GridToken::Word(i) => (&self.word_emb, i),
            GridToken::Code(i) => (&self.code_emb, i),
        };
        if id >= table.rows() {
            return dim_err(format!("token id {id} outside table of {}", table.rows()));
        }
        Ok(table.row(id))
    }

    /// Embedding vectors of a token sequence.
    pub fn embed_sequence(&self, seq: &TokenSequence) -> Result<Vec<&[T]>> {
        seq.tokens.iter().map(|&t| self.token_vec(t)).collect()
    }

    pub fn grid(&self, a: &TokenSequence, b: &TokenSequence) -> Result<FeatureGrid<T>> {
        build_feature_grid(&self.embed_sequence(a)?, &self.embed_sequence(b)?, self.side)
    }

    fn forward_cached(&self, grid: FeatureGrid<T>) -> Result<GridForward<T>> {
        if grid.side != self.side {
            return dim_err(format!("grid side {} for a model of side {}", grid.side, self.side));
        }
        let mut x = grid.as_input();
        let mut layers = Vec::with_capacity(self.convs.len());
        for layer in &self.convs {
            let mut z = conv2d(&x, &layer.kernels, &layer.bias, layer.spec.stride)?;
            z.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
            let cropped = crop_to_multiple(&z, layer.spec.pool)?;
            let (pooled, argmax) = maxpool2d_argmax(&cropped, layer.spec.pool)?;
            layers.push(ConvCache {
                input: x,
                activated: z,
                cropped_shape: cropped.shape().to_vec(),
                argmax,
            });
            x = pooled;
        }
        let flat = x.into_data();
        let outs = self.mlp.forward(&flat)?;
        Ok(GridForward {
            grid,
            layers,
            flat,
            outs,
        })
    }

    /// Duplicate probability for a prebuilt grid.
    pub fn forward_grid(&self, grid: &FeatureGrid<T>) -> Result<T> {
        let f = self.forward_cached(grid.clone())?;
        Ok(f.outs.last().expect("mlp output")[0])
    }

    pub fn forward_pair(&self, a: &TokenSequence, b: &TokenSequence) -> Result<T> {
        let f = self.forward_cached(self.grid(a, b)?)?;
        Ok(f.outs.last().expect("mlp output")[0])
    }

    /// Gradient of the loss with respect to the similarity channel.
    fn backward_to_grid(&self, f: &GridForward<T>, d_logit: T, grads: &mut GridCnnModel<T>) -> Result<Tensor<T>> {
        let d_flat = self.mlp.backward_from_logit(&f.flat, &f.outs, d_logit, &mut grads.mlp);
        let last_shape: Vec<usize> = match f.layers.last() {
            Some(c) => {
                let s = &c.cropped_shape;
                let p = self.convs[f.layers.len() - 1].spec.pool;
                vec![s[0], s[1] / p, s[2] / p]
            }
            None => vec![2, self.side, self.side],
        };
        let mut d = Tensor::new(&last_shape, d_flat)?;
        for (l, cache) in f.layers.iter().enumerate().rev() {
            let layer = &self.convs[l];
            let d_crop = maxpool2d_backward(&cache.cropped_shape, &cache.argmax, &d)?;
            let mut d_z = uncrop(&d_crop, cache.activated.shape())?;
            for (g, &a) in d_z.data_mut().iter_mut().zip(cache.activated.data()) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
            let gl = &mut grads.convs[l];
            d = conv2d_backward(
                &cache.input,
                &layer.kernels,
                layer.spec.stride,
                &d_z,
                &mut gl.kernels,
                &mut gl.bias,
            )?;
        }
        Ok(d)
    }

    fn scatter(&self, grads: &mut GridCnnModel<T>, t: GridToken, d: &[T]) {
        let row = match t {
            GridToken::Word(i) => grads.word_emb.row_mut(i),
            GridToken::Code(i) => grads.code_emb.row_mut(i),
        };
        for (g, &v) in row.iter_mut().zip(d) {
            *g += v;
        }
    }

    pub fn pair_loss_grad(
        &self,
        a: &TokenSequence,
        b: &TokenSequence,
        label: T,
        scale: T,
        grads: &mut GridCnnModel<T>,
    ) -> Result<T> {
        let f = self.forward_cached(self.grid(a, b)?)?;
        let p = f.outs.last().expect("mlp output")[0];
        let d_logit = bce_logit_grad(p, label) * scale;
        let d_input = self.backward_to_grid(&f, d_logit, grads)?;
        let (va, vb) = (self.embed_sequence(a)?, self.embed_sequence(b)?);
        let dim = self.word_emb.cols();
        let mut da = vec![vec![T::zero(); dim]; va.len()];
        let mut db = vec![vec![T::zero(); dim]; vb.len()];
        // channel 0 holds the similarities; the mask channel is constant
        let dv = &d_input.data()[..self.side * self.side];
        for i in 0..f.grid.la {
            for j in 0..f.grid.lb {
                let g = dv[i * self.side + j];
                if g != T::zero() {
                    let (left, right) = (&mut da[i], &mut db[j]);
                    cosine_sim_backward(va[i], vb[j], g, left, right);
                }
            }
        }
        for (t, d) in a.tokens.iter().zip(&da) {
            self.scatter(grads, *t, d);
        }
        for (t, d) in b.tokens.iter().zip(&db) {
            self.scatter(grads, *t, d);
        }
        Ok(bce_loss(p, label))
    }
}

impl<T: Real> Parameterized<T> for GridCnnModel<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("word_emb".to_string(), &self.word_emb),
            ("code_emb".to_string(), &self.code_emb),
        ];
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), &c.kernels));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        out.extend(self.mlp.params().into_iter().map(|(n, t)| (format!("mlp.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("word_emb".to_string(), &mut self.word_emb),
            ("code_emb".to_string(), &mut self.code_emb),
        ];
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{i}.kernels"), &mut c.kernels));
            out.push((format!("conv{i}.bias"), &mut c.bias));
        }
        out.extend(self.mlp.params_mut().into_iter().map(|(n, t)| (format!("mlp.{n}"), t)));
        out
    }
}

impl PairModel for GridCnnModel<f32> {
    type Input = TokenSequence;

    fn prob(&self, a: &TokenSequence, b: &TokenSequence) -> Result<f64> {
        Ok(self.forward_pair(a, b)? as f64)
    }

    fn loss_grad(
        &self,
        a: &TokenSequence,
        b: &TokenSequence,
        label: f32,
        scale: f32,
        grads: &mut Self,
    ) -> Result<f64> {
        Ok(self.pair_loss_grad(a, b, label, scale, grads)? as f64)
    }
}

/// Code-token vocabulary over canonical tokens of train-split questions.
pub fn build_code_token_vocab(
    questions: &[Question],
    pairs: &[QuestionPair],
    min_freq: usize,
) -> Result<TokenVocab> {
    let ids = train_question_ids(pairs);
    let docs: Vec<Vec<&str>> = questions
        .iter()
        .filter(|q| ids.contains(&q.id))
        .flat_map(|q| &q.code_snippets)
        .map(|s| s.canonical_tokens().collect())
        .collect();
    build_vocab(&docs, min_freq)
}

#[derive(Clone, Debug)]
pub struct GridArtifact {
    pub model: GridCnnModel<f32>,
    pub words: TextVocab,
    pub code_tokens: TokenVocab,
    pub config: GridConfig,
    pub threshold: f64,
}

impl GridArtifact {
    pub fn prepare(&self, q: &Question) -> TokenSequence {
        build_token_sequence(q, &self.words, &self.code_tokens, self.config.budgets, self.config.side)
    }

    pub fn prepare_all(&self, questions: &[Question]) -> HashMap<u64, TokenSequence> {
        questions.iter().map(|q| (q.id, self.prepare(q))).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "dims": self.model.dims(),
            "config": self.config,
            "words": self.words,
            "code_tokens": self.code_tokens,
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
                .ok_or_else(|| Error::Checkpoint(format!("gridcnn manifest lacks {k}")))
        };
        let dims: GridDims = serde_json::from_value(get("dims")?)?;
        let config: GridConfig = serde_json::from_value(get("config")?)?;
        let words = TokenVocab::from_json(&get("words")?)?;
        let code_tokens = TokenVocab::from_json(&get("code_tokens")?)?;
        let threshold = get("threshold")?
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("gridcnn threshold is not a number".into()))?;
        if words.len() != dims.word_vocab || code_tokens.len() != dims.code_vocab {
            return Err(Error::Checkpoint("vocabulary sizes disagree with dims".into()));
        }
        // initialization values are overwritten by the stored tensors
        let mut model = GridCnnModel::new(
            dims,
            &config.conv,
            &config.mlp_hidden,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        ckpt.fill_params(&mut model)?;
        Ok(GridArtifact {
            model,
            words,
            code_tokens,
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

pub fn train_gridcnn(
    questions: &[Question],
    pairs: &[QuestionPair],
    config: &GridConfig,
    min_freq: usize,
    seed: u64,
) -> Result<(GridArtifact, TrainOutcome<()>)> {
    config.validate()?;
    let words = build_text_vocab(questions, pairs, min_freq)?;
    let code_tokens = build_code_token_vocab(questions, pairs, min_freq)?;
    let dims = GridDims {
        side: config.side,
        word_vocab: words.len(),
        code_vocab: code_tokens.len(),
        embed_dim: config.embed_dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = GridCnnModel::new(dims, &config.conv, &config.mlp_hidden, &mut rng)?;
    let mut artifact = GridArtifact {
        model,
        words,
        code_tokens,
        config: config.clone(),
        threshold: 0.5,
    };
    let inputs = artifact.prepare_all(questions);
    let out = train_pairs(artifact.model.clone(), &inputs, pairs, &config.train_config(), rng.gen())?;
    artifact.model = out.model;
    artifact.threshold = out.threshold;
    let summary = TrainOutcome {
        model: (),
        history: out.history,
        best_epoch: out.best_epoch,
        threshold: out.threshold,
    };
    Ok((artifact, summary))
}
