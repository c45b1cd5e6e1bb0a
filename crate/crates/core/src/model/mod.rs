//! Two-stage self-attention cardinality estimator.
//!
//! Join tokens attend together with the special token `s` (joining stage);
//! the updated join tokens and `s` then attend together with filter and
//! table tokens (filtering stage). The final `s` plus the query-level
//! scalars feed an MLP that regresses the natural log of the cardinality.

mod checkpoint;
mod train;

use rand::distributions::{Distribution as _, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::featurizer::{
    featurize, FeatureBundle, FILTER_TOKEN_DIM, JOIN_TOKEN_DIM, QUERY_FEAT_DIM, TABLE_TOKEN_DIM,
};
use crate::query::QuerySpec;
use crate::stats::{StatsStore, BINS};
use crate::tensor::{Matrix, ParamId, ParamStore, Tape, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{
    corpus_fingerprint, examples_from, finetune, mse_loss, train, train_corpora, Corpus, Example,
    History, Hyper,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Length of every distribution vector in the inputs.
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks_per_stage: usize,
    /// Hidden width of the position-wise feed-forward layer.
    pub ffn_hidden: usize,
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    /// Fixed multiplier on the head output, so ln-cardinalities of 10-20
    /// are reachable without large final-layer weights.
    #[serde(default = "unit_scale")]
    pub output_scale: f64,
    pub seed: u64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: BINS,
            embed_dim: 256,
            heads: 8,
            blocks_per_stage: 1,
            ffn_hidden: 256,
            mlp_hidden: vec![256, 256],
            dropout: 0.1,
            output_scale: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Reduced widths for single-core experiments and tests.
    pub fn small() -> Self {
        ModelConfig {
            embed_dim: 64,
            heads: 8,
            ffn_hidden: 128,
            mlp_hidden: vec![128, 128],
            ..ModelConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim != BINS {
            return Err(Error::Config(format!(
                "feature_dim must be {BINS}, got {}",
                self.feature_dim
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("dimensions must be at least 1".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Config("blocks_per_stage must be at least 1".into()));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("mlp_hidden widths must be at least 1".into()));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::Config(format!(
                "output_scale {} must be positive",
                self.output_scale
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Number of learned scalars implied by the dimensions.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let f = self.ffn_hidden;
        let embed =
            (JOIN_TOKEN_DIM + 1) * d + (FILTER_TOKEN_DIM + 1) * d + (TABLE_TOKEN_DIM + 1) * d + d;
        // per head Q, K, V of d x d/H each sum to 3 d^2 over heads
        let block = 3 * d * d + d * d + 2 * d + (d + 1) * f + (f + 1) * d + 2 * d;
        let mut head = 0;
        let mut prev = d + QUERY_FEAT_DIM;
        for &h in &self.mlp_hidden {
            head += (prev + 1) * h;
            prev = h;
        }
        head += prev + 1;
        embed + 2 * self.blocks_per_stage * block + head
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    q: Vec<ParamId>,
    k: Vec<ParamId>,
    v: Vec<ParamId>,
    y: ParamId,
    ln1: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct Layout {
    join: Linear,
    filter: Linear,
    table: Linear,
    s0: ParamId,
    joining: Vec<Block>,
    filtering: Vec<Block>,
    head: Vec<Linear>,
}

/// How a freshly declared parameter is filled.
#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

struct Builder<'a> {
    store: ParamStore,
    fill: &'a mut dyn FnMut(Init, usize, usize) -> Matrix,
}

impl Builder<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let m = (self.fill)(init, rows, cols);
        self.store.add(name, m)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.w"), fan_in, fan_out, Init::Xavier),
            b: self.add(format!("{name}.b"), 1, fan_out, Init::Zeros),
        }
    }

    fn block(&mut self, name: &str, c: &ModelConfig) -> Block {
        let (d, dk) = (c.embed_dim, c.head_dim());
        let mut per_head = |kind: &str| -> Vec<ParamId> {
            (0..c.heads)
                .map(|i| self.add(format!("{name}.w{kind}{i}"), d, dk, Init::Xavier))
                .collect()
        };
        let q = per_head("q");
        let k = per_head("k");
        let v = per_head("v");
        let y = self.add(format!("{name}.wy"), d, d, Init::Xavier);
        let ln1 = (
            self.add(format!("{name}.ln1.g"), 1, d, Init::Ones),
            self.add(format!("{name}.ln1.b"), 1, d, Init::Zeros),
        );
        let ff1 = self.linear(&format!("{name}.ff1"), d, c.ffn_hidden);
        let ff2 = self.linear(&format!("{name}.ff2"), c.ffn_hidden, d);
        let ln2 = (
            self.add(format!("{name}.ln2.g"), 1, d, Init::Ones),
            self.add(format!("{name}.ln2.b"), 1, d, Init::Zeros),
        );
        Block {
            q,
            k,
            v,
            y,
            ln1,
            ff1,
            ff2,
            ln2,
        }
    }
}

fn build(
    config: &ModelConfig,
    fill: &mut dyn FnMut(Init, usize, usize) -> Matrix,
) -> (ParamStore, Layout) {
    let d = config.embed_dim;
    let mut b = Builder {
        store: ParamStore::default(),
        fill,
    };
    let join = b.linear("embed.join", JOIN_TOKEN_DIM, d);
    let filter = b.linear("embed.filter", FILTER_TOKEN_DIM, d);
    let table = b.linear("embed.table", TABLE_TOKEN_DIM, d);
    let s0 = b.add("embed.s0".into(), 1, d, Init::Xavier);
    let joining = (0..config.blocks_per_stage)
        .map(|i| b.block(&format!("join{i}"), config))
        .collect();
    let filtering = (0..config.blocks_per_stage)
        .map(|i| b.block(&format!("filter{i}"), config))
        .collect();
    let mut head = Vec::new();
    let mut prev = d + QUERY_FEAT_DIM;
    for (i, &h) in config.mlp_hidden.iter().enumerate() {
        head.push(b.linear(&format!("head{i}"), prev, h));
        prev = h;
    }
    head.push(b.linear(&format!("head{}", config.mlp_hidden.len()), prev, 1));
    (
        b.store,
        Layout {
            join,
            filter,
            table,
            s0,
            joining,
            filtering,
            head,
        },
    )
}

/// Provenance recorded with trained parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub corpus_fingerprint: String,
    pub param_count: usize,
    /// Size of the 32-bit parameter payload of a checkpoint.
    pub payload_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub meta: TrainingMeta,
    layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Joining,
    Filtering,
}

impl Stage {
    /// Prefix of the parameter names of block `index` in this stage.
    pub fn block_prefix(self, index: usize) -> String {
        match self {
            Stage::Joining => format!("join{index}"),
            Stage::Filtering => format!("filter{index}"),
        }
    }
}

/// One estimate in both scales, plus the traditional baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub log_card: f64,
    pub card: f64,
    pub baseline: f64,
}

impl Model {
    /// Seeded Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |init: Init, rows: usize, cols: usize| match init {
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a);
                Matrix::from_vec(
                    rows,
                    cols,
                    (0..rows * cols).map(|_| u.sample(&mut rng)).collect(),
                )
            }
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::from_vec(rows, cols, vec![1.0; rows * cols]),
        };
        let (params, layout) = build(&config, &mut fill);
        Ok(Model::assemble(config, params, layout))
    }

    fn assemble(config: ModelConfig, params: ParamStore, layout: Layout) -> Model {
        let param_count = params.num_scalars();
        Model {
            config,
            params,
            meta: TrainingMeta {
                param_count,
                payload_bytes: 4 * param_count,
                ..TrainingMeta::default()
            },
            layout,
        }
    }

    /// Zero-filled parameters with this config's layout.
    fn skeleton(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut fill = |_: Init, rows: usize, cols: usize| Matrix::zeros(rows, cols);
        let (params, layout) = build(&config, &mut fill);
        Ok(Model::assemble(config, params, layout))
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Copy with every parameter rounded to 32-bit precision.
    pub fn rounded_to_f32(&self) -> Model {
        let mut m = self.clone();
        for p in &mut m.params.params {
            p.value.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        m
    }

    fn embed(
        &self,
        t: &mut Tape<'_>,
        lin: &Linear,
        tokens: &[Vec<f64>],
        dim: usize,
    ) -> Result<Option<Var>> {
        if tokens.is_empty() {
            return Ok(None);
        }
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for tok in tokens {
            if tok.len() != dim {
                return Err(Error::Shape {
                    op: "embed",
                    left: (1, tok.len()),
                    right: (1, dim),
                });
            }
            data.extend_from_slice(tok);
        }
        let x = t.input(Matrix::from_vec(tokens.len(), dim, data));
        let w = t.param(lin.w);
        let b = t.param(lin.b);
        let xw = t.matmul(x, w)?;
        Ok(Some(t.add_row(xw, b)?))
    }

    fn attention_block<R: Rng>(
        &self,
        t: &mut Tape<'_>,
        x: Var,
        blk: &Block,
        rng: &mut R,
    ) -> Result<Var> {
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(blk.q.len());
        for i in 0..blk.q.len() {
            let (wq, wk, wv) = (t.param(blk.q[i]), t.param(blk.k[i]), t.param(blk.v[i]));
            let q = t.matmul(x, wq)?;
            let k = t.matmul(x, wk)?;
            let v = t.matmul(x, wv)?;
            let kt = t.transpose(k);
            let logits = t.matmul(q, kt)?;
            let logits = t.scale(logits, scale);
            let a = t.row_softmax(logits);
            heads.push(t.matmul(a, v)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            t.concat_cols(&heads)?
        };
        let wy = t.param(blk.y);
        let y = t.matmul(cat, wy)?;
        let y = t.dropout(y, self.config.dropout, rng);
        let r = t.add(x, y)?;
        let r = self.affine_norm(t, r, blk.ln1)?;
        let h = self.linear(t, r, &blk.ff1)?;
        let h = t.relu(h);
        let f = self.linear(t, h, &blk.ff2)?;
        let o = t.add(r, f)?;
        self.affine_norm(t, o, blk.ln2)
    }

    /// Eval-mode output of one attention block applied to the rows of `x`.
    pub fn apply_block(&self, stage: Stage, index: usize, x: &Matrix) -> Result<Matrix> {
        let blocks = match stage {
            Stage::Joining => &self.layout.joining,
            Stage::Filtering => &self.layout.filtering,
        };
        let blk = blocks
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("no block {index} in {stage:?} stage")))?;
        let mut t = Tape::new(&self.params, false);
        let xv = t.input(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.attention_block(&mut t, xv, blk, &mut rng)?;
        Ok(t.value(out).clone())
    }

    fn affine_norm(&self, t: &mut Tape<'_>, x: Var, (g, b): (ParamId, ParamId)) -> Result<Var> {
        let n = t.layer_norm(x);
        let g = t.param(g);
        let b = t.param(b);
        let n = t.mul_row(n, g)?;
        t.add_row(n, b)
    }

    fn linear(&self, t: &mut Tape<'_>, x: Var, lin: &Linear) -> Result<Var> {
        let w = t.param(lin.w);
        let b = t.param(lin.b);
        let xw = t.matmul(x, w)?;
        t.add_row(xw, b)
    }

    /// Unclamped log-cardinality as a 1×1 tape value. Dropout is active
    /// when the tape is in training mode.
    pub fn forward<R: Rng>(
        &self,
        t: &mut Tape<'_>,
        bundle: &FeatureBundle,
        rng: &mut R,
    ) -> Result<Var> {
        let l = &self.layout;
        let s = t.param(l.s0);
        let h = self.embed(t, &l.join, &bundle.join_tokens, JOIN_TOKEN_DIM)?;
        let d = self.embed(t, &l.filter, &bundle.filter_tokens, FILTER_TOKEN_DIM)?;
        let tt = self.embed(t, &l.table, &bundle.table_tokens, TABLE_TOKEN_DIM)?;

        // joining stage over {s} and the join tokens; s stays in row 0
        let mut x = match h {
            Some(h) => t.concat_rows(&[s, h])?,
            None => s,
        };
        for blk in &l.joining {
            x = self.attention_block(t, x, blk, rng)?;
        }

        // filtering stage over {s', h'} plus filter and table tokens
        let mut parts = vec![x];
        parts.extend(d);
        parts.extend(tt);
        let mut u = if parts.len() == 1 {
            x
        } else {
            t.concat_rows(&parts)?
        };
        for blk in &l.filtering {
            u = self.attention_block(t, u, blk, rng)?;
        }
        let s2 = t.slice_rows(u, 0, 1)?;

        let qf = t.input(Matrix::row_vector(bundle.query_feats.to_vec()));
        let mut z = t.concat_cols(&[s2, qf])?;
        let last = l.head.len() - 1;
        for (i, lin) in l.head.iter().enumerate() {
            z = self.linear(t, z, lin)?;
            if i < last {
                z = t.relu(z);
                z = t.dropout(z, self.config.dropout, rng);
            }
        }
        if self.config.output_scale != 1.0 {
            z = t.scale(z, self.config.output_scale);
        }
        Ok(z)
    }

    /// Eval-mode prediction of ln(card), clamped to at least 0.
    pub fn predict_log_card(&self, bundle: &FeatureBundle) -> Result<f64> {
        let mut t = Tape::new(&self.params, false);
        // no dropout in eval mode, so the stream is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward(&mut t, bundle, &mut rng)?;
        Ok(t.value(y).scalar().max(0.0))
    }

    pub fn estimate(
        &self,
        q: &QuerySpec,
        catalog: &Catalog,
        stats: &StatsStore,
    ) -> Result<Estimate> {
        let bundle = featurize(q, catalog, stats)?;
        let log_card = self.predict_log_card(&bundle)?;
        Ok(Estimate {
            log_card,
            card: log_card.exp(),
            baseline: bundle.baseline,
        })
    }
}
