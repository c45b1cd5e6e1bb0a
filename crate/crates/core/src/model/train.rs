use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeatureBundle};
use crate::query::{parse_query, sub_queries, QuerySpec};
use crate::stats::StatsStore;
use crate::tensor::{step_lr, Adam, AdamConfig, Grads, Matrix, Tape};
use crate::workload::{record_seed, WorkloadRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Also train on every labeled connected sub-query of each record.
    #[serde(default)]
    pub subqueries: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            batch: 256,
            lr: 2.85e-5,
            weight_decay: 5e-5,
            step_size: 10,
            gamma: 0.5,
            epochs: 30,
            seed: 0,
            subqueries: true,
        }
    }
}

impl Hyper {
    /// Same settings at half the learning rate.
    pub fn for_finetune(&self) -> Hyper {
        Hyper {
            lr: self.lr * 0.5,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.step_size == 0 {
            return Err(Error::Config(
                "batch and step_size must be at least 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One workload with the catalog and statistics it was drawn from.
#[derive(Clone, Copy)]
pub struct Corpus<'a> {
    pub catalog: &'a Catalog,
    pub stats: &'a StatsStore,
    pub records: &'a [WorkloadRecord],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub bundle: FeatureBundle,
    /// ln of the true cardinality, counted as at least one row.
    pub target: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn examples_from(corpus: Corpus<'_>, subqueries: bool) -> Result<Vec<Example>> {
    let example = |q: &QuerySpec, card: u64| -> Result<Example> {
        Ok(Example {
            bundle: featurize(q, corpus.catalog, corpus.stats)?,
            target: (card.max(1) as f64).ln(),
        })
    };
    let mut out = Vec::with_capacity(corpus.records.len());
    for r in corpus.records {
        let q = parse_query(&r.sql, corpus.catalog)?;
        if !subqueries {
            out.push(example(&q, r.card)?);
            continue;
        }
        for s in sub_queries(&q, corpus.catalog) {
            let key = s.table_key(corpus.catalog);
            let card = r
                .subs
                .get(&key)
                .ok_or_else(|| Error::MissingCardinality(format!("{key} in `{}`", r.sql)))?;
            out.push(example(&s, *card)?);
        }
    }
    Ok(out)
}

/// Mean squared error between predicted and true log-cardinalities.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "mse over {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let k = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p) * (t - p))
        .sum::<f64>()
        / k)
}

/// FNV-1a over the SQL text and cardinality of every record.
pub fn corpus_fingerprint(corpora: &[Corpus<'_>]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for c in corpora {
        feed(c.catalog.name.as_bytes());
        for r in c.records {
            feed(r.sql.as_bytes());
            feed(&r.card.to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Minibatch training in place. Each query gets its own tape and adds
/// `(pred - target)^2 / k` to the batch gradient, so memory stays bounded
/// by one query's graph.
pub fn train(model: &mut Model, examples: &[Example], hyper: &Hyper) -> Result<History> {
    hyper.validate()?;
    let mut history = History::default();
    if hyper.epochs == 0 || examples.is_empty() {
        return Ok(history);
    }
    let mut adam = Adam::new(
        AdamConfig {
            weight_decay: hyper.weight_decay,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut grads = Grads::new(&model.params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch_index = 0usize;
    for epoch in 0..hyper.epochs {
        let epoch_seed = record_seed(hyper.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let lr = hyper.lr * step_lr(hyper.step_size, hyper.gamma, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch) {
            grads.clear();
            let k = chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let ex = &examples[i];
                let mut rng = ChaCha8Rng::seed_from_u64(record_seed(epoch_seed, i as u64));
                let mut t = Tape::new(&model.params, true);
                let y = model.forward(&mut t, &ex.bundle, &mut rng)?;
                let target = t.input(Matrix::from_vec(1, 1, vec![ex.target]));
                let diff = t.sub(y, target)?;
                let sq = t.square(diff);
                let loss = t.scale(sq, 1.0 / k);
                batch_loss += t.value(loss).scalar();
                t.backward(loss, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_index });
            }
            adam.step(&mut model.params, &grads, lr)?;
            total += batch_loss * k;
            batch_index += 1;
            log::debug!("epoch {epoch} batch {batch_index} loss {batch_loss:.5}");
        }
        let mean = total / examples.len() as f64;
        log::info!("epoch {epoch} mean loss {mean:.5}");
        history.epoch_loss.push(mean);
    }
    model.meta.epochs += hyper.epochs;
    model.meta.final_loss = history.epoch_loss.last().copied();
    Ok(history)
}

/// Pool all corpora and train a freshly initialized model.
pub fn train_corpora(
    corpora: &[Corpus<'_>],
    config: ModelConfig,
    hyper: &Hyper,
) -> Result<(Model, History)> {
    if corpora.is_empty() {
        return Err(Error::Invalid("training needs at least one corpus".into()));
    }
    let mut examples = Vec::new();
    for c in corpora {
        examples.extend(examples_from(*c, hyper.subqueries)?);
    }
    let mut model = Model::new(config)?;
    let history = train(&mut model, &examples, hyper)?;
    model.meta.corpus_fingerprint = corpus_fingerprint(corpora);
    Ok((model, history))
}

/// Continue training a copy of `model` on one corpus.
pub fn finetune(model: &Model, corpus: Corpus<'_>, hyper: &Hyper) -> Result<(Model, History)> {
    let examples = examples_from(corpus, hyper.subqueries)?;
    let mut tuned = model.clone();
    let history = train(&mut tuned, &examples, hyper)?;
    Ok((tuned, history))
}
