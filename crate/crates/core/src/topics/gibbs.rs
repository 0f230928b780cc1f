//! Collapsed Gibbs sampling for LDA.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DocumentSet, TopicError, TopicModel};

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaConfig {
    pub k: usize,
    /// Defaults to `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            alpha: None,
            beta: DEFAULT_BETA,
            iters: DEFAULT_ITERS,
            seed,
        }
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }

    fn validate(&self) -> Result<(), TopicError> {
        if self.k < 2 {
            return Err(TopicError::InvalidConfig(format!(
                "K must be >= 2, got {}",
                self.k
            )));
        }
        if self.iters == 0 {
            return Err(TopicError::InvalidConfig("iters must be >= 1".into()));
        }
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TopicError::InvalidConfig(
                "alpha and beta must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sampler state: token assignments plus the count tables they imply.
pub struct GibbsSampler<'a> {
    docs: &'a DocumentSet,
    k: usize,
    v: usize,
    alpha: f64,
    beta: f64,
    assignments: Vec<Vec<usize>>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
    config: LdaConfig,
}

impl<'a> GibbsSampler<'a> {
    /// Seeds the chain with uniformly random assignments.
    pub fn new(docs: &'a DocumentSet, config: &LdaConfig) -> Result<Self, TopicError> {
        config.validate()?;
        let v = docs.vocab_size();
        if v == 0 || docs.total_tokens() == 0 {
            return Err(TopicError::EmptyAfterPreprocess);
        }
        let k = config.k;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut doc_topic = vec![0u32; docs.len() * k];
        let mut topic_word = vec![0u32; k * v];
        let mut topic_total = vec![0u32; k];
        let assignments = docs
            .docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.tokens
                    .iter()
                    .map(|&w| {
                        let t = rng.gen_range(0..k);
                        doc_topic[d * k + t] += 1;
                        topic_word[t * v + w] += 1;
                        topic_total[t] += 1;
                        t
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            docs,
            k,
            v,
            alpha: config.alpha(),
            beta: config.beta,
            assignments,
            doc_topic,
            topic_word,
            topic_total,
            rng,
            probs: vec![0.0; k],
            config: config.clone(),
        })
    }

    /// One full pass resampling every token.
    pub fn sweep(&mut self) {
        let (k, v) = (self.k, self.v);
        let vbeta = v as f64 * self.beta;
        let docs = self.docs;
        for (d, doc) in docs.docs.iter().enumerate() {
            let dt = &mut self.doc_topic[d * k..(d + 1) * k];
            for (i, &w) in doc.tokens.iter().enumerate() {
                let old = self.assignments[d][i];
                dt[old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (dt[t] as f64 + self.alpha)
                        * (self.topic_word[t * v + w] as f64 + self.beta)
                        / (self.topic_total[t] as f64 + vbeta);
                    total += p;
                    self.probs[t] = total;
                }
                let u = self.rng.gen::<f64>() * total;
                let new = self.probs.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][i] = new;
                dt[new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Sum of the topic-word table; equals the corpus token count when the
    /// tables are consistent.
    pub fn topic_word_total(&self) -> u64 {
        self.topic_word.iter().map(|&c| u64::from(c)).sum()
    }

    /// Rebuilds all count tables from the assignments and compares.
    pub fn counts_consistent(&self) -> bool {
        let (k, v) = (self.k, self.v);
        let mut dt = vec![0u32; self.docs.len() * k];
        let mut tw = vec![0u32; k * v];
        let mut tt = vec![0u32; k];
        for (d, doc) in self.docs.docs.iter().enumerate() {
            for (&w, &t) in doc.tokens.iter().zip(&self.assignments[d]) {
                dt[d * k + t] += 1;
                tw[t * v + w] += 1;
                tt[t] += 1;
            }
        }
        dt == self.doc_topic && tw == self.topic_word && tt == self.topic_total
    }

    /// Point estimates of phi and theta from the current state.
    pub fn into_model(self) -> TopicModel {
        let (k, v) = (self.k, self.v);
        let vbeta = v as f64 * self.beta;
        let kalpha = k as f64 * self.alpha;
        let phi = (0..k)
            .map(|t| {
                let denom = self.topic_total[t] as f64 + vbeta;
                (0..v)
                    .map(|w| (self.topic_word[t * v + w] as f64 + self.beta) / denom)
                    .collect()
            })
            .collect();
        let theta = self
            .docs
            .docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                let denom = doc.tokens.len() as f64 + kalpha;
                (0..k)
                    .map(|t| (self.doc_topic[d * k + t] as f64 + self.alpha) / denom)
                    .collect()
            })
            .collect();
        TopicModel {
            k,
            alpha: self.alpha,
            beta: self.beta,
            iters: self.config.iters,
            seed: self.config.seed,
            vocabulary: self.docs.vocabulary.words().to_vec(),
            doc_users: self.docs.docs.iter().map(|d| d.user_id.clone()).collect(),
            phi,
            theta,
            assignments: self.assignments,
        }
    }
}

/// Trains an LDA model for `config.iters` sweeps.
pub fn gibbs_train(docs: &DocumentSet, config: &LdaConfig) -> Result<TopicModel, TopicError> {
    gibbs_train_observed(docs, config, |_, _| {})
}

/// As [`gibbs_train`], calling `observe(iteration, sampler)` after every sweep.
pub fn gibbs_train_observed(
    docs: &DocumentSet,
    config: &LdaConfig,
    mut observe: impl FnMut(usize, &GibbsSampler<'_>),
) -> Result<TopicModel, TopicError> {
    let mut sampler = GibbsSampler::new(docs, config)?;
    for iter in 0..config.iters {
        sampler.sweep();
        observe(iter, &sampler);
    }
    Ok(sampler.into_model())
}
