//! Held-out perplexity and perplexity-driven choice of the topic count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gibbs::{gibbs_train, LdaConfig};
use super::{Document, DocumentSet, TopicError, TopicModel};

pub const DEFAULT_FOLD_IN_ITERS: usize = 50;
pub const DEFAULT_HELDOUT_FRAC: f64 = 0.1;

/// Which held-out tokens estimate a document's topic mix and which are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeldoutSplit {
    /// Fold in on even positions, score odd positions.
    #[default]
    Completion,
    /// Fold in and score on every token.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityConfig {
    pub fold_in_iters: usize,
    pub seed: u64,
    pub split: HeldoutSplit,
}

impl Default for PerplexityConfig {
    fn default() -> Self {
        Self {
            fold_in_iters: DEFAULT_FOLD_IN_ITERS,
            seed: 0,
            split: HeldoutSplit::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub scored_tokens: usize,
    pub oov_tokens: usize,
}

/// Topic mixture for `tokens` (model vocabulary indices) with phi held fixed.
pub(crate) fn fold_in(
    model: &TopicModel,
    tokens: &[usize],
    iters: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let k = model.k;
    let mut counts = vec![0u32; k];
    let mut z: Vec<usize> = tokens
        .iter()
        .map(|_| {
            let t = rng.gen_range(0..k);
            counts[t] += 1;
            t
        })
        .collect();
    let mut cumulative = vec![0.0; k];
    for _ in 0..iters {
        for (i, &w) in tokens.iter().enumerate() {
            counts[z[i]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                total += (counts[t] as f64 + model.alpha) * model.phi[t][w];
                cumulative[t] = total;
            }
            let u = rng.gen::<f64>() * total;
            let t = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
            z[i] = t;
            counts[t] += 1;
        }
    }
    let denom = tokens.len() as f64 + k as f64 * model.alpha;
    counts
        .iter()
        .map(|&c| (c as f64 + model.alpha) / denom)
        .collect()
}

/// `exp(-sum log p(w) / N)` over the scored held-out tokens, where
/// `p(w) = sum_k theta_dk * phi_kw` and theta comes from fold-in sampling.
pub fn perplexity(
    model: &TopicModel,
    heldout: &DocumentSet,
    config: &PerplexityConfig,
) -> Result<PerplexityReport, TopicError> {
    let index = model.word_index();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log_lik = 0.0;
    let mut scored = 0;
    let mut oov = 0;
    for doc in &heldout.docs {
        let mapped: Vec<usize> = doc
            .tokens
            .iter()
            .filter_map(|&w| {
                let hit = index.get(heldout.vocabulary.word(w)).copied();
                if hit.is_none() {
                    oov += 1;
                }
                hit
            })
            .collect();
        let (fold, score): (Vec<usize>, Vec<usize>) = match config.split {
            HeldoutSplit::All => (mapped.clone(), mapped),
            HeldoutSplit::Completion => {
                let (even, odd): (Vec<_>, Vec<_>) =
                    mapped.iter().enumerate().partition(|(i, _)| i % 2 == 0);
                (
                    even.into_iter().map(|(_, &w)| w).collect(),
                    odd.into_iter().map(|(_, &w)| w).collect(),
                )
            }
        };
        if score.is_empty() {
            continue;
        }
        let theta = fold_in(model, &fold, config.fold_in_iters, &mut rng);
        for &w in &score {
            let p: f64 = (0..model.k).map(|t| theta[t] * model.phi[t][w]).sum();
            log_lik += p.ln();
        }
        scored += score.len();
    }
    if scored == 0 {
        return Err(TopicError::NoTokens { oov });
    }
    Ok(PerplexityReport {
        perplexity: (-log_lik / scored as f64).exp(),
        scored_tokens: scored,
        oov_tokens: oov,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub chosen: usize,
    /// `(K, held-out perplexity)` per candidate, in candidate order.
    pub scores: Vec<(usize, f64)>,
}

/// Deterministic train/held-out split of whole documents.
pub fn split_heldout(
    docs: &DocumentSet,
    heldout_frac: f64,
    seed: u64,
) -> Result<(DocumentSet, DocumentSet), TopicError> {
    if !(heldout_frac > 0.0 && heldout_frac < 1.0) {
        return Err(TopicError::InvalidConfig(format!(
            "held-out fraction {heldout_frac} not in (0, 1)"
        )));
    }
    let n = docs.len();
    let n_held = ((n as f64 * heldout_frac).round() as usize).max(1);
    if n_held >= n {
        return Err(TopicError::InvalidConfig(format!(
            "cannot hold out {n_held} of {n} documents"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(SPLIT_STREAM),
    ));
    let mut held: Vec<usize> = order[..n_held].to_vec();
    let mut train: Vec<usize> = order[n_held..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    let pick =
        |idx: &[usize]| -> Vec<Document> { idx.iter().map(|&i| docs.docs[i].clone()).collect() };
    Ok((
        DocumentSet::new(pick(&train), docs.vocabulary.clone())?,
        DocumentSet::new(pick(&held), docs.vocabulary.clone())?,
    ))
}

// keeps the split's random stream apart from the sampler's
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trains each candidate K on a training split and keeps the one with the
/// lowest held-out perplexity (smaller K on ties). Candidates train in
/// parallel with independent samplers.
pub fn choose_k(
    docs: &DocumentSet,
    candidates: &[usize],
    heldout_frac: f64,
    base: &LdaConfig,
    perplexity_config: &PerplexityConfig,
) -> Result<KSelection, TopicError> {
    if candidates.is_empty() {
        return Err(TopicError::InvalidConfig("no candidate K values".into()));
    }
    let (train, held) = split_heldout(docs, heldout_frac, base.seed)?;
    let results: Vec<Result<(usize, f64), TopicError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|&k| {
                let (train, held) = (&train, &held);
                let config = LdaConfig { k, ..base.clone() };
                scope.spawn(move || {
                    let model = gibbs_train(train, &config)?;
                    let report = perplexity(&model, held, perplexity_config)?;
                    Ok((k, report.perplexity))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let scores = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let chosen = scores
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(k, _)| k)
        .expect("candidates non-empty");
    Ok(KSelection { chosen, scores })
}
