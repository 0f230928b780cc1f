//! Corpora drawn from known topic distributions, for checking that training
//! recovers what was planted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, WeightedIndex};

use crate::topics::{Document, DocumentSet, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub doc_len: usize,
    /// Probability mass each topic leaks outside its own word block.
    pub leak: f64,
    /// Symmetric Dirichlet concentration for per-document topic mixes.
    pub doc_concentration: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n_docs: 300,
            vocab_size: 60,
            n_topics: 3,
            doc_len: 60,
            leak: 0.05,
            doc_concentration: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub docs: DocumentSet,
    /// The generating topic-word distributions.
    pub phi: Vec<Vec<f64>>,
}

/// Topic `t` puts `1 - leak` of its mass uniformly on its own contiguous
/// block of words and spreads `leak` uniformly over the rest.
pub fn planted_phi(vocab_size: usize, n_topics: usize, leak: f64) -> Vec<Vec<f64>> {
    let block = vocab_size / n_topics;
    (0..n_topics)
        .map(|t| {
            let own = t * block..if t + 1 == n_topics {
                vocab_size
            } else {
                (t + 1) * block
            };
            let inside = own.len() as f64;
            let outside = (vocab_size - own.len()) as f64;
            (0..vocab_size)
                .map(|w| {
                    if own.contains(&w) {
                        (1.0 - leak) / inside
                    } else if outside > 0.0 {
                        leak / outside
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn planted_topics(spec: &PlantedSpec) -> PlantedCorpus {
    assert!(
        spec.n_topics >= 2 && spec.vocab_size >= spec.n_topics,
        "degenerate planted spec"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi = planted_phi(spec.vocab_size, spec.n_topics, spec.leak);
    let word_dists: Vec<WeightedIndex<f64>> = phi
        .iter()
        .map(|row| WeightedIndex::new(row).expect("valid topic row"))
        .collect();
    let mix = Dirichlet::new_with_size(spec.doc_concentration, spec.n_topics)
        .expect("valid concentration");
    let docs = (0..spec.n_docs)
        .map(|d| {
            let theta = mix.sample(&mut rng);
            let pick = WeightedIndex::new(&theta).expect("valid mixture");
            let tokens = (0..spec.doc_len)
                .map(|_| word_dists[pick.sample(&mut rng)].sample(&mut rng))
                .collect();
            Document::new(format!("doc{d:04}"), tokens)
        })
        .collect();
    let vocabulary =
        Vocabulary::from_words((0..spec.vocab_size).map(|w| format!("w{w:03}")).collect());
    PlantedCorpus {
        docs: DocumentSet::new(docs, vocabulary).expect("tokens within vocabulary"),
        phi,
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Best one-to-one matching of planted to learned topics by total cosine,
/// by exhaustive search over permutations. Returns the cosine of each
/// planted topic to its matched learned topic.
pub fn match_topics(planted: &[Vec<f64>], learned: &[Vec<f64>]) -> Vec<f64> {
    assert!(
        learned.len() >= planted.len(),
        "fewer learned topics than planted"
    );
    let sims: Vec<Vec<f64>> = planted
        .iter()
        .map(|p| learned.iter().map(|l| cosine(p, l)).collect())
        .collect();
    let mut best: (f64, Vec<usize>) = (f64::NEG_INFINITY, Vec::new());
    let mut chosen = Vec::with_capacity(planted.len());
    let mut used = vec![false; learned.len()];
    search(&sims, &mut chosen, &mut used, 0.0, &mut best);
    best.1
        .iter()
        .enumerate()
        .map(|(p, &l)| sims[p][l])
        .collect()
}

fn search(
    sims: &[Vec<f64>],
    chosen: &mut Vec<usize>,
    used: &mut [bool],
    score: f64,
    best: &mut (f64, Vec<usize>),
) {
    if chosen.len() == sims.len() {
        if score > best.0 {
            *best = (score, chosen.clone());
        }
        return;
    }
    let p = chosen.len();
    for l in 0..used.len() {
        if !used[l] {
            used[l] = true;
            chosen.push(l);
            search(sims, chosen, used, score + sims[p][l], best);
            chosen.pop();
            used[l] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_rows_are_distributions() {
        for row in planted_phi(60, 3, 0.05) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let c = planted_topics(&PlantedSpec::default());
        assert_eq!(c.docs.len(), 300);
        assert_eq!(c.docs.total_tokens(), 300 * 60);
    }

    #[test]
    fn matching_finds_permutation() {
        let phi = planted_phi(9, 3, 0.0);
        let shuffled = vec![phi[2].clone(), phi[0].clone(), phi[1].clone()];
        let sims = match_topics(&phi, &shuffled);
        assert!(sims.iter().all(|&s| (s - 1.0).abs() < 1e-12));
    }
}
