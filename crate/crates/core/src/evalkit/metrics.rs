//! Caption accuracy kernels over normalized word lists.

use std::collections::{BTreeMap, HashMap};

pub type Ngram<'a> = &'a [String];

/// Counts of every n-gram of order `n`, in n-gram order so that float
/// accumulations over them are reproducible.
pub fn ngram_counts(words: &[String], n: usize) -> BTreeMap<Ngram<'_>, usize> {
    let mut m = BTreeMap::new();
    if n > 0 && words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence-level BLEU-n: clipped n-gram precisions, uniform geometric
/// mean, brevity penalty against the reference closest in length (shorter
/// on ties). No smoothing: any zero precision gives 0. A candidate shorter
/// than `n` words uses the orders it has. An empty candidate or empty
/// reference list scores 0.
pub fn bleu_n(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() || n == 0 {
        return 0.0;
    }
    let n = n.min(candidate.len());
    let mut log_p = 0.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut max_ref: HashMap<Ngram, usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, k) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_p += (clipped as f64 / total as f64).ln() / n as f64;
    }
    let c = candidate.len() as i64;
    let r = references
        .iter()
        .map(|r| r.len() as i64)
        .min_by_key(|&l| ((l - c).abs(), l))
        .expect("non-empty references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L: LCS precision and recall, each maximized over references, then
/// the F-measure with beta = 1.2.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for refr in references {
        if refr.is_empty() {
            continue;
        }
        let l = lcs_len(candidate, refr) as f64;
        p = p.max(l / candidate.len() as f64);
        r = r.max(l / refr.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

const CIDER_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

/// CIDEr-D with document frequencies from a reference corpus: TF-IDF
/// n-gram vectors for orders 1..4, clipped cosine per reference, Gaussian
/// length penalty (sigma 6), averaged over orders and references, times 10.
#[derive(Debug, Clone)]
pub struct CiderScorer {
    df: HashMap<Vec<String>, f64>,
    log_n_docs: f64,
}

struct TfIdf {
    vec: [BTreeMap<Vec<String>, f64>; CIDER_N],
    norm: [f64; CIDER_N],
    len: usize,
}

impl CiderScorer {
    /// `corpus` holds the reference set of each image; an n-gram's document
    /// frequency is the number of images whose references contain it.
    pub fn new(corpus: &[Vec<Vec<String>>]) -> Self {
        let mut df: HashMap<Vec<String>, f64> = HashMap::new();
        for refs in corpus {
            let mut seen: std::collections::HashSet<&[String]> = std::collections::HashSet::new();
            for r in refs {
                for k in (1..=CIDER_N).filter(|&k| r.len() >= k) {
                    seen.extend(r.windows(k));
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
            }
        }
        Self {
            df,
            log_n_docs: (corpus.len().max(1) as f64).ln(),
        }
    }

    fn tfidf(&self, words: &[String]) -> TfIdf {
        let mut vec: [BTreeMap<Vec<String>, f64>; CIDER_N] = Default::default();
        let mut norm = [0.0; CIDER_N];
        for k in 1..=CIDER_N {
            for (g, tf) in ngram_counts(words, k) {
                let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
                let v = tf as f64 * (self.log_n_docs - df);
                norm[k - 1] += v * v;
                vec[k - 1].insert(g.to_vec(), v);
            }
        }
        for n in &mut norm {
            *n = n.sqrt();
        }
        TfIdf {
            vec,
            norm,
            len: words.len(),
        }
    }

    /// Score of one candidate against its references.
    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if candidate.is_empty() || references.is_empty() {
            return 0.0;
        }
        let h = self.tfidf(candidate);
        let mut total = 0.0;
        for r in references {
            let r = self.tfidf(r);
            let delta = h.len as f64 - r.len as f64;
            let pen = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for k in 0..CIDER_N {
                let mut v = 0.0;
                for (g, &x) in &h.vec[k] {
                    if let Some(&y) = r.vec[k].get(g) {
                        v += x.min(y) * y;
                    }
                }
                if h.norm[k] != 0.0 && r.norm[k] != 0.0 {
                    v /= h.norm[k] * r.norm[k];
                }
                total += v * pen;
            }
        }
        total / CIDER_N as f64 / references.len() as f64 * 10.0
    }
}

/// Per-image CIDEr-D with document frequencies from `references_by_image`.
pub fn cider(candidates: &[Vec<String>], references_by_image: &[Vec<Vec<String>>]) -> Vec<f64> {
    let s = CiderScorer::new(references_by_image);
    candidates
        .iter()
        .zip(references_by_image)
        .map(|(c, r)| s.score(c, r))
        .collect()
}
