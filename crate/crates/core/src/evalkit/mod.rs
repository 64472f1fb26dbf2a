//! Evaluation: accuracy kernels, oracle best-1 and consensus re-ranking,
//! set diversity and held-out object F1.

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, ObjectVocabulary};
use crate::error::{Error, Result};

pub use metrics::{bleu_n, cider, lcs_len, ngram_counts, rouge_l, CiderScorer};

pub type Words = Vec<String>;

pub fn words(text: &str) -> Words {
    crate::corpus::normalize(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Bleu(usize),
    RougeL,
    Cider,
}

impl Metric {
    pub fn name(self) -> String {
        match self {
            Metric::Bleu(n) => format!("bleu{n}"),
            Metric::RougeL => "rouge_l".into(),
            Metric::Cider => "cider".into(),
        }
    }

    pub const ALL: [Metric; 6] = [
        Metric::Bleu(1),
        Metric::Bleu(2),
        Metric::Bleu(3),
        Metric::Bleu(4),
        Metric::Cider,
        Metric::RougeL,
    ];
}

fn score(metric: Metric, cand: &[String], refs: &[Words], cider: &CiderScorer) -> f64 {
    match metric {
        Metric::Bleu(n) => bleu_n(cand, refs, n),
        Metric::RougeL => rouge_l(cand, refs),
        Metric::Cider => cider.score(cand, refs),
    }
}

/// Best score among one image's samples.
pub fn oracle_best1(samples: &[Words], references: &[Words], metric: Metric, cider: &CiderScorer) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("oracle needs at least one sample".into()));
    }
    Ok(samples
        .iter()
        .map(|s| score(metric, s, references, cider))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Oracle best-1 of every metric averaged over images. CIDEr document
/// frequencies come from `references_by_image`.
pub fn oracle_report(samples_by_image: &[Vec<Words>], references_by_image: &[Vec<Words>]) -> Result<BTreeMap<String, f64>> {
    if samples_by_image.len() != references_by_image.len() || samples_by_image.is_empty() {
        return Err(Error::Shape("samples and references must cover the same non-empty image list".into()));
    }
    let cider = CiderScorer::new(references_by_image);
    let mut out = BTreeMap::new();
    for m in Metric::ALL {
        let mut s = 0.0;
        for (samp, refs) in samples_by_image.iter().zip(references_by_image) {
            s += oracle_best1(samp, refs, m, &cider)?;
        }
        out.insert(m.name(), s / samples_by_image.len() as f64);
    }
    Ok(out)
}

/// Training images with their pooled features and captions for consensus
/// re-ranking.
#[derive(Debug, Clone)]
pub struct ConsensusIndex {
    entries: Vec<(String, Vec<f64>, Vec<Words>)>,
    cider: CiderScorer,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

impl ConsensusIndex {
    pub fn new(entries: Vec<(String, Vec<f64>, Vec<Words>)>) -> Self {
        let corpus: Vec<Vec<Words>> = entries.iter().map(|e| e.2.clone()).collect();
        Self {
            entries: entries.into_iter().map(|(i, v, c)| (i, unit(&v), c)).collect(),
            cider: CiderScorer::new(&corpus),
        }
    }

    /// Captioned training images of `ds`.
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::new(
            ds.train
                .pairs
                .iter()
                .filter(|p| !p.captions.is_empty())
                .map(|p| {
                    let caps = p.captions.iter().map(|c| ds.vocab.words(c.words())).collect();
                    (p.image.image_id.clone(), p.image.pooled().to_vec(), caps)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Captions of the `m` training images nearest to `query` by cosine.
    pub fn reference_pool(&self, query: &[f64], m: usize) -> Result<Vec<Words>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let q = unit(query);
        let mut s: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.1.iter().zip(&q).map(|(a, b)| a * b).sum(), i))
            .collect();
        s.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(s.iter().take(m.max(1)).flat_map(|&(_, i)| self.entries[i].2.clone()).collect())
    }
}

/// Ranks samples by CIDEr against the captions of the `m` nearest training
/// images and returns the best `top` as (sample index, score).
pub fn consensus_rerank(
    samples: &[Words],
    query: &[f64],
    index: &ConsensusIndex,
    m: usize,
    top: usize,
) -> Result<Vec<(usize, f64)>> {
    let pool = index.reference_pool(query, m)?;
    let mut r: Vec<(usize, f64)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (i, index.cider.score(s, &pool)))
        .collect();
    r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    r.truncate(top);
    Ok(r)
}

/// Set-level diversity of generated captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub uniqueness: f64,
    pub novel: usize,
    pub m_bleu4: Option<f64>,
    pub div1: f64,
    pub div2: f64,
    /// Mean number of distinct strings per image.
    pub distinct: f64,
}

/// Distinct n-grams across the sample set over total words in the set.
pub fn div_n(samples: &[Words], n: usize) -> f64 {
    let total: usize = samples.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let distinct: BTreeSet<&[String]> = samples
        .iter()
        .filter(|s| s.len() >= n)
        .flat_map(|s| s.windows(n))
        .collect();
    distinct.len() as f64 / total as f64
}

/// Mean BLEU-4 of each sample against the other samples of its set.
pub fn m_bleu4(samples: &[Words]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let s: f64 = (0..samples.len())
        .map(|i| {
            let others: Vec<Words> = samples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.clone())
                .collect();
            bleu_n(&samples[i], &others, 4)
        })
        .sum();
    Some(s / samples.len() as f64)
}

pub fn diversity_report(samples_by_image: &[Vec<Words>], train_captions: &BTreeSet<String>) -> Result<(Diversity, Vec<String>)> {
    if samples_by_image.is_empty() || samples_by_image.iter().any(Vec::is_empty) {
        return Err(Error::Config("diversity needs at least one sample per image".into()));
    }
    let n = samples_by_image.len() as f64;
    let mut flags = Vec::new();
    let mut uniq = 0.0;
    let mut distinct = 0.0;
    let mut all = BTreeSet::new();
    for s in samples_by_image {
        let d: BTreeSet<String> = s.iter().map(|w| w.join(" ")).collect();
        uniq += d.len() as f64 / s.len() as f64;
        distinct += d.len() as f64;
        all.extend(d);
    }
    let mb: Option<Vec<f64>> = samples_by_image.iter().map(|s| m_bleu4(s)).collect();
    if mb.is_none() {
        flags.push("m_bleu4 omitted: an image has a single sample".into());
    }
    if samples_by_image.iter().flatten().any(Vec::is_empty) {
        flags.push("empty sample present".into());
    }
    let mean = |f: &dyn Fn(&[Words]) -> f64| samples_by_image.iter().map(|s| f(s)).sum::<f64>() / n;
    Ok((
        Diversity {
            uniqueness: 100.0 * uniq / n,
            novel: all.iter().filter(|s| !train_captions.contains(*s)).count(),
            m_bleu4: mb.map(|v| v.iter().sum::<f64>() / n),
            div1: mean(&|s| div_n(s, 1)),
            div2: mean(&|s| div_n(s, 2)),
            distinct: distinct / n,
        },
        flags,
    ))
}

/// F1 (percent) of "any sample mentions the object" against presence
/// labels. Returns the score and whether precision was undefined.
pub fn novel_object_f1(samples_by_image: &[Vec<Words>], object: &str, ov: &ObjectVocabulary, present: &[bool]) -> Result<(f64, bool)> {
    if samples_by_image.len() != present.len() {
        return Err(Error::Shape("presence labels must match images".into()));
    }
    if !ov.contains(object) {
        return Err(Error::Unknown(format!("object {object}")));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (s, &p) in samples_by_image.iter().zip(present) {
        let pred = s.iter().any(|w| ov.mentions(w, object));
        match (pred, p) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let undefined = tp + fp == 0;
    if undefined || tp == 0 {
        return Ok((0.0, undefined));
    }
    let prec = tp as f64 / (tp + fp) as f64;
    let rec = tp as f64 / (tp + fn_) as f64;
    Ok((100.0 * 2.0 * prec * rec / (prec + rec), false))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: BTreeMap<String, f64>,
    pub diversity: BTreeMap<String, f64>,
    pub f1: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned plain-text tables.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut table = |keys: &[(&str, &str)], map: &BTreeMap<String, f64>| {
            let present: Vec<_> = keys.iter().filter(|(k, _)| map.contains_key(*k)).collect();
            if present.is_empty() {
                return;
            }
            out.push_str(&present.iter().map(|(_, h)| format!("{h:>9}")).collect::<String>());
            out.push('\n');
            out.push_str(&present.iter().map(|(k, _)| format!("{:>9.4}", map[*k])).collect::<String>());
            out.push('\n');
        };
        table(
            &[
                ("bleu4", "B-4"),
                ("bleu3", "B-3"),
                ("bleu2", "B-2"),
                ("bleu1", "B-1"),
                ("cider", "C"),
                ("rouge_l", "R"),
            ],
            &self.accuracy,
        );
        table(
            &[
                ("uniqueness", "Uniq"),
                ("novel", "Novel"),
                ("m_bleu4", "mBLEU-4"),
                ("div1", "Div-1"),
                ("div2", "Div-2"),
                ("distinct", "Distinct"),
            ],
            &self.diversity,
        );
        if !self.f1.is_empty() {
            let keys: Vec<(&str, &str)> = self.f1.keys().map(|k| (k.as_str(), k.as_str())).collect();
            table(&keys, &self.f1);
        }
        for f in &self.flags {
            out.push_str(&format!("note: {f}\n"));
        }
        out
    }

    pub fn set_diversity(&mut self, d: &Diversity) {
        let m = &mut self.diversity;
        m.insert("uniqueness".into(), d.uniqueness);
        m.insert("novel".into(), d.novel as f64);
        if let Some(b) = d.m_bleu4 {
            m.insert("m_bleu4".into(), b);
        }
        m.insert("div1".into(), d.div1);
        m.insert("div2".into(), d.div2);
        m.insert("distinct".into(), d.distinct);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Words {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn div1_hand_case() {
        assert_eq!(div_n(&[w("a b"), w("a c")], 1), 0.75);
    }

    #[test]
    fn identical_samples() {
        let s = vec![w("a dog on the grass"); 5];
        let (d, flags) = diversity_report(&[s], &BTreeSet::new()).unwrap();
        assert_eq!(d.uniqueness, 20.0);
        assert_eq!(d.m_bleu4, Some(1.0));
        assert!(flags.is_empty());
    }

    #[test]
    fn single_sample_omits_m_bleu() {
        let (d, flags) = diversity_report(&[vec![w("a b")]], &BTreeSet::new()).unwrap();
        assert_eq!(d.m_bleu4, None);
        assert_eq!(flags.len(), 1);
    }

    #[test]
    fn f1_from_confusion_counts() {
        let ov = crate::corpus::toyworld::toy_objects();
        let s = |t: &str| vec![w(t)];
        let samples = vec![s("a zebra"), s("two zebras"), s("a zebra here"), s("a dog")];
        let (f, u) = novel_object_f1(&samples, "zebra", &ov, &[true, true, false, true]).unwrap();
        assert!((f - 200.0 / 3.0).abs() < 1e-12);
        assert!(!u);
        let (f, u) = novel_object_f1(&[s("a dog")], "zebra", &ov, &[true]).unwrap();
        assert_eq!(f, 0.0);
        assert!(u);
    }
}
