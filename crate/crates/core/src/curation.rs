//! Two-sided curation: frequency-capped concept balancing on captions,
//! cluster-balanced sampling on image embeddings, and their intersection.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{balanced_sample, compose_assignment, seeded_rng, ClusterTree};
use crate::error::{Error, Result};
use crate::formats::CaptionLine;
use crate::records::PairRecord;

/// Anything with an id and a caption.
pub trait Captioned {
    fn id(&self) -> &str;
    fn caption(&self) -> &str;
}

impl Captioned for PairRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn caption(&self) -> &str {
        &self.caption
    }
}

impl Captioned for CaptionLine {
    fn id(&self) -> &str {
        &self.id
    }
    fn caption(&self) -> &str {
        &self.caption
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1 | 0x00A7 | 0x00AB | 0x00B6 | 0x00B7 | 0x00BB | 0x00BF
            | 0x2010..=0x2027 | 0x2030..=0x205E
            | 0x3001..=0x3003 | 0x3008..=0x3011 | 0x3014..=0x301F
            | 0xFF01..=0xFF0F | 0xFF1A..=0xFF20 | 0xFF3B..=0xFF40 | 0xFF5B..=0xFF65)
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn normalize_caption(text: &str) -> Vec<String> {
    let cleaned: String = text.chars().filter(|&c| !is_punctuation(c)).flat_map(char::to_lowercase).collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone)]
pub struct ConceptVocabulary {
    concepts: Vec<String>,
    lookup: HashMap<Vec<String>, u32>,
    max_tokens: usize,
}

impl ConceptVocabulary {
    /// Duplicate concepts (after normalization) keep their first index.
    pub fn new<I, S>(concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Self { concepts: Vec::new(), lookup: HashMap::new(), max_tokens: 0 };
        for c in concepts {
            let tokens = normalize_caption(c.as_ref());
            if tokens.is_empty() {
                return Err(Error::invalid(format!("empty concept {:?}", c.as_ref())));
            }
            if out.lookup.contains_key(&tokens) {
                continue;
            }
            out.max_tokens = out.max_tokens.max(tokens.len());
            out.lookup.insert(tokens.clone(), out.concepts.len() as u32);
            out.concepts.push(tokens.join(" "));
        }
        if out.concepts.is_empty() {
            return Err(Error::invalid("concept vocabulary is empty"));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn index_of(&self, concept: &str) -> Option<usize> {
        self.lookup.get(&normalize_caption(concept)).map(|&i| i as usize)
    }

    /// Sorted, de-duplicated concept indices occurring in `caption`.
    pub fn matches(&self, caption: &str) -> Vec<u32> {
        let tokens = normalize_caption(caption);
        let mut found = BTreeSet::new();
        for start in 0..tokens.len() {
            for len in 1..=self.max_tokens.min(tokens.len() - start) {
                if let Some(&c) = self.lookup.get(&tokens[start..start + len]) {
                    found.insert(c);
                }
            }
        }
        found.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCounts {
    pub ids: Vec<String>,
    /// `counts[c]` = number of pairs whose matched set contains `c`.
    pub counts: Vec<u64>,
    pub matched: Vec<Vec<u32>>,
}

pub fn match_concepts<T: Captioned + Sync>(records: &[T], vocab: &ConceptVocabulary) -> ConceptCounts {
    let matched: Vec<Vec<u32>> = records.par_iter().map(|r| vocab.matches(r.caption())).collect();
    let mut counts = vec![0u64; vocab.len()];
    for m in &matched {
        for &c in m {
            counts[c as usize] += 1;
        }
    }
    ConceptCounts { ids: records.iter().map(|r| r.id().to_owned()).collect(), counts, matched }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Text,
    Image,
    Intersection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationSelection {
    pub kept_ids: BTreeSet<String>,
    pub provenance: Provenance,
}

impl CurationSelection {
    pub fn len(&self) -> usize {
        self.kept_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_ids.is_empty()
    }
}

/// Each matched concept accepts a pair with probability
/// `min(1, cap / count)`; a pair survives if any of its concepts accepts it.
pub fn text_balance(counts: &ConceptCounts, cap: u64, seed: u64) -> Result<CurationSelection> {
    if cap == 0 {
        return Err(Error::invalid("cap must be at least 1"));
    }
    let accept: Vec<f64> = counts.counts.iter().map(|&n| if n <= cap { 1.0 } else { cap as f64 / n as f64 }).collect();
    let mut rng = seeded_rng(seed, 2);
    let mut kept_ids = BTreeSet::new();
    for (id, matched) in counts.ids.iter().zip(&counts.matched) {
        let mut keep = false;
        // one draw per (pair, concept) regardless of earlier outcomes
        for &c in matched {
            let u: f64 = rng.random();
            keep |= u < accept[c as usize];
        }
        if keep {
            kept_ids.insert(id.clone());
        }
    }
    Ok(CurationSelection { kept_ids, provenance: Provenance::Text })
}

/// Cluster-balanced subset of `ids`, which must be in the order the tree's
/// level 0 was fit on.
pub fn image_balance(ids: &[String], tree: &ClusterTree, budget: usize, seed: u64) -> Result<CurationSelection> {
    if tree.num_points() != ids.len() {
        return Err(Error::DimMismatch { expected: tree.num_points(), got: ids.len() });
    }
    let kept_ids = balanced_sample(tree, budget, seed).into_iter().map(|i| ids[i].clone()).collect();
    Ok(CurationSelection { kept_ids, provenance: Provenance::Image })
}

pub fn intersect(a: &CurationSelection, b: &CurationSelection) -> CurationSelection {
    CurationSelection {
        kept_ids: a.kept_ids.intersection(&b.kept_ids).cloned().collect(),
        provenance: Provenance::Intersection,
    }
}

/// Shannon entropy divided by `ln(bins)`; 0 for empty or single-bin histograms.
pub fn normalized_entropy(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 || hist.len() < 2 {
        return 0.0;
    }
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h / (hist.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramPair {
    pub before: Vec<u64>,
    pub after: Vec<u64>,
    pub entropy_before: f64,
    pub entropy_after: f64,
}

impl HistogramPair {
    fn new(before: Vec<u64>, after: Vec<u64>) -> Self {
        Self { entropy_before: normalized_entropy(&before), entropy_after: normalized_entropy(&after), before, after }
    }

    pub fn entropy_delta(&self) -> f64 {
        self.entropy_after - self.entropy_before
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationReport {
    pub n_before: usize,
    pub n_after: usize,
    pub provenance: Provenance,
    pub concepts: Option<HistogramPair>,
    pub clusters: Option<HistogramPair>,
}

/// Per-concept and per-top-level-cluster histograms before and after a
/// selection. `ids` is the full dataset in the order used by `counts` and
/// `tree`.
pub fn curation_report(
    ids: &[String],
    after: &CurationSelection,
    counts: Option<&ConceptCounts>,
    tree: Option<&ClusterTree>,
) -> Result<CurationReport> {
    let kept: Vec<bool> = ids.iter().map(|id| after.kept_ids.contains(id)).collect();
    let concepts = match counts {
        Some(c) => {
            if c.ids != ids {
                return Err(Error::invalid("concept counts were computed on a different dataset order"));
            }
            let mut after_hist = vec![0u64; c.counts.len()];
            for (m, &k) in c.matched.iter().zip(&kept) {
                if k {
                    for &x in m {
                        after_hist[x as usize] += 1;
                    }
                }
            }
            Some(HistogramPair::new(c.counts.clone(), after_hist))
        }
        None => None,
    };
    let clusters = match tree {
        Some(t) => {
            if t.num_points() != ids.len() {
                return Err(Error::DimMismatch { expected: t.num_points(), got: ids.len() });
            }
            let top = compose_assignment(t, t.top_level())?;
            let k = t.levels[t.top_level()].k();
            let (mut before, mut after_hist) = (vec![0u64; k], vec![0u64; k]);
            for (&c, &kp) in top.iter().zip(&kept) {
                before[c as usize] += 1;
                if kp {
                    after_hist[c as usize] += 1;
                }
            }
            Some(HistogramPair::new(before, after_hist))
        }
        None => None,
    };
    Ok(CurationReport {
        n_before: ids.len(),
        n_after: kept.iter().filter(|&&k| k).count(),
        provenance: after.provenance,
        concepts,
        clusters,
    })
}
