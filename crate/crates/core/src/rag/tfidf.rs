//! Sparse TF-IDF vectors with log IDF and L2 normalization.

use std::collections::HashMap;

use crate::textcore::Token;

/// Document frequencies over a reference collection.
#[derive(Debug, Clone, Default)]
pub struct TfIdf {
    idf: HashMap<Token, f64>,
    docs: usize,
}

/// L2-normalized sparse vector sorted by token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec(Vec<(Token, f64)>);

impl SparseVec {
    pub fn entries(&self) -> &[(Token, f64)] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

fn counts(seq: &[Token]) -> Vec<(Token, u32)> {
    let mut sorted = seq.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(Token, u32)> = Vec::new();
    for t in sorted {
        match out.last_mut() {
            Some((last, c)) if *last == t => *c += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

impl TfIdf {
    /// IDF `ln(N / df)` over `docs`.
    pub fn fit<S: AsRef<[Token]>>(docs: &[S]) -> Self {
        let mut df: HashMap<Token, usize> = HashMap::new();
        for d in docs {
            for (t, _) in counts(d.as_ref()) {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df.into_iter().map(|(t, c)| (t, (n / c as f64).ln())).collect();
        Self { idf, docs: docs.len() }
    }

    pub fn doc_count(&self) -> usize {
        self.docs
    }

    /// IDF of `token`; tokens unseen in the collection carry no weight.
    pub fn idf(&self, token: Token) -> f64 {
        self.idf.get(&token).copied().unwrap_or(0.0)
    }

    /// Raw-count TF times IDF, L2-normalized. Zero vector if nothing is weighted.
    pub fn vectorize(&self, seq: &[Token]) -> SparseVec {
        let mut v: Vec<(Token, f64)> = counts(seq)
            .into_iter()
            .map(|(t, c)| (t, f64::from(c) * self.idf(t)))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in v.iter_mut() {
                *w /= norm;
            }
        }
        SparseVec(v)
    }

    pub fn cosine(&self, a: &[Token], b: &[Token]) -> f64 {
        self.vectorize(a).dot(&self.vectorize(b))
    }
}

/// Inverted index for top-k cosine retrieval.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    model: TfIdf,
    postings: HashMap<Token, Vec<(u32, f64)>>,
    len: usize,
}

impl TfIdfIndex {
    pub fn build<S: AsRef<[Token]>>(docs: &[S]) -> Self {
        let model = TfIdf::fit(docs);
        let mut postings: HashMap<Token, Vec<(u32, f64)>> = HashMap::new();
        for (i, d) in docs.iter().enumerate() {
            for &(t, w) in model.vectorize(d.as_ref()).entries() {
                postings.entry(t).or_default().push((i as u32, w));
            }
        }
        Self {
            model,
            postings,
            len: docs.len(),
        }
    }

    pub fn model(&self) -> &TfIdf {
        &self.model
    }

    /// Cosine similarity of `query` to every indexed document.
    pub fn scores(&self, query: &[Token]) -> Vec<f64> {
        let mut scores = vec![0.0; self.len];
        for &(t, qw) in self.model.vectorize(query).entries() {
            if let Some(list) = self.postings.get(&t) {
                for &(i, dw) in list {
                    scores[i as usize] += qw * dw;
                }
            }
        }
        scores
    }

    /// Indices of the `k` best documents; ties go to the smaller `tie_key`.
    pub fn top_k<K: Ord>(&self, query: &[Token], k: usize, tie_key: impl Fn(usize) -> K) -> Vec<usize> {
        let scores = self.scores(query);
        let mut idx: Vec<usize> = (0..self.len).collect();
        idx.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| tie_key(a).cmp(&tie_key(b)))
        });
        idx.truncate(k);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_and_cosine_by_hand() {
        let docs = [vec![1, 2], vec![1, 3], vec![1, 3, 3]];
        let m = TfIdf::fit(&docs);
        assert_eq!(m.idf(1), 0.0);
        assert!((m.idf(2) - 3f64.ln()).abs() < 1e-12);
        assert!((m.idf(3) - 1.5f64.ln()).abs() < 1e-12);
        assert_eq!(m.idf(99), 0.0);
        // [1,2] reduces to the unit vector on token 2.
        assert_eq!(m.vectorize(&docs[0]).entries(), &[(2, 1.0)]);
        assert!((m.cosine(&docs[1], &docs[2]) - 1.0).abs() < 1e-12);
        assert_eq!(m.cosine(&docs[0], &docs[1]), 0.0);
        assert!(m.vectorize(&[1, 1]).is_zero());
    }

    #[test]
    fn index_matches_direct_cosine() {
        let docs = [vec![1, 2, 5, 5], vec![2, 3, 4], vec![4, 5, 6, 7], vec![8, 9]];
        let index = TfIdfIndex::build(&docs);
        let q = [5, 4, 9];
        let s = index.scores(&q);
        for (i, d) in docs.iter().enumerate() {
            assert!((s[i] - index.model().cosine(&q, d)).abs() < 1e-12);
        }
        assert_eq!(index.top_k(&[100], 2, |i| i), vec![0, 1]);
        assert_eq!(index.top_k(&[100], 2, std::cmp::Reverse), vec![3, 2]);
    }
}
