//! Bag-of-words corpora: UCI ingestion, vocabulary filtering, splits,
//! minibatch streaming and synthetic LDA corpora.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lda::ModelParams;
use crate::rng::{self, stream};

/// One observation: the flattened token sequence of a document.
///
/// Tokens are kept sorted by word id; the model is exchangeable so the order
/// carries no information.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Document {
    word_ids: Vec<usize>,
}

impl Document {
    pub fn new(mut word_ids: Vec<usize>) -> Self {
        word_ids.sort_unstable();
        Self { word_ids }
    }

    /// Keeps the given order. Only useful for checking order invariance.
    pub fn from_tokens_unsorted(word_ids: Vec<usize>) -> Self {
        Self { word_ids }
    }

    /// Builds a document from `(word id, count)` pairs.
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut ids = Vec::new();
        for (w, c) in counts {
            ids.extend(std::iter::repeat_n(w, c));
        }
        Self::new(ids)
    }

    pub fn word_ids(&self) -> &[usize] {
        &self.word_ids
    }

    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    /// Distinct words with their multiplicities, ascending by word id.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &w in &self.word_ids {
            match out.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => out.push((w, 1)),
            }
        }
        out
    }
}

/// Unique words of a document and, for each token, the index of its word.
#[derive(Debug, Clone)]
pub(crate) struct WordIndex {
    pub words: Vec<usize>,
    pub token_word: Vec<u32>,
    pub multiplicity: Vec<f64>,
}

impl WordIndex {
    pub fn new(doc: &Document) -> Self {
        let mut words = Vec::new();
        let mut multiplicity: Vec<f64> = Vec::new();
        let mut token_word = Vec::with_capacity(doc.len());
        let mut pos = std::collections::HashMap::new();
        for &w in doc.word_ids() {
            let idx = *pos.entry(w).or_insert_with(|| {
                words.push(w);
                multiplicity.push(0.0);
                words.len() - 1
            });
            multiplicity[idx] += 1.0;
            token_word.push(idx as u32);
        }
        Self {
            words,
            token_word,
            multiplicity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    vocab: Vec<String>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocab: Vec<String>) -> Result<Self> {
        let v = vocab.len();
        let mut seen = HashSet::with_capacity(v);
        for tok in &vocab {
            if !seen.insert(tok.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        for (d, doc) in documents.iter().enumerate() {
            if let Some(&w) = doc.word_ids().iter().find(|&&w| w >= v) {
                return Err(Error::InvalidArgument(format!(
                    "document {d} uses word {w} outside vocabulary of size {v}"
                )));
            }
        }
        Ok(Self { documents, vocab })
    }

    /// Vocabulary of placeholder tokens `w0, w1, ...`.
    pub fn with_anonymous_vocab(documents: Vec<Document>, v: usize) -> Result<Self> {
        Self::new(documents, (0..v).map(|i| format!("w{i}")).collect())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn minibatches(&self, size: usize) -> std::slice::Chunks<'_, Document> {
        self.documents.chunks(size.max(1))
    }

    /// Writes `docword.txt`-style triplets and a one-token-per-line vocabulary.
    pub fn write_uci(&self, docword_path: &Path, vocab_path: &Path) -> Result<()> {
        let counts: Vec<Vec<(usize, usize)>> = self.documents.iter().map(Document::counts).collect();
        let nnz: usize = counts.iter().map(Vec::len).sum();
        let file = fs::File::create(docword_path).map_err(|e| Error::io(docword_path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(docword_path, e);
        writeln!(out, "{}\n{}\n{}", self.len(), self.vocab_size(), nnz).map_err(io)?;
        for (d, doc) in counts.iter().enumerate() {
            for &(w, c) in doc {
                writeln!(out, "{} {} {}", d + 1, w + 1, c).map_err(io)?;
            }
        }
        out.flush().map_err(io)?;
        let mut vocab = self.vocab.join("\n");
        vocab.push('\n');
        fs::write(vocab_path, vocab).map_err(|e| Error::io(vocab_path, e))
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a UCI bag-of-words corpus.
///
/// `docword` holds three header lines (D, W, NNZ) followed by NNZ lines
/// `docID wordID count`, both ids 1-indexed. Documents with no entries are
/// dropped with a warning.
pub fn load_uci_bag_of_words(docword_path: &Path, vocab_path: &Path) -> Result<Corpus> {
    let file = fs::File::open(docword_path).map_err(|e| Error::io(docword_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["D", "W", "NNZ"]) {
        let (i, line) = lines
            .next()
            .ok_or_else(|| parse_error(docword_path, 0, format!("missing header line {name}")))?;
        let line = line.map_err(|e| Error::io(docword_path, e))?;
        *slot = line
            .trim()
            .parse()
            .map_err(|_| parse_error(docword_path, i + 1, format!("malformed header {name}: {line:?}")))?;
    }
    let [n_docs, n_words, nnz] = header;

    let mut per_doc: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_docs];
    let mut seen = 0usize;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(docword_path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(docword_path, lineno, "expected `docID wordID count`"));
        }
        let parse = |s: &str| -> Result<i64> {
            s.parse::<i64>()
                .map_err(|_| parse_error(docword_path, lineno, format!("not an integer: {s:?}")))
        };
        let (d, w, c) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
        if d < 1 || d as usize > n_docs {
            return Err(parse_error(
                docword_path,
                lineno,
                format!("docID {d} out of range 1..={n_docs}"),
            ));
        }
        if w < 1 || w as usize > n_words {
            return Err(parse_error(
                docword_path,
                lineno,
                format!("wordID {w} out of range 1..={n_words}"),
            ));
        }
        if c <= 0 {
            return Err(parse_error(docword_path, lineno, format!("count {c} must be positive")));
        }
        *per_doc[d as usize - 1].entry(w as usize - 1).or_insert(0) += c as usize;
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_error(
            docword_path,
            3,
            format!("header declares {nnz} entries, found {seen}"),
        ));
    }

    let vocab_text = fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
    let vocab: Vec<String> = vocab_text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if vocab.len() != n_words {
        return Err(parse_error(
            vocab_path,
            vocab.len(),
            format!("vocabulary has {} entries, header says {n_words}", vocab.len()),
        ));
    }

    let mut documents = Vec::with_capacity(n_docs);
    for (d, counts) in per_doc.into_iter().enumerate() {
        if counts.is_empty() {
            warn!("document {} has no tokens; dropped", d + 1);
            continue;
        }
        documents.push(Document::from_counts(counts));
    }
    Corpus::new(documents, vocab)
}

/// Reads a stopword list, one token per line.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Keeps the `top_n` most frequent non-stopword tokens (ties broken
/// lexicographically) in their original vocabulary order and re-indexes the
/// documents. Documents left empty are dropped.
pub fn filter_vocabulary(corpus: &Corpus, stopwords: &HashSet<String>, top_n: usize) -> Result<Corpus> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let mut freq = vec![0usize; corpus.vocab_size()];
    for doc in corpus.documents() {
        for &w in doc.word_ids() {
            freq[w] += 1;
        }
    }
    let mut ranked: Vec<usize> = (0..corpus.vocab_size())
        .filter(|&w| !stopwords.contains(&corpus.vocab[w]))
        .collect();
    ranked.sort_by(|&a, &b| {
        freq[b]
            .cmp(&freq[a])
            .then_with(|| corpus.vocab[a].cmp(&corpus.vocab[b]))
    });
    ranked.truncate(top_n);
    ranked.sort_unstable();

    let mut remap = vec![usize::MAX; corpus.vocab_size()];
    for (new, &old) in ranked.iter().enumerate() {
        remap[old] = new;
    }
    let vocab = ranked.iter().map(|&w| corpus.vocab[w].clone()).collect();
    let documents = corpus
        .documents()
        .iter()
        .map(|doc| {
            Document::new(
                doc.word_ids()
                    .iter()
                    .filter_map(|&w| (remap[w] != usize::MAX).then_some(remap[w]))
                    .collect(),
            )
        })
        .filter(|doc| !doc.is_empty())
        .collect();
    Corpus::new(documents, vocab)
}

/// Uniform random train/test split, deterministic in `seed`. Both parts are
/// in shuffled order so that each split also streams documents differently.
pub fn split(corpus: &Corpus, n_test: usize, seed: u64) -> Result<(Corpus, Corpus)> {
    if n_test >= corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "n_test = {n_test} must be smaller than the corpus size {}",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::rng_for(seed, &[stream::SPLIT]));
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.documents[i].clone()).collect();
    let test = Corpus {
        documents: pick(&order[..n_test]),
        vocab: corpus.vocab.clone(),
    };
    let train = Corpus {
        documents: pick(&order[n_test..]),
        vocab: corpus.vocab.clone(),
    };
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSource {
    /// Each topic drawn from a symmetric Dirichlet with this concentration.
    Dirichlet(f64),
    /// Explicit K×V row-stochastic matrix.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub k_true: usize,
    pub v: usize,
    pub d: usize,
    /// Poisson rate of document lengths.
    pub mean_length: f64,
    pub alpha_true: Vec<f64>,
    pub topic_source: TopicSource,
}

impl SyntheticSpec {
    /// Symmetric prior `0.5 · 1` and Dirichlet(0.1) topics.
    pub fn new(k_true: usize, v: usize, d: usize, mean_length: f64) -> Self {
        Self {
            k_true,
            v,
            d,
            mean_length,
            alpha_true: vec![0.5; k_true],
            topic_source: TopicSource::Dirichlet(0.1),
        }
    }

    /// Parses `k=5,v=100,d=20000,len=40[,alpha=0.5][,topic_conc=0.1]`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {part:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad number in {part:?}")))?;
            fields.insert(key.trim().to_string(), value);
        }
        let take = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("synthetic spec is missing {key}")))
        };
        let k = take("k")? as usize;
        let mut spec = Self::new(k, take("v")? as usize, take("d")? as usize, take("len")?);
        if let Some(&a) = fields.get("alpha") {
            spec.alpha_true = vec![a; k];
        }
        if let Some(&c) = fields.get("topic_conc") {
            spec.topic_source = TopicSource::Dirichlet(c);
        }
        for key in fields.keys() {
            if !["k", "v", "d", "len", "alpha", "topic_conc"].contains(&key.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown synthetic spec key {key:?}")));
            }
        }
        Ok(spec)
    }
}

/// Draws one point from a Dirichlet via normalized Gamma variates.
pub(crate) fn sample_dirichlet<R: rand::Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // every draw underflowed; fall back to the largest shape parameter
        let best = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        draws
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = (i == best) as u8 as f64);
    }
    draws
}

/// Samples a corpus from the LDA generative process and returns it with the
/// generating parameters.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Corpus, ModelParams)> {
    let (k, v) = (spec.k_true, spec.v);
    if k == 0 || v == 0 || spec.d == 0 {
        return Err(Error::InvalidArgument("synthetic spec needs K, V, D >= 1".into()));
    }
    if !(spec.mean_length > 0.0) {
        return Err(Error::InvalidArgument("mean_length must be positive".into()));
    }
    if spec.alpha_true.len() != k || spec.alpha_true.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidArgument("alpha_true must have K positive entries".into()));
    }
    let mut rng = rng::rng_for(seed, &[stream::SYNTH]);
    let beta = match &spec.topic_source {
        TopicSource::Dirichlet(c) => {
            if !(*c > 0.0) {
                return Err(Error::InvalidArgument("topic concentration must be positive".into()));
            }
            let mut beta = Array2::zeros((k, v));
            for mut row in beta.rows_mut() {
                let topic = sample_dirichlet(&vec![*c; v], &mut rng);
                row.assign(&ndarray::Array1::from(topic));
            }
            beta
        }
        TopicSource::Explicit(rows) => {
            if rows.len() != k || rows.iter().any(|r| r.len() != v) {
                return Err(Error::shape(format!("{k}x{v} topic matrix"), "explicit matrix"));
            }
            for (i, r) in rows.iter().enumerate() {
                let sum: f64 = r.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || r.iter().any(|&x| x < 0.0) {
                    return Err(Error::Degenerate(format!("topic {i} sums to {sum}")));
                }
            }
            Array2::from_shape_fn((k, v), |(i, j)| rows[i][j])
        }
    };
    let params = ModelParams::new(beta, spec.alpha_true.clone())?;
    let samplers: Vec<WeightedAliasIndex<f64>> = params
        .beta()
        .rows()
        .into_iter()
        .map(|row| WeightedAliasIndex::new(row.to_vec()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Degenerate(format!("topic sampler: {e}")))?;
    let poisson = Poisson::new(spec.mean_length).map_err(|e| Error::InvalidArgument(format!("poisson rate: {e}")))?;

    let mut documents = Vec::with_capacity(spec.d);
    for _ in 0..spec.d {
        let theta = sample_dirichlet(&spec.alpha_true, &mut rng);
        let len = loop {
            let n = poisson.sample(&mut rng) as usize;
            if n > 0 {
                break n;
            }
        };
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let z = rng::sample_weighted(&mut rng, &theta, 1.0);
            words.push(samplers[z].sample(&mut rng));
        }
        documents.push(Document::new(words));
    }
    Ok((Corpus::with_anonymous_vocab(documents, v)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn expands_counts() {
        let dir = tempfile::tempdir().unwrap();
        let dw = write(dir.path(), "docword.txt", "1\n2\n1\n1 2 3\n");
        let vo = write(dir.path(), "vocab.txt", "a\nb\n");
        let c = load_uci_bag_of_words(&dw, &vo).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.documents()[0].word_ids(), &[1, 1, 1]);
    }

    #[test]
    fn nnz_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let dw = write(dir.path(), "docword.txt", "1\n2\n2\n1 2 3\n");
        let vo = write(dir.path(), "vocab.txt", "a\nb\n");
        assert!(load_uci_bag_of_words(&dw, &vo).is_err());
    }

    #[test]
    fn rejects_bad_entries() {
        let dir = tempfile::tempdir().unwrap();
        let vo = write(dir.path(), "vocab.txt", "a\nb\n");
        for body in [
            "1\n2\n1\n1 3 1\n",
            "1\n2\n1\n2 1 1\n",
            "1\n2\n1\n1 1 0\n",
            "x\n2\n1\n1 1 1\n",
        ] {
            let dw = write(dir.path(), "docword.txt", body);
            assert!(load_uci_bag_of_words(&dw, &vo).is_err(), "{body:?}");
        }
    }

    #[test]
    fn empty_documents_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let dw = write(dir.path(), "docword.txt", "3\n2\n2\n1 1 1\n3 2 2\n");
        let vo = write(dir.path(), "vocab.txt", "a\nb\n");
        let c = load_uci_bag_of_words(&dw, &vo).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents()[1].word_ids(), &[1, 1]);
    }

    #[test]
    fn uci_round_trip() {
        let (c, _) = generate_synthetic(&SyntheticSpec::new(3, 20, 30, 8.0), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (dw, vo) = (dir.path().join("dw.txt"), dir.path().join("vocab.txt"));
        c.write_uci(&dw, &vo).unwrap();
        assert_eq!(load_uci_bag_of_words(&dw, &vo).unwrap(), c);
    }

    fn toy() -> Corpus {
        let vocab = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let docs = vec![Document::new(vec![1, 1, 2]), Document::new(vec![1, 2, 0])];
        Corpus::new(docs, vocab).unwrap()
    }

    #[test]
    fn filter_keeps_most_frequent() {
        let f = filter_vocabulary(&toy(), &HashSet::new(), 2).unwrap();
        assert_eq!(f.vocab(), &["a".to_string(), "b".to_string()]);
        assert_eq!(f.documents()[1].word_ids(), &[0, 1]);
    }

    #[test]
    fn filter_with_large_top_n_is_identity() {
        let c = toy();
        assert_eq!(filter_vocabulary(&c, &HashSet::new(), 10).unwrap(), c);
    }

    #[test]
    fn filter_all_stopwords_empties_corpus() {
        let stop = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let f = filter_vocabulary(&toy(), &stop, 5).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.vocab_size(), 0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (c, _) = generate_synthetic(&SyntheticSpec::new(2, 30, 10, 5.0), 9).unwrap();
        let (train, test) = split(&c, 3, 1).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        let (train2, test2) = split(&c, 3, 1).unwrap();
        assert_eq!((train, test), (train2, test2));
        let (_, empty) = split(&c, 0, 1).unwrap();
        assert!(empty.is_empty());
        assert!(split(&c, 10, 1).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        // tag each document with a unique word so identity is visible
        let docs = (0..10).map(|i| Document::new(vec![i])).collect();
        let c = Corpus::with_anonymous_vocab(docs, 10).unwrap();
        let (train, test) = split(&c, 3, 5).unwrap();
        let mut all: Vec<usize> = train
            .documents()
            .iter()
            .chain(test.documents())
            .map(|d| d.word_ids()[0])
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_is_reproducible() {
        let spec = SyntheticSpec::new(4, 50, 40, 12.0);
        let a = generate_synthetic(&spec, 17).unwrap();
        let b = generate_synthetic(&spec, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.0.documents().iter().all(|d| !d.is_empty()));
    }

    #[test]
    fn single_topic_frequencies_converge() {
        let topic = vec![0.5, 0.3, 0.2, 0.0];
        let spec = SyntheticSpec {
            k_true: 1,
            v: 4,
            d: 2000,
            mean_length: 20.0,
            alpha_true: vec![1.0],
            topic_source: TopicSource::Explicit(vec![topic.clone()]),
        };
        let (c, _) = generate_synthetic(&spec, 2).unwrap();
        let mut freq = [0.0; 4];
        for doc in c.documents() {
            for &w in doc.word_ids() {
                freq[w] += 1.0;
            }
        }
        let n = c.num_tokens() as f64;
        for (f, t) in freq.iter().zip(&topic) {
            assert!((f / n - t).abs() < 0.01);
        }
    }

    #[test]
    fn explicit_topics_must_be_stochastic() {
        let mut spec = SyntheticSpec::new(1, 2, 5, 3.0);
        spec.topic_source = TopicSource::Explicit(vec![vec![0.5, 0.6]]);
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn parses_inline_spec() {
        let s = SyntheticSpec::parse("k=5, v=100,d=200,len=40,alpha=0.2").unwrap();
        assert_eq!((s.k_true, s.v, s.d), (5, 100, 200));
        assert_eq!(s.alpha_true, vec![0.2; 5]);
        assert!(SyntheticSpec::parse("k=5,v=10").is_err());
        assert!(SyntheticSpec::parse("k=5,v=10,d=3,len=4,bogus=1").is_err());
    }
}
