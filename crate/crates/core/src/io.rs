//! TREC-format run and qrels files, JSONL corpora and trace logs, and a
//! deterministic synthetic benchmark generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::backend::Passage;
use crate::engine::QueryTask;
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::hash;

/// One line of a TREC run: a retrieved document with rank and score.
#[derive(Clone, Debug, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
    pub tag: String,
}

/// A retrieval run grouped by query, entries sorted by rank.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrecRun {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl TrecRun {
    pub fn new() -> Self {
        TrecRun::default()
    }

    /// Builds a run from final rankings, assigning ranks 1.. and scores
    /// descending from n so downstream loaders see a coherent file.
    pub fn from_rankings(rankings: &[(String, Vec<String>)], tag: &str) -> Self {
        let mut run = TrecRun::new();
        for (query_id, docs) in rankings {
            let n = docs.len();
            let entries = docs
                .iter()
                .enumerate()
                .map(|(i, doc_id)| RunEntry {
                    doc_id: doc_id.clone(),
                    rank: (i + 1) as u32,
                    score: (n - i) as f64,
                    tag: tag.to_string(),
                })
                .collect();
            run.queries.insert(query_id.clone(), entries);
        }
        run
    }

    /// Query ids in sorted order.
    pub fn query_ids(&self) -> Vec<&str> {
        self.queries.keys().map(String::as_str).collect()
    }

    pub fn entries(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    /// Document ids for a query, best first.
    pub fn ranking(&self, query_id: &str) -> Option<Vec<String>> {
        self.queries
            .get(query_id)
            .map(|es| es.iter().map(|e| e.doc_id.clone()).collect())
    }

    /// Retrieval scores for a query, aligned with `ranking`.
    pub fn scores(&self, query_id: &str) -> Option<Vec<f64>> {
        self.queries
            .get(query_id)
            .map(|es| es.iter().map(|e| e.score).collect())
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parses a TREC run (`qid Q0 docid rank score tag`). Returns the run and
/// any warnings; entries whose ranks arrive out of order are re-sorted
/// and reported rather than rejected.
pub fn read_run<R: BufRead>(reader: R) -> Result<(TrecRun, Vec<String>)> {
    let mut queries: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_err(
                line_no,
                format!(
                    "expected 6 fields (qid Q0 docid rank score tag), got {}",
                    fields.len()
                ),
            ));
        }
        if fields[1] != "Q0" {
            return Err(parse_err(
                line_no,
                format!("second field must be Q0, got {:?}", fields[1]),
            ));
        }
        let rank: u32 = fields[3]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad rank {:?}: {e}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad score {:?}: {e}", fields[4])))?;
        if !score.is_finite() {
            return Err(parse_err(line_no, format!("non-finite score {score}")));
        }
        let key = (fields[0].to_string(), fields[2].to_string());
        if !seen.insert(key) {
            return Err(parse_err(
                line_no,
                format!(
                    "duplicate document {:?} for query {:?}",
                    fields[2], fields[0]
                ),
            ));
        }
        queries
            .entry(fields[0].to_string())
            .or_default()
            .push(RunEntry {
                doc_id: fields[2].to_string(),
                rank,
                score,
                tag: fields[5].to_string(),
            });
    }

    let mut warnings = Vec::new();
    for (query_id, entries) in &mut queries {
        if !entries.windows(2).all(|w| w[0].rank <= w[1].rank) {
            warnings.push(format!(
                "query {query_id:?}: ranks out of order, re-sorted by rank"
            ));
            entries.sort_by_key(|e| e.rank);
        }
    }
    Ok((TrecRun { queries }, warnings))
}

pub fn load_run(path: &Path) -> Result<(TrecRun, Vec<String>)> {
    read_run(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_run<W: Write>(mut writer: W, run: &TrecRun) -> Result<()> {
    for (query_id, entries) in &run.queries {
        for e in entries {
            writeln!(
                writer,
                "{query_id} Q0 {} {} {} {}",
                e.doc_id, e.rank, e.score, e.tag
            )?;
        }
    }
    Ok(())
}

pub fn save_run(path: &Path, run: &TrecRun) -> Result<()> {
    write_run(std::io::BufWriter::new(std::fs::File::create(path)?), run)
}

/// Parses TREC qrels (`qid iteration docid grade`). The iteration column
/// is ignored; duplicate (query, document) pairs are rejected.
pub fn read_qrels<R: BufRead>(reader: R) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!(
                    "expected 4 fields (qid iter docid grade), got {}",
                    fields.len()
                ),
            ));
        }
        let grade: u32 = fields[3]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad grade {:?}: {e}", fields[3])))?;
        if !seen.insert((fields[0].to_string(), fields[2].to_string())) {
            return Err(parse_err(
                line_no,
                format!("duplicate judgment for {:?}/{:?}", fields[0], fields[2]),
            ));
        }
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    read_qrels(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_qrels<W: Write>(mut writer: W, qrels: &Qrels) -> Result<()> {
    for query_id in qrels.query_ids() {
        let judged = qrels.judged(query_id).expect("listed query exists");
        let mut docs: Vec<&str> = judged.keys().map(String::as_str).collect();
        docs.sort_unstable();
        for doc_id in docs {
            writeln!(writer, "{query_id} 0 {doc_id} {}", judged[doc_id])?;
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    docid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    text: String,
}

/// Document store keyed by id.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    by_id: HashMap<String, Passage>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    /// Adds a passage; the id must be new.
    pub fn insert(&mut self, passage: Passage) -> Result<()> {
        let id = passage.doc_id.clone();
        if self.by_id.insert(id.clone(), passage).is_some() {
            return Err(Error::Data(format!("duplicate corpus document {id:?}")));
        }
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Passage> {
        self.by_id.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Parses a JSONL corpus: one `{"docid", "title"?, "text"}` per line.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(line_no, format!("bad corpus record: {e}")))?;
        if parsed.docid.is_empty() {
            return Err(parse_err(line_no, "empty docid"));
        }
        let mut passage = Passage::new(parsed.docid, parsed.text);
        passage.title = parsed.title;
        corpus
            .insert(passage)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    read_corpus(BufReader::new(std::fs::File::open(path)?))
}

/// Writes the corpus as JSONL, sorted by document id for stable bytes.
pub fn write_corpus<W: Write>(mut writer: W, corpus: &Corpus) -> Result<()> {
    let mut ids: Vec<&String> = corpus.by_id.keys().collect();
    ids.sort_unstable();
    for id in ids {
        let p = &corpus.by_id[id];
        let line = CorpusLine {
            docid: p.doc_id.clone(),
            title: p.title.clone(),
            text: p.text.clone(),
        };
        serde_json::to_writer(&mut writer, &line)
            .map_err(|e| Error::Data(format!("corpus serialization: {e}")))?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Verifies every run document resolves in the corpus; the error lists
/// all missing ids.
pub fn check_references(run: &TrecRun, corpus: &Corpus) -> Result<()> {
    let mut missing: Vec<String> = Vec::new();
    for entries in run.queries.values() {
        for e in entries {
            if corpus.get(&e.doc_id).is_none() {
                missing.push(e.doc_id.clone());
            }
        }
    }
    if missing.is_empty() {
        return Ok(());
    }
    missing.sort_unstable();
    missing.dedup();
    Err(Error::Data(format!(
        "{} run document(s) missing from the corpus: {}",
        missing.len(),
        missing.join(", ")
    )))
}

/// Optional query text file: `qid<TAB>text` per line.
pub fn read_queries<R: BufRead>(reader: R) -> Result<HashMap<String, String>> {
    let mut queries = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "expected qid<TAB>text"))?;
        if queries.insert(qid.to_string(), text.to_string()).is_some() {
            return Err(parse_err(line_no, format!("duplicate query id {qid:?}")));
        }
    }
    Ok(queries)
}

pub fn load_queries(path: &Path) -> Result<HashMap<String, String>> {
    read_queries(BufReader::new(std::fs::File::open(path)?))
}

/// Builds per-query tasks from a run and corpus. When qrels are supplied,
/// passages carry grades (unjudged documents count as grade 0) so
/// simulated backends can score them; query text falls back to the query
/// id when no text map is given.
pub fn assemble_tasks(
    run: &TrecRun,
    corpus: &Corpus,
    qrels: Option<&Qrels>,
    query_text: Option<&HashMap<String, String>>,
) -> Result<Vec<QueryTask>> {
    check_references(run, corpus)?;
    let mut tasks = Vec::with_capacity(run.len());
    for query_id in run.query_ids() {
        let entries = run.entries(query_id).expect("listed query exists");
        let passages: Vec<Passage> = entries
            .iter()
            .map(|e| {
                let mut p = corpus.get(&e.doc_id).expect("checked above").clone();
                if let Some(q) = qrels {
                    p.true_relevance = Some(q.grade(query_id, &e.doc_id).unwrap_or(0));
                }
                p
            })
            .collect();
        let text = query_text
            .and_then(|m| m.get(query_id).cloned())
            .unwrap_or_else(|| query_id.to_string());
        let task = QueryTask::new(query_id, text, passages)?
            .with_retrieval_scores(entries.iter().map(|e| e.score).collect())?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// One evaluated (query, method) pair in a trace log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub query_id: String,
    pub method: String,
    pub calls: usize,
    pub iterations: usize,
    pub ndcg: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wig: Option<f64>,
}

pub fn write_traces<W: Write>(mut writer: W, records: &[TraceRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| Error::Data(format!("trace serialization: {e}")))?;
        writeln!(writer)?;
    }
    Ok(())
}

pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| parse_err(i + 1, format!("bad trace record: {e}")))?,
        );
    }
    Ok(records)
}

/// Knobs for the synthetic benchmark generator.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub docs_per_query: usize,
    /// Probability of drawing grade 0, 1, 2, and 3 for each document.
    /// Must sum to 1.
    pub grade_distribution: [f64; 4],
    /// Standard deviation of the Gaussian noise added to grades to form
    /// retrieval scores.
    pub score_noise: f64,
    /// Per-query reranker temperature, drawn uniformly from this range.
    pub temperature_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            queries: 200,
            docs_per_query: 100,
            // Weights halve with each step up so relevant documents stay
            // scarce, as they are in retrieval pools.
            grade_distribution: [8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0],
            score_noise: 1.0,
            temperature_range: (0.5, 2.0),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.queries < 1 || self.docs_per_query < 2 {
            return Err(Error::Config(format!(
                "need at least 1 query and 2 docs per query, got {} and {}",
                self.queries, self.docs_per_query
            )));
        }
        if !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return Err(Error::Config(format!(
                "score noise must be non-negative, got {}",
                self.score_noise
            )));
        }
        let (lo, hi) = self.temperature_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "temperature range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        let dist = &self.grade_distribution;
        if dist.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!(
                "grade probabilities must be non-negative, got {dist:?}"
            )));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "grade probabilities must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// A generated benchmark: corpus, retrieval run, judgments, and the
/// per-query noise temperature the simulation should apply.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub run: TrecRun,
    pub qrels: Qrels,
    pub temperatures: BTreeMap<String, f64>,
}

/// Draws a grade from the categorical distribution over {0..3}.
fn sample_grade<R: Rng>(rng: &mut R, dist: &[f64; 4]) -> u32 {
    let mut draw = rng.gen::<f64>();
    for (g, w) in dist.iter().enumerate() {
        if draw < *w {
            return g as u32;
        }
        draw -= w;
    }
    (dist.len() - 1) as u32
}

/// Generates a benchmark deterministically: every query derives its own
/// random stream from the master seed and its id, so output bytes depend
/// only on the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let normal = rand_distr::Normal::new(0.0, spec.score_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("score noise: {e}")))?;
    let mut corpus = Corpus::new();
    let mut qrels = Qrels::new();
    let mut temperatures = BTreeMap::new();
    let mut rankings = Vec::with_capacity(spec.queries);

    for q in 0..spec.queries {
        let query_id = format!("q{q:04}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hash::named(
            spec.seed,
            &format!("query/{query_id}"),
        ));

        let (lo, hi) = spec.temperature_range;
        let temperature = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        temperatures.insert(query_id.clone(), temperature);

        let mut scored: Vec<(String, f64)> = Vec::with_capacity(spec.docs_per_query);
        for d in 0..spec.docs_per_query {
            let doc_id = format!("{query_id}-d{d:04}");
            let grade = sample_grade(&mut rng, &spec.grade_distribution);
            let score = f64::from(grade)
                + if spec.score_noise > 0.0 {
                    normal.sample(&mut rng)
                } else {
                    0.0
                };
            corpus.insert(Passage::new(
                doc_id.clone(),
                format!("synthetic passage {d} for {query_id}"),
            ))?;
            qrels.insert(query_id.clone(), doc_id.clone(), grade);
            scored.push((doc_id, score));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        rankings.push((query_id, scored));
    }

    let mut run = TrecRun::new();
    for (query_id, scored) in rankings {
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id,
                rank: (i + 1) as u32,
                score,
                tag: "synthetic".to_string(),
            })
            .collect();
        run.queries.insert(query_id, entries);
    }
    Ok(SyntheticData {
        corpus,
        run,
        qrels,
        temperatures,
    })
}
