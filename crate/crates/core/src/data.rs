//! Prompt generation, model-labelled datasets and distillation data sources.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lm::{AutoRegressiveLM, Sequence, TokenId, Vocabulary};
use crate::rng::{label, stream};

/// One `(prompt, response)` pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub prompt: Sequence,
    pub response: Sequence,
}

impl Example {
    pub fn new(prompt: Sequence, response: Sequence) -> Self {
        Self { prompt, response }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptDataset {
    pub prompts: Vec<Sequence>,
    pub split: Split,
    pub seed: u64,
}

impl PromptDataset {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// A `split <name> seed <seed>` header, then one prompt per line.
    pub fn to_text(&self) -> String {
        let split = match self.split {
            Split::Train => "train",
            Split::Validation => "validation",
        };
        let mut out = format!("split {split} seed {}\n", self.seed);
        for x in &self.prompts {
            write_tokens(&mut out, x.tokens());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, vocab_size: usize) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LabError::parse("prompt dataset", "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (split, seed) = match fields.as_slice() {
            ["split", name, "seed", s] => {
                let split = match *name {
                    "train" => Split::Train,
                    "validation" => Split::Validation,
                    other => return Err(LabError::parse("header", format!("unknown split `{other}`"))),
                };
                let seed = s.parse().map_err(|_| LabError::parse("header", format!("bad seed `{s}`")))?;
                (split, seed)
            }
            _ => return Err(LabError::parse("header", format!("malformed header `{header}`"))),
        };
        let prompts = lines
            .enumerate()
            .map(|(n, line)| parse_tokens(line, vocab_size, n + 1).map(Sequence::prompt))
            .collect::<Result<_>>()?;
        Ok(Self { prompts, split, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path, vocab_size: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_text(&text, vocab_size)
    }
}

/// Token process for synthetic prompts: Zipf-weighted unigrams, uniform lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub vocab: Vocabulary,
    pub min_len: usize,
    pub max_len: usize,
    /// 0 gives uniform tokens.
    pub zipf_exponent: f64,
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len > self.max_len {
            return Err(LabError::InvalidArgument(format!(
                "prompt length range [{}, {}] is empty",
                self.min_len, self.max_len
            )));
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(LabError::InvalidArgument("zipf exponent must be >= 0".into()));
        }
        Ok(())
    }

    fn token_weights(&self) -> Vec<f64> {
        (0..self.vocab.size())
            .map(|r| (r as f64 + 1.0).powf(-self.zipf_exponent))
            .collect()
    }
}

/// Draws `count` i.i.d. prompts, skipping any whose content is in `exclude`.
pub fn generate_prompts_excluding(
    config: &PromptConfig,
    count: usize,
    split: Split,
    seed: u64,
    exclude: &HashSet<Vec<TokenId>>,
) -> Result<PromptDataset> {
    config.validate()?;
    if count == 0 {
        return Err(LabError::InvalidArgument("prompt count must be >= 1".into()));
    }
    let tokens = WeightedIndex::new(config.token_weights())
        .map_err(|e| LabError::InvalidArgument(format!("token weights: {e}")))?;
    let mut rng = stream(seed, &[label::PROMPTS]);
    let mut prompts = Vec::with_capacity(count);
    let mut rejected = 0usize;
    while prompts.len() < count {
        let len = rng.random_range(config.min_len..=config.max_len);
        let p: Vec<TokenId> = (0..len).map(|_| tokens.sample(&mut rng) as TokenId).collect();
        if exclude.contains(&p) {
            rejected += 1;
            if rejected > 100 * count + 1000 {
                return Err(LabError::InvalidArgument(
                    "prompt space too small to draw a disjoint split".into(),
                ));
            }
            continue;
        }
        prompts.push(Sequence::prompt(p));
    }
    Ok(PromptDataset { prompts, split, seed })
}

pub fn generate_prompts(config: &PromptConfig, count: usize, split: Split, seed: u64) -> Result<PromptDataset> {
    generate_prompts_excluding(config, count, split, seed, &HashSet::new())
}

/// Content set of a prompt dataset, for building disjoint splits.
pub fn prompt_contents(ds: &PromptDataset) -> HashSet<Vec<TokenId>> {
    ds.prompts.iter().map(|p| p.tokens().to_vec()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Oracle,
    Teacher,
}

impl Generator {
    fn tag(&self) -> &'static str {
        match self {
            Generator::Oracle => "oracle",
            Generator::Teacher => "teacher",
        }
    }
}

/// A fixed set of model-generated pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub vocab_size: usize,
    pub seed: u64,
    pub generator: Generator,
    pub pairs: Vec<Example>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Line format: a header, then `prompt<TAB>response` with space-separated ids.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "vocab_size {} seed {} generator {}\n",
            self.vocab_size,
            self.seed,
            self.generator.tag()
        );
        for ex in &self.pairs {
            write_tokens(&mut out, ex.prompt.tokens());
            out.push('\t');
            write_tokens(&mut out, ex.response.tokens());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LabError::parse("labeled dataset", "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (vocab_size, seed, generator) = match fields.as_slice() {
            ["vocab_size", v, "seed", s, "generator", g] => {
                let v = v.parse().map_err(|_| LabError::parse("header", format!("bad vocab size `{v}`")))?;
                let s = s.parse().map_err(|_| LabError::parse("header", format!("bad seed `{s}`")))?;
                let g = match *g {
                    "oracle" => Generator::Oracle,
                    "teacher" => Generator::Teacher,
                    other => return Err(LabError::parse("header", format!("unknown generator `{other}`"))),
                };
                (v, s, g)
            }
            _ => return Err(LabError::parse("header", format!("malformed header `{header}`"))),
        };
        let mut pairs = Vec::new();
        for (n, line) in lines.enumerate() {
            let (p, r) = line
                .split_once('\t')
                .ok_or_else(|| LabError::parse(format!("record {}", n + 1), "missing tab separator"))?;
            let prompt = parse_tokens(p, vocab_size, n + 1)?;
            let response = parse_tokens(r, vocab_size, n + 1)?;
            pairs.push(Example::new(Sequence::prompt(prompt), Sequence::response(response)));
        }
        Ok(Self {
            vocab_size,
            seed,
            generator,
            pairs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn distinct_prompts(&self) -> usize {
        self.pairs.iter().map(|e| e.prompt.tokens()).collect::<HashSet<_>>().len()
    }
}

fn write_tokens(out: &mut String, tokens: &[TokenId]) {
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{t}");
    }
}

fn parse_tokens(field: &str, vocab_size: usize, record: usize) -> Result<Vec<TokenId>> {
    field
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let t: TokenId = s
                .parse()
                .map_err(|_| LabError::parse(format!("record {record}"), format!("bad token `{s}`")))?;
            if t as usize >= vocab_size {
                return Err(LabError::parse(format!("record {record}"), format!("token {t} out of range")));
            }
            Ok(t)
        })
        .collect()
}

/// `m` responses per prompt; response `j` of prompt `i` uses stream `(seed, i, j)`.
pub fn generate_labeled(
    model: &AutoRegressiveLM,
    prompts: &PromptDataset,
    responses_per_prompt: usize,
    seed: u64,
    generator: Generator,
) -> Result<LabeledDataset> {
    if responses_per_prompt == 0 {
        return Err(LabError::InvalidArgument("responses_per_prompt must be >= 1".into()));
    }
    let mut pairs = Vec::with_capacity(prompts.len() * responses_per_prompt);
    for (i, x) in prompts.prompts.iter().enumerate() {
        let state = model.prompt_state(x);
        for j in 0..responses_per_prompt {
            let mut rng = stream(seed, &[label::LABELS, i as u64, j as u64]);
            pairs.push(Example::new(x.clone(), model.sample_with_state(&state, &mut rng)));
        }
    }
    Ok(LabeledDataset {
        vocab_size: model.vocab().size(),
        seed,
        generator,
        pairs,
    })
}

/// Same budget of `N` responses spread over `ceil(N / k)` sub-sampled prompts.
pub fn build_low_diversity(
    prompts: &PromptDataset,
    teacher: &AutoRegressiveLM,
    k: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let n = prompts.len();
    if k == 0 || k > n {
        return Err(LabError::InvalidArgument(format!("diversity factor k = {k} must lie in [1, {n}]")));
    }
    let keep = n.div_ceil(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[label::SUBSAMPLE]));
    order.truncate(keep);
    let subset = PromptDataset {
        prompts: order.iter().map(|&i| prompts.prompts[i].clone()).collect(),
        split: prompts.split,
        seed: prompts.seed,
    };
    let mut ds = generate_labeled(teacher, &subset, k, seed, Generator::Teacher)?;
    ds.pairs.truncate(n);
    Ok(ds)
}

/// Training steps in one pass over `n` points.
pub fn epoch_length(n: usize, batch_size: usize) -> usize {
    assert!(n >= 1 && batch_size >= 1, "epoch_length needs n, B >= 1");
    n.div_ceil(batch_size)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    Offline,
    OnlineTeacher,
    OnlineStudent,
    /// With probability `alpha` a batch is offline, otherwise online-student.
    Mixture { alpha: f64 },
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Offline => "offline",
            SourceKind::OnlineTeacher => "online_teacher",
            SourceKind::OnlineStudent => "online_student",
            SourceKind::Mixture { .. } => "mixture",
        }
    }

    pub fn needs_offline(&self) -> bool {
        matches!(self, SourceKind::Offline | SourceKind::Mixture { .. })
    }
}

#[derive(Clone, Debug)]
pub struct DataSourceSpec {
    pub kind: SourceKind,
    pub offline: Option<Arc<LabeledDataset>>,
}

impl DataSourceSpec {
    pub fn validate(&self) -> Result<()> {
        if let SourceKind::Mixture { alpha } = self.kind {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(LabError::InvalidArgument(format!("mixture alpha {alpha} outside [0, 1]")));
            }
        }
        if self.kind.needs_offline() && self.offline.as_ref().is_none_or(|d| d.is_empty()) {
            return Err(LabError::MissingOfflineDataset(self.kind.name()));
        }
        Ok(())
    }
}

/// Cycles through successive seeded permutations of `0..len`.
#[derive(Clone, Debug)]
struct EpochCursor {
    seed: u64,
    tag: u64,
    len: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl EpochCursor {
    fn new(seed: u64, tag: u64, len: usize) -> Self {
        let mut c = Self {
            seed,
            tag,
            len,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut stream(self.seed, &[label::BATCHES, self.tag, self.epoch]));
        self.pos = 0;
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.len {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

const OFFLINE_CURSOR: u64 = 1;
const PROMPT_CURSOR: u64 = 2;
const MIX_DRAW: u64 = 3;
const RESPONSES: u64 = 4;

/// Stateful batch producer for one training run.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    spec: DataSourceSpec,
    batch_size: usize,
    seed: u64,
    offline_cursor: Option<EpochCursor>,
    prompt_cursor: EpochCursor,
}

/// Which branch produced a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOrigin {
    Offline,
    OnlineTeacher,
    OnlineStudent,
}

impl BatchSampler {
    pub fn new(spec: DataSourceSpec, num_prompts: usize, batch_size: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if batch_size == 0 {
            return Err(LabError::InvalidArgument("batch size must be >= 1".into()));
        }
        if num_prompts == 0 {
            return Err(LabError::InsufficientData("no training prompts".into()));
        }
        let offline_cursor = spec
            .offline
            .as_ref()
            .filter(|_| spec.kind.needs_offline())
            .map(|d| EpochCursor::new(seed, OFFLINE_CURSOR, d.len()));
        Ok(Self {
            spec,
            batch_size,
            seed,
            offline_cursor,
            prompt_cursor: EpochCursor::new(seed, PROMPT_CURSOR, num_prompts),
        })
    }

    pub fn kind(&self) -> SourceKind {
        self.spec.kind
    }

    /// Produces the batch for training step `step`.
    pub fn next_batch(
        &mut self,
        prompts: &PromptDataset,
        student: &AutoRegressiveLM,
        teacher: &AutoRegressiveLM,
        step: u64,
    ) -> Result<(Vec<Example>, BatchOrigin)> {
        let origin = match self.spec.kind {
            SourceKind::Offline => BatchOrigin::Offline,
            SourceKind::OnlineTeacher => BatchOrigin::OnlineTeacher,
            SourceKind::OnlineStudent => BatchOrigin::OnlineStudent,
            SourceKind::Mixture { alpha } => {
                let u: f64 = stream(self.seed, &[label::BATCHES, MIX_DRAW, step]).random();
                if u < alpha {
                    BatchOrigin::Offline
                } else {
                    BatchOrigin::OnlineStudent
                }
            }
        };
        let batch = match origin {
            BatchOrigin::Offline => {
                let data = self.spec.offline.as_ref().ok_or(LabError::MissingOfflineDataset("offline"))?;
                let cursor = self.offline_cursor.as_mut().expect("cursor exists with dataset");
                cursor.take(self.batch_size).into_iter().map(|i| data.pairs[i].clone()).collect()
            }
            BatchOrigin::OnlineTeacher | BatchOrigin::OnlineStudent => {
                let model = if origin == BatchOrigin::OnlineTeacher { teacher } else { student };
                self.prompt_cursor
                    .take(self.batch_size)
                    .into_iter()
                    .enumerate()
                    .map(|(j, i)| {
                        let x = &prompts.prompts[i];
                        let mut rng = stream(self.seed, &[label::BATCHES, RESPONSES, step, j as u64]);
                        Example::new(x.clone(), model.sample_response(x, &mut rng))
                    })
                    .collect()
            }
        };
        Ok((batch, origin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ModelShape, PromptHasher};

    fn config() -> PromptConfig {
        PromptConfig {
            vocab: Vocabulary::new(4).unwrap(),
            min_len: 1,
            max_len: 3,
            zipf_exponent: 1.0,
        }
    }

    #[test]
    fn single_one_token_prompt() {
        let c = PromptConfig { min_len: 1, max_len: 1, ..config() };
        let ds = generate_prompts(&c, 1, Split::Train, 3).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.prompts[0].len(), 1);
    }

    #[test]
    fn prompts_are_deterministic() {
        let a = generate_prompts(&config(), 50, Split::Train, 9).unwrap();
        let b = generate_prompts(&config(), 50, Split::Train, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_prompts(&config(), 50, Split::Train, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn excluded_prompts_never_drawn() {
        let train = generate_prompts(&config(), 40, Split::Train, 1).unwrap();
        let seen = prompt_contents(&train);
        let val = generate_prompts_excluding(&config(), 40, Split::Validation, 2, &seen).unwrap();
        assert!(val.prompts.iter().all(|p| !seen.contains(p.tokens())));
    }

    #[test]
    fn invalid_prompt_configs() {
        let c = PromptConfig { min_len: 3, max_len: 2, ..config() };
        assert!(generate_prompts(&c, 1, Split::Train, 0).is_err());
        assert!(generate_prompts(&config(), 0, Split::Train, 0).is_err());
    }

    fn teacher() -> AutoRegressiveLM {
        let shape = ModelShape::new(Vocabulary::new(4).unwrap(), 1, 3, 4).unwrap();
        let mut m = AutoRegressiveLM::zeros(shape, PromptHasher::new(1, 1), 1.0).unwrap();
        let f = shape.feature_dim();
        m.weights_mut()[4 * f + f - 1] = 0.5;
        m
    }

    #[test]
    fn labeled_sizes_and_order() {
        let prompts = generate_prompts(&config(), 10, Split::Train, 4).unwrap();
        let one = generate_labeled(&teacher(), &prompts, 1, 5, Generator::Teacher).unwrap();
        assert_eq!(one.len(), 10);
        let three = generate_labeled(&teacher(), &prompts, 3, 5, Generator::Teacher).unwrap();
        assert_eq!(three.len(), 30);
        for (i, x) in prompts.prompts.iter().enumerate() {
            for j in 0..3 {
                assert_eq!(&three.pairs[3 * i + j].prompt, x);
            }
        }
        // (seed, i, 0) is shared between m = 1 and m = 3.
        for i in 0..10 {
            assert_eq!(one.pairs[i].response, three.pairs[3 * i].response);
        }
        assert!(generate_labeled(&teacher(), &prompts, 0, 5, Generator::Teacher).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let prompts = generate_prompts(&config(), 12, Split::Train, 4).unwrap();
        let ds = generate_labeled(&teacher(), &prompts, 2, 77, Generator::Oracle).unwrap();
        let text = ds.to_text();
        let back = LabeledDataset::from_text(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_text(), text);
        assert!(text.starts_with("vocab_size 4 seed 77 generator oracle\n"));
    }

    #[test]
    fn text_format_rejects_garbage() {
        assert!(LabeledDataset::from_text("").is_err());
        assert!(LabeledDataset::from_text("vocab_size 4 seed 1 generator alien\n").is_err());
        assert!(LabeledDataset::from_text("vocab_size 4 seed 1 generator oracle\n1 2 3\n").is_err());
        assert!(LabeledDataset::from_text("vocab_size 4 seed 1 generator oracle\n1 9\t2\n").is_err());
    }

    #[test]
    fn low_diversity_budget() {
        let prompts = generate_prompts(&config(), 10, Split::Train, 4).unwrap();
        for (k, distinct_max) in [(1, 10), (2, 5), (5, 2), (3, 4)] {
            let ds = build_low_diversity(&prompts, &teacher(), k, 8).unwrap();
            assert_eq!(ds.len(), 10, "k = {k}");
            let mut ids: Vec<usize> = Vec::new();
            for ex in &ds.pairs {
                let idx = prompts.prompts.iter().position(|p| *p == ex.prompt).unwrap();
                if !ids.contains(&idx) {
                    ids.push(idx);
                }
            }
            assert!(ids.len() <= distinct_max);
        }
        assert!(build_low_diversity(&prompts, &teacher(), 0, 8).is_err());
        assert!(build_low_diversity(&prompts, &teacher(), 11, 8).is_err());
    }

    #[test]
    fn prompt_text_round_trip() {
        let mut ds = generate_prompts(&config(), 20, Split::Validation, 6).unwrap();
        ds.prompts.push(Sequence::prompt(Vec::new()));
        let back = PromptDataset::from_text(&ds.to_text(), 4).unwrap();
        assert_eq!(back, ds);
        assert!(PromptDataset::from_text(&ds.to_text(), 2).is_err());
    }

    #[test]
    fn epoch_lengths() {
        assert_eq!(epoch_length(10, 5), 2);
        assert_eq!(epoch_length(10, 3), 4);
        assert_eq!(epoch_length(200_000, 32), 6250);
    }

    #[test]
    fn offline_batches_partition_each_epoch() {
        let prompts = generate_prompts(&config(), 10, Split::Train, 4).unwrap();
        let ds = Arc::new(generate_labeled(&teacher(), &prompts, 1, 5, Generator::Teacher).unwrap());
        let spec = DataSourceSpec {
            kind: SourceKind::Offline,
            offline: Some(ds.clone()),
        };
        let t = teacher();
        let mut sampler = BatchSampler::new(spec, prompts.len(), 5, 3).unwrap();
        let mut epochs = Vec::new();
        for e in 0..3 {
            let mut seen = Vec::new();
            for s in 0..2 {
                let (b, origin) = sampler.next_batch(&prompts, &t, &t, 2 * e + s).unwrap();
                assert_eq!(origin, BatchOrigin::Offline);
                assert_eq!(b.len(), 5);
                seen.extend(b);
            }
            let mut sorted: Vec<String> = seen.iter().map(|x| format!("{x:?}")).collect();
            sorted.sort();
            let mut all: Vec<String> = ds.pairs.iter().map(|x| format!("{x:?}")).collect();
            all.sort();
            assert_eq!(sorted, all);
            epochs.push(seen);
        }
        assert_ne!(epochs[0], epochs[1], "order reshuffled between epochs");
    }

    #[test]
    fn offline_sources_need_data() {
        for kind in [SourceKind::Offline, SourceKind::Mixture { alpha: 0.5 }] {
            let spec = DataSourceSpec { kind, offline: None };
            assert!(matches!(
                BatchSampler::new(spec, 10, 4, 0),
                Err(LabError::MissingOfflineDataset(_))
            ));
        }
        let spec = DataSourceSpec {
            kind: SourceKind::Mixture { alpha: 1.5 },
            offline: None,
        };
        assert!(BatchSampler::new(spec, 10, 4, 0).is_err());
    }
}
