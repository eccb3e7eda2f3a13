use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng, Rng};

use super::vocab::Vocab;
use super::world::{Stem, SyntheticWorld};

pub const N_OPTIONS: usize = 4;

/// Answer-set variant of a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Distractors come from the answer's own category.
    Base,
    /// Distractors come from other categories.
    Easy,
    /// Same-category distractors only; the answer is absent.
    NoCorrect,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Easy, Variant::NoCorrect];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Easy => "easy",
            Variant::NoCorrect => "no_correct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionEntry {
    pub token: usize,
    pub entity: usize,
    /// Constructed similarity between the stem and this option, in `[0, 1]`.
    pub similarity: f64,
}

/// A four-choice question in its canonical option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub stem_id: usize,
    pub variant: Variant,
    pub stem: Stem,
    pub stem_tokens: Vec<usize>,
    pub options: [OptionEntry; N_OPTIONS],
    /// `None` for [`Variant::NoCorrect`].
    pub correct_index: Option<usize>,
    /// The in-world answer token, present among the options or not.
    pub answer_token: usize,
}

impl QuestionItem {
    pub fn option_tokens(&self) -> [usize; N_OPTIONS] {
        self.options.map(|o| o.token)
    }

    pub fn similarities(&self) -> [f64; N_OPTIONS] {
        self.options.map(|o| o.similarity)
    }
}

/// Similarity of `option` to the stem whose in-world answer is `answer`:
/// half for sharing the answer's category, half for the fraction of attribute
/// values shared with the answer.
pub fn constructed_similarity(world: &SyntheticWorld, answer: usize, option: usize) -> f64 {
    let same_cat = world.entity_category[answer] == world.entity_category[option];
    let shared = world.shared_attributes(answer, option) as f64 / world.n_attributes() as f64;
    0.5 * f64::from(u8::from(same_cat)) + 0.5 * shared
}

/// Surface tokens of a stem: `attr_k of … of attr_1 of entity ?`.
pub fn stem_tokens(vocab: &Vocab, stem: &Stem) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * stem.chain.len() + 2);
    for &a in stem.chain.iter().rev() {
        out.push(vocab.attribute(a));
        out.push(Vocab::OF);
    }
    out.push(vocab.entity(stem.subject));
    out.push(Vocab::QUERY);
    out
}

/// Full prompt: stem, `(A) w (B) x (C) y (D) z`, then the answer arrow.
pub fn prompt_tokens(stem_tokens: &[usize], options: &[usize; N_OPTIONS]) -> Vec<usize> {
    let mut out = Vec::with_capacity(stem_tokens.len() + 2 * N_OPTIONS + 1);
    out.extend_from_slice(stem_tokens);
    for (slot, &o) in options.iter().enumerate() {
        out.push(Vocab::LABEL_BASE + slot);
        out.push(o);
    }
    out.push(Vocab::ARROW);
    out
}

fn entry(world: &SyntheticWorld, answer: usize, entity: usize) -> OptionEntry {
    OptionEntry {
        token: world.vocab.entity(entity),
        entity,
        similarity: constructed_similarity(world, answer, entity),
    }
}

/// A Base question for `stem`: the answer plus three distractors from the
/// answer's category, the answer placed in a random slot.
pub fn generate_item(world: &SyntheticWorld, stem: &Stem, stem_id: usize, r: &mut Rng) -> Result<QuestionItem> {
    if stem.chain.is_empty() || stem.chain.iter().any(|&a| a >= world.n_attributes()) {
        return Err(Error::Config("stem needs a valid attribute chain".into()));
    }
    let answer = world.resolve(stem.subject, &stem.chain);
    let cat = world.entity_category[answer];
    let pool: Vec<usize> = world.entities_in(cat).filter(|&e| e != answer).collect();
    if pool.len() < N_OPTIONS - 1 {
        return Err(Error::CategoryTooSmall(format!(
            "category {cat} has {} candidates for {} distractors",
            pool.len(),
            N_OPTIONS - 1
        )));
    }
    let distractors: Vec<usize> = pool.choose_multiple(r, N_OPTIONS - 1).copied().collect();
    let correct = r.random_range(0..N_OPTIONS);
    let mut d = distractors.into_iter();
    let options: [OptionEntry; N_OPTIONS] =
        std::array::from_fn(|slot| entry(world, answer, if slot == correct { answer } else { d.next().unwrap() }));
    Ok(QuestionItem {
        stem_id,
        variant: Variant::Base,
        stem: stem.clone(),
        stem_tokens: stem_tokens(&world.vocab, stem),
        options,
        correct_index: Some(correct),
        answer_token: world.vocab.entity(answer),
    })
}

/// The Base item plus its Easy and NoCorrect counterparts. Stems are shared;
/// Easy swaps every distractor for an entity of another category, NoCorrect
/// swaps the answer for one more same-category distractor.
pub fn make_variants(base: &QuestionItem, world: &SyntheticWorld, r: &mut Rng) -> Result<[QuestionItem; 3]> {
    let correct = base
        .correct_index
        .filter(|_| base.variant == Variant::Base)
        .ok_or_else(|| Error::Config("make_variants needs a Base item".into()))?;
    let answer = base.options[correct].entity;
    let cat = world.entity_category[answer];

    let foreign: Vec<usize> = (0..world.n_entities())
        .filter(|&e| world.entity_category[e] != cat)
        .collect();
    let mut picks = foreign.choose_multiple(r, N_OPTIONS - 1).copied();
    let mut easy = base.clone();
    easy.variant = Variant::Easy;
    for (slot, opt) in easy.options.iter_mut().enumerate() {
        if slot != correct {
            *opt = entry(world, answer, picks.next().expect("enough foreign entities"));
        }
    }

    let used: Vec<usize> = base.options.iter().map(|o| o.entity).collect();
    let spare: Vec<usize> = world.entities_in(cat).filter(|e| !used.contains(e)).collect();
    let extra = *spare.choose(r).ok_or_else(|| {
        Error::CategoryTooSmall(format!("category {cat} has no spare distractor for the no-correct variant"))
    })?;
    let mut none = base.clone();
    none.variant = Variant::NoCorrect;
    none.options[correct] = entry(world, answer, extra);
    none.correct_index = None;

    Ok([base.clone(), easy, none])
}

/// All 24 orderings of four slots in lexicographic order.
pub fn all_orderings() -> Vec<[usize; N_OPTIONS]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let mut seen = [false; 4];
                    if p.iter().all(|&x| !std::mem::replace(&mut seen[x], true)) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// A question shown with its options reordered: slot `j` holds canonical
/// option `permutation[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutedItem {
    pub stem_id: usize,
    pub variant: Variant,
    pub perm_index: usize,
    pub permutation: [usize; N_OPTIONS],
    pub stem_tokens: Vec<usize>,
    pub options: [usize; N_OPTIONS],
    pub correct_index: Option<usize>,
}

impl PermutedItem {
    pub fn new(item: &QuestionItem, permutation: [usize; N_OPTIONS], perm_index: usize) -> Self {
        let canon = item.option_tokens();
        let options = permutation.map(|src| canon[src]);
        let correct_index = item
            .correct_index
            .map(|c| permutation.iter().position(|&src| src == c).expect("bijection"));
        Self {
            stem_id: item.stem_id,
            variant: item.variant,
            perm_index,
            permutation,
            stem_tokens: item.stem_tokens.clone(),
            options,
            correct_index,
        }
    }

    pub fn prompt(&self) -> Vec<usize> {
        prompt_tokens(&self.stem_tokens, &self.options)
    }

    /// Canonical option index shown in `slot`.
    pub fn canonical_index(&self, slot: usize) -> usize {
        self.permutation[slot]
    }

    /// Options put back into canonical order.
    pub fn canonical_options(&self) -> [usize; N_OPTIONS] {
        let mut out = [0; N_OPTIONS];
        for (slot, &src) in self.permutation.iter().enumerate() {
            out[src] = self.options[slot];
        }
        out
    }
}

/// Option orders drawn uniformly with replacement from the 24 orderings.
/// Deterministic in `seed`.
pub fn sample_permutations(seed: u64, n: usize) -> Vec<[usize; N_OPTIONS]> {
    let orders = all_orderings();
    let mut r = rng(seed);
    (0..n).map(|_| orders[r.random_range(0..orders.len())]).collect()
}

pub fn permute_options(item: &QuestionItem, seed: u64, n_permutations: usize) -> Result<Vec<PermutedItem>> {
    if n_permutations == 0 {
        return Err(Error::Config("need at least one permutation".into()));
    }
    Ok(sample_permutations(seed, n_permutations)
        .into_iter()
        .enumerate()
        .map(|(i, p)| PermutedItem::new(item, p, i))
        .collect())
}

/// Benchmark size and composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_stems: usize,
    /// Fraction of stems that compose two attributes.
    pub two_hop_fraction: f64,
    pub n_permutations: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_stems: 260,
            two_hop_fraction: 0.6,
            n_permutations: 25,
        }
    }
}

/// Every stem in three variants plus a shared permutation table per stem.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    /// Ordered by stem id, then [`Variant::ALL`] order.
    pub items: Vec<QuestionItem>,
    /// `permutations[stem_id]`, shared by the three variants of a stem.
    pub permutations: Vec<Vec<[usize; N_OPTIONS]>>,
}

/// Samples distinct stems (the requested share of them two-hop), builds the
/// three variants of each, and draws the option orders.
pub fn generate_benchmark(world: &SyntheticWorld, config: &BenchmarkConfig, seed: u64) -> Result<Benchmark> {
    if !(0.0..=1.0).contains(&config.two_hop_fraction) {
        return Err(Error::Config("two_hop_fraction must lie in [0, 1]".into()));
    }
    if config.n_permutations == 0 || config.n_stems == 0 {
        return Err(Error::Config("benchmark needs stems and permutations".into()));
    }
    let mut r = rng(derive_seed(seed, "stems"));
    let n_two = (config.n_stems as f64 * config.two_hop_fraction).round() as usize;
    let n_one = config.n_stems - n_two;
    let all = world.all_stems(2);
    let (one_hop, two_hop): (Vec<Stem>, Vec<Stem>) = all.into_iter().partition(|s| s.chain.len() == 1);
    if n_one > one_hop.len() || n_two > two_hop.len() {
        return Err(Error::Config(format!(
            "world supports {} one-hop and {} two-hop stems; asked for {n_one} and {n_two}",
            one_hop.len(),
            two_hop.len()
        )));
    }
    let mut stems: Vec<Stem> = one_hop.choose_multiple(&mut r, n_one).cloned().collect();
    stems.extend(two_hop.choose_multiple(&mut r, n_two).cloned());
    stems.shuffle(&mut r);

    let mut items = Vec::with_capacity(3 * stems.len());
    let mut permutations = Vec::with_capacity(stems.len());
    for (id, stem) in stems.iter().enumerate() {
        let mut ir = rng(derive_seed(seed, &format!("item-{id}")));
        let base = generate_item(world, stem, id, &mut ir)?;
        items.extend(make_variants(&base, world, &mut ir)?);
        permutations.push(sample_permutations(
            derive_seed(seed, &format!("perm-{id}")),
            config.n_permutations,
        ));
    }
    Ok(Benchmark { items, permutations })
}

impl Benchmark {
    pub fn n_stems(&self) -> usize {
        self.permutations.len()
    }

    pub fn items_of(&self, variant: Variant) -> impl Iterator<Item = &QuestionItem> {
        self.items.iter().filter(move |i| i.variant == variant)
    }

    pub fn item(&self, stem_id: usize, variant: Variant) -> Option<&QuestionItem> {
        let idx = stem_id * 3 + Variant::ALL.iter().position(|&v| v == variant)?;
        self.items.get(idx).filter(|i| i.stem_id == stem_id && i.variant == variant)
    }

    /// Every (item, permutation) pair in (stem, variant, permutation) order.
    pub fn permuted(&self) -> Vec<PermutedItem> {
        self.items
            .iter()
            .flat_map(|item| {
                self.permutations[item.stem_id]
                    .iter()
                    .enumerate()
                    .map(move |(i, &p)| PermutedItem::new(item, p, i))
            })
            .collect()
    }
}

/// One line of the benchmark export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    #[serde(flatten)]
    pub item: QuestionItem,
    pub permutations: Vec<[usize; N_OPTIONS]>,
}

/// JSONL, one item per line with its permutation table.
pub fn benchmark_jsonl(bench: &Benchmark) -> Result<String> {
    let mut out = String::new();
    for item in &bench.items {
        let rec = BenchmarkRecord {
            item: item.clone(),
            permutations: bench.permutations[item.stem_id].clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_benchmark_jsonl(text: &str) -> Result<Benchmark> {
    let mut items = Vec::new();
    let mut permutations: Vec<Vec<[usize; N_OPTIONS]>> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: BenchmarkRecord =
            serde_json::from_str(line).map_err(|e| Error::Serde(format!("benchmark line {}: {e}", n + 1)))?;
        let id = rec.item.stem_id;
        if permutations.len() <= id {
            permutations.resize(id + 1, Vec::new());
        }
        permutations[id] = rec.permutations;
        items.push(rec.item);
    }
    Ok(Benchmark { items, permutations })
}
