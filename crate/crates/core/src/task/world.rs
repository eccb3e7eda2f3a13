use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng;

use super::vocab::Vocab;

/// Parameters of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_categories: usize,
    pub entities_per_category: usize,
    pub n_attributes: usize,
    /// Latent prototypes per category. Entities copy their prototype's
    /// attribute values with probability `prototype_fidelity`, which makes some
    /// same-category entities much closer than others.
    pub prototypes_per_category: usize,
    pub prototype_fidelity: f64,
    /// Largest vocabulary the world may occupy.
    pub vocab_budget: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_categories: 4,
            entities_per_category: 8,
            n_attributes: 4,
            prototypes_per_category: 2,
            prototype_fidelity: 0.6,
            vocab_budget: 64,
        }
    }
}

/// Categories of entities and a total fact table `(entity, attribute) → entity`.
///
/// Attribute `a` always points into category `target_category[a]`, so every
/// question built from the table has exactly one in-world answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub vocab: Vocab,
    /// Category of every entity, indexed by entity number.
    pub entity_category: Vec<usize>,
    pub target_category: Vec<usize>,
    /// `facts[entity][attribute]` is an entity number.
    pub facts: Vec<Vec<usize>>,
}

/// Builds a world. Deterministic in `seed`.
pub fn build_world(seed: u64, config: &WorldConfig) -> Result<SyntheticWorld> {
    let WorldConfig {
        n_categories,
        entities_per_category,
        n_attributes,
        prototypes_per_category,
        prototype_fidelity,
        vocab_budget,
    } = *config;
    if n_categories < 2 || entities_per_category < 2 || n_attributes < 2 {
        return Err(Error::Config(
            "categories, entities per category and attributes must each be at least 2".into(),
        ));
    }
    if prototypes_per_category == 0 || !(0.0..=1.0).contains(&prototype_fidelity) {
        return Err(Error::Config("prototype settings out of range".into()));
    }
    let vocab = Vocab::new(n_attributes, n_categories * entities_per_category);
    if vocab.size() > vocab_budget {
        return Err(Error::VocabBudget {
            needed: vocab.size(),
            budget: vocab_budget,
        });
    }

    let mut r = rng(seed);
    let n_entities = n_categories * entities_per_category;
    let entity_category: Vec<usize> = (0..n_entities).map(|e| e / entities_per_category).collect();

    let mut cats: Vec<usize> = (0..n_categories).collect();
    cats.shuffle(&mut r);
    let target_category: Vec<usize> = (0..n_attributes).map(|a| cats[a % n_categories]).collect();

    let random_in = |cat: usize, r: &mut crate::seed::Rng| cat * entities_per_category + r.random_range(0..entities_per_category);

    // prototypes[cat][p][a]
    let prototypes: Vec<Vec<Vec<usize>>> = (0..n_categories)
        .map(|_| {
            (0..prototypes_per_category)
                .map(|_| target_category.iter().map(|&t| random_in(t, &mut r)).collect())
                .collect()
        })
        .collect();

    let mut facts = Vec::with_capacity(n_entities);
    for &cat in &entity_category {
        let proto = &prototypes[cat][r.random_range(0..prototypes_per_category)];
        let row = (0..n_attributes)
            .map(|a| {
                if r.random_bool(prototype_fidelity) {
                    proto[a]
                } else {
                    random_in(target_category[a], &mut r)
                }
            })
            .collect();
        facts.push(row);
    }

    Ok(SyntheticWorld {
        config: config.clone(),
        seed,
        vocab,
        entity_category,
        target_category,
        facts,
    })
}

impl SyntheticWorld {
    pub fn n_entities(&self) -> usize {
        self.entity_category.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.target_category.len()
    }

    pub fn n_facts(&self) -> usize {
        self.facts.iter().map(Vec::len).sum()
    }

    pub fn entities_in(&self, category: usize) -> impl Iterator<Item = usize> + '_ {
        let per = self.config.entities_per_category;
        category * per..(category + 1) * per
    }

    /// Follows `chain` (innermost attribute first) starting at `subject`.
    pub fn resolve(&self, subject: usize, chain: &[usize]) -> usize {
        chain.iter().fold(subject, |e, &a| self.facts[e][a])
    }

    /// Category that answers to `chain` fall into.
    pub fn answer_category(&self, chain: &[usize]) -> usize {
        self.target_category[*chain.last().expect("non-empty chain")]
    }

    /// Number of attributes on which two entities agree.
    pub fn shared_attributes(&self, a: usize, b: usize) -> usize {
        self.facts[a].iter().zip(&self.facts[b]).filter(|(x, y)| x == y).count()
    }

    /// Every stem the world supports with at most `max_hops` attributes, in a
    /// fixed order (hops, subject, chain).
    pub fn all_stems(&self, max_hops: usize) -> Vec<Stem> {
        let mut out = Vec::new();
        let n_attr = self.n_attributes();
        for hops in 1..=max_hops {
            for subject in 0..self.n_entities() {
                let mut chain = vec![0; hops];
                loop {
                    out.push(Stem {
                        subject,
                        chain: chain.clone(),
                    });
                    // odometer over attribute chains
                    let mut i = 0;
                    while i < hops {
                        chain[i] += 1;
                        if chain[i] < n_attr {
                            break;
                        }
                        chain[i] = 0;
                        i += 1;
                    }
                    if i == hops {
                        break;
                    }
                }
            }
        }
        out
    }

    /// Distinct categories other than `cat`.
    pub fn other_categories(&self, cat: usize) -> BTreeSet<usize> {
        (0..self.config.n_categories).filter(|&c| c != cat).collect()
    }
}

/// A question before options are attached: the subject entity and the
/// attribute chain applied to it, innermost first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stem {
    pub subject: usize,
    pub chain: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let c = WorldConfig::default();
        assert_eq!(build_world(3, &c).unwrap(), build_world(3, &c).unwrap());
        assert_ne!(build_world(3, &c).unwrap().facts, build_world(4, &c).unwrap().facts);
    }

    #[test]
    fn counts() {
        let w = build_world(0, &WorldConfig::default()).unwrap();
        assert_eq!(w.n_entities(), 32);
        assert_eq!(w.n_facts(), 128);
    }

    #[test]
    fn facts_land_in_target_category() {
        let w = build_world(9, &WorldConfig::default()).unwrap();
        for row in &w.facts {
            for (a, &v) in row.iter().enumerate() {
                assert_eq!(w.entity_category[v], w.target_category[a]);
            }
        }
    }

    #[test]
    fn vocab_budget_enforced() {
        let c = WorldConfig {
            vocab_budget: 20,
            ..Default::default()
        };
        assert!(matches!(build_world(0, &c), Err(Error::VocabBudget { .. })));
    }

    #[test]
    fn tiny_counts_rejected() {
        let c = WorldConfig {
            n_categories: 1,
            ..Default::default()
        };
        assert!(matches!(build_world(0, &c), Err(Error::Config(_))));
    }

    #[test]
    fn stem_enumeration_size() {
        let w = build_world(0, &WorldConfig::default()).unwrap();
        assert_eq!(w.all_stems(1).len(), 128);
        assert_eq!(w.all_stems(2).len(), 128 + 512);
    }
}
