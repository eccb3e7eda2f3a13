use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{rng, Rng};
use crate::task::{all_orderings, generate_item, make_variants, PermutedItem, Stem, SyntheticWorld, Variant, N_OPTIONS};

use super::config::TrainConfig;

/// An endless, seeded stream of shuffled training questions drawn from the
/// whole fact table.
pub struct TrainingStream<'w> {
    world: &'w SyntheticWorld,
    one_hop: Vec<Stem>,
    two_hop: Vec<Stem>,
    orders: Vec<[usize; N_OPTIONS]>,
    easy_fraction: f64,
    two_hop_fraction: f64,
    rng: Rng,
}

impl<'w> TrainingStream<'w> {
    pub fn new(world: &'w SyntheticWorld, config: &TrainConfig, seed: u64) -> Result<Self> {
        let (one_hop, two_hop): (Vec<Stem>, Vec<Stem>) =
            world.all_stems(2).into_iter().partition(|s| s.chain.len() == 1);
        if one_hop.is_empty() {
            return Err(Error::Empty("training stems"));
        }
        Ok(Self {
            world,
            one_hop,
            two_hop,
            orders: all_orderings(),
            easy_fraction: config.easy_fraction,
            two_hop_fraction: config.two_hop_fraction,
            rng: rng(seed),
        })
    }

    /// A question in the given variant, options in a random order.
    pub fn next_item(&mut self, variant: Variant) -> Result<PermutedItem> {
        let r = &mut self.rng;
        let pool = if !self.two_hop.is_empty() && r.random_bool(self.two_hop_fraction) {
            &self.two_hop
        } else {
            &self.one_hop
        };
        let stem = pool.choose(r).expect("non-empty pool").clone();
        let base = generate_item(self.world, &stem, 0, r)?;
        let [b, easy, none] = make_variants(&base, self.world, r)?;
        let item = match variant {
            Variant::Base => b,
            Variant::Easy => easy,
            Variant::NoCorrect => none,
        };
        let order = *self.orders.choose(r).expect("24 orders");
        Ok(PermutedItem::new(&item, order, 0))
    }

    /// A prompt and its answer token, Base or Easy per the configured mix.
    pub fn next_example(&mut self) -> Result<(Vec<usize>, usize)> {
        let variant = if self.rng.random_bool(self.easy_fraction) {
            Variant::Easy
        } else {
            Variant::Base
        };
        let item = self.next_item(variant)?;
        let target = item.options[item.correct_index.expect("answerable variant")];
        Ok((item.prompt(), target))
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Vec<(Vec<usize>, usize)>> {
        (0..size).map(|_| self.next_example()).collect()
    }
}
