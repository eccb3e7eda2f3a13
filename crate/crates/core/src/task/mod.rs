//! Synthetic four-choice QA: a world of categorized entities with a fact
//! table, questions over one- and two-hop fact chains, the Base/Easy/NoCorrect
//! answer-set variants, and answer-order permutations.

mod items;
mod vocab;
mod world;

pub use items::{
    all_orderings, benchmark_jsonl, constructed_similarity, generate_benchmark, generate_item, make_variants,
    parse_benchmark_jsonl, permute_options, prompt_tokens, sample_permutations, stem_tokens, Benchmark,
    BenchmarkConfig, BenchmarkRecord, OptionEntry, PermutedItem, QuestionItem, Variant, N_OPTIONS,
};
pub use vocab::Vocab;
pub use world::{build_world, Stem, SyntheticWorld, WorldConfig};
