use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ItemId, Outfit};
use crate::error::{Error, Result};

/// A positive outfit and its one-item corruption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatPair {
    pub positive: Outfit,
    pub negative: Outfit,
    pub replaced_position: usize,
}

/// A partial outfit plus four candidate completions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitbQuestion {
    pub set_id: String,
    /// The outfit's items with the masked one removed.
    pub partial: Vec<ItemId>,
    pub masked_position: usize,
    pub choices: [ItemId; 4],
    pub answer_index: usize,
}

impl FitbQuestion {
    /// Items of the outfit completed with `choices[choice]` at the masked slot.
    pub fn completed(&self, choice: usize) -> Vec<ItemId> {
        let mut items = self.partial.clone();
        items.insert(self.masked_position, self.choices[choice].clone());
        items
    }
}

const REJECTION_TRIES: usize = 64;

/// Draws one corpus item uniformly among those passing `accept`.
///
/// Rejection sampling first; a full scan afterwards keeps the draw uniform
/// and detects exhaustion.
fn draw_candidate<R: Rng>(
    corpus: &[ItemId],
    rng: &mut R,
    accept: &dyn Fn(&str) -> bool,
) -> Option<ItemId> {
    if corpus.is_empty() {
        return None;
    }
    for _ in 0..REJECTION_TRIES {
        let candidate = &corpus[rng.random_range(0..corpus.len())];
        if accept(candidate) {
            return Some(candidate.clone());
        }
    }
    let candidates: Vec<&ItemId> = corpus.iter().filter(|id| accept(id)).collect();
    candidates.choose(rng).map(|id| (*id).clone())
}

/// Replaces one uniformly chosen position with a uniformly chosen corpus item
/// that is not already in the outfit.
pub fn sample_negative_outfit<R: Rng>(
    outfit: &Outfit,
    corpus: &[ItemId],
    rng: &mut R,
) -> Result<CompatPair> {
    sample_negative_outfit_with(outfit, corpus, rng, |_| true)
}

/// As [`sample_negative_outfit`], restricting replacements to items passing
/// `accept`.
pub fn sample_negative_outfit_with<R: Rng, F: Fn(&str) -> bool>(
    outfit: &Outfit,
    corpus: &[ItemId],
    rng: &mut R,
    accept: F,
) -> Result<CompatPair> {
    if outfit.is_empty() {
        return Err(Error::Sampling(format!(
            "outfit `{}` is empty",
            outfit.set_id
        )));
    }
    let members: HashSet<&str> = outfit.items.iter().map(String::as_str).collect();
    let position = rng.random_range(0..outfit.len());
    let replacement = draw_candidate(corpus, rng, &|id| !members.contains(id) && accept(id))
        .ok_or_else(|| {
            Error::Sampling(format!(
                "no replacement candidates for outfit `{}`",
                outfit.set_id
            ))
        })?;
    let mut negative = outfit.clone();
    negative.set_id = format!("{}_neg", outfit.set_id);
    negative.items[position] = replacement;
    Ok(CompatPair {
        positive: outfit.clone(),
        negative,
        replaced_position: position,
    })
}

/// One corrupted copy per outfit, drawn in order from a single seeded stream.
pub fn build_compat_pairs(
    outfits: &[Outfit],
    corpus: &[ItemId],
    seed: u64,
) -> Result<Vec<CompatPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    outfits
        .iter()
        .map(|outfit| sample_negative_outfit(outfit, corpus, &mut rng))
        .collect()
}

/// One question per outfit: a uniformly masked position, three distinct
/// corpus negatives outside the outfit, and a shuffled answer slot.
pub fn build_fitb_questions(
    outfits: &[Outfit],
    corpus: &[ItemId],
    seed: u64,
) -> Result<Vec<FitbQuestion>> {
    build_fitb_questions_with(outfits, corpus, seed, |_, _| true)
}

/// As [`build_fitb_questions`], with negatives further restricted by
/// `accept(outfit, candidate)`.
pub fn build_fitb_questions_with<F: Fn(&Outfit, &str) -> bool>(
    outfits: &[Outfit],
    corpus: &[ItemId],
    seed: u64,
    accept: F,
) -> Result<Vec<FitbQuestion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut questions = Vec::with_capacity(outfits.len());
    for outfit in outfits {
        if outfit.len() < 3 {
            return Err(Error::Argument(format!(
                "outfit `{}` has {} items; FITB needs at least 3",
                outfit.set_id,
                outfit.len()
            )));
        }
        let members: HashSet<&str> = outfit.items.iter().map(String::as_str).collect();
        let masked_position = rng.random_range(0..outfit.len());
        let mut negatives: Vec<ItemId> = Vec::with_capacity(3);
        while negatives.len() < 3 {
            let pick = draw_candidate(corpus, &mut rng, &|id| {
                !members.contains(id) && !negatives.iter().any(|n| n == id) && accept(outfit, id)
            })
            .ok_or_else(|| {
                Error::Sampling(format!(
                    "corpus too small for 3 distinct negatives for outfit `{}`",
                    outfit.set_id
                ))
            })?;
            negatives.push(pick);
        }
        let answer_index = rng.random_range(0..4);
        let mut partial = outfit.items.clone();
        let answer = partial.remove(masked_position);
        negatives.insert(answer_index, answer);
        let choices: [ItemId; 4] = negatives.try_into().expect("four choices");
        questions.push(FitbQuestion {
            set_id: outfit.set_id.clone(),
            partial,
            masked_position,
            choices,
            answer_index,
        });
    }
    Ok(questions)
}
