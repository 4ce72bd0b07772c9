use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;

use super::config::AdversaryStrategy;
use crate::NodeId;

/// A message of a batch that the adversary may drop: a non-empty slot
/// addressed to a correct node other than the batch's sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    /// Position of the message in its batch.
    pub slot: usize,
    pub to: NodeId,
    pub weight: u8,
}

#[derive(Debug, Clone)]
pub struct Adversary {
    strategy: AdversaryStrategy,
    d: usize,
    victims: BTreeSet<NodeId>,
    rng: ChaCha8Rng,
}

impl Adversary {
    /// `eligible` lists the correct nodes other than the sender, in id order.
    /// `explicit` overrides the victim set of the fixed-set and
    /// adaptive-isolate strategies.
    pub fn new(
        strategy: AdversaryStrategy,
        d: usize,
        eligible: &[NodeId],
        explicit: &[NodeId],
        mut rng: ChaCha8Rng,
    ) -> Self {
        let victims = if !explicit.is_empty() {
            explicit.iter().copied().collect()
        } else {
            match strategy {
                AdversaryStrategy::Random => BTreeSet::new(),
                AdversaryStrategy::FixedSet => eligible.iter().rev().take(d).copied().collect(),
                AdversaryStrategy::AdaptiveIsolate => {
                    eligible.choose_multiple(&mut rng, d).copied().collect()
                }
            }
        };
        Self { strategy, d, victims, rng }
    }

    pub fn victims(&self) -> &BTreeSet<NodeId> {
        &self.victims
    }

    /// Picks at most `d` candidates to drop, returned as positions into
    /// `candidates`.
    pub fn select_drops(&mut self, candidates: &[Candidate]) -> Vec<usize> {
        let budget = self.d.min(candidates.len());
        if budget == 0 {
            return Vec::new();
        }
        let mut picked: Vec<usize> = match self.strategy {
            AdversaryStrategy::Random => index::sample(&mut self.rng, candidates.len(), budget).into_vec(),
            AdversaryStrategy::FixedSet => self.on_victims(candidates).take(budget).collect(),
            AdversaryStrategy::AdaptiveIsolate => {
                let mut picked: Vec<usize> = self.on_victims(candidates).take(budget).collect();
                let mut rest: Vec<usize> = (0..candidates.len()).filter(|i| !picked.contains(i)).collect();
                rest.shuffle(&mut self.rng);
                rest.sort_by_key(|&i| std::cmp::Reverse(candidates[i].weight));
                let room = budget - picked.len();
                picked.extend(rest.into_iter().take(room));
                picked
            }
        };
        picked.sort_unstable();
        picked
    }

    fn on_victims<'a>(&'a self, candidates: &'a [Candidate]) -> impl Iterator<Item = usize> + 'a {
        candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| self.victims.contains(&c.to))
            .map(|(i, _)| i)
    }
}
