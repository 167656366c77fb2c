use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConvPair, StyleSentence};
use crate::error::{Error, Result};

/// Positive-to-negative example ratio for discriminator training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegativeRatio {
    pub positive: usize,
    pub negative: usize,
}

impl Default for NegativeRatio {
    fn default() -> Self {
        NegativeRatio {
            positive: 1,
            negative: 5,
        }
    }
}

impl NegativeRatio {
    pub fn negatives_for(&self, positives: usize) -> usize {
        positives * self.negative / self.positive
    }
}

/// Endless stream of shuffled `(tokens, is_style)` batches.
///
/// Every epoch uses each style sentence once plus the matching number of
/// conversation responses. Responses are drawn without replacement from a
/// shuffled pool that is reshuffled once exhausted, so the pool carries over
/// between epochs.
pub struct LabeledBatches<'a> {
    positives: Vec<&'a [usize]>,
    negatives: Vec<&'a [usize]>,
    ratio: NegativeRatio,
    batch_size: usize,
    rng: ChaCha8Rng,
    neg_order: Vec<usize>,
    neg_cursor: usize,
    epoch: Vec<(&'a [usize], bool)>,
    cursor: usize,
    epochs_started: usize,
}

pub fn negative_sample_batches<'a>(
    style: &'a [StyleSentence],
    conv: &'a [ConvPair],
    ratio: NegativeRatio,
    batch_size: usize,
    seed: u64,
) -> Result<LabeledBatches<'a>> {
    if style.is_empty() {
        return Err(Error::Data("discriminator needs a non-empty style corpus".into()));
    }
    if conv.is_empty() {
        return Err(Error::Data(
            "discriminator needs a non-empty conversation corpus".into(),
        ));
    }
    if ratio.positive == 0 || batch_size == 0 {
        return Err(Error::Config("ratio and batch size must be positive".into()));
    }
    let negatives: Vec<&[usize]> = conv.iter().map(|p| p.response()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neg_order: Vec<usize> = (0..negatives.len()).collect();
    neg_order.shuffle(&mut rng);
    Ok(LabeledBatches {
        positives: style.iter().map(StyleSentence::tokens).collect(),
        negatives,
        ratio,
        batch_size,
        rng,
        neg_order,
        neg_cursor: 0,
        epoch: Vec::new(),
        cursor: 0,
        epochs_started: 0,
    })
}

impl<'a> LabeledBatches<'a> {
    pub fn epochs_started(&self) -> usize {
        self.epochs_started
    }

    fn next_negative(&mut self) -> &'a [usize] {
        if self.neg_cursor == self.neg_order.len() {
            self.neg_order.shuffle(&mut self.rng);
            self.neg_cursor = 0;
        }
        let i = self.neg_order[self.neg_cursor];
        self.neg_cursor += 1;
        self.negatives[i]
    }

    fn start_epoch(&mut self) {
        let n_neg = self.ratio.negatives_for(self.positives.len());
        let mut epoch: Vec<(&'a [usize], bool)> = self.positives.iter().map(|&p| (p, true)).collect();
        for _ in 0..n_neg {
            let n = self.next_negative();
            epoch.push((n, false));
        }
        epoch.shuffle(&mut self.rng);
        self.epoch = epoch;
        self.cursor = 0;
        self.epochs_started += 1;
    }
}

impl<'a> Iterator for LabeledBatches<'a> {
    type Item = Vec<(&'a [usize], bool)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.epoch.len() {
            self.start_epoch();
        }
        let end = (self.cursor + self.batch_size).min(self.epoch.len());
        let batch = self.epoch[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}
