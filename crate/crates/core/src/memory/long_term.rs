use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FeatureVector, FrameAnnotation, TokenGrid};
use crate::vector::{concat, cosine_similarity, pool_to, pooled_feature};

/// A stored frame, possibly compressed or merged with its neighbour.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryItem {
    /// First frame covered by this item.
    pub timestamp: u64,
    /// Last frame covered; equals `timestamp` unless the item is a merge.
    pub end_timestamp: u64,
    pub tokens: TokenGrid,
    pub surprise: f64,
    /// Tokens were downsampled (by compression or by a merge).
    pub compressed: bool,
    pub annotation: FrameAnnotation,
    pooled: FeatureVector,
}

impl MemoryItem {
    pub fn new(timestamp: u64, tokens: TokenGrid, surprise: f64, compressed: bool, annotation: FrameAnnotation) -> Self {
        let pooled = pooled_feature(&tokens);
        Self {
            timestamp,
            end_timestamp: timestamp,
            tokens,
            surprise: surprise.max(0.0),
            compressed,
            annotation,
            pooled,
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Cached mean token, used as the retrieval key.
    pub fn pooled(&self) -> &FeatureVector {
        &self.pooled
    }

    /// Merges two timestamp-adjacent items (`self` first). Tokens are
    /// concatenated and pooled back to the larger of the two counts, the
    /// surprise is the pair maximum, and annotations are unioned. If both
    /// carry a needle, the more surprising item's needle is kept.
    pub fn merge(&self, later: &MemoryItem) -> Result<MemoryItem> {
        let target = self.token_count().max(later.token_count());
        let tokens = pool_to(&concat(&self.tokens, &later.tokens)?, target)?;
        let mut objects = self.annotation.objects.clone();
        for o in &later.annotation.objects {
            if !objects.iter().any(|x| x.id == o.id) {
                objects.push(o.clone());
            }
        }
        let (hi, lo) = if later.surprise > self.surprise { (later, self) } else { (self, later) };
        let annotation = FrameAnnotation {
            scene_id: self.annotation.scene_id,
            objects,
            needle: hi.annotation.needle.clone().or_else(|| lo.annotation.needle.clone()),
        };
        let mut item = MemoryItem::new(self.timestamp, tokens, self.surprise.max(later.surprise), true, annotation);
        item.end_timestamp = later.end_timestamp;
        Ok(item)
    }
}

/// Budget enforcement policy for [`LongTermMemory`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsolidationStrategy {
    ForgetOldest,
    #[default]
    ForgetLeastSurprise,
    ForgetLeastSurpriseMergeAdjacent,
}

/// Query-time retrieval result, in timestamp order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkingMemory {
    pub items: Vec<MemoryItem>,
    pub k: usize,
}

/// Timestamp-ordered store bounded by a token budget.
#[derive(Clone, Debug)]
pub struct LongTermMemory {
    items: Vec<MemoryItem>,
    token_budget: usize,
    strategy: ConsolidationStrategy,
    tokens: usize,
}

impl LongTermMemory {
    pub fn new(token_budget: usize, strategy: ConsolidationStrategy) -> Self {
        Self {
            items: Vec::new(),
            token_budget,
            strategy,
            tokens: 0,
        }
    }

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn token_total(&self) -> usize {
        self.tokens
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    pub fn strategy(&self) -> ConsolidationStrategy {
        self.strategy
    }

    pub fn over_budget(&self) -> bool {
        self.tokens > self.token_budget
    }

    /// Appends an item after the newest one; does not enforce the budget.
    pub fn push(&mut self, item: MemoryItem) -> Result<()> {
        if let Some(last) = self.items.last() {
            if item.timestamp <= last.end_timestamp {
                return Err(Error::OutOfOrder {
                    expected: last.end_timestamp + 1,
                    actual: item.timestamp,
                });
            }
        }
        self.tokens += item.token_count();
        self.items.push(item);
        Ok(())
    }

    fn least_surprising(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, it) in self.items.iter().enumerate() {
            if best.is_none_or(|b| it.surprise < self.items[b].surprise) {
                best = Some(i);
            }
        }
        best
    }

    fn remove(&mut self, i: usize) {
        let it = self.items.remove(i);
        self.tokens -= it.token_count();
    }

    /// Applies the strategy until the token total fits the budget. Returns the
    /// number of eviction or merge steps taken.
    pub fn consolidate(&mut self) -> Result<usize> {
        if let Some(big) = self.items.iter().map(MemoryItem::token_count).max() {
            if big > self.token_budget {
                return Err(Error::BudgetUnsatisfiable {
                    budget: self.token_budget,
                    tokens: big,
                });
            }
        }
        let mut steps = 0;
        while self.over_budget() {
            match self.strategy {
                ConsolidationStrategy::ForgetOldest => self.remove(0),
                ConsolidationStrategy::ForgetLeastSurprise => {
                    let i = self.least_surprising().expect("over budget implies non-empty");
                    self.remove(i);
                }
                ConsolidationStrategy::ForgetLeastSurpriseMergeAdjacent => {
                    let i = self.least_surprising().expect("over budget implies non-empty");
                    self.merge_or_drop(i)?;
                }
            }
            steps += 1;
        }
        Ok(steps)
    }

    fn merge_or_drop(&mut self, i: usize) -> Result<()> {
        let adjacent = |a: &MemoryItem, b: &MemoryItem| a.end_timestamp + 1 == b.timestamp;
        let left = (i > 0 && adjacent(&self.items[i - 1], &self.items[i])).then(|| i - 1);
        let right = (i + 1 < self.items.len() && adjacent(&self.items[i], &self.items[i + 1])).then_some(i + 1);
        let partner = match (left, right) {
            (Some(l), Some(r)) => Some(if self.items[r].surprise < self.items[l].surprise { r } else { l }),
            (l, r) => l.or(r),
        };
        match partner {
            None => self.remove(i),
            Some(j) => {
                let (a, b) = (i.min(j), i.max(j));
                let merged = self.items[a].merge(&self.items[b])?;
                self.tokens -= self.items[a].token_count() + self.items[b].token_count();
                self.tokens += merged.token_count();
                self.items[a] = merged;
                self.items.remove(b);
            }
        }
        Ok(())
    }

    /// Top-`k` items by cosine similarity between `query` and each item's
    /// pooled feature, returned in timestamp order. Ties prefer the earlier item.
    pub fn retrieve(&self, query: &FeatureVector, k: usize) -> Result<WorkingMemory> {
        retrieve_top_k(self.items.iter(), query, k)
    }
}

pub(crate) fn retrieve_top_k<'a>(
    items: impl Iterator<Item = &'a MemoryItem>,
    query: &FeatureVector,
    k: usize,
) -> Result<WorkingMemory> {
    if k == 0 {
        return Err(Error::InvalidInput("retrieval needs k >= 1".into()));
    }
    let mut scored = Vec::new();
    for it in items {
        let s = cosine_similarity(query.as_slice(), it.pooled().as_slice())?;
        scored.push((s, it));
    }
    scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.timestamp.cmp(&b.1.timestamp),
        o => o,
    });
    let mut items: Vec<MemoryItem> = scored.into_iter().take(k).map(|(_, it)| it.clone()).collect();
    items.sort_by_key(|it| it.timestamp);
    Ok(WorkingMemory { items, k })
}
