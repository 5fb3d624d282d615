use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::FrameAnnotation;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallAnswer {
    pub option: usize,
    /// No needle was found; `option` is the fallback 0.
    pub no_evidence: bool,
    /// Needle locations recovered from memory, in timestamp order.
    pub recovered: Vec<String>,
}

/// Locations of `label` needles, ordered by frame timestamp.
pub fn recovered_sequence<'a>(frames: impl IntoIterator<Item = (u64, &'a FrameAnnotation)>, label: &str) -> Vec<String> {
    let mut hits: Vec<(u64, &str)> = frames
        .into_iter()
        .filter_map(|(ts, a)| a.needle.as_ref().filter(|n| n.label == label).map(|n| (ts, n.location.as_str())))
        .collect();
    hits.sort_by_key(|h| h.0);
    hits.into_iter().map(|(_, l)| l.to_string()).collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Picks the option equal to `recovered`, else the one with the longest
/// common subsequence; ties go to the lowest index.
pub fn match_option(recovered: Vec<String>, options: &[Vec<String>]) -> Result<RecallAnswer> {
    if options.is_empty() {
        return Err(Error::InvalidInput("recall question has no candidate options".into()));
    }
    if recovered.is_empty() {
        return Ok(RecallAnswer {
            option: 0,
            no_evidence: true,
            recovered,
        });
    }
    let option = match options.iter().position(|o| *o == recovered) {
        Some(i) => i,
        None => {
            let mut best = (0, 0);
            for (i, o) in options.iter().enumerate() {
                let l = lcs_len(&recovered, o);
                if l > best.1 {
                    best = (i, l);
                }
            }
            best.0
        }
    };
    Ok(RecallAnswer {
        option,
        no_evidence: false,
        recovered,
    })
}
