//! Vector math over `f32` storage with `f64` accumulation.

use crate::error::{Error, Result};
use crate::types::{FeatureVector, TokenGrid};

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Cosine similarity in `[-1, 1]`. Errors on a zero vector or a length mismatch.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (aa, bb) = (sq_norm(a), sq_norm(b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt(aa * bb) rather than |a||b| so that a == b yields exactly 1.
    Ok((dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Mean per-token cosine distance between two congruent grids.
pub fn grid_surprise(pred: &TokenGrid, actual: &TokenGrid) -> Result<f64> {
    pred.check_shape(actual)?;
    let mut total = 0.0;
    for (p, a) in pred.tokens().zip(actual.tokens()) {
        total += cosine_distance(p, a)?;
    }
    Ok(total / pred.len() as f64)
}

/// Halves the token count by averaging row-major neighbour pairs `(2i, 2i+1)`.
/// With an odd count the last token is carried through unchanged.
pub fn mean_pool_pairs(grid: &TokenGrid) -> Result<TokenGrid> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::TooFewTokens { needed: 2, actual: n });
    }
    let dim = grid.dim();
    let mut out = Vec::with_capacity(n.div_ceil(2) * dim);
    for pair in grid.as_flat().chunks(2 * dim) {
        if pair.len() == 2 * dim {
            let (a, b) = pair.split_at(dim);
            out.extend(a.iter().zip(b).map(|(&x, &y)| ((x as f64 + y as f64) * 0.5) as f32));
        } else {
            out.extend_from_slice(pair);
        }
    }
    Ok(TokenGrid::from_raw(dim, out))
}

/// Token count after one pooling pass.
pub fn pooled_len(tokens: usize) -> usize {
    tokens / 2 + tokens % 2
}

/// Resamples a grid to `target` tokens by averaging contiguous, near-equal bins.
/// For `target == len / 2` this coincides with [`mean_pool_pairs`].
pub fn pool_to(grid: &TokenGrid, target: usize) -> Result<TokenGrid> {
    let n = grid.len();
    if target == 0 || target > n {
        return Err(Error::InvalidInput(format!(
            "cannot pool {n} tokens into {target}"
        )));
    }
    if target == n {
        return Ok(grid.clone());
    }
    let dim = grid.dim();
    let mut out = Vec::with_capacity(target * dim);
    let mut acc = vec![0.0f64; dim];
    for j in 0..target {
        let (lo, hi) = (j * n / target, (j + 1) * n / target);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in lo..hi {
            for (s, &x) in acc.iter_mut().zip(grid.token(i)) {
                *s += x as f64;
            }
        }
        let count = (hi - lo) as f64;
        out.extend(acc.iter().map(|s| (s / count) as f32));
    }
    Ok(TokenGrid::from_raw(dim, out))
}

/// Concatenates two grids of the same token dimension.
pub fn concat(a: &TokenGrid, b: &TokenGrid) -> Result<TokenGrid> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut data = Vec::with_capacity(a.as_flat().len() + b.as_flat().len());
    data.extend_from_slice(a.as_flat());
    data.extend_from_slice(b.as_flat());
    Ok(TokenGrid::from_raw(a.dim(), data))
}

/// Element-wise mean of all tokens, the single-vector summary of a frame.
pub fn pooled_feature(grid: &TokenGrid) -> FeatureVector {
    let mut acc = vec![0.0f64; grid.dim()];
    for t in grid.tokens() {
        for (s, &x) in acc.iter_mut().zip(t) {
            *s += x as f64;
        }
    }
    let n = grid.len() as f64;
    FeatureVector::new(acc.into_iter().map(|s| (s / n) as f32).collect())
        .expect("mean of finite tokens is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(tokens: &[&[f32]]) -> TokenGrid {
        TokenGrid::from_tokens(tokens).unwrap()
    }

    #[test]
    fn cosine_distance_examples() {
        let a = [0.3f32, -1.7, 2.5, 0.01];
        assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 1.0);
        let d = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((d - 0.292_893_218_813_452_5).abs() < 1e-12, "{d}");
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn cosine_distance_errors() {
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine_distance(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grid_surprise_examples() {
        let g = grid(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        assert_eq!(grid_surprise(&g, &g).unwrap(), 0.0);

        let p = grid(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let a = grid(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert_eq!(grid_surprise(&p, &a).unwrap(), 1.0);

        // distances 0.0 and 0.4: second pair has cos = 0.6 (unit vectors (1,0) and (0.6,0.8)).
        let p = grid(&[&[1.0, 1.0], &[1.0, 0.0]]);
        let a = grid(&[&[2.0, 2.0], &[0.6, 0.8]]);
        assert!((grid_surprise(&p, &a).unwrap() - 0.2).abs() < 1e-7);

        let short = grid(&[&[1.0, 1.0]]);
        assert!(matches!(grid_surprise(&p, &short), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mean_pool_pairs_examples() {
        let g = grid(&[&[1.0, 1.0], &[3.0, 3.0], &[5.0, 5.0], &[7.0, 7.0]]);
        let p = mean_pool_pairs(&g).unwrap();
        assert_eq!(p, grid(&[&[2.0, 2.0], &[6.0, 6.0]]));

        let same = TokenGrid::new(3, [0.5f32, -1.0, 2.0].repeat(64)).unwrap();
        let p = mean_pool_pairs(&same).unwrap();
        assert_eq!(p.len(), 32);
        assert!(p.tokens().all(|t| t == [0.5, -1.0, 2.0]));

        let odd = grid(&[&[1.0], &[3.0], &[9.0]]);
        assert_eq!(mean_pool_pairs(&odd).unwrap(), grid(&[&[2.0], &[9.0]]));
        assert_eq!(pooled_len(3), 2);
        assert_eq!(pooled_len(64), 32);

        assert!(matches!(
            mean_pool_pairs(&grid(&[&[1.0]])),
            Err(Error::TooFewTokens { needed: 2, actual: 1 })
        ));
    }

    #[test]
    fn pool_to_matches_pairs_and_handles_uneven_bins() {
        let g = grid(&[&[1.0], &[3.0], &[5.0], &[7.0]]);
        assert_eq!(pool_to(&g, 2).unwrap(), mean_pool_pairs(&g).unwrap());
        let six = grid(&[&[0.0], &[2.0], &[4.0], &[6.0], &[8.0], &[10.0]]);
        // bins [0,1) [1,3) [3,4) [4,6)
        assert_eq!(pool_to(&six, 4).unwrap(), grid(&[&[0.0], &[3.0], &[6.0], &[9.0]]));
        assert!(pool_to(&g, 5).is_err());
        assert!(pool_to(&g, 0).is_err());
    }

    #[test]
    fn pooled_feature_examples() {
        let one = grid(&[&[0.25, -4.0]]);
        assert_eq!(pooled_feature(&one).as_slice(), &[0.25, -4.0]);
        let two = grid(&[&[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0]]);
        assert_eq!(pooled_feature(&two).as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn pooled_feature_matches_per_coordinate_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let toks: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let g = TokenGrid::from_tokens(&toks).unwrap();
        let pooled = pooled_feature(&g);
        for c in 0..5 {
            let mut s = 0.0f64;
            for t in &toks {
                s += t[c] as f64;
            }
            assert_eq!(pooled.as_slice()[c], (s / 4.0) as f32);
        }
    }

    proptest! {
        #[test]
        fn cosine_distance_symmetric_and_bounded(
            a in prop::collection::vec(-10.0f32..10.0, 6),
            b in prop::collection::vec(-10.0f32..10.0, 6),
        ) {
            prop_assume!(sq_norm(&a) > 1e-6 && sq_norm(&b) > 1e-6);
            let ab = cosine_distance(&a, &b).unwrap();
            let ba = cosine_distance(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=2.0).contains(&ab));
        }

        #[test]
        fn cosine_distance_zero_for_positive_multiples(
            a in prop::collection::vec(-10.0f32..10.0, 6),
            scale in 0.01f32..100.0,
        ) {
            prop_assume!(sq_norm(&a) > 1e-6);
            let b: Vec<f32> = a.iter().map(|x| x * scale).collect();
            prop_assert!(cosine_distance(&a, &b).unwrap() < 1e-6);
            let neg: Vec<f32> = a.iter().map(|x| -x).collect();
            prop_assert!(cosine_distance(&a, &neg).unwrap() > 1.999);
        }

        #[test]
        fn pooling_identical_tokens_is_idempotent(
            tok in prop::collection::vec(-5.0f32..5.0, 4),
            n in 2usize..40,
        ) {
            let g = TokenGrid::new(4, tok.repeat(n)).unwrap();
            let once = mean_pool_pairs(&g).unwrap();
            prop_assert_eq!(once.len(), pooled_len(n));
            prop_assert!(once.tokens().all(|t| t == tok.as_slice()));
        }
    }
}
