//! Latent frame prediction objective: per-coordinate mean squared error plus
//! mean per-token cosine distance, with unit weights on both terms.

use crate::error::{Error, Result};
use crate::types::TokenGrid;

use super::model::{PredictorModel, Scratch};

/// Loss contribution of one token and, optionally, `d loss / d prediction`
/// scaled by `scale`.
fn token_terms(p: &[f64], y: &[f32], tokens: usize, scale: f64, g: Option<&mut [f64]>) -> Result<f64> {
    let dim = p.len();
    let (mut se, mut pp, mut yy, mut py) = (0.0, 0.0, 0.0, 0.0);
    for (&pi, &yi) in p.iter().zip(y) {
        let yi = yi as f64;
        se += (pi - yi) * (pi - yi);
        pp += pi * pi;
        yy += yi * yi;
        py += pi * yi;
    }
    if pp == 0.0 || yy == 0.0 {
        return Err(Error::ZeroVector);
    }
    let norm = (pp * yy).sqrt();
    let cos = (py / norm).clamp(-1.0, 1.0);
    let (t, d) = (tokens as f64, dim as f64);
    if let Some(g) = g {
        let mse_k = 2.0 / (t * d);
        for ((gi, &pi), &yi) in g.iter_mut().zip(p).zip(y) {
            let yi = yi as f64;
            let dcos = yi / norm - py * pi / (pp * norm);
            *gi = scale * (mse_k * (pi - yi) - dcos / t);
        }
    }
    Ok(se / (t * d) + (1.0 - cos) / t)
}

/// LFP loss between a predicted and an observed grid.
pub fn lfp_loss(pred: &TokenGrid, target: &TokenGrid) -> Result<f64> {
    pred.check_shape(target)?;
    let n = pred.len();
    let mut buf = vec![0.0f64; pred.dim()];
    let mut total = 0.0;
    for (p, y) in pred.tokens().zip(target.tokens()) {
        for (b, &v) in buf.iter_mut().zip(p) {
            *b = v as f64;
        }
        total += token_terms(&buf, y, n, 1.0, None)?;
    }
    Ok(total)
}

/// Loss of `model(input)` against `target`, accumulating `scale * d loss / d params`
/// into `grad` when given. Predictions stay in `f64` throughout.
pub(crate) fn pair_loss(
    model: &PredictorModel,
    input: &TokenGrid,
    target: &TokenGrid,
    scale: f64,
    s: &mut Scratch,
    g_out: &mut [f64],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    input.check_shape(target)?;
    if input.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: input.dim(),
        });
    }
    let n = input.len();
    let mut total = 0.0;
    for (x, y) in input.tokens().zip(target.tokens()) {
        model.forward_token(x, s);
        match grad.as_deref_mut() {
            Some(grad) => {
                total += token_terms(&s.out, y, n, scale, Some(g_out))?;
                model.backward_token(g_out, s, grad);
            }
            None => total += token_terms(&s.out, y, n, scale, None)?,
        }
    }
    Ok(total)
}

/// Mean loss over `(input, target)` pairs and its gradient in
/// [`PredictorModel::params`] layout.
pub fn loss_and_gradient(model: &PredictorModel, pairs: &[(&TokenGrid, &TokenGrid)]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let mut s = model.scratch();
    let mut g_out = vec![0.0; model.dim()];
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for (x, y) in pairs {
        total += pair_loss(model, x, y, scale, &mut s, &mut g_out, Some(&mut grad))?;
    }
    Ok((total * scale, grad))
}

/// Largest relative disagreement between analytic gradients and central
/// finite differences of the LFP loss for one `(input, target)` pair.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// components that are zero up to rounding from dominating.
pub fn finite_difference_check(model: &PredictorModel, input: &TokenGrid, target: &TokenGrid, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    let (_, analytic) = loss_and_gradient(model, &[(input, target)])?;
    let base = model.params();
    let mut probe = model.clone();
    let mut s = model.scratch();
    let mut g_out = vec![0.0; model.dim()];
    let mut eval = |params: &[f64], probe: &mut PredictorModel| -> Result<f64> {
        probe.set_params(params)?;
        pair_loss(probe, input, target, 1.0, &mut s, &mut g_out, None)
    };
    let mut worst = 0.0f64;
    let mut shifted = base.clone();
    for i in 0..base.len() {
        shifted[i] = base[i] + epsilon;
        let up = eval(&shifted, &mut probe)?;
        shifted[i] = base[i] - epsilon;
        let down = eval(&shifted, &mut probe)?;
        shifted[i] = base[i];
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_grids_have_zero_loss() {
        let g = TokenGrid::new(3, vec![0.2, -1.0, 4.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(lfp_loss(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_unit_tokens_in_two_dimensions() {
        // One token, D = 2: p = (1, 0), y = (0, 1).
        // MSE = ((1-0)^2 + (0-1)^2) / 2 = 1, cosine distance = 1.
        let p = TokenGrid::new(2, vec![1.0, 0.0]).unwrap();
        let y = TokenGrid::new(2, vec![0.0, 1.0]).unwrap();
        assert_eq!(lfp_loss(&p, &y).unwrap(), 2.0);
        // Two tokens, each orthogonal: both terms are averages, so still 2.
        let p2 = TokenGrid::new(2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let y2 = TokenGrid::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(lfp_loss(&p2, &y2).unwrap(), 2.0);
    }

    #[test]
    fn shape_and_zero_vector_errors() {
        let a = TokenGrid::new(2, vec![1.0, 0.0]).unwrap();
        let b = TokenGrid::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(lfp_loss(&a, &b), Err(Error::ShapeMismatch { .. })));
        let z = TokenGrid::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(lfp_loss(&z, &a), Err(Error::ZeroVector)));
    }

    #[test]
    fn last_frame_gradient_check_is_vacuous() {
        let g = TokenGrid::new(2, vec![1.0, 0.5]).unwrap();
        let y = TokenGrid::new(2, vec![0.3, 0.5]).unwrap();
        let m = PredictorModel::last_frame(2);
        assert_eq!(finite_difference_check(&m, &g, &y, 1e-5).unwrap(), 0.0);
        assert!(finite_difference_check(&m, &g, &y, 0.0).is_err());
    }
}
