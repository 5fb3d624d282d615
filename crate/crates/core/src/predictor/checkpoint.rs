//! Model checkpoints: a JSON header line followed by a JSON array with the flat
//! parameter vector (see [`PredictorModel::params`] for the layout).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{PredictorModel, PredictorVariant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: PredictorVariant,
    pub dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub loss_weight: f64,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &PredictorModel, seed: u64, loss_weight: f64) -> Result<()> {
    let header = CheckpointHeader {
        variant: model.variant(),
        dim: model.dim(),
        hidden: model.hidden(),
        seed,
        loss_weight,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    serde_json::to_writer(&mut out, &model.params())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, PredictorModel)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut lines = BufReader::new(File::open(path)?).lines();
    let bad = |index, reason: &str| Error::MalformedRecord {
        index,
        reason: reason.to_string(),
    };
    let header: CheckpointHeader = serde_json::from_str(&lines.next().ok_or_else(|| bad(0, "missing header"))??)?;
    let params: Vec<f64> = serde_json::from_str(&lines.next().ok_or_else(|| bad(1, "missing parameters"))??)?;
    let mut model = PredictorModel::init(header.variant, header.dim, header.hidden, 0)?;
    model.set_params(&params)?;
    Ok((header, model))
}

/// Writes `epoch,loss` rows.
pub fn write_loss_history(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{i},{l:e}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for model in [
            PredictorModel::last_frame(3),
            PredictorModel::linear(3, 4),
            PredictorModel::two_layer(3, 12, 5),
        ] {
            let path = dir.path().join("m.ckpt");
            save_checkpoint(&path, &model, 17, 0.1).unwrap();
            let (h, back) = load_checkpoint(&path).unwrap();
            assert_eq!(back, model);
            assert_eq!(h.seed, 17);
            assert_eq!(h.loss_weight, 0.1);
        }
        assert!(matches!(load_checkpoint(dir.path().join("nope")), Err(Error::MissingInput(_))));
    }

    #[test]
    fn loss_history_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_history(&path, &[0.5, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "epoch,loss\n0,5e-1\n1,2.5e-1\n");
    }
}
