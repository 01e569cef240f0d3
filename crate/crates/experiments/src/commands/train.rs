use std::path::PathBuf;

use log::info;
use willmore_core::neural::{save_checkpoint, train_progressive};

use super::prepare_output;
use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, Result};
use crate::output::{csv_writer, fmt_f64};

/// Trains one operator per ladder rung; returns the checkpoint paths.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate(Kind::Train)?;
    let dir = prepare_output(cfg)?;
    let mut training = cfg.training.clone();
    training.seed = cfg.seed;
    let loss_path = dir.join("training_loss.csv");
    let mut losses = csv_writer(&loss_path)?;
    losses.write_record(["rung", "n", "iteration", "batch_loss", "held_out_loss"])?;
    let mut paths = Vec::new();
    let mut failure = None;
    let result = train_progressive(&training, cfg.grid.dim, cfg.eps, cfg.tau_tilde, |rung, trainer| {
        let n = trainer.operator().trained_grid().n();
        let path = dir.join(format!("operator_n{n}.wnet"));
        save_checkpoint(trainer.operator(), &path)?;
        info!("rung {rung}: wrote {}", path.display());
        for r in trainer.history() {
            let row = [
                rung.to_string(),
                n.to_string(),
                r.iteration.to_string(),
                fmt_f64(r.batch_loss),
                fmt_f64(r.held_out_loss),
            ];
            if let Err(e) = losses.write_record(row) {
                failure = Some(e);
            }
        }
        paths.push(path);
        Ok(())
    });
    losses.flush().map_err(|e| CliError::io(&loss_path, e))?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    result?;
    Ok(paths)
}
