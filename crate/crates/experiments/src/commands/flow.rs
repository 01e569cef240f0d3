use std::path::{Path, PathBuf};

use log::info;
use willmore_core::grid::NodalField;
use willmore_core::grid::io::write_field;
use willmore_core::willmore::{FlowRecord, Mask};

use super::{Inner, initial_field, load_operator, prepare_output};
use crate::config::{ExperimentConfig, Kind, Method};
use crate::error::{CliError, Result};
use crate::output::{csv_writer, fmt_f64, write_pgm};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub records: Vec<FlowRecord>,
    pub snapshots: Vec<PathBuf>,
    /// For inpainting, the number of nodes outside the region whose value
    /// changed at each step (bitwise).
    pub outside_changes: Option<Vec<usize>>,
}

pub fn cmd_flow(cfg: &ExperimentConfig) -> Result<FlowOutcome> {
    cfg.validate(Kind::Flow)?;
    run(cfg, None)
}

/// Flow restricted to the configured region; fails with a check error when a
/// node outside the region changed.
pub fn cmd_inpaint(cfg: &ExperimentConfig) -> Result<FlowOutcome> {
    cfg.validate(Kind::Inpaint)?;
    let spec = cfg.grid_spec()?;
    let region = cfg.region.as_ref().expect("validated");
    let mask = Mask::from_shape(&spec, region)?;
    info!("inpainting {} of {} nodes", mask.count_free(), spec.len());
    let outcome = run(cfg, Some(mask))?;
    let changes = outcome.outside_changes.as_deref().unwrap_or_default();
    if let Some((k, c)) = changes.iter().enumerate().find(|(_, c)| **c > 0) {
        return Err(CliError::Check(format!("{c} nodes outside the region changed by step {k}")));
    }
    Ok(outcome)
}

fn to_core(e: CliError) -> willmore_core::Error {
    willmore_core::Error::Io(std::io::Error::other(e.to_string()))
}

fn run(cfg: &ExperimentConfig, mask: Option<Mask>) -> Result<FlowOutcome> {
    let op = match cfg.inner {
        Method::Neural => Some(load_operator(cfg)?),
        _ => None,
    };
    let dir = prepare_output(cfg)?;
    let spec = cfg.grid_spec()?;
    let u0 = initial_field(cfg)?;
    let mut wcfg = cfg.willmore()?;
    if let Some(m) = &mask {
        let image: Vec<f64> = m.free().iter().map(|&f| if f { 1.0 } else { -1.0 }).collect();
        write_pgm(&NodalField::new(spec.clone(), image)?, cfg.snapshots.slice_axis, &dir.join("mask.pgm"))?;
    }
    wcfg.mask = mask.clone();
    let inner = Inner::build(cfg.inner, &spec, cfg, op.as_ref())?;
    let snapshot_steps = cfg.snapshot_steps()?;
    let mut snapshots = Vec::new();
    let mut changes = mask.as_ref().map(|_| Vec::new());
    let images = cfg.snapshots.images && spec.dim() >= 2;
    let mut sink = |record: &FlowRecord, u: &NodalField| -> Result<()> {
        if snapshot_steps.binary_search(&record.step).is_ok() {
            let path = dir.join(format!("snapshot_{:06}.wfld", record.step));
            write_field(u, &path)?;
            if images {
                write_pgm(u, cfg.snapshots.slice_axis, &path.with_extension("pgm"))?;
            }
            snapshots.push(path);
        }
        if let (Some(m), Some(changes)) = (&mask, changes.as_mut()) {
            let changed = m
                .free()
                .iter()
                .zip(u.values().iter().zip(u0.values()))
                .filter(|(free, (a, b))| !**free && a.to_bits() != b.to_bits())
                .count();
            changes.push(changed);
        }
        info!(
            "step {}: W_h = {:.6e}, {} Newton and {} CG iterations",
            record.step, record.willmore_proxy, record.newton_iterations, record.cg_iterations
        );
        Ok(())
    };
    let trajectory = inner.run_flow(&u0, cfg.steps, &wcfg, |r, u| sink(r, u).map_err(to_core))?;
    write_records(dir, cfg.tau, &trajectory.records)?;
    if let Some(changes) = &changes {
        let path = dir.join("mask_audit.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["step", "changed_outside_region"])?;
        for (k, c) in changes.iter().enumerate() {
            w.write_record([k.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(FlowOutcome {
        records: trajectory.records,
        snapshots,
        outside_changes: changes,
    })
}

fn write_records(dir: &Path, tau: f64, records: &[FlowRecord]) -> Result<()> {
    let path = dir.join("flow.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "step",
        "time",
        "energy",
        "willmore_proxy",
        "newton_iterations",
        "cg_iterations",
        "line_search_failed",
        "elapsed_seconds",
        "checksum",
    ])?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.step as f64 * tau),
            fmt_f64(r.energy),
            fmt_f64(r.willmore_proxy),
            r.newton_iterations.to_string(),
            r.cg_iterations.to_string(),
            r.line_search_failed.to_string(),
            fmt_f64(r.elapsed_seconds),
            format!("{:016x}", r.checksum),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}
