//! Run directories on disk.
//!
//! ```text
//! config.echo     fully defaulted TOML (simulate only)
//! run.json        flow configuration actually used, dt, steps, stop reason
//! run.jsonl       one diagnostic record per line, in time order; streamed while the flow
//!                 runs, then rewritten once η and the near-stop flags are known
//! snap_<t>.sfld   stored states
//! final.sfld      state at the end of the run
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::flow::{run_two_pass_with_observer, run_with_observer, FlowConfig, FlowRun, Snapshot, StopReason};
use crate::snapshot;
use crate::weighted::DiagnosticRecord;

pub const RUN_SUMMARY: &str = "run.json";
pub const RECORDS: &str = "run.jsonl";
pub const CONFIG_ECHO: &str = "config.echo";
pub const FINAL_STATE: &str = "final.sfld";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: FlowConfig,
    pub dt: f64,
    pub steps: u64,
    pub t_final: f64,
    pub stop: StopReason,
}

/// Streams records to `run.jsonl` as they are produced.
struct RecordWriter {
    out: BufWriter<fs::File>,
    error: Option<std::io::Error>,
}

impl RecordWriter {
    fn create(dir: &Path) -> Result<Self> {
        Ok(RecordWriter { out: BufWriter::new(fs::File::create(dir.join(RECORDS))?), error: None })
    }

    fn push(&mut self, rec: &DiagnosticRecord) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(rec).map_err(std::io::Error::other);
        if let Err(e) = line.and_then(|l| writeln!(self.out, "{l}")) {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Runs the flow described by `cfg` and writes the full run directory.
pub fn simulate(cfg: &Config, base_dir: &Path, out: &Path) -> Result<FlowRun> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_ECHO), cfg.echo()?)?;
    let initial = cfg.initial_state(base_dir)?;
    let flow = cfg.flow_config()?;
    let mut writer = RecordWriter::create(out)?;
    let run = if cfg.flow.two_pass {
        run_two_pass_with_observer(&flow, initial, |r| writer.push(r))?
    } else {
        run_with_observer(&flow, initial, |r| writer.push(r))?
    };
    writer.finish()?;
    write_run(&run, out)?;
    Ok(run)
}

fn write_states(run: &FlowRun, out: &Path) -> Result<()> {
    for s in &run.snapshots {
        snapshot::write(&out.join(snapshot::file_name(s.t)), &s.state, Some(s.t))?;
    }
    snapshot::write(&out.join(FINAL_STATE), &run.final_state, Some(run.t_final))?;
    let summary =
        RunSummary { config: run.config.clone(), dt: run.dt, steps: run.steps, t_final: run.t_final, stop: run.stop };
    fs::write(out.join(RUN_SUMMARY), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Writes an in-memory run (records, states and summary) to `out`.
pub fn write_run(run: &FlowRun, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let tmp = out.join(format!("{RECORDS}.tmp"));
    let mut w = BufWriter::new(fs::File::create(&tmp)?);
    for r in &run.records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    drop(w);
    fs::rename(&tmp, out.join(RECORDS))?;
    write_states(run, out)
}

/// Rebuilds a [`FlowRun`] from a run directory.
pub fn load_run(dir: &Path) -> Result<FlowRun> {
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join(RUN_SUMMARY))?)?;
    let mut records = Vec::new();
    for line in BufReader::new(fs::File::open(dir.join(RECORDS))?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    let mut snapshots = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("snap_") && name.ends_with(".sfld") {
            let snap = snapshot::read(&path)?;
            let t = snap.t.ok_or_else(|| Error::Snapshot(format!("{name} has no time stamp")))?;
            snapshots.push(Snapshot { t, state: snap.state });
        }
    }
    snapshots.sort_by(|a, b| a.t.total_cmp(&b.t));
    let final_state = snapshot::read(&dir.join(FINAL_STATE))?.state;
    Ok(FlowRun {
        config: summary.config,
        dt: summary.dt,
        steps: summary.steps,
        t_final: summary.t_final,
        stop: summary.stop,
        records,
        snapshots,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_then_load_reproduces_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::from_toml(
            "[grid]\nN = 65\n[flow]\nt_end = 0.2\nsnapshot_times = [0.1]\ndiagnostic_stride = 5\n[init]\nkind = \"bubble\"\nlambda = 1.0\n",
        )
        .unwrap();
        let run = simulate(&cfg, dir.path(), dir.path()).unwrap();
        let back = load_run(dir.path()).unwrap();
        assert_eq!(back.config, run.config);
        assert_eq!(back.records, run.records);
        assert_eq!(back.snapshots, run.snapshots);
        assert_eq!(back.final_state, run.final_state);
        assert_eq!((back.dt, back.steps, back.t_final, back.stop), (run.dt, run.steps, run.t_final, run.stop));
        let echoed = fs::read_to_string(dir.path().join(CONFIG_ECHO)).unwrap();
        assert_eq!(Config::from_toml(&echoed).unwrap(), cfg);
    }
}
