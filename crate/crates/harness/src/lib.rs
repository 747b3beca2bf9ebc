//! Experiment harness: configuration, seeded campaigns and result files
//! for the bandit simulation, the norm study and the toy preference
//! optimization runs.

pub mod config;
pub mod error;
pub mod norm;
pub mod output;
pub mod simulate;
pub mod toy_dpo;

use std::path::Path;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};

use output::{
    ensure_dir, write_metadata, write_table, Metadata, NormFunctionRow, NormStudyRow, TimingRecord, ToyDpoRecord, ToyDpoSummary,
    TrialSummary, METADATA_FILE, NORM_FUNCTIONS_FILE, NORM_STUDY_FILE, SUMMARY_FILE, TIMINGS_FILE, TOY_DPO_FILE, TOY_DPO_SUMMARY_FILE,
};

/// Run the configured campaign and write its tables and metadata into
/// `config.out`. Tables are written even when some trials stop early; the
/// error is returned afterwards.
pub fn run_campaign(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let dir = config.out.as_path();
    ensure_dir(dir)?;
    let mut partial = 0;
    match config.experiment {
        ExperimentKind::Simulate => {
            let out = simulate::run_simulate(config)?;
            output::emit_outputs(&out.records, dir)?;
            write_table(&dir.join(TIMINGS_FILE), &TimingRecord::HEADER, &out.timings)?;
            write_table(&dir.join(SUMMARY_FILE), &TrialSummary::HEADER, &out.summaries)?;
            partial = out.incomplete();
        }
        ExperimentKind::NormStudy => {
            let out = norm::run_norm_campaign(config)?;
            write_table(&dir.join(NORM_STUDY_FILE), &NormStudyRow::HEADER, &out.rows())?;
            write_table(&dir.join(NORM_FUNCTIONS_FILE), &NormFunctionRow::HEADER, &out.functions)?;
        }
        ExperimentKind::ToyDpo => {
            let out = toy_dpo::run_toy_dpo(config)?;
            write_table(&dir.join(TOY_DPO_FILE), &ToyDpoRecord::HEADER, &out.records)?;
            write_table(&dir.join(TOY_DPO_SUMMARY_FILE), &ToyDpoSummary::HEADER, &out.summaries)?;
        }
    }
    write_metadata(&dir.join(METADATA_FILE), &Metadata::new(config))?;
    if partial > 0 {
        return Err(HarnessError::PartialResults { count: partial });
    }
    Ok(())
}

/// Regenerate the plot table of an existing simulate result directory.
pub fn emit_from_dir(dir: &Path) -> Result<usize> {
    let records: Vec<output::TrialRecord> = output::read_table(&dir.join(output::TRIALS_FILE))?;
    output::emit_outputs(&records, dir)?;
    Ok(records.len())
}
