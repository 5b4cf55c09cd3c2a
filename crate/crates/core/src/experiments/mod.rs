//! Experiment drivers shared by the command-line runner and the test suites.
//!
//! Every driver is a pure function of its config and seeds. Per-seed work fans
//! out over the rayon pool and is collected back in seed order, so output
//! files are byte-identical across reruns and thread counts.

mod gradcheck;
mod studies;
mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub use gradcheck::{gradcheck_suite, GradCheck, GRADCHECK_TOLERANCE};
pub use studies::{
    mtr_sweep, prop1_study, prop3_table, MtrReport, Prop1Report, Prop1Row, Prop3Row, PROP1_HEADER,
    PROP1_SLACK, PROP3_HEADER,
};
pub use train::{
    regularization_comparison, summary_text, theorem1_study, train_seed, train_seeds,
    write_train_outputs, Benchmark, RegRow, RegularizationReport, SeedRun, Setup, Theorem1Report,
    Theorem1Row, REG_HEADER, SUMMARY_HEADER, THEOREM1_HEADER,
};

/// Outcome of one asserted condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn failures(checks: &[Check]) -> Vec<&Check> {
    checks.iter().filter(|c| !c.passed).collect()
}

/// Writes `lines` under `header` to `path`.
pub fn write_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Seeds `base, base+1, …` of a multi-seed run.
pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}
