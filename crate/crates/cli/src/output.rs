//! Staged output: every file is written to a `.tmp` sibling first and the
//! whole batch is renamed into place at the end, so an error partway through
//! a run never leaves a half-written result directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::CliError;
use survsc::survival::SurvivalCurve;

pub struct StagedOutput {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>, // (tmp, final)
    committed: bool,
}

impl StagedOutput {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(StagedOutput {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
            committed: false,
        })
    }

    /// Registers `name` and returns the temporary path to write to.
    pub fn stage(&mut self, name: &str) -> PathBuf {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let final_path = self.dir.join(name);
        self.staged.push((tmp.clone(), final_path));
        tmp
    }

    pub fn write_json<T: serde::Serialize>(
        &mut self,
        name: &str,
        value: &T,
    ) -> Result<(), CliError> {
        let tmp = self.stage(name);
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("serializing {name}: {e}")))?;
        text.push('\n');
        fs::write(&tmp, text)?;
        Ok(())
    }

    pub fn write_curve(&mut self, name: &str, curve: &SurvivalCurve) -> Result<(), CliError> {
        let tmp = self.stage(name);
        let mut writer = csv::Writer::from_path(&tmp)?;
        writer.write_record(["time", "survival", "at_risk", "events"])?;
        for i in 0..curve.len() {
            writer.write_record([
                format_float(curve.times()[i]),
                format_float(curve.survival()[i]),
                curve.at_risk()[i].to_string(),
                curve.events()[i].to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Renames every staged file into place. Call once, after all writes.
    pub fn commit(mut self) -> Result<(), CliError> {
        for (tmp, final_path) in &self.staged {
            fs::rename(tmp, final_path)?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for StagedOutput {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.staged {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}

/// Shortest round-trippable form: positional inside a readable band,
/// scientific outside it. Both branches print the fewest digits that parse
/// back to the same bits, so identical values always render identically.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0.0".into();
    }
    let magnitude = x.abs();
    if (1e-4..1e15).contains(&magnitude) {
        let mut s = format!("{x}");
        if !s.contains('.') {
            s.push_str(".0");
        }
        s
    } else {
        format!("{x:e}")
    }
}
