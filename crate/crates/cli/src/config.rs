//! TOML experiment configuration layered over a named preset.

use std::fs;
use std::path::Path;

use daa_core::experiment::{self, ExperimentConfig};
use toml::Value;

use crate::CliError;

/// Loads `path` (if any) over the preset it names, or over `fallback_preset`
/// when it names none. Tables merge key by key; the file wins.
pub fn load(path: Option<&Path>, fallback_preset: &str) -> Result<ExperimentConfig, CliError> {
    let file: Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => Value::Table(Default::default()),
    };
    let preset_name = file
        .get("preset")
        .and_then(Value::as_str)
        .unwrap_or(fallback_preset)
        .to_string();
    let base = experiment::preset(&preset_name).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut merged = Value::try_from(&base).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut overlay = file;
    if let Value::Table(t) = &mut overlay {
        t.remove("preset");
    }
    merge(&mut merged, overlay);
    merged
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {e}")))
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use daa_core::cooccur::ScheduleMode;
    use daa_core::experiment::Method;
    use daa_core::Modality;

    #[test]
    fn file_overrides_preset_fields_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(
            &p,
            r#"
preset = "paper-desk"
method = "npb-daa"
trials = 2

[run]
candidates = 3

[run.word_weight]
mode = "increase"
fixed_value = 200.0

[run.modality_weights]
audio = 340.0
"#,
        )
        .unwrap();
        let c = load(Some(&p), "desk-fast").unwrap();
        assert_eq!(c.method, Method::NpbDaa);
        assert_eq!(c.trials, 2);
        assert_eq!(c.run.candidates, 3);
        assert_eq!(c.run.word_weight.mode, ScheduleMode::Increase);
        assert_eq!(c.run.modality_weights[&Modality::Audio], 340.0);
        assert_eq!(c.run.modality_weights[&Modality::Vision], 100.0);
        // untouched preset values survive
        assert_eq!(c.hyper.n_words, 50);
        assert_eq!(c.run.outer_iterations, 100);
    }

    #[test]
    fn no_file_gives_the_fallback_preset() {
        let c = load(None, "desk-fast").unwrap();
        assert_eq!(c, experiment::preset("desk-fast").unwrap());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "method = \"bogus\"\n").unwrap();
        assert!(matches!(load(Some(&p), "desk-fast"), Err(CliError::Usage(_))));
        fs::write(&p, "preset = \"nope\"\n").unwrap();
        assert!(matches!(load(Some(&p), "desk-fast"), Err(CliError::Usage(_))));
    }
}
