//! Config files with flag overrides.
//!
//! Every command's arguments serialise to a JSON object. A `--config` file
//! supplies a base object and any flag given on the command line replaces
//! the corresponding key. The fully resolved arguments are saved as
//! `run_config*.json` next to the outputs, so replaying that file with
//! `--config` reproduces the run.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Serialize, Deserialize)]
struct Saved {
    command: String,
    args: Value,
}

/// Overlays the non-null, non-empty fields of `flags` onto the arguments stored in
/// `config`.
pub fn resolve<T: Serialize + DeserializeOwned>(command: &str, flags: &T, config: Option<&Path>) -> Result<T> {
    let flags = serde_json::to_value(flags)?;
    let Some(path) = config else {
        return Ok(serde_json::from_value(flags)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let saved: Saved = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if saved.command != command {
        bail!("{} holds a `{}` config, not `{command}`", path.display(), saved.command);
    }
    let mut base = saved.args;
    let (Value::Object(base_map), Value::Object(flag_map)) = (&mut base, flags) else {
        bail!("{}: args must be an object", path.display());
    };
    for (k, v) in flag_map {
        let empty = v.as_array().is_some_and(|a| a.is_empty());
        if !v.is_null() && !empty {
            base_map.insert(k, v);
        }
    }
    serde_json::from_value(base).with_context(|| format!("invalid arguments in {}", path.display()))
}

pub fn save<T: Serialize>(command: &str, args: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let saved = Saved { command: command.to_string(), args: serde_json::to_value(args)? };
    let mut text = serde_json::to_string_pretty(&saved)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
