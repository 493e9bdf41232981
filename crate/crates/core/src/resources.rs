//! Embedded default resources and the `builtin:<name>` path scheme.
//!
//! Anywhere a stage config takes a resource path, `builtin:<name>` resolves
//! to the copy shipped inside the binary, so fixture configs need no
//! external files.

use crate::assemble::MixtureSpec;
use crate::error::{KaftError, Result};
use crate::probe::ProbePromptSpec;
use crate::textkit::StopwordList;

pub const PROBE_SPECS: &[(&str, &str)] = &[
    ("standard_t5_xl", include_str!("../resources/probe/standard_t5_xl.json")),
    ("standard_t5_xxl", include_str!("../resources/probe/standard_t5_xxl.json")),
    ("standard_palm_8b", include_str!("../resources/probe/standard_palm_8b.json")),
    ("standard_palm_62b", include_str!("../resources/probe/standard_palm_62b.json")),
    ("cloze_t5_xl", include_str!("../resources/probe/cloze_t5_xl.json")),
    ("cloze_t5_xxl", include_str!("../resources/probe/cloze_t5_xxl.json")),
    ("cloze_palm_8b", include_str!("../resources/probe/cloze_palm_8b.json")),
    ("cloze_palm_62b", include_str!("../resources/probe/cloze_palm_62b.json")),
    (
        "multiple_choice_palm_62b",
        include_str!("../resources/probe/multiple_choice_palm_62b.json"),
    ),
];

/// Load a probe spec from `builtin:<name>` or a filesystem path.
pub fn probe_spec(designator: &str) -> Result<ProbePromptSpec> {
    if let Some(name) = designator.strip_prefix("builtin:") {
        let text = PROBE_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                KaftError::Config(format!(
                    "unknown builtin probe spec `{name}` (available: {})",
                    PROBE_SPECS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                ))
            })?;
        return ProbePromptSpec::from_json(text);
    }
    ProbePromptSpec::from_path(std::path::Path::new(designator))
}

/// Load a mixture spec from `builtin:table8` or a filesystem path.
pub fn mixture_spec(designator: &str) -> Result<MixtureSpec> {
    match designator {
        "builtin:table8" => Ok(MixtureSpec::builtin()),
        path if path.starts_with("builtin:") => {
            Err(KaftError::Config(format!("unknown builtin mixture spec `{path}`")))
        }
        path => MixtureSpec::from_path(std::path::Path::new(path)),
    }
}

/// Load a stopword list from `builtin:v1` or a filesystem path; the version
/// string of a file-based list is its file name.
pub fn stopword_list(designator: &str) -> Result<StopwordList> {
    match designator {
        "builtin:v1" => Ok(StopwordList::builtin()),
        path if path.starts_with("builtin:") => {
            Err(KaftError::Config(format!("unknown builtin stopword list `{path}`")))
        }
        path => {
            let p = std::path::Path::new(path);
            let text = std::fs::read_to_string(p).map_err(|source| KaftError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            let version = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into());
            Ok(StopwordList::from_text(&text, version))
        }
    }
}
