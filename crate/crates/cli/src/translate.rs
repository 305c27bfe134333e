//! `translate-templates`: produce per-language question templates from
//! the English master via the live endpoint, validating that every
//! placeholder survives translation exactly once.

use crate::util::{runtime, usage, write_file, AppError};
use std::path::Path;
use timepref::client::{ChatClient, HttpTransport, TransportPolicy};
use timepref::design::language_registry;
use timepref::prompting::QuestionTemplate;

pub fn cmd_translate_templates(
    endpoint: &str,
    model_id: &str,
    out_dir: &Path,
) -> Result<(), AppError> {
    let policy = TransportPolicy::default();
    let transport =
        HttpTransport::from_env(endpoint, policy.timeout).map_err(|e| usage(format!("{e}")))?;
    let client = ChatClient::new(transport, policy);

    let mut written = 0;
    for language in language_registry() {
        let master = QuestionTemplate::english_master(language.clone());
        let body = if language.code == "english" {
            master.body.clone()
        } else {
            client
                .translate(&master.body, &language, model_id)
                .map_err(|e| runtime(format!("translating {}: {e}", language.code)))?
        };
        // Validate placeholder integrity before accepting the file.
        QuestionTemplate::new(language.clone(), body.clone()).map_err(|e| {
            runtime(format!(
                "translation for {} lost a placeholder: {e}",
                language.code
            ))
        })?;
        write_file(&out_dir.join(format!("{}.txt", language.code)), &body)?;
        written += 1;
    }
    println!("wrote {written} templates to {}", out_dir.display());
    Ok(())
}
