//! Backend lookup by name, shared by the command line and the service.

use std::sync::Arc;

use crate::corpus::Corpus;
use crate::gateway::{BackendConfig, BackendError, CassetteMode, Decoding, GatewayError, HttpBackend, JudgeBackend, UreqTransport};
use crate::seed::derive_seed;
use crate::stubs::{ConfusionProgram, FlagEverythingJudge, GoldReplayBackend, ProgrammedJudge};
use crate::taxonomy::Taxonomy;
use crate::templates::TemplateSet;

/// Offline judges that need no configuration.
pub const BUILTIN_BACKENDS: [&str; 3] = [GoldReplayBackend::NAME, ProgrammedJudge::NAME, FlagEverythingJudge::NAME];

/// Stands in for a configured remote backend under replay: only its name
/// takes part in cassette keys, and any live call is refused.
struct ReplayOnly(String);

impl JudgeBackend for ReplayOnly {
    fn name(&self) -> &str {
        &self.0
    }

    fn complete(&self, _prompt: &str, _decoding: &Decoding) -> Result<String, BackendError> {
        Err(BackendError::Permanent(format!("{} is available in replay mode only", self.0)))
    }
}

/// Resolves `name` to a built-in stub or a configured HTTP profile.
/// Stub randomness is derived from `seed`. Under replay, configured
/// profiles resolve without reading their secret.
pub fn resolve_backend(
    name: &str,
    corpus: &Corpus,
    templates: &TemplateSet,
    taxonomy: &Taxonomy,
    seed: u64,
    profiles: Option<&BackendConfig>,
    mode: CassetteMode,
) -> Result<Box<dyn JudgeBackend>, GatewayError> {
    let stub_seed = derive_seed(seed, &["backend", name]);
    match name {
        GoldReplayBackend::NAME => Ok(Box::new(GoldReplayBackend::new(corpus, templates, taxonomy.clone()))),
        ProgrammedJudge::NAME => Ok(Box::new(ProgrammedJudge::new(
            corpus,
            templates,
            taxonomy.clone(),
            ConfusionProgram::default(),
            stub_seed,
        ))),
        FlagEverythingJudge::NAME => Ok(Box::new(FlagEverythingJudge::new(corpus, templates, taxonomy.clone(), stub_seed))),
        _ => {
            let profile = profiles.and_then(|p| p.get(name)).ok_or_else(|| GatewayError::UnknownBackend(name.into()))?;
            if mode == CassetteMode::Replay {
                return Ok(Box::new(ReplayOnly(name.into())));
            }
            Ok(Box::new(HttpBackend::new(profile.clone(), Arc::new(UreqTransport))?))
        }
    }
}

/// Every resolvable backend name: built-ins first, then configured ones.
pub fn backend_names(profiles: Option<&BackendConfig>) -> Vec<String> {
    let mut names: Vec<String> = BUILTIN_BACKENDS.iter().map(|s| s.to_string()).collect();
    if let Some(p) = profiles {
        names.extend(p.backends.iter().map(|b| b.name.clone()));
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn builtins_and_profiles() {
        let corpus = synth::gold_fixture(5, 1);
        let (t, tax) = (TemplateSet::builtin(), Taxonomy::builtin());
        for n in BUILTIN_BACKENDS {
            let b = resolve_backend(n, &corpus, &t, &tax, 0, None, CassetteMode::Live).unwrap();
            assert_eq!(b.name(), n);
        }
        let err = resolve_backend("remote", &corpus, &t, &tax, 0, None, CassetteMode::Live).err().unwrap();
        assert_eq!(err.code(), "UnknownBackend");

        let cfg = BackendConfig::from_toml_str(
            "[[backend]]\nname = \"remote\"\nkind = \"openai_chat\"\nendpoint = \"http://127.0.0.1:9/v1\"\nauth_env = \"MISATTRIB_TEST_UNSET_KEY\"\n",
        )
        .unwrap();
        let b = resolve_backend("remote", &corpus, &t, &tax, 0, Some(&cfg), CassetteMode::Replay).unwrap();
        assert_eq!(b.name(), "remote");
        let err = resolve_backend("remote", &corpus, &t, &tax, 0, Some(&cfg), CassetteMode::Live).err().unwrap();
        assert_eq!(err.code(), "MissingSecret");
        assert_eq!(backend_names(Some(&cfg)).len(), 4);
    }
}
