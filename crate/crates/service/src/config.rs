use std::fs;
use std::path::{Path, PathBuf};

use medrag_core::{EmbeddingProviderConfig, GenerationConfig, RetrievalConfig};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const ENV_LISTEN_ADDR: &str = "MEDRAG_LISTEN_ADDR";
pub const ENV_EMBED_URL: &str = "MEDRAG_EMBED_URL";
pub const ENV_CHAT_URL: &str = "MEDRAG_CHAT_URL";

/// Service settings, loadable from TOML.
///
/// ```toml
/// listen_addr = "127.0.0.1:8080"
/// index_path = "data/index.bin"
/// cors_allowed_origins = ["http://localhost:5173"]
///
/// [provider]
/// kind = "deterministic"
/// dimension = 384
///
/// [generation]
/// endpoint_url = "http://127.0.0.1:8000"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub index_path: PathBuf,
    pub provider: EmbeddingProviderConfig,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationConfig,
    pub cors_allowed_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:8080".into(),
            index_path: PathBuf::from("index.bin"),
            provider: EmbeddingProviderConfig::default(),
            retrieval: RetrievalConfig::default(),
            generation: GenerationConfig::default(),
            cors_allowed_origins: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(s: &str) -> Result<Self, ServiceError> {
        toml::from_str(s).map_err(|e| ServiceError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let raw = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&raw)
    }

    /// Applies `MEDRAG_LISTEN_ADDR`, `MEDRAG_EMBED_URL` and `MEDRAG_CHAT_URL`.
    pub fn apply_env(&mut self) {
        self.apply_overrides(|k| std::env::var(k).ok());
    }

    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_LISTEN_ADDR) {
            self.listen_addr = v;
        }
        if let Some(v) = lookup(ENV_EMBED_URL) {
            self.provider.endpoint_url = v;
        }
        if let Some(v) = lookup(ENV_CHAT_URL) {
            self.generation.endpoint_url = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use medrag_core::{Mode, ProviderKind};

    #[test]
    fn toml_with_partial_sections() {
        let cfg = ServiceConfig::from_toml(
            r#"
            listen_addr = "0.0.0.0:9000"
            index_path = "idx.bin"
            cors_allowed_origins = ["http://localhost:5173"]

            [provider]
            kind = "remote"
            endpoint_url = "http://embed:80"
            model_name = "mini"
            dimension = 384

            [retrieval]
            top_k = 3

            [generation]
            mode = "vanilla"
            retry = { attempts = 5 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.listen_addr, "0.0.0.0:9000");
        assert_eq!(cfg.provider.kind, ProviderKind::Remote);
        assert_eq!(cfg.provider.fingerprint(), "remote:mini:384");
        assert_eq!(cfg.retrieval.top_k, 3);
        assert_eq!(cfg.generation.mode, Mode::Vanilla);
        assert_eq!(cfg.generation.retry.attempts, 5);
        assert_eq!(cfg.generation.retry.base_delay_ms, 200);
        assert_eq!(cfg.generation.max_new_tokens, 256);
    }

    #[test]
    fn env_overrides() {
        let mut cfg = ServiceConfig::default();
        cfg.apply_overrides(|k| match k {
            ENV_LISTEN_ADDR => Some("127.0.0.1:1".into()),
            ENV_CHAT_URL => Some("http://chat".into()),
            _ => None,
        });
        assert_eq!(cfg.listen_addr, "127.0.0.1:1");
        assert_eq!(cfg.generation.endpoint_url, "http://chat");
        assert_eq!(cfg.provider.endpoint_url, "");
    }

    #[test]
    fn bad_toml() {
        assert!(matches!(ServiceConfig::from_toml("listen_addr = 5"), Err(ServiceError::Config(_))));
    }
}
