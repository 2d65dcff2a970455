//! Toolkit for localizing labeled social-media corpora into Arabic
//! dialects and evaluating the translation and classification models
//! trained on them.
//!
//! Module map:
//! - [`corpus`]: records, JSONL storage, manifests, seeded splits
//! - [`textprep`]: the cleaning steps and the `nmt-clean` / `osb-clean` pipelines
//! - [`locrules`]: protected spans, hashtag handling, borrowed-word transliteration
//! - [`metrics`]: BLEU, ROUGE, their harmonic mean, classification reports
//! - [`backend`]: model-service wire client and the hermetic mock backend
//! - [`trainctl`]: early stopping and experiment orchestration
//! - [`evalharness`]: the three evaluation scenarios and their reports

pub mod backend;
pub mod corpus;
pub mod evalharness;
pub mod exec;
pub mod locrules;
pub mod metrics;
pub mod textprep;
pub mod trainctl;
pub mod unicode;

/// SHA-256 (hex) of a value's JSON form.
pub fn content_hash<T: serde::Serialize + ?Sized>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("value serializes to JSON");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Current UTC time, RFC 3339 with milliseconds.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
