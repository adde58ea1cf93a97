use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayStats;
use crate::model::{count_warnings, ExtractionRecord, WarningCounts};

/// Everything needed to reproduce a run: configuration, inputs, backends and
/// (for replay runs) the fixtures consumed.
///
/// Replay runs carry no timestamps so that repeating one yields a
/// byte-identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Input file name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub backends: BTreeMap<String, String>,
    /// Backend name to the fixture digests it served, sorted.
    pub fixtures: BTreeMap<String, Vec<String>>,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub documents: usize,
    pub records: usize,
    pub schema_size: usize,
    pub gateway: GatewayStats,
    pub warnings: WarningCounts,
    pub failed_documents: usize,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            backends: BTreeMap::new(),
            fixtures: BTreeMap::new(),
            started_at: None,
            finished_at: None,
            documents: 0,
            records: 0,
            schema_size: 0,
            gateway: GatewayStats::default(),
            warnings: WarningCounts::new(),
            failed_documents: 0,
        }
    }

    pub fn summarize(
        &mut self,
        documents: usize,
        records: &[ExtractionRecord],
        schema_size: usize,
    ) {
        self.documents = documents;
        self.records = records.len();
        self.schema_size = schema_size;
        self.warnings = count_warnings(records.iter().flat_map(|r| &r.warnings));
        self.failed_documents = records
            .iter()
            .filter(|r| r.error.is_some())
            .map(|r| r.document_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Warning, WarningKind};

    fn record(
        id: &str,
        iteration: usize,
        error: bool,
        warnings: &[WarningKind],
    ) -> ExtractionRecord {
        ExtractionRecord {
            error: error.then(|| "boom".to_string()),
            warnings: warnings.iter().map(|k| Warning::new(*k, "w")).collect(),
            ..ExtractionRecord::empty(id, iteration)
        }
    }

    #[test]
    fn summarize_counts_records_warnings_and_failed_documents() {
        let records = [
            record("a", 0, false, &[WarningKind::Parse]),
            record("a", 1, true, &[WarningKind::DocumentFailure]),
            record(
                "b",
                0,
                true,
                &[WarningKind::DocumentFailure, WarningKind::Parse],
            ),
            record("b", 1, true, &[WarningKind::DocumentFailure]),
        ];
        let mut m = RunManifest::new("run", serde_json::json!({}));
        m.summarize(2, &records, 7);
        assert_eq!((m.documents, m.records, m.schema_size), (2, 4, 7));
        assert_eq!(m.failed_documents, 2);
        assert_eq!(m.warnings[&WarningKind::DocumentFailure], 3);
        assert_eq!(m.warnings[&WarningKind::Parse], 2);
    }

    #[test]
    fn fresh_manifest_has_no_timestamps_and_round_trips() {
        let m = RunManifest::new("evaluate", serde_json::json!({"k": 1}));
        assert_eq!(m.started_at, None);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"started_at\":null"));
        assert_eq!(serde_json::from_str::<RunManifest>(&json).unwrap(), m);
    }
}
