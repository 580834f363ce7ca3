//! Structured run reports.
//!
//! A [`ReportDocument`] collects per-run records (one per kernel run, chain
//! stage, or sweep point) together with the resolved configuration that
//! produced them and pass/fail verdicts from golden verification. It
//! serialises to JSON with a stable key order, and the records flatten to
//! CSV for plotting. The generation timestamp and tool version are the only
//! fields that may differ between two runs of the same configuration;
//! [`ReportDocument::canonical_body`] masks the timestamp so determinism
//! can be asserted byte-for-byte.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::engine::CycleStats;
use crate::pipeline::StageReport;

/// One measured run: a kernel invocation, a chain stage, or a sweep point.
///
/// The stall fields and `issued` tile the cycle budget exactly:
/// `issued + stall_raw + stall_lsu + stall_wfi + idle_tail == cycles * cores`.
/// `conflict_wait` counts arbitration queueing at request level and overlaps
/// the per-cycle buckets instead of adding to them. Instruction fetch is
/// ideal in this model, so there is no fetch-stall column by design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Human-readable point label, e.g. `fft n=1024 batch=16`.
    pub label: String,
    /// Kernel or stage family: `fft`, `mmm`, `cholesky`, `mmse`, `che`,
    /// `ne`, `stage`, `chain`.
    pub kernel: String,
    pub topology: String,
    /// Hash of the resolved configuration this record was produced under.
    pub config_hash: String,
    pub cycles: u64,
    pub single_core_cycles: u64,
    pub speedup: f64,
    pub ipc: f64,
    pub macs_per_cycle: f64,
    pub mac_count: u64,
    pub instances: u64,
    /// All cores of the topology (the accounting denominator).
    pub cores: usize,
    /// Cores with non-empty programs (the IPC denominator).
    pub active_cores: usize,
    pub issued: u64,
    pub stall_raw: u64,
    pub stall_lsu: u64,
    pub stall_wfi: u64,
    pub idle_tail: u64,
    pub conflict_wait: u64,
    pub worst_error: f64,
    pub verified: bool,
}

impl RunRecord {
    /// Builds a record from raw engine statistics for a single timed run,
    /// scaled by `runs` identical repetitions.
    #[allow(clippy::too_many_arguments)]
    pub fn from_stats(
        label: impl Into<String>,
        kernel: impl Into<String>,
        topology: impl Into<String>,
        config_hash: impl Into<String>,
        stats: &CycleStats,
        runs: u64,
        mac_count: u64,
        instances: u64,
        single_core_cycles: u64,
        worst_error: f64,
        verified: bool,
    ) -> Self {
        let cycles = stats.total_cycles * runs;
        let (raw, lsu, wfi, idle) = stats.stall_totals();
        let conflict: u64 = stats.per_core.iter().map(|c| c.conflict_wait).sum();
        Self {
            label: label.into(),
            kernel: kernel.into(),
            topology: topology.into(),
            config_hash: config_hash.into(),
            cycles,
            single_core_cycles,
            speedup: if cycles == 0 { 0.0 } else { single_core_cycles as f64 / cycles as f64 },
            ipc: stats.ipc(),
            macs_per_cycle: if cycles == 0 { 0.0 } else { mac_count as f64 / cycles as f64 },
            mac_count,
            instances,
            cores: stats.per_core.len(),
            active_cores: stats.active_cores,
            issued: stats.issued() * runs,
            stall_raw: raw * runs,
            stall_lsu: lsu * runs,
            stall_wfi: wfi * runs,
            idle_tail: idle * runs,
            conflict_wait: conflict * runs,
            worst_error,
            verified,
        }
    }

    /// Builds a record from a chain stage report.
    pub fn from_stage(
        stage: &StageReport,
        topology: impl Into<String>,
        config_hash: impl Into<String>,
        cores: usize,
    ) -> Self {
        Self {
            label: format!("stage {}", stage.stage),
            kernel: "stage".to_string(),
            topology: topology.into(),
            config_hash: config_hash.into(),
            cycles: stage.simulated_cycles,
            single_core_cycles: stage.single_core_cycles,
            speedup: stage.speedup,
            ipc: stage.ipc,
            macs_per_cycle: stage.macs_per_cycle,
            mac_count: stage.mac_count,
            instances: stage.instances,
            cores,
            active_cores: stage.active_cores,
            issued: stage.stalls.issued,
            stall_raw: stage.stalls.raw,
            stall_lsu: stage.stalls.lsu,
            stall_wfi: stage.stalls.wfi,
            idle_tail: stage.stalls.idle_tail,
            conflict_wait: stage.stalls.conflict_wait,
            worst_error: stage.worst_error,
            verified: true, // a stage report only exists once verification passed
        }
    }

    /// True when the stall buckets and issued cycles tile the cycle budget.
    pub fn accounting_consistent(&self) -> bool {
        self.issued + self.stall_raw + self.stall_lsu + self.stall_wfi + self.idle_tail
            == self.cycles * self.cores as u64
    }
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

/// Tool identity; the version is one of the two fields allowed to vary
/// between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

/// The full report: configuration echo, records, verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool: ToolInfo,
    /// Unix seconds at generation time; masked by [`Self::canonical_body`].
    pub generated_at: u64,
    /// Resolved configuration echo. Object keys serialise in sorted order,
    /// so the echo is byte-stable.
    pub config: Value,
    /// SHA-256 of the canonical (sorted-key) configuration JSON.
    pub config_hash: String,
    pub records: Vec<RunRecord>,
    pub verdicts: Vec<Verdict>,
}

/// Hex SHA-256 of a configuration value's canonical JSON form.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values always serialise");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        write!(out, "{byte:02x}").expect("writing to a String never fails");
    }
    out
}

impl ReportDocument {
    pub fn new(config: Value) -> Self {
        let config_hash = config_hash(&config);
        let generated_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            tool: ToolInfo {
                name: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            generated_at,
            config,
            config_hash,
            records: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn push_record(&mut self, record: RunRecord) {
        debug_assert!(record.accounting_consistent(), "record stall buckets must tile cycles");
        self.records.push(record);
    }

    pub fn push_verdict(&mut self, check: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict { check: check.into(), passed, detail: detail.into() });
    }

    /// False if any verification verdict failed; drives the exit code.
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Pretty JSON with stable key order (struct fields in declaration
    /// order, object maps sorted).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report documents always serialise")
    }

    /// The report body with the timestamp masked: byte-identical across
    /// repeated runs of the same configuration.
    pub fn canonical_body(&self) -> String {
        let mut masked = self.clone();
        masked.generated_at = 0;
        masked.to_json()
    }

    /// Flattens the records to CSV (header plus one row per record).
    /// Verdicts and the config echo stay in the JSON form.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for record in &self.records {
            writer.serialize(record).expect("flat records always serialise");
        }
        let bytes = writer.into_inner().expect("csv writer over a Vec never errors");
        String::from_utf8(bytes).expect("csv output is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_record(hash: &str) -> RunRecord {
        RunRecord {
            label: "mmm m=8 n=8 p=8".to_string(),
            kernel: "mmm".to_string(),
            topology: "custom(2,2,4)".to_string(),
            config_hash: hash.to_string(),
            cycles: 100,
            single_core_cycles: 900,
            speedup: 9.0,
            ipc: 0.8,
            macs_per_cycle: 5.12,
            mac_count: 512,
            instances: 1,
            cores: 16,
            active_cores: 16,
            issued: 1280,
            stall_raw: 100,
            stall_lsu: 100,
            stall_wfi: 60,
            idle_tail: 60,
            conflict_wait: 17,
            worst_error: 0.0,
            verified: true,
        }
    }

    #[test]
    fn accounting_check_accepts_tiled_budgets_and_rejects_others() {
        let hash = config_hash(&json!({"k": 1}));
        let good = sample_record(&hash);
        assert!(good.accounting_consistent());
        let mut bad = good.clone();
        bad.issued += 1;
        assert!(!bad.accounting_consistent());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&json!({"n": 16, "seed": 7}));
        let b = config_hash(&json!({"n": 16, "seed": 7}));
        let c = config_hash(&json!({"n": 16, "seed": 8}));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|ch| ch.is_ascii_hexdigit()));
    }

    #[test]
    fn key_order_ignores_insertion_order() {
        // Maps serialise sorted, so two configs written in different key
        // orders hash and echo identically.
        let a = serde_json::from_str::<Value>(r#"{"n": 4, "seed": 1}"#).unwrap();
        let b = serde_json::from_str::<Value>(r#"{"seed": 1, "n": 4}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn canonical_body_masks_only_the_timestamp() {
        let config = json!({"kernel": "fft", "n": 64});
        let mut doc_a = ReportDocument::new(config.clone());
        let mut doc_b = ReportDocument::new(config);
        doc_b.generated_at = doc_a.generated_at + 1000;
        for doc in [&mut doc_a, &mut doc_b] {
            doc.push_record(sample_record(&doc.config_hash.clone()));
            doc.push_verdict("golden", true, "max error 0");
        }
        assert_ne!(doc_a.generated_at, doc_b.generated_at);
        assert_eq!(doc_a.canonical_body(), doc_b.canonical_body());
        assert!(doc_a.all_passed());
        doc_a.push_verdict("golden", false, "diverged");
        assert!(!doc_a.all_passed());
    }

    #[test]
    fn csv_flattening_round_trips() {
        let mut doc = ReportDocument::new(json!({"kernel": "mmm"}));
        doc.push_record(sample_record(&doc.config_hash.clone()));
        let csv_text = doc.to_csv();
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let rows: Vec<RunRecord> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows, doc.records);
        // Labels with commas (topology literals) must survive quoting.
        assert!(csv_text.contains("\"custom(2,2,4)\""));
    }

    #[test]
    fn json_serialisation_is_reproducible() {
        let mut doc = ReportDocument::new(json!({"n": 8, "topology": "mempool"}));
        doc.push_record(sample_record(&doc.config_hash.clone()));
        assert_eq!(doc.to_json(), doc.to_json());
        let parsed: ReportDocument = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(parsed, doc);
    }
}
