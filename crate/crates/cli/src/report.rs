//! Report rows, numeric formatting, and atomic artifact writes.
//!
//! `report.csv` is the byte-stable artifact: the same configuration and seed
//! must render the same bytes whatever the worker count. Everything here is
//! a pure function of the computed values, and files land via a write to a
//! temporary name followed by a rename.

use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const REPORT_HEADER: &str =
    "label,risk_free,risky_ctm,risky_dtm,cva_ctm,cva_dtm,relative_difference,standard_error";

/// One output row; absent fields render empty.
#[derive(Debug, Clone, Default)]
pub struct ReportRow {
    pub label: String,
    pub risk_free: Option<f64>,
    pub risky_ctm: Option<f64>,
    pub risky_dtm: Option<f64>,
    pub cva_ctm: Option<f64>,
    pub cva_dtm: Option<f64>,
    pub relative_difference: Option<f64>,
    pub standard_error: Option<f64>,
}

impl ReportRow {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    fn csv_line(&self) -> String {
        let cell = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.label,
            cell(self.risk_free),
            cell(self.risky_ctm),
            cell(self.risky_dtm),
            cell(self.cva_ctm),
            cell(self.cva_dtm),
            cell(self.relative_difference),
            cell(self.standard_error),
        )
    }
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Plain decimal with six significant figures, no exponent notation and no
/// grouping. Values at or above 1e6 keep their full integer part; below
/// about 1e-25 the fixed precision cap underflows the display to zeros.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        // folds -0.0 into one spelling
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (5 - exponent).clamp(0, 30) as usize;
    format!("{x:.decimals$}")
}

pub fn render_meta(
    command: &str,
    seed: u64,
    paths: usize,
    config_sha256: &str,
    runtime_ms: u128,
) -> String {
    format!(
        "command={command}\nseed={seed}\npaths={paths}\nconfig_sha256={config_sha256}\nruntime_ms={runtime_ms}\n"
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(digest.len() * 2);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write under a temporary name in the same directory, then rename into
/// place so readers never observe a half-written artifact.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> io::Result<PathBuf> {
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    let target = dir.join(name);
    std::fs::rename(&tmp, &target)?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_figures_across_magnitudes() {
        assert_eq!(format_sig6(19550.912), "19550.9");
        assert_eq!(format_sig6(-1.4451612), "-1.44516");
        assert_eq!(format_sig6(0.00042), "0.000420000");
        assert_eq!(format_sig6(123.4567891), "123.457");
        assert_eq!(format_sig6(1234567.89), "1234568");
    }

    #[test]
    fn zero_and_negative_zero_share_a_spelling() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(-0.0), "0");
    }

    #[test]
    fn non_finite_values_have_stable_spellings() {
        assert_eq!(format_sig6(f64::INFINITY), "inf");
        assert_eq!(format_sig6(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_sig6(f64::NAN), "nan");
    }

    #[test]
    fn rounding_may_carry_into_a_new_leading_digit() {
        assert_eq!(format_sig6(0.9999999), "1.000000");
    }

    #[test]
    fn empty_cells_render_as_nothing() {
        let mut row = ReportRow::new("zcb");
        row.risk_free = Some(0.97);
        row.risky_dtm = Some(0.95);
        row.cva_dtm = Some(0.02);
        assert_eq!(row.csv_line(), "zcb,0.970000,,0.950000,,0.0200000,,");
    }

    #[test]
    fn report_renders_header_then_rows() {
        let rows = vec![ReportRow::new("a"), ReportRow::new("b")];
        let text = render_report(&rows);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        assert_eq!(lines.next(), Some("a,,,,,,,"));
        assert_eq!(lines.next(), Some("b,,,,,,,"));
        assert_eq!(lines.next(), None);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn meta_lists_the_run_identity() {
        let meta = render_meta("cva", 7, 1000, "abc123", 42);
        assert_eq!(
            meta,
            "command=cva\nseed=7\npaths=1000\nconfig_sha256=abc123\nruntime_ms=42\n"
        );
    }

    #[test]
    fn sha256_matches_a_known_digest() {
        // sha256("abc"), a published test vector
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temporary_behind() {
        let dir = std::env::temp_dir().join(format!("riskyval-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = write_atomic(&dir, "report.csv", "hello\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "hello\n");
        assert!(!dir.join(".report.csv.tmp").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
