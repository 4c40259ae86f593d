//! Merges metrics tables across evaluations. Method names are free text so
//! externally produced rows can sit alongside LF / sIQT / kIQT.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kiqt_core::metrics::CSV_HEADER;
use kiqt_core::tensorio::MaskPattern;

use super::ReportArgs;

/// A validated row, kept as the original text.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_id: String,
    pub fields: Vec<String>,
}

/// Splits `label=path` and resolves directories to `table` inside them.
fn resolve_input(spec: &str, table: &str) -> (String, PathBuf) {
    let (label, raw) = match spec.split_once('=') {
        Some((l, p)) if !l.is_empty() && !l.contains(['/', '\\']) => (Some(l.to_string()), PathBuf::from(p)),
        _ => (None, PathBuf::from(spec)),
    };
    let path = if raw.is_dir() { raw.join(table) } else { raw.clone() };
    let label = label.unwrap_or_else(|| {
        let dir = if raw.is_dir() { raw.as_path() } else { raw.parent().unwrap_or(Path::new("")) };
        dir.file_name().map_or("run".to_string(), |n| n.to_string_lossy().into_owned())
    });
    (label, path)
}

/// Checks the header and every value against the metrics schema. Errors
/// name the offending column.
pub fn parse_table(text: &str, run_id: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("empty table"))?.split(',').map(str::trim).collect();
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(found) if found == expected => {}
            Some(found) => bail!("schema error in column `{expected}`: header has `{found}`"),
            None => bail!("schema error: missing column `{expected}`"),
        }
    }
    if let Some(extra) = header.get(CSV_HEADER.len()) {
        bail!("schema error: unexpected column `{extra}`");
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != CSV_HEADER.len() {
            bail!("schema error on row {}: {} fields, expected {}", n + 1, fields.len(), CSV_HEADER.len());
        }
        for (col, value) in CSV_HEADER.iter().zip(&fields) {
            let ok = match *col {
                "pattern" => value.parse::<MaskPattern>().is_ok(),
                "method" => !value.is_empty(),
                "n_slices" => value.parse::<usize>().is_ok(),
                _ => value.parse::<f64>().is_ok_and(f64::is_finite),
            };
            if !ok {
                bail!("schema error in column `{col}` on row {}: `{value}`", n + 1);
            }
        }
        rows.push(ReportRow { run_id: run_id.to_string(), fields });
    }
    Ok(rows)
}

pub fn render(rows: &[ReportRow]) -> String {
    let mut out = format!("run_id,{}\n", CSV_HEADER.join(","));
    for r in rows {
        out.push_str(&r.run_id);
        out.push(',');
        out.push_str(&r.fields.join(","));
        out.push('\n');
    }
    out
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for spec in &args.inputs {
        let (label, path) = resolve_input(spec, &args.table);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        rows.extend(parse_table(&text, &label).with_context(|| format!("in {}", path.display()))?);
    }
    let merged = render(&rows);
    if let Some(out) = &args.out {
        fs::write(out, &merged).with_context(|| format!("writing {}", out.display()))?;
    }
    let width = rows.iter().map(|r| r.run_id.len()).max().unwrap_or(6).max(6);
    println!("{:<width$}  {:<10} {:>8} {:<8} {:>18} {:>16}", "run_id", "pattern", "fraction", "method", "PSNR", "SSIM");
    for r in &rows {
        let f = &r.fields;
        println!(
            "{:<width$}  {:<10} {:>8} {:<8} {:>9} ± {:<6} {:>7} ± {:<6}",
            r.run_id, f[0], f[1], f[2], f[3], f[4], f[5], f[6]
        );
    }
    Ok(())
}
