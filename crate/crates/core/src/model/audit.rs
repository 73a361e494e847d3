//! Parameter accounting and the comparison against the published layer
//! table.

use std::fmt::Write as _;

use super::config::{LayerKind, MapShape, ModelConfig, EXFEAT_KERNELS};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub kind: &'static str,
    pub output: MapShape,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamAudit {
    pub rows: Vec<LayerCount>,
    pub total: usize,
}

/// Closed-form parameter counts derived from the config alone.
pub fn param_audit(config: &ModelConfig) -> Result<ParamAudit> {
    let shapes = config.shape_table()?;
    let mut rows = Vec::with_capacity(shapes.len());
    let mut cur = config.input;
    for (spec, &out) in config.layers.iter().zip(&shapes) {
        let c_in = cur[0];
        let len: usize = cur.iter().product();
        let params = match &spec.kind {
            LayerKind::Conv {
                kernel, out_channels, ..
            } => kernel * kernel * c_in * out_channels + out_channels,
            LayerKind::ExFeat => EXFEAT_KERNELS.iter().map(|s| s * s * c_in * c_in + c_in).sum(),
            LayerKind::Add { .. } => 0,
            LayerKind::Fc { out_units, .. } => len * out_units + out_units,
            LayerKind::Classifier { classes } => len * classes + classes,
        };
        rows.push(LayerCount {
            name: spec.name.clone(),
            kind: spec.kind_label(),
            output: out,
            params,
        });
        cur = out;
    }
    let total = rows.iter().map(|r| r.params).sum();
    Ok(ParamAudit { rows, total })
}

/// One row of the published configuration table: layer, output
/// `(C, H, W)` and the printed parameter count (`None` for parameter-free
/// rows).
pub struct TableRow {
    pub name: &'static str,
    pub output: MapShape,
    pub printed: Option<&'static str>,
}

pub const TABLE_I: &[TableRow] = &[
    TableRow { name: "Conv1", output: [32, 128, 128], printed: Some("2K") },
    TableRow { name: "Conv2", output: [32, 64, 64], printed: Some("9K") },
    TableRow { name: "ExFeat1", output: [32, 64, 64], printed: Some("86K") },
    TableRow { name: "Add1", output: [32, 64, 64], printed: None },
    TableRow { name: "Conv4", output: [64, 32, 32], printed: Some("18K") },
    TableRow { name: "ExFeat2", output: [64, 32, 32], printed: Some("342K") },
    TableRow { name: "Add2", output: [64, 32, 32], printed: None },
    TableRow { name: "Conv5", output: [96, 16, 16], printed: Some("55K") },
    TableRow { name: "ExFeat3", output: [96, 16, 16], printed: Some("773K") },
    TableRow { name: "Add3", output: [96, 16, 16], printed: None },
    TableRow { name: "Conv7", output: [128, 8, 8], printed: Some("111K") },
    TableRow { name: "ExFeat4", output: [128, 8, 8], printed: Some("1M") },
    TableRow { name: "Add4", output: [128, 8, 8], printed: None },
    TableRow { name: "Conv9", output: [184, 4, 4], printed: Some("212K") },
    TableRow { name: "Conv10", output: [256, 2, 2], printed: Some("424K") },
    TableRow { name: "FC1", output: [512, 1, 1], printed: Some("525K") },
    TableRow { name: "FC2", output: [1024, 1, 1], printed: Some("525K") },
];

/// `"86K"` -> `(86, 1000)`.
fn parse_printed(s: &str) -> (u64, u64) {
    let (digits, unit) = match s.chars().last() {
        Some('K') => (&s[..s.len() - 1], 1_000),
        Some('M') => (&s[..s.len() - 1], 1_000_000),
        _ => (s, 1),
    };
    (digits.parse().expect("table literal"), unit)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDelta {
    pub name: String,
    pub computed: usize,
    pub printed: &'static str,
    /// Printed value read at face value (`"1M"` -> 1,000,000).
    pub nominal: u64,
    /// `computed` rounds to the printed figure at the printed unit.
    pub matches_at_precision: bool,
    pub delta: i64,
}

/// Whether a config has the layer structure of the published network
/// (any class count).
pub fn is_canonical(config: &ModelConfig) -> bool {
    let reference = ModelConfig::canonical();
    let body = |c: &ModelConfig| {
        c.layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::Classifier { .. }))
            .cloned()
            .collect::<Vec<_>>()
    };
    config.input == reference.input && body(config) == body(&reference)
}

/// Computed counts next to the printed table values, for rows present in
/// both.
pub fn compare_with_table(audit: &ParamAudit) -> Vec<TableDelta> {
    let mut out = Vec::new();
    for row in TABLE_I {
        let (Some(printed), Some(found)) = (row.printed, audit.rows.iter().find(|r| r.name == row.name)) else {
            continue;
        };
        let (value, unit) = parse_printed(printed);
        let nominal = value * unit;
        let rounded = (found.params as u64 + unit / 2) / unit;
        out.push(TableDelta {
            name: row.name.to_string(),
            computed: found.params,
            printed,
            nominal,
            matches_at_precision: rounded == value,
            delta: found.params as i64 - nominal as i64,
        });
    }
    out
}

/// `1234567` -> `"1,234,567"`.
pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Human-readable audit table, with the published-table comparison
/// appended for the canonical network.
pub fn render_audit(config: &ModelConfig) -> Result<String> {
    let audit = param_audit(config)?;
    let mut s = String::new();
    let [c, h, w] = config.input;
    let _ = writeln!(s, "{:<12} {:<10} {:>18} {:>12}", "layer", "kind", "output", "params");
    let _ = writeln!(s, "{:<12} {:<10} {:>18} {:>12}", "Input", "-", format!("{h} x {w} x {c}"), "-");
    for r in &audit.rows {
        let [c, h, w] = r.output;
        let _ = writeln!(
            s,
            "{:<12} {:<10} {:>18} {:>12}",
            r.name,
            r.kind,
            format!("{h} x {w} x {c}"),
            group_thousands(r.params)
        );
    }
    let _ = writeln!(s, "total: {} ({} classes)", group_thousands(audit.total), config.num_classes());
    if is_canonical(config) {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>12} {:>8} {:>10} {:>10}", "layer", "computed", "table", "check", "delta");
        for d in compare_with_table(&audit) {
            let _ = writeln!(
                s,
                "{:<12} {:>12} {:>8} {:>10} {:>+10}",
                d.name,
                group_thousands(d.computed),
                d.printed,
                if d.matches_at_precision { "match" } else { "MISMATCH" },
                d.delta
            );
        }
    }
    Ok(s)
}
