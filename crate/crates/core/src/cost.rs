//! Static cost model: parameters, multiply-accumulates, multiply-adds,
//! activation memory and memory traffic, computed from graph metadata alone.
//!
//! Per node, with `E` the output element count of one sample:
//!
//! | kind | params | macs | madd |
//! |------|--------|------|------|
//! | conv | k²·Cin·Cout | params·H'·W' | 2·macs |
//! | linear | F·K + K | F·K | 2·macs |
//! | bn | 2C | 0 | 2·C·H·W |
//! | pool, relu, concat, add | 0 | 0 | E |
//! | input, flatten | 0 | 0 | 0 |
//!
//! `macs`, `madd` and byte columns scale with the batch. Bytes assume 32-bit
//! floats: `act_bytes` is the node output, `rw_bytes` is one read of every
//! input and weight element plus one write of the output. Flatten is a view and
//! costs nothing.

use std::fmt::Write as _;

use crate::graph::{ModelGraph, NodeKind};

const BYTES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub kind: &'static str,
    /// Output shape including the batch axis.
    pub out_shape: Vec<usize>,
    pub params: u64,
    pub macs: u64,
    pub madd: u64,
    pub act_bytes: u64,
    pub rw_bytes: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostTotals {
    pub params: u64,
    pub macs: u64,
    pub madd: u64,
    pub act_bytes: u64,
    pub rw_bytes: u64,
}

impl CostTotals {
    fn add(&mut self, r: &CostRow) {
        self.params += r.params;
        self.macs += r.macs;
        self.madd += r.madd;
        self.act_bytes += r.act_bytes;
        self.rw_bytes += r.rw_bytes;
    }

    fn columns(&self) -> [(&'static str, u64); 5] {
        [
            ("params", self.params),
            ("macs", self.macs),
            ("madd", self.madd),
            ("act_bytes", self.act_bytes),
            ("rw_bytes", self.rw_bytes),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub model: String,
    pub input_size: usize,
    pub batch: usize,
    pub rows: Vec<CostRow>,
    pub totals: CostTotals,
    /// Largest sum of simultaneously live activations when each tensor lives
    /// from its producer to its last consumer.
    pub peak_activation_bytes: u64,
}

pub const CSV_HEADER: &str = "name,kind,out_shape,params,macs,madd,act_bytes,rw_bytes";

fn numel(shape: &[usize]) -> u64 {
    shape.iter().map(|&d| d as u64).product()
}

/// Computes the cost table for `graph` at the given batch size.
pub fn analyze(graph: &ModelGraph, batch: usize) -> CostReport {
    let b = batch as u64;
    let mut rows = Vec::with_capacity(graph.nodes().len());
    let mut totals = CostTotals::default();
    for node in graph.nodes() {
        let out_elems = numel(&node.out_shape);
        let in_elems: u64 = node.inputs.iter().map(|i| numel(&graph.node(*i).out_shape)).sum();
        let weight_elems: u64 = node.kind.param_ids().iter().map(|p| graph.param(*p).numel() as u64).sum();
        let (params, macs, madd) = match &node.kind {
            NodeKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let p = (kernel * kernel * in_channels * out_channels) as u64;
                let spatial = numel(&node.out_shape[1..]);
                (p, p * spatial * b, 2 * p * spatial * b)
            }
            NodeKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                let m = (in_features * out_features) as u64;
                (m + *out_features as u64, m * b, 2 * m * b)
            }
            NodeKind::BatchNorm { channels, .. } => (2 * *channels as u64, 0, 2 * out_elems * b),
            NodeKind::Relu
            | NodeKind::MaxPool { .. }
            | NodeKind::AvgPool { .. }
            | NodeKind::GlobalAvgPool
            | NodeKind::Concat
            | NodeKind::Add => (0, 0, out_elems * b),
            NodeKind::Input | NodeKind::Flatten => (0, 0, 0),
        };
        let (act_bytes, rw_bytes) = match node.kind {
            NodeKind::Flatten => (0, 0),
            NodeKind::Input => (BYTES * out_elems * b, 0),
            _ => (
                BYTES * out_elems * b,
                BYTES * (in_elems * b + weight_elems + out_elems * b),
            ),
        };
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&node.out_shape);
        let row = CostRow {
            name: node.name.clone(),
            kind: node.kind.tag(),
            out_shape,
            params,
            macs,
            madd,
            act_bytes,
            rw_bytes,
        };
        totals.add(&row);
        rows.push(row);
    }
    let peak_activation_bytes = peak_live_bytes(graph, &rows);
    CostReport {
        model: graph.config().variant.to_string(),
        input_size: graph.config().input_size,
        batch,
        rows,
        totals,
        peak_activation_bytes,
    }
}

fn peak_live_bytes(graph: &ModelGraph, rows: &[CostRow]) -> u64 {
    let last_use = graph.last_use();
    let mut live = 0u64;
    let mut peak = 0u64;
    for (i, node) in graph.nodes().iter().enumerate() {
        live += rows[i].act_bytes;
        peak = peak.max(live);
        for inp in &node.inputs {
            if last_use[inp.0] == i {
                live -= rows[inp.0].act_bytes;
            }
        }
        if last_use[i] == i {
            live -= rows[i].act_bytes;
        }
    }
    peak
}

impl CostReport {
    /// Column sums over the rows selected by `keep`.
    pub fn totals_where(&self, keep: impl Fn(&CostRow) -> bool) -> CostTotals {
        let mut t = CostTotals::default();
        for r in self.rows.iter().filter(|r| keep(r)) {
            t.add(r);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let shape = r.out_shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.name, r.kind, shape, r.params, r.macs, r.madd, r.act_bytes, r.rw_bytes
            );
        }
        s
    }

    /// Aligned per-node table followed by totals in scaled units.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {} @ {}x{}, batch {}. Units: G = 1e9, M = 1e6, MB = 2^20 bytes. \
             Flops are multiply-accumulates (MACs); MAdd = 2 x MACs + element-wise ops.",
            self.model, self.input_size, self.input_size, self.batch
        );
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<7}  {:<18}  {:>10}  {:>14}  {:>14}  {:>12}  {:>12}",
            "name", "kind", "out_shape", "params", "macs", "madd", "act_bytes", "rw_bytes"
        );
        for r in &self.rows {
            let shape = format!("{:?}", r.out_shape);
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<7}  {:<18}  {:>10}  {:>14}  {:>14}  {:>12}  {:>12}",
                r.name, r.kind, shape, r.params, r.macs, r.madd, r.act_bytes, r.rw_bytes
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "total: params {:.3} M, Flops (MACs) {:.3} G, MAdd {:.3} G, memory {:.2} MB, MemR+W {:.2} MB",
            t.params as f64 / 1e6,
            t.macs as f64 / 1e9,
            t.madd as f64 / 1e9,
            self.peak_activation_bytes as f64 / MIB,
            t.rw_bytes as f64 / MIB,
        );
        s
    }
}

pub const MIB: f64 = (1u64 << 20) as f64;

/// Difference of one column between two reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnDelta {
    pub column: &'static str,
    pub a: u64,
    pub b: u64,
    /// `a - b`.
    pub absolute: i128,
    /// `(a - b) / b`, or 0 when both are zero.
    pub relative: f64,
}

/// Per-column deltas of `a` relative to `b` over the totals and the peak memory.
pub fn compare(a: &CostReport, b: &CostReport) -> Vec<ColumnDelta> {
    let mut cols: Vec<(&'static str, u64, u64)> = a
        .totals
        .columns()
        .iter()
        .zip(b.totals.columns())
        .map(|(&(name, x), (_, y))| (name, x, y))
        .collect();
    cols.push(("peak_act_bytes", a.peak_activation_bytes, b.peak_activation_bytes));
    cols.into_iter()
        .map(|(column, x, y)| {
            let absolute = x as i128 - y as i128;
            let relative = if y == 0 {
                if x == 0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                absolute as f64 / y as f64
            };
            ColumnDelta {
                column,
                a: x,
                b: y,
                absolute,
                relative,
            }
        })
        .collect()
}

/// One-line comparison of the counted parameters with the published total
/// for the variant, naming the channel reading in effect.
pub fn param_diagnostic(report: &CostReport, graph: &ModelGraph) -> String {
    let cfg = graph.config();
    let reference = cfg.variant.reference_params() as f64;
    let params = report.totals.params as f64;
    format!(
        "params {} ({:.3} M) vs published {:.2} M: {:+.2}%; reading: channel list = block input widths, \
         block-5 bottleneck width {} ({})",
        report.totals.params,
        params / 1e6,
        reference / 1e6,
        100.0 * (params - reference) / reference,
        cfg.bottleneck_width.width(cfg.block_channels[4], cfg.growth_rates[4]),
        cfg.bottleneck_width.describe()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build, ModelConfig, Variant};

    #[test]
    fn stem_conv_row() {
        let g = build(&ModelConfig::new(Variant::S)).unwrap();
        let r = analyze(&g, 1);
        let row = r.rows.iter().find(|r| r.name == "stem.layer1.conv").unwrap();
        assert_eq!(row.params, 3 * 3 * 3 * 128);
        assert_eq!(row.macs, 3 * 3 * 3 * 128 * 112 * 112);
        assert_eq!(row.madd, 2 * row.macs);
    }

    #[test]
    fn csv_header_and_row_count() {
        let g = build(&ModelConfig::new(Variant::S).with_input_size(32)).unwrap();
        let r = analyze(&g, 1);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), g.nodes().len());
    }

    #[test]
    fn self_compare_is_zero() {
        let g = build(&ModelConfig::new(Variant::S).with_input_size(32)).unwrap();
        let r = analyze(&g, 1);
        assert!(compare(&r, &r).iter().all(|d| d.absolute == 0 && d.relative == 0.0));
    }
}
