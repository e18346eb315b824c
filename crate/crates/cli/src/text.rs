//! Plain-text tables and heatmaps for reports.

use layoutpref::align::{AlignmentReport, ConfidenceCurve};
use layoutpref::labels::{ChoiceDistribution, StoreStats};
use layoutpref::layout::{write_pgm, Algorithm, PgmFormat, RasterImage};

pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), fmt4)
}

/// Micro, macro and the pairwise matrix.
pub fn alignment_table(report: &AlignmentReport) -> String {
    let mut out = format!("micro {}\nmacro {}\n", fmt_opt(report.micro), fmt_opt(report.macro_));
    let width = report.labelers.iter().map(String::len).max().unwrap_or(0).max(6);
    out.push_str(&format!("{:width$}", ""));
    for l in &report.labelers {
        out.push_str(&format!(" {l:>width$}"));
    }
    out.push('\n');
    for (l, row) in report.labelers.iter().zip(report.matrix()) {
        out.push_str(&format!("{l:width$}"));
        for cell in row {
            out.push_str(&format!(" {:>width$}", fmt_opt(cell)));
        }
        out.push('\n');
    }
    out
}

pub fn distribution_table(dist: &ChoiceDistribution) -> String {
    let mut out = String::new();
    for a in Algorithm::ALL {
        let i = a.index();
        out.push_str(&format!("{:<13} {:>5} {:>8}\n", a.tag(), dist.counts[i], fmt4(dist.percent[i])));
    }
    out.push_str(&format!("{:<13} {:>5}\n", "total", dist.total));
    out
}

/// Percentage of graphs with k distinct choices.
pub fn consensus_table(percent: &[f64; 8]) -> String {
    (0..8)
        .map(|k| format!("{} distinct {:>8}\n", k + 1, fmt4(percent[k])))
        .collect()
}

pub fn stats_table(s: &StoreStats) -> String {
    let mut out = format!(
        "labels {}\ngraphs {}\nannotators {}\nmean labels per graph {}\nhard labels {}\n",
        s.total_labels,
        s.graphs_labeled,
        s.annotators,
        fmt4(s.mean_labels_per_graph),
        s.hard_labels
    );
    for a in Algorithm::ALL {
        let t = a.tag();
        out.push_str(&format!(
            "{:<13} {:>5} {:>8}\n",
            t,
            s.choice_counts.get(t).copied().unwrap_or(0),
            fmt4(s.choice_percent.get(t).copied().unwrap_or(0.0))
        ));
    }
    out.push_str(&consensus_table(&s.consensus_percent));
    out
}

pub fn curve_table(curve: &ConfidenceCurve) -> String {
    let mut out = String::from("threshold retained alignment\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{:>9} {:>8} {:>9}\n",
            fmt4(p.threshold),
            fmt4(p.retained_fraction),
            fmt_opt(p.alignment)
        ));
    }
    out
}

/// Square graymap of a matrix, `cell` pixels per entry; missing entries are
/// black.
pub fn heatmap_pgm(matrix: &[Vec<Option<f64>>], cell: usize) -> Vec<u8> {
    let n = matrix.len();
    let mut img = RasterImage::new(n * cell);
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let v = v.unwrap_or(0.0);
            for y in i * cell..(i + 1) * cell {
                for x in j * cell..(j + 1) * cell {
                    img.pixels[y * n * cell + x] = v;
                }
            }
        }
    }
    write_pgm(&img, PgmFormat::Ascii)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_scales_cells() {
        let m = vec![vec![Some(1.0), None], vec![None, Some(0.5)]];
        let pgm = String::from_utf8(heatmap_pgm(&m, 2)).unwrap();
        let lines: Vec<&str> = pgm.lines().collect();
        assert_eq!(lines[..3], ["P2", "4 4", "255"]);
        assert_eq!(lines[3], "255 255 0 0");
        assert_eq!(lines[6], "0 0 128 128");
    }

    #[test]
    fn missing_values_print_as_dash() {
        assert_eq!(fmt_opt(None), "-");
        assert_eq!(fmt_opt(Some(0.123456)), "0.1235");
    }
}
