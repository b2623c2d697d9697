//! Result persistence: CSV (byte-stable across runs), JSON mirrors of the
//! full report, and an SVG rendering of the success-vs-iteration curve.

use std::path::Path;

use crate::harness::{BenchmarkReport, HarnessError, TransferMatrix};

/// Per-input CSV with columns
/// `input_id,success,queries,first_success_iter,final_loss`.
/// Contains no timing data, so reruns with the same master seed produce
/// byte-identical files.
pub fn report_to_csv_string(report: &BenchmarkReport) -> Result<String, HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["input_id", "success", "queries", "first_success_iter", "final_loss"])?;
    for entry in &report.outcomes {
        let fsi = entry
            .outcome
            .first_success_iter
            .map(|v| v.to_string())
            .unwrap_or_default();
        let final_loss = entry
            .outcome
            .loss_trace
            .last()
            .map(|v| v.to_string())
            .unwrap_or_default();
        writer.write_record([
            entry.input_id.to_string(),
            entry.outcome.success.to_string(),
            entry.outcome.queries.to_string(),
            fsi,
            final_loss,
        ])?;
    }
    let bytes = writer.into_inner().expect("vec writer cannot fail");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    std::fs::write(path, content)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub fn export_csv(report: &BenchmarkReport, path: &Path) -> Result<(), HarnessError> {
    write_file(path, &report_to_csv_string(report)?)
}

pub fn export_json(report: &BenchmarkReport, path: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report)?;
    write_file(path, &json)
}

/// Parses a JSON report produced by [`export_json`].
pub fn parse_report_json(bytes: &[u8]) -> Result<BenchmarkReport, HarnessError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Renders the cumulative success-rate curve as a standalone SVG polyline
/// with iteration on the x-axis.
pub fn curve_svg(report: &BenchmarkReport) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let n = report.curve.len().max(1);

    let mut points = String::new();
    for (i, &rate) in report.curve.iter().enumerate() {
        let x = MARGIN + (i + 1) as f64 / n as f64 * plot_w;
        let y = MARGIN + (1.0 - rate) * plot_h;
        points.push_str(&format!("{x:.2},{y:.2} "));
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = MARGIN + (1.0 - frac) * plot_h;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{frac:.2}</text>\n",
            MARGIN - 6.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">iteration</text>\n",
        MARGIN + plot_w / 2.0,
        HEIGHT - MARGIN + 32.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"13\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">success rate</text>\n",
        MARGIN + plot_h / 2.0,
        MARGIN + plot_h / 2.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        n
    ));
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.trim_end()
    ));
    svg.push_str("</svg>\n");
    svg
}

pub fn export_curve_svg(report: &BenchmarkReport, path: &Path) -> Result<(), HarnessError> {
    write_file(path, &curve_svg(report))
}

/// Matrix CSV: one row per source model, one column per target, empty cells
/// where no samples were available.
pub fn transfer_to_csv_string(matrix: &TransferMatrix) -> Result<String, HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["source\\target".to_string()];
    header.extend(matrix.model_names.iter().cloned());
    writer.write_record(&header)?;
    for (i, name) in matrix.model_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        for j in 0..matrix.model_names.len() {
            row.push(match matrix.rates[i][j] {
                Some(rate) => rate.to_string(),
                None => String::new(),
            });
        }
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().expect("vec writer cannot fail");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_transfer_csv(matrix: &TransferMatrix, path: &Path) -> Result<(), HarnessError> {
    write_file(path, &transfer_to_csv_string(matrix)?)
}

pub fn export_transfer_json(matrix: &TransferMatrix, path: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(matrix)?;
    write_file(path, &json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Norm, NormBudget, SeedSpace};
    use crate::harness::{AttackSelector, BenchmarkConfig, QueryPercentiles};
    use crate::nattack::AttackConfig;

    fn empty_report() -> BenchmarkReport {
        let budget = NormBudget::new(Norm::Linf, 0.1).unwrap();
        BenchmarkReport {
            config: BenchmarkConfig {
                attack: AttackSelector::NAttack,
                attack_config: AttackConfig::new(budget),
                num_inputs: 0,
                master_seed: 0,
                seed_space: SeedSpace::identity(2),
                description: "empty".into(),
            },
            warm_start: false,
            outcomes: vec![],
            success_rate: 0.0,
            curve: vec![],
            total_queries: 0,
            query_percentiles: QueryPercentiles {
                p10: 0,
                p25: 0,
                p50: 0,
                p75: 0,
                p90: 0,
                mean: 0.0,
                mean_per_success: None,
            },
            query_efficiency: vec![],
            wall_clock_secs: 0.0,
            warnings: vec![],
        }
    }

    #[test]
    fn empty_report_yields_header_only_csv() {
        let csv = report_to_csv_string(&empty_report()).unwrap();
        assert_eq!(
            csv,
            "input_id,success,queries,first_success_iter,final_loss\n"
        );
    }

    #[test]
    fn json_round_trip_preserves_the_report() {
        let report = empty_report();
        let json = serde_json::to_string(&report).unwrap();
        let back = parse_report_json(json.as_bytes()).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn svg_contains_a_polyline() {
        let mut report = empty_report();
        report.curve = vec![0.0, 0.25, 0.25, 0.75, 1.0];
        let svg = curve_svg(&report);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("success rate"));
    }

    #[test]
    fn transfer_csv_handles_absent_cells() {
        let matrix = TransferMatrix {
            model_names: vec!["a".into(), "b".into()],
            rates: vec![vec![Some(1.0), Some(0.5)], vec![None, None]],
            counts: vec![vec![4, 4], vec![0, 0]],
            warnings: vec![],
        };
        let csv = transfer_to_csv_string(&matrix).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "source\\target,a,b");
        assert_eq!(lines.next().unwrap(), "a,1,0.5");
        assert_eq!(lines.next().unwrap(), "b,,");
    }
}
