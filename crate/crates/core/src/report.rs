//! Report aggregation and plot emission: shares of delayed-reward
//! choices by language and by interest rate with cell-clustered 95%
//! CIs, discount-estimate plot data, and minimal dependency-free SVG
//! bar charts. Strong-FTR groups are clustered first (and rendered
//! bold) to match the published figure layout.

use crate::design::FtrClass;
use crate::econometrics::clustered_mean_ci;
use crate::estimation::{EstimationError, MleFit};
use crate::storage::AnalysisRow;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct ShareAggregate {
    pub group: String,
    pub ftr_class: FtrClass,
    pub share: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

fn cell_key(row: &AnalysisRow) -> String {
    match (row.d, row.i) {
        (Some(d), Some(i)) => format!("{}:{}:{}", row.language, d, i),
        _ => format!("{}:{}:{}", row.language, row.t2, row.r2),
    }
}

fn aggregate_shares<F>(rows: &[AnalysisRow], key_fn: F) -> Vec<ShareAggregate>
where
    F: Fn(&AnalysisRow) -> (u8, String),
{
    // Keys sort strong-FTR (rank 0) ahead of weak (rank 1), then by the
    // group label.
    let mut groups: BTreeMap<(u8, String), Vec<&AnalysisRow>> = BTreeMap::new();
    for row in rows {
        groups.entry(key_fn(row)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((ftr_rank, group), members)| {
            let values: Vec<(f64, String)> = members
                .iter()
                .map(|row| (row.y_later as f64, cell_key(row)))
                .collect();
            let (share, ci_low, ci_high) = clustered_mean_ci(&values);
            ShareAggregate {
                group,
                ftr_class: if ftr_rank == 0 {
                    FtrClass::Strong
                } else {
                    FtrClass::Weak
                },
                share,
                ci_low,
                ci_high,
                n: values.len(),
            }
        })
        .collect()
}

/// Share of delayed-reward choices per language with cell-clustered 95%
/// CIs; strong-FTR languages first, alphabetical within class.
pub fn share_by_language(rows: &[AnalysisRow]) -> Vec<ShareAggregate> {
    aggregate_shares(rows, |row| {
        (1 - row.ftr_strong.min(1), row.language.clone())
    })
}

/// Share of delayed-reward choices per (interest rate, FTR class).
pub fn share_by_interest(rows: &[AnalysisRow]) -> Vec<ShareAggregate> {
    aggregate_shares(rows, |row| {
        let interest = row
            .i
            .map(|i| format!("{i}"))
            .unwrap_or_else(|| format!("r2={}", row.r2));
        (1 - row.ftr_strong.min(1), interest)
    })
}

pub fn shares_to_csv(label: &str, shares: &[ShareAggregate]) -> String {
    let mut out = format!("{label},ftr_class,share,ci_low,ci_high,n\n");
    for s in shares {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            s.group,
            s.ftr_class.as_str(),
            s.share,
            s.ci_low,
            s.ci_high,
            s.n
        ));
    }
    out
}

/// Discount-estimate plot data (group, estimate, CI bounds, FTR class),
/// in the order produced by the grouped fit (strong-FTR first).
pub fn delta_plot_csv(fits: &[(String, FtrClass, Result<MleFit, EstimationError>)]) -> String {
    let mut out = String::from("group,ftr_class,delta,ci_low,ci_high\n");
    for (group, ftr, fit) in fits {
        if let Ok(f) = fit {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6}\n",
                group,
                ftr.as_str(),
                f.delta_hat,
                f.ci95_delta.0,
                f.ci95_delta.1
            ));
        }
    }
    out
}

/// One bar (or point-with-interval) in an SVG chart.
#[derive(Debug, Clone)]
pub struct PlotEntry {
    pub label: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Rendered bold (strong-FTR groups).
    pub bold: bool,
}

impl From<&ShareAggregate> for PlotEntry {
    fn from(s: &ShareAggregate) -> Self {
        PlotEntry {
            label: s.group.clone(),
            value: s.share,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            bold: s.ftr_class == FtrClass::Strong,
        }
    }
}

/// Minimal self-contained horizontal bar chart with CI whiskers. No
/// external renderer: plain SVG 1.1 shapes only.
pub fn bar_chart_svg(title: &str, entries: &[PlotEntry]) -> String {
    let row_height = 24.0;
    let label_width = 160.0;
    let plot_width = 420.0;
    let top = 40.0;
    let height = top + row_height * entries.len() as f64 + 20.0;
    let width = label_width + plot_width + 40.0;
    let max_value = entries
        .iter()
        .map(|e| e.ci_high.max(e.value))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let scale = plot_width / max_value;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    svg.push_str(&format!(
        "  <text x=\"{label_width:.0}\" y=\"20\" font-size=\"14\" font-weight=\"bold\">{}</text>\n",
        xml_escape(title)
    ));
    for (idx, entry) in entries.iter().enumerate() {
        let y = top + row_height * idx as f64;
        let bar_y = y + 4.0;
        let bar_h = row_height - 10.0;
        let bar_w = entry.value.max(0.0) * scale;
        let weight = if entry.bold { "bold" } else { "normal" };
        let fill = if entry.bold { "#2b6cb0" } else { "#a0bcd8" };
        svg.push_str(&format!(
            "  <text x=\"{:.0}\" y=\"{:.1}\" text-anchor=\"end\" font-weight=\"{weight}\">{}</text>\n",
            label_width - 6.0,
            bar_y + bar_h - 3.0,
            xml_escape(&entry.label)
        ));
        svg.push_str(&format!(
            "  <rect x=\"{label_width:.0}\" y=\"{bar_y:.1}\" width=\"{bar_w:.2}\" height=\"{bar_h:.1}\" fill=\"{fill}\"/>\n"
        ));
        let whisker_y = bar_y + bar_h / 2.0;
        let x_low = label_width + entry.ci_low.max(0.0) * scale;
        let x_high = label_width + entry.ci_high.max(0.0) * scale;
        svg.push_str(&format!(
            "  <line x1=\"{x_low:.2}\" y1=\"{whisker_y:.1}\" x2=\"{x_high:.2}\" y2=\"{whisker_y:.1}\" stroke=\"#222\" stroke-width=\"1.5\"/>\n"
        ));
        for x in [x_low, x_high] {
            svg.push_str(&format!(
                "  <line x1=\"{x:.2}\" y1=\"{:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"#222\" stroke-width=\"1.5\"/>\n",
                whisker_y - 4.0,
                whisker_y + 4.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn shares_svg(title: &str, shares: &[ShareAggregate]) -> String {
    let entries: Vec<PlotEntry> = shares.iter().map(PlotEntry::from).collect();
    bar_chart_svg(title, &entries)
}

pub fn delta_svg(
    title: &str,
    fits: &[(String, FtrClass, Result<MleFit, EstimationError>)],
) -> String {
    let entries: Vec<PlotEntry> = fits
        .iter()
        .filter_map(|(group, ftr, fit)| {
            fit.as_ref().ok().map(|f| PlotEntry {
                label: group.clone(),
                value: f.delta_hat,
                ci_low: f.ci95_delta.0,
                ci_high: f.ci95_delta.1,
                bold: *ftr == FtrClass::Strong,
            })
        })
        .collect();
    bar_chart_svg(title, &entries)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(language: &str, strong: bool, d: u32, i: f64, y_later: u8) -> AnalysisRow {
        AnalysisRow {
            language: language.into(),
            ftr_strong: strong as u8,
            d: Some(d),
            i: Some(i),
            t1: 1,
            r1: 1000,
            t2: 1 + d,
            r2: 1100,
            order_sooner_first: 1,
            y_later,
            study: "standard_gpt4".into(),
        }
    }

    fn mixed_rows() -> Vec<AnalysisRow> {
        let mut rows = Vec::new();
        for rep in 0..40u32 {
            // German (weak FTR) chooses later more often than English
            // (strong FTR).
            rows.push(row("german", false, 12, 0.5, (rep % 4 != 0) as u8));
            rows.push(row("english", true, 12, 0.5, (rep % 4 == 0) as u8));
            rows.push(row("german", false, 6, 0.1, (rep % 2) as u8));
            rows.push(row("english", true, 6, 0.1, (rep % 4 == 1) as u8));
        }
        rows
    }

    #[test]
    fn language_shares_order_strong_first_and_average_correctly() {
        let shares = share_by_language(&mixed_rows());
        assert_eq!(shares.len(), 2);
        assert_eq!(shares[0].group, "english");
        assert_eq!(shares[0].ftr_class, FtrClass::Strong);
        assert_eq!(shares[1].group, "german");
        // English: 10/40 + 10/40 over 80 rows = 0.25; German: 30/40 +
        // 20/40 over 80 rows = 0.625.
        assert!((shares[0].share - 0.25).abs() < 1e-12);
        assert!((shares[1].share - 0.625).abs() < 1e-12);
        assert_eq!(shares[0].n, 80);
        for s in &shares {
            assert!(s.ci_low <= s.share && s.share <= s.ci_high);
        }
    }

    #[test]
    fn interest_shares_group_by_rate_within_class() {
        let shares = share_by_interest(&mixed_rows());
        // Two interest rates x two FTR classes.
        assert_eq!(shares.len(), 4);
        assert!(shares[..2].iter().all(|s| s.ftr_class == FtrClass::Strong));
        assert!(shares[2..].iter().all(|s| s.ftr_class == FtrClass::Weak));
        assert_eq!(shares[0].group, "0.1");
        assert_eq!(shares[1].group, "0.5");
    }

    #[test]
    fn csv_shapes() {
        let shares = share_by_language(&mixed_rows());
        let csv = shares_to_csv("language", &shares);
        assert!(csv.starts_with("language,ftr_class,share,ci_low,ci_high,n\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn svg_is_well_formed_and_marks_strong_bold() {
        let shares = share_by_language(&mixed_rows());
        let svg = shares_svg("Share of delayed choices", &shares);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("font-weight=\"bold\">english<"));
        assert!(svg.contains("font-weight=\"normal\">german<"));
        assert_eq!(svg.matches("<rect").count(), shares.len());
    }

    #[test]
    fn svg_escapes_labels() {
        let entries = vec![PlotEntry {
            label: "a<b&c".into(),
            value: 0.5,
            ci_low: 0.4,
            ci_high: 0.6,
            bold: false,
        }];
        let svg = bar_chart_svg("t\"x\"", &entries);
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(!svg.contains("a<b"));
    }

    #[test]
    fn delta_plot_csv_skips_failed_fits() {
        let fits = vec![
            (
                "english".to_string(),
                FtrClass::Strong,
                Err(crate::estimation::EstimationError::EmptyData),
            ),
        ];
        let csv = delta_plot_csv(&fits);
        assert_eq!(csv.lines().count(), 1);
    }
}
