//! CSV and static SVG renderings of ROC reports and generic curves.

use super::RocReport;

/// `threshold,fpr,tpr` rows under a comment header carrying the summary.
pub fn roc_csv(report: &RocReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# id={} auc={:.6} tpr_at_tau={} tau={} n_real={} n_fake={}\n",
        if report.scores_id.is_empty() { "-" } else { &report.scores_id },
        report.auc,
        report.tpr_at_tau.map_or("-".into(), |v| format!("{v:.6}")),
        report.tau.map_or("-".into(), |v| format!("{v:.6}")),
        report.n_real,
        report.n_fake
    ));
    out.push_str("threshold,fpr,tpr\n");
    for p in &report.points {
        out.push_str(&format!("{},{:.6},{:.6}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Static SVG line plot over the unit square (series of (x, y) points in
/// [0, 1]); used for ROC curves and success-rate curves.
pub fn line_plot_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (width, height) = (560.0, 480.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);
    let px = |x: f64| ml + x.clamp(0.0, 1.0) * pw;
    let py = |y: f64| mt + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    ));
    // axes + gridlines
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            px(f), py(0.0), px(f), py(1.0)
        ));
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            px(0.0), py(f), px(1.0), py(f)
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
            px(f), py(0.0) + 16.0, f
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
            px(0.0) - 6.0, py(f) + 4.0, f
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        ml + pw / 2.0,
        height - 12.0,
        xml_escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0,
        xml_escape(y_label)
    ));

    for (i, (label, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> =
            points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
            path.join(" "),
            color
        ));
        let ly = mt + 16.0 + 16.0 * i as f64;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly}\" x2=\"{:.1}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2.5\"/>\n",
            ml + pw - 150.0,
            ml + pw - 128.0,
            color
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            ml + pw - 122.0,
            ly + 4.0,
            xml_escape(label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// ROC curves (one per report) on a single plot, with the chance diagonal.
pub fn roc_svg(title: &str, reports: &[&RocReport]) -> String {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = vec![(
        "chance".into(),
        vec![(0.0, 0.0), (1.0, 1.0)],
    )];
    for r in reports {
        let label = if r.scores_id.is_empty() {
            format!("auc={:.3}", r.auc)
        } else {
            format!("{} (auc={:.3})", r.scores_id, r.auc)
        };
        series.push((label, r.points.iter().map(|p| (p.fpr, p.tpr)).collect()));
    }
    line_plot_svg(title, "false positive rate", "true positive rate", &series)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
