//! Renders the CSV tables emitted by other commands into SVG plots and a
//! markdown summary. Reads nothing but those files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plotters::prelude::*;

type Row = BTreeMap<String, String>;

struct Table {
    headers: Vec<String>,
    rows: Vec<Row>,
}

fn read_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let rows = rdr
        .records()
        .map(|r| Ok(headers.iter().cloned().zip(r?.iter().map(str::to_owned)).collect()))
        .collect::<Result<_>>()?;
    Ok(Table { headers, rows })
}

fn num(row: &Row, key: &str) -> f64 {
    row.get(key).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn dirs_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![root.to_path_buf()];
    let mut i = 0;
    while i < out.len() {
        let mut children: Vec<PathBuf> = std::fs::read_dir(&out[i])
            .with_context(|| format!("listing {}", out[i].display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && !p.ends_with("plots"))
            .collect();
        children.sort();
        out.extend(children);
        i += 1;
    }
    Ok(out)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn line_plot(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    ensure_parent(path)?;
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw()?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn bar_plot(path: &Path, title: &str, values: &[f64], highlight: usize) -> Result<()> {
    ensure_parent(path)?;
    let top = values.iter().cloned().fold(0.0, f64::max).max(1e-3) * 1.1;
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..values.len() as f64, 0f64..top)?;
    chart.configure_mesh().x_desc("dimension").y_desc("|pearson|").disable_x_mesh().draw()?;
    chart.draw_series(values.iter().enumerate().map(|(i, v)| {
        let color = if i == highlight { RED.to_rgba() } else { BLUE.mix(0.6) };
        Rectangle::new([(i as f64 + 0.1, 0.0), (i as f64 + 0.9, *v)], color.filled())
    }))?;
    root.present()?;
    Ok(())
}

fn render_sweep(dir: &Path, rows: &[Row], out: &mut Vec<PathBuf>) -> Result<()> {
    let pts = |key: &str| rows.iter().map(|r| (num(r, "level"), num(r, key))).collect::<Vec<_>>();
    let path = dir.join("plots").join("sweep_score.svg");
    line_plot(
        &path,
        "classifier score by sentiment level",
        "level",
        "mean P(positive)",
        &[("positive sources".into(), pts("mean_score_pos_source")), ("negative sources".into(), pts("mean_score_neg_source"))],
    )?;
    out.push(path);
    let path = dir.join("plots").join("sweep_jaccard.svg");
    line_plot(
        &path,
        "content overlap by sentiment level",
        "level",
        "mean Jaccard",
        &[("positive sources".into(), pts("mean_jaccard_pos")), ("negative sources".into(), pts("mean_jaccard_neg"))],
    )?;
    out.push(path);
    Ok(())
}

fn render_curves(dir: &Path, rows: &[Row], out: &mut Vec<PathBuf>) -> Result<()> {
    for (key, label) in [("val_kl", "validation KL (nats)"), ("val_mi", "validation MI (nats)")] {
        let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows {
            let name = format!("{} seed {}", r.get("arm").map_or("", String::as_str), r.get("seed").map_or("", String::as_str));
            series.entry(name).or_default().push((num(r, "epoch"), num(r, key)));
        }
        let path = dir.join("plots").join(format!("{key}.svg"));
        line_plot(&path, label, "epoch", key, &series.into_iter().collect::<Vec<_>>())?;
        out.push(path);
    }
    Ok(())
}

fn render_probe(dir: &Path, rows: &[Row], out: &mut Vec<PathBuf>) -> Result<()> {
    let values: Vec<f64> = rows.iter().map(|r| num(r, "pearson").abs()).collect();
    let za = rows.iter().position(|r| r.get("is_z_a").is_some_and(|v| v == "true")).unwrap_or(values.len().saturating_sub(1));
    let path = dir.join("plots").join("probe.svg");
    bar_plot(&path, "|correlation with label| per feature dimension (z_a in red)", &values, za)?;
    out.push(path);
    Ok(())
}

fn markdown_table(t: &Table) -> String {
    let keys = &t.headers;
    let mut s = format!("| {} |\n|{}\n", keys.join(" | "), " --- |".repeat(keys.len()));
    for r in &t.rows {
        let cells: Vec<&str> = keys.iter().map(|k| r.get(k).map_or("", String::as_str)).collect();
        let _ = writeln!(s, "| {} |", cells.join(" | "));
    }
    s
}

/// Renders every known table under `root`; returns the files written.
pub fn render(root: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut summary = String::from("# Run summary\n");
    for dir in dirs_under(root)? {
        let rel = dir.strip_prefix(root).unwrap_or(&dir);
        let mut section = String::new();
        let load = |name: &str| -> Result<Option<Table>> {
            let p = dir.join(name);
            if p.is_file() { read_csv(&p).map(Some) } else { Ok(None) }
        };
        if let Some(rows) = load("acceptance.csv")? {
            let _ = write!(section, "\n### Acceptance\n\n{}", markdown_table(&rows));
        }
        if let Some(rows) = load("ab.csv")? {
            let _ = write!(section, "\n### Collapse A/B\n\n{}", markdown_table(&rows));
        }
        if let Some(rows) = load("accuracy.csv")? {
            let _ = write!(section, "\n### Control accuracy\n\n{}", markdown_table(&rows));
        }
        if let Some(rows) = load("sweep.csv")? {
            render_sweep(&dir, &rows.rows, &mut written)?;
            let _ = write!(section, "\n### Sentiment sweep\n\n{}", markdown_table(&rows));
        }
        for name in ["ab_curves.csv", "metrics.csv"] {
            if let Some(rows) = load(name)? {
                render_curves(&dir, &rows.rows, &mut written)?;
            }
        }
        if let Some(rows) = load("probe.csv")? {
            render_probe(&dir, &rows.rows, &mut written)?;
        }
        if !section.is_empty() {
            let name = if rel.as_os_str().is_empty() { ".".into() } else { rel.display().to_string() };
            let _ = write!(summary, "\n## {name}\n{section}");
        }
    }
    let path = root.join("summary.md");
    std::fs::write(&path, summary).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}
