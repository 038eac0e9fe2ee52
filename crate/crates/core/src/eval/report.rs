//! Report emission: delimited tables, a key/value summary and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{relative_gain, AttentionExport, ClassScore, EvalReport};
use crate::baselines::{OnnTable, ProximityTable};
use crate::error::{Error, Result};

/// Every file [`emit_report`] may write, in writing order.
pub const REPORT_FILES: [&str; 11] = [
    "iou.tsv",
    "iou_exact.tsv",
    "gains.tsv",
    "onn.tsv",
    "proximity.tsv",
    "ablations.tsv",
    "attention.tsv",
    "summary.toml",
    "iou_by_class.svg",
    "gain_vs_shots.svg",
    "zs_vs_proximity.svg",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub name: String,
    pub class_id: String,
    pub baseline: f64,
    pub ablated: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub config_hash: String,
    pub reports: Vec<EvalReport>,
    /// Label of the zero-shot report gains are measured against.
    pub reference: Option<String>,
    pub onn: Option<OnnTable>,
    pub proximity: Option<ProximityTable>,
    pub ablations: Vec<AblationRecord>,
    pub attention: Option<AttentionExport>,
}

impl ReportBundle {
    fn reference(&self) -> Option<&EvalReport> {
        let r = self.reference.as_deref()?;
        self.reports.iter().find(|x| x.label() == r)
    }

    fn class_order(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for r in &self.reports {
            for c in &r.classes {
                if !v.contains(&c.class_id.as_str()) {
                    v.push(&c.class_id);
                }
            }
        }
        v
    }
}

#[derive(Serialize)]
struct Summary {
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    mean_iou: BTreeMap<String, f64>,
    mean_base_iou: BTreeMap<String, f64>,
    mean_novel_iou: BTreeMap<String, f64>,
    mean_gain: BTreeMap<String, f64>,
}

fn gain(m: f64, z: Option<f64>) -> Option<f64> {
    z.filter(|&z| z > 0.0).map(|z| (m - z) / z)
}

/// Wide table, one column per report: IoU to two decimals, relative gain
/// over the reference in parentheses.
fn iou_table(b: &ReportBundle) -> String {
    let zs = b.reference();
    let mut s = String::from("class");
    for r in &b.reports {
        s.push('\t');
        s.push_str(&r.label());
    }
    s.push('\n');
    let classes = b.class_order();
    for c in &classes {
        s.push_str(c);
        for r in &b.reports {
            s.push('\t');
            match r.iou(c) {
                None => s.push('-'),
                Some(v) => match gain(v, zs.and_then(|z| z.iou(c))).filter(|_| Some(r) != zs) {
                    Some(g) => write!(s, "{v:.2} ({g:.2})").unwrap(),
                    None => write!(s, "{v:.2}").unwrap(),
                },
            }
        }
        s.push('\n');
    }
    if !classes.is_empty() {
        s.push_str("mean");
        for r in &b.reports {
            s.push('\t');
            let mean = r.mean_iou().unwrap_or(0.0);
            match zs.filter(|z| *z != r).and_then(|z| relative_gain(r, z).ok()) {
                Some(g) => write!(s, "{mean:.2} ({:.2})", g.mean).unwrap(),
                None => write!(s, "{mean:.2}").unwrap(),
            }
        }
        s.push('\n');
    }
    s
}

pub(crate) const EXACT_HEADER: &str = "method\tshots\tseed\tconfig_hash\tclass\tnovel\tqueries\tiou";

/// Long table with full-precision values, the format of `iou_exact.tsv`;
/// [`parse_iou_table`] reads it back.
pub fn format_iou_table(reports: &[EvalReport]) -> String {
    let mut s = format!("{EXACT_HEADER}\n");
    for r in reports {
        let shots = r.shots.map_or("-".to_string(), |k| k.to_string());
        for c in &r.classes {
            writeln!(
                s,
                "{}\t{shots}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method, r.seed, r.config_hash, c.class_id, c.novel, c.queries, c.iou
            )
            .unwrap();
        }
    }
    s
}

/// Recovers the reports written to `iou_exact.tsv`. Reports without
/// classes leave no rows and are not recovered.
pub fn parse_iou_table(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(EXACT_HEADER) {
        return Err(Error::Data("not an exact IoU table (header mismatch)".into()));
    }
    let mut out: Vec<EvalReport> = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = |what: &str| Error::Data(format!("line {}: bad {what}", n + 2));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad("field count"));
        }
        let shots = match f[1] {
            "-" => None,
            k => Some(k.parse().map_err(|_| bad("shots"))?),
        };
        let seed = f[2].parse().map_err(|_| bad("seed"))?;
        let score = ClassScore {
            class_id: f[4].to_string(),
            novel: f[5].parse().map_err(|_| bad("novel flag"))?,
            queries: f[6].parse().map_err(|_| bad("query count"))?,
            iou: f[7].parse().map_err(|_| bad("iou"))?,
        };
        match out.last_mut() {
            Some(r) if r.method == f[0] && r.shots == shots && r.seed == seed && r.config_hash == f[3] => {
                r.classes.push(score)
            }
            _ => out.push(EvalReport {
                method: f[0].to_string(),
                shots,
                seed,
                config_hash: f[3].to_string(),
                classes: vec![score],
            }),
        }
    }
    Ok(out)
}

fn gains_table(b: &ReportBundle) -> Option<String> {
    let zs = b.reference()?;
    let mut s = String::from("method\tclass\tgain\n");
    for r in b.reports.iter().filter(|r| *r != zs) {
        for c in &r.classes {
            if let Some(g) = gain(c.iou, zs.iou(&c.class_id)) {
                writeln!(s, "{}\t{}\t{g:.4}", r.label(), c.class_id).unwrap();
            }
        }
    }
    Some(s)
}

fn ablation_table(rows: &[AblationRecord]) -> String {
    let mut s = String::from("ablation\tclass\tbaseline\tablated\trelative_change\n");
    for a in rows {
        let rel = if a.baseline > 0.0 { (a.ablated - a.baseline) / a.baseline } else { 0.0 };
        writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{rel:.4}", a.name, a.class_id, a.baseline, a.ablated).unwrap();
    }
    s
}

fn summary(b: &ReportBundle) -> Result<String> {
    let zs = b.reference();
    let mut sm = Summary {
        config_hash: b.config_hash.clone(),
        reference: b.reference.clone(),
        mean_iou: BTreeMap::new(),
        mean_base_iou: BTreeMap::new(),
        mean_novel_iou: BTreeMap::new(),
        mean_gain: BTreeMap::new(),
    };
    for r in &b.reports {
        let l = r.label();
        let put = |m: &mut BTreeMap<String, f64>, v: Option<f64>| {
            if let Some(v) = v {
                m.insert(l.clone(), v);
            }
        };
        put(&mut sm.mean_iou, r.mean_iou());
        put(&mut sm.mean_base_iou, r.mean_base_iou());
        put(&mut sm.mean_novel_iou, r.mean_novel_iou());
        if let Some(z) = zs.filter(|z| *z != r) {
            put(&mut sm.mean_gain, relative_gain(r, z).ok().map(|g| g.mean));
        }
    }
    toml::to_string(&sm).map_err(|e| Error::Config(format!("summary: {e}")))
}

const PALETTE: [&str; 8] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 60.0;

fn svg_open(title: &str, y_label: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title)).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    )
    .unwrap();
    s
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps `v` in `[lo, hi]` to a y pixel.
fn ypix(v: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    H - M - (v - lo) / span * (H - 2.0 * M)
}

fn axes(s: &mut String, lo: f64, hi: f64) {
    writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M).unwrap();
    writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M).unwrap();
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = ypix(v, lo, hi);
        writeln!(s, r#"<text x="{}" y="{y:.1}" text-anchor="end">{v:.2}</text>"#, M - 4.0).unwrap();
        writeln!(s, r##"<line x1="{M}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/>"##, W - M).unwrap();
    }
}

fn legend(s: &mut String, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let y = M + 14.0 * i as f64;
        writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#, W - M + 4.0, y - 9.0, PALETTE[i % PALETTE.len()]).unwrap();
        writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, W - M + 18.0, esc(n)).unwrap();
    }
}

fn value_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    (lo, if hi > lo { hi } else { lo + 1.0 })
}

/// Grouped bar chart.
pub(crate) fn bar_svg(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut s = svg_open(title, y_label);
    let (lo, hi) = value_range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    axes(&mut s, lo, hi);
    let group = (W - 2.0 * M) / categories.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    for (ci, c) in categories.iter().enumerate() {
        let x0 = M + group * ci as f64 + group * 0.1;
        for (si, (_, v)) in series.iter().enumerate() {
            let Some(&val) = v.get(ci) else { continue };
            let (y, y0) = (ypix(val, lo, hi), ypix(0.0, lo, hi));
            writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar:.1}" height="{:.1}" fill="{}"/>"#,
                x0 + bar * si as f64,
                y.min(y0),
                (y0 - y).abs(),
                PALETTE[si % PALETTE.len()]
            )
            .unwrap();
        }
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x0 + group * 0.4, H - M + 16.0, esc(c)).unwrap();
    }
    legend(&mut s, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Line plot over numeric x; `labels` annotates each point.
pub(crate) fn line_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    labels: Option<&[Vec<String>]>,
) -> String {
    let mut s = svg_open(title, y_label);
    let (ylo, yhi) = value_range(series.iter().flat_map(|(_, v)| v.iter().map(|p| p.1)));
    let xs: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().map(|p| p.0)).collect();
    let xlo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xhi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (xlo, xhi) = if xs.is_empty() { (0.0, 1.0) } else if xhi > xlo { (xlo, xhi) } else { (xlo - 1.0, xhi + 1.0) };
    let xpix = |x: f64| M + (x - xlo) / (xhi - xlo) * (W - 2.0 * M);
    axes(&mut s, ylo, yhi);
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, esc(x_label)).unwrap();
    for x in [xlo, xhi] {
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.2}</text>"#, xpix(x), H - M + 16.0).unwrap();
    }
    for (si, (_, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", xpix(x), ypix(y, ylo, yhi))).collect();
        if path.len() > 1 {
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" ")).unwrap();
        }
        for (pi, &(x, y)) in pts.iter().enumerate() {
            let (px, py) = (xpix(x), ypix(y, ylo, yhi));
            writeln!(s, r#"<circle cx="{px:.1}" cy="{py:.1}" r="3.5" fill="{color}"/>"#).unwrap();
            if let Some(l) = labels.and_then(|l| l.get(si)).and_then(|l| l.get(pi)) {
                writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, px + 5.0, py - 5.0, esc(l)).unwrap();
            }
        }
    }
    legend(&mut s, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

fn gain_plot(b: &ReportBundle) -> Option<String> {
    let zs = b.reference()?;
    let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &b.reports {
        if let (Some(k), Ok(g)) = (r.shots, relative_gain(r, zs)) {
            by_method.entry(&r.method).or_default().push((k as f64, g.mean));
        }
    }
    if by_method.is_empty() {
        return None;
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = by_method
        .into_iter()
        .map(|(m, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (m.to_string(), v)
        })
        .collect();
    Some(line_svg("Relative gain over zero-shot", "shots per class", "mean relative gain", &series, None))
}

fn proximity_plot(b: &ReportBundle) -> Option<String> {
    let (zs, prox) = (b.reference()?, b.proximity.as_ref()?);
    let mut pts: Vec<(f64, f64, String)> = prox
        .scores
        .iter()
        .filter_map(|(c, p)| zs.iou(c).map(|v| (*p, v, c.clone())))
        .collect();
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let series = vec![("zero-shot IoU".to_string(), pts.iter().map(|p| (p.0, p.1)).collect())];
    let labels = vec![pts.iter().map(|p| p.2.clone()).collect()];
    Some(line_svg("Zero-shot IoU against class proximity", "proximity", "zero-shot IoU", &series, Some(&labels)))
}

fn write(dir: &Path, name: &str, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;
    out.push(p);
    Ok(())
}

/// Writes the tables, summary and plots for `bundle` into `dir` and
/// returns the paths written.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    if bundle.reports.is_empty() {
        return Err(Error::Argument("no reports to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut out = Vec::new();
    write(dir, "iou.tsv", &iou_table(bundle), &mut out)?;
    write(dir, "iou_exact.tsv", &format_iou_table(&bundle.reports), &mut out)?;
    if let Some(g) = gains_table(bundle) {
        write(dir, "gains.tsv", &g, &mut out)?;
    }
    if let Some(o) = &bundle.onn {
        write(dir, "onn.tsv", &o.to_tsv(), &mut out)?;
    }
    if let Some(p) = &bundle.proximity {
        write(dir, "proximity.tsv", &p.to_tsv(), &mut out)?;
    }
    if !bundle.ablations.is_empty() {
        write(dir, "ablations.tsv", &ablation_table(&bundle.ablations), &mut out)?;
    }
    if let Some(a) = &bundle.attention {
        write(dir, "attention.tsv", &a.to_tsv(), &mut out)?;
    }
    write(dir, "summary.toml", &summary(bundle)?, &mut out)?;
    let classes: Vec<String> = bundle.class_order().into_iter().map(String::from).collect();
    let series: Vec<(String, Vec<f64>)> = bundle
        .reports
        .iter()
        .map(|r| (r.label(), classes.iter().map(|c| r.iou(c).unwrap_or(0.0)).collect()))
        .collect();
    write(dir, "iou_by_class.svg", &bar_svg("Per-class IoU", "IoU", &classes, &series), &mut out)?;
    if let Some(g) = gain_plot(bundle) {
        write(dir, "gain_vs_shots.svg", &g, &mut out)?;
    }
    if let Some(p) = proximity_plot(bundle) {
        write(dir, "zs_vs_proximity.svg", &p, &mut out)?;
    }
    Ok(out)
}
