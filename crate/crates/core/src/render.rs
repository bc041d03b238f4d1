//! SVG bar charts of a report: one horizontal bar per aggregate term or
//! variable, with confidence-interval whiskers and the numbers written out
//! as text so that charts diff cleanly.
//!
//! Output depends only on the report contents; all coordinates are printed
//! with fixed precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::EstimateWithCI;
use crate::report::{AggregateSection, DecompositionReport, DetailedSection};

const WIDTH: f64 = 720.0;
const LABEL_W: f64 = 150.0;
const TEXT_W: f64 = 230.0;
const ROW_H: f64 = 26.0;
const BAR_H: f64 = 16.0;
const TITLE_H: f64 = 34.0;
const AXIS_H: f64 = 22.0;
const PANEL_GAP: f64 = 18.0;
const POSITIVE: &str = "#4477aa";
const NEGATIVE: &str = "#cc6677";
const TOTAL: &str = "#222222";

/// Which part of a report to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    Aggregate,
    Covariate,
    Outcome,
    /// Every section present in the report.
    All,
}

impl std::str::FromStr for Panel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(Panel::Aggregate),
            "covariate" | "detailed_covariate" => Ok(Panel::Covariate),
            "outcome" | "detailed_outcome" => Ok(Panel::Outcome),
            "all" => Ok(Panel::All),
            other => Err(Error::Config(format!(
                "unknown panel {other:?}; expected aggregate, covariate, outcome or all"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    point: f64,
    ci_lo: f64,
    ci_hi: f64,
}

impl From<&EstimateWithCI> for Interval {
    fn from(e: &EstimateWithCI) -> Self {
        Interval { point: e.point, ci_lo: e.ci_lo, ci_hi: e.ci_hi }
    }
}

struct Bar {
    label: String,
    estimate: Interval,
}

struct PanelSpec {
    title: String,
    bars: Vec<Bar>,
    /// Drawn as a vertical marker with its own text row.
    total: Option<Interval>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn aggregate_panel(section: &AggregateSection) -> Result<PanelSpec> {
    let mut bars = Vec::new();
    let mut total = None;
    for term in &section.debiased {
        if term.name == "total" {
            total = Some(Interval::from(&term.estimate));
        } else {
            bars.push(Bar {
                label: term.name.clone(),
                estimate: Interval::from(&term.estimate),
            });
        }
    }
    if bars.is_empty() {
        return Err(Error::Config("aggregate section has no terms to draw".into()));
    }
    Ok(PanelSpec {
        title: format!(
            "Aggregate decomposition (source loss {:.4}, target loss {:.4})",
            section.source_mean_loss, section.target_mean_loss
        ),
        bars,
        total,
    })
}

fn detailed_panel(section: &DetailedSection, title: &str) -> Result<PanelSpec> {
    if section.attributions.is_empty() {
        return Err(Error::Config(format!("{title} section has no attributions to draw")));
    }
    let mut bars: Vec<Bar> = section
        .attributions
        .iter()
        .map(|a| Bar {
            label: a.name.clone(),
            estimate: Interval { point: a.phi, ci_lo: a.ci_lo, ci_hi: a.ci_hi },
        })
        .collect();
    // Descending by point estimate; ties keep the variable order.
    bars.sort_by(|a, b| b.estimate.point.total_cmp(&a.estimate.point));
    Ok(PanelSpec {
        title: format!("{title}: Shapley attributions of explained variation"),
        bars,
        total: None,
    })
}

fn panels(report: &DecompositionReport, panel: Panel) -> Result<Vec<PanelSpec>> {
    let missing = |what: &str| Error::Config(format!("report has no {what} section to render"));
    let cov = "Conditional covariate shift";
    let out = "Conditional outcome shift";
    match panel {
        Panel::Aggregate => Ok(vec![aggregate_panel(report.aggregate.as_ref().ok_or_else(|| missing("aggregate"))?)?]),
        Panel::Covariate => Ok(vec![detailed_panel(
            report.detailed_covariate.as_ref().ok_or_else(|| missing("detailed covariate"))?,
            cov,
        )?]),
        Panel::Outcome => Ok(vec![detailed_panel(
            report.detailed_outcome.as_ref().ok_or_else(|| missing("detailed outcome"))?,
            out,
        )?]),
        Panel::All => {
            let mut v = Vec::new();
            if let Some(a) = &report.aggregate {
                v.push(aggregate_panel(a)?);
            }
            if let Some(c) = &report.detailed_covariate {
                v.push(detailed_panel(c, cov)?);
            }
            if let Some(o) = &report.detailed_outcome {
                v.push(detailed_panel(o, out)?);
            }
            if v.is_empty() {
                return Err(missing("aggregate or detailed"));
            }
            Ok(v)
        }
    }
}

/// Range covering zero, every interval and the total, padded by 5%.
fn value_range(p: &PanelSpec) -> (f64, f64) {
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for e in p.bars.iter().map(|b| b.estimate).chain(p.total) {
        for v in [e.point, e.ci_lo, e.ci_hi] {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn panel_height(p: &PanelSpec) -> f64 {
    let rows = p.bars.len() + usize::from(p.total.is_some());
    TITLE_H + rows as f64 * ROW_H + AXIS_H
}

fn interval_text(e: Interval) -> String {
    format!("{:.4} [{:.4}, {:.4}]", e.point, e.ci_lo, e.ci_hi)
}

fn draw_panel(out: &mut String, p: &PanelSpec, top: f64) {
    let (lo, hi) = value_range(p);
    let plot_l = LABEL_W;
    let plot_r = WIDTH - TEXT_W;
    let x = |v: f64| plot_l + (v.clamp(lo, hi) - lo) / (hi - lo) * (plot_r - plot_l);
    let rows_top = top + TITLE_H;
    let rows = p.bars.len() + usize::from(p.total.is_some());
    let rows_bottom = rows_top + rows as f64 * ROW_H;

    let _ = writeln!(
        out,
        r#"<text x="10.00" y="{:.2}" font-size="14" font-weight="bold">{}</text>"#,
        top + 20.0,
        escape(&p.title)
    );
    for (i, bar) in p.bars.iter().enumerate() {
        let cy = rows_top + (i as f64 + 0.5) * ROW_H;
        let e = bar.estimate;
        let (a, b) = (x(0.0), x(e.point));
        let fill = if e.point >= 0.0 { POSITIVE } else { NEGATIVE };
        let _ = writeln!(out, r#"<g class="bar">"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{}</text>"#,
            plot_l - 8.0,
            cy + 4.0,
            escape(&bar.label)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            a.min(b),
            cy - BAR_H / 2.0,
            (b - a).abs(),
            BAR_H
        );
        draw_whisker(out, x(e.ci_lo), x(e.ci_hi), cy);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" font-family="monospace">{}</text>"#,
            plot_r + 10.0,
            cy + 4.0,
            interval_text(e)
        );
        let _ = writeln!(out, "</g>");
    }
    if let Some(t) = p.total {
        let cy = rows_top + (p.bars.len() as f64 + 0.5) * ROW_H;
        let tx = x(t.point);
        let _ = writeln!(out, r#"<g class="total">"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" font-weight="bold" text-anchor="end">total</text>"#,
            plot_l - 8.0,
            cy + 4.0
        );
        let _ = writeln!(
            out,
            r#"<line x1="{tx:.2}" y1="{:.2}" x2="{tx:.2}" y2="{:.2}" stroke="{TOTAL}" stroke-width="2" stroke-dasharray="4 3"/>"#,
            rows_top,
            rows_bottom
        );
        let _ = writeln!(
            out,
            r#"<path d="M {tx:.2} {:.2} L {:.2} {cy:.2} L {tx:.2} {:.2} L {:.2} {cy:.2} Z" fill="{TOTAL}"/>"#,
            cy - 6.0,
            tx + 6.0,
            cy + 6.0,
            tx - 6.0
        );
        draw_whisker(out, x(t.ci_lo), x(t.ci_hi), cy);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" font-family="monospace">{}</text>"#,
            plot_r + 10.0,
            cy + 4.0,
            interval_text(t)
        );
        let _ = writeln!(out, "</g>");
    }
    // Zero line and axis.
    let zx = x(0.0);
    let _ = writeln!(
        out,
        r##"<line x1="{zx:.2}" y1="{rows_top:.2}" x2="{zx:.2}" y2="{rows_bottom:.2}" stroke="#888888" stroke-width="1"/>"##
    );
    let _ = writeln!(
        out,
        r##"<line x1="{plot_l:.2}" y1="{rows_bottom:.2}" x2="{plot_r:.2}" y2="{rows_bottom:.2}" stroke="#888888" stroke-width="1"/>"##
    );
    for v in [lo, 0.0, hi] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{v:.3}</text>"#,
            x(v),
            rows_bottom + 14.0
        );
    }
}

fn draw_whisker(out: &mut String, a: f64, b: f64, cy: f64) {
    let cap = 5.0;
    let _ = writeln!(
        out,
        r#"<path d="M {a:.2} {cy:.2} L {b:.2} {cy:.2} M {a:.2} {:.2} L {a:.2} {:.2} M {b:.2} {:.2} L {b:.2} {:.2}" stroke="{TOTAL}" stroke-width="1.5" fill="none"/>"#,
        cy - cap,
        cy + cap,
        cy - cap,
        cy + cap
    );
}

/// Renders `panel` of `report` as a standalone SVG document.
pub fn render_svg(report: &DecompositionReport, panel: Panel) -> Result<String> {
    let specs = panels(report, panel)?;
    let height: f64 = specs.iter().map(panel_height).sum::<f64>() + PANEL_GAP * (specs.len() as f64 + 1.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut top = PANEL_GAP;
    for spec in &specs {
        draw_panel(&mut out, spec, top);
        top += panel_height(spec) + PANEL_GAP;
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{decompose, EstimationOptions, GridPreset, Target};
    use crate::simgen::DgpSpec;

    fn report(targets: Vec<Target>) -> DecompositionReport {
        let mut spec = DgpSpec::gaussian_logistic(500, 8);
        spec.source.means.iter_mut().for_each(|m| *m *= 0.25);
        let data = spec.generate().unwrap();
        let opts = EstimationOptions {
            targets,
            grid: GridPreset::Compact,
            ..EstimationOptions::default()
        };
        decompose(&data, Some(&spec.source_bayes_rule()), &opts).unwrap()
    }

    #[test]
    fn aggregate_has_three_bars_and_a_total() {
        let r = report(vec![Target::Aggregate]);
        let svg = render_svg(&r, Panel::Aggregate).unwrap();
        assert_eq!(svg.matches(r#"<g class="bar">"#).count(), 3);
        assert_eq!(svg.matches(r#"<g class="total">"#).count(), 1);
        let agg = r.aggregate.as_ref().unwrap();
        for t in ["lambda_w", "lambda_z", "lambda_y", "total"] {
            assert!(svg.contains(&interval_text(agg.term(t).unwrap().into())), "{t}");
        }
    }

    #[test]
    fn rendering_is_deterministic_across_a_json_round_trip() {
        let r = report(vec![Target::Aggregate, Target::DetailedCovariate]);
        let back = DecompositionReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(render_svg(&r, Panel::All).unwrap(), render_svg(&back, Panel::All).unwrap());
    }

    #[test]
    fn missing_section_is_an_error() {
        let r = report(vec![Target::Aggregate]);
        assert!(render_svg(&r, Panel::Outcome).is_err());
        let mut empty = r.clone();
        empty.aggregate = None;
        assert_eq!(render_svg(&empty, Panel::All).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
    }
}
