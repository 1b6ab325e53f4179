use std::collections::BTreeMap;
use std::fmt::Write;

use crate::config::Method;
use crate::error::{Error, Result};
use crate::metrics::history::RunHistory;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn colour(method: Method) -> &'static str {
    match method {
        Method::Baseline => "#d62728",
        Method::Dynbc => "#1f77b4",
        Method::Rehearsal => "#2ca02c",
        Method::Fedadam => "#9467bd",
    }
}

/// Dice-vs-epoch curves, one polyline per method (averaged over seeds).
pub fn render_curves(histories: &[RunHistory]) -> Result<String> {
    let mut per_method: BTreeMap<Method, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for h in histories {
        let series = per_method.entry(h.meta.method).or_default();
        for row in &h.rows {
            let slot = series.entry(row.epoch).or_insert((0.0, 0));
            slot.0 += row.test_dice;
            slot.1 += 1;
        }
    }
    per_method.retain(|_, s| !s.is_empty());
    if per_method.is_empty() {
        return Err(Error::Empty("run history"));
    }
    let max_epoch = per_method
        .values()
        .filter_map(|s| s.keys().next_back())
        .max()
        .copied()
        .unwrap_or(1)
        .max(2);
    let x =
        |e: usize| MARGIN + (e as f64 - 1.0) / (max_epoch as f64 - 1.0) * (WIDTH - 2.0 * MARGIN);
    let y = |d: f64| HEIGHT - MARGIN - d * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for tick in 0..=4 {
        let d = tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{d:.2}</text>"#,
            x0 - 4.0,
            y(d) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">epoch</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {:.1})">dice</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{max_epoch}</text>"#,
        x1,
        y0 + 14.0
    );
    for (i, (method, series)) in per_method.iter().enumerate() {
        let points: Vec<String> = series
            .iter()
            .map(|(&e, &(sum, n))| format!("{:.2},{:.2}", x(e), y(sum / n as f64)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            colour(*method),
            points.join(" "),
            method
        );
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" fill="{}">{}</text>"#,
            x1 - 80.0,
            colour(*method),
            method
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Scenario, ShiftKind};
    use crate::gate::DistanceMetric;
    use crate::metrics::history::{HistoryRow, RunMeta};

    fn hist(method: Method, n: usize) -> RunHistory {
        let mut h = RunHistory::new(RunMeta {
            scenario: Scenario::Cf,
            method,
            shift: ShiftKind::Blur,
            seed: 0,
            metric: DistanceMetric::DiffNorm,
            threshold_factor: 2.0,
            refset_augmented: true,
            total_epochs: n,
            eval_epochs: 1,
        });
        for e in 1..=n {
            h.push(HistoryRow {
                epoch: e,
                stage: 1,
                method,
                seed: 0,
                shift: ShiftKind::Blur,
                test_dice: e as f64 / n as f64,
                train_loss: 0.3,
                n_rejected_clients: 0,
                temporal_rollback: false,
            })
            .unwrap();
        }
        h
    }

    #[test]
    fn one_polyline_per_method() {
        let svg = render_curves(&[hist(Method::Baseline, 5), hist(Method::Dynbc, 5)]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">epoch<") && svg.contains(">dice<"));
        assert!(svg.contains(r#"version="1.1""#));
    }

    #[test]
    fn empty_history_is_an_error() {
        assert!(render_curves(&[]).is_err());
        let mut h = hist(Method::Dynbc, 1);
        h.rows.clear();
        assert!(render_curves(&[h]).is_err());
    }
}
