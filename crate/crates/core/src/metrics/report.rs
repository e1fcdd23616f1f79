use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{perceptual_distance, sifid_at, ssim, warping_error_pairs, SIFID_LAYER};
use crate::backbones::Encoder;
use crate::imaging::{FlowField, ImageTensor};
use crate::objective::{content_loss, StyleTarget};
use crate::{Error, Result};

/// One stylised sequence with its sources.
pub struct SequenceInput<'a> {
    pub name: String,
    pub style_name: String,
    pub originals: &'a [ImageTensor],
    pub stylised: &'a [ImageTensor],
    /// Flows between consecutive frames of the sequence.
    pub flows: &'a [FlowField],
    /// Where the flows came from, e.g. `analytic` or a `.flo` directory.
    pub flow_source: String,
    pub style: &'a ImageTensor,
}

/// Per-frame traces of a sequence. Pair metrics have one entry fewer than
/// there are frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTraces {
    pub warping_error: Vec<Option<f64>>,
    pub warping_error_unmasked: Vec<f64>,
    pub lpips_error: Vec<f64>,
    pub ssim: Vec<f64>,
    pub sifid: Vec<f64>,
    pub content_err: Vec<f64>,
    pub style_err: Vec<f64>,
}

/// Raw metric means. Presentation scaling is applied only by
/// [`SequenceMetricsReport::to_text_table`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub warping_error: f64,
    pub warping_error_unmasked: f64,
    pub lpips_error: f64,
    pub ssim: f64,
    pub sifid: f64,
    pub content_err: f64,
    pub style_err: f64,
}

impl SequenceMetrics {
    pub fn mean(items: &[SequenceMetrics]) -> Result<SequenceMetrics> {
        if items.is_empty() {
            return Err(Error::domain("cannot average an empty set of metrics"));
        }
        let n = items.len() as f64;
        let avg = |f: fn(&SequenceMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Ok(SequenceMetrics {
            warping_error: avg(|m| m.warping_error),
            warping_error_unmasked: avg(|m| m.warping_error_unmasked),
            lpips_error: avg(|m| m.lpips_error),
            ssim: avg(|m| m.ssim),
            sifid: avg(|m| m.sifid),
            content_err: avg(|m| m.content_err),
            style_err: avg(|m| m.style_err),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub sequence: String,
    pub style: String,
    pub frames: usize,
    pub flow_source: String,
    pub metrics: SequenceMetrics,
    pub traces: FrameTraces,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetricsReport {
    pub label: String,
    pub encoder: String,
    pub sifid_layer: String,
    pub overall: SequenceMetrics,
    pub per_style: BTreeMap<String, SequenceMetrics>,
    pub per_sequence: Vec<SequenceResult>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Computes every metric for one sequence.
pub fn evaluate_sequence(encoder: &Encoder, input: &SequenceInput<'_>) -> Result<SequenceResult> {
    let n = input.stylised.len();
    if input.originals.len() != n {
        return Err(Error::domain(format!(
            "{} original frames but {} stylised frames",
            input.originals.len(),
            n
        )));
    }
    let pairs = warping_error_pairs(input.stylised, input.flows)?;
    let (_, h, w) = input.stylised[0].dims();
    let style = if input.style.dims() == input.stylised[0].dims() {
        input.style.clone()
    } else {
        input.style.resize_bilinear(h, w)?
    };
    let target = StyleTarget::new(encoder, input.style, None)?;
    let mut traces = FrameTraces {
        warping_error: pairs.iter().map(|p| p.masked).collect(),
        warping_error_unmasked: pairs.iter().map(|p| p.unmasked).collect(),
        ..Default::default()
    };
    for (t, (orig, out)) in input.originals.iter().zip(input.stylised).enumerate() {
        orig.require_same_shape(out, "stylised frame")?;
        if t + 1 < n {
            traces
                .lpips_error
                .push(perceptual_distance(encoder, out, &input.stylised[t + 1])?);
        }
        traces.ssim.push(ssim(orig, out)?);
        traces
            .sifid
            .push(sifid_at(encoder, out, &style, SIFID_LAYER)?);
        traces.content_err.push(content_loss(encoder, orig, out)?);
        traces
            .style_err
            .push(crate::objective::style_loss_cached(encoder, out, &target)?);
    }
    let masked: Vec<f64> = traces.warping_error.iter().flatten().copied().collect();
    if masked.is_empty() {
        return Err(Error::domain(format!(
            "sequence {}: no valid flow pixels",
            input.name
        )));
    }
    let metrics = SequenceMetrics {
        warping_error: mean(&masked),
        warping_error_unmasked: mean(&traces.warping_error_unmasked),
        lpips_error: mean(&traces.lpips_error),
        ssim: mean(&traces.ssim),
        sifid: mean(&traces.sifid),
        content_err: mean(&traces.content_err),
        style_err: mean(&traces.style_err),
    };
    Ok(SequenceResult {
        sequence: input.name.clone(),
        style: input.style_name.clone(),
        frames: n,
        flow_source: input.flow_source.clone(),
        metrics,
        traces,
    })
}

impl SequenceMetricsReport {
    /// Aggregates per-sequence results; the overall row is the plain mean of
    /// the sequences.
    pub fn aggregate(
        label: impl Into<String>,
        encoder: &Encoder,
        results: Vec<SequenceResult>,
    ) -> Result<Self> {
        let overall =
            SequenceMetrics::mean(&results.iter().map(|r| r.metrics).collect::<Vec<_>>())?;
        let mut groups: BTreeMap<String, Vec<SequenceMetrics>> = BTreeMap::new();
        for r in &results {
            groups.entry(r.style.clone()).or_default().push(r.metrics);
        }
        let per_style = groups
            .into_iter()
            .map(|(k, v)| Ok((k, SequenceMetrics::mean(&v)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            label: label.into(),
            encoder: encoder.id(),
            sifid_layer: SIFID_LAYER.into(),
            overall,
            per_style,
            per_sequence: results,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(Error::io(path))
    }

    /// Aligned table with warping and perceptual errors shown multiplied by
    /// ten.
    pub fn to_text_table(&self) -> String {
        table(&[(self.label.as_str(), self)])
    }
}

/// Side-by-side table of several reports, overall rows first, then one row
/// per style.
pub fn table(reports: &[(&str, &SequenceMetricsReport)]) -> String {
    let header = [
        "row",
        "warp x10",
        "warp(unmasked) x10",
        "lpips x10",
        "ssim",
        "sifid",
        "content",
        "style",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    let fmt_row = |name: String, m: &SequenceMetrics| {
        vec![
            name,
            format!("{:.4}", m.warping_error * 10.0),
            format!("{:.4}", m.warping_error_unmasked * 10.0),
            format!("{:.4}", m.lpips_error * 10.0),
            format!("{:.4}", m.ssim),
            format!("{:.4}", m.sifid),
            format!("{:.4e}", m.content_err),
            format!("{:.4e}", m.style_err),
        ]
    };
    for (name, r) in reports {
        rows.push(fmt_row(name.to_string(), &r.overall));
    }
    for (name, r) in reports {
        if r.per_style.len() > 1 {
            for (style, m) in &r.per_style {
                rows.push(fmt_row(format!("{name}/{style}"), m));
            }
        }
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| {
                if c == 0 {
                    format!("{s:<w$}")
                } else {
                    format!("{s:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(
                out,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
            );
        }
    }
    out
}
