use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InfoPlanePoint, TemporalCurvePoint, TemporalKind};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = ["kind", "phase", "epoch", "layer", "t", "i_xh_bits", "i_yh_bits", "value_bits"];

/// One exported row: a plane point or a temporal-surface point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurvePoint {
    Plane(InfoPlanePoint),
    Temporal(TemporalCurvePoint),
}

impl From<InfoPlanePoint> for CurvePoint {
    fn from(p: InfoPlanePoint) -> Self {
        CurvePoint::Plane(p)
    }
}

impl From<TemporalCurvePoint> for CurvePoint {
    fn from(p: TemporalCurvePoint) -> Self {
        CurvePoint::Temporal(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn row(p: &CurvePoint) -> [String; 8] {
    match p {
        CurvePoint::Plane(q) => [
            "plane".into(),
            q.phase.to_string(),
            q.epoch.to_string(),
            q.layer.to_string(),
            String::new(),
            q.i_xh_bits.to_string(),
            q.i_yh_bits.to_string(),
            String::new(),
        ],
        CurvePoint::Temporal(q) => [
            q.kind.name().into(),
            String::new(),
            q.epoch.to_string(),
            opt(q.layer),
            q.t.to_string(),
            String::new(),
            String::new(),
            q.value_bits.to_string(),
        ],
    }
}

fn parse_row(rec: &csv::StringRecord, line: usize) -> Result<CurvePoint> {
    let field = |i: usize| rec.get(i).unwrap_or("");
    let err = |col: usize, m: String| Error::Parse {
        row: line,
        column: CSV_HEADER[col].into(),
        message: m,
    };
    let num = |i: usize| -> Result<f64> { field(i).parse::<f64>().map_err(|e| err(i, e.to_string())) };
    let int = |i: usize| -> Result<usize> { field(i).parse::<usize>().map_err(|e| err(i, e.to_string())) };
    match field(0) {
        "plane" => Ok(CurvePoint::Plane(InfoPlanePoint {
            phase: int(1)? as u8,
            epoch: int(2)?,
            layer: int(3)?,
            i_xh_bits: num(5)?,
            i_yh_bits: num(6)?,
        })),
        k => {
            let kind = TemporalKind::from_name(k).ok_or_else(|| err(0, format!("unknown kind `{k}`")))?;
            let layer = if field(3).is_empty() { None } else { Some(int(3)?) };
            Ok(TemporalCurvePoint {
                kind,
                epoch: int(2)?,
                layer,
                t: int(4)?,
                value_bits: num(7)?,
            }
            .into())
        }
    }
}

/// Writes points as CSV (fixed header, empty cells where not applicable) or
/// as a JSON array. Floats use the shortest round-trip representation.
pub fn export_curves(points: &[CurvePoint], path: &Path, format: ExportFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format {
        ExportFormat::Json => {
            let text = serde_json::to_string_pretty(points).map_err(|e| Error::serde(path, e))?;
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
            w.write_record(CSV_HEADER).map_err(|e| Error::serde(path, e))?;
            for p in points {
                w.write_record(row(p)).map_err(|e| Error::serde(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_curves(path: &Path, format: ExportFormat) -> Result<Vec<CurvePoint>> {
    match format {
        ExportFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::serde(path, e))
        }
        ExportFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| Error::serde(path, e))?;
            let header = r.headers().map_err(|e| Error::serde(path, e))?.clone();
            if header.iter().ne(CSV_HEADER.iter().copied()) {
                return Err(Error::Schema(format!("unexpected curve header in {}", path.display())));
            }
            r.records()
                .enumerate()
                .map(|(i, rec)| parse_row(&rec.map_err(|e| Error::serde(path, e))?, i + 2))
                .collect()
        }
    }
}

/// Writes a matplotlib script that plots the exported CSVs.
pub fn emit_plot_script(path: &Path, plane_csv: &str, info_csv: &str, compression_csv: &str) -> Result<()> {
    let script = format!(
        r#"#!/usr/bin/env python3
"""Plots exported information-plane and temporal curves. Requires pandas and matplotlib."""
import sys
import pandas as pd
import matplotlib.pyplot as plt

base = sys.argv[1] if len(sys.argv) > 1 else "."
plane = pd.read_csv(f"{{base}}/{plane_csv}")
fig, ax = plt.subplots()
for (phase, layer), g in plane.groupby(["phase", "layer"]):
    g = g.sort_values("epoch")
    ax.plot(g.i_xh_bits, g.i_yh_bits, marker="o", label=f"phase {{phase}} layer {{layer}}")
ax.set_xlabel("I(X;H) [bits]")
ax.set_ylabel("I(H;Y) [bits]")
ax.legend()
fig.savefig(f"{{base}}/plane.png", dpi=150)

for name in ["{info_csv}", "{compression_csv}"]:
    df = pd.read_csv(f"{{base}}/{{name}}")
    surf = df.pivot(index="epoch", columns="t", values="value_bits")
    fig = plt.figure()
    ax = fig.add_subplot(projection="3d")
    t, e = surf.columns.values, surf.index.values
    import numpy as np
    tt, ee = np.meshgrid(t, e)
    ax.plot_surface(tt, ee, surf.values, cmap="viridis")
    ax.set_xlabel("t")
    ax.set_ylabel("epoch")
    ax.set_zlabel("bits")
    fig.savefig(f"{{base}}/{{name.rsplit('.', 1)[0]}}.png", dpi=150)
"#
    );
    fs::write(path, script).map_err(|e| Error::io(path, e))
}
