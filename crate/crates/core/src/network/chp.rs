use thiserror::Error;

use super::{ChpUnit, RegionRow};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChpRegionError {
    #[error("CHP {0}: operating region is empty")]
    EmptyRegion(String),
    #[error("CHP {0}: operating region is unbounded")]
    UnboundedRegion(String),
    #[error("CHP {0}: no region rows")]
    NoRows(String),
}

/// Extreme points of a CHP operating polygon, counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDiagnostics {
    pub vertices: Vec<(f64, f64)>,
}

/// All half-planes of the region, including `P >= 0` and `H >= 0`.
fn halfplanes(rows: &[RegionRow]) -> Vec<RegionRow> {
    let mut all = rows.to_vec();
    all.push(RegionRow { a: -1.0, b: 0.0, d: 0.0 });
    all.push(RegionRow { a: 0.0, b: -1.0, d: 0.0 });
    all
}

fn satisfies(rows: &[RegionRow], p: f64, h: f64) -> bool {
    rows.iter().all(|r| {
        let scale = 1.0 + r.a.abs().max(r.b.abs()).max(r.d.abs());
        r.a * p + r.b * h <= r.d + EPS * scale
    })
}

/// Confirms the polygon `{(P,H): A P + B H <= D, P >= 0, H >= 0}` is nonempty
/// and bounded by enumerating its vertices.
pub fn validate_chp_region(unit: &ChpUnit) -> Result<RegionDiagnostics, ChpRegionError> {
    if unit.region.is_empty() {
        return Err(ChpRegionError::NoRows(unit.id.clone()));
    }
    let rows = halfplanes(&unit.region);

    let mut vertices: Vec<(f64, f64)> = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (r, s) = (rows[i], rows[j]);
            let det = r.a * s.b - r.b * s.a;
            if det.abs() < 1e-12 {
                continue;
            }
            let p = (r.d * s.b - r.b * s.d) / det;
            let h = (r.a * s.d - r.d * s.a) / det;
            if satisfies(&rows, p, h)
                && !vertices
                    .iter()
                    .any(|&(vp, vh)| (vp - p).abs() < 1e-9 && (vh - h).abs() < 1e-9)
            {
                vertices.push((p, h));
            }
        }
    }
    // The region lies in the nonnegative quadrant, so it has no lines and a
    // nonempty region always has a vertex.
    if vertices.is_empty() {
        return Err(ChpRegionError::EmptyRegion(unit.id.clone()));
    }

    // Recession cone {d : a_i·d <= 0}; its extreme rays are orthogonal to some normal.
    let mut candidates = vec![(1.0, 0.0), (0.0, 1.0)];
    for r in &rows {
        let norm = r.a.hypot(r.b);
        if norm > 0.0 {
            candidates.push((-r.b / norm, r.a / norm));
            candidates.push((r.b / norm, -r.a / norm));
        }
    }
    let unbounded = candidates
        .iter()
        .any(|&(dp, dh)| rows.iter().all(|r| r.a * dp + r.b * dh <= 1e-12));
    if unbounded {
        return Err(ChpRegionError::UnboundedRegion(unit.id.clone()));
    }

    let n = vertices.len() as f64;
    let cp = vertices.iter().map(|v| v.0).sum::<f64>() / n;
    let ch = vertices.iter().map(|v| v.1).sum::<f64>() / n;
    vertices.sort_by(|x, y| {
        let ax = (x.1 - ch).atan2(x.0 - cp);
        let ay = (y.1 - ch).atan2(y.0 - cp);
        ax.total_cmp(&ay)
    });
    Ok(RegionDiagnostics { vertices })
}
