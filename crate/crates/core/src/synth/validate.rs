//! Clearance check on densely sampled mesh edges.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap;

use super::{invalid, Part, SynthError, SynthSpec, CLEARANCE};
use crate::geometry::sample_segment;
use crate::math::Vec3;

const SPACING: f64 = 0.0025;

type Cell = [i64; 3];

fn cell_of(p: Vec3) -> Cell {
    [
        (p.x / CLEARANCE).floor() as i64,
        (p.y / CLEARANCE).floor() as i64,
        (p.z / CLEARANCE).floor() as i64,
    ]
}

fn edge_samples(part: &Part) -> Vec<Vec3> {
    let mut edges = BTreeSet::new();
    for f in &part.data.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let v = &part.data.vertices;
    edges
        .into_iter()
        .flat_map(|(a, b)| sample_segment(v[a as usize], v[b as usize], SPACING))
        .collect()
}

/// Every pair of parts that is neither an intended contact nor made of two
/// small parts must be at least [`CLEARANCE`] apart; runs named in a gap pair
/// only need to exceed the `SynthSpec` epsilon.
pub(super) fn check_clearances(
    spec: &SynthSpec,
    parts: &[Part],
    intended: &BTreeSet<(usize, usize)>,
) -> Result<(), SynthError> {
    let mut grid: FxHashMap<Cell, BTreeMap<usize, Vec<Vec3>>> = FxHashMap::default();
    for (i, part) in parts.iter().enumerate() {
        for p in edge_samples(part) {
            grid.entry(cell_of(p)).or_default().entry(i).or_default().push(p);
        }
    }
    let gap: BTreeSet<(usize, usize)> = spec
        .gap_pairs
        .iter()
        .map(|p| (p[0].min(p[1]), p[0].max(p[1])))
        .collect();
    let required = |a: usize, b: usize| -> Option<f64> {
        let (pa, pb) = (&parts[a], &parts[b]);
        if (pa.small && pb.small) || intended.contains(&(a.min(b), a.max(b))) {
            return None;
        }
        let runs = (pa.run.min(pb.run), pa.run.max(pb.run));
        Some(if gap.contains(&runs) { spec.epsilon } else { CLEARANCE })
    };

    let mut worst: Option<(f64, usize, usize, f64)> = None;
    let mut cells: Vec<&Cell> = grid.keys().collect();
    cells.sort();
    for c in cells {
        let here = &grid[c];
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                    let Some(there) = grid.get(&n) else { continue };
                    for (&a, pts_a) in here {
                        for (&b, pts_b) in there {
                            if a >= b {
                                continue;
                            }
                            let Some(need) = required(a, b) else { continue };
                            let d = pts_a
                                .iter()
                                .flat_map(|p| pts_b.iter().map(move |q| p.distance(*q)))
                                .fold(f64::INFINITY, f64::min);
                            let bad = if need == CLEARANCE { d < need } else { d <= need };
                            if bad && worst.is_none_or(|w| d - need < w.0 - w.3) {
                                worst = Some((d, a, b, need));
                            }
                        }
                    }
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((d, a, b, need)) => Err(invalid(format!(
            "{} and {} are {d:.4} m apart; at least {need} m is required",
            parts[a].path, parts[b].path
        ))),
    }
}
