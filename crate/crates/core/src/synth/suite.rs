//! Bundled specs covering the topologies the functional extraction must handle.

use super::{AttachmentKind, AttachmentSpec, BranchSpec, RunSpec, SynthSpec, TANK_RADIUS, TANK_SIDES};
use crate::math::Vec3;

pub const SUITE: [&str; 8] = [
    "linear_chain",
    "two_gauges_adjacent",
    "tank_star",
    "disconnected",
    "valve_gauge_direct",
    "contested_corridor",
    "bolt_cluster",
    "tank_to_tank",
];

fn run(points: &[[f64; 3]]) -> RunSpec {
    RunSpec {
        waypoints: points.iter().map(|&p| Vec3::from(p)).collect(),
        radius: 0.05,
        sides: 12,
        max_segment_length: 1.0,
        branch_from: None,
    }
}

fn att(kind: AttachmentKind, run: usize, t: f64) -> AttachmentSpec {
    AttachmentSpec {
        kind,
        run,
        t,
        host: None,
    }
}

fn hosted(run: usize, host: usize) -> AttachmentSpec {
    AttachmentSpec {
        kind: AttachmentKind::Gauge,
        run,
        t: 0.0,
        host: Some(host),
    }
}

fn spec(seed: u64, runs: Vec<RunSpec>, attachments: Vec<AttachmentSpec>) -> SynthSpec {
    SynthSpec {
        seed,
        runs,
        attachments,
        gap_pairs: Vec::new(),
        epsilon: crate::spatial_index::DEFAULT_EPSILON,
        ground: false,
    }
}

use AttachmentKind::{Gauge, Support, Tank, Valve};

pub fn suite_case(name: &str) -> Option<SynthSpec> {
    Some(match name {
        "linear_chain" => {
            let mut s = spec(
                1,
                vec![run(&[[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [2.0, 2.0, 1.0]])],
                vec![
                    att(Valve, 0, 0.2),
                    att(AttachmentKind::FlangePair { bolts: 8 }, 0, 0.35),
                    att(Support, 0, 0.1),
                    att(Gauge, 0, 0.75),
                    att(Valve, 0, 0.9),
                ],
            );
            s.ground = true;
            s
        }
        "two_gauges_adjacent" => spec(
            2,
            vec![run(&[[0.0, 0.0, 1.0], [3.0, 0.0, 1.0]])],
            vec![
                att(Valve, 0, 0.2),
                att(Gauge, 0, 0.5),
                // host intervals touch: 1.5 + 0.08 = 1.66 - 0.08
                att(Gauge, 0, 1.66 / 3.0),
                att(Valve, 0, 0.85),
            ],
        ),
        "tank_star" => {
            let center = Vec3::new(0.4, 0.0, 1.0);
            let theta0 = std::f64::consts::PI;
            let arm = |port: usize| {
                let a = theta0 + std::f64::consts::TAU * (port * TANK_SIDES / 3) as f64 / TANK_SIDES as f64;
                let dir = Vec3::new(a.cos(), a.sin(), 0.0);
                let mut r = run(&[(center + dir * (TANK_RADIUS + 1.6)).to_array()]);
                r.branch_from = Some(BranchSpec { attachment: 0, port });
                r
            };
            spec(
                3,
                vec![run(&[[-2.0, 0.0, 1.0], [0.0, 0.0, 1.0]]), arm(1), arm(2)],
                vec![
                    att(Tank { ports: 3 }, 0, 1.0),
                    att(Valve, 0, 0.5),
                    att(Valve, 1, 0.5),
                    att(Gauge, 2, 0.5),
                ],
            )
        }
        "disconnected" => spec(
            4,
            vec![
                run(&[[0.0, 0.0, 1.0], [2.0, 0.0, 1.0]]),
                run(&[[0.0, 0.5, 1.0], [2.0, 0.5, 1.0]]),
            ],
            vec![
                att(Valve, 0, 0.3),
                att(Gauge, 0, 0.7),
                att(Gauge, 1, 0.4),
                att(Valve, 1, 0.8),
            ],
        ),
        "valve_gauge_direct" => spec(
            5,
            vec![run(&[[0.0, 0.0, 1.0], [2.0, 0.0, 1.0]])],
            vec![att(Valve, 0, 0.5), hosted(0, 0), att(Valve, 0, 0.15), att(Gauge, 0, 0.8)],
        ),
        "contested_corridor" => {
            let mut r = run(&[[0.0, 0.0, 1.0], [3.0, 0.0, 1.0]]);
            // 1.64 m between the valves in five pieces
            r.max_segment_length = 0.4;
            spec(6, vec![r], vec![att(Valve, 0, 0.2), att(Valve, 0, 0.8)])
        }
        "bolt_cluster" => spec(
            7,
            vec![run(&[[0.0, 0.0, 1.0], [3.0, 0.0, 1.0]])],
            vec![
                att(Valve, 0, 0.2),
                att(AttachmentKind::BoltCluster { count: 50 }, 0, 0.5),
                hosted(0, 0),
            ],
        ),
        "tank_to_tank" => spec(
            8,
            vec![run(&[[0.0, 0.0, 1.0], [3.0, 0.0, 1.0]])],
            vec![
                att(Tank { ports: 3 }, 0, 0.0),
                att(Valve, 0, 0.3),
                att(Tank { ports: 3 }, 0, 1.0),
                att(Gauge, 0, 0.6),
            ],
        ),
        "adversarial_gap" => {
            let mut s = spec(
                9,
                vec![
                    run(&[[0.0, 0.0, 1.0], [1.009, 0.0, 1.0]]),
                    run(&[[1.021, 0.0, 1.0], [2.0, 0.0, 1.0]]),
                ],
                vec![att(Valve, 0, 0.5), att(Gauge, 1, 0.5)],
            );
            s.gap_pairs = vec![[0, 1]];
            s
        }
        _ => return None,
    })
}

pub fn suite() -> Vec<(&'static str, SynthSpec)> {
    SUITE
        .iter()
        .map(|&n| (n, suite_case(n).expect("bundled case")))
        .collect()
}

/// Cases whose structures sit just over epsilon apart.
pub fn adversarial_suite() -> Vec<(&'static str, SynthSpec)> {
    vec![("adversarial_gap", suite_case("adversarial_gap").expect("bundled case"))]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    #[test]
    fn every_case_generates() {
        for (name, s) in suite().into_iter().chain(adversarial_suite()) {
            let out = generate(&s).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!out.gt_functional.units.is_empty(), "{name}");
        }
    }

    #[test]
    fn expected_shapes() {
        let g = |n: &str| generate(&suite_case(n).unwrap()).unwrap();
        let star = g("tank_star");
        assert_eq!(star.gt_functional.units.len(), 4);
        let tank = star.gt_functional.units.iter().find(|u| u.group == "Tank").unwrap().index;
        assert_eq!(star.gt_functional.degree(tank), 3);
        assert_eq!(g("disconnected").gt_clusters.len(), 2);
        assert_eq!(g("adversarial_gap").gt_clusters.len(), 2);
        let bolts = g("bolt_cluster");
        assert_eq!(bolts.gt_clusters.iter().map(Vec::len).sum::<usize>(), 10);
        assert_eq!(bolts.scene.meshes.len(), 60);
        assert_eq!(g("contested_corridor").gt_functional.edges.len(), 1);
    }
}
