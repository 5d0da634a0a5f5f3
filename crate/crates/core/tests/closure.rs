use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use cadgraph_core::config::PipelineConfig;
use cadgraph_core::functional::{functional_graph, FunctionalGraph};
use cadgraph_core::geometry::{mesh_geometry, SamplingOptions};
use cadgraph_core::grouping::group_small_meshes;
use cadgraph_core::math::{Box3, Vec3};
use cadgraph_core::pipeline::{cluster_partition, run_all};
use cadgraph_core::scene_graph::{Edge, Node, NodeKind, SceneGraph};
use cadgraph_core::scene_io::Mesh;
use cadgraph_core::spatial_index::{build_grid, pairwise_min_distances, within};
use cadgraph_core::synth::{adversarial_suite, generate, suite, SynthOutput};

fn run_case(tmp: &Path, name: &str, out: &SynthOutput) -> cadgraph_core::pipeline::RunSummary {
    let gt = tmp.join(name).join("gt");
    out.write(&gt).unwrap();
    let mut c = PipelineConfig {
        input: Some(gt.join("scene.json")),
        output_dir: tmp.join(name).join("out"),
        ..Default::default()
    };
    c.labeler.labels = Some(gt.join("gt_labels.json"));
    c.labeler.vocabulary = Some(gt.join("vocabulary.json"));
    run_all(&c).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn sorted_partition(p: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut p: Vec<Vec<String>> = p
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort();
            c
        })
        .collect();
    p.sort();
    p
}

#[test]
fn run_all_reproduces_every_synth_case() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, spec) in suite().into_iter().chain(adversarial_suite()) {
        let out = generate(&spec).unwrap();
        let s = run_case(tmp.path(), name, &out);
        let got = &s.extraction.graph;
        assert!(got.same_topology(&out.gt_functional), "{name}: {got:?}");
        assert_eq!(got.edges, out.gt_functional.edges, "{name}");
        assert_eq!(
            cluster_partition(&s.graph),
            sorted_partition(&out.gt_clusters),
            "{name}: cluster partition differs"
        );
        let v = s.graph.mesh_nodes().count();
        assert!(s.extraction.outer_iterations <= v.max(1), "{name}");
    }
}

#[test]
fn voxel_snapping_can_bridge_gaps_up_to_one_pitch() {
    // A 12 mm gap whose sides snap into neighbouring voxels reads as 10 mm.
    let plate = |path: &str, x: f64| {
        Mesh::new(
            path,
            vec![
                Vec3::new(x, 0.0, 0.0),
                Vec3::new(x, 0.3, 0.0),
                Vec3::new(x, 0.3, 0.3),
                Vec3::new(x, 0.0, 0.3),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    };
    let opts = SamplingOptions::default();
    let distance = |xa: f64, xb: f64| {
        let geoms = [plate("/a", xa), plate("/b", xb)].map(|m| mesh_geometry(&m, &opts).unwrap());
        let groups = group_small_meshes(&geoms, 1e-6, 0.1).unwrap().groups;
        let grid = build_grid(&groups, 0.05).unwrap();
        pairwise_min_distances(&grid, 0.05).get(0, 1).unwrap()
    };
    let misaligned = distance(1.001, 1.013);
    assert!(within(misaligned, 0.01), "{misaligned}");
    let aligned = distance(1.009, 1.021);
    assert!(!within(aligned, 0.01), "{aligned}");
}

/// Mesh nodes `0..labels.len()` with the given group labels and ADJACENT edges.
fn chain_graph(labels: &[&str], adjacent: &[(u32, u32)]) -> SceneGraph {
    let mut g = SceneGraph::default();
    for (i, l) in (0u32..).zip(labels) {
        let c = Vec3::new(i as f64, 0.0, 0.0);
        g.nodes.insert(
            i,
            Node {
                id: i,
                kind: NodeKind::Mesh,
                path: Some(format!("/n{i:02}")),
                centroid: c,
                aabb: Box3::from_point(c),
                group_label: (!l.is_empty()).then(|| l.to_string()),
                name_label: (!l.is_empty()).then(|| format!("{l} part")),
                member_paths: vec![format!("/n{i:02}")],
                cluster: Some(0),
                extra: Default::default(),
            },
        );
    }
    g.edges.extend(adjacent.iter().map(|&(a, b)| Edge::adjacent(a, b)));
    g
}

fn groups(v: &[&str]) -> BTreeSet<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn extract(g: &SceneGraph) -> cadgraph_core::functional::Extraction {
    functional_graph(
        g,
        &groups(&["Pipe assembly"]),
        &groups(&["Valve assembly", "Gauge", "Tank"]),
    )
    .unwrap()
}

const P: &str = "Pipe assembly";
const V: &str = "Valve assembly";
const G: &str = "Gauge";
const T: &str = "Tank";

fn edges(f: &FunctionalGraph) -> Vec<(usize, usize)> {
    f.edges.iter().copied().collect()
}

#[test]
fn units_link_through_pipes_and_directly() {
    // V - P - P - G,  G touches V2 directly, V2 - P - (unlabeled) - P - T
    let g = chain_graph(
        &[V, P, P, G, V, P, "", P, T],
        &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8)],
    );
    let ext = extract(&g);
    let groups: Vec<&str> = ext.graph.units.iter().map(|u| u.group.as_str()).collect();
    assert_eq!(groups, [V, G, V, T]);
    assert_eq!(edges(&ext.graph), [(1, 2), (2, 3)]);
    assert!(ext.outer_iterations <= g.nodes.len());
    assert!(!ext.claimed.contains(&6));
}

#[test]
fn contested_pipe_goes_to_the_lower_index_unit() {
    // V1 - P - P - P - V2: the middle pipe is claimed by V1 on pass two.
    let g = chain_graph(&[V, P, P, P, V], &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    let ext = extract(&g);
    assert_eq!(edges(&ext.graph), [(1, 2)]);
    assert!(ext.expanded[0].members.contains(&2));
    assert!(!ext.expanded[1].members.contains(&2));
    assert_eq!(ext.outer_iterations, 3);
}

#[test]
fn tank_star_and_isolated_units() {
    // Tank 0 with arms to V, V, G; an isolated gauge far away.
    let g = chain_graph(
        &[T, P, V, P, V, P, G, G],
        &[(0, 1), (1, 2), (0, 3), (3, 4), (0, 5), (5, 6)],
    );
    let ext = extract(&g);
    let tank = ext.graph.units.iter().find(|u| u.group == T).unwrap().index;
    assert_eq!(ext.graph.degree(tank), 3);
    let lone = ext.graph.units.iter().find(|u| u.seed_paths == ["/n07"]).unwrap().index;
    assert_eq!(ext.graph.degree(lone), 0);
    assert_eq!(ext.graph.edges.len(), 3);
}

#[test]
fn adjacent_same_label_nodes_form_one_unit() {
    let g = chain_graph(&[V, V, P, G, G], &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    let ext = extract(&g);
    assert_eq!(ext.graph.units.len(), 2);
    assert_eq!(ext.graph.units[0].seed_paths, ["/n00", "/n01"]);
    assert_eq!(edges(&ext.graph), [(1, 2)]);
}

#[test]
fn functional_graph_ignores_scene_translation() {
    let tmp = tempfile::tempdir().unwrap();
    let offset = Vec3::new(17.3, -4.2, 9.9);
    let mut results = BTreeMap::new();
    for (name, spec) in suite().into_iter().filter(|(n, _)| ["tank_star", "linear_chain"].contains(n)) {
        for (tag, s) in [("base", spec.clone()), ("moved", spec.translated(offset))] {
            let out = generate(&s).unwrap();
            let run = run_case(tmp.path(), &format!("{name}_{tag}"), &out);
            results.insert((name, tag), run.extraction.graph);
        }
        assert!(results[&(name, "base")].same_topology(&results[&(name, "moved")]), "{name}");
    }
}
