use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sim::engine::settle_neutral;

fn setup() -> (RobotModel, Symmetry) {
    let m = RobotModel::default_model();
    let s = Symmetry::new(&m).unwrap();
    (m, s)
}

fn jitter(state: &FullState, model: &RobotModel, seed: u64) -> FullState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = state.clone();
    for v in &mut s.node_vel {
        *v = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    }
    let (lo, hi) = model.rest_length_bounds;
    for r in &mut s.rest_lengths {
        *r = rng.random_range(lo..hi);
    }
    s
}

#[test]
fn twenty_four_orthogonal_maps_with_identity_first() {
    let (m, s) = setup();
    assert_eq!(s.maps.len(), 24);
    assert!(s.maps[0].is_identity());
    assert_eq!(s.maps[0].orthogonal, Matrix3::identity());
    for map in &s.maps {
        assert!((map.orthogonal * map.orthogonal.transpose() - Matrix3::identity()).norm() < 1e-12);
        for i in 0..NUM_NODES {
            let img = map.orthogonal * m.node_positions_neutral[i];
            assert!((img - m.node_positions_neutral[map.node_perm[i]]).norm() < 1e-9);
        }
    }
    let proper = s.maps.iter().filter(|x| x.is_proper()).count();
    assert_eq!(proper, 12);
}

#[test]
fn composition_table_matches_matrix_products() {
    let (_, s) = setup();
    for a in 0..24 {
        for b in 0..24 {
            let c = s.compose[a][b];
            let prod = s.maps[a].orthogonal * s.maps[b].orthogonal;
            assert!((prod - s.maps[c].orthogonal).norm() < 1e-12);
        }
        assert_eq!(s.compose[a][s.inverse[a]], 0);
        assert_eq!(s.compose[s.inverse[a]][a], 0);
    }
    for a in 0..24 {
        for b in 0..24 {
            for c in 0..24 {
                assert_eq!(s.compose[s.compose[a][b]][c], s.compose[a][s.compose[b][c]]);
            }
        }
    }
}

#[test]
fn stabilizer_orders() {
    let (m, s) = setup();
    for (f, face) in m.faces.iter().enumerate() {
        let n = s.maps.iter().filter(|x| x.face_perm[f] == f).count();
        let expected = if face.kind == FaceKind::Delta { 3 } else { 2 };
        assert_eq!(n, expected, "face {f}");
    }
}

#[test]
fn lower_nodes_contain_reference_face() {
    let (m, s) = setup();
    for kind in [FaceKind::Delta, FaceKind::Lambda] {
        let f = &m.faces[s.canonical_face(kind)];
        for n in f.nodes {
            assert!(s.lower_nodes(kind).contains(&n));
        }
    }
}

#[test]
fn canonical_delta_with_canonical_entry_is_identity() {
    let (m, s) = setup();
    let c = s.canonical_delta;
    let prev = m.face_across(c, m.faces[c].edge(0)).unwrap();
    let st = FullState::neutral(&m);
    let frame = reduction_frame(&s, &m, c, prev, &st).unwrap();
    assert_eq!(frame.map_index, 0);
    assert_eq!(frame.entry_slot, Some(0));
}

#[test]
fn delta_face_edge_pairs_resolve_to_all_maps() {
    let (m, s) = setup();
    let st = FullState::neutral(&m);
    let mut seen = HashSet::new();
    for (f, face) in m.faces.iter().enumerate() {
        if face.kind != FaceKind::Delta {
            continue;
        }
        for slot in 0..3 {
            let prev = m.face_across(f, face.edge(slot)).unwrap();
            let frame = reduction_frame(&s, &m, f, prev, &st).unwrap();
            assert_eq!(frame.reference_face, s.canonical_delta);
            assert_eq!(frame.entry_slot, Some(0));
            assert_eq!(s.maps[frame.map_index].face_perm[f], s.canonical_delta);
            seen.insert(frame.map_index);
        }
    }
    assert_eq!(seen.len(), 24);
}

#[test]
fn lambda_without_adjacent_previous_takes_lowest_candidate() {
    let (m, s) = setup();
    let st = FullState::neutral(&m);
    for (f, face) in m.faces.iter().enumerate() {
        if face.kind != FaceKind::Lambda {
            continue;
        }
        let frame = reduction_frame(&s, &m, f, f, &st).unwrap();
        let candidates: Vec<usize> =
            (0..24).filter(|&k| s.maps[k].face_perm[f] == s.canonical_lambda).collect();
        assert_eq!(candidates.len(), 2);
        assert_eq!(frame.map_index, candidates[0]);
        assert_eq!(frame.entry_slot, None);
    }
}

#[test]
fn lambda_cable_entry_lands_in_slot_one() {
    let (m, s) = setup();
    let st = FullState::neutral(&m);
    for (f, face) in m.faces.iter().enumerate() {
        if face.kind != FaceKind::Lambda {
            continue;
        }
        for slot in 1..3 {
            let prev = m.face_across(f, face.edge(slot)).unwrap();
            let frame = reduction_frame(&s, &m, f, prev, &st).unwrap();
            assert_eq!(frame.entry_slot, Some(1));
        }
        let prev = m.face_across(f, face.edge(0)).unwrap();
        assert_eq!(reduction_frame(&s, &m, f, prev, &st).unwrap().entry_slot, Some(0));
    }
}

#[test]
fn canonicalize_restore_is_lossless() {
    let (m, s) = setup();
    let flat = Terrain::flat();
    let base = settle_neutral(&m, &flat, s.canonical_lambda).unwrap();
    for seed in 0..20u64 {
        let st = s.act_on_state((seed % 24) as usize, &jitter(&base, &m, seed), seed as f64 * 0.7);
        let f = bottom_triangle(&st, &m, &flat, 0);
        let frame = reduction_frame(&s, &m, f, (seed as usize) % 20, &st).unwrap();
        let back = restore_state(&s, &canonicalize_state(&s, &st, &frame), &frame);
        for i in 0..NUM_NODES {
            assert!((back.node_pos[i] - st.node_pos[i]).norm() < 1e-12);
            assert!((back.node_vel[i] - st.node_vel[i]).norm() < 1e-12);
        }
        assert_eq!(back.rest_lengths, st.rest_lengths);
    }
}

#[test]
fn control_relabel_round_trip() {
    let (_, s) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = ControlCommand { target_rest_lengths: std::array::from_fn(|_| rng.random_range(0.8..1.2)) };
    for k in 0..24 {
        let frame = ReductionFrame {
            map_index: k,
            current_face: 0,
            reference_face: 0,
            heading_rotation: 0.3,
            mirrored: !s.maps[k].is_proper(),
            entry_slot: None,
        };
        let canon = canonicalize_control(&s, &u, &frame);
        assert_eq!(relabel_control(&s, &canon, &frame), u);
        if k == 0 {
            assert_eq!(canon, u);
        }
    }
}

#[test]
fn identity_frame_keeps_physical_rest_length_order() {
    let (m, s) = setup();
    let st = jitter(&FullState::neutral(&m), &m, 9);
    let c = s.canonical_delta;
    let prev = m.face_across(c, m.faces[c].edge(0)).unwrap();
    let frame = reduction_frame(&s, &m, c, prev, &st).unwrap();
    let y = reduce_observation(&s, &m, &st, &frame, Vec3::x()).unwrap();
    assert_eq!(y.len(), OBS_DIM);
    assert_eq!(y.len(), 47);
    assert_eq!(y[0], 1.0);
    assert_eq!(&y[1..25], &st.rest_lengths[..]);
}

#[test]
fn symmetric_states_share_observations() {
    let (m, s) = setup();
    let flat = Terrain::flat();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for start in [s.canonical_delta, s.canonical_lambda] {
        let base = jitter(&settle_neutral(&m, &flat, start).unwrap(), &m, 5);
        let face = bottom_triangle(&base, &m, &flat, start);
        assert_eq!(face, start);
        let slots: &[usize] = if m.faces[face].kind == FaceKind::Delta { &[0, 1, 2] } else { &[1, 2] };
        for &slot in slots {
            let prev = m.face_across(face, m.faces[face].edge(slot)).unwrap();
            let target = Vec3::new(0.6, -0.8, 0.0);
            let frame = reduction_frame(&s, &m, face, prev, &base).unwrap();
            let y0 = reduce_observation(&s, &m, &base, &frame, target).unwrap();
            for k in 0..24 {
                let yaw = rng.random_range(-PI..PI);
                let st = s.act_on_state(k, &base, yaw);
                let g = yaw_matrix(yaw) * chirality_mirror(s.maps[k].is_proper());
                let map = &s.maps[k];
                let frame2 =
                    reduction_frame(&s, &m, map.face_perm[face], map.face_perm[prev], &st).unwrap();
                let y1 = reduce_observation(&s, &m, &st, &frame2, g * target).unwrap();
                for (a, b) in y0.iter().zip(&y1) {
                    assert!((a - b).abs() < 1e-9, "map {k}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn rotation_about_bottom_face_permutes_commands_by_three_cycles() {
    let (_, s) = setup();
    let c = s.canonical_delta;
    let rot: Vec<usize> = (1..24)
        .filter(|&k| s.maps[k].face_perm[c] == c)
        .collect();
    assert_eq!(rot.len(), 2);
    for k in rot {
        let map = &s.maps[k];
        assert!(map.is_proper());
        // Every cable orbit under a 3-fold rotation has length 3.
        for c0 in 0..NUM_CABLES {
            let c1 = map.cable_perm[c0];
            let c2 = map.cable_perm[c1];
            assert_ne!(c1, c0);
            assert_eq!(map.cable_perm[c2], c0);
        }
        let u = ControlCommand { target_rest_lengths: std::array::from_fn(|i| i as f64) };
        let moved = s.act_on_control(k, &u);
        for c0 in 0..NUM_CABLES {
            assert_eq!(moved.target_rest_lengths[map.cable_perm[c0]], c0 as f64);
        }
    }
}

#[test]
fn bottom_triangle_fallbacks() {
    let (m, s) = setup();
    let flat = Terrain::flat();
    let settled = settle_neutral(&m, &flat, s.canonical_delta).unwrap();
    assert_eq!(bottom_triangle(&settled, &m, &flat, 19), s.canonical_delta);
    let mut air = settled.clone();
    for p in &mut air.node_pos {
        p.z += 1.0;
    }
    assert_eq!(bottom_triangle(&air, &m, &flat, 7), 7);
}

#[test]
fn bottom_triangle_tie_goes_to_lower_id() {
    let (m, _) = setup();
    let flat = Terrain::flat();
    // Flatten two adjacent faces onto the ground and put the CoM over their shared edge.
    let (a, b) = (0..NUM_FACES)
        .flat_map(|a| (a + 1..NUM_FACES).map(move |b| (a, b)))
        .find(|&(a, b)| m.shared_edge(a, b).is_some())
        .unwrap();
    let e = m.shared_edge(a, b).unwrap();
    let mut st = FullState::neutral(&m);
    for p in &mut st.node_pos {
        p.z = 5.0;
    }
    let apex_a = m.faces[a].nodes.into_iter().find(|&n| n != e.0 && n != e.1).unwrap();
    let apex_b = m.faces[b].nodes.into_iter().find(|&n| n != e.0 && n != e.1).unwrap();
    st.node_pos[e.0] = Vec3::new(-0.5, 0.0, 0.0);
    st.node_pos[e.1] = Vec3::new(0.5, 0.0, 0.0);
    st.node_pos[apex_a] = Vec3::new(0.0, 1.0, 0.0);
    st.node_pos[apex_b] = Vec3::new(0.0, -1.0, 0.0);
    // Put the remaining nodes symmetric about y = 0 so the CoM sits on the edge.
    let rest: Vec<usize> = (0..NUM_NODES).filter(|n| ![e.0, e.1, apex_a, apex_b].contains(n)).collect();
    for (k, &n) in rest.iter().enumerate() {
        let y = if k % 2 == 0 { 0.3 } else { -0.3 };
        st.node_pos[n] = Vec3::new(0.0, y, 5.0);
    }
    assert!(st.com().y.abs() < 1e-15);
    assert_eq!(bottom_triangle(&st, &m, &flat, 19), a.min(b));
}

#[test]
fn map_table_json_round_trip() {
    let (_, s) = setup();
    let text = s.to_json().unwrap();
    let back: Symmetry = serde_json::from_str(&text).unwrap();
    assert_eq!(back.maps, s.maps);
    assert_eq!(back.compose, s.compose);
}
