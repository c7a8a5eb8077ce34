mod common;

use std::collections::BTreeMap;

use graphmatch_core::gnb::{self, GnbConfig, GnbParams, LatentState, CONV_FAMILIES, ENCODER_FAMILIES};
use graphmatch_core::graphs::{build_label_graph, AssignmentGraph, BBox, Instance, LabelVocab};
use graphmatch_core::numeric::{Tape, Tensor};
use graphmatch_core::rng;
use rand::seq::SliceRandom;
use rand::Rng as _;

/// Block whose every family is a single affine layer.
fn affine_params(d: usize, dw: usize, widths: Vec<usize>) -> GnbParams {
    let mut cfg = GnbConfig::new(d, dw, widths).unwrap();
    let families = ENCODER_FAMILIES.iter().chain(CONV_FAMILIES.iter()).chain(["dec"].iter());
    cfg.hidden = families.map(|f| (f.to_string(), Vec::new())).collect::<BTreeMap<_, _>>();
    GnbParams::init(cfg, &mut rng::stream(0, rng::STREAM_INIT)).unwrap()
}

fn set(p: &mut GnbParams, family: &str, w: &[f64], b: f64) {
    p.store
        .set_value(&format!("{family}.W0"), Tensor::new(vec![1, w.len()], w.to_vec()).unwrap())
        .unwrap();
    p.store.set_value(&format!("{family}.b0"), Tensor::vector(&[b])).unwrap();
}

fn instance(feature: f64, x: f64) -> Instance {
    Instance {
        feature: vec![feature],
        bbox: BBox::new(x, 0.1, 0.1, 0.1),
        confidence: 1.0,
        class: 0,
    }
}

fn vocab(values: &[f64]) -> LabelVocab {
    let names = (0..values.len()).map(|k| format!("l{k}")).collect();
    let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
    LabelVocab::new(names, Tensor::from_rows(&rows).unwrap()).unwrap()
}

fn column(tape: &mut Tape, values: &[f64]) -> graphmatch_core::numeric::Var {
    tape.constant(Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap())
}

#[test]
fn encode_single_pair_by_hand() {
    let mut p = affine_params(1, 1, vec![1]);
    set(&mut p, "enc.v_instance", &[2.0], 0.5);
    set(&mut p, "enc.v_label", &[-1.0], 1.0);
    set(&mut p, "enc.e_matching", &[1.0, 4.0], -1.0);
    let g = AssignmentGraph::build(&[instance(3.0, 0.2)], &build_label_graph(&vocab(&[0.25])).unwrap(), 3).unwrap();
    let mut tape = Tape::new();
    let s = gnb::encode(&mut tape, &g, &p).unwrap();
    assert!((tape.value(s.instance_nodes).data()[0] - 6.5).abs() < 1e-12);
    assert!((tape.value(s.label_nodes).data()[0] - 0.75).abs() < 1e-12);
    // 3·1 + 0.25·4 − 1
    assert!((tape.value(s.matching_edges).data()[0] - 3.0).abs() < 1e-12);
    assert!(s.instance_edges.is_none() && s.label_edges.is_none());
}

#[test]
fn zero_weight_encoders_emit_biases() {
    let mut r = common::rng(3);
    let g = common::random_graph(&mut r, 3, 2, 4, 3, 2);
    let mut p = common::params(4, 3, vec![5], 1);
    let mut biases = BTreeMap::new();
    for f in ENCODER_FAMILIES {
        let mlp = p.family(&format!("enc.{f}")).unwrap().clone();
        let (w, b) = *mlp.layers().last().unwrap();
        let shape = p.store.get(w).value.shape().to_vec();
        p.store.get_mut(w).value = Tensor::zeros(&shape);
        biases.insert(f, p.store.get(b).value.data().to_vec());
    }
    let mut tape = Tape::new();
    let s = gnb::encode(&mut tape, &g, &p).unwrap();
    let check = |v: &Tensor, f: &str| {
        for i in 0..v.rows() {
            assert_eq!(v.row(i), biases[f].as_slice(), "{f}");
        }
    };
    check(tape.value(s.instance_nodes), "v_instance");
    check(tape.value(s.label_nodes), "v_label");
    check(tape.value(s.instance_edges.unwrap()), "e_instance");
    check(tape.value(s.label_edges.unwrap()), "e_label");
    check(tape.value(s.matching_edges), "e_matching");
}

#[test]
fn node_convolution_two_instances_by_hand() {
    let mut p = affine_params(1, 1, vec![1]);
    set(&mut p, "conv1.rho_hat_n_o", &[1.0, 2.0], 0.0);
    set(&mut p, "conv1.rho_tilde_n_o", &[1.0, -1.0], 0.5);
    set(&mut p, "conv1.phi_n_o", &[1.0, 1.0, 2.0], 0.0);
    set(&mut p, "conv1.rho_tilde_n_l", &[1.0, 1.0], 0.0);
    set(&mut p, "conv1.phi_n_l", &[1.0, 1.0, 1.0], 0.0);
    let g = AssignmentGraph::build(
        &[instance(0.0, 0.1), instance(0.0, 0.5)],
        &build_label_graph(&vocab(&[0.0])).unwrap(),
        1,
    )
    .unwrap();
    assert_eq!(g.instances.edges, vec![(0, 1), (1, 0)]);

    let mut tape = Tape::new();
    let state = LatentState {
        instance_nodes: column(&mut tape, &[1.0, 3.0]),
        label_nodes: column(&mut tape, &[2.0]),
        instance_edges: Some(column(&mut tape, &[0.5, -1.0])),
        label_edges: None,
        matching_edges: column(&mut tape, &[1.0, -2.0]),
    };
    let (vo, vl) = gnb::node_convolution(&mut tape, &g, &p, 0, &state).unwrap();
    // v̂_0 = 0.5 + 2·3, ṽ_0 = 1 − 2 + 0.5, v_0 = 1 + 6.5 + 2·(−0.5)
    // v̂_1 = −1 + 2·1, ṽ_1 = −2 − 2 + 0.5, v_1 = 3 + 1 + 2·(−3.5)
    let vo = tape.value(vo).data();
    assert!((vo[0] - 6.5).abs() < 1e-12 && (vo[1] + 3.0).abs() < 1e-12, "{vo:?}");
    // no label edges; ṽ = mean(1 + 1, −2 + 3) = 1.5
    assert!((tape.value(vl).data()[0] - 3.5).abs() < 1e-12);
}

#[test]
fn edge_convolution_single_matching_edge_by_hand() {
    let mut p = affine_params(1, 1, vec![1]);
    set(&mut p, "conv1.rho_e_m", &[3.0, 1.0], 0.25);
    set(&mut p, "conv1.phi_e_m", &[2.0, -1.0], 1.0);
    let g = AssignmentGraph::build(&[instance(0.0, 0.1)], &build_label_graph(&vocab(&[0.0])).unwrap(), 1).unwrap();
    let mut tape = Tape::new();
    let state = LatentState {
        instance_nodes: column(&mut tape, &[2.0]),
        label_nodes: column(&mut tape, &[-1.0]),
        instance_edges: None,
        label_edges: None,
        matching_edges: column(&mut tape, &[0.5]),
    };
    let out = gnb::edge_convolution(&mut tape, &g, &p, 0, &state).unwrap();
    // ê = 3·2 − 1 + 0.25 = 5.25; e = 2·0.5 − 5.25 + 1
    assert!((tape.value(out.matching_edges).data()[0] + 3.25).abs() < 1e-12);
}

#[test]
fn zero_edge_functions_give_phi_biases() {
    let mut r = common::rng(11);
    let g = common::random_graph(&mut r, 3, 3, 2, 2, 2);
    let mut p = common::params(2, 2, vec![3], 5);
    for f in ["rho_e_o", "phi_e_o", "rho_e_l", "phi_e_l", "rho_e_m", "phi_e_m"] {
        let mlp = p.family(&format!("conv1.{f}")).unwrap().clone();
        for (w, b) in mlp.layers() {
            for id in [*w, *b] {
                let shape = p.store.get(id).value.shape().to_vec();
                p.store.get_mut(id).value = Tensor::zeros(&shape);
            }
        }
        let (_, b) = *mlp.layers().last().unwrap();
        p.store.get_mut(b).value = Tensor::full(&[3], 0.125);
    }
    let mut tape = Tape::new();
    let s = gnb::encode(&mut tape, &g, &p).unwrap();
    let s = gnb::convolve(&mut tape, &g, &p, 0, &s).unwrap();
    for v in [s.instance_edges.unwrap(), s.label_edges.unwrap(), s.matching_edges] {
        assert!(tape.value(v).data().iter().all(|x| *x == 0.125));
    }
}

#[test]
fn identical_matching_edges_update_identically() {
    let inst = vec![instance(0.3, 0.1), instance(0.3, 0.5)];
    let g = AssignmentGraph::build(&inst, &build_label_graph(&vocab(&[0.7, -0.2])).unwrap(), 1).unwrap();
    let p = common::params(1, 1, vec![3], 2);
    let row = [0.4, -1.1, 0.25];
    let mut tape = Tape::new();
    let mut t = |rows: usize, r: &[f64]| tape.constant(Tensor::from_rows(&vec![r.to_vec(); rows]).unwrap());
    let state = LatentState {
        instance_nodes: t(2, &[1.0, 0.5, -0.3]),
        label_nodes: t(2, &[0.2, 0.2, 0.9]),
        instance_edges: Some(t(2, &row)),
        label_edges: Some(t(2, &row)),
        matching_edges: t(4, &row),
    };
    let out = gnb::edge_convolution(&mut tape, &g, &p, 0, &state).unwrap();
    let e = tape.value(out.matching_edges);
    for i in 1..4 {
        assert_eq!(e.row(i), e.row(0));
    }
}

#[test]
fn matches_straight_line_oracle() {
    let mut r = common::rng(21);
    for (m, c) in [(2, 2), (1, 1), (1, 3), (4, 1), (5, 4)] {
        let g = common::random_graph(&mut r, m, c, 3, 2, 2);
        let p = common::params(3, 2, vec![4, 3], (m * 10 + c) as u64);
        let s = gnb::forward(&g, &p).unwrap();
        let o = common::oracle::forward(&g, &p);
        for (i, row) in o.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert!((s.get(i, j) - want).abs() < 1e-10, "M={m} C={c} ({i},{j})");
            }
        }
    }
}

#[test]
fn oracle_agrees_on_default_widths_shape() {
    let mut r = common::rng(4);
    let g = common::random_graph(&mut r, 3, 4, 5, 4, 3);
    let p = common::params(5, 4, vec![6, 5, 2], 9);
    let s = gnb::forward(&g, &p).unwrap();
    assert_eq!((s.num_instances(), s.num_labels()), (3, 4));
    let o = common::oracle::forward(&g, &p);
    for (i, row) in o.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            assert!((s.get(i, j) - want).abs() < 1e-10);
            assert!(s.get(i, j) > 0.0 && s.get(i, j) < 1.0);
        }
    }
}

fn permuted<T: Clone>(items: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|i| items[*i].clone()).collect()
}

#[test]
fn instance_and_label_permutation_equivariance() {
    let mut r = common::rng(99);
    for trial in 0..20 {
        let m = r.random_range(1..=8);
        let c = r.random_range(1..=6);
        let inst = common::random_instances(&mut r, m, 3);
        let voc = common::random_vocab(&mut r, c, 2);
        let lg = build_label_graph(&voc).unwrap();
        let p = common::params(3, 2, vec![4, 3], trial);
        let base = gnb::forward(&AssignmentGraph::build(&inst, &lg, 3).unwrap(), &p).unwrap();

        let mut pi: Vec<usize> = (0..m).collect();
        pi.shuffle(&mut r);
        let g = AssignmentGraph::build(&permuted(&inst, &pi), &lg, 3).unwrap();
        let s = gnb::forward(&g, &p).unwrap();
        for (new, old) in pi.iter().enumerate() {
            for j in 0..c {
                assert!((s.get(new, j) - base.get(*old, j)).abs() <= 1e-12, "trial {trial}");
            }
        }

        let mut sigma: Vec<usize> = (0..c).collect();
        sigma.shuffle(&mut r);
        let rows: Vec<Vec<f64>> = sigma.iter().map(|k| voc.embeddings().row(*k).to_vec()).collect();
        let names = permuted(voc.names(), &sigma);
        let voc2 = LabelVocab::new(names, Tensor::from_rows(&rows).unwrap()).unwrap();
        let g = AssignmentGraph::build(&inst, &build_label_graph(&voc2).unwrap(), 3).unwrap();
        let s = gnb::forward(&g, &p).unwrap();
        for i in 0..m {
            for (new, old) in sigma.iter().enumerate() {
                assert!((s.get(i, new) - base.get(i, *old)).abs() <= 1e-12, "trial {trial}");
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut r = common::rng(5);
    let g = common::random_graph(&mut r, 4, 3, 3, 2, 2);
    let p = common::params(3, 2, vec![4, 3], 1);
    let a = gnb::forward(&g, &p).unwrap();
    let b = gnb::forward(&g, &p).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn zero_decoder_scores_one_half() {
    let mut r = common::rng(6);
    let g = common::random_graph(&mut r, 3, 4, 3, 2, 2);
    let mut p = common::params(3, 2, vec![4, 3], 1);
    let dec = p.decoder.clone();
    for (w, b) in dec.layers() {
        for id in [*w, *b] {
            let shape = p.store.get(id).value.shape().to_vec();
            p.store.get_mut(id).value = Tensor::zeros(&shape);
        }
    }
    let s = gnb::forward(&g, &p).unwrap();
    assert!(s.data().iter().all(|v| *v == 0.5));
}
