#![allow(dead_code)]

use graphmatch_core::gnb::{GnbConfig, GnbParams};
use graphmatch_core::graphs::{build_label_graph, AssignmentGraph, BBox, Instance, LabelVocab};
use graphmatch_core::numeric::Tensor;
use graphmatch_core::rng::{self, Rng};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, "tests")
}

pub fn random_instances(r: &mut Rng, m: usize, d: usize) -> Vec<Instance> {
    (0..m)
        .map(|_| {
            let w = r.random_range(0.05..0.4);
            let h = r.random_range(0.05..0.4);
            Instance {
                feature: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
                bbox: BBox::new(r.random_range(0.0..1.0 - w), r.random_range(0.0..1.0 - h), w, h),
                confidence: r.random_range(0.0..1.0),
                class: 0,
            }
        })
        .collect()
}

pub fn random_vocab(r: &mut Rng, c: usize, dw: usize) -> LabelVocab {
    let rows: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..dw).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let names = (0..c).map(|k| format!("l{k}")).collect();
    LabelVocab::new(names, Tensor::from_rows(&rows).unwrap()).unwrap()
}

pub fn random_graph(r: &mut Rng, m: usize, c: usize, d: usize, dw: usize, k: usize) -> AssignmentGraph {
    let inst = random_instances(r, m, d);
    let vocab = random_vocab(r, c, dw);
    AssignmentGraph::build(&inst, &build_label_graph(&vocab).unwrap(), k).unwrap()
}

pub fn params(d: usize, dw: usize, widths: Vec<usize>, seed: u64) -> GnbParams {
    let cfg = GnbConfig::new(d, dw, widths).unwrap();
    GnbParams::init(cfg, &mut rng::stream(seed, rng::STREAM_INIT)).unwrap()
}

/// Straight-line reimplementation of the block over plain vectors, used as an
/// oracle for the tape-based forward pass.
pub mod oracle {
    use graphmatch_core::gnb::GnbParams;
    use graphmatch_core::graphs::AssignmentGraph;
    use graphmatch_core::numeric::Mlp;

    type Rows = Vec<Vec<f64>>;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn mlp(params: &GnbParams, f: &Mlp, x: &[f64]) -> Vec<f64> {
        let n = f.layers().len();
        let mut h = x.to_vec();
        for (l, (w, b)) in f.layers().iter().enumerate() {
            let w = &params.store.get(*w).value;
            let b = &params.store.get(*b).value;
            let mut out = Vec::with_capacity(w.rows());
            for o in 0..w.rows() {
                let mut acc = 0.0;
                for (i, xi) in h.iter().enumerate() {
                    acc += w.get(o, i) * xi;
                }
                acc += b.data()[o];
                out.push(if l + 1 < n { acc.max(0.0) } else { acc });
            }
            h = out;
        }
        if f.spec().output == graphmatch_core::numeric::OutputActivation::Sigmoid {
            h.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        h
    }

    fn cat(parts: &[&[f64]]) -> Vec<f64> {
        parts.iter().flat_map(|p| p.iter().copied()).collect()
    }

    fn mean(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        if rows.is_empty() {
            return out;
        }
        for r in rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows.len() as f64);
        out
    }

    fn rows(t: &graphmatch_core::numeric::Tensor) -> Rows {
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    }

    /// `S[i][j]` for every instance `i` and label `j`.
    pub fn forward(g: &AssignmentGraph, p: &GnbParams) -> Rows {
        let (m, c) = (g.num_instances(), g.num_labels());
        let enc = &p.encoders;
        let mut vo: Rows = rows(&g.instances.nodes).iter().map(|x| mlp(p, &enc.v_instance, x)).collect();
        let mut vl: Rows = rows(&g.labels.nodes).iter().map(|x| mlp(p, &enc.v_label, x)).collect();
        let mut eo: Rows = g.instances.edge_attr.as_ref().map(rows).unwrap_or_default();
        eo = eo.iter().map(|x| mlp(p, &enc.e_instance, x)).collect();
        let mut el: Rows = g.labels.edge_attr.as_ref().map(rows).unwrap_or_default();
        el = el.iter().map(|x| mlp(p, &enc.e_label, x)).collect();
        // em[i][j]
        let mut em: Vec<Rows> = (0..m)
            .map(|i| (0..c).map(|j| mlp(p, &enc.e_matching, g.matching_attr.row(i * c + j))).collect())
            .collect();

        for (layer, f) in p.layers.iter().enumerate() {
            let (_, b) = p.config.layer_widths(layer);
            let mut new_vo = Vec::with_capacity(m);
            for i in 0..m {
                let msgs: Rows = g
                    .instances
                    .edges
                    .iter()
                    .enumerate()
                    .filter(|(_, (s, _))| *s == i)
                    .map(|(e, (_, t))| mlp(p, &f.rho_hat_n_o, &cat(&[&eo[e], &vo[*t]])))
                    .collect();
                let hat = mean(&msgs, b);
                let msgs: Rows = (0..c).map(|j| mlp(p, &f.rho_tilde_n_o, &cat(&[&em[i][j], &vl[j]]))).collect();
                let tilde = mean(&msgs, b);
                new_vo.push(mlp(p, &f.phi_n_o, &cat(&[&vo[i], &hat, &tilde])));
            }
            let mut new_vl = Vec::with_capacity(c);
            for j in 0..c {
                let msgs: Rows = g
                    .labels
                    .edges
                    .iter()
                    .enumerate()
                    .filter(|(_, (s, _))| *s == j)
                    .map(|(e, (_, t))| mlp(p, &f.rho_hat_n_l, &cat(&[&el[e], &vl[*t]])))
                    .collect();
                let hat = mean(&msgs, b);
                let msgs: Rows = (0..m).map(|i| mlp(p, &f.rho_tilde_n_l, &cat(&[&em[i][j], &vo[i]]))).collect();
                let tilde = mean(&msgs, b);
                new_vl.push(mlp(p, &f.phi_n_l, &cat(&[&vl[j], &hat, &tilde])));
            }
            vo = new_vo;
            vl = new_vl;
            eo = g
                .instances
                .edges
                .iter()
                .zip(&eo)
                .map(|((s, t), e)| {
                    let r = mlp(p, &f.rho_e_o, &cat(&[&vo[*s], &vo[*t]]));
                    mlp(p, &f.phi_e_o, &cat(&[e, &r]))
                })
                .collect();
            el = g
                .labels
                .edges
                .iter()
                .zip(&el)
                .map(|((s, t), e)| {
                    let r = mlp(p, &f.rho_e_l, &cat(&[&vl[*s], &vl[*t]]));
                    mlp(p, &f.phi_e_l, &cat(&[e, &r]))
                })
                .collect();
            for i in 0..m {
                for j in 0..c {
                    let r = mlp(p, &f.rho_e_m, &cat(&[&vo[i], &vl[j]]));
                    em[i][j] = mlp(p, &f.phi_e_m, &cat(&[&em[i][j], &r]));
                }
            }
        }
        em.iter()
            .map(|row| row.iter().map(|e| mlp(p, &p.decoder, e)[0]).collect())
            .collect()
    }
}
