//! Graph network block: encoder, stacked node/edge convolutions, matching-edge decoder.
//!
//! Every function is its own MLP. Within convolution layer `ℓ` (input width
//! `a`, output width `b`):
//!
//! | family        | input                       | output |
//! |---------------|-----------------------------|--------|
//! | `rho_hat_n_o` | `[e^o_ij, v^o_j]` (2a)      | b      |
//! | `rho_tilde_n_o` | `[e^m_ij, v^l_j]` (2a)    | b      |
//! | `phi_n_o`     | `[v^o_i, v̂^o_i, ṽ^o_i]` (a+2b) | b   |
//! | `rho_hat_n_l` | `[e^l_ij, v^l_j]` (2a)      | b      |
//! | `rho_tilde_n_l` | `[e^m_ji, v^o_j]` (2a)    | b      |
//! | `phi_n_l`     | `[v^l_i, v̂^l_i, ṽ^l_i]` (a+2b) | b   |
//! | `rho_e_*`     | `[v_i, v_j]` (2b)           | b      |
//! | `phi_e_*`     | `[e_ij, ê_ij]` (a+b)        | b      |
//!
//! Aggregations apply `rho` to every neighbor pair and average the results.
//! Node updates within a layer read only the pre-layer state; edge updates
//! then read the freshly updated nodes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graphs::AssignmentGraph;
use crate::numeric::{Mlp, MlpSpec, OutputActivation, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

/// Extent of an instance-edge attribute: two boxes in corner form.
pub const INSTANCE_EDGE_DIM: usize = 8;

pub const ENCODER_FAMILIES: [&str; 5] = ["v_instance", "v_label", "e_instance", "e_label", "e_matching"];

pub const CONV_FAMILIES: [&str; 12] = [
    "rho_hat_n_o",
    "rho_tilde_n_o",
    "phi_n_o",
    "rho_hat_n_l",
    "rho_tilde_n_l",
    "phi_n_l",
    "rho_e_o",
    "phi_e_o",
    "rho_e_l",
    "phi_e_l",
    "rho_e_m",
    "phi_e_m",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GnbConfig {
    /// Instance feature extent.
    pub feature_dim: usize,
    /// Label embedding extent.
    pub embed_dim: usize,
    /// Output width of each convolution layer; the encoder maps to the first.
    pub latent_widths: Vec<usize>,
    /// Hidden widths for a family, keyed by the family name without the layer
    /// prefix (`v_instance`, `phi_n_o`, `dec`, ...). Families not listed get
    /// one hidden layer as wide as their output.
    pub hidden: BTreeMap<String, Vec<usize>>,
}

impl GnbConfig {
    pub fn new(feature_dim: usize, embed_dim: usize, latent_widths: Vec<usize>) -> Result<Self> {
        let cfg = GnbConfig {
            feature_dim,
            embed_dim,
            latent_widths,
            hidden: BTreeMap::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("feature and embedding extents must be positive".into()));
        }
        if self.latent_widths.is_empty() || self.latent_widths.contains(&0) {
            return Err(Error::Config(format!(
                "need at least one convolution layer with positive width, got {:?}",
                self.latent_widths
            )));
        }
        for (family, widths) in &self.hidden {
            let known = family == "dec"
                || ENCODER_FAMILIES.contains(&family.as_str())
                || CONV_FAMILIES.contains(&family.as_str());
            if !known {
                return Err(Error::Config(format!("unknown function family `{family}`")));
            }
            if widths.contains(&0) {
                return Err(Error::Config(format!("hidden widths for `{family}` must be positive")));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.latent_widths.len()
    }

    /// `(input width, output width)` of convolution layer `layer`.
    pub fn layer_widths(&self, layer: usize) -> (usize, usize) {
        let out = self.latent_widths[layer];
        let inp = self.latent_widths[layer.saturating_sub(1)];
        (inp, out)
    }

    fn spec(&self, family: &str, input: usize, output: usize, act: OutputActivation) -> Result<MlpSpec> {
        let hidden = self
            .hidden
            .get(family)
            .cloned()
            .unwrap_or_else(|| vec![if family == "dec" { input } else { output }]);
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend(hidden);
        widths.push(output);
        MlpSpec::new(widths, act)
    }

    fn encoder_specs(&self) -> Result<Vec<(String, MlpSpec)>> {
        let w = self.latent_widths[0];
        let (d, dw) = (self.feature_dim, self.embed_dim);
        let inputs = [d, dw, INSTANCE_EDGE_DIM, 2 * dw, d + dw];
        ENCODER_FAMILIES
            .iter()
            .zip(inputs)
            .map(|(f, i)| Ok((format!("enc.{f}"), self.spec(f, i, w, OutputActivation::Identity)?)))
            .collect()
    }

    fn conv_specs(&self, layer: usize) -> Result<Vec<(String, MlpSpec)>> {
        let (a, b) = self.layer_widths(layer);
        let input = |family: &str| match family {
            "phi_n_o" | "phi_n_l" => a + 2 * b,
            "rho_e_o" | "rho_e_l" | "rho_e_m" => 2 * b,
            "phi_e_o" | "phi_e_l" | "phi_e_m" => a + b,
            _ => 2 * a,
        };
        CONV_FAMILIES
            .iter()
            .map(|f| {
                let spec = self.spec(f, input(f), b, OutputActivation::Identity)?;
                Ok((format!("conv{}.{f}", layer + 1), spec))
            })
            .collect()
    }

    fn decoder_spec(&self) -> Result<MlpSpec> {
        let w = *self.latent_widths.last().expect("validated");
        self.spec("dec", w, 1, OutputActivation::Sigmoid)
    }
}

#[derive(Debug, Clone)]
pub struct Encoders {
    pub v_instance: Mlp,
    pub v_label: Mlp,
    pub e_instance: Mlp,
    pub e_label: Mlp,
    pub e_matching: Mlp,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub rho_hat_n_o: Mlp,
    pub rho_tilde_n_o: Mlp,
    pub phi_n_o: Mlp,
    pub rho_hat_n_l: Mlp,
    pub rho_tilde_n_l: Mlp,
    pub phi_n_l: Mlp,
    pub rho_e_o: Mlp,
    pub phi_e_o: Mlp,
    pub rho_e_l: Mlp,
    pub phi_e_l: Mlp,
    pub rho_e_m: Mlp,
    pub phi_e_m: Mlp,
}

/// Every learnable function of the block plus the store holding their parameters.
#[derive(Debug, Clone)]
pub struct GnbParams {
    pub config: GnbConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub layers: Vec<ConvLayer>,
    pub decoder: Mlp,
}

fn take5(mut v: Vec<Mlp>) -> Encoders {
    let e_matching = v.pop().unwrap();
    let e_label = v.pop().unwrap();
    let e_instance = v.pop().unwrap();
    let v_label = v.pop().unwrap();
    let v_instance = v.pop().unwrap();
    Encoders {
        v_instance,
        v_label,
        e_instance,
        e_label,
        e_matching,
    }
}

fn take12(v: Vec<Mlp>) -> ConvLayer {
    let mut it = v.into_iter();
    let mut next = || it.next().unwrap();
    ConvLayer {
        rho_hat_n_o: next(),
        rho_tilde_n_o: next(),
        phi_n_o: next(),
        rho_hat_n_l: next(),
        rho_tilde_n_l: next(),
        phi_n_l: next(),
        rho_e_o: next(),
        phi_e_o: next(),
        rho_e_l: next(),
        phi_e_l: next(),
        rho_e_m: next(),
        phi_e_m: next(),
    }
}

impl GnbParams {
    /// Fresh parameters drawn from `rng`, registered in a fixed order:
    /// encoders, then each convolution layer, then the decoder.
    pub fn init(config: GnbConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut p = Self::assemble(config, |name, spec| Mlp::new(&mut store, name, spec, rng))?;
        p.store = store;
        Ok(p)
    }

    /// Binds to parameters loaded from elsewhere, checking that every expected
    /// leaf exists with the right shape and that nothing extra is present.
    pub fn from_store(config: GnbConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut p = Self::assemble(config, |name, spec| Mlp::bind(&store, name, spec))?;
        let expected: usize = p.families().iter().map(|(_, m)| 2 * m.layers().len()).sum();
        if expected != store.len() {
            return Err(Error::Contract(format!(
                "parameter store has {} tensors, configuration expects {expected}",
                store.len()
            )));
        }
        p.store = store;
        Ok(p)
    }

    fn assemble(
        config: GnbConfig,
        mut make: impl FnMut(&str, MlpSpec) -> Result<Mlp>,
    ) -> Result<Self> {
        let encoders = config
            .encoder_specs()?
            .into_iter()
            .map(|(n, s)| make(&n, s))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(config.num_layers());
        for l in 0..config.num_layers() {
            let fs = config
                .conv_specs(l)?
                .into_iter()
                .map(|(n, s)| make(&n, s))
                .collect::<Result<Vec<_>>>()?;
            layers.push(take12(fs));
        }
        let decoder = make("dec.e", config.decoder_spec()?)?;
        Ok(GnbParams {
            config,
            store: ParamStore::new(),
            encoders: take5(encoders),
            layers,
            decoder,
        })
    }

    /// All functions with their checkpoint family names, in registration order.
    pub fn families(&self) -> Vec<(&str, &Mlp)> {
        let e = &self.encoders;
        let mut out: Vec<&Mlp> = vec![&e.v_instance, &e.v_label, &e.e_instance, &e.e_label, &e.e_matching];
        for l in &self.layers {
            out.extend([
                &l.rho_hat_n_o,
                &l.rho_tilde_n_o,
                &l.phi_n_o,
                &l.rho_hat_n_l,
                &l.rho_tilde_n_l,
                &l.phi_n_l,
                &l.rho_e_o,
                &l.phi_e_o,
                &l.rho_e_l,
                &l.phi_e_l,
                &l.rho_e_m,
                &l.phi_e_m,
            ]);
        }
        out.push(&self.decoder);
        out.into_iter().map(|m| (m.name(), m)).collect()
    }

    pub fn family(&self, name: &str) -> Option<&Mlp> {
        self.families().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
    }
}

/// Per-(instance, label) matching scores, row-major `M × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::shape("score matrix", &[rows, cols], &[data.len()]));
        }
        Ok(ScoreMatrix { rows, cols, data })
    }

    pub fn num_instances(&self) -> usize {
        self.rows
    }

    pub fn num_labels(&self) -> usize {
        self.cols
    }

    pub fn get(&self, instance: usize, label: usize) -> f64 {
        self.data[instance * self.cols + label]
    }

    pub fn row(&self, instance: usize) -> &[f64] {
        &self.data[instance * self.cols..(instance + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Latent attributes of every node and edge family, as tape values.
#[derive(Debug, Clone, Copy)]
pub struct LatentState {
    pub instance_nodes: Var,
    pub label_nodes: Var,
    /// `None` when the instance graph has no edges (a single instance).
    pub instance_edges: Option<Var>,
    /// `None` when the label graph has no edges (a single label).
    pub label_edges: Option<Var>,
    pub matching_edges: Var,
}

fn check_extent(family: &str, t: &Tensor, expected: usize) -> Result<()> {
    if t.cols() != expected {
        return Err(Error::shape(format!("{family} attributes"), &[expected], &[t.cols()]));
    }
    Ok(())
}

/// Maps every raw node and edge attribute into the first latent space.
pub fn encode(tape: &mut Tape, graph: &AssignmentGraph, params: &GnbParams) -> Result<LatentState> {
    let (cfg, enc, store) = (&params.config, &params.encoders, &params.store);
    let (d, dw) = (cfg.feature_dim, cfg.embed_dim);
    check_extent("instance node", &graph.instances.nodes, d)?;
    check_extent("label node", &graph.labels.nodes, dw)?;
    check_extent("matching edge", &graph.matching_attr, d + dw)?;

    let vo = tape.constant(graph.instances.nodes.clone());
    let vl = tape.constant(graph.labels.nodes.clone());
    let em = tape.constant(graph.matching_attr.clone());
    let instance_edges = match &graph.instances.edge_attr {
        Some(a) => {
            check_extent("instance edge", a, INSTANCE_EDGE_DIM)?;
            let v = tape.constant(a.clone());
            Some(enc.e_instance.apply(tape, store, v)?)
        }
        None => None,
    };
    let label_edges = match &graph.labels.edge_attr {
        Some(a) => {
            check_extent("label edge", a, 2 * dw)?;
            let v = tape.constant(a.clone());
            Some(enc.e_label.apply(tape, store, v)?)
        }
        None => None,
    };
    Ok(LatentState {
        instance_nodes: enc.v_instance.apply(tape, store, vo)?,
        label_nodes: enc.v_label.apply(tape, store, vl)?,
        instance_edges,
        label_edges,
        matching_edges: enc.e_matching.apply(tape, store, em)?,
    })
}

/// Mean over each node's neighborhood of `rho([edge, neighbor])`, or a zero
/// block when the family has no edges at all.
#[allow(clippy::too_many_arguments)]
fn aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    rho: &Mlp,
    edges: Option<Var>,
    neighbor_nodes: Var,
    neighbor_of_edge: &alloc::sync::Arc<[usize]>,
    groups: &alloc::sync::Arc<[Vec<usize>]>,
    num_nodes: usize,
) -> Result<Var> {
    let Some(edges) = edges else {
        return Ok(tape.constant(Tensor::zeros(&[num_nodes, rho.spec().output_width()])));
    };
    let nbr = tape.slice_rows(neighbor_nodes, neighbor_of_edge.clone())?;
    let x = tape.concat(&[edges, nbr])?;
    let msg = rho.apply(tape, store, x)?;
    tape.mean_over_set(msg, groups.clone())
}

/// Node convolution of layer `layer`. Returns the updated `(instance, label)` node attributes.
pub fn node_convolution(
    tape: &mut Tape,
    graph: &AssignmentGraph,
    params: &GnbParams,
    layer: usize,
    state: &LatentState,
) -> Result<(Var, Var)> {
    let f = conv_layer(params, layer)?;
    let store = &params.store;
    let (m, c) = (graph.num_instances(), graph.num_labels());
    let gi = &graph.instances;
    let gl = &graph.labels;

    let inst_from_inst = aggregate(
        tape,
        store,
        &f.rho_hat_n_o,
        state.instance_edges,
        state.instance_nodes,
        &gi.edge_dst,
        &gi.out_edges,
        m,
    )?;
    let inst_from_label = aggregate(
        tape,
        store,
        &f.rho_tilde_n_o,
        Some(state.matching_edges),
        state.label_nodes,
        &graph.match_label,
        &graph.match_by_instance,
        m,
    )?;
    let label_from_label = aggregate(
        tape,
        store,
        &f.rho_hat_n_l,
        state.label_edges,
        state.label_nodes,
        &gl.edge_dst,
        &gl.out_edges,
        c,
    )?;
    let label_from_inst = aggregate(
        tape,
        store,
        &f.rho_tilde_n_l,
        Some(state.matching_edges),
        state.instance_nodes,
        &graph.match_instance,
        &graph.match_by_label,
        c,
    )?;

    let xo = tape.concat(&[state.instance_nodes, inst_from_inst, inst_from_label])?;
    let vo = f.phi_n_o.apply(tape, store, xo)?;
    let xl = tape.concat(&[state.label_nodes, label_from_label, label_from_inst])?;
    let vl = f.phi_n_l.apply(tape, store, xl)?;
    Ok((vo, vl))
}

fn update_edges(
    tape: &mut Tape,
    store: &ParamStore,
    rho: &Mlp,
    phi: &Mlp,
    edges: Var,
    (src_nodes, src): (Var, &alloc::sync::Arc<[usize]>),
    (dst_nodes, dst): (Var, &alloc::sync::Arc<[usize]>),
) -> Result<Var> {
    let a = tape.slice_rows(src_nodes, src.clone())?;
    let b = tape.slice_rows(dst_nodes, dst.clone())?;
    let ends = tape.concat(&[a, b])?;
    let gathered = rho.apply(tape, store, ends)?;
    let x = tape.concat(&[edges, gathered])?;
    phi.apply(tape, store, x)
}

/// Edge convolution of layer `layer`, reading node attributes already updated by
/// [`node_convolution`] for the same layer.
pub fn edge_convolution(
    tape: &mut Tape,
    graph: &AssignmentGraph,
    params: &GnbParams,
    layer: usize,
    state: &LatentState,
) -> Result<LatentState> {
    let f = conv_layer(params, layer)?;
    let store = &params.store;
    let (vo, vl) = (state.instance_nodes, state.label_nodes);
    let gi = &graph.instances;
    let gl = &graph.labels;
    let instance_edges = state
        .instance_edges
        .map(|e| update_edges(tape, store, &f.rho_e_o, &f.phi_e_o, e, (vo, &gi.edge_src), (vo, &gi.edge_dst)))
        .transpose()?;
    let label_edges = state
        .label_edges
        .map(|e| update_edges(tape, store, &f.rho_e_l, &f.phi_e_l, e, (vl, &gl.edge_src), (vl, &gl.edge_dst)))
        .transpose()?;
    let matching_edges = update_edges(
        tape,
        store,
        &f.rho_e_m,
        &f.phi_e_m,
        state.matching_edges,
        (vo, &graph.match_instance),
        (vl, &graph.match_label),
    )?;
    Ok(LatentState {
        instance_nodes: vo,
        label_nodes: vl,
        instance_edges,
        label_edges,
        matching_edges,
    })
}

fn conv_layer(params: &GnbParams, layer: usize) -> Result<&ConvLayer> {
    params.layers.get(layer).ok_or_else(|| {
        Error::Contract(format!(
            "convolution layer {layer} requested, block has {}",
            params.layers.len()
        ))
    })
}

/// One node convolution followed by one edge convolution.
pub fn convolve(
    tape: &mut Tape,
    graph: &AssignmentGraph,
    params: &GnbParams,
    layer: usize,
    state: &LatentState,
) -> Result<LatentState> {
    let (vo, vl) = node_convolution(tape, graph, params, layer, state)?;
    let updated = LatentState {
        instance_nodes: vo,
        label_nodes: vl,
        ..*state
    };
    edge_convolution(tape, graph, params, layer, &updated)
}

/// Matching scores as an `(M·C) × 1` tape value, matching edge `(i, j)` at row `i·C + j`.
pub fn decode(tape: &mut Tape, params: &GnbParams, state: &LatentState) -> Result<Var> {
    params.decoder.apply(tape, &params.store, state.matching_edges)
}

/// Full pipeline onto an existing tape.
pub fn forward_on_tape(tape: &mut Tape, graph: &AssignmentGraph, params: &GnbParams) -> Result<Var> {
    let mut state = encode(tape, graph, params)?;
    for layer in 0..params.layers.len() {
        state = convolve(tape, graph, params, layer, &state)?;
    }
    decode(tape, params, &state)
}

pub fn scores_from_tape(tape: &Tape, graph: &AssignmentGraph, scores: Var) -> Result<ScoreMatrix> {
    ScoreMatrix::new(
        graph.num_instances(),
        graph.num_labels(),
        tape.value(scores).data().to_vec(),
    )
}

/// Scores every instance-label pair of `graph`.
pub fn forward(graph: &AssignmentGraph, params: &GnbParams) -> Result<ScoreMatrix> {
    let mut tape = Tape::new();
    let s = forward_on_tape(&mut tape, graph, params)?;
    scores_from_tape(&tape, graph, s)
}
