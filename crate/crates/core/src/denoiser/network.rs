//! Forward and backward passes of the structure-aware denoiser.
//!
//! Pipeline: fused graph -> relational context encoder (relation-averaged
//! initial features, then relational message passing) -> fusion with
//! aggregated edge features -> diffusion-transformer blocks with
//! relation-biased attention and time-conditioned adaLN -> pairwise decoder.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::params::{Block, DenoiserParams, RceLayer};
use crate::error::{Error, Result};
use crate::kg::{to_adjacency, AdjacencyState, Graph};

const LN_EPS: f64 = 1e-6;

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn row_sum(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Union of the support edges and the noisy query edges over the query's entity list.
pub fn fuse_graphs(support: &Graph, noisy_query: &AdjacencyState) -> Result<AdjacencyState> {
    let support_adj = to_adjacency(support, noisy_query.entities())?;
    let projected = support_adj.present_count();
    if projected != support.len() {
        return Err(Error::IncompatibleGraphs(format!(
            "{} support triples fall outside the query entity list",
            support.len() - projected
        )));
    }
    fuse_states(&support_adj, noisy_query)
}

/// Cell-wise union of two states over the same frame.
pub fn fuse_states(a: &AdjacencyState, b: &AdjacencyState) -> Result<AdjacencyState> {
    if !a.same_frame(b) {
        return Err(Error::IncompatibleGraphs("entity lists or relation counts differ".into()));
    }
    let mut out = a.clone();
    for (dst, &src) in out.cells_mut().iter_mut().zip(b.cells()) {
        *dst |= src;
    }
    Ok(out)
}

/// Sinusoidal timestep embedding.
pub fn time_embedding(t: usize, dim: usize) -> Result<Array1<f64>> {
    if dim % 2 != 0 || dim == 0 {
        return Err(Error::InvalidDim(dim));
    }
    let mut out = Array1::zeros(dim);
    for m in 0..dim / 2 {
        let freq = 10000f64.powf(2.0 * m as f64 / dim as f64);
        out[2 * m] = (t as f64 / freq).sin();
        out[2 * m + 1] = (t as f64 / freq).cos();
    }
    Ok(out)
}

/// Edge lists and multi-hot occupancy derived from a fused state.
#[derive(Debug, Clone)]
pub struct EdgeStructure {
    pub n: usize,
    pub n_rel: usize,
    /// `n*n x b` multi-hot occupancy, row `i*n + j`, including the no-edge channel.
    pub occupancy: Array2<f64>,
    /// Present cells as `(i, k, j)`.
    pub edges: Vec<(usize, usize, usize)>,
    pub degree: Vec<usize>,
    /// Per relation (forward then inverse): `(receiver, sender)` pairs.
    pub neighbours: Vec<Vec<(usize, usize)>>,
    /// Per relation: neighbour counts `c_{i,r}` per receiver.
    pub counts: Vec<Vec<usize>>,
}

impl EdgeStructure {
    pub fn from_state(state: &AdjacencyState) -> Self {
        let n = state.n();
        let n_rel = state.num_relations();
        let b = n_rel + 1;
        let mut occupancy = Array2::zeros((n * n, b));
        let edges = state.local_edges();
        let mut degree = vec![0; n];
        let mut neighbours = vec![Vec::new(); 2 * n_rel];
        let mut counts = vec![vec![0usize; n]; 2 * n_rel];
        for &(i, k, j) in &edges {
            occupancy[[i * n + j, k]] = 1.0;
            degree[i] += 1;
            degree[j] += 1;
            neighbours[k].push((i, j));
            counts[k][i] += 1;
            neighbours[n_rel + k].push((j, i));
            counts[n_rel + k][j] += 1;
        }
        for i in 0..n {
            for j in 0..n {
                if state.no_edge(i, j) {
                    occupancy[[i * n + j, n_rel]] = 1.0;
                }
            }
        }
        EdgeStructure { n, n_rel, occupancy, edges, degree, neighbours, counts }
    }
}

/// Initial entity features: mean embedding of incident relations (inverse embedding for incoming edges).
pub fn rce_init(structure: &EdgeStructure, params: &DenoiserParams) -> Array2<f64> {
    let a = params.config.dim;
    let n_rel = structure.n_rel;
    let mut h = Array2::zeros((structure.n, a));
    for &(i, k, j) in &structure.edges {
        let scale_i = 1.0 / structure.degree[i] as f64;
        let scale_j = 1.0 / structure.degree[j] as f64;
        h.row_mut(i).scaled_add(scale_i, &params.rel_emb.row(k));
        h.row_mut(j).scaled_add(scale_j, &params.rel_emb.row(n_rel + k));
    }
    h
}

fn rce_init_backward(structure: &EdgeStructure, dh: &Array2<f64>, grads: &mut DenoiserParams) {
    let n_rel = structure.n_rel;
    for &(i, k, j) in &structure.edges {
        let scale_i = 1.0 / structure.degree[i] as f64;
        let scale_j = 1.0 / structure.degree[j] as f64;
        grads.rel_emb.row_mut(k).scaled_add(scale_i, &dh.row(i));
        grads.rel_emb.row_mut(n_rel + k).scaled_add(scale_j, &dh.row(j));
    }
}

#[derive(Debug, Clone)]
struct RceCache {
    input: Array2<f64>,
    aggregates: Vec<Option<Array2<f64>>>,
    pre: Array2<f64>,
}

fn rce_layer_forward(h: &Array2<f64>, structure: &EdgeStructure, layer: &RceLayer) -> (Array2<f64>, RceCache) {
    let mut pre = h.dot(&layer.self_w);
    let mut aggregates = Vec::with_capacity(layer.rel.len());
    for (r, w) in layer.rel.iter().enumerate() {
        let pairs = &structure.neighbours[r];
        if pairs.is_empty() {
            aggregates.push(None);
            continue;
        }
        let mut agg = Array2::zeros(h.raw_dim());
        for &(i, j) in pairs {
            agg.row_mut(i).scaled_add(1.0 / structure.counts[r][i] as f64, &h.row(j));
        }
        pre += &agg.dot(w);
        aggregates.push(Some(agg));
    }
    let out = pre.mapv(|v| v.max(0.0));
    (out, RceCache { input: h.clone(), aggregates, pre })
}

fn rce_layer_backward(
    dout: &Array2<f64>,
    cache: &RceCache,
    structure: &EdgeStructure,
    layer: &RceLayer,
    grads: &mut RceLayer,
) -> Array2<f64> {
    let mut dz = dout.clone();
    dz.zip_mut_with(&cache.pre, |d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    grads.self_w += &cache.input.t().dot(&dz);
    let mut dh = dz.dot(&layer.self_w.t());
    for (r, agg) in cache.aggregates.iter().enumerate() {
        let Some(agg) = agg else { continue };
        grads.rel[r] += &agg.t().dot(&dz);
        let dagg = dz.dot(&layer.rel[r].t());
        for &(i, j) in &structure.neighbours[r] {
            dh.row_mut(j).scaled_add(1.0 / structure.counts[r][i] as f64, &dagg.row(i));
        }
    }
    dh
}

/// One relational message-passing layer with ReLU.
pub fn rce_layer(h: &Array2<f64>, structure: &EdgeStructure, layer: &RceLayer) -> Array2<f64> {
    rce_layer_forward(h, structure, layer).0
}

/// Per-node edge features: mean outgoing and mean incoming multi-hot vectors (`n x 2b`).
fn edge_features(structure: &EdgeStructure) -> Array2<f64> {
    let n = structure.n;
    let b = structure.n_rel + 1;
    let mut e = Array2::zeros((n, 2 * b));
    let inv = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            let cell = structure.occupancy.row(i * n + j);
            e.slice_mut(s![i, ..b]).scaled_add(inv, &cell);
            e.slice_mut(s![j, b..]).scaled_add(inv, &cell);
        }
    }
    e
}

fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in out.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *is);
    }
    (out, inv_std)
}

fn layer_norm_backward(dn: &Array2<f64>, normed: &Array2<f64>, inv_std: &Array1<f64>) -> Array2<f64> {
    let d = dn.ncols() as f64;
    let mut dx = Array2::zeros(dn.raw_dim());
    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
        let g = dn.row(r);
        let nr = normed.row(r);
        let mean_g = g.sum() / d;
        let mean_gn = g.dot(&nr) / d;
        for c in 0..out.len() {
            out[c] = inv_std[r] * (g[c] - mean_g - nr[c] * mean_gn);
        }
    }
    dx
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Scalar attention bias per ordered pair: `B_ij = sum_k P(i,j,k) r_k`.
fn attention_bias(occupancy: &Array2<f64>, rel_bias: &Array2<f64>, n: usize) -> Array2<f64> {
    occupancy.dot(&rel_bias.t()).into_shape_with_order((n, n)).expect("n*n rows")
}

#[derive(Debug, Clone)]
struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    mixed: Array2<f64>,
}

fn attention_forward(h: &Array2<f64>, occupancy: &Array2<f64>, block: &Block) -> (Array2<f64>, AttnCache) {
    let n = h.nrows();
    let scale = 1.0 / (h.ncols() as f64).sqrt();
    let q = h.dot(&block.wq);
    let k = h.dot(&block.wk);
    let v = h.dot(&block.wv);
    let mut attn = q.dot(&k.t()) * scale + attention_bias(occupancy, &block.rel_bias, n);
    softmax_rows(&mut attn);
    let mixed = attn.dot(&v);
    let out = mixed.dot(&block.wo) + &block.bo;
    (out, AttnCache { q, k, v, attn, mixed })
}

/// Relation-aware attention; returns the output and the attention matrix.
pub fn rel_attention(h: &Array2<f64>, occupancy: &Array2<f64>, block: &Block) -> (Array2<f64>, Array2<f64>) {
    let (out, cache) = attention_forward(h, occupancy, block);
    (out, cache.attn)
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    attn: AttnCache,
    n1: Array2<f64>,
    istd1: Array1<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    m1: Array2<f64>,
    g: Array2<f64>,
    n2: Array2<f64>,
    istd2: Array1<f64>,
    z2: Array2<f64>,
    modulation: Array2<f64>,
}

fn split_mod(m: &Array2<f64>, a: usize, idx: usize) -> ArrayView2<'_, f64> {
    m.slice(s![.., idx * a..(idx + 1) * a])
}

fn block_forward(h: &Array2<f64>, cond: &Array2<f64>, occupancy: &Array2<f64>, block: &Block) -> (Array2<f64>, BlockCache) {
    let a = h.ncols();
    let modulation = cond.dot(&block.ada_w) + &block.ada_b;
    let (scale1, shift1, gate1) = (split_mod(&modulation, a, 0), split_mod(&modulation, a, 1), split_mod(&modulation, a, 2));
    let (scale2, shift2, gate2) = (split_mod(&modulation, a, 3), split_mod(&modulation, a, 4), split_mod(&modulation, a, 5));

    let (y, attn) = attention_forward(h, occupancy, block);
    let (n1, istd1) = layer_norm(&y);
    let z1 = &n1 * &scale1.mapv(|v| 1.0 + v) + &shift1;
    let h1 = h + &(&z1 * &gate1);

    let m1 = h1.dot(&block.mlp_w1) + &block.mlp_b1;
    let g = m1.mapv(silu);
    let y2 = g.dot(&block.mlp_w2) + &block.mlp_b2;
    let (n2, istd2) = layer_norm(&y2);
    let z2 = &n2 * &scale2.mapv(|v| 1.0 + v) + &shift2;
    let out = &h1 + &(&z2 * &gate2);
    let cache = BlockCache { input: h.clone(), attn, n1, istd1, z1, h1, m1, g, n2, istd2, z2, modulation };
    (out, cache)
}

/// One diffusion-transformer block conditioned on the time vector `cond` (`1 x a`).
pub fn reldit_block(h: &Array2<f64>, cond: &Array2<f64>, occupancy: &Array2<f64>, block: &Block) -> Array2<f64> {
    block_forward(h, cond, occupancy, block).0
}

/// Returns `d input`; accumulates parameter grads and `d cond`.
fn block_backward(
    dout: &Array2<f64>,
    cache: &BlockCache,
    cond: &Array2<f64>,
    occupancy: &Array2<f64>,
    block: &Block,
    grads: &mut Block,
    dcond: &mut Array2<f64>,
) -> Array2<f64> {
    let a = dout.ncols();
    let m = &cache.modulation;
    let (scale1, gate1) = (split_mod(m, a, 0), split_mod(m, a, 2));
    let (scale2, gate2) = (split_mod(m, a, 3), split_mod(m, a, 5));
    let mut dmod = Array2::zeros((1, 6 * a));

    // MLP sub-layer
    let mut dh1 = dout.clone();
    dmod.slice_mut(s![.., 5 * a..]).assign(&row_sum(&(dout * &cache.z2)));
    let dz2 = dout * &gate2;
    dmod.slice_mut(s![.., 3 * a..4 * a]).assign(&row_sum(&(&dz2 * &cache.n2)));
    dmod.slice_mut(s![.., 4 * a..5 * a]).assign(&row_sum(&dz2));
    let dn2 = &dz2 * &scale2.mapv(|v| 1.0 + v);
    let dy2 = layer_norm_backward(&dn2, &cache.n2, &cache.istd2);
    grads.mlp_w2 += &cache.g.t().dot(&dy2);
    grads.mlp_b2 += &row_sum(&dy2);
    let mut dm1 = dy2.dot(&block.mlp_w2.t());
    dm1.zip_mut_with(&cache.m1, |d, &x| *d *= silu_grad(x));
    grads.mlp_w1 += &cache.h1.t().dot(&dm1);
    grads.mlp_b1 += &row_sum(&dm1);
    dh1 += &dm1.dot(&block.mlp_w1.t());

    // attention sub-layer
    let mut dh = dh1.clone();
    dmod.slice_mut(s![.., 2 * a..3 * a]).assign(&row_sum(&(&dh1 * &cache.z1)));
    let dz1 = &dh1 * &gate1;
    dmod.slice_mut(s![.., ..a]).assign(&row_sum(&(&dz1 * &cache.n1)));
    dmod.slice_mut(s![.., a..2 * a]).assign(&row_sum(&dz1));
    let dn1 = &dz1 * &scale1.mapv(|v| 1.0 + v);
    let dy = layer_norm_backward(&dn1, &cache.n1, &cache.istd1);

    let ac = &cache.attn;
    grads.wo += &ac.mixed.t().dot(&dy);
    grads.bo += &row_sum(&dy);
    let dmixed = dy.dot(&block.wo.t());
    let dattn = dmixed.dot(&ac.v.t());
    let dv = ac.attn.t().dot(&dmixed);
    let mut dscore = dattn * &ac.attn;
    for (mut row, arow) in dscore.rows_mut().into_iter().zip(ac.attn.rows()) {
        let total = row.sum();
        row.zip_mut_with(&arow, |d, &p| *d -= p * total);
    }
    let n = dscore.nrows();
    let flat = dscore.view().into_shape_with_order((n * n, 1)).expect("contiguous");
    grads.rel_bias += &flat.t().dot(occupancy);
    let scale = 1.0 / (a as f64).sqrt();
    let dq = dscore.dot(&ac.k) * scale;
    let dk = dscore.t().dot(&ac.q) * scale;
    let input = &cache.input;
    grads.wq += &input.t().dot(&dq);
    grads.wk += &input.t().dot(&dk);
    grads.wv += &input.t().dot(&dv);
    dh += &dq.dot(&block.wq.t());
    dh += &dk.dot(&block.wk.t());
    dh += &dv.dot(&block.wv.t());

    grads.ada_w += &cond.t().dot(&dmod);
    grads.ada_b += &dmod;
    *dcond += &dmod.dot(&block.ada_w.t());
    dh
}

/// Per-channel logits and sigmoid probabilities for every ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub n: usize,
    /// `n*n x b`, row `i*n + j`.
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl DenoiserOutput {
    pub fn channels(&self) -> usize {
        self.logits.ncols()
    }

    #[inline]
    pub fn prob(&self, i: usize, j: usize, k: usize) -> f64 {
        self.probs[[i * self.n + j, k]]
    }

    /// Channel with the largest probability at `(i, j)`; ties go to the lowest index.
    pub fn argmax(&self, i: usize, j: usize) -> usize {
        let row = self.probs.row(i * self.n + j);
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        best
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    structure: EdgeStructure,
    rce: Vec<RceCache>,
    fuse_input: Array2<f64>,
    edge_feats: Array2<f64>,
    tau: Array2<f64>,
    time_pre: Array2<f64>,
    cond: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_h: Array2<f64>,
    dec_pre: Array2<f64>,
    dec_hidden: Array2<f64>,
}

/// Runs the network on a fused state at timestep `t`.
pub fn forward(params: &DenoiserParams, fused: &AdjacencyState, t: usize) -> Result<(DenoiserOutput, ForwardCache)> {
    let cfg = params.config;
    if fused.num_relations() != cfg.n_rel {
        return Err(Error::IncompatibleGraphs(format!(
            "state has {} relations, model expects {}",
            fused.num_relations(),
            cfg.n_rel
        )));
    }
    let a = cfg.dim;
    let structure = EdgeStructure::from_state(fused);
    let n = structure.n;

    let mut h = rce_init(&structure, params);
    let mut rce = Vec::with_capacity(params.rce.len());
    for layer in &params.rce {
        let (out, cache) = rce_layer_forward(&h, &structure, layer);
        rce.push(cache);
        h = out;
    }

    let edge_feats = edge_features(&structure);
    let he = edge_feats.dot(&params.edge_w) + &params.edge_b;
    let fuse_input = concatenate(Axis(1), &[h.view(), he.view()]).expect("same rows");
    let mut h = fuse_input.dot(&params.fuse_w) + &params.fuse_b;

    let tau = time_embedding(t, a)?.insert_axis(Axis(0));
    let time_pre = tau.dot(&params.time_w) + &params.time_b;
    let cond = time_pre.mapv(silu);

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (out, cache) = block_forward(&h, &cond, &structure.occupancy, block);
        blocks.push(cache);
        h = out;
    }

    let u = h.dot(&params.dec_w1.slice(s![..a, ..]));
    let v = h.dot(&params.dec_w1.slice(s![a.., ..]));
    let width = u.ncols();
    let mut dec_pre = Array2::zeros((n * n, width));
    for i in 0..n {
        for j in 0..n {
            let mut row = dec_pre.row_mut(i * n + j);
            row.assign(&u.row(i));
            row += &v.row(j);
            row += &params.dec_b1.row(0);
        }
    }
    let dec_hidden = dec_pre.mapv(silu);
    let logits = dec_hidden.dot(&params.dec_w2) + &params.dec_b2;
    let probs = logits.mapv(sigmoid);

    let cache = ForwardCache {
        structure,
        rce,
        fuse_input,
        edge_feats,
        tau,
        time_pre,
        cond,
        blocks,
        final_h: h,
        dec_pre,
        dec_hidden,
    };
    Ok((DenoiserOutput { n, logits, probs }, cache))
}

/// Exact parameter gradients given `d loss / d logits`.
pub fn backward(params: &DenoiserParams, cache: &ForwardCache, dlogits: &Array2<f64>) -> DenoiserParams {
    let a = params.config.dim;
    let n = cache.structure.n;
    let mut grads = params.zeros_like();

    // decoder
    grads.dec_w2 += &cache.dec_hidden.t().dot(dlogits);
    grads.dec_b2 += &row_sum(dlogits);
    let mut dpre = dlogits.dot(&params.dec_w2.t());
    dpre.zip_mut_with(&cache.dec_pre, |d, &x| *d *= silu_grad(x));
    grads.dec_b1 += &row_sum(&dpre);
    let width = dpre.ncols();
    let mut du = Array2::zeros((n, width));
    let mut dv = Array2::zeros((n, width));
    for i in 0..n {
        for j in 0..n {
            let row = dpre.row(i * n + j);
            du.row_mut(i).scaled_add(1.0, &row);
            dv.row_mut(j).scaled_add(1.0, &row);
        }
    }
    let h = &cache.final_h;
    grads.dec_w1.slice_mut(s![..a, ..]).scaled_add(1.0, &h.t().dot(&du));
    grads.dec_w1.slice_mut(s![a.., ..]).scaled_add(1.0, &h.t().dot(&dv));
    let mut dh = du.dot(&params.dec_w1.slice(s![..a, ..]).t()) + dv.dot(&params.dec_w1.slice(s![a.., ..]).t());

    // transformer blocks
    let mut dcond = Array2::zeros((1, a));
    for (k, block) in params.blocks.iter().enumerate().rev() {
        dh = block_backward(
            &dh,
            &cache.blocks[k],
            &cache.cond,
            &cache.structure.occupancy,
            block,
            &mut grads.blocks[k],
            &mut dcond,
        );
    }
    let mut dtime = dcond;
    dtime.zip_mut_with(&cache.time_pre, |d, &x| *d *= silu_grad(x));
    grads.time_w += &cache.tau.t().dot(&dtime);
    grads.time_b += &dtime;

    // fusion projection
    grads.fuse_w += &cache.fuse_input.t().dot(&dh);
    grads.fuse_b += &row_sum(&dh);
    let dinput = dh.dot(&params.fuse_w.t());
    let dhe = dinput.slice(s![.., a..]).to_owned();
    grads.edge_w += &cache.edge_feats.t().dot(&dhe);
    grads.edge_b += &row_sum(&dhe);
    let mut dh = dinput.slice(s![.., ..a]).to_owned();

    // relational context encoder
    for (l, layer) in params.rce.iter().enumerate().rev() {
        dh = rce_layer_backward(&dh, &cache.rce[l], &cache.structure, layer, &mut grads.rce[l]);
    }
    rce_init_backward(&cache.structure, &dh, &mut grads);
    grads
}

/// `f(G_t^q, G^s, t)`: fuses the support into the noisy query and predicts clean edge probabilities.
pub fn denoise(noisy_query: &AdjacencyState, support: &Graph, t: usize, params: &DenoiserParams) -> Result<DenoiserOutput> {
    let fused = fuse_graphs(support, noisy_query)?;
    Ok(forward(params, &fused, t)?.0)
}
