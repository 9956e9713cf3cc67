use ndarray::Array2;
use rand::Rng;

use crate::rng;

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Embedding width `a`.
    pub dim: usize,
    pub n_rel: usize,
    pub blocks: usize,
    pub rce_layers: usize,
}

impl DenoiserConfig {
    pub fn new(dim: usize, n_rel: usize) -> Self {
        DenoiserConfig { dim, n_rel, blocks: 3, rce_layers: 2 }
    }

    /// Real relations plus the no-edge channel.
    pub fn channels(&self) -> usize {
        self.n_rel + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RceLayer {
    /// One `a x a` weight per relation, then one per inverse relation.
    pub rel: Vec<Array2<f64>>,
    pub self_w: Array2<f64>,
}

/// One diffusion-transformer block. Row-vector convention: `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Maps the time condition to `[scale1, shift1, gate1, scale2, shift2, gate2]`.
    pub ada_w: Array2<f64>,
    pub ada_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    /// Scalar attention bias per channel.
    pub rel_bias: Array2<f64>,
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array2<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array2<f64>,
}

/// All learnable arrays of the denoiser. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    /// `2 n_rel x a`: forward relations then inverses.
    pub rel_emb: Array2<f64>,
    pub rce: Vec<RceLayer>,
    pub edge_w: Array2<f64>,
    pub edge_b: Array2<f64>,
    pub fuse_w: Array2<f64>,
    pub fuse_b: Array2<f64>,
    pub time_w: Array2<f64>,
    pub time_b: Array2<f64>,
    pub blocks: Vec<Block>,
    pub dec_w1: Array2<f64>,
    pub dec_b1: Array2<f64>,
    pub dec_w2: Array2<f64>,
    pub dec_b2: Array2<f64>,
}

impl DenoiserParams {
    pub fn zeros(config: DenoiserConfig) -> Self {
        let a = config.dim;
        let b = config.channels();
        let z = |r: usize, c: usize| Array2::<f64>::zeros((r, c));
        DenoiserParams {
            config,
            rel_emb: z(2 * config.n_rel, a),
            rce: (0..config.rce_layers)
                .map(|_| RceLayer { rel: (0..2 * config.n_rel).map(|_| z(a, a)).collect(), self_w: z(a, a) })
                .collect(),
            edge_w: z(2 * b, a),
            edge_b: z(1, a),
            fuse_w: z(2 * a, a),
            fuse_b: z(1, a),
            time_w: z(a, a),
            time_b: z(1, a),
            blocks: (0..config.blocks)
                .map(|_| Block {
                    ada_w: z(a, 6 * a),
                    ada_b: z(1, 6 * a),
                    wq: z(a, a),
                    wk: z(a, a),
                    wv: z(a, a),
                    wo: z(a, a),
                    bo: z(1, a),
                    rel_bias: z(1, b),
                    mlp_w1: z(a, 4 * a),
                    mlp_b1: z(1, 4 * a),
                    mlp_w2: z(4 * a, a),
                    mlp_b2: z(1, a),
                })
                .collect(),
            dec_w1: z(2 * a, 4 * a),
            dec_b1: z(1, 4 * a),
            dec_w2: z(4 * a, b),
            dec_b2: z(1, b),
        }
    }

    /// Matrices uniform in `±1/sqrt(a)`; biases, attention biases and adaLN gates zero.
    pub fn init(config: DenoiserConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let bound = 1.0 / (config.dim as f64).sqrt();
        let mut rng = rng::stream(seed, &[0x1417]);
        let a = config.dim;
        for (name, t) in p.tensors_mut() {
            if is_bias(&name) {
                continue;
            }
            t.mapv_inplace(|_| rng.random_range(-bound..bound));
            if name.ends_with(".ada_w") {
                t.slice_mut(ndarray::s![.., 2 * a..3 * a]).fill(0.0);
                t.slice_mut(ndarray::s![.., 5 * a..6 * a]).fill(0.0);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Named arrays in a fixed order (checkpoint layout).
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![("rel_emb".into(), &self.rel_emb)];
        for (l, layer) in self.rce.iter().enumerate() {
            for (r, w) in layer.rel.iter().enumerate() {
                out.push((format!("rce.{l}.rel.{r}"), w));
            }
            out.push((format!("rce.{l}.self_w"), &layer.self_w));
        }
        out.push(("edge_w".into(), &self.edge_w));
        out.push(("edge_b".into(), &self.edge_b));
        out.push(("fuse_w".into(), &self.fuse_w));
        out.push(("fuse_b".into(), &self.fuse_b));
        out.push(("time_w".into(), &self.time_w));
        out.push(("time_b".into(), &self.time_b));
        for (k, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("ada_w", &b.ada_w),
                ("ada_b", &b.ada_b),
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("rel_bias", &b.rel_bias),
                ("mlp_w1", &b.mlp_w1),
                ("mlp_b1", &b.mlp_b1),
                ("mlp_w2", &b.mlp_w2),
                ("mlp_b2", &b.mlp_b2),
            ] {
                out.push((format!("block.{k}.{name}"), t));
            }
        }
        out.push(("dec_w1".into(), &self.dec_w1));
        out.push(("dec_b1".into(), &self.dec_b1));
        out.push(("dec_w2".into(), &self.dec_w2));
        out.push(("dec_b2".into(), &self.dec_b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![("rel_emb".into(), &mut self.rel_emb)];
        for (l, layer) in self.rce.iter_mut().enumerate() {
            for (r, w) in layer.rel.iter_mut().enumerate() {
                out.push((format!("rce.{l}.rel.{r}"), w));
            }
            out.push((format!("rce.{l}.self_w"), &mut layer.self_w));
        }
        out.push(("edge_w".into(), &mut self.edge_w));
        out.push(("edge_b".into(), &mut self.edge_b));
        out.push(("fuse_w".into(), &mut self.fuse_w));
        out.push(("fuse_b".into(), &mut self.fuse_b));
        out.push(("time_w".into(), &mut self.time_w));
        out.push(("time_b".into(), &mut self.time_b));
        for (k, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in [
                ("ada_w", &mut b.ada_w),
                ("ada_b", &mut b.ada_b),
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
                ("bo", &mut b.bo),
                ("rel_bias", &mut b.rel_bias),
                ("mlp_w1", &mut b.mlp_w1),
                ("mlp_b1", &mut b.mlp_b1),
                ("mlp_w2", &mut b.mlp_w2),
                ("mlp_b2", &mut b.mlp_b2),
            ] {
                out.push((format!("block.{k}.{name}"), t));
            }
        }
        out.push(("dec_w1".into(), &mut self.dec_w1));
        out.push(("dec_b1".into(), &mut self.dec_b1));
        out.push(("dec_w2".into(), &mut self.dec_w2));
        out.push(("dec_b2".into(), &mut self.dec_b2));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &DenoiserParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.scaled_add(scale, src);
        }
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with("_b") || name.ends_with(".bo") || name.ends_with(".rel_bias") || name.contains("_b1")
        || name.contains("_b2")
}
