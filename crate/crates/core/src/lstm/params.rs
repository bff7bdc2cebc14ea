use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out += self · x`
    pub fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · x`
    pub fn mul_t_vec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            if xi != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += xi * a;
                }
            }
        }
    }

    /// `self += a ⊗ b`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                for (r, bj) in row.iter_mut().zip(b) {
                    *r += ai * bj;
                }
            }
        }
    }
}

/// Sizes of the network: vocabulary, word vectors, hidden state and the
/// feed-forward hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub d_w: usize,
    pub d_h: usize,
    pub d_s: usize,
}

/// Gate order used for the `w`, `u` and `b` arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Update = 3,
}

pub const GATES: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Update];

/// Every trainable parameter of the encoder and the regression head. The same
/// type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub dims: Dims,
    /// One `d_w` row per vocabulary id.
    pub embedding: Matrix,
    /// Input weights, `d_h × d_w`, indexed by [`Gate`].
    pub w: [Matrix; 4],
    /// Recurrent weights, `d_h × d_h`.
    pub u: [Matrix; 4],
    pub b: [Vec<f64>; 4],
    /// `d_s × d_h`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// Output row, length `d_s`.
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Block names in serialization order.
pub const BLOCK_NAMES: [&str; 17] = [
    "E", "W_i", "W_f", "W_o", "W_u", "U_i", "U_f", "U_o", "U_u", "b_i", "b_f", "b_o", "b_u", "W1", "b1", "W2", "b2",
];

impl LstmParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { vocab, d_w, d_h, d_s } = dims;
        LstmParams {
            dims,
            embedding: Matrix::zeros(vocab, d_w),
            w: std::array::from_fn(|_| Matrix::zeros(d_h, d_w)),
            u: std::array::from_fn(|_| Matrix::zeros(d_h, d_h)),
            b: std::array::from_fn(|_| vec![0.0; d_h]),
            w1: Matrix::zeros(d_s, d_h),
            b1: vec![0.0; d_s],
            w2: vec![0.0; d_s],
            b2: 0.0,
        }
    }

    /// Weights uniform in `[-scale, scale]`, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(dims: Dims, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        p.fill_uniform(scale, rng);
        p.b.iter_mut().for_each(|b| b.fill(0.0));
        p.b[Gate::Forget as usize].fill(1.0);
        p.b1.fill(0.0);
        p.b2 = 0.0;
        p
    }

    /// Every parameter, biases included, uniform in `[-scale, scale]`.
    pub fn fill_uniform<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for (_, block) in self.blocks_mut() {
            for v in block.iter_mut() {
                *v = if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 };
            }
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 17] {
        let [wi, wf, wo, wu] = &self.w;
        let [ui, uf, uo, uu] = &self.u;
        let [bi, bf, bo, bu] = &self.b;
        [
            ("E", self.embedding.data()),
            ("W_i", wi.data()),
            ("W_f", wf.data()),
            ("W_o", wo.data()),
            ("W_u", wu.data()),
            ("U_i", ui.data()),
            ("U_f", uf.data()),
            ("U_o", uo.data()),
            ("U_u", uu.data()),
            ("b_i", bi),
            ("b_f", bf),
            ("b_o", bo),
            ("b_u", bu),
            ("W1", self.w1.data()),
            ("b1", &self.b1),
            ("W2", &self.w2),
            ("b2", std::slice::from_ref(&self.b2)),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 17] {
        let [wi, wf, wo, wu] = &mut self.w;
        let [ui, uf, uo, uu] = &mut self.u;
        let [bi, bf, bo, bu] = &mut self.b;
        [
            ("E", self.embedding.data_mut()),
            ("W_i", wi.data_mut()),
            ("W_f", wf.data_mut()),
            ("W_o", wo.data_mut()),
            ("W_u", wu.data_mut()),
            ("U_i", ui.data_mut()),
            ("U_f", uf.data_mut()),
            ("U_o", uo.data_mut()),
            ("U_u", uu.data_mut()),
            ("b_i", bi),
            ("b_f", bf),
            ("b_o", bo),
            ("b_u", bu),
            ("W1", self.w1.data_mut()),
            ("b1", &mut self.b1),
            ("W2", &mut self.w2),
            ("b2", std::slice::from_mut(&mut self.b2)),
        ]
    }

    fn block_shapes(&self) -> [[usize; 2]; 17] {
        let Dims { vocab, d_w, d_h, d_s } = self.dims;
        [
            [vocab, d_w],
            [d_h, d_w],
            [d_h, d_w],
            [d_h, d_w],
            [d_h, d_w],
            [d_h, d_h],
            [d_h, d_h],
            [d_h, d_h],
            [d_h, d_h],
            [d_h, 1],
            [d_h, 1],
            [d_h, 1],
            [d_h, 1],
            [d_s, d_h],
            [d_s, 1],
            [1, d_s],
            [1, 1],
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks().iter().flat_map(|(_, b)| b.iter()).map(|v| v * v).sum()
    }

    /// `self += alpha · other`, block by block.
    pub fn axpy(&mut self, alpha: f64, other: &LstmParams) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, block) in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Base64 little-endian f64 blocks in [`BLOCK_NAMES`] order.
    pub fn to_blocks(&self) -> Vec<ParamBlock> {
        self.blocks()
            .iter()
            .zip(self.block_shapes())
            .map(|((name, data), shape)| {
                let mut bytes = Vec::with_capacity(data.len() * 8);
                for v in data.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                ParamBlock {
                    name: (*name).to_owned(),
                    shape,
                    data: BASE64.encode(bytes),
                }
            })
            .collect()
    }

    pub fn from_blocks(dims: Dims, blocks: &[ParamBlock]) -> Result<Self> {
        let mut p = Self::zeros(dims);
        let shapes = p.block_shapes();
        if blocks.len() != BLOCK_NAMES.len() {
            return Err(Error::Input(format!(
                "expected {} parameter blocks, found {}",
                BLOCK_NAMES.len(),
                blocks.len()
            )));
        }
        for (((name, dst), shape), src) in p.blocks_mut().into_iter().zip(shapes).zip(blocks) {
            if src.name != name || src.shape != shape {
                return Err(Error::Input(format!(
                    "block `{}` {:?} where `{name}` {shape:?} was expected",
                    src.name, src.shape
                )));
            }
            let bytes = BASE64
                .decode(&src.data)
                .map_err(|e| Error::Input(format!("block `{name}`: {e}")))?;
            if bytes.len() != dst.len() * 8 {
                return Err(Error::Input(format!("block `{name}` has {} bytes", bytes.len())));
            }
            for (v, chunk) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}
