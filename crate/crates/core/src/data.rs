//! Block-structured observations and their second-order sample statistics.
//!
//! Every dataset `k` of length `N` is cut into `T` blocks of constant mixing,
//! and every block into `L` sub-blocks of `N_s` samples over which the source
//! statistics are stationary, so `N = T * L * N_s`. Cells are stored as
//! `d x N_s` matrices with one column per sample.

use crate::error::{Error, Result};
use crate::linalg::{re, CMat};

/// Sizes of a segmented multi-dataset problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Number of datasets (mixtures).
    pub datasets: usize,
    /// Number of blocks of constant mixing.
    pub blocks: usize,
    /// Number of sub-blocks per block.
    pub sub_blocks: usize,
    /// Samples per sub-block.
    pub samples: usize,
    /// Channels (sensors) per dataset.
    pub channels: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.datasets == 0 || self.blocks == 0 || self.sub_blocks == 0 || self.samples == 0 {
            return Err(Error::Shape(format!("all dimensions must be positive: {self:?}")));
        }
        if self.channels < 2 {
            return Err(Error::Shape(format!("need at least two channels, got {}", self.channels)));
        }
        Ok(())
    }

    /// Samples per dataset.
    pub fn total_samples(&self) -> usize {
        self.blocks * self.sub_blocks * self.samples
    }

    pub fn cell_count(&self) -> usize {
        self.datasets * self.blocks * self.sub_blocks
    }

    #[inline]
    pub fn cell_index(&self, k: usize, t: usize, l: usize) -> usize {
        debug_assert!(k < self.datasets && t < self.blocks && l < self.sub_blocks);
        (k * self.blocks + t) * self.sub_blocks + l
    }

    #[inline]
    pub fn block_index(&self, k: usize, t: usize) -> usize {
        k * self.blocks + t
    }

    /// Index of the joint (t, l) cell shared across datasets.
    #[inline]
    pub fn slot_index(&self, t: usize, l: usize) -> usize {
        t * self.sub_blocks + l
    }
}

/// Observed mixtures cut into `(k, t, l)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedDataset {
    dims: Dims,
    cells: Vec<CMat>,
}

impl SegmentedDataset {
    /// Cuts one `d x N` recording per dataset into `blocks * sub_blocks`
    /// consecutive cells. `N` must be divisible by `blocks * sub_blocks`.
    pub fn segment(raw: &[CMat], blocks: usize, sub_blocks: usize) -> Result<Self> {
        let first = raw.first().ok_or_else(|| Error::Shape("no datasets".into()))?;
        let (channels, n) = first.shape();
        if raw.iter().any(|x| x.shape() != (channels, n)) {
            return Err(Error::Shape("datasets differ in shape".into()));
        }
        let per_cell = blocks * sub_blocks;
        if per_cell == 0 || n % per_cell != 0 {
            return Err(Error::Shape(format!(
                "{n} samples cannot be split into {blocks} blocks of {sub_blocks} sub-blocks"
            )));
        }
        let dims = Dims { datasets: raw.len(), blocks, sub_blocks, samples: n / per_cell, channels };
        dims.validate()?;
        let ns = dims.samples;
        let mut cells = Vec::with_capacity(dims.cell_count());
        for x in raw {
            for c in 0..per_cell {
                cells.push(x.columns(c * ns, ns).into_owned());
            }
        }
        Ok(Self { dims, cells })
    }

    /// Builds a dataset from cells already in `(k, t, l)` order.
    pub fn from_cells(dims: Dims, cells: Vec<CMat>) -> Result<Self> {
        dims.validate()?;
        if cells.len() != dims.cell_count() {
            return Err(Error::Shape(format!("expected {} cells, got {}", dims.cell_count(), cells.len())));
        }
        if cells.iter().any(|c| c.shape() != (dims.channels, dims.samples)) {
            return Err(Error::Shape(format!(
                "every cell must be {}x{}",
                dims.channels, dims.samples
            )));
        }
        Ok(Self { dims, cells })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn cell(&self, k: usize, t: usize, l: usize) -> &CMat {
        &self.cells[self.dims.cell_index(k, t, l)]
    }

    pub fn cells(&self) -> &[CMat] {
        &self.cells
    }

    /// Concatenates the cells of each dataset back into one `d x N` stream.
    pub fn flatten(&self) -> Vec<CMat> {
        let Dims { datasets, blocks, sub_blocks, samples, channels } = self.dims;
        let per = blocks * sub_blocks;
        (0..datasets)
            .map(|k| {
                let mut x = CMat::zeros(channels, per * samples);
                for c in 0..per {
                    x.columns_mut(c * samples, samples).copy_from(&self.cells[k * per + c]);
                }
                x
            })
            .collect()
    }

    /// Re-cuts the same samples with a different number of sub-blocks,
    /// keeping the block boundaries.
    pub fn resegment(&self, sub_blocks: usize) -> Result<Self> {
        if sub_blocks == self.dims.sub_blocks {
            return Ok(self.clone());
        }
        Self::segment(&self.flatten(), self.dims.blocks, sub_blocks)
    }

    /// Extracts dataset `k` as a standalone single-dataset problem.
    pub fn select_dataset(&self, k: usize) -> Self {
        let per = self.dims.blocks * self.dims.sub_blocks;
        let cells = self.cells[k * per..(k + 1) * per].to_vec();
        Self { dims: Dims { datasets: 1, ..self.dims }, cells }
    }

    /// Multiplies every sample by a real factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let f = re(factor);
        Self { dims: self.dims, cells: self.cells.iter().map(|c| c * f).collect() }
    }
}

/// Sample covariance `(1/N_s) sum_n x(n) x(n)^H` of one cell.
pub fn sample_cov(cell: &CMat) -> CMat {
    let n = cell.ncols().max(1) as f64;
    let mut c = cell * cell.adjoint() / re(n);
    symmetrize_hermitian(&mut c);
    c
}

/// Sample pseudo-covariance `(1/N_s) sum_n x(n) x(n)^T` of one cell.
pub fn sample_pcov(cell: &CMat) -> CMat {
    let n = cell.ncols().max(1) as f64;
    let mut p = cell * cell.transpose() / re(n);
    let pt = p.transpose();
    p = (p + pt) * re(0.5);
    p
}

fn symmetrize_hermitian(m: &mut CMat) {
    let adj = m.adjoint();
    *m = (&*m + adj) * re(0.5);
}

/// Cached per-cell covariances and per-block averages.
#[derive(Debug, Clone)]
pub struct BlockStats {
    dims: Dims,
    cov: Vec<CMat>,
    pcov: Vec<CMat>,
    block_cov: Vec<CMat>,
}

impl BlockStats {
    pub fn new(data: &SegmentedDataset) -> Self {
        let dims = data.dims();
        let cov: Vec<CMat> = data.cells().iter().map(sample_cov).collect();
        let pcov: Vec<CMat> = data.cells().iter().map(sample_pcov).collect();
        let l = dims.sub_blocks;
        let block_cov = cov
            .chunks(l)
            .map(|chunk| chunk.iter().fold(CMat::zeros(dims.channels, dims.channels), |acc, c| acc + c) / re(l as f64))
            .collect();
        Self { dims, cov, pcov, block_cov }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Sample covariance of cell `(k, t, l)`.
    pub fn cov(&self, k: usize, t: usize, l: usize) -> &CMat {
        &self.cov[self.dims.cell_index(k, t, l)]
    }

    /// Sample pseudo-covariance of cell `(k, t, l)`.
    pub fn pcov(&self, k: usize, t: usize, l: usize) -> &CMat {
        &self.pcov[self.dims.cell_index(k, t, l)]
    }

    /// Sub-block average of the covariances of block `(k, t)`.
    pub fn block_cov(&self, k: usize, t: usize) -> &CMat {
        &self.block_cov[self.dims.block_index(k, t)]
    }
}
