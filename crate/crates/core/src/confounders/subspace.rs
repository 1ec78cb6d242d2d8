use serde::{Deserialize, Serialize};

use crate::numeric::kmeans;
use crate::{Error, Mat, Result};

/// All candidate confounder matrices of Phase 2.
#[derive(Debug, Clone)]
pub struct CandidateConfounders {
    /// Ĉ_sd^A and Ĉ_sd^B, one row per common user.
    pub sdc_a: Mat,
    pub sdc_b: Mat,
    /// Ĉ_cd^{A->B} and Ĉ_cd^{B->A}.
    pub cdc_ab: Mat,
    pub cdc_ba: Mat,
    /// Half-sibling ridge maps.
    pub w_ab: Mat,
    pub w_ba: Mat,
}

/// Centroid subspaces distilled from the candidates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfounderSubspace {
    pub c_sd_a: Mat,
    pub c_sd_b: Mat,
    pub c_cd: Mat,
}

impl ConfounderSubspace {
    /// C^A = C_sd^A ∪ C_cd as a stacked centroid matrix.
    pub fn union_a(&self) -> Result<Mat> {
        stack(&self.c_sd_a, &self.c_cd)
    }

    /// C^B = C_sd^B ∪ C_cd.
    pub fn union_b(&self) -> Result<Mat> {
        stack(&self.c_sd_b, &self.c_cd)
    }
}

/// Vertical stack tolerating empty blocks (used by ablation variants that
/// drop one subspace).
fn stack(top: &Mat, bottom: &Mat) -> Result<Mat> {
    if top.rows() == 0 {
        return Ok(bottom.clone());
    }
    if bottom.rows() == 0 {
        return Ok(top.clone());
    }
    top.vstack(bottom)
}

/// K-means each candidate family into its centroid subspace. The CDC input is
/// the row-stack of both directions (2m rows), producing a single C_cd.
pub fn build_subspaces(
    candidates: &CandidateConfounders,
    j_sd_a: usize,
    j_sd_b: usize,
    j_cd: usize,
    seed: u64,
) -> Result<ConfounderSubspace> {
    if j_sd_a == 0 || j_sd_b == 0 || j_cd == 0 {
        return Err(Error::InvalidArg("cluster counts must be >= 1".into()));
    }
    let max_iters = 100;
    let c_sd_a = kmeans(&candidates.sdc_a, j_sd_a, max_iters, seed)?.centroids;
    let c_sd_b = kmeans(&candidates.sdc_b, j_sd_b, max_iters, seed.wrapping_add(1))?.centroids;
    let cdc_all = candidates.cdc_ab.vstack(&candidates.cdc_ba)?;
    let c_cd = kmeans(&cdc_all, j_cd, max_iters, seed.wrapping_add(2))?.centroids;
    Ok(ConfounderSubspace { c_sd_a, c_sd_b, c_cd })
}
