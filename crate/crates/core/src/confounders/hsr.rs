use crate::numeric::ridge_solve;
use crate::{Error, Mat, Result};

/// Half-sibling ridge maps between comprehensive preferences:
/// W^{A->B} = (E^A^T E^A + alpha I)^-1 E^A^T E^B and the reverse direction.
pub fn hsr_fit(e_a: &Mat, e_b: &Mat, alpha: f64) -> Result<(Mat, Mat)> {
    if e_a.rows() != e_b.rows() {
        return Err(Error::shape(
            "hsr_fit",
            format!("{} rows", e_a.rows()),
            format!("{}", e_b.rows()),
        ));
    }
    let w_ab = ridge_solve(e_a, e_b, alpha)?;
    let w_ba = ridge_solve(e_b, e_a, alpha)?;
    Ok((w_ab, w_ba))
}

/// Candidate cross-domain confounders: the part of each domain's preferences
/// predictable from the other domain. Ĉ_cd^{A->B} = E^A W^{A->B} lives in
/// domain-B preference space; symmetrically for the other direction.
pub fn cdc_candidates(e_a: &Mat, e_b: &Mat, w_ab: &Mat, w_ba: &Mat) -> Result<(Mat, Mat)> {
    Ok((e_a.matmul(w_ab)?, e_b.matmul(w_ba)?))
}
