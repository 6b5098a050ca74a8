use crate::error::{Error, Result};
use crate::ndtensor::{CeItem, Real, Tape, Var};

/// Which rows compete with the positive in the intra-modal softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IntraMode {
    /// Positive plus every row of every other scene.
    #[default]
    CrossScene,
    /// Every row except the anchor itself.
    AllRows,
}

fn rows_and_dim<T: Real>(tape: &Tape<T>, v: Var, what: &str) -> Result<(usize, usize)> {
    let s = tape.shape(v);
    if s.len() != 2 {
        return Err(Error::Dimension(format!("{what} must be [rows, D], got {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// Image rows are type-major: `[MS_0..MS_{N-1}, PAN_0.., HRMS_0..]`.
fn batch_size(rows: usize) -> Result<usize> {
    if rows == 0 {
        return Err(Error::EmptyBatch);
    }
    if !rows.is_multiple_of(3) {
        return Err(Error::Dimension(format!("{rows} image rows is not a multiple of 3")));
    }
    Ok(rows / 3)
}

/// Image↔text type binding. `image` is `[3N,D]`, `text` is `[3,D]` (MS,
/// PAN, HRMS prompts), both unit-norm; `inv_tau` holds `1/τ_c`.
pub fn loss_inter<T: Real>(tape: &mut Tape<T>, image: Var, text: Var, inv_tau: Var) -> Result<Var> {
    let (rows, d) = rows_and_dim(tape, image, "image embeddings")?;
    let n = batch_size(rows)?;
    let (t, dt) = rows_and_dim(tape, text, "text embeddings")?;
    if t != 3 || dt != d {
        return Err(Error::Dimension(format!("text embeddings must be [3,{d}], got [{t},{dt}]")));
    }
    let sim = tape.matmul_t(image, text, false, true)?;
    let logits = tape.scale_by(sim, inv_tau)?;
    let items = (0..rows)
        .map(|r| CeItem {
            row: r,
            target: r / n,
            allowed: vec![0, 1, 2],
        })
        .collect();
    tape.cross_entropy(logits, items)
}

/// Candidate columns for anchor `i` with positive `j`.
pub fn intra_candidates(i: usize, j: usize, n: usize, mode: IntraMode) -> Vec<usize> {
    match mode {
        IntraMode::CrossScene => (0..3 * n).filter(|&k| k == j || k % n != i % n).collect(),
        IntraMode::AllRows => (0..3 * n).filter(|&k| k != i).collect(),
    }
}

/// Scene binding over all `3N` image rows: each anchor is pulled towards
/// the other two rows of its scene and away from other scenes.
pub fn loss_intra<T: Real>(tape: &mut Tape<T>, image: Var, inv_tau: Var, mode: IntraMode) -> Result<Var> {
    let (rows, _) = rows_and_dim(tape, image, "image embeddings")?;
    let n = batch_size(rows)?;
    if n < 2 {
        return Err(Error::InsufficientNegatives(format!(
            "intra-modal loss needs at least 2 scenes, got {n}"
        )));
    }
    let sim = tape.matmul_t(image, image, false, true)?;
    let logits = tape.scale_by(sim, inv_tau)?;
    let mut items = Vec::with_capacity(2 * rows);
    for i in 0..rows {
        for j in (0..rows).filter(|&j| j != i && j % n == i % n) {
            items.push(CeItem {
                row: i,
                target: j,
                allowed: intra_candidates(i, j, n, mode),
            });
        }
    }
    tape.cross_entropy(logits, items)
}

/// `‖t_fuse − t_wald‖₁ + mean_i ‖f_fuse,i − f_hrms,i‖₁`.
pub fn loss_fusion<T: Real>(
    tape: &mut Tape<T>,
    text_fused: Var,
    text_wald: Var,
    image_fused: Var,
    image_hrms: Var,
) -> Result<Var> {
    let (n, _) = rows_and_dim(tape, image_fused, "fused image embeddings")?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let dt = tape.sub(text_fused, text_wald)?;
    let dt = tape.abs(dt);
    let lt = tape.sum(dt);
    let di = tape.sub(image_fused, image_hrms)?;
    let di = tape.abs(di);
    let li = tape.sum(di);
    let li = tape.affine(li, 1.0 / n as f64, 0.0);
    tape.add(lt, li)
}
