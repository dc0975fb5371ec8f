//! Fairness objectives on surrogate logits and the injected-feature
//! constraint. All three are non-positive: minimizing them widens the gap
//! between sensitive groups.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-class gaps are combined in the equal-opportunity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EoForm {
    /// `-(Σ_y gap_y)²`: per-class scalar gaps summed before squaring.
    #[default]
    Summed,
    /// `-Σ_y gap_y²`: squared norm of the vector of per-class gaps.
    Vector,
}

fn group_members(sensitive: &[u8], mask: &[usize]) -> [Vec<usize>; 2] {
    let mut g = [Vec::new(), Vec::new()];
    for &u in mask {
        g[sensitive[u] as usize].push(u);
    }
    g
}

/// `-‖mean₀(h) − mean₁(h)‖²` over the rows in `mask`, and its logit gradient.
pub fn loss_sp(
    logits: &Array2<f64>,
    sensitive: &[u8],
    mask: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let groups = group_members(sensitive, mask);
    for (s, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyGroup(s as u8));
        }
    }
    let c = logits.ncols();
    let mean = |members: &[usize]| {
        let mut m = Array1::<f64>::zeros(c);
        for &u in members {
            m += &logits.row(u);
        }
        m / members.len() as f64
    };
    let diff = mean(&groups[0]) - mean(&groups[1]);
    let value = -diff.dot(&diff);
    let mut grad = Array2::zeros(logits.raw_dim());
    for (s, members) in groups.iter().enumerate() {
        let sign = if s == 0 { -2.0 } else { 2.0 };
        let coef = sign / members.len() as f64;
        for &u in members {
            grad.row_mut(u).scaled_add(coef, &diff);
        }
    }
    Ok((value, grad))
}

/// Equal-opportunity loss over `mask` and its logit gradient.
///
/// For each class `y`, `gap_y` is the mean class-`y` logit of group-0
/// members labeled `y` minus that of group-1 members labeled `y`. Classes
/// missing from either group are skipped.
pub fn loss_eo(
    logits: &Array2<f64>,
    labels: &[Option<usize>],
    sensitive: &[u8],
    mask: &[usize],
    form: EoForm,
) -> Result<(f64, Array2<f64>)> {
    let c = logits.ncols();
    let mut cells: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; c];
    for &u in mask {
        let y = labels[u].ok_or_else(|| Error::InvalidGraph(format!("node {u} has no label")))?;
        if y >= c {
            return Err(Error::Dimension(format!("label {y} outside {c} classes")));
        }
        cells[y][sensitive[u] as usize].push(u);
    }
    let mut gaps = vec![None; c];
    for (y, cell) in cells.iter().enumerate() {
        if cell.iter().any(Vec::is_empty) {
            continue;
        }
        let m = |members: &[usize]| {
            members.iter().map(|&u| logits[[u, y]]).sum::<f64>() / members.len() as f64
        };
        gaps[y] = Some(m(&cell[0]) - m(&cell[1]));
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let value = match form {
        EoForm::Summed => {
            let s: f64 = gaps.iter().flatten().sum();
            for (y, cell) in cells.iter().enumerate() {
                if gaps[y].is_some() {
                    scatter_cell(&mut grad, cell, y, s);
                }
            }
            -s * s
        }
        EoForm::Vector => {
            let mut v = 0.0;
            for (y, cell) in cells.iter().enumerate() {
                if let Some(gap) = gaps[y] {
                    v -= gap * gap;
                    scatter_cell(&mut grad, cell, y, gap);
                }
            }
            v
        }
    };
    Ok((value, grad))
}

/// Adds `d(-w²)/dh` for the cell means behind `w`.
fn scatter_cell(grad: &mut Array2<f64>, cell: &[Vec<usize>; 2], y: usize, w: f64) {
    for (s, members) in cell.iter().enumerate() {
        let sign = if s == 0 { -2.0 } else { 2.0 };
        let coef = sign * w / members.len() as f64;
        for &u in members {
            grad[[u, y]] += coef;
        }
    }
}

/// `-‖mean of group-0 injected rows − mean of group-1 injected rows‖²` and
/// its gradient with respect to the injected rows. Zero when a side is
/// empty.
pub fn loss_cf(injected: ArrayView2<'_, f64>, groups: &[u8]) -> (f64, Array2<f64>) {
    let members = group_members(groups, &(0..groups.len()).collect::<Vec<_>>());
    let mut grad = Array2::zeros(injected.raw_dim());
    if members.iter().any(Vec::is_empty) {
        if !groups.is_empty() {
            log::warn!("feature constraint skipped: one injected group is empty");
        }
        return (0.0, grad);
    }
    let mean = |idx: &[usize]| {
        let mut m = Array1::<f64>::zeros(injected.ncols());
        for &i in idx {
            m += &injected.row(i);
        }
        m / idx.len() as f64
    };
    let diff = mean(&members[0]) - mean(&members[1]);
    for (s, idx) in members.iter().enumerate() {
        let sign = if s == 0 { -2.0 } else { 2.0 };
        let coef = sign / idx.len() as f64;
        for &i in idx {
            grad.row_mut(i).scaled_add(coef, &diff);
        }
    }
    (-diff.dot(&diff), grad)
}

/// Component values of the attack objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub sp: f64,
    pub eo: f64,
    pub cf: f64,
    pub total: f64,
}

/// `ce + α·cf + β·(sp + eo)`.
pub fn combine(ce: f64, sp: f64, eo: f64, cf: f64, alpha: f64, beta: f64) -> f64 {
    ce + alpha * cf + beta * (sp + eo)
}
