//! Batched losses over a mapped batch and their parameter gradients.
//!
//! The loss is a weighted sum of per-sample terms
//!   psi(x),  ||map(x) - x||^2,  G(map(x)),  -log det Hess psi(x)
//! plus an optional pairwise U-statistic `mean_{i != j} k(map(x_i), map(x_j))`
//! for interaction energies. Per-sample work is chunked with a fixed chunk
//! size and reduced in chunk order, so results are bit-identical for any
//! worker count.

use rayon::prelude::*;

use super::eval::{self, IcnnWorkspace};
use super::{IcnnFunction, HESSIAN_JITTER};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg;
use crate::potentials::DcPotential;

/// Weights of the loss terms. Zero weights switch the corresponding
/// computation off entirely (the Hessian recursion only runs when the
/// log-determinant term is active).
#[derive(Clone, Copy, Default)]
pub struct LossSpec<'a> {
    /// Weight on `mean psi(x)`.
    pub psi_weight: f64,
    /// Weight on `mean ||map(x) - x||^2`.
    pub fit_weight: f64,
    /// Potential whose G component is evaluated at the mapped points.
    pub potential: Option<&'a DcPotential>,
    /// Weight on `mean G(map(x))`.
    pub potential_weight: f64,
    /// Weight on `-mean log det Hess psi(x)`.
    pub entropy_weight: f64,
    /// Kernel and weight for the distinct-pair U-statistic of the mapped batch.
    pub pair_kernel: Option<(&'a Kernel, f64)>,
}

/// Loss value split by term; `total` is the weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub psi_term: f64,
    pub fit_term: f64,
    pub potential_term: f64,
    pub entropy_term: f64,
    pub pair_term: f64,
}

const CHUNK: usize = 64;

struct ChunkOut {
    grad: Option<Vec<f64>>,
    psi: f64,
    fit: f64,
    pot: f64,
    logdet: f64,
}

/// Loss of `batch` (flat, n x dim) without parameter gradients.
pub fn loss_value(f: &IcnnFunction, batch: &[f64], spec: &LossSpec) -> Result<LossBreakdown> {
    run(f, batch, spec, None)
}

/// Loss and its gradient with respect to the flat parameter vector.
/// `grad_out` (length = parameter count) is overwritten.
pub fn loss_param_grad(
    f: &IcnnFunction,
    batch: &[f64],
    spec: &LossSpec,
    grad_out: &mut [f64],
) -> Result<LossBreakdown> {
    run(f, batch, spec, Some(grad_out))
}

fn run(
    f: &IcnnFunction,
    batch: &[f64],
    spec: &LossSpec,
    grad_out: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let d = f.dim();
    if batch.is_empty() || batch.len() % d != 0 {
        return Err(Error::InvalidParameter(format!(
            "batch length {} is not a non-empty multiple of dim {d}",
            batch.len()
        )));
    }
    let n = batch.len() / d;
    let want_grad = grad_out.is_some();
    if let Some(g) = &grad_out {
        if g.len() != f.layout().total {
            return Err(Error::SizeMismatch { left: g.len(), right: f.layout().total });
        }
    }
    let need_second = spec.entropy_weight != 0.0;

    // Pairwise interaction term: mapped points first, then per-sample seed
    // vectors d(pair term)/d(map output).
    let (pair_term, pair_seeds) = match spec.pair_kernel {
        Some((kernel, weight)) if n >= 2 => {
            let ys = map_batch(f, batch, d, n);
            let denom = (n * (n - 1)) as f64;
            let rows: Vec<(f64, Vec<f64>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let yi = &ys[i * d..(i + 1) * d];
                    let mut val = 0.0;
                    let mut grad = vec![0.0; d];
                    for j_idx in 0..n {
                        if j_idx != i {
                            let yj = &ys[j_idx * d..(j_idx + 1) * d];
                            val += kernel.value(yi, yj);
                            let g = kernel.grad_x(yi, yj);
                            for (gk, gv) in grad.iter_mut().zip(g) {
                                *gk += gv;
                            }
                        }
                    }
                    (val, grad)
                })
                .collect();
            let mut total = 0.0;
            let mut seeds = vec![0.0; n * d];
            for (i, (val, grad)) in rows.iter().enumerate() {
                total += val;
                // symmetric kernel: d/dy_i of the double sum is twice the row gradient
                for (k, gv) in grad.iter().enumerate() {
                    seeds[i * d + k] = weight * 2.0 * gv / denom;
                }
            }
            (weight * total / denom, Some(seeds))
        }
        _ => (0.0, None),
    };

    let n_chunks = n.div_ceil(CHUNK);
    let outs: Vec<Result<ChunkOut>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut ws = IcnnWorkspace::new(f.arch());
            let mut grad = if want_grad { Some(vec![0.0; f.layout().total]) } else { None };
            let mut y = vec![0.0; d];
            let mut g_bar = vec![0.0; d];
            let mut pot_grad = vec![0.0; d];
            let mut hess = vec![0.0; d * d];
            let mut out = ChunkOut { grad: None, psi: 0.0, fit: 0.0, pot: 0.0, logdet: 0.0 };
            let inv_n = 1.0 / n as f64;
            for s in lo..hi {
                let x = &batch[s * d..(s + 1) * d];
                eval::forward_full(f, x, &mut ws, need_second);
                let psi = eval::outputs_from_ws(f, x, &ws, &mut y);
                out.psi += psi;
                let fit: f64 = y.iter().zip(x).map(|(yi, xi)| (yi - xi) * (yi - xi)).sum();
                out.fit += fit;
                if let Some(pot) = spec.potential {
                    out.pot += pot.g_value(&y);
                }
                let mut h_bar_holder: Option<Vec<f64>> = None;
                if need_second {
                    eval::hessian_from_ws(f, &ws, &mut hess);
                    let (h_inv, logdet) =
                        linalg::spd_inverse_logdet(&hess, d, HESSIAN_JITTER)?;
                    out.logdet += logdet;
                    if want_grad {
                        // d(-w/n * logdet H)/dH = -(w/n) H^{-1}
                        let scale = -spec.entropy_weight * inv_n;
                        h_bar_holder = Some(h_inv.iter().map(|v| scale * v).collect());
                    }
                }
                if let Some(grad_vec) = grad.as_mut() {
                    let psi_bar = spec.psi_weight * inv_n;
                    for k in 0..d {
                        g_bar[k] = 2.0 * spec.fit_weight * inv_n * (y[k] - x[k]);
                    }
                    if let Some(pot) = spec.potential {
                        if spec.potential_weight != 0.0 {
                            pot.g_grad_into(&y, &mut pot_grad);
                            for (gb, pg) in g_bar.iter_mut().zip(&pot_grad) {
                                *gb += spec.potential_weight * inv_n * pg;
                            }
                        }
                    }
                    if let Some(seeds) = &pair_seeds {
                        for k in 0..d {
                            g_bar[k] += seeds[s * d + k];
                        }
                    }
                    eval::backward_params(
                        f,
                        x,
                        &mut ws,
                        psi_bar,
                        &g_bar,
                        h_bar_holder.as_deref(),
                        grad_vec,
                    );
                }
            }
            out.grad = grad;
            Ok(out)
        })
        .collect();

    let mut psi_sum = 0.0;
    let mut fit_sum = 0.0;
    let mut pot_sum = 0.0;
    let mut logdet_sum = 0.0;
    let mut grad_acc = grad_out;
    if let Some(g) = grad_acc.as_mut() {
        g.fill(0.0);
    }
    for out in outs {
        let out = out?;
        psi_sum += out.psi;
        fit_sum += out.fit;
        pot_sum += out.pot;
        logdet_sum += out.logdet;
        if let (Some(acc), Some(g)) = (grad_acc.as_mut(), out.grad) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }

    let inv_n = 1.0 / n as f64;
    let breakdown = LossBreakdown {
        psi_term: spec.psi_weight * psi_sum * inv_n,
        fit_term: spec.fit_weight * fit_sum * inv_n,
        potential_term: spec.potential_weight * pot_sum * inv_n,
        entropy_term: -spec.entropy_weight * logdet_sum * inv_n,
        pair_term,
        total: 0.0,
    };
    let total = breakdown.psi_term
        + breakdown.fit_term
        + breakdown.potential_term
        + breakdown.entropy_term
        + breakdown.pair_term;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("batch loss (total = {total})")));
    }
    Ok(LossBreakdown { total, ..breakdown })
}

/// Map every batch point, chunked with fixed-order writes.
fn map_batch(f: &IcnnFunction, batch: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut ys = vec![0.0; n * d];
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<(usize, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut ws = IcnnWorkspace::new(f.arch());
            let mut out = vec![0.0; (hi - lo) * d];
            for s in lo..hi {
                let x = &batch[s * d..(s + 1) * d];
                eval::grad_raw(f, x, &mut ws, &mut out[(s - lo) * d..(s - lo + 1) * d]);
            }
            (lo, out)
        })
        .collect();
    for (lo, chunk) in chunks {
        ys[lo * d..lo * d + chunk.len()].copy_from_slice(&chunk);
    }
    ys
}
