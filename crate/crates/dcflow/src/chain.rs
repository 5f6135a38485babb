//! Composable push-forward steps: the forward (sub)gradient maps of the Euler
//! schemes and the fitted Brenier maps. A sampling chain is a slice of steps
//! applied left to right to base draws, optionally carrying per-point
//! log-density corrections `log p_out = log p_in - log |det J|`.
//!
//! Batch pushes are chunked with a fixed chunk size and write disjoint
//! slices, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::icnn::{BrenierPotential, IcnnFunction, IcnnWorkspace, HESSIAN_JITTER};
use crate::linalg;
use crate::potentials::DcPotential;

const CHUNK: usize = 64;

/// One map in a sampling chain.
#[derive(Clone, Copy)]
pub enum PushStep<'a> {
    /// `x + eta * S(x)` with S the subgradient selector of H (semi FB Euler).
    SubgradientForward { potential: &'a DcPotential, eta: f64 },
    /// `x - eta * grad F(x)` (FB Euler).
    GradientForward { potential: &'a DcPotential, eta: f64 },
    /// `x -> grad psi(x)` for a fitted input-convex function.
    Brenier(&'a IcnnFunction),
}

impl<'a> PushStep<'a> {
    pub fn dim(&self) -> usize {
        match self {
            PushStep::SubgradientForward { potential, .. }
            | PushStep::GradientForward { potential, .. } => potential.dim(),
            PushStep::Brenier(f) => f.dim(),
        }
    }
}

/// A differentiable map with an explicit Jacobian; the interface behind
/// entropy-change estimates and density bookkeeping diagnostics.
pub trait DiffMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn log_abs_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        let j = self.jacobian(x)?;
        linalg::log_abs_det(&j, self.dim())
    }
}

impl<'a> DiffMap for PushStep<'a> {
    fn dim(&self) -> usize {
        PushStep::dim(self)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            PushStep::SubgradientForward { potential, eta } => {
                let mut s = potential.h_selector(x);
                for (si, xi) in s.iter_mut().zip(x) {
                    *si = xi + eta * *si;
                }
                s
            }
            PushStep::GradientForward { potential, eta } => {
                let mut g = potential.f_grad(x);
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = xi - eta * *gi;
                }
                g
            }
            PushStep::Brenier(f) => f.map(x),
        }
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = PushStep::dim(self);
        match self {
            PushStep::SubgradientForward { potential, eta } => {
                let mut j = potential.h_hess(x)?;
                scale_add_identity(&mut j, d, *eta);
                Ok(j)
            }
            PushStep::GradientForward { potential, eta } => {
                let mut j = vec![0.0; d * d];
                let mut scratch = vec![0.0; d * d];
                potential.f_hess_into(x, &mut j, &mut scratch)?;
                scale_add_identity(&mut j, d, -*eta);
                Ok(j)
            }
            PushStep::Brenier(f) => Ok(f.map_hessian(x)),
        }
    }

    fn log_abs_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        match self {
            // Brenier maps have symmetric positive-definite Jacobians
            PushStep::Brenier(f) => {
                let h = f.map_hessian(x);
                linalg::spd_logdet(&h, f.dim(), HESSIAN_JITTER)
            }
            _ => {
                let j = self.jacobian(x)?;
                linalg::log_abs_det(&j, PushStep::dim(self))
            }
        }
    }
}

/// `m = eta * m + I` in place.
fn scale_add_identity(m: &mut [f64], d: usize, eta: f64) {
    for v in m.iter_mut() {
        *v *= eta;
    }
    for k in 0..d {
        m[k * d + k] += 1.0;
    }
}

/// Apply all steps to the flat point buffer in place.
pub fn push_chain(steps: &[PushStep], dim: usize, points: &mut [f64]) -> Result<()> {
    push_chain_impl(steps, dim, points, None)
}

/// Apply all steps while accumulating per-point log-density corrections.
pub fn push_chain_logdens(
    steps: &[PushStep],
    dim: usize,
    points: &mut [f64],
    logdens: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(points.len(), logdens.len() * dim);
    push_chain_impl(steps, dim, points, Some(logdens))
}

/// Chunks run the whole chain serially over their points with reused scratch
/// buffers; one parallel dispatch per push, not per step.
fn push_chain_impl(
    steps: &[PushStep],
    dim: usize,
    points: &mut [f64],
    logdens: Option<&mut [f64]>,
) -> Result<()> {
    for step in steps {
        if step.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: step.dim() });
        }
    }
    match logdens {
        None => {
            let results: Vec<Result<()>> = points
                .par_chunks_mut(CHUNK * dim)
                .map(|chunk| {
                    let mut scratch = ChainScratch::new(dim);
                    for step in steps {
                        apply_step_chunk(step, dim, chunk, None, &mut scratch)?;
                    }
                    Ok(())
                })
                .collect();
            results.into_iter().collect()
        }
        Some(ld) => {
            let results: Vec<Result<()>> = points
                .par_chunks_mut(CHUNK * dim)
                .zip(ld.par_chunks_mut(CHUNK))
                .map(|(chunk, ld_chunk)| {
                    let mut scratch = ChainScratch::new(dim);
                    for step in steps {
                        apply_step_chunk(step, dim, chunk, Some(ld_chunk), &mut scratch)?;
                    }
                    Ok(())
                })
                .collect();
            results.into_iter().collect()
        }
    }
}

/// Per-chunk scratch reused across every step of a chain push. The network
/// workspace is cached by hidden widths, which all maps of one flow share.
struct ChainScratch {
    buf: Vec<f64>,
    buf2: Vec<f64>,
    hess: Vec<f64>,
    hess2: Vec<f64>,
    ws: Option<(Vec<usize>, IcnnWorkspace)>,
}

impl ChainScratch {
    fn new(dim: usize) -> Self {
        Self {
            buf: vec![0.0; dim],
            buf2: vec![0.0; dim],
            hess: vec![0.0; dim * dim],
            hess2: vec![0.0; dim * dim],
            ws: None,
        }
    }

    fn workspace(&mut self, f: &IcnnFunction) -> &mut IcnnWorkspace {
        let widths = &f.arch().hidden_widths;
        let stale = match &self.ws {
            Some((cached, _)) => cached != widths,
            None => true,
        };
        if stale {
            self.ws = Some((widths.clone(), IcnnWorkspace::new(f.arch())));
        }
        &mut self.ws.as_mut().expect("just ensured").1
    }
}

fn apply_step_chunk(
    step: &PushStep,
    dim: usize,
    chunk: &mut [f64],
    mut logdens: Option<&mut [f64]>,
    scratch: &mut ChainScratch,
) -> Result<()> {
    let n = chunk.len() / dim;
    match step {
        PushStep::SubgradientForward { potential, eta } => {
            for i in 0..n {
                let x = &mut chunk[i * dim..(i + 1) * dim];
                if let Some(ld) = logdens.as_mut() {
                    potential.h_hess_into(x, &mut scratch.hess)?;
                    scratch.hess2.copy_from_slice(&scratch.hess);
                    scale_add_identity(&mut scratch.hess2, dim, *eta);
                    ld[i] -= linalg::log_abs_det(&scratch.hess2, dim)?;
                }
                potential.h_selector_into(x, &mut scratch.buf);
                for (xi, si) in x.iter_mut().zip(&scratch.buf) {
                    *xi += eta * si;
                }
            }
        }
        PushStep::GradientForward { potential, eta } => {
            for i in 0..n {
                let x = &mut chunk[i * dim..(i + 1) * dim];
                if let Some(ld) = logdens.as_mut() {
                    potential.f_hess_into(x, &mut scratch.hess, &mut scratch.hess2)?;
                    scale_add_identity(&mut scratch.hess, dim, -*eta);
                    ld[i] -= linalg::log_abs_det(&scratch.hess, dim)?;
                }
                potential.f_grad_into(x, &mut scratch.buf, &mut scratch.buf2);
                for (xi, gi) in x.iter_mut().zip(&scratch.buf) {
                    *xi -= eta * gi;
                }
            }
        }
        PushStep::Brenier(f) => {
            let with_logdens = logdens.is_some();
            for i in 0..n {
                // split borrows: the workspace cache and the point row
                let (pre, rest) = chunk.split_at_mut(i * dim);
                let _ = pre;
                let x = &mut rest[..dim];
                if with_logdens {
                    let ws = scratch.ws_hess(f);
                    crate::icnn::map_and_hessian_with_ws(f, x, ws, &mut scratch.buf, &mut scratch.hess);
                    let ld = logdens.as_mut().expect("with_logdens");
                    ld[i] -= linalg::spd_logdet(&scratch.hess, dim, HESSIAN_JITTER)?;
                    x.copy_from_slice(&scratch.buf);
                } else {
                    let ws = scratch.workspace(f);
                    crate::icnn::grad_with_ws(f, x, ws, &mut scratch.buf);
                    x.copy_from_slice(&scratch.buf);
                }
            }
        }
    }
    Ok(())
}

/// A fixed linear map `x -> M x`; handy as an exactly known test transport.
#[derive(Clone, Debug)]
pub struct LinearMap {
    matrix: Vec<f64>,
    dim: usize,
}

impl LinearMap {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::SizeMismatch { left: matrix.len(), right: dim * dim });
        }
        Ok(Self { matrix, dim })
    }

    pub fn scaling(dim: usize, factor: f64) -> Self {
        let mut m = vec![0.0; dim * dim];
        for k in 0..dim {
            m[k * dim + k] = factor;
        }
        Self { matrix: m, dim }
    }
}

impl DiffMap for LinearMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| linalg::dot(&self.matrix[i * self.dim..(i + 1) * self.dim], x))
            .collect()
    }

    fn jacobian(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.matrix.clone())
    }
}

/// View a convex potential's gradient as a transport map.
pub struct BrenierMap<'a, P: BrenierPotential + ?Sized>(pub &'a P);

impl<'a, P: BrenierPotential + ?Sized> DiffMap for BrenierMap<'a, P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.map(x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.map_hessian(x))
    }
}
