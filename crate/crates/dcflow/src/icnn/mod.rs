//! Input-convex scalar functions whose spatial gradient serves as a candidate
//! Brenier map.
//!
//! The network follows the dense input-convex family: every hidden layer sees
//! the input through a free affine skip, hidden-to-hidden weights and the
//! read-out are constrained nonnegative, and the activation is convex and
//! non-decreasing, so `x -> psi(x)` is convex by construction. A learned
//! nonnegative coefficient on a `||x||^2 / 2` skip term lets the gradient map
//! interpolate between contractions and expansions while keeping convexity.
//!
//! Three derivative paths are exposed, all analytic: the spatial gradient
//! (reverse mode), the spatial Hessian with log-determinant (forward
//! recursions carrying first and second derivative state), and the parameter
//! gradient of losses built from all of the above (reverse mode through the
//! forward recursions). Each path is validated against central finite
//! differences in the tests.

mod eval;
mod loss;

pub use eval::IcnnWorkspace;
pub use loss::{loss_param_grad, loss_value, LossBreakdown, LossSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Convex, non-decreasing, smooth activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
}

impl Activation {
    #[inline]
    pub fn value(self, t: f64) -> f64 {
        // max(t, 0) + ln(1 + exp(-|t|)) avoids overflow on both tails
        t.max(0.0) + (-t.abs()).exp().ln_1p()
    }

    #[inline]
    pub fn d1(self, t: f64) -> f64 {
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    }

    #[inline]
    pub fn d2(self, t: f64) -> f64 {
        let s = self.d1(t);
        s * (1.0 - s)
    }

    #[inline]
    pub fn d3(self, t: f64) -> f64 {
        let s = self.d1(t);
        s * (1.0 - s) * (1.0 - 2.0 * s)
    }
}

/// Shape and initialization hyperparameters of an input-convex network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcnnArchitecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub quadratic_skip: bool,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_activation() -> Activation {
    Activation::Softplus
}

fn default_true() -> bool {
    true
}

fn default_init_scale() -> f64 {
    1e-3
}

impl IcnnArchitecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Self {
        Self {
            input_dim,
            hidden_widths,
            activation: Activation::Softplus,
            quadratic_skip: true,
            init_scale: default_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidParameter("input_dim must be positive".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.iter().any(|w| *w == 0) {
            return Err(Error::InvalidParameter(
                "hidden_widths must be non-empty with positive entries".into(),
            ));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "init_scale must be a nonnegative finite number, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Offsets of the flat parameter vector. The nonnegativity-constrained block
/// (quadratic-skip coefficient, read-out, hidden-to-hidden weights) is stored
/// first so projection is a single prefix clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub dim: usize,
    pub widths: Vec<usize>,
    quad: Option<usize>,
    w_out: std::ops::Range<usize>,
    w_z: Vec<std::ops::Range<usize>>,
    a_x: Vec<std::ops::Range<usize>>,
    bias: Vec<std::ops::Range<usize>>,
    pub n_constrained: usize,
    pub total: usize,
}

impl ParamLayout {
    fn new(arch: &IcnnArchitecture) -> Self {
        let dim = arch.input_dim;
        let widths = arch.hidden_widths.clone();
        let layers = widths.len();
        let mut cursor = 0usize;
        fn take(cursor: &mut usize, len: usize) -> std::ops::Range<usize> {
            let range = *cursor..*cursor + len;
            *cursor += len;
            range
        }

        let quad = if arch.quadratic_skip {
            let r = take(&mut cursor, 1);
            Some(r.start)
        } else {
            None
        };
        let w_out = take(&mut cursor, widths[layers - 1]);
        let mut w_z = Vec::with_capacity(layers.saturating_sub(1));
        for l in 1..layers {
            w_z.push(take(&mut cursor, widths[l] * widths[l - 1]));
        }
        let n_constrained = cursor;
        let mut a_x = Vec::with_capacity(layers);
        let mut bias = Vec::with_capacity(layers);
        for l in 0..layers {
            a_x.push(take(&mut cursor, widths[l] * dim));
        }
        for l in 0..layers {
            bias.push(take(&mut cursor, widths[l]));
        }
        ParamLayout {
            dim,
            widths,
            quad,
            w_out,
            w_z,
            a_x,
            bias,
            n_constrained,
            total: cursor,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn quad_index(&self) -> Option<usize> {
        self.quad
    }

    pub fn w_out(&self) -> std::ops::Range<usize> {
        self.w_out.clone()
    }

    /// Hidden-to-hidden matrix feeding layer `l` (row-major widths[l] x widths[l-1]), l >= 1.
    pub fn w_z(&self, l: usize) -> std::ops::Range<usize> {
        self.w_z[l - 1].clone()
    }

    /// Input skip matrix feeding layer `l` (row-major widths[l] x dim).
    pub fn a_x(&self, l: usize) -> std::ops::Range<usize> {
        self.a_x[l].clone()
    }

    pub fn bias(&self, l: usize) -> std::ops::Range<usize> {
        self.bias[l].clone()
    }
}

/// An input-convex function: architecture plus flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "IcnnSnapshot", into = "IcnnSnapshot")]
pub struct IcnnFunction {
    arch: IcnnArchitecture,
    #[allow(clippy::struct_field_names)]
    layout: ParamLayout,
    params: Vec<f64>,
}

/// Serialized form: versioned architecture header plus the flat array.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IcnnSnapshot {
    pub format_version: u32,
    pub arch: IcnnArchitecture,
    pub params: Vec<f64>,
}

pub const ICNN_SNAPSHOT_VERSION: u32 = 1;

impl From<IcnnFunction> for IcnnSnapshot {
    fn from(f: IcnnFunction) -> Self {
        IcnnSnapshot {
            format_version: ICNN_SNAPSHOT_VERSION,
            arch: f.arch,
            params: f.params,
        }
    }
}

impl TryFrom<IcnnSnapshot> for IcnnFunction {
    type Error = Error;

    fn try_from(s: IcnnSnapshot) -> Result<Self> {
        if s.format_version != ICNN_SNAPSHOT_VERSION {
            return Err(Error::BadSnapshot(format!(
                "unsupported network snapshot version {}",
                s.format_version
            )));
        }
        IcnnFunction::from_params(s.arch, s.params)
    }
}

impl IcnnFunction {
    pub fn from_params(arch: IcnnArchitecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if params.len() != layout.total {
            return Err(Error::SizeMismatch { left: params.len(), right: layout.total });
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self { arch, layout, params })
    }

    pub fn arch(&self) -> &IcnnArchitecture {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::SizeMismatch { left: params.len(), right: self.layout.total });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Clamp the constrained block to [0, inf); free parameters untouched.
    pub fn project_nonneg(&self) -> IcnnFunction {
        let mut out = self.clone();
        out.project_nonneg_in_place();
        out
    }

    pub fn project_nonneg_in_place(&mut self) {
        let n = self.layout.n_constrained;
        for p in self.params[..n].iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let snapshot: IcnnSnapshot = self.clone().into();
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &snapshot)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let snapshot: IcnnSnapshot = serde_json::from_reader(std::io::BufReader::new(file))?;
        snapshot.try_into()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch { expected: self.arch.input_dim, got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// psi(x).
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut ws = IcnnWorkspace::new(&self.arch);
        Ok(eval::value_raw(self, x, &mut ws))
    }

    /// Spatial gradient; the candidate transport map.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut ws = IcnnWorkspace::new(&self.arch);
        let mut out = vec![0.0; self.dim()];
        eval::grad_raw(self, x, &mut ws, &mut out);
        Ok(out)
    }

    /// Spatial Hessian (row-major).
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut ws = IcnnWorkspace::new(&self.arch);
        let mut hess = vec![0.0; self.dim() * self.dim()];
        eval::hessian_raw(self, x, &mut ws, &mut hess);
        Ok(hess)
    }

    /// Spatial Hessian and its log-determinant via an SPD factorization,
    /// retried once with jitter 1e-9 on the diagonal. A failure after jitter
    /// signals a convexity breach.
    pub fn hessian_logdet(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let hess = self.hessian(x)?;
        let logdet = linalg::spd_logdet(&hess, self.dim(), HESSIAN_JITTER)?;
        Ok((hess, logdet))
    }
}

/// Diagonal jitter applied when factorizing near-singular Hessians.
pub const HESSIAN_JITTER: f64 = 1e-9;

/// Map evaluation with a caller-owned workspace; the batch-push hot path.
pub fn grad_with_ws(f: &IcnnFunction, x: &[f64], ws: &mut IcnnWorkspace, out: &mut [f64]) {
    eval::grad_raw(f, x, ws, out);
}

/// Map and spatial Hessian in one forward pass with a caller-owned workspace.
pub fn map_and_hessian_with_ws(
    f: &IcnnFunction,
    x: &[f64],
    ws: &mut IcnnWorkspace,
    map_out: &mut [f64],
    hess_out: &mut [f64],
) {
    eval::forward_full(f, x, ws, true);
    eval::outputs_from_ws(f, x, ws, map_out);
    eval::hessian_from_ws(f, ws, hess_out);
}

/// Deterministic near-identity initialization: the quadratic-skip coefficient
/// starts at one and the hidden stack's read-out is scaled by
/// `arch.init_scale`, so the gradient map starts within a small ball of the
/// identity (exactly the identity at scale zero).
pub fn init_near_identity(arch: &IcnnArchitecture, seed: u64) -> Result<IcnnFunction> {
    arch.validate()?;
    let layout = arch.layout();
    let mut params = vec![0.0; layout.total];
    let mut rng = rng::substream(seed, INIT_STREAM);
    let layers = layout.layers();
    let dim = arch.input_dim as f64;

    if let Some(q) = layout.quad_index() {
        params[q] = 1.0;
    }
    let m_last = layout.widths[layers - 1] as f64;
    for p in params[layout.w_out()].iter_mut() {
        let u: f64 = rand::Rng::random::<f64>(&mut rng);
        *p = arch.init_scale * (0.5 + u) / m_last;
    }
    for l in 1..layers {
        let fan_in = layout.widths[l - 1] as f64;
        for p in params[layout.w_z(l)].iter_mut() {
            let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
            *p = z.abs() / fan_in;
        }
    }
    for l in 0..layers {
        for p in params[layout.a_x(l)].iter_mut() {
            let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
            *p = z / dim.sqrt();
        }
        // biases start at zero
    }
    IcnnFunction::from_params(arch.clone(), params)
}

const INIT_STREAM: u64 = 0x1c99_0001;

// ---------------------------------------------------------------------------
// Convex quadratic surrogate
// ---------------------------------------------------------------------------

/// Convex scalar functions usable as transport-map sources. Implemented by
/// the network and by the exact quadratic surrogate used in diagnostics.
pub trait BrenierPotential: Sync {
    fn dim(&self) -> usize;
    fn psi(&self, x: &[f64]) -> f64;
    fn map(&self, x: &[f64]) -> Vec<f64>;
    fn map_hessian(&self, x: &[f64]) -> Vec<f64>;
}

impl BrenierPotential for IcnnFunction {
    fn dim(&self) -> usize {
        self.arch.input_dim
    }

    fn psi(&self, x: &[f64]) -> f64 {
        let mut ws = IcnnWorkspace::new(&self.arch);
        eval::value_raw(self, x, &mut ws)
    }

    fn map(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = IcnnWorkspace::new(&self.arch);
        let mut out = vec![0.0; self.dim()];
        eval::grad_raw(self, x, &mut ws, &mut out);
        out
    }

    fn map_hessian(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = IcnnWorkspace::new(&self.arch);
        let mut hess = vec![0.0; self.dim() * self.dim()];
        eval::hessian_raw(self, x, &mut ws, &mut hess);
        hess
    }
}

/// psi(x) = x^T A x / 2 for a fixed symmetric positive-definite A. Exact
/// closed-form stand-in for testing maps, log-determinants, and objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPsi {
    matrix: Vec<f64>,
    dim: usize,
}

impl QuadraticPsi {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::SizeMismatch { left: matrix.len(), right: dim * dim });
        }
        for i in 0..dim {
            for j in 0..i {
                if (matrix[i * dim + j] - matrix[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("quadratic matrix must be symmetric".into()));
                }
            }
        }
        linalg::spd_logdet(&matrix, dim, 0.0)?;
        Ok(Self { matrix, dim })
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let d = values.len();
        let mut m = vec![0.0; d * d];
        for (i, v) in values.iter().enumerate() {
            m[i * d + i] = *v;
        }
        Self::new(d, m)
    }
}

impl BrenierPotential for QuadraticPsi {
    fn dim(&self) -> usize {
        self.dim
    }

    fn psi(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += x[i] * linalg::dot(&self.matrix[i * self.dim..(i + 1) * self.dim], x);
        }
        0.5 * acc
    }

    fn map(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| linalg::dot(&self.matrix[i * self.dim..(i + 1) * self.dim], x))
            .collect()
    }

    fn map_hessian(&self, _x: &[f64]) -> Vec<f64> {
        self.matrix.clone()
    }
}

#[cfg(test)]
mod tests;
