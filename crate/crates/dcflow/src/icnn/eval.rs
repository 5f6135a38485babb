//! Forward and reverse passes.
//!
//! Spatial derivative state per layer: `u` preactivations, `z` activations,
//! `p = du/dx`, `j = dz/dx`, and for second order `q = d2u/dx2`,
//! `t = d2z/dx2` (one row-major d x d block per unit). The parameter-gradient
//! pass runs reverse mode through exactly these recursions, so a single code
//! path covers gradients of losses containing psi, the map, and the
//! log-determinant of the spatial Hessian.

use super::{IcnnArchitecture, IcnnFunction};

/// Scratch buffers reused across evaluations of one architecture shape.
#[derive(Clone, Debug)]
pub struct IcnnWorkspace {
    pub(crate) dim: usize,
    u: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    j: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    // adjoint carries
    zb: Vec<Vec<f64>>,
    jb: Vec<Vec<f64>>,
    tb: Vec<Vec<f64>>,
    ub: Vec<Vec<f64>>,
    pb: Vec<Vec<f64>>,
    qb: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl IcnnWorkspace {
    pub fn new(arch: &IcnnArchitecture) -> Self {
        let d = arch.input_dim;
        let by_width = |mult: usize| -> Vec<Vec<f64>> {
            arch.hidden_widths.iter().map(|w| vec![0.0; w * mult]).collect()
        };
        Self {
            dim: d,
            u: by_width(1),
            z: by_width(1),
            s1: by_width(1),
            s2: by_width(1),
            p: by_width(d),
            j: by_width(d),
            q: by_width(d * d),
            t: by_width(d * d),
            zb: by_width(1),
            jb: by_width(d),
            tb: by_width(d * d),
            ub: by_width(1),
            pb: by_width(d),
            qb: by_width(d * d),
            delta: by_width(1),
        }
    }
}

#[inline]
fn quad_coeff(f: &IcnnFunction) -> f64 {
    f.layout.quad_index().map(|q| f.params[q]).unwrap_or(0.0)
}

/// Forward pass for values only (u, z).
fn forward_values(f: &IcnnFunction, x: &[f64], ws: &mut IcnnWorkspace) {
    let act = f.arch.activation;
    let layout = &f.layout;
    let d = ws.dim;
    for l in 0..layout.layers() {
        let m = layout.widths[l];
        let a = &f.params[layout.a_x(l)];
        let b = &f.params[layout.bias(l)];
        for i in 0..m {
            let mut acc = b[i];
            let row = &a[i * d..(i + 1) * d];
            for (ak, xk) in row.iter().zip(x) {
                acc += ak * xk;
            }
            ws.u[l][i] = acc;
        }
        if l > 0 {
            let w = &f.params[layout.w_z(l)];
            let m_prev = layout.widths[l - 1];
            for i in 0..m {
                let row = &w[i * m_prev..(i + 1) * m_prev];
                let mut acc = 0.0;
                for (wj, zj) in row.iter().zip(&ws.z[l - 1]) {
                    acc += wj * zj;
                }
                ws.u[l][i] += acc;
            }
        }
        for i in 0..m {
            ws.z[l][i] = act.value(ws.u[l][i]);
        }
    }
}

pub(crate) fn value_raw(f: &IcnnFunction, x: &[f64], ws: &mut IcnnWorkspace) -> f64 {
    forward_values(f, x, ws);
    let layout = &f.layout;
    let w = &f.params[layout.w_out()];
    let z_last = &ws.z[layout.layers() - 1];
    let mut psi = w.iter().zip(z_last).map(|(wi, zi)| wi * zi).sum::<f64>();
    let qc = quad_coeff(f);
    if qc != 0.0 {
        psi += 0.5 * qc * x.iter().map(|v| v * v).sum::<f64>();
    }
    psi
}

/// Reverse-mode spatial gradient: cheaper than the Jacobian recursion and
/// used for plain map applications in chain pushes.
pub(crate) fn grad_raw(f: &IcnnFunction, x: &[f64], ws: &mut IcnnWorkspace, out: &mut [f64]) {
    forward_values(f, x, ws);
    let act = f.arch.activation;
    let layout = &f.layout;
    let layers = layout.layers();
    let d = ws.dim;
    let qc = quad_coeff(f);
    for (o, xk) in out.iter_mut().zip(x) {
        *o = qc * xk;
    }
    ws.delta[layers - 1].copy_from_slice(&f.params[layout.w_out()]);
    for l in (0..layers).rev() {
        let m = layout.widths[l];
        // e = act'(u) .* delta, reusing the delta buffer
        for i in 0..m {
            ws.delta[l][i] *= act.d1(ws.u[l][i]);
        }
        let a = &f.params[layout.a_x(l)];
        for i in 0..m {
            let e = ws.delta[l][i];
            if e != 0.0 {
                let row = &a[i * d..(i + 1) * d];
                for (o, ak) in out.iter_mut().zip(row) {
                    *o += e * ak;
                }
            }
        }
        if l > 0 {
            let w = &f.params[layout.w_z(l)];
            let m_prev = layout.widths[l - 1];
            ws.zb[l - 1].fill(0.0); // reuse zb as the next delta accumulator
            for i in 0..m {
                let e = ws.delta[l][i];
                if e != 0.0 {
                    let row = &w[i * m_prev..(i + 1) * m_prev];
                    for (acc, wj) in ws.zb[l - 1].iter_mut().zip(row) {
                        *acc += e * wj;
                    }
                }
            }
            let (zb_prev, delta_prev) = (&ws.zb[l - 1], &mut ws.delta[l - 1]);
            delta_prev.copy_from_slice(zb_prev);
        }
    }
}

/// Forward pass carrying first (and optionally second) spatial derivatives.
pub(crate) fn forward_full(f: &IcnnFunction, x: &[f64], ws: &mut IcnnWorkspace, second: bool) {
    let act = f.arch.activation;
    let layout = &f.layout;
    let d = ws.dim;
    let dd = d * d;
    for l in 0..layout.layers() {
        let m = layout.widths[l];
        let a = &f.params[layout.a_x(l)];
        let b = &f.params[layout.bias(l)];
        // u and p start from the affine skip
        ws.p[l].copy_from_slice(a);
        for i in 0..m {
            let mut acc = b[i];
            let row = &a[i * d..(i + 1) * d];
            for (ak, xk) in row.iter().zip(x) {
                acc += ak * xk;
            }
            ws.u[l][i] = acc;
        }
        if second {
            ws.q[l].fill(0.0);
        }
        if l > 0 {
            let w = &f.params[layout.w_z(l)];
            let m_prev = layout.widths[l - 1];
            for i in 0..m {
                let row = &w[i * m_prev..(i + 1) * m_prev];
                let mut acc = 0.0;
                for (wj, zj) in row.iter().zip(&ws.z[l - 1]) {
                    acc += wj * zj;
                }
                ws.u[l][i] += acc;
                for (j_idx, wj) in row.iter().enumerate() {
                    if *wj != 0.0 {
                        let src = j_idx * d;
                        for k in 0..d {
                            ws.p[l][i * d + k] += wj * ws.j[l - 1][src + k];
                        }
                    }
                }
                if second {
                    for (j_idx, wj) in row.iter().enumerate() {
                        if *wj != 0.0 {
                            let src = j_idx * dd;
                            for k in 0..dd {
                                ws.q[l][i * dd + k] += wj * ws.t[l - 1][src + k];
                            }
                        }
                    }
                }
            }
        }
        for i in 0..m {
            let ui = ws.u[l][i];
            ws.z[l][i] = act.value(ui);
            ws.s1[l][i] = act.d1(ui);
            ws.s2[l][i] = act.d2(ui);
        }
        for i in 0..m {
            let s1 = ws.s1[l][i];
            for k in 0..d {
                ws.j[l][i * d + k] = s1 * ws.p[l][i * d + k];
            }
        }
        if second {
            for i in 0..m {
                let s1 = ws.s1[l][i];
                let s2 = ws.s2[l][i];
                let p_row = i * d;
                let t_row = i * dd;
                for ai in 0..d {
                    let pa = ws.p[l][p_row + ai];
                    for bi in 0..d {
                        let pb = ws.p[l][p_row + bi];
                        ws.t[l][t_row + ai * d + bi] =
                            s2 * pa * pb + s1 * ws.q[l][t_row + ai * d + bi];
                    }
                }
            }
        }
    }
}

/// psi and the map from a completed [`forward_full`] pass.
pub(crate) fn outputs_from_ws(
    f: &IcnnFunction,
    x: &[f64],
    ws: &IcnnWorkspace,
    g_out: &mut [f64],
) -> f64 {
    let layout = &f.layout;
    let last = layout.layers() - 1;
    let w = &f.params[layout.w_out()];
    let d = ws.dim;
    let qc = quad_coeff(f);
    let mut psi = 0.0;
    for (o, xk) in g_out.iter_mut().zip(x) {
        *o = qc * xk;
    }
    for (i, wi) in w.iter().enumerate() {
        psi += wi * ws.z[last][i];
        if *wi != 0.0 {
            let row = &ws.j[last][i * d..(i + 1) * d];
            for (o, jk) in g_out.iter_mut().zip(row) {
                *o += wi * jk;
            }
        }
    }
    if qc != 0.0 {
        psi += 0.5 * qc * x.iter().map(|v| v * v).sum::<f64>();
    }
    psi
}

/// Spatial Hessian from a completed second-order [`forward_full`] pass.
pub(crate) fn hessian_from_ws(f: &IcnnFunction, ws: &IcnnWorkspace, out: &mut [f64]) {
    let layout = &f.layout;
    let last = layout.layers() - 1;
    let w = &f.params[layout.w_out()];
    let d = ws.dim;
    let dd = d * d;
    let qc = quad_coeff(f);
    out.fill(0.0);
    for (i, wi) in w.iter().enumerate() {
        if *wi != 0.0 {
            let block = &ws.t[last][i * dd..(i + 1) * dd];
            for (o, tv) in out.iter_mut().zip(block) {
                *o += wi * tv;
            }
        }
    }
    for k in 0..d {
        out[k * d + k] += qc;
    }
}

pub(crate) fn hessian_raw(f: &IcnnFunction, x: &[f64], ws: &mut IcnnWorkspace, out: &mut [f64]) {
    forward_full(f, x, ws, true);
    hessian_from_ws(f, ws, out);
}

/// Reverse pass for parameter gradients.
///
/// Seeds: `psi_bar` multiplies psi, `g_bar` the map output, and `h_bar`
/// (symmetric, row-major) the spatial Hessian. Requires [`forward_full`] with
/// `second = h_bar.is_some()`. Gradients are accumulated into `grad_out`.
pub(crate) fn backward_params(
    f: &IcnnFunction,
    x: &[f64],
    ws: &mut IcnnWorkspace,
    psi_bar: f64,
    g_bar: &[f64],
    h_bar: Option<&[f64]>,
    grad_out: &mut [f64],
) {
    let act = f.arch.activation;
    let layout = &f.layout;
    let layers = layout.layers();
    let last = layers - 1;
    let d = ws.dim;
    let dd = d * d;
    let second = h_bar.is_some();
    let w_out = &f.params[layout.w_out()];

    // ---- read-out seeds ----
    {
        let m = layout.widths[last];
        let grad_w_start = layout.w_out().start;
        for i in 0..m {
            let mut acc = psi_bar * ws.z[last][i];
            let j_row = &ws.j[last][i * d..(i + 1) * d];
            for (jk, gk) in j_row.iter().zip(g_bar) {
                acc += jk * gk;
            }
            if let Some(hb) = h_bar {
                let t_row = &ws.t[last][i * dd..(i + 1) * dd];
                for (tv, hv) in t_row.iter().zip(hb) {
                    acc += tv * hv;
                }
            }
            grad_out[grad_w_start + i] += acc;
        }
        if let Some(qi) = layout.quad_index() {
            let mut acc = 0.5 * psi_bar * x.iter().map(|v| v * v).sum::<f64>();
            for (gk, xk) in g_bar.iter().zip(x) {
                acc += gk * xk;
            }
            if let Some(hb) = h_bar {
                for k in 0..d {
                    acc += hb[k * d + k];
                }
            }
            grad_out[qi] += acc;
        }
        for (i, wi) in w_out.iter().enumerate() {
            ws.zb[last][i] = psi_bar * wi;
            for k in 0..d {
                ws.jb[last][i * d + k] = wi * g_bar[k];
            }
            if let Some(hb) = h_bar {
                for (tbv, hv) in ws.tb[last][i * dd..(i + 1) * dd].iter_mut().zip(hb) {
                    *tbv = wi * hv;
                }
            }
        }
    }

    // ---- descend through layers ----
    for l in (0..layers).rev() {
        let m = layout.widths[l];
        // fold the three consumers of layer state into ub, pb, qb
        for i in 0..m {
            let s1 = ws.s1[l][i];
            let s2 = ws.s2[l][i];
            let mut ub = s1 * ws.zb[l][i];
            let mut jp = 0.0;
            for k in 0..d {
                jp += ws.jb[l][i * d + k] * ws.p[l][i * d + k];
            }
            ub += s2 * jp;
            for k in 0..d {
                ws.pb[l][i * d + k] = s1 * ws.jb[l][i * d + k];
            }
            if second {
                let s3 = act.d3(ws.u[l][i]);
                let mut tpp = 0.0;
                let mut tq = 0.0;
                for ai in 0..d {
                    let pa = ws.p[l][i * d + ai];
                    for bi in 0..d {
                        let tv = ws.tb[l][i * dd + ai * d + bi];
                        tpp += tv * pa * ws.p[l][i * d + bi];
                        tq += tv * ws.q[l][i * dd + ai * d + bi];
                    }
                }
                ub += s3 * tpp + s2 * tq;
                // pb += 2 s2 (tb p)   [tb symmetric]
                for ai in 0..d {
                    let mut acc = 0.0;
                    for bi in 0..d {
                        acc += ws.tb[l][i * dd + ai * d + bi] * ws.p[l][i * d + bi];
                    }
                    ws.pb[l][i * d + ai] += 2.0 * s2 * acc;
                }
                for k in 0..dd {
                    ws.qb[l][i * dd + k] = s1 * ws.tb[l][i * dd + k];
                }
            }
            ws.ub[l][i] = ub;
        }

        // gradients of the affine skip and bias: u = ... + A x + b, p = ... + A
        {
            let grad_a = &mut grad_out[layout.a_x(l)];
            for i in 0..m {
                let ub = ws.ub[l][i];
                for (k, xk) in x.iter().enumerate() {
                    grad_a[i * d + k] += ub * xk + ws.pb[l][i * d + k];
                }
            }
        }
        {
            let grad_b = &mut grad_out[layout.bias(l)];
            for i in 0..m {
                grad_b[i] += ws.ub[l][i];
            }
        }

        if l > 0 {
            let m_prev = layout.widths[l - 1];
            let w = &f.params[layout.w_z(l)];
            ws.zb[l - 1].fill(0.0);
            ws.jb[l - 1].fill(0.0);
            if second {
                ws.tb[l - 1].fill(0.0);
            }
            let grad_w = &mut grad_out[layout.w_z(l)];
            for i in 0..m {
                let ub = ws.ub[l][i];
                let w_row = &w[i * m_prev..(i + 1) * m_prev];
                for (j_idx, wij) in w_row.iter().enumerate() {
                    // gradient of W[i, j] from its three linear uses
                    let mut gw = ub * ws.z[l - 1][j_idx];
                    for k in 0..d {
                        gw += ws.pb[l][i * d + k] * ws.j[l - 1][j_idx * d + k];
                    }
                    if second {
                        for k in 0..dd {
                            gw += ws.qb[l][i * dd + k] * ws.t[l - 1][j_idx * dd + k];
                        }
                    }
                    grad_w[i * m_prev + j_idx] += gw;

                    // adjoints of the previous layer
                    if *wij != 0.0 {
                        ws.zb[l - 1][j_idx] += wij * ub;
                        for k in 0..d {
                            ws.jb[l - 1][j_idx * d + k] += wij * ws.pb[l][i * d + k];
                        }
                        if second {
                            for k in 0..dd {
                                ws.tb[l - 1][j_idx * dd + k] += wij * ws.qb[l][i * dd + k];
                            }
                        }
                    }
                }
            }
        }
    }
}
