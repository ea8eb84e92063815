//! Exact finite verifications.
//!
//! Everything here is enumeration, no sampling: single-vertex pushforward
//! identities, exhaustive one-step transfer kernels on short windows (with
//! jump tails folded analytically through line conservation), the fusion
//! grid identity expressing one higher-spin vertex as an `I x J` grid of
//! spin-1/2 vertices with geometrically progressing spectral parameters,
//! preservation of q-exchangeability along a row of vertices, and the
//! q-negative-binomial convolution identity.

use crate::measures::{LambdaKernel, MeasureSpec, QnbParams};
use crate::qseries::{
    build_l_tensor, reflect_tensor, spin_half_probabilities, ModelParams, SixVertexParams,
    VertexWeightTensor,
};
use crate::{Error, Result};
use serde::Serialize;

/// Outcome of one named exact check.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub name: String,
    pub params: String,
    pub max_abs_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn new(name: &str, params: String, max_abs_residual: f64, tolerance: f64) -> Self {
        ResidualReport {
            name: name.to_string(),
            params,
            max_abs_residual,
            tolerance,
            pass: max_abs_residual <= tolerance,
        }
    }
}

/// Spin-1/2 vertex weight for inputs `(v, h)` and outputs `(v2, h2)`.
pub fn spin_half_weight(v: u8, h: u8, v2: u8, h2: u8, p: &SixVertexParams) -> f64 {
    if v + h != v2 + h2 {
        return 0.0;
    }
    match (v, h, v2, h2) {
        (0, 0, 0, 0) | (1, 1, 1, 1) => 1.0,
        (0, 1, 0, 1) => p.b2,
        (0, 1, 1, 0) => 1.0 - p.b2,
        (1, 0, 1, 0) => p.b1,
        (1, 0, 0, 1) => 1.0 - p.b1,
        _ => 0.0,
    }
}

/// Exact joint law of the vertex outputs `(v', h')` when the inputs are
/// independent Bernoulli with means `rho` (vertical) and `zeta`
/// (horizontal). Indexed `[v'][h']`.
pub fn vertex_pushforward(rho: f64, zeta: f64, p: &SixVertexParams) -> [[f64; 2]; 2] {
    let pv = [1.0 - rho, rho];
    let ph = [1.0 - zeta, zeta];
    let mut out = [[0.0; 2]; 2];
    for v in 0..2u8 {
        for h in 0..2u8 {
            let w_in = pv[v as usize] * ph[h as usize];
            for v2 in 0..2u8 {
                for h2 in 0..2u8 {
                    out[v2 as usize][h2 as usize] += w_in * spin_half_weight(v, h, v2, h2, p);
                }
            }
        }
    }
    out
}

/// Horizontal line density matched to a vertical density `rho` so that the
/// vertex pushforward preserves `Ber(rho) (x) Ber(zeta)`:
/// `zeta = (1-b1) rho / ((1-b2)(1-rho) + (1-b1) rho)`.
pub fn solve_product_zeta(rho: f64, p: &SixVertexParams) -> f64 {
    let num = (1.0 - p.b1) * rho;
    num / ((1.0 - p.b2) * (1.0 - rho) + num)
}

/// Horizontal density solving `q rho (1-zeta) = zeta (1-rho)`, the relation
/// under which the pushforward swaps the two marginals.
pub fn solve_frame_zeta(rho: f64, q: f64) -> f64 {
    q * rho / (1.0 - rho + q * rho)
}

/// Single-vertex product-stationarity check: with `zeta` solved from `rho`,
/// the output law must be exactly `Ber(rho) (x) Ber(zeta)`, independent.
pub fn local_stationarity_check(rho: f64, p: &SixVertexParams) -> ResidualReport {
    let zeta = solve_product_zeta(rho, p);
    let out = vertex_pushforward(rho, zeta, p);
    let mut res: f64 = 0.0;
    for v2 in 0..2 {
        for h2 in 0..2 {
            let target = (if v2 == 1 { rho } else { 1.0 - rho })
                * (if h2 == 1 { zeta } else { 1.0 - zeta });
            res = res.max((out[v2][h2] - target).abs());
        }
    }
    ResidualReport::new(
        "vertex product stationarity",
        format!("rho={rho}, b1={}, b2={}", p.b1, p.b2),
        res,
        1e-12,
    )
}

/// Single-vertex moving-frame identity: with `zeta` solving
/// `q rho (1-zeta) = zeta (1-rho)`, the outputs are exactly
/// `Ber(zeta) (x) Ber(rho)`, independent.
pub fn frame_local_check(rho: f64, p: &SixVertexParams) -> ResidualReport {
    let zeta = solve_frame_zeta(rho, p.q());
    let out = vertex_pushforward(rho, zeta, p);
    let mut res: f64 = 0.0;
    for v2 in 0..2 {
        for h2 in 0..2 {
            let target = (if v2 == 1 { zeta } else { 1.0 - zeta })
                * (if h2 == 1 { rho } else { 1.0 - rho });
            res = res.max((out[v2][h2] - target).abs());
        }
    }
    ResidualReport::new(
        "vertex frame identity",
        format!("rho={rho}, b1={}, b2={}", p.b1, p.b2),
        res,
        1e-12,
    )
}

/// Exhaustive one-step transition kernel of the windowed capacity-1
/// dynamics. The horizontal line through the window is determined by
/// conservation, so flights leaving the window contribute their exact tail
/// mass through the marginalized outgoing line.
pub struct TransferKernel {
    pub offset: i64,
    pub len: u32,
    pub shifted: bool,
    pub out_len: u32,
    pub zeta_in: f64,
    /// Row-major `(1 << len) x (1 << out_len)`; bit `i` of a state is the
    /// occupancy of site `offset + i`.
    pub matrix: Vec<f64>,
}

impl TransferKernel {
    pub fn entry(&self, s_in: usize, s_out: usize) -> f64 {
        self.matrix[s_in * (1 << self.out_len) + s_out]
    }

    pub fn row_sum(&self, s_in: usize) -> f64 {
        (0..1usize << self.out_len).map(|s| self.entry(s_in, s)).sum()
    }
}

/// Builds the exact kernel for per-site parameters `b_at(site)` and an
/// incoming line `Ber(zeta_in)`. With `shift_after` the output window drops
/// its leftmost site and relabels one site left (the moving-frame kernel).
pub fn build_transfer_kernel(
    offset: i64,
    len: u32,
    b_at: &dyn Fn(i64) -> SixVertexParams,
    zeta_in: f64,
    shift_after: bool,
) -> Result<TransferKernel> {
    if len == 0 || len > 12 {
        return Err(Error::BudgetExceeded(format!(
            "window length {len} outside the supported 1..=12"
        )));
    }
    if shift_after && len < 2 {
        return Err(Error::BudgetExceeded("shifted kernel needs length >= 2".into()));
    }
    let out_len = if shift_after { len - 1 } else { len };
    let n_in = 1usize << len;
    let n_out = 1usize << out_len;
    let mut matrix = vec![0.0; n_in * n_out];
    let params: Vec<SixVertexParams> = (0..len).map(|i| b_at(offset + i64::from(i))).collect();

    for s_in in 0..n_in {
        for s_full in 0..n_in {
            let mut w_total = 0.0;
            for (h0, w0) in [(0u8, 1.0 - zeta_in), (1u8, zeta_in)] {
                if w0 == 0.0 {
                    continue;
                }
                let mut w = w0;
                let mut h = h0;
                for i in 0..len {
                    let v = ((s_in >> i) & 1) as u8;
                    let v2 = ((s_full >> i) & 1) as u8;
                    let sum = v + h;
                    if v2 > sum || sum - v2 > 1 {
                        w = 0.0;
                        break;
                    }
                    let h2 = sum - v2;
                    w *= spin_half_weight(v, h, v2, h2, &params[i as usize]);
                    if w == 0.0 {
                        break;
                    }
                    h = h2;
                }
                w_total += w;
            }
            if w_total != 0.0 {
                let s_out = if shift_after { s_full >> 1 } else { s_full };
                matrix[s_in * n_out + s_out] += w_total;
            }
        }
    }

    let kernel = TransferKernel { offset, len, shifted: shift_after, out_len, zeta_in, matrix };
    for s in 0..n_in {
        let sum = kernel.row_sum(s);
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "kernel row {s} sums to {sum}"
            )));
        }
    }
    Ok(kernel)
}

/// Pushes the product measure through the kernel and measures the sup-norm
/// distance to the same product on the output window. For shifted kernels
/// the output index `i` is frame site `offset + i`, so the same density
/// function serves as the target (the relabeling absorbs the time step).
pub fn stationarity_residual(
    spec: &MeasureSpec,
    kernel: &TransferKernel,
    name: &str,
    tolerance: f64,
) -> Result<ResidualReport> {
    spec.validate()?;
    if spec.capacity() != 1 {
        return Err(Error::UnsupportedMeasure(
            "transfer kernels cover capacity-1 measures".into(),
        ));
    }
    let n_in = 1usize << kernel.len;
    let n_out = 1usize << kernel.out_len;
    let dens_in: Vec<f64> = (0..kernel.len)
        .map(|i| spec.mean(kernel.offset + i64::from(i)))
        .collect();
    let dens_out: Vec<f64> = (0..kernel.out_len)
        .map(|i| spec.mean(kernel.offset + i64::from(i)))
        .collect();

    let weight = |state: usize, dens: &[f64]| -> f64 {
        dens.iter()
            .enumerate()
            .map(|(i, &d)| if (state >> i) & 1 == 1 { d } else { 1.0 - d })
            .product()
    };

    let mut out = vec![0.0f64; n_out];
    for s_in in 0..n_in {
        let mu = weight(s_in, &dens_in);
        if mu == 0.0 {
            continue;
        }
        for s_out in 0..n_out {
            out[s_out] += mu * kernel.entry(s_in, s_out);
        }
    }
    let mut res: f64 = 0.0;
    for (s_out, &p_out) in out.iter().enumerate() {
        res = res.max((p_out - weight(s_out, &dens_out)).abs());
    }
    Ok(ResidualReport::new(
        name,
        format!(
            "offset={}, len={}, shifted={}, zeta={:.6}",
            kernel.offset, kernel.len, kernel.shifted, kernel.zeta_in
        ),
        res,
        tolerance,
    ))
}

/// Evaluates the fused-vertex grid sum: bottom and left line tuples drawn
/// from the reversed/forward block kernels, interior spin-1/2 vertices at
/// spectral parameters `alpha q^{i+j-2}`, top and right tuples collapsed to
/// their totals. Returns the resulting `(v, h) -> (v', h')` table.
fn fusion_grid_table(params: &ModelParams) -> Result<VertexWeightTensor> {
    let (cap_i, cap_j, q, alpha) = (params.cap_i, params.cap_j, params.q, params.alpha);
    let lam_bottom = LambdaKernel::reversed(cap_i, q);
    let lam_left = LambdaKernel::forward(cap_j, q);
    let cell: Vec<Vec<SixVertexParams>> = (1..=cap_i)
        .map(|i| {
            (1..=cap_j)
                .map(|j| spin_half_probabilities(alpha * q.powi((i + j) as i32 - 2), q))
                .collect()
        })
        .collect();

    let mut table = VertexWeightTensor::zeros(cap_i, cap_j);

    // Recursive walk over the grid cells in raster order (rows bottom to
    // top, cells left to right), carrying the current row's horizontal line
    // and the running column outputs.
    #[allow(clippy::too_many_arguments)]
    fn walk(
        cap_i: u32,
        cap_j: u32,
        cell: &[Vec<SixVertexParams>],
        left_bits: u32,
        i: u32,
        j: u32,
        h_cur: u8,
        col_v: &mut [u8],
        h_out_total: u32,
        weight: f64,
        sink: &mut dyn FnMut(u32, u32, f64),
    ) {
        if j > cap_j {
            let v_out: u32 = col_v.iter().map(|&b| u32::from(b)).sum();
            sink(v_out, h_out_total, weight);
            return;
        }
        if i > cap_i {
            // row completed; its outgoing line joins the right boundary
            let next_left = ((left_bits >> j) & 1) as u8;
            walk(
                cap_i,
                cap_j,
                cell,
                left_bits,
                1,
                j + 1,
                next_left,
                col_v,
                h_out_total + u32::from(h_cur),
                weight,
                sink,
            );
            return;
        }
        let v_in = col_v[(i - 1) as usize];
        let p = &cell[(i - 1) as usize][(j - 1) as usize];
        for v_out in 0..=1u8 {
            let sum = v_in + h_cur;
            if v_out > sum || sum - v_out > 1 {
                continue;
            }
            let h_out = sum - v_out;
            let w = spin_half_weight(v_in, h_cur, v_out, h_out, p);
            if w == 0.0 {
                continue;
            }
            col_v[(i - 1) as usize] = v_out;
            walk(
                cap_i,
                cap_j,
                cell,
                left_bits,
                i + 1,
                j,
                h_out,
                col_v,
                h_out_total,
                weight * w,
                sink,
            );
            col_v[(i - 1) as usize] = v_in;
        }
    }

    for v in 0..=cap_i {
        let bottom_row = lam_bottom.row(v)?;
        for h in 0..=cap_j {
            let left_row = lam_left.row(h)?;
            for (b_mask, &wb) in bottom_row.iter().enumerate() {
                if wb == 0.0 {
                    continue;
                }
                for (l_mask, &wl) in left_row.iter().enumerate() {
                    if wl == 0.0 {
                        continue;
                    }
                    let mut col_v: Vec<u8> =
                        (0..cap_i).map(|i| ((b_mask >> i) & 1) as u8).collect();
                    let h0 = (l_mask & 1) as u8;
                    let mut sink = |v_out: u32, h_out: u32, w: f64| {
                        let prev = table.get(v, h, v_out, h_out);
                        table.set(v, h, v_out, h_out, prev + w * wb * wl);
                    };
                    walk(
                        cap_i,
                        cap_j,
                        &cell,
                        l_mask as u32,
                        1,
                        1,
                        h0,
                        &mut col_v,
                        0,
                        1.0,
                        &mut sink,
                    );
                }
            }
        }
    }
    Ok(table)
}

/// Fusion identity: the higher-spin weight equals the grid sum, entrywise.
pub fn fusion_identity_check(params: &ModelParams) -> Result<ResidualReport> {
    if params.cap_i > 3 || params.cap_j > 3 {
        return Err(Error::BudgetExceeded(
            "fusion grid enumeration supports capacities up to 3".into(),
        ));
    }
    let lhs = build_l_tensor(params)?;
    let rhs = fusion_grid_table(params)?;
    let mut res: f64 = 0.0;
    for v in 0..=params.cap_i {
        for h in 0..=params.cap_j {
            for v2 in 0..=params.cap_i {
                for h2 in 0..=params.cap_j {
                    res = res.max((lhs.get(v, h, v2, h2) - rhs.get(v, h, v2, h2)).abs());
                }
            }
        }
    }
    Ok(ResidualReport::new(
        "fusion grid identity",
        format!(
            "I={}, J={}, q={}, alpha={}",
            params.cap_i, params.cap_j, params.q, params.alpha
        ),
        res,
        1e-9,
    ))
}

/// Column version of the fusion identity: a vertical stack of `J` vertices
/// with horizontal capacity 1 and spectral parameters `alpha q^{j-1}`,
/// entered through the forward block kernel, reproduces the fused weight.
pub fn column_fusion_check(params: &ModelParams) -> Result<ResidualReport> {
    if params.cap_i > 3 || params.cap_j > 3 {
        return Err(Error::BudgetExceeded(
            "column enumeration supports capacities up to 3".into(),
        ));
    }
    let (cap_i, cap_j, q, alpha) = (params.cap_i, params.cap_j, params.q, params.alpha);
    let lhs = build_l_tensor(params)?;
    let lam = LambdaKernel::forward(cap_j, q);
    let columns: Vec<VertexWeightTensor> = (1..=cap_j)
        .map(|j| build_l_tensor(&ModelParams::new(q, alpha * q.powi(j as i32 - 1), cap_i, 1)?))
        .collect::<Result<_>>()?;

    let mut res: f64 = 0.0;
    for v0 in 0..=cap_i {
        for h in 0..=cap_j {
            let row = lam.row(h)?;
            let mut table = vec![vec![0.0f64; cap_j as usize + 1]; cap_i as usize + 1];
            for (mask, &w_mask) in row.iter().enumerate() {
                if w_mask == 0.0 {
                    continue;
                }
                // DP up the column: state = (current vertical count, lines out)
                let mut states = vec![(v0, 0u32, w_mask)];
                for (j, column) in columns.iter().enumerate() {
                    let h_in = ((mask >> j) & 1) as u32;
                    let mut next = Vec::with_capacity(states.len() * 2);
                    for &(v, h_out_cnt, w) in &states {
                        for h_out in 0..=1u32 {
                            let total = v + h_in;
                            if h_out > total || total - h_out > cap_i {
                                continue;
                            }
                            let v_next = total - h_out;
                            let wv = column.get(v, h_in, v_next, h_out);
                            if wv == 0.0 {
                                continue;
                            }
                            next.push((v_next, h_out_cnt + h_out, w * wv));
                        }
                    }
                    states = next;
                }
                for &(v_fin, h_cnt, w) in &states {
                    table[v_fin as usize][h_cnt as usize] += w;
                }
            }
            for v2 in 0..=cap_i {
                for h2 in 0..=cap_j {
                    res = res
                        .max((lhs.get(v0, h, v2, h2) - table[v2 as usize][h2 as usize]).abs());
                }
            }
        }
    }
    Ok(ResidualReport::new(
        "column fusion identity",
        format!("I={cap_i}, J={cap_j}, q={q}, alpha={alpha}"),
        res,
        1e-9,
    ))
}

/// Reflection identity: the weight tensor equals the diagonal reflection of
/// the tensor with swapped capacities at inverted parameters.
pub fn reflection_check(params: &ModelParams) -> Result<ResidualReport> {
    let lhs = build_l_tensor(params)?;
    let mirrored = ModelParams::new(
        1.0 / params.q,
        1.0 / params.alpha,
        params.cap_j,
        params.cap_i,
    )?;
    let rhs = reflect_tensor(&build_l_tensor(&mirrored)?);
    let mut res: f64 = 0.0;
    for i1 in 0..=params.cap_i {
        for j1 in 0..=params.cap_j {
            for i2 in 0..=params.cap_i {
                for j2 in 0..=params.cap_j {
                    res = res.max((lhs.get(i1, j1, i2, j2) - rhs.get(i1, j1, i2, j2)).abs());
                }
            }
        }
    }
    Ok(ResidualReport::new(
        "reflection identity",
        format!(
            "I={}, J={}, q={}, alpha={}",
            params.cap_i, params.cap_j, params.q, params.alpha
        ),
        res,
        1e-10,
    ))
}

/// Pushes each reversed-kernel row through a row of `I` vertices with
/// horizontal capacity `J` at spectral parameters `alpha q^{i-1}` and
/// verifies that, conditioned on each conserved output total, adjacent
/// transpositions scale the outcome probability by exactly `q` (the image
/// stays q-inverse-exchangeable).
pub fn qexchangeability_check(params: &ModelParams) -> Result<ResidualReport> {
    let (cap_i, cap_j, q, alpha) = (params.cap_i, params.cap_j, params.q, params.alpha);
    if cap_i > 6 {
        return Err(Error::BudgetExceeded("row enumeration supports I <= 6".into()));
    }
    let lam = LambdaKernel::reversed(cap_i, q);
    let vertices: Vec<VertexWeightTensor> = (1..=cap_i)
        .map(|i| build_l_tensor(&ModelParams::new(q, alpha * q.powi(i as i32 - 1), 1, cap_j)?))
        .collect::<Result<_>>()?;

    let n_masks = 1usize << cap_i;
    let mut res: f64 = 0.0;
    for v in 0..=cap_i {
        let row = lam.row(v)?;
        for h_in in 0..=cap_j {
            let mut out = vec![0.0f64; n_masks];
            for (mask, &w_mask) in row.iter().enumerate() {
                if w_mask == 0.0 {
                    continue;
                }
                // state: (carry, partial output mask, weight)
                let mut states = vec![(h_in, 0usize, w_mask)];
                for (i, vertex) in vertices.iter().enumerate() {
                    let v_in = ((mask >> i) & 1) as u32;
                    let mut next = Vec::with_capacity(states.len() * 2);
                    for &(carry, out_mask, w) in &states {
                        for v_out in 0..=1u32 {
                            let total = v_in + carry;
                            if v_out > total || total - v_out > cap_j {
                                continue;
                            }
                            let h_out = total - v_out;
                            let wv = vertex.get(v_in, carry, v_out, h_out);
                            if wv == 0.0 {
                                continue;
                            }
                            next.push((h_out, out_mask | ((v_out as usize) << i), w * wv));
                        }
                    }
                    states = next;
                }
                for &(_, out_mask, w) in &states {
                    out[out_mask] += w;
                }
            }
            // ratio checks within each conserved total
            for mask in 0..n_masks as u32 {
                for r in 0..cap_i.saturating_sub(1) {
                    if (mask >> r) & 3 == 0b01 {
                        // (v_{r+1}, v_{r+2}) = (1, 0); the transposed tuple
                        // (0, 1) must be exactly q times less likely.
                        let swapped = mask ^ (0b11 << r);
                        let diff = out[mask as usize] - q * out[swapped as usize];
                        res = res.max(diff.abs());
                    }
                }
            }
        }
    }
    Ok(ResidualReport::new(
        "row q-exchangeability",
        format!("I={cap_i}, J={cap_j}, q={q}, alpha={alpha}"),
        res,
        1e-10,
    ))
}

/// Exact convolution of `n` Bernoulli laws with odds `gamma q^{i-1}` against
/// the q-negative-binomial pmf with `b = q^{-n}`, `p = -q^n gamma`.
pub fn qnb_sum_check(n: u32, gamma: f64, q: f64) -> Result<ResidualReport> {
    if n > 8 {
        return Err(Error::BudgetExceeded("convolution check supports n <= 8".into()));
    }
    let mut dist = vec![1.0f64];
    for i in 1..=n {
        let odds = q.powi(i as i32 - 1) * gamma;
        let p = odds / (1.0 + odds);
        let mut next = vec![0.0; dist.len() + 1];
        for (k, &w) in dist.iter().enumerate() {
            next[k] += w * (1.0 - p);
            next[k + 1] += w * p;
        }
        dist = next;
    }
    let mut res: f64 = 0.0;
    if gamma == 0.0 {
        // point mass at zero on both sides
        res = (dist[0] - 1.0).abs();
    } else {
        let qnb = QnbParams::from_k(n, -q.powi(n as i32) * gamma, q)?;
        for (k, &w) in dist.iter().enumerate() {
            res = res.max((qnb.pmf(k as u32) - w).abs());
        }
    }
    Ok(ResidualReport::new(
        "qnb convolution",
        format!("n={n}, gamma={gamma}, q={q}"),
        res,
        1e-10,
    ))
}

/// Entrywise agreement of the capacity-(1,1) tensor with the six closed-form
/// weights.
pub fn spin_half_reduction_check(q: f64, alpha: f64) -> Result<ResidualReport> {
    let params = ModelParams::new(q, alpha, 1, 1)?;
    let t = build_l_tensor(&params)?;
    let w = crate::qseries::six_vertex_weights(&spin_half_probabilities(alpha, q));
    let mut res: f64 = 0.0;
    for i1 in 0..=1 {
        for j1 in 0..=1 {
            for i2 in 0..=1 {
                for j2 in 0..=1 {
                    res = res.max((t.get(i1, j1, i2, j2) - w.get(i1, j1, i2, j2)).abs());
                }
            }
        }
    }
    Ok(ResidualReport::new(
        "spin-half reduction",
        format!("q={q}, alpha={alpha}"),
        res,
        1e-12,
    ))
}

/// The default exact verification suite: every report must pass at its
/// stated tolerance. Runs in well under a minute.
pub fn default_verification_suite() -> Result<Vec<ResidualReport>> {
    let mut reports = Vec::new();

    // spin-half reduction across both parameter regimes
    let mut worst_fwd: f64 = 0.0;
    for &q in &[1.5f64, 2.0, 3.0, 5.0, 8.0] {
        for c in [0.1, 0.35, 0.6, 0.9] {
            worst_fwd = worst_fwd.max(spin_half_reduction_check(q, -c / q)?.max_abs_residual);
        }
    }
    reports.push(ResidualReport::new(
        "spin-half reduction (q > 1 grid)",
        "20 points".into(),
        worst_fwd,
        1e-12,
    ));
    let mut worst_bwd: f64 = 0.0;
    for &q in &[0.2f64, 0.4, 0.6, 0.8, 0.9] {
        for c in [1.5, 3.0, 10.0] {
            worst_bwd = worst_bwd.max(spin_half_reduction_check(q, -c / q)?.max_abs_residual);
        }
    }
    reports.push(ResidualReport::new(
        "spin-half reduction (q < 1 grid)",
        "15 points".into(),
        worst_bwd,
        1e-12,
    ));

    // single-vertex identities on dense grids
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut worst: f64 = 0.0;
    for &rho in &grid {
        for &b1 in &grid {
            for &b2 in &grid {
                let p = SixVertexParams::new(b1, b2)?;
                worst = worst.max(local_stationarity_check(rho, &p).max_abs_residual);
            }
        }
    }
    reports.push(ResidualReport::new(
        "vertex product stationarity (5x5x5 grid)",
        "rho, b1, b2 in {0.1..0.9}".into(),
        worst,
        1e-12,
    ));
    let mut worst: f64 = 0.0;
    for &rho in &grid {
        for &b2 in &[0.1, 0.2, 0.3, 0.45, 0.15] {
            for &q in &[0.5f64, 1.5, 2.0, 3.0, 0.25] {
                let b1 = q * b2;
                if b1 <= 0.0 || b1 >= 1.0 {
                    continue;
                }
                let p = SixVertexParams::new(b1, b2)?;
                worst = worst.max(frame_local_check(rho, &p).max_abs_residual);
            }
        }
    }
    reports.push(ResidualReport::new(
        "vertex frame identity (grid)",
        "rho x (q, b2) grid".into(),
        worst,
        1e-12,
    ));

    // windowed stationarity, product measures
    for &(rho, b1, b2) in &[(0.5, 2.0 / 3.0, 1.0 / 3.0), (0.3, 0.4, 0.8), (0.25, 0.8, 0.5)] {
        for &len in &[2u32, 4, 6] {
            let p = SixVertexParams::new(b1, b2)?;
            let spec = MeasureSpec::BernoulliProduct { rho };
            let zeta = crate::measures::boundary_current_law(&spec, &p, -(len as i64) / 2, 0)?;
            let kernel =
                build_transfer_kernel(-(len as i64) / 2, len, &|_| p, zeta, false)?;
            reports.push(stationarity_residual(
                &spec,
                &kernel,
                &format!("window product stationarity L={len} rho={rho}"),
                1e-10,
            )?);
        }
    }

    // windowed stationarity, blocking profile under the moving frame
    for &(q, b2) in &[(2.0, 1.0 / 3.0), (0.5, 0.6), (3.0, 0.3)] {
        for &len in &[2u32, 4, 6] {
            let p = SixVertexParams::new(q * b2, b2)?;
            let spec = MeasureSpec::Blocking { q, t: 0 };
            let offset = -(len as i64) / 2;
            let zeta = crate::measures::boundary_current_law(&spec, &p, offset, 0)?;
            let kernel = build_transfer_kernel(offset, len + 1, &|_| p, zeta, true)?;
            reports.push(stationarity_residual(
                &spec,
                &kernel,
                &format!("moving-frame blocking stationarity L={len} q={q}"),
                1e-10,
            )?);
        }
    }

    // windowed stationarity of the period-I product under the unfused
    // space-time periodic dynamics, at every time phase
    for &(q, alpha, cap_i, cap_j) in &[(2.0, -0.05, 2u32, 2u32), (2.0, -0.02, 3, 2)] {
        let params = ModelParams::new(q, alpha, cap_i, cap_j)?;
        let rho = 0.4;
        let spec = MeasureSpec::Inhomogeneous { rho, q, cap_i };
        for t in 0..cap_j {
            let zeta = crate::measures::inhomogeneous_boundary_law(&params, rho, t);
            let b_at = |x: i64| crate::qseries::b_field(x, t, &params);
            let kernel = build_transfer_kernel(-3, 6, &b_at, zeta, false)?;
            reports.push(stationarity_residual(
                &spec,
                &kernel,
                &format!("unfused product stationarity I={cap_i} J={cap_j} t={t}"),
                1e-10,
            )?);
        }
    }

    // fusion identities
    for &(i, j, q, alpha) in &[
        (1u32, 1u32, 2.0, -0.25),
        (2, 1, 2.0, -0.1),
        (1, 2, 2.0, -0.1),
        (2, 2, 2.0, -0.05),
        (2, 2, 0.5, -20.0),
    ] {
        let params = ModelParams::new(q, alpha, i, j)?;
        reports.push(fusion_identity_check(&params)?);
        reports.push(column_fusion_check(&params)?);
    }

    // reflection identity
    for &(i, j) in &[(1u32, 2u32), (2, 1), (2, 2)] {
        let params = ModelParams::new(2.0, -0.05, i, j)?;
        reports.push(reflection_check(&params)?);
    }

    // qnb convolution
    let mut worst: f64 = 0.0;
    for n in 1..=6u32 {
        for &gamma in &[0.0, 0.25, 1.0, 2.0] {
            for &q in &[0.5, 2.0] {
                worst = worst.max(qnb_sum_check(n, gamma, q)?.max_abs_residual);
            }
        }
    }
    reports.push(ResidualReport::new(
        "qnb convolution (n <= 6 grid)",
        "gamma in {0, 0.25, 1, 2}, q in {0.5, 2}".into(),
        worst,
        1e-10,
    ));

    // q-exchangeability preservation along a vertex row
    for &(i, j, q, alpha) in &[
        (1u32, 1u32, 2.0, -0.25),
        (2, 1, 2.0, -0.1),
        (3, 1, 2.0, -0.05),
        (4, 1, 2.0, -0.02),
        (2, 2, 2.0, -0.05),
        (4, 1, 0.5, -40.0),
    ] {
        let params = ModelParams::new(q, alpha, i, j)?;
        reports.push(qexchangeability_check(&params)?);
    }

    Ok(reports)
}
