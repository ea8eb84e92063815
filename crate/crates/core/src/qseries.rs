//! q-series numerics and the stochastic vertex weight tensor.
//!
//! Provides the q-Pochhammer symbol, the regularized terminating basic
//! hypergeometric series `4-phibar-3`, the higher-spin weight tensor
//! `L^{I,J}` with spectral parameter `alpha`, the reduction to the six
//! spin-1/2 weights, and the space-time periodic parameter field
//! `(b1(x,t), b2(x,t))` that drives the unfused inhomogeneous dynamics.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of the higher-spin model: asymmetry `q`, spectral parameter
/// `alpha`, vertical line capacity `cap_i` and horizontal line capacity
/// `cap_j`.
///
/// Stochasticity of the weight tensor requires one of the two regimes:
/// `0 < q < 1` with `alpha < -q^{-I-J+1}`, or `q > 1` with
/// `-q^{-I-J+1} < alpha < 0`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: f64,
    pub alpha: f64,
    pub cap_i: u32,
    pub cap_j: u32,
}

impl ModelParams {
    pub fn new(q: f64, alpha: f64, cap_i: u32, cap_j: u32) -> Result<Self> {
        let p = ModelParams { q, alpha, cap_i, cap_j };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cap_i < 1 || self.cap_j < 1 {
            return Err(Error::InvalidParams(format!(
                "capacities must be >= 1 (got I={}, J={})",
                self.cap_i, self.cap_j
            )));
        }
        if !(self.q.is_finite() && self.alpha.is_finite()) || self.q <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "q must be a positive real and alpha finite (got q={}, alpha={})",
                self.q, self.alpha
            )));
        }
        let bound = -self.q.powi(-((self.cap_i + self.cap_j) as i32) + 1);
        let ok = if self.q < 1.0 {
            self.alpha < bound
        } else if self.q > 1.0 {
            self.alpha > bound && self.alpha < 0.0
        } else {
            false
        };
        if !ok {
            return Err(Error::InvalidParams(format!(
                "(q, alpha) = ({}, {}) violates the stochasticity conditions: \
                 need 0 < q < 1 with alpha < -q^(-I-J+1) = {bound}, or q > 1 with \
                 {bound} < alpha < 0",
                self.q, self.alpha
            )));
        }
        Ok(())
    }

    /// `nu = q^{-I}`.
    pub fn nu(&self) -> f64 {
        self.q.powi(-(self.cap_i as i32))
    }
}

/// The two spin-1/2 vertex probabilities: a particle stays put with
/// probability `b1`, a travelling line keeps moving with probability `b2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SixVertexParams {
    pub b1: f64,
    pub b2: f64,
}

impl SixVertexParams {
    pub fn new(b1: f64, b2: f64) -> Result<Self> {
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(Error::InvalidParams(format!(
                "b1, b2 must lie in (0,1) (got b1={b1}, b2={b2})"
            )));
        }
        Ok(SixVertexParams { b1, b2 })
    }

    /// Derived asymmetry `q = b1 / b2`.
    pub fn q(&self) -> f64 {
        self.b1 / self.b2
    }
}

/// q-Pochhammer symbol `(b; q)_n`.
///
/// For `n > 0` the product of `n` factors `(1 - b q^k)`, `1` for `n = 0`,
/// and the inverse product `prod_{k=0}^{-n-1} (1 - b q^{n+k})^{-1}` for
/// `n < 0`. A vanishing factor in the negative-order case is an error.
pub fn q_pochhammer(b: f64, q: f64, n: i32) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    if n > 0 {
        let mut prod = 1.0;
        let mut bq = b;
        for _ in 0..n {
            prod *= 1.0 - bq;
            bq *= q;
        }
        return Ok(prod);
    }
    let mut prod = 1.0;
    let mut bq = b * q.powi(n);
    for _ in 0..(-n) {
        let factor = 1.0 - bq;
        if factor.abs() < 1e-14 {
            return Err(Error::PochhammerZero { b, q, n });
        }
        prod /= factor;
        bq *= q;
    }
    Ok(prod)
}

/// Regularized terminating basic hypergeometric series.
///
/// `sum_{k=0..n} z^k (q^{-n};q)_k / (q;q)_k prod_i (a_i;q)_k (b_i q^k;q)_{n-k}`.
/// The sum is accumulated in index order with compensated summation.
pub fn reg_hypergeometric_4phi3(
    n_top: u32,
    a: [f64; 3],
    b: [f64; 3],
    q: f64,
    z: f64,
) -> Result<f64> {
    let n = n_top as i32;
    let q_neg_n = q.powi(-n);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for k in 0..=n {
        let mut term = z.powi(k) * q_pochhammer(q_neg_n, q, k)? / q_pochhammer(q, q, k)?;
        for i in 0..3 {
            term *= q_pochhammer(a[i], q, k)?;
            term *= q_pochhammer(b[i] * q.powi(k), q, n - k)?;
        }
        // Kahan step.
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    Ok(sum)
}

/// Stochastic vertex weight table indexed by `(i1, j1; i2, j2)` with
/// `i1, i2 in 0..=cap_i` and `j1, j2 in 0..=cap_j`. Rows `(i1, j1)` are
/// probability distributions over `(i2, j2)` supported on conserving
/// outcomes `i1 + j1 = i2 + j2`.
#[derive(Clone, Debug)]
pub struct VertexWeightTensor {
    pub cap_i: u32,
    pub cap_j: u32,
    entries: Vec<f64>,
    /// Largest raw `|row sum - 1|` observed before row normalization.
    pub max_row_defect: f64,
}

impl VertexWeightTensor {
    pub fn zeros(cap_i: u32, cap_j: u32) -> Self {
        let n = ((cap_i + 1) * (cap_j + 1)) as usize;
        VertexWeightTensor {
            cap_i,
            cap_j,
            entries: vec![0.0; n * n],
            max_row_defect: 0.0,
        }
    }

    #[inline]
    fn idx(&self, i1: u32, j1: u32, i2: u32, j2: u32) -> usize {
        let nj = self.cap_j + 1;
        let ni = self.cap_i + 1;
        let row = i1 * nj + j1;
        let col = i2 * nj + j2;
        (row * ni * nj + col) as usize
    }

    #[inline]
    pub fn get(&self, i1: u32, j1: u32, i2: u32, j2: u32) -> f64 {
        self.entries[self.idx(i1, j1, i2, j2)]
    }

    pub fn set(&mut self, i1: u32, j1: u32, i2: u32, j2: u32, w: f64) {
        let k = self.idx(i1, j1, i2, j2);
        self.entries[k] = w;
    }

    pub fn row_sum(&self, i1: u32, j1: u32) -> f64 {
        let mut s = 0.0;
        for i2 in 0..=self.cap_i {
            for j2 in 0..=self.cap_j {
                s += self.get(i1, j1, i2, j2);
            }
        }
        s
    }

    /// Samples `(i2, j2)` from the row `(i1, j1)` using one uniform draw.
    /// Walks conserving outcomes in lexicographic order.
    pub fn sample_row(&self, i1: u32, j1: u32, u: f64) -> (u32, u32) {
        let total = i1 + j1;
        let mut acc = 0.0;
        let mut last = (i1, j1);
        for i2 in 0..=self.cap_i {
            if total < i2 || total - i2 > self.cap_j {
                continue;
            }
            let j2 = total - i2;
            let w = self.get(i1, j1, i2, j2);
            if w > 0.0 {
                last = (i2, j2);
                acc += w;
                if u < acc {
                    return (i2, j2);
                }
            }
        }
        last
    }

    /// Checks conservation support, nonnegativity and row stochasticity.
    pub fn validate(&self) -> Result<()> {
        for i1 in 0..=self.cap_i {
            for j1 in 0..=self.cap_j {
                let mut sum = 0.0;
                for i2 in 0..=self.cap_i {
                    for j2 in 0..=self.cap_j {
                        let w = self.get(i1, j1, i2, j2);
                        if i1 + j1 != i2 + j2 && w != 0.0 {
                            return Err(Error::InvalidParams(format!(
                                "non-conserving entry ({i1},{j1};{i2},{j2}) = {w}"
                            )));
                        }
                        if w < 0.0 {
                            return Err(Error::InvalidParams(format!(
                                "negative entry ({i1},{j1};{i2},{j2}) = {w}"
                            )));
                        }
                        sum += w;
                    }
                }
                if (sum - 1.0).abs() > 1e-10 {
                    return Err(Error::NotStochastic { i1, j1, sum });
                }
            }
        }
        Ok(())
    }

    /// JSON dump listing only the nonzero entries.
    pub fn dump_json(&self, q: f64, alpha: f64) -> serde_json::Value {
        let mut entries = Vec::new();
        for i1 in 0..=self.cap_i {
            for j1 in 0..=self.cap_j {
                for i2 in 0..=self.cap_i {
                    for j2 in 0..=self.cap_j {
                        let w = self.get(i1, j1, i2, j2);
                        if w != 0.0 {
                            entries.push(serde_json::json!({
                                "i1": i1, "j1": j1, "i2": i2, "j2": j2, "w": w
                            }));
                        }
                    }
                }
            }
        }
        serde_json::json!({
            "I": self.cap_i,
            "J": self.cap_j,
            "q": q,
            "alpha": alpha,
            "entries": entries,
        })
    }
}

/// Builds the higher-spin weight tensor from the explicit `4-phibar-3`
/// formula with `nu = q^{-I}`. Entries in `[-1e-12, 0)` are clamped to zero
/// and rows are renormalized when their raw sum deviates from 1 by less than
/// `1e-8`; a larger deviation signals a numerics bug and is an error.
pub fn build_l_tensor(params: &ModelParams) -> Result<VertexWeightTensor> {
    params.validate()?;
    let (q, alpha) = (params.q, params.alpha);
    let (cap_i, cap_j) = (params.cap_i, params.cap_j);
    let nu = params.nu();
    let jj = cap_j as i32;
    let mut t = VertexWeightTensor::zeros(cap_i, cap_j);

    for i1 in 0..=cap_i {
        for j1 in 0..=cap_j {
            for i2 in 0..=cap_i {
                for j2 in 0..=cap_j {
                    if i1 + j1 != i2 + j2 {
                        continue;
                    }
                    let (i1i, j1i, i2i, j2i) = (i1 as i32, j1 as i32, i2 as i32, j2 as i32);
                    let e4 = (2 * j1i - j1i * j1i) - (2 * j2i - j2i * j2i)
                        + i2i * i2i
                        + i1i * i1i;
                    let e2 = i2i * (j2i - 1) + i1i * j1i;
                    let q_pow = q.powf(e4 as f64 / 4.0 + e2 as f64 / 2.0);
                    let pref = q_pow
                        * nu.powi(j1i - i2i)
                        * alpha.powi(j2i - j1i + i2i)
                        * q_pochhammer(-alpha / nu, q, j2i - i1i)?;
                    let denom = q_pochhammer(q, q, i2i)?
                        * q_pochhammer(-alpha, q, i2i + j2i)?
                        * q_pochhammer(q.powi(jj + 1 - j1i), q, j1i - j2i)?;
                    let a = [q.powi(-i1i), -alpha * q.powi(jj), -q * nu / alpha];
                    let b = [nu, q.powi(1 + j2i - i1i), q.powi(jj + 1 - i2i - j2i)];
                    let phi = reg_hypergeometric_4phi3(i2, a, b, q, q)?;
                    t.set(i1, j1, i2, j2, pref / denom * phi);
                }
            }
        }
    }

    finalize_rows(&mut t)
}

/// Clamp tiny negatives, record the worst raw row defect, renormalize.
fn finalize_rows(t: &mut VertexWeightTensor) -> Result<VertexWeightTensor> {
    let mut max_defect = 0.0f64;
    for i1 in 0..=t.cap_i {
        for j1 in 0..=t.cap_j {
            let mut sum = 0.0;
            for i2 in 0..=t.cap_i {
                for j2 in 0..=t.cap_j {
                    let w = t.get(i1, j1, i2, j2);
                    if w < 0.0 {
                        if w < -1e-12 {
                            return Err(Error::InvalidParams(format!(
                                "tensor entry ({i1},{j1};{i2},{j2}) = {w} below -1e-12"
                            )));
                        }
                        t.set(i1, j1, i2, j2, 0.0);
                    } else {
                        sum += w;
                    }
                }
            }
            let defect = (sum - 1.0).abs();
            if defect > 1e-8 {
                return Err(Error::NotStochastic { i1, j1, sum });
            }
            max_defect = max_defect.max(defect);
            for i2 in 0..=t.cap_i {
                for j2 in 0..=t.cap_j {
                    let w = t.get(i1, j1, i2, j2);
                    if w > 0.0 {
                        t.set(i1, j1, i2, j2, w / sum);
                    }
                }
            }
        }
    }
    t.max_row_defect = max_defect;
    Ok(t.clone())
}

/// The spin-1/2 weight table: `(0,0;0,0) = (1,1;1,1) = 1`,
/// `(0,1;0,1) = b2`, `(0,1;1,0) = 1-b2`, `(1,0;1,0) = b1`,
/// `(1,0;0,1) = 1-b1`.
pub fn six_vertex_weights(p: &SixVertexParams) -> VertexWeightTensor {
    let mut t = VertexWeightTensor::zeros(1, 1);
    t.set(0, 0, 0, 0, 1.0);
    t.set(1, 1, 1, 1, 1.0);
    t.set(0, 1, 0, 1, p.b2);
    t.set(0, 1, 1, 0, 1.0 - p.b2);
    t.set(1, 0, 1, 0, p.b1);
    t.set(1, 0, 0, 1, 1.0 - p.b1);
    t
}

/// Reflection in the diagonal: output entry `(j1, i1; j2, i2)` equals the
/// input entry `(i1, j1; i2, j2)`; vertical and horizontal capacities swap.
pub fn reflect_tensor(t: &VertexWeightTensor) -> VertexWeightTensor {
    let mut out = VertexWeightTensor::zeros(t.cap_j, t.cap_i);
    out.max_row_defect = t.max_row_defect;
    for i1 in 0..=t.cap_i {
        for j1 in 0..=t.cap_j {
            for i2 in 0..=t.cap_i {
                for j2 in 0..=t.cap_j {
                    out.set(j1, i1, j2, i2, t.get(i1, j1, i2, j2));
                }
            }
        }
    }
    out
}

/// Nonnegative remainder `a mod b` for all integers `a`.
#[inline]
pub fn mod_floor(a: i64, b: u32) -> u32 {
    (a.rem_euclid(i64::from(b))) as u32
}

/// Closed-form spin-1/2 probabilities at effective spectral parameter
/// `alpha_eff`: `b1 = (1 + alpha_eff q) / (1 + alpha_eff)`,
/// `b2 = (alpha_eff + 1/q) / (1 + alpha_eff)`.
pub fn spin_half_probabilities(alpha_eff: f64, q: f64) -> SixVertexParams {
    let denom = 1.0 + alpha_eff;
    SixVertexParams {
        b1: (1.0 + alpha_eff * q) / denom,
        b2: (alpha_eff + 1.0 / q) / denom,
    }
}

/// Space-time periodic parameter field: with `beta(x,t) = (x mod I) + (t mod J)`
/// (nonnegative remainders), returns the spin-1/2 probabilities at effective
/// spectral parameter `alpha q^beta`. Periodic: `b_i(x+I, t) = b_i(x, t+J)
/// = b_i(x, t)` bitwise.
pub fn b_field(x: i64, t: u32, params: &ModelParams) -> SixVertexParams {
    let beta = mod_floor(x, params.cap_i) + mod_floor(i64::from(t), params.cap_j);
    let alpha_eff = params.alpha * params.q.powi(beta as i32);
    let p = spin_half_probabilities(alpha_eff, params.q);
    debug_assert!(p.b1 > 0.0 && p.b1 < 1.0 && p.b2 > 0.0 && p.b2 < 1.0);
    p
}
