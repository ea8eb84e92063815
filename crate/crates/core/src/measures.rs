//! Product measures, their exact site densities, samplers, boundary current
//! laws, and the q-exchangeable block kernels.
//!
//! Covers homogeneous Bernoulli products, the blocking profile (geometric
//! odds `q^{-k+t}`), the period-`I` inhomogeneous Bernoulli product, and
//! q-negative-binomial products for the higher-spin state space, together
//! with the forward/reversed block kernels used by fusion.

use crate::lattice::OccupancyWindow;
use crate::qseries::{mod_floor, q_pochhammer, ModelParams, SixVertexParams};
use crate::rng::Stream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of a q-negative-binomial law with `b = q^{-K}` for an integer
/// `K >= 1`, in which case the distribution is supported on `{0..K}` and the
/// infinite-product normalizer telescopes to a `K`-term product.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QnbParams {
    pub b: f64,
    pub p: f64,
    pub q: f64,
    /// The integer `K` with `b = q^{-K}`.
    pub k_max: u32,
}

impl QnbParams {
    pub fn new(b: f64, p: f64, q: f64) -> Result<Self> {
        if !(q > 0.0) || q == 1.0 {
            return Err(Error::UnsupportedQnb(format!("need q > 0, q != 1 (got {q})")));
        }
        let k_est = -(b.ln()) / q.ln();
        let k_round = k_est.round();
        if !(k_round >= 1.0 && k_round <= 64.0) || (b - q.powi(-(k_round as i32))).abs() > 1e-12 {
            return Err(Error::UnsupportedQnb(format!(
                "b = {b} is not q^-K for an integer K >= 1 (q = {q})"
            )));
        }
        let params = QnbParams { b, p, q, k_max: k_round as u32 };
        // The supported regimes have p < 0, which keeps every pmf value
        // nonnegative; verify and check total mass.
        let mut total = 0.0;
        for n in 0..=params.k_max {
            let w = params.pmf(n);
            if w < -1e-12 {
                return Err(Error::UnsupportedQnb(format!(
                    "pmf({n}) = {w} negative for b={b}, p={p}, q={q}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::UnsupportedQnb(format!(
                "pmf sums to {total}, expected 1 (b={b}, p={p}, q={q})"
            )));
        }
        Ok(params)
    }

    /// Convenience constructor from the integer support bound.
    pub fn from_k(k: u32, p: f64, q: f64) -> Result<Self> {
        Self::new(q.powi(-(k as i32)), p, q)
    }

    /// `P(X = n) = p^n (b;q)_n / (q;q)_n * R`, where the normalizer
    /// `R = 1 / prod_{m=1..K} (1 - p q^{-m})` is the telescoped value of
    /// `(p;q)_inf / (pb;q)_inf`; zero for `n > K`.
    pub fn pmf(&self, n: u32) -> f64 {
        if n > self.k_max {
            return 0.0;
        }
        let mut r = 1.0;
        for m in 1..=self.k_max {
            r *= 1.0 - self.p * self.q.powi(-(m as i32));
        }
        let num = self.p.powi(n as i32) * q_pochhammer(self.b, self.q, n as i32).unwrap();
        let den = q_pochhammer(self.q, self.q, n as i32).unwrap();
        (num / den / r).max(0.0)
    }

    pub fn density(&self) -> Vec<f64> {
        (0..=self.k_max).map(|n| self.pmf(n)).collect()
    }
}

/// A site-indexed product measure description with exact density evaluators.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSpec {
    /// Homogeneous Bernoulli product with density `rho` at every site.
    BernoulliProduct { rho: f64 },
    /// Blocking profile: `Ber(q^{-k+t} / (1 + q^{-k+t}))` at site `k`.
    Blocking { q: f64, t: i64 },
    /// Period-`I` inhomogeneous product:
    /// `Ber(rho q^m / (1 - rho + rho q^m))` with `m = (I-1-k) mod I`.
    Inhomogeneous { rho: f64, q: f64, cap_i: u32 },
    /// Homogeneous q-negative-binomial product
    /// `qNB(q^{-I}, -q^I rho / (1-rho))` at every site.
    QnbProduct { rho: f64, q: f64, cap_i: u32 },
    /// Higher-spin blocking product `qNB(q^{-I}, -q^{-kI+1})` at site `k`.
    QnbBlocking { q: f64, cap_i: u32 },
}

impl MeasureSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MeasureSpec::BernoulliProduct { rho } => {
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::InvalidParams(format!("rho = {rho} outside [0,1]")));
                }
            }
            MeasureSpec::Blocking { q, .. } => {
                if !(q > 0.0) || q == 1.0 {
                    return Err(Error::InvalidParams(format!("blocking needs q > 0, q != 1 (got {q})")));
                }
            }
            MeasureSpec::Inhomogeneous { rho, q, cap_i } => {
                if !(0.0..=1.0).contains(&rho) || !(q > 0.0) || cap_i < 1 {
                    return Err(Error::InvalidParams(
                        "inhomogeneous product needs rho in [0,1], q > 0, I >= 1".into(),
                    ));
                }
            }
            MeasureSpec::QnbProduct { rho, q, cap_i } => {
                if !(0.0..=1.0).contains(&rho) || !(q > 0.0) || q == 1.0 || cap_i < 1 {
                    return Err(Error::InvalidParams(
                        "qnb product needs rho in [0,1], q > 0, q != 1, I >= 1".into(),
                    ));
                }
                if rho < 1.0 && rho > 0.0 {
                    QnbParams::from_k(cap_i, -q.powi(cap_i as i32) * rho / (1.0 - rho), q)?;
                }
            }
            MeasureSpec::QnbBlocking { q, cap_i } => {
                if !(q > 1.0) || cap_i < 1 {
                    return Err(Error::InvalidParams(
                        "higher-spin blocking product needs q > 1, I >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Per-site occupancy capacity.
    pub fn capacity(&self) -> u8 {
        match *self {
            MeasureSpec::BernoulliProduct { .. }
            | MeasureSpec::Blocking { .. }
            | MeasureSpec::Inhomogeneous { .. } => 1,
            MeasureSpec::QnbProduct { cap_i, .. } | MeasureSpec::QnbBlocking { cap_i, .. } => {
                cap_i.min(255) as u8
            }
        }
    }

    /// Exact distribution over `{0..capacity}` at an absolute site.
    pub fn density(&self, site: i64) -> Vec<f64> {
        match *self {
            MeasureSpec::BernoulliProduct { rho } => vec![1.0 - rho, rho],
            MeasureSpec::Blocking { q, t } => {
                // p = q^e / (1 + q^e) written as 1 / (1 + q^-e) so that an
                // overflowing power degrades to exactly 0 or 1.
                let e = (t - site).clamp(-600, 600) as i32;
                let p = 1.0 / (1.0 + q.powi(-e));
                vec![1.0 - p, p]
            }
            MeasureSpec::Inhomogeneous { rho, q, cap_i } => {
                let m = mod_floor(cap_i as i64 - 1 - site, cap_i);
                let num = rho * q.powi(m as i32);
                let p = num / (1.0 - rho + num);
                vec![1.0 - p, p]
            }
            MeasureSpec::QnbProduct { rho, q, cap_i } => {
                if rho == 0.0 {
                    let mut v = vec![0.0; cap_i as usize + 1];
                    v[0] = 1.0;
                    v
                } else if rho == 1.0 {
                    let mut v = vec![0.0; cap_i as usize + 1];
                    v[cap_i as usize] = 1.0;
                    v
                } else {
                    let p = -q.powi(cap_i as i32) * rho / (1.0 - rho);
                    QnbParams::from_k(cap_i, p, q).expect("validated").density()
                }
            }
            MeasureSpec::QnbBlocking { q, cap_i } => {
                // p = -q^{-kI+1}; for deep sites the law degenerates to a
                // point mass at I (left) or 0 (right), which the pmf formula
                // reproduces but with overflowing intermediates, so clamp.
                let e = -site * i64::from(cap_i) + 1;
                if e > 500 {
                    let mut v = vec![0.0; cap_i as usize + 1];
                    v[cap_i as usize] = 1.0;
                    return v;
                }
                if e < -500 {
                    let mut v = vec![0.0; cap_i as usize + 1];
                    v[0] = 1.0;
                    return v;
                }
                let p = -q.powi(e as i32);
                QnbParams::from_k(cap_i, p, q).expect("validated").density()
            }
        }
    }

    /// Mean occupancy at a site.
    pub fn mean(&self, site: i64) -> f64 {
        self.density(site)
            .iter()
            .enumerate()
            .map(|(n, w)| n as f64 * w)
            .sum()
    }
}

/// Direction of a block kernel: the forward kernel weighs a tuple by
/// `q^{sum (r-1) v_r}`; the reversed kernel is the forward kernel read on
/// the reversed tuple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaDirection {
    Forward,
    Reversed,
}

/// The q-exchangeable block kernel mapping a block occupancy `v in {0..n}`
/// to bit tuples in `{0,1}^n` with coordinate sum `v`.
#[derive(Clone, Copy, Debug)]
pub struct LambdaKernel {
    pub n: u32,
    pub q: f64,
    pub direction: LambdaDirection,
}

impl LambdaKernel {
    pub fn forward(n: u32, q: f64) -> Self {
        LambdaKernel { n, q, direction: LambdaDirection::Forward }
    }

    pub fn reversed(n: u32, q: f64) -> Self {
        LambdaKernel { n, q, direction: LambdaDirection::Reversed }
    }

    /// Unnormalized weight of the tuple encoded by `mask` (bit `r-1` holds
    /// the `r`-th coordinate).
    fn weight(&self, mask: u32) -> f64 {
        let mut e = 0i32;
        for r in 0..self.n {
            let bit = match self.direction {
                LambdaDirection::Forward => (mask >> r) & 1,
                LambdaDirection::Reversed => (mask >> (self.n - 1 - r)) & 1,
            };
            if bit == 1 {
                e += r as i32;
            }
        }
        self.q.powi(e)
    }

    /// Probability row over all `2^n` tuples for block value `v`, supported
    /// exactly on tuples with coordinate sum `v`.
    pub fn row(&self, v: u32) -> Result<Vec<f64>> {
        if v > self.n {
            return Err(Error::OutOfRange(format!(
                "block value {v} exceeds block size {}",
                self.n
            )));
        }
        let size = 1usize << self.n;
        let mut weights = vec![0.0; size];
        let mut z = 0.0;
        for mask in 0..size as u32 {
            if mask.count_ones() == v {
                let w = self.weight(mask);
                weights[mask as usize] = w;
                z += w;
            }
        }
        for w in &mut weights {
            *w /= z;
        }
        Ok(weights)
    }

    /// Samples a tuple with block value `v`, returned as bits `v_1..v_n`.
    pub fn sample(&self, v: u32, stream: &mut Stream) -> Result<Vec<u8>> {
        let row = self.row(v)?;
        let mask = stream.pick_weighted(&row) as u32;
        Ok((0..self.n).map(|r| ((mask >> r) & 1) as u8).collect())
    }
}

/// Distribution of the incoming current line at the left edge of a window.
///
/// For the homogeneous Bernoulli product the local stationarity relation
/// `(1-b1) rho (1-zeta) = zeta (1-rho) (1-b2)` pins
/// `zeta = (1-b1) rho / ((1-b2)(1-rho) + (1-b1) rho)`. For the blocking
/// profile the current across the bond left of `x0` is Bernoulli with odds
/// `q^{-x0+1+t}`. Other measures are not supported.
pub fn boundary_current_law(
    spec: &MeasureSpec,
    p: &SixVertexParams,
    x0: i64,
    t: i64,
) -> Result<f64> {
    spec.validate()?;
    match *spec {
        MeasureSpec::BernoulliProduct { rho } => {
            let num = (1.0 - p.b1) * rho;
            Ok(num / ((1.0 - p.b2) * (1.0 - rho) + num))
        }
        MeasureSpec::Blocking { q, t: t_spec } => {
            if (p.q() - q).abs() > 1e-9 {
                return Err(Error::InvalidParams(format!(
                    "blocking q = {q} does not match b1/b2 = {}",
                    p.q()
                )));
            }
            let e = (-x0 + 1 + t_spec + t).clamp(-600, 600) as i32;
            Ok(1.0 / (1.0 + q.powi(-e)))
        }
        _ => Err(Error::UnsupportedMeasure(
            "boundary current law is only derived for bernoulli_product and blocking".into(),
        )),
    }
}

/// Boundary current parameter for the period-`(I,J)` inhomogeneous product
/// at update time `t`: `zeta(t) = -alpha rho q^{I + (t mod J)} /
/// (1 - rho - alpha rho q^{I + (t mod J)})`. Independent of the site.
pub fn inhomogeneous_boundary_law(params: &ModelParams, rho: f64, t: u32) -> f64 {
    let e = params.cap_i as i32 + mod_floor(i64::from(t), params.cap_j) as i32;
    let num = -params.alpha * rho * params.q.powi(e);
    num / (1.0 - rho + num)
}

/// Independent per-site draws from the spec over `length` sites starting at
/// `offset`. Deterministic given the stream seed and the window shape.
pub fn sample_window(
    spec: &MeasureSpec,
    offset: i64,
    length: usize,
    stream: &mut Stream,
) -> Result<OccupancyWindow> {
    spec.validate()?;
    let capacity = spec.capacity();
    let mut values = Vec::with_capacity(length);
    for i in 0..length {
        let d = spec.density(offset + i as i64);
        values.push(stream.pick_weighted(&d) as u8);
    }
    OccupancyWindow::new(offset, capacity, values)
}

/// Analytic upper bound for the blocking-profile mass outside `[-R, R]`:
/// the chance that some site below `-R` is empty or some site above `R` is
/// occupied, each bounded by a geometric series.
pub fn blocking_truncation_tail_mass(q: f64, radius: u32) -> f64 {
    // sum_{k > R} q^{-k} = q^{-R} / (q - 1), on each side
    2.0 * q.powi(-(radius as i32)) / (q - 1.0)
}

/// Outcome of rejection-sampling the blocking profile onto one conserved
/// class: the accepted window plus the attempt count (the empirical
/// acceptance rate is of independent interest and gets reported).
#[derive(Clone, Debug)]
pub struct BlockingClassSample {
    pub window: OccupancyWindow,
    pub attempts: u64,
}

/// Rejection-samples the blocking profile restricted to the class with
/// balance index `n`: configurations with
/// `sum_{i<=0} (1 - eta(i)) + n = sum_{i>=1} eta(i)`, where sites below
/// `-R` are treated as occupied and sites above `R` as empty. Requires
/// `q > 1` and a truncation radius whose analytic tail mass is below 1e-9.
pub fn project_blocking_sampler(
    q: f64,
    n: i64,
    truncation_radius: u32,
    stream: &mut Stream,
    max_attempts: u64,
) -> Result<BlockingClassSample> {
    if !(q > 1.0) {
        return Err(Error::InvalidParams(format!(
            "class projection sampler requires q > 1 (got {q}); mirror the lattice for q < 1"
        )));
    }
    let tail = blocking_truncation_tail_mass(q, truncation_radius);
    if tail > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "truncation radius {truncation_radius} leaves tail mass {tail:.3e} > 1e-9"
        )));
    }
    let spec = MeasureSpec::Blocking { q, t: 0 };
    let r = i64::from(truncation_radius);
    let len = (2 * r + 1) as usize;
    for attempt in 1..=max_attempts {
        let w = sample_window(&spec, -r, len, stream)?;
        if blocking_class_index(&w) == Some(n) {
            return Ok(BlockingClassSample { window: w, attempts: attempt });
        }
    }
    Err(Error::IterationCap(format!(
        "no class-{n} sample in {max_attempts} attempts at radius {truncation_radius}"
    )))
}

/// Balance index of a capacity-1 window under the packed-left / empty-right
/// convention: `sum_{i>=1} eta(i) - sum_{i<=0} (1 - eta(i))`, both sums over
/// stored sites. `None` for windows that do not cover site 0.
pub fn blocking_class_index(w: &OccupancyWindow) -> Option<i64> {
    let (lo, hi) = w.site_range();
    if lo > 0 || hi < 1 {
        return None;
    }
    let mut holes_left = 0i64;
    let mut particles_right = 0i64;
    for (i, &v) in w.values.iter().enumerate() {
        let site = w.offset + i as i64;
        if site <= 0 {
            holes_left += i64::from(v == 0);
        } else {
            particles_right += i64::from(v);
        }
    }
    Some(particles_right - holes_left)
}

/// Same balance index in a moving frame: site `k` of the window is frame
/// site `k - frame_shift`.
pub fn blocking_class_index_framed(w: &OccupancyWindow, frame_shift: i64) -> Option<i64> {
    blocking_class_index(&crate::lattice::shift(w, frame_shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomField;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // ---- qNB -------------------------------------------------------------

    #[test]
    fn qnb_single_bernoulli_case() {
        // K = 1, p = -2, q = 2: the law is Ber(1/2)
        let params = QnbParams::new(0.5, -2.0, 2.0).unwrap();
        assert_eq!(params.k_max, 1);
        assert!(close(params.pmf(0), 0.5, 1e-14));
        assert!(close(params.pmf(1), 0.5, 1e-14));
    }

    #[test]
    fn qnb_vanishes_beyond_support() {
        let params = QnbParams::from_k(3, -0.7, 2.0).unwrap();
        assert_eq!(params.pmf(4), 0.0);
        assert_eq!(params.pmf(10), 0.0);
    }

    #[test]
    fn qnb_rejects_non_integer_exponent() {
        assert!(QnbParams::new(0.4, -1.0, 2.0).is_err());
    }

    #[test]
    fn qnb_mass_sums_to_one_across_grid() {
        for &q in &[0.5f64, 2.0, 3.0] {
            for k in 1..=6u32 {
                for &gamma in &[0.25, 1.0, 2.0] {
                    let p = -q.powi(k as i32) * gamma;
                    let params = QnbParams::from_k(k, p, q).unwrap();
                    let total: f64 = params.density().iter().sum();
                    assert!(close(total, 1.0, 1e-10), "q={q} K={k} gamma={gamma}");
                }
            }
        }
    }

    /// Exact convolution of independent Bernoulli laws with geometric odds,
    /// the brute-force oracle for the qNB identity.
    fn bernoulli_convolution(n: u32, gamma: f64, q: f64) -> Vec<f64> {
        let mut dist = vec![1.0];
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
        dist
    }

    #[test]
    fn qnb_matches_bernoulli_convolution() {
        for &q in &[0.5f64, 2.0] {
            for n in 1..=6u32 {
                for &gamma in &[0.25, 1.0, 2.0] {
                    let conv = bernoulli_convolution(n, gamma, q);
                    let params = QnbParams::from_k(n, -q.powi(n as i32) * gamma, q).unwrap();
                    for (k, &w) in conv.iter().enumerate() {
                        assert!(
                            close(params.pmf(k as u32), w, 1e-10),
                            "q={q} n={n} gamma={gamma} k={k}"
                        );
                    }
                }
            }
        }
    }

    // ---- measure specs -----------------------------------------------------

    #[test]
    fn blocking_density_at_site_one() {
        let spec = MeasureSpec::Blocking { q: 2.0, t: 0 };
        assert!(close(spec.mean(1), 1.0 / 3.0, 1e-14));
        assert!(close(spec.mean(0), 0.5, 1e-14));
    }

    #[test]
    fn inhomogeneous_density_pattern() {
        let spec = MeasureSpec::Inhomogeneous { rho: 0.5, q: 2.0, cap_i: 2 };
        // m = (I-1-k) mod I: site 0 -> 1, site 1 -> 0
        assert!(close(spec.mean(0), (0.5 * 2.0) / (0.5 + 1.0), 1e-14));
        assert!(close(spec.mean(1), 0.5, 1e-14));
        assert!(close(spec.mean(2), spec.mean(0), 1e-14));
    }

    #[test]
    fn qnb_product_block_collapse_consistency() {
        // Collapsing a block of the inhomogeneous product gives the
        // homogeneous qNB product site law.
        let (rho, q, cap_i) = (0.4, 2.0, 3u32);
        let inhomo = MeasureSpec::Inhomogeneous { rho, q, cap_i };
        let qnb = MeasureSpec::QnbProduct { rho, q, cap_i };
        let mut dist = vec![1.0];
        for site in 0..cap_i as i64 {
            let p = inhomo.mean(site);
            let mut next = vec![0.0; dist.len() + 1];
            for (k, &w) in dist.iter().enumerate() {
                next[k] += w * (1.0 - p);
                next[k + 1] += w * p;
            }
            dist = next;
        }
        let d = qnb.density(0);
        for (k, &w) in dist.iter().enumerate() {
            assert!(close(d[k], w, 1e-12), "k={k}");
        }
    }

    #[test]
    fn qnb_blocking_matches_blocking_collapse() {
        let (q, cap_i) = (2.0, 2u32);
        let hs = MeasureSpec::QnbBlocking { q, cap_i };
        let base = MeasureSpec::Blocking { q, t: 0 };
        for block in -2i64..=2 {
            let mut dist = vec![1.0];
            for site in block * i64::from(cap_i)..(block + 1) * i64::from(cap_i) {
                let p = base.mean(site);
                let mut next = vec![0.0; dist.len() + 1];
                for (k, &w) in dist.iter().enumerate() {
                    next[k] += w * (1.0 - p);
                    next[k + 1] += w * p;
                }
                dist = next;
            }
            let d = hs.density(block);
            for (k, &w) in dist.iter().enumerate() {
                assert!(close(d[k], w, 1e-12), "block={block} k={k}");
            }
        }
    }

    // ---- lambda kernels ----------------------------------------------------

    #[test]
    fn lambda_forward_two_site_row() {
        let k = LambdaKernel::forward(2, 2.0);
        let row = k.row(1).unwrap();
        // tuples: (1,0) = mask 0b01, weight q^0 = 1; (0,1) = mask 0b10, weight q^1 = 2
        assert!(close(row[0b01], 1.0 / 3.0, 1e-14));
        assert!(close(row[0b10], 2.0 / 3.0, 1e-14));
        assert_eq!(row[0b00], 0.0);
        assert_eq!(row[0b11], 0.0);
    }

    #[test]
    fn lambda_extreme_values_are_point_masses() {
        let k = LambdaKernel::forward(3, 2.0);
        let empty = k.row(0).unwrap();
        assert!(close(empty[0], 1.0, 1e-14));
        let full = k.row(3).unwrap();
        assert!(close(full[0b111], 1.0, 1e-14));
    }

    #[test]
    fn lambda_rows_sum_to_one_on_exact_support() {
        for n in 1..=6u32 {
            for &q in &[0.5f64, 2.0] {
                for dir in [LambdaDirection::Forward, LambdaDirection::Reversed] {
                    let k = LambdaKernel { n, q, direction: dir };
                    for v in 0..=n {
                        let row = k.row(v).unwrap();
                        let total: f64 = row.iter().sum();
                        assert!(close(total, 1.0, 1e-12));
                        for (mask, &w) in row.iter().enumerate() {
                            if (mask as u32).count_ones() != v {
                                assert_eq!(w, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_adjacent_swap_ratio() {
        // In the forward kernel, moving a particle one slot right multiplies
        // the weight by q; the reversed kernel inverts the ratio.
        let q = 2.0;
        let fwd = LambdaKernel::forward(4, q);
        let rev = LambdaKernel::reversed(4, q);
        for v in 1..4u32 {
            let frow = fwd.row(v).unwrap();
            let rrow = rev.row(v).unwrap();
            for mask in 0..16u32 {
                if mask.count_ones() != v {
                    continue;
                }
                for r in 0..3 {
                    // pattern (1,0) at slots (r, r+1) -> swapped (0,1)
                    if (mask >> r) & 3 == 0b01 {
                        let swapped = mask ^ (3 << r);
                        assert!(close(frow[swapped as usize], q * frow[mask as usize], 1e-12));
                        assert!(close(
                            rrow[mask as usize],
                            q * rrow[swapped as usize],
                            1e-12
                        ));
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_row_out_of_range_errors() {
        assert!(LambdaKernel::forward(2, 2.0).row(3).is_err());
    }

    #[test]
    fn reversed_block_sample_collapses_to_identity() {
        // Any tuple drawn from the reversed kernel has block sum v, so the
        // collapse map recovers the block value exactly.
        let k = LambdaKernel::reversed(4, 2.0);
        let mut stream = Stream::new(7);
        for v in 0..=4u32 {
            for _ in 0..50 {
                let bits = k.sample(v, &mut stream).unwrap();
                let total: u32 = bits.iter().map(|&b| u32::from(b)).sum();
                assert_eq!(total, v);
            }
        }
    }

    // ---- boundary laws -----------------------------------------------------

    #[test]
    fn bernoulli_boundary_law_hand_value() {
        let p = SixVertexParams::new(2.0 / 3.0, 1.0 / 3.0).unwrap();
        let spec = MeasureSpec::BernoulliProduct { rho: 0.5 };
        let zeta = boundary_current_law(&spec, &p, 0, 0).unwrap();
        assert!(close(zeta, 1.0 / 3.0, 1e-14));
    }

    #[test]
    fn empty_measure_has_no_current() {
        let p = SixVertexParams::new(0.5, 0.25).unwrap();
        let spec = MeasureSpec::BernoulliProduct { rho: 0.0 };
        assert_eq!(boundary_current_law(&spec, &p, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn blocking_boundary_law_hand_value() {
        let p = SixVertexParams::new(2.0 / 3.0, 1.0 / 3.0).unwrap();
        let spec = MeasureSpec::Blocking { q: 2.0, t: 0 };
        // the bond left of x0 = 1 carries Ber(q^0 / (1 + q^0)) = Ber(1/2)
        let zeta = boundary_current_law(&spec, &p, 1, 0).unwrap();
        assert!(close(zeta, 0.5, 1e-14));
    }

    #[test]
    fn unsupported_measure_boundary_errors() {
        let p = SixVertexParams::new(0.5, 0.25).unwrap();
        let spec = MeasureSpec::QnbBlocking { q: 2.0, cap_i: 2 };
        assert!(boundary_current_law(&spec, &p, 0, 0).is_err());
    }

    #[test]
    fn inhomogeneous_boundary_solves_local_relation() {
        // zeta(t) must satisfy rho(x)(1-b1(x,t))(1-zeta) = zeta(1-b2(x,t))(1-rho(x))
        // simultaneously for every site x.
        let params = ModelParams::new(2.0, -0.05, 2, 3).unwrap();
        let rho = 0.4;
        let spec = MeasureSpec::Inhomogeneous { rho, q: params.q, cap_i: params.cap_i };
        for t in 0..4u32 {
            let zeta = inhomogeneous_boundary_law(&params, rho, t);
            assert!(zeta > 0.0 && zeta < 1.0);
            for x in -3i64..3 {
                let p = crate::qseries::b_field(x, t, &params);
                let rx = spec.mean(x);
                let lhs = rx * (1.0 - p.b1) * (1.0 - zeta);
                let rhs = zeta * (1.0 - p.b2) * (1.0 - rx);
                assert!(close(lhs, rhs, 1e-12), "x={x} t={t}");
            }
        }
    }

    // ---- samplers ------------------------------------------------------------

    #[test]
    fn degenerate_bernoulli_windows() {
        let mut s = Stream::new(1);
        let zero =
            sample_window(&MeasureSpec::BernoulliProduct { rho: 0.0 }, -5, 11, &mut s).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0));
        let one =
            sample_window(&MeasureSpec::BernoulliProduct { rho: 1.0 }, -5, 11, &mut s).unwrap();
        assert!(one.values.iter().all(|&v| v == 1));
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let spec = MeasureSpec::Blocking { q: 2.0, t: 0 };
        let a = sample_window(&spec, -8, 17, &mut Stream::new(33)).unwrap();
        let b = sample_window(&spec, -8, 17, &mut Stream::new(33)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blocking_empirical_density_matches() {
        // site k = 1, q = 2: density 1/3; 1e5 draws, 3 sigma band
        let spec = MeasureSpec::Blocking { q: 2.0, t: 0 };
        let field = RandomField::new(2024, 0);
        let n = 100_000u32;
        let mut hits = 0u32;
        for r in 0..n {
            let mut s = field.substream(r, 1, 9);
            if s.bernoulli(spec.mean(1)) {
                hits += 1;
            }
        }
        let est = f64::from(hits) / f64::from(n);
        let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / f64::from(n)).sqrt();
        assert!((est - 1.0 / 3.0).abs() < 3.0 * sigma, "est {est}");
    }

    // ---- blocking class sampler ------------------------------------------------

    #[test]
    fn class_sampler_enforces_balance_exactly() {
        let mut s = Stream::new(5);
        for n in [-1i64, 0, 1] {
            let sample = project_blocking_sampler(2.0, n, 40, &mut s, 1_000_000).unwrap();
            assert_eq!(blocking_class_index(&sample.window), Some(n));
        }
    }

    #[test]
    fn class_sampler_near_deterministic_for_large_q() {
        let mut s = Stream::new(9);
        let sample = project_blocking_sampler(1e6, 0, 40, &mut s, 10_000).unwrap();
        let (lo, hi) = sample.window.site_range();
        for site in lo..=hi {
            let expect = u8::from(site <= 0);
            assert_eq!(sample.window.get(site), Some(expect), "site {site}");
        }
    }

    #[test]
    fn class_sampler_rejects_small_q() {
        let mut s = Stream::new(9);
        assert!(project_blocking_sampler(0.5, 0, 40, &mut s, 100).is_err());
    }

    #[test]
    fn class_sampler_rejects_thin_truncation() {
        let mut s = Stream::new(9);
        assert!(project_blocking_sampler(1.05, 0, 40, &mut s, 100).is_err());
    }

    #[test]
    fn shifted_class_sample_matches_lower_class() {
        // One shift maps the class-n projection onto the class-(n-1) one:
        // compare empirical site means over 1e4 draws.
        let radius = 40u32;
        let draws = 10_000u64;
        let field = RandomField::new(77, 1);
        let mut mean_shifted = std::collections::BTreeMap::new();
        let mut mean_lower = std::collections::BTreeMap::new();
        for r in 0..draws {
            let mut s1 = field.substream(r as u32, 0, 1);
            let w1 = project_blocking_sampler(2.0, 1, radius, &mut s1, 1_000_000)
                .unwrap()
                .window;
            let shifted = crate::lattice::shift(&w1, 1);
            let mut s2 = field.substream(r as u32, 0, 2);
            let w0 = project_blocking_sampler(2.0, 0, radius, &mut s2, 1_000_000)
                .unwrap()
                .window;
            for site in -6i64..=6 {
                *mean_shifted.entry(site).or_insert(0u64) +=
                    u64::from(shifted.get(site).unwrap());
                *mean_lower.entry(site).or_insert(0u64) += u64::from(w0.get(site).unwrap());
            }
        }
        for site in -6i64..=6 {
            let a = mean_shifted[&site] as f64 / draws as f64;
            let b = mean_lower[&site] as f64 / draws as f64;
            let sigma = ((a * (1.0 - a) + b * (1.0 - b)) / draws as f64).sqrt().max(1e-6);
            assert!(
                (a - b).abs() <= 4.0 * sigma,
                "site {site}: shifted {a} vs lower-class {b}"
            );
        }
    }

    #[test]
    fn measure_spec_json_round_trip() {
        let spec = MeasureSpec::Inhomogeneous { rho: 0.3, q: 2.0, cap_i: 2 };
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"kind\":\"inhomogeneous\""));
        let back: MeasureSpec = serde_json::from_str(&s).unwrap();
        assert!(close(back.mean(0), spec.mean(0), 0.0));
    }
}
