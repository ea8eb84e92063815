//! Reproducible Monte Carlo harness and the statistical test battery.
//!
//! Replicas are independent and parallelize over a worker pool; every
//! replica derives its randomness from `(master_seed, replica)` through the
//! coordinate-addressed streams in [`crate::rng`], and aggregation sums
//! integer counts, so results are bit-identical regardless of scheduling.
//!
//! Equality-type checks report a z-score and pass at `|z| <= 4`; bound-type
//! checks pass at `estimate <= bound + 3 stderr`; one-sided positivity
//! checks pass at 99% confidence. Hard invariants (line conservation, bit
//! currents, ordering preservation, the discrepancy influx bound, balance
//! conservation) are asserted inside the step functions on every simulated
//! step, not sampled.

use crate::coupling::{coupled_step, two_class_step, CoupledState, TwoClassConfig};
use crate::dynamics::{s6v_step_window, shs6v_step, unfused_step, FieldDraws};
use crate::exact::TransferKernel;
use crate::lattice::OccupancyWindow;
use crate::measures::{
    blocking_class_index_framed, boundary_current_law, inhomogeneous_boundary_law,
    project_blocking_sampler, sample_window, LambdaKernel, MeasureSpec,
};
use crate::qseries::{build_l_tensor, ModelParams, SixVertexParams};
use crate::rng::RandomField;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Sizing of one Monte Carlo run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReplicaPlan {
    pub replicas: u64,
    pub steps: u32,
    pub burn_in: u32,
    pub master_seed: u64,
    pub offset: i64,
    pub length: u32,
}

impl ReplicaPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicas < 2 {
            return Err(Error::InvalidParams(
                "at least two replicas are needed for a variance estimate".into(),
            ));
        }
        if self.length == 0 {
            return Err(Error::InvalidParams("window length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Equality(f64),
    Bound(f64),
    StrictlyPositive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    BoundRespected,
    BoundViolated,
}

/// One named estimate with its pass criterion resolved.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorReport {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: Target,
    pub z_score: f64,
    pub verdict: Verdict,
}

impl EstimatorReport {
    pub fn equality(name: String, estimate: f64, stderr: f64, target: f64) -> Self {
        let z = (estimate - target) / stderr.max(1e-12);
        EstimatorReport {
            name,
            estimate,
            stderr,
            target: Target::Equality(target),
            z_score: z,
            verdict: if z.abs() <= 4.0 { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn bound(name: String, estimate: f64, stderr: f64, bound: f64) -> Self {
        let z = (estimate - bound) / stderr.max(1e-12);
        EstimatorReport {
            name,
            estimate,
            stderr,
            target: Target::Bound(bound),
            z_score: z,
            verdict: if estimate <= bound + 3.0 * stderr {
                Verdict::BoundRespected
            } else {
                Verdict::BoundViolated
            },
        }
    }

    /// Exact binomial equality test mapped onto the `|z| <= 4` policy: the
    /// two-sided tail probability of the observed count is converted to an
    /// equivalent normal score, which stays finite and calibrated even when
    /// the expected count is far below one.
    pub fn binomial_equality(name: String, count: u64, n: u64, p0: f64) -> Self {
        let nf = n as f64;
        let estimate = if n == 0 { 0.0 } else { count as f64 / nf };
        let pv = if n == 0 { 1.0 } else { binom_two_sided_pvalue(count, n, p0) };
        let magnitude = if pv >= 1.0 {
            0.0
        } else {
            -inv_normal_cdf((pv / 2.0).max(1e-300))
        };
        let z = if estimate >= p0 { magnitude } else { -magnitude };
        EstimatorReport {
            name,
            estimate,
            stderr: binom_stderr(p0, nf.max(1.0)),
            target: Target::Equality(p0),
            z_score: z,
            verdict: if z.abs() <= 4.0 { Verdict::Pass } else { Verdict::Fail },
        }
    }

    /// One-sided positivity at 99% confidence.
    pub fn strictly_positive(name: String, estimate: f64, stderr: f64) -> Self {
        let z = estimate / stderr.max(1e-12);
        EstimatorReport {
            name,
            estimate,
            stderr,
            target: Target::StrictlyPositive,
            z_score: z,
            verdict: if z >= 2.326 { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self.verdict, Verdict::Pass | Verdict::BoundRespected)
    }
}

/// Runs `f` over all replicas in parallel and sums the returned integer
/// count vectors elementwise (order-independent, so reproducible).
fn par_counts<F>(replicas: u64, f: F) -> Vec<u64>
where
    F: Fn(u64) -> Vec<u64> + Sync + Send,
{
    (0..replicas)
        .into_par_iter()
        .map(f)
        .reduce(Vec::new, |mut a, b| {
            if a.is_empty() {
                return b;
            }
            if b.is_empty() {
                return a;
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        })
}

fn binom_stderr(p_hat: f64, n: f64) -> f64 {
    (p_hat.clamp(0.0, 1.0) * (1.0 - p_hat.clamp(0.0, 1.0)) / n).sqrt()
}

/// `ln(k!)` via Stirling's series with exact values for small `k`.
fn ln_factorial(k: u64) -> f64 {
    const SMALL: [f64; 16] = [
        0.0,
        0.0,
        std::f64::consts::LN_2,
        1.791_759_469_228_055,
        3.178_053_830_347_946,
        4.787_491_742_782_046,
        6.579_251_212_010_101,
        8.525_161_361_065_415,
        10.604_602_902_745_25,
        12.801_827_480_081_469,
        15.104_412_573_075_516,
        17.502_307_845_873_887,
        19.987_214_495_661_885,
        22.552_163_853_123_42,
        25.191_221_182_738_68,
        27.899_271_383_840_89,
    ];
    if k < 16 {
        return SMALL[k as usize];
    }
    let x = k as f64;
    // Stirling with the first correction terms; relative error < 1e-12 here
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
}

fn ln_binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
        + k as f64 * p.ln()
        + (n - k) as f64 * (1.0 - p).ln()
}

/// Two-sided exact binomial tail probability of observing `k` under
/// Binomial(`n`, `p0`), as `2 min(P(X <= k), P(X >= k))` capped at 1.
fn binom_two_sided_pvalue(k: u64, n: u64, p0: f64) -> f64 {
    let mean = n as f64 * p0;
    // sum the short side in log space
    let tail = if (k as f64) <= mean {
        let terms: Vec<f64> = (0..=k).map(|i| ln_binom_pmf(i, n, p0)).collect();
        log_sum_exp(&terms)
    } else {
        let terms: Vec<f64> = (k..=n).map(|i| ln_binom_pmf(i, n, p0)).collect();
        log_sum_exp(&terms)
    };
    (2.0 * tail.exp()).min(1.0)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// Inverse standard normal CDF (Acklam's rational approximation).
fn inv_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inv_normal_cdf(1.0 - p)
    }
}

/// Total-variation comparison of two empirical distributions with a normal
/// null bound: under equality, `TV` concentrates around `null_mean` with
/// spread `null_sd`.
#[derive(Clone, Debug, Serialize)]
pub struct TvComparison {
    pub tv: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    pub z_allowance: f64,
    pub pass: bool,
}

pub fn tv_compare(
    counts_a: &BTreeMap<Vec<u8>, u64>,
    counts_b: &BTreeMap<Vec<u8>, u64>,
    n_a: u64,
    n_b: u64,
    z_allowance: f64,
) -> TvComparison {
    let keys: std::collections::BTreeSet<&Vec<u8>> =
        counts_a.keys().chain(counts_b.keys()).collect();
    let (na, nb) = (n_a as f64, n_b as f64);
    let mut tv = 0.0;
    let mut sum_sigma = 0.0;
    let mut sum_var = 0.0;
    for k in keys {
        let pa = *counts_a.get(k).unwrap_or(&0) as f64 / na;
        let pb = *counts_b.get(k).unwrap_or(&0) as f64 / nb;
        tv += 0.5 * (pa - pb).abs();
        let pooled = (pa * na + pb * nb) / (na + nb);
        let var = pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb);
        sum_sigma += var.sqrt();
        sum_var += var;
    }
    let null_mean = 0.5 * (2.0 / std::f64::consts::PI).sqrt() * sum_sigma;
    let null_sd = 0.5 * ((1.0 - 2.0 / std::f64::consts::PI) * sum_var).sqrt();
    TvComparison {
        tv,
        null_mean,
        null_sd,
        z_allowance,
        pass: tv <= null_mean + z_allowance * null_sd,
    }
}

/// Which one-step dynamics a stationarity run uses.
#[derive(Clone, Debug)]
pub enum DynamicsKind {
    Plain(SixVertexParams),
    /// Moving frame: relabel one site left after each step.
    Shifted(SixVertexParams),
    Unfused(ModelParams),
}

/// Evolves `plan.steps` updates from the product measure and compares the
/// final per-site occupancy frequencies against the measure's densities.
/// One report per compared site.
pub fn stationarity_mc(
    spec: &MeasureSpec,
    kind: &DynamicsKind,
    plan: &ReplicaPlan,
) -> Result<Vec<EstimatorReport>> {
    plan.validate()?;
    spec.validate()?;
    let steps = plan.steps;
    let shift_total = match kind {
        DynamicsKind::Shifted(_) => i64::from(steps),
        _ => 0,
    };
    // simulate on an absolute window wide enough to cover the final frame
    let sim_lo = plan.offset;
    let sim_len = plan.length as usize + shift_total as usize;

    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut init_stream = field.substream(u32::MAX, 0, 7);
        let mut w = sample_window(spec, sim_lo, sim_len, &mut init_stream).expect("valid spec");
        for s in 0..steps {
            let rec = match kind {
                DynamicsKind::Plain(p) => {
                    let zeta = boundary_current_law(spec, p, sim_lo, 0).expect("boundary law");
                    let mut draws = FieldDraws::class1(&field, s);
                    s6v_step_window(&w, p, zeta, &mut draws).expect("step")
                }
                DynamicsKind::Shifted(p) => {
                    let zeta =
                        boundary_current_law(spec, p, sim_lo, i64::from(s)).expect("boundary law");
                    let mut draws = FieldDraws::class1(&field, s);
                    s6v_step_window(&w, p, zeta, &mut draws).expect("step")
                }
                DynamicsKind::Unfused(params) => {
                    let rho = match spec {
                        MeasureSpec::Inhomogeneous { rho, .. } => *rho,
                        _ => panic!("unfused stationarity runs use the inhomogeneous product"),
                    };
                    let zeta = inhomogeneous_boundary_law(params, rho, s);
                    let mut draws = FieldDraws::class1(&field, s);
                    unfused_step(&w, s, params, zeta, &mut draws).expect("step")
                }
            };
            w = rec.next;
        }
        // frame site k is absolute k + shift_total
        (0..plan.length as i64)
            .map(|i| u64::from(w.get(sim_lo + shift_total + i).unwrap()))
            .collect()
    });

    let mut reports = Vec::with_capacity(plan.length as usize);
    for i in 0..plan.length as i64 {
        let site = sim_lo + i;
        let target = spec.mean(site);
        reports.push(EstimatorReport::binomial_equality(
            format!("occupancy at site {site} after {steps} steps"),
            counts[i as usize],
            plan.replicas,
            target,
        ));
    }
    Ok(reports)
}

/// Law of the crossing indicator under the blocking profile: one step from
/// the profile at time offset `t0`, the bond at `y` carries a Bernoulli
/// line with odds `q^(-y + t0)`.
pub fn current_law_mc(
    q: f64,
    t0: i64,
    p: &SixVertexParams,
    ys: &[i64],
    plan: &ReplicaPlan,
) -> Result<Vec<EstimatorReport>> {
    plan.validate()?;
    let spec = MeasureSpec::Blocking { q, t: t0 };
    let lo = plan.offset;
    let len = plan.length as usize;
    for &y in ys {
        if y < lo || y >= lo + len as i64 {
            return Err(Error::OutOfRange(format!("bond {y} outside the window")));
        }
    }
    let zeta = boundary_current_law(&spec, p, lo, 0)?;
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut init = field.substream(u32::MAX, 0, 7);
        let w = sample_window(&spec, lo, len, &mut init).expect("valid spec");
        let mut draws = FieldDraws::class1(&field, 0);
        let rec = s6v_step_window(&w, p, zeta, &mut draws).expect("step");
        ys.iter()
            .map(|&y| u64::from(rec.currents[(y - lo) as usize]))
            .collect()
    });
    Ok(ys
        .iter()
        .zip(&counts)
        .map(|(&y, &c)| {
            let e = (t0 - y).clamp(-600, 600) as i32;
            let target = 1.0 / (1.0 + q.powi(-e));
            EstimatorReport::binomial_equality(
                format!("crossing law at bond {y}"),
                c,
                plan.replicas,
                target,
            )
        })
        .collect())
}

/// Discrepancy density at the origin for two coupled copies started from
/// `(eta, shift(eta))` with `eta` a Bernoulli product: reports that the
/// density is non-increasing step over step (3-sigma bound on each paired
/// increment) and strictly smaller at the final time (99% confidence).
pub fn phi_decay_mc(
    rho: f64,
    p: &SixVertexParams,
    t_max: u32,
    plan: &ReplicaPlan,
) -> Result<Vec<EstimatorReport>> {
    plan.validate()?;
    let spec = MeasureSpec::BernoulliProduct { rho };
    let lo = plan.offset;
    let len = plan.length as usize;
    if lo > -1 || lo + (len as i64) < 2 {
        return Err(Error::OutOfRange("window must cover the origin".into()));
    }
    let zeta = boundary_current_law(&spec, p, lo, 0)?;
    let t_count = t_max as usize + 1;
    // layout: hits at origin per t | consecutive both-hit pairs | both at 0 and t_max
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut init = field.substream(u32::MAX, 0, 7);
        let base = sample_window(&spec, lo, len + 1, &mut init).expect("valid spec");
        let eta = OccupancyWindow::new(lo, 1, base.values[..len].to_vec()).unwrap();
        let xi = OccupancyWindow::new(lo, 1, base.values[1..].to_vec()).unwrap();
        let mut state = CoupledState::untracked(eta, xi).unwrap();
        let mut hits = vec![0u64; t_count];
        let at = |s: &CoupledState| u64::from(s.eta.get(0) != s.xi.get(0));
        hits[0] = at(&state);
        for _ in 0..t_max {
            let (next, _) = coupled_step(&state, p, &field, Some(zeta)).expect("step");
            state = next;
            hits[state.time as usize] = at(&state);
        }
        let mut out = hits.clone();
        for t in 0..t_max as usize {
            out.push(hits[t] * hits[t + 1]);
        }
        out.push(hits[0] * hits[t_max as usize]);
        out
    });
    let n = plan.replicas as f64;
    let hit = |t: usize| counts[t] as f64;
    let both = |t: usize| counts[t_count + t] as f64;
    let both_ends = *counts.last().unwrap() as f64;

    let mut reports = Vec::new();
    for t in 0..t_max as usize {
        // paired increment d = hit(t+1) - hit(t); must be <= 0 within 3 sigma
        let sum_d = hit(t + 1) - hit(t);
        let sum_d2 = hit(t + 1) + hit(t) - 2.0 * both(t);
        let mean = sum_d / n;
        let var = ((sum_d2 - sum_d * sum_d / n) / (n - 1.0)).max(0.0);
        reports.push(EstimatorReport::bound(
            format!("discrepancy density increment at t={}", t + 1),
            mean,
            (var / n).sqrt(),
            0.0,
        ));
    }
    // paired decrease between 0 and t_max, strictly positive at 99%
    let sum_d = hit(0) - hit(t_max as usize);
    let sum_d2 = hit(0) + hit(t_max as usize) - 2.0 * both_ends;
    let mean = sum_d / n;
    let var = ((sum_d2 - sum_d * sum_d / n) / (n - 1.0)).max(0.0);
    reports.push(EstimatorReport::strictly_positive(
        format!("discrepancy density decrease over {t_max} steps"),
        mean,
        (var / n).sqrt(),
    ));
    Ok(reports)
}

/// Started from the step configuration with balance index `n`, the moving
/// frame dynamics converges to the blocking profile projected on that
/// class. After burn-in, per-site marginals are compared against samples of
/// the projection by two-sample z-tests; the balance index is asserted
/// exactly on every step.
pub fn blocking_convergence_mc(
    q: f64,
    p: &SixVertexParams,
    n_class: i64,
    compare_radius: u32,
    plan: &ReplicaPlan,
) -> Result<Vec<EstimatorReport>> {
    plan.validate()?;
    if !(q > 1.0) {
        return Err(Error::InvalidParams("step-profile convergence runs need q > 1".into()));
    }
    let t_total = plan.burn_in;
    // margins: a hole moves at most one site left per step in absolute
    // coordinates, a particle moves right by jump draws; both margins keep
    // the packed-left / empty-right conventions exact over the horizon.
    let left_margin = 2 * i64::from(t_total) + 24;
    let right_margin = 2 * i64::from(t_total) + 220;
    let cmp = i64::from(compare_radius);
    let lo = n_class - cmp - left_margin;
    let hi = n_class + cmp + right_margin + i64::from(t_total);
    let len = (hi - lo + 1) as usize;

    let cmp_len = (2 * cmp + 1) as usize;
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let values: Vec<u8> = (0..len)
            .map(|i| u8::from(lo + i as i64 <= n_class))
            .collect();
        let mut w = OccupancyWindow::new(lo, 1, values).unwrap();
        let mut frame_shift = 0i64;
        for s in 0..t_total {
            let mut draws = FieldDraws::class1(&field, s);
            let rec = s6v_step_window(&w, p, 1.0, &mut draws).expect("step");
            assert_eq!(rec.boundary_out, 0, "right margin breached");
            w = rec.next;
            frame_shift += 1;
            // hard balance conservation in the moving frame
            assert_eq!(
                blocking_class_index_framed(&w, frame_shift),
                Some(n_class),
                "balance index drifted"
            );
            // packed-left / empty-right conventions must hold
            assert!(w.values[..4].iter().all(|&v| v == 1), "left margin breached");
            assert!(w.values[len - 4..].iter().all(|&v| v == 0));
        }
        (0..cmp_len)
            .map(|i| {
                let frame_site = n_class - cmp + i as i64;
                u64::from(w.get(frame_site + frame_shift).unwrap())
            })
            .collect()
    });

    // reference marginals from the projection sampler
    let ref_counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed ^ 0x5bd1_e995, r);
        let mut stream = field.substream(0, 0, 3);
        let sample = project_blocking_sampler(q, n_class, 40, &mut stream, 10_000_000)
            .expect("projection sample");
        (0..cmp_len)
            .map(|i| u64::from(sample.window.get(n_class - cmp + i as i64).unwrap_or(0)))
            .collect()
    });

    let mut reports = Vec::new();
    for i in 0..cmp_len {
        let frame_site = n_class - cmp + i as i64;
        // exact two-sample test: conditioned on the combined count, the
        // trajectory-side count is Binomial(total, 1/2) under equality
        // (both samples have the same number of replicas)
        reports.push(EstimatorReport::binomial_equality(
            format!("converged marginal at frame site {frame_site} (class {n_class})"),
            counts[i],
            counts[i] + ref_counts[i],
            0.5,
        ));
    }
    Ok(reports)
}

/// Tail of the one-step displacement of a tracked second-class particle in
/// a Bernoulli background: `P(displacement >= r) <= max(b1,b2)^(r-1)`.
pub fn second_class_tail_mc(
    p: &SixVertexParams,
    rho: f64,
    r_max: u32,
    plan: &ReplicaPlan,
) -> Result<Vec<EstimatorReport>> {
    plan.validate()?;
    let spec = MeasureSpec::BernoulliProduct { rho };
    let lo = plan.offset;
    let len = plan.length as usize;
    if lo > -1 || lo + (len as i64) < i64::from(r_max) + 2 {
        return Err(Error::OutOfRange("window must cover the tracked flight".into()));
    }
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut init = field.substream(u32::MAX, 0, 7);
        let background = sample_window(&spec, lo, len, &mut init).expect("valid spec");
        let mut values: Vec<u8> = background.values;
        values[(0 - lo) as usize] = 2; // tracked second-class particle at the origin
        let cfg = TwoClassConfig::new(lo, values).unwrap();
        let mut d1 = FieldDraws::class1(&field, 0);
        let mut d2 = FieldDraws::class2(&field, 0);
        let out = two_class_step(&cfg, p, None, &mut d1, &mut d2).unwrap();
        let (_, landing) = out
            .second_moves
            .iter()
            .find(|&&(old, _)| old == 0)
            .copied()
            .expect("tracked particle present");
        (1..=r_max as i64).map(|r| u64::from(landing >= r)).collect()
    });
    let n = plan.replicas as f64;
    let bound_base = p.b1.max(p.b2);
    Ok((1..=r_max)
        .map(|r| {
            let est = counts[(r - 1) as usize] as f64 / n;
            EstimatorReport::bound(
                format!("second-class displacement tail r={r}"),
                est,
                binom_stderr(est, n),
                bound_base.powi(r as i32 - 1),
            )
        })
        .collect())
}

/// Summary of a hard-assertion coupling run; the assertions themselves live
/// inside [`coupled_step`] and fire on every step.
#[derive(Clone, Debug, Serialize)]
pub struct CoupledRunSummary {
    pub steps: u64,
    pub annihilations: u64,
    pub second_class_exits: u64,
}

/// Runs ordered and unordered coupled pairs for the requested number of
/// steps; every step hard-asserts ordering preservation, the influx bound,
/// conservation and bit currents.
pub fn coupled_assertions_mc(
    p: &SixVertexParams,
    rho: f64,
    plan: &ReplicaPlan,
) -> Result<CoupledRunSummary> {
    plan.validate()?;
    let spec = MeasureSpec::BernoulliProduct { rho };
    let lo = plan.offset;
    let len = plan.length as usize;
    let zeta = boundary_current_law(&spec, p, lo, 0)?;
    let steps = plan.steps;
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut init = field.substream(u32::MAX, 0, 7);
        let eta = sample_window(&spec, lo, len, &mut init).expect("valid spec");
        let (xi, boundary) = if r % 2 == 0 {
            // ordered pair by thinning, finite support, no boundary line
            let mut xi = eta.clone();
            for v in xi.values.iter_mut() {
                if *v == 1 && init.bernoulli(0.35) {
                    *v = 0;
                }
            }
            (xi, None)
        } else {
            // independent pair with the shared boundary line
            (sample_window(&spec, lo, len, &mut init).expect("valid spec"), Some(zeta))
        };
        let mut state = CoupledState::new(eta, xi).unwrap();
        let mut stepped = 0u64;
        let mut annihilations = 0u64;
        let mut exits = 0u64;
        for _ in 0..steps {
            let (next, summary) = coupled_step(&state, p, &field, boundary).expect("step");
            stepped += 1;
            annihilations += summary.annihilation_sites.len() as u64;
            exits += u64::from(summary.exits);
            state = next;
        }
        vec![stepped, annihilations, exits]
    });
    Ok(CoupledRunSummary {
        steps: counts[0],
        annihilations: counts[1],
        second_class_exits: counts[2],
    })
}

/// One-step coupling probability from a state with one discrepancy of each
/// type a fixed distance apart: estimates the chance that the pair couples
/// in a single update and reports positivity at 99% confidence. `filled`
/// packs the sites strictly between with first-class particles (the worst
/// arrangement for the event).
pub fn coalescence_mc(
    p: &SixVertexParams,
    gap: u32,
    filled: bool,
    plan: &ReplicaPlan,
) -> Result<EstimatorReport> {
    plan.validate()?;
    let lo = -4i64;
    let len = (i64::from(gap) + 24) as usize;
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut eta = OccupancyWindow::empty(lo, 1, len);
        let mut xi = OccupancyWindow::empty(lo, 1, len);
        eta.set(0, 1); // eta-type discrepancy at the origin
        xi.set(i64::from(gap), 1); // xi-type at the far end
        if filled {
            for x in 1..i64::from(gap) {
                eta.set(x, 1);
                xi.set(x, 1);
            }
        }
        let state = CoupledState::untracked(eta, xi).unwrap();
        let (_, summary) = coupled_step(&state, p, &field, None).expect("step");
        vec![u64::from(!summary.annihilation_sites.is_empty())]
    });
    let n = plan.replicas as f64;
    let est = counts[0] as f64 / n;
    Ok(EstimatorReport::strictly_positive(
        format!(
            "one-step coupling probability, gap {gap}, {}",
            if filled { "filled" } else { "empty between" }
        ),
        est,
        binom_stderr(est, n),
    ))
}

/// Checks the crossing-law recursion on a fixed deterministic input: the
/// paired residual `K_y - b2 K_(y-1)` (empty site) or
/// `K_y - K_(y-1) - (1 - K_(y-1))(1 - b1)` (occupied site) has mean zero.
pub fn current_recursion_mc(
    p: &SixVertexParams,
    eta: &OccupancyWindow,
    zeta_in: f64,
    plan: &ReplicaPlan,
) -> Result<Vec<EstimatorReport>> {
    plan.validate()?;
    let len = eta.values.len();
    // layout: K counts per bond (len+1 with boundary first) then pair counts
    let counts = par_counts(plan.replicas, |r| {
        let field = RandomField::new(plan.master_seed, r);
        let mut draws = FieldDraws::class1(&field, 0);
        let rec = s6v_step_window(eta, p, zeta_in, &mut draws).expect("step");
        let mut ks = Vec::with_capacity(len + 1);
        ks.push(u64::from(rec.boundary_in));
        ks.extend(rec.currents.iter().map(|&k| u64::from(k)));
        let mut out = ks.clone();
        for i in 1..=len {
            out.push(ks[i - 1] * ks[i]);
        }
        out
    });
    let n = plan.replicas as f64;
    let k = |i: usize| counts[i] as f64;
    let kk = |i: usize| counts[len + 1 + (i - 1)] as f64;
    let mut reports = Vec::new();
    for i in 1..=len {
        let site = eta.offset + (i as i64) - 1;
        let occupied = eta.values[i - 1] == 1;
        // per-replica residual d with E[d] = 0 under the recursion
        let (sum_d, sum_d2) = if occupied {
            let c1 = 1.0 - p.b1;
            let sum_d = k(i) - p.b1 * k(i - 1) - n * c1;
            let sum_d2 = k(i) + p.b1 * p.b1 * k(i - 1) + n * c1 * c1 - 2.0 * p.b1 * kk(i)
                - 2.0 * c1 * k(i)
                + 2.0 * p.b1 * c1 * k(i - 1);
            (sum_d, sum_d2)
        } else {
            let sum_d = k(i) - p.b2 * k(i - 1);
            let sum_d2 = k(i) - 2.0 * p.b2 * kk(i) + p.b2 * p.b2 * k(i - 1);
            (sum_d, sum_d2)
        };
        let mean = sum_d / n;
        let var = ((sum_d2 - sum_d * sum_d / n) / (n - 1.0)).max(0.0);
        reports.push(EstimatorReport::equality(
            format!("crossing recursion at site {site}"),
            mean,
            (var / n).sqrt(),
            0.0,
        ));
    }
    Ok(reports)
}

/// Monotonicity of the expected crossing: for inputs agreeing right of the
/// measured bond with `eta >= xi` to its left, the dominated input cannot
/// carry more current.
pub fn current_monotonicity_mc(
    p: &SixVertexParams,
    eta: &OccupancyWindow,
    xi: &OccupancyWindow,
    y: i64,
    plan: &ReplicaPlan,
) -> Result<EstimatorReport> {
    plan.validate()?;
    let idx = usize::try_from(y - eta.offset)
        .map_err(|_| Error::OutOfRange(format!("bond {y} left of the window")))?;
    let run = |w: &OccupancyWindow, salt: u64| -> u64 {
        par_counts(plan.replicas, |r| {
            let field = RandomField::new(plan.master_seed ^ salt, r);
            let mut draws = FieldDraws::class1(&field, 0);
            let rec = s6v_step_window(w, p, 0.0, &mut draws).expect("step");
            vec![u64::from(rec.currents[idx])]
        })[0]
    };
    let n = plan.replicas as f64;
    let e_eta = run(eta, 0) as f64 / n;
    let e_xi = run(xi, 0x9e3779b9) as f64 / n;
    let stderr = (binom_stderr(e_eta, n).powi(2) + binom_stderr(e_xi, n).powi(2)).sqrt();
    Ok(EstimatorReport::bound(
        format!("crossing monotonicity at bond {y}"),
        e_xi - e_eta,
        stderr,
        0.0,
    ))
}

/// Cross-validates the exhaustive transfer kernel against direct simulation
/// frequencies from every input state; reports the worst entry z-score.
pub fn kernel_consistency_mc(
    p: &SixVertexParams,
    kernel: &TransferKernel,
    plan: &ReplicaPlan,
) -> Result<EstimatorReport> {
    plan.validate()?;
    if kernel.shifted {
        return Err(Error::InvalidParams("cross-validation uses unshifted kernels".into()));
    }
    let len = kernel.len as usize;
    let n_in = 1usize << len;
    let n_out = 1usize << kernel.out_len;
    let mut worst_z = 0.0f64;
    let n = plan.replicas as f64;
    for s_in in 0..n_in {
        let values: Vec<u8> = (0..len).map(|i| ((s_in >> i) & 1) as u8).collect();
        let w = OccupancyWindow::new(kernel.offset, 1, values).unwrap();
        let counts = par_counts(plan.replicas, |r| {
            let field = RandomField::new(plan.master_seed ^ s_in as u64, r);
            let mut draws = FieldDraws::class1(&field, 0);
            let rec = s6v_step_window(&w, p, kernel.zeta_in, &mut draws).expect("step");
            let mut out_state = 0usize;
            for (i, &v) in rec.next.values.iter().enumerate() {
                out_state |= (v as usize) << i;
            }
            let mut v = vec![0u64; n_out];
            v[out_state] = 1;
            v
        });
        for s_out in 0..n_out {
            let est = counts[s_out] as f64 / n;
            let target = kernel.entry(s_in, s_out);
            let sigma = binom_stderr(target, n).max(1e-9);
            worst_z = worst_z.max(((est - target) / sigma).abs());
        }
    }
    Ok(EstimatorReport::equality(
        format!("kernel vs simulation, L={len}"),
        worst_z,
        1.0,
        0.0,
    ))
}

/// Distributional comparison of `fused_steps` fused updates against
/// `J * fused_steps` unfused updates collapsed block-wise, from a fixed
/// initial block configuration prepared with the reversed block kernel.
/// Compares the end-state law on the first two blocks in total variation.
pub fn fused_unfused_compare_mc(
    params: &ModelParams,
    g0_blocks: &[u8],
    fused_steps: u32,
    plan: &ReplicaPlan,
) -> Result<EstimatorReport> {
    plan.validate()?;
    if fused_steps == 0 {
        return Err(Error::InvalidParams("at least one fused step is needed".into()));
    }
    let cap_i = params.cap_i;
    let cap_j = params.cap_j;
    let tensor = build_l_tensor(params)?;
    let pad_blocks = (8 + 2 * fused_steps as usize).max(g0_blocks.len() + 4);
    let mut blocks = vec![0u8; pad_blocks];
    blocks[..g0_blocks.len()].copy_from_slice(g0_blocks);
    let g0 = OccupancyWindow::new(0, cap_i.min(255) as u8, blocks.clone())?;
    let lam = LambdaKernel::reversed(cap_i, params.q);

    let site_len = pad_blocks * cap_i as usize;
    let merge = |mut a: BTreeMap<Vec<u8>, u64>, b: BTreeMap<Vec<u8>, u64>| {
        for (k, v) in b {
            *a.entry(k).or_insert(0) += v;
        }
        a
    };
    let a: BTreeMap<Vec<u8>, u64> = (0..plan.replicas)
        .into_par_iter()
        .fold(BTreeMap::new, |mut m, r| {
            let field = RandomField::new(plan.master_seed, r);
            let mut g = g0.clone();
            for t in 0..fused_steps {
                g = shs6v_step(&g, t, &tensor, 0, &field).expect("fused step").next;
            }
            *m.entry(g.values[..2].to_vec()).or_insert(0) += 1;
            m
        })
        .reduce(BTreeMap::new, merge);
    let b: BTreeMap<Vec<u8>, u64> = (0..plan.replicas)
        .into_par_iter()
        .fold(BTreeMap::new, |mut m, r| {
            let field = RandomField::new(plan.master_seed ^ 0xabcd_1234, r);
            // block-wise preparation with the reversed kernel
            let mut values = Vec::with_capacity(site_len);
            for (k, &g) in blocks.iter().enumerate() {
                let mut s = field.substream(u32::MAX, k as i64, 5);
                let bits = lam.sample(u32::from(g), &mut s).expect("block sample");
                values.extend(bits);
            }
            let mut w = OccupancyWindow::new(0, 1, values).unwrap();
            for t in 0..cap_j * fused_steps {
                let mut draws = FieldDraws::class1(&field, t);
                w = unfused_step(&w, t, params, 0.0, &mut draws).expect("unfused step").next;
            }
            let g = crate::lattice::collapse(&w, cap_i).expect("aligned");
            *m.entry(g.values[..2].to_vec()).or_insert(0) += 1;
            m
        })
        .reduce(BTreeMap::new, merge);

    let cmp = tv_compare(&a, &b, plan.replicas, plan.replicas, 3.0);
    let report = EstimatorReport {
        name: format!(
            "fused vs unfused end-state law, I={cap_i}, J={cap_j}, blocks {:?}, {fused_steps} step(s)",
            g0_blocks
        ),
        estimate: cmp.tv,
        stderr: cmp.null_sd,
        target: Target::Bound(cmp.null_mean),
        z_score: (cmp.tv - cmp.null_mean) / cmp.null_sd.max(1e-12),
        verdict: if cmp.pass { Verdict::BoundRespected } else { Verdict::BoundViolated },
    };
    Ok(report)
}
