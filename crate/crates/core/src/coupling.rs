//! Two-class dynamics and the shared-randomness coupling of two copies.
//!
//! Two copies evolve with the same wake and jump draws by promoting their
//! common particles to first class and the sites occupied in only one copy
//! to second-class particles (discrepancies). First-class particles ignore
//! second class entirely; second-class particles yield to them: they stay
//! when a first-class line jumps across, skip staying first-class particles
//! while flying, and stop at the first vacated first-class site. Two
//! discrepancies of opposite type that land on the same site couple and
//! both become first class.
//!
//! A window step asserts, every time: current bits, line conservation per
//! copy, sitewise ordering preservation for ordered inputs, and the bound
//! of at most two discrepancies entering the window per step.

use crate::dynamics::{
    assert_vertex_conservation, currents_from_moves, sweep_capacity1, DrawSource, FieldDraws,
};
use crate::lattice::{compare, OccupancyWindow, WindowOrder};
use crate::qseries::SixVertexParams;
use crate::rng::RandomField;
use crate::{Error, Result};

const FAR: i64 = i64::MAX / 4;

/// A window of class labels: 0 empty, 1 first class, 2 second class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoClassConfig {
    pub offset: i64,
    pub values: Vec<u8>,
}

impl TwoClassConfig {
    pub fn new(offset: i64, values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ShapeMismatch("two-class window must be nonempty".into()));
        }
        if values.iter().any(|&v| v > 2) {
            return Err(Error::OutOfRange("class labels are 0, 1 or 2".into()));
        }
        Ok(TwoClassConfig { offset, values })
    }

    pub fn site_range(&self) -> (i64, i64) {
        (self.offset, self.offset + self.values.len() as i64 - 1)
    }

    pub fn class_positions(&self, class: u8) -> Vec<i64> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == class)
            .map(|(i, _)| self.offset + i as i64)
            .collect()
    }

    /// Forgets classes: any particle becomes a plain occupancy.
    pub fn unclass(&self) -> OccupancyWindow {
        OccupancyWindow {
            offset: self.offset,
            capacity: 1,
            values: self.values.iter().map(|&v| u8::from(v > 0)).collect(),
        }
    }
}

/// First-class data consumed by the second-class pass.
struct FirstClassContext {
    /// `(old, new)` with `new > old`, ordered by `old`; includes the entrant.
    moved: Vec<(i64, i64)>,
    /// Sites whose first-class particle stayed, sorted.
    stay_sites: Vec<i64>,
    /// All first-class positions after the update, sorted.
    new_positions: Vec<i64>,
}

fn first_class_pass(
    positions: &[i64],
    entrant_origin: Option<i64>,
    p: &SixVertexParams,
    draws: &mut dyn DrawSource,
) -> (FirstClassContext, Vec<(i64, i64)>, Option<(i64, i64)>) {
    let b1 = p.b1;
    let b2 = p.b2;
    let sweep = sweep_capacity1(positions, entrant_origin, &|_| b1, &|_| b2, draws);
    let entrant_move = entrant_origin.zip(sweep.entrant_landing);
    let mut moved = Vec::new();
    let mut stay_sites = Vec::new();
    let mut new_positions = Vec::new();
    if let Some((o, n)) = entrant_move {
        moved.push((o, n));
        new_positions.push(n);
    }
    for &(o, n) in &sweep.moves {
        if n > o {
            moved.push((o, n));
        } else {
            stay_sites.push(o);
        }
        new_positions.push(n);
    }
    moved.sort_unstable();
    new_positions.sort_unstable();
    let ctx = FirstClassContext { moved, stay_sites, new_positions };
    (ctx, sweep.moves, entrant_move)
}

/// The second-class update given the completed first-class pass. Returns
/// `(old, new)` moves in left-to-right order.
fn second_class_pass(
    seconds: &[i64],
    ctx: &FirstClassContext,
    p: &SixVertexParams,
    draws: &mut dyn DrawSource,
) -> Vec<(i64, i64)> {
    let b1 = p.b1;
    let b2 = p.b2;
    let mut out = Vec::with_capacity(seconds.len());
    let mut prev_new = -FAR;
    for (i, &s) in seconds.iter().enumerate() {
        let jumped_across = ctx.moved.iter().any(|&(o, n)| o < s && s < n);
        let stays = jumped_across
            || (prev_new < s
                && ctx.new_positions.binary_search(&s).is_err()
                && draws.chi(s, b1));
        let new_s = if stays {
            s
        } else {
            let u_bound = ctx
                .moved
                .iter()
                .map(|&(o, _)| o)
                .find(|&o| o > s)
                .unwrap_or(FAR);
            let j = draws.jump(s, &|_| b2);
            let mut count = 0u32;
            let mut x = s;
            let v_site = loop {
                x += 1;
                if ctx.stay_sites.binary_search(&x).is_err() {
                    count += 1;
                    if count == j {
                        break x;
                    }
                }
            };
            let next_old = seconds.get(i + 1).copied().unwrap_or(FAR);
            u_bound.min(v_site).min(next_old)
        };
        assert!(
            new_s >= s && new_s > prev_new,
            "second-class update broke exclusion at {s}"
        );
        out.push((s, new_s));
        prev_new = new_s;
    }
    out
}

/// Outcome of one two-class update.
#[derive(Clone, Debug)]
pub struct TwoClassOutcome {
    pub next: TwoClassConfig,
    /// First-class `(old, new)` moves including stays (`old == new`).
    pub first_moves: Vec<(i64, i64)>,
    /// Second-class `(old, new)` moves including stays.
    pub second_moves: Vec<(i64, i64)>,
    /// Landing of the incoming first-class line, when one entered.
    pub entrant: Option<(i64, i64)>,
}

/// One update of the two-class dynamics on a finite window (empty exterior
/// unless an entrant line is injected at the left edge by the caller).
/// Landings beyond the window edge are dropped from the new configuration.
pub fn two_class_step(
    cfg: &TwoClassConfig,
    p: &SixVertexParams,
    entrant_origin: Option<i64>,
    draws1: &mut dyn DrawSource,
    draws2: &mut dyn DrawSource,
) -> Result<TwoClassOutcome> {
    let firsts = cfg.class_positions(1);
    let seconds = cfg.class_positions(2);
    let (ctx, first_moves, entrant) = first_class_pass(&firsts, entrant_origin, p, draws1);
    let second_moves = second_class_pass(&seconds, &ctx, p, draws2);

    let (lo, hi) = cfg.site_range();
    let mut next = TwoClassConfig { offset: lo, values: vec![0; cfg.values.len()] };
    let place = |site: i64, class: u8, next: &mut TwoClassConfig| -> Result<()> {
        if site > hi || site < lo {
            return Ok(());
        }
        let idx = (site - lo) as usize;
        if next.values[idx] != 0 {
            return Err(Error::InvalidParams(format!(
                "class collision at site {site} (defensive invariant)"
            )));
        }
        next.values[idx] = class;
        Ok(())
    };
    if let Some((_, n)) = entrant {
        place(n, 1, &mut next)?;
    }
    for &(_, n) in &first_moves {
        place(n, 1, &mut next)?;
    }
    for &(_, n) in &second_moves {
        place(n, 2, &mut next)?;
    }
    Ok(TwoClassOutcome { next, first_moves, second_moves, entrant })
}

/// Discrepancy type: a site occupied in the first copy only (`Eta`) or in
/// the second copy only (`Xi`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscType {
    Eta,
    Xi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Move,
    Annihilate,
    Enter,
    Exit,
}

/// One line of the coupling event log.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EventRecord {
    pub t: u32,
    pub event: EventKind,
    pub site: i64,
    #[serde(rename = "type")]
    pub dtype: DiscType,
}

/// Lifetime of one tracked discrepancy.
#[derive(Clone, Debug)]
pub struct LedgerEntry {
    pub dtype: DiscType,
    pub created_t: u32,
    pub site: i64,
    pub closed: Option<(u32, EventKind)>,
}

/// Two coupled copies plus the (optional) discrepancy identity ledger.
/// Untracked states skip the ledger bookkeeping in hot replica loops; the
/// per-step hard assertions run either way.
#[derive(Clone, Debug)]
pub struct CoupledState {
    pub eta: OccupancyWindow,
    pub xi: OccupancyWindow,
    pub time: u32,
    pub ledger: Option<Vec<LedgerEntry>>,
}

impl CoupledState {
    pub fn new(eta: OccupancyWindow, xi: OccupancyWindow) -> Result<Self> {
        let mut s = Self::untracked(eta, xi)?;
        let mut ledger = Vec::new();
        for (site, dtype) in s.discrepancies() {
            ledger.push(LedgerEntry { dtype, created_t: 0, site, closed: None });
        }
        s.ledger = Some(ledger);
        Ok(s)
    }

    /// A coupled state without identity tracking.
    pub fn untracked(eta: OccupancyWindow, xi: OccupancyWindow) -> Result<Self> {
        if eta.offset != xi.offset || eta.values.len() != xi.values.len() {
            return Err(Error::ShapeMismatch("coupled copies must share a window".into()));
        }
        if eta.capacity != 1 || xi.capacity != 1 {
            return Err(Error::ShapeMismatch("coupling is defined for capacity 1".into()));
        }
        Ok(CoupledState { eta, xi, time: 0, ledger: None })
    }

    /// Sites where exactly one copy is occupied, with their types.
    pub fn discrepancies(&self) -> Vec<(i64, DiscType)> {
        let mut out = Vec::new();
        for i in 0..self.eta.values.len() {
            let site = self.eta.offset + i as i64;
            match (self.eta.values[i], self.xi.values[i]) {
                (1, 0) => out.push((site, DiscType::Eta)),
                (0, 1) => out.push((site, DiscType::Xi)),
                _ => {}
            }
        }
        out
    }

    pub fn discrepancy_count_in(&self, interval: (i64, i64)) -> i64 {
        self.discrepancies()
            .iter()
            .filter(|&&(s, _)| s >= interval.0 && s <= interval.1)
            .count() as i64
    }

    fn open_indices(ledger: &[LedgerEntry], dtype: DiscType) -> Vec<usize> {
        let mut idx: Vec<usize> = ledger
            .iter()
            .enumerate()
            .filter(|(_, e)| e.closed.is_none() && e.dtype == dtype)
            .map(|(i, _)| i)
            .collect();
        idx.sort_by_key(|&i| ledger[i].site);
        idx
    }
}

/// Per-step summary of one coupled update.
#[derive(Clone, Debug, Default)]
pub struct CoupledSummary {
    /// Sites where an eta-type and a xi-type discrepancy coupled.
    pub annihilation_sites: Vec<i64>,
    /// Discrepancies whose landing left the window.
    pub exits: u32,
    /// Shared incoming boundary line.
    pub boundary_in: u8,
    /// Event log lines produced by this step.
    pub events: Vec<EventRecord>,
}

/// Net discrepancy influx into `interval` over one step: count after minus
/// count before plus the discrepancies annihilated inside. At most two
/// discrepancies (one per type) can enter a window per step.
pub fn discrepancy_influx(
    before: &CoupledState,
    after: &CoupledState,
    summary: &CoupledSummary,
    interval: (i64, i64),
) -> i64 {
    let annihilated_inside = 2 * summary
        .annihilation_sites
        .iter()
        .filter(|&&s| s >= interval.0 && s <= interval.1)
        .count() as i64;
    after.discrepancy_count_in(interval) - before.discrepancy_count_in(interval)
        + annihilated_inside
}

/// One update of the coupled pair with shared randomness.
///
/// Both copies promote their common particles to first class and update the
/// two derived two-class systems with identical wake/jump draws; the
/// boundary line (when `zeta` is given) is one shared draw entering both
/// copies as a first-class line. Discrepancies of opposite type landing on
/// the same site couple. Ordering of the copies, current bits, conservation
/// and the influx bound are asserted on every step.
pub fn coupled_step(
    state: &CoupledState,
    p: &SixVertexParams,
    field: &RandomField,
    zeta: Option<f64>,
) -> Result<(CoupledState, CoupledSummary)> {
    let t = state.time;
    let (lo, hi) = state.eta.site_range();
    let order_in = compare(&state.eta, &state.xi)?;

    let mut common = Vec::new();
    let mut eta_only = Vec::new();
    let mut xi_only = Vec::new();
    for i in 0..state.eta.values.len() {
        let site = lo + i as i64;
        match (state.eta.values[i], state.xi.values[i]) {
            (1, 1) => common.push(site),
            (1, 0) => eta_only.push(site),
            (0, 1) => xi_only.push(site),
            _ => {}
        }
    }

    // Shared boundary line for both copies.
    let origin = lo - 1;
    let entrant_origin = match zeta {
        Some(z) => {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::InvalidParams(format!("zeta = {z} outside [0,1]")));
            }
            FieldDraws::class1(field, t)
                .boundary(origin, z)
                .then_some(origin)
        }
        None => None,
    };

    // One first-class pass serves both copies: their first-class sets agree
    // and so do the draws.
    let mut draws1 = FieldDraws::class1(field, t);
    let (ctx, first_moves, entrant) = first_class_pass(&common, entrant_origin, p, &mut draws1);

    // The two second-class passes read the same coordinate-addressed draws.
    let mut draws2_eta = FieldDraws::class2(field, t);
    let eta_moves = second_class_pass(&eta_only, &ctx, p, &mut draws2_eta);
    let mut draws2_xi = FieldDraws::class2(field, t);
    let xi_moves = second_class_pass(&xi_only, &ctx, p, &mut draws2_xi);

    // Rebuild both copies.
    let len = state.eta.values.len();
    let mut eta_next = OccupancyWindow::empty(lo, 1, len);
    let mut xi_next = OccupancyWindow::empty(lo, 1, len);
    let place = |w: &mut OccupancyWindow, site: i64| -> Result<()> {
        if site >= lo && site <= hi {
            if w.get(site) == Some(1) {
                return Err(Error::InvalidParams(format!(
                    "occupancy collision at site {site} (defensive invariant)"
                )));
            }
            w.set(site, 1);
        }
        Ok(())
    };
    if let Some((_, n)) = entrant {
        place(&mut eta_next, n)?;
        place(&mut xi_next, n)?;
    }
    for &(_, n) in &first_moves {
        place(&mut eta_next, n)?;
        place(&mut xi_next, n)?;
    }
    for &(_, n) in &eta_moves {
        place(&mut eta_next, n)?;
    }
    for &(_, n) in &xi_moves {
        place(&mut xi_next, n)?;
    }

    // Hard per-step checks: bit currents and line conservation, per copy.
    let eta_all: Vec<(i64, i64)> = first_moves.iter().chain(&eta_moves).copied().collect();
    let xi_all: Vec<(i64, i64)> = first_moves.iter().chain(&xi_moves).copied().collect();
    let eta_cur = currents_from_moves(&eta_all, entrant, lo, hi);
    let xi_cur = currents_from_moves(&xi_all, entrant, lo, hi);
    let b_in = u8::from(entrant.is_some());
    assert!(eta_cur.iter().all(|&k| k <= 1) && xi_cur.iter().all(|&k| k <= 1));
    assert_vertex_conservation(&state.eta, &eta_next, &eta_cur, b_in);
    assert_vertex_conservation(&state.xi, &xi_next, &xi_cur, b_in);

    // Annihilations: opposite types landing on the same in-window site.
    let eta_landings: std::collections::BTreeSet<i64> = eta_moves
        .iter()
        .map(|&(_, n)| n)
        .filter(|&n| n >= lo && n <= hi)
        .collect();
    let annihilation_sites: Vec<i64> = xi_moves
        .iter()
        .map(|&(_, n)| n)
        .filter(|&n| n >= lo && n <= hi && eta_landings.contains(&n))
        .collect();

    // Per-step events and exit count; ledger identities when tracked.
    let mut events = Vec::new();
    let mut exits = 0u32;
    let mut ledger = state.ledger.clone();
    for (dtype, moves) in [(DiscType::Eta, &eta_moves), (DiscType::Xi, &xi_moves)] {
        let open = ledger
            .as_deref()
            .map(|entries| CoupledState::open_indices(entries, dtype));
        if let (Some(open), Some(entries)) = (&open, ledger.as_deref_mut()) {
            assert_eq!(open.len(), moves.len(), "ledger lost track of open discrepancies");
            for (&idx, &(old, _)) in open.iter().zip(moves.iter()) {
                assert_eq!(entries[idx].site, old, "ledger site drifted");
            }
        }
        for (k, &(old, new)) in moves.iter().enumerate() {
            let kind = if new > hi {
                exits += 1;
                Some(EventKind::Exit)
            } else if annihilation_sites.contains(&new) {
                Some(EventKind::Annihilate)
            } else if new != old {
                Some(EventKind::Move)
            } else {
                None
            };
            if let Some(event) = kind {
                events.push(EventRecord { t: t + 1, event, site: new, dtype });
            }
            if let (Some(open), Some(entries)) = (&open, ledger.as_deref_mut()) {
                let idx = open[k];
                entries[idx].site = new;
                match kind {
                    Some(e @ (EventKind::Exit | EventKind::Annihilate)) => {
                        entries[idx].closed = Some((t + 1, e));
                    }
                    _ => {}
                }
            }
        }
    }

    let next = CoupledState {
        eta: eta_next,
        xi: xi_next,
        time: t + 1,
        ledger,
    };
    let summary = CoupledSummary {
        annihilation_sites,
        exits,
        boundary_in: b_in,
        events,
    };

    // Ordering preservation (attractivity) for ordered inputs, and the
    // influx bound, are asserted on every step.
    let order_out = compare(&next.eta, &next.xi)?;
    match order_in {
        WindowOrder::Equal => assert_eq!(order_out, WindowOrder::Equal, "equality not preserved"),
        WindowOrder::Greater => assert!(
            matches!(order_out, WindowOrder::Greater | WindowOrder::Equal),
            "ordering violated"
        ),
        WindowOrder::Less => assert!(
            matches!(order_out, WindowOrder::Less | WindowOrder::Equal),
            "ordering violated"
        ),
        WindowOrder::Incomparable => {}
    }
    if order_in == WindowOrder::Greater && summary.exits == 0 {
        assert_eq!(order_out, WindowOrder::Greater, "strict ordering lost without exits");
    }
    if order_in == WindowOrder::Less && summary.exits == 0 {
        assert_eq!(order_out, WindowOrder::Less, "strict ordering lost without exits");
    }
    let influx = discrepancy_influx(state, &next, &summary, (lo, hi));
    assert!(influx <= 2, "discrepancy influx {influx} exceeds 2");

    Ok((next, summary))
}
