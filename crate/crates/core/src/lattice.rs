//! Finite windows of occupancy configurations on the integer lattice.
//!
//! Windows carry an explicit `offset` (lattice coordinate of the leftmost
//! stored site), so the moving-frame dynamics is pure offset bookkeeping.
//! Out-of-window sites are never defaulted implicitly; every dynamics
//! operation states its own boundary convention.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// A finite window of site occupancies. `values[i]` is the occupancy of
/// lattice site `offset + i`, each in `0..=capacity`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyWindow {
    pub offset: i64,
    pub capacity: u8,
    pub values: Vec<u8>,
}

impl OccupancyWindow {
    pub fn new(offset: i64, capacity: u8, values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ShapeMismatch("window must hold at least one site".into()));
        }
        if capacity == 0 {
            return Err(Error::ShapeMismatch("capacity must be >= 1".into()));
        }
        if let Some(&v) = values.iter().find(|&&v| v > capacity) {
            return Err(Error::OutOfRange(format!(
                "occupancy {v} exceeds capacity {capacity}"
            )));
        }
        Ok(OccupancyWindow { offset, capacity, values })
    }

    pub fn empty(offset: i64, capacity: u8, len: usize) -> Self {
        OccupancyWindow { offset, capacity, values: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Inclusive range of stored lattice sites.
    pub fn site_range(&self) -> (i64, i64) {
        (self.offset, self.offset + self.values.len() as i64 - 1)
    }

    /// Occupancy at an absolute lattice site, `None` outside the window.
    pub fn get(&self, site: i64) -> Option<u8> {
        let idx = site.checked_sub(self.offset)?;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied()
    }

    pub fn set(&mut self, site: i64, v: u8) {
        let idx = (site - self.offset) as usize;
        self.values[idx] = v;
    }

    pub fn total_particles(&self) -> u64 {
        self.values.iter().map(|&v| u64::from(v)).sum()
    }

    /// Occupied sites in increasing order (capacity-1 windows).
    pub fn occupied_sites(&self) -> Vec<i64> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(i, _)| self.offset + i as i64)
            .collect()
    }

    /// CSV dump, one `site,value` row per site.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("site,value\n");
        for (i, &v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.offset + i as i64, v);
        }
        out
    }
}

/// Sitewise comparison outcome for two windows of identical shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowOrder {
    Less,
    Equal,
    Greater,
    Incomparable,
}

/// Shift operator: site `i` of the output reads site `i + n` of the input,
/// so the stored values are unchanged and the offset decreases by `n`.
pub fn shift(w: &OccupancyWindow, n: i64) -> OccupancyWindow {
    OccupancyWindow {
        offset: w.offset - n,
        capacity: w.capacity,
        values: w.values.clone(),
    }
}

/// Block-collapse map: sums every group of `n` neighboring sites of a
/// capacity-1 window into one site of a capacity-`n` window. Offset and
/// length must be divisible by `n` so blocks are aligned.
pub fn collapse(w: &OccupancyWindow, n: u32) -> Result<OccupancyWindow> {
    if w.capacity != 1 {
        return Err(Error::ShapeMismatch(format!(
            "collapse requires capacity 1, got {}",
            w.capacity
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParams("block size must be positive".into()));
    }
    let n_i64 = i64::from(n);
    if w.offset.rem_euclid(n_i64) != 0 {
        return Err(Error::Alignment(format!(
            "offset {} not divisible by block size {n}",
            w.offset
        )));
    }
    if w.values.len() % n as usize != 0 {
        return Err(Error::Alignment(format!(
            "length {} not divisible by block size {n}",
            w.values.len()
        )));
    }
    let values: Vec<u8> = w
        .values
        .chunks(n as usize)
        .map(|chunk| chunk.iter().sum())
        .collect();
    OccupancyWindow::new(w.offset / n_i64, n.min(255) as u8, values)
}

/// Sitewise partial order. `Greater` means `>=` everywhere with `>`
/// somewhere; `Less` symmetrically; mixed signs are `Incomparable`.
pub fn compare(a: &OccupancyWindow, b: &OccupancyWindow) -> Result<WindowOrder> {
    if a.offset != b.offset || a.values.len() != b.values.len() || a.capacity != b.capacity {
        return Err(Error::ShapeMismatch(format!(
            "windows differ in shape: ({}, {}, {}) vs ({}, {}, {})",
            a.offset,
            a.values.len(),
            a.capacity,
            b.offset,
            b.values.len(),
            b.capacity
        )));
    }
    let mut some_gt = false;
    let mut some_lt = false;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        if x > y {
            some_gt = true;
        } else if x < y {
            some_lt = true;
        }
    }
    Ok(match (some_gt, some_lt) {
        (false, false) => WindowOrder::Equal,
        (true, false) => WindowOrder::Greater,
        (false, true) => WindowOrder::Less,
        (true, true) => WindowOrder::Incomparable,
    })
}

/// Strictly increasing particle locations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub positions: Vec<i64>,
}

impl ParticleConfig {
    pub fn new(positions: Vec<i64>) -> Result<Self> {
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(
                "particle positions must be strictly increasing".into(),
            ));
        }
        Ok(ParticleConfig { positions })
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Occupancy window spanning `[lo, hi]` (inclusive).
    pub fn to_window(&self, lo: i64, hi: i64) -> OccupancyWindow {
        let len = (hi - lo + 1).max(1) as usize;
        let mut w = OccupancyWindow::empty(lo, 1, len);
        for &p in &self.positions {
            if p >= lo && p <= hi {
                w.set(p, 1);
            }
        }
        w
    }

    pub fn from_window(w: &OccupancyWindow) -> Result<Self> {
        if w.capacity != 1 {
            return Err(Error::ShapeMismatch("particle view requires capacity 1".into()));
        }
        ParticleConfig::new(w.occupied_sites())
    }
}

/// Frame bookkeeping for the moving-frame (shifted) dynamics: after `time`
/// steps the frame has been relabeled `frame_shift` sites to the right.
/// The unshifted dynamics keeps `frame_shift = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameState {
    pub time: u32,
    pub frame_shift: i64,
}

impl FrameState {
    pub fn shifted_start() -> Self {
        FrameState { time: 0, frame_shift: 0 }
    }

    /// One shifted step: time advances and the frame moves one site right.
    pub fn advance(&mut self) {
        self.time += 1;
        self.frame_shift += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_by_zero_is_identity() {
        let w = OccupancyWindow::new(5, 1, vec![1, 0, 1]).unwrap();
        assert_eq!(shift(&w, 0), w);
    }

    #[test]
    fn shift_inverse_round_trip() {
        let w = OccupancyWindow::new(-3, 1, vec![1, 1, 0, 1]).unwrap();
        assert_eq!(shift(&shift(&w, 1), -1), w);
    }

    #[test]
    fn shift_moves_offset_down() {
        let w = OccupancyWindow::new(5, 1, vec![1, 0]).unwrap();
        let s = shift(&w, 2);
        assert_eq!(s.offset, 3);
        assert_eq!(s.values, w.values);
        // site 3 of the shifted window reads site 5 of the original
        assert_eq!(s.get(3), w.get(5));
    }

    #[test]
    fn collapse_block_sums() {
        let w = OccupancyWindow::new(0, 1, vec![1, 0, 1, 1]).unwrap();
        let c = collapse(&w, 2).unwrap();
        assert_eq!(c.values, vec![1, 2]);
        assert_eq!(c.offset, 0);
        assert_eq!(c.capacity, 2);
    }

    #[test]
    fn collapse_block_size_one_is_identity() {
        let w = OccupancyWindow::new(2, 1, vec![1, 0, 1]).unwrap();
        let c = collapse(&w, 1).unwrap();
        assert_eq!(c.values, w.values);
        assert_eq!(c.offset, 2);
    }

    #[test]
    fn collapse_of_empty_window_is_empty() {
        let w = OccupancyWindow::empty(0, 1, 6);
        let c = collapse(&w, 3).unwrap();
        assert!(c.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn collapse_misaligned_errors() {
        let w = OccupancyWindow::new(1, 1, vec![1, 0]).unwrap();
        assert!(collapse(&w, 2).is_err());
        let w2 = OccupancyWindow::new(0, 1, vec![1, 0, 1]).unwrap();
        assert!(collapse(&w2, 2).is_err());
    }

    #[test]
    fn collapse_commutes_with_block_shift() {
        // collapse(shift(w, n*k), n) == shift(collapse(w, n), k)
        let w = OccupancyWindow::new(4, 1, vec![1, 0, 0, 1, 1, 0, 1, 0]).unwrap();
        for k in [-2i64, -1, 0, 1, 3] {
            let lhs = collapse(&shift(&w, 2 * k), 2).unwrap();
            let rhs = shift(&collapse(&w, 2).unwrap(), k);
            assert_eq!(lhs, rhs, "k = {k}");
        }
    }

    #[test]
    fn compare_basic_cases() {
        let a = OccupancyWindow::new(0, 1, vec![1, 1, 0]).unwrap();
        let b = OccupancyWindow::new(0, 1, vec![1, 0, 0]).unwrap();
        let c = OccupancyWindow::new(0, 1, vec![0, 1, 0]).unwrap();
        assert_eq!(compare(&a, &a).unwrap(), WindowOrder::Equal);
        assert_eq!(compare(&a, &b).unwrap(), WindowOrder::Greater);
        assert_eq!(compare(&b, &a).unwrap(), WindowOrder::Less);
        assert_eq!(compare(&b, &c).unwrap(), WindowOrder::Incomparable);
    }

    #[test]
    fn compare_shape_mismatch_errors() {
        let a = OccupancyWindow::new(0, 1, vec![1, 1]).unwrap();
        let b = OccupancyWindow::new(1, 1, vec![1, 1]).unwrap();
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn particle_window_round_trip() {
        let cfg = ParticleConfig::new(vec![-2, 0, 5]).unwrap();
        let w = cfg.to_window(-4, 7);
        assert_eq!(ParticleConfig::from_window(&w).unwrap(), cfg);
    }

    #[test]
    fn particle_config_requires_strict_order() {
        assert!(ParticleConfig::new(vec![0, 0]).is_err());
        assert!(ParticleConfig::new(vec![3, 1]).is_err());
    }

    #[test]
    fn window_json_round_trip() {
        let w = OccupancyWindow::new(-1, 2, vec![0, 2, 1]).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains("\"offset\":-1"));
        let back: OccupancyWindow = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn csv_rows_carry_absolute_sites() {
        let w = OccupancyWindow::new(3, 1, vec![1, 0]).unwrap();
        let csv = w.to_csv();
        assert!(csv.contains("3,1"));
        assert!(csv.contains("4,0"));
    }
}
