//! Spatio-temporal cross-scan orderings.
//!
//! A clip at one stage is a `T x rows x cols` grid of patch slots, flattened
//! canonically as `t*rows*cols + r*cols + c`. Each [`ScanOrder`] is an
//! explicit permutation of those slots:
//!
//! * `Temporal`: frame by frame, row-major inside each frame.
//! * `Spatial`: position by position (row-major), all frames of a position
//!   consecutively.
//! * `Diagonal` / `AntiDiagonal`: as `Spatial`, but positions are visited by
//!   ascending `r + c` (resp. `r - c`), ties broken by ascending `r`.
//!
//! `Backward` is the exact reverse of the same mode's `Forward`.

use std::fmt;
use std::str::FromStr;

use crate::tensor::{shape_err, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchGrid {
    pub t_frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(t_frames: usize, rows: usize, cols: usize) -> Result<Self> {
        if t_frames == 0 || rows == 0 || cols == 0 {
            return Err(TensorError::Invalid {
                op: "PatchGrid",
                detail: format!("all extents must be >= 1, got {t_frames}x{rows}x{cols}"),
            });
        }
        Ok(Self { t_frames, rows, cols })
    }

    pub fn positions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.t_frames * self.positions()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn slot(&self, t: usize, r: usize, c: usize) -> usize {
        t * self.positions() + r * self.cols + c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanMode {
    Temporal,
    Spatial,
    Diagonal,
    AntiDiagonal,
}

impl ScanMode {
    pub const ALL: [ScanMode; 4] =
        [ScanMode::Temporal, ScanMode::Spatial, ScanMode::Diagonal, ScanMode::AntiDiagonal];

    pub fn name(self) -> &'static str {
        match self {
            ScanMode::Temporal => "temporal",
            ScanMode::Spatial => "spatial",
            ScanMode::Diagonal => "diagonal",
            ScanMode::AntiDiagonal => "anti_diagonal",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "temporal" | "t" => Ok(ScanMode::Temporal),
            "spatial" | "s" => Ok(ScanMode::Spatial),
            "diagonal" | "diag" | "d" => Ok(ScanMode::Diagonal),
            "anti_diagonal" | "antidiagonal" | "anti" | "a" => Ok(ScanMode::AntiDiagonal),
            other => Err(format!("unknown scan mode '{other}'")),
        }
    }
}

/// Set of enabled scan modes; disabling modes is how ablations are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ModeSet(u8);

impl ModeSet {
    pub const fn all() -> Self {
        ModeSet(0b1111)
    }

    pub const fn empty() -> Self {
        ModeSet(0)
    }

    pub fn only(mode: ScanMode) -> Self {
        ModeSet(1 << mode.index())
    }

    pub fn with(self, mode: ScanMode) -> Self {
        ModeSet(self.0 | (1 << mode.index()))
    }

    pub fn without(self, mode: ScanMode) -> Self {
        ModeSet(self.0 & !(1 << mode.index()))
    }

    pub fn contains(self, mode: ScanMode) -> bool {
        self.0 & (1 << mode.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Enabled modes in canonical order.
    pub fn iter(self) -> impl Iterator<Item = ScanMode> {
        ScanMode::ALL.into_iter().filter(move |m| self.contains(*m))
    }
}

impl fmt::Display for ModeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(ScanMode::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ModeSet {
    type Err = String;

    /// Comma-separated mode names, or `all`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(ModeSet::all());
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .try_fold(ModeSet::empty(), |set, p| Ok(set.with(p.parse()?)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanDirection {
    Forward,
    Backward,
}

impl ScanDirection {
    pub const BOTH: [ScanDirection; 2] = [ScanDirection::Forward, ScanDirection::Backward];
}

impl FromStr for ScanDirection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" | "fwd" | "f" => Ok(ScanDirection::Forward),
            "backward" | "bwd" | "b" => Ok(ScanDirection::Backward),
            other => Err(format!("unknown scan direction '{other}'")),
        }
    }
}

/// A bijective reordering of the slots of a [`PatchGrid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOrder {
    pub mode: ScanMode,
    pub direction: ScanDirection,
    pub grid: PatchGrid,
    /// `perm[k]` is the canonical slot visited at step `k`.
    pub perm: Vec<usize>,
    /// `inv_perm[slot]` is the step at which `slot` is visited.
    pub inv_perm: Vec<usize>,
}

/// Grid positions `(r, c)` in the order a mode visits them.
fn position_order(grid: &PatchGrid, mode: ScanMode) -> Vec<(usize, usize)> {
    let mut pos: Vec<(usize, usize)> =
        (0..grid.rows).flat_map(|r| (0..grid.cols).map(move |c| (r, c))).collect();
    match mode {
        ScanMode::Temporal | ScanMode::Spatial => {}
        ScanMode::Diagonal => pos.sort_by_key(|&(r, c)| (r + c, r)),
        ScanMode::AntiDiagonal => pos.sort_by_key(|&(r, c)| (r as isize - c as isize, r)),
    }
    pos
}

pub fn make_order(grid: PatchGrid, mode: ScanMode, direction: ScanDirection) -> ScanOrder {
    let mut perm = Vec::with_capacity(grid.len());
    match mode {
        ScanMode::Temporal => perm.extend(0..grid.len()),
        _ => {
            for (r, c) in position_order(&grid, mode) {
                perm.extend((0..grid.t_frames).map(|t| grid.slot(t, r, c)));
            }
        }
    }
    if direction == ScanDirection::Backward {
        perm.reverse();
    }
    let mut inv_perm = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv_perm[p] = k;
    }
    ScanOrder { mode, direction, grid, perm, inv_perm }
}

impl ScanOrder {
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn check_len(&self, op: &'static str, seq: &Tensor) -> Result<()> {
        if seq.rank() != 2 || seq.shape()[1] != self.len() {
            return Err(shape_err(op, format!("sequence {:?} vs order length {}", seq.shape(), self.len())));
        }
        Ok(())
    }

    /// Reorders `[C, L]` columns into scan order: `out[:, k] = seq[:, perm[k]]`.
    pub fn apply(&self, seq: &Tensor) -> Result<Tensor> {
        self.check_len("scan apply", seq)?;
        seq.gather_last(&self.perm)
    }

    /// Restores canonical slot order from a scan-ordered `[C, L]` sequence.
    pub fn invert(&self, seq: &Tensor) -> Result<Tensor> {
        self.check_len("scan invert", seq)?;
        seq.gather_last(&self.inv_perm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ScanDirection::*;
    use ScanMode::*;

    fn grid(t: usize, r: usize, c: usize) -> PatchGrid {
        PatchGrid::new(t, r, c).unwrap()
    }

    #[test]
    fn worked_two_frame_tables() {
        let g = grid(2, 2, 2);
        assert_eq!(make_order(g, Temporal, Forward).perm, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(make_order(g, Spatial, Forward).perm, vec![0, 4, 1, 5, 2, 6, 3, 7]);
        assert_eq!(make_order(g, AntiDiagonal, Forward).perm, vec![1, 5, 0, 4, 3, 7, 2, 6]);
        assert_eq!(make_order(g, Temporal, Backward).perm, vec![7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn invalid_grid() {
        assert!(PatchGrid::new(0, 2, 2).is_err());
        assert!(PatchGrid::new(1, 0, 2).is_err());
    }

    #[test]
    fn exhaustive_bijectivity() {
        for t in 1..=3 {
            for r in 1..=4 {
                for c in 1..=5 {
                    let g = grid(t, r, c);
                    for mode in ScanMode::ALL {
                        let fwd = make_order(g, mode, Forward);
                        let bwd = make_order(g, mode, Backward);
                        let mut sorted = fwd.perm.clone();
                        sorted.sort_unstable();
                        assert_eq!(sorted, (0..g.len()).collect::<Vec<_>>());
                        let mut rev = fwd.perm.clone();
                        rev.reverse();
                        assert_eq!(bwd.perm, rev);
                        for o in [&fwd, &bwd] {
                            assert!(o.perm.iter().enumerate().all(|(k, &p)| o.inv_perm[p] == k));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn apply_ramp_and_constant() {
        let g = grid(2, 2, 2);
        let ramp = Tensor::from_vec(&[1, 8], (0..8).map(f64::from).collect()).unwrap();
        let o = make_order(g, Spatial, Forward);
        assert_eq!(o.apply(&ramp).unwrap().data(), &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
        let c = Tensor::full(&[3, 8], 2.5);
        for mode in ScanMode::ALL {
            for dir in ScanDirection::BOTH {
                let o = make_order(g, mode, dir);
                assert_eq!(o.apply(&c).unwrap().data(), c.data());
                assert_eq!(o.invert(&c).unwrap().data(), c.data());
            }
        }
    }

    #[test]
    fn length_mismatch() {
        let o = make_order(grid(2, 2, 2), Temporal, Forward);
        assert!(o.apply(&Tensor::zeros(&[2, 7])).is_err());
        assert!(o.invert(&Tensor::zeros(&[8])).is_err());
    }

    #[test]
    fn diagonal_vs_anti_diagonal() {
        for t in 1..=3 {
            let g = grid(t, 1, 1);
            assert_eq!(make_order(g, Diagonal, Forward).perm, make_order(g, AntiDiagonal, Forward).perm);
            for r in 2..=4 {
                for c in 2..=4 {
                    let g = grid(t, r, c);
                    assert_ne!(make_order(g, Diagonal, Forward).perm, make_order(g, AntiDiagonal, Forward).perm);
                }
            }
        }
    }

    fn arb_grid() -> impl Strategy<Value = PatchGrid> {
        (1usize..=4, 1usize..=5, 1usize..=5).prop_map(|(t, r, c)| grid(t, r, c))
    }

    #[test]
    fn mode_set_parsing() {
        let s: ModeSet = "temporal, anti-diagonal".parse().unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.contains(Temporal) && s.contains(AntiDiagonal) && !s.contains(Spatial));
        assert_eq!(s.to_string(), "temporal,anti_diagonal");
        assert_eq!("all".parse::<ModeSet>().unwrap(), ModeSet::all());
        assert!("sideways".parse::<ModeSet>().is_err());
        assert_eq!(ModeSet::all().without(Spatial).len(), 3);
    }

    proptest! {
        #[test]
        fn invert_after_apply_is_identity(g in arb_grid(), mode in 0usize..4, back in any::<bool>(), seed in any::<u32>()) {
            let dir = if back { Backward } else { Forward };
            let o = make_order(g, ScanMode::ALL[mode], dir);
            let data: Vec<f64> = (0..3 * g.len()).map(|i| ((i as f64) + seed as f64 * 0.001).sin()).collect();
            let x = Tensor::from_vec(&[3, g.len()], data).unwrap();
            let back = o.invert(&o.apply(&x).unwrap()).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }

        #[test]
        fn spatial_visits_positions_contiguously(g in arb_grid()) {
            let o = make_order(g, Spatial, Forward);
            let positions: Vec<usize> = o.perm.iter().map(|&s| s % g.positions()).collect();
            for (q, chunk) in positions.chunks(g.t_frames).enumerate() {
                prop_assert!(chunk.iter().all(|&p| p == q));
            }
            let frames: Vec<usize> = o.perm.iter().map(|&s| s / g.positions()).collect();
            for chunk in frames.chunks(g.t_frames) {
                prop_assert_eq!(chunk.to_vec(), (0..g.t_frames).collect::<Vec<_>>());
            }
        }
    }
}
