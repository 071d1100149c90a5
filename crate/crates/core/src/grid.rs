//! Canvas state: panel paint, Moore-neighborhood geometry, and the
//! proposal/inking lifecycle.
//!
//! Coordinates are `(col, row)` with `col` growing rightward and `row`
//! growing downward, so "up" is `dr = -1`. The grid is finite: neighbors
//! that fall outside it are dropped, never wrapped.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default canvas width in panels.
pub const DEFAULT_WIDTH: usize = 24;
/// Default canvas height in panels.
pub const DEFAULT_HEIGHT: usize = 14;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid must be at least 3x3 panels, got {width}x{height}")]
    InvalidDims { width: usize, height: usize },
    #[error("cell {cell} is outside the {dims} grid")]
    OutOfBounds { cell: Cell, dims: GridDims },
    #[error("opacity level {0} is not in 1..=4")]
    InvalidOpacity(u8),
    #[error("malformed grid dump at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct GridDims {
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct RawDims {
    width: usize,
    height: usize,
}

impl TryFrom<RawDims> for GridDims {
    type Error = GridError;

    fn try_from(raw: RawDims) -> Result<Self, Self::Error> {
        GridDims::new(raw.width, raw.height)
    }
}

impl GridDims {
    pub fn new(width: usize, height: usize) -> Result<Self, GridError> {
        if width < 3 || height < 3 {
            return Err(GridError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    pub fn check(&self, cell: Cell) -> Result<(), GridError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(GridError::OutOfBounds { cell, dims: *self })
        }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// A panel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Relative position inside a 3x3 block. `(0, 0)` is the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Offset {
    pub dc: i8,
    pub dr: i8,
}

impl Offset {
    pub const CENTER: Offset = Offset::new(0, 0);
    pub const UP: Offset = Offset::new(0, -1);
    pub const DOWN: Offset = Offset::new(0, 1);
    pub const LEFT: Offset = Offset::new(-1, 0);
    pub const RIGHT: Offset = Offset::new(1, 0);

    pub const fn new(dc: i8, dr: i8) -> Self {
        Self { dc, dr }
    }

    pub fn is_von_neumann(&self) -> bool {
        self.dc.abs() + self.dr.abs() == 1
    }

    pub fn is_diagonal(&self) -> bool {
        self.dc.abs() * self.dr.abs() == 1
    }

    /// Moves `cell` by this offset, or `None` when the result leaves the grid.
    pub fn apply(&self, cell: Cell, dims: GridDims) -> Option<Cell> {
        let col = cell.col.checked_add_signed(self.dc as isize)?;
        let row = cell.row.checked_add_signed(self.dr as isize)?;
        let moved = Cell::new(col, row);
        dims.contains(moved).then_some(moved)
    }

    /// Position of this offset in [`MOORE_OFFSETS`], if it is one.
    pub fn moore_index(&self) -> Option<usize> {
        MOORE_OFFSETS.iter().position(|o| o == self)
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.dc, self.dr)
    }
}

/// The eight Moore offsets in row-major order.
pub const MOORE_OFFSETS: [Offset; 8] = [
    Offset::new(-1, -1),
    Offset::new(0, -1),
    Offset::new(1, -1),
    Offset::new(-1, 0),
    Offset::new(1, 0),
    Offset::new(-1, 1),
    Offset::new(0, 1),
    Offset::new(1, 1),
];

/// In-bounds Moore cells around `center`, in [`MOORE_OFFSETS`] order.
pub fn moore_neighborhood(center: Cell, dims: GridDims) -> Result<Vec<Cell>, GridError> {
    Ok(moore_pairs(center, dims)?
        .into_iter()
        .map(|(_, cell)| cell)
        .collect())
}

/// Like [`moore_neighborhood`], keeping the offset that produced each cell.
pub fn moore_pairs(center: Cell, dims: GridDims) -> Result<Vec<(Offset, Cell)>, GridError> {
    dims.check(center)?;
    Ok(MOORE_OFFSETS
        .iter()
        .filter_map(|o| o.apply(center, dims).map(|c| (*o, c)))
        .collect())
}

/// Opacity level, 1 (faint) to 4 (solid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Opacity(u8);

impl Opacity {
    pub const MIN: Opacity = Opacity(1);
    pub const MAX: Opacity = Opacity(4);

    pub fn new(level: u8) -> Result<Self, GridError> {
        if (1..=4).contains(&level) {
            Ok(Self(level))
        } else {
            Err(GridError::InvalidOpacity(level))
        }
    }

    pub fn level(&self) -> u8 {
        self.0
    }

    /// Fraction of full alpha for rendering.
    pub fn alpha(&self) -> f64 {
        f64::from(self.0) / 4.0
    }
}

impl TryFrom<u8> for Opacity {
    type Error = GridError;

    fn try_from(level: u8) -> Result<Self, Self::Error> {
        Opacity::new(level)
    }
}

impl From<Opacity> for u8 {
    fn from(o: Opacity) -> u8 {
        o.0
    }
}

/// Paint on a panel. Unpainted panels have no `PanelPaint` and render white.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanelPaint {
    pub arm: u8,
    pub opacity: Opacity,
}

impl PanelPaint {
    pub fn new(arm: u8, opacity: Opacity) -> Self {
        Self { arm, opacity }
    }
}

impl fmt::Display for PanelPaint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.arm, self.opacity.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InkOutcome {
    Inked(PanelPaint),
    /// The pointer landed on a cell without a proposal (it left the ring).
    NoProposal,
}

/// The drawing surface.
///
/// `painted` only grows or gets overwritten by inking. `proposals` is the
/// transient ring around the last center; a proposal over a painted cell
/// shadows the paint until the cell is inked again or the ring moves on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCanvas {
    dims: GridDims,
    painted: BTreeMap<Cell, PanelPaint>,
    proposals: BTreeMap<Cell, PanelPaint>,
    proposal_center: Option<Cell>,
}

impl GridCanvas {
    pub fn new(dims: GridDims) -> Self {
        Self {
            dims,
            painted: BTreeMap::new(),
            proposals: BTreeMap::new(),
            proposal_center: None,
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn painted(&self, cell: Cell) -> Option<PanelPaint> {
        self.painted.get(&cell).copied()
    }

    pub fn proposal(&self, cell: Cell) -> Option<PanelPaint> {
        self.proposals.get(&cell).copied()
    }

    /// What the panel shows right now: a proposal if any, else its paint.
    pub fn visible(&self, cell: Cell) -> Option<PanelPaint> {
        self.proposal(cell).or_else(|| self.painted(cell))
    }

    pub fn painted_cells(&self) -> impl Iterator<Item = (Cell, PanelPaint)> + '_ {
        self.painted.iter().map(|(c, p)| (*c, *p))
    }

    pub fn proposal_cells(&self) -> impl Iterator<Item = (Cell, PanelPaint)> + '_ {
        self.proposals.iter().map(|(c, p)| (*c, *p))
    }

    pub fn proposal_center(&self) -> Option<Cell> {
        self.proposal_center
    }

    pub fn painted_count(&self) -> usize {
        self.painted.len()
    }

    /// Commits the proposal at `cell`. The proposal ring itself is left in
    /// place; the caller re-centers it.
    pub fn ink_panel(&mut self, cell: Cell) -> InkOutcome {
        match self.proposals.remove(&cell) {
            Some(paint) => {
                self.painted.insert(cell, paint);
                InkOutcome::Inked(paint)
            }
            None => InkOutcome::NoProposal,
        }
    }

    /// Replaces the proposal ring with one proposal per in-bounds offset
    /// around `center`. Offsets outside the grid, and the center offset, are
    /// ignored. Returns the cells that received a proposal.
    pub fn set_proposals(
        &mut self,
        center: Cell,
        paints: &BTreeMap<Offset, PanelPaint>,
    ) -> Result<Vec<(Cell, PanelPaint)>, GridError> {
        self.dims.check(center)?;
        self.proposals.clear();
        let mut placed = Vec::with_capacity(8);
        for offset in MOORE_OFFSETS {
            let (Some(paint), Some(cell)) = (paints.get(&offset), offset.apply(center, self.dims))
            else {
                continue;
            };
            self.proposals.insert(cell, *paint);
            placed.push((cell, *paint));
        }
        self.proposal_center = Some(center);
        Ok(placed)
    }

    pub fn clear_proposals(&mut self) {
        self.proposals.clear();
        self.proposal_center = None;
    }

    /// Row-major CSV of committed paint: `arm:opacity` per painted cell,
    /// `-1` elsewhere. Proposals are not part of the dump.
    pub fn export_csv(&self) -> String {
        let mut out = String::with_capacity(self.dims.cell_count() * 3);
        for row in 0..self.dims.height {
            for col in 0..self.dims.width {
                if col > 0 {
                    out.push(',');
                }
                match self.painted.get(&Cell::new(col, row)) {
                    Some(p) => out.push_str(&p.to_string()),
                    None => out.push_str("-1"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> Result<(), GridError> {
        w.write_all(self.export_csv().as_bytes())?;
        Ok(())
    }

    /// Parses a dump produced by [`GridCanvas::export_csv`]. Dimensions are
    /// taken from the shape of the dump.
    pub fn import_csv(text: &str) -> Result<Self, GridError> {
        let mut painted = BTreeMap::new();
        let mut width = None;
        let mut height = 0;
        for (row, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| GridError::Parse {
                line: row + 1,
                reason,
            };
            let fields: Vec<&str> = line.split(',').collect();
            match width {
                None => width = Some(fields.len()),
                Some(w) if w != fields.len() => {
                    return Err(parse_err(format!("expected {w} fields, got {}", fields.len())))
                }
                Some(_) => {}
            }
            for (col, field) in fields.iter().enumerate() {
                let field = field.trim();
                if field == "-1" {
                    continue;
                }
                let (arm, op) = field
                    .split_once(':')
                    .ok_or_else(|| parse_err(format!("bad cell {field:?}")))?;
                let arm: u8 = arm
                    .parse()
                    .map_err(|_| parse_err(format!("bad arm {arm:?}")))?;
                let op: u8 = op
                    .parse()
                    .map_err(|_| parse_err(format!("bad opacity {op:?}")))?;
                let opacity = Opacity::new(op).map_err(|e| parse_err(e.to_string()))?;
                painted.insert(Cell::new(col, row), PanelPaint::new(arm, opacity));
            }
            height = row + 1;
        }
        let dims = GridDims::new(width.unwrap_or(0), height)?;
        Ok(Self {
            dims,
            painted,
            proposals: BTreeMap::new(),
            proposal_center: None,
        })
    }
}
