//! Life-Gate gridworld.
//!
//! Text layout, one character per cell: `#` wall, `.` open (black) cell,
//! `y` dead-end (yellow) cell, `L` life gate, `D` death gate. The agent's
//! state is its position only. Actions are up, down, left, right and
//! no-op, in that order.
//!
//! On black cells, a forced move to the right happens with probability
//! `death_drift`; otherwise the chosen cardinal move is made. On yellow cells
//! the action is ignored: the agent moves right with `deadend_drift_right`
//! and stays otherwise. Walls block movement, and a blocked move leaves the
//! agent where it is.
//!
//! The shipped default layout is a reconstruction; the original map was only
//! published as a picture.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TerminalKind};

pub const DEFAULT_LAYOUT: &str = include_str!("../layouts/lifegate_default.txt");

pub const N_ACTIONS: usize = 5;
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["up", "down", "left", "right", "noop"];
const MOVES: [(isize, isize); N_ACTIONS] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];
const RIGHT: (isize, isize) = (1, 0);
const STAY: (isize, isize) = (0, 0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Black,
    Yellow,
    Wall,
    LifeGate,
    DeathGate,
}

impl CellKind {
    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '#' => CellKind::Wall,
            '.' => CellKind::Black,
            'y' => CellKind::Yellow,
            'L' => CellKind::LifeGate,
            'D' => CellKind::DeathGate,
            _ => return None,
        })
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Wall => '#',
            CellKind::Black => '.',
            CellKind::Yellow => 'y',
            CellKind::LifeGate => 'L',
            CellKind::DeathGate => 'D',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifeGateLayout {
    pub width: usize,
    pub height: usize,
    cells: Vec<CellKind>,
    pub death_drift: f64,
    pub deadend_drift_right: f64,
    /// MDP state of each cell, `None` for walls.
    state_of: Vec<Option<usize>>,
    /// Cell index of each MDP state.
    cell_of: Vec<usize>,
}

impl Default for LifeGateLayout {
    fn default() -> Self {
        Self::parse(DEFAULT_LAYOUT).expect("default layout is valid")
    }
}

impl LifeGateLayout {
    /// Parses the text format with the default drifts (0.4 and 0.7).
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::InvalidLayout("empty layout".into()));
        }
        let width = rows[0].chars().count();
        let mut cells = Vec::with_capacity(width * rows.len());
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::InvalidLayout(format!(
                    "row {y} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, c) in row.chars().enumerate() {
                let kind = CellKind::from_char(c)
                    .ok_or_else(|| Error::InvalidLayout(format!("unknown cell {c:?} at ({x}, {y})")))?;
                cells.push(kind);
            }
        }
        Self::from_cells(width, rows.len(), cells, 0.4, 0.7)
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        death_drift: f64,
        deadend_drift_right: f64,
    ) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::InvalidLayout(format!(
                "{} cells for a {width}x{height} grid",
                cells.len()
            )));
        }
        let mut layout = Self {
            width,
            height,
            cells,
            death_drift,
            deadend_drift_right,
            state_of: Vec::new(),
            cell_of: Vec::new(),
        };
        layout.index();
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_drifts(mut self, death_drift: f64, deadend_drift_right: f64) -> Result<Self> {
        self.death_drift = death_drift;
        self.deadend_drift_right = deadend_drift_right;
        self.validate()?;
        Ok(self)
    }

    fn index(&mut self) {
        self.state_of = vec![None; self.cells.len()];
        self.cell_of.clear();
        for (i, kind) in self.cells.iter().enumerate() {
            if *kind != CellKind::Wall {
                self.state_of[i] = Some(self.cell_of.len());
                self.cell_of.push(i);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let has = |k| self.cells.contains(&k);
        if !has(CellKind::LifeGate) || !has(CellKind::DeathGate) {
            return Err(Error::InvalidLayout("need at least one life gate and one death gate".into()));
        }
        if !has(CellKind::Black) && !has(CellKind::Yellow) {
            return Err(Error::InvalidLayout("no cell the agent can occupy".into()));
        }
        for (name, p) in [("death_drift", self.death_drift), ("deadend_drift_right", self.deadend_drift_right)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidLayout(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn cell(&self, x: usize, y: usize) -> CellKind {
        self.cells[y * self.width + x]
    }

    pub fn n_states(&self) -> usize {
        self.cell_of.len()
    }

    /// MDP state at `(x, y)`, `None` for walls.
    pub fn state_at(&self, x: usize, y: usize) -> Option<usize> {
        self.state_of[y * self.width + x]
    }

    /// `(x, y)` of an MDP state.
    pub fn position(&self, state: usize) -> (usize, usize) {
        let c = self.cell_of[state];
        (c % self.width, c / self.width)
    }

    pub fn state_kind(&self, state: usize) -> CellKind {
        self.cells[self.cell_of[state]]
    }

    pub fn states_of_kind(&self, kind: CellKind) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.state_kind(s) == kind).collect()
    }

    /// Cell reached by `delta` from `(x, y)`; off-grid and walls block.
    fn step(&self, x: usize, y: usize, delta: (isize, isize)) -> (usize, usize) {
        let nx = x as isize + delta.0;
        let ny = y as isize + delta.1;
        if nx < 0 || ny < 0 || nx as usize >= self.width || ny as usize >= self.height {
            return (x, y);
        }
        let (nx, ny) = (nx as usize, ny as usize);
        if self.cell(nx, ny) == CellKind::Wall {
            (x, y)
        } else {
            (nx, ny)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|k| k.to_char()));
            out.push('\n');
        }
        out
    }
}

/// One MDP state per non-wall cell; gates become absorbing terminals.
pub fn build_lifegate(layout: &LifeGateLayout) -> Result<TabularMdp> {
    layout.validate()?;
    let n = layout.n_states();
    let mut t = vec![0.0; n * N_ACTIONS * n];
    let mut kinds = vec![TerminalKind::None; n];
    for s in 0..n {
        let (x, y) = layout.position(s);
        let kind = layout.state_kind(s);
        for (a, &mv) in MOVES.iter().enumerate() {
            let row = &mut t[(s * N_ACTIONS + a) * n..(s * N_ACTIONS + a + 1) * n];
            let outcomes: [((isize, isize), f64); 2] = match kind {
                CellKind::LifeGate | CellKind::DeathGate => [(STAY, 1.0), (STAY, 0.0)],
                CellKind::Yellow => [
                    (RIGHT, layout.deadend_drift_right),
                    (STAY, 1.0 - layout.deadend_drift_right),
                ],
                CellKind::Black => [(RIGHT, layout.death_drift), (mv, 1.0 - layout.death_drift)],
                CellKind::Wall => unreachable!("walls have no state"),
            };
            for (delta, p) in outcomes {
                if p > 0.0 {
                    let (nx, ny) = layout.step(x, y, delta);
                    let next = layout.state_at(nx, ny).expect("step never lands on a wall");
                    row[next] += p;
                }
            }
        }
        kinds[s] = match kind {
            CellKind::LifeGate => TerminalKind::Positive,
            CellKind::DeathGate => TerminalKind::Negative,
            _ => TerminalKind::None,
        };
    }
    TabularMdp::new(n, N_ACTIONS, t, kinds)
}

/// CSV grid of per-state values: walls as `#`, gates as `L`/`D`, agent cells
/// with four decimals.
pub fn render_value_grid(layout: &LifeGateLayout, values: &[f64]) -> Result<String> {
    if values.len() != layout.n_states() {
        return Err(Error::DimensionMismatch {
            expected: layout.n_states(),
            got: values.len(),
        });
    }
    let mut out = String::new();
    for y in 0..layout.height {
        for x in 0..layout.width {
            if x > 0 {
                out.push(',');
            }
            match (layout.cell(x, y), layout.state_at(x, y)) {
                (CellKind::Black | CellKind::Yellow, Some(s)) => {
                    // -0.0 renders as 0.0
                    let v = values[s] + 0.0;
                    let _ = write!(out, "{v:.4}");
                }
                (k, _) => out.push(k.to_char()),
            }
        }
        out.push('\n');
    }
    Ok(out)
}
