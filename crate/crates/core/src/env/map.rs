use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{Cell, EnvError, Heading};

pub const DEFAULT_CELL_SIZE: f64 = 0.1;

/// Step count marking a cell the BFS never reached.
pub const UNREACHABLE: u32 = u32::MAX;

/// Occupancy grid with a metric cell size.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    id: String,
    width: usize,
    height: usize,
    cell_size: f64,
    blocked: Vec<bool>,
}

impl GridMap {
    /// Builds a map from row-major occupancy flags, enforcing the map invariants.
    pub fn from_cells(
        id: impl Into<String>,
        width: usize,
        height: usize,
        cell_size: f64,
        blocked: Vec<bool>,
    ) -> Result<Self, EnvError> {
        if width < 3 || height < 3 {
            return Err(EnvError::MalformedMap(format!(
                "map must be at least 3x3, got {width}x{height}"
            )));
        }
        if blocked.len() != width * height {
            return Err(EnvError::MalformedMap(format!(
                "expected {} cells, got {}",
                width * height,
                blocked.len()
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(EnvError::MalformedMap(format!("invalid cell size {cell_size}")));
        }
        let map = Self {
            id: id.into(),
            width,
            height,
            cell_size,
            blocked,
        };
        if map.largest_region() < 2 {
            return Err(EnvError::UnreachableMap);
        }
        Ok(map)
    }

    /// Parses the ASCII map format: optional `cellsize <meters>` header, then
    /// equal-length rows of `#` (blocked) and `.` (free).
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, EnvError> {
        let mut lines: Vec<&str> = text.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        let mut cell_size = DEFAULT_CELL_SIZE;
        if let Some(first) = lines.first() {
            if let Some(rest) = first.strip_prefix("cellsize") {
                cell_size = rest
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| EnvError::MalformedMap(format!("bad cellsize header {first:?}")))?;
                lines.remove(0);
            }
        }
        let height = lines.len();
        let width = lines.first().map_or(0, |l| l.len());
        let mut blocked = Vec::with_capacity(width * height);
        for (row, line) in lines.iter().enumerate() {
            if line.len() != width {
                return Err(EnvError::MalformedMap(format!(
                    "row {row} has length {}, expected {width}",
                    line.len()
                )));
            }
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '#' => blocked.push(true),
                    '.' => blocked.push(false),
                    other => {
                        return Err(EnvError::MalformedMap(format!(
                            "illegal character {other:?} at row {row}, column {col}"
                        )))
                    }
                }
            }
        }
        Self::from_cells(id, width, height, cell_size, blocked)
    }

    /// Renders the map back to its text form. The header is only written for
    /// non-default cell sizes.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.cell_size != DEFAULT_CELL_SIZE {
            out.push_str(&format!("cellsize {}\n", self.cell_size));
        }
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.blocked[y * self.width + x] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: &str) {
        self.id = id.to_string();
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Out-of-bounds cells count as blocked.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.blocked[self.index(c)]
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn blocked_flags(&self) -> &[bool] {
        &self.blocked
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.blocked.len())
            .filter(|&i| !self.blocked[i])
            .map(|i| self.cell_at(i))
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    fn largest_region(&self) -> usize {
        let mut seen = vec![false; self.blocked.len()];
        let mut best = 0;
        for start in 0..self.blocked.len() {
            if self.blocked[start] || seen[start] {
                continue;
            }
            let field = DistanceField::from_source(self, self.cell_at(start));
            let mut size = 0;
            for (i, s) in field.steps.iter().enumerate() {
                if *s != UNREACHABLE {
                    seen[i] = true;
                    size += 1;
                }
            }
            best = best.max(size);
        }
        best
    }
}

/// Breadth-first step counts from one source cell over the 4-connected free grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    source: Cell,
    steps: Vec<u32>,
}

impl DistanceField {
    /// BFS from `source`. A blocked source yields an all-unreachable field.
    pub fn from_source(map: &GridMap, source: Cell) -> Self {
        let mut steps = vec![UNREACHABLE; map.width * map.height];
        if map.is_free(source) {
            let mut queue = VecDeque::new();
            steps[map.index(source)] = 0;
            queue.push_back(source);
            while let Some(c) = queue.pop_front() {
                let d = steps[map.index(c)];
                for h in Heading::ALL {
                    let n = c.offset(h);
                    if map.is_free(n) && steps[map.index(n)] == UNREACHABLE {
                        steps[map.index(n)] = d + 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        Self {
            width: map.width,
            height: map.height,
            source,
            steps,
        }
    }

    pub fn source(&self) -> Cell {
        self.source
    }

    /// Step count to `c`, or `None` when unreachable or out of bounds.
    pub fn steps(&self, c: Cell) -> Option<u32> {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width || c.y as usize >= self.height {
            return None;
        }
        match self.steps[c.y as usize * self.width + c.x as usize] {
            UNREACHABLE => None,
            s => Some(s),
        }
    }

    /// Largest finite step count in the field.
    pub fn eccentricity(&self) -> u32 {
        self.steps
            .iter()
            .copied()
            .filter(|s| *s != UNREACHABLE)
            .max()
            .unwrap_or(0)
    }
}

/// Shortest 4-connected path length between two free cells, in meters.
/// Disconnected cells give `f64::INFINITY`.
pub fn geodesic_distance(map: &GridMap, a: Cell, b: Cell) -> Result<f64, EnvError> {
    for c in [a, b] {
        if !map.is_free(c) {
            return Err(EnvError::BlockedEndpoint { x: c.x, y: c.y });
        }
    }
    let field = DistanceField::from_source(map, a);
    Ok(field
        .steps(b)
        .map_or(f64::INFINITY, |s| f64::from(s) * map.cell_size))
}
