//! Fixture maps and seeded map/episode suites.
//!
//! Random suites mix open rooms scattered with small rectangular blocks and rooms
//! holding a U-shaped cup whose closed side faces the goal, with the start inside
//! the cup. The scripted agent handles the first kind and gets stuck in the second.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{
    geodesic_distance, sample_episode, Cell, EnvError, EpisodeSpec, GridMap, Heading, NavEnv, Pose,
    DEFAULT_CELL_SIZE, DEFAULT_MAX_STEPS,
};

pub const OPEN_ROOM: &str = "\
........
........
........
........
........
........
........
........
";

pub const CONVEX_BLOCK: &str = "\
..........
..........
..........
...###....
...###....
..........
..........
..........
..........
..........
";

pub const TWO_BLOCKS: &str = "\
..........
.##.......
.##.......
..........
......##..
......##..
......##..
..........
...#......
..........
";

pub const L_CORRIDOR: &str = "\
..........
..........
########..
########..
########..
########..
";

pub const WALL_DETOUR: &str = "\
.....
.###.
..#..
..#..
.....
";

pub const CONCAVE_TRAP: &str = "\
............
............
............
............
..#######...
..#.....#...
..#.....#...
..#.....#...
............
............
";

/// Goal of the concave-trap fixture, straight behind the closed side of the cup.
pub const CONCAVE_TRAP_GOAL: Cell = Cell::new(5, 2);

/// Starts inside the cup from which the scripted agent never reaches the goal.
pub const CONCAVE_TRAP_STARTS: [Pose; 4] = [
    Pose::new(5, 5, Heading::N),
    Pose::new(4, 5, Heading::N),
    Pose::new(6, 6, Heading::E),
    Pose::new(3, 5, Heading::W),
];

/// Fixture maps with only convex obstacles, by id.
pub fn convex_fixtures() -> Vec<GridMap> {
    [("open_room", OPEN_ROOM), ("convex_block", CONVEX_BLOCK), ("two_blocks", TWO_BLOCKS)]
        .iter()
        .map(|(id, text)| GridMap::parse(*id, text).expect("fixture maps parse"))
        .collect()
}

pub fn fixture(id: &str) -> Option<GridMap> {
    let text = match id {
        "open_room" => OPEN_ROOM,
        "convex_block" => CONVEX_BLOCK,
        "two_blocks" => TWO_BLOCKS,
        "l_corridor" => L_CORRIDOR,
        "wall_detour" => WALL_DETOUR,
        "concave_trap" => CONCAVE_TRAP,
        _ => return None,
    };
    Some(GridMap::parse(id, text).expect("fixture maps parse"))
}

pub const FIXTURE_IDS: [&str; 6] = ["open_room", "convex_block", "two_blocks", "l_corridor", "wall_detour", "concave_trap"];

/// Builds an episode on `map` with the exact geodesic shortest-path length.
pub fn make_episode(map: &GridMap, start: Pose, goal: Cell, max_steps: u32, seed: u64) -> Result<EpisodeSpec, EnvError> {
    let l = geodesic_distance(map, start.cell(), goal)?;
    if !l.is_finite() {
        return Err(EnvError::InvalidEpisode(format!("goal {goal:?} unreachable from {start:?}")));
    }
    Ok(EpisodeSpec {
        map_id: map.id().into(),
        start,
        goal,
        shortest_path_length: l,
        max_steps,
        seed,
    })
}

/// Every (start cell, goal cell) pair of a map, start heading north.
pub fn exhaustive_episodes(map: &GridMap, max_steps: u32) -> Vec<EpisodeSpec> {
    let free: Vec<Cell> = map.free_cells().collect();
    let mut out = Vec::new();
    for &s in &free {
        for &g in &free {
            if s == g {
                continue;
            }
            if let Ok(spec) = make_episode(map, Pose::new(s.x, s.y, Heading::N), g, max_steps, 0) {
                out.push(spec);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub name: String,
    pub count: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub max_blocks: usize,
    /// Fraction of episodes that start inside a cup.
    pub trap_fraction: f64,
    pub min_geodesic: f64,
    pub max_steps: u32,
}

impl SuiteConfig {
    pub fn training(count: usize) -> Self {
        Self {
            name: "train".into(),
            count,
            min_size: 14,
            max_size: 20,
            max_blocks: 5,
            trap_fraction: 0.3,
            min_geodesic: 0.5,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn validation(count: usize) -> Self {
        Self {
            name: "val".into(),
            ..Self::training(count)
        }
    }
}

/// Maps and one episode per map.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub maps: Vec<GridMap>,
    pub episodes: Vec<EpisodeSpec>,
}

impl Suite {
    /// One environment per episode.
    pub fn envs(&self) -> Result<Vec<NavEnv>, EnvError> {
        self.episodes
            .iter()
            .map(|spec| {
                let map = self
                    .maps
                    .iter()
                    .find(|m| m.id() == spec.map_id)
                    .ok_or_else(|| EnvError::InvalidEpisode(format!("unknown map {}", spec.map_id)))?;
                NavEnv::new(map.clone(), spec.clone())
            })
            .collect()
    }
}

struct Canvas {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    /// Cells that must stay free.
    reserved: Vec<bool>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            blocked: vec![false; width * height],
            reserved: vec![false; width * height],
        }
    }

    fn idx(&self, c: Cell) -> Option<usize> {
        (c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height)
            .then(|| c.y as usize * self.width + c.x as usize)
    }

    fn block(&mut self, c: Cell) {
        if let Some(i) = self.idx(c) {
            if !self.reserved[i] {
                self.blocked[i] = true;
            }
        }
    }

    fn reserve(&mut self, c: Cell) {
        if let Some(i) = self.idx(c) {
            self.reserved[i] = true;
        }
    }

    fn scatter_blocks(&mut self, n: usize, rng: &mut crate::Rng) {
        for _ in 0..n {
            let w = rng.random_range(1..=3);
            let h = rng.random_range(1..=3);
            let x0 = rng.random_range(1..self.width - w) as i32;
            let y0 = rng.random_range(1..self.height - h) as i32;
            let cells: Vec<Cell> = (0..h as i32)
                .flat_map(|dy| (0..w as i32).map(move |dx| Cell::new(x0 + dx, y0 + dy)))
                .collect();
            if cells.iter().all(|c| self.idx(*c).is_some_and(|i| !self.reserved[i])) {
                for c in cells {
                    self.block(c);
                }
            }
        }
    }
}

/// Cell at offset `u` along `dir` and `v` along its right-hand perpendicular.
fn local(origin: Cell, dir: Heading, u: i32, v: i32) -> Cell {
    let (dx, dy) = dir.delta();
    let (px, py) = dir.right().delta();
    Cell::new(origin.x + u * dx + v * px, origin.y + u * dy + v * py)
}

/// Draws a cup whose closed side faces `dir`; returns (start, goal).
fn place_cup(canvas: &mut Canvas, rng: &mut crate::Rng) -> Option<(Pose, Cell)> {
    let dir = Heading::ALL[rng.random_range(0..4)];
    let half = rng.random_range(1..=2);
    let depth = rng.random_range(2..=4);
    let gap = rng.random_range(2..=5);
    // Extent along dir: from -depth-2 (room to leave the cup) to gap + 1.
    let (w, h) = (canvas.width as i32, canvas.height as i32);
    let origin = Cell::new(rng.random_range(0..w), rng.random_range(0..h));
    let corners = [
        local(origin, dir, -depth - 2, -half - 3),
        local(origin, dir, -depth - 2, half + 3),
        local(origin, dir, gap + 1, -half - 3),
        local(origin, dir, gap + 1, half + 3),
    ];
    if !corners.iter().all(|c| c.x >= 0 && c.y >= 0 && c.x < w && c.y < h) {
        return None;
    }
    // Keep the surroundings of the cup free so a way around always exists.
    for u in -depth - 2..=gap + 1 {
        for v in -half - 3..=half + 3 {
            let inner = (-depth..=0).contains(&u) && (-half - 1..=half + 1).contains(&v);
            if !inner {
                canvas.reserve(local(origin, dir, u, v));
            }
        }
    }
    for v in -half - 1..=half + 1 {
        canvas.block(local(origin, dir, 0, v));
    }
    for u in -depth..=0 {
        canvas.block(local(origin, dir, u, -half - 1));
        canvas.block(local(origin, dir, u, half + 1));
    }
    for u in -depth..0 {
        for v in -half..=half {
            canvas.reserve(local(origin, dir, u, v));
        }
    }
    let s = local(origin, dir, rng.random_range(-depth..0), rng.random_range(-half..=half));
    let g = local(origin, dir, gap, rng.random_range(-half..=half));
    Some((Pose::new(s.x, s.y, Heading::ALL[rng.random_range(0..4)]), g))
}

fn generate_one(cfg: &SuiteConfig, index: usize, seed: u64) -> Result<(GridMap, EpisodeSpec), EnvError> {
    let mut rng = crate::seeded_rng(seed);
    let id = format!("{}_{index:03}", cfg.name);
    let trap = rng.random::<f64>() < cfg.trap_fraction;
    loop {
        let w = rng.random_range(cfg.min_size..=cfg.max_size);
        let h = rng.random_range(cfg.min_size..=cfg.max_size);
        let mut canvas = Canvas::new(w, h);
        let endpoints = if trap {
            match place_cup(&mut canvas, &mut rng) {
                Some(e) => Some(e),
                None => continue,
            }
        } else {
            None
        };
        let blocks = rng.random_range(0..=cfg.max_blocks);
        canvas.scatter_blocks(blocks, &mut rng);
        let Ok(map) = GridMap::from_cells(id.clone(), w, h, DEFAULT_CELL_SIZE, canvas.blocked) else {
            continue;
        };
        let episode_seed = rng.random::<u64>();
        let spec = match endpoints {
            Some((start, goal)) => make_episode(&map, start, goal, cfg.max_steps, episode_seed),
            None => sample_episode(&map, episode_seed, cfg.min_geodesic, cfg.max_steps),
        };
        if let Ok(spec) = spec {
            return Ok((map, spec));
        }
    }
}

/// Generates a suite; identical (config, seed) pairs give identical suites.
pub fn generate_suite(cfg: &SuiteConfig, seed: u64) -> Result<Suite, EnvError> {
    if cfg.min_size < 8 || cfg.max_size < cfg.min_size {
        return Err(EnvError::InvalidEpisode(format!(
            "suite sizes must satisfy 8 <= min <= max, got {}..{}",
            cfg.min_size, cfg.max_size
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut suite = Suite {
        maps: Vec::with_capacity(cfg.count),
        episodes: Vec::with_capacity(cfg.count),
    };
    for i in 0..cfg.count {
        let (map, spec) = generate_one(cfg, i, rng.random())?;
        suite.maps.push(map);
        suite.episodes.push(spec);
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        for id in FIXTURE_IDS {
            assert!(fixture(id).is_some(), "{id}");
        }
        assert_eq!(fixture("wall_detour").unwrap().free_count(), 20);
    }

    #[test]
    fn suite_is_deterministic_and_valid() {
        let cfg = SuiteConfig::validation(12);
        let a = generate_suite(&cfg, 5).unwrap();
        assert_eq!(a, generate_suite(&cfg, 5).unwrap());
        assert_eq!(a.envs().unwrap().len(), 12);
        assert_ne!(a, generate_suite(&cfg, 6).unwrap());
    }
}
