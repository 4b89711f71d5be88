//! Seed-indexed procedural gridworlds with controllable nuisance factors.
//!
//! A level is a square grid of floor and wall cells with one agent start and one
//! goal. Levels are rendered to RGB frames whose background is either a theme
//! from a fixed palette (background nuisance) or shifted by a per-level viewport
//! offset (offset nuisance). Neither nuisance affects rewards or transitions.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

pub const NUM_ACTIONS: usize = 5;
pub const MAX_OFFSET: i32 = 8;
pub const MAX_GENERATION_ATTEMPTS: u32 = 100;
const WALL_DENSITY: f64 = 0.25;

pub const WALL_COLOR: [u8; 3] = [64, 64, 64];
pub const GOAL_COLOR: [u8; 3] = [0, 220, 0];
pub const AGENT_COLOR: [u8; 3] = [230, 30, 30];

/// One background theme: a solid color (both entries equal) or a two-color
/// checker with 4-pixel squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Theme {
    pub primary: [u8; 3],
    pub secondary: [u8; 3],
}

pub const PALETTE: [Theme; 12] = [
    Theme { primary: [200, 200, 255], secondary: [200, 200, 255] },
    Theme { primary: [255, 230, 180], secondary: [255, 230, 180] },
    Theme { primary: [180, 140, 255], secondary: [180, 140, 255] },
    Theme { primary: [30, 30, 90], secondary: [30, 30, 90] },
    Theme { primary: [255, 255, 255], secondary: [255, 255, 255] },
    Theme { primary: [120, 80, 40], secondary: [120, 80, 40] },
    Theme { primary: [255, 200, 200], secondary: [200, 255, 255] },
    Theme { primary: [0, 0, 0], secondary: [100, 100, 160] },
    Theme { primary: [250, 250, 120], secondary: [60, 120, 60] },
    Theme { primary: [170, 170, 170], secondary: [230, 230, 230] },
    Theme { primary: [255, 140, 0], secondary: [100, 0, 100] },
    Theme { primary: [0, 120, 160], secondary: [220, 180, 220] },
];
const CHECKER_PX: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LevelSeed(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    None,
    Background,
    Offset,
}

impl NuisanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NuisanceMode::None => "none",
            NuisanceMode::Background => "background",
            NuisanceMode::Offset => "offset",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(NuisanceMode::None),
            "background" => Some(NuisanceMode::Background),
            "offset" => Some(NuisanceMode::Offset),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub grid_size: usize,
    pub nuisance_mode: NuisanceMode,
    pub palette_size: usize,
    pub max_episode_steps: u32,
    pub observation_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_size: 8,
            nuisance_mode: NuisanceMode::Background,
            palette_size: 12,
            max_episode_steps: 100,
            observation_size: 64,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            bail!(Config, "grid_size must be at least 2, got {}", self.grid_size);
        }
        if self.observation_size < self.grid_size {
            bail!(
                Config,
                "observation_size {} is smaller than grid_size {}",
                self.observation_size,
                self.grid_size
            );
        }
        if self.palette_size < 2 || self.palette_size > PALETTE.len() {
            bail!(Config, "palette_size must be in [2, {}], got {}", PALETTE.len(), self.palette_size);
        }
        if self.max_episode_steps == 0 {
            bail!(Config, "max_episode_steps must be positive");
        }
        Ok(())
    }

    /// Cell side in pixels. The grid is centred with a margin of at least
    /// `MAX_OFFSET` pixels when the frame is large enough, so shifted viewports
    /// still show every cell.
    pub fn cell_pixels(&self) -> usize {
        let usable = self.observation_size.saturating_sub(2 * MAX_OFFSET as usize);
        (usable / self.grid_size).max(1)
    }
}

/// Train seeds `1..=n_train` and a disjoint test pool of seeds above `n_train`.
pub fn level_split(n_train: usize, test_pool_size: usize) -> Result<(Vec<LevelSeed>, Vec<LevelSeed>)> {
    if n_train == 0 || test_pool_size == 0 {
        bail!(Config, "level split needs positive sizes, got ({n_train}, {test_pool_size})");
    }
    let train = (1..=n_train as u64).map(LevelSeed).collect();
    let start = n_train as u64 + 1;
    let test = (start..start + test_pool_size as u64).map(LevelSeed).collect();
    Ok((train, test))
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub size: usize,
    /// Row-major wall mask.
    pub walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
}

impl Layout {
    pub fn is_wall(&self, (r, c): Cell) -> bool {
        self.walls[r * self.size + c]
    }

    /// Result of taking `action` from `from`; walls and the border block movement.
    pub fn neighbor(&self, (r, c): Cell, action: usize) -> Cell {
        let (nr, nc) = match action {
            0 if r > 0 => (r - 1, c),
            1 if r + 1 < self.size => (r + 1, c),
            2 if c > 0 => (r, c - 1),
            3 if c + 1 < self.size => (r, c + 1),
            _ => (r, c),
        };
        if self.is_wall((nr, nc)) {
            (r, c)
        } else {
            (nr, nc)
        }
    }

    /// Breadth-first shortest path length from start to goal.
    pub fn shortest_path(&self) -> Option<usize> {
        let n = self.size;
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::new();
        dist[self.start.0 * n + self.start.1] = 0;
        queue.push_back(self.start);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.0 * n + cell.1];
            if cell == self.goal {
                return Some(d);
            }
            for action in 0..4 {
                let next = self.neighbor(cell, action);
                let slot = &mut dist[next.0 * n + next.1];
                if *slot == usize::MAX {
                    *slot = d + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceParams {
    pub theme: usize,
    /// Viewport shift `(rows, cols)` in pixels.
    pub offset: (i32, i32),
}

/// An RGB frame, `size × size × 3`, row-major HWC.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Unit-interval copy for network input.
    pub fn normalized<S: crate::Scalar>(&self) -> Vec<S> {
        self.pixels.iter().map(|&p| S::from_f64(p as f64 / 255.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub config: EnvConfig,
    pub seed: LevelSeed,
    pub layout: Layout,
    pub agent: Cell,
    pub step_count: u32,
    pub done: bool,
    pub nuisance: NuisanceParams,
}

/// Deterministically generates the level for `seed`.
pub fn make_level(config: &EnvConfig, seed: LevelSeed) -> Result<EnvState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let n = config.grid_size;
    let mut layout = None;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let walls: Vec<bool> = (0..n * n).map(|_| rng.random_bool(WALL_DENSITY)).collect();
        let open: Vec<Cell> =
            (0..n * n).filter(|&i| !walls[i]).map(|i| (i / n, i % n)).collect();
        if open.len() < 2 {
            continue;
        }
        let start = open[rng.random_range(0..open.len())];
        let goal = open[rng.random_range(0..open.len())];
        let candidate = Layout { size: n, walls, start, goal };
        if matches!(candidate.shortest_path(), Some(d) if d >= 2) {
            layout = Some(candidate);
            break;
        }
    }
    let layout = layout.ok_or(Error::Generation { seed: seed.0, attempts: MAX_GENERATION_ATTEMPTS })?;

    let nuisance = match config.nuisance_mode {
        NuisanceMode::None => NuisanceParams { theme: 0, offset: (0, 0) },
        NuisanceMode::Background => NuisanceParams {
            theme: (seed.0 % config.palette_size as u64) as usize,
            offset: (0, 0),
        },
        NuisanceMode::Offset => NuisanceParams {
            theme: 0,
            offset: (
                rng.random_range(-MAX_OFFSET..=MAX_OFFSET),
                rng.random_range(-MAX_OFFSET..=MAX_OFFSET),
            ),
        },
    };
    Ok(EnvState {
        config: *config,
        seed,
        agent: layout.start,
        layout,
        step_count: 0,
        done: false,
        nuisance,
    })
}

/// Which semantic class a rendered pixel belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelClass {
    Background,
    Wall,
    Goal,
    Agent,
}

impl EnvState {
    pub fn reset(&mut self) -> Observation {
        self.agent = self.layout.start;
        self.step_count = 0;
        self.done = false;
        self.render()
    }

    pub fn step(&mut self, action: usize) -> Result<(Observation, f64, bool)> {
        if action >= NUM_ACTIONS {
            bail!(Input, "action {action} out of range [0, {NUM_ACTIONS})");
        }
        if self.done {
            bail!(State, "step called on a finished episode");
        }
        self.agent = self.layout.neighbor(self.agent, action);
        self.step_count += 1;
        let mut reward = 0.0;
        if self.agent == self.layout.goal {
            reward = 1.0;
            self.done = true;
        } else if self.step_count >= self.config.max_episode_steps {
            self.done = true;
        }
        Ok((self.render(), reward, self.done))
    }

    /// Class of observation pixel `(row, col)` after the viewport offset.
    pub fn pixel_class(&self, row: usize, col: usize) -> PixelClass {
        let cfg = &self.config;
        let cell_px = cfg.cell_pixels();
        let margin = ((cfg.observation_size - cell_px * cfg.grid_size) / 2) as i64;
        let y = row as i64 - self.nuisance.offset.0 as i64 - margin;
        let x = col as i64 - self.nuisance.offset.1 as i64 - margin;
        let extent = (cell_px * cfg.grid_size) as i64;
        if y < 0 || x < 0 || y >= extent || x >= extent {
            return PixelClass::Background;
        }
        let cell = ((y as usize) / cell_px, (x as usize) / cell_px);
        if cell == self.agent {
            PixelClass::Agent
        } else if cell == self.layout.goal {
            PixelClass::Goal
        } else if self.layout.is_wall(cell) {
            PixelClass::Wall
        } else {
            PixelClass::Background
        }
    }

    pub fn render(&self) -> Observation {
        let size = self.config.observation_size;
        let theme = PALETTE[self.nuisance.theme];
        let mut pixels = Vec::with_capacity(size * size * 3);
        for row in 0..size {
            for col in 0..size {
                let color = match self.pixel_class(row, col) {
                    PixelClass::Agent => AGENT_COLOR,
                    PixelClass::Goal => GOAL_COLOR,
                    PixelClass::Wall => WALL_COLOR,
                    PixelClass::Background => {
                        if ((row / CHECKER_PX) + (col / CHECKER_PX)) % 2 == 0 {
                            theme.primary
                        } else {
                            theme.secondary
                        }
                    }
                };
                pixels.extend_from_slice(&color);
            }
        }
        Observation { size, pixels }
    }

    /// Copy of this state with a different background theme.
    pub fn with_theme(&self, theme: usize) -> Result<EnvState> {
        if theme >= self.config.palette_size {
            bail!(Input, "theme {theme} outside palette of size {}", self.config.palette_size);
        }
        let mut twin = self.clone();
        twin.nuisance.theme = theme;
        Ok(twin)
    }
}

/// Re-renders `state` under another background theme.
pub fn background_perturb(state: &EnvState, theme: usize) -> Result<Observation> {
    if theme == state.nuisance.theme {
        bail!(Input, "perturbation theme {theme} equals the level's own theme");
    }
    Ok(state.with_theme(theme)?.render())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// An episodic environment producing square RGB observations.
pub trait Environment {
    fn observation_size(&self) -> usize;
    /// Starts a new episode.
    fn reset(&mut self) -> Result<Observation>;
    fn step(&mut self, action: usize) -> Result<Transition>;
}

/// Samples a fresh level from a seed pool at every reset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridEnv {
    config: EnvConfig,
    pool: Vec<LevelSeed>,
    rng: ChaCha8Rng,
    state: Option<EnvState>,
}

impl GridEnv {
    pub fn new(config: EnvConfig, pool: Vec<LevelSeed>, stream: u64) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            bail!(Config, "level pool is empty");
        }
        Ok(Self { config, pool, rng: ChaCha8Rng::seed_from_u64(stream), state: None })
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }
}

impl Environment for GridEnv {
    fn observation_size(&self) -> usize {
        self.config.observation_size
    }

    fn reset(&mut self) -> Result<Observation> {
        let seed = self.pool[self.rng.random_range(0..self.pool.len())];
        let state = make_level(&self.config, seed)?;
        let obs = state.render();
        self.state = Some(state);
        Ok(obs)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::State("step before reset".into()))?;
        let (observation, reward, done) = state.step(action)?;
        Ok(Transition { observation, reward, done })
    }
}

/// Batch of independent environments with automatic reset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VecEnv<E> {
    envs: Vec<E>,
    observations: Vec<Observation>,
    running_returns: Vec<f64>,
}

/// Outcome of one synchronous batched step. `observations` already hold the
/// first frame of the next episode for environments that finished.
#[derive(Clone, Debug)]
pub struct VecStep {
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub completed_returns: Vec<f64>,
}

impl<E: Environment> VecEnv<E> {
    pub fn new(mut envs: Vec<E>) -> Result<Self> {
        if envs.is_empty() {
            bail!(Config, "vectorized environment needs at least one instance");
        }
        let size = envs[0].observation_size();
        let mut observations = Vec::with_capacity(envs.len());
        for (i, env) in envs.iter_mut().enumerate() {
            if env.observation_size() != size {
                return Err(Error::Config("mixed observation sizes".into()).in_env(i));
            }
            observations.push(env.reset().map_err(|e| e.in_env(i))?);
        }
        let running_returns = vec![0.0; envs.len()];
        Ok(Self { envs, observations, running_returns })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observation_size(&self) -> usize {
        self.envs[0].observation_size()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<VecStep> {
        if actions.len() != self.envs.len() {
            bail!(Input, "expected {} actions, got {}", self.envs.len(), actions.len());
        }
        let mut out = VecStep {
            rewards: Vec::with_capacity(actions.len()),
            dones: Vec::with_capacity(actions.len()),
            completed_returns: Vec::new(),
        };
        for (i, (env, &action)) in self.envs.iter_mut().zip(actions).enumerate() {
            let t = env.step(action).map_err(|e| e.in_env(i))?;
            self.running_returns[i] += t.reward;
            self.observations[i] = if t.done {
                out.completed_returns.push(self.running_returns[i]);
                self.running_returns[i] = 0.0;
                env.reset().map_err(|e| e.in_env(i))?
            } else {
                t.observation
            };
            out.rewards.push(t.reward);
            out.dones.push(t.done);
        }
        Ok(out)
    }
}

/// `num_envs` grid environments over `pool`, each with its own level stream.
pub fn grid_vec_env(config: EnvConfig, pool: &[LevelSeed], num_envs: usize, seed: u64) -> Result<VecEnv<GridEnv>> {
    let envs = (0..num_envs)
        .map(|i| GridEnv::new(config, pool.to_vec(), seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    VecEnv::new(envs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: NuisanceMode) -> EnvConfig {
        EnvConfig { nuisance_mode: mode, ..EnvConfig::default() }
    }

    #[test]
    fn split_examples() {
        let (train, test) = level_split(200, 1000).unwrap();
        assert_eq!(train.first(), Some(&LevelSeed(1)));
        assert_eq!(train.last(), Some(&LevelSeed(200)));
        assert!(test.iter().all(|s| !train.contains(s)));
        let (train, test) = level_split(1, 1).unwrap();
        assert_eq!(train, vec![LevelSeed(1)]);
        assert!(test[0].0 > 1);
        assert!(level_split(0, 5).is_err());
        assert!(level_split(5, 0).is_err());
    }

    #[test]
    fn theme_is_seed_mod_palette() {
        let s = make_level(&cfg(NuisanceMode::Background), LevelSeed(3)).unwrap();
        assert_eq!(s.nuisance.theme, 3);
        let s = make_level(&cfg(NuisanceMode::Background), LevelSeed(27)).unwrap();
        assert_eq!(s.nuisance.theme, 3);
    }

    #[test]
    fn step_errors() {
        let mut s = make_level(&cfg(NuisanceMode::None), LevelSeed(9)).unwrap();
        assert!(matches!(s.step(5), Err(Error::Input(_))));
        s.done = true;
        assert!(matches!(s.step(4), Err(Error::State(_))));
    }

    #[test]
    fn noop_in_open_space() {
        let mut s = make_level(&cfg(NuisanceMode::None), LevelSeed(4)).unwrap();
        let before = s.agent;
        let (_, r, done) = s.step(4).unwrap();
        assert_eq!((r, done, s.agent), (0.0, false, before));
    }

    #[test]
    fn step_cap_ends_episode() {
        let config = EnvConfig { max_episode_steps: 3, ..cfg(NuisanceMode::None) };
        let mut s = make_level(&config, LevelSeed(5)).unwrap();
        assert!(!s.step(4).unwrap().2);
        assert!(!s.step(4).unwrap().2);
        let (_, r, done) = s.step(4).unwrap();
        assert!(done);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(EnvConfig { palette_size: 1, ..EnvConfig::default() }.validate().is_err());
        assert!(EnvConfig { observation_size: 4, ..EnvConfig::default() }.validate().is_err());
    }
}
