//! Cannon games. All three share the cannon, its bullet and the meaning of
//! action indices 0..6; `shooter7` adds a seventh action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::canvas::{Canvas, Rect, FRAME_WIDTH};
use super::Game;

pub const ACTION_NAMES: [&str; 7] = ["noop", "fire", "left", "right", "left_fire", "right_fire", "up"];

const CANNON_Y: i32 = 76;
const CANNON_W: i32 = 7;
const CANNON_H: i32 = 4;
const CANNON_SPEED: i32 = 2;
const BULLET_H: i32 = 3;
const BULLET_SPEED: i32 = 4;
const FAST_BULLET_SPEED: i32 = 6;
const BOMB_SPEED: i32 = 2;
const GROUND_Y: i32 = 81;

const CANNON_COLOR: [u8; 3] = [92, 186, 92];
const ALIEN_COLOR: [u8; 3] = [210, 164, 74];
const RAIDER_COLOR: [u8; 3] = [198, 89, 179];
const BULLET_COLOR: [u8; 3] = [236, 236, 236];
const BOMB_COLOR: [u8; 3] = [252, 90, 90];
const GROUND_COLOR: [u8; 3] = [110, 110, 110];

struct Controls {
    dx: i32,
    fire: bool,
    fast: bool,
}

fn decode(action: usize) -> Controls {
    let (dx, fire) = match action {
        1 => (0, true),
        2 => (-1, false),
        3 => (1, false),
        4 => (-1, true),
        5 => (1, true),
        6 => (0, true),
        _ => (0, false),
    };
    Controls {
        dx,
        fire,
        fast: action == 6,
    }
}

/// The player's cannon and its single in-flight bullet.
struct Cannon {
    x: i32,
    bullet: Option<(i32, i32, i32)>,
}

impl Cannon {
    fn new(x: i32) -> Self {
        Self { x, bullet: None }
    }

    fn rect(&self) -> Rect {
        Rect::new(self.x, CANNON_Y, CANNON_W, CANNON_H)
    }

    /// Applies movement/fire and advances the bullet. Returns the region the
    /// bullet swept this tick, if one is in flight.
    fn update(&mut self, action: usize) -> Option<Rect> {
        let c = decode(action);
        self.x = (self.x + c.dx * CANNON_SPEED).clamp(0, FRAME_WIDTH as i32 - CANNON_W);
        if c.fire && self.bullet.is_none() {
            let speed = if c.fast { FAST_BULLET_SPEED } else { BULLET_SPEED };
            self.bullet = Some((self.x + CANNON_W / 2, CANNON_Y - BULLET_H, speed));
        }
        let (x, y, speed) = self.bullet?;
        let ny = y - speed;
        if ny + BULLET_H <= 0 {
            self.bullet = None;
            return None;
        }
        self.bullet = Some((x, ny, speed));
        Some(Rect::new(x, ny, 1, BULLET_H + speed))
    }

    fn draw(&self, canvas: &mut Canvas) {
        canvas.fill(self.rect(), CANNON_COLOR);
        canvas.fill(Rect::new(self.x + CANNON_W / 2, CANNON_Y - 1, 1, 1), CANNON_COLOR);
        if let Some((x, y, _)) = self.bullet {
            canvas.fill(Rect::new(x, y, 1, BULLET_H), BULLET_COLOR);
        }
    }
}

fn draw_ground(canvas: &mut Canvas) {
    canvas.fill(Rect::new(0, GROUND_Y, FRAME_WIDTH as i32, 1), GROUND_COLOR);
}

/// Advances bombs; true if one struck the cannon.
fn update_bombs(bombs: &mut Vec<(i32, i32)>, cannon: Rect) -> bool {
    for b in bombs.iter_mut() {
        b.1 += BOMB_SPEED;
    }
    bombs.retain(|b| b.1 < GROUND_Y);
    bombs.iter().any(|&(x, y)| Rect::new(x, y, 2, 3).overlaps(&cannon))
}

fn draw_bombs(bombs: &[(i32, i32)], canvas: &mut Canvas) {
    for &(x, y) in bombs {
        canvas.fill(Rect::new(x, y, 2, 3), BOMB_COLOR);
    }
}

const GRID_ROWS: usize = 2;
const GRID_COLS: usize = 4;
const ALIEN_W: i32 = 6;
const ALIEN_H: i32 = 4;
const COL_PITCH: i32 = 12;
const ROW_PITCH: i32 = 9;
const LANDING_Y: i32 = 72;

/// A descending alien formation. The formation drops bombs in `shooter6`;
/// in the holdout variant aliens instead peel off and dive at the cannon.
pub struct AlienGrid {
    diving: bool,
    rng: ChaCha8Rng,
    cannon: Cannon,
    alive: [[bool; GRID_COLS]; GRID_ROWS],
    origin: (i32, i32),
    dir: i32,
    tick: u32,
    next_attack: u32,
    bombs: Vec<(i32, i32)>,
    divers: Vec<(i32, i32)>,
}

impl AlienGrid {
    pub fn new(diving: bool) -> Self {
        Self {
            diving,
            rng: ChaCha8Rng::seed_from_u64(0),
            cannon: Cannon::new(38),
            alive: [[true; GRID_COLS]; GRID_ROWS],
            origin: (20, 14),
            dir: 1,
            tick: 0,
            next_attack: 0,
            bombs: Vec::new(),
            divers: Vec::new(),
        }
    }

    fn alien_rect(&self, row: usize, col: usize) -> Rect {
        Rect::new(
            self.origin.0 + col as i32 * COL_PITCH,
            self.origin.1 + row as i32 * ROW_PITCH,
            ALIEN_W,
            ALIEN_H,
        )
    }

    fn alive_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..GRID_ROWS)
            .flat_map(|r| (0..GRID_COLS).map(move |c| (r, c)))
            .filter(|&(r, c)| self.alive[r][c])
    }

    fn march(&mut self) {
        if !self.tick.is_multiple_of(2) {
            return;
        }
        let cols: Vec<usize> = self.alive_cells().map(|(_, c)| c).collect();
        let (Some(&lo), Some(&hi)) = (cols.iter().min(), cols.iter().max()) else {
            return;
        };
        self.origin.0 += self.dir;
        let left = self.origin.0 + lo as i32 * COL_PITCH;
        let right = self.origin.0 + hi as i32 * COL_PITCH + ALIEN_W;
        if left <= 0 || right >= FRAME_WIDTH as i32 {
            self.dir = -self.dir;
            self.origin.1 += 3;
        }
    }

    fn attack(&mut self) {
        if self.tick < self.next_attack {
            return;
        }
        let cells: Vec<(usize, usize)> = self.alive_cells().collect();
        if cells.is_empty() {
            return;
        }
        if self.diving {
            if self.divers.len() < 2 {
                let (r, c) = cells[self.rng.gen_range(0..cells.len())];
                let rect = self.alien_rect(r, c);
                self.alive[r][c] = false;
                self.divers.push((rect.x, rect.y));
            }
            self.next_attack = self.tick + self.rng.gen_range(30..50);
        } else {
            if self.bombs.len() < 2 {
                let (_, c) = cells[self.rng.gen_range(0..cells.len())];
                let r = (0..GRID_ROWS).rev().find(|&r| self.alive[r][c]).unwrap();
                let rect = self.alien_rect(r, c);
                self.bombs.push((rect.x + 2, rect.y + ALIEN_H));
            }
            self.next_attack = self.tick + self.rng.gen_range(16..32);
        }
    }

    /// Moves divers; true if one rammed the cannon.
    fn update_divers(&mut self) -> bool {
        let target = self.cannon.rect().center_x();
        let steer = self.tick.is_multiple_of(2);
        for d in self.divers.iter_mut() {
            d.1 += 1;
            if steer {
                d.0 += (target - (d.0 + ALIEN_W / 2)).signum();
            }
        }
        self.divers.retain(|d| d.1 < GROUND_Y);
        let cannon = self.cannon.rect();
        self.divers
            .iter()
            .any(|&(x, y)| Rect::new(x, y, ALIEN_W, ALIEN_H).overlaps(&cannon))
    }

    /// Resolves the bullet against the lowest alien it swept through.
    fn resolve_hit(&mut self, swept: Rect) -> u32 {
        enum Target {
            Cell(usize, usize),
            Diver(usize),
        }
        let mut best: Option<(i32, Target)> = None;
        for (r, c) in self.alive_cells() {
            let rect = self.alien_rect(r, c);
            if rect.overlaps(&swept) && best.as_ref().is_none_or(|(y, _)| rect.y > *y) {
                best = Some((rect.y, Target::Cell(r, c)));
            }
        }
        for (i, &(x, y)) in self.divers.iter().enumerate() {
            if Rect::new(x, y, ALIEN_W, ALIEN_H).overlaps(&swept) && best.as_ref().is_none_or(|(by, _)| y > *by) {
                best = Some((y, Target::Diver(i)));
            }
        }
        match best {
            None => 0,
            Some((_, target)) => {
                match target {
                    Target::Cell(r, c) => self.alive[r][c] = false,
                    Target::Diver(i) => {
                        self.divers.remove(i);
                    }
                }
                self.cannon.bullet = None;
                10
            }
        }
    }
}

impl Game for AlienGrid {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let grid_w = (GRID_COLS as i32 - 1) * COL_PITCH + ALIEN_W;
        self.origin = (self.rng.gen_range(2..FRAME_WIDTH as i32 - grid_w - 2), 14);
        self.dir = if self.rng.gen_bool(0.5) { 1 } else { -1 };
        self.cannon = Cannon::new(self.rng.gen_range(0..=FRAME_WIDTH as i32 - CANNON_W));
        self.alive = [[true; GRID_COLS]; GRID_ROWS];
        self.tick = 0;
        self.next_attack = self.rng.gen_range(16..40);
        self.bombs.clear();
        self.divers.clear();
    }

    fn tick(&mut self, action: usize) -> (u32, bool) {
        self.tick += 1;
        let reward = match self.cannon.update(action) {
            Some(swept) => self.resolve_hit(swept),
            None => 0,
        };
        self.march();
        self.attack();
        let cannon = self.cannon.rect();
        let hit = update_bombs(&mut self.bombs, cannon) | (self.diving && self.update_divers());
        let landed = self.alive_cells().any(|(r, c)| {
            let a = self.alien_rect(r, c);
            a.y + a.h >= LANDING_Y
        });
        let cleared = self.alive_cells().next().is_none() && self.divers.is_empty();
        (reward, hit || landed || cleared)
    }

    fn draw(&self, canvas: &mut Canvas) {
        draw_ground(canvas);
        for (r, c) in self.alive_cells() {
            let a = self.alien_rect(r, c);
            canvas.fill(a, ALIEN_COLOR);
        }
        for &(x, y) in &self.divers {
            canvas.fill(Rect::new(x, y, ALIEN_W, ALIEN_H), ALIEN_COLOR);
        }
        draw_bombs(&self.bombs, canvas);
        self.cannon.draw(canvas);
    }

    fn reward_bound(&self, _max_steps: u32) -> u32 {
        10 * (GRID_ROWS * GRID_COLS) as u32
    }
}

const RAIDERS: usize = 3;
const RAIDER_W: i32 = 8;
const RAIDER_H: i32 = 5;
const RAIDER_LANES: [i32; RAIDERS] = [12, 24, 36];
const RESPAWN_TICKS: u32 = 24;

#[derive(Clone, Copy)]
struct Raider {
    x: i32,
    vx: i32,
    respawn_at: Option<u32>,
}

/// Three respawning raiders patrolling fixed lanes and dropping bombs.
pub struct Raiders {
    rng: ChaCha8Rng,
    cannon: Cannon,
    raiders: [Raider; RAIDERS],
    tick: u32,
    next_attack: u32,
    bombs: Vec<(i32, i32)>,
}

impl Default for Raiders {
    fn default() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            cannon: Cannon::new(38),
            raiders: [Raider {
                x: 0,
                vx: 1,
                respawn_at: None,
            }; RAIDERS],
            tick: 0,
            next_attack: 0,
            bombs: Vec::new(),
        }
    }
}

impl Raiders {
    fn raider_rect(&self, i: usize) -> Option<Rect> {
        let r = &self.raiders[i];
        r.respawn_at
            .is_none()
            .then(|| Rect::new(r.x, RAIDER_LANES[i], RAIDER_W, RAIDER_H))
    }

    fn spawn(&mut self, i: usize) {
        self.raiders[i] = Raider {
            x: self.rng.gen_range(0..=FRAME_WIDTH as i32 - RAIDER_W),
            vx: if self.rng.gen_bool(0.5) { 1 } else { -1 },
            respawn_at: None,
        };
    }
}

impl Game for Raiders {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..RAIDERS {
            self.spawn(i);
        }
        self.cannon = Cannon::new(self.rng.gen_range(0..=FRAME_WIDTH as i32 - CANNON_W));
        self.tick = 0;
        self.next_attack = self.rng.gen_range(20..36);
        self.bombs.clear();
    }

    fn tick(&mut self, action: usize) -> (u32, bool) {
        self.tick += 1;
        let mut reward = 0;
        if let Some(swept) = self.cannon.update(action) {
            let hit = (0..RAIDERS)
                .filter(|&i| self.raider_rect(i).is_some_and(|r| r.overlaps(&swept)))
                .max_by_key(|&i| RAIDER_LANES[i]);
            if let Some(i) = hit {
                self.raiders[i].respawn_at = Some(self.tick + RESPAWN_TICKS);
                self.cannon.bullet = None;
                reward = 21;
            }
        }
        for i in 0..RAIDERS {
            match self.raiders[i].respawn_at {
                Some(t) if t <= self.tick => self.spawn(i),
                Some(_) => {}
                None => {
                    let r = &mut self.raiders[i];
                    r.x += r.vx;
                    if r.x <= 0 || r.x >= FRAME_WIDTH as i32 - RAIDER_W {
                        r.x = r.x.clamp(0, FRAME_WIDTH as i32 - RAIDER_W);
                        r.vx = -r.vx;
                    }
                }
            }
        }
        if self.tick >= self.next_attack {
            let live: Vec<usize> = (0..RAIDERS).filter(|&i| self.raiders[i].respawn_at.is_none()).collect();
            if !live.is_empty() && self.bombs.len() < 2 {
                let i = live[self.rng.gen_range(0..live.len())];
                let r = self.raider_rect(i).unwrap();
                self.bombs.push((r.x + 3, r.y + RAIDER_H));
            }
            self.next_attack = self.tick + self.rng.gen_range(20..36);
        }
        let hit = update_bombs(&mut self.bombs, self.cannon.rect());
        (reward, hit)
    }

    fn draw(&self, canvas: &mut Canvas) {
        draw_ground(canvas);
        for i in 0..RAIDERS {
            if let Some(r) = self.raider_rect(i) {
                canvas.fill(r, RAIDER_COLOR);
            }
        }
        draw_bombs(&self.bombs, canvas);
        self.cannon.draw(canvas);
    }

    fn reward_bound(&self, max_steps: u32) -> u32 {
        // A kill needs a fresh bullet to climb at least past the lowest lane.
        let min_ticks_per_kill = ((CANNON_Y - BULLET_H - (RAIDER_LANES[RAIDERS - 1] + RAIDER_H)) / FAST_BULLET_SPEED) as u32;
        21 * (max_steps / min_ticks_per_kill.max(1) + 1)
    }
}

/// Horizontal offset from the cannon's muzzle to the centre of the lowest
/// visible alien, read from the rendered frame.
#[cfg(test)]
pub(crate) fn probe_alignment(frame: &super::canvas::RgbFrame) -> Option<i32> {
    let find = |color: [u8; 3], rows: std::ops::Range<usize>| {
        let mut best: Option<(usize, usize)> = None;
        for y in rows {
            for x in 0..FRAME_WIDTH {
                if frame.pixel(x, y) == color && best.is_none_or(|(by, _)| y >= by) {
                    best = Some((y, x));
                }
            }
        }
        best
    };
    let (_, cannon_left) = find(CANNON_COLOR, CANNON_Y as usize..super::canvas::FRAME_HEIGHT)?;
    let (row, _) = find(ALIEN_COLOR, 0..CANNON_Y as usize)?;
    let left = (0..FRAME_WIDTH).find(|&x| frame.pixel(x, row) == ALIEN_COLOR)? as i32;
    let muzzle = cannon_left as i32 + CANNON_W / 2;
    Some(left + ALIEN_W / 2 - muzzle)
}
