//! Paddle, ball and a six-row brick wall.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::canvas::{Canvas, Rect, FRAME_HEIGHT, FRAME_WIDTH};
use super::Game;

pub const ACTION_NAMES: [&str; 4] = ["noop", "fire", "left", "right"];

const ROWS: usize = 6;
const COLS: usize = 12;
const WALL_TOP: i32 = 10;
const PADDLE_Y: i32 = 78;
const PADDLE_W: i32 = 12;
const PADDLE_SPEED: i32 = 3;
const BALL: i32 = 2;
const LIVES: u8 = 3;

const ROW_COLORS: [[u8; 3]; ROWS] = [
    [200, 72, 72],
    [198, 108, 58],
    [180, 122, 48],
    [162, 162, 42],
    [72, 160, 72],
    [66, 72, 200],
];

fn row_value(row: usize) -> u32 {
    match row {
        0 | 1 => 7,
        2 | 3 => 4,
        _ => 1,
    }
}

fn brick_rect(row: usize, col: usize) -> Rect {
    Rect::new(col as i32 * 7, WALL_TOP + row as i32 * 4, 6, 3)
}

pub struct Brick {
    rng: ChaCha8Rng,
    bricks: [[bool; COLS]; ROWS],
    paddle_x: i32,
    ball: (i32, i32),
    velocity: (i32, i32),
    launched: bool,
    lives: u8,
}

impl Default for Brick {
    fn default() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            bricks: [[true; COLS]; ROWS],
            paddle_x: 36,
            ball: (0, 0),
            velocity: (0, 0),
            launched: false,
            lives: LIVES,
        }
    }
}

impl Brick {
    fn rest_ball_on_paddle(&mut self) {
        self.launched = false;
        self.ball = (self.paddle_x + PADDLE_W / 2 - 1, PADDLE_Y - BALL);
        self.velocity = (0, 0);
    }

    fn ball_rect(&self) -> Rect {
        Rect::new(self.ball.0, self.ball.1, BALL, BALL)
    }

    fn paddle_rect(&self) -> Rect {
        Rect::new(self.paddle_x, PADDLE_Y, PADDLE_W, 2)
    }

    fn bricks_left(&self) -> usize {
        self.bricks.iter().flatten().filter(|&&b| b).count()
    }
}

impl Game for Brick {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.bricks = [[true; COLS]; ROWS];
        self.paddle_x = self.rng.gen_range(10..=FRAME_WIDTH as i32 - PADDLE_W - 10);
        self.lives = LIVES;
        self.rest_ball_on_paddle();
    }

    fn tick(&mut self, action: usize) -> (u32, bool) {
        let dx = match action {
            2 => -PADDLE_SPEED,
            3 => PADDLE_SPEED,
            _ => 0,
        };
        self.paddle_x = (self.paddle_x + dx).clamp(0, FRAME_WIDTH as i32 - PADDLE_W);

        if !self.launched {
            if action == 1 {
                self.launched = true;
                let vx = if self.rng.gen_bool(0.5) { 1 } else { -1 };
                self.velocity = (vx, -2);
            } else {
                self.rest_ball_on_paddle();
                return (0, false);
            }
        }

        let max_x = FRAME_WIDTH as i32 - BALL;
        let (mut x, mut y) = (self.ball.0 + self.velocity.0, self.ball.1 + self.velocity.1);
        if x < 0 {
            x = -x;
            self.velocity.0 = -self.velocity.0;
        } else if x > max_x {
            x = 2 * max_x - x;
            self.velocity.0 = -self.velocity.0;
        }
        if y < 0 {
            y = -y;
            self.velocity.1 = -self.velocity.1;
        }
        self.ball = (x, y);

        let mut reward = 0;
        let ball = self.ball_rect();
        'hit: for row in 0..ROWS {
            for col in 0..COLS {
                if self.bricks[row][col] && brick_rect(row, col).overlaps(&ball) {
                    self.bricks[row][col] = false;
                    reward = row_value(row);
                    self.velocity.1 = -self.velocity.1;
                    break 'hit;
                }
            }
        }

        if self.velocity.1 > 0 && ball.overlaps(&self.paddle_rect()) {
            let rel = ball.x + 1 - self.paddle_x;
            self.velocity = (
                match rel {
                    i32::MIN..=2 => -2,
                    3..=5 => -1,
                    6..=8 => 1,
                    _ => 2,
                },
                -2,
            );
        }

        if self.ball.1 >= FRAME_HEIGHT as i32 {
            self.lives -= 1;
            if self.lives == 0 {
                return (reward, true);
            }
            self.rest_ball_on_paddle();
        }
        (reward, self.bricks_left() == 0)
    }

    fn draw(&self, canvas: &mut Canvas) {
        for (row, bricks) in self.bricks.iter().enumerate() {
            for (col, &alive) in bricks.iter().enumerate() {
                if alive {
                    canvas.fill(brick_rect(row, col), ROW_COLORS[row]);
                }
            }
        }
        for life in 0..self.lives as i32 {
            canvas.fill(Rect::new(2 + life * 4, 2, 2, 2), [142, 142, 142]);
        }
        canvas.fill(self.paddle_rect(), [200, 72, 72]);
        canvas.fill(self.ball_rect(), [236, 236, 236]);
    }

    fn reward_bound(&self, _max_steps: u32) -> u32 {
        (0..ROWS).map(|r| row_value(r) * COLS as u32).sum()
    }
}
