use std::fmt;

pub const FRAME_WIDTH: usize = 84;
pub const FRAME_HEIGHT: usize = 84;
pub const FRAME_BYTES: usize = FRAME_WIDTH * FRAME_HEIGHT * 3;

/// One 84×84 RGB frame, row-major, 8 bits per channel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RgbFrame(Box<[u8]>);

impl RgbFrame {
    pub fn from_bytes(bytes: Vec<u8>) -> Option<Self> {
        (bytes.len() == FRAME_BYTES).then(|| RgbFrame(bytes.into_boxed_slice()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * FRAME_WIDTH + x) * 3;
        [self.0[i], self.0[i + 1], self.0[i + 2]]
    }
}

impl fmt::Debug for RgbFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = self.0.chunks_exact(3).filter(|p| p.iter().any(|&c| c != 0)).count();
        write!(f, "RgbFrame({lit} lit pixels)")
    }
}

/// Axis-aligned integer rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { x, y, w, h }
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.x + other.w && other.x < self.x + self.w && self.y < other.y + other.h && other.y < self.y + self.h
    }

    pub fn center_x(&self) -> i32 {
        self.x + self.w / 2
    }
}

pub struct Canvas {
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new() -> Self {
        Self {
            pixels: vec![0; FRAME_BYTES],
        }
    }

    /// Fills `rect` clipped to the frame.
    pub fn fill(&mut self, rect: Rect, color: [u8; 3]) {
        let x0 = rect.x.max(0) as usize;
        let y0 = rect.y.max(0) as usize;
        let x1 = (rect.x + rect.w).clamp(0, FRAME_WIDTH as i32) as usize;
        let y1 = (rect.y + rect.h).clamp(0, FRAME_HEIGHT as i32) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = (y * FRAME_WIDTH + x) * 3;
                self.pixels[i..i + 3].copy_from_slice(&color);
            }
        }
    }

    pub fn into_frame(self) -> RgbFrame {
        RgbFrame(self.pixels.into_boxed_slice())
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self::new()
    }
}
