/// An RGB8 video frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn pixel(&self, p: usize) -> [u8; 3] {
        [self.rgb[3 * p], self.rgb[3 * p + 1], self.rgb[3 * p + 2]]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Binary image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            width,
            height,
            bits: (0..width * height).map(|p| f(p % width, p / width)).collect(),
        }
    }

    /// Pixels with `x0 <= x < x1`, `y0 <= y < y1`, clipped to the image.
    pub fn rect(width: usize, height: usize, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self::from_fn(width, height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            x >= x0 && x < x1 && y >= y0 && y < y1
        })
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn intersection(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    /// Intersection over union; 0 for two empty masks.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn union_with(&mut self, other: &Mask) {
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, &b)| *a |= b);
    }

    pub fn subtract(&mut self, other: &Mask) {
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, &b)| *a &= !b);
    }

    /// Tightest bounding box as `[x0, y0, x1, y1)`; `None` when empty.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let mut b: Option<[usize; 4]> = None;
        for (p, _) in self.bits.iter().enumerate().filter(|(_, &v)| v) {
            let (x, y) = (p % self.width, p / self.width);
            b = Some(match b {
                None => [x, y, x + 1, y + 1],
                Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)],
            });
        }
        b
    }

    /// Row-major bits packed MSB-first.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &v)| v) {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    pub fn unpack(width: usize, height: usize, bytes: &[u8]) -> Option<Self> {
        let n = width * height;
        if bytes.len() != n.div_ceil(8) {
            return None;
        }
        Some(Self {
            width,
            height,
            bits: (0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Generated,
    Propagated,
}

/// Masks of one frame keyed by object id.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub frame_index: usize,
    pub masks: Vec<(u32, Mask)>,
    pub source: MaskSource,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_geometry() {
        let a = Mask::rect(10, 8, 2, 1, 6, 5);
        assert_eq!(a.area(), 16);
        assert_eq!(a.bbox(), Some([2, 1, 6, 5]));
        let b = Mask::rect(10, 8, 4, 1, 8, 5);
        assert_eq!(a.intersection(&b), 8);
        assert!((a.iou(&b) - 8.0 / 24.0).abs() < 1e-15);
        assert_eq!(Mask::empty(3, 3).bbox(), None);
        assert_eq!(Mask::rect(4, 4, -3, -3, 1, 1).area(), 1);
    }

    #[test]
    fn pack_round_trip() {
        let m = Mask::from_fn(7, 5, |x, y| (x * 3 + y) % 4 == 0);
        let packed = m.pack();
        assert_eq!(packed.len(), 5);
        assert_eq!(Mask::unpack(7, 5, &packed), Some(m));
        assert_eq!(Mask::unpack(7, 5, &[0; 4]), None);
    }
}
