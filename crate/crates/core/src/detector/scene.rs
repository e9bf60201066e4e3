//! Refined visual features on a regular grid — the toy stand-in for an
//! encoder output.

use ndarray::Array2;

use crate::autodiff::Matrix;

use super::DetectorError;

/// Token features F with their 2D positions. Tokens are stored row-major:
/// index = row * W + col, position = cell center in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTokens {
    pub features: Matrix,
    pub positions: Matrix,
    pub grid_shape: (usize, usize),
}

impl SceneTokens {
    pub fn new(features: Matrix, grid_shape: (usize, usize)) -> Result<Self, DetectorError> {
        let (h, w) = grid_shape;
        if features.nrows() != h * w {
            return Err(DetectorError::DimensionMismatch {
                what: "token count vs grid shape",
                expected: h * w,
                got: features.nrows(),
            });
        }
        let positions = Array2::from_shape_fn((h * w, 2), |(i, j)| {
            let row = i / w;
            let col = i % w;
            if j == 0 {
                (col as f64 + 0.5) / w as f64
            } else {
                (row as f64 + 0.5) / h as f64
            }
        });
        Ok(Self {
            features,
            positions,
            grid_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn position(&self, index: usize) -> (f64, f64) {
        (self.positions[[index, 0]], self.positions[[index, 1]])
    }

    /// Bilinear sample of the feature grid at a point in the unit square.
    /// Cell centers are the sample nodes; coordinates are clamped to the
    /// center lattice, so sampling at an exact node returns that token's
    /// feature.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Vec<f64> {
        let (h, w) = self.grid_shape;
        let d = self.dim();
        // Continuous cell coordinates relative to cell centers.
        let fx = (x * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = (y * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let mut out = vec![0.0; d];
        for (cy, cx, weight) in [
            (y0, x0, (1.0 - ty) * (1.0 - tx)),
            (y0, x1, (1.0 - ty) * tx),
            (y1, x0, ty * (1.0 - tx)),
            (y1, x1, ty * tx),
        ] {
            let row = self.features.row(cy * w + cx);
            for (o, v) in out.iter_mut().zip(row) {
                *o += weight * v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens() -> SceneTokens {
        // 2x2 grid, 2-dim features distinguishing each cell.
        let features = Matrix::from_shape_vec(
            (4, 2),
            vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0],
        )
        .unwrap();
        SceneTokens::new(features, (2, 2)).unwrap()
    }

    #[test]
    fn positions_are_cell_centers() {
        let t = tokens();
        assert_eq!(t.position(0), (0.25, 0.25));
        assert_eq!(t.position(1), (0.75, 0.25));
        assert_eq!(t.position(2), (0.25, 0.75));
        assert_eq!(t.position(3), (0.75, 0.75));
    }

    #[test]
    fn wrong_token_count_rejected() {
        let features = Matrix::zeros((3, 2));
        assert!(SceneTokens::new(features, (2, 2)).is_err());
    }

    #[test]
    fn bilinear_at_node_returns_token_feature() {
        let t = tokens();
        for i in 0..4 {
            let (x, y) = t.position(i);
            let sampled = t.sample_bilinear(x, y);
            let expected: Vec<f64> = t.features.row(i).to_vec();
            assert_eq!(sampled, expected);
        }
    }

    #[test]
    fn bilinear_midpoint_averages() {
        let t = tokens();
        let sampled = t.sample_bilinear(0.5, 0.25);
        assert!((sampled[0] - 0.5).abs() < 1e-12);
        assert!((sampled[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_outside_lattice() {
        let t = tokens();
        let corner = t.sample_bilinear(0.0, 0.0);
        assert_eq!(corner, t.features.row(0).to_vec());
    }
}
