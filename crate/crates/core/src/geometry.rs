//! Output grids, projection into input space, the uniform neighbor stencil,
//! and differentiable bilinear point sampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A real-valued `(x, y)` location in input pixel units.
pub type Point = [f64; 2];

/// How output pixel indices map onto input coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ProjectionMode {
    /// `x' = x * W / (alpha*W - 1)`, taken literally. The last output index
    /// lands at `W`, one past the last input pixel.
    PaperExact,
    /// `x' = x * (W - 1) / (alpha*W - 1)`: output corners hit input corners.
    #[default]
    AlignCorners,
}

/// Treatment of taps that fall outside the input map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PaddingMode {
    /// Out-of-range taps read as zero.
    #[default]
    Zeros,
    /// Coordinates are clamped into `[0, extent - 1]` before interpolation.
    Border,
}

/// Output extent for scale factor `alpha`: `floor(alpha * extent)`.
pub fn output_extent(extent: usize, alpha: f64) -> Result<usize> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::config(format!(
            "scale factor must exceed 1, got {alpha}"
        )));
    }
    // Guard against products like 2.9999999999999996 from decimal scales.
    let out = (alpha * extent as f64 + 1e-9).floor() as usize;
    Ok(out.max(1))
}

/// Row-major `(x, y)` enumeration of an output grid, x fastest.
pub fn make_output_grid(out_h: usize, out_w: usize) -> Vec<(usize, usize)> {
    let mut p = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            p.push((x, y));
        }
    }
    p
}

/// Coordinate projection `psi(i) = i * num / den` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub num_x: f64,
    pub num_y: f64,
    pub den_x: f64,
    pub den_y: f64,
}

impl Projection {
    /// `alpha * extent` in the projection denominator is the realized output
    /// extent, so non-integer scales still map corners exactly.
    pub fn new(in_h: usize, in_w: usize, alpha: f64, mode: ProjectionMode) -> Result<Self> {
        let out_h = output_extent(in_h, alpha)?;
        let out_w = output_extent(in_w, alpha)?;
        if out_h <= 1 || out_w <= 1 {
            return Err(Error::config(format!(
                "degenerate projection: output extent {out_h}x{out_w} makes alpha*extent - 1 vanish"
            )));
        }
        let num = |extent: usize| match mode {
            ProjectionMode::PaperExact => extent as f64,
            ProjectionMode::AlignCorners => (extent - 1) as f64,
        };
        Ok(Projection {
            in_h,
            in_w,
            out_h,
            out_w,
            num_x: num(in_w),
            num_y: num(in_h),
            den_x: (out_w - 1) as f64,
            den_y: (out_h - 1) as f64,
        })
    }

    /// Multiplies before dividing so the last output index lands exactly on
    /// the numerator.
    #[inline]
    pub fn apply(&self, x: usize, y: usize) -> Point {
        [
            x as f64 * self.num_x / self.den_x,
            y as f64 * self.num_y / self.den_y,
        ]
    }

    /// Projected reference points for every output pixel in grid order.
    pub fn reference_points(&self) -> Vec<Point> {
        make_output_grid(self.out_h, self.out_w)
            .into_iter()
            .map(|(x, y)| self.apply(x, y))
            .collect()
    }
}

/// Projects integer output coordinates into input space.
pub fn project(
    p: &[(usize, usize)],
    in_h: usize,
    in_w: usize,
    alpha: f64,
    mode: ProjectionMode,
) -> Result<Vec<Point>> {
    let proj = Projection::new(in_h, in_w, alpha, mode)?;
    Ok(p.iter().map(|&(x, y)| proj.apply(x, y)).collect())
}

/// The centered `k_u x k_u` stencil as `(dx, dy)` pairs, row-major.
pub fn neighbor_offsets(k_u: usize) -> Result<Vec<(i32, i32)>> {
    if k_u == 0 || k_u.is_multiple_of(2) {
        return Err(Error::config(format!(
            "k_u must be odd and >= 1, got {k_u}"
        )));
    }
    let half = (k_u / 2) as i32;
    let mut offsets = Vec::with_capacity(k_u * k_u);
    for dy in -half..=half {
        for dx in -half..=half {
            offsets.push((dx, dy));
        }
    }
    Ok(offsets)
}

/// Bilinear footprint of one sampling location: four plane offsets, their
/// weights, and the weights' derivatives with respect to x and y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Taps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dx: [f64; 4],
    pub dy: [f64; 4],
}

impl Taps {
    // Returns the clamped coordinate and whether it is still free to move.
    #[inline]
    fn resolve_axis(v: f64, extent: usize, padding: PaddingMode) -> (f64, bool) {
        match padding {
            PaddingMode::Zeros => (v, true),
            PaddingMode::Border => {
                let hi = (extent - 1) as f64;
                if v < 0.0 {
                    (0.0, false)
                } else if v > hi {
                    (hi, false)
                } else {
                    (v, true)
                }
            }
        }
    }

    /// Taps for `point` on an `h x w` plane. Out-of-range taps get weight 0
    /// and index 0, so reads through them contribute nothing.
    #[inline]
    pub fn new(point: Point, h: usize, w: usize, padding: PaddingMode) -> Self {
        let (x, free_x) = Self::resolve_axis(point[0], w, padding);
        let (y, free_y) = Self::resolve_axis(point[1], h, padding);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);

        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        // d/dx max(0, 1 - |x - s|) = -sign(x - s) inside the open unit
        // window; both vanish when x sits exactly on a grid line.
        let gx = if fx > 0.0 && free_x {
            [-1.0, 1.0]
        } else {
            [0.0, 0.0]
        };
        let gy = if fy > 0.0 && free_y {
            [-1.0, 1.0]
        } else {
            [0.0, 0.0]
        };

        let mut taps = Taps {
            idx: [0; 4],
            w: [0.0; 4],
            dx: [0.0; 4],
            dy: [0.0; 4],
        };
        for (t, (oy, ox)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let (sx, sy) = (x0 + ox as i64, y0 + oy as i64);
            if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                continue;
            }
            taps.idx[t] = sy as usize * w + sx as usize;
            taps.w[t] = wx[ox] * wy[oy];
            taps.dx[t] = gx[ox] * wy[oy];
            taps.dy[t] = wx[ox] * gy[oy];
        }
        taps
    }

    #[inline]
    pub fn read(&self, plane: &[f64]) -> f64 {
        self.w[0] * plane[self.idx[0]]
            + self.w[1] * plane[self.idx[1]]
            + self.w[2] * plane[self.idx[2]]
            + self.w[3] * plane[self.idx[3]]
    }

    /// Derivative of [`Taps::read`] with respect to the sampling location.
    #[inline]
    pub fn read_grad(&self, plane: &[f64]) -> Point {
        let v = [
            plane[self.idx[0]],
            plane[self.idx[1]],
            plane[self.idx[2]],
            plane[self.idx[3]],
        ];
        // Paired so a flat field cancels exactly.
        [
            (self.dx[0] * v[0] + self.dx[1] * v[1]) + (self.dx[2] * v[2] + self.dx[3] * v[3]),
            (self.dy[0] * v[0] + self.dy[2] * v[2]) + (self.dy[1] * v[1] + self.dy[3] * v[3]),
        ]
    }

    #[inline]
    pub fn scatter(&self, plane: &mut [f64], value: f64) {
        for t in 0..4 {
            plane[self.idx[t]] += self.w[t] * value;
        }
    }
}

/// Values sampled at a list of points, laid out `[n, len, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub n: usize,
    pub len: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Samples {
    pub fn get(&self, n: usize, i: usize, c: usize) -> f64 {
        self.data[(n * self.len + i) * self.c + c]
    }
}

/// Bilinear reads of `feat` at real-valued `(x, y)` coordinates.
pub fn bilinear_sample(feat: &Tensor, coords: &[Point], padding: PaddingMode) -> Samples {
    let s = feat.shape();
    let mut data = vec![0.0; s.n * coords.len() * s.c];
    if !coords.is_empty() {
        data.par_chunks_mut(s.c).enumerate().for_each(|(idx, dst)| {
            let (n, i) = (idx / coords.len(), idx % coords.len());
            let taps = Taps::new(coords[i], s.h, s.w, padding);
            for (c, d) in dst.iter_mut().enumerate() {
                *d = taps.read(feat.plane(n, c));
            }
        });
    }
    Samples {
        n: s.n,
        len: coords.len(),
        c: s.c,
        data,
    }
}

/// Gradients of [`bilinear_sample`] with respect to the feature map and the
/// coordinates. Coordinates are shared across the batch, so their gradient
/// sums over it.
pub fn bilinear_sample_grad(
    feat: &Tensor,
    coords: &[Point],
    padding: PaddingMode,
    upstream: &Samples,
) -> Result<(Tensor, Vec<Point>)> {
    let s = feat.shape();
    if (upstream.n, upstream.len, upstream.c) != (s.n, coords.len(), s.c) {
        return Err(Error::dimension(
            "bilinear_sample_grad",
            (s.n, coords.len(), s.c),
            (upstream.n, upstream.len, upstream.c),
        ));
    }
    let taps: Vec<Taps> = coords
        .iter()
        .map(|&p| Taps::new(p, s.h, s.w, padding))
        .collect();

    let mut grad_feat = vec![0.0; s.numel()];
    grad_feat
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, c) = (idx / s.c, idx % s.c);
            for (i, t) in taps.iter().enumerate() {
                t.scatter(plane, upstream.get(n, i, c));
            }
        });

    let grad_coords = taps
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut g = [0.0; 2];
            for n in 0..s.n {
                for c in 0..s.c {
                    let d = t.read_grad(feat.plane(n, c));
                    let u = upstream.get(n, i, c);
                    g[0] += u * d[0];
                    g[1] += u * d[1];
                }
            }
            g
        })
        .collect();
    Ok((Tensor::from_vec(s, grad_feat)?, grad_coords))
}

/// Per-pixel coordinate record of one deformable upsampling pass.
///
/// `delta_r` and `r_prime` are indexed `[batch][pixel][group][point]`;
/// `r` is indexed `[pixel][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub out_h: usize,
    pub out_w: usize,
    pub batch: usize,
    pub groups: usize,
    pub points: usize,
    pub p: Vec<(usize, usize)>,
    pub p_prime: Vec<Point>,
    pub stencil: Vec<(i32, i32)>,
    pub r: Vec<Point>,
    pub delta_r: Vec<Point>,
    pub r_prime: Vec<Point>,
}

impl CoordGrid {
    /// Grid with `R = P' + stencil` and room for offsets (all zero).
    pub fn uniform(proj: &Projection, k_u: usize, batch: usize, groups: usize) -> Result<Self> {
        let stencil = neighbor_offsets(k_u)?;
        let p = make_output_grid(proj.out_h, proj.out_w);
        let p_prime: Vec<Point> = p.iter().map(|&(x, y)| proj.apply(x, y)).collect();
        let r: Vec<Point> = p_prime
            .iter()
            .flat_map(|pp| {
                stencil
                    .iter()
                    .map(move |&(dx, dy)| [pp[0] + dx as f64, pp[1] + dy as f64])
            })
            .collect();
        let points = stencil.len();
        let total = batch * p.len() * groups * points;
        let mut grid = CoordGrid {
            out_h: proj.out_h,
            out_w: proj.out_w,
            batch,
            groups,
            points,
            p,
            p_prime,
            stencil,
            r,
            delta_r: vec![[0.0; 2]; total],
            r_prime: Vec::new(),
        };
        grid.r_prime = grid.deform();
        Ok(grid)
    }

    pub fn pixels(&self) -> usize {
        self.p.len()
    }

    #[inline]
    pub fn slot(&self, b: usize, pix: usize, g: usize, j: usize) -> usize {
        ((b * self.pixels() + pix) * self.groups + g) * self.points + j
    }

    /// Recomputes `R' = R + delta_R` from the stored offsets.
    pub(crate) fn deform(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.delta_r.len());
        for b in 0..self.batch {
            for pix in 0..self.pixels() {
                for g in 0..self.groups {
                    for j in 0..self.points {
                        let r = self.r[pix * self.points + j];
                        let d = self.delta_r[self.slot(b, pix, g, j)];
                        out.push([r[0] + d[0], r[1] + d[1]]);
                    }
                }
            }
        }
        out
    }

    pub fn max_abs_offset(&self) -> f64 {
        self.delta_r
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Shape of a tensor after spatial upsampling by `alpha`.
pub fn upsampled_shape(s: Shape, alpha: f64) -> Result<Shape> {
    Ok(s.with_spatial(output_extent(s.h, alpha)?, output_extent(s.w, alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn map_2x2() -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn grid_order() {
        assert_eq!(make_output_grid(1, 1), vec![(0, 0)]);
        assert_eq!(make_output_grid(2, 2), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let g = make_output_grid(2, 3);
        assert_eq!(g.len(), 6);
        assert_eq!(g.iter().map(|p| p.0).max(), Some(2));
        assert_eq!(g.iter().map(|p| p.1).max(), Some(1));
    }

    #[test]
    fn projection_endpoints() {
        for mode in [ProjectionMode::PaperExact, ProjectionMode::AlignCorners] {
            assert_eq!(
                project(&[(0, 0)], 4, 4, 2.0, mode).unwrap(),
                vec![[0.0, 0.0]]
            );
        }
        let ac = project(&[(7, 7)], 4, 4, 2.0, ProjectionMode::AlignCorners).unwrap();
        assert_eq!(ac, vec![[3.0, 3.0]]);
        let pe = project(&[(7, 7)], 4, 4, 2.0, ProjectionMode::PaperExact).unwrap();
        assert_eq!(pe, vec![[4.0, 4.0]]);
    }

    #[test]
    fn degenerate_projection_rejected() {
        assert!(matches!(
            Projection::new(1, 1, 1.5, ProjectionMode::AlignCorners),
            Err(Error::Config(_))
        ));
        assert!(Projection::new(4, 4, 1.0, ProjectionMode::AlignCorners).is_err());
    }

    #[test]
    fn fractional_scale_extents() {
        assert_eq!(output_extent(4, 1.5).unwrap(), 6);
        assert_eq!(output_extent(6, 1.5).unwrap(), 9);
        assert_eq!(output_extent(5, 1.5).unwrap(), 7);
    }

    #[test]
    fn stencils() {
        assert_eq!(neighbor_offsets(1).unwrap(), vec![(0, 0)]);
        let s3 = neighbor_offsets(3).unwrap();
        assert_eq!(s3.len(), 9);
        assert_eq!(s3[0], (-1, -1));
        assert_eq!(s3[1], (0, -1));
        assert_eq!(s3[8], (1, 1));
        for k in [1, 3, 5, 7] {
            let s = neighbor_offsets(k).unwrap();
            let sum = s.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            assert_eq!(sum, (0, 0));
        }
        assert!(matches!(neighbor_offsets(2), Err(Error::Config(_))));
        assert!(neighbor_offsets(0).is_err());
    }

    #[test]
    fn sample_points_on_small_map() {
        let m = map_2x2();
        let s = bilinear_sample(&m, &[[1.0, 0.0], [0.5, 0.5]], PaddingMode::Zeros);
        assert_eq!(s.data, vec![1.0, 1.5]);
        for padding in [PaddingMode::Zeros, PaddingMode::Border] {
            let s = bilinear_sample(&m, &[[-1.0, -1.0]], padding);
            assert_eq!(s.data, vec![0.0]);
        }
        // Border clamps, Zeros fades out.
        let z = bilinear_sample(&m, &[[1.5, 1.0]], PaddingMode::Zeros);
        let b = bilinear_sample(&m, &[[1.5, 1.0]], PaddingMode::Border);
        assert_eq!(z.data, vec![1.5]);
        assert_eq!(b.data, vec![3.0]);
    }

    #[test]
    fn integer_points_reproduce_stored_values() {
        let mut rng = Rng::seed(11);
        let feat = Tensor::uniform(Shape::new(2, 3, 4, 5), -1.0, 1.0, &mut rng);
        let coords: Vec<Point> = make_output_grid(4, 5)
            .into_iter()
            .map(|(x, y)| [x as f64, y as f64])
            .collect();
        let s = bilinear_sample(&feat, &coords, PaddingMode::Zeros);
        for n in 0..2 {
            for (i, &(x, y)) in make_output_grid(4, 5).iter().enumerate() {
                for c in 0..3 {
                    assert_eq!(s.get(n, i, c), feat.at(n, c, y, x));
                }
            }
        }
    }

    #[test]
    fn flat_field_and_zero_upstream_give_zero_grads() {
        let feat = Tensor::full(Shape::new(1, 2, 3, 3), 0.7);
        let coords = vec![[0.3, 1.2], [1.7, 0.4]];
        let up = Samples {
            n: 1,
            len: 2,
            c: 2,
            data: vec![1.0, -2.0, 0.5, 3.0],
        };
        let (_, gc) = bilinear_sample_grad(&feat, &coords, PaddingMode::Zeros, &up).unwrap();
        assert!(gc.iter().all(|g| *g == [0.0, 0.0]));

        let mut rng = Rng::seed(4);
        let feat = Tensor::uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng);
        let zero = Samples {
            data: vec![0.0; 4],
            ..up
        };
        let (gf, gc) = bilinear_sample_grad(&feat, &coords, PaddingMode::Zeros, &zero).unwrap();
        assert!(gf.as_slice().iter().all(|&v| v == 0.0));
        assert!(gc.iter().all(|g| *g == [0.0, 0.0]));
    }

    #[test]
    fn cell_center_coordinate_grad_matches_central_differences() {
        let mut rng = Rng::seed(8);
        let feat = Tensor::uniform(Shape::new(1, 1, 4, 4), -1.0, 1.0, &mut rng);
        let point = [1.5, 2.5];
        let up = Samples {
            n: 1,
            len: 1,
            c: 1,
            data: vec![1.0],
        };
        let (_, gc) = bilinear_sample_grad(&feat, &[point], PaddingMode::Zeros, &up).unwrap();
        let f = |p: Point| bilinear_sample(&feat, &[p], PaddingMode::Zeros).data[0];
        let h = 1e-6;
        let fd_x = (f([point[0] + h, point[1]]) - f([point[0] - h, point[1]])) / (2.0 * h);
        let fd_y = (f([point[0], point[1] + h]) - f([point[0], point[1] - h])) / (2.0 * h);
        assert!((gc[0][0] - fd_x).abs() / fd_x.abs().max(1e-12) < 1e-6);
        assert!((gc[0][1] - fd_y).abs() / fd_y.abs().max(1e-12) < 1e-6);
    }

    #[test]
    fn kink_subgradient_is_zero() {
        let m = map_2x2();
        let up = Samples {
            n: 1,
            len: 1,
            c: 1,
            data: vec![1.0],
        };
        let (_, gc) = bilinear_sample_grad(&m, &[[1.0, 0.0]], PaddingMode::Zeros, &up).unwrap();
        assert_eq!(gc[0], [0.0, 0.0]);
    }

    #[test]
    fn uniform_grid_relations() {
        let proj = Projection::new(3, 4, 2.0, ProjectionMode::AlignCorners).unwrap();
        let grid = CoordGrid::uniform(&proj, 3, 2, 2).unwrap();
        assert_eq!(grid.pixels(), 48);
        assert_eq!(grid.r.len(), 48 * 9);
        for pix in 0..grid.pixels() {
            for (j, &(dx, dy)) in grid.stencil.iter().enumerate() {
                let r = grid.r[pix * 9 + j];
                assert_eq!(
                    r,
                    [
                        grid.p_prime[pix][0] + dx as f64,
                        grid.p_prime[pix][1] + dy as f64
                    ]
                );
                assert_eq!(grid.r_prime[grid.slot(1, pix, 1, j)], r);
            }
        }
    }
}
