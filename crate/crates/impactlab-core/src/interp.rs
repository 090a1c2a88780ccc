//! Local cubic interpolation on uniform grids.
//!
//! Catmull-Rom patches with linear-extrapolation ghost nodes at the edges,
//! matching the PDE solver's boundary treatment. The bicubic surface exposes
//! the partial derivatives the hedging engine needs. Interior cells
//! reproduce quadratics exactly; the outermost cells fall back to the linear
//! ghost and are only linear-exact, so callers should keep their evaluation
//! region one cell inside the grid.

/// Uniform axis `a + i h`, `i = 0..=n`.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub count: usize, // number of nodes
}

impl Axis {
    pub fn end(&self) -> f64 {
        self.start + self.step * (self.count - 1) as f64
    }

    /// Cell index and local coordinate in [0, 1]; clamps to the axis range.
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.start) / self.step;
        let max_cell = self.count - 2;
        if s <= 0.0 {
            return (0, s.max(-0.5)); // mildly clamped: callers stay in range
        }
        let cell = (s.floor() as usize).min(max_cell);
        (cell, s - cell as f64)
    }
}

#[inline]
fn catmull_rom_weights(u: f64) -> [f64; 4] {
    [
        0.5 * (-u + 2.0 * u * u - u * u * u),
        0.5 * (2.0 - 5.0 * u * u + 3.0 * u * u * u),
        0.5 * (u + 4.0 * u * u - 3.0 * u * u * u),
        0.5 * (-u * u + u * u * u),
    ]
}

#[inline]
fn catmull_rom_dweights(u: f64) -> [f64; 4] {
    [
        0.5 * (-1.0 + 4.0 * u - 3.0 * u * u),
        0.5 * (-10.0 * u + 9.0 * u * u),
        0.5 * (1.0 + 8.0 * u - 9.0 * u * u),
        0.5 * (-2.0 * u + 3.0 * u * u),
    ]
}

#[inline]
fn catmull_rom_d2weights(u: f64) -> [f64; 4] {
    [
        0.5 * (4.0 - 6.0 * u),
        0.5 * (-10.0 + 18.0 * u),
        0.5 * (8.0 - 18.0 * u),
        0.5 * (-2.0 + 6.0 * u),
    ]
}

#[inline]
fn catmull_rom_d3weights() -> [f64; 4] {
    [-3.0, 9.0, -9.0, 3.0]
}

/// Fetches a 4-point stencil around `cell`, extending linearly past the ends.
#[inline]
fn stencil(get: impl Fn(isize) -> f64, n: usize, cell: usize) -> [f64; 4] {
    let pick = |i: isize| -> f64 {
        if i < 0 {
            2.0 * get(0) - get(1)
        } else if i as usize >= n {
            2.0 * get(n as isize - 1) - get(n as isize - 2)
        } else {
            get(i)
        }
    };
    let c = cell as isize;
    [pick(c - 1), pick(c), pick(c + 1), pick(c + 2)]
}

/// Derivatives of a scalar surface at one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurfacePoint {
    pub value: f64,
    pub dx: f64,
    pub dxx: f64,
    pub dxxx: f64,
    pub dt: f64,
    pub dtx: f64,
}

/// Bicubic interpolant of values on a uniform `(t, x)` grid.
#[derive(Debug, Clone)]
pub struct BicubicSurface {
    t_axis: Axis,
    x_axis: Axis,
    /// Row-major `[t][x]`.
    values: Vec<f64>,
}

impl BicubicSurface {
    pub fn new(t_axis: Axis, x_axis: Axis, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), t_axis.count * x_axis.count);
        assert!(t_axis.count >= 2 && x_axis.count >= 2);
        BicubicSurface {
            t_axis,
            x_axis,
            values,
        }
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.t_axis.start, self.t_axis.end())
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_axis.start, self.x_axis.end())
    }

    #[inline]
    fn row_spline(&self, t_cell: isize, x_cell: usize, ux: f64) -> [f64; 4] {
        // value, d/du, d2/du2, d3/du3 of the in-x cubic for one t row
        let nt = self.t_axis.count as isize;
        let row = t_cell.clamp(0, nt - 1) as usize;
        let base = row * self.x_axis.count;
        let get = |i: isize| self.values[base + i as usize];
        let p = stencil(get, self.x_axis.count, x_cell);
        let extrapolated = t_cell < 0 || t_cell >= nt;
        let p = if extrapolated {
            // linear ghost row in t
            let (r0, r1) = if t_cell < 0 { (0usize, 1usize) } else { (self.t_axis.count - 1, self.t_axis.count - 2) };
            let b0 = r0 * self.x_axis.count;
            let b1 = r1 * self.x_axis.count;
            let g0 = stencil(|i: isize| self.values[b0 + i as usize], self.x_axis.count, x_cell);
            let g1 = stencil(|i: isize| self.values[b1 + i as usize], self.x_axis.count, x_cell);
            [
                2.0 * g0[0] - g1[0],
                2.0 * g0[1] - g1[1],
                2.0 * g0[2] - g1[2],
                2.0 * g0[3] - g1[3],
            ]
        } else {
            p
        };
        let w = catmull_rom_weights(ux);
        let dw = catmull_rom_dweights(ux);
        let d2w = catmull_rom_d2weights(ux);
        let d3w = catmull_rom_d3weights();
        let dot = |ws: &[f64; 4]| ws[0] * p[0] + ws[1] * p[1] + ws[2] * p[2] + ws[3] * p[3];
        [dot(&w), dot(&dw), dot(&d2w), dot(&d3w)]
    }

    /// Value and partial derivatives at `(t, x)`.
    pub fn eval(&self, t: f64, x: f64) -> SurfacePoint {
        let (tc, ut) = self.t_axis.locate(t);
        let (xc, ux) = self.x_axis.locate(x);
        let hx = self.x_axis.step;
        let ht = self.t_axis.step;

        let rows: [[f64; 4]; 4] = [
            self.row_spline(tc as isize - 1, xc, ux),
            self.row_spline(tc as isize, xc, ux),
            self.row_spline(tc as isize + 1, xc, ux),
            self.row_spline(tc as isize + 2, xc, ux),
        ];

        let wt = catmull_rom_weights(ut);
        let dwt = catmull_rom_dweights(ut);
        let along_t = |k: usize, ws: &[f64; 4]| -> f64 {
            ws[0] * rows[0][k] + ws[1] * rows[1][k] + ws[2] * rows[2][k] + ws[3] * rows[3][k]
        };

        SurfacePoint {
            value: along_t(0, &wt),
            dx: along_t(1, &wt) / hx,
            dxx: along_t(2, &wt) / (hx * hx),
            dxxx: along_t(3, &wt) / (hx * hx * hx),
            dt: along_t(0, &dwt) / ht,
            dtx: along_t(1, &dwt) / (ht * hx),
        }
    }
}

/// Cubic interpolation of tabulated values on a uniform axis.
pub fn cubic1d(axis: Axis, values: &[f64], x: f64) -> f64 {
    assert_eq!(values.len(), axis.count);
    let (cell, u) = axis.locate(x);
    let p = stencil(|i: isize| values[i as usize], axis.count, cell);
    let w = catmull_rom_weights(u);
    w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + w[3] * p[3]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn surface(f: impl Fn(f64, f64) -> f64, nt: usize, nx: usize) -> BicubicSurface {
        let ta = Axis {
            start: 0.0,
            step: 1.0 / (nt - 1) as f64,
            count: nt,
        };
        let xa = Axis {
            start: -2.0,
            step: 4.0 / (nx - 1) as f64,
            count: nx,
        };
        let mut vals = Vec::with_capacity(nt * nx);
        for j in 0..nt {
            let t = ta.start + j as f64 * ta.step;
            for i in 0..nx {
                let x = xa.start + i as f64 * xa.step;
                vals.push(f(t, x));
            }
        }
        BicubicSurface::new(ta, xa, vals)
    }

    #[test]
    fn reproduces_bilinear_and_quadratic_exactly() {
        let s = surface(|t, x| 1.0 + 2.0 * t + 3.0 * x + 0.5 * x * x - t * x, 9, 9);
        // interior cells only; edge cells are linear-exact by design
        for (t, x) in [(0.33, -1.3), (0.5, 0.0), (0.7, 0.9), (0.2, -1.45)] {
            let p = s.eval(t, x);
            assert_abs_diff_eq!(p.value, 1.0 + 2.0 * t + 3.0 * x + 0.5 * x * x - t * x, epsilon = 1e-12);
            assert_abs_diff_eq!(p.dx, 3.0 + x - t, epsilon = 1e-10);
            assert_abs_diff_eq!(p.dxx, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p.dt, 2.0 - x, epsilon = 1e-10);
            assert_abs_diff_eq!(p.dtx, -1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn approximates_smooth_surfaces() {
        let f = |t: f64, x: f64| (x + 0.2 * t).sin() * (-0.5 * t).exp();
        let s = surface(f, 65, 129);
        let hx: f64 = 4.0 / 128.0;
        for (t, x) in [(0.4, -0.7), (0.77, 1.2), (0.12, 0.3)] {
            let p = s.eval(t, x);
            let df_dx = (x + 0.2 * t).cos() * (-0.5 * t).exp();
            let d2f = -(x + 0.2 * t).sin() * (-0.5 * t).exp();
            assert_abs_diff_eq!(p.value, f(t, x), epsilon = 1e-5);
            assert_abs_diff_eq!(p.dx, df_dx, epsilon = 10.0 * hx * hx);
            assert_abs_diff_eq!(p.dxx, d2f, epsilon = 50.0 * hx);
        }
    }

    #[test]
    fn cubic1d_reproduces_quadratics() {
        let axis = Axis {
            start: 0.0,
            step: 0.25,
            count: 9,
        };
        let vals: Vec<f64> = (0..9)
            .map(|i| {
                let x = i as f64 * 0.25;
                1.0 - x + x * x
            })
            .collect();
        for x in [0.3, 0.6, 1.3, 1.45] {
            assert_abs_diff_eq!(cubic1d(axis, &vals, x), 1.0 - x + x * x, epsilon = 1e-12);
        }
    }
}
