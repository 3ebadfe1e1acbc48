//! Second-order finite-difference operators on a cell-centered grid with
//! zero-flux (homogeneous Neumann) boundaries.

use crate::field::GridSpec;

/// Centered gradient; first-order one-sided differences on boundary cells.
pub fn gradient(g: &GridSpec, f: &[f64]) -> [Vec<f64>; 3] {
    let n = g.len();
    let (nx, ny, nz) = (g.nx, g.ny, g.nz);
    let inv_h = 1.0 / g.h;
    let inv_2h = 0.5 / g.h;
    let sx = 1;
    let sy = nx;
    let sz = nx * ny;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut gz = vec![0.0; n];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = g.index(i, j, k);
                gx[c] = axis_derivative(f, c, i, nx, sx, inv_h, inv_2h);
                gy[c] = axis_derivative(f, c, j, ny, sy, inv_h, inv_2h);
                gz[c] = axis_derivative(f, c, k, nz, sz, inv_h, inv_2h);
            }
        }
    }
    [gx, gy, gz]
}

#[inline]
fn axis_derivative(f: &[f64], c: usize, pos: usize, len: usize, stride: usize, inv_h: f64, inv_2h: f64) -> f64 {
    if pos == 0 {
        (f[c + stride] - f[c]) * inv_h
    } else if pos == len - 1 {
        (f[c] - f[c - stride]) * inv_h
    } else {
        (f[c + stride] - f[c - stride]) * inv_2h
    }
}

/// Divergence of a cell-centered vector field.
///
/// Face values are averages of the two adjacent cells and boundary faces
/// carry zero flux, so `Σ div · h³ = 0` exactly. On interior cells this is
/// the centered difference `(J[i+1] − J[i−1]) / 2h`.
pub fn divergence(g: &GridSpec, j: &[Vec<f64>; 3]) -> Vec<f64> {
    let n = g.len();
    let (nx, ny, nz) = (g.nx, g.ny, g.nz);
    let inv_2h = 0.5 / g.h;
    let strides = [1, nx, nx * ny];
    let mut out = vec![0.0; n];
    for k in 0..nz {
        for jj in 0..ny {
            for i in 0..nx {
                let c = g.index(i, jj, k);
                let pos = [i, jj, k];
                let lens = [nx, ny, nz];
                let mut acc = 0.0;
                for axis in 0..3 {
                    let comp = &j[axis];
                    let s = strides[axis];
                    // face flux * 2
                    let hi = if pos[axis] + 1 < lens[axis] { comp[c] + comp[c + s] } else { 0.0 };
                    let lo = if pos[axis] > 0 { comp[c] + comp[c - s] } else { 0.0 };
                    acc += hi - lo;
                }
                out[c] = acc * inv_2h;
            }
        }
    }
    out
}

/// Seven-point Laplacian with mirrored ghost cells (zero normal gradient).
pub fn laplacian(g: &GridSpec, f: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (nx, ny, nz) = (g.nx, g.ny, g.nz);
    let inv_h2 = 1.0 / (g.h * g.h);
    let strides = [1, nx, nx * ny];
    let lens = [nx, ny, nz];
    let mut out = vec![0.0; n];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = g.index(i, j, k);
                let pos = [i, j, k];
                let center = f[c];
                let mut acc = 0.0;
                for axis in 0..3 {
                    let s = strides[axis];
                    let up = if pos[axis] + 1 < lens[axis] { f[c + s] } else { center };
                    let down = if pos[axis] > 0 { f[c - s] } else { center };
                    acc += up - 2.0 * center + down;
                }
                out[c] = acc * inv_h2;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;

    fn grid(n: usize, h: f64) -> GridSpec {
        GridSpec::cube(n, h).unwrap()
    }

    #[test]
    fn laplacian_of_quadratic_is_exact_inside() {
        let g = grid(7, 0.25);
        // Δ(x² + 2y² − 3z² + xy) = 2 + 4 − 6 = 0; add 0.5 x² to get 1
        let f = ScalarField::from_fn(g, |[x, y, z]| 1.5 * x * x + 2.0 * y * y - 3.0 * z * z + x * y);
        let lap = laplacian(&g, f.values());
        for k in 1..g.nz - 1 {
            for j in 1..g.ny - 1 {
                for i in 1..g.nx - 1 {
                    assert!((lap[g.index(i, j, k)] - 1.0).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn gradient_of_linear_field_is_exact_everywhere() {
        let g = grid(5, 0.5);
        let f = ScalarField::from_fn(g, |[x, y, z]| 2.0 * x - y + 0.25 * z + 3.0);
        let [gx, gy, gz] = gradient(&g, f.values());
        for c in 0..g.len() {
            assert!((gx[c] - 2.0).abs() < 1e-12);
            assert!((gy[c] + 1.0).abs() < 1e-12);
            assert!((gz[c] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_sums_to_zero() {
        let g = grid(6, 0.3);
        let jx = ScalarField::from_fn(g, |[x, y, _]| (3.0 * x).sin() + y * y).into_vec();
        let jy = ScalarField::from_fn(g, |[x, _, z]| x * z - 1.0).into_vec();
        let jz = ScalarField::from_fn(g, |[_, y, z]| (y + z).exp()).into_vec();
        let d = divergence(&g, &[jx, jy, jz]);
        let total: f64 = d.iter().sum();
        assert!(total.abs() < 1e-10, "{total}");
    }

    #[test]
    fn laplacian_conserves_and_preserves_constants() {
        let g = grid(5, 1.0);
        let c = vec![4.2; g.len()];
        assert!(laplacian(&g, &c).iter().all(|&v| v == 0.0));
        let f = ScalarField::from_fn(g, |[x, y, z]| (x * y).cos() + z).into_vec();
        let total: f64 = laplacian(&g, &f).iter().sum();
        assert!(total.abs() < 1e-10);
    }
}
