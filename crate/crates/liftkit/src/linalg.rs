//! Small dense linear algebra for the alignment metrics: a 3x3 SVD and the
//! closed-form similarity (Procrustes) fit between point sets.

use crate::{Error, Result};

/// A 3x3 matrix of reals, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn identity() -> Self {
        Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn zeros() -> Self {
        Mat3([[0.0; 3]; 3])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn matmul(&self, rhs: &Mat3) -> Mat3 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(out)
    }

    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute deviation of `self^T self` from the identity.
    pub fn orthogonality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self);
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.0[i][j] - target).abs());
            }
        }
        worst
    }
}

/// Rigid-plus-scale map `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub scale: f64,
    pub translation: [f64; 3],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform { rotation: Mat3::identity(), scale: 1.0, translation: [0.0; 3] }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.mul_vec(p);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }

    /// Check the structural invariants: proper rotation to 1e-9, positive scale.
    pub fn validate(&self) -> Result<()> {
        if self.rotation.orthogonality_defect() > 1e-9 {
            return Err(Error::numerical("similarity rotation is not orthogonal"));
        }
        if (self.rotation.det() - 1.0).abs() > 1e-9 {
            return Err(Error::numerical("similarity rotation determinant is not +1"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::numerical("similarity scale must be positive"));
        }
        Ok(())
    }
}

const JACOBI_MAX_SWEEPS: usize = 60;

/// Singular value decomposition `m = U * diag(S) * V^T` of a 3x3 matrix by
/// one-sided Jacobi rotations. Singular values come back sorted descending
/// and non-negative; `U` and `V` are orthogonal.
pub fn svd3(m: &Mat3) -> Result<(Mat3, [f64; 3], Mat3)> {
    if m.0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numerical("svd3 input has non-finite entries"));
    }

    // Columns of b converge to U * diag(S); v accumulates the right rotations.
    let mut b = m.transpose().0; // b[j] is column j of m
    let mut v = Mat3::identity().transpose().0;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..2 {
            for q in (p + 1)..3 {
                let alpha: f64 = b[p].iter().map(|x| x * x).sum();
                let beta: f64 = b[q].iter().map(|x| x * x).sum();
                let gamma: f64 = b[p].iter().zip(&b[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..3 {
                    let bp = b[p][i];
                    let bq = b[q][i];
                    b[p][i] = c * bp - s * bq;
                    b[q][i] = s * bp + c * bq;
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "svd3 Jacobi iteration did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut sigma = [0.0f64; 3];
    for j in 0..3 {
        sigma[j] = b[j].iter().map(|x| x * x).sum::<f64>().sqrt();
    }

    // Sort singular values descending, permuting the columns alongside.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let sigma_sorted = [sigma[order[0]], sigma[order[1]], sigma[order[2]]];
    let b_sorted = [b[order[0]], b[order[1]], b[order[2]]];
    let v_sorted = [v[order[0]], v[order[1]], v[order[2]]];

    // Normalize U columns; complete an orthonormal basis for null directions.
    let norm_floor = 1e-300;
    let mut u_cols = [[0.0f64; 3]; 3];
    for j in 0..3 {
        if sigma_sorted[j] > norm_floor {
            for i in 0..3 {
                u_cols[j][i] = b_sorted[j][i] / sigma_sorted[j];
            }
        }
    }
    for j in 0..3 {
        if sigma_sorted[j] <= norm_floor {
            u_cols[j] = orthonormal_completion(&u_cols, j);
        }
    }

    let u = Mat3([
        [u_cols[0][0], u_cols[1][0], u_cols[2][0]],
        [u_cols[0][1], u_cols[1][1], u_cols[2][1]],
        [u_cols[0][2], u_cols[1][2], u_cols[2][2]],
    ]);
    let v = Mat3([
        [v_sorted[0][0], v_sorted[1][0], v_sorted[2][0]],
        [v_sorted[0][1], v_sorted[1][1], v_sorted[2][1]],
        [v_sorted[0][2], v_sorted[1][2], v_sorted[2][2]],
    ]);
    Ok((u, sigma_sorted, v))
}

/// A unit vector orthogonal to the non-null columns in `cols` (excluding
/// index `skip`, which is the one being filled in).
fn orthonormal_completion(cols: &[[f64; 3]; 3], skip: usize) -> [f64; 3] {
    let fixed: Vec<[f64; 3]> = (0..3)
        .filter(|&j| j != skip)
        .map(|j| cols[j])
        .filter(|c| c.iter().map(|x| x * x).sum::<f64>() > 0.5)
        .collect();
    match fixed.len() {
        2 => cross(fixed[0], fixed[1]),
        1 => {
            // Any unit vector orthogonal to the single fixed column.
            let a = fixed[0];
            let trial = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let c = cross(a, trial);
            let n = (c.iter().map(|x| x * x).sum::<f64>()).sqrt();
            [c[0] / n, c[1] / n, c[2] / n]
        }
        _ => {
            // Whole matrix is null: fall back to standard basis vectors.
            let mut e = [0.0; 3];
            e[skip] = 1.0;
            e
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Closed-form similarity fit: the `{scale, rotation, translation}` minimizing
/// the summed squared distance from transformed `source` points to `target`
/// points. The reflection case is folded back to a proper rotation by flipping
/// the smallest singular direction. With `with_scale` off the scale is pinned
/// to 1 (rigid alignment).
pub fn umeyama_align(
    source: &[[f64; 3]],
    target: &[[f64; 3]],
    with_scale: bool,
) -> Result<SimilarityTransform> {
    let j = source.len();
    if j < 3 {
        return Err(Error::config(format!("alignment needs at least 3 points, got {j}")));
    }
    if target.len() != j {
        return Err(Error::shape(format!(
            "point sets differ in size: {} vs {}",
            j,
            target.len()
        )));
    }

    let jf = j as f64;
    let mut mu_x = [0.0f64; 3];
    let mut mu_y = [0.0f64; 3];
    for k in 0..j {
        for d in 0..3 {
            mu_x[d] += source[k][d] / jf;
            mu_y[d] += target[k][d] / jf;
        }
    }

    let mut var_x = 0.0f64;
    let mut cov = Mat3::zeros();
    for k in 0..j {
        let xc = [source[k][0] - mu_x[0], source[k][1] - mu_x[1], source[k][2] - mu_x[2]];
        let yc = [target[k][0] - mu_y[0], target[k][1] - mu_y[1], target[k][2] - mu_y[2]];
        var_x += (xc[0] * xc[0] + xc[1] * xc[1] + xc[2] * xc[2]) / jf;
        for r in 0..3 {
            for c in 0..3 {
                cov.0[r][c] += yc[r] * xc[c] / jf;
            }
        }
    }
    if var_x <= 1e-18 {
        return Err(Error::numerical("degenerate point set"));
    }

    let (u, s, v) = svd3(&cov)?;
    let flip = if u.det() * v.det() < 0.0 { -1.0 } else { 1.0 };

    // R = U * diag(1, 1, flip) * V^T
    let mut ud = u;
    for r in 0..3 {
        ud.0[r][2] *= flip;
    }
    let rotation = ud.matmul(&v.transpose());

    let scale = if with_scale {
        let traced = s[0] + s[1] + flip * s[2];
        let scale = traced / var_x;
        if !(scale > 0.0) {
            return Err(Error::numerical("optimal similarity scale is not positive"));
        }
        scale
    } else {
        1.0
    };

    let rmu = rotation.mul_vec(mu_x);
    let translation = [
        mu_y[0] - scale * rmu[0],
        mu_y[1] - scale * rmu[1],
        mu_y[2] - scale * rmu[2],
    ];

    Ok(SimilarityTransform { rotation, scale, translation })
}

/// Summed squared residual of a similarity transform applied to `source`
/// against `target`. Used by alignment tests and the scale-only metric.
pub fn alignment_residual(
    transform: &SimilarityTransform,
    source: &[[f64; 3]],
    target: &[[f64; 3]],
) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(s, t)| {
            let p = transform.apply(*s);
            (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)
        })
        .sum()
}

/// Rotation matrix from an axis-angle vector (Rodrigues' formula). The
/// rotation angle is the norm of the vector.
pub fn rotation_from_axis_angle(axis_angle: [f64; 3]) -> Mat3 {
    let theta = (axis_angle.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if theta < 1e-12 {
        return Mat3::identity();
    }
    let k = [axis_angle[0] / theta, axis_angle[1] / theta, axis_angle[2] / theta];
    let (sin, cos) = theta.sin_cos();
    let omc = 1.0 - cos;
    Mat3([
        [
            cos + k[0] * k[0] * omc,
            k[0] * k[1] * omc - k[2] * sin,
            k[0] * k[2] * omc + k[1] * sin,
        ],
        [
            k[1] * k[0] * omc + k[2] * sin,
            cos + k[1] * k[1] * omc,
            k[1] * k[2] * omc - k[0] * sin,
        ],
        [
            k[2] * k[0] * omc - k[1] * sin,
            k[2] * k[1] * omc + k[0] * sin,
            cos + k[2] * k[2] * omc,
        ],
    ])
}
