//! Two-dimensional PCA for inspecting synthesized feature spaces.
//!
//! The eigensolver is a cyclic Jacobi sweep over the covariance matrix:
//! slow asymptotically but exact to machine precision, dependency-free,
//! and deterministic. Matrices here are at most a few hundred square, so
//! Jacobi is comfortably fast. The test suite re-derives the leading
//! eigenpairs with an independent power-iteration oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column means and the `d x d` sample covariance (denominator `n`).
pub fn covariance(data: &Tensor) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = data.dims2();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += data.get(i, j);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        for a in 0..d {
            let xa = data.get(i, a) - mean[a];
            for b in a..d {
                cov[a][b] += xa * (data.get(i, b) - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= n as f64;
            cov[b][a] = cov[a][b];
        }
    }
    (mean, cov)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching unit
/// eigenvectors as rows.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = matrix.len();
    if d == 0 || matrix.iter().any(|row| row.len() != d) {
        return Err(Error::Numeric("eigensolver needs a square matrix".into()));
    }
    for a in 0..d {
        for b in 0..d {
            if (matrix[a][b] - matrix[b][a]).abs() > 1e-9 {
                return Err(Error::Numeric(format!(
                    "matrix is not symmetric at ({a}, {b})"
                )));
            }
        }
    }
    let mut m: Vec<Vec<f64>> = matrix.to_vec();
    // v holds accumulated rotations; starts as identity.
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let off_diag = |m: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    s += m[a][b] * m[a][b];
                }
            }
        }
        s
    };

    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        if off_diag(&m) < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if m[p][q].abs() < 1e-18 {
                    continue;
                }
                // Rotation angle that annihilates m[p][q].
                let theta = 0.5 * (2.0 * m[p][q]).atan2(m[q][q] - m[p][p]);
                let (s, c) = theta.sin_cos();
                for k in 0..d {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|j| (m[j][j], (0..d).map(|i| v[i][j]).collect()))
        .collect();
    // Descending by eigenvalue; ties keep original column order.
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    // Sign convention: the largest-magnitude coordinate is positive, so
    // eigenvectors are reproducible across runs and solvers.
    for (_, vec) in pairs.iter_mut() {
        let lead = vec
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.abs()
                    .partial_cmp(&b.abs())
                    .unwrap()
                    .then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .unwrap();
        if vec[lead] < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let values = pairs.iter().map(|(l, _)| *l).collect();
    let vectors = pairs.into_iter().map(|(_, v)| v).collect();
    Ok((values, vectors))
}

/// Projects rows of `data` onto the top two principal components of its
/// covariance. Needs at least two columns and two rows.
pub fn project_2d(data: &Tensor) -> Result<Vec<(f64, f64)>> {
    let (n, d) = data.dims2();
    if d < 2 || n < 2 {
        return Err(Error::Numeric(format!(
            "2-D projection needs at least a 2x2 data matrix, got {n}x{d}"
        )));
    }
    let (mean, cov) = covariance(data);
    let (_, vectors) = jacobi_eigen(&cov)?;
    let (e1, e2) = (&vectors[0], &vectors[1]);
    Ok((0..n)
        .map(|i| {
            let mut x = 0.0;
            let mut y = 0.0;
            for j in 0..d {
                let c = data.get(i, j) - mean[j];
                x += c * e1[j];
                y += c * e2[j];
            }
            (x, y)
        })
        .collect())
}

/// Rows `x,y,label`, floats in shortest-roundtrip form.
pub fn projection_csv(points: &[(f64, f64)], labels: &[usize]) -> Result<String> {
    if points.len() != labels.len() {
        return Err(Error::Protocol(format!(
            "{} points for {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut out = String::from("x,y,label\n");
    for ((x, y), l) in points.iter().zip(labels) {
        out.push_str(&format!("{x},{y},{l}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: leading eigenpair by power iteration, second
    /// by deflation. Shares nothing with the Jacobi path.
    fn power_iteration_top2(cov: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = cov.len();
        let mut deflated = cov.to_vec();
        let mut values = Vec::new();
        let mut vectors = Vec::new();
        for _ in 0..2 {
            let mut v = vec![1.0 / (d as f64).sqrt(); d];
            let mut lambda = 0.0;
            for _ in 0..20_000 {
                let mut w = vec![0.0; d];
                for a in 0..d {
                    for b in 0..d {
                        w[a] += deflated[a][b] * v[b];
                    }
                }
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-300 {
                    break;
                }
                w.iter_mut().for_each(|x| *x /= norm);
                lambda = norm;
                v = w;
            }
            for a in 0..d {
                for b in 0..d {
                    deflated[a][b] -= lambda * v[a] * v[b];
                }
            }
            values.push(lambda);
            vectors.push(v);
        }
        (values, vectors)
    }

    #[test]
    fn jacobi_matches_hand_solved_2x2() {
        // [[2, 1], [1, 2]] has eigenvalues 3 and 1 with vectors along
        // (1,1) and (1,-1).
        let m = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (vals, vecs) = jacobi_eigen(&m).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert!((vecs[0][0] - inv_sqrt2).abs() < 1e-12);
        assert!((vecs[0][1] - inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn jacobi_agrees_with_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let d = 6;
            // Random symmetric PSD matrix A A^T / d.
            let a: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let mut cov = vec![vec![0.0; d]; d];
            for i in 0..d {
                for j in 0..d {
                    for (rowk, _) in a.iter().enumerate() {
                        cov[i][j] += a[i][rowk] * a[j][rowk];
                    }
                    cov[i][j] /= d as f64;
                }
            }
            let (jv, jw) = jacobi_eigen(&cov).unwrap();
            let (pv, pw) = power_iteration_top2(&cov);
            for k in 0..2 {
                assert!(
                    (jv[k] - pv[k]).abs() < 1e-8 * pv[0].max(1.0),
                    "eigenvalue {k}: {} vs {}",
                    jv[k],
                    pv[k]
                );
                let dot: f64 = jw[k].iter().zip(&pw[k]).map(|(x, y)| x * y).sum();
                assert!(
                    (dot.abs() - 1.0).abs() < 1e-6,
                    "eigenvector {k} misaligned: |cos| = {}",
                    dot.abs()
                );
            }
        }
    }

    #[test]
    fn projection_recovers_a_planted_axis() {
        // Points spread along (3, 4)/5 with tiny off-axis jitter: the
        // first component must align with that axis.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200;
        let mut values = Vec::with_capacity(n * 2);
        for _ in 0..n {
            let t: f64 = rng.random_range(-5.0..5.0);
            let jitter: f64 = rng.random_range(-0.01..0.01);
            values.push(0.6 * t - 0.8 * jitter);
            values.push(0.8 * t + 0.6 * jitter);
        }
        let data = Tensor::from_values(&[n, 2], values).unwrap();
        let pts = project_2d(&data).unwrap();
        // Variance along x must dwarf variance along y.
        let var = |sel: fn(&(f64, f64)) -> f64| -> f64 {
            let m: f64 = pts.iter().map(sel).sum::<f64>() / n as f64;
            pts.iter().map(|p| (sel(p) - m).powi(2)).sum::<f64>() / n as f64
        };
        assert!(var(|p| p.0) > 1000.0 * var(|p| p.1));
    }

    #[test]
    fn csv_round_trips_floats() {
        let pts = vec![(0.1 + 0.2, -1.0 / 3.0)];
        let csv = projection_csv(&pts, &[2]).unwrap();
        let line = csv.lines().nth(1).unwrap();
        let mut parts = line.split(',');
        let x: f64 = parts.next().unwrap().parse().unwrap();
        let y: f64 = parts.next().unwrap().parse().unwrap();
        assert_eq!(x.to_bits(), (0.1_f64 + 0.2).to_bits());
        assert_eq!(y.to_bits(), (-1.0_f64 / 3.0).to_bits());
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let m = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        assert!(jacobi_eigen(&m).is_err());
    }
}
