//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use convbeam::cxla::{CMatrix, CVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_cvector(rng: &mut impl Rng, m: usize) -> CVector {
    CVector::new((0..m).map(|_| cgauss(rng)).collect()).unwrap()
}

pub fn random_cmatrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cgauss(rng))
}

/// `B Bᴴ` with `B` of size `m × rank`.
pub fn random_psd(rng: &mut impl Rng, m: usize, rank: usize) -> CMatrix {
    let b = random_cmatrix(rng, m, rank);
    b.matmul(&b.conj_transpose()).unwrap()
}

/// Random unitary matrix by Gram-Schmidt on Gaussian columns.
pub fn random_unitary(rng: &mut impl Rng, m: usize) -> CMatrix {
    let mut cols: Vec<Vec<Complex64>> = Vec::new();
    while cols.len() < m {
        let mut v: Vec<Complex64> = (0..m).map(|_| cgauss(rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let p: Complex64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|z| z / n).collect());
        }
    }
    CMatrix::from_fn(m, m, |i, j| cols[j][i])
}

/// `U diag(eigs) Uᴴ` for a random unitary `U`.
pub fn hermitian_with_eigs(rng: &mut impl Rng, eigs: &[f64]) -> CMatrix {
    let u = random_unitary(rng, eigs.len());
    let d = CMatrix::diag(&eigs.iter().map(|&e| c(e, 0.0)).collect::<Vec<_>>());
    let a = u.matmul(&d).unwrap().matmul(&u.conj_transpose()).unwrap();
    convbeam::cxla::hermitize(&a).unwrap()
}

fn minor(a: &CMatrix, row: usize, col: usize) -> CMatrix {
    let m = a.rows();
    CMatrix::from_fn(m - 1, m - 1, |i, j| {
        a[(if i < row { i } else { i + 1 }, if j < col { j } else { j + 1 })]
    })
}

/// Determinant by Laplace expansion along the first row.
pub fn det_laplace(a: &CMatrix) -> Complex64 {
    match a.rows() {
        0 => c(1.0, 0.0),
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        m => (0..m)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                a[(0, j)] * det_laplace(&minor(a, 0, j)) * sign
            })
            .sum(),
    }
}

/// Inverse as adjugate over determinant.
pub fn cofactor_inverse(a: &CMatrix) -> CMatrix {
    let m = a.rows();
    let det = det_laplace(a);
    if m == 1 {
        return CMatrix::from_fn(1, 1, |_, _| det.inv());
    }
    CMatrix::from_fn(m, m, |i, j| {
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        det_laplace(&minor(a, j, i)) * sign / det
    })
}

/// Eigenvalues of a Hermitian matrix with `m ≤ 3` from its characteristic
/// polynomial, in descending order.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let m = a.rows();
    let mut eigs = match m {
        1 => vec![a[(0, 0)].re],
        2 => {
            let (p, d) = (a[(0, 0)].re, a[(1, 1)].re);
            let mean = 0.5 * (p + d);
            let r = (0.25 * (p - d) * (p - d) + a[(0, 1)].norm_sqr()).sqrt();
            vec![mean + r, mean - r]
        }
        3 => {
            // λ³ − c2 λ² + c1 λ − c0 with a shift to the trace mean
            let shift = a.trace().re / 3.0;
            let b = CMatrix::from_fn(3, 3, |i, j| {
                if i == j {
                    a[(i, j)] - shift
                } else {
                    a[(i, j)]
                }
            });
            let c1: f64 = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(i, j)| (b[(i, i)] * b[(j, j)] - b[(i, j)] * b[(j, i)]).re)
                .sum();
            let c0 = det_laplace(&b).re;
            // depressed cubic x³ + p x + q with p = c1, q = −c0
            let p = c1;
            let q = -c0;
            if p.abs() < 1e-300 {
                let r = (-q).cbrt();
                vec![shift + r, shift + r, shift + r]
            } else {
                let k = 2.0 * (-p / 3.0).sqrt();
                let arg = ((3.0 * q) / (p * k)).clamp(-1.0, 1.0);
                let phi = arg.acos() / 3.0;
                (0..3)
                    .map(|n| shift + k * (phi - 2.0 * std::f64::consts::PI * n as f64 / 3.0).cos())
                    .collect()
            }
        }
        _ => panic!("characteristic-polynomial oracle supports m <= 3"),
    };
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations on the
/// real symmetric embedding `[[Re, −Im], [Im, Re]]`, descending. Each
/// eigenvalue appears twice in the embedding; one copy is kept.
pub fn jacobi_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let m = a.rows();
    let n = 2 * m;
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..m {
        for j in 0..m {
            let z = a[(i, j)];
            s[i][j] = z.re;
            s[i + m][j + m] = z.re;
            s[i + m][j] = z.im;
            s[i][j + m] = -z.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| s[i][j] * s[i][j]).sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if s[p][q] == 0.0 {
                    continue;
                }
                let theta = (s[q][q] - s[p][p]) / (2.0 * s[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (x, y) = (s[k][p], s[k][q]);
                    s[k][p] = cs * x - sn * y;
                    s[k][q] = sn * x + cs * y;
                }
                for k in 0..n {
                    let (x, y) = (s[p][k], s[q][k]);
                    s[p][k] = cs * x - sn * y;
                    s[q][k] = sn * x + cs * y;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| s[i][i]).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs.into_iter().step_by(2).collect()
}

/// Unit eigenvector for the largest eigenvalue of a Hermitian matrix with
/// `m ≤ 3`, taken from the null space of `A − λI`.
pub fn principal_eigenvector(a: &CMatrix) -> CVector {
    let m = a.rows();
    let lambda = hermitian_eigenvalues(a)[0];
    let b = CMatrix::from_fn(m, m, |i, j| if i == j { a[(i, j)] - lambda } else { a[(i, j)] });
    let v: Vec<Complex64> = match m {
        1 => vec![c(1.0, 0.0)],
        2 => {
            let x = vec![-b[(0, 1)], b[(0, 0)]];
            let y = vec![-b[(1, 1)], b[(1, 0)]];
            let n = |v: &Vec<Complex64>| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            if n(&x) >= n(&y) {
                x
            } else {
                y
            }
        }
        3 => {
            let row = |i: usize| [b[(i, 0)], b[(i, 1)], b[(i, 2)]];
            let cross = |r: [Complex64; 3], s: [Complex64; 3]| {
                vec![
                    r[1] * s[2] - r[2] * s[1],
                    r[2] * s[0] - r[0] * s[2],
                    r[0] * s[1] - r[1] * s[0],
                ]
            };
            [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(i, j)| cross(row(i), row(j)))
                .max_by(|x, y| {
                    let n = |v: &Vec<Complex64>| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
                    n(x).partial_cmp(&n(y)).unwrap()
                })
                .unwrap()
        }
        _ => panic!("eigenvector oracle supports m <= 3"),
    };
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    CVector::new(v.into_iter().map(|z| z / n).collect()).unwrap()
}

/// Least squares `min ‖A X − B‖` by modified Gram-Schmidt QR with
/// reorthogonalization and back substitution.
pub fn least_squares(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (rows, cols) = (a.rows(), a.cols());
    let mut q: Vec<Vec<Complex64>> = (0..cols).map(|j| (0..rows).map(|i| a[(i, j)]).collect()).collect();
    let mut r = CMatrix::zeros(cols, cols);
    for j in 0..cols {
        for _ in 0..2 {
            for k in 0..j {
                let p: Complex64 = q[k].iter().zip(&q[j]).map(|(x, y)| x.conj() * y).sum();
                r[(k, j)] += p;
                let qk = q[k].clone();
                q[j].iter_mut().zip(&qk).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = q[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        r[(j, j)] = c(n, 0.0);
        q[j].iter_mut().for_each(|z| *z /= n);
    }
    let mut x = CMatrix::zeros(cols, b.cols());
    for col in 0..b.cols() {
        let qtb: Vec<Complex64> = (0..cols)
            .map(|k| (0..rows).map(|i| q[k][i].conj() * b[(i, col)]).sum())
            .collect();
        for i in (0..cols).rev() {
            let mut acc = qtb[i];
            for k in i + 1..cols {
                acc -= r[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = acc / r[(i, i)];
        }
    }
    x
}

/// Energy decay curve in dB by backward integration of the squared response.
pub fn schroeder_edc_db(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|x| {
            acc += x * x;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc[0];
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// Reverberation time from a least-squares line through the decay curve
/// between `hi` and `lo` dB, extrapolated to −60 dB.
pub fn t60_from_edc(edc_db: &[f64], fs: f64, hi: f64, lo: f64) -> f64 {
    let points: Vec<(f64, f64)> = edc_db
        .iter()
        .enumerate()
        .filter(|(_, &e)| e <= hi && e >= lo)
        .map(|(n, &e)| (n as f64 / fs, e))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

/// Largest entrywise magnitude of `a − b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
