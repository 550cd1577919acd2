//! Matrix exponential by scaling and squaring with diagonal Padé approximants.
//!
//! Degree selection and the scaling count follow the 1-norm thresholds of
//! Higham (2005): degrees 3, 5, 7, 9 are used when the norm is already small,
//! otherwise degree 13 after scaling by `2^s`.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068e0),
];
const THETA_13: f64 = 5.371_920_351_148_152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

pub(crate) fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(t·A)` for a square matrix `A`.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(invalid(format!("mat_exp needs a non-empty square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if !t.is_finite() || a.iter().any(|x| !x.is_finite()) {
        return Err(invalid("mat_exp: non-finite entry or time"));
    }
    let m = a * t;
    Ok(expm(&m))
}

fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let nrm = norm1(a);
    if nrm == 0.0 {
        return ident;
    }
    let a2 = a * a;
    for &(deg, theta) in THETA.iter() {
        if nrm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = low_degree_uv(a, &a2, coeffs, &ident);
            return pade_solve(&u, &v);
        }
    }
    let s = ((nrm / THETA_13).log2().ceil()).max(0.0) as i32;
    let (a, a2) = if s > 0 {
        let scale = 2f64.powi(-s);
        let a = a * scale;
        let a2 = &a2 * (scale * scale);
        (a, a2)
    } else {
        (a.clone(), a2)
    };
    let b = &B13;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    let mut x = pade_solve(&u, &v);
    for _ in 0..s {
        x = &x * &x;
    }
    x
}

fn low_degree_uv(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    coeffs: &[f64],
    ident: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    let mut power = ident.clone();
    for pair in coeffs.chunks(2) {
        v += &power * pair[0];
        u_inner += &power * pair[1];
        power = &power * a2;
    }
    (a * u_inner, v)
}

fn pade_solve(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).expect("Padé denominator is nonsingular within the degree thresholds")
}
