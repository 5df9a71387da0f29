//! Matrix exponential by scaling and squaring with a diagonal Padé approximant.

use nalgebra::{DMatrix, SMatrix};

// [6/6] Padé numerator coefficients; the denominator alternates sign.
const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

fn norm1<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    (0..N).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn expm<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let norm = norm1(m);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);

    let id = SMatrix::<f64, N, N>::identity();
    let mut num = id * PADE6[0];
    let mut den = id * PADE6[0];
    let mut power = id;
    for (k, c) in PADE6.iter().enumerate().skip(1) {
        power = power * scaled;
        num += power * *c;
        den += power * if k % 2 == 0 { *c } else { -*c };
    }
    let den = DMatrix::from_column_slice(N, N, den.as_slice());
    let num = DMatrix::from_column_slice(N, N, num.as_slice());
    let solved = den.lu().solve(&num).expect("padé denominator is nonsingular for small norms");
    let mut result = SMatrix::<f64, N, N>::from_column_slice(solved.as_slice());
    for _ in 0..squarings {
        result = result * result;
    }
    result
}
