//! Cayley–Dickson hypercomplex arithmetic over `2^n` real components.

/// Conjugate: negate every imaginary component.
pub fn conj(a: &[f64]) -> Vec<f64> {
    let mut out = a.to_vec();
    out.iter_mut().skip(1).for_each(|v| *v = -*v);
    out
}

/// `(a, b)(c, d) = (ac − d̄b, da + bc̄)`; for four components this is the
/// Hamilton quaternion product.
pub fn mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 1 {
        return vec![x[0] * y[0]];
    }
    let h = n / 2;
    let (a, b) = x.split_at(h);
    let (c, d) = y.split_at(h);
    let ac = mul(a, c);
    let dbar_b = mul(&conj(d), b);
    let da = mul(d, a);
    let b_cbar = mul(b, &conj(c));
    let mut out = Vec::with_capacity(n);
    out.extend(ac.iter().zip(&dbar_b).map(|(p, q)| p - q));
    out.extend(da.iter().zip(&b_cbar).map(|(p, q)| p + q));
    out
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
