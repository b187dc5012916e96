//! Exponential integrals and Bessel series used by the lattice sums.

use num_complex::Complex64;

pub(crate) const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `E_1(z)` for real `z > 0`.
pub(crate) fn expint_e1(z: f64) -> f64 {
    debug_assert!(z > 0.0);
    if z <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= -z / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - z.ln() - sum
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..300 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-z).exp()
    }
}

/// Fills `out[q] = E_{q+1}(z)` for `q = 0..out.len()` (`z > 0`).
pub(crate) fn expint_seq(z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let ez = (-z).exp();
    out[0] = expint_e1(z);
    for q in 1..out.len() {
        out[q] = (ez - z * out[q - 1]) / q as f64;
    }
}

/// Fills `out[q] = E_{q+1}(z) + (-z)^q / q! * ln z`, the part of `E_{q+1}`
/// left after removing its logarithm. Finite at `z = 0`.
pub(crate) fn expint_regular_seq(z: f64, out: &mut [f64]) {
    let nq = out.len();
    if z > 4.0 {
        expint_seq(z, out);
        let lz = z.ln();
        let mut pw = 1.0;
        for (q, o) in out.iter_mut().enumerate() {
            if q > 0 {
                pw *= -z / q as f64;
            }
            *o += pw * lz;
        }
        return;
    }
    // F_q(z) = (-z)^q/q! psi(q+1) - sum_{k != q} (-z)^k / ((k - q) k!)
    let kmax = 80;
    let mut pows = vec![0.0; kmax];
    pows[0] = 1.0;
    for k in 1..kmax {
        pows[k] = pows[k - 1] * (-z) / k as f64;
    }
    let mut psi = -EULER_GAMMA;
    for (q, o) in out.iter_mut().enumerate() {
        if q > 0 {
            psi += 1.0 / q as f64;
        }
        let mut s = pows[q] * psi;
        for (k, pk) in pows.iter().enumerate() {
            if k == q {
                continue;
            }
            if k > q + 2 && pk.abs() < 1e-19 {
                break;
            }
            s -= pk / (k as f64 - q as f64);
        }
        *o = s;
    }
    let _ = nq;
}

/// `J_0(sqrt(lambda) r)` from its power series in `lambda r^2`.
pub(crate) fn bessel_j0_sq(lambda: Complex64, r2: f64) -> Complex64 {
    let x = -lambda * r2 / 4.0;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    for q in 1..120 {
        let qf = q as f64;
        term = term * x / (qf * qf);
        sum += term;
        if term.norm() < 1e-18 * sum.norm().max(1e-30) {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e_quad(n: usize, z: f64) -> f64 {
        // E_n(z) = int_1^inf exp(-z t) / t^n dt via substitution t = 1/s
        // -> int_0^1 s^(n-2) exp(-z/s) ds, Gauss-Legendre on many panels
        let panels = 2000;
        let (x, w) = ([-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4], [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]);
        let mut s = 0.0;
        for k in 0..panels {
            let a = k as f64 / panels as f64;
            let b = (k + 1) as f64 / panels as f64;
            for i in 0..3 {
                let t = 0.5 * (a + b) + 0.5 * (b - a) * x[i];
                s += 0.5 * (b - a) * w[i] * t.powi(n as i32 - 2) * (-z / t).exp();
            }
        }
        s
    }

    #[test]
    fn e1_reference_values() {
        // E_1(1) and E_1(0.5) tabulated values
        assert!((expint_e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-15);
        assert!((expint_e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-15);
        assert!((expint_e1(5.0) - 0.001_148_295_591_275_325_8).abs() < 1e-17);
    }

    #[test]
    fn seq_matches_quadrature() {
        let mut out = vec![0.0; 6];
        for &z in &[0.3, 2.0, 7.5] {
            expint_seq(z, &mut out);
            for n in 2..6 {
                let r = e_quad(n + 1, z);
                assert!((out[n] - r).abs() < 1e-9 * r.max(1e-12), "n={n} z={z}");
            }
        }
    }

    #[test]
    fn regular_part_consistent() {
        let mut a = vec![0.0; 10];
        let mut b = vec![0.0; 10];
        for &z in &[0.01, 0.5, 3.0, 3.9] {
            expint_regular_seq(z, &mut a);
            expint_seq(z, &mut b);
            let mut pw = 1.0;
            for q in 0..10 {
                if q > 0 {
                    pw *= -z / q as f64;
                }
                let direct = b[q] + pw * z.ln();
                assert!((a[q] - direct).abs() < 1e-12, "q={q} z={z}");
            }
        }
        expint_regular_seq(0.0, &mut a);
        assert!((a[0] + EULER_GAMMA).abs() < 1e-15);
        assert!((a[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn j0_values() {
        let v = bessel_j0_sq(Complex64::new(1.0, 0.0), 4.0);
        assert!((v.re - 0.223_890_779_141_235_7).abs() < 1e-14);
    }
}
