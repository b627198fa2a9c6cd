//! Double-double arithmetic (~31 significant digits) used by the
//! finite-difference gradient oracle. A plain f64 evaluation of the loss
//! leaves ~1e-10 absolute noise in a central difference with step 1e-6,
//! which swamps small gradient coordinates; evaluating the probe losses in
//! extended precision makes the difference quotient truncation-limited.

/// Unevaluated sum of two floats with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub(crate) hi: f64,
    pub(crate) lo: f64,
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319046813846299558e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ahi, alo) = split(a);
    let (bhi, blo) = split(b);
    let err = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo;
    (p, err)
}

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub(crate) fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    pub(crate) fn add_f64(self, other: f64) -> Dd {
        let (s, e) = two_sum(self.hi, other);
        let e = e + self.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    pub(crate) fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub(crate) fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub(crate) fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub(crate) fn mul_f64(self, other: f64) -> Dd {
        let (p, e) = two_prod(self.hi, other);
        let e = e + self.lo * other;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub(crate) fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q1));
        let q2 = r.hi / other.hi;
        let r = r.sub(other.mul_f64(q2));
        let q3 = r.hi / other.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add_f64(q3)
    }

    pub(crate) fn sqrt(self) -> Dd {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::ZERO;
        }
        let s = self.hi.sqrt();
        let (p, e) = two_prod(s, s);
        let diff = self.sub(Dd { hi: p, lo: e });
        let corr = diff.hi / (2.0 * s);
        Dd::from_f64(s).add_f64(corr)
    }

    /// exp via range reduction `x = k ln2 + r` and a degree-17 Taylor series.
    pub(crate) fn exp(self) -> Dd {
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        if self.hi > 700.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        let k = (self.hi / LN2.hi).round();
        let r = self.sub(LN2.mul_f64(k));
        let mut acc = Dd::ONE;
        for n in (2..=18u32).rev() {
            acc = Dd::ONE.add(acc.mul(r).div(Dd::from_f64(n as f64)));
        }
        let acc = Dd::ONE.add(acc.mul(r));
        let scale = f64::from_bits((((k as i64) + 1023) as u64) << 52);
        Dd { hi: acc.hi * scale, lo: acc.lo * scale }
    }

    /// ln via an f64 seed refined with one Newton step: `l0 + (x e^{-l0} - 1)`.
    pub(crate) fn ln(self) -> Dd {
        debug_assert!(self.hi > 0.0);
        let l0 = self.hi.ln();
        let resid = self.mul(Dd::from_f64(-l0).exp()).add_f64(-1.0);
        resid.add_f64(l0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: Dd, want_hi: f64, want_lo: f64, tol: f64) {
        let err = got.sub(Dd { hi: want_hi, lo: want_lo });
        assert!(
            err.hi.abs() <= tol,
            "got ({}, {}), want ({want_hi}, {want_lo})",
            got.hi,
            got.lo
        );
    }

    #[test]
    fn add_tracks_sub_ulp_residue() {
        let a = Dd::from_f64(1.0).add_f64(1e-20);
        assert_eq!(a.hi, 1.0);
        assert_eq!(a.lo, 1e-20);
        let b = a.sub(Dd::ONE);
        assert!((b.to_f64() - 1e-20).abs() < 1e-35);
    }

    #[test]
    fn mul_recovers_exact_product_error() {
        let a = 1.0 + 2f64.powi(-30);
        let b = 1.0 - 2f64.powi(-30);
        let p = Dd::from_f64(a).mul(Dd::from_f64(b));
        let exact = Dd::ONE.sub(Dd::from_f64(2f64.powi(-60)));
        assert_close(p, exact.hi, exact.lo, 1e-32);
    }

    #[test]
    fn div_inverts_mul() {
        let x = Dd::from_f64(std::f64::consts::PI);
        let y = Dd::from_f64(1.7320508);
        let back = x.mul(y).div(y);
        assert_close(back, x.hi, x.lo, 1e-30);
    }

    #[test]
    fn sqrt_squares_back() {
        let x = Dd::from_f64(2.0);
        let r = x.sqrt();
        assert_close(r.mul(r), 2.0, 0.0, 1e-30);
    }

    #[test]
    fn exp_matches_reference_values() {
        assert_close(Dd::ONE.exp(), std::f64::consts::E, 1.4456468917292502e-16, 1e-25);
        assert_close(Dd::ZERO.exp(), 1.0, 0.0, 0.0);
        let e10 = Dd::from_f64(-10.0).exp();
        assert!((e10.to_f64() - (-10.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn ln_inverts_exp() {
        for &x in &[-25.0, -3.2, -0.5, 0.0, 0.7, 4.0, 20.0] {
            let round_trip = Dd::from_f64(x).exp().ln();
            let err = round_trip.add_f64(-x);
            assert!(err.to_f64().abs() < 1e-24, "x = {x}, err = {}", err.to_f64());
        }
    }

    #[test]
    fn ln_of_small_scores_is_accurate() {
        let s = Dd::from_f64(1e-12);
        let l = s.ln();
        assert!((l.to_f64() - (1e-12f64).ln()).abs() < 1e-13);
        assert_close(s.ln().exp(), 1e-12, 0.0, 1e-24);
    }
}
