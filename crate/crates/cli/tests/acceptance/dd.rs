//! Double-double (~31 significant digits) arithmetic used as the
//! independent high-precision oracle. Kept deliberately minimal: just what
//! evaluating `I * (p0 + p1*(1-e^(-t/p2)) + p3*(1-e^(-t/p4)))` requires.
//!
//! A value is `hi + lo` with `|lo| <= ulp(hi)/2`. Products use the exact
//! fused multiply-add; sums use the Knuth two-sum.

#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// ln(2) to double-double precision.
const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    // requires |a| >= |b|
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let (t, te) = two_sum(self.lo, other.lo);
        let (s, e2) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e2 + te);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn mul_f64(self, x: f64) -> Dd {
        let (p, e) = two_prod(self.hi, x);
        let e = e + self.lo * x;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q1));
        let q2 = r.hi / other.hi;
        let r = r.sub(other.mul_f64(q2));
        let q3 = r.hi / other.hi;
        let (s, e) = quick_two_sum(q1, q2);
        let (hi, lo) = quick_two_sum(s, e + q3);
        Dd { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2.0f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }
}

/// exp(x) for a double-double argument, via range reduction to
/// `x = k*ln2 + r` and a Taylor series on `|r| <= ln2/2`.
pub fn exp_dd(x: Dd) -> Dd {
    if x.hi < -700.0 {
        // Far below any magnitude the comparisons care about.
        return Dd::from((x.hi).exp());
    }
    let k = (x.hi / LN2.hi).round();
    let r = x.sub(LN2.mul_f64(k));
    // sum_{n=0..} r^n / n!
    let mut sum = Dd::from(1.0);
    let mut term = Dd::from(1.0);
    for n in 1..=26 {
        term = term.mul(r).mul_f64(1.0 / n as f64);
        sum = sum.add(term);
    }
    sum.scale_pow2(k as i32)
}

/// expm1(x) = e^x - 1 without cancellation for small |x|.
pub fn expm1_dd(x: Dd) -> Dd {
    if x.hi.abs() <= 0.5 {
        // sum_{n=1..} x^n / n!
        let mut sum = Dd::from(0.0);
        let mut term = Dd::from(1.0);
        for n in 1..=26 {
            term = term.mul(x).mul_f64(1.0 / n as f64);
            sum = sum.add(term);
        }
        sum
    } else {
        exp_dd(x).sub(Dd::from(1.0))
    }
}

/// `1 - e^(-t/tau)` in double-double precision.
pub fn one_minus_exp_neg_dd(t: f64, tau: f64) -> Dd {
    let x = Dd::from(t).div(Dd::from(tau));
    expm1_dd(x.neg()).neg()
}

/// Full pulse response in double-double precision, returned as Dd so that
/// finite differences of it do not lose the cancelled digits.
pub fn response_dd(p: &[f64; 5], current: f64, t: f64) -> Dd {
    let branch1 = one_minus_exp_neg_dd(t, p[2]).mul_f64(p[1]);
    let branch2 = one_minus_exp_neg_dd(t, p[4]).mul_f64(p[3]);
    Dd::from(p[0]).add(branch1).add(branch2).mul_f64(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dd_tracks_known_values() {
        // e computed to 31 digits: 2.718281828459045235360287471353
        let e = exp_dd(Dd::from(1.0));
        assert!((e.hi - std::f64::consts::E).abs() < 1e-15);
        // hi+lo should be accurate beyond f64: check against the next digits
        let err = e.to_f64() - std::f64::consts::E;
        assert!(err.abs() < 1e-16);

        // 1 - e^-1 = 0.6321205588285576784044762298385
        let v = one_minus_exp_neg_dd(1.0, 1.0);
        assert!((v.hi - 0.6321205588285577).abs() < 1e-16);

        // small argument: 1 - e^-x ~ x - x^2/2
        let v = one_minus_exp_neg_dd(1e-9, 1.0).to_f64();
        let expected = 1e-9 - 0.5e-18;
        assert!(((v - expected) / expected).abs() < 1e-15);
    }

    #[test]
    fn dd_reference_value_for_the_frozen_constant() {
        // The constant frozen into the model tests:
        // -60 * (1e-3 + 5e-4*(1-e^-1) + 8e-4*(1-e^-0.05))
        let p = [1e-3, 5e-4, 1.0, 8e-4, 20.0];
        let v = response_dd(&p, -60.0, 1.0).to_f64();
        let expected = -0.08130460438882246;
        assert!(((v - expected) / expected).abs() < 1e-15);
    }
}
