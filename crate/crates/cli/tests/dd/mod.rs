//! Double-double (~31 significant digits) evaluation of the Mexican-hat
//! kernel, used as the high-precision oracle. Independent of the library:
//! its own representation, its own exponential.

#[derive(Clone, Copy, Debug)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: err }
}

/// Requires |a| >= |b|.
fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: f64::mul_add(a, b, -p),
    }
}

impl Dd {
    pub fn from_f64(a: f64) -> Dd {
        Dd { hi: a, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        quick_two_sum(s.hi, s.lo + self.lo + o.lo)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + self.hi * o.lo + self.lo * o.hi)
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r1 = self.sub(o.mul(Dd::from_f64(q1)));
        let q2 = r1.hi / o.hi;
        let r2 = r1.sub(o.mul(Dd::from_f64(q2)));
        let q3 = r2.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from_f64(q3))
    }

    fn sqrt(self) -> Dd {
        if self.hi == 0.0 {
            return Dd::from_f64(0.0);
        }
        // One double-double Newton step from the f64 seed.
        let y = Dd::from_f64(self.hi.sqrt());
        let correction = self.sub(y.mul(y)).div(y.add(y));
        y.add(correction)
    }

    /// Exact scaling by a power of two.
    fn ldexp(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

const PI: Dd = Dd {
    hi: std::f64::consts::PI,
    lo: 1.2246467991473532e-16,
};

/// exp in double-double: argument reduction by ln 2, then the Taylor
/// series of the remainder (all terms positive for positive input, so no
/// cancellation; negative arguments go through the reciprocal).
fn exp_dd(y: Dd) -> Dd {
    if y.hi < 0.0 {
        return Dd::from_f64(1.0).div(exp_dd(Dd { hi: -y.hi, lo: -y.lo }));
    }
    let k = (y.hi / LN2.hi).round();
    let r = y.sub(LN2.mul(Dd::from_f64(k)));
    let mut term = Dd::from_f64(1.0);
    let mut sum = Dd::from_f64(1.0);
    for n in 1..60 {
        term = term.mul(r).div(Dd::from_f64(n as f64));
        sum = sum.add(term);
        if term.hi.abs() < 1e-40 {
            break;
        }
    }
    sum.ldexp(k as i32)
}

/// `(2 / (sqrt(3) pi^(1/4))) (1 - x^2) exp(-x^2 / 2)` in double-double,
/// rounded to f64 at the very end.
pub fn mexican_hat_oracle(x: f64) -> f64 {
    let norm = Dd::from_f64(2.0).div(Dd::from_f64(3.0).sqrt().mul(PI.sqrt().sqrt()));
    let x2 = two_prod(x, x);
    let poly = Dd::from_f64(1.0).sub(x2);
    let envelope = exp_dd(Dd {
        hi: -x2.hi,
        lo: -x2.lo,
    }
    .ldexp(-1));
    norm.mul(poly).mul(envelope).hi()
}

#[cfg(test)]
mod sanity {
    use super::*;

    #[test]
    fn oracle_matches_known_constants() {
        // Peak value 2 / (sqrt(3) pi^(1/4)) to 16 digits.
        assert!((mexican_hat_oracle(0.0) - 0.8673250705840776).abs() < 1e-15);
        // Zeros of the polynomial factor.
        assert_eq!(mexican_hat_oracle(1.0), 0.0);
        assert_eq!(mexican_hat_oracle(-1.0), 0.0);
        // exp sanity in double-double.
        let e1 = exp_dd(Dd::from_f64(1.0));
        assert!((e1.hi() - std::f64::consts::E).abs() < 1e-15);
        let em1 = exp_dd(Dd::from_f64(-1.0));
        assert!((em1.hi() - 1.0 / std::f64::consts::E).abs() < 1e-16);
        // Large negative argument: e^-12.5 against the f64 route.
        let big = exp_dd(Dd::from_f64(-12.5));
        let rel = (big.hi() - (-12.5f64).exp()).abs() / (-12.5f64).exp();
        assert!(rel < 1e-14, "{rel}");
    }
}
