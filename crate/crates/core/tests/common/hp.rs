//! Test-only high-precision arithmetic: signed Q64.64 fixed point with
//! 256-bit intermediates, plus ln and sqrt. Used as the independent
//! oracle for the UCB formula; resolution 2^-64 ~ 5.4e-20, far beyond the
//! 1e-9 acceptance tolerance, and entirely free of f64 transcendentals.

const FRAC_BITS: u32 = 64;
const ONE: u128 = 1u128 << FRAC_BITS;

/// value = (-1)^neg * mag / 2^64
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    neg: bool,
    mag: u128,
}

impl Fix {
    pub const ZERO: Fix = Fix { neg: false, mag: 0 };

    pub fn from_u64(v: u64) -> Fix {
        Fix {
            neg: false,
            mag: (v as u128) << FRAC_BITS,
        }
    }

    /// Exact for |x| >= 2^-11 (f64 mantissas stay above the 2^-64 grid);
    /// truncation below that is < 2^-64.
    pub fn from_f64(x: f64) -> Fix {
        assert!(
            x.is_finite() && x.abs() < 1e18,
            "oracle input out of range: {x}"
        );
        let neg = x < 0.0;
        let scaled = x.abs() * (ONE as f64); // power-of-two scaling is exact
        Fix {
            neg: neg && scaled != 0.0,
            mag: scaled as u128,
        }
    }

    pub fn to_f64(self) -> f64 {
        let v = self.mag as f64 / ONE as f64;
        if self.neg {
            -v
        } else {
            v
        }
    }

    pub fn add(self, other: Fix) -> Fix {
        if self.neg == other.neg {
            Fix {
                neg: self.neg,
                mag: self.mag.checked_add(other.mag).expect("fix overflow"),
            }
        } else if self.mag >= other.mag {
            Fix {
                neg: self.neg && self.mag != other.mag,
                mag: self.mag - other.mag,
            }
        } else {
            Fix {
                neg: other.neg,
                mag: other.mag - self.mag,
            }
        }
    }

    pub fn mul(self, other: Fix) -> Fix {
        Fix {
            neg: self.neg != other.neg && self.mag != 0 && other.mag != 0,
            mag: mul_mag(self.mag, other.mag),
        }
    }

    pub fn div(self, other: Fix) -> Fix {
        assert!(other.mag != 0, "fix division by zero");
        Fix {
            neg: self.neg != other.neg && self.mag != 0,
            mag: div_mag(self.mag, other.mag),
        }
    }

    /// Newton iterations seeded by the f64 root; quadratic convergence
    /// pins all 64 fractional bits.
    pub fn sqrt(self) -> Fix {
        assert!(!self.neg, "sqrt of negative");
        if self.mag == 0 {
            return Fix::ZERO;
        }
        let mut r = Fix::from_f64(self.to_f64().sqrt().max(f64::MIN_POSITIVE));
        for _ in 0..8 {
            // r = (r + v/r) / 2
            let q = self.div(r);
            r = Fix {
                neg: false,
                mag: (r.mag + q.mag) >> 1,
            };
        }
        r
    }

    /// Natural log via base-2 reduction and the atanh series:
    /// ln(m * 2^k) = k ln2 + 2 atanh((m-1)/(m+1)) with m in [1, 2).
    pub fn ln(self) -> Fix {
        assert!(!self.neg && self.mag > 0, "ln needs a positive argument");
        let msb = 127 - self.mag.leading_zeros() as i32;
        let k = msb - FRAC_BITS as i32;
        let m_mag = if k >= 0 {
            self.mag >> k
        } else {
            self.mag << (-k)
        };
        let m = Fix {
            neg: false,
            mag: m_mag,
        }; // in [1, 2)
        let ln_m = atanh_ln(m);
        let k_term = ln2().mul(Fix::from_f64(k as f64)); // exact: k is a small integer
        k_term.add(ln_m)
    }
}

/// (a * b) >> 64 with a 256-bit intermediate via 64-bit limbs.
fn mul_mag(a: u128, b: u128) -> u128 {
    const MASK: u128 = (1u128 << 64) - 1;
    let (ah, al) = (a >> 64, a & MASK);
    let (bh, bl) = (b >> 64, b & MASK);
    let hh = ah.checked_mul(bh).expect("fix mul overflow");
    let mid = ah * bl + al * bh; // each factor < 2^64 * small; bounded by callers
    let ll = al.wrapping_mul(bl); // fits: (2^64-1)^2 < 2^128
    hh.checked_shl(64)
        .expect("fix mul overflow")
        .checked_add(mid)
        .and_then(|v| v.checked_add(ll >> 64))
        .expect("fix mul overflow")
}

/// (a << 64) / b computed by long division so the shift cannot overflow.
fn div_mag(a: u128, b: u128) -> u128 {
    let q_int = a / b;
    let mut rem = a % b;
    let mut frac: u128 = 0;
    for _ in 0..FRAC_BITS {
        rem = rem.checked_shl(1).expect("fix div overflow");
        frac <<= 1;
        if rem >= b {
            rem -= b;
            frac |= 1;
        }
    }
    q_int.checked_shl(64).expect("fix div overflow") | frac
}

/// 2 * atanh((m-1)/(m+1)) for m in [1, 2): t < 1/3, so ~40 series terms
/// push the tail under 2^-70.
fn atanh_ln(m: Fix) -> Fix {
    let one = Fix::from_u64(1);
    let t = m
        .add(Fix {
            neg: true,
            mag: one.mag,
        })
        .div(m.add(one));
    let t2 = t.mul(t);
    let mut term = t;
    let mut sum = t;
    let mut k = 1u64;
    loop {
        term = term.mul(t2);
        k += 2;
        let contrib = term.div(Fix::from_u64(k));
        if contrib.mag == 0 {
            break;
        }
        sum = sum.add(contrib);
        if k > 101 {
            break;
        }
    }
    Fix {
        neg: sum.neg,
        mag: sum.mag << 1,
    } // * 2
}

/// ln 2 = 2 atanh(1/3), computed in fixed point.
fn ln2() -> Fix {
    let t = Fix::from_u64(1).div(Fix::from_u64(3));
    let t2 = t.mul(t);
    let mut term = t;
    let mut sum = t;
    let mut k = 1u64;
    loop {
        term = term.mul(t2);
        k += 2;
        let contrib = term.div(Fix::from_u64(k));
        if contrib.mag == 0 {
            break;
        }
        sum = sum.add(contrib);
        if k > 101 {
            break;
        }
    }
    Fix {
        neg: false,
        mag: sum.mag << 1,
    }
}

/// The UCB oracle: cum/q_i + c * sqrt(ln(q) / q_i), entirely in fixed
/// point. Callers handle the q_i = 0 infinity case.
pub fn ucb_oracle(cumulative_score: f64, visit_count: u64, total_visits: u64, c: f64) -> f64 {
    assert!(visit_count > 0);
    let mean = Fix::from_f64(cumulative_score).div(Fix::from_u64(visit_count));
    let ln_q = Fix::from_u64(total_visits).ln();
    let bonus = Fix::from_f64(c).mul(ln_q.div(Fix::from_u64(visit_count)).sqrt());
    mean.add(bonus).to_f64()
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn fixed_point_constants() {
        assert!((ln2().to_f64() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((Fix::from_u64(10).ln().to_f64() - 10f64.ln()).abs() < 1e-15);
        assert!((Fix::from_u64(2).sqrt().to_f64() - std::f64::consts::SQRT_2).abs() < 1e-15);
        let x = Fix::from_f64(-0.375);
        assert_eq!(x.add(Fix::from_f64(0.375)), Fix::ZERO);
        assert_eq!(Fix::from_f64(1.5).mul(Fix::from_f64(-2.0)).to_f64(), -3.0);
        assert_eq!(Fix::from_f64(1.0).div(Fix::from_f64(4.0)).to_f64(), 0.25);
    }
}
