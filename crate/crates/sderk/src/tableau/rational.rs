//! Minimal exact rational arithmetic for tableau construction.

/// Reduced fraction with i128 parts; magnitudes stay far below overflow for
/// the coefficient sets built here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i128,
    den: i128,
}

impl Rational {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.abs(), den.abs()).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn add(self, other: Rational) -> Rational {
        Rational::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub fn mul(self, other: Rational) -> Rational {
        Rational::new(self.num * other.num, self.den * other.den)
    }

    pub fn div(self, other: Rational) -> Rational {
        assert!(other.num != 0, "division by zero");
        Rational::new(self.num * other.den, self.den * other.num)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_reduces() {
        let a = Rational::new(2, 4);
        assert_eq!(a, Rational::new(1, 2));
        assert_eq!(a.add(Rational::new(1, 3)), Rational::new(5, 6));
        assert_eq!(a.mul(Rational::new(-4, 6)), Rational::new(-1, 3));
        assert_eq!(a.div(Rational::new(1, 4)), Rational::new(2, 1));
        assert_eq!(Rational::new(3, -6), Rational::new(-1, 2));
    }
}
