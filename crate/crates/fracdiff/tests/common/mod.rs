#![allow(dead_code)]

//! Independent reference implementations shared by the integration tests.

pub mod ml_oracle {
    use rug::ops::Pow;
    use rug::Float;

    const PREC: u32 = 320;
    const SERIES_LIMIT: f64 = 80.0;

    /// Extended-precision `E_{a,b}(-x)`: power series with a precomputed
    /// reciprocal-gamma table while `x^{1/a} ≤ 80`, the algebraic asymptotic
    /// series beyond, and closed forms for `a = 1, b ∈ {1, 2}`.
    pub struct Oracle {
        a: f64,
        b: f64,
        rgamma: Vec<Float>,
    }

    impl Oracle {
        pub fn new(a: f64, b: f64) -> Self {
            let kmax = (SERIES_LIMIT / a * 4.0) as usize + 200;
            let rgamma = (0..kmax)
                .map(|k| {
                    let arg = Float::with_val(PREC, a) * (k as u32) + b;
                    Float::with_val(PREC, arg.gamma().recip_ref())
                })
                .collect();
            Self { a, b, rgamma }
        }

        pub fn eval_neg(&self, x: f64) -> f64 {
            assert!(x >= 0.0);
            if self.a == 1.0 && self.b == 1.0 {
                return Float::with_val(PREC, -x).exp().to_f64();
            }
            if self.a == 1.0 && self.b == 2.0 && x > 0.0 {
                // (1 - e^{-x}) / x; the asymptotic series has one nonzero term here.
                let e = Float::with_val(PREC, -x).exp();
                return (Float::with_val(PREC, 1 - e) / x).to_f64();
            }
            if x == 0.0 {
                return self.rgamma[0].to_f64();
            }
            if x.powf(1.0 / self.a) <= SERIES_LIMIT {
                self.series(x)
            } else {
                self.asymptotic(x)
            }
        }

        fn series(&self, x: f64) -> f64 {
            let mz = Float::with_val(PREC, -x);
            let mut zk = Float::with_val(PREC, 1);
            let mut sum = Float::with_val(PREC, 0);
            let tiny = Float::with_val(PREC, 1e-45);
            for (k, rg) in self.rgamma.iter().enumerate() {
                let term = Float::with_val(PREC, &zk * rg);
                sum += &term;
                if k > 10 && Float::with_val(PREC, term.abs_ref()) < tiny {
                    return sum.to_f64();
                }
                zk *= &mz;
            }
            panic!("oracle series did not converge at x = {x}");
        }

        fn asymptotic(&self, x: f64) -> f64 {
            let xf = Float::with_val(PREC, x);
            let mut sum = Float::with_val(PREC, 0);
            let mut smallest = Float::with_val(PREC, f64::INFINITY);
            for k in 1..5000u32 {
                let arg = Float::with_val(PREC, self.b) - Float::with_val(PREC, self.a) * k;
                let g = Float::with_val(PREC, arg.gamma_ref());
                if g.is_infinite() || g.is_nan() {
                    continue;
                }
                let xk = Float::with_val(PREC, xf.clone().pow(k));
                let term = Float::with_val(PREC, &xk * &g).recip();
                // Envelope without the sin factor of the reflection formula, so
                // near-poles of Γ do not masquerade as the smallest term.
                let env = if arg < 0.5 {
                    let refl = Float::with_val(PREC, 1 - arg).gamma();
                    Float::with_val(PREC, refl / xk) / std::f64::consts::PI
                } else {
                    Float::with_val(PREC, term.abs_ref())
                };
                assert!(
                    env <= Float::with_val(PREC, &smallest * 1e10),
                    "oracle asymptotic series diverged at x = {x}"
                );
                if k % 2 == 1 {
                    sum += &term;
                } else {
                    sum -= &term;
                }
                let rel = Float::with_val(PREC, &env / Float::with_val(PREC, sum.abs_ref()));
                if rel < 1e-30 {
                    return sum.to_f64();
                }
                if env < smallest {
                    smallest = env;
                }
            }
            panic!("oracle asymptotic series did not converge at x = {x}");
        }
    }
}

pub mod signals {
    /// Smooth compactly supported bump on `(lo, hi)` with its first derivative.
    pub fn bump(t: f64, lo: f64, hi: f64) -> f64 {
        if t <= lo || t >= hi {
            return 0.0;
        }
        let u = 2.0 * (t - lo) / (hi - lo) - 1.0;
        (-1.0 / (1.0 - u * u)).exp()
    }

    pub fn bump_prime(t: f64, lo: f64, hi: f64) -> f64 {
        if t <= lo || t >= hi {
            return 0.0;
        }
        let u = 2.0 * (t - lo) / (hi - lo) - 1.0;
        let du = 2.0 / (hi - lo);
        let q = 1.0 - u * u;
        (-1.0 / q).exp() * (-2.0 * u / (q * q)) * du
    }
}

/// Adaptive Simpson quadrature for smooth integrands.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}
