//! Scalar distribution helpers, the bivariate normal orthant probability and
//! a Brent scalar minimizer.

use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

const GL6: ([f64; 3], [f64; 3]) = (
    [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4],
    [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197],
);

const GL12: ([f64; 6], [f64; 6]) = (
    [
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    [
        0.981_560_634_246_719_1,
        0.904_117_256_370_475,
        0.769_902_674_194_305,
        0.587_317_954_286_617_1,
        0.367_831_498_998_180_2,
        0.125_233_408_511_469_2,
    ],
);

const GL20: ([f64; 10], [f64; 10]) = (
    [
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
    [
        0.993_128_599_185_094_9,
        0.963_971_927_277_913_8,
        0.912_234_428_251_325_9,
        0.839_116_971_822_218_8,
        0.746_331_906_460_150_8,
        0.636_053_680_726_515,
        0.510_867_001_950_827_1,
        0.373_706_088_715_419_6,
        0.227_785_851_141_645_1,
        0.076_526_521_133_497_33,
    ],
);

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`.
///
/// Drezner–Wesolowsky with Genz's Gauss–Legendre refinements; absolute
/// error is below 1e-14 across the parameter range.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { norm_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }

    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL6.0, &GL6.1)
    } else if r.abs() < 0.75 {
        (&GL12.0, &GL12.1)
    } else {
        (&GL20.0, &GL20.1)
    };
    // nodes mirrored onto [0, 2]
    let nodes = || {
        w.iter()
            .zip(x)
            .flat_map(|(&wi, &xi)| [(wi, 1.0 - xi), (wi, 1.0 + xi)])
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (wi, xi) in nodes() {
            let sn = (asr * xi).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / two_pi + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let asr = -(bs / as_ + hk) / 2.0;
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            if asr > -100.0 {
                bvn = a * asr.exp()
                    * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = two_pi.sqrt() * norm_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            let a = a / 2.0;
            let mut acc = 0.0;
            for (wi, xi) in nodes() {
                let xs = (a * xi) * (a * xi);
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                    let rs = (1.0 - xs).sqrt();
                    let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                    acc += wi * asr.exp() * (sp - ep);
                }
            }
            bvn = (a * acc - bvn) / two_pi;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                norm_cdf(k) - norm_cdf(h)
            } else {
                norm_cdf(-h) - norm_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Result of a bounded scalar minimization.
#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Brent's method (golden section with parabolic interpolation) on `[lo, hi]`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Minimum {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    const MAX_ITER: usize = 500;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let eps = f64::EPSILON.sqrt();

    for iter in 0..MAX_ITER {
        let xm = 0.5 * (a + b);
        let tol1 = eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Minimum { x, value: fx, iterations: iter };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum { x, value: fx, iterations: MAX_ITER }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
