#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "mnp/errors.hpp"

// Scalar and bivariate normal primitives. Everything multivariate is built
// on top of these, so they are kept close to machine precision: the CDF via
// erfc, the quantile via Wichura's AS 241 (PPND16), and the bivariate upper
// probability via the Drezner-Wesolowsky/Genz hybrid quadrature.

namespace mnp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double normal_pdf(double x) {
  return 0.3989422804014326779 * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return 0.5 * std::erfc(-x * 0.7071067811865475244);
}

// Upper tail P(X > x); accurate far into the right tail where 1 - cdf loses.
inline double normal_sf(double x) {
  if (std::isinf(x)) return x > 0 ? 0.0 : 1.0;
  return 0.5 * std::erfc(x * 0.7071067811865475244);
}

// log Phi(x), stable in the left tail where Phi underflows.
inline double normal_logcdf(double x) {
  if (x > -30.0) {
    const double p = normal_cdf(x);
    if (p > 0) return std::log(p);
  }
  // Asymptotic expansion of Mills' ratio for x -> -inf.
  const double x2 = x * x;
  const double corr = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - 0.9189385332046727418 - std::log(-x) + std::log(corr);
}

// Inverse normal CDF, Wichura (1988) algorithm AS 241, PPND16.
// Relative accuracy about 1e-16 over p in (1e-316, 1 - eps).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw ArgumentError("normal_quantile: p outside [0,1]");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                             6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                           1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                         1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                             3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                           5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                         4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                             2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                           3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                         4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                             1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                           6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                         2.05319162663775882187e0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                             1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                           2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                         5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                             1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                           1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                         5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return (q < 0.0) ? -val : val;
}

// Density of a centered bivariate normal with unit variances, correlation r.
inline double bvn_pdf(double x, double y, double r) {
  const double omr2 = (1.0 - r) * (1.0 + r);
  return std::exp(-0.5 * (x * x - 2.0 * r * x * y + y * y) / omr2) /
         (6.283185307179586477 * std::sqrt(omr2));
}

namespace detail {

// Gauss-Legendre rules used by the bivariate routine (positive nodes only).
inline constexpr double kGlX6[3] = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
inline constexpr double kGlW6[3] = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
inline constexpr double kGlX12[6] = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                     0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
inline constexpr double kGlW12[6] = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                     0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
inline constexpr double kGlX20[10] = {0.9931285991850949,  0.9639719272779138, 0.9122344282513259,
                                      0.8391169718222188,  0.7463319064601508, 0.6360536807265150,
                                      0.5108670019508271,  0.3737060887154196, 0.2277858511416451,
                                      0.07652652113349733};
inline constexpr double kGlW20[10] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                      0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                      0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                      0.1527533871307259};

}  // namespace detail

// P(X > dh, Y > dk) for a standard bivariate normal with correlation r.
// Genz's BVND: Drezner-Wesolowsky quadrature for |r| < 0.925, a transformed
// tail expansion otherwise. Absolute accuracy around 5e-16.
inline double bvn_upper(double dh, double dk, double r) {
  if (std::isnan(dh) || std::isnan(dk)) throw ArgumentError("bvn_upper: NaN argument");
  if (dh == kInf || dk == kInf) return 0.0;
  if (dh == -kInf) return normal_sf(dk);
  if (dk == -kInf) return normal_sf(dh);

  const double* gx;
  const double* gw;
  int lg;
  const double ar = std::fabs(r);
  if (ar < 0.3) {
    gx = detail::kGlX6; gw = detail::kGlW6; lg = 3;
  } else if (ar < 0.75) {
    gx = detail::kGlX12; gw = detail::kGlW12; lg = 6;
  } else {
    gx = detail::kGlX20; gw = detail::kGlW20; lg = 10;
  }

  double h = dh, k = dk;
  double hk = h * k;
  double bvn = 0.0;
  if (ar < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = std::asin(r);
    for (int i = 0; i < lg; ++i) {
      for (int is = -1; is <= 1; is += 2) {
        const double sn = std::sin(0.5 * asr * (is * gx[i] + 1.0));
        bvn += gw[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / (4.0 * M_PI) + normal_sf(h) * normal_sf(k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (ar < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 16.0;
      double asr = -0.5 * (bs / as + hk);
      if (asr > -100.0) {
        bvn = a * std::exp(asr) *
              (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
      }
      if (-hk < 100.0) {
        const double b = std::sqrt(bs);
        bvn -= std::exp(-0.5 * hk) * 2.5066282746310005024 * normal_cdf(-b / a) * b *
               (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
      }
      a *= 0.5;
      for (int i = 0; i < lg; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          double xs = a * (is * gx[i] + 1.0);
          xs = xs * xs;
          const double rs = std::sqrt(1.0 - xs);
          const double asr1 = -0.5 * (bs / xs + hk);
          if (asr1 > -100.0) {
            bvn += a * gw[i] * std::exp(asr1) *
                   (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                    (1.0 + c * xs * (1.0 + d * xs)));
          }
        }
      }
      bvn = -bvn / (2.0 * M_PI);
    }
    if (r > 0.0) {
      bvn += normal_cdf(-std::max(h, k));
    } else {
      bvn = -bvn;
      if (k > h) bvn += normal_cdf(k) - normal_cdf(h);
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

// Lower bivariate CDF P(X <= u1, Y <= u2) with correlation r.
inline double bvn_cdf(double u1, double u2, double r) { return bvn_upper(-u1, -u2, r); }

}  // namespace mnp
