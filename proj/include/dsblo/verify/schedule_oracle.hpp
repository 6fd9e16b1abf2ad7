#pragma once

// Independent recomputation of the theory-mode schedule in 256-bit MPFR
// arithmetic, each output rounded to the nearest double once. Uses
// ln(1/beta) directly where the library uses -log1p(-shrink).

#include <mpfr.h>

#include <cmath>

namespace dsblo::verify {

struct MpfrSchedule {
  double beta, gamma1, gamma2, delta_y;
  long K;
};

inline MpfrSchedule mpfr_schedule(double eps_d, double dv_d, double lf_d, double dbar_d, double lfdelta_d) {
  constexpr mpfr_prec_t prec = 256;
  mpfr_t eps, dv, lf, dbar, lin, quad, tmp, shrink, beta, k, g1, g2, dy, cand;
  for (mpfr_ptr v : {eps, dv, lf, dbar, lin, quad, tmp, shrink, beta, k, g1, g2, dy, cand})
    mpfr_init2(v, prec);
  mpfr_set_d(eps, eps_d, MPFR_RNDN);
  mpfr_set_d(dv, dv_d, MPFR_RNDN);
  mpfr_set_d(lf, lf_d, MPFR_RNDN);
  mpfr_set_d(dbar, dbar_d, MPFR_RNDN);

  mpfr_mul_ui(lin, lf, 2, MPFR_RNDN);
  mpfr_add(lin, lin, dv, MPFR_RNDN);  // dv + 2 L
  mpfr_sqr(quad, lf, MPFR_RNDN);
  mpfr_mul_ui(quad, quad, 2, MPFR_RNDN);
  mpfr_sqr(tmp, dv, MPFR_RNDN);
  mpfr_add(quad, quad, tmp, MPFR_RNDN);  // dv^2 + 2 L^2

  mpfr_sqr(shrink, eps, MPFR_RNDN);
  mpfr_div(shrink, shrink, quad, MPFR_RNDN);
  mpfr_div_ui(shrink, shrink, 960, MPFR_RNDN);
  mpfr_ui_sub(beta, 1, shrink, MPFR_RNDN);

  // K = ceil( ln(32 lin / eps) / ln(1 / beta) )
  mpfr_mul_ui(k, lin, 32, MPFR_RNDN);
  mpfr_div(k, k, eps, MPFR_RNDN);
  mpfr_log(k, k, MPFR_RNDN);
  mpfr_ui_div(tmp, 1, beta, MPFR_RNDN);
  mpfr_log(tmp, tmp, MPFR_RNDN);
  mpfr_div(k, k, tmp, MPFR_RNDN);
  mpfr_ceil(k, k);

  mpfr_div(g1, k, dbar, MPFR_RNDN);
  mpfr_mul(g2, g1, lin, MPFR_RNDN);
  mpfr_mul_ui(g2, g2, 4, MPFR_RNDN);

  mpfr_sqr(dy, eps, MPFR_RNDN);
  mpfr_div(dy, dy, lin, MPFR_RNDN);
  mpfr_div_ui(dy, dy, 1280, MPFR_RNDN);
  mpfr_mul_ui(cand, eps, 2, MPFR_RNDN);
  mpfr_div_ui(cand, cand, 3, MPFR_RNDN);
  mpfr_min(dy, dy, cand, MPFR_RNDN);
  mpfr_min(dy, dy, lf, MPFR_RNDN);
  if (std::isfinite(lfdelta_d)) {
    mpfr_set_d(cand, lfdelta_d, MPFR_RNDN);
    mpfr_min(dy, dy, cand, MPFR_RNDN);
  }

  MpfrSchedule out{mpfr_get_d(beta, MPFR_RNDN), mpfr_get_d(g1, MPFR_RNDN),
                   mpfr_get_d(g2, MPFR_RNDN), mpfr_get_d(dy, MPFR_RNDN),
                   mpfr_get_si(k, MPFR_RNDN)};
  for (mpfr_ptr v : {eps, dv, lf, dbar, lin, quad, tmp, shrink, beta, k, g1, g2, dy, cand})
    mpfr_clear(v);
  return out;
}

}  // namespace dsblo::verify
