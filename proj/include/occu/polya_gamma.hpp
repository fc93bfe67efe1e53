#pragma once

#include "occu/rng.hpp"

namespace occu {

// Exact Polya-Gamma PG(1, c) draw via the alternating-series accept/reject
// scheme on the tilted Jacobi density. No approximation anywhere: every
// returned value is an exact sample from the target law.
double pg_draw1(double c, RngStream& rng);

// PG(b, c) for integer b >= 1 as a sum of independent PG(1, c) draws.
double pg_draw(int b, double c, RngStream& rng);

// Closed-form moments, stable as c -> 0.
double pg_mean(int b, double c);
double pg_var(int b, double c);

}  // namespace occu
