// Finite-difference checks for every differentiable op, in float32 and in
// the float64 test mode.

#include "doctest.h"
#include "gradient_suites.hpp"
#include "support.hpp"

TEST_CASE("op gradients agree with central differences (float32)") {
  uda::testing::op_gradients<float>(uda::testing::GradCheck<float>{});
}
TEST_CASE("op gradients agree with central differences (float64)") {
  uda::testing::op_gradients<double>(uda::testing::GradCheck<double>{});
}
