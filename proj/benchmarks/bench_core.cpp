#include <benchmark/benchmark.h>

#include "uaav/dynamics.hpp"

namespace {

using namespace uaav;

PlanarState cruise_state() {
  PlanarState x;
  x.r_z = -1.0;
  x.theta = 0.2;
  x.v_x = 1.2;
  x.v_z = -0.05;
  x.omega_y = 0.3;
  return x;
}

void BM_DynamicsEval(benchmark::State& state) {
  const VehicleParams params;
  const PlanarState x = cruise_state();
  const ControlInput u{0.5, 3.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(dynamics::dynamics_f(x, u, HybridMode::Water, params));
  }
}
BENCHMARK(BM_DynamicsEval);

void BM_Linearize(benchmark::State& state) {
  const VehicleParams params;
  const PlanarState x = cruise_state();
  const ControlInput u{0.5, 3.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(dynamics::linearize(x, u, HybridMode::Water, params));
  }
}
BENCHMARK(BM_Linearize);

}  // namespace

BENCHMARK_MAIN();
