#pragma once

#include <string>
#include <utility>
#include <vector>

// Reduced configurations of every experiment, small enough to run twice in a
// test.
inline std::vector<std::pair<std::string, std::string>> tiny_experiment_configs() {
  return {
      {"fig2-sweep",
       R"({"target": "random:8x8", "rates": [0.0, 0.1], "ks": [4, 8], "trials": 2,
           "optimizer": {"epochs": 200}})"},
      {"fig3-precision",
       R"({"target": "random:8x8", "k": 6, "runs": 2, "inputs": 16,
           "optimizer": {"epochs": 200}})"},
      {"fig4-dft-image",
       R"({"width": 24, "height": 20, "tile": 8, "k": 8, "runs": 2, "optimizer": {"epochs": 200}})"},
      {"fig5-baseband",
       R"({"n_bits": 4000, "runs": 1, "constellation_points": 64,
           "chip": {"dft_optimizer": {"epochs": 200}, "mmse_optimizer": {"epochs": 100},
                    "mmse_restarts": 2}})"},
      {"table1-accounting", "{}"},
  };
}
