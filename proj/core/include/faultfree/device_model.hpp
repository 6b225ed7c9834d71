#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "faultfree/types.hpp"

namespace faultfree {

// Physical parameters of one crossbar tile. Conductances are in µS.
struct CrossbarSpec {
  std::size_t rows = 64;
  std::size_t cols = 64;
  double g_max = 150.0;
  double write_tolerance = 15.0;
  double write_sigma = 5.0;

  void validate() const;
  CrossbarSpec with_shape(std::size_t r, std::size_t c) const;

  std::string to_json() const;
  static CrossbarSpec from_json(std::string_view text);
};

enum class FaultKind : std::uint8_t { kHealthy = 0, kStuckOff = 1, kStuckOn = 2 };

const char* to_string(FaultKind kind);

// Dense per-cell fault map; off and on sets are disjoint by construction.
class FaultMask {
 public:
  FaultMask() = default;
  FaultMask(std::size_t rows, std::size_t cols);

  static FaultMask none(std::size_t rows, std::size_t cols) { return FaultMask(rows, cols); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  FaultKind at(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c]; }
  bool healthy(std::size_t r, std::size_t c) const { return at(r, c) == FaultKind::kHealthy; }
  void set(std::size_t r, std::size_t c, FaultKind kind);

  std::size_t off_count() const;
  std::size_t on_count() const;
  bool empty() const { return off_count() + on_count() == 0; }

  // 1 on healthy cells, 0 on faulty ones.
  Matrix healthy_matrix() const;
  // 0 on healthy and OFF cells, on_value on ON cells.
  Matrix pinned_values(double on_value) const;

  // CSV with header "row,col,kind", one line per faulty cell in row-major order.
  void write_csv(std::ostream& out) const;
  static FaultMask read_csv(std::istream& in, std::size_t rows, std::size_t cols);

  bool operator==(const FaultMask& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<FaultKind> cells_;
};

// Number of cells selected for a fault class at a given rate.
std::size_t fault_cell_count(double rate, std::size_t cells);

FaultMask generate_fault_mask(const CrossbarSpec& spec, double r_off, double r_on,
                              std::uint64_t seed);

// Device conductances of one tile, always within [0, g_max].
class ConductanceMatrix {
 public:
  ConductanceMatrix() = default;
  ConductanceMatrix(Matrix values, double g_max);

  const Matrix& values() const { return values_; }
  double g_max() const { return g_max_; }
  std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values_.cols()); }

 private:
  Matrix values_;
  double g_max_ = 0.0;
};

// Write-and-verify programming. Healthy cells land within write_tolerance of
// the target; faulty cells keep their stuck value.
ConductanceMatrix program(const Matrix& target, const FaultMask& mask, const CrossbarSpec& spec,
                          std::uint64_t seed);

struct ReadOptions {
  double scale = 1.0;
  double noise_sigma = 0.0;  // additive read noise in µS, off by default
  std::uint64_t seed = 0;
};

Matrix read(const ConductanceMatrix& matrix, const ReadOptions& options = {});

}  // namespace faultfree
