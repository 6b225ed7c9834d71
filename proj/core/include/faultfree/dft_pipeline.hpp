#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "faultfree/analog_exec.hpp"
#include "faultfree/types.hpp"

namespace faultfree {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  Matrix pixels;  // height x width, values in [0, 1]

  static GrayImage from_matrix(const Matrix& m);
};

GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

// Smooth shading, edges and texture; deterministic per seed.
GrayImage make_test_image(std::size_t width, std::size_t height, std::uint64_t seed);

// W[a,b] = exp(-2 pi i a b / N)
CMatrix dft_matrix(std::size_t n);

// A complex matrix realized as separate real and imaginary engines.
class ComplexEngine {
 public:
  ComplexEngine(RealEngine real, RealEngine imag);
  static ComplexEngine ideal(const CMatrix& w);

  std::size_t size() const { return real_.rows(); }
  const RealEngine& real_engine() const { return real_; }
  const RealEngine& imag_engine() const { return imag_; }
  std::size_t device_count() const { return real_.device_count() + imag_.device_count(); }
  CMatrix effective() const;

  // Every row z of x becomes z * W, from four real products.
  CMatrix apply_rows(const CMatrix& x) const;

 private:
  RealEngine real_;
  RealEngine imag_;
};

// Y = [W (W x)^T]^T evaluated row-wise on the engine.
CMatrix dft2d_inmemory(const Matrix& tile, const ComplexEngine& engine);
// Exact inverse of the unnormalized forward transform.
CMatrix idft2d(const CMatrix& spectrum);

struct TiledSpectra {
  std::size_t tile = 0;
  std::size_t width = 0;   // original size, before padding
  std::size_t height = 0;
  std::size_t tiles_x = 0;
  std::size_t tiles_y = 0;
  std::vector<CMatrix> tiles;  // row-major tile order
};

// Pads by edge replication to tile multiples.
Matrix pad_to_tiles(const Matrix& pixels, std::size_t tile);
TiledSpectra forward_tiles(const GrayImage& image, const ComplexEngine& engine,
                           std::size_t threads = 1);
// Unclamped reconstruction, cropped to the original size.
Matrix reconstruct_pixels(const TiledSpectra& spectra);
GrayImage reconstruct_image(const TiledSpectra& spectra);

// 10 log10(sum ref^2 / sum (ref - test)^2); +inf when identical.
double snr_db(const Matrix& reference, const Matrix& test);
inline double snr_db(const GrayImage& reference, const GrayImage& test) {
  return snr_db(reference.pixels, test.pixels);
}

}  // namespace faultfree
