#include "faultfree/dft_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <thread>

#include "faultfree/rng.hpp"

namespace faultfree {

GrayImage GrayImage::from_matrix(const Matrix& m) {
  return {static_cast<std::size_t>(m.cols()), static_cast<std::size_t>(m.rows()),
          m.cwiseMax(0.0).cwiseMin(1.0)};
}

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("pgm: cannot open " + path);
  if (pgm_token(in) != "P5") throw ConfigError("pgm: " + path + " is not binary P5");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(pgm_token(in));
    h = std::stoul(pgm_token(in));
    maxval = std::stoul(pgm_token(in));
  } catch (const std::exception&) {
    throw ConfigError("pgm: malformed header in " + path);
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255)
    throw ConfigError("pgm: only 8-bit images are supported");
  std::vector<unsigned char> buf(w * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw ConfigError("pgm: truncated pixel data in " + path);
  GrayImage img{w, h, Matrix(h, w)};
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      img.pixels(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          buf[r * w + c] / static_cast<double>(maxval);
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("pgm: cannot write " + path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> buf(image.width * image.height);
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < image.width; ++c) {
      const double v = std::clamp(
          image.pixels(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), 0.0, 1.0);
      buf[r * image.width + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

GrayImage make_test_image(std::size_t width, std::size_t height, std::uint64_t seed) {
  Rng rng(seed);
  const double pi = std::numbers::pi;
  const double fx = 1.0 + 2.0 * rng.uniform(), fy = 1.0 + 2.0 * rng.uniform();
  const double cx = 0.3 + 0.4 * rng.uniform(), cy = 0.3 + 0.4 * rng.uniform();
  const double radius = 0.15 + 0.1 * rng.uniform();
  Matrix p(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double x = static_cast<double>(c) / static_cast<double>(width);
      const double y = static_cast<double>(r) / static_cast<double>(height);
      double v = 0.45 + 0.2 * std::sin(2 * pi * fx * x) * std::cos(2 * pi * fy * y);
      v += 0.15 * (x - 0.5);
      if (std::hypot(x - cx, y - cy) < radius) v += 0.25;
      if (x > 0.62 && x < 0.9 && y > 0.1 && y < 0.35) v -= 0.2;
      v += 0.08 * std::sin(2 * pi * 11 * (x + 0.5 * y));
      v += 0.03 * (rng.uniform() - 0.5);
      p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::clamp(v, 0.0, 1.0);
    }
  }
  // Quantize to 8 bits so the generated image round-trips through PGM.
  p = (p * 255.0).array().round().matrix() / 255.0;
  return {width, height, p};
}

CMatrix dft_matrix(std::size_t n) {
  if (n < 1) throw ConfigError("dft_matrix: N must be >= 1");
  CMatrix w(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      // Reduce the exponent first to keep the phase exact for large a*b.
      const double phase = -2.0 * std::numbers::pi * static_cast<double>((a * b) % n) /
                           static_cast<double>(n);
      w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = std::polar(1.0, phase);
    }
  return w;
}

ComplexEngine::ComplexEngine(RealEngine real, RealEngine imag)
    : real_(std::move(real)), imag_(std::move(imag)) {
  if (real_.rows() != imag_.rows() || real_.cols() != imag_.cols())
    throw ConfigError("complex engine: real and imaginary engines differ in size");
}

ComplexEngine ComplexEngine::ideal(const CMatrix& w) {
  return ComplexEngine(RealEngine::ideal(w.real()), RealEngine::ideal(w.imag()));
}

CMatrix ComplexEngine::effective() const {
  CMatrix w(real_.rows(), real_.cols());
  w.real() = real_.effective();
  w.imag() = imag_.effective();
  return w;
}

CMatrix ComplexEngine::apply_rows(const CMatrix& x) const {
  const Matrix xr = x.real(), xi = x.imag();
  const Matrix rr = real_.apply_rows(xr), ii = imag_.apply_rows(xi);
  const Matrix ri = imag_.apply_rows(xr), ir = real_.apply_rows(xi);
  CMatrix y(x.rows(), static_cast<Eigen::Index>(real_.cols()));
  y.real() = rr - ii;
  y.imag() = ri + ir;
  return y;
}

CMatrix dft2d_inmemory(const Matrix& tile, const ComplexEngine& engine) {
  if (static_cast<std::size_t>(tile.rows()) != engine.size() ||
      static_cast<std::size_t>(tile.cols()) != engine.size())
    throw ConfigError("dft2d: tile size differs from engine size");
  const CMatrix rows = engine.apply_rows(tile.cast<Complex>());
  const CMatrix cols = engine.apply_rows(rows.transpose());
  return cols.transpose();
}

CMatrix idft2d(const CMatrix& spectrum) {
  const auto n = static_cast<std::size_t>(spectrum.rows());
  if (spectrum.cols() != spectrum.rows()) throw ConfigError("idft2d: spectrum must be square");
  const CMatrix wc = dft_matrix(n).conjugate();
  return wc * spectrum * wc / static_cast<double>(n * n);
}

Matrix pad_to_tiles(const Matrix& pixels, std::size_t tile) {
  if (tile < 1) throw ConfigError("tile size must be >= 1");
  const auto h = static_cast<std::size_t>(pixels.rows());
  const auto w = static_cast<std::size_t>(pixels.cols());
  if (h == 0 || w == 0) throw ConfigError("image is empty");
  const std::size_t hp = (h + tile - 1) / tile * tile;
  const std::size_t wp = (w + tile - 1) / tile * tile;
  Matrix out(hp, wp);
  for (std::size_t r = 0; r < hp; ++r)
    for (std::size_t c = 0; c < wp; ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          pixels(static_cast<Eigen::Index>(std::min(r, h - 1)),
                 static_cast<Eigen::Index>(std::min(c, w - 1)));
  return out;
}

TiledSpectra forward_tiles(const GrayImage& image, const ComplexEngine& engine,
                           std::size_t threads) {
  const std::size_t n = engine.size();
  const Matrix padded = pad_to_tiles(image.pixels, n);
  TiledSpectra s;
  s.tile = n;
  s.width = image.width;
  s.height = image.height;
  s.tiles_y = static_cast<std::size_t>(padded.rows()) / n;
  s.tiles_x = static_cast<std::size_t>(padded.cols()) / n;
  s.tiles.resize(s.tiles_x * s.tiles_y);
  const auto ni = static_cast<Eigen::Index>(n);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t t = begin; t < s.tiles.size(); t += step) {
      const auto ty = static_cast<Eigen::Index>(t / s.tiles_x);
      const auto tx = static_cast<Eigen::Index>(t % s.tiles_x);
      s.tiles[t] = dft2d_inmemory(padded.block(ty * ni, tx * ni, ni, ni), engine);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, s.tiles.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work, i, threads);
    for (auto& th : pool) th.join();
  }
  return s;
}

Matrix reconstruct_pixels(const TiledSpectra& spectra) {
  const auto n = static_cast<Eigen::Index>(spectra.tile);
  Matrix full(static_cast<Eigen::Index>(spectra.tiles_y) * n,
              static_cast<Eigen::Index>(spectra.tiles_x) * n);
  for (std::size_t t = 0; t < spectra.tiles.size(); ++t) {
    const auto ty = static_cast<Eigen::Index>(t / spectra.tiles_x);
    const auto tx = static_cast<Eigen::Index>(t % spectra.tiles_x);
    full.block(ty * n, tx * n, n, n) = idft2d(spectra.tiles[t]).real();
  }
  return full.topLeftCorner(static_cast<Eigen::Index>(spectra.height),
                            static_cast<Eigen::Index>(spectra.width));
}

GrayImage reconstruct_image(const TiledSpectra& spectra) {
  return GrayImage::from_matrix(reconstruct_pixels(spectra));
}

double snr_db(const Matrix& reference, const Matrix& test) {
  if (reference.rows() != test.rows() || reference.cols() != test.cols())
    throw ConfigError("snr_db: image sizes differ");
  const double err = (reference - test).squaredNorm();
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(reference.squaredNorm() / err);
}

}  // namespace faultfree
