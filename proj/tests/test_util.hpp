#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "cbert/autograd.hpp"
#include "cbert/ops.hpp"
#include "cbert/rng.hpp"

namespace cbert::test {

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

template <typename T = double>
Var<T> random_param(const Shape& shape, Rng& rng, double scale = 1.0) {
  return Var<T>::parameter(random_tensor<T>(shape, rng, scale));
}

// Fixed random weights turning a matrix into a scalar, so that every output
// element receives a distinct upstream gradient.
inline Var<double> project_to_scalar(const Var<double>& x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(x.shape());
  for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(x, Var<double>::constant(std::move(w))));
}

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cbert-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cbert::test
