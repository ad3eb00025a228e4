/* Copyright 2026 The MLD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "mld/kernels.hpp"

namespace mld::kernels {
namespace {

const KernelTable* resolve() {
  if (deterministic_mode()) return &scalar::table();
  if (const char* forced = std::getenv("MLD_KERNELS")) {
    const std::string want = forced;
    if (want == "scalar") return &scalar::table();
    if (want == "avx2" && isa_supported(Isa::avx2)) return &avx2::table();
  }
  if (isa_supported(Isa::avx2)) return &avx2::table();
  return &scalar::table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> s{resolve()};
  return s;
}

void transpose(std::size_t rows, std::size_t cols, const double* src,
               std::size_t ld, std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * ld + c];
  }
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(MLD_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool deterministic_mode() {
  const char* v = std::getenv("MLD_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("kernel ISA not supported on this CPU: " +
                             std::string(isa_name(isa)));
  }
  slot().store(isa == Isa::avx2 ? &avx2::table() : &scalar::table());
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
  if (beta != 1.0) {
    for (std::size_t i = 0; i < m; ++i) {
      double* row = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) row[j] = beta == 0.0 ? 0.0 : beta * row[j];
    }
  }
  if (m == 0 || n == 0 || k == 0) return;
  const KernelTable& kt = active();

  std::vector<double> pa, pb;
  const double* aa = a;
  std::size_t la = lda;
  if (ta == Trans::yes) {
    transpose(k, m, a, lda, pa);
    aa = pa.data();
    la = k;
  }
  if (tb == Trans::yes) {
    // Long reductions go through dot products on the untransposed rows.
    if (k >= 64) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          c[i * ldc + j] += kt.dot(k, aa + i * la, b + j * ldb);
        }
      }
      return;
    }
    transpose(n, k, b, ldb, pb);
    kt.gemm_nn(m, n, k, aa, la, pb.data(), n, c, ldc);
    return;
  }
  kt.gemm_nn(m, n, k, aa, la, b, ldb, c, ldc);
}

double dot(std::size_t n, const double* x, const double* y) {
  return active().dot(n, x, y);
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}

}  // namespace mld::kernels
