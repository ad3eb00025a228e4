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

// Dense float64 kernels used by the convolution and fully connected layers.
//
// Every kernel has a portable scalar reference implementation and an
// AVX2+FMA variant. The variant is chosen once at startup from CPUID and can
// be overridden:
//
//   MLD_KERNELS=scalar|avx2   force a specific table
//   MLD_DETERMINISTIC=1       force the scalar reference table, so results are
//                             bit-identical on every x86-64/ARM host
//
// All matrices are row-major. Kernels are single-threaded and their
// reduction order depends only on the problem size, so a fixed table gives
// bitwise-reproducible results.

#pragma once

#include <cstddef>
#include <string_view>

namespace mld::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Raw kernel entry points. `gemm_nn` computes C += A * B with
/// A: m x k (lda), B: k x n (ldb), C: m x n (ldc).
struct KernelTable {
  Isa isa;
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc);
  double (*dot)(std::size_t n, const double* x, const double* y);
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
};

namespace scalar {
const KernelTable& table();
}
namespace avx2 {
const KernelTable& table();
}

bool isa_supported(Isa isa);

/// Table in use. Resolved on first call.
const KernelTable& active();

/// Overrides the active table (tests, benchmarks). Throws std::runtime_error
/// when the CPU lacks the requested ISA.
void set_active(Isa isa);

/// True when MLD_DETERMINISTIC=1 is set in the environment.
bool deterministic_mode();

enum class Trans { no, yes };

/// C = beta * C + op(A) * op(B), op(A): m x k, op(B): k x n.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);

double dot(std::size_t n, const double* x, const double* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);

}  // namespace mld::kernels
