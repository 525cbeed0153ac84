#pragma once

#include <cstdint>

#include "idmm/threadpool.hpp"

namespace idmm {

// Matrix kernels used by the tape and the head. All variants parallelize
// over rows of the destination, and every destination element is produced
// by one thread with a fixed inner-loop order, so results are bit-identical
// for any thread count.

// C = A*B (+C if accumulate). A: [m x k], B: [k x n], C: [m x n].
template <class T>
void gemm_nn(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n,
             bool accumulate) {
    parallel_for(0, m, [=](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            const T* __restrict a = A + i * k;
            T* __restrict c = C + i * n;
            if (!accumulate)
                for (std::int64_t j = 0; j < n; ++j) c[j] = T(0);
            for (std::int64_t p = 0; p < k; ++p) {
                const T ap = a[p];
                const T* __restrict b = B + p * n;
                for (std::int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    });
}

// Lane-split dot product. The lane accumulators vectorize without
// reassociation licenses and their combination order is fixed.
template <class T, int L>
inline T dot_lanes(const T* __restrict a, const T* __restrict b, std::int64_t k) {
    T acc[L] = {};
    std::int64_t p = 0;
    for (; p + L <= k; p += L)
        for (int l = 0; l < L; ++l) acc[l] += a[p + l] * b[p + l];
    T tail = T(0);
    for (; p < k; ++p) tail += a[p] * b[p];
    T s = T(0);
    for (int l = 0; l < L; ++l) s += acc[l];
    return s + tail;
}

// C = A*B^T (+C). A: [m x k], B: [n x k], C: [m x n].
template <class T>
void gemm_nt(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n,
             bool accumulate) {
    parallel_for(0, m, [=](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            const T* a = A + i * k;
            T* c = C + i * n;
            for (std::int64_t j = 0; j < n; ++j) {
                const T d = dot_lanes<T, 16>(a, B + j * k, k);
                c[j] = accumulate ? c[j] + d : d;
            }
        }
    });
}

// C = A^T*B (+C). A: [m x k], B: [m x n], C: [k x n].
template <class T>
void gemm_tn(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n,
             bool accumulate) {
    parallel_for(0, k, [=](std::int64_t p0, std::int64_t p1) {
        for (std::int64_t p = p0; p < p1; ++p) {
            T* __restrict c = C + p * n;
            if (!accumulate)
                for (std::int64_t j = 0; j < n; ++j) c[j] = T(0);
            for (std::int64_t i = 0; i < m; ++i) {
                const T ap = A[i * k + p];
                const T* __restrict b = B + i * n;
                for (std::int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    });
}

} // namespace idmm
