#pragma once

// Dense matmul used by the conv / linear / attention kernels. Eigen does the
// actual number crunching; everything above this layer (layouts, im2col,
// autodiff) is ours.

#include <Eigen/Core>

namespace sliceterp {

// C[m,n] (+)= A[m,k] * B[k,n], all row-major contiguous.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a, m, k);
    Eigen::Map<const Mat> mb(b, k, n);
    Eigen::Map<Mat> mc(c, m, n);
    if (accumulate)
        mc.noalias() += ma * mb;
    else
        mc.noalias() = ma * mb;
}

// C[m,n] (+)= A^T[m,k] * B[k,n] where A is stored as [k,m] row-major.
template <typename T>
void gemm_at(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a, k, m);
    Eigen::Map<const Mat> mb(b, k, n);
    Eigen::Map<Mat> mc(c, m, n);
    if (accumulate)
        mc.noalias() += ma.transpose() * mb;
    else
        mc.noalias() = ma.transpose() * mb;
}

// C[m,n] (+)= A[m,k] * B^T[k,n] where B is stored as [n,k] row-major.
template <typename T>
void gemm_bt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a, m, k);
    Eigen::Map<const Mat> mb(b, n, k);
    Eigen::Map<Mat> mc(c, m, n);
    if (accumulate)
        mc.noalias() += ma * mb.transpose();
    else
        mc.noalias() = ma * mb.transpose();
}

}  // namespace sliceterp
