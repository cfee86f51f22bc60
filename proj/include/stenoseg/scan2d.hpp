#pragma once

// SS2D: unfold a 2D feature map into four directional token sequences
// (cross scan), run a selective scan per direction, and inverse-permute and
// sum the results back onto the grid (cross merge).

#include <array>

#include "stenoseg/ssm.hpp"

namespace stenoseg {

enum class ScanDirection { RowMajor, ColMajor, RowMajorReversed, ColMajorReversed };

inline constexpr std::array<ScanDirection, 4> kScanDirections{
    ScanDirection::RowMajor, ScanDirection::ColMajor, ScanDirection::RowMajorReversed,
    ScanDirection::ColMajorReversed};

// index[i] = row-major grid position of the i-th token of the direction's
// sequence. Each table is a bijection on [0, H·W).
inline std::vector<std::size_t> direction_index(ScanDirection dir, std::size_t H, std::size_t W) {
    const std::size_t L = H * W;
    std::vector<std::size_t> idx(L);
    switch (dir) {
        case ScanDirection::RowMajor:
            for (std::size_t i = 0; i < L; ++i) idx[i] = i;
            break;
        case ScanDirection::ColMajor:
            for (std::size_t c = 0; c < W; ++c)
                for (std::size_t r = 0; r < H; ++r) idx[c * H + r] = r * W + c;
            break;
        case ScanDirection::RowMajorReversed:
            for (std::size_t i = 0; i < L; ++i) idx[i] = L - 1 - i;
            break;
        case ScanDirection::ColMajorReversed:
            for (std::size_t c = 0; c < W; ++c)
                for (std::size_t r = 0; r < H; ++r) idx[c * H + r] = (H - 1 - r) * W + (W - 1 - c);
            break;
    }
    return idx;
}

inline std::vector<std::size_t> invert_index(const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> inv(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) inv[idx[i]] = i;
    return inv;
}

// [B,C,H,W] -> row-major token sequence [B,H·W,C].
template <class T>
inline Tensor<T> grid_to_tokens(const Tensor<T>& g) {
    if (g.rank() != 4) throw ShapeError("grid_to_tokens expects [B,C,H,W]");
    const std::size_t B = g.extent(0), C = g.extent(1), H = g.extent(2), W = g.extent(3);
    return reshape(permute(g, {0, 2, 3, 1}), Shape{B, H * W, C});
}

template <class T>
inline Tensor<T> tokens_to_grid(const Tensor<T>& seq, std::size_t H, std::size_t W) {
    if (seq.rank() != 3 || seq.extent(1) != H * W)
        throw ShapeError("tokens_to_grid sequence length mismatch");
    const std::size_t B = seq.extent(0), C = seq.extent(2);
    return permute(reshape(seq, Shape{B, H, W, C}), {0, 3, 1, 2});
}

template <class T>
inline std::array<Tensor<T>, 4> cross_scan(const Tensor<T>& g) {
    const std::size_t H = g.extent(2), W = g.extent(3);
    auto tokens = grid_to_tokens(g);
    std::array<Tensor<T>, 4> out;
    for (std::size_t k = 0; k < 4; ++k)
        out[k] = index_select_l(tokens, direction_index(kScanDirections[k], H, W));
    return out;
}

// Inverse-permute each sequence to grid layout and sum the four grids.
template <class T>
inline Tensor<T> cross_merge(const std::array<Tensor<T>, 4>& seqs, std::size_t H, std::size_t W) {
    const Shape& s0 = seqs[0].shape();
    for (const auto& s : seqs)
        if (s.shape() != s0) throw ShapeError("cross_merge sequence shape mismatch");
    if (s0.size() != 3 || s0[1] != H * W) throw ShapeError("cross_merge length mismatch");
    Tensor<T> acc;
    for (std::size_t k = 0; k < 4; ++k) {
        auto back =
            index_select_l(seqs[k], invert_index(direction_index(kScanDirections[k], H, W)));
        acc = k == 0 ? back : add(acc, back);
    }
    return tokens_to_grid(acc, H, W);
}

// One SSMParams per direction; channels of each must equal C of the grid.
template <class T>
inline Tensor<T> ss2d(const Tensor<T>& g, const std::array<SSMParams<T>, 4>& params) {
    const std::size_t C = g.extent(1), H = g.extent(2), W = g.extent(3);
    for (const auto& p : params)
        if (p.channels() != C) throw ShapeError("ss2d params channel mismatch");
    auto seqs = cross_scan(g);
    std::array<Tensor<T>, 4> ys;
    for (std::size_t k = 0; k < 4; ++k)
        ys[k] = selective_scan_sequential(seqs[k], params[k]);
    return cross_merge(ys, H, W);
}

}  // namespace stenoseg
