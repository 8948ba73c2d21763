// SPDX-License-Identifier: Apache-2.0

#include "rayserde/space_filling.hpp"

#include <array>

#include <fmt/format.h>

#include "rayserde/error.hpp"

namespace rayserde {

namespace {

using Axes = std::array<std::uint32_t, 3>;

void check_order(int order) {
    if (order < 1 || order > kMaxCurveOrder) {
        throw BoundsError(fmt::format("curve order {} outside [1, {}]", order, kMaxCurveOrder));
    }
}

Axes axes_of(const Cell& cell, int order) {
    const std::int64_t side = std::int64_t{1} << order;
    if (cell.z < 0 || cell.y < 0 || cell.x < 0 || cell.z >= side || cell.y >= side ||
        cell.x >= side) {
        throw BoundsError(fmt::format("cell ({},{},{}) outside 2^{} cube", cell.z, cell.y,
                                      cell.x, order));
    }
    return {static_cast<std::uint32_t>(cell.z), static_cast<std::uint32_t>(cell.y),
            static_cast<std::uint32_t>(cell.x)};
}

void check_key(std::uint64_t key, int order) {
    if ((key >> (3 * order)) != 0) {
        throw BoundsError(fmt::format("key {} outside [0, 2^{})", key, 3 * order));
    }
}

std::uint64_t interleave(const Axes& a, int order) {
    std::uint64_t key = 0;
    for (int bit = order - 1; bit >= 0; --bit) {
        for (int i = 0; i < 3; ++i) key = (key << 1) | ((a[i] >> bit) & 1u);
    }
    return key;
}

Axes deinterleave(std::uint64_t key, int order) {
    Axes a{0, 0, 0};
    for (int bit = 0; bit < order; ++bit) {
        for (int i = 2; i >= 0; --i) {
            a[i] |= static_cast<std::uint32_t>(key & 1u) << bit;
            key >>= 1;
        }
    }
    return a;
}

}  // namespace

std::uint64_t hilbert_key(const Cell& cell, int order) {
    check_order(order);
    Axes x = axes_of(cell, order);
    const std::uint32_t m = 1u << (order - 1);

    // Inverse undo
    for (std::uint32_t q = m; q > 1; q >>= 1) {
        const std::uint32_t p = q - 1;
        for (int i = 0; i < 3; ++i) {
            if (x[i] & q) {
                x[0] ^= p;
            } else {
                const std::uint32_t t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
    // Gray encode
    for (int i = 1; i < 3; ++i) x[i] ^= x[i - 1];
    std::uint32_t t = 0;
    for (std::uint32_t q = m; q > 1; q >>= 1) {
        if (x[2] & q) t ^= q - 1;
    }
    for (auto& v : x) v ^= t;
    return interleave(x, order);
}

Cell hilbert_cell(std::uint64_t key, int order) {
    check_order(order);
    check_key(key, order);
    Axes x = deinterleave(key, order);
    const std::uint64_t n = std::uint64_t{2} << (order - 1);

    // Gray decode
    std::uint32_t t = x[2] >> 1;
    for (int i = 2; i > 0; --i) x[i] ^= x[i - 1];
    x[0] ^= t;
    // Undo excess work
    for (std::uint64_t q64 = 2; q64 != n; q64 <<= 1) {
        const auto q = static_cast<std::uint32_t>(q64);
        const std::uint32_t p = q - 1;
        for (int i = 2; i >= 0; --i) {
            if (x[i] & q) {
                x[0] ^= p;
            } else {
                t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
    return {static_cast<std::int32_t>(x[0]), static_cast<std::int32_t>(x[1]),
            static_cast<std::int32_t>(x[2])};
}

std::uint64_t morton_key(const Cell& cell, int order) {
    check_order(order);
    return interleave(axes_of(cell, order), order);
}

Cell morton_cell(std::uint64_t key, int order) {
    check_order(order);
    check_key(key, order);
    const Axes a = deinterleave(key, order);
    return {static_cast<std::int32_t>(a[0]), static_cast<std::int32_t>(a[1]),
            static_cast<std::int32_t>(a[2])};
}

int min_curve_order(std::int32_t extent) {
    int order = 1;
    while (order < kMaxCurveOrder && (std::int64_t{1} << order) < extent) ++order;
    return order;
}

}  // namespace rayserde
