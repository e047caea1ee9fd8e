#pragma once

// Frozen hand trace of the PSNR crude-view detector over a scripted
// 50-value stream with the linear gamma schedule. Values were computed
// independently (spreadsheet-style, float32 per step) and are stored as
// hex floats so the comparison is bit-exact.

#include <array>

namespace nvs::testing {

inline constexpr int kEmaFixtureLen = 50;

inline constexpr std::array<float, kEmaFixtureLen> kEmaFixtureStream = {
    0x1.5000000000000p+4f,
    0x1.6800000000000p+4f,
    0x1.71999a0000000p+4f,
    0x1.8000000000000p+4f,
    0x1.89999a0000000p+4f,
    0x1.91999a0000000p+4f,
    0x1.8333340000000p+4f,
    0x1.9ccccc0000000p+4f,
    0x1.a4cccc0000000p+4f,
    0x1.a000000000000p+4f,
    0x1.3800000000000p+4f,
    0x1.ae66660000000p+4f,
    0x1.b333340000000p+4f,
    0x1.bccccc0000000p+4f,
    0x1.41999a0000000p+4f,
    0x1.c4cccc0000000p+4f,
    0x1.c1999a0000000p+4f,
    0x1.ce66660000000p+4f,
    0x1.d333340000000p+4f,
    0x1.6666660000000p+4f,
    0x1.d9999a0000000p+4f,
    0x1.d666660000000p+4f,
    0x1.e1999a0000000p+4f,
    0x1.e4cccc0000000p+4f,
    0x1.7000000000000p+4f,
    0x1.eccccc0000000p+4f,
    0x1.f000000000000p+4f,
    0x1.e9999a0000000p+4f,
    0x1.f666660000000p+4f,
    0x1.f333340000000p+4f,
    0x1.8800000000000p+4f,
    0x1.fccccc0000000p+4f,
    0x1.0000000000000p+5f,
    0x1.f9999a0000000p+4f,
    0x1.0266660000000p+5f,
    0x1.9333340000000p+4f,
    0x1.04cccc0000000p+5f,
    0x1.0333340000000p+5f,
    0x1.0733340000000p+5f,
    0x1.08cccc0000000p+5f,
    0x1.a000000000000p+4f,
    0x1.0a66660000000p+5f,
    0x1.0800000000000p+5f,
    0x1.0ccccc0000000p+5f,
    0x1.0e66660000000p+5f,
    0x1.b1999a0000000p+4f,
    0x1.1000000000000p+5f,
    0x1.0d999a0000000p+5f,
    0x1.11999a0000000p+5f,
    0x1.1333340000000p+5f,
};

inline constexpr std::array<float, kEmaFixtureLen> kEmaFixtureTrace = {
    0x1.5000000000000p+4f,
    0x1.59999a0000000p+4f,
    0x1.6333340000000p+4f,
    0x1.6eb8540000000p+4f,
    0x1.7978d80000000p+4f,
    0x1.831f8c0000000p+4f,
    0x1.8327680000000p+4f,
    0x1.8d69900000000p+4f,
    0x1.96c4740000000p+4f,
    0x1.9a75e00000000p+4f,
    0x1.7313880000000p+4f,
    0x1.8ace480000000p+4f,
    0x1.9af6a80000000p+4f,
    0x1.a87f840000000p+4f,
    0x1.7f56c00000000p+4f,
    0x1.9b1f920000000p+4f,
    0x1.aa83960000000p+4f,
    0x1.b8de500000000p+4f,
    0x1.c366ac0000000p+4f,
    0x1.9e335c0000000p+4f,
    0x1.b5f5dc0000000p+4f,
    0x1.c2efae0000000p+4f,
    0x1.cf33a80000000p+4f,
    0x1.d7d7500000000p+4f,
    0x1.ae4dfc0000000p+4f,
    0x1.c74d840000000p+4f,
    0x1.d794ec0000000p+4f,
    0x1.deca000000000p+4f,
    0x1.e83bc40000000p+4f,
    0x1.ec9ec00000000p+4f,
    0x1.c45f400000000p+4f,
    0x1.daf1780000000p+4f,
    0x1.e9c4140000000p+4f,
    0x1.f0197c0000000p+4f,
    0x1.f861360000000p+4f,
    0x1.cfe8680000000p+4f,
    0x1.e6fc180000000p+4f,
    0x1.f38d060000000p+4f,
    0x1.fe4a600000000p+4f,
    0x1.0301d40000000p+5f,
    0x1.dd35680000000p+4f,
    0x1.f371f80000000p+4f,
    0x1.feddfc0000000p+4f,
    0x1.04c7b80000000p+5f,
    0x1.08a0ca0000000p+5f,
    0x1.eafe640000000p+4f,
    0x1.0019200000000p+5f,
    0x1.057fb80000000p+5f,
    0x1.0a56e00000000p+5f,
    0x1.0de2360000000p+5f,
};

inline constexpr std::array<bool, kEmaFixtureLen> kEmaFixtureFlags = {
    false,
    false,
    false,
    false,
    false,
    false,
    true,
    false,
    false,
    true,
    true,
    false,
    false,
    false,
    true,
    false,
    false,
    false,
    false,
    true,
    false,
    false,
    false,
    false,
    true,
    false,
    false,
    false,
    false,
    true,
    true,
    false,
    false,
    false,
    false,
    true,
    false,
    false,
    false,
    false,
    true,
    false,
    false,
    false,
    false,
    true,
    false,
    false,
    false,
    false,
};

}  // namespace nvs::testing
