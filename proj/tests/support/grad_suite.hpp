#pragma once

// Randomized finite-difference checks for every tape op, shared by the unit
// tests and the acceptance binary.

#include "oracles.hpp"

#include <functional>
#include <string>
#include <vector>

namespace psfv::testing {

struct OpGradCase
{
    std::string name;
    /// One randomized check for the given seed; returns the max relative error.
    std::function<double(std::uint64_t)> run;
};

inline std::vector<OpGradCase> op_grad_cases()
{
    using nn::Shape;
    using nn::Tape;
    using nn::Var;
    using VarList = std::vector<Var<double>>;

    std::vector<OpGradCase> cases;

    for (auto [sw, sh] : {std::pair{1, 1}, std::pair{1, 2}, std::pair{2, 1}, std::pair{2, 2}}) {
        const nn::Stride stride{sw, sh};
        cases.push_back({"conv2d stride (" + std::to_string(sw) + "," + std::to_string(sh) + ")",
                         [stride](std::uint64_t seed) {
                             std::mt19937_64 rng(seed);
                             std::uniform_int_distribution<int> ch(1, 3), ext(1, 6);
                             const int C = ch(rng), O = ch(rng), H = ext(rng), W = ext(rng);
                             return gradient_check(
                                 {random_tensor({C, H, W}, rng), random_tensor({O, C, 3, 3}, rng), random_tensor({O}, rng)},
                                 [&](Tape<double>&, VarList& v) {
                                     return probe_loss(nn::conv2d(v[0], v[1], v[2], stride), seed);
                                 });
                         }});
    }

    cases.push_back({"avgpool2d", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<int> ch(1, 3), ext(1, 4);
                         const int C = ch(rng), H = 2 * ext(rng), W = 2 * ext(rng);
                         return gradient_check({random_tensor({C, H, W}, rng)}, [&](Tape<double>&, VarList& v) {
                             return probe_loss(nn::avgpool2d(v[0]), seed);
                         });
                     }});

    cases.push_back({"linear", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<int> ext(1, 8);
                         const int n = ext(rng), m = ext(rng);
                         return gradient_check(
                             {random_tensor({n}, rng), random_tensor({m, n}, rng), random_tensor({m}, rng)},
                             [&](Tape<double>&, VarList& v) { return probe_loss(nn::linear(v[0], v[1], v[2]), seed); });
                     }});

    // Two chained steps so the c output feeds a later h.
    cases.push_back({"lstm_cell", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<int> ext(1, 5);
                         const int d = ext(rng), k = ext(rng);
                         return gradient_check({random_tensor({d}, rng), random_tensor({d}, rng), random_tensor({k}, rng),
                                                random_tensor({k}, rng), random_tensor({4 * k, d + k}, rng),
                                                random_tensor({4 * k}, rng)},
                                               [&](Tape<double>&, VarList& v) {
                                                   auto s1 = nn::lstm_cell(v[0], v[2], v[3], v[4], v[5]);
                                                   auto s2 = nn::lstm_cell(v[1], s1.h, s1.c, v[4], v[5]);
                                                   return probe_loss(nn::hadamard(s2.h, s2.c), seed);
                                               });
                     }});

    cases.push_back({"sigmoid", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<int> ext(1, 12);
                         return gradient_check({random_tensor({ext(rng)}, rng, -4.0, 4.0)},
                                               [&](Tape<double>&, VarList& v) { return probe_loss(nn::sigmoid(v[0]), seed); });
                     }});

    cases.push_back({"relu", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         std::uniform_int_distribution<int> ext(1, 12);
                         auto x = random_tensor({ext(rng)}, rng);
                         // keep away from the kink
                         for (nn::Index i = 0; i < x.size(); ++i) x[i] += x[i] < 0 ? -0.01 : 0.01;
                         return gradient_check({x}, [&](Tape<double>&, VarList& v) { return probe_loss(nn::relu(v[0]), seed); });
                     }});

    cases.push_back({"bce_loss", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         const double label = seed % 2 == 0 ? 1.0 : 0.0;
                         return gradient_check({random_tensor({1}, rng, 0.02, 0.98)},
                                               [&](Tape<double>&, VarList& v) { return nn::bce_loss(v[0], label); });
                     }});

    cases.push_back({"sigmoid+bce", [](std::uint64_t seed) {
                         std::mt19937_64 rng(seed);
                         const double label = seed % 2 == 0 ? 1.0 : 0.0;
                         return gradient_check({random_tensor({1}, rng, -3.0, 3.0)}, [&](Tape<double>&, VarList& v) {
                             return nn::bce_loss(nn::sigmoid(v[0]), label);
                         });
                     }});

    return cases;
}

} // namespace psfv::testing
