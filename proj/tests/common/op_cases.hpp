// SPDX-License-Identifier: Apache-2.0
// Every differentiable primitive with small random-input shapes, for gradient checks.
#pragma once

#include <array>
#include <vector>

#include "fd_check.hpp"

namespace fdcheck {

namespace dn = driftlab::numerics;

struct OpCase {
    const char* name;
    std::vector<dn::Shape> shapes;
    Builder build;
};

inline std::vector<OpCase> op_cases() {
    dn::Mask soft_mask(3 * 5, 1);
    soft_mask[2] = soft_mask[9] = soft_mask[14] = 0;
    const dn::Mask rows{1, 0, 1, 1};
    return {
        {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const std::vector<Var>& v) { return dn::matmul(v[0], v[1]); }},
        {"matmul_nt", {{3, 4}, {2, 4}}, [](Tape&, const std::vector<Var>& v) { return dn::matmul_nt(v[0], v[1]); }},
        {"add", {{2, 3}, {2, 3}}, [](Tape&, const std::vector<Var>& v) { return dn::add(v[0], v[1]); }},
        {"add_row", {{3, 4}, {4}}, [](Tape&, const std::vector<Var>& v) { return dn::add_row(v[0], v[1]); }},
        {"scale", {{2, 3}}, [](Tape&, const std::vector<Var>& v) { return dn::scale(v[0], -1.7); }},
        {"row_softmax", {{3, 5}},
         [soft_mask](Tape&, const std::vector<Var>& v) { return dn::row_softmax(v[0], soft_mask); }},
        {"layer_norm", {{3, 6}, {6}, {6}},
         [](Tape&, const std::vector<Var>& v) { return dn::layer_norm(v[0], v[1], v[2], 1e-5); }},
        {"gelu", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return dn::gelu(v[0]); }},
        {"dropout", {{3, 4}},
         [](Tape&, const std::vector<Var>& v) {
             driftlab::Rng rng(77);
             return dn::dropout(v[0], 0.4, true, rng);
         }},
        {"cross_entropy", {{3, 5}},
         [](Tape&, const std::vector<Var>& v) {
             const std::array<std::size_t, 3> labels{1, 3, 0};
             dn::Mask m(15, 1);
             m[4] = m[14] = 0;
             return dn::cross_entropy(v[0], labels, m);
         }},
        {"slice_rows", {{4, 3}}, [](Tape&, const std::vector<Var>& v) { return dn::slice_rows(v[0], 1, 2); }},
        {"slice_cols", {{3, 5}}, [](Tape&, const std::vector<Var>& v) { return dn::slice_cols(v[0], 2, 3); }},
        {"concat_cols", {{3, 2}, {3, 4}},
         [](Tape&, const std::vector<Var>& v) {
             const std::array<Var, 2> p{v[0], v[1]};
             return dn::concat_cols(p);
         }},
        {"select_rows", {{4, 3}, {3}},
         [rows](Tape&, const std::vector<Var>& v) { return dn::select_rows(v[0], v[1], rows); }},
        {"masked_mean_rows", {{4, 3}},
         [rows](Tape&, const std::vector<Var>& v) { return dn::masked_mean_rows(v[0], rows); }},
    };
}

}  // namespace fdcheck
