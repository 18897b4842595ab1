#pragma once

#include "urbanln/nn/tensor.hpp"

namespace urbanln::ipsi {

// Ordered table of position embeddings; position e in {1..L} lives in row e-1.
struct PositionalTable {
    nn::Tensor rows; // L x d

    int length() const { return rows.rows; }
    int dim() const { return rows.cols; }
};

struct IpsiConfig {
    int lambda = 4;           // interpolation ratio
    static constexpr int preserve = 20;

    void validate() const;
    // T = preserve + (L - preserve) * lambda
    int target_length(int source_length) const;
};

// Stretches the table to length T. Positions e <= 20 are copied bit-for-bit;
// beyond that, row e is (1-w) * P(floor(e/lambda)) + w * P(ceil(e/lambda))
// with w = e/lambda - floor(e/lambda). Integer quotients (w == 0) copy their
// source row exactly.
PositionalTable stretch_positions(const PositionalTable& table, const IpsiConfig& cfg);

// Source rows and weights feeding output position e (1-indexed); used by the
// training graph so gradients reach the base table through the same mapping.
struct StretchSource {
    int lo_row;     // 0-indexed source row
    int hi_row;     // 0-indexed source row (== lo_row when weight is 0)
    double w;       // weight on hi_row
};
StretchSource stretch_source(int e, const IpsiConfig& cfg);

} // namespace urbanln::ipsi
