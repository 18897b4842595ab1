#include "urbanln/ipsi.hpp"

#include <cstring>

namespace urbanln::ipsi {

void IpsiConfig::validate() const {
    if (lambda < 1) {
        throw ConfigError("ipsi.lambda must be >= 1");
    }
}

int IpsiConfig::target_length(int source_length) const {
    return preserve + (source_length - preserve) * lambda;
}

StretchSource stretch_source(int e, const IpsiConfig& cfg) {
    if (e <= IpsiConfig::preserve) {
        return {e - 1, e - 1, 0.0};
    }
    const int lo = e / cfg.lambda;          // floor(e / lambda), e and lambda positive
    const int hi = (e + cfg.lambda - 1) / cfg.lambda;
    const double w = static_cast<double>(e) / cfg.lambda - lo;
    return {lo - 1, hi - 1, w};
}

PositionalTable stretch_positions(const PositionalTable& table, const IpsiConfig& cfg) {
    cfg.validate();
    const int L = table.length();
    const int d = table.dim();
    if (L < IpsiConfig::preserve + 1) {
        throw ConfigError("positional table must have length >= 21");
    }
    if (d < 1) {
        throw ConfigError("positional table dimension must be >= 1");
    }
    const int T = cfg.target_length(L);
    // Highest source index touched is ceil(T / lambda); reject before allocating.
    const int max_src = (T + cfg.lambda - 1) / cfg.lambda;
    if (max_src > L) {
        throw ConfigError("ipsi stretch would read position " + std::to_string(max_src) +
                          " beyond table length " + std::to_string(L));
    }
    // Lowest source index touched is floor(21 / lambda), which must stay >= 1.
    if (cfg.lambda > IpsiConfig::preserve + 1) {
        throw ConfigError("ipsi.lambda too large: position 21 would interpolate below position 1");
    }

    PositionalTable out;
    out.rows = nn::Tensor(T, d);
    for (int e = 1; e <= T; ++e) {
        const StretchSource src = stretch_source(e, cfg);
        double* dst = out.rows.row(e - 1);
        const double* lo = table.rows.row(src.lo_row);
        if (src.w == 0.0) {
            std::memcpy(dst, lo, sizeof(double) * static_cast<size_t>(d));
            continue;
        }
        const double* hi = table.rows.row(src.hi_row);
        for (int j = 0; j < d; ++j) {
            dst[j] = (1.0 - src.w) * lo[j] + src.w * hi[j];
        }
    }
    return out;
}

} // namespace urbanln::ipsi
