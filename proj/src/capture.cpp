#include "urbanln/capture.hpp"

#include <algorithm>
#include <cmath>

namespace urbanln {

void CaptureWeights::validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0 || alpha + beta + gamma <= 0) {
        throw ConfigError("capture weights must be non-negative with alpha + beta + gamma > 0");
    }
}

double CaptureWeights::weight(PhraseCategory c) const {
    switch (c) {
    case PhraseCategory::object: return alpha;
    case PhraseCategory::attribute: return beta;
    case PhraseCategory::relation: return gamma;
    }
    return 0.0;
}

GroupLexicon::GroupLexicon(const std::vector<std::vector<std::string>>& groups) {
    for (const auto& group : groups) {
        std::set<std::string> members(group.begin(), group.end());
        for (const auto& m : members) {
            groups_[m] = members;
        }
    }
}

std::set<std::string> GroupLexicon::lookup(const std::string& phrase) const {
    auto it = groups_.find(phrase);
    if (it != groups_.end()) {
        return it->second;
    }
    return {phrase};
}

HashingPhraseEncoder::HashingPhraseEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ < 1) {
        throw ConfigError("phrase encoder dimension must be >= 1");
    }
}

std::vector<double> HashingPhraseEncoder::embed(const std::string& phrase) const {
    std::vector<double> v(static_cast<size_t>(dim_), 0.0);
    const std::string padded = "^" + phrase + "$";
    for (int n = 2; n <= 3; ++n) {
        if (static_cast<int>(padded.size()) < n) {
            continue;
        }
        for (size_t i = 0; i + n <= padded.size(); ++i) {
            std::uint64_t h = splitmix64(fnv1a64(std::string_view(padded).substr(i, n)) ^ seed_);
            size_t bucket = h % static_cast<std::uint64_t>(dim_);
            double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
            v[bucket] += sign;
        }
    }
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm > 0) {
        for (double& x : v) {
            x /= norm;
        }
    } else {
        v[0] = 1.0; // cannot happen for non-empty phrases, kept as a safe fallback
    }
    return v;
}

const CategoryMatch& MatchReport::category(PhraseCategory c) const {
    switch (c) {
    case PhraseCategory::object: return objects;
    case PhraseCategory::attribute: return attributes;
    case PhraseCategory::relation: return relations;
    }
    return objects;
}

namespace {

std::vector<std::string> flatten(const PhraseMultiset& ms) {
    std::vector<std::string> out;
    for (const auto& [text, count] : ms) {
        for (int i = 0; i < count; ++i) {
            out.push_back(text);
        }
    }
    return out;
}

bool sets_overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia == *ib) {
            return true;
        }
        if (*ia < *ib) {
            ++ia;
        } else {
            ++ib;
        }
    }
    return false;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

} // namespace

CategoryMatch match_category(const PhraseMultiset& cand, const PhraseMultiset& ref,
                             const SynonymLexicon& lexicon, const PhraseEncoder* encoder) {
    CategoryMatch m;
    const std::vector<std::string> cand_flat = flatten(cand);
    const std::vector<std::string> ref_flat = flatten(ref);
    m.cand_count = static_cast<int>(cand_flat.size());
    m.ref_count = static_cast<int>(ref_flat.size());

    std::vector<bool> cand_used(cand_flat.size(), false);
    std::vector<bool> ref_used(ref_flat.size(), false);

    // Stage 1: exact. Multiset intersection; flattened lists are sorted so a
    // linear sweep pairs equal phrases one-to-one.
    {
        size_t i = 0, j = 0;
        while (i < cand_flat.size() && j < ref_flat.size()) {
            if (cand_flat[i] == ref_flat[j]) {
                cand_used[i] = ref_used[j] = true;
                m.matched_mass += 1.0;
                ++i;
                ++j;
            } else if (cand_flat[i] < ref_flat[j]) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    // Stage 2: synonym-set overlap among the remainder, greedy in sorted order.
    for (size_t i = 0; i < cand_flat.size(); ++i) {
        if (cand_used[i]) {
            continue;
        }
        std::set<std::string> syn = lexicon.lookup(cand_flat[i]);
        for (size_t j = 0; j < ref_flat.size(); ++j) {
            if (ref_used[j]) {
                continue;
            }
            if (sets_overlap(syn, lexicon.lookup(ref_flat[j]))) {
                cand_used[i] = ref_used[j] = true;
                m.matched_mass += 1.0;
                break;
            }
        }
    }

    // Stage 3: soft. Greedy one-to-one by descending clipped cosine; ties by
    // (cand index, ref index). Similarity itself is the fractional mass.
    if (encoder != nullptr) {
        struct SoftPair {
            double sim;
            size_t ci, rj;
        };
        std::vector<SoftPair> pairs;
        std::vector<std::vector<double>> cand_emb(cand_flat.size());
        std::vector<std::vector<double>> ref_emb(ref_flat.size());
        for (size_t i = 0; i < cand_flat.size(); ++i) {
            if (!cand_used[i]) {
                cand_emb[i] = encoder->embed(cand_flat[i]);
            }
        }
        for (size_t j = 0; j < ref_flat.size(); ++j) {
            if (!ref_used[j]) {
                ref_emb[j] = encoder->embed(ref_flat[j]);
            }
        }
        for (size_t i = 0; i < cand_flat.size(); ++i) {
            if (cand_used[i]) {
                continue;
            }
            for (size_t j = 0; j < ref_flat.size(); ++j) {
                if (ref_used[j]) {
                    continue;
                }
                double sim = std::clamp(cosine(cand_emb[i], ref_emb[j]), 0.0, 1.0);
                pairs.push_back({sim, i, j});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const SoftPair& a, const SoftPair& b) {
            if (a.sim != b.sim) {
                return a.sim > b.sim;
            }
            if (a.ci != b.ci) {
                return a.ci < b.ci;
            }
            return a.rj < b.rj;
        });
        for (const auto& p : pairs) {
            if (cand_used[p.ci] || ref_used[p.rj]) {
                continue;
            }
            cand_used[p.ci] = ref_used[p.rj] = true;
            m.matched_mass += p.sim;
        }
    }

    if (m.cand_count > 0) {
        m.precision = m.matched_mass / m.cand_count;
    }
    if (m.ref_count > 0) {
        m.recall = m.matched_mass / m.ref_count;
    }
    if (m.cand_count == 0 && m.ref_count == 0) {
        // f1 undefined: nothing to compare
    } else if (m.cand_count == 0 || m.ref_count == 0) {
        m.f1 = 0.0;
    } else {
        double p = *m.precision;
        double r = *m.recall;
        m.f1 = (p + r > 0) ? 2.0 * p * r / (p + r) : 0.0;
    }
    return m;
}

MatchReport match_graphs(const SceneGraph& cand, const SceneGraph& ref,
                         const SynonymLexicon& lexicon, const PhraseEncoder* encoder) {
    MatchReport r;
    r.objects = match_category(cand.objects, ref.objects, lexicon, encoder);
    r.attributes = match_category(cand.attributes, ref.attributes, lexicon, encoder);
    r.relations = match_category(cand.relations, ref.relations, lexicon, encoder);
    return r;
}

namespace {

SceneGraph apply_stoplist(const SceneGraph& g, const std::set<std::string>& stop) {
    if (stop.empty()) {
        return g;
    }
    SceneGraph out = g;
    for (PhraseCategory c : {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
        auto& ms = out.category(c);
        for (const auto& s : stop) {
            ms.erase(s);
        }
    }
    return out;
}

} // namespace

double compute_capture(const SceneGraph& g1, const SceneGraph& g2, const CaptureConfig& cfg,
                       const SynonymLexicon& lexicon, const PhraseEncoder* encoder) {
    cfg.weights.validate();
    const SceneGraph a = apply_stoplist(g1, cfg.stop_phrases);
    const SceneGraph b = apply_stoplist(g2, cfg.stop_phrases);
    MatchReport report = match_graphs(a, b, lexicon, encoder);

    double num = 0.0;
    double den = 0.0;
    for (PhraseCategory c : {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
        const CategoryMatch& m = report.category(c);
        if (!m.f1.has_value()) {
            continue; // empty on both sides: excluded, weight renormalized
        }
        num += cfg.weights.weight(c) * *m.f1;
        den += cfg.weights.weight(c);
    }
    if (den <= 0) {
        return 0.0;
    }
    return num / den;
}

std::vector<double> consensus_scores(const std::vector<CaptionCandidate>& candidates,
                                     const CaptureConfig& cfg, const SynonymLexicon& lexicon,
                                     const PhraseEncoder* encoder) {
    if (candidates.empty()) {
        throw DataError("consensus requires at least one candidate");
    }
    for (const auto& c : candidates) {
        if (!c.graph.has_value()) {
            throw DataError("candidate '" + c.id + "' has no scene graph");
        }
    }
    const size_t n = candidates.size();
    std::vector<double> scores(n, 0.0);
    if (n == 1) {
        return scores;
    }
    // Pairwise CAPTURE; each unordered pair computed once in each direction
    // would be redundant only for symmetric configurations, so keep it simple
    // and compute the full matrix.
    std::vector<std::vector<double>> pairwise(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            pairwise[i][j] =
                compute_capture(*candidates[i].graph, *candidates[j].graph, cfg, lexicon, encoder);
        }
    }
    for (size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            if (j != i) {
                sum += pairwise[i][j];
            }
        }
        scores[i] = sum / static_cast<double>(n - 1);
    }
    return scores;
}

ConsensusResult select_caption(const std::vector<CaptionCandidate>& candidates,
                               const CaptureConfig& cfg, const SynonymLexicon& lexicon,
                               const PhraseEncoder* encoder) {
    ConsensusResult res;
    res.scores = consensus_scores(candidates, cfg, lexicon, encoder);
    res.selected_index = 0;
    for (size_t i = 1; i < res.scores.size(); ++i) {
        if (res.scores[i] > res.scores[res.selected_index]) {
            res.selected_index = static_cast<int>(i);
        }
    }
    res.selected_score = res.scores[res.selected_index];
    return res;
}

} // namespace urbanln
