#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "urbanln/scene_graph.hpp"

namespace urbanln {

// Scale factors for the per-category F1 mix. Defaults 5/5/2.
struct CaptureWeights {
    double alpha = 5.0;
    double beta = 5.0;
    double gamma = 2.0;

    void validate() const;
    double weight(PhraseCategory c) const;
};

// Deterministic synonym lookup. lookup(x) always contains x itself.
class SynonymLexicon {
public:
    virtual ~SynonymLexicon() = default;
    virtual std::set<std::string> lookup(const std::string& phrase) const = 0;
};

// No synonyms beyond the phrase itself.
class IdentityLexicon : public SynonymLexicon {
public:
    std::set<std::string> lookup(const std::string& phrase) const override {
        return {phrase};
    }
};

// Synonymy as a partition into groups: lookup returns the whole group, so
// overlap is an equivalence relation and greedy one-to-one matching is optimal.
class GroupLexicon : public SynonymLexicon {
public:
    explicit GroupLexicon(const std::vector<std::vector<std::string>>& groups);
    std::set<std::string> lookup(const std::string& phrase) const override;

private:
    std::map<std::string, std::set<std::string>> groups_;
};

// Deterministic phrase embedding with unit L2 norm.
class PhraseEncoder {
public:
    virtual ~PhraseEncoder() = default;
    virtual std::vector<double> embed(const std::string& phrase) const = 0;
    virtual int dim() const = 0;
};

// Signed feature hashing over character n-grams (n = 2, 3) of the padded
// phrase. Fixed seed, fixed dimension, L2-normalized, no model downloads.
class HashingPhraseEncoder : public PhraseEncoder {
public:
    explicit HashingPhraseEncoder(int dim = 64, std::uint64_t seed = 0x5eedULL);
    std::vector<double> embed(const std::string& phrase) const override;
    int dim() const override { return dim_; }

private:
    int dim_;
    std::uint64_t seed_;
};

// How one category matched. matched_mass counts exact + synonym pairs at 1
// each plus soft-pair cosine credit. f1 is empty iff both sides are empty.
struct CategoryMatch {
    double matched_mass = 0.0;
    int cand_count = 0;
    int ref_count = 0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

struct MatchReport {
    CategoryMatch objects;
    CategoryMatch attributes;
    CategoryMatch relations;

    const CategoryMatch& category(PhraseCategory c) const;
};

// Three-stage one-to-one matching between two phrase multisets:
//   1. exact string equality
//   2. synonym-set overlap among the remainder (greedy in sorted order)
//   3. greedy soft pairing of the remainder by descending cosine similarity
//      clipped to [0,1]; each soft pair contributes its similarity as
//      fractional mass. encoder == nullptr disables stage 3.
CategoryMatch match_category(const PhraseMultiset& cand, const PhraseMultiset& ref,
                             const SynonymLexicon& lexicon, const PhraseEncoder* encoder);

MatchReport match_graphs(const SceneGraph& cand, const SceneGraph& ref,
                         const SynonymLexicon& lexicon, const PhraseEncoder* encoder);

struct CaptureConfig {
    CaptureWeights weights;
    // Phrases pruned from both graphs before matching. Empty by default.
    std::set<std::string> stop_phrases;
};

// Weighted per-category F1 mix in [0,1]. Categories empty on both sides are
// excluded and the weight denominator renormalized; two fully empty graphs
// score 0.
double compute_capture(const SceneGraph& g1, const SceneGraph& g2, const CaptureConfig& cfg,
                       const SynonymLexicon& lexicon, const PhraseEncoder* encoder);

struct ConsensusResult {
    std::vector<double> scores;
    int selected_index = 0;
    double selected_score = 0.0;
};

// score_i = mean over j != i of capture(g_i, g_j); 0 for a single candidate.
// Throws DataError naming the candidate id when a graph is missing.
std::vector<double> consensus_scores(const std::vector<CaptionCandidate>& candidates,
                                     const CaptureConfig& cfg, const SynonymLexicon& lexicon,
                                     const PhraseEncoder* encoder);

// Argmax of consensus_scores, lowest index on ties.
ConsensusResult select_caption(const std::vector<CaptionCandidate>& candidates,
                               const CaptureConfig& cfg, const SynonymLexicon& lexicon,
                               const PhraseEncoder* encoder);

} // namespace urbanln
