#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace vpkit {

/// Porter (1980) suffix stripper, following the author's reference C
/// implementation. Input must already be lowercase ASCII.
std::string porter_stem(std::string_view word);

struct TextNormalizer {
    bool lowercase = true;
    bool strip_punctuation = true;
    bool stem = false;

    /// Lowercase, drop apostrophes, turn other ASCII punctuation into spaces,
    /// split on whitespace. With `stem`, each token is stemmed until it stops
    /// changing, which keeps normalization idempotent.
    std::vector<std::string> tokens(std::string_view text) const;
    std::string normalize(std::string_view text) const;
};

struct MetricResult {
    std::string name;
    double value = 0.0;
    std::size_t support = 0;
};

/// text -> unit-norm vector of fixed dimension.
class Embedder {
  public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<double> embed(std::string_view text) = 0;
    virtual std::string name() const = 0;
};

/// Bag of Porter stems hashed (FNV-1a 64) into `dimension` buckets, L2-normalized.
class HashedEmbedder : public Embedder {
  public:
    explicit HashedEmbedder(std::size_t dimension = 4096);
    std::size_t dimension() const override { return dim_; }
    std::vector<double> embed(std::string_view text) override;
    std::string name() const override { return "hashed-bag-of-stems"; }

    std::size_t bucket(std::string_view stem) const;

  private:
    std::size_t dim_;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Word-set IoU over lowercased, punctuation-stripped tokens (no stemming).
double semantic_iou(std::string_view pred, std::string_view gt);

double semantic_similarity(std::string_view pred, std::string_view gt, Embedder& embedder);

struct CiderResult {
    double corpus = 0.0;
    std::map<std::string, double> per_item;
};

/// CIDEr (not CIDEr-D): TF-IDF weighted n-gram cosine for n = 1..4, averaged
/// over references and n, times 10. Document frequencies come from the
/// reference sets; idf = log(N) - log(max(1, df)).
CiderResult cider(const std::map<std::string, std::string>& candidates,
                  const std::map<std::string, std::vector<std::string>>& references);

struct MeteorParams {
    double alpha = 0.9;
    double beta = 3.0;
    double gamma = 0.5;
};

/// METEOR with exact and Porter-stem matching stages only (no synonyms).
/// Max over references of Fmean * (1 - gamma * (chunks/matches)^beta).
double meteor_lite(std::string_view candidate, const std::vector<std::string>& references,
                   const MeteorParams& params = {});

struct BinaryChoiceItem {
    std::string response;
    std::string class_a;
    std::string class_b;
    std::string gt_class;
};

/// Correct iff exactly one of the two class names appears (as a whole-word
/// token sequence) and it is the ground truth.
bool binary_choice_correct(const BinaryChoiceItem& item);
MetricResult binary_choice_accuracy(const std::vector<BinaryChoiceItem>& items);

} // namespace vpkit
