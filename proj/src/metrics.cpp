#include "vpkit/metrics.hpp"

#include "vpkit/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

namespace vpkit {

std::vector<std::string> TextNormalizer::tokens(std::string_view text) const {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty())
            return;
        if (stem) {
            // Porter is not idempotent on its own output (agreed -> agre -> agr).
            for (std::string next = porter_stem(cur); next != cur; next = porter_stem(cur))
                cur = std::move(next);
        }
        out.push_back(std::move(cur));
        cur.clear();
    };
    for (const char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            flush();
        } else if (strip_punctuation && u < 0x80 && std::ispunct(u)) {
            if (c != '\'')
                flush();
        } else {
            cur.push_back(lowercase && u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
        }
    }
    flush();
    return out;
}

std::string TextNormalizer::normalize(std::string_view text) const {
    std::string out;
    for (const auto& t : tokens(text)) {
        if (!out.empty())
            out.push_back(' ');
        out += t;
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

HashedEmbedder::HashedEmbedder(std::size_t dimension) : dim_(dimension) {
    if (dimension == 0)
        fail(ErrorCode::InvalidArgument, "embedding dimension must be >= 1");
}

std::size_t HashedEmbedder::bucket(std::string_view stem) const { return fnv1a64(stem) % dim_; }

std::vector<double> HashedEmbedder::embed(std::string_view text) {
    const auto toks = TextNormalizer{.stem = true}.tokens(text);
    if (toks.empty())
        fail(ErrorCode::EmptyText, "text is empty after normalization");
    std::vector<double> v(dim_, 0.0);
    for (const auto& t : toks)
        v[bucket(t)] += 1.0;
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v)
        x /= norm;
    return v;
}

double semantic_iou(std::string_view pred, std::string_view gt) {
    const TextNormalizer norm;
    const auto a_tok = norm.tokens(pred);
    const auto b_tok = norm.tokens(gt);
    if (a_tok.empty() || b_tok.empty())
        fail(ErrorCode::EmptyText, "semantic IoU needs non-empty texts");
    const std::set<std::string> a(a_tok.begin(), a_tok.end()), b(b_tok.begin(), b_tok.end());
    std::size_t inter = 0;
    for (const auto& w : a)
        inter += b.count(w);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double semantic_similarity(std::string_view pred, std::string_view gt, Embedder& embedder) {
    const auto a = embedder.embed(pred);
    const auto b = embedder.embed(gt);
    if (a.size() != b.size())
        fail(ErrorCode::InvalidArgument, "embedder returned vectors of different dimension");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

namespace {

using NgramCounts = std::map<std::string, double>;

constexpr int kMaxN = 4;

// counts[n-1] holds the n-grams of length n, joined with a single space.
std::array<NgramCounts, kMaxN> ngram_counts(const std::vector<std::string>& toks) {
    std::array<NgramCounts, kMaxN> out;
    for (int n = 1; n <= kMaxN; ++n) {
        for (std::size_t i = 0; i + n <= toks.size(); ++i) {
            std::string g = toks[i];
            for (int k = 1; k < n; ++k)
                g += ' ' + toks[i + k];
            out[n - 1][g] += 1.0;
        }
    }
    return out;
}

} // namespace

CiderResult cider(const std::map<std::string, std::string>& candidates,
                  const std::map<std::string, std::vector<std::string>>& references) {
    const TextNormalizer norm;
    for (const auto& [id, _] : candidates) {
        const auto it = references.find(id);
        if (it == references.end() || it->second.empty())
            fail(ErrorCode::Misaligned, "no references for candidate '" + id + "'");
    }
    if (references.size() < 2)
        fail(ErrorCode::DegenerateIdf, "CIDEr document frequencies need at least two reference sets");

    std::map<std::string, std::vector<std::array<NgramCounts, kMaxN>>> ref_counts;
    std::array<std::map<std::string, double>, kMaxN> df;
    for (const auto& [id, refs] : references) {
        auto& per_ref = ref_counts[id];
        std::array<std::set<std::string>, kMaxN> seen;
        for (const auto& r : refs) {
            per_ref.push_back(ngram_counts(norm.tokens(r)));
            for (int n = 0; n < kMaxN; ++n)
                for (const auto& [g, _] : per_ref.back()[n])
                    seen[n].insert(g);
        }
        for (int n = 0; n < kMaxN; ++n)
            for (const auto& g : seen[n])
                df[n][g] += 1.0;
    }
    const double log_n = std::log(static_cast<double>(references.size()));

    auto weigh = [&](const NgramCounts& counts, int n) {
        NgramCounts v;
        for (const auto& [g, tf] : counts) {
            const auto it = df[n].find(g);
            const double d = it == df[n].end() ? 0.0 : it->second;
            v[g] = tf * (log_n - std::log(std::max(1.0, d)));
        }
        return v;
    };
    auto cosine = [](const NgramCounts& a, const NgramCounts& b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (const auto& [g, x] : a) {
            na += x * x;
            const auto it = b.find(g);
            if (it != b.end())
                dot += x * it->second;
        }
        for (const auto& [g, y] : b)
            nb += y * y;
        if (na == 0.0 || nb == 0.0)
            return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };

    CiderResult result;
    double total = 0.0;
    for (const auto& [id, text] : candidates) {
        const auto cand = ngram_counts(norm.tokens(text));
        const auto& refs = ref_counts.at(id);
        double score = 0.0;
        for (int n = 0; n < kMaxN; ++n) {
            const auto cv = weigh(cand[n], n);
            double sum = 0.0;
            for (const auto& r : refs)
                sum += cosine(cv, weigh(r[n], n));
            score += sum / static_cast<double>(refs.size());
        }
        score = 10.0 * score / kMaxN;
        result.per_item[id] = score;
        total += score;
    }
    result.corpus = candidates.empty() ? 0.0 : total / static_cast<double>(candidates.size());
    return result;
}

namespace {

// Aligns candidate tokens to reference tokens: exact stage, then stem stage
// on what is left. Within a stage each candidate token takes the unmatched
// reference token that continues the previous match if possible, otherwise
// the leftmost one. Returns ref index per candidate token (-1 if unmatched).
std::vector<int> align(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
    std::vector<int> match(cand.size(), -1);
    std::vector<bool> used(ref.size(), false);
    auto stage = [&](auto key_of) {
        std::vector<std::string> ck, rk;
        for (const auto& t : cand)
            ck.push_back(key_of(t));
        for (const auto& t : ref)
            rk.push_back(key_of(t));
        int prev = -2;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (match[i] >= 0) {
                prev = match[i];
                continue;
            }
            int pick = -1;
            const int want = prev + 1;
            if (want >= 0 && want < static_cast<int>(ref.size()) && !used[want] && rk[want] == ck[i])
                pick = want;
            for (std::size_t j = 0; pick < 0 && j < ref.size(); ++j)
                if (!used[j] && rk[j] == ck[i])
                    pick = static_cast<int>(j);
            if (pick >= 0) {
                match[i] = pick;
                used[pick] = true;
                prev = pick;
            } else {
                prev = -2;
            }
        }
    };
    stage([](const std::string& t) { return t; });
    stage([](const std::string& t) { return porter_stem(t); });
    return match;
}

double meteor_single(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                     const MeteorParams& params) {
    const auto match = align(cand, ref);
    int m = 0, chunks = 0, prev = -2;
    for (const int r : match) {
        if (r < 0) {
            prev = -2;
            continue;
        }
        ++m;
        if (r != prev + 1 || prev < 0)
            ++chunks;
        prev = r;
    }
    if (m == 0)
        return 0.0;
    const double p = static_cast<double>(m) / static_cast<double>(cand.size());
    const double r = static_cast<double>(m) / static_cast<double>(ref.size());
    const double fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
    const double penalty = params.gamma * std::pow(static_cast<double>(chunks) / m, params.beta);
    return fmean * (1.0 - penalty);
}

} // namespace

double meteor_lite(std::string_view candidate, const std::vector<std::string>& references,
                   const MeteorParams& params) {
    const TextNormalizer norm;
    const auto cand = norm.tokens(candidate);
    if (cand.empty())
        fail(ErrorCode::EmptyText, "empty candidate");
    if (references.empty())
        fail(ErrorCode::EmptyText, "no references");
    double best = 0.0;
    bool any = false;
    for (const auto& r : references) {
        const auto ref = norm.tokens(r);
        if (ref.empty())
            continue;
        any = true;
        best = std::max(best, meteor_single(cand, ref, params));
    }
    if (!any)
        fail(ErrorCode::EmptyText, "every reference is empty");
    return best;
}

namespace {

bool contains_phrase(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > hay.size())
        return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

} // namespace

bool binary_choice_correct(const BinaryChoiceItem& item) {
    const TextNormalizer norm;
    const auto resp = norm.tokens(item.response);
    const auto a = norm.tokens(item.class_a);
    const auto b = norm.tokens(item.class_b);
    const bool has_a = contains_phrase(resp, a);
    const bool has_b = contains_phrase(resp, b);
    if (has_a == has_b)
        return false;
    return (has_a ? a : b) == norm.tokens(item.gt_class);
}

MetricResult binary_choice_accuracy(const std::vector<BinaryChoiceItem>& items) {
    MetricResult r{"accuracy", 0.0, items.size()};
    if (items.empty())
        return r;
    std::size_t correct = 0;
    for (const auto& it : items)
        correct += binary_choice_correct(it);
    r.value = static_cast<double>(correct) / static_cast<double>(items.size());
    return r;
}

} // namespace vpkit
