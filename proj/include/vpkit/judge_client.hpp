#pragma once

#include "vpkit/metrics.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vpkit {

struct JudgeConfig {
    std::string base_url = "https://api.openai.com/v1"; // POSTs go to {base_url}/chat/completions
    std::string model = "gpt-4-vision-preview";
    std::string api_key_env = "OPENAI_API_KEY";
    std::size_t max_concurrency = 4;
    std::size_t max_attempts = 5;
    std::chrono::milliseconds backoff_base{1000}; // doubled per retry
    std::chrono::seconds timeout{120};
    std::filesystem::path cache_dir = ".vpkit-cache";
    double temperature = 0.0;
};

void validate(const JudgeConfig& cfg);

struct JudgeStats {
    std::size_t network_requests = 0; // HTTP attempts, including retries
    std::size_t cache_hits = 0;
    std::size_t retries = 0;
};

/// Chat-completions client with a permanent on-disk cache and a bounded
/// request pool. Safe to call from several threads.
class JudgeClient {
  public:
    explicit JudgeClient(JudgeConfig cfg);
    ~JudgeClient();
    JudgeClient(const JudgeClient&) = delete;
    JudgeClient& operator=(const JudgeClient&) = delete;

    /// Cache key is sha256 over (model, prompt, image bytes). Errors:
    /// AuthError (missing key or 401/403, never retried), ServiceUnavailable
    /// (retries exhausted), MalformedResponse (no message content).
    std::string complete(const std::string& prompt, const std::string& png = {});

    std::string cache_key(const std::string& prompt, const std::string& png) const;
    JudgeStats stats() const;
    const JudgeConfig& config() const { return cfg_; }

    /// Test hook: replaces the sleep between retries.
    void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

  private:
    struct Impl;
    JudgeConfig cfg_;
    std::unique_ptr<Impl> impl_;
};

struct JudgeScore {
    int score = 0; // 1..10
    std::string rationale;
};

/// Parses the first "Score: N" line; nullopt if absent or outside [1,10].
std::optional<JudgeScore> parse_score(const std::string& response);

/// Fills the rubric ({question}, {answer}, {reference}), sends it with the SoM
/// image and parses the score, re-asking once on failure. Throws UnscorableResponse.
JudgeScore score_response(JudgeClient& client, const std::string& rubric, const std::string& som_png,
                          const std::string& question, const std::string& model_answer,
                          const std::optional<std::string>& reference = std::nullopt);

/// 100 * sum(model) / sum(reference). Errors: Misaligned, DegenerateReference.
double score_pair_ratio(const std::vector<int>& model_scores, const std::vector<int>& reference_scores);

/// Embedder backed by {base_url}/embeddings; vectors are L2-normalized and cached.
class RemoteEmbedder : public Embedder {
  public:
    RemoteEmbedder(JudgeConfig cfg, std::string model, std::size_t dimension);
    ~RemoteEmbedder() override;
    std::size_t dimension() const override { return dim_; }
    std::vector<double> embed(std::string_view text) override;
    std::string name() const override { return "remote:" + model_; }

  private:
    struct Impl;
    std::string model_;
    std::size_t dim_;
    std::unique_ptr<Impl> impl_;
};

std::string base64_encode(std::string_view bytes);

} // namespace vpkit
