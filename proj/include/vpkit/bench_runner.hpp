#pragma once

#include "vpkit/construct.hpp"
#include "vpkit/judge_client.hpp"
#include "vpkit/metrics.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vpkit {

struct PredictionRecord {
    std::string sample_id;
    std::string model;
    std::string response;
};

/// JSONL of {"sample_id", "model", "response"}. DuplicateId on a repeated id.
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);
void write_predictions(const std::vector<PredictionRecord>& preds, const std::filesystem::path& path);
/// Prediction = the benchmark's own last assistant turn.
std::vector<PredictionRecord> echo_predictions(const std::vector<InstructionSample>& bench,
                                               const std::string& model = "echo");

/// Metric names used in reports.
namespace metric {
inline constexpr const char* kSemanticIou = "s-iou";
inline constexpr const char* kSemanticSimilarity = "ss";
inline constexpr const char* kCider = "cider";
inline constexpr const char* kMeteor = "meteor-lite";
inline constexpr const char* kAccuracy = "accuracy";
inline constexpr const char* kJudgeRaw = "judge-raw";     // mean judge score x10 (0..100)
inline constexpr const char* kJudgeRatio = "judge-ratio"; // 100 * sum(model) / sum(reference)
} // namespace metric

struct MetricAgg {
    double sum = 0.0;
    std::size_t count = 0;
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
    friend bool operator==(const MetricAgg&, const MetricAgg&) = default;
};

struct ItemResult {
    std::string sample_id;
    std::string cell;
    std::map<std::string, double> values;
    std::optional<std::string> error; // error code name when the item could not be scored
    bool unscored = false;            // judge task with judging disabled
    std::optional<int> judge_score;
    std::optional<int> reference_score;
    friend bool operator==(const ItemResult&, const ItemResult&) = default;
};

struct CellResult {
    Domain domain = Domain::Natural;
    SamplePromptKind prompt_kind = SamplePromptKind::Box;
    TaskTag task = TaskTag::Stage1Label;
    std::size_t support = 0; // samples with a prediction
    std::map<std::string, MetricAgg> metrics;
    std::map<std::string, std::size_t> errors;
    std::size_t unscored = 0;
    std::optional<double> judge_ratio;
    friend bool operator==(const CellResult&, const CellResult&) = default;
};

struct EvalReport {
    std::string model;
    std::string benchmark_sha256;
    std::size_t benchmark_size = 0;
    std::string config; // JSON snapshot of the run configuration
    std::map<std::string, CellResult> cells; // key: domain|prompt_kind|task
    std::vector<std::string> missing;        // benchmark ids without a prediction
    std::vector<std::string> unmatched;      // prediction ids absent from the benchmark
    std::vector<ItemResult> items;           // benchmark order
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

std::string cell_key(Domain d, SamplePromptKind k, TaskTag t);

struct EvalConfig {
    bool use_judge = false;
    JudgeClient* judge = nullptr;
    std::string rubric;
    Embedder* embedder = nullptr; // defaults to HashedEmbedder
    /// Resolves relative image paths for judge renders. The file overload of
    /// run_eval defaults it to the benchmark's directory.
    std::filesystem::path image_root;
};

/// Errors: UnknownTask (from the benchmark), NoOverlap, InvalidArgument when
/// predictions name more than one model or judging is on without a client.
EvalReport run_eval(const std::filesystem::path& benchmark_path, const std::filesystem::path& predictions_path,
                    const EvalConfig& cfg);
EvalReport run_eval(const std::vector<InstructionSample>& bench, const std::string& bench_sha256,
                    const std::vector<PredictionRecord>& preds, const EvalConfig& cfg);

enum class ReportFormat { Json, Table };

std::string render_report(const EvalReport& report, ReportFormat format);
EvalReport report_from_json(std::string_view text);

/// Sum of cell supports plus missing count; equals benchmark_size for a valid report.
std::size_t accounted_samples(const EvalReport& report);

} // namespace vpkit
