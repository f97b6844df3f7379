#pragma once

#include "vpkit/construct.hpp"
#include "vpkit/error.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace vpkit {

enum class CurationAction { Accept, Reject, Edit };
enum class CurationStatus { Pending, Accepted, Rejected, Edited };

const char* to_string(CurationAction a);
CurationAction curation_action_from_string(std::string_view s); // InvalidArgument
const char* to_string(CurationStatus s);
CurationStatus curation_status_from_string(std::string_view s); // InvalidArgument

struct CurationDecision {
    std::int64_t timestamp_ms = 0; // filled from the store clock when 0
    std::string sample_id;
    std::string reviewer;
    CurationAction action = CurationAction::Accept;
    std::optional<InstructionSample> edit; // full replacement, Edit only
    std::string note;
    friend bool operator==(const CurationDecision&, const CurationDecision&) = default;
};

std::string to_json_line(const CurationDecision& d);
CurationDecision decision_from_json(std::string_view text); // InvalidArgument

/// Thrown for an edit payload that breaks sample invariants.
class BadEditError : public Error {
  public:
    BadEditError(const std::string& sample_id, std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

  private:
    std::vector<std::string> violations_;
};

struct CurationCounts {
    std::size_t total = 0;
    std::size_t pending = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t edited = 0;
    friend bool operator==(const CurationCounts&, const CurationCounts&) = default;
};

struct SampleState {
    CurationStatus status = CurationStatus::Pending;
    std::optional<InstructionSample> edited;
    std::string reviewer; // author of the deciding entry
    std::string note;
    friend bool operator==(const SampleState&, const SampleState&) = default;
};

/// Per-sample state from replaying `log` over `candidates`; later entries win.
/// Decisions for unknown ids are ignored.
std::map<std::string, SampleState> replay(const std::vector<InstructionSample>& candidates,
                                          const std::vector<CurationDecision>& log);

/// Parses a decision log. A line that does not parse (including a truncated
/// last line) throws CorruptLog naming the 1-based line number.
std::vector<CurationDecision> read_decision_log(const std::filesystem::path& path);

using CurationClock = std::function<std::int64_t()>; // milliseconds since the epoch
CurationClock system_clock_ms();

struct Lease {
    std::string reviewer;
    std::int64_t expires_ms = 0;
};

/// Review state over a fixed candidate set backed by an append-only decision
/// log. Every record() is appended and fsynced before it returns.
/// Thread-safe: readers share a lock, writers are serialized.
class CurationStore {
  public:
    static constexpr std::int64_t kLeaseMs = 10 * 60 * 1000;

    /// Loads candidates (DuplicateId, InvalidArgument) and replays the log,
    /// creating it when absent. Throws CorruptLog.
    CurationStore(const std::filesystem::path& candidates_path, const std::filesystem::path& log_path,
                  CurationClock clock = system_clock_ms());
    CurationStore(std::vector<InstructionSample> candidates, const std::filesystem::path& log_path,
                  CurationClock clock = system_clock_ms());
    ~CurationStore();
    CurationStore(const CurationStore&) = delete;
    CurationStore& operator=(const CurationStore&) = delete;

    /// Lowest-ordinal pending sample not leased to someone else; leases it to
    /// `reviewer` for kLeaseMs. nullopt when nothing is available.
    std::optional<InstructionSample> next_pending(const std::string& reviewer);

    /// Errors: NotFound, BadEdit (BadEditError), InvalidArgument (empty reviewer,
    /// edit payload on a non-edit action), IoFailure.
    SampleState record(CurationDecision d);

    /// Current form (edited when edited). NotFound.
    InstructionSample sample(const std::string& id) const;
    const InstructionSample& original(const std::string& id) const;
    SampleState state(const std::string& id) const;
    std::optional<Lease> lease(const std::string& id) const;
    CurationCounts counts() const;
    std::map<std::string, SampleState> snapshot() const;

    /// Samples whose status is in `statuses`, candidate order, edits applied.
    std::vector<InstructionSample> select(const std::set<CurationStatus>& statuses) const;
    std::string export_jsonl(const std::set<CurationStatus>& statuses) const;

    const std::vector<InstructionSample>& candidates() const { return candidates_; }
    const std::filesystem::path& candidates_dir() const { return candidates_dir_; }
    std::size_t log_entries() const;

  private:
    const InstructionSample& find(const std::string& id) const;

    std::vector<InstructionSample> candidates_;
    std::map<std::string, std::size_t> index_;
    std::filesystem::path candidates_dir_;
    std::filesystem::path log_path_;
    CurationClock clock_;
    int fd_ = -1;
    std::size_t log_entries_ = 0;
    mutable std::shared_mutex mu_;
    std::map<std::string, SampleState> state_;
    std::map<std::string, Lease> leases_;
};

/// "accepted" selects accepted and edited samples (the curated set); other
/// names select one status; "all" selects everything. InvalidArgument.
std::set<CurationStatus> export_filter(std::string_view name);

struct CurationServerOptions {
    std::filesystem::path static_dir; // mounted at / when set
};

/// HTTP front end. Routes: GET /api/stats, GET /api/queue/next?reviewer=,
/// GET /api/samples/{id}, POST /api/decisions, GET /api/export?status=,
/// GET /api/images/{id}?marks=1.
class CurationServer {
  public:
    CurationServer(CurationStore& store, CurationServerOptions opts = {});
    ~CurationServer();
    CurationServer(const CurationServer&) = delete;
    CurationServer& operator=(const CurationServer&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port. IoFailure.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace vpkit
