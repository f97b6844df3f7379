#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "vpkit/curation_service.hpp"

#include "json_io.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <mutex>
#include <unistd.h>

namespace vpkit {

using detail::ojson;

const char* to_string(CurationAction a) {
    switch (a) {
    case CurationAction::Accept:
        return "accept";
    case CurationAction::Reject:
        return "reject";
    case CurationAction::Edit:
        return "edit";
    }
    return "?";
}

CurationAction curation_action_from_string(std::string_view s) {
    for (auto a : {CurationAction::Accept, CurationAction::Reject, CurationAction::Edit})
        if (s == to_string(a))
            return a;
    fail(ErrorCode::InvalidArgument, "unknown action '" + std::string(s) + "'");
}

const char* to_string(CurationStatus s) {
    switch (s) {
    case CurationStatus::Pending:
        return "pending";
    case CurationStatus::Accepted:
        return "accepted";
    case CurationStatus::Rejected:
        return "rejected";
    case CurationStatus::Edited:
        return "edited";
    }
    return "?";
}

CurationStatus curation_status_from_string(std::string_view s) {
    for (auto x : {CurationStatus::Pending, CurationStatus::Accepted, CurationStatus::Rejected, CurationStatus::Edited})
        if (s == to_string(x))
            return x;
    fail(ErrorCode::InvalidArgument, "unknown status '" + std::string(s) + "'");
}

std::set<CurationStatus> export_filter(std::string_view name) {
    if (name == "accepted")
        return {CurationStatus::Accepted, CurationStatus::Edited};
    if (name == "all")
        return {CurationStatus::Pending, CurationStatus::Accepted, CurationStatus::Rejected, CurationStatus::Edited};
    return {curation_status_from_string(name)};
}

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v)
        out += (out.empty() ? "" : "; ") + s;
    return out;
}

ojson decision_to_ojson(const CurationDecision& d) {
    ojson j;
    j["ts"] = d.timestamp_ms;
    j["sample_id"] = d.sample_id;
    j["reviewer"] = d.reviewer;
    j["action"] = to_string(d.action);
    j["note"] = d.note;
    if (d.edit)
        j["edit"] = ojson::parse(to_json_line(*d.edit));
    return j;
}

} // namespace

BadEditError::BadEditError(const std::string& sample_id, std::vector<std::string> violations)
    : Error(ErrorCode::BadEdit, "edit of '" + sample_id + "' rejected: " + join(violations)),
      violations_(std::move(violations)) {}

std::string to_json_line(const CurationDecision& d) { return decision_to_ojson(d).dump(); }

CurationDecision decision_from_json(std::string_view text) {
    CurationDecision d;
    try {
        const auto j = ojson::parse(text);
        d.timestamp_ms = j.value("ts", std::int64_t{0});
        d.sample_id = j.at("sample_id").get<std::string>();
        d.reviewer = j.at("reviewer").get<std::string>();
        d.action = curation_action_from_string(j.at("action").get<std::string>());
        d.note = j.value("note", std::string());
        if (j.contains("edit") && !j.at("edit").is_null()) {
            try {
                d.edit = sample_from_json_line(j.at("edit").dump());
            } catch (const Error& e) {
                throw BadEditError(d.sample_id, {e.what()});
            }
        }
    } catch (const ojson::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("malformed decision: ") + e.what());
    }
    return d;
}

std::map<std::string, SampleState> replay(const std::vector<InstructionSample>& candidates,
                                          const std::vector<CurationDecision>& log) {
    std::map<std::string, SampleState> state;
    for (const auto& c : candidates)
        state.emplace(c.sample_id, SampleState{});
    for (const auto& d : log) {
        const auto it = state.find(d.sample_id);
        if (it == state.end())
            continue;
        SampleState s;
        s.reviewer = d.reviewer;
        s.note = d.note;
        switch (d.action) {
        case CurationAction::Accept:
            s.status = CurationStatus::Accepted;
            break;
        case CurationAction::Reject:
            s.status = CurationStatus::Rejected;
            break;
        case CurationAction::Edit:
            s.status = CurationStatus::Edited;
            s.edited = d.edit;
            break;
        }
        it->second = std::move(s);
    }
    return state;
}

std::vector<CurationDecision> read_decision_log(const std::filesystem::path& path) {
    std::vector<CurationDecision> out;
    const std::string text = detail::read_text_file(path);
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        const auto nl = text.find('\n', pos);
        const bool complete = nl != std::string::npos;
        const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
        pos = complete ? nl + 1 : text.size();
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            if (!complete && !line.empty())
                fail(ErrorCode::CorruptLog, path.string() + ":" + std::to_string(line_no) + ": truncated line");
            continue;
        }
        try {
            out.push_back(decision_from_json(line));
        } catch (const Error& e) {
            fail(ErrorCode::CorruptLog, path.string() + ":" + std::to_string(line_no) + ": " +
                                            (complete ? "" : "truncated line; ") + e.what());
        }
    }
    return out;
}

CurationClock system_clock_ms() {
    return [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    };
}

// --- store -------------------------------------------------------------------------

CurationStore::CurationStore(const std::filesystem::path& candidates_path, const std::filesystem::path& log_path,
                             CurationClock clock)
    : CurationStore(load_jsonl(candidates_path), log_path, std::move(clock)) {
    candidates_dir_ = candidates_path.parent_path();
}

CurationStore::CurationStore(std::vector<InstructionSample> candidates, const std::filesystem::path& log_path,
                             CurationClock clock)
    : candidates_(std::move(candidates)), log_path_(log_path), clock_(std::move(clock)) {
    for (std::size_t i = 0; i < candidates_.size(); ++i)
        if (!index_.emplace(candidates_[i].sample_id, i).second)
            fail(ErrorCode::DuplicateId, "candidate '" + candidates_[i].sample_id + "' appears twice");

    std::vector<CurationDecision> log;
    bool needs_newline = false;
    if (std::filesystem::exists(log_path_)) {
        log = read_decision_log(log_path_);
        const auto size = std::filesystem::file_size(log_path_);
        if (size > 0) {
            // a complete record cut just before its newline still parses
            const std::string text = detail::read_text_file(log_path_);
            needs_newline = text.back() != '\n';
        }
    } else if (log_path_.has_parent_path()) {
        std::filesystem::create_directories(log_path_.parent_path());
    }
    for (const auto& d : log)
        if (!index_.count(d.sample_id))
            spdlog::warn("decision log names unknown sample '{}'", d.sample_id);
    state_ = replay(candidates_, log);
    log_entries_ = log.size();

    fd_ = ::open(log_path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0)
        fail(ErrorCode::IoFailure, "cannot open log " + log_path_.string() + ": " + std::strerror(errno));
    if (needs_newline && ::write(fd_, "\n", 1) != 1)
        fail(ErrorCode::IoFailure, "cannot terminate last log line");
}

CurationStore::~CurationStore() {
    if (fd_ >= 0)
        ::close(fd_);
}

const InstructionSample& CurationStore::find(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end())
        fail(ErrorCode::NotFound, "no candidate '" + id + "'");
    return candidates_[it->second];
}

std::optional<InstructionSample> CurationStore::next_pending(const std::string& reviewer) {
    const std::int64_t now = clock_();
    std::unique_lock lock(mu_);
    for (const auto& c : candidates_) {
        if (state_.at(c.sample_id).status != CurationStatus::Pending)
            continue;
        auto it = leases_.find(c.sample_id);
        if (it != leases_.end() && it->second.reviewer != reviewer && it->second.expires_ms > now)
            continue;
        leases_[c.sample_id] = {reviewer, now + kLeaseMs};
        return c;
    }
    return std::nullopt;
}

SampleState CurationStore::record(CurationDecision d) {
    const InstructionSample& original = find(d.sample_id);
    if (d.reviewer.empty())
        fail(ErrorCode::InvalidArgument, "reviewer id is empty");
    if (d.action == CurationAction::Edit) {
        if (!d.edit)
            throw BadEditError(d.sample_id, {"edit decision without a replacement sample"});
        auto v = sample_violations(*d.edit);
        if (d.edit->sample_id != original.sample_id)
            v.push_back("edited sample_id '" + d.edit->sample_id + "' differs from '" + original.sample_id + "'");
        if (!v.empty())
            throw BadEditError(d.sample_id, std::move(v));
    } else if (d.edit) {
        fail(ErrorCode::InvalidArgument, "only edit decisions carry a replacement sample");
    }
    if (d.timestamp_ms == 0)
        d.timestamp_ms = clock_();

    const std::string line = to_json_line(d) + "\n";
    std::unique_lock lock(mu_);
    std::size_t off = 0;
    while (off < line.size()) {
        const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            fail(ErrorCode::IoFailure, std::string("log append failed: ") + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0)
        fail(ErrorCode::IoFailure, std::string("log fsync failed: ") + std::strerror(errno));
    ++log_entries_;
    auto next = replay({original}, {d}).at(d.sample_id);
    state_[d.sample_id] = next;
    leases_.erase(d.sample_id);
    return next;
}

InstructionSample CurationStore::sample(const std::string& id) const {
    const auto& orig = find(id);
    std::shared_lock lock(mu_);
    const auto& s = state_.at(id);
    return s.edited ? *s.edited : orig;
}

const InstructionSample& CurationStore::original(const std::string& id) const { return find(id); }

SampleState CurationStore::state(const std::string& id) const {
    find(id);
    std::shared_lock lock(mu_);
    return state_.at(id);
}

std::optional<Lease> CurationStore::lease(const std::string& id) const {
    std::shared_lock lock(mu_);
    const auto it = leases_.find(id);
    if (it == leases_.end() || it->second.expires_ms <= clock_())
        return std::nullopt;
    return it->second;
}

CurationCounts CurationStore::counts() const {
    std::shared_lock lock(mu_);
    CurationCounts c;
    c.total = state_.size();
    for (const auto& [_, s] : state_) {
        switch (s.status) {
        case CurationStatus::Pending:
            ++c.pending;
            break;
        case CurationStatus::Accepted:
            ++c.accepted;
            break;
        case CurationStatus::Rejected:
            ++c.rejected;
            break;
        case CurationStatus::Edited:
            ++c.edited;
            break;
        }
    }
    return c;
}

std::map<std::string, SampleState> CurationStore::snapshot() const {
    std::shared_lock lock(mu_);
    return state_;
}

std::size_t CurationStore::log_entries() const {
    std::shared_lock lock(mu_);
    return log_entries_;
}

std::vector<InstructionSample> CurationStore::select(const std::set<CurationStatus>& statuses) const {
    std::shared_lock lock(mu_);
    std::vector<InstructionSample> out;
    for (const auto& c : candidates_) {
        const auto& s = state_.at(c.sample_id);
        if (statuses.count(s.status))
            out.push_back(s.edited ? *s.edited : c);
    }
    return out;
}

std::string CurationStore::export_jsonl(const std::set<CurationStatus>& statuses) const {
    const auto samples = select(statuses);
    for (const auto& s : samples)
        validate(s);
    return emit_jsonl_string(samples);
}

// --- HTTP ----------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const ojson& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const Error& e) {
    ojson j;
    j["error"] = std::string(error_code_name(e.code()));
    j["message"] = e.what();
    if (const auto* be = dynamic_cast<const BadEditError*>(&e))
        j["violations"] = be->violations();
    send_json(res, status, j);
}

int http_status(ErrorCode c) {
    switch (c) {
    case ErrorCode::NotFound:
        return 404;
    case ErrorCode::BadEdit:
        return 409;
    case ErrorCode::InvalidArgument:
    case ErrorCode::MalformedAnnotation:
    case ErrorCode::UnknownTask:
    case ErrorCode::UnknownDomain:
        return 400;
    default:
        return 500;
    }
}

ojson counts_json(const CurationCounts& c) {
    ojson j;
    j["total"] = c.total;
    j["pending"] = c.pending;
    j["accepted"] = c.accepted;
    j["rejected"] = c.rejected;
    j["edited"] = c.edited;
    return j;
}

ojson state_json(const SampleState& s) {
    ojson j;
    j["status"] = to_string(s.status);
    j["reviewer"] = s.reviewer;
    j["note"] = s.note;
    return j;
}

} // namespace

struct CurationServer::Impl {
    CurationStore& store;
    CurationServerOptions opts;
    httplib::Server server;

    Impl(CurationStore& s, CurationServerOptions o) : store(s), opts(std::move(o)) { routes(); }

    template <class F> auto guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const Error& e) {
                send_error(res, http_status(e.code()), e);
            } catch (const std::exception& e) {
                send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
            }
        };
    }

    void routes() {
        server.Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
                       ojson j = counts_json(store.counts());
                       j["log_entries"] = store.log_entries();
                       send_json(res, 200, j);
                   }));
        server.Get("/api/queue/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto reviewer = req.get_param_value("reviewer");
                       if (reviewer.empty())
                           fail(ErrorCode::InvalidArgument, "reviewer query parameter is required");
                       const auto s = store.next_pending(reviewer);
                       if (!s) {
                           res.status = 204;
                           return;
                       }
                       ojson j;
                       j["sample"] = ojson::parse(to_json_line(*s));
                       if (const auto l = store.lease(s->sample_id))
                           j["lease_expires_ms"] = l->expires_ms;
                       j["counts"] = counts_json(store.counts());
                       send_json(res, 200, j);
                   }));
        server.Get(R"(/api/samples/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string id = req.matches[1];
                       ojson j;
                       j["sample"] = ojson::parse(to_json_line(store.sample(id)));
                       j["original"] = ojson::parse(to_json_line(store.original(id)));
                       j["state"] = state_json(store.state(id));
                       send_json(res, 200, j);
                   }));
        server.Post("/api/decisions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const auto s = store.record(decision_from_json(req.body));
                        ojson j = state_json(s);
                        j["counts"] = counts_json(store.counts());
                        send_json(res, 200, j);
                    }));
        server.Get("/api/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string name =
                           req.has_param("status") ? req.get_param_value("status") : std::string("accepted");
                       res.set_content(store.export_jsonl(export_filter(name)), "application/x-ndjson");
                   }));
        server.Get(R"(/api/images/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto s = store.sample(req.matches[1]);
                       std::filesystem::path p = s.image_path;
                       if (p.is_relative())
                           p = store.candidates_dir() / p;
                       if (!std::filesystem::exists(p))
                           fail(ErrorCode::NotFound, "image " + p.string() + " is missing");
                       const bool marks = req.get_param_value("marks") == "1";
                       const std::string png = marks && !s.prompts.empty()
                                                   ? render_marks(p, s.prompts, s.domain == Domain::Ocr
                                                                                    ? ocr_style()
                                                                                    : natural_style())
                                                         .png
                                                   : encode_png(load_png(p));
                       res.set_content(png, "image/png");
                   }));
        if (!opts.static_dir.empty() && !server.set_mount_point("/", opts.static_dir.string()))
            fail(ErrorCode::IoFailure, "cannot mount " + opts.static_dir.string());
    }
};

CurationServer::CurationServer(CurationStore& store, CurationServerOptions opts)
    : impl_(std::make_unique<Impl>(store, std::move(opts))) {}

CurationServer::~CurationServer() { stop(); }

int CurationServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : impl_->server.bind_to_port(host, port)
                                                                             ? port
                                                                             : -1;
    if (bound < 0)
        fail(ErrorCode::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void CurationServer::listen() { impl_->server.listen_after_bind(); }

void CurationServer::stop() {
    if (impl_ && impl_->server.is_running())
        impl_->server.stop();
}

} // namespace vpkit
