#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "vpkit/judge_client.hpp"

#include "json_io.hpp"
#include "vpkit/construct.hpp"
#include "vpkit/error.hpp"
#include "vpkit/som_render.hpp"

#include <httplib.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <semaphore>
#include <sstream>
#include <thread>

namespace vpkit {

using nlohmann::json;

namespace {

struct Endpoint {
    std::string scheme_host_port;
    std::string path_prefix;
};

Endpoint parse_base_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re))
        fail(ErrorCode::InvalidArgument, "base URL must look like http(s)://host[:port][/path], got " + url);
    std::string prefix = m[2].str();
    while (!prefix.empty() && prefix.back() == '/')
        prefix.pop_back();
    return {m[1].str(), prefix};
}

// Shared request machinery: bounded pool, retries, key lookup.
class Transport {
  public:
    explicit Transport(const JudgeConfig& cfg)
        : cfg_(cfg), endpoint_(parse_base_url(cfg.base_url)),
          slots_(static_cast<std::ptrdiff_t>(cfg.max_concurrency)),
          sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

    json post(const std::string& route, const json& body) {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (!key || !*key)
            fail(ErrorCode::AuthError, "environment variable " + cfg_.api_key_env + " is not set");
        const std::string payload = body.dump();
        const httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};
        std::string last_error;
        for (std::size_t attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
            if (attempt > 1) {
                ++retries;
                sleeper_(cfg_.backoff_base * (1LL << std::min<std::size_t>(attempt - 2, 20)));
            }
            httplib::Result res;
            {
                slots_.acquire();
                ++network_requests;
                httplib::Client cli(endpoint_.scheme_host_port);
                cli.set_connection_timeout(cfg_.timeout);
                cli.set_read_timeout(cfg_.timeout);
                cli.set_write_timeout(cfg_.timeout);
                res = cli.Post(endpoint_.path_prefix + route, headers, payload, "application/json");
                slots_.release();
            }
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 401 || res->status == 403)
                fail(ErrorCode::AuthError, "service rejected the credentials (HTTP " + std::to_string(res->status) + ")");
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                fail(ErrorCode::ServiceUnavailable,
                     "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
            try {
                return json::parse(res->body);
            } catch (const json::exception& e) {
                fail(ErrorCode::MalformedResponse, std::string("response is not JSON: ") + e.what());
            }
        }
        fail(ErrorCode::ServiceUnavailable,
             "gave up after " + std::to_string(cfg_.max_attempts) + " attempts, last: " + last_error);
    }

    void set_sleeper(std::function<void(std::chrono::milliseconds)> s) { sleeper_ = std::move(s); }

    std::atomic<std::size_t> network_requests{0};
    std::atomic<std::size_t> retries{0};

  private:
    const JudgeConfig& cfg_;
    Endpoint endpoint_;
    std::counting_semaphore<1024> slots_;
    std::function<void(std::chrono::milliseconds)> sleeper_;
};

std::optional<std::string> cache_read(const std::filesystem::path& p) {
    std::error_code ec;
    if (!std::filesystem::exists(p, ec))
        return std::nullopt;
    return detail::read_text_file(p);
}

void cache_write(const std::filesystem::path& p, const std::string& bytes) {
    std::filesystem::create_directories(p.parent_path());
    // unique temp name per thread so concurrent writers never share a file
    std::ostringstream tmp_name;
    tmp_name << p.filename().string() << ".tmp." << std::this_thread::get_id();
    const auto tmp = p.parent_path() / tmp_name.str();
    detail::write_file_atomic(tmp, bytes);
    std::filesystem::rename(tmp, p);
}

} // namespace

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

void validate(const JudgeConfig& cfg) {
    if (cfg.max_concurrency < 1 || cfg.max_concurrency > 1024)
        fail(ErrorCode::InvalidArgument, "max_concurrency must be in [1,1024]");
    if (cfg.max_attempts < 1)
        fail(ErrorCode::InvalidArgument, "max_attempts must be >= 1");
    parse_base_url(cfg.base_url);
}

struct JudgeClient::Impl {
    explicit Impl(const JudgeConfig& cfg) : transport(cfg) {}
    Transport transport;
    std::atomic<std::size_t> cache_hits{0};
};

JudgeClient::JudgeClient(JudgeConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    impl_ = std::make_unique<Impl>(cfg_);
}

JudgeClient::~JudgeClient() = default;

void JudgeClient::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) {
    impl_->transport.set_sleeper(std::move(sleeper));
}

std::string JudgeClient::cache_key(const std::string& prompt, const std::string& png) const {
    std::string material = "chat\n" + cfg_.model;
    material += '\0';
    material += prompt;
    material += '\0';
    material += sha256_hex(png);
    return sha256_hex(material);
}

JudgeStats JudgeClient::stats() const {
    return {impl_->transport.network_requests.load(), impl_->cache_hits.load(), impl_->transport.retries.load()};
}

std::string JudgeClient::complete(const std::string& prompt, const std::string& png) {
    const auto path = cfg_.cache_dir / (cache_key(prompt, png) + ".json");
    if (auto cached = cache_read(path)) {
        try {
            auto j = json::parse(*cached);
            ++impl_->cache_hits;
            return j.at("response").get<std::string>();
        } catch (const json::exception&) {
            spdlog::warn("ignoring unreadable cache entry {}", path.string());
        }
    }
    json content = json::array({{{"type", "text"}, {"text", prompt}}});
    if (!png.empty())
        content.push_back(
            {{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}});
    const json body{{"model", cfg_.model},
                    {"temperature", cfg_.temperature},
                    {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    const json reply = impl_->transport.post("/chat/completions", body);
    std::string text;
    try {
        text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedResponse, std::string("no message content in completion: ") + e.what());
    }
    cache_write(path, json{{"model", cfg_.model}, {"response", text}}.dump());
    return text;
}

std::optional<JudgeScore> parse_score(const std::string& response) {
    static const std::regex line_re(R"(^\s*\**\s*Score\s*\**\s*:\s*\**\s*(-?\d+)\s*(?:/\s*10)?\s*\**\s*$)",
                                    std::regex::icase);
    std::istringstream is(response);
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        std::smatch m;
        if (!std::regex_match(line, m, line_re))
            continue;
        const auto digits = m[1].str();
        if (digits.size() > 3)
            return std::nullopt;
        const int s = std::stoi(digits);
        if (s < 1 || s > 10)
            return std::nullopt;
        std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        const auto b = rest.find_first_not_of(" \t\r\n");
        const auto e = rest.find_last_not_of(" \t\r\n");
        return JudgeScore{s, b == std::string::npos ? std::string() : rest.substr(b, e - b + 1)};
    }
    return std::nullopt;
}

JudgeScore score_response(JudgeClient& client, const std::string& rubric, const std::string& som_png,
                          const std::string& question, const std::string& model_answer,
                          const std::optional<std::string>& reference) {
    const std::string prompt = fill_placeholders(
        rubric, {{"question", question}, {"answer", model_answer}, {"reference", reference.value_or("(none)")}});
    const std::string first = client.complete(prompt, som_png);
    if (auto s = parse_score(first))
        return *s;
    const std::string again = prompt + "\n\nYour previous reply did not begin with a valid \"Score: N\" line "
                                       "with N an integer from 1 to 10. Reply again in exactly that format.";
    const std::string second = client.complete(again, som_png);
    if (auto s = parse_score(second))
        return *s;
    fail(ErrorCode::UnscorableResponse, "no valid score after one re-ask; last reply: " + second.substr(0, 200));
}

double score_pair_ratio(const std::vector<int>& model_scores, const std::vector<int>& reference_scores) {
    if (model_scores.size() != reference_scores.size())
        fail(ErrorCode::Misaligned, "score lists differ in length (" + std::to_string(model_scores.size()) + " vs " +
                                        std::to_string(reference_scores.size()) + ")");
    long long m = 0, r = 0;
    for (std::size_t i = 0; i < model_scores.size(); ++i) {
        m += model_scores[i];
        r += reference_scores[i];
    }
    if (r <= 0)
        fail(ErrorCode::DegenerateReference, "reference scores sum to zero");
    return 100.0 * static_cast<double>(m) / static_cast<double>(r);
}

struct RemoteEmbedder::Impl {
    explicit Impl(JudgeConfig c) : cfg(std::move(c)), transport(cfg) {}
    JudgeConfig cfg;
    Transport transport;
};

RemoteEmbedder::RemoteEmbedder(JudgeConfig cfg, std::string model, std::size_t dimension)
    : model_(std::move(model)), dim_(dimension) {
    validate(cfg);
    if (dim_ == 0)
        fail(ErrorCode::InvalidArgument, "embedding dimension must be >= 1");
    impl_ = std::make_unique<Impl>(std::move(cfg));
}

RemoteEmbedder::~RemoteEmbedder() = default;

std::vector<double> RemoteEmbedder::embed(std::string_view text) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos)
        fail(ErrorCode::EmptyText, "cannot embed empty text");
    std::string material = "embed\n" + model_;
    material += '\0';
    material += text;
    const auto path = impl_->cfg.cache_dir / (sha256_hex(material) + ".json");
    json reply;
    if (auto cached = cache_read(path)) {
        reply = json::parse(*cached);
    } else {
        reply = impl_->transport.post("/embeddings", {{"model", model_}, {"input", std::string(text)}});
        cache_write(path, reply.dump());
    }
    std::vector<double> v;
    try {
        v = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedResponse, std::string("no embedding in reply: ") + e.what());
    }
    if (v.size() != dim_)
        fail(ErrorCode::MalformedResponse,
             "embedding has dimension " + std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    double norm = 0.0;
    for (double x : v)
        norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0))
        fail(ErrorCode::MalformedResponse, "zero embedding vector");
    for (double& x : v)
        x /= norm;
    return v;
}

} // namespace vpkit
