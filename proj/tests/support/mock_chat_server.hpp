#pragma once

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

namespace vpkit::testing {

/// Local chat-completions stand-in. Replies are popped from a script; when
/// the script is empty `fallback` answers. Tracks peak in-flight requests.
class MockChatServer {
  public:
    struct Reply {
        int status = 200;
        std::string content; // wrapped as choices[0].message.content when status == 200
    };

    MockChatServer() {
        server_.Post(R"(/v1/chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
            const int now = ++in_flight_;
            int peak = peak_in_flight_.load();
            while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
            }
            ++requests_;
            if (delay_.count() > 0)
                std::this_thread::sleep_for(delay_);
            Reply r;
            {
                std::lock_guard lock(mu_);
                last_body_ = req.body;
                last_auth_ = req.get_header_value("Authorization");
                if (!script_.empty()) {
                    r = script_.front();
                    script_.pop_front();
                } else {
                    r = fallback_ ? fallback_(req.body) : Reply{200, "Score: 7\nfine"};
                }
            }
            res.status = r.status;
            if (r.status == 200)
                res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", r.content}}}}}}}
                                    .dump(),
                                "application/json");
            else
                res.set_content(R"({"error": "scripted"})", "application/json");
            --in_flight_;
        });
        server_.Post(R"(/v1/embeddings)", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            const auto body = nlohmann::json::parse(req.body);
            const auto text = body.at("input").get<std::string>();
            std::vector<double> v(4, 0.0);
            for (char c : text)
                v[static_cast<unsigned char>(c) % 4] += 1.0;
            res.set_content(nlohmann::json{{"data", {{{"embedding", v}}}}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockChatServer() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

    void push(Reply r) {
        std::lock_guard lock(mu_);
        script_.push_back(std::move(r));
    }
    void set_fallback(std::function<Reply(const std::string&)> f) {
        std::lock_guard lock(mu_);
        fallback_ = std::move(f);
    }
    void set_delay(std::chrono::milliseconds d) { delay_ = d; }

    int requests() const { return requests_.load(); }
    int peak_in_flight() const { return peak_in_flight_.load(); }
    std::string last_body() {
        std::lock_guard lock(mu_);
        return last_body_;
    }
    std::string last_auth() {
        std::lock_guard lock(mu_);
        return last_auth_;
    }

  private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mu_;
    std::deque<Reply> script_;
    std::function<Reply(const std::string&)> fallback_;
    std::chrono::milliseconds delay_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_in_flight_{0};
    std::atomic<int> requests_{0};
    std::string last_body_;
    std::string last_auth_;
};

} // namespace vpkit::testing
