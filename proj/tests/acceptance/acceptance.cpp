// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
#include "vpkit/augment.hpp"
#include "vpkit/bench_runner.hpp"
#include "vpkit/construct.hpp"
#include "vpkit/curation_service.hpp"
#include "vpkit/error.hpp"
#include "vpkit/judge_client.hpp"
#include "vpkit/metrics.hpp"
#include "vpkit/som_render.hpp"
#include "vpkit/vp_encoder.hpp"

#include "../support/mock_chat_server.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

using namespace vpkit;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kFixtures = VPKIT_FIXTURE_DIR;
const fs::path kTemplates = VPKIT_TEMPLATE_DIR;
const std::string kCli = VPKIT_CLI_PATH;

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects the first failed expectation of a criterion.
class Check {
  public:
    void expect(bool ok, const std::string& what) {
        if (!ok && pass_) {
            pass_ = false;
            failure_ = what;
        }
    }
    bool ok() const { return pass_; }
    Outcome done(std::string detail) const { return pass_ ? Outcome{true, std::move(detail)} : Outcome{false, failure_}; }

  private:
    bool pass_ = true;
    std::string failure_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class Scratch {
  public:
    explicit Scratch(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("vpkit-accept-" + std::to_string(::getpid()) + "-" + tag);
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    fs::path operator/(const std::string& name) const { return path_ / name; }
    const fs::path& path() const { return path_; }

  private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// --- subprocesses ----------------------------------------------------------------

[[noreturn]] void exec_cli(const std::vector<std::string>& args) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(kCli.c_str()));
    for (const auto& a : args)
        argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(kCli.c_str(), argv.data());
    std::_Exit(127);
}

/// Runs the CLI to completion with stdout/stderr sent to `log`; returns the exit code.
int run_cli(const std::vector<std::string>& args, const fs::path& log) {
    std::cout.flush();
    const pid_t pid = ::fork();
    if (pid == 0) {
        const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        ::dup2(fd, 1);
        ::dup2(fd, 2);
        exec_cli(args);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// `vpkit curate serve` child; the port comes from its "listening on" line.
class ServeProcess {
  public:
    ServeProcess(const fs::path& candidates, const fs::path& log) {
        int fds[2];
        if (::pipe(fds) != 0)
            throw std::runtime_error("pipe failed");
        std::cout.flush();
        pid_ = ::fork();
        if (pid_ == 0) {
            ::dup2(fds[1], 1);
            ::close(fds[0]);
            ::close(fds[1]);
            const int devnull = ::open("/dev/null", O_WRONLY);
            ::dup2(devnull, 2);
            exec_cli({"curate", "serve", "--candidates", candidates.string(), "--log", log.string(), "--addr",
                      "127.0.0.1:0"});
        }
        ::close(fds[1]);
        out_ = ::fdopen(fds[0], "r");
        char line[256];
        while (std::fgets(line, sizeof line, out_)) {
            const std::string s(line);
            const auto at = s.find("listening on ");
            if (at != std::string::npos) {
                port_ = std::stoi(s.substr(s.rfind(':') + 1));
                break;
            }
        }
        if (port_ == 0) {
            kill(SIGKILL);
            throw std::runtime_error("serve did not report a port");
        }
    }
    ~ServeProcess() {
        if (pid_ > 0)
            kill(SIGKILL);
        if (out_)
            std::fclose(out_);
    }
    int port() const { return port_; }
    /// Sends `sig` and reaps the child; returns the raw wait status.
    int kill(int sig) {
        int status = 0;
        if (pid_ > 0) {
            ::kill(pid_, sig);
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
        return status;
    }

  private:
    pid_t pid_ = -1;
    FILE* out_ = nullptr;
    int port_ = 0;
};

// --- 1. encoder gradients -----------------------------------------------------------

Outcome encoder_grad_check() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    EncoderConfig minimal;
    minimal.num_frequencies = 1;
    minimal.hidden_dim = 1;
    minimal.llm_dim = 1;
    minimal.capacity = 1;
    double worst = 0.0;
    std::size_t runs = 0;
    for (const auto& cfg : {EncoderConfig{}, minimal}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto r = grad_check(cfg, seed);
            worst = std::max(worst, r.max_relative_error);
            ++runs;
            c.expect(r.max_relative_error < 1e-4, "seed " + std::to_string(seed) + " rel err " +
                                                      fmt(r.max_relative_error) + " in " + r.worst_tensor);
            c.expect(r.max_frozen_gradient == 0.0, "frozen Fourier matrix received a gradient");
            c.expect(r.entries_checked > 0, "no entries checked");
        }
    }
    const double secs = seconds_since(t0);
    c.expect(secs < 60.0, "took " + fmt(secs) + " s");
    return c.done(std::to_string(runs) + " runs, max rel err " + fmt(worst) + ", " + fmt(secs) + " s");
}

// --- 2. encoder contracts -----------------------------------------------------------

VisualPromptSet random_prompts(std::size_t n, DeterministicRng& rng) {
    VisualPromptSet out;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 0.8 * rng.uniform(), y = 0.8 * rng.uniform();
        if (rng.index(2) == 0)
            out.push_back(PointPrompt{x, y});
        else
            out.push_back(BoxPrompt{x, y, x + 0.05 + 0.15 * rng.uniform(), y + 0.05 + 0.15 * rng.uniform()});
    }
    return out;
}

Outcome encoder_contracts() {
    Check c;
    const EncoderConfig cfg;
    const auto params = init_params(cfg);
    DeterministicRng rng(2024);
    const Eigen::Index C = cfg.capacity;
    for (std::size_t n = 1; n <= static_cast<std::size_t>(C); ++n) {
        const auto prompts = random_prompts(n, rng);
        const auto a = embed_prompts(prompts, params, cfg);
        c.expect(a.tokens.rows() == C + 2 && a.tokens.cols() == cfg.llm_dim, "shape at N=" + std::to_string(n));
        for (Eigen::Index k = 0; k < C; ++k)
            c.expect(a.validity[k] == (k < static_cast<Eigen::Index>(n)), "validity at N=" + std::to_string(n));
        for (Eigen::Index k = static_cast<Eigen::Index>(n) + 1; k < C; ++k)
            c.expect(a.tokens.row(1 + k) == a.tokens.row(1 + static_cast<Eigen::Index>(n)),
                     "invalid slots differ at N=" + std::to_string(n));

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i)
            std::swap(perm[i - 1], perm[rng.index(i)]);
        VisualPromptSet shuffled;
        for (auto p : perm)
            shuffled.push_back(prompts[p]);
        const auto b = embed_prompts(shuffled, params, cfg);
        for (std::size_t i = 0; i < n; ++i)
            c.expect(b.tokens.row(1 + static_cast<Eigen::Index>(i)) == a.tokens.row(1 + static_cast<Eigen::Index>(perm[i])),
                     "permutation at N=" + std::to_string(n));
        for (Eigen::Index k = static_cast<Eigen::Index>(n) + 1; k < C + 2; ++k)
            c.expect(b.tokens.row(k) == a.tokens.row(k), "non-prompt row moved under permutation");
        c.expect(b.tokens.row(0) == a.tokens.row(0), "start token moved under permutation");
    }

    Scratch dir("enc");
    save_params(params, cfg, dir / "a.bin");
    const auto loaded = load_params(dir / "a.bin");
    c.expect(loaded.params == params, "loaded params differ");
    save_params(loaded.params, loaded.config, dir / "b.bin");
    c.expect(slurp(dir / "a.bin") == slurp(dir / "b.bin"), "re-saved file differs");
    return c.done("N=1.." + std::to_string(C) + ", rows " + std::to_string(C + 2) + "x" +
                  std::to_string(cfg.llm_dim) + ", params file bit-exact");
}

// --- 3. augmentation ---------------------------------------------------------------------

Outcome augmentation() {
    Check c;
    const BoxPrompt box{0.2, 0.2, 0.6, 0.6};
    const auto same = jitter_box(box, {0.0, 0.01}, 99);
    c.expect(same == box, "sigma 0 is not the identity");

    const int n = 10000;
    const double sigma = 0.1;
    double sx = 0, sy = 0, sxx = 0;
    for (int seed = 0; seed < n; ++seed) {
        const auto out = jitter_box(box, {sigma, 0.01}, static_cast<std::uint64_t>(seed));
        bool valid = true;
        try {
            validate(out);
        } catch (const Error&) {
            valid = false;
        }
        c.expect(valid && out.x1 >= 0 && out.y1 >= 0 && out.x2 <= 1 && out.y2 <= 1,
                 "invalid box at seed " + std::to_string(seed));
        const double dx = (out.x1 + out.x2) / 2 - 0.4, dy = (out.y1 + out.y2) / 2 - 0.4;
        sx += dx;
        sy += dy;
        sxx += dx * dx;
    }
    const double mx = sx / n, my = sy / n;
    const double sd = std::sqrt(sxx / n - mx * mx);
    const double target = sigma * box.width();
    c.expect(std::abs(mx) <= 0.004 && std::abs(my) <= 0.004, "mean offset " + fmt(mx) + "," + fmt(my));
    c.expect(std::abs(sd - target) <= 0.05 * target, "std dx " + fmt(sd) + " vs " + fmt(target));

    const auto g = jitter_box(box, {0.1, 0.01}, 42);
    c.expect(std::abs(g.x1 - 0.23152290356657212) < 1e-12 && std::abs(g.y1 - 0.17757427738743037) < 1e-12 &&
                 std::abs(g.x2 - 0.6390570089312093) < 1e-12 && std::abs(g.y2 - 0.5863577325550609) < 1e-12,
             "seed 42 golden mismatch");
    return c.done("mean offset (" + fmt(mx) + ", " + fmt(my) + "), std dx " + fmt(sd) + " vs " + fmt(target));
}

// --- 4. construction pipeline ---------------------------------------------------------------

Outcome pipeline() {
    Check c;
    const auto templates = load_templates(kTemplates);
    const auto records = ingest_manifest(kFixtures / "dataset/manifest.json").records;

    std::size_t inverted = 0;
    for (const auto& r : records) {
        if (r.links.empty())
            continue;
        const auto s = invert_grounding(r, templates);
        ++inverted;
        std::vector<std::string> order;
        for (const auto& l : r.links)
            for (const auto& id : l.region_ids)
                if (std::find(order.begin(), order.end(), id) == order.end())
                    order.push_back(id);
        c.expect(s.prompts.size() == order.size(), r.record_id + ": mark count != linked region count");
        const auto& text = s.last(TurnRole::Assistant)->text;
        std::size_t annotations = 0;
        for (std::size_t at = text.find(" (Mark "); at != std::string::npos; at = text.find(" (Mark ", at + 1))
            ++annotations;
        c.expect(annotations == r.links.size(), r.record_id + ": annotation count != link count");
        int high = 0;
        for (int id : mark_ids_in(text)) {
            c.expect(id <= high + 1, r.record_id + ": marks out of order");
            high = std::max(high, id);
        }
        for (std::size_t k = 0; k < order.size() && k < s.prompts.size(); ++k) {
            const auto* reg = r.find_region(order[k]);
            const auto* b = std::get_if<BoxPrompt>(&s.prompts[k]);
            c.expect(reg && b && *b == reg->box, r.record_id + ": mark " + std::to_string(k + 1) + " box");
        }
    }
    c.expect(inverted > 0, "fixture has no grounded captions");

    std::size_t qa_turns = 0;
    for (const auto& r : records)
        for (const auto& s : reconstruct_qa(r))
            for (const auto& t : s.turns) {
                ++qa_turns;
                c.expect(!contains_coordinate_literal(t.text), s.sample_id + ": coordinate literal left");
            }
    c.expect(qa_turns > 0, "fixture has no grounding QA");

    Scratch dir("pipe");
    const auto manifest = (kFixtures / "dataset/manifest.json").string();
    int rc1 = run_cli({"construct", "all", "--manifest", manifest, "--out", (dir / "a.jsonl").string(), "--seed", "7"},
                      dir / "a.log");
    int rc2 = run_cli({"construct", "all", "--manifest", manifest, "--out", (dir / "b.jsonl").string(), "--seed", "7"},
                      dir / "b.log");
    c.expect(rc1 == 0 && rc2 == 0, "construct all exited " + std::to_string(rc1) + "/" + std::to_string(rc2));
    const auto a = slurp(dir / "a.jsonl"), b = slurp(dir / "b.jsonl");
    c.expect(!a.empty() && a == b, "construct all is not byte-deterministic");

    std::size_t n = 0;
    if (c.ok()) {
        const auto samples = load_jsonl(dir / "a.jsonl");
        n = samples.size();
        c.expect(emit_jsonl_string(samples) == a, "JSONL re-emit differs");
        std::istringstream lines(a);
        std::string line;
        std::size_t i = 0;
        while (std::getline(lines, line))
            c.expect(i < samples.size() && sample_from_json_line(line) == samples[i++], "JSONL parse mismatch");
    }
    return c.done(std::to_string(inverted) + " inverted, " + std::to_string(qa_turns) + " qa turns clean, " +
                  std::to_string(n) + " samples identical across runs");
}

// --- 5. template fidelity ------------------------------------------------------------------------

Outcome template_fidelity() {
    Check c;
    const auto templates = load_templates(kTemplates);
    const auto records = ingest_manifest(kFixtures / "dataset/manifest.json").records;
    const AnnotationRecord* det2 = nullptr;
    for (const auto& r : records)
        if (r.record_id == "det:2")
            det2 = &r;
    c.expect(det2 != nullptr, "record det:2 missing");
    if (det2) {
        const auto p = assemble_gpt4v_prompt(*det2, Domain::Natural, {}, templates);
        c.expect(p.text.find("<Mark 1>: dog\n<Mark 2>: bed\n<Mark 3>: mattress\n<Mark 4>: pillow") != std::string::npos,
                 "category block");
        c.expect(p.text.find(templates.domain(Domain::Natural).role_text) != std::string::npos, "role block");
    }
    const auto roles = templates.domain(Domain::Natural).roles;
    const auto out = parse_gpt4v_response(slurp(kFixtures / "gpt4v_response_natural.txt"), roles, 4);
    c.expect(out.size() == 4, "role count");
    if (out.size() == 4) {
        c.expect(out[0].marks.size() == 4 && out[1].marks.size() == 4, "mark roles");
        c.expect(out[2].relations.size() == 4, "relation count");
        c.expect(out[3].qa.size() == 4, "qa count");
        c.expect(out[0].marks.count(1) && out[0].marks.at(1) == "Light brown dog sleeping peacefully on a bed.",
                 "first short description");
    }
    return c.done("category block exact, worked response parsed 4/4/4/4");
}

// --- 6. metric oracles -------------------------------------------------------------------------------

// Brute-force CIDEr over whitespace-tokenized lowercase text.
double oracle_cider(const std::map<std::string, std::string>& cand,
                    const std::map<std::string, std::vector<std::string>>& refs, const std::string& id) {
    auto split = [](const std::string& s) {
        std::vector<std::string> w;
        std::istringstream is(s);
        for (std::string t; is >> t;)
            w.push_back(t);
        return w;
    };
    auto grams = [&](const std::string& s, int n) {
        const auto w = split(s);
        std::vector<std::string> g;
        for (std::size_t i = 0; i + n <= w.size(); ++i) {
            std::string x = w[i];
            for (int k = 1; k < n; ++k)
                x += " " + w[i + k];
            g.push_back(x);
        }
        return g;
    };
    const double N = static_cast<double>(refs.size());
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        auto idf = [&](const std::string& g) {
            double df = 0;
            for (const auto& [_, rs] : refs) {
                bool hit = false;
                for (const auto& r : rs) {
                    const auto gr = grams(r, n);
                    hit = hit || std::find(gr.begin(), gr.end(), g) != gr.end();
                }
                df += hit ? 1 : 0;
            }
            return std::log(N) - std::log(std::max(1.0, df));
        };
        auto vec = [&](const std::string& s) {
            std::map<std::string, double> v;
            for (const auto& g : grams(s, n))
                v[g] += 1.0;
            for (auto& [g, x] : v)
                x *= idf(g);
            return v;
        };
        const auto cv = vec(cand.at(id));
        double acc = 0.0;
        for (const auto& r : refs.at(id)) {
            const auto rv = vec(r);
            double dot = 0, a = 0, b = 0;
            for (const auto& [g, x] : cv) {
                a += x * x;
                if (rv.count(g))
                    dot += x * rv.at(g);
            }
            for (const auto& [g, y] : rv)
                b += y * y;
            acc += (a > 0 && b > 0) ? dot / std::sqrt(a * b) : 0.0;
        }
        total += acc / static_cast<double>(refs.at(id).size());
    }
    return 10.0 * total / 4.0;
}

Outcome metric_oracles() {
    Check c;
    const std::map<std::string, std::string> cand{{"a", "a man rides a brown horse"},
                                                  {"b", "two dogs play in the snow"},
                                                  {"c", "a red bus on a city street"},
                                                  {"d", "a plate of food on a table"},
                                                  {"e", "a man rides a bike down the street"}};
    const std::map<std::string, std::vector<std::string>> refs{
        {"a", {"a man riding a brown horse", "a person rides a horse in a field"}},
        {"b", {"two dogs playing in snow", "dogs run through the snow"}},
        {"c", {"a red double decker bus on a street", "a bus driving down a city street"}},
        {"d", {"a plate of food sits on a wooden table", "food on a white plate"}},
        {"e", {"a man riding a bike on the street", "a cyclist rides down a road"}}};
    const auto got = cider(cand, refs);
    double worst = 0.0, sum = 0.0;
    for (const auto& [id, _] : cand) {
        const double want = oracle_cider(cand, refs, id);
        sum += want;
        worst = std::max(worst, std::abs(got.per_item.at(id) - want));
    }
    worst = std::max(worst, std::abs(got.corpus - sum / 5.0));
    c.expect(worst < 1e-6, "CIDEr deviates from oracle by " + fmt(worst));

    c.expect(std::abs(semantic_iou("red car", "red truck") - 1.0 / 3.0) < 1e-12, "s-iou partial");
    c.expect(std::abs(semantic_iou("a red car", "red car") - 2.0 / 3.0) < 1e-12, "s-iou subset");
    c.expect(semantic_iou("Red car.", "red car") == 1.0, "s-iou identical");
    c.expect(semantic_iou("blue boat", "red car") == 0.0, "s-iou disjoint");
    c.expect(std::abs(semantic_iou("big dog", "dog") - 0.5) < 1e-12, "s-iou half");

    c.expect(std::abs(meteor_lite("the cat sat on the mat", {"the cat sat on the mat"}) - (1.0 - 0.5 / 216.0)) < 1e-9,
             "meteor identical");
    c.expect(std::abs(meteor_lite("on the mat the cat sat", {"the cat sat on the mat"}) - (1.0 - 0.5 / 27.0)) < 1e-9,
             "meteor scrambled");
    c.expect(std::abs(meteor_lite("the big dogs", {"a big dog"}) - (2.0 / 3.0) * (1.0 - 0.5 / 8.0)) < 1e-9,
             "meteor stem stage");

    struct Case {
        BinaryChoiceItem item;
        bool correct;
    };
    const std::vector<Case> cases{
        {{"It is a cat.", "cat", "dog", "cat"}, true},
        {{"dog", "cat", "dog", "dog"}, true},
        {{"It is a dog.", "cat", "dog", "cat"}, false},
        {{"Either a cat or a dog.", "cat", "dog", "cat"}, false},
        {{"A bird.", "cat", "dog", "cat"}, false},
        {{"The catalog lists it.", "cat", "dog", "cat"}, false},
        {{"A traffic light.", "traffic light", "stop sign", "traffic light"}, true},
        {{"It's a STOP SIGN", "traffic light", "stop sign", "stop sign"}, true},
        {{"The light is on.", "traffic light", "stop sign", "traffic light"}, false},
        {{"Cats.", "cat", "dog", "cat"}, false},
    };
    std::vector<BinaryChoiceItem> items;
    std::size_t right = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        items.push_back(cases[i].item);
        right += cases[i].correct;
        c.expect(binary_choice_correct(cases[i].item) == cases[i].correct, "binary case " + std::to_string(i));
    }
    const auto acc = binary_choice_accuracy(items);
    c.expect(std::abs(acc.value - static_cast<double>(right) / 10.0) < 1e-12 && acc.support == 10,
             "binary accuracy");
    return c.done("CIDEr max dev " + fmt(worst) + ", s-iou/meteor goldens, binary " + std::to_string(right) + "/10");
}

// --- 7. end-to-end evaluation ------------------------------------------------------------------------

Outcome end_to_end() {
    Check c;
    Scratch dir("e2e");
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run_cli({"eval", "run", "--bench", (kFixtures / "bench/mini.jsonl").string(), "--preds",
                            (kFixtures / "bench/echo_preds.jsonl").string(), "--no-judge", "--out",
                            (dir / "report.json").string()},
                           dir / "eval.log");
    const double secs = seconds_since(t0);
    c.expect(rc == 0, "eval run exited " + std::to_string(rc) + ": " + slurp(dir / "eval.log"));
    c.expect(secs < 30.0, "took " + fmt(secs) + " s");
    if (!c.ok())
        return c.done("");
    const auto report = json::parse(slurp(dir / "report.json"));
    std::size_t siou = 0, ciders = 0, accs = 0;
    for (const auto& it : report.at("items")) {
        const auto& v = it.at("values");
        c.expect(!it.contains("error"), it.at("sample_id").get<std::string>() + " errored");
        if (v.contains("s-iou")) {
            ++siou;
            c.expect(v.at("s-iou").get<double>() == 1.0, "s-iou below 1");
        }
        if (v.contains("cider")) {
            ++ciders;
            c.expect(std::abs(v.at("cider").get<double>() - 10.0) < 1e-9, "per-item CIDEr not 10");
        }
        if (v.contains("accuracy")) {
            ++accs;
            c.expect(v.at("accuracy").get<double>() == 1.0, "accuracy below 1");
        }
    }
    c.expect(siou > 0 && ciders > 0 && accs > 0, "metric families missing from report");
    std::size_t accounted = report.at("missing").size();
    for (const auto& [_, cell] : report.at("cells").items())
        accounted += cell.at("support").get<std::size_t>();
    const auto size = report.at("benchmark_size").get<std::size_t>();
    c.expect(accounted == size, "conservation: " + std::to_string(accounted) + " of " + std::to_string(size));
    c.expect(report.at("unmatched").empty(), "unmatched predictions");
    return c.done(std::to_string(size) + " samples accounted, S-IoU/CIDEr/accuracy at ceiling, " + fmt(secs) + " s");
}

// --- 8. judge client against a local mock --------------------------------------------------------------

Outcome judge_mock() {
    Check c;
    Scratch dir("judge");
    ::setenv("VPKIT_ACCEPT_KEY", "sk-test", 1);
    testing::MockChatServer mock;
    JudgeConfig cfg;
    cfg.base_url = mock.base_url();
    cfg.api_key_env = "VPKIT_ACCEPT_KEY";
    cfg.cache_dir = dir / "cache";
    cfg.max_concurrency = 2;
    cfg.backoff_base = std::chrono::milliseconds(1);
    JudgeClient client(cfg);

    mock.push({200, "first"});
    const auto a = client.complete("same prompt", "png-bytes");
    const auto b = client.complete("same prompt", "png-bytes");
    c.expect(a == "first" && b == "first", "cached response differs");
    c.expect(mock.requests() == 1 && client.stats().cache_hits == 1, "identical request hit the network twice");

    mock.set_delay(std::chrono::milliseconds(40));
    std::vector<std::thread> pool;
    for (int i = 0; i < 8; ++i)
        pool.emplace_back([&client, i] { client.complete("parallel " + std::to_string(i)); });
    for (auto& t : pool)
        t.join();
    mock.set_delay(std::chrono::milliseconds(0));
    c.expect(mock.peak_in_flight() <= 2, "peak in-flight " + std::to_string(mock.peak_in_flight()));

    mock.push({200, "Score: 8\nClear and correct."});
    const auto s = score_response(client, "Q {question} A {answer}", "", "what?", "a dog");
    c.expect(s.score == 8, "score not parsed");

    const int before = mock.requests();
    mock.push({200, "Score: 11"});
    mock.push({200, "Score: 0"});
    bool rejected = false;
    try {
        score_response(client, "Q {question} A {answer}", "", "what?", "a cat");
    } catch (const Error& e) {
        rejected = e.code() == ErrorCode::UnscorableResponse;
    }
    c.expect(rejected, "out-of-range score accepted");
    c.expect(mock.requests() - before == 2, "expected exactly one re-ask");
    c.expect(std::abs(score_pair_ratio({8, 8}, {10, 10}) - 80.0) < 1e-12, "pair ratio");
    return c.done("cache hit, peak in-flight " + std::to_string(mock.peak_in_flight()) +
                  "/2, re-ask then reject, ratio 80.0");
}

// --- 9. curation durability ------------------------------------------------------------------------------

struct Expected {
    CurationStatus status = CurationStatus::Pending;
    std::optional<InstructionSample> edit;
};

Outcome curation_durability() {
    Check c;
    Scratch dir("curate");
    const auto candidates = dir / "candidates.jsonl";
    const auto log = dir / "decisions.jsonl";
    const int rc = run_cli({"construct", "all", "--manifest", (kFixtures / "dataset/manifest.json").string(), "--out",
                            candidates.string()},
                           dir / "construct.log");
    c.expect(rc == 0, "construct all failed");
    if (!c.ok())
        return c.done("");
    const auto samples = load_jsonl(candidates);

    std::map<std::string, Expected> expected;
    for (const auto& s : samples)
        expected[s.sample_id] = {};
    DeterministicRng rng(11);

    auto post = [&](httplib::Client& http, int i) {
        const auto& s = samples[rng.index(samples.size())];
        const auto pick = rng.index(3);
        json body{{"sample_id", s.sample_id}, {"reviewer", "r" + std::to_string(i % 3)}, {"note", "n" + std::to_string(i)}};
        Expected e;
        if (pick == 0) {
            body["action"] = "accept";
            e.status = CurationStatus::Accepted;
        } else if (pick == 1) {
            body["action"] = "reject";
            e.status = CurationStatus::Rejected;
        } else {
            InstructionSample edit = s;
            for (auto& t : edit.turns)
                if (t.role == TurnRole::Assistant)
                    t.text += " (revised " + std::to_string(i) + ")";
            body["action"] = "edit";
            body["edit"] = json::parse(to_json_line(edit));
            e.status = CurationStatus::Edited;
            e.edit = edit;
        }
        const auto res = http.Post("/api/decisions", body.dump(), "application/json");
        const bool ok = res && res->status == 200;
        c.expect(ok, "decision " + std::to_string(i) + " not acknowledged");
        if (ok)
            expected[s.sample_id] = e;
    };
    auto counts_of = [&] {
        CurationCounts k;
        k.total = expected.size();
        for (const auto& [_, e] : expected) {
            k.pending += e.status == CurationStatus::Pending;
            k.accepted += e.status == CurationStatus::Accepted;
            k.rejected += e.status == CurationStatus::Rejected;
            k.edited += e.status == CurationStatus::Edited;
        }
        return k;
    };
    auto matches_log = [&](const std::string& when) {
        const auto state = replay(samples, read_decision_log(log));
        for (const auto& [id, e] : expected) {
            const auto& st = state.at(id);
            c.expect(st.status == e.status && st.edited == e.edit, when + ": replay differs for " + id);
        }
    };

    std::string http_export;
    {
        ServeProcess serve(candidates, log);
        httplib::Client http("127.0.0.1", serve.port());
        for (int i = 0; i < 50; ++i)
            post(http, i);
        const int status = serve.kill(SIGKILL);
        c.expect(WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL, "server was not killed");
    }
    matches_log("after kill");
    {
        ServeProcess serve(candidates, log);
        httplib::Client http("127.0.0.1", serve.port());
        const auto stats = http.Get("/api/stats");
        c.expect(stats && stats->status == 200, "stats after restart");
        if (stats && stats->status == 200) {
            const auto j = json::parse(stats->body);
            const auto k = counts_of();
            c.expect(j.at("accepted") == k.accepted && j.at("rejected") == k.rejected && j.at("edited") == k.edited &&
                         j.at("pending") == k.pending && j.at("log_entries") == 50,
                     "restarted state differs from pre-kill state");
        }
        for (int i = 50; i < 100; ++i)
            post(http, i);
        const auto e1 = http.Get("/api/export?status=accepted");
        const auto e2 = http.Get("/api/export?status=accepted");
        c.expect(e1 && e2 && e1->status == 200 && e1->body == e2->body, "HTTP export not deterministic");
        if (e1)
            http_export = e1->body;
        serve.kill(SIGTERM);
    }
    matches_log("final");

    const auto out = dir / "export.jsonl";
    c.expect(run_cli({"curate", "export", "--candidates", candidates.string(), "--log", log.string(), "--out",
                      out.string()},
                     dir / "export.log") == 0,
             "curate export failed");
    const auto cli_export = slurp(out);
    c.expect(cli_export == http_export, "CLI export differs from HTTP export");

    std::vector<InstructionSample> want;
    for (const auto& s : samples) {
        const auto& e = expected.at(s.sample_id);
        if (e.status == CurationStatus::Accepted)
            want.push_back(s);
        else if (e.status == CurationStatus::Edited)
            want.push_back(*e.edit);
    }
    c.expect(cli_export == emit_jsonl_string(want), "export is not the accepted+edited set with edits applied");
    const auto k = counts_of();
    return c.done("100 decisions, SIGKILL at 50, replay matches; exported " + std::to_string(want.size()) + " (" +
                  std::to_string(k.accepted) + " accepted, " + std::to_string(k.edited) + " edited)");
}

// --- 10. renderer -------------------------------------------------------------------------------------------

Outcome renderer() {
    Check c;
    const auto source = load_png(kFixtures / "dataset/images/street.png");
    const VisualPromptSet prompts{BoxPrompt{0.1, 0.3, 0.3, 0.9}, PointPrompt{0.45, 0.75}, BoxPrompt{0.6, 0.6, 0.85, 0.9},
                                  BoxPrompt{0.0, 0.0, 0.2, 0.15}};
    const auto a = render_marks(source, prompts, natural_style());
    const auto b = render_marks(source, prompts, natural_style());
    c.expect(a.png == b.png && a.hash == b.hash, "renders differ");
    std::size_t untouched = 0;
    for (int y = 0; y < source.height; ++y)
        for (int x = 0; x < source.width; ++x)
            if (!a.footprint.at(x, y)) {
                ++untouched;
                c.expect(a.image.at(x, y) == source.at(x, y), "pixel outside footprint changed");
            }
    c.expect(decode_png(a.png) == a.image, "PNG does not decode to the rendered image");

    const RgbImage blank(96, 64);
    DeterministicRng rng(314);
    for (int i = 0; i < 1000; ++i) {
        const double w = 0.02 + 0.3 * rng.uniform(), h = 0.02 + 0.3 * rng.uniform();
        const int corner = static_cast<int>(rng.index(4));
        const double x1 = corner & 1 ? 1.0 - w : 0.0, y1 = corner & 2 ? 1.0 - h : 0.0;
        VisualPromptSet ps;
        const std::size_t n = 1 + rng.index(12);
        for (std::size_t k = 0; k < n; ++k)
            ps.push_back(k % 3 == 2 ? VisualPrompt{PointPrompt{corner & 1 ? 1.0 : 0.0, corner & 2 ? 1.0 : 0.0}}
                                    : VisualPrompt{BoxPrompt{x1, y1, x1 + w, y1 + h}});
        const auto out = render_marks(blank, ps, natural_style());
        c.expect(out.chips.size() == n, "chip count");
        for (const auto& r : out.chips)
            c.expect(r.x0 >= 0 && r.y0 >= 0 && r.x1 <= blank.width && r.y1 <= blank.height,
                     "chip outside image at case " + std::to_string(i));
    }
    return c.done("identical PNG bytes, " + std::to_string(untouched) + " untouched pixels equal, 1000 corner cases");
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"encoder-grad-check", encoder_grad_check},
        {"encoder-contracts", encoder_contracts},
        {"augmentation", augmentation},
        {"construction-pipeline", pipeline},
        {"template-fidelity", template_fidelity},
        {"metric-oracles", metric_oracles},
        {"end-to-end-eval", end_to_end},
        {"judge-mock", judge_mock},
        {"curation-durability", curation_durability},
        {"renderer", renderer},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
