// Command-line front end. Talks to the library only through vpkit.h.
#include "vpkit/vpkit.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

using nlohmann::json;

namespace {

struct Failure {
    vpk_status status;
};

void check(vpk_status s) {
    if (s != VPK_OK)
        throw Failure{s};
}

// Owns a library-allocated string.
struct Text {
    char* p = nullptr;
    ~Text() { vpk_free(p); }
    char** out() { return &p; }
    std::string str() const { return p ? p : ""; }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        std::cerr << "error: cannot read " << path << "\n";
        throw Failure{VPK_ERR_IO_FAILURE};
    }
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        if (!text.empty() && text.back() != '\n')
            std::cout << "\n";
        return;
    }
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) {
        std::cerr << "error: cannot write " << path << "\n";
        throw Failure{VPK_ERR_IO_FAILURE};
    }
}

// Value or @file.
std::string arg_text(const std::string& v) { return !v.empty() && v[0] == '@' ? slurp(v.substr(1)) : v; }

struct JudgeFlags {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4-vision-preview";
    std::string key_env = "OPENAI_API_KEY";
    std::string cache_dir = ".vpkit-cache";
    std::size_t concurrency = 4;
    std::size_t attempts = 5;
    long long backoff_ms = 1000;
    long long timeout_s = 120;

    void add(CLI::App* app) {
        app->add_option("--base-url", base_url, "chat-completions base URL")->capture_default_str();
        app->add_option("--model", model)->capture_default_str();
        app->add_option("--api-key-env", key_env, "environment variable holding the API key")->capture_default_str();
        app->add_option("--cache-dir", cache_dir)->capture_default_str();
        app->add_option("--max-concurrency", concurrency)->capture_default_str();
        app->add_option("--max-attempts", attempts)->capture_default_str();
        app->add_option("--backoff-ms", backoff_ms)->capture_default_str();
        app->add_option("--timeout", timeout_s, "seconds")->capture_default_str();
    }

    std::unique_ptr<vpk_judge, void (*)(vpk_judge*)> open() const {
        const json cfg{{"base_url", base_url},     {"model", model},         {"api_key_env", key_env},
                       {"cache_dir", cache_dir},   {"max_concurrency", concurrency},
                       {"max_attempts", attempts}, {"backoff_ms", backoff_ms}, {"timeout_s", timeout_s}};
        vpk_judge* j = nullptr;
        check(vpk_judge_create(cfg.dump().c_str(), &j));
        return {j, vpk_judge_destroy};
    }
};

std::atomic<vpk_server*> g_server{nullptr};

void on_signal(int) {
    if (auto* s = g_server.load())
        vpk_server_stop(s);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vpkit: visual-prompt data construction, evaluation and curation"};
    app.require_subcommand(1);
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

    // encoder
    auto* enc = app.add_subcommand("encoder", "visual prompt encoder");
    enc->require_subcommand(1);
    std::string enc_config;
    std::uint64_t enc_seed = 0;
    bool enc_minimal = false;
    auto* gc = enc->add_subcommand("grad-check", "analytic vs finite-difference gradients");
    gc->add_option("--config", enc_config, "encoder config JSON or @file");
    gc->add_flag("--minimal", enc_minimal, "smallest valid config");
    gc->add_option("--seed", enc_seed)->capture_default_str();
    double gc_tol = 1e-4;
    gc->add_option("--tolerance", gc_tol)->capture_default_str();
    std::string enc_params, enc_prompts, enc_out;
    auto* ei = enc->add_subcommand("init", "write freshly initialized parameters");
    ei->add_option("--config", enc_config, "encoder config JSON or @file");
    ei->add_option("--out", enc_out)->required();
    auto* ee = enc->add_subcommand("embed", "embed a prompt set");
    ee->add_option("--params", enc_params, "parameter file (default: fresh init)");
    ee->add_option("--config", enc_config, "encoder config JSON or @file, used without --params");
    ee->add_option("--prompts", enc_prompts, "prompt JSON array or @file")->required();
    ee->add_option("--out", enc_out);

    // augment
    auto* aug = app.add_subcommand("augment", "prompt augmentation");
    aug->require_subcommand(1);
    auto* jit = aug->add_subcommand("jitter", "jitter one box");
    std::vector<double> box;
    double sigma = 0.1;
    std::uint64_t aug_seed = 0;
    jit->add_option("--box", box, "x1,y1,x2,y2")->required()->delimiter(',')->expected(4);
    jit->add_option("--sigma", sigma)->capture_default_str();
    jit->add_option("--seed", aug_seed)->capture_default_str();

    // ingest
    auto* ing = app.add_subcommand("ingest", "normalize source annotations into records");
    std::string manifest, out_path;
    ing->add_option("--manifest", manifest)->required();
    ing->add_option("--out", out_path)->required();

    // construct
    auto* con = app.add_subcommand("construct", "build instruction samples");
    con->require_subcommand(1);
    std::string records, samples, templates, reject, mark_kind = "box", stage1_mode = "box";
    std::uint64_t seed = 0;
    bool no_augment = false;
    JudgeFlags gen_flags;
    auto add_source = [&](CLI::App* c) {
        auto* g = c->add_option_group("source");
        g->add_option("--manifest", manifest, "source manifest");
        g->add_option("--records", records, "record JSONL from `ingest`");
        g->require_option(1);
        c->add_option("--out", out_path)->required();
        c->add_option("--templates", templates, "template directory");
    };
    auto* c_stage1 = con->add_subcommand("stage1", "category-label samples");
    add_source(c_stage1);
    c_stage1->add_option("--mode", stage1_mode, "box|point")->check(CLI::IsMember({"box", "point"}))->capture_default_str();
    c_stage1->add_option("--seed", seed)->capture_default_str();
    c_stage1->add_flag("--no-augment", no_augment, "disable box jitter");
    auto* c_invert = con->add_subcommand("invert", "grounded captions to multi-target captions");
    add_source(c_invert);
    auto* c_brief = con->add_subcommand("brief", "referring expressions to brief captions");
    add_source(c_brief);
    auto* c_qa = con->add_subcommand("reconstruct-qa", "grounding QA to mark-referenced QA");
    add_source(c_qa);
    auto* c_all = con->add_subcommand("all", "every rule-based conversion in one file");
    add_source(c_all);
    c_all->add_option("--seed", seed)->capture_default_str();
    c_all->add_flag("--no-augment", no_augment, "disable box jitter");
    auto* c_gen = con->add_subcommand("gpt4v-gen", "role-structured generation through a chat model");
    add_source(c_gen);
    c_gen->add_option("--reject", reject, "JSONL for records whose responses never parse");
    c_gen->add_option("--mark-kind", mark_kind, "box|point")->check(CLI::IsMember({"box", "point"}));
    gen_flags.add(c_gen);
    auto* c_base = con->add_subcommand("baseline-coords", "coordinates-in-text ablation");
    c_base->add_option("--samples", samples, "sample JSONL")->required();
    c_base->add_option("--out", out_path)->required();

    // render
    auto* ren = app.add_subcommand("render-som", "draw numbered marks");
    std::string image, prompts_arg, style = "natural";
    ren->add_option("--image", image)->required();
    ren->add_option("--prompts", prompts_arg, "prompt JSON array or @file")->required();
    ren->add_option("--style", style, "natural|ocr|alpha")->capture_default_str();
    ren->add_option("--out", out_path)->required();

    // judge
    auto* jud = app.add_subcommand("judge", "vision-language judge");
    jud->require_subcommand(1);
    auto* jscore = jud->add_subcommand("score", "score one answer");
    std::string rubric, question, answer, reference;
    JudgeFlags judge_flags;
    jscore->add_option("--rubric", rubric, "rubric text or @file (default: bundled rubric)");
    jscore->add_option("--question", question)->required();
    jscore->add_option("--answer", answer)->required();
    jscore->add_option("--reference", reference);
    jscore->add_option("--image", image, "PNG sent with the prompt");
    judge_flags.add(jscore);

    // metrics
    auto* met = app.add_subcommand("metrics", "standalone metrics");
    met->require_subcommand(1);
    std::string cands, refs, pred, gt, items;
    auto* m_cider = met->add_subcommand("cider", "CIDEr over {id: text} / {id: [refs]}");
    m_cider->add_option("--cands", cands, "JSON or @file")->required();
    m_cider->add_option("--refs", refs, "JSON or @file")->required();
    auto* m_siou = met->add_subcommand("siou", "semantic IoU");
    auto* m_ss = met->add_subcommand("ss", "semantic similarity (hashed embedder)");
    for (auto* c : {m_siou, m_ss}) {
        c->add_option("--pred", pred)->required();
        c->add_option("--gt", gt)->required();
    }
    auto* m_met = met->add_subcommand("meteor", "METEOR (exact + stem)");
    m_met->add_option("--cand", pred)->required();
    m_met->add_option("--refs", refs, "JSON array or @file")->required();
    auto* m_bin = met->add_subcommand("binary", "binary-choice accuracy");
    m_bin->add_option("--items", items, "JSON array or @file")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "benchmark evaluation");
    ev->require_subcommand(1);
    auto* ev_run = ev->add_subcommand("run", "score predictions against a benchmark");
    std::string bench, preds, report, format = "table";
    bool no_judge = false;
    JudgeFlags eval_flags;
    ev_run->add_option("--bench", bench)->required();
    ev_run->add_option("--preds", preds)->required();
    ev_run->add_option("--out", out_path, "report JSON (default: stdout)");
    ev_run->add_flag("--no-judge", no_judge, "leave judge-scored cells unscored");
    ev_run->add_option("--rubric", rubric, "rubric text or @file");
    ev_run->add_option("--image-root", image, "directory for relative image paths");
    eval_flags.add(ev_run);
    auto* ev_render = ev->add_subcommand("render", "render a report");
    ev_render->add_option("--report", report)->required();
    ev_render->add_option("--format", format, "table|json")->capture_default_str();
    ev_render->add_option("--out", out_path);

    // curate
    auto* cur = app.add_subcommand("curate", "human review service");
    cur->require_subcommand(1);
    std::string candidates, log_path, addr = "127.0.0.1:8080", static_dir, status_filter = "accepted";
    auto* serve = cur->add_subcommand("serve", "run the review HTTP service");
    serve->add_option("--candidates", candidates)->required();
    serve->add_option("--log", log_path)->required();
    serve->add_option("--addr", addr, "HOST:PORT (port 0 picks one)")->capture_default_str();
    serve->add_option("--static", static_dir, "directory served at /");
    auto* exp = cur->add_subcommand("export", "write the curated set");
    exp->add_option("--candidates", candidates)->required();
    exp->add_option("--log", log_path)->required();
    exp->add_option("--status", status_filter, "accepted|edited|rejected|pending|all")->capture_default_str();
    exp->add_option("--out", out_path);
    auto* stats = cur->add_subcommand("stats", "print review counts");
    stats->add_option("--candidates", candidates)->required();
    stats->add_option("--log", log_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        check(vpk_set_log_level(log_level.c_str()));
        auto sub = [](CLI::App* c) { return c->parsed(); };
        auto encoder_cfg = [&] {
            if (enc_minimal)
                return std::string(R"({"num_frequencies":1,"hidden_dim":1,"llm_dim":1,"capacity":1})");
            return arg_text(enc_config);
        };

        if (sub(gc)) {
            Text out;
            check(vpk_encoder_grad_check(encoder_cfg().c_str(), enc_seed, out.out()));
            std::cout << out.str() << "\n";
            return json::parse(out.str()).at("max_relative_error").get<double>() < gc_tol ? 0 : 1;
        }
        if (sub(ei)) {
            vpk_encoder* e = nullptr;
            check(vpk_encoder_create(encoder_cfg().c_str(), &e));
            std::unique_ptr<vpk_encoder, void (*)(vpk_encoder*)> guard(e, vpk_encoder_destroy);
            check(vpk_encoder_save(e, enc_out.c_str()));
            return 0;
        }
        if (sub(ee)) {
            vpk_encoder* e = nullptr;
            check(enc_params.empty() ? vpk_encoder_create(encoder_cfg().c_str(), &e)
                                     : vpk_encoder_load(enc_params.c_str(), &e));
            std::unique_ptr<vpk_encoder, void (*)(vpk_encoder*)> guard(e, vpk_encoder_destroy);
            Text out;
            check(vpk_encoder_embed(e, arg_text(enc_prompts).c_str(), out.out()));
            write_or_print(enc_out, out.str());
            return 0;
        }
        if (sub(jit)) {
            double out[4];
            check(vpk_jitter_box(box.data(), sigma, aug_seed, out));
            std::cout << json(std::vector<double>(out, out + 4)).dump() << "\n";
            return 0;
        }
        if (sub(ing)) {
            Text summary;
            check(vpk_ingest(manifest.c_str(), out_path.c_str(), summary.out()));
            std::cout << summary.str() << "\n";
            return 0;
        }
        for (auto [cmd, task] : {std::pair{c_stage1, "stage1"}, {c_invert, "invert"}, {c_brief, "brief"},
                                 {c_qa, "reconstruct-qa"}, {c_all, "all"}}) {
            if (!sub(cmd))
                continue;
            json o{{"seed", seed}, {"augment", !no_augment}};
            if (!manifest.empty())
                o["manifest"] = manifest;
            if (!records.empty())
                o["records"] = records;
            if (!templates.empty())
                o["templates"] = templates;
            std::string t = task;
            if (t == "stage1")
                t += "-" + stage1_mode;
            Text summary;
            check(vpk_construct(t.c_str(), o.dump().c_str(), out_path.c_str(), summary.out()));
            std::cout << summary.str() << "\n";
            return 0;
        }
        if (sub(c_gen)) {
            json o{{"mark_kind", mark_kind}};
            if (!manifest.empty())
                o["manifest"] = manifest;
            if (!records.empty())
                o["records"] = records;
            if (!templates.empty())
                o["templates"] = templates;
            if (!reject.empty())
                o["reject"] = reject;
            auto judge = gen_flags.open();
            Text summary;
            check(vpk_generate_gpt4v(judge.get(), o.dump().c_str(), out_path.c_str(), summary.out()));
            std::cout << summary.str() << "\n";
            return 0;
        }
        if (sub(c_base)) {
            Text summary;
            check(vpk_construct("baseline-coords", json{{"samples", samples}}.dump().c_str(), out_path.c_str(),
                                summary.out()));
            std::cout << summary.str() << "\n";
            return 0;
        }
        if (sub(ren)) {
            Text info;
            check(vpk_render_som(image.c_str(), arg_text(prompts_arg).c_str(), style.c_str(), out_path.c_str(),
                                 info.out()));
            std::cout << info.str() << "\n";
            return 0;
        }
        if (sub(jscore)) {
            const std::string png = image.empty() ? std::string() : slurp(image);
            const std::string rub = arg_text(rubric);
            auto judge = judge_flags.open();
            int score = 0;
            Text rationale;
            check(vpk_judge_score(judge.get(), rub.empty() ? nullptr : rub.c_str(), reinterpret_cast<const uint8_t*>(png.data()), png.size(),
                                  question.c_str(), answer.c_str(), reference.empty() ? nullptr : reference.c_str(),
                                  &score, rationale.out()));
            std::cout << json{{"score", score}, {"rationale", rationale.str()}}.dump() << "\n";
            return 0;
        }
        if (sub(m_cider)) {
            Text out;
            check(vpk_cider(arg_text(cands).c_str(), arg_text(refs).c_str(), out.out()));
            std::cout << out.str() << "\n";
            return 0;
        }
        if (sub(m_siou) || sub(m_ss) || sub(m_met) || sub(m_bin)) {
            double v = 0.0;
            if (sub(m_siou))
                check(vpk_semantic_iou(pred.c_str(), gt.c_str(), &v));
            else if (sub(m_ss))
                check(vpk_semantic_similarity(pred.c_str(), gt.c_str(), &v));
            else if (sub(m_met))
                check(vpk_meteor_lite(pred.c_str(), arg_text(refs).c_str(), &v));
            else
                check(vpk_binary_choice_accuracy(arg_text(items).c_str(), &v));
            std::printf("%.12g\n", v);
            return 0;
        }
        if (sub(ev_run)) {
            json o{{"use_judge", !no_judge}};
            if (!rubric.empty())
                o["rubric"] = arg_text(rubric);
            if (!image.empty())
                o["image_root"] = image;
            std::unique_ptr<vpk_judge, void (*)(vpk_judge*)> judge(nullptr, vpk_judge_destroy);
            if (!no_judge)
                judge = eval_flags.open();
            Text rep;
            check(vpk_eval_run(bench.c_str(), preds.c_str(), o.dump().c_str(), judge.get(), rep.out()));
            write_or_print(out_path, rep.str());
            return 0;
        }
        if (sub(ev_render)) {
            Text out;
            check(vpk_eval_render(slurp(report).c_str(), format.c_str(), out.out()));
            write_or_print(out_path, out.str());
            return 0;
        }
        if (sub(serve) || sub(exp) || sub(stats)) {
            vpk_curation* store = nullptr;
            check(vpk_curation_open(candidates.c_str(), log_path.c_str(), &store));
            std::unique_ptr<vpk_curation, void (*)(vpk_curation*)> guard(store, vpk_curation_close);
            if (sub(exp)) {
                Text out;
                check(vpk_curation_export(store, status_filter.c_str(), out.out()));
                write_or_print(out_path, out.str());
                return 0;
            }
            if (sub(stats)) {
                Text out;
                check(vpk_curation_counts(store, out.out()));
                std::cout << out.str() << "\n";
                return 0;
            }
            const auto colon = addr.rfind(':');
            if (colon == std::string::npos) {
                std::cerr << "error: --addr must be HOST:PORT\n";
                return VPK_ERR_INVALID_ARGUMENT;
            }
            const std::string host = addr.substr(0, colon);
            const int port = std::stoi(addr.substr(colon + 1));
            vpk_server* server = nullptr;
            check(vpk_server_create(store, static_dir.empty() ? nullptr : static_dir.c_str(), &server));
            std::unique_ptr<vpk_server, void (*)(vpk_server*)> sguard(server, vpk_server_destroy);
            int bound = 0;
            check(vpk_server_bind(server, host.c_str(), port, &bound));
            g_server = server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cout << "listening on " << host << ":" << bound << std::endl;
            check(vpk_server_listen(server));
            g_server = nullptr;
            return 0;
        }
    } catch (const Failure& f) {
        const char* msg = vpk_last_error();
        std::cerr << "error: " << (msg && *msg ? msg : vpk_status_name(f.status)) << "\n";
        return static_cast<int>(f.status);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return VPK_ERR_INVALID_ARGUMENT;
    }
    return 0;
}
