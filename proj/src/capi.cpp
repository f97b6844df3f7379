#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "vpkit/vpkit.h"

#include "json_io.hpp"
#include "vpkit/augment.hpp"
#include "vpkit/bench_runner.hpp"
#include "vpkit/construct.hpp"
#include "vpkit/curation_service.hpp"
#include "vpkit/ingest.hpp"
#include "vpkit/judge_client.hpp"
#include "vpkit/metrics.hpp"
#include "vpkit/som_render.hpp"
#include "vpkit/vp_encoder.hpp"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <cstring>

using namespace vpkit;
using nlohmann::json;

struct vpk_encoder {
    EncoderConfig config;
    EncoderParams params;
};

struct vpk_judge {
    explicit vpk_judge(JudgeConfig cfg) : client(std::move(cfg)) {}
    JudgeClient client;
};

struct vpk_curation {
    vpk_curation(const char* c, const char* l) : store(c, l) {}
    CurationStore store;
};

struct vpk_server {
    explicit vpk_server(CurationStore& s, CurationServerOptions o) : server(s, std::move(o)) {}
    CurationServer server;
};

namespace {

thread_local std::string g_last_error;

template <class F> vpk_status guard(F&& f) {
    try {
        f();
        g_last_error.clear();
        return VPK_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return static_cast<vpk_status>(static_cast<int>(e.code()));
    } catch (const json::exception& e) {
        g_last_error = std::string("InvalidArgument: JSON: ") + e.what();
        return VPK_ERR_INVALID_ARGUMENT;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = std::string("IoFailure: ") + e.what();
        return VPK_ERR_IO_FAILURE;
    } catch (const std::exception& e) {
        g_last_error = std::string("Internal: ") + e.what();
        return VPK_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "Internal: unknown exception";
        return VPK_ERR_INTERNAL;
    }
}

void need(const void* p, const char* name) {
    if (!p)
        fail(ErrorCode::InvalidArgument, std::string(name) + " is NULL");
}

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out)
        throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size());
    out[s.size()] = '\0';
    return out;
}

void put(char** out, const std::string& s) {
    if (out)
        *out = dup(s);
}

json parse_or_empty(const char* text) { return text && *text ? json::parse(text) : json::object(); }

EncoderConfig encoder_config(const json& j) {
    EncoderConfig c;
    c.num_frequencies = j.value("num_frequencies", c.num_frequencies);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.llm_dim = j.value("llm_dim", c.llm_dim);
    c.capacity = j.value("capacity", c.capacity);
    c.fourier_sigma = j.value("fourier_sigma", c.fourier_sigma);
    c.seed = j.value("seed", c.seed);
    validate(c);
    return c;
}

VisualPromptSet prompts_from(const char* text) {
    need(text, "prompts_json");
    VisualPromptSet out;
    for (const auto& p : json::parse(text))
        out.push_back(detail::prompt_from_json(p));
    return out;
}

JudgeConfig judge_config(const json& j) {
    JudgeConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", static_cast<long long>(c.backoff_base.count())));
    c.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<long long>(c.timeout.count())));
    c.cache_dir = j.value("cache_dir", c.cache_dir.string());
    c.temperature = j.value("temperature", c.temperature);
    return c;
}

// Records from {"records": jsonl} or {"manifest": path}.
std::vector<AnnotationRecord> records_from(const json& o) {
    if (o.contains("records"))
        return read_records(o.at("records").get<std::string>());
    if (o.contains("manifest"))
        return ingest_manifest(o.at("manifest").get<std::string>()).records;
    fail(ErrorCode::InvalidArgument, "options need \"records\" or \"manifest\"");
}

TemplateSet templates_from(const json& o) {
    return load_templates(o.contains("templates") ? std::filesystem::path(o.at("templates").get<std::string>())
                                                  : default_template_dir());
}

std::string_view bytes(const uint8_t* p, size_t n) {
    return p ? std::string_view(reinterpret_cast<const char*>(p), n) : std::string_view();
}

} // namespace

extern "C" {

const char* vpk_version(void) { return "0.1.0"; }

const char* vpk_status_name(vpk_status status) {
    if (status == VPK_OK)
        return "Ok";
    if (status == VPK_ERR_INTERNAL)
        return "Internal";
    return error_code_name(static_cast<ErrorCode>(status)).data();
}

const char* vpk_last_error(void) { return g_last_error.c_str(); }

void vpk_free(void* p) { std::free(p); }

vpk_status vpk_set_log_level(const char* level) {
    return guard([&] {
        need(level, "level");
        const auto l = spdlog::level::from_str(level);
        if (l == spdlog::level::off && std::strcmp(level, "off") != 0)
            fail(ErrorCode::InvalidArgument, std::string("unknown log level ") + level);
        spdlog::set_level(l);
    });
}

// --- encoder ---------------------------------------------------------------------

vpk_status vpk_encoder_create(const char* config_json, vpk_encoder** out) {
    return guard([&] {
        need(out, "out");
        const auto cfg = encoder_config(parse_or_empty(config_json));
        *out = new vpk_encoder{cfg, init_params(cfg)};
    });
}

vpk_status vpk_encoder_load(const char* path, vpk_encoder** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        auto loaded = load_params(path);
        *out = new vpk_encoder{loaded.config, std::move(loaded.params)};
    });
}

vpk_status vpk_encoder_save(const vpk_encoder* enc, const char* path) {
    return guard([&] {
        need(enc, "encoder");
        need(path, "path");
        save_params(enc->params, enc->config, path);
    });
}

void vpk_encoder_destroy(vpk_encoder* enc) { delete enc; }

vpk_status vpk_encoder_embed(const vpk_encoder* enc, const char* prompts_json, char** out_json) {
    return guard([&] {
        need(enc, "encoder");
        const auto prompts = prompts_from(prompts_json);
        const auto batch = embed_prompts(prompts, enc->params, enc->config);
        json j;
        j["rows"] = batch.tokens.rows();
        j["cols"] = batch.tokens.cols();
        j["validity"] = batch.validity;
        json rows = json::array();
        for (Eigen::Index r = 0; r < batch.tokens.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(batch.tokens.cols()));
            for (Eigen::Index c = 0; c < batch.tokens.cols(); ++c)
                row[static_cast<std::size_t>(c)] = batch.tokens(r, c);
            rows.push_back(row);
        }
        j["tokens"] = rows;
        put(out_json, j.dump());
    });
}

vpk_status vpk_encoder_grad_check(const char* config_json, uint64_t seed, char** out_json) {
    return guard([&] {
        const auto r = grad_check(encoder_config(parse_or_empty(config_json)), seed);
        put(out_json, json{{"max_relative_error", r.max_relative_error},
                           {"worst_tensor", r.worst_tensor},
                           {"entries_checked", r.entries_checked},
                           {"max_frozen_gradient", r.max_frozen_gradient}}
                          .dump());
    });
}

// --- augment -------------------------------------------------------------------------

vpk_status vpk_jitter_box(const double box[4], double sigma_scale, uint64_t seed, double out[4]) {
    return guard([&] {
        need(box, "box");
        need(out, "out");
        AugmentConfig cfg;
        cfg.sigma_scale = sigma_scale;
        validate(cfg);
        const BoxPrompt in{box[0], box[1], box[2], box[3]};
        validate(VisualPrompt(in));
        const auto b = jitter_box(in, cfg, seed);
        out[0] = b.x1;
        out[1] = b.y1;
        out[2] = b.x2;
        out[3] = b.y2;
    });
}

// --- ingest / construct ----------------------------------------------------------------

vpk_status vpk_ingest(const char* manifest_path, const char* out_path, char** summary_json) {
    return guard([&] {
        need(manifest_path, "manifest_path");
        need(out_path, "out_path");
        const auto r = ingest_manifest(manifest_path);
        write_records(r.records, out_path);
        put(summary_json, json{{"records", r.records.size()},
                               {"skipped_compressed_rle", r.skipped_compressed_rle},
                               {"skipped_empty_masks", r.skipped_empty_masks},
                               {"inflated_boxes", r.inflated_boxes}}
                              .dump());
    });
}

vpk_status vpk_construct(const char* task, const char* options_json, const char* out_path, char** summary_json) {
    return guard([&] {
        need(task, "task");
        need(out_path, "out_path");
        const json o = parse_or_empty(options_json);
        const std::string t = task;
        json summary = json::object();
        std::vector<InstructionSample> out;

        if (t == "baseline-coords") {
            if (!o.contains("samples"))
                fail(ErrorCode::InvalidArgument, "baseline-coords needs \"samples\"");
            std::size_t skipped = 0;
            for (const auto& s : load_jsonl(o.at("samples").get<std::string>())) {
                if (s.prompt_kind != SamplePromptKind::Box) {
                    ++skipped;
                    continue;
                }
                out.push_back(coords_in_text_baseline(s));
            }
            summary["skipped_non_box"] = skipped;
        } else {
            const auto records = records_from(o);
            const auto templates = templates_from(o);
            const std::uint64_t seed = o.value("seed", std::uint64_t{0});
            Stage1Config cfg;
            cfg.augment = o.value("augment", cfg.augment);
            cfg.capacity = o.value("capacity", cfg.capacity);
            cfg.points_per_image = o.value("points_per_image", cfg.points_per_image);
            const bool all = t == "all";
            bool known = all;
            auto stage1 = [&](Stage1Mode mode, const char* name) {
                auto r = build_stage1(records, mode, cfg, seed, templates);
                summary[std::string(name) + "_skipped_unlabelled"] = r.skipped_unlabelled;
                summary[name] = r.samples.size();
                out.insert(out.end(), r.samples.begin(), r.samples.end());
            };
            if (all || t == "stage1-box") {
                known = true;
                stage1(Stage1Mode::Box, "stage1_box");
            }
            if (all || t == "stage1-point") {
                known = true;
                stage1(Stage1Mode::Point, "stage1_point");
            }
            if (all || t == "invert") {
                known = true;
                std::size_t n = 0;
                for (const auto& r : records)
                    if (r.caption && !r.links.empty()) {
                        out.push_back(invert_grounding(r, templates));
                        ++n;
                    }
                summary["invert"] = n;
            }
            if (all || t == "brief") {
                known = true;
                std::size_t n = 0;
                for (const auto& r : records) {
                    auto v = refexp_to_brief(r, templates);
                    n += v.size();
                    out.insert(out.end(), v.begin(), v.end());
                }
                summary["brief"] = n;
            }
            if (all || t == "reconstruct-qa") {
                known = true;
                std::size_t n = 0;
                for (const auto& r : records) {
                    auto v = reconstruct_qa(r);
                    n += v.size();
                    out.insert(out.end(), v.begin(), v.end());
                }
                summary["reconstruct_qa"] = n;
            }
            if (!known)
                fail(ErrorCode::UnknownTask, "unknown construct task '" + t + "'");
        }
        emit_jsonl(out, out_path);
        summary["samples"] = out.size();
        put(summary_json, summary.dump());
    });
}

// --- render --------------------------------------------------------------------------------

vpk_status vpk_render_som(const char* image_path, const char* prompts_json, const char* style,
                          const char* out_png_path, char** info_json) {
    return guard([&] {
        need(image_path, "image_path");
        need(out_png_path, "out_png_path");
        const auto prompts = prompts_from(prompts_json);
        const std::string st = style ? style : "natural";
        RenderedOverlay r;
        if (st == "natural")
            r = render_marks(image_path, prompts, natural_style());
        else if (st == "ocr")
            r = render_marks(image_path, prompts, ocr_style());
        else if (st == "alpha")
            r = render_alpha_blend(load_png(image_path), prompts);
        else
            fail(ErrorCode::InvalidArgument, "style must be natural, ocr or alpha");
        detail::write_file_atomic(out_png_path, r.png);
        json chips = json::array();
        for (const auto& c : r.chips)
            chips.push_back({c.x0, c.y0, c.x1, c.y1});
        put(info_json, json{{"sha256", r.hash}, {"chips", chips}}.dump());
    });
}

// --- judge ------------------------------------------------------------------------------------

vpk_status vpk_judge_create(const char* config_json, vpk_judge** out) {
    return guard([&] {
        need(out, "out");
        *out = new vpk_judge(judge_config(parse_or_empty(config_json)));
    });
}

void vpk_judge_destroy(vpk_judge* judge) { delete judge; }

vpk_status vpk_judge_complete(vpk_judge* judge, const char* prompt, const uint8_t* png, size_t png_len,
                              char** out_text) {
    return guard([&] {
        need(judge, "judge");
        need(prompt, "prompt");
        put(out_text, judge->client.complete(prompt, std::string(bytes(png, png_len))));
    });
}

vpk_status vpk_judge_score(vpk_judge* judge, const char* rubric, const uint8_t* png, size_t png_len,
                           const char* question, const char* answer, const char* reference, int* out_score,
                           char** out_rationale) {
    return guard([&] {
        need(judge, "judge");
        need(question, "question");
        need(answer, "answer");
        need(out_score, "out_score");
        const std::string rub = rubric ? std::string(rubric) : load_templates(default_template_dir()).rubric;
        const auto s = score_response(judge->client, rub, std::string(bytes(png, png_len)), question, answer,
                                      reference ? std::optional<std::string>(reference) : std::nullopt);
        *out_score = s.score;
        put(out_rationale, s.rationale);
    });
}

vpk_status vpk_judge_stats(const vpk_judge* judge, char** out_json) {
    return guard([&] {
        need(judge, "judge");
        const auto s = judge->client.stats();
        put(out_json,
            json{{"network_requests", s.network_requests}, {"cache_hits", s.cache_hits}, {"retries", s.retries}}
                .dump());
    });
}

vpk_status vpk_generate_gpt4v(vpk_judge* judge, const char* options_json, const char* out_path,
                              char** summary_json) {
    return guard([&] {
        need(judge, "judge");
        need(out_path, "out_path");
        const json o = parse_or_empty(options_json);
        const auto records = records_from(o);
        const auto templates = templates_from(o);
        std::optional<std::filesystem::path> reject;
        if (o.contains("reject"))
            reject = o.at("reject").get<std::string>();
        const std::string kind = o.value("mark_kind", std::string("box"));
        if (kind != "box" && kind != "point")
            fail(ErrorCode::InvalidArgument, "mark_kind must be box or point");
        const auto r = generate_with_gpt4v(
            records, templates,
            [&](const std::string& prompt, const std::string& png) { return judge->client.complete(prompt, png); },
            reject, kind == "box" ? Stage1Mode::Box : Stage1Mode::Point);
        emit_jsonl(r.samples, out_path);
        put(summary_json,
            json{{"samples", r.samples.size()}, {"retried", r.retried}, {"rejected", r.rejected}}.dump());
    });
}

// --- metrics ------------------------------------------------------------------------------------

vpk_status vpk_cider(const char* candidates_json, const char* references_json, char** out_json) {
    return guard([&] {
        need(candidates_json, "candidates_json");
        need(references_json, "references_json");
        const auto cands = json::parse(candidates_json).get<std::map<std::string, std::string>>();
        const auto refs = json::parse(references_json).get<std::map<std::string, std::vector<std::string>>>();
        const auto r = cider(cands, refs);
        put(out_json, json{{"corpus", r.corpus}, {"per_item", r.per_item}}.dump());
    });
}

vpk_status vpk_semantic_iou(const char* pred, const char* gt, double* out) {
    return guard([&] {
        need(pred, "pred");
        need(gt, "gt");
        need(out, "out");
        *out = semantic_iou(pred, gt);
    });
}

vpk_status vpk_semantic_similarity(const char* pred, const char* gt, double* out) {
    return guard([&] {
        need(pred, "pred");
        need(gt, "gt");
        need(out, "out");
        HashedEmbedder emb;
        *out = semantic_similarity(pred, gt, emb);
    });
}

vpk_status vpk_meteor_lite(const char* candidate, const char* references_json, double* out) {
    return guard([&] {
        need(candidate, "candidate");
        need(references_json, "references_json");
        need(out, "out");
        *out = meteor_lite(candidate, json::parse(references_json).get<std::vector<std::string>>());
    });
}

vpk_status vpk_binary_choice_accuracy(const char* items_json, double* out) {
    return guard([&] {
        need(items_json, "items_json");
        need(out, "out");
        std::vector<BinaryChoiceItem> items;
        for (const auto& j : json::parse(items_json))
            items.push_back({j.at("response").get<std::string>(), j.at("class_a").get<std::string>(),
                             j.at("class_b").get<std::string>(), j.at("gt_class").get<std::string>()});
        *out = binary_choice_accuracy(items).value;
    });
}

// --- eval ------------------------------------------------------------------------------------------

vpk_status vpk_eval_run(const char* bench_path, const char* preds_path, const char* options_json, vpk_judge* judge,
                        char** out_report_json) {
    return guard([&] {
        need(bench_path, "bench_path");
        need(preds_path, "preds_path");
        const json o = parse_or_empty(options_json);
        EvalConfig cfg;
        cfg.use_judge = o.value("use_judge", false);
        cfg.judge = judge ? &judge->client : nullptr;
        if (o.contains("image_root"))
            cfg.image_root = o.at("image_root").get<std::string>();
        if (cfg.use_judge) {
            if (o.contains("rubric"))
                cfg.rubric = o.at("rubric").get<std::string>();
            else if (o.contains("rubric_path"))
                cfg.rubric = detail::read_text_file(o.at("rubric_path").get<std::string>());
            else
                cfg.rubric = load_templates(default_template_dir()).rubric;
        }
        put(out_report_json, render_report(run_eval(bench_path, preds_path, cfg), ReportFormat::Json));
    });
}

vpk_status vpk_eval_render(const char* report_json, const char* format, char** out_text) {
    return guard([&] {
        need(report_json, "report_json");
        const std::string f = format ? format : "table";
        if (f != "json" && f != "table")
            fail(ErrorCode::InvalidArgument, "format must be json or table");
        put(out_text, render_report(report_from_json(report_json), f == "json" ? ReportFormat::Json
                                                                               : ReportFormat::Table));
    });
}

// --- curation ---------------------------------------------------------------------------------------

vpk_status vpk_curation_open(const char* candidates_path, const char* log_path, vpk_curation** out) {
    return guard([&] {
        need(candidates_path, "candidates_path");
        need(log_path, "log_path");
        need(out, "out");
        *out = new vpk_curation(candidates_path, log_path);
    });
}

void vpk_curation_close(vpk_curation* store) { delete store; }

vpk_status vpk_curation_counts(const vpk_curation* store, char** out_json) {
    return guard([&] {
        need(store, "store");
        const auto c = store->store.counts();
        put(out_json, json{{"total", c.total},
                           {"pending", c.pending},
                           {"accepted", c.accepted},
                           {"rejected", c.rejected},
                           {"edited", c.edited}}
                          .dump());
    });
}

vpk_status vpk_curation_next(vpk_curation* store, const char* reviewer, char** out_sample_json) {
    return guard([&] {
        need(store, "store");
        need(reviewer, "reviewer");
        need(out_sample_json, "out_sample_json");
        *out_sample_json = nullptr;
        if (const auto s = store->store.next_pending(reviewer))
            *out_sample_json = dup(to_json_line(*s));
    });
}

vpk_status vpk_curation_record(vpk_curation* store, const char* decision_json, char** out_state_json) {
    return guard([&] {
        need(store, "store");
        need(decision_json, "decision_json");
        const auto s = store->store.record(decision_from_json(decision_json));
        put(out_state_json, json{{"status", to_string(s.status)}, {"reviewer", s.reviewer}, {"note", s.note}}.dump());
    });
}

vpk_status vpk_curation_export(const vpk_curation* store, const char* filter, char** out_jsonl) {
    return guard([&] {
        need(store, "store");
        put(out_jsonl, store->store.export_jsonl(export_filter(filter ? filter : "accepted")));
    });
}

vpk_status vpk_server_create(vpk_curation* store, const char* static_dir, vpk_server** out) {
    return guard([&] {
        need(store, "store");
        need(out, "out");
        CurationServerOptions opts;
        if (static_dir)
            opts.static_dir = static_dir;
        *out = new vpk_server(store->store, opts);
    });
}

vpk_status vpk_server_bind(vpk_server* server, const char* host, int port, int* out_port) {
    return guard([&] {
        need(server, "server");
        need(host, "host");
        const int p = server->server.bind(host, port);
        if (out_port)
            *out_port = p;
    });
}

vpk_status vpk_server_listen(vpk_server* server) {
    return guard([&] {
        need(server, "server");
        server->server.listen();
    });
}

void vpk_server_stop(vpk_server* server) {
    if (server)
        server->server.stop();
}

void vpk_server_destroy(vpk_server* server) { delete server; }

} // extern "C"
