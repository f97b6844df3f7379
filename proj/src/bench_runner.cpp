#include "vpkit/bench_runner.hpp"

#include "json_io.hpp"
#include "vpkit/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace vpkit {

using detail::ojson;

namespace {

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

enum class Family { Label, Caption, Judge, Binary };

Family family_of(TaskTag t) {
    switch (t) {
    case TaskTag::Stage1Label:
        return Family::Label;
    case TaskTag::MultiTargetCaption:
    case TaskTag::BriefCaption:
    case TaskTag::DetailedCaption:
        return Family::Caption;
    case TaskTag::InterRelationship:
    case TaskTag::Qa:
    case TaskTag::Reasoning:
        return Family::Judge;
    case TaskTag::BinaryChoice:
        return Family::Binary;
    }
    fail(ErrorCode::UnknownTask, "unhandled task tag");
}

const char* headline_metric(TaskTag t) {
    switch (family_of(t)) {
    case Family::Label:
        return metric::kSemanticIou;
    case Family::Caption:
        return metric::kCider;
    case Family::Judge:
        return metric::kJudgeRaw;
    case Family::Binary:
        return metric::kAccuracy;
    }
    return metric::kSemanticIou;
}

// "<Mark k>: label" lines -> k -> label
std::map<int, std::string> mark_labels(const std::string& text) {
    static const std::regex re(R"(^\s*<\s*Mark\s+(\d+)\s*>\s*:\s*(.*?)\s*$)", std::regex::icase);
    std::map<int, std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::smatch m;
        if (std::regex_match(line, m, re))
            out.emplace(std::stoi(m[1].str()), m[2].str());
    }
    return out;
}

std::string gt_answer(const InstructionSample& s) {
    const Turn* t = s.last(TurnRole::Assistant);
    return t ? t->text : std::string();
}

std::string question_of(const InstructionSample& s) {
    const Turn* t = s.last(TurnRole::User);
    return t ? t->text : std::string();
}

struct Job {
    std::size_t item = 0;
    const InstructionSample* sample = nullptr;
    std::string response;
};

void score_labels(const InstructionSample& s, const std::string& response, Embedder& emb, ItemResult& out) {
    const auto gt = mark_labels(gt_answer(s));
    if (gt.empty())
        fail(ErrorCode::MalformedAnnotation, "stage1 sample without <Mark k> lines");
    auto pred = mark_labels(response);
    if (pred.empty() && gt.size() == 1)
        pred.emplace(gt.begin()->first, response);
    double iou = 0.0, ss = 0.0;
    for (const auto& [k, label] : gt) {
        const auto it = pred.find(k);
        if (it == pred.end() || blank(it->second))
            continue; // missing mark scores zero
        iou += semantic_iou(it->second, label);
        ss += semantic_similarity(it->second, label, emb);
    }
    const double n = static_cast<double>(gt.size());
    out.values[metric::kSemanticIou] = iou / n;
    out.values[metric::kSemanticSimilarity] = ss / n;
}

bool binary_correct(const InstructionSample& s, const std::string& response) {
    if (!s.choices)
        fail(ErrorCode::MalformedAnnotation, "binary-choice sample without choices");
    BinaryChoiceItem probe{gt_answer(s), s.choices->class_a, s.choices->class_b, s.choices->class_a};
    const std::string gt_class = binary_choice_correct(probe) ? s.choices->class_a : s.choices->class_b;
    probe.gt_class = gt_class;
    if (!binary_choice_correct(probe))
        fail(ErrorCode::MalformedAnnotation, "ground truth names neither or both classes");
    return binary_choice_correct({response, s.choices->class_a, s.choices->class_b, gt_class});
}

std::string judge_image(const InstructionSample& s, const std::filesystem::path& root) {
    std::filesystem::path p = s.image_path;
    if (!root.empty() && p.is_relative())
        p = root / p;
    if (s.prompts.empty())
        return encode_png(load_png(p));
    return render_marks(p, s.prompts).png;
}

ojson config_json(const EvalConfig& cfg, Embedder& emb) {
    ojson j;
    j["use_judge"] = cfg.use_judge;
    j["judge_model"] = cfg.use_judge && cfg.judge ? cfg.judge->config().model : std::string();
    j["rubric_sha256"] = cfg.use_judge ? sha256_hex(cfg.rubric) : std::string();
    j["embedder"] = emb.name();
    return j;
}

} // namespace

std::string cell_key(Domain d, SamplePromptKind k, TaskTag t) {
    return std::string(to_string(d)) + "|" + to_string(k) + "|" + to_string(t);
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
    std::vector<PredictionRecord> out;
    std::set<std::string> seen;
    for (const auto& [no, line] : detail::read_lines(path)) {
        PredictionRecord p;
        try {
            const auto j = ojson::parse(line);
            p.sample_id = j.at("sample_id").get<std::string>();
            p.model = j.value("model", std::string());
            p.response = j.at("response").get<std::string>();
        } catch (const ojson::exception& e) {
            fail(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(no) + ": " + e.what());
        }
        if (!seen.insert(p.sample_id).second)
            fail(ErrorCode::DuplicateId, path.string() + ":" + std::to_string(no) + ": repeated sample_id " +
                                             p.sample_id);
        out.push_back(std::move(p));
    }
    return out;
}

void write_predictions(const std::vector<PredictionRecord>& preds, const std::filesystem::path& path) {
    std::string bytes;
    for (const auto& p : preds) {
        ojson j;
        j["sample_id"] = p.sample_id;
        j["model"] = p.model;
        j["response"] = p.response;
        bytes += j.dump() + "\n";
    }
    detail::write_file_atomic(path, bytes);
}

std::vector<PredictionRecord> echo_predictions(const std::vector<InstructionSample>& bench, const std::string& model) {
    std::vector<PredictionRecord> out;
    out.reserve(bench.size());
    for (const auto& s : bench)
        out.push_back({s.sample_id, model, gt_answer(s)});
    return out;
}

EvalReport run_eval(const std::filesystem::path& benchmark_path, const std::filesystem::path& predictions_path,
                    const EvalConfig& cfg) {
    const auto bench = load_jsonl(benchmark_path);
    const auto preds = load_predictions(predictions_path);
    EvalConfig c = cfg;
    if (c.image_root.empty())
        c.image_root = benchmark_path.parent_path();
    return run_eval(bench, sha256_hex(detail::read_text_file(benchmark_path)), preds, c);
}

EvalReport run_eval(const std::vector<InstructionSample>& bench, const std::string& bench_sha256,
                    const std::vector<PredictionRecord>& preds, const EvalConfig& cfg) {
    if (cfg.use_judge && !cfg.judge)
        fail(ErrorCode::InvalidArgument, "judging enabled without a judge client");
    HashedEmbedder default_embedder;
    Embedder& emb = cfg.embedder ? *cfg.embedder : default_embedder;

    EvalReport rep;
    rep.benchmark_sha256 = bench_sha256;
    rep.benchmark_size = bench.size();
    rep.config = config_json(cfg, emb).dump();

    std::map<std::string, const PredictionRecord*> by_id;
    std::set<std::string> models;
    for (const auto& p : preds) {
        by_id.emplace(p.sample_id, &p);
        if (!p.model.empty())
            models.insert(p.model);
    }
    if (models.size() > 1)
        fail(ErrorCode::InvalidArgument, "predictions name " + std::to_string(models.size()) + " models");
    rep.model = models.empty() ? std::string() : *models.begin();

    std::set<std::string> bench_ids;
    for (const auto& s : bench) {
        family_of(s.task);
        bench_ids.insert(s.sample_id);
    }
    for (const auto& p : preds)
        if (!bench_ids.count(p.sample_id))
            rep.unmatched.push_back(p.sample_id);
    if (!bench.empty() && rep.unmatched.size() == preds.size())
        fail(ErrorCode::NoOverlap, "no prediction matches a benchmark sample");

    // Pass 1: per-item scoring that needs no corpus statistics.
    std::vector<Job> caption_jobs, judge_jobs;
    for (const auto& s : bench) {
        const auto it = by_id.find(s.sample_id);
        if (it == by_id.end()) {
            rep.missing.push_back(s.sample_id);
            continue;
        }
        ItemResult item;
        item.sample_id = s.sample_id;
        item.cell = cell_key(s.domain, s.prompt_kind, s.task);
        const std::string& response = it->second->response;
        const std::size_t idx = rep.items.size();
        if (blank(response)) {
            item.error = std::string(error_code_name(ErrorCode::EmptyText));
        } else {
            try {
                switch (family_of(s.task)) {
                case Family::Label:
                    score_labels(s, response, emb, item);
                    break;
                case Family::Binary:
                    item.values[metric::kAccuracy] = binary_correct(s, response) ? 1.0 : 0.0;
                    break;
                case Family::Caption:
                    item.values[metric::kMeteor] = meteor_lite(response, {gt_answer(s)});
                    caption_jobs.push_back({idx, &s, response});
                    break;
                case Family::Judge:
                    if (cfg.use_judge)
                        judge_jobs.push_back({idx, &s, response});
                    else
                        item.unscored = true;
                    break;
                }
            } catch (const Error& e) {
                item.error = std::string(error_code_name(e.code()));
                item.values.clear();
                spdlog::warn("{}: {}", s.sample_id, e.what());
            }
        }
        rep.items.push_back(std::move(item));
    }

    // Pass 2: CIDEr over every caption sample in the benchmark, so IDF does not
    // depend on which predictions happen to be present.
    if (!caption_jobs.empty()) {
        std::map<std::string, std::vector<std::string>> refs;
        for (const auto& s : bench)
            if (family_of(s.task) == Family::Caption)
                refs[s.sample_id] = {gt_answer(s)};
        std::map<std::string, std::string> cands;
        for (const auto& j : caption_jobs)
            cands[j.sample->sample_id] = j.response;
        try {
            const auto c = cider(cands, refs);
            for (const auto& j : caption_jobs)
                rep.items[j.item].values[metric::kCider] = c.per_item.at(j.sample->sample_id);
        } catch (const Error& e) {
            spdlog::warn("CIDEr not computed: {}", e.what());
            for (const auto& j : caption_jobs)
                rep.items[j.item].error = std::string(error_code_name(e.code()));
        }
    }

    // Pass 3: judge calls, parallel up to the client's own bound.
    if (!judge_jobs.empty()) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t k = next++; k < judge_jobs.size(); k = next++) {
                const Job& j = judge_jobs[k];
                ItemResult& item = rep.items[j.item];
                try {
                    const std::string png = judge_image(*j.sample, cfg.image_root);
                    const std::string q = question_of(*j.sample);
                    const std::string gt = gt_answer(*j.sample);
                    const auto model_score = score_response(*cfg.judge, cfg.rubric, png, q, j.response, gt);
                    const auto ref_score = score_response(*cfg.judge, cfg.rubric, png, q, gt, gt);
                    item.judge_score = model_score.score;
                    item.reference_score = ref_score.score;
                    item.values[metric::kJudgeRaw] = 10.0 * model_score.score;
                } catch (const Error& e) {
                    item.error = std::string(error_code_name(e.code()));
                    spdlog::warn("{}: {}", j.sample->sample_id, e.what());
                }
            }
        };
        const std::size_t n = std::min(judge_jobs.size(), cfg.judge->config().max_concurrency);
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n; ++i)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }

    // Deterministic fold in benchmark order.
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> pairs;
    std::size_t k = 0;
    for (const auto& s : bench) {
        if (k >= rep.items.size() || rep.items[k].sample_id != s.sample_id)
            continue;
        const ItemResult& item = rep.items[k++];
        CellResult& cell = rep.cells[item.cell];
        cell.domain = s.domain;
        cell.prompt_kind = s.prompt_kind;
        cell.task = s.task;
        ++cell.support;
        if (item.error)
            ++cell.errors[*item.error];
        if (item.unscored)
            ++cell.unscored;
        for (const auto& [name, v] : item.values) {
            cell.metrics[name].sum += v;
            ++cell.metrics[name].count;
        }
        if (item.judge_score && item.reference_score) {
            pairs[item.cell].first.push_back(*item.judge_score);
            pairs[item.cell].second.push_back(*item.reference_score);
        }
    }
    for (const auto& [key, p] : pairs)
        rep.cells[key].judge_ratio = score_pair_ratio(p.first, p.second);
    return rep;
}

std::size_t accounted_samples(const EvalReport& report) {
    std::size_t n = report.missing.size();
    for (const auto& [_, c] : report.cells)
        n += c.support;
    return n;
}

// --- rendering -------------------------------------------------------------------

namespace {

ojson report_to_json(const EvalReport& r) {
    ojson j;
    j["model"] = r.model;
    j["benchmark_sha256"] = r.benchmark_sha256;
    j["benchmark_size"] = r.benchmark_size;
    j["config"] = ojson::parse(r.config.empty() ? std::string("{}") : r.config);
    ojson cells = ojson::object();
    for (const auto& [key, c] : r.cells) {
        ojson cj;
        cj["domain"] = to_string(c.domain);
        cj["prompt_kind"] = to_string(c.prompt_kind);
        cj["task"] = to_string(c.task);
        cj["support"] = c.support;
        ojson m = ojson::object();
        for (const auto& [name, agg] : c.metrics)
            m[name] = {{"mean", agg.mean()}, {"sum", agg.sum}, {"count", agg.count}};
        cj["metrics"] = m;
        ojson e = ojson::object();
        for (const auto& [name, n] : c.errors)
            e[name] = n;
        cj["errors"] = e;
        cj["unscored"] = c.unscored;
        if (c.judge_ratio)
            cj[metric::kJudgeRatio] = *c.judge_ratio;
        cells[key] = cj;
    }
    j["cells"] = cells;
    j["missing"] = r.missing;
    j["unmatched"] = r.unmatched;
    ojson items = ojson::array();
    for (const auto& it : r.items) {
        ojson ij;
        ij["sample_id"] = it.sample_id;
        ij["cell"] = it.cell;
        ojson v = ojson::object();
        for (const auto& [name, x] : it.values)
            v[name] = x;
        ij["values"] = v;
        if (it.error)
            ij["error"] = *it.error;
        if (it.unscored)
            ij["unscored"] = true;
        if (it.judge_score)
            ij["judge_score"] = *it.judge_score;
        if (it.reference_score)
            ij["reference_score"] = *it.reference_score;
        items.push_back(ij);
    }
    j["items"] = items;
    return j;
}

std::string fmt_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string pad(std::string s, std::size_t w) {
    if (s.size() < w)
        s.append(w - s.size(), ' ');
    return s;
}

std::string render_table(const EvalReport& r) {
    // Columns: one (box, point) pair per domain that appears; other prompt kinds
    // (free-form, text) get a trailing pair.
    std::vector<Domain> domains;
    std::set<TaskTag> tasks;
    bool has_other = false;
    for (Domain d : {Domain::Natural, Domain::Ocr, Domain::MultiPanel, Domain::Screenshot, Domain::Document,
                     Domain::RemoteSensing}) {
        for (const auto& [_, c] : r.cells)
            if (c.domain == d) {
                domains.push_back(d);
                break;
            }
    }
    for (const auto& [_, c] : r.cells) {
        tasks.insert(c.task);
        if (c.prompt_kind != SamplePromptKind::Box && c.prompt_kind != SamplePromptKind::Point)
            has_other = true;
    }

    auto cell_text = [&](Domain d, SamplePromptKind k, TaskTag t) -> std::string {
        const auto it = r.cells.find(cell_key(d, k, t));
        if (it == r.cells.end())
            return "-";
        const auto& c = it->second;
        const auto m = c.metrics.find(headline_metric(t));
        if (m != c.metrics.end() && m->second.count)
            return fmt_value(m->second.mean());
        if (c.unscored)
            return "unscored";
        return "n/a";
    };
    auto other_text = [&](Domain d, TaskTag t) -> std::string {
        for (SamplePromptKind k : {SamplePromptKind::FreeForm, SamplePromptKind::Text}) {
            const auto s = cell_text(d, k, t);
            if (s != "-")
                return s;
        }
        return "-";
    };

    constexpr std::size_t w0 = 32, w = 11;
    std::ostringstream os;
    os << "model: " << (r.model.empty() ? "(unnamed)" : r.model) << "\n";
    os << "benchmark: " << r.benchmark_sha256 << " (" << r.benchmark_size << " samples, " << r.missing.size()
       << " missing)\n\n";
    os << pad("task (metric)", w0);
    for (Domain d : domains)
        os << " | " << pad(to_string(d), 2 * w + 1);
    os << "\n" << pad("", w0);
    for (std::size_t i = 0; i < domains.size(); ++i)
        os << " | " << pad("box", w) << " " << pad(has_other ? "point/other" : "point", w);
    os << "\n" << std::string(w0, '-');
    for (std::size_t i = 0; i < domains.size(); ++i)
        os << "-+-" << std::string(2 * w + 1, '-');
    os << "\n";
    for (TaskTag t : tasks) {
        os << pad(std::string(to_string(t)) + " (" + headline_metric(t) + ")", w0);
        for (Domain d : domains) {
            std::string point = cell_text(d, SamplePromptKind::Point, t);
            if (point == "-" && has_other)
                point = other_text(d, t);
            os << " | " << pad(cell_text(d, SamplePromptKind::Box, t), w) << " " << pad(point, w);
        }
        os << "\n";
    }

    bool any_ratio = false;
    for (const auto& [key, c] : r.cells)
        if (c.judge_ratio) {
            if (!any_ratio)
                os << "\njudge ratio (model / reference x 100):\n";
            any_ratio = true;
            os << "  " << key << ": " << fmt_value(*c.judge_ratio) << "\n";
        }
    bool any_err = false;
    for (const auto& [key, c] : r.cells)
        for (const auto& [name, n] : c.errors) {
            if (!any_err)
                os << "\nerrors:\n";
            any_err = true;
            os << "  " << key << ": " << name << " x" << n << "\n";
        }
    // strip the padding at line ends
    std::string out, line;
    std::istringstream lines(os.str());
    while (std::getline(lines, line)) {
        line.erase(line.find_last_not_of(' ') + 1);
        out += line + "\n";
    }
    return out;
}

} // namespace

std::string render_report(const EvalReport& report, ReportFormat format) {
    if (format == ReportFormat::Json)
        return report_to_json(report).dump(2) + "\n";
    return render_table(report);
}

EvalReport report_from_json(std::string_view text) {
    EvalReport r;
    try {
        const auto j = ojson::parse(text);
        r.model = j.at("model").get<std::string>();
        r.benchmark_sha256 = j.at("benchmark_sha256").get<std::string>();
        r.benchmark_size = j.at("benchmark_size").get<std::size_t>();
        r.config = j.at("config").dump();
        for (const auto& [key, cj] : j.at("cells").items()) {
            CellResult c;
            c.domain = domain_from_string(cj.at("domain").get<std::string>());
            c.prompt_kind = sample_prompt_kind_from_string(cj.at("prompt_kind").get<std::string>());
            c.task = task_from_string(cj.at("task").get<std::string>());
            c.support = cj.at("support").get<std::size_t>();
            for (const auto& [name, m] : cj.at("metrics").items())
                c.metrics[name] = {m.at("sum").get<double>(), m.at("count").get<std::size_t>()};
            for (const auto& [name, n] : cj.at("errors").items())
                c.errors[name] = n.get<std::size_t>();
            c.unscored = cj.at("unscored").get<std::size_t>();
            if (cj.contains(metric::kJudgeRatio))
                c.judge_ratio = cj.at(metric::kJudgeRatio).get<double>();
            r.cells[key] = std::move(c);
        }
        r.missing = j.at("missing").get<std::vector<std::string>>();
        r.unmatched = j.at("unmatched").get<std::vector<std::string>>();
        for (const auto& ij : j.at("items")) {
            ItemResult it;
            it.sample_id = ij.at("sample_id").get<std::string>();
            it.cell = ij.at("cell").get<std::string>();
            for (const auto& [name, v] : ij.at("values").items())
                it.values[name] = v.get<double>();
            if (ij.contains("error"))
                it.error = ij.at("error").get<std::string>();
            it.unscored = ij.value("unscored", false);
            if (ij.contains("judge_score"))
                it.judge_score = ij.at("judge_score").get<int>();
            if (ij.contains("reference_score"))
                it.reference_score = ij.at("reference_score").get<int>();
            r.items.push_back(std::move(it));
        }
    } catch (const ojson::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("malformed report: ") + e.what());
    }
    return r;
}

} // namespace vpkit
