#include "vpkit/construct.hpp"

#include "json_io.hpp"
#include "vpkit/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <regex>
#include <set>

namespace vpkit {

using detail::ojson;
using nlohmann::json;

namespace {

const std::regex& mark_pattern() {
    static const std::regex re(R"(\bMark\s+(\d+))");
    return re;
}

const std::regex& prefix_pattern() {
    static const std::regex re(R"(^<Mark (\d+)>: \[(-?[0-9.]+),(-?[0-9.]+),(-?[0-9.]+),(-?[0-9.]+)\]$)");
    return re;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto end = nl == std::string_view::npos ? text.size() : nl;
        std::string line(text.substr(pos, end - pos));
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        out.push_back(std::move(line));
        if (nl == std::string_view::npos)
            break;
        pos = nl + 1;
    }
    return out;
}

std::string pick(const std::vector<std::string>& pool, std::uint64_t key, const char* what) {
    if (pool.empty())
        fail(ErrorCode::InvalidArgument, std::string("template pool '") + what + "' is empty");
    DeterministicRng rng(key);
    return pool[rng.index(pool.size())];
}

std::string collapse_spaces(std::string s) {
    static const std::regex runs(R"([ \t]{2,})");
    static const std::regex before_punct(R"([ \t]+([.,;:?!]))");
    s = std::regex_replace(s, runs, " ");
    s = std::regex_replace(s, before_punct, "$1");
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

} // namespace

const char* to_string(TaskTag t) {
    switch (t) {
    case TaskTag::Stage1Label:
        return "stage1-label";
    case TaskTag::MultiTargetCaption:
        return "multi-target-caption";
    case TaskTag::BriefCaption:
        return "brief-caption";
    case TaskTag::DetailedCaption:
        return "detailed-caption";
    case TaskTag::InterRelationship:
        return "inter-relationship";
    case TaskTag::Qa:
        return "qa";
    case TaskTag::Reasoning:
        return "reasoning";
    case TaskTag::BinaryChoice:
        return "binary-choice";
    }
    return "?";
}

TaskTag task_from_string(std::string_view s) {
    for (TaskTag t : {TaskTag::Stage1Label, TaskTag::MultiTargetCaption, TaskTag::BriefCaption,
                      TaskTag::DetailedCaption, TaskTag::InterRelationship, TaskTag::Qa, TaskTag::Reasoning,
                      TaskTag::BinaryChoice})
        if (s == to_string(t))
            return t;
    fail(ErrorCode::UnknownTask, "unknown task tag '" + std::string(s) + "'");
}

const char* to_string(SamplePromptKind k) {
    switch (k) {
    case SamplePromptKind::Point:
        return "point";
    case SamplePromptKind::Box:
        return "box";
    case SamplePromptKind::FreeForm:
        return "freeform";
    case SamplePromptKind::Text:
        return "text";
    }
    return "?";
}

SamplePromptKind sample_prompt_kind_from_string(std::string_view s) {
    for (auto k : {SamplePromptKind::Point, SamplePromptKind::Box, SamplePromptKind::FreeForm, SamplePromptKind::Text})
        if (s == to_string(k))
            return k;
    fail(ErrorCode::InvalidArgument, "unknown prompt kind '" + std::string(s) + "'");
}

std::size_t InstructionSample::mark_count() const {
    if (prompt_kind != SamplePromptKind::Text)
        return prompts.size();
    const Turn* first = nullptr;
    for (const auto& t : turns)
        if (t.role == TurnRole::User) {
            first = &t;
            break;
        }
    return first ? parse_coordinate_prefix(first->text).size() : 0;
}

const Turn* InstructionSample::last(TurnRole role) const {
    for (auto it = turns.rbegin(); it != turns.rend(); ++it)
        if (it->role == role)
            return &*it;
    return nullptr;
}

std::vector<int> mark_ids_in(std::string_view text) {
    std::vector<int> ids;
    const std::string s(text);
    for (std::sregex_iterator it(s.begin(), s.end(), mark_pattern()), end; it != end; ++it) {
        const auto digits = (*it)[1].str();
        ids.push_back(digits.size() > 6 ? 1000000 : std::stoi(digits));
    }
    return ids;
}

std::string normalize_mark_tokens(std::string_view text) {
    static const std::regex token(R"(<\s*(?:Mark|Region)\s*(\d+)\s*>)");
    return std::regex_replace(std::string(text), token, "<Mark $1>");
}

std::string mark_list(std::size_t n) {
    std::string out;
    for (std::size_t k = 1; k <= n; ++k) {
        if (k > 1)
            out += k == n ? " and " : ", ";
        out += "<Mark " + std::to_string(k) + ">";
    }
    return out;
}

std::vector<std::string> sample_violations(const InstructionSample& s) {
    std::vector<std::string> v;
    if (s.sample_id.empty())
        v.push_back("sample_id is empty");
    if (s.sample_id.find('\n') != std::string::npos)
        v.push_back("sample_id contains a newline");
    if (s.image_path.empty())
        v.push_back("image_path is empty");

    std::size_t users = 0, assistants = 0;
    for (std::size_t i = 0; i < s.turns.size(); ++i) {
        (s.turns[i].role == TurnRole::User ? users : assistants)++;
        if (s.turns[i].text.find_first_not_of(" \t\r\n") == std::string::npos)
            v.push_back("turn " + std::to_string(i + 1) + " is empty");
    }
    if (users == 0)
        v.push_back("no user turn");
    if (assistants == 0)
        v.push_back("no assistant turn");
    if (!s.turns.empty() && s.turns.front().role != TurnRole::User)
        v.push_back("first turn is not from the user");

    if (s.prompt_kind == SamplePromptKind::Text) {
        if (!s.prompts.empty())
            v.push_back("text-kind sample carries prompts");
    } else if (s.prompts.empty()) {
        v.push_back("prompts are empty");
    }
    for (std::size_t i = 0; i < s.prompts.size(); ++i) {
        const auto kind = kind_of(s.prompts[i]);
        const bool ok = (s.prompt_kind == SamplePromptKind::Point && kind == PromptKind::Point) ||
                        (s.prompt_kind == SamplePromptKind::Box && kind == PromptKind::Box) ||
                        (s.prompt_kind == SamplePromptKind::FreeForm && kind == PromptKind::FreeForm);
        if (!ok)
            v.push_back("prompt " + std::to_string(i + 1) + " is a " + to_string(kind) + " in a " +
                        to_string(s.prompt_kind) + " sample");
        try {
            validate(s.prompts[i]);
        } catch (const Error& e) {
            v.push_back("prompt " + std::to_string(i + 1) + ": " + e.what());
        }
    }

    const std::size_t n = s.mark_count();
    if (s.prompt_kind == SamplePromptKind::Text && n == 0)
        v.push_back("text-kind sample has no coordinate prefix");
    for (std::size_t i = 0; i < s.turns.size(); ++i)
        for (int id : mark_ids_in(s.turns[i].text))
            if (id < 1 || static_cast<std::size_t>(id) > n)
                v.push_back("turn " + std::to_string(i + 1) + " cites Mark " + std::to_string(id) + " but N = " +
                            std::to_string(n));

    if (s.task == TaskTag::BinaryChoice) {
        if (!s.choices)
            v.push_back("binary-choice sample without choices");
        else if (s.choices->class_a.empty() || s.choices->class_b.empty())
            v.push_back("binary-choice class names must be non-empty");
    } else if (s.choices) {
        v.push_back("choices are only allowed on binary-choice samples");
    }
    return v;
}

void validate(const InstructionSample& s) {
    const auto v = sample_violations(s);
    if (v.empty())
        return;
    std::string msg = "sample '" + s.sample_id + "':";
    for (const auto& x : v)
        msg += " " + x + ";";
    fail(ErrorCode::InvalidArgument, msg);
}

// --- stage 1 -------------------------------------------------------------------

namespace {

InstructionSample stage1_sample(const AnnotationRecord& r, std::string id, VisualPromptSet prompts,
                                const std::vector<std::string>& labels, SamplePromptKind kind, std::uint64_t seed,
                                const TemplateSet& t) {
    InstructionSample s;
    s.sample_id = std::move(id);
    s.image_path = r.image_path;
    s.domain = r.domain;
    s.prompt_kind = kind;
    s.task = TaskTag::Stage1Label;
    s.provenance = {r.source, Generator::Rule};
    const std::string ask =
        fill_placeholders(pick(t.stage1_pool, derive_seed(seed, fnv1a64(s.sample_id)), "stage1"),
                          {{"marks", mark_list(prompts.size())}});
    std::string answer;
    for (std::size_t k = 0; k < labels.size(); ++k)
        answer += (k ? "\n" : "") + std::string("<Mark ") + std::to_string(k + 1) + ">: " + labels[k];
    s.prompts = std::move(prompts);
    s.turns = {{TurnRole::User, ask}, {TurnRole::Assistant, answer}};
    return s;
}

} // namespace

Stage1Result build_stage1(const std::vector<AnnotationRecord>& records, Stage1Mode mode, const Stage1Config& cfg,
                          std::uint64_t seed, const TemplateSet& templates) {
    if (cfg.capacity == 0)
        fail(ErrorCode::InvalidArgument, "capacity must be >= 1");
    if (cfg.augment)
        validate(cfg.jitter);
    Stage1Result out;
    for (const auto& r : records) {
        const std::uint64_t rkey = fnv1a64(r.record_id);
        if (mode == Stage1Mode::Box) {
            std::vector<std::pair<BoxPrompt, std::string>> items;
            for (std::size_t i = 0; i < r.regions.size(); ++i) {
                const auto& reg = r.regions[i];
                if (!reg.label)
                    continue;
                BoxPrompt b = reg.box;
                if (cfg.augment)
                    b = jitter_box(b, cfg.jitter, derive_seed(seed, rkey, i));
                items.emplace_back(b, *reg.label);
            }
            if (items.empty()) {
                ++out.skipped_unlabelled;
                continue;
            }
            for (std::size_t start = 0, chunk = 0; start < items.size(); start += cfg.capacity, ++chunk) {
                const std::size_t end = std::min(items.size(), start + cfg.capacity);
                VisualPromptSet prompts;
                std::vector<std::string> labels;
                for (std::size_t i = start; i < end; ++i) {
                    prompts.emplace_back(items[i].first);
                    labels.push_back(items[i].second);
                }
                out.samples.push_back(stage1_sample(r, r.record_id + "/stage1-box/" + std::to_string(chunk),
                                                    std::move(prompts), labels, SamplePromptKind::Box, seed,
                                                    templates));
            }
        } else {
            LabelMap map;
            map.width = r.image_size.width;
            map.height = r.image_size.height;
            map.ids.assign(static_cast<std::size_t>(map.width) * map.height, 0);
            map.names = {"background"};
            bool any = false;
            for (const auto& reg : r.regions) {
                if (!reg.label || !reg.mask || reg.mask->width() != map.width || reg.mask->height() != map.height)
                    continue;
                auto it = std::find(map.names.begin(), map.names.end(), *reg.label);
                const auto id = static_cast<std::uint32_t>(it - map.names.begin());
                if (it == map.names.end())
                    map.names.push_back(*reg.label);
                for (int y = 0; y < map.height; ++y)
                    for (int x = 0; x < map.width; ++x)
                        if (reg.mask->at(x, y)) {
                            map.ids[static_cast<std::size_t>(y) * map.width + x] = id;
                            any = true;
                        }
            }
            if (!any) {
                ++out.skipped_unlabelled;
                continue;
            }
            const std::uint32_t ignore[] = {0};
            const auto k = std::min(cfg.points_per_image, cfg.capacity);
            const auto pts = sample_labelled_pixels(map, k, derive_seed(seed, rkey), ignore);
            VisualPromptSet prompts;
            std::vector<std::string> labels;
            for (const auto& p : pts) {
                prompts.emplace_back(p.point);
                labels.push_back(map.names[p.label]);
            }
            out.samples.push_back(stage1_sample(r, r.record_id + "/stage1-point/0", std::move(prompts), labels,
                                                SamplePromptKind::Point, seed, templates));
        }
    }
    return out;
}

// --- rule-based conversions --------------------------------------------------------

InstructionSample invert_grounding(const AnnotationRecord& record, const TemplateSet& templates) {
    if (!record.caption || record.links.empty())
        fail(ErrorCode::InvalidArgument, "record " + record.record_id + " has no grounded caption");
    std::map<std::string, int> mark_of;
    InstructionSample s;
    s.sample_id = record.record_id + "/invert";
    s.image_path = record.image_path;
    s.domain = record.domain;
    s.prompt_kind = SamplePromptKind::Box;
    s.task = TaskTag::MultiTargetCaption;
    s.provenance = {record.source, Generator::Rule};

    const std::string& caption = *record.caption;
    std::string answer;
    std::size_t pos = 0;
    for (const auto& link : record.links) {
        answer += caption.substr(pos, link.char_end - pos);
        pos = link.char_end;
        std::string ids;
        for (const auto& rid : link.region_ids) {
            auto [it, fresh] = mark_of.emplace(rid, static_cast<int>(mark_of.size()) + 1);
            if (fresh) {
                const Region* reg = record.find_region(rid);
                if (!reg)
                    fail(ErrorCode::MalformedAnnotation, "link names unknown region " + rid);
                s.prompts.emplace_back(reg->box);
            }
            ids += (ids.empty() ? "" : ", ") + std::string("Mark ") + std::to_string(it->second);
        }
        answer += " (" + ids + ")";
    }
    answer += caption.substr(pos);
    const std::string ask = fill_placeholders(pick(templates.invert_pool, fnv1a64(s.sample_id), "invert"),
                                              {{"marks", mark_list(s.prompts.size())}});
    s.turns = {{TurnRole::User, ask}, {TurnRole::Assistant, answer}};
    return s;
}

std::vector<InstructionSample> refexp_to_brief(const AnnotationRecord& record, const TemplateSet& templates) {
    std::vector<InstructionSample> out;
    for (const auto& reg : record.regions) {
        for (std::size_t j = 0; j < reg.expressions.size(); ++j) {
            InstructionSample s;
            s.sample_id = record.record_id + "/brief/" + reg.region_id + "/" + std::to_string(j);
            s.image_path = record.image_path;
            s.domain = record.domain;
            s.prompts = {reg.box};
            s.prompt_kind = SamplePromptKind::Box;
            s.task = TaskTag::BriefCaption;
            s.provenance = {record.source, Generator::Rule};
            const std::string ask =
                fill_placeholders(pick(templates.brief_pool, fnv1a64(s.sample_id), "brief"), {{"marks", mark_list(1)}});
            s.turns = {{TurnRole::User, ask}, {TurnRole::Assistant, reg.expressions[j]}};
            out.push_back(std::move(s));
        }
    }
    return out;
}

bool contains_coordinate_literal(std::string_view text) {
    static const std::regex normalized(R"(\(\s*0?\.\d+\s*,)");
    static const std::regex tuple(R"([\(\[]\s*-?\d*\.?\d+\s*,\s*-?\d*\.?\d+)");
    const std::string s(text);
    return std::regex_search(s, normalized) || std::regex_search(s, tuple);
}

std::vector<InstructionSample> reconstruct_qa(const AnnotationRecord& record) {
    static const std::regex placeholder(
        R"(\[([A-Za-z]+[0-9]+)\](\s*[\(\[]\s*-?\d*\.?\d+(?:\s*,\s*-?\d*\.?\d+){1,3}\s*[\)\]])?)");
    static const std::regex stray(R"(\s*[\(\[]\s*-?\d*\.?\d+(?:\s*,\s*-?\d*\.?\d+){1,3}\s*[\)\]])");
    if (record.qa.empty())
        return {};
    InstructionSample s;
    s.sample_id = record.record_id + "/qa";
    s.image_path = record.image_path;
    s.domain = record.domain;
    s.prompt_kind = SamplePromptKind::Box;
    s.task = TaskTag::Qa;
    s.provenance = {record.source, Generator::Rule};
    std::map<std::string, int> mark_of;

    auto rewrite = [&](const std::string& text) {
        std::string out;
        auto last = text.cbegin();
        for (std::sregex_iterator it(text.begin(), text.end(), placeholder), end; it != end; ++it) {
            const std::string rid = (*it)[1].str();
            auto [m, fresh] = mark_of.emplace(rid, static_cast<int>(mark_of.size()) + 1);
            if (fresh) {
                const Region* reg = record.find_region(rid);
                if (!reg)
                    fail(ErrorCode::MalformedAnnotation, "placeholder [" + rid + "] names no region");
                s.prompts.emplace_back(reg->box);
            }
            out.append(last, (*it)[0].first);
            out += "<Mark " + std::to_string(m->second) + ">";
            last = (*it)[0].second;
        }
        out.append(last, text.cend());
        return collapse_spaces(std::regex_replace(out, stray, ""));
    };

    for (const auto& qa : record.qa) {
        s.turns.push_back({TurnRole::User, rewrite(qa.question)});
        s.turns.push_back({TurnRole::Assistant, rewrite(qa.answer)});
    }
    if (s.prompts.empty()) {
        spdlog::warn("{}: qa cites no region, skipped", record.record_id);
        return {};
    }
    return {std::move(s)};
}

// --- ablation -------------------------------------------------------------------------

InstructionSample coords_in_text_baseline(const InstructionSample& sample) {
    if (sample.prompt_kind != SamplePromptKind::Box)
        fail(ErrorCode::Unsupported,
             std::string("coordinates-in-text needs a box sample, got ") + to_string(sample.prompt_kind));
    InstructionSample out = sample;
    std::string prefix;
    for (std::size_t k = 0; k < sample.prompts.size(); ++k) {
        const auto& b = std::get<BoxPrompt>(sample.prompts[k]);
        char buf[96];
        std::snprintf(buf, sizeof buf, "<Mark %zu>: [%.3f,%.3f,%.3f,%.3f]\n", k + 1, b.x1, b.y1, b.x2, b.y2);
        prefix += buf;
    }
    for (auto& t : out.turns)
        if (t.role == TurnRole::User) {
            t.text = prefix + t.text;
            break;
        }
    out.prompts.clear();
    out.prompt_kind = SamplePromptKind::Text;
    out.sample_id += "/coords";
    return out;
}

std::vector<BoxPrompt> parse_coordinate_prefix(std::string_view text) {
    std::vector<BoxPrompt> out;
    for (const auto& line : split_lines(text)) {
        std::smatch m;
        if (!std::regex_match(line, m, prefix_pattern()) ||
            std::stoul(m[1].str()) != out.size() + 1)
            break;
        out.push_back({std::stod(m[2].str()), std::stod(m[3].str()), std::stod(m[4].str()), std::stod(m[5].str())});
    }
    return out;
}

// --- JSONL -----------------------------------------------------------------------------

std::string to_json_line(const InstructionSample& s) {
    ojson j;
    j["sample_id"] = s.sample_id;
    j["image_path"] = s.image_path;
    j["domain"] = to_string(s.domain);
    j["prompt_kind"] = to_string(s.prompt_kind);
    j["task"] = to_string(s.task);
    auto& prompts = j["prompts"] = ojson::array();
    for (const auto& p : s.prompts)
        prompts.push_back(detail::prompt_to_json(p));
    auto& turns = j["turns"] = ojson::array();
    for (const auto& t : s.turns)
        turns.push_back({{"role", t.role == TurnRole::User ? "user" : "assistant"}, {"text", t.text}});
    j["provenance"] = {{"source", s.provenance.source},
                       {"generator", s.provenance.generator == Generator::Rule ? "rule" : "gpt4v"}};
    if (s.choices)
        j["choices"] = {{"class_a", s.choices->class_a}, {"class_b", s.choices->class_b}};
    return j.dump();
}

InstructionSample sample_from_json_line(std::string_view line) {
    try {
        const auto j = json::parse(line);
        InstructionSample s;
        s.sample_id = j.at("sample_id").get<std::string>();
        s.image_path = j.at("image_path").get<std::string>();
        s.domain = domain_from_string(j.at("domain").get<std::string>());
        s.prompt_kind = sample_prompt_kind_from_string(j.at("prompt_kind").get<std::string>());
        s.task = task_from_string(j.at("task").get<std::string>());
        for (const auto& p : j.at("prompts"))
            s.prompts.push_back(detail::prompt_from_json(p));
        for (const auto& t : j.at("turns")) {
            const auto role = t.at("role").get<std::string>();
            if (role != "user" && role != "assistant")
                fail(ErrorCode::InvalidArgument, "turn role must be user or assistant, got '" + role + "'");
            s.turns.push_back({role == "user" ? TurnRole::User : TurnRole::Assistant, t.at("text").get<std::string>()});
        }
        const auto& prov = j.at("provenance");
        s.provenance.source = prov.at("source").get<std::string>();
        const auto gen = prov.at("generator").get<std::string>();
        if (gen != "rule" && gen != "gpt4v")
            fail(ErrorCode::InvalidArgument, "generator must be rule or gpt4v");
        s.provenance.generator = gen == "rule" ? Generator::Rule : Generator::Gpt4v;
        if (j.contains("choices"))
            s.choices = BinaryChoices{j.at("choices").at("class_a").get<std::string>(),
                                      j.at("choices").at("class_b").get<std::string>()};
        return s;
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("sample JSON: ") + e.what());
    }
}

std::string emit_jsonl_string(const std::vector<InstructionSample>& samples) {
    std::set<std::string> seen;
    std::string out;
    for (const auto& s : samples) {
        validate(s);
        if (!seen.insert(s.sample_id).second)
            fail(ErrorCode::DuplicateId, "duplicate sample_id " + s.sample_id);
        out += to_json_line(s);
        out += '\n';
    }
    return out;
}

void emit_jsonl(const std::vector<InstructionSample>& samples, const std::filesystem::path& path) {
    detail::write_file_atomic(path, emit_jsonl_string(samples));
}

std::vector<InstructionSample> load_jsonl(const std::filesystem::path& path) {
    std::vector<InstructionSample> out;
    std::set<std::string> seen;
    for (const auto& [no, line] : detail::read_lines(path)) {
        InstructionSample s;
        try {
            s = sample_from_json_line(line);
        } catch (const Error& e) {
            fail(e.code(), path.string() + ":" + std::to_string(no) + ": " + e.what());
        }
        if (!seen.insert(s.sample_id).second)
            fail(ErrorCode::DuplicateId, path.string() + ":" + std::to_string(no) + ": duplicate sample_id " +
                                             s.sample_id);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace vpkit
