#include "vpkit/construct.hpp"

#include "json_io.hpp"
#include "vpkit/metrics.hpp"

#include <spdlog/spdlog.h>

#include <cctype>
#include <cstdlib>
#include <regex>

#ifndef VPKIT_TEMPLATE_DIR
#define VPKIT_TEMPLATE_DIR "templates"
#endif

namespace vpkit {

using detail::ojson;
using nlohmann::json;

namespace {

std::vector<std::string> pool_lines(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos)
            nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        if (line.find_first_not_of(" \t\r") != std::string::npos)
            out.push_back(line);
        pos = nl + 1;
    }
    return out;
}

std::string chomp(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r'))
        s.pop_back();
    return s;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

RoleKind role_kind_from_string(const std::string& s) {
    if (s == "marks")
        return RoleKind::Marks;
    if (s == "relations")
        return RoleKind::Relations;
    if (s == "qa")
        return RoleKind::Qa;
    fail(ErrorCode::InvalidArgument, "unknown role kind '" + s + "'");
}

std::string mark_description(const DomainTemplate& t, Stage1Mode kind) {
    if (t.style == "ocr")
        return "a red polygon outline";
    return kind == Stage1Mode::Point ? "a green dot" : "a green rectangle outline";
}

std::string count_word(std::size_t n) {
    static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
    return n < 10 ? words[n] : std::to_string(n);
}

[[noreturn]] void malformed(std::string_view raw, std::size_t line, const std::string& what) {
    throw ResponseParseError(ErrorCode::MalformedResponse, "line " + std::to_string(line) + ": " + what,
                             std::string(raw), 0, {}, line);
}

[[noreturn]] void incomplete(std::string_view raw, int role, std::set<int> missing, const std::string& what) {
    std::string ids;
    for (int k : missing)
        ids += (ids.empty() ? "" : ",") + std::to_string(k);
    throw ResponseParseError(ErrorCode::IncompleteResponse,
                             "role " + std::to_string(role) + ": " + what + (ids.empty() ? "" : " {" + ids + "}"),
                             std::string(raw), role, std::move(missing));
}

struct Section {
    std::size_t header_line = 0;
    std::vector<std::pair<std::size_t, std::string>> lines;
};

} // namespace

const DomainTemplate& TemplateSet::domain(Domain d) const {
    auto it = domains.find(d);
    if (it == domains.end())
        fail(ErrorCode::UnknownDomain, std::string("no generation template for domain ") + to_string(d));
    return it->second;
}

TemplateSet load_templates(const std::filesystem::path& dir) {
    TemplateSet t;
    t.public_wrapper = chomp(detail::read_text_file(dir / "public.txt"));
    t.stage1_pool = pool_lines(detail::read_text_file(dir / "stage1.txt"));
    t.invert_pool = pool_lines(detail::read_text_file(dir / "invert.txt"));
    t.brief_pool = pool_lines(detail::read_text_file(dir / "brief.txt"));
    t.retry = chomp(detail::read_text_file(dir / "retry.txt"));
    t.rubric = chomp(detail::read_text_file(dir / "judge" / "rubric.txt"));
    for (Domain d : {Domain::Natural, Domain::Document, Domain::Ocr, Domain::RemoteSensing, Domain::Screenshot,
                     Domain::MultiPanel}) {
        const auto sub = dir / to_string(d);
        if (!std::filesystem::exists(sub / "meta.json"))
            continue;
        DomainTemplate dt;
        const auto meta = detail::read_json_file(sub / "meta.json", ErrorCode::InvalidArgument);
        try {
            dt.subject = meta.at("subject").get<std::string>();
            dt.style = meta.value("style", "natural");
            for (const auto& r : meta.at("roles"))
                dt.roles.push_back({r.at("name").get<std::string>(), role_kind_from_string(r.at("kind")),
                                    task_from_string(r.at("task").get<std::string>())});
        } catch (const json::exception& e) {
            fail(ErrorCode::InvalidArgument, (sub / "meta.json").string() + ": " + e.what());
        }
        dt.role_text = chomp(detail::read_text_file(sub / "role.txt"));
        dt.format_text = chomp(detail::read_text_file(sub / "format.txt"));
        t.domains.emplace(d, std::move(dt));
    }
    return t;
}

std::filesystem::path default_template_dir() {
    if (const char* env = std::getenv("VPKIT_TEMPLATE_DIR"); env && *env)
        return env;
    return VPKIT_TEMPLATE_DIR;
}

std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find('{', pos);
        if (open == std::string_view::npos)
            break;
        const auto close = text.find('}', open + 1);
        if (close == std::string_view::npos)
            break;
        const std::string key(text.substr(open + 1, close - open - 1));
        auto it = values.find(key);
        out.append(text.substr(pos, open - pos));
        if (it != values.end()) {
            out += it->second;
        } else {
            out.append(text.substr(open, close - open + 1));
        }
        pos = close + 1;
    }
    out.append(text.substr(pos));
    return out;
}

Gpt4vPrompt assemble_gpt4v_prompt(const AnnotationRecord& record, Domain domain,
                                  const std::vector<std::string>& categories, const TemplateSet& templates,
                                  Stage1Mode mark_kind) {
    if (record.regions.empty())
        fail(ErrorCode::EmptyRegions, "record " + record.record_id + " has no regions to mark");
    const auto& dt = templates.domain(domain);
    if (!categories.empty() && categories.size() != record.regions.size())
        fail(ErrorCode::InvalidArgument, "category list length differs from the region count");

    Gpt4vPrompt out;
    out.style = dt.style == "ocr" ? ocr_style() : natural_style();
    if (mark_kind == Stage1Mode::Point)
        out.style.shape = MarkShape::PointDot;
    std::string block;
    for (std::size_t i = 0; i < record.regions.size(); ++i) {
        const auto& reg = record.regions[i];
        std::string label;
        if (!categories.empty()) {
            label = categories[i];
        } else if (reg.label) {
            label = *reg.label;
        } else {
            fail(ErrorCode::InvalidArgument, "region " + reg.region_id + " has no category label");
        }
        const int k = static_cast<int>(i) + 1;
        block += (i ? "\n" : "") + std::string("<Mark ") + std::to_string(k) + ">: " + label;
        MarkPlanEntry e;
        e.mark_id = k;
        e.region_id = reg.region_id;
        if (mark_kind == Stage1Mode::Point) {
            e.prompt = PointPrompt{(reg.box.x1 + reg.box.x2) / 2, (reg.box.y1 + reg.box.y2) / 2};
        } else {
            e.prompt = reg.box;
        }
        e.shape = out.style.shape;
        e.color = out.style.stroke;
        out.plan.push_back(std::move(e));
    }
    out.text = fill_placeholders(templates.public_wrapper, {{"subject", dt.subject},
                                                            {"mark_description", mark_description(dt, mark_kind)},
                                                            {"categories", block},
                                                            {"role_count", count_word(dt.roles.size())},
                                                            {"role", dt.role_text},
                                                            {"format", dt.format_text}});
    return out;
}

std::vector<RoleOutput> parse_gpt4v_response(std::string_view text, const std::vector<RoleSpec>& expected_roles,
                                             std::size_t n_marks) {
    static const std::regex header(R"(^\s*<?\s*Role\s*(\d+)\b.*$)", std::regex::icase);
    static const std::regex entry(R"(^\s*((?:<Mark \d+>\s*)+):\s*(.*)$)");
    static const std::regex mark_token(R"(<Mark (\d+)>)");

    std::vector<Section> sections;
    std::size_t no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        std::string line = normalize_mark_tokens(text.substr(pos, nl - pos));
        ++no;
        pos = nl + 1;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (std::regex_match(line, header)) {
            if (sections.size() == expected_roles.size())
                malformed(text, no, "more role sections than the " + std::to_string(expected_roles.size()) + " expected");
            sections.push_back({no, {}});
            continue;
        }
        if (trim(line).empty())
            continue;
        if (sections.empty())
            malformed(text, no, "text before the first role header");
        sections.back().lines.emplace_back(no, std::move(line));
    }
    if (sections.size() < expected_roles.size()) {
        const int role = static_cast<int>(sections.size()) + 1;
        std::set<int> missing;
        if (expected_roles[sections.size()].kind == RoleKind::Marks)
            for (std::size_t k = 1; k <= n_marks; ++k)
                missing.insert(static_cast<int>(k));
        incomplete(text, role, std::move(missing), "role section missing");
    }

    std::vector<RoleOutput> out;
    for (std::size_t r = 0; r < sections.size(); ++r) {
        RoleOutput ro;
        ro.spec = expected_roles[r];
        const int role_no = static_cast<int>(r) + 1;
        std::string* current = nullptr;
        for (const auto& [line_no, line] : sections[r].lines) {
            if (ro.spec.kind == RoleKind::Qa) {
                const std::string t = trim(line);
                json j;
                try {
                    j = json::parse(t);
                } catch (const json::exception&) {
                    malformed(text, line_no, "Q&A line is not a JSON object");
                }
                if (!j.is_object())
                    malformed(text, line_no, "Q&A line is not a JSON object");
                std::optional<std::string> q, a;
                for (auto it = j.begin(); it != j.end(); ++it) {
                    std::string key = it.key();
                    for (auto& c : key)
                        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                    if (!it.value().is_string())
                        continue;
                    if (key == "question")
                        q = it.value().get<std::string>();
                    else if (key == "answer")
                        a = it.value().get<std::string>();
                }
                if (!q || !a || trim(*q).empty() || trim(*a).empty())
                    malformed(text, line_no, "Q&A line needs non-empty question and answer");
                ro.qa.push_back({trim(*q), trim(*a)});
                continue;
            }
            std::smatch m;
            if (!std::regex_match(line, m, entry)) {
                if (!current)
                    malformed(text, line_no, "expected a '<Mark k>: ...' entry");
                *current += " " + trim(line);
                continue;
            }
            std::vector<int> ids;
            const std::string head = m[1].str();
            for (std::sregex_iterator it(head.begin(), head.end(), mark_token), end; it != end; ++it) {
                const auto digits = (*it)[1].str();
                const int id = digits.size() > 6 ? 0 : std::stoi(digits);
                if (id < 1 || static_cast<std::size_t>(id) > n_marks)
                    malformed(text, line_no, "mark id " + digits + " outside 1.." + std::to_string(n_marks));
                ids.push_back(id);
            }
            const std::string body = trim(m[2].str());
            if (ro.spec.kind == RoleKind::Marks) {
                if (ids.size() != 1)
                    malformed(text, line_no, "description entries name exactly one mark");
                auto [it, fresh] = ro.marks.emplace(ids[0], body);
                if (!fresh)
                    malformed(text, line_no, "mark " + std::to_string(ids[0]) + " described twice");
                current = &it->second;
            } else {
                ro.relations.push_back({ids, body});
                current = &ro.relations.back().analysis;
            }
        }
        if (ro.spec.kind == RoleKind::Marks) {
            std::set<int> missing;
            for (std::size_t k = 1; k <= n_marks; ++k)
                if (!ro.marks.count(static_cast<int>(k)))
                    missing.insert(static_cast<int>(k));
            if (!missing.empty())
                incomplete(text, role_no, std::move(missing), "missing mark entries");
            for (const auto& [k, d] : ro.marks)
                if (d.empty())
                    incomplete(text, role_no, {k}, "empty description");
        } else if (ro.spec.kind == RoleKind::Relations && ro.relations.empty()) {
            incomplete(text, role_no, {}, "no relationship entries");
        } else if (ro.spec.kind == RoleKind::Qa && ro.qa.empty()) {
            incomplete(text, role_no, {}, "no Q&A pairs");
        }
        out.push_back(std::move(ro));
    }
    return out;
}

std::string render_gpt4v_response(const std::vector<RoleOutput>& roles) {
    std::string out;
    for (std::size_t r = 0; r < roles.size(); ++r) {
        const auto& ro = roles[r];
        out += "<Role " + std::to_string(r + 1) + " (" + ro.spec.name + ")>\n";
        switch (ro.spec.kind) {
        case RoleKind::Marks:
            for (const auto& [k, d] : ro.marks)
                out += "<Mark " + std::to_string(k) + ">: " + d + "\n";
            break;
        case RoleKind::Relations:
            for (const auto& rel : ro.relations) {
                for (int k : rel.marks)
                    out += "<Mark " + std::to_string(k) + ">";
                out += ": " + rel.analysis + "\n";
            }
            break;
        case RoleKind::Qa:
            for (const auto& qa : ro.qa)
                out += ojson{{"question", qa.question}, {"answer", qa.answer}}.dump() + "\n";
            break;
        }
    }
    return out;
}

std::vector<InstructionSample> samples_from_response(const AnnotationRecord& record, const Gpt4vPrompt& prompt,
                                                      const std::vector<RoleOutput>& roles,
                                                      const TemplateSet& /*templates*/) {
    std::vector<InstructionSample> out;
    VisualPromptSet prompts;
    for (const auto& e : prompt.plan)
        prompts.push_back(e.prompt);
    const auto kind = prompt.style.shape == MarkShape::PointDot ? SamplePromptKind::Point : SamplePromptKind::Box;
    const std::string marks = mark_list(prompts.size());
    for (const auto& ro : roles) {
        InstructionSample s;
        s.sample_id = record.record_id + "/gpt4v/" + to_string(ro.spec.task);
        s.image_path = record.image_path;
        s.domain = record.domain;
        s.prompts = prompts;
        s.prompt_kind = kind;
        s.task = ro.spec.task;
        s.provenance = {record.source, Generator::Gpt4v};
        std::string answer;
        switch (ro.spec.kind) {
        case RoleKind::Marks: {
            for (const auto& [k, d] : ro.marks)
                answer += (answer.empty() ? "" : "\n") + std::string("<Mark ") + std::to_string(k) + ">: " + d;
            const std::string ask = ro.spec.task == TaskTag::BriefCaption
                                        ? "Give a one-sentence description of each of " + marks + "."
                                        : "Describe each of " + marks + " in detail.";
            s.turns = {{TurnRole::User, ask}, {TurnRole::Assistant, answer}};
            break;
        }
        case RoleKind::Relations:
            for (const auto& rel : ro.relations) {
                if (!answer.empty())
                    answer += "\n";
                for (int k : rel.marks)
                    answer += "<Mark " + std::to_string(k) + ">";
                answer += ": " + rel.analysis;
            }
            s.turns = {{TurnRole::User, "How do " + marks + " relate to each other?"},
                       {TurnRole::Assistant, answer}};
            break;
        case RoleKind::Qa:
            for (const auto& qa : ro.qa) {
                s.turns.push_back({TurnRole::User, qa.question});
                s.turns.push_back({TurnRole::Assistant, qa.answer});
            }
            break;
        }
        out.push_back(std::move(s));
    }
    return out;
}

GenerationResult generate_with_gpt4v(const std::vector<AnnotationRecord>& records, const TemplateSet& templates,
                                     const CompletionFn& complete,
                                     const std::optional<std::filesystem::path>& reject_path, Stage1Mode mark_kind) {
    GenerationResult result;
    std::string rejects;
    for (const auto& r : records) {
        if (r.regions.empty() || !templates.domains.count(r.domain)) {
            spdlog::warn("{}: no regions or no template for domain {}, skipped", r.record_id, to_string(r.domain));
            continue;
        }
        const auto prompt = assemble_gpt4v_prompt(r, r.domain, {}, templates, mark_kind);
        VisualPromptSet prompts;
        for (const auto& e : prompt.plan)
            prompts.push_back(e.prompt);
        const auto overlay = render_marks(std::filesystem::path(r.image_path), prompts, prompt.style);
        const auto& roles = templates.domain(r.domain).roles;

        auto attempt = [&](const std::string& text) {
            const auto raw = complete(text, overlay.png);
            auto parsed = parse_gpt4v_response(raw, roles, prompt.plan.size());
            auto samples = samples_from_response(r, prompt, parsed, templates);
            for (const auto& s : samples)
                if (auto v = sample_violations(s); !v.empty())
                    throw ResponseParseError(ErrorCode::MalformedResponse, s.sample_id + ": " + v.front(), raw);
            return samples;
        };
        try {
            auto s = attempt(prompt.text);
            result.samples.insert(result.samples.end(), s.begin(), s.end());
            continue;
        } catch (const ResponseParseError& e) {
            spdlog::info("{}: re-asking after parse failure: {}", r.record_id, e.what());
            ++result.retried;
            const std::string again =
                prompt.text + "\n\n" + fill_placeholders(templates.retry, {{"reason", e.what()}});
            try {
                auto s = attempt(again);
                result.samples.insert(result.samples.end(), s.begin(), s.end());
                continue;
            } catch (const ResponseParseError& e2) {
                ++result.rejected;
                rejects += ojson{{"record_id", r.record_id}, {"error", e2.what()}, {"raw", e2.raw()}}.dump() + "\n";
            }
        }
    }
    if (reject_path)
        detail::write_file_atomic(*reject_path, rejects);
    return result;
}

} // namespace vpkit
