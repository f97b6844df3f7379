#pragma once

#include "vpkit/augment.hpp"
#include "vpkit/error.hpp"
#include "vpkit/geometry.hpp"
#include "vpkit/ingest.hpp"
#include "vpkit/som_render.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vpkit {

enum class TaskTag {
    Stage1Label,
    MultiTargetCaption,
    BriefCaption,
    DetailedCaption,
    InterRelationship,
    Qa,
    Reasoning,
    BinaryChoice,
};

const char* to_string(TaskTag t);
/// Throws UnknownTask.
TaskTag task_from_string(std::string_view s);

/// `Text` marks the coordinates-in-text baseline, whose prompt channel is empty.
enum class SamplePromptKind { Point, Box, FreeForm, Text };

const char* to_string(SamplePromptKind k);
SamplePromptKind sample_prompt_kind_from_string(std::string_view s);

enum class TurnRole { User, Assistant };

struct Turn {
    TurnRole role = TurnRole::User;
    std::string text;
    friend bool operator==(const Turn&, const Turn&) = default;
};

enum class Generator { Rule, Gpt4v };

struct Provenance {
    std::string source;
    Generator generator = Generator::Rule;
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct BinaryChoices {
    std::string class_a;
    std::string class_b;
    friend bool operator==(const BinaryChoices&, const BinaryChoices&) = default;
};

struct InstructionSample {
    std::string sample_id;
    std::string image_path;
    Domain domain = Domain::Natural;
    VisualPromptSet prompts;
    SamplePromptKind prompt_kind = SamplePromptKind::Box;
    TaskTag task = TaskTag::Stage1Label;
    std::vector<Turn> turns;
    Provenance provenance;
    std::optional<BinaryChoices> choices; // binary-choice task only

    /// Number of marks the text may cite: prompts.size(), or for the Text
    /// kind the number of coordinate prefix lines.
    std::size_t mark_count() const;
    const Turn* last(TurnRole role) const;
    friend bool operator==(const InstructionSample&, const InstructionSample&) = default;
};

/// Empty when the sample satisfies every invariant.
std::vector<std::string> sample_violations(const InstructionSample& s);
/// Throws InvalidArgument listing the violations.
void validate(const InstructionSample& s);

/// Every `<Mark k>` id (also accepting `Mark k` without brackets) in text order.
std::vector<int> mark_ids_in(std::string_view text);
/// Rewrites `<Mark  k>`, `<Region k>` and similar spellings to `<Mark k>`.
std::string normalize_mark_tokens(std::string_view text);
/// "<Mark 1>, <Mark 2> and <Mark 3>" style list for ids 1..n.
std::string mark_list(std::size_t n);

// --- templates ---------------------------------------------------------------

enum class RoleKind { Marks, Relations, Qa };

struct RoleSpec {
    std::string name;
    RoleKind kind = RoleKind::Marks;
    TaskTag task = TaskTag::DetailedCaption;
};

struct DomainTemplate {
    std::string subject;
    std::string style; // "natural" or "ocr"
    std::vector<RoleSpec> roles;
    std::string role_text;
    std::string format_text;
};

/// Contents of a template directory: public.txt, <domain>/{meta.json,role.txt,format.txt},
/// stage1.txt, invert.txt, brief.txt, retry.txt and judge/rubric.txt.
struct TemplateSet {
    std::string public_wrapper;
    std::map<Domain, DomainTemplate> domains;
    std::vector<std::string> stage1_pool;
    std::vector<std::string> invert_pool;
    std::vector<std::string> brief_pool;
    std::string retry;
    std::string rubric;

    /// Throws UnknownDomain when the directory has no template for `d`.
    const DomainTemplate& domain(Domain d) const;
};

TemplateSet load_templates(const std::filesystem::path& dir);
/// The directory configured at build time, overridable with VPKIT_TEMPLATE_DIR.
std::filesystem::path default_template_dir();

/// Replaces each `{key}` in `text`; unknown keys are left in place.
std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& values);

// --- stage 1 -------------------------------------------------------------------

enum class Stage1Mode { Point, Box };

struct Stage1Config {
    std::size_t capacity = 16;
    bool augment = true;
    AugmentConfig jitter;
    std::size_t points_per_image = 8;
};

struct Stage1Result {
    std::vector<InstructionSample> samples;
    std::size_t skipped_unlabelled = 0;
};

/// Box mode: labelled regions become box prompts (jittered when cfg.augment),
/// split into chunks of at most cfg.capacity. Point mode: pixels are drawn
/// from a label map painted from the labelled masks (later regions on top).
Stage1Result build_stage1(const std::vector<AnnotationRecord>& records, Stage1Mode mode, const Stage1Config& cfg,
                          std::uint64_t seed, const TemplateSet& templates);

// --- rule-based conversions ------------------------------------------------------

/// Caption with linked boxes -> multi-target caption sample. Each linked
/// region becomes one mark in order of first appearance; each phrase is
/// followed by " (Mark k)" or " (Mark k, Mark j)".
InstructionSample invert_grounding(const AnnotationRecord& record, const TemplateSet& templates);

/// One brief-caption sample per referring expression region.
std::vector<InstructionSample> refexp_to_brief(const AnnotationRecord& record, const TemplateSet& templates);

/// Grounding QA -> one qa sample per record; regions are numbered by first
/// reference across the whole conversation, placeholders become `<Mark k>`
/// and leftover coordinate literals are removed.
std::vector<InstructionSample> reconstruct_qa(const AnnotationRecord& record);

/// Matches any leftover coordinate literal such as "(0.1, 0.2" or "[12, 40, 90, 120]".
bool contains_coordinate_literal(std::string_view text);

// --- GPT-4V assisted generation -------------------------------------------------

struct MarkPlanEntry {
    int mark_id = 0;
    std::string region_id;
    VisualPrompt prompt;
    MarkShape shape = MarkShape::BoxOutline;
    Rgb color;
};

struct Gpt4vPrompt {
    std::string text;
    std::vector<MarkPlanEntry> plan;
    MarkStyle style;
};

/// `categories` overrides region labels when non-empty (must match the
/// region count). Errors: EmptyRegions, UnknownDomain.
Gpt4vPrompt assemble_gpt4v_prompt(const AnnotationRecord& record, Domain domain,
                                  const std::vector<std::string>& categories, const TemplateSet& templates,
                                  Stage1Mode mark_kind = Stage1Mode::Box);

struct Relation {
    std::vector<int> marks;
    std::string analysis;
    friend bool operator==(const Relation&, const Relation&) = default;
};

struct QaPair {
    std::string question;
    std::string answer;
    friend bool operator==(const QaPair&, const QaPair&) = default;
};

struct RoleOutput {
    RoleSpec spec;
    std::map<int, std::string> marks; // RoleKind::Marks
    std::vector<Relation> relations;  // RoleKind::Relations
    std::vector<QaPair> qa;           // RoleKind::Qa
};

/// Carries the raw response so callers can re-ask or quarantine.
class ResponseParseError : public Error {
  public:
    ResponseParseError(ErrorCode code, const std::string& message, std::string raw, int role = 0,
                       std::set<int> missing = {}, std::size_t line = 0)
        : Error(code, message), raw_(std::move(raw)), role_(role), missing_(std::move(missing)), line_(line) {}

    const std::string& raw() const noexcept { return raw_; }
    int role() const noexcept { return role_; }
    const std::set<int>& missing() const noexcept { return missing_; }
    std::size_t line() const noexcept { return line_; }

  private:
    std::string raw_;
    int role_;
    std::set<int> missing_;
    std::size_t line_;
};

/// Role sections start at lines matching `<Role k ...>` (or `Role k`); the
/// n-th header opens the n-th expected role. Throws ResponseParseError with
/// IncompleteResponse (missing role or mark ids) or MalformedResponse (line number).
std::vector<RoleOutput> parse_gpt4v_response(std::string_view text, const std::vector<RoleSpec>& expected_roles,
                                             std::size_t n_marks);

/// Inverse of parse_gpt4v_response for well-formed outputs.
std::string render_gpt4v_response(const std::vector<RoleOutput>& roles);

/// Samples produced from one parsed response: one per role.
std::vector<InstructionSample> samples_from_response(const AnnotationRecord& record, const Gpt4vPrompt& prompt,
                                                      const std::vector<RoleOutput>& roles,
                                                      const TemplateSet& templates);

/// (prompt text, PNG bytes) -> response text. judge_client supplies the real one.
using CompletionFn = std::function<std::string(const std::string& prompt, const std::string& png)>;

struct GenerationResult {
    std::vector<InstructionSample> samples;
    std::size_t retried = 0;
    std::size_t rejected = 0;
};

/// Render SoM overlay, assemble, complete, parse; one re-ask with the retry
/// note appended, then the record goes to `reject_path` (JSONL) if given.
GenerationResult generate_with_gpt4v(const std::vector<AnnotationRecord>& records, const TemplateSet& templates,
                                     const CompletionFn& complete,
                                     const std::optional<std::filesystem::path>& reject_path = std::nullopt,
                                     Stage1Mode mark_kind = Stage1Mode::Box);

// --- ablation ------------------------------------------------------------------------

/// Moves box prompts into the first user turn as "<Mark k>: [x1,y1,x2,y2]" lines
/// (3 decimals). Point prompts -> Unsupported.
InstructionSample coords_in_text_baseline(const InstructionSample& sample);
/// Reads the boxes back from a baseline sample's prefix lines.
std::vector<BoxPrompt> parse_coordinate_prefix(std::string_view text);

// --- JSONL -----------------------------------------------------------------------------

std::string to_json_line(const InstructionSample& s);
/// Throws InvalidArgument on schema errors.
InstructionSample sample_from_json_line(std::string_view line);
/// Validates every sample; DuplicateId on a repeated sample_id.
void emit_jsonl(const std::vector<InstructionSample>& samples, const std::filesystem::path& path);
std::string emit_jsonl_string(const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> load_jsonl(const std::filesystem::path& path);

} // namespace vpkit
