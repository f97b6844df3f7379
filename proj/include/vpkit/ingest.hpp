#pragma once

#include "vpkit/geometry.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vpkit {

enum class Domain { Natural, Document, Ocr, RemoteSensing, Screenshot, MultiPanel };

const char* to_string(Domain d);
/// Throws UnknownDomain.
Domain domain_from_string(std::string_view s);

struct Region {
    std::string region_id;
    BoxPrompt box;
    std::optional<BinaryMask> mask;
    std::optional<std::string> label;
    std::vector<std::string> expressions;
    bool inflated = false; // degenerate source box grown to the minimum side

    friend bool operator==(const Region&, const Region&) = default;
};

/// Caption phrase [char_start, char_end) in UTF-8 bytes, grounded to regions.
struct PhraseLink {
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    std::vector<std::string> region_ids;

    friend bool operator==(const PhraseLink&, const PhraseLink&) = default;
};

struct QaEntry {
    std::string question;
    std::string answer;
    std::vector<std::string> region_ids; // placeholders in either text, first-appearance order

    friend bool operator==(const QaEntry&, const QaEntry&) = default;
};

struct AnnotationRecord {
    std::string record_id;
    std::string image_id;
    std::string image_path;
    ImageSize image_size;
    Domain domain = Domain::Natural;
    std::string source; // manifest source name
    std::vector<Region> regions;
    std::optional<std::string> caption;
    std::vector<PhraseLink> links;
    std::vector<QaEntry> qa;

    const Region* find_region(std::string_view id) const;
    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

enum class SourceFormat { CocoDet, CocoSeg, RefExp, PhraseGrounding, GroundingQa };

const char* to_string(SourceFormat f);
SourceFormat source_format_from_string(std::string_view s);

struct SourceManifest {
    std::string name;
    SourceFormat format = SourceFormat::CocoDet;
    std::filesystem::path annotation_file;
    std::filesystem::path image_root;
    Domain domain = Domain::Natural;
};

/// Manifest file: {"sources": [{"name", "format", "annotations", "image_root", "domain"}]}.
/// Relative paths resolve against the manifest's directory.
std::vector<SourceManifest> load_manifest(const std::filesystem::path& path);

struct IngestOptions {
    double min_box_side = 0.01;
};

struct ParseResult {
    std::vector<AnnotationRecord> records;
    std::size_t skipped_compressed_rle = 0;
    std::size_t skipped_empty_masks = 0;
    std::size_t inflated_boxes = 0;
};

ParseResult parse_detection(const SourceManifest& m, const IngestOptions& opts = {});
ParseResult parse_segmentation(const SourceManifest& m, const IngestOptions& opts = {});
ParseResult parse_refexp(const SourceManifest& m, const IngestOptions& opts = {});
ParseResult parse_phrase_grounding(const SourceManifest& m, const IngestOptions& opts = {});
ParseResult parse_grounding_qa(const SourceManifest& m, const IngestOptions& opts = {});

/// Dispatches on m.format.
ParseResult parse_source(const SourceManifest& m, const IngestOptions& opts = {});
/// Every source of a manifest, in manifest order.
ParseResult ingest_manifest(const std::filesystem::path& manifest_path, const IngestOptions& opts = {});

/// Throws MalformedAnnotation naming the first violated invariant.
void validate(const AnnotationRecord& r);

std::string to_json_line(const AnnotationRecord& r);
AnnotationRecord record_from_json_line(std::string_view line);
void write_records(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path);
std::vector<AnnotationRecord> read_records(const std::filesystem::path& path);

} // namespace vpkit
