#include "vpkit/ingest.hpp"

#include "json_io.hpp"
#include "vpkit/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>

namespace vpkit {

using detail::ojson;
using nlohmann::json;

namespace {

struct ImageInfo {
    std::string id;
    std::string file_name;
    ImageSize size;
};

std::string id_string(const json& j) {
    if (j.is_string())
        return j.get<std::string>();
    if (j.is_number_integer())
        return std::to_string(j.get<long long>());
    fail(ErrorCode::MalformedAnnotation, "id must be a string or integer");
}

[[noreturn]] void bad_entry(const std::string& where, const std::string& what) {
    fail(ErrorCode::MalformedAnnotation, where + ": " + what);
}

// Wraps JSON access errors so they surface as MalformedAnnotation naming the entry.
template <class Fn>
auto guarded(const std::string& where, Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        bad_entry(where, e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MalformedAnnotation || e.code() == ErrorCode::IoFailure)
            throw;
        bad_entry(where, e.what());
    }
}

json load_annotations(const SourceManifest& m) {
    return detail::read_json_file(m.annotation_file, ErrorCode::MalformedAnnotation);
}

std::vector<ImageInfo> parse_images(const json& root) {
    std::vector<ImageInfo> out;
    if (!root.contains("images"))
        bad_entry("root", "missing images array");
    const auto& arr = root.at("images");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        out.push_back(guarded("images[" + std::to_string(i) + "]", [&] {
            ImageInfo info{id_string(arr[i].at("id")), arr[i].at("file_name").get<std::string>(),
                           {arr[i].at("width").get<int>(), arr[i].at("height").get<int>()}};
            if (info.size.width <= 0 || info.size.height <= 0)
                fail(ErrorCode::MalformedAnnotation, "non-positive image size");
            return info;
        }));
    }
    return out;
}

std::map<std::string, std::size_t> index_images(const std::vector<ImageInfo>& images) {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (!idx.emplace(images[i].id, i).second)
            bad_entry("images[" + std::to_string(i) + "]", "duplicate image id " + images[i].id);
    return idx;
}

std::size_t lookup_image(const std::map<std::string, std::size_t>& idx, const json& image_id,
                         const std::string& where) {
    const auto id = id_string(image_id);
    const auto it = idx.find(id);
    if (it == idx.end())
        bad_entry(where, "references missing image id " + id);
    return it->second;
}

AnnotationRecord make_record(const SourceManifest& m, const ImageInfo& img, const std::string& suffix = "") {
    AnnotationRecord r;
    r.record_id = m.name + ":" + img.id + suffix;
    r.image_id = img.id;
    r.image_path = (m.image_root / img.file_name).generic_string();
    r.image_size = img.size;
    r.domain = m.domain;
    r.source = m.name;
    return r;
}

// Pixel (x,y,w,h) -> normalized box. Clamps into the image; zero-extent boxes
// are grown around their center to min_side and flagged.
BoxPrompt box_from_xywh(const json& bbox, ImageSize size, double min_side, bool& inflated) {
    if (!bbox.is_array() || bbox.size() != 4)
        fail(ErrorCode::MalformedAnnotation, "bbox must be [x, y, w, h]");
    const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
    const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
    if (!(w >= 0.0) || !(h >= 0.0))
        fail(ErrorCode::MalformedAnnotation, "negative bbox extent");
    const double W = size.width, H = size.height;
    BoxPrompt b{std::clamp(x / W, 0.0, 1.0), std::clamp(y / H, 0.0, 1.0), std::clamp((x + w) / W, 0.0, 1.0),
                std::clamp((y + h) / H, 0.0, 1.0)};
    inflated = false;
    auto grow = [&](double& lo, double& hi) {
        if (hi - lo >= min_side)
            return;
        inflated = true;
        const double c = (lo + hi) / 2.0;
        lo = std::clamp(c - min_side / 2.0, 0.0, 1.0 - min_side);
        hi = lo + min_side;
    };
    grow(b.x1, b.x2);
    grow(b.y1, b.y2);
    return b;
}

std::map<std::string, std::string> parse_categories(const json& root) {
    std::map<std::string, std::string> cats;
    if (!root.contains("categories"))
        return cats;
    const auto& arr = root.at("categories");
    for (std::size_t i = 0; i < arr.size(); ++i)
        guarded("categories[" + std::to_string(i) + "]", [&] {
            cats[id_string(arr[i].at("id"))] = arr[i].at("name").get<std::string>();
            return 0;
        });
    return cats;
}

std::string resolve_category(const std::map<std::string, std::string>& cats, const json& id) {
    const auto key = id_string(id);
    const auto it = cats.find(key);
    if (it == cats.end())
        fail(ErrorCode::MalformedAnnotation, "unknown category id " + key);
    return it->second;
}

// Shared per-image grouping for the COCO-style formats.
template <class EntryFn>
ParseResult parse_per_image(const SourceManifest& m, const char* array_name, EntryFn&& entry_fn) {
    const json root = load_annotations(m);
    const auto images = parse_images(root);
    const auto idx = index_images(images);
    std::vector<std::vector<Region>> regions(images.size());
    ParseResult result;
    if (root.contains(array_name)) {
        const auto& arr = root.at(array_name);
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string where = std::string(array_name) + "[" + std::to_string(i) + "]";
            guarded(where, [&] {
                const std::size_t img = lookup_image(idx, arr[i].at("image_id"), where);
                if (auto region = entry_fn(arr[i], images[img], where, result))
                    regions[img].push_back(std::move(*region));
                return 0;
            });
        }
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (regions[i].empty())
            continue;
        auto rec = make_record(m, images[i]);
        rec.regions = std::move(regions[i]);
        validate(rec);
        result.records.push_back(std::move(rec));
    }
    return result;
}

std::string entry_id(const json& entry, const char* key, std::size_t fallback) {
    return entry.contains(key) ? id_string(entry.at(key)) : std::to_string(fallback);
}

// Items carrying their own region table (phrase grounding, grounding QA).
std::vector<Region> parse_item_regions(const json& item, ImageSize size, const IngestOptions& opts,
                                       ParseResult& result) {
    std::vector<Region> out;
    std::set<std::string> seen;
    const auto& arr = item.at("regions");
    for (std::size_t k = 0; k < arr.size(); ++k) {
        Region r;
        r.region_id = id_string(arr[k].at("id"));
        if (!seen.insert(r.region_id).second)
            fail(ErrorCode::MalformedAnnotation, "duplicate region id " + r.region_id);
        if (!arr[k].contains("bbox"))
            fail(ErrorCode::MalformedAnnotation, "region " + r.region_id + " has no bbox");
        r.box = box_from_xywh(arr[k].at("bbox"), size, opts.min_box_side, r.inflated);
        result.inflated_boxes += r.inflated;
        if (arr[k].contains("label"))
            r.label = arr[k].at("label").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

template <class ItemFn>
ParseResult parse_per_item(const SourceManifest& m, ItemFn&& item_fn) {
    const json root = load_annotations(m);
    const auto images = parse_images(root);
    const auto idx = index_images(images);
    ParseResult result;
    if (!root.contains("items"))
        return result;
    const auto& arr = root.at("items");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string where = "items[" + std::to_string(i) + "]";
        guarded(where, [&] {
            const auto& img = images[lookup_image(idx, arr[i].at("image_id"), where)];
            auto rec = make_record(m, img, "#" + entry_id(arr[i], "id", i));
            item_fn(arr[i], rec, result);
            validate(rec);
            result.records.push_back(std::move(rec));
            return 0;
        });
    }
    return result;
}

} // namespace

const char* to_string(Domain d) {
    switch (d) {
    case Domain::Natural:
        return "natural";
    case Domain::Document:
        return "document";
    case Domain::Ocr:
        return "ocr";
    case Domain::RemoteSensing:
        return "remote-sensing";
    case Domain::Screenshot:
        return "screenshot";
    case Domain::MultiPanel:
        return "multi-panel";
    }
    return "?";
}

Domain domain_from_string(std::string_view s) {
    for (Domain d : {Domain::Natural, Domain::Document, Domain::Ocr, Domain::RemoteSensing, Domain::Screenshot,
                     Domain::MultiPanel})
        if (s == to_string(d))
            return d;
    fail(ErrorCode::UnknownDomain, "unknown domain '" + std::string(s) + "'");
}

const char* to_string(SourceFormat f) {
    switch (f) {
    case SourceFormat::CocoDet:
        return "coco-det";
    case SourceFormat::CocoSeg:
        return "coco-seg";
    case SourceFormat::RefExp:
        return "refexp";
    case SourceFormat::PhraseGrounding:
        return "phrase-grounding";
    case SourceFormat::GroundingQa:
        return "grounding-qa";
    }
    return "?";
}

SourceFormat source_format_from_string(std::string_view s) {
    for (SourceFormat f : {SourceFormat::CocoDet, SourceFormat::CocoSeg, SourceFormat::RefExp,
                           SourceFormat::PhraseGrounding, SourceFormat::GroundingQa})
        if (s == to_string(f))
            return f;
    fail(ErrorCode::InvalidArgument, "unknown source format '" + std::string(s) + "'");
}

const Region* AnnotationRecord::find_region(std::string_view id) const {
    for (const auto& r : regions)
        if (r.region_id == id)
            return &r;
    return nullptr;
}

std::vector<SourceManifest> load_manifest(const std::filesystem::path& path) {
    const json root = detail::read_json_file(path, ErrorCode::InvalidArgument);
    const auto base = path.parent_path();
    std::vector<SourceManifest> out;
    try {
        for (const auto& s : root.at("sources")) {
            SourceManifest m;
            m.name = s.at("name").get<std::string>();
            m.format = source_format_from_string(s.at("format").get<std::string>());
            m.annotation_file = base / s.at("annotations").get<std::string>();
            m.image_root = base / s.value("image_root", std::string("."));
            m.domain = domain_from_string(s.value("domain", std::string("natural")));
            out.push_back(std::move(m));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
    }
    return out;
}

ParseResult parse_detection(const SourceManifest& m, const IngestOptions& opts) {
    const json root = load_annotations(m);
    const auto cats = parse_categories(root);
    return parse_per_image(m, "annotations",
                           [&](const json& a, const ImageInfo& img, const std::string&,
                               ParseResult& result) -> std::optional<Region> {
                               Region r;
                               r.region_id = entry_id(a, "id", 0);
                               r.label = resolve_category(cats, a.at("category_id"));
                               r.box = box_from_xywh(a.at("bbox"), img.size, opts.min_box_side, r.inflated);
                               result.inflated_boxes += r.inflated;
                               return r;
                           });
}

ParseResult parse_segmentation(const SourceManifest& m, const IngestOptions& opts) {
    (void)opts;
    const json root = load_annotations(m);
    const auto cats = parse_categories(root);
    return parse_per_image(
        m, "annotations",
        [&](const json& a, const ImageInfo& img, const std::string& where,
            ParseResult& result) -> std::optional<Region> {
            const int W = img.size.width, H = img.size.height;
            const auto& seg = a.at("segmentation");
            BinaryMask mask(W, H);
            if (seg.is_array()) {
                for (const auto& poly : seg) {
                    if (poly.size() < 6 || poly.size() % 2 != 0)
                        fail(ErrorCode::MalformedAnnotation, "polygon needs an even number (>= 6) of values");
                    std::vector<Point2> pts;
                    for (std::size_t k = 0; k < poly.size(); k += 2)
                        pts.push_back({poly[k].get<double>(), poly[k + 1].get<double>()});
                    mask |= rasterize_polygon(pts, W, H);
                }
            } else if (seg.is_object()) {
                const auto& counts = seg.at("counts");
                if (counts.is_string()) {
                    spdlog::warn("{} {}: compressed RLE is not supported, entry skipped", m.name, where);
                    ++result.skipped_compressed_rle;
                    return std::nullopt;
                }
                const auto h = seg.at("size").at(0).get<int>(), w = seg.at("size").at(1).get<int>();
                if (h != H || w != W)
                    fail(ErrorCode::MalformedAnnotation, "RLE size does not match the image");
                try {
                    mask = decode_rle(counts.get<std::vector<std::uint32_t>>(), h, w);
                } catch (const Error& e) {
                    fail(ErrorCode::MalformedAnnotation, e.what());
                }
            } else {
                fail(ErrorCode::MalformedAnnotation, "segmentation must be a polygon list or an RLE object");
            }
            if (mask.count() == 0) {
                spdlog::warn("{} {}: segmentation covers no pixel center, entry skipped", m.name, where);
                ++result.skipped_empty_masks;
                return std::nullopt;
            }
            Region r;
            r.region_id = entry_id(a, "id", 0);
            r.label = resolve_category(cats, a.at("category_id"));
            r.box = mask_bounding_box(mask);
            r.mask = std::move(mask);
            return r;
        });
}

ParseResult parse_refexp(const SourceManifest& m, const IngestOptions& opts) {
    return parse_per_image(m, "refs",
                           [&](const json& a, const ImageInfo& img, const std::string&,
                               ParseResult& result) -> std::optional<Region> {
                               Region r;
                               r.region_id = entry_id(a, "ref_id", 0);
                               if (!a.contains("bbox"))
                                   fail(ErrorCode::MalformedAnnotation, "ref has no bbox");
                               r.box = box_from_xywh(a.at("bbox"), img.size, opts.min_box_side, r.inflated);
                               result.inflated_boxes += r.inflated;
                               if (a.contains("category"))
                                   r.label = a.at("category").get<std::string>();
                               if (a.contains("expressions"))
                                   r.expressions = a.at("expressions").get<std::vector<std::string>>();
                               if (r.expressions.empty())
                                   fail(ErrorCode::MalformedAnnotation, "ref has no expression");
                               return r;
                           });
}

ParseResult parse_phrase_grounding(const SourceManifest& m, const IngestOptions& opts) {
    return parse_per_item(m, [&](const json& item, AnnotationRecord& rec, ParseResult& result) {
        rec.caption = item.at("caption").get<std::string>();
        rec.regions = parse_item_regions(item, rec.image_size, opts, result);
        const auto& caption = *rec.caption;
        for (const auto& p : item.at("phrases")) {
            const auto& span = p.at("span");
            const auto s = span.at(0).get<long long>(), e = span.at(1).get<long long>();
            if (s < 0 || e <= s || static_cast<std::size_t>(e) > caption.size())
                fail(ErrorCode::MalformedAnnotation,
                     "phrase span (" + std::to_string(s) + "," + std::to_string(e) + ") outside the caption");
            PhraseLink link{static_cast<std::size_t>(s), static_cast<std::size_t>(e), {}};
            for (const auto& id : p.at("region_ids"))
                link.region_ids.push_back(id_string(id));
            rec.links.push_back(std::move(link));
        }
        std::stable_sort(rec.links.begin(), rec.links.end(),
                         [](const PhraseLink& a, const PhraseLink& b) { return a.char_start < b.char_start; });
        for (std::size_t k = 1; k < rec.links.size(); ++k)
            if (rec.links[k].char_start < rec.links[k - 1].char_end)
                fail(ErrorCode::MalformedAnnotation, "overlapping phrase spans");
        // unlabeled regions take the text of the first phrase grounded to them
        for (const auto& link : rec.links)
            for (const auto& id : link.region_ids)
                for (auto& r : rec.regions)
                    if (r.region_id == id && !r.label)
                        r.label = caption.substr(link.char_start, link.char_end - link.char_start);
    });
}

ParseResult parse_grounding_qa(const SourceManifest& m, const IngestOptions& opts) {
    static const std::regex placeholder(R"(\[([A-Za-z]+[0-9]+)\])");
    return parse_per_item(m, [&](const json& item, AnnotationRecord& rec, ParseResult& result) {
        rec.regions = parse_item_regions(item, rec.image_size, opts, result);
        for (const auto& q : item.at("qa")) {
            QaEntry entry{q.at("question").get<std::string>(), q.at("answer").get<std::string>(), {}};
            for (const std::string* text : {&entry.question, &entry.answer}) {
                for (std::sregex_iterator it(text->begin(), text->end(), placeholder), end; it != end; ++it) {
                    const std::string id = (*it)[1].str();
                    if (!rec.find_region(id))
                        fail(ErrorCode::MalformedAnnotation, "placeholder [" + id + "] names no region");
                    if (std::find(entry.region_ids.begin(), entry.region_ids.end(), id) == entry.region_ids.end())
                        entry.region_ids.push_back(id);
                }
            }
            rec.qa.push_back(std::move(entry));
        }
    });
}

ParseResult parse_source(const SourceManifest& m, const IngestOptions& opts) {
    switch (m.format) {
    case SourceFormat::CocoDet:
        return parse_detection(m, opts);
    case SourceFormat::CocoSeg:
        return parse_segmentation(m, opts);
    case SourceFormat::RefExp:
        return parse_refexp(m, opts);
    case SourceFormat::PhraseGrounding:
        return parse_phrase_grounding(m, opts);
    case SourceFormat::GroundingQa:
        return parse_grounding_qa(m, opts);
    }
    fail(ErrorCode::InvalidArgument, "unknown source format");
}

ParseResult ingest_manifest(const std::filesystem::path& manifest_path, const IngestOptions& opts) {
    ParseResult all;
    for (const auto& m : load_manifest(manifest_path)) {
        auto r = parse_source(m, opts);
        all.skipped_compressed_rle += r.skipped_compressed_rle;
        all.skipped_empty_masks += r.skipped_empty_masks;
        all.inflated_boxes += r.inflated_boxes;
        for (auto& rec : r.records)
            all.records.push_back(std::move(rec));
    }
    return all;
}

void validate(const AnnotationRecord& r) {
    auto bad = [&](const std::string& what) { fail(ErrorCode::MalformedAnnotation, r.record_id + ": " + what); };
    if (r.image_size.width <= 0 || r.image_size.height <= 0)
        bad("non-positive image size");
    std::set<std::string> ids;
    for (const auto& reg : r.regions) {
        if (!ids.insert(reg.region_id).second)
            bad("duplicate region id " + reg.region_id);
        try {
            validate(reg.box);
        } catch (const Error& e) {
            bad("region " + reg.region_id + ": " + e.what());
        }
        if (reg.mask && (reg.mask->width() != r.image_size.width || reg.mask->height() != r.image_size.height))
            bad("region " + reg.region_id + ": mask size differs from the image");
    }
    if (!r.links.empty() && !r.caption)
        bad("phrase links without a caption");
    for (std::size_t k = 0; k < r.links.size(); ++k) {
        const auto& l = r.links[k];
        if (l.char_start >= l.char_end || l.char_end > r.caption->size())
            bad("phrase span outside the caption");
        if (k > 0 && l.char_start < r.links[k - 1].char_end)
            bad("phrase spans overlap or are unsorted");
        if (l.region_ids.empty())
            bad("phrase link without regions");
        for (const auto& id : l.region_ids)
            if (!ids.count(id))
                bad("phrase link to unknown region " + id);
    }
    for (const auto& q : r.qa)
        for (const auto& id : q.region_ids)
            if (!ids.count(id))
                bad("qa reference to unknown region " + id);
}

std::string to_json_line(const AnnotationRecord& r) {
    ojson j;
    j["record_id"] = r.record_id;
    j["image_id"] = r.image_id;
    j["image_path"] = r.image_path;
    j["image_size"] = {r.image_size.width, r.image_size.height};
    j["domain"] = to_string(r.domain);
    j["source"] = r.source;
    auto& regions = j["regions"] = ojson::array();
    for (const auto& reg : r.regions) {
        ojson o;
        o["region_id"] = reg.region_id;
        o["box"] = {reg.box.x1, reg.box.y1, reg.box.x2, reg.box.y2};
        if (reg.label)
            o["label"] = *reg.label;
        if (!reg.expressions.empty())
            o["expressions"] = reg.expressions;
        if (reg.mask)
            o["mask"] = detail::mask_to_json(*reg.mask);
        if (reg.inflated)
            o["inflated"] = true;
        regions.push_back(std::move(o));
    }
    if (r.caption) {
        j["caption"] = *r.caption;
        auto& links = j["links"] = ojson::array();
        for (const auto& l : r.links)
            links.push_back({{"span", {l.char_start, l.char_end}}, {"region_ids", l.region_ids}});
    }
    if (!r.qa.empty()) {
        auto& qa = j["qa"] = ojson::array();
        for (const auto& q : r.qa)
            qa.push_back({{"question", q.question}, {"answer", q.answer}, {"region_ids", q.region_ids}});
    }
    return j.dump();
}

AnnotationRecord record_from_json_line(std::string_view line) {
    try {
        const json j = json::parse(line);
        AnnotationRecord r;
        r.record_id = j.at("record_id").get<std::string>();
        r.image_id = j.at("image_id").get<std::string>();
        r.image_path = j.at("image_path").get<std::string>();
        r.image_size = {j.at("image_size").at(0).get<int>(), j.at("image_size").at(1).get<int>()};
        r.domain = domain_from_string(j.at("domain").get<std::string>());
        r.source = j.value("source", std::string());
        for (const auto& o : j.at("regions")) {
            Region reg;
            reg.region_id = o.at("region_id").get<std::string>();
            const auto& b = o.at("box");
            reg.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
            if (o.contains("label"))
                reg.label = o.at("label").get<std::string>();
            if (o.contains("expressions"))
                reg.expressions = o.at("expressions").get<std::vector<std::string>>();
            if (o.contains("mask"))
                reg.mask = detail::mask_from_json(o.at("mask"));
            reg.inflated = o.value("inflated", false);
            r.regions.push_back(std::move(reg));
        }
        if (j.contains("caption")) {
            r.caption = j.at("caption").get<std::string>();
            for (const auto& l : j.at("links"))
                r.links.push_back({l.at("span").at(0).get<std::size_t>(), l.at("span").at(1).get<std::size_t>(),
                                   l.at("region_ids").get<std::vector<std::string>>()});
        }
        if (j.contains("qa"))
            for (const auto& q : j.at("qa"))
                r.qa.push_back({q.at("question").get<std::string>(), q.at("answer").get<std::string>(),
                                q.at("region_ids").get<std::vector<std::string>>()});
        validate(r);
        return r;
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedAnnotation, std::string("record line: ") + e.what());
    }
}

void write_records(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path) {
    std::string out;
    for (const auto& r : records) {
        out += to_json_line(r);
        out += '\n';
    }
    detail::write_file_atomic(path, out);
}

std::vector<AnnotationRecord> read_records(const std::filesystem::path& path) {
    std::vector<AnnotationRecord> out;
    for (const auto& [no, line] : detail::read_lines(path)) {
        try {
            out.push_back(record_from_json_line(line));
        } catch (const Error& e) {
            fail(e.code(), path.string() + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace vpkit
