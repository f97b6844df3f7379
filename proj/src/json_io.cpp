#include "json_io.hpp"

#include "vpkit/error.hpp"

#include <fstream>
#include <sstream>

namespace vpkit::detail {

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        fail(ErrorCode::IoFailure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path, ErrorCode on_parse_error) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(on_parse_error, path.string() + ": " + e.what());
    }
}

std::vector<std::pair<std::size_t, std::string>> read_lines(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        fail(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<std::pair<std::size_t, std::string>> out;
    std::string line;
    for (std::size_t no = 1; std::getline(is, line); ++no) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos)
            out.emplace_back(no, line);
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            fail(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        os.flush();
        if (!os)
            fail(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "rename to " + path.string() + " failed: " + ec.message());
}

ojson prompt_to_json(const VisualPrompt& p) {
    ojson j;
    j["kind"] = to_string(kind_of(p));
    if (const auto* pt = std::get_if<PointPrompt>(&p)) {
        j["coords"] = {pt->x, pt->y};
    } else if (const auto* b = std::get_if<BoxPrompt>(&p)) {
        j["coords"] = {b->x1, b->y1, b->x2, b->y2};
    } else {
        auto& arr = j["coords"] = ojson::array();
        for (const auto& v : std::get<FreeFormPrompt>(p).vertices)
            arr.push_back({v.x, v.y});
    }
    return j;
}

VisualPrompt prompt_from_json(const nlohmann::json& j) {
    const auto kind = prompt_kind_from_string(j.at("kind").get<std::string>());
    const auto& c = j.at("coords");
    VisualPrompt out;
    switch (kind) {
    case PromptKind::Point:
        if (c.size() != 2)
            fail(ErrorCode::InvalidArgument, "point prompt needs 2 coordinates");
        out = PointPrompt{c[0].get<double>(), c[1].get<double>()};
        break;
    case PromptKind::Box:
        if (c.size() != 4)
            fail(ErrorCode::InvalidArgument, "box prompt needs 4 coordinates");
        out = BoxPrompt{c[0].get<double>(), c[1].get<double>(), c[2].get<double>(), c[3].get<double>()};
        break;
    case PromptKind::FreeForm: {
        FreeFormPrompt f;
        for (const auto& v : c)
            f.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
        out = std::move(f);
        break;
    }
    }
    validate(out);
    return out;
}

ojson mask_to_json(const BinaryMask& m) {
    ojson j;
    j["size"] = {m.height(), m.width()};
    j["counts"] = encode_rle(m);
    return j;
}

BinaryMask mask_from_json(const nlohmann::json& j) {
    const auto counts = j.at("counts").get<std::vector<std::uint32_t>>();
    return decode_rle(counts, j.at("size").at(0).get<int>(), j.at("size").at(1).get<int>());
}

} // namespace vpkit::detail
