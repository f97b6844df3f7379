#include "vpkit/vp_encoder.hpp"

#include "vpkit/augment.hpp"
#include "vpkit/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace vpkit {

namespace {

constexpr std::string_view kMagic = "VPE1";

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Per-call intermediate values needed by the backward pass.
struct Forward {
    int num_valid = 0;
    std::vector<PromptKind> kinds;     // per valid slot (Point or Box)
    std::vector<Eigen::VectorXd> feat; // per valid slot: pe (point) or z (box)
    Eigen::MatrixXd slot_embed;        // d_vp x N, output of point/box linear
    Eigen::MatrixXd unified;           // d_vp x (C+2), projector input
    Eigen::MatrixXd hidden;            // d_llm x (C+2), pre-activation
    Eigen::MatrixXd activated;         // d_llm x (C+2)
    Eigen::MatrixXd out;               // d_llm x (C+2)
};

std::vector<VisualPrompt> reduce_all(std::span<const VisualPrompt> prompts, const EncoderConfig& cfg) {
    if (prompts.empty())
        fail(ErrorCode::EmptyPromptSet, "at least one visual prompt is required");
    if (prompts.size() > static_cast<std::size_t>(cfg.capacity))
        fail(ErrorCode::CapacityExceeded, std::to_string(prompts.size()) + " prompts exceed encoder capacity " +
                                              std::to_string(cfg.capacity));
    std::vector<VisualPrompt> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts)
        out.push_back(reduce_for_encoder(p));
    return out;
}

void check_shapes(const EncoderParams& p, const EncoderConfig& cfg) {
    const auto layout = tensor_layout(cfg);
    auto& mp = const_cast<EncoderParams&>(p);
    const auto refs = tensors(mp);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].rows != layout[i].second.first || refs[i].cols != layout[i].second.second)
            fail(ErrorCode::InvalidArgument, std::string("tensor ") + refs[i].name + " does not match the config");
    }
}

Forward run_forward(std::span<const VisualPrompt> raw, const EncoderParams& p, const EncoderConfig& cfg,
                    bool with_projector = true) {
    validate(cfg);
    check_shapes(p, cfg);
    const auto prompts = reduce_all(raw, cfg);
    const int cap = cfg.capacity;
    const int rows = cfg.output_rows();

    Forward f;
    f.num_valid = static_cast<int>(prompts.size());
    f.slot_embed.resize(cfg.hidden_dim, f.num_valid);
    f.unified.resize(cfg.hidden_dim, rows);

    for (int i = 0; i < f.num_valid; ++i) {
        if (const auto* pt = std::get_if<PointPrompt>(&prompts[i])) {
            Eigen::VectorXd pe = fourier_encode({pt->x, pt->y}, p.freq) + p.corner_center;
            f.slot_embed.col(i) = p.point_w * pe + p.point_b;
            f.kinds.push_back(PromptKind::Point);
            f.feat.push_back(std::move(pe));
        } else {
            const auto& b = std::get<BoxPrompt>(prompts[i]);
            const int pe_dim = cfg.pe_dim();
            Eigen::VectorXd z(2 * pe_dim);
            z.head(pe_dim) = fourier_encode({b.x1, b.y1}, p.freq) + p.corner_tl;
            z.tail(pe_dim) = fourier_encode({b.x2, b.y2}, p.freq) + p.corner_br;
            f.slot_embed.col(i) = p.box_w * z + p.box_b;
            f.kinds.push_back(PromptKind::Box);
            f.feat.push_back(std::move(z));
        }
    }

    f.unified.col(0) = p.start_token;
    for (int i = 0; i < cap; ++i) {
        if (i < f.num_valid)
            f.unified.col(1 + i) = p.unify_w * f.slot_embed.col(i) + p.unify_b + p.valid_token;
        else
            f.unified.col(1 + i) = p.invalid_token;
    }
    f.unified.col(rows - 1) = p.end_token;
    if (!with_projector)
        return f;

    f.hidden = (p.proj_w1 * f.unified).colwise() + p.proj_b1;
    f.activated = f.hidden.unaryExpr(&gelu);
    f.out = (p.proj_w2 * f.activated).colwise() + p.proj_b2;
    return f;
}

Eigen::VectorXd project(const Eigen::VectorXd& u, const EncoderParams& p) {
    const Eigen::VectorXd a = (p.proj_w1 * u + p.proj_b1).unaryExpr(&gelu);
    return p.proj_w2 * a + p.proj_b2;
}

// Sum of squares over the part of the output that a perturbation of one
// entry of `tensor` (in row `row`) can reach. Everything else is identical
// between the +eps and -eps evaluations and cancels in the central difference.
double reachable_loss(const Forward& base, std::span<const VisualPrompt> prompts, const EncoderParams& p,
                      const EncoderConfig& cfg, std::string_view tensor, Eigen::Index row) {
    if (tensor == "proj_w2" || tensor == "proj_b2")
        return ((p.proj_w2.row(row) * base.activated).array() + p.proj_b2(row)).matrix().squaredNorm();
    if (tensor == "proj_w1" || tensor == "proj_b1") {
        const Eigen::RowVectorXd h = (p.proj_w1.row(row) * base.unified).array() + p.proj_b1(row);
        const Eigen::RowVectorXd delta = h.unaryExpr(&gelu) - base.activated.row(row);
        return (base.out + p.proj_w2.col(row) * delta).squaredNorm();
    }

    const Forward f = run_forward(prompts, p, cfg, false);
    Eigen::Index first = 1, last = f.num_valid; // slot columns by default
    if (tensor == "start_token") {
        first = last = 0;
    } else if (tensor == "end_token") {
        first = last = cfg.output_rows() - 1;
    } else if (tensor == "invalid_token") {
        first = f.num_valid + 1;
        last = cfg.capacity;
    }
    double total = 0.0;
    for (Eigen::Index c = first; c <= last; ++c)
        total += project(f.unified.col(c), p).squaredNorm();
    return total;
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    os.write(bytes, 4);
}

std::uint32_t read_u32_le(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void validate(const EncoderConfig& cfg) {
    if (cfg.num_frequencies < 1 || cfg.hidden_dim < 1 || cfg.llm_dim < 1 || cfg.capacity < 1)
        fail(ErrorCode::InvalidArgument, "encoder dimensions and capacity must be >= 1");
    if (!(cfg.fourier_sigma > 0.0) || !std::isfinite(cfg.fourier_sigma))
        fail(ErrorCode::InvalidArgument, "fourier_sigma must be positive");
}

bool EncoderParams::operator==(const EncoderParams& other) const {
    auto& a = const_cast<EncoderParams&>(*this);
    auto& b = const_cast<EncoderParams&>(other);
    const auto ta = tensors(a);
    const auto tb = tensors(b);
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].rows != tb[i].rows || ta[i].cols != tb[i].cols)
            return false;
        if (std::memcmp(ta[i].data, tb[i].data, sizeof(double) * ta[i].size()) != 0)
            return false;
    }
    return true;
}

std::vector<TensorRef> tensors(EncoderParams& p) {
    auto mat = [](const char* name, Eigen::MatrixXd& m, bool learnable) {
        return TensorRef{name, m.data(), m.rows(), m.cols(), learnable};
    };
    auto vec = [](const char* name, Eigen::VectorXd& v) { return TensorRef{name, v.data(), v.size(), 1, true}; };
    return {mat("freq", p.freq, false),
            vec("corner_center", p.corner_center),
            vec("corner_tl", p.corner_tl),
            vec("corner_br", p.corner_br),
            mat("point_w", p.point_w, true),
            vec("point_b", p.point_b),
            mat("box_w", p.box_w, true),
            vec("box_b", p.box_b),
            mat("unify_w", p.unify_w, true),
            vec("unify_b", p.unify_b),
            vec("valid_token", p.valid_token),
            vec("invalid_token", p.invalid_token),
            vec("start_token", p.start_token),
            vec("end_token", p.end_token),
            mat("proj_w1", p.proj_w1, true),
            vec("proj_b1", p.proj_b1),
            mat("proj_w2", p.proj_w2, true),
            vec("proj_b2", p.proj_b2)};
}

std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> tensor_layout(const EncoderConfig& cfg) {
    const Eigen::Index m = cfg.num_frequencies, pe = cfg.pe_dim(), vp = cfg.hidden_dim, llm = cfg.llm_dim;
    return {{"freq", {m, 2}},           {"corner_center", {pe, 1}}, {"corner_tl", {pe, 1}},
            {"corner_br", {pe, 1}},     {"point_w", {vp, pe}},      {"point_b", {vp, 1}},
            {"box_w", {vp, 2 * pe}},    {"box_b", {vp, 1}},         {"unify_w", {vp, vp}},
            {"unify_b", {vp, 1}},       {"valid_token", {vp, 1}},   {"invalid_token", {vp, 1}},
            {"start_token", {vp, 1}},   {"end_token", {vp, 1}},     {"proj_w1", {llm, vp}},
            {"proj_b1", {llm, 1}},      {"proj_w2", {llm, llm}},    {"proj_b2", {llm, 1}}};
}

EncoderParams zeros_like(const EncoderConfig& cfg) {
    validate(cfg);
    const Eigen::Index m = cfg.num_frequencies, pe = cfg.pe_dim(), vp = cfg.hidden_dim, llm = cfg.llm_dim;
    EncoderParams p;
    p.freq = Eigen::MatrixXd::Zero(m, 2);
    p.corner_center = Eigen::VectorXd::Zero(pe);
    p.corner_tl = Eigen::VectorXd::Zero(pe);
    p.corner_br = Eigen::VectorXd::Zero(pe);
    p.point_w = Eigen::MatrixXd::Zero(vp, pe);
    p.point_b = Eigen::VectorXd::Zero(vp);
    p.box_w = Eigen::MatrixXd::Zero(vp, 2 * pe);
    p.box_b = Eigen::VectorXd::Zero(vp);
    p.unify_w = Eigen::MatrixXd::Zero(vp, vp);
    p.unify_b = Eigen::VectorXd::Zero(vp);
    p.valid_token = Eigen::VectorXd::Zero(vp);
    p.invalid_token = Eigen::VectorXd::Zero(vp);
    p.start_token = Eigen::VectorXd::Zero(vp);
    p.end_token = Eigen::VectorXd::Zero(vp);
    p.proj_w1 = Eigen::MatrixXd::Zero(llm, vp);
    p.proj_b1 = Eigen::VectorXd::Zero(llm);
    p.proj_w2 = Eigen::MatrixXd::Zero(llm, llm);
    p.proj_b2 = Eigen::VectorXd::Zero(llm);
    return p;
}

EncoderParams init_params(const EncoderConfig& cfg) {
    EncoderParams p = zeros_like(cfg);
    DeterministicRng rng(cfg.seed);
    for (auto& t : tensors(p)) {
        double scale;
        const std::string_view name = t.name;
        if (name == "freq")
            scale = cfg.fourier_sigma;
        else if (t.cols > 1)
            scale = 1.0 / std::sqrt(static_cast<double>(t.cols)); // weight matrix, fan-in = cols
        else if (name.ends_with("_b") || name.ends_with("_b1") || name.ends_with("_b2"))
            scale = 0.02;
        else
            scale = 0.1; // learnable embeddings / tokens
        for (Eigen::Index k = 0; k < t.size(); ++k)
            t.at(k) = as_f32(scale * rng.gaussian());
    }
    return p;
}

Eigen::VectorXd fourier_encode(Point2 coord, const Eigen::MatrixXd& freq) {
    const Eigen::Index m = freq.rows();
    Eigen::VectorXd out(2 * m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double phase = 2.0 * std::numbers::pi * (freq(i, 0) * coord.x + freq(i, 1) * coord.y);
        out(i) = std::cos(phase);
        out(m + i) = std::sin(phase);
    }
    return out;
}

PromptEmbeddingBatch embed_prompts(std::span<const VisualPrompt> prompts, const EncoderParams& params,
                                   const EncoderConfig& cfg) {
    const Forward f = run_forward(prompts, params, cfg);
    PromptEmbeddingBatch out;
    out.tokens = f.out.transpose();
    out.validity.assign(cfg.capacity, false);
    std::fill(out.validity.begin(), out.validity.begin() + f.num_valid, true);
    return out;
}

EncoderParams encoder_backward(std::span<const VisualPrompt> prompts, const EncoderParams& p,
                               const EncoderConfig& cfg, const Eigen::MatrixXd& upstream) {
    if (upstream.rows() != cfg.output_rows() || upstream.cols() != cfg.llm_dim)
        fail(ErrorCode::BadGradShape, "upstream gradient must be " + std::to_string(cfg.output_rows()) + "x" +
                                          std::to_string(cfg.llm_dim) + ", got " +
                                          std::to_string(upstream.rows()) + "x" + std::to_string(upstream.cols()));
    const Forward f = run_forward(prompts, p, cfg);
    EncoderParams g = zeros_like(cfg);
    const int rows = cfg.output_rows();

    const Eigen::MatrixXd g_out = upstream.transpose(); // d_llm x rows
    g.proj_w2 = g_out * f.activated.transpose();
    g.proj_b2 = g_out.rowwise().sum();
    const Eigen::MatrixXd g_hidden =
        (p.proj_w2.transpose() * g_out).cwiseProduct(f.hidden.unaryExpr(&gelu_grad));
    g.proj_w1 = g_hidden * f.unified.transpose();
    g.proj_b1 = g_hidden.rowwise().sum();
    const Eigen::MatrixXd g_unified = p.proj_w1.transpose() * g_hidden; // d_vp x rows

    g.start_token = g_unified.col(0);
    g.end_token = g_unified.col(rows - 1);
    const int pe_dim = cfg.pe_dim();
    for (int i = 0; i < cfg.capacity; ++i) {
        const auto gu = g_unified.col(1 + i);
        if (i >= f.num_valid) {
            g.invalid_token += gu;
            continue;
        }
        g.valid_token += gu;
        g.unify_w += gu * f.slot_embed.col(i).transpose();
        g.unify_b += gu;
        const Eigen::VectorXd g_embed = p.unify_w.transpose() * gu;
        if (f.kinds[i] == PromptKind::Point) {
            g.point_w += g_embed * f.feat[i].transpose();
            g.point_b += g_embed;
            g.corner_center += p.point_w.transpose() * g_embed;
        } else {
            g.box_w += g_embed * f.feat[i].transpose();
            g.box_b += g_embed;
            const Eigen::VectorXd g_z = p.box_w.transpose() * g_embed;
            g.corner_tl += g_z.head(pe_dim);
            g.corner_br += g_z.tail(pe_dim);
        }
    }
    return g;
}

double relative_error(double analytic, double numeric) {
    // Entries whose gradient is below the floor are compared absolutely;
    // central differences cannot resolve them any better in 64-bit.
    constexpr double kFloor = 1e-6;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kFloor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const EncoderConfig& base, std::uint64_t seed, const GradCheckOptions& opts) {
    EncoderConfig cfg = base;
    cfg.seed = derive_seed(seed, 1);
    EncoderParams params = init_params(cfg);

    DeterministicRng rng(derive_seed(seed, 2));
    const std::size_t n = 1 + rng.index(static_cast<std::size_t>(cfg.capacity));
    VisualPromptSet prompts;
    for (std::size_t i = 0; i < n; ++i) {
        // alternate kinds so every set mixes points and boxes when n > 1
        if (i % 2 == 0) {
            const double x1 = 0.8 * rng.uniform(), y1 = 0.8 * rng.uniform();
            prompts.emplace_back(BoxPrompt{x1, y1, x1 + 0.05 + 0.15 * rng.uniform(), y1 + 0.05 + 0.15 * rng.uniform()});
        } else {
            prompts.emplace_back(PointPrompt{rng.uniform(), rng.uniform()});
        }
    }

    const Forward f = run_forward(prompts, params, cfg);
    const Eigen::MatrixXd upstream = 2.0 * f.out.transpose();
    EncoderParams grads = encoder_backward(prompts, params, cfg, upstream);

    GradCheckResult result;
    result.max_frozen_gradient = grads.freq.cwiseAbs().maxCoeff();

    auto param_refs = tensors(params);
    auto grad_refs = tensors(grads);
    for (std::size_t t = 0; t < param_refs.size(); ++t) {
        const TensorRef& pr = param_refs[t];
        if (!pr.learnable)
            continue;
        std::vector<Eigen::Index> entries;
        if (static_cast<std::size_t>(pr.size()) <= opts.max_entries_per_tensor) {
            for (Eigen::Index k = 0; k < pr.size(); ++k)
                entries.push_back(k);
        } else {
            for (std::size_t k = 0; k < opts.max_entries_per_tensor; ++k)
                entries.push_back(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(pr.size()))));
        }
        for (Eigen::Index k : entries) {
            double& slot = pr.at(k);
            const double saved = slot;
            const Eigen::Index row = k / pr.cols;
            slot = saved + opts.epsilon;
            const double plus = reachable_loss(f, prompts, params, cfg, pr.name, row);
            slot = saved - opts.epsilon;
            const double minus = reachable_loss(f, prompts, params, cfg, pr.name, row);
            slot = saved;
            const double numeric = (plus - minus) / (2.0 * opts.epsilon);
            const double err = relative_error(grad_refs[t].at(k), numeric);
            ++result.entries_checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_tensor = pr.name;
            }
        }
    }
    return result;
}

void save_params(const EncoderParams& params, const EncoderConfig& cfg, const std::filesystem::path& path) {
    validate(cfg);
    check_shapes(params, cfg);
    nlohmann::ordered_json header;
    header["m"] = cfg.num_frequencies;
    header["d_vp"] = cfg.hidden_dim;
    header["d_llm"] = cfg.llm_dim;
    header["capacity"] = cfg.capacity;
    header["fourier_sigma"] = cfg.fourier_sigma;
    header["seed"] = cfg.seed;
    header["dtype"] = "f32le";
    auto& list = header["tensors"] = nlohmann::ordered_json::array();
    for (const auto& [name, shape] : tensor_layout(cfg))
        list.push_back({{"name", name}, {"shape", {shape.first, shape.second}}});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    os << kMagic << ' ' << header.dump() << '\n';
    auto& mp = const_cast<EncoderParams&>(params);
    for (const auto& t : tensors(mp))
        for (Eigen::Index k = 0; k < t.size(); ++k)
            write_u32_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(t.at(k))));
    if (!os)
        fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

LoadedEncoder load_params(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        fail(ErrorCode::BadParamsFile, "cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || !line.starts_with(std::string(kMagic) + ' '))
        fail(ErrorCode::BadParamsFile, "missing VPE1 header in " + path.string());

    LoadedEncoder out;
    try {
        const auto header = nlohmann::json::parse(line.substr(kMagic.size() + 1));
        out.config.num_frequencies = header.at("m").get<int>();
        out.config.hidden_dim = header.at("d_vp").get<int>();
        out.config.llm_dim = header.at("d_llm").get<int>();
        out.config.capacity = header.at("capacity").get<int>();
        out.config.fourier_sigma = header.at("fourier_sigma").get<double>();
        out.config.seed = header.at("seed").get<std::uint64_t>();
        if (header.value("dtype", "") != "f32le")
            fail(ErrorCode::BadParamsFile, "unsupported dtype");
        validate(out.config);
        const auto layout = tensor_layout(out.config);
        const auto& list = header.at("tensors");
        if (list.size() != layout.size())
            fail(ErrorCode::BadParamsFile, "tensor list does not match the encoder layout");
        for (std::size_t i = 0; i < layout.size(); ++i) {
            if (list[i].at("name").get<std::string>() != layout[i].first ||
                list[i].at("shape").at(0).get<Eigen::Index>() != layout[i].second.first ||
                list[i].at("shape").at(1).get<Eigen::Index>() != layout[i].second.second)
                fail(ErrorCode::BadParamsFile, "tensor " + layout[i].first + " has an unexpected name or shape");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::BadParamsFile, std::string("malformed header: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::BadParamsFile)
            throw;
        fail(ErrorCode::BadParamsFile, e.what());
    }

    out.params = zeros_like(out.config);
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::size_t expected = 0;
    for (const auto& t : tensors(out.params))
        expected += static_cast<std::size_t>(t.size()) * 4;
    if (payload.size() != expected)
        fail(ErrorCode::BadParamsFile, "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                           std::to_string(expected));
    std::size_t off = 0;
    for (const auto& t : tensors(out.params)) {
        for (Eigen::Index k = 0; k < t.size(); ++k, off += 4)
            t.at(k) = static_cast<double>(std::bit_cast<float>(read_u32_le(payload.data() + off)));
    }
    return out;
}

EncoderParams load_params(const std::filesystem::path& path, const EncoderConfig& expected) {
    LoadedEncoder loaded = load_params(path);
    const auto& c = loaded.config;
    if (c.num_frequencies != expected.num_frequencies || c.hidden_dim != expected.hidden_dim ||
        c.llm_dim != expected.llm_dim || c.capacity != expected.capacity)
        fail(ErrorCode::BadParamsFile, "parameter file dimensions (m=" + std::to_string(c.num_frequencies) +
                                           ", d_vp=" + std::to_string(c.hidden_dim) + ", d_llm=" +
                                           std::to_string(c.llm_dim) + ", C=" + std::to_string(c.capacity) +
                                           ") do not match the requested config");
    return std::move(loaded.params);
}

} // namespace vpkit
