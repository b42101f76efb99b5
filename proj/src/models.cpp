#include "advrobust/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "advrobust/rng.hpp"
#include "binio.hpp"
#include "json.hpp"

namespace advrobust {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct ConvRef {
    std::size_t weight = kNone;
    std::size_t bias = kNone;
    Conv2dOptions opt;
};

struct NormRef {
    std::size_t gamma = kNone, beta = kNone;  // parameter indices
    std::size_t mean = kNone, var = kNone;    // buffer indices
};

struct Context {
    const std::vector<NamedTensor>& params;
    const std::vector<NamedTensor>& buffers;
    Tape* tape;
    bool training;

    Tensor conv(const Tensor& x, const ConvRef& c) const {
        return conv2d(x, params[c.weight].value, c.bias == kNone ? Tensor{} : params[c.bias].value, c.opt, tape);
    }

    Tensor norm(const Tensor& x, const NormRef& n) const {
        ChannelNormState st{params[n.gamma].value, params[n.beta].value, buffers[n.mean].value,
                            buffers[n.var].value};
        return channel_norm(x, st, training, tape);
    }

    Tensor relu(const Tensor& x) const { return advrobust::relu(x, tape); }
};

}  // namespace

struct Model::Unit {
    std::string name;
    explicit Unit(std::string n) : name(std::move(n)) {}
    virtual ~Unit() = default;
    virtual Tensor apply(const Tensor& x, const Context& ctx) const = 0;
};

namespace {

struct StemUnit final : Model::Unit {
    ConvRef conv;
    NormRef norm;
    using Unit::Unit;
    Tensor apply(const Tensor& x, const Context& ctx) const override {
        return max_pool2d(ctx.relu(ctx.norm(ctx.conv(x, conv), norm)), 2, 2, ctx.tape);
    }
};

struct Projection {
    ConvRef conv;
    NormRef norm;
};

// y = relu(F(x) + shortcut(x)); F is a chain of conv/norm pairs with ReLU
// between them (basic: 2 convs, bottleneck: 1x1 -> grouped 3x3 -> 1x1).
struct ResidualUnit final : Model::Unit {
    std::vector<ConvRef> convs;
    std::vector<NormRef> norms;
    std::optional<Projection> projection;
    using Unit::Unit;
    Tensor apply(const Tensor& x, const Context& ctx) const override {
        Tensor h = x;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            h = ctx.norm(ctx.conv(h, convs[i]), norms[i]);
            if (i + 1 < convs.size()) h = ctx.relu(h);
        }
        Tensor shortcut = projection ? ctx.norm(ctx.conv(x, projection->conv), projection->norm) : x;
        return ctx.relu(add(h, shortcut, ctx.tape));
    }
};

struct DenseBlockUnit final : Model::Unit {
    std::vector<NormRef> norms;
    std::vector<ConvRef> convs;
    using Unit::Unit;
    Tensor apply(const Tensor& x, const Context& ctx) const override {
        Tensor features = x;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            Tensor fresh = ctx.conv(ctx.relu(ctx.norm(features, norms[i])), convs[i]);
            features = concat_channels({features, fresh}, ctx.tape);
        }
        return features;
    }
};

struct TransitionUnit final : Model::Unit {
    NormRef norm;
    ConvRef conv;
    using Unit::Unit;
    Tensor apply(const Tensor& x, const Context& ctx) const override {
        return max_pool2d(ctx.conv(ctx.relu(ctx.norm(x, norm)), conv), 2, 2, ctx.tape);
    }
};

struct HeadUnit final : Model::Unit {
    std::optional<NormRef> pre_norm;
    std::size_t weight = kNone, bias = kNone;
    using Unit::Unit;
    Tensor apply(const Tensor& x, const Context& ctx) const override {
        Tensor h = pre_norm ? ctx.relu(ctx.norm(x, *pre_norm)) : x;
        return dense(global_avg_pool(h, ctx.tape), ctx.params[weight].value, ctx.params[bias].value, ctx.tape);
    }
};

// Allocates named tensors with deterministic per-tensor seeds.
class Builder {
  public:
    Builder(std::uint64_t seed, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers,
            std::vector<ConvInfo>& convs)
        : seed_(seed), params_(params), buffers_(buffers), convs_(convs) {}

    ConvRef conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, Conv2dOptions opt,
                 bool with_bias = false) {
        ConvRef ref;
        ref.opt = opt;
        const std::size_t fan_in = (in / opt.groups) * k * k;
        Tensor w(Shape{out, in / opt.groups, k, k});
        fill_normal(w, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), derive_seed(seed_, params_.size()));
        ref.weight = add_param(name + ".weight", w);
        if (with_bias) ref.bias = add_param(name + ".bias", Tensor(Shape{out}, 0.0));
        convs_.push_back(ConvInfo{name, ref.weight, opt});
        return ref;
    }

    NormRef norm(const std::string& name, std::size_t channels) {
        NormRef ref;
        ref.gamma = add_param(name + ".gamma", Tensor(Shape{channels}, 1.0));
        ref.beta = add_param(name + ".beta", Tensor(Shape{channels}, 0.0));
        ref.mean = add_buffer(name + ".running_mean", Tensor(Shape{channels}, 0.0));
        ref.var = add_buffer(name + ".running_var", Tensor(Shape{channels}, 1.0));
        return ref;
    }

    std::pair<std::size_t, std::size_t> linear(const std::string& name, std::size_t in, std::size_t out) {
        Tensor w(Shape{out, in});
        fill_normal(w, 0.0, std::sqrt(1.0 / static_cast<double>(in)), derive_seed(seed_, params_.size()));
        const std::size_t wi = add_param(name + ".weight", w);
        const std::size_t bi = add_param(name + ".bias", Tensor(Shape{out}, 0.0));
        return {wi, bi};
    }

  private:
    std::size_t add_param(std::string name, Tensor t) {
        t.set_requires_grad(true);
        params_.push_back(NamedTensor{std::move(name), std::move(t)});
        return params_.size() - 1;
    }
    std::size_t add_buffer(std::string name, Tensor t) {
        buffers_.push_back(NamedTensor{std::move(name), std::move(t)});
        return buffers_.size() - 1;
    }

    std::uint64_t seed_;
    std::vector<NamedTensor>& params_;
    std::vector<NamedTensor>& buffers_;
    std::vector<ConvInfo>& convs_;
};

std::string block_name(std::size_t stage, std::size_t block) {
    return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block + 1);
}

}  // namespace

std::string to_string(Family family) {
    switch (family) {
        case Family::kBrainNet: return "brainnet";
        case Family::kBrainNeXt: return "brainnext";
        case Family::kDilation: return "dilation";
        case Family::kDenseNetSurrogate: return "densenet_surrogate";
    }
    return "unknown";
}

Family family_from_string(const std::string& name) {
    if (name == "brainnet") return Family::kBrainNet;
    if (name == "brainnext") return Family::kBrainNeXt;
    if (name == "dilation") return Family::kDilation;
    if (name == "densenet_surrogate") return Family::kDenseNetSurrogate;
    throw std::invalid_argument("unknown model family '" + name + "'");
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

}  // namespace

InvalidSpecError::InvalidSpecError(const std::string& name, std::vector<std::string> violations)
    : std::invalid_argument("invalid model spec '" + name + "': " + join(violations, "; ")),
      violations_(std::move(violations)) {}

std::vector<std::string> spec_violations(const ModelSpec& spec) {
    std::vector<std::string> v;
    if (spec.name.empty()) v.emplace_back("name must be non-empty");
    if (spec.stage_widths.empty()) v.emplace_back("stage_widths must be non-empty");
    if (spec.blocks_per_stage.empty()) v.emplace_back("blocks_per_stage must be non-empty");
    for (auto w : spec.stage_widths)
        if (w == 0) v.emplace_back("stage widths must be positive");
    for (auto b : spec.blocks_per_stage)
        if (b == 0) v.emplace_back("blocks_per_stage entries must be positive");
    const bool residual = spec.family != Family::kDenseNetSurrogate;
    if (residual && spec.stage_widths.size() != spec.blocks_per_stage.size())
        v.emplace_back("stage_widths and blocks_per_stage must have equal length");
    if (spec.cardinality == 0) v.emplace_back("cardinality must be positive");
    if (spec.family != Family::kBrainNeXt && spec.cardinality != 1)
        v.emplace_back("cardinality must be 1 outside the brainnext family");
    if (spec.family == Family::kBrainNeXt && spec.cardinality > 0)
        for (auto w : spec.stage_widths)
            if (w % spec.cardinality != 0)
                v.emplace_back("cardinality " + std::to_string(spec.cardinality) + " does not divide stage width " +
                               std::to_string(w));
    if (spec.dilation_rate < 1 || spec.dilation_rate > 4) v.emplace_back("dilation_rate must be in {1,2,3,4}");
    if (spec.family != Family::kDilation && spec.dilation_rate != 1)
        v.emplace_back("dilation_rate must be 1 outside the dilation family");
    if (spec.family == Family::kDilation && !spec.blocks_per_stage.empty() && spec.blocks_per_stage.back() < 2)
        v.emplace_back("dilation family needs at least two blocks in the final stage");
    if (spec.family == Family::kDenseNetSurrogate && spec.growth_rate == 0)
        v.emplace_back("growth_rate must be positive");
    if (spec.num_classes < 2) v.emplace_back("num_classes must be at least 2");
    if (spec.input_shape.channels == 0) v.emplace_back("input channels must be positive");
    if (spec.input_shape.height < 8 || spec.input_shape.width < 8)
        v.emplace_back("input height and width must be at least 8");
    return v;
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
    if (auto v = spec_violations(spec); !v.empty()) throw InvalidSpecError(spec.name, std::move(v));
    Model m;
    m.spec_ = spec;
    Builder b(seed, m.params_, m.buffers_, m.convs_);

    const std::size_t stem_width = spec.stage_widths.front();
    auto stem = std::make_shared<StemUnit>("stem");
    stem->conv = b.conv("stem.conv", spec.input_shape.channels, stem_width, 3, {.stride = 2, .padding = 1});
    stem->norm = b.norm("stem.norm", stem_width);
    m.units_.push_back(stem);

    std::size_t channels = stem_width;
    if (spec.family == Family::kDenseNetSurrogate) {
        for (std::size_t blk = 0; blk < spec.blocks_per_stage.size(); ++blk) {
            const std::string prefix = "dense" + std::to_string(blk + 1);
            auto unit = std::make_shared<DenseBlockUnit>(prefix);
            for (std::size_t layer = 0; layer < spec.blocks_per_stage[blk]; ++layer) {
                const std::string lname = prefix + ".layer" + std::to_string(layer + 1);
                unit->norms.push_back(b.norm(lname + ".norm", channels));
                unit->convs.push_back(b.conv(lname + ".conv", channels, spec.growth_rate, 3, {.padding = 1}));
                channels += spec.growth_rate;
            }
            m.units_.push_back(unit);
            if (blk + 1 < spec.blocks_per_stage.size()) {
                const std::string tname = "transition" + std::to_string(blk + 1);
                auto tr = std::make_shared<TransitionUnit>(tname);
                tr->norm = b.norm(tname + ".norm", channels);
                tr->conv = b.conv(tname + ".conv", channels, channels / 2, 1, {});
                channels /= 2;
                m.units_.push_back(tr);
            }
        }
    } else {
        const std::size_t stages = spec.stage_widths.size();
        for (std::size_t s = 0; s < stages; ++s) {
            const std::size_t width = spec.stage_widths[s];
            const std::size_t blocks = spec.blocks_per_stage[s];
            for (std::size_t k = 0; k < blocks; ++k) {
                const std::string name = block_name(s, k);
                const std::size_t stride = (s > 0 && k == 0) ? 2 : 1;
                // The dilation family dilates the two trailing blocks of the final stage.
                const bool dilated = spec.family == Family::kDilation && s + 1 == stages && k + 2 >= blocks;
                const std::size_t d = dilated ? spec.dilation_rate : 1;
                auto unit = std::make_shared<ResidualUnit>(name);
                if (spec.family == Family::kBrainNeXt) {
                    unit->convs.push_back(b.conv(name + ".conv1", channels, width, 1, {}));
                    unit->norms.push_back(b.norm(name + ".norm1", width));
                    unit->convs.push_back(b.conv(
                        name + ".conv2", width, width, 3,
                        {.stride = stride, .dilation = 1, .groups = spec.cardinality, .padding = 1}));
                    unit->norms.push_back(b.norm(name + ".norm2", width));
                    unit->convs.push_back(b.conv(name + ".conv3", width, width, 1, {}));
                    unit->norms.push_back(b.norm(name + ".norm3", width));
                } else {
                    unit->convs.push_back(
                        b.conv(name + ".conv1", channels, width, 3, {.stride = stride, .dilation = d, .padding = d}));
                    unit->norms.push_back(b.norm(name + ".norm1", width));
                    unit->convs.push_back(b.conv(name + ".conv2", width, width, 3, {.dilation = d, .padding = d}));
                    unit->norms.push_back(b.norm(name + ".norm2", width));
                }
                if (stride != 1 || channels != width) {
                    Projection p;
                    p.conv = b.conv(name + ".shortcut.conv", channels, width, 1, {.stride = stride});
                    p.norm = b.norm(name + ".shortcut.norm", width);
                    unit->projection = p;
                }
                channels = width;
                m.units_.push_back(unit);
            }
        }
    }

    auto head = std::make_shared<HeadUnit>("head");
    if (spec.family == Family::kDenseNetSurrogate) head->pre_norm = b.norm("head.norm", channels);
    std::tie(head->weight, head->bias) = b.linear("head.fc", channels, spec.num_classes);
    m.units_.push_back(head);
    return m;
}

void Model::check_input(const Tensor& batch) const {
    const auto& in = spec_.input_shape;
    if (!batch.defined() || batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height ||
        batch.dim(3) != in.width)
        throw ShapeError("model '" + spec_.name + "' expects [N," + std::to_string(in.channels) + "," +
                         std::to_string(in.height) + "," + std::to_string(in.width) + "] input, got " +
                         (batch.defined() ? shape_str(batch.shape()) : std::string("undefined")));
}

Tensor Model::run(const Tensor& x, std::size_t begin, std::size_t end, Tape* tape, bool training) const {
    const Context ctx{params_, buffers_, tape, training};
    Tensor h = x;
    for (std::size_t i = begin; i < end; ++i) h = units_[i]->apply(h, ctx);
    return h;
}

Tensor Model::forward(const Tensor& batch, Tape* tape) const {
    check_input(batch);
    return run(batch, 0, units_.size(), tape, false);
}

Tensor Model::forward_train(const Tensor& batch, Tape* tape) {
    check_input(batch);
    return run(batch, 0, units_.size(), tape, true);
}

std::vector<std::string> Model::unit_names() const {
    std::vector<std::string> names;
    for (const auto& u : units_) names.push_back(u->name);
    return names;
}

Tensor Model::forward_units(const Tensor& x, std::size_t begin, std::size_t end, Tape* tape) const {
    if (begin > end || end > units_.size()) throw std::out_of_range("forward_units: unit range out of bounds");
    return run(x, begin, end, tape, false);
}

void Model::set_frozen_prefix(std::size_t count) {
    if (count > params_.size())
        throw std::out_of_range("frozen prefix " + std::to_string(count) + " exceeds parameter tensor count " +
                                std::to_string(params_.size()));
    frozen_prefix_ = count;
    set_trainable(true);
}

void Model::set_trainable(bool trainable) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_[i].value.set_requires_grad(trainable && i >= frozen_prefix_);
        params_[i].value.drop_grad();
    }
}

bool Model::is_frozen() const {
    return std::none_of(params_.begin(), params_.end(), [](const NamedTensor& t) { return t.value.requires_grad(); });
}

std::vector<std::vector<double>> Model::state_snapshot() const {
    std::vector<std::vector<double>> state;
    state.reserve(params_.size() + buffers_.size());
    for (const auto& t : params_) state.emplace_back(t.value.data().begin(), t.value.data().end());
    for (const auto& t : buffers_) state.emplace_back(t.value.data().begin(), t.value.data().end());
    return state;
}

void Model::load_state(const std::vector<std::vector<double>>& state) {
    if (state.size() != params_.size() + buffers_.size())
        throw std::invalid_argument("load_state: snapshot has " + std::to_string(state.size()) + " tensors, model has " +
                                    std::to_string(params_.size() + buffers_.size()));
    auto copy_into = [](Tensor& t, const std::vector<double>& v) {
        if (v.size() != t.numel()) throw ShapeError("load_state: tensor size mismatch");
        std::copy(v.begin(), v.end(), t.data().begin());
    };
    for (std::size_t i = 0; i < params_.size(); ++i) copy_into(params_[i].value, state[i]);
    for (std::size_t i = 0; i < buffers_.size(); ++i) copy_into(buffers_[i].value, state[params_.size() + i]);
}

std::size_t parameter_count(std::span<const NamedTensor> tensors) {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.numel();
    return n;
}

std::size_t parameter_count(const Model& model) { return parameter_count(std::span(model.parameters())); }

std::size_t default_frozen_prefix(const Model& model) { return model.parameters().size() * 3 / 4; }

// ---------------------------------------------------------------------------
// Registry

ModelSpec with_resolution(ModelSpec spec, std::size_t resolution) {
    spec.input_shape.height = resolution;
    spec.input_shape.width = resolution;
    return spec;
}

std::vector<ModelSpec> registry_default(std::size_t resolution) {
    const InputShape input{3, resolution, resolution};
    const std::vector<std::size_t> widths{16, 32, 64};
    // Baseline {2,2,2} plus the two extra blocks appended to the final stage.
    const std::vector<std::size_t> brainnet_blocks{2, 2, 4};
    std::vector<ModelSpec> specs;
    specs.push_back({"brainnet", Family::kBrainNet, widths, brainnet_blocks, 1, 1, 3, input, 8});
    specs.push_back({"brainnext_small", Family::kBrainNeXt, widths, {2, 2, 2}, 4, 1, 3, input, 8});
    specs.push_back({"brainnext_medium", Family::kBrainNeXt, widths, {2, 3, 3}, 4, 1, 3, input, 8});
    specs.push_back({"brainnext_large", Family::kBrainNeXt, widths, {3, 3, 4}, 4, 1, 3, input, 8});
    for (std::size_t d : {2u, 3u, 4u})
        specs.push_back({"dilation" + std::to_string(d), Family::kDilation, widths, brainnet_blocks, 1, d, 3, input, 8});
    specs.push_back({"densenet_surrogate", Family::kDenseNetSurrogate, {16}, {4, 4}, 1, 1, 3, input, 8});
    return specs;
}

std::optional<ModelSpec> registry_find(const std::string& name, std::size_t resolution) {
    for (auto& s : registry_default(resolution))
        if (s.name == name) return s;
    return std::nullopt;
}

std::vector<std::string> registry_names() {
    std::vector<std::string> names;
    for (const auto& s : registry_default()) names.push_back(s.name);
    return names;
}

// ---------------------------------------------------------------------------
// Serialization

std::string spec_to_json(const ModelSpec& spec) {
    nlohmann::ordered_json j;
    j["name"] = spec.name;
    j["family"] = to_string(spec.family);
    j["stage_widths"] = spec.stage_widths;
    j["blocks_per_stage"] = spec.blocks_per_stage;
    j["cardinality"] = spec.cardinality;
    j["dilation_rate"] = spec.dilation_rate;
    j["num_classes"] = spec.num_classes;
    j["input_shape"] = {spec.input_shape.channels, spec.input_shape.height, spec.input_shape.width};
    j["growth_rate"] = spec.growth_rate;
    return j.dump();
}

ModelSpec spec_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.name = j.at("name").get<std::string>();
    s.family = family_from_string(j.at("family").get<std::string>());
    s.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
    s.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<std::size_t>>();
    s.cardinality = j.at("cardinality").get<std::size_t>();
    s.dilation_rate = j.at("dilation_rate").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    const auto in = j.at("input_shape").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw std::invalid_argument("input_shape must have 3 entries");
    s.input_shape = {in[0], in[1], in[2]};
    s.growth_rate = j.at("growth_rate").get<std::size_t>();
    return s;
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

using binio::read_le;
using binio::read_string;
using binio::write_le;
using binio::write_string;

struct CheckpointHeader {
    std::string spec_json;
    std::uint64_t frozen_prefix;
    std::uint64_t count;
};

CheckpointHeader read_header(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const auto version = read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    CheckpointHeader h;
    h.spec_json = read_string(is);
    h.frozen_prefix = read_le<std::uint64_t>(is);
    h.count = read_le<std::uint64_t>(is);
    return h;
}

CheckpointEntry read_entry_header(std::istream& is) {
    CheckpointEntry e;
    e.is_buffer = read_le<std::uint8_t>(is) != 0;
    e.name = read_string(is);
    const auto rank = read_le<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: bad tensor rank");
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(read_le<std::uint64_t>(is));
    return e;
}

}  // namespace

void Model::save(const std::filesystem::path& path) const {
    std::ostringstream os(std::ios::binary);
    os.write(kCheckpointMagic, 8);
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_string(os, spec_to_json(spec_));
    write_le<std::uint64_t>(os, frozen_prefix_);
    write_le<std::uint64_t>(os, params_.size() + buffers_.size());
    auto emit = [&](const NamedTensor& t, bool buffer) {
        write_le<std::uint8_t>(os, buffer ? 1 : 0);
        write_string(os, t.name);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rank()));
        for (auto d : t.value.shape()) write_le<std::uint64_t>(os, d);
        for (double v : t.value.data()) write_le<double>(os, v);
    };
    for (const auto& t : params_) emit(t, false);
    for (const auto& t : buffers_) emit(t, true);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::string bytes = os.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const auto header = read_header(in);
    Model m = build(spec_from_json(header.spec_json), 0);
    if (header.count != m.params_.size() + m.buffers_.size())
        throw std::runtime_error("checkpoint " + path.string() + ": tensor count does not match spec");
    for (std::uint64_t i = 0; i < header.count; ++i) {
        const auto e = read_entry_header(in);
        const bool expect_buffer = i >= m.params_.size();
        NamedTensor& slot = expect_buffer ? m.buffers_[i - m.params_.size()] : m.params_[i];
        if (e.is_buffer != expect_buffer || e.name != slot.name || e.shape != slot.value.shape())
            throw std::runtime_error("checkpoint " + path.string() + ": entry '" + e.name + "' does not match spec");
        for (double& v : slot.value.data()) v = read_le<double>(in);
    }
    m.set_frozen_prefix(static_cast<std::size_t>(header.frozen_prefix));
    return m;
}

std::vector<CheckpointEntry> read_checkpoint_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const auto header = read_header(in);
    std::vector<CheckpointEntry> entries;
    for (std::uint64_t i = 0; i < header.count; ++i) {
        auto e = read_entry_header(in);
        in.seekg(static_cast<std::streamoff>(shape_numel(e.shape) * sizeof(double)), std::ios::cur);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace advrobust
