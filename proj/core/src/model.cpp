#include "cdcn/model.hpp"

#include <cmath>
#include <random>

namespace cdcn {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::kRgb: return "rgb";
        case Modality::kDepth: return "depth";
        case Modality::kIr: return "ir";
    }
    throw ValueError("unknown modality");
}

std::string to_string(FusionMode f) {
    switch (f) {
        case FusionMode::kInput: return "input";
        case FusionMode::kFeature: return "feature";
        case FusionMode::kScore: return "score";
    }
    throw ValueError("unknown fusion mode");
}

Modality parse_modality(const std::string& s) {
    if (s == "rgb") return Modality::kRgb;
    if (s == "depth") return Modality::kDepth;
    if (s == "ir") return Modality::kIr;
    throw ValueError("unknown modality '" + s + "' (expected rgb, depth or ir)");
}

FusionMode parse_fusion(const std::string& s) {
    if (s == "input") return FusionMode::kInput;
    if (s == "feature") return FusionMode::kFeature;
    if (s == "score") return FusionMode::kScore;
    throw ValueError("unknown fusion mode '" + s + "' (expected input, feature or score)");
}

int ModelConfig::expanded_channels() const {
    const double rc = static_cast<double>(init_channels) * expand_ratio;
    const double rounded = std::round(rc);
    if (std::abs(rc - rounded) > 1e-9 || rounded < 1.0) {
        throw ValueError("expand_ratio " + std::to_string(expand_ratio) + " times " +
                         std::to_string(init_channels) + " channels is not a positive integer");
    }
    return static_cast<int>(rounded);
}

void ModelConfig::validate() const {
    if (!(theta >= 0.0f && theta <= 1.0f)) throw ValueError("theta must lie in [0,1]");
    if (input_size <= 0 || input_size % 8 != 0) {
        throw ValueError("input_size must be a positive multiple of 8, got " +
                         std::to_string(input_size));
    }
    if (init_channels < 1) throw ValueError("init_channels must be >= 1");
    (void)expanded_channels();
    if (modalities.empty()) throw ValueError("at least one modality is required");
    for (size_t i = 1; i < modalities.size(); ++i) {
        if (static_cast<int>(modalities[i]) <= static_cast<int>(modalities[i - 1])) {
            throw ValueError("modalities must be unique and ordered rgb, depth, ir");
        }
    }
    if (multi_modal() && fusion != FusionMode::kScore && modalities.size() != 3) {
        throw ValueError(to_string(fusion) + " fusion requires all three modalities");
    }
    if (fusion == FusionMode::kScore) {
        if (score_weights.size() != modalities.size()) {
            throw ValueError("score_weights must list one weight per modality");
        }
        float total = 0.0f;
        for (float w : score_weights) {
            if (w < 0.0f) throw ValueError("score weights must be non-negative");
            total += w;
        }
        if (std::abs(total - 1.0f) > 1e-6f) {
            throw ValueError("score weights must sum to 1, got " + std::to_string(total));
        }
    }
}

std::array<Shape, 3> level_shapes(const ModelConfig& cfg) {
    cfg.validate();
    auto conv_out = [](int s, int k, int stride, int pad) { return (s + 2 * pad - k) / stride + 1; };
    int s = cfg.input_size;
    s = conv_out(s, 3, 1, 1);  // stem
    std::array<Shape, 3> shapes;
    for (int i = 0; i < 3; ++i) {
        s = conv_out(s, 3, 1, 1);  // expand
        s = conv_out(s, 3, 1, 1);  // reduce
        s = (s - 2) / 2 + 1;       // pool 2x2 stride 2
        shapes[i] = Shape{cfg.init_channels, s, s};
    }
    return shapes;
}

namespace {

constexpr std::array<const char*, 3> kLevelNames = {"low", "mid", "high"};
constexpr std::array<int, 3> kAttentionKernels = {7, 5, 3};

template <typename T>
TensorT<T> init_uniform(Shape shape, int fan_in, std::mt19937& rng) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    return TensorT<T>::rand_uniform(std::move(shape), -bound, bound, rng, true);
}

template <typename T>
CdcLayerT<T> make_cdc_layer(int in, int out, float theta, std::mt19937& rng) {
    CdcLayerT<T> layer;
    const int fan_in = in * 3 * 3;
    layer.weight = init_uniform<T>({out, in, 3, 3}, fan_in, rng);
    layer.bias = init_uniform<T>({out}, fan_in, rng);
    layer.theta = static_cast<T>(theta);
    layer.stride = 1;
    layer.padding = 1;
    return layer;
}

template <typename T>
BatchNormParamsT<T> make_bn(int channels) {
    BatchNormParamsT<T> bn;
    bn.gamma = TensorT<T>::full({channels}, T(1), true);
    bn.beta = TensorT<T>::zeros({channels}, true);
    bn.running_mean.assign(static_cast<size_t>(channels), T(0));
    bn.running_var.assign(static_cast<size_t>(channels), T(1));
    return bn;
}

template <typename T>
CdcBlockT<T> make_block(int in, int out, float theta, std::mt19937& rng) {
    CdcBlockT<T> block;
    block.conv = make_cdc_layer<T>(in, out, theta, rng);
    block.bn = make_bn<T>(out);
    return block;
}

template <typename T>
TensorT<T> block_forward(CdcBlockT<T>& block, const TensorT<T>& x, bool training) {
    TensorT<T> y = cdc_decomposed(x, block.conv);
    y = batchnorm2d(y, block.bn.gamma, block.bn.beta, block.bn.running_mean, block.bn.running_var,
                    training, training);
    return relu(y);
}

template <typename T>
TensorT<T> apply_attention(AttentionGateT<T>& gate, const TensorT<T>& f) {
    TensorT<T> stats = concat_channels<T>({channel_mean(f), channel_max(f)});
    TensorT<T> a = sigmoid(conv2d(stats, gate.weight, gate.bias, 1, (gate.kernel - 1) / 2));
    return mul_channel_broadcast(f, a);
}

}  // namespace

template <typename T>
ModelT<T>::ModelT(ModelConfig cfg, uint32_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.fusion == FusionMode::kScore && cfg_.multi_modal()) {
        throw ValueError(
            "score fusion composes separately trained single-modality models; build one model per "
            "modality and combine with fuse_scores");
    }
    const bool feature_fusion = cfg_.multi_modal() && cfg_.fusion == FusionMode::kFeature;
    const size_t branch_count = feature_fusion ? 3 : 1;
    // Attention gating only applies to the single-backbone architecture.
    use_attention_ = cfg_.attention && !feature_fusion;

    std::mt19937 rng(seed);
    const int c = cfg_.init_channels;
    const int rc = cfg_.expanded_channels();
    const int stem_in = (cfg_.multi_modal() && cfg_.fusion == FusionMode::kInput) ? 9 : 3;

    branches_.reserve(branch_count);
    for (size_t b = 0; b < branch_count; ++b) {
        BackboneT<T> bb;
        bb.stem = make_block<T>(stem_in, c, cfg_.theta, rng);
        for (auto& cell : bb.cells) {
            cell.expand = make_block<T>(c, rc, cfg_.theta, rng);
            cell.reduce = make_block<T>(rc, c, cfg_.theta, rng);
        }
        branches_.push_back(std::move(bb));
    }
    if (use_attention_) {
        for (int i = 0; i < 3; ++i) {
            const int k = kAttentionKernels[i];
            attention_[i].kernel = k;
            attention_[i].weight = init_uniform<T>({1, 2, k, k}, 2 * k * k, rng);
            attention_[i].bias = init_uniform<T>({1}, 2 * k * k, rng);
        }
    }
    const int head_in = static_cast<int>(branch_count) * 3 * c;
    head_.fuse = make_block<T>(head_in, c, cfg_.theta, rng);
    head_.out = make_cdc_layer<T>(c, 1, cfg_.theta, rng);
}

template <typename T>
LevelFeaturesT<T> ModelT<T>::run_backbone(BackboneT<T>& bb, size_t, const TensorT<T>& x,
                                          bool training) {
    TensorT<T> y = block_forward(bb.stem, x, training);
    std::array<TensorT<T>, 3> levels;
    for (int i = 0; i < 3; ++i) {
        y = block_forward(bb.cells[i].expand, y, training);
        y = block_forward(bb.cells[i].reduce, y, training);
        y = maxpool2d(y, 2, 2);
        levels[i] = y;
    }
    if (use_attention_) {
        for (int i = 0; i < 3; ++i) levels[i] = apply_attention(attention_[i], levels[i]);
    }
    return LevelFeaturesT<T>{levels[0], levels[1], levels[2]};
}

namespace {

template <typename T>
TensorT<T> assemble_head_input(const std::vector<LevelFeaturesT<T>>& features, int mask_size) {
    std::vector<TensorT<T>> resized;
    resized.reserve(features.size() * 3);
    for (const auto& f : features) {
        for (const TensorT<T>* level : {&f.low, &f.mid, &f.high}) {
            resized.push_back(resize(*level, mask_size, mask_size, ResizeMode::kBilinear));
        }
    }
    return concat_channels(resized);
}

}  // namespace

template <typename T>
TensorT<T> ModelT<T>::run_head(const TensorT<T>& head_input, bool training) {
    TensorT<T> y = block_forward(head_.fuse, head_input, training);
    y = sigmoid(cdc_decomposed(y, head_.out));
    return y.reshape({y.dim(0), y.dim(2), y.dim(3)});
}

template <typename T>
TensorT<T> ModelT<T>::run_backbone_head(const TensorT<T>& x, bool training) {
    LevelFeaturesT<T> levels = run_backbone(branches_[0], 0, x, training);
    return run_head(assemble_head_input<T>({levels}, cfg_.mask_size()), training);
}

namespace {

template <typename T>
void check_model_input(const TensorT<T>& x, int channels, int size, const char* what) {
    if (!x.defined() || x.rank() != 4) {
        throw ShapeError(std::string(what) + ": expected (N,C,H,W) input");
    }
    if (x.dim(1) != channels) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                         " input channels, got " + std::to_string(x.dim(1)));
    }
    if (x.dim(2) != size || x.dim(3) != size) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(size) + "x" +
                         std::to_string(size) + " input, got " + shape_str(x.shape()));
    }
}

}  // namespace

template <typename T>
TensorT<T> ModelT<T>::forward_single(const TensorT<T>& x, bool training) {
    if (branches_.size() != 1) throw ValueError("forward_single: model has per-modality branches");
    check_model_input(x, branches_[0].stem.conv.weight.dim(1), cfg_.input_size, "forward_single");
    return run_backbone_head(x, training);
}

template <typename T>
TensorT<T> ModelT<T>::forward_multi_feature(const TensorT<T>& rgb, const TensorT<T>& depth,
                                            const TensorT<T>& ir, bool training) {
    if (branches_.size() != 3) {
        throw ValueError("forward_multi_feature: model was not built for feature fusion");
    }
    for (const auto* x : {&rgb, &depth, &ir}) {
        check_model_input(*x, 3, cfg_.input_size, "forward_multi_feature");
    }
    std::vector<LevelFeaturesT<T>> features;
    features.push_back(run_backbone(branches_[0], 0, rgb, training));
    features.push_back(run_backbone(branches_[1], 1, depth, training));
    features.push_back(run_backbone(branches_[2], 2, ir, training));
    return run_head(assemble_head_input(features, cfg_.mask_size()), training);
}

template <typename T>
TensorT<T> ModelT<T>::forward_multi_input(const TensorT<T>& rgb, const TensorT<T>& depth,
                                          const TensorT<T>& ir, bool training) {
    if (branches_.size() != 1 || branches_[0].stem.conv.weight.dim(1) != 9) {
        throw ValueError("forward_multi_input: model was not built for input fusion");
    }
    for (const auto* x : {&rgb, &depth, &ir}) {
        check_model_input(*x, 3, cfg_.input_size, "forward_multi_input");
    }
    return run_backbone_head(concat_channels<T>({rgb, depth, ir}), training);
}

template <typename T>
TensorT<T> ModelT<T>::forward(const std::map<Modality, TensorT<T>>& inputs, bool training) {
    if (inputs.size() != cfg_.modalities.size()) {
        throw ValueError("forward: expected " + std::to_string(cfg_.modalities.size()) +
                         " modality inputs, got " + std::to_string(inputs.size()));
    }
    for (Modality m : cfg_.modalities) {
        if (inputs.find(m) == inputs.end()) {
            throw ValueError("forward: missing input for modality " + to_string(m));
        }
    }
    if (!cfg_.multi_modal()) return forward_single(inputs.begin()->second, training);
    switch (cfg_.fusion) {
        case FusionMode::kFeature:
            return forward_multi_feature(inputs.at(Modality::kRgb), inputs.at(Modality::kDepth),
                                         inputs.at(Modality::kIr), training);
        case FusionMode::kInput:
            return forward_multi_input(inputs.at(Modality::kRgb), inputs.at(Modality::kDepth),
                                       inputs.at(Modality::kIr), training);
        case FusionMode::kScore:
            break;
    }
    throw ValueError("forward: score fusion has no joint network");
}

template <typename T>
ForwardTraceT<T> ModelT<T>::forward_traced(const std::map<Modality, TensorT<T>>& inputs,
                                           bool training) {
    return trace_impl(inputs, training);
}

template <typename T>
ForwardTraceT<T> ModelT<T>::trace_impl(const std::map<Modality, TensorT<T>>& inputs, bool training) {
    ForwardTraceT<T> trace;
    if (branches_.size() == 3) {
        trace.branch_names = {"rgb", "depth", "ir"};
        trace.branch_levels.push_back(run_backbone(branches_[0], 0, inputs.at(Modality::kRgb), training));
        trace.branch_levels.push_back(
            run_backbone(branches_[1], 1, inputs.at(Modality::kDepth), training));
        trace.branch_levels.push_back(run_backbone(branches_[2], 2, inputs.at(Modality::kIr), training));
    } else {
        trace.branch_names = {"backbone"};
        TensorT<T> x;
        if (cfg_.multi_modal() && cfg_.fusion == FusionMode::kInput) {
            x = concat_channels<T>({inputs.at(Modality::kRgb), inputs.at(Modality::kDepth),
                                    inputs.at(Modality::kIr)});
        } else {
            x = inputs.at(cfg_.modalities[0]);
        }
        check_model_input(x, branches_[0].stem.conv.weight.dim(1), cfg_.input_size, "forward");
        trace.branch_levels.push_back(run_backbone(branches_[0], 0, x, training));
    }
    trace.head_input = assemble_head_input(trace.branch_levels, cfg_.mask_size());
    trace.mask = run_head(trace.head_input, training);
    return trace;
}

namespace {

template <typename T>
void collect_block(std::vector<ParamRefT<T>>& out, const std::string& prefix, CdcBlockT<T>& block) {
    out.push_back({prefix + ".conv.weight", &block.conv.weight});
    out.push_back({prefix + ".conv.bias", &block.conv.bias});
    out.push_back({prefix + ".bn.gamma", &block.bn.gamma});
    out.push_back({prefix + ".bn.beta", &block.bn.beta});
}

}  // namespace

template <typename T>
std::vector<ParamRefT<T>> ModelT<T>::params() {
    std::vector<ParamRefT<T>> out;
    const bool feature_fusion = branches_.size() == 3;
    for (size_t b = 0; b < branches_.size(); ++b) {
        const std::string prefix = feature_fusion ? to_string(cfg_.modalities[b]) : "backbone";
        collect_block(out, prefix + ".stem", branches_[b].stem);
        for (int i = 0; i < 3; ++i) {
            const std::string cell = prefix + ".cells." + std::to_string(i);
            collect_block(out, cell + ".expand", branches_[b].cells[i].expand);
            collect_block(out, cell + ".reduce", branches_[b].cells[i].reduce);
        }
    }
    if (use_attention_) {
        for (int i = 0; i < 3; ++i) {
            const std::string prefix = std::string("attn.") + kLevelNames[i];
            out.push_back({prefix + ".weight", &attention_[i].weight});
            out.push_back({prefix + ".bias", &attention_[i].bias});
        }
    }
    collect_block(out, "head.fuse", head_.fuse);
    out.push_back({"head.out.weight", &head_.out.weight});
    out.push_back({"head.out.bias", &head_.out.bias});
    return out;
}

template <typename T>
std::vector<StateRefT<T>> ModelT<T>::state() {
    std::vector<StateRefT<T>> out;
    const bool feature_fusion = branches_.size() == 3;
    auto add_bn = [&out](const std::string& prefix, BatchNormParamsT<T>& bn) {
        out.push_back({prefix + ".bn.running_mean", &bn.running_mean});
        out.push_back({prefix + ".bn.running_var", &bn.running_var});
    };
    for (size_t b = 0; b < branches_.size(); ++b) {
        const std::string prefix = feature_fusion ? to_string(cfg_.modalities[b]) : "backbone";
        add_bn(prefix + ".stem", branches_[b].stem.bn);
        for (int i = 0; i < 3; ++i) {
            const std::string cell = prefix + ".cells." + std::to_string(i);
            add_bn(cell + ".expand", branches_[b].cells[i].expand.bn);
            add_bn(cell + ".reduce", branches_[b].cells[i].reduce.bn);
        }
    }
    add_bn("head.fuse", head_.fuse.bn);
    return out;
}

template <typename T>
int64_t ModelT<T>::param_count() {
    int64_t total = 0;
    for (const auto& p : params()) total += p.tensor->numel();
    return total;
}

float fuse_scores(const std::map<Modality, float>& scores,
                  const std::map<Modality, float>& weights) {
    if (weights.empty()) throw ValueError("fuse_scores: no weights given");
    float total_weight = 0.0f;
    double fused = 0.0;
    for (const auto& [modality, weight] : weights) {
        if (weight < 0.0f) throw ValueError("fuse_scores: weights must be non-negative");
        auto it = scores.find(modality);
        if (it == scores.end()) {
            throw ValueError("fuse_scores: missing score for modality " + to_string(modality));
        }
        if (it->second < 0.0f || it->second > 1.0f) {
            throw ValueError("fuse_scores: scores must lie in [0,1]");
        }
        total_weight += weight;
        fused += static_cast<double>(weight) * it->second;
    }
    if (std::abs(total_weight - 1.0f) > 1e-6f) {
        throw ValueError("fuse_scores: weights must sum to 1, got " + std::to_string(total_weight));
    }
    return static_cast<float>(fused);
}

template <typename T>
T predict_score(const TensorT<T>& mask) {
    if (!mask.defined() || mask.numel() == 0) throw ShapeError("predict_score: empty mask");
    double acc = 0.0;
    for (int64_t i = 0; i < mask.numel(); ++i) acc += mask.data()[i];
    return static_cast<T>(acc / static_cast<double>(mask.numel()));
}

template <typename T>
std::vector<T> predict_scores(const TensorT<T>& masks) {
    if (!masks.defined() || masks.rank() != 3) {
        throw ShapeError("predict_scores: expected (N,H,W) masks");
    }
    const int64_t n = masks.dim(0);
    const int64_t per = masks.numel() / n;
    std::vector<T> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const T* base = masks.data() + i * per;
        for (int64_t j = 0; j < per; ++j) acc += base[j];
        out[static_cast<size_t>(i)] = static_cast<T>(acc / static_cast<double>(per));
    }
    return out;
}

template class ModelT<float>;
template class ModelT<double>;
template float predict_score(const TensorT<float>&);
template double predict_score(const TensorT<double>&);
template std::vector<float> predict_scores(const TensorT<float>&);
template std::vector<double> predict_scores(const TensorT<double>&);

}  // namespace cdcn
