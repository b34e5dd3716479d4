#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdcn/cdc.hpp"
#include "cdcn/ops.hpp"

namespace cdcn {

enum class Modality { kRgb, kDepth, kIr };
enum class FusionMode { kInput, kFeature, kScore };

std::string to_string(Modality m);
std::string to_string(FusionMode f);
Modality parse_modality(const std::string& s);
FusionMode parse_fusion(const std::string& s);

struct ModelConfig {
    float theta = 0.7f;
    int init_channels = 80;
    float expand_ratio = 2.0f;
    int input_size = 256;
    std::vector<Modality> modalities = {Modality::kRgb};
    FusionMode fusion = FusionMode::kInput;
    bool attention = true;
    std::vector<float> score_weights;  // parallel to modalities; used when fusion == score

    int mask_size() const { return input_size / 8; }
    int expanded_channels() const;  // init_channels * expand_ratio, must be integral
    bool multi_modal() const { return modalities.size() > 1; }
    void validate() const;
};

// Spatial feature maps tapped after each level cell's pool: input_size/2, /4, /8.
template <typename T>
struct LevelFeaturesT {
    TensorT<T> low, mid, high;
};

using LevelFeatures = LevelFeaturesT<float>;

template <typename T>
struct BatchNormParamsT {
    TensorT<T> gamma, beta;
    std::vector<T> running_mean, running_var;
};

template <typename T>
struct CdcBlockT {
    CdcLayerT<T> conv;
    BatchNormParamsT<T> bn;
};

template <typename T>
struct LevelCellT {
    CdcBlockT<T> expand;  // C -> rC
    CdcBlockT<T> reduce;  // rC -> C
};

template <typename T>
struct BackboneT {
    CdcBlockT<T> stem;
    std::array<LevelCellT<T>, 3> cells;
};

// Spatial attention over one level: sigmoid(plain conv over [channel-mean, channel-max]).
template <typename T>
struct AttentionGateT {
    TensorT<T> weight;  // (1, 2, k, k)
    TensorT<T> bias;    // (1)
    int kernel = 3;
};

template <typename T>
struct HeadT {
    CdcBlockT<T> fuse;    // levels*C -> C
    CdcLayerT<T> out;     // C -> 1, sigmoid applied after
};

template <typename T>
struct ParamRefT {
    std::string name;
    TensorT<T>* tensor;
};

template <typename T>
struct StateRefT {
    std::string name;
    std::vector<T>* values;
};

// Everything produced along one forward pass, for feature inspection.
template <typename T>
struct ForwardTraceT {
    std::vector<std::string> branch_names;               // e.g. {"backbone"} or {"rgb","depth","ir"}
    std::vector<LevelFeaturesT<T>> branch_levels;        // post-attention when enabled
    TensorT<T> head_input;                               // concatenated resized levels
    TensorT<T> mask;                                     // (N, S/8, S/8)
};

using ForwardTrace = ForwardTraceT<float>;

template <typename T>
class ModelT {
  public:
    ModelT(ModelConfig cfg, uint32_t seed);

    ModelT(const ModelT&) = delete;
    ModelT& operator=(const ModelT&) = delete;

    const ModelConfig& config() const { return cfg_; }

    // Dispatches on the configured fusion mode / modality count. `inputs` must
    // carry exactly the configured modalities, each (N, 3, S, S) in [0, 1].
    TensorT<T> forward(const std::map<Modality, TensorT<T>>& inputs, bool training);
    ForwardTraceT<T> forward_traced(const std::map<Modality, TensorT<T>>& inputs, bool training);

    TensorT<T> forward_single(const TensorT<T>& x, bool training);
    TensorT<T> forward_multi_feature(const TensorT<T>& rgb, const TensorT<T>& depth,
                                     const TensorT<T>& ir, bool training);
    TensorT<T> forward_multi_input(const TensorT<T>& rgb, const TensorT<T>& depth,
                                   const TensorT<T>& ir, bool training);

    // Named learnable parameters / batchnorm running state, in a fixed order.
    std::vector<ParamRefT<T>> params();
    std::vector<StateRefT<T>> state();

    int64_t param_count();

  private:
    friend struct ModelBuilder;
    BackboneT<T>& branch(size_t i) { return branches_[i]; }

    TensorT<T> run_backbone_head(const TensorT<T>& x, bool training);
    LevelFeaturesT<T> run_backbone(BackboneT<T>& bb, size_t branch_index, const TensorT<T>& x,
                                   bool training);
    TensorT<T> run_head(const TensorT<T>& head_input, bool training);
    ForwardTraceT<T> trace_impl(const std::map<Modality, TensorT<T>>& inputs, bool training);

    ModelConfig cfg_;
    bool use_attention_ = false;
    std::vector<BackboneT<T>> branches_;                 // 1 or 3 (feature fusion)
    std::array<AttentionGateT<T>, 3> attention_;         // used when use_attention_
    HeadT<T> head_;
};

using Model = ModelT<float>;
using ModelD = ModelT<double>;

// Expected level-feature shapes (C, H, W) derived by propagating the layer
// plan's convolution/pool arithmetic, without running a forward pass.
std::array<Shape, 3> level_shapes(const ModelConfig& cfg);

// Weighted sum of per-modality scores; weights must sum to 1 (+-1e-6).
float fuse_scores(const std::map<Modality, float>& scores,
                  const std::map<Modality, float>& weights);

// Mean of the predicted mask; higher = more live.
template <typename T>
T predict_score(const TensorT<T>& mask);

// Per-sample means for a batch of masks (N, H, W).
template <typename T>
std::vector<T> predict_scores(const TensorT<T>& masks);

}  // namespace cdcn
