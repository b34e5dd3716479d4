#include <doctest.h>

#include <cstring>
#include <map>
#include <set>

#include "cdcn/grad_check.hpp"
#include "cdcn/losses.hpp"
#include "cdcn/model.hpp"
#include "test_helpers.hpp"

using namespace cdcn;
using cdcn::testing::make_rng;
using cdcn::testing::max_abs_diff;
using cdcn::testing::random_tensor;

namespace {

ModelConfig small_config(int size = 32, int channels = 8) {
    ModelConfig cfg;
    cfg.input_size = size;
    cfg.init_channels = channels;
    cfg.theta = 0.7f;
    cfg.attention = true;
    return cfg;
}

std::map<Modality, Tensor> rgb_input(const Tensor& x) {
    return {{Modality::kRgb, x}};
}

template <typename T>
std::map<std::string, TensorT<T>*> param_map(ModelT<T>& model) {
    std::map<std::string, TensorT<T>*> out;
    for (auto& p : model.params()) out[p.name] = p.tensor;
    return out;
}

// parameter volume worked out from the layer plan, independent of params()
int64_t expected_param_count(int c, bool attention, int branches) {
    const int64_t c2 = int64_t(c) * c;
    int64_t backbone = 30 * c + 3 * (36 * c2 + 9 * c);  // stem + three cells
    int64_t attn = attention ? (2 * 7 * 7 + 1) + (2 * 5 * 5 + 1) + (2 * 3 * 3 + 1) : 0;
    int64_t head_fuse = int64_t(branches) * 3 * c * c * 9 + c + 2 * c;
    int64_t head_out = 9 * c + 1;
    return branches * backbone + attn + head_fuse + head_out;
}

}  // namespace

TEST_CASE("modality and fusion parsing") {
    CHECK(parse_modality("rgb") == Modality::kRgb);
    CHECK(parse_modality("depth") == Modality::kDepth);
    CHECK(parse_modality("ir") == Modality::kIr);
    CHECK(parse_fusion("feature") == FusionMode::kFeature);
    CHECK(to_string(FusionMode::kScore) == "score");
    CHECK_THROWS_AS(parse_modality("thermal"), ValueError);
    CHECK_THROWS_AS(parse_fusion("late"), ValueError);
}

TEST_CASE("level shapes follow the conv/pool arithmetic") {
    ModelConfig cfg;
    cfg.input_size = 256;
    cfg.init_channels = 80;
    auto shapes = level_shapes(cfg);
    CHECK(shapes[0] == Shape{80, 128, 128});
    CHECK(shapes[1] == Shape{80, 64, 64});
    CHECK(shapes[2] == Shape{80, 32, 32});

    cfg.input_size = 64;
    cfg.init_channels = 16;
    shapes = level_shapes(cfg);
    CHECK(shapes[0] == Shape{16, 32, 32});
    CHECK(shapes[1] == Shape{16, 16, 16});
    CHECK(shapes[2] == Shape{16, 8, 8});
}

TEST_CASE("config validation rejects malformed setups") {
    ModelConfig cfg = small_config();
    cfg.input_size = 100;
    CHECK_THROWS_AS(cfg.validate(), ValueError);

    cfg = small_config();
    cfg.theta = 1.5f;
    CHECK_THROWS_AS(cfg.validate(), ValueError);

    cfg = small_config(32, 5);
    cfg.expand_ratio = 1.5f;  // 7.5 channels
    CHECK_THROWS_AS(cfg.validate(), ValueError);

    cfg = small_config();
    cfg.modalities = {Modality::kDepth, Modality::kRgb};
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg.modalities = {Modality::kRgb, Modality::kRgb};
    CHECK_THROWS_AS(cfg.validate(), ValueError);

    cfg = small_config();
    cfg.modalities = {Modality::kRgb, Modality::kDepth};
    cfg.fusion = FusionMode::kFeature;
    CHECK_THROWS_AS(cfg.validate(), ValueError);

    cfg = small_config();
    cfg.fusion = FusionMode::kScore;
    cfg.score_weights = {0.3f, 0.3f};  // wrong arity for one modality
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg.score_weights = {0.9f};
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg.score_weights = {1.0f};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("score fusion never builds a joint multi-modal network") {
    ModelConfig cfg = small_config();
    cfg.modalities = {Modality::kRgb, Modality::kDepth, Modality::kIr};
    cfg.fusion = FusionMode::kScore;
    cfg.score_weights = {0.5f, 0.25f, 0.25f};
    CHECK_NOTHROW(cfg.validate());
    CHECK_THROWS_AS(Model(cfg, 1), ValueError);
}

TEST_CASE("parameter registry names and volume, single backbone") {
    Model model(small_config(32, 8), 1);
    auto params = model.params();
    CHECK(params.size() == 40);

    std::set<std::string> names;
    for (auto& p : params) names.insert(p.name);
    CHECK(names.size() == params.size());
    for (const char* expected :
         {"backbone.stem.conv.weight", "backbone.stem.conv.bias",
          "backbone.stem.bn.gamma", "backbone.stem.bn.beta",
          "backbone.cells.0.expand.conv.weight", "backbone.cells.2.reduce.bn.beta",
          "attn.low.weight", "attn.mid.weight", "attn.high.bias",
          "head.fuse.conv.weight", "head.out.weight", "head.out.bias"}) {
        CHECK_MESSAGE(names.count(expected) == 1, expected);
    }
    CHECK(model.param_count() == expected_param_count(8, true, 1));

    auto state = model.state();
    CHECK(state.size() == 16);
    std::set<std::string> state_names;
    for (auto& s : state) state_names.insert(s.name);
    CHECK(state_names.count("backbone.stem.bn.running_mean") == 1);
    CHECK(state_names.count("head.fuse.bn.running_var") == 1);
}

TEST_CASE("parameter registry, feature fusion") {
    ModelConfig cfg = small_config(32, 8);
    cfg.modalities = {Modality::kRgb, Modality::kDepth, Modality::kIr};
    cfg.fusion = FusionMode::kFeature;
    cfg.attention = true;  // forced off for per-modality branches
    Model model(cfg, 1);

    auto params = model.params();
    CHECK(params.size() == 90);
    std::set<std::string> names;
    for (auto& p : params) names.insert(p.name);
    CHECK(names.count("rgb.stem.conv.weight") == 1);
    CHECK(names.count("depth.cells.1.expand.bn.gamma") == 1);
    CHECK(names.count("ir.cells.2.reduce.conv.bias") == 1);
    CHECK(names.count("head.fuse.conv.weight") == 1);
    for (const std::string& n : names) CHECK(n.rfind("attn.", 0) != 0);
    CHECK(model.param_count() == expected_param_count(8, false, 3));
    CHECK(model.state().size() == 44);
}

TEST_CASE("initialization is seed-deterministic and follows the scheme") {
    Model a(small_config(32, 8), 7);
    Model b(small_config(32, 8), 7);
    Model c(small_config(32, 8), 8);
    auto pa = a.params();
    auto pb = b.params();
    auto pc = c.params();
    bool all_equal = true;
    bool any_diff_seed = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (std::memcmp(pa[i].tensor->data(), pb[i].tensor->data(),
                        size_t(pa[i].tensor->numel()) * sizeof(float)) != 0) {
            all_equal = false;
        }
        if (std::memcmp(pa[i].tensor->data(), pc[i].tensor->data(),
                        size_t(pa[i].tensor->numel()) * sizeof(float)) != 0) {
            any_diff_seed = true;
        }
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    auto names = param_map(a);
    const Tensor& gamma = *names.at("backbone.stem.bn.gamma");
    const Tensor& beta = *names.at("backbone.stem.bn.beta");
    for (int64_t i = 0; i < gamma.numel(); ++i) {
        CHECK(gamma.data()[i] == 1.0f);
        CHECK(beta.data()[i] == 0.0f);
    }
    const Tensor& stem_w = *names.at("backbone.stem.conv.weight");
    const float bound = 1.0f / std::sqrt(27.0f);
    for (int64_t i = 0; i < stem_w.numel(); ++i) {
        CHECK(std::abs(stem_w.data()[i]) <= bound);
    }
    for (auto& s : a.state()) {
        const bool is_var = s.name.find("running_var") != std::string::npos;
        for (float v : *s.values) CHECK(v == (is_var ? 1.0f : 0.0f));
    }
}

TEST_CASE("forward produces sigmoid masks at S/8") {
    Model model(small_config(32, 8), 3);
    auto rng = make_rng(11);
    Tensor x = random_tensor<float>({2, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor mask = model.forward(rgb_input(x), /*training=*/false);
    REQUIRE(mask.shape() == Shape{2, 4, 4});
    for (int64_t i = 0; i < mask.numel(); ++i) {
        CHECK(mask.data()[i] > 0.0f);
        CHECK(mask.data()[i] < 1.0f);
    }

    Tensor again = model.forward(rgb_input(x), false);
    CHECK(std::memcmp(mask.data(), again.data(),
                      size_t(mask.numel()) * sizeof(float)) == 0);
}

TEST_CASE("forward validates its inputs") {
    Model model(small_config(32, 8), 3);
    auto rng = make_rng(12);
    CHECK_THROWS_AS(model.forward({}, false), ValueError);
    Tensor wrong_size = random_tensor<float>({1, 3, 16, 16}, rng, 0.0f, 1.0f);
    CHECK_THROWS_AS(model.forward(rgb_input(wrong_size), false), ShapeError);
    Tensor wrong_rank = random_tensor<float>({3, 32, 32}, rng, 0.0f, 1.0f);
    CHECK_THROWS_AS(model.forward(rgb_input(wrong_rank), false), ShapeError);
    Tensor ok = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    CHECK_THROWS_AS(model.forward({{Modality::kDepth, ok}}, false), ValueError);
}

TEST_CASE("eval-mode outputs are independent across the batch") {
    Model model(small_config(32, 8), 5);
    auto rng = make_rng(13);
    Tensor a = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor b = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor both = stack_batch<float>(
        {a.reshape({3, 32, 32}), b.reshape({3, 32, 32})});

    Tensor batched = model.forward(rgb_input(both), false);
    Tensor single_a = model.forward(rgb_input(a), false);
    Tensor single_b = model.forward(rgb_input(b), false);
    for (int64_t i = 0; i < single_a.numel(); ++i) {
        CHECK(std::abs(batched.data()[i] - single_a.data()[i]) <= 1e-6f);
        CHECK(std::abs(batched.data()[i + single_a.numel()] - single_b.data()[i]) <= 1e-6f);
    }
}

TEST_CASE("training mode uses batch statistics and updates running buffers") {
    Model model(small_config(32, 8), 9);
    auto rng = make_rng(14);
    Tensor x = random_tensor<float>({4, 3, 32, 32}, rng, 0.0f, 1.0f);

    std::vector<std::vector<float>> before;
    for (auto& s : model.state()) before.push_back(*s.values);

    Tensor eval_mask = model.forward(rgb_input(x), false);
    std::vector<std::vector<float>> after_eval;
    for (auto& s : model.state()) after_eval.push_back(*s.values);
    CHECK(before == after_eval);

    Tensor train_mask = model.forward(rgb_input(x), true);
    std::vector<std::vector<float>> after_train;
    for (auto& s : model.state()) after_train.push_back(*s.values);
    CHECK(before != after_train);
    CHECK(max_abs_diff(eval_mask, train_mask) > 0.0f);
}

TEST_CASE("theta changes the network output") {
    ModelConfig cfg = small_config(32, 8);
    Model blended(cfg, 21);
    cfg.theta = 0.0f;
    Model plain(cfg, 21);  // same seed, same draws, different theta
    auto rng = make_rng(15);
    Tensor x = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor ya = blended.forward(rgb_input(x), false);
    Tensor yb = plain.forward(rgb_input(x), false);
    CHECK(max_abs_diff(ya, yb) > 1e-4f);
}

TEST_CASE("zeroed attention gates halve the level features") {
    ModelConfig with_attn = small_config(32, 8);
    Model a(with_attn, 17);
    ModelConfig no_attn = with_attn;
    no_attn.attention = false;
    Model b(no_attn, 99);

    // align every shared weight, then silence the gates
    auto a_params = param_map(a);
    auto b_params = param_map(b);
    for (auto& [name, tensor] : b_params) {
        std::memcpy(tensor->data(), a_params.at(name)->data(),
                    size_t(tensor->numel()) * sizeof(float));
    }
    for (const char* level : {"low", "mid", "high"}) {
        Tensor& w = *a_params.at(std::string("attn.") + level + ".weight");
        Tensor& bias = *a_params.at(std::string("attn.") + level + ".bias");
        std::fill(w.data(), w.data() + w.numel(), 0.0f);
        std::fill(bias.data(), bias.data() + bias.numel(), 0.0f);
    }

    auto rng = make_rng(18);
    Tensor x = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    ForwardTrace ta = a.forward_traced(rgb_input(x), false);
    ForwardTrace tb = b.forward_traced(rgb_input(x), false);
    REQUIRE(ta.branch_levels.size() == 1);
    for (auto level : {&LevelFeatures::low, &LevelFeatures::mid, &LevelFeatures::high}) {
        const Tensor& gated = ta.branch_levels[0].*level;
        const Tensor& plain = tb.branch_levels[0].*level;
        REQUIRE(gated.shape() == plain.shape());
        float worst = 0.0f;
        for (int64_t i = 0; i < gated.numel(); ++i) {
            worst = std::max(worst, std::abs(gated.data()[i] - 0.5f * plain.data()[i]));
        }
        CHECK(worst <= 1e-6f);
    }
}

TEST_CASE("gradients reach every parameter") {
    Model model(small_config(32, 8), 23);
    auto rng = make_rng(19);
    Tensor x = random_tensor<float>({2, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor target = random_tensor<float>({2, 4, 4}, rng, 0.0f, 1.0f);

    LossReport loss = overall_loss(model.forward(rgb_input(x), true), target);
    loss.total.backward();
    for (auto& p : model.params()) {
        REQUIRE_MESSAGE(p.tensor->has_grad(), p.name);
        float magnitude = 0.0f;
        for (float g : p.tensor->grad()) magnitude = std::max(magnitude, std::abs(g));
        CHECK_MESSAGE(magnitude > 0.0f, p.name);
    }
}

TEST_CASE("input fusion reduces to the single-modal backbone when the extra channels are silenced") {
    ModelConfig multi_cfg = small_config(32, 8);
    multi_cfg.modalities = {Modality::kRgb, Modality::kDepth, Modality::kIr};
    multi_cfg.fusion = FusionMode::kInput;
    Model multi(multi_cfg, 31);
    Model single(small_config(32, 8), 77);

    auto mp = param_map(multi);
    auto sp = param_map(single);
    Tensor& multi_stem = *mp.at("backbone.stem.conv.weight");  // (8,9,3,3)
    Tensor& single_stem = *sp.at("backbone.stem.conv.weight");  // (8,3,3,3)
    REQUIRE(multi_stem.shape() == Shape{8, 9, 3, 3});
    for (int o = 0; o < 8; ++o) {
        for (int i = 0; i < 9; ++i) {
            float* slice = multi_stem.data() + (int64_t(o) * 9 + i) * 9;
            if (i < 3) {
                std::memcpy(single_stem.data() + (int64_t(o) * 3 + i) * 9, slice,
                            9 * sizeof(float));
            } else {
                std::fill(slice, slice + 9, 0.0f);
            }
        }
    }
    for (auto& [name, tensor] : sp) {
        if (name == "backbone.stem.conv.weight") continue;
        std::memcpy(tensor->data(), mp.at(name)->data(),
                    size_t(tensor->numel()) * sizeof(float));
    }

    auto rng = make_rng(20);
    Tensor rgb = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor depth = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    Tensor ir = random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    std::map<Modality, Tensor> inputs = {{Modality::kRgb, rgb},
                                         {Modality::kDepth, depth},
                                         {Modality::kIr, ir}};
    Tensor fused = multi.forward(inputs, false);
    Tensor alone = single.forward(rgb_input(rgb), false);
    CHECK(max_abs_diff(fused, alone) <= 1e-5f);
}

TEST_CASE("feature fusion runs three unshared branches") {
    ModelConfig cfg = small_config(32, 8);
    cfg.modalities = {Modality::kRgb, Modality::kDepth, Modality::kIr};
    cfg.fusion = FusionMode::kFeature;
    Model model(cfg, 41);
    auto rng = make_rng(21);
    std::map<Modality, Tensor> inputs = {
        {Modality::kRgb, random_tensor<float>({2, 3, 32, 32}, rng, 0.0f, 1.0f)},
        {Modality::kDepth, random_tensor<float>({2, 3, 32, 32}, rng, 0.0f, 1.0f)},
        {Modality::kIr, random_tensor<float>({2, 3, 32, 32}, rng, 0.0f, 1.0f)}};
    ForwardTrace trace = model.forward_traced(inputs, false);
    REQUIRE(trace.branch_levels.size() == 3);
    CHECK(trace.branch_names == std::vector<std::string>{"rgb", "depth", "ir"});
    CHECK(trace.head_input.shape() == Shape{2, 72, 4, 4});  // 3 branches x 3 levels x 8
    CHECK(trace.mask.shape() == Shape{2, 4, 4});

    // branches are unshared: the rgb branch ignores depth input and vice versa
    std::map<Modality, Tensor> perturbed = inputs;
    perturbed[Modality::kDepth] = random_tensor<float>({2, 3, 32, 32}, rng, 0.0f, 1.0f);
    ForwardTrace trace2 = model.forward_traced(perturbed, false);
    CHECK(max_abs_diff(trace.branch_levels[0].high, trace2.branch_levels[0].high) == 0.0f);
    CHECK(max_abs_diff(trace.branch_levels[1].high, trace2.branch_levels[1].high) > 0.0f);
}

TEST_CASE("fuse_scores weights per-modality scores") {
    std::map<Modality, float> scores = {{Modality::kRgb, 0.8f},
                                        {Modality::kDepth, 0.4f}};
    std::map<Modality, float> weights = {{Modality::kRgb, 0.5f},
                                         {Modality::kDepth, 0.5f}};
    CHECK(fuse_scores(scores, weights) == doctest::Approx(0.6f));

    weights = {{Modality::kRgb, 1.0f}, {Modality::kDepth, 0.0f}};
    CHECK(fuse_scores(scores, weights) == doctest::Approx(0.8f));

    weights = {{Modality::kRgb, 0.6f}, {Modality::kDepth, 0.6f}};
    CHECK_THROWS_AS(fuse_scores(scores, weights), ValueError);
    weights = {{Modality::kRgb, 0.5f}, {Modality::kIr, 0.5f}};
    CHECK_THROWS_AS(fuse_scores(scores, weights), ValueError);
}

TEST_CASE("predict_score averages the mask") {
    Tensor flat = Tensor::full({4, 4}, 0.25f);
    CHECK(predict_score(flat) == doctest::Approx(0.25f));

    auto rng = make_rng(22);
    Tensor masks = random_tensor<float>({3, 4, 4}, rng, 0.0f, 1.0f);
    std::vector<float> scores = predict_scores(masks);
    REQUIRE(scores.size() == 3);
    for (int n = 0; n < 3; ++n) {
        double acc = 0.0;
        for (int i = 0; i < 16; ++i) acc += masks.data()[n * 16 + i];
        CHECK(scores[size_t(n)] == doctest::Approx(float(acc / 16.0)));
    }
    CHECK_THROWS_AS(predict_scores(flat), ShapeError);
}

TEST_CASE("full-model gradients match finite differences") {
    ModelConfig cfg;
    cfg.input_size = 16;
    cfg.init_channels = 4;
    cfg.theta = 0.7f;
    cfg.attention = true;
    ModelD model(cfg, 51);

    auto rng = make_rng(23);
    TensorD x = random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
    x.set_requires_grad(true);
    TensorD target = random_tensor<double>({1, 2, 2}, rng, 0.0, 1.0);

    auto eval = [&]() -> TensorD {
        return overall_loss<double>(
                   model.forward({{Modality::kRgb, x}}, false), target)
            .total;
    };

    std::vector<int64_t> x_coords;
    for (int64_t i = 0; i < x.numel(); i += 61) x_coords.push_back(i);
    auto rx = grad_check_at<double>(eval, x, x_coords);
    CHECK_MESSAGE(rx.passed(1e-6), rx.max_err);

    auto params = param_map(model);
    for (const char* name :
         {"backbone.stem.conv.weight", "backbone.cells.1.expand.conv.weight",
          "backbone.cells.2.reduce.bn.gamma", "attn.mid.weight",
          "head.fuse.conv.weight", "head.out.weight", "head.out.bias"}) {
        TensorD& p = *params.at(name);
        std::vector<int64_t> coords;
        int64_t stride = std::max<int64_t>(1, p.numel() / 6);
        for (int64_t i = 0; i < p.numel(); i += stride) coords.push_back(i);
        auto r = grad_check_at<double>(eval, p, coords);
        CHECK_MESSAGE(r.passed(1e-6), name << ": " << r.max_err);
    }
}
