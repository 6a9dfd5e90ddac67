#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bwm/types.hpp"

namespace bwm::net {

enum class Variant { Piwm, Wm, CnnPatchTst, PiwmEwc, Lstm };

Variant variant_from_name(const std::string& name); // throws ConfigError listing valid names
const char* variant_name(Variant v);

// Rollout variants share the encoder/dynamics/head stack; the direct variant
// swaps the dynamics for a one-shot trajectory head; the LSTM control has
// neither and cannot emit a trajectory.
bool variant_has_rollout(Variant v);
bool variant_has_trajectory(Variant v);
bool variant_uses_physics(Variant v);
bool variant_uses_ewc(Variant v);
bool variant_is_batch_staged(Variant v);

struct NetConfig {
    int64_t d = 64;
    int64_t w = 30;
    int64_t horizon = 80;
    int64_t patch_len = 6;
    int64_t patch_stride = 3;
    int64_t layers = 3;
    int64_t heads = 4;
    int64_t ff_width = 256;
    int64_t t_max = 1000;
    std::array<int64_t, 3> conv_channels{32, 64, 128};
    std::array<int64_t, 3> conv_kernels{7, 5, 3};
    int64_t conv_stride = 2;
    int64_t transition_hidden = 128;
    int64_t head_hidden = 64;
    int64_t lstm_hidden = 64;
    int64_t lstm_layers = 2;
    double action_scale = 6.0; // nominal max charge current, A

    int64_t n_tokens() const { return (w - patch_len) / patch_stride + 1; }
    void validate() const;
};

inline constexpr int kLstmFeatures = 6; // meanV, minV, maxV, meanI, meanT, duration fraction

// Shared 1-D conv stack over one cycle's raw channels, pooled over time and
// projected to the d-dimensional cycle embedding.
struct CycleEncoderImpl : torch::nn::Module {
    explicit CycleEncoderImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x); // [B, 3, T] -> [B, d]
    torch::nn::Conv1d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    torch::nn::BatchNorm1d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(CycleEncoder);

// Patch projection + sinusoidal positions + transformer encoder, pooled over
// tokens into the latent degradation state z(k).
struct PatchEncoderImpl : torch::nn::Module {
    explicit PatchEncoderImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& e); // [B, W, d] -> [B, d]
    int64_t patch_len, patch_stride;
    torch::nn::Linear patch_proj{nullptr};
    torch::nn::TransformerEncoder encoder{nullptr};
    torch::Tensor positions; // buffer [n_tokens, d]
};
TORCH_MODULE(PatchEncoder);

// z(k+1) = z(k) + MLP([z(k) || u(k)])
struct DynamicsTransitionImpl : torch::nn::Module {
    explicit DynamicsTransitionImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& u); // [B,d],[B,1] -> [B,d]
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(DynamicsTransition);

struct SohHeadImpl : torch::nn::Module {
    explicit SohHeadImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& z); // [..., d] -> [...]
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(SohHead);

// Direct regression head: the whole future trajectory in a single pass.
struct TrajHeadImpl : torch::nn::Module {
    explicit TrajHeadImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& z); // [B, d] -> [B, H]
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TrajHead);

struct LstmBaselineImpl : torch::nn::Module {
    explicit LstmBaselineImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& feats); // [B, W, F] -> [B]
    torch::nn::LSTM lstm{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(LstmBaseline);

struct ModelOutput {
    torch::Tensor soh_now;    // [B]
    torch::Tensor soh_future; // [B, H] (undefined for the LSTM control)
    torch::Tensor latent;     // [B, d]  (undefined for the LSTM control)
};

// One variant's full parameter set behind a single module, addressable by
// stable dotted parameter paths.
struct ModelImpl : torch::nn::Module {
    ModelImpl(const NetConfig& cfg, Variant variant);

    // input [B, W, 3, T], action [B, 1]
    ModelOutput forward(const torch::Tensor& input, const torch::Tensor& action);
    ModelOutput forward_lstm_features(const torch::Tensor& feats); // [B, W, F]

    torch::Tensor encode(const torch::Tensor& input);                       // -> z [B, d]
    std::vector<torch::Tensor> rollout(const torch::Tensor& z0, const torch::Tensor& u, int64_t steps);

    NetConfig config;
    Variant variant;
    CycleEncoder cycle_encoder{nullptr};
    PatchEncoder patch_encoder{nullptr};
    SohHead soh_head{nullptr};
    DynamicsTransition dynamics{nullptr};
    TrajHead traj_head{nullptr};
    LstmBaseline lstm{nullptr};
};
TORCH_MODULE(Model);

// Uniform fan-in init for every weight matrix/kernel, zero biases; the
// dynamics output layer starts at zero so the rollout begins as identity.
void init_params(Model& model, uint64_t seed);

// Sorted parameter paths (the census).
std::vector<std::string> parameter_census(const Model& model);

std::map<std::string, torch::Tensor> named_parameter_map(const Model& model);

// --- checkpoint / path-keyed tensor container ---------------------------- //

struct Checkpoint {
    NetConfig config;
    Variant variant = Variant::Wm;
    std::map<std::string, torch::Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

// Generic path-keyed float32 container (same layout as checkpoints); used
// for Fisher diagonals and anchors.
void save_named_tensors(const std::filesystem::path& path, const std::string& kind,
                        const NetConfig& cfg, Variant variant,
                        const std::map<std::string, torch::Tensor>& tensors);
Checkpoint load_named_tensors(const std::filesystem::path& path, std::string* kind_out = nullptr);

} // namespace bwm::net
