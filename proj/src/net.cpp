#include "bwm/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace bwm::net {

using json = nlohmann::ordered_json;

Variant variant_from_name(const std::string& name) {
    if (name == "piwm") return Variant::Piwm;
    if (name == "wm") return Variant::Wm;
    if (name == "cnn-patchtst") return Variant::CnnPatchTst;
    if (name == "piwm-ewc") return Variant::PiwmEwc;
    if (name == "lstm") return Variant::Lstm;
    throw ConfigError("unknown variant '" + name +
                      "' (valid: piwm, wm, cnn-patchtst, piwm-ewc, lstm)");
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Piwm: return "piwm";
        case Variant::Wm: return "wm";
        case Variant::CnnPatchTst: return "cnn-patchtst";
        case Variant::PiwmEwc: return "piwm-ewc";
        case Variant::Lstm: return "lstm";
    }
    return "?";
}

bool variant_has_rollout(Variant v) {
    return v == Variant::Piwm || v == Variant::Wm || v == Variant::PiwmEwc;
}
bool variant_has_trajectory(Variant v) { return v != Variant::Lstm; }
bool variant_uses_physics(Variant v) { return v == Variant::Piwm || v == Variant::PiwmEwc; }
bool variant_uses_ewc(Variant v) { return v == Variant::PiwmEwc; }
bool variant_is_batch_staged(Variant v) { return v == Variant::PiwmEwc; }

void NetConfig::validate() const {
    if (d < 1 || w < 1 || horizon < 0) throw ConfigError("net: d, W must be >= 1 and H >= 0");
    if (patch_len < 1 || patch_stride < 1) throw ConfigError("net: patch_len and patch_stride must be >= 1");
    if (patch_len > w) throw ConfigError("net: patch_len must not exceed W");
    if (d % heads != 0) throw ConfigError("net: d must be divisible by the head count");
    if (t_max < 8) throw ConfigError("net: t_max must be >= 8");
    if (layers < 1 || heads < 1 || ff_width < 1) throw ConfigError("net: transformer dims must be >= 1");
    for (auto c : conv_channels)
        if (c < 1) throw ConfigError("net: conv channels must be >= 1");
}

// --------------------------------------------------------------------------
// blocks
// --------------------------------------------------------------------------

CycleEncoderImpl::CycleEncoderImpl(const NetConfig& cfg) {
    const auto& ch = cfg.conv_channels;
    const auto& k = cfg.conv_kernels;
    conv1 = register_module("conv1", torch::nn::Conv1d(torch::nn::Conv1dOptions(3, ch[0], k[0])
                                                           .stride(cfg.conv_stride).padding(k[0] / 2)));
    conv2 = register_module("conv2", torch::nn::Conv1d(torch::nn::Conv1dOptions(ch[0], ch[1], k[1])
                                                           .stride(cfg.conv_stride).padding(k[1] / 2)));
    conv3 = register_module("conv3", torch::nn::Conv1d(torch::nn::Conv1dOptions(ch[1], ch[2], k[2])
                                                           .stride(cfg.conv_stride).padding(k[2] / 2)));
    bn1 = register_module("bn1", torch::nn::BatchNorm1d(ch[0]));
    bn2 = register_module("bn2", torch::nn::BatchNorm1d(ch[1]));
    bn3 = register_module("bn3", torch::nn::BatchNorm1d(ch[2]));
    proj = register_module("proj", torch::nn::Linear(ch[2], cfg.d));
}

torch::Tensor CycleEncoderImpl::forward(const torch::Tensor& x) {
    auto h = torch::relu(bn1(conv1(x)));
    h = torch::relu(bn2(conv2(h)));
    h = torch::relu(bn3(conv3(h)));
    // Global average pooling over all timesteps, padding included: the zero
    // fraction itself carries the discharge-duration signal.
    h = h.mean(/*dim=*/2);
    return proj(h);
}

namespace {

torch::Tensor sinusoidal_positions(int64_t n, int64_t d) {
    auto pos = torch::zeros({n, d});
    for (int64_t t = 0; t < n; ++t)
        for (int64_t i = 0; i < d; ++i) {
            const double angle = static_cast<double>(t) /
                                 std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            pos[t][i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pos;
}

} // namespace

PatchEncoderImpl::PatchEncoderImpl(const NetConfig& cfg)
    : patch_len(cfg.patch_len), patch_stride(cfg.patch_stride) {
    patch_proj = register_module("patch_proj", torch::nn::Linear(cfg.patch_len * cfg.d, cfg.d));
    auto layer = torch::nn::TransformerEncoderLayer(
        torch::nn::TransformerEncoderLayerOptions(cfg.d, cfg.heads)
            .dim_feedforward(cfg.ff_width)
            .dropout(0.0)
            .activation(torch::kReLU));
    encoder = register_module("encoder",
                              torch::nn::TransformerEncoder(torch::nn::TransformerEncoderOptions(layer, cfg.layers)));
    positions = register_buffer("positions", sinusoidal_positions(cfg.n_tokens(), cfg.d));
}

torch::Tensor PatchEncoderImpl::forward(const torch::Tensor& e) {
    if (e.dim() != 3) throw ConfigError("patch encoder expects [B, W, d]");
    if (e.size(1) < patch_len)
        throw ConfigError("patch encoder: window length " + std::to_string(e.size(1)) +
                          " is shorter than patch length " + std::to_string(patch_len));
    // [B, W, d] -> [B, n_tok, P, d] -> flattened patch tokens. Cycles past the
    // last full patch are dropped, matching the stride arithmetic.
    auto patches = e.unfold(1, patch_len, patch_stride); // [B, n_tok, d, P]
    patches = patches.permute({0, 1, 3, 2}).contiguous();
    const auto b = patches.size(0), n_tok = patches.size(1);
    auto tokens = patch_proj(patches.view({b, n_tok, patch_len * e.size(2)}));
    tokens = tokens + positions.narrow(0, 0, n_tok).to(tokens.dtype()).unsqueeze(0);
    auto encoded = encoder(tokens.transpose(0, 1)); // [S, B, d]
    return encoded.mean(/*dim=*/0);
}

DynamicsTransitionImpl::DynamicsTransitionImpl(const NetConfig& cfg) {
    fc1 = register_module("fc1", torch::nn::Linear(cfg.d + 1, cfg.transition_hidden));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.transition_hidden, cfg.d));
}

torch::Tensor DynamicsTransitionImpl::forward(const torch::Tensor& z, const torch::Tensor& u) {
    auto h = torch::relu(fc1(torch::cat({z, u.to(z.dtype())}, /*dim=*/1)));
    return z + fc2(h);
}

SohHeadImpl::SohHeadImpl(const NetConfig& cfg) {
    fc1 = register_module("fc1", torch::nn::Linear(cfg.d, cfg.head_hidden));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.head_hidden, 1));
}

torch::Tensor SohHeadImpl::forward(const torch::Tensor& z) {
    return fc2(torch::relu(fc1(z))).squeeze(-1);
}

TrajHeadImpl::TrajHeadImpl(const NetConfig& cfg) {
    fc1 = register_module("fc1", torch::nn::Linear(cfg.d, cfg.head_hidden));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.head_hidden, cfg.horizon));
}

torch::Tensor TrajHeadImpl::forward(const torch::Tensor& z) {
    return fc2(torch::relu(fc1(z)));
}

LstmBaselineImpl::LstmBaselineImpl(const NetConfig& cfg) {
    lstm = register_module("lstm", torch::nn::LSTM(torch::nn::LSTMOptions(kLstmFeatures, cfg.lstm_hidden)
                                                       .num_layers(cfg.lstm_layers)
                                                       .batch_first(true)));
    fc1 = register_module("fc1", torch::nn::Linear(cfg.lstm_hidden, cfg.head_hidden));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.head_hidden, 1));
}

torch::Tensor LstmBaselineImpl::forward(const torch::Tensor& feats) {
    auto out = std::get<0>(lstm(feats));            // [B, W, hidden]
    auto last = out.select(1, out.size(1) - 1);     // [B, hidden]
    return fc2(torch::relu(fc1(last))).squeeze(-1); // [B]
}

// --------------------------------------------------------------------------
// model
// --------------------------------------------------------------------------

ModelImpl::ModelImpl(const NetConfig& cfg, Variant v) : config(cfg), variant(v) {
    config.validate();
    if (variant == Variant::Lstm) {
        lstm = register_module("lstm_baseline", LstmBaseline(config));
        return;
    }
    cycle_encoder = register_module("cycle_encoder", CycleEncoder(config));
    patch_encoder = register_module("patch_encoder", PatchEncoder(config));
    soh_head = register_module("soh_head", SohHead(config));
    if (variant_has_rollout(variant))
        dynamics = register_module("dynamics", DynamicsTransition(config));
    else
        traj_head = register_module("traj_head", TrajHead(config));
}

torch::Tensor ModelImpl::encode(const torch::Tensor& input) {
    if (variant == Variant::Lstm)
        throw UnsupportedOperation("the LSTM control has no latent encoder");
    if (input.dim() != 4) throw ConfigError("model input must be [B, W, 3, T]");
    const auto b = input.size(0), w = input.size(1);
    if (w != config.w)
        throw ConfigError("model expects W = " + std::to_string(config.w) + ", got " + std::to_string(w));
    auto emb = cycle_encoder(input.reshape({b * w, input.size(2), input.size(3)}));
    return patch_encoder(emb.view({b, w, config.d}));
}

std::vector<torch::Tensor> ModelImpl::rollout(const torch::Tensor& z0, const torch::Tensor& u,
                                              int64_t steps) {
    if (!variant_has_rollout(variant))
        throw UnsupportedOperation(std::string(variant_name(variant)) + " has no dynamics rollout");
    std::vector<torch::Tensor> out;
    out.reserve(static_cast<size_t>(steps));
    auto z = z0;
    for (int64_t h = 0; h < steps; ++h) {
        z = dynamics(z, u);
        out.push_back(z);
    }
    return out;
}

ModelOutput ModelImpl::forward(const torch::Tensor& input, const torch::Tensor& action) {
    if (variant == Variant::Lstm)
        throw UnsupportedOperation("LSTM control consumes summary features, not raw windows");
    ModelOutput out;
    out.latent = encode(input);
    out.soh_now = soh_head(out.latent);
    if (variant_has_rollout(variant)) {
        auto states = rollout(out.latent, action, config.horizon);
        if (states.empty()) {
            out.soh_future = torch::empty({input.size(0), 0}, out.soh_now.options());
        } else {
            auto stacked = torch::stack(states, /*dim=*/1); // [B, H, d]
            out.soh_future = soh_head(stacked);             // [B, H]
        }
    } else {
        out.soh_future = traj_head(out.latent);
    }
    return out;
}

ModelOutput ModelImpl::forward_lstm_features(const torch::Tensor& feats) {
    if (variant != Variant::Lstm)
        throw UnsupportedOperation("summary-feature forward is the LSTM control's input path");
    ModelOutput out;
    out.soh_now = lstm(feats);
    return out;
}

namespace {

void fill_uniform(torch::Tensor& t, double bound, std::mt19937_64& rng) {
    auto flat = t.view({-1});
    const auto n = flat.numel();
    if (t.scalar_type() == torch::kFloat32) {
        auto* p = flat.data_ptr<float>();
        for (int64_t i = 0; i < n; ++i) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            p[i] = static_cast<float>((2.0 * u - 1.0) * bound);
        }
    } else if (t.scalar_type() == torch::kFloat64) {
        auto* p = flat.data_ptr<double>();
        for (int64_t i = 0; i < n; ++i) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            p[i] = (2.0 * u - 1.0) * bound;
        }
    } else {
        throw ConfigError("init_params: unsupported parameter dtype");
    }
}

} // namespace

void init_params(Model& model, uint64_t seed) {
    torch::NoGradGuard guard;
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    auto params = model->named_parameters();
    std::vector<std::string> names;
    for (const auto& p : params) names.push_back(p.key());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
        auto t = params[name];
        const bool is_norm = name.find(".bn") != std::string::npos || name.find("norm") != std::string::npos;
        if (is_norm) continue; // keep (1, 0) defaults for normalization layers
        if (t.dim() >= 2) {
            const double fan_in = static_cast<double>(t.numel() / t.size(0));
            fill_uniform(t, 1.0 / std::sqrt(fan_in), rng);
        } else {
            t.zero_();
        }
    }
    if (!model->dynamics.is_empty()) {
        model->dynamics->fc2->weight.zero_();
        model->dynamics->fc2->bias.zero_();
    }
}

std::vector<std::string> parameter_census(const Model& model) {
    std::vector<std::string> names;
    for (const auto& p : model->named_parameters()) names.push_back(p.key());
    std::sort(names.begin(), names.end());
    return names;
}

std::map<std::string, torch::Tensor> named_parameter_map(const Model& model) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : model->named_parameters()) out.emplace(p.key(), p.value());
    return out;
}

// --------------------------------------------------------------------------
// checkpoint container
// --------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'W', 'M', 'T'};
constexpr uint32_t kFormatVersion = 1;

json config_to_json(const NetConfig& c) {
    return json{{"d", c.d},
                {"w", c.w},
                {"horizon", c.horizon},
                {"patch_len", c.patch_len},
                {"patch_stride", c.patch_stride},
                {"layers", c.layers},
                {"heads", c.heads},
                {"ff_width", c.ff_width},
                {"t_max", c.t_max},
                {"conv_channels", c.conv_channels},
                {"conv_kernels", c.conv_kernels},
                {"conv_stride", c.conv_stride},
                {"transition_hidden", c.transition_hidden},
                {"head_hidden", c.head_hidden},
                {"lstm_hidden", c.lstm_hidden},
                {"lstm_layers", c.lstm_layers},
                {"action_scale", c.action_scale}};
}

NetConfig config_from_json(const json& j) {
    NetConfig c;
    c.d = j.at("d");
    c.w = j.at("w");
    c.horizon = j.at("horizon");
    c.patch_len = j.at("patch_len");
    c.patch_stride = j.at("patch_stride");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.ff_width = j.at("ff_width");
    c.t_max = j.at("t_max");
    c.conv_channels = j.at("conv_channels");
    c.conv_kernels = j.at("conv_kernels");
    c.conv_stride = j.at("conv_stride");
    c.transition_hidden = j.at("transition_hidden");
    c.head_hidden = j.at("head_hidden");
    c.lstm_hidden = j.at("lstm_hidden");
    c.lstm_layers = j.at("lstm_layers");
    c.action_scale = j.at("action_scale");
    return c;
}

void write_container(const std::filesystem::path& path, const std::string& kind,
                     const NetConfig& cfg, Variant variant,
                     const std::map<std::string, torch::Tensor>& tensors) {
    json header;
    header["kind"] = kind;
    header["variant"] = variant_name(variant);
    header["config"] = config_to_json(cfg);
    json entries = json::array();
    int64_t offset = 0; // in float32 units
    std::vector<torch::Tensor> payload;
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().to(torch::kFloat32).contiguous();
        json e;
        e["name"] = name;
        e["shape"] = std::vector<int64_t>(t.sizes().begin(), t.sizes().end());
        e["offset"] = offset;
        entries.push_back(e);
        offset += t.numel();
        payload.push_back(t);
    }
    header["entries"] = entries;
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, 4);
    const uint32_t ver = kFormatVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const uint32_t hlen = static_cast<uint32_t>(head.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& t : payload)
        out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                  static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!out) throw IoError("short write to " + path.string());
}

Checkpoint read_container(const std::filesystem::path& path, std::string* kind_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    uint32_t ver = 0, hlen = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a parameter container: " + path.string());
    if (ver != kFormatVersion)
        throw IoError("unsupported container version " + std::to_string(ver));
    std::string head(hlen, '\0');
    in.read(head.data(), hlen);
    if (!in) throw IoError("truncated header in " + path.string());
    json header = json::parse(head);

    Checkpoint ck;
    ck.config = config_from_json(header.at("config"));
    ck.variant = variant_from_name(header.at("variant"));
    if (kind_out) *kind_out = header.value("kind", "checkpoint");
    for (const auto& e : header.at("entries")) {
        const std::vector<int64_t> shape = e.at("shape");
        auto t = torch::empty(shape, torch::kFloat32);
        in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in) throw IoError("truncated payload in " + path.string());
        ck.tensors.emplace(e.at("name").get<std::string>(), t);
    }
    return ck;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::map<std::string, torch::Tensor> tensors;
    for (const auto& p : model->named_parameters()) tensors.emplace(p.key(), p.value());
    // Float buffers (batch-norm running statistics) ride along; integer
    // bookkeeping buffers are reconstructible and skipped.
    for (const auto& b : model->named_buffers())
        if (b.value().is_floating_point()) tensors.emplace(b.key(), b.value());
    write_container(path, "checkpoint", model->config, model->variant, tensors);
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::string kind;
    Checkpoint ck = read_container(path, &kind);
    if (kind != "checkpoint")
        throw IoError(path.string() + " holds '" + kind + "' tensors, not a checkpoint");
    Model model(ck.config, ck.variant);
    torch::NoGradGuard guard;
    auto params = model->named_parameters();
    auto buffers = model->named_buffers();
    for (const auto& p : params) {
        auto it = ck.tensors.find(p.key());
        if (it == ck.tensors.end())
            throw ConfigError("checkpoint mismatch: missing parameter '" + p.key() + "'");
        if (it->second.sizes() != p.value().sizes())
            throw ConfigError("checkpoint mismatch: parameter '" + p.key() + "' has shape " +
                              c10::str(it->second.sizes()) + ", expected " + c10::str(p.value().sizes()));
        p.value().copy_(it->second);
    }
    for (const auto& b : buffers) {
        auto it = ck.tensors.find(b.key());
        if (it == ck.tensors.end()) continue;
        if (it->second.sizes() != b.value().sizes())
            throw ConfigError("checkpoint mismatch: buffer '" + b.key() + "' has shape " +
                              c10::str(it->second.sizes()) + ", expected " + c10::str(b.value().sizes()));
        b.value().copy_(it->second);
    }
    model->eval();
    return model;
}

void save_named_tensors(const std::filesystem::path& path, const std::string& kind,
                        const NetConfig& cfg, Variant variant,
                        const std::map<std::string, torch::Tensor>& tensors) {
    write_container(path, kind, cfg, variant, tensors);
}

Checkpoint load_named_tensors(const std::filesystem::path& path, std::string* kind_out) {
    return read_container(path, kind_out);
}

} // namespace bwm::net
