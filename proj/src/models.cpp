#include "sliceterp/models.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "sliceterp/rng.hpp"

namespace sliceterp {

ModelConfig default_config(const std::string& arch, const std::string& scale) {
    if (scale != "paper" && scale != "desk")
        throw std::invalid_argument("default_config: scale must be 'paper' or 'desk'");
    bool desk = scale == "desk";
    ModelConfig c;
    c.architecture = arch;
    c.base_channels = desk ? 16 : 64;
    if (arch == "edsr" || arch == "gan_basic") {
        c.n_res_blocks = 8;
    } else if (arch == "gan_improved") {
        c.n_res_blocks = 16;
    } else if (arch == "unet") {
        c.n_res_blocks = 0;
    } else if (arch == "ddpm_unet") {
        c.n_res_blocks = 0;
        c.base_channels = desk ? 16 : 192;
        c.input_channels = 3;  // noisy target + two conditioning slices
    } else if (arch == "disc_basic" || arch == "disc_improved") {
        c.input_channels = 1;  // candidate slice only
    } else {
        throw std::invalid_argument("default_config: unknown architecture '" + arch + "'");
    }
    return c;
}

std::vector<double> sinusoidal_time_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_time_embedding: dim must be positive and even");
    int half = dim / 2;
    std::vector<double> emb(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        emb[static_cast<size_t>(i)] = std::sin(t * freq);
        emb[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    return emb;
}

namespace {

template <typename T>
struct LayerFactory {
    Rng rng;
    std::vector<std::pair<std::string, TensorT<T>>>* registry;

    Conv2dLayer<T> conv(const std::string& name, int cin, int cout, int k, int stride,
                        int padding) {
        Conv2dLayer<T> l;
        l.w = TensorT<T>::param_uniform({cout, cin, k, k}, cin * k * k, rng);
        l.b = TensorT<T>::zeros({cout}, true);
        l.stride = stride;
        l.padding = padding;
        registry->emplace_back(name + ".weight", l.w);
        registry->emplace_back(name + ".bias", l.b);
        return l;
    }

    ConvT2dLayer<T> convt(const std::string& name, int cin, int cout, int k, int stride) {
        ConvT2dLayer<T> l;
        l.w = TensorT<T>::param_uniform({cin, cout, k, k}, cin * k * k, rng);
        l.b = TensorT<T>::zeros({cout}, true);
        l.stride = stride;
        registry->emplace_back(name + ".weight", l.w);
        registry->emplace_back(name + ".bias", l.b);
        return l;
    }

    LinearLayer<T> linear(const std::string& name, int fin, int fout) {
        LinearLayer<T> l;
        l.w = TensorT<T>::param_uniform({fout, fin}, fin, rng);
        l.b = TensorT<T>::zeros({fout}, true);
        registry->emplace_back(name + ".weight", l.w);
        registry->emplace_back(name + ".bias", l.b);
        return l;
    }

    BatchNormLayer<T> batchnorm(const std::string& name, int c) {
        BatchNormLayer<T> l;
        l.gamma = TensorT<T>::filled({c}, T(1), true);
        l.beta = TensorT<T>::zeros({c}, true);
        l.running_mean.assign(static_cast<size_t>(c), T(0));
        l.running_var.assign(static_cast<size_t>(c), T(1));
        registry->emplace_back(name + ".gamma", l.gamma);
        registry->emplace_back(name + ".beta", l.beta);
        return l;
    }

    AttentionLayer<T> attention(const std::string& name, int c, int reduction) {
        AttentionLayer<T> l;
        l.reduction = reduction;
        int cr = c / reduction;
        l.q = conv(name + ".query", c, cr, 1, 1, 0);
        l.k = conv(name + ".key", c, cr, 1, 1, 0);
        l.v = conv(name + ".value", c, c, 1, 1, 0);
        l.gamma = TensorT<T>::zeros({1}, true);  // residual gate starts closed
        registry->emplace_back(name + ".gamma", l.gamma);
        return l;
    }
};

template <typename T>
typename DdpmNet<T>::ResBlock make_resblock(LayerFactory<T>& f, const std::string& name,
                                            int cin, int cout, int time_dim) {
    typename DdpmNet<T>::ResBlock rb;
    rb.conv1 = f.conv(name + ".conv1", cin, cout, 3, 1, 1);
    rb.tproj1 = f.linear(name + ".tproj1", time_dim, cout);
    rb.tproj2 = f.linear(name + ".tproj2", cout, cout);
    rb.conv2 = f.conv(name + ".conv2", cout, cout, 3, 1, 1);
    if (cin != cout) {
        rb.has_skip = true;
        rb.skip = f.conv(name + ".skip", cin, cout, 1, 1, 0);
    }
    return rb;
}

}  // namespace

template <typename T>
ModelT<T> build_model(const ModelConfig& config, uint64_t seed) {
    ModelT<T> m;
    m.config = config;
    LayerFactory<T> f{Rng(derive_seed(seed, "init:" + config.architecture)), &m.registry};
    const std::string& arch = config.architecture;
    int C = config.base_channels;

    if (arch == "edsr" || arch == "gan_basic" || arch == "gan_improved") {
        EdsrNet<T> net;
        net.entry = f.conv("entry", config.input_channels, C, 3, 1, 1);
        net.convs_per_block = config.res_block_convs;
        for (int i = 0; i < config.n_res_blocks; ++i)
            for (int j = 0; j < config.res_block_convs; ++j)
                net.block_convs.push_back(f.conv(
                    "block" + std::to_string(i) + ".conv" + std::to_string(j), C, C, 3, 1, 1));
        if (arch == "gan_improved") {
            net.has_attention = true;
            net.attention = f.attention("attention", C, 8);
            net.has_pre_exit = true;
            net.pre_exit = f.conv("pre_exit", C, C, 3, 1, 1);
        }
        net.exit = f.conv("exit", C, config.output_channels, 3, 1, 1);
        m.net = std::move(net);
    } else if (arch == "unet") {
        UnetNet<T> net;
        net.enc1a = f.conv("encoder.l1.conv1", config.input_channels, C, 3, 1, 1);
        net.enc1b = f.conv("encoder.l1.conv2", C, C, 3, 1, 1);
        net.enc2a = f.conv("encoder.l2.conv1", C, 2 * C, 3, 1, 1);
        net.enc2b = f.conv("encoder.l2.conv2", 2 * C, 2 * C, 3, 1, 1);
        net.bot_a = f.conv("bottleneck.conv1", 2 * C, 4 * C, 3, 1, 1);
        net.bot_b = f.conv("bottleneck.conv2", 4 * C, 4 * C, 3, 1, 1);
        net.up2 = f.convt("decoder.up2", 4 * C, 2 * C, 2, 2);
        net.dec2a = f.conv("decoder.l2.conv1", 4 * C, 2 * C, 3, 1, 1);
        net.dec2b = f.conv("decoder.l2.conv2", 2 * C, 2 * C, 3, 1, 1);
        net.up1 = f.convt("decoder.up1", 2 * C, C, 2, 2);
        net.dec1a = f.conv("decoder.l1.conv1", 2 * C, C, 3, 1, 1);
        net.dec1b = f.conv("decoder.l1.conv2", C, C, 3, 1, 1);
        net.final_conv = f.conv("final.conv", C, config.output_channels, 1, 1, 0);
        m.net = std::move(net);
    } else if (arch == "disc_basic" || arch == "disc_improved") {
        DiscNet<T> net;
        std::vector<int> widths = {C, 2 * C, 4 * C};
        if (arch == "disc_improved") widths.push_back(8 * C);
        int cin = config.input_channels;
        for (size_t i = 0; i < widths.size(); ++i) {
            typename DiscNet<T>::Stage st;
            std::string name = "stage" + std::to_string(i + 1);
            st.conv = f.conv(name + ".conv", cin, widths[i], 4, 2, 1);
            if (arch == "disc_improved" && i > 0) {
                st.has_bn = true;
                st.bn = f.batchnorm(name + ".bn", widths[i]);
            }
            net.stages.push_back(std::move(st));
            cin = widths[i];
        }
        net.final_conv = f.conv("final.conv", cin, 1, 4, 1, 1);
        m.net = std::move(net);
    } else if (arch == "ddpm_unet") {
        DdpmNet<T> net;
        int td = config.time_embed_dim;
        net.entry = f.conv("entry", config.input_channels, C, 3, 1, 1);
        net.rb1 = make_resblock(f, "rb1", C, C, td);
        net.rb2 = make_resblock(f, "rb2", C, 2 * C, td);
        net.rb_bot = make_resblock(f, "bottleneck", 2 * C, 4 * C, td);
        net.attention = f.attention("attention", 4 * C, 8);
        net.up2 = f.convt("decoder.up2", 4 * C, 2 * C, 2, 2);
        net.rb_dec2 = make_resblock(f, "decoder.rb2", 4 * C, 2 * C, td);
        net.up1 = f.convt("decoder.up1", 2 * C, C, 2, 2);
        net.rb_dec1 = make_resblock(f, "decoder.rb1", 2 * C, C, td);
        net.exit = f.conv("exit", C, config.output_channels, 3, 1, 1);
        m.net = std::move(net);
    } else {
        throw std::invalid_argument("build_model: unknown architecture '" + arch + "'");
    }
    return m;
}

template <typename T>
TensorT<T> ModelT<T>::forward(const TensorT<T>& x) {
    if (auto* net = std::get_if<EdsrNet<T>>(&this->net)) {
        auto h0 = net->entry(x);
        auto h = h0;
        for (size_t i = 0; i < net->block_convs.size(); i += static_cast<size_t>(net->convs_per_block)) {
            if (net->convs_per_block == 1) {
                h = relu(net->block_convs[i](h));
            } else {
                auto t = net->block_convs[i + 1](relu(net->block_convs[i](h)));
                h = add(h, t);
            }
        }
        if (net->has_attention) h = net->attention(h);
        h = add(h, h0);  // entry-feature skip around the block stack
        if (net->has_pre_exit) h = net->pre_exit(h);
        return net->exit(h);
    }
    if (auto* net = std::get_if<UnetNet<T>>(&this->net)) {
        if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
            throw std::invalid_argument("unet forward: extents must be divisible by 4, got " +
                                        shape_str(x.shape()));
        auto e1 = relu(net->enc1b(relu(net->enc1a(x))));
        auto e2 = relu(net->enc2b(relu(net->enc2a(maxpool2d(e1)))));
        auto b = relu(net->bot_b(relu(net->bot_a(maxpool2d(e2)))));
        auto d2 = relu(net->dec2b(relu(net->dec2a(channel_concat(net->up2(b), e2)))));
        auto d1 = relu(net->dec1b(relu(net->dec1a(channel_concat(net->up1(d2), e1)))));
        return net->final_conv(d1);
    }
    if (auto* net = std::get_if<DiscNet<T>>(&this->net)) {
        if (x.dim(2) < 16 || x.dim(3) < 16)
            throw std::invalid_argument("discriminator forward: extents must be >= 16");
        auto h = x;
        BnMode mode = train_mode ? BnMode::Train : BnMode::Eval;
        for (auto& st : net->stages) {
            h = st.conv(h);
            if (st.has_bn) h = st.bn(h, mode);
            h = leaky_relu(h, 0.2);
        }
        return net->final_conv(h);
    }
    throw std::invalid_argument("forward(x): model '" + arch() + "' needs timesteps");
}

template <typename T>
TensorT<T> ModelT<T>::forward(const TensorT<T>& x, const std::vector<int>& timesteps) {
    auto* net = std::get_if<DdpmNet<T>>(&this->net);
    if (!net) throw std::invalid_argument("forward(x,t): model '" + arch() + "' is not a ddpm");
    int B = x.dim(0);
    if (static_cast<int>(timesteps.size()) != B)
        throw ShapeError("ddpm forward: need one timestep per batch item");
    if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
        throw std::invalid_argument("ddpm forward: extents must be divisible by 4");

    int td = config.time_embed_dim;
    auto temb = TensorT<T>::zeros({B, td});
    for (int i = 0; i < B; ++i) {
        auto e = sinusoidal_time_embedding(timesteps[static_cast<size_t>(i)], td);
        for (int j = 0; j < td; ++j)
            temb.values_mut()[static_cast<size_t>(i) * td + j] = static_cast<T>(e[static_cast<size_t>(j)]);
    }

    auto res = [&](typename DdpmNet<T>::ResBlock& rb, const TensorT<T>& in) {
        auto h = relu(rb.conv1(in));
        auto tb = rb.tproj2(relu(rb.tproj1(temb)));
        h = relu(rb.conv2(add_channel_bias(h, tb)));
        return add(h, rb.has_skip ? rb.skip(in) : in);
    };

    auto h = net->entry(x);
    auto a1 = res(net->rb1, h);
    auto a2 = res(net->rb2, maxpool2d(a1));
    auto bt = net->attention(res(net->rb_bot, maxpool2d(a2)));
    auto d2 = res(net->rb_dec2, channel_concat(net->up2(bt), a2));
    auto d1 = res(net->rb_dec1, channel_concat(net->up1(d2), a1));
    return net->exit(d1);
}

template <typename T>
std::vector<TensorT<T>> ModelT<T>::forward_features(const TensorT<T>& x) {
    auto* net = std::get_if<DiscNet<T>>(&this->net);
    if (!net)
        throw std::invalid_argument("forward_features: model '" + arch() +
                                    "' is not a discriminator");
    std::vector<TensorT<T>> feats;
    auto h = x;
    BnMode mode = train_mode ? BnMode::Train : BnMode::Eval;
    for (auto& st : net->stages) {
        h = st.conv(h);
        if (st.has_bn) h = st.bn(h, mode);
        h = leaky_relu(h, 0.2);
        feats.push_back(h);
    }
    return feats;
}

template <typename T>
void ModelT<T>::visit_buffers(
    const std::function<void(const std::string&, std::vector<T>&)>& fn) {
    if (auto* net = std::get_if<DiscNet<T>>(&this->net)) {
        for (size_t i = 0; i < net->stages.size(); ++i) {
            if (!net->stages[i].has_bn) continue;
            std::string name = "stage" + std::to_string(i + 1) + ".bn";
            fn(name + ".running_mean", net->stages[i].bn.running_mean);
            fn(name + ".running_var", net->stages[i].bn.running_var);
        }
    }
}

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["architecture"] = c.architecture;
    j["base_channels"] = c.base_channels;
    j["n_res_blocks"] = c.n_res_blocks;
    j["res_block_convs"] = c.res_block_convs;
    j["levels"] = c.levels;
    j["time_embed_dim"] = c.time_embed_dim;
    j["input_channels"] = c.input_channels;
    j["output_channels"] = c.output_channels;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.architecture = j.at("architecture").get<std::string>();
    c.base_channels = j.at("base_channels").get<int>();
    c.n_res_blocks = j.at("n_res_blocks").get<int>();
    c.res_block_convs = j.at("res_block_convs").get<int>();
    c.levels = j.at("levels").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.output_channels = j.at("output_channels").get<int>();
    return c;
}

constexpr const char* kCkptMagic = "SMDL1 ";

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
    int n_buffers = 0;
    model.visit_buffers([&](const std::string&, std::vector<float>&) { ++n_buffers; });

    nlohmann::ordered_json hdr;
    hdr["arch"] = model.config.architecture;
    hdr["config"] = config_to_json(model.config);
    hdr["n_params"] = model.registry.size();
    hdr["n_buffers"] = n_buffers;

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("save_checkpoint: cannot open '" + tmp + "'");
        f << kCkptMagic << hdr.dump() << "\n";
        for (const auto& [name, p] : model.registry) {
            nlohmann::ordered_json rec;
            rec["name"] = name;
            rec["shape"] = p.shape();
            f << "PRM " << rec.dump() << "\n";
            f.write(reinterpret_cast<const char*>(p.values().data()),
                    static_cast<std::streamsize>(p.values().size() * sizeof(float)));
        }
        model.visit_buffers([&](const std::string& name, std::vector<float>& buf) {
            nlohmann::ordered_json rec;
            rec["name"] = name;
            rec["size"] = buf.size();
            f << "BUF " << rec.dump() << "\n";
            f.write(reinterpret_cast<const char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
        });
        if (!f) throw CheckpointError("save_checkpoint: write failed on '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("load_checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line.rfind(kCkptMagic, 0) != 0)
        throw CheckpointError("load_checkpoint: '" + path + "' is not an SMDL1 checkpoint");

    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(line.substr(6));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_checkpoint: malformed header: " + std::string(e.what()));
    }

    Model model;
    try {
        model = build_model<float>(config_from_json(hdr.at("config")), 0);
    } catch (const std::exception& e) {
        throw CheckpointError("load_checkpoint: cannot rebuild model: " + std::string(e.what()));
    }
    if (hdr.at("arch").get<std::string>() != model.config.architecture)
        throw CheckpointError("load_checkpoint: arch tag does not match config");
    size_t n_params = hdr.at("n_params").get<size_t>();
    if (n_params != model.registry.size())
        throw CheckpointError("load_checkpoint: parameter count mismatch, file has " +
                              std::to_string(n_params) + ", model has " +
                              std::to_string(model.registry.size()));

    for (size_t i = 0; i < n_params; ++i) {
        if (!std::getline(f, line) || line.rfind("PRM ", 0) != 0)
            throw CheckpointError("load_checkpoint: missing parameter record " +
                                  std::to_string(i));
        auto rec = nlohmann::json::parse(line.substr(4));
        std::string name = rec.at("name").get<std::string>();
        auto shape = rec.at("shape").get<std::vector<int>>();
        auto& [rname, tensor] = model.registry[i];
        if (rname != name)
            throw CheckpointError("load_checkpoint: parameter '" + name +
                                  "' does not match model parameter '" + rname + "'");
        if (tensor.shape() != shape)
            throw CheckpointError("load_checkpoint: shape mismatch for '" + name + "'");
        f.read(reinterpret_cast<char*>(tensor.values_mut().data()),
               static_cast<std::streamsize>(tensor.values_mut().size() * sizeof(float)));
        if (!f) throw CheckpointError("load_checkpoint: short read in '" + name + "'");
    }
    size_t n_buffers = hdr.at("n_buffers").get<size_t>(), seen = 0;
    model.visit_buffers([&](const std::string& name, std::vector<float>& buf) {
        if (!std::getline(f, line) || line.rfind("BUF ", 0) != 0)
            throw CheckpointError("load_checkpoint: missing buffer record for '" + name + "'");
        auto rec = nlohmann::json::parse(line.substr(4));
        if (rec.at("name").get<std::string>() != name ||
            rec.at("size").get<size_t>() != buf.size())
            throw CheckpointError("load_checkpoint: buffer mismatch for '" + name + "'");
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw CheckpointError("load_checkpoint: short read in buffer '" + name + "'");
        ++seen;
    });
    if (seen != n_buffers)
        throw CheckpointError("load_checkpoint: buffer count mismatch");
    return model;
}

template class ModelT<float>;
template class ModelT<double>;
template ModelT<float> build_model<float>(const ModelConfig&, uint64_t);
template ModelT<double> build_model<double>(const ModelConfig&, uint64_t);

}  // namespace sliceterp
