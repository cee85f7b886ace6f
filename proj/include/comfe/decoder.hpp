#pragma once

// Transformer-decoder clustering head: queries attend to each other, then to
// the (normalized, sqrt(d)-scaled) patch tokens, then pass through a feed-forward block, each branch
// pre-normalized and added back to the residual stream. The residual stream
// after every layer is one set of image prototypes.
//
// Parameter containers are templated on the field type so one layout serves
// storage (Tensor<float>), tape bindings (Var<T>) and anything else that
// needs to walk the parameters in a fixed order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "comfe/errors.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

struct DecoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 8;
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    double dropout = 0.0;

    void validate() const {
        if (layers < 1) throw ConfigError("decoder needs at least one layer");
        if (heads < 1 || d_model % heads != 0) {
            throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        }
        if (d_ff < 1) throw ConfigError("d_ff must be positive");
    }
};

// What a parameter is, for weight-decay and initialization decisions.
enum class ParamRole { weight, bias, norm_gain, norm_bias, query, class_prototype };

template <typename P>
struct AttentionParams {
    P wq, bq, wk, bk, wv, bv, wo, bo;

    template <typename Self, typename F>
    static void visit(Self &self, const std::string &prefix, F &&f) {
        f(prefix + ".wq", self.wq, ParamRole::weight);
        f(prefix + ".bq", self.bq, ParamRole::bias);
        f(prefix + ".wk", self.wk, ParamRole::weight);
        f(prefix + ".bk", self.bk, ParamRole::bias);
        f(prefix + ".wv", self.wv, ParamRole::weight);
        f(prefix + ".bv", self.bv, ParamRole::bias);
        f(prefix + ".wo", self.wo, ParamRole::weight);
        f(prefix + ".bo", self.bo, ParamRole::bias);
    }
};

template <typename P>
struct DecoderLayerParams {
    P ln1_gain, ln1_bias;
    AttentionParams<P> self_attn;
    P ln2_gain, ln2_bias;
    AttentionParams<P> cross_attn;
    P ln3_gain, ln3_bias;
    P ff_w1, ff_b1, ff_w2, ff_b2;

    template <typename Self, typename F>
    static void visit(Self &self, const std::string &prefix, F &&f) {
        f(prefix + ".ln1.gain", self.ln1_gain, ParamRole::norm_gain);
        f(prefix + ".ln1.bias", self.ln1_bias, ParamRole::norm_bias);
        AttentionParams<P>::visit(self.self_attn, prefix + ".self_attn", f);
        f(prefix + ".ln2.gain", self.ln2_gain, ParamRole::norm_gain);
        f(prefix + ".ln2.bias", self.ln2_bias, ParamRole::norm_bias);
        AttentionParams<P>::visit(self.cross_attn, prefix + ".cross_attn", f);
        f(prefix + ".ln3.gain", self.ln3_gain, ParamRole::norm_gain);
        f(prefix + ".ln3.bias", self.ln3_bias, ParamRole::norm_bias);
        f(prefix + ".ff.w1", self.ff_w1, ParamRole::weight);
        f(prefix + ".ff.b1", self.ff_b1, ParamRole::bias);
        f(prefix + ".ff.w2", self.ff_w2, ParamRole::weight);
        f(prefix + ".ff.b2", self.ff_b2, ParamRole::bias);
    }
};

template <typename P>
struct DecoderParams {
    std::vector<DecoderLayerParams<P>> layers;

    template <typename Self, typename F>
    static void visit(Self &self, F &&f) {
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            DecoderLayerParams<P>::visit(self.layers[l], "decoder.layer" + std::to_string(l), f);
        }
    }
};

// Expected storage shape of each decoder parameter.
inline Shape decoder_param_shape(const DecoderConfig &cfg, const std::string &name, ParamRole role) {
    const std::size_t d = cfg.d_model;
    const bool ff1 = name.ends_with("ff.w1") || name.ends_with("ff.b1");
    const bool ff2 = name.ends_with("ff.w2");
    switch (role) {
        case ParamRole::weight:
            if (ff1) return {d, cfg.d_ff};
            if (ff2) return {cfg.d_ff, d};
            return {d, d};
        case ParamRole::bias:
            return {1, ff1 ? cfg.d_ff : d};
        default:
            return {1, d};
    }
}

// Xavier-normal projections, zero biases, unit gains.
inline DecoderParams<Tensor<float>> init_decoder(const DecoderConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    DecoderParams<Tensor<float>> params;
    params.layers.resize(cfg.layers);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    DecoderParams<Tensor<float>>::visit(params, [&](const std::string &name, Tensor<float> &t, ParamRole role) {
        const Shape shape = decoder_param_shape(cfg, name, role);
        switch (role) {
            case ParamRole::weight: {
                t = Tensor<float>(shape);
                const double stddev = std::sqrt(2.0 / double(shape[0] + shape[1]));
                for (auto &x : t.data()) x = float(stddev * normal(rng));
                break;
            }
            case ParamRole::norm_gain:
                t = Tensor<float>(shape, 1.0f);
                break;
            default:
                t = Tensor<float>(shape, 0.0f);
                break;
        }
    });
    return params;
}

// Multi-head scaled dot-product attention with input and output projections.
//   out = concat_h softmax(q_h k_hᵀ / sqrt(d/heads)) v_h · Wo + bo
template <typename T>
Var<T> attention(const Var<T> &query_src, const Var<T> &key_src, const Var<T> &value_src,
                 const AttentionParams<Var<T>> &w, std::size_t heads) {
    const std::size_t d = query_src.cols();
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (key_src.rows() != value_src.rows()) {
        throw DimensionError("attention: " + std::to_string(key_src.rows()) + " keys but " +
                             std::to_string(value_src.rows()) + " values");
    }
    const std::size_t dh = d / heads;
    const T temperature = std::sqrt(T(dh));
    auto q = add(matmul(query_src, w.wq), w.bq);
    auto k = add(matmul(key_src, w.wk), w.bk);
    auto v = add(matmul(value_src, w.wv), w.bv);
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
        auto kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
        auto vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
        auto weights = softmax(matmul_nt(qh, kh), 1, temperature);
        outs.push_back(matmul(weights, vh));
    }
    auto merged = heads == 1 ? outs.front() : concat_cols(outs);
    return add(matmul(merged, w.wo), w.bo);
}

template <typename T>
void require_finite_layer(const Var<T> &x, std::size_t layer) {
    for (auto v : x.value().data()) {
        if (!std::isfinite(v)) {
            throw NumericError("decoder layer " + std::to_string(layer) + " produced non-finite activations");
        }
    }
}

// Runs every decoder layer and returns the running query state after each.
// `dropout_rng` may be null, which disables dropout.
template <typename T>
std::vector<Var<T>> decoder_forward(const Var<T> &patches, const Var<T> &queries,
                                    const DecoderParams<Var<T>> &params, const DecoderConfig &cfg,
                                    std::mt19937_64 *dropout_rng = nullptr) {
    cfg.validate();
    if (patches.value().rank() != 2 || patches.cols() != cfg.d_model) {
        throw DimensionError("decoder expects patches of width " + std::to_string(cfg.d_model) + ", got " +
                             shape_str(patches.shape()));
    }
    if (queries.value().rank() != 2 || queries.cols() != cfg.d_model) {
        throw DimensionError("decoder expects queries of width " + std::to_string(cfg.d_model) + ", got " +
                             shape_str(queries.shape()));
    }
    if (params.layers.size() != cfg.layers) {
        throw DimensionError("decoder has " + std::to_string(params.layers.size()) + " parameter layers, config says " +
                             std::to_string(cfg.layers));
    }
    auto drop = [&](const Var<T> &x) {
        return dropout_rng && cfg.dropout > 0 ? dropout(x, cfg.dropout, *dropout_rng) : x;
    };

    std::vector<Var<T>> outputs;
    outputs.reserve(cfg.layers);
    Var<T> x = queries;
    // Unit-norm patch tokens scaled by sqrt(d) have unit per-coordinate RMS,
    // the same scale as the standard-normal queries.
    const Var<T> memory = affine(patches, std::sqrt(T(cfg.d_model)));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto &p = params.layers[l];
        auto h = layer_norm(x, p.ln1_gain, p.ln1_bias);
        x = add(x, drop(attention(h, h, h, p.self_attn, cfg.heads)));

        h = layer_norm(x, p.ln2_gain, p.ln2_bias);
        x = add(x, drop(attention(h, memory, memory, p.cross_attn, cfg.heads)));

        h = layer_norm(x, p.ln3_gain, p.ln3_bias);
        auto ff = add(matmul(gelu(add(matmul(h, p.ff_w1), p.ff_b1)), p.ff_w2), p.ff_b2);
        x = add(x, drop(ff));

        require_finite_layer(x, l);
        outputs.push_back(x);
    }
    return outputs;
}

}  // namespace comfe
