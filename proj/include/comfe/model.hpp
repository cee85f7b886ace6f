#pragma once

// The full learnable head: decoder parameters, query matrix and class
// prototypes, plus the fixed association matrix.

#include <cstddef>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "comfe/config.hpp"
#include "comfe/decoder.hpp"
#include "comfe/errors.hpp"
#include "comfe/prototypes.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

template <typename P>
struct HeadParams {
    DecoderParams<P> decoder;
    P queries;           // N_P × d
    P class_prototypes;  // (N_C + N_N) × d

    // Visits every learnable parameter in checkpoint order.
    template <typename Self, typename F>
    static void visit(Self &self, F &&f) {
        DecoderParams<P>::visit(self.decoder, f);
        f(std::string("queries"), self.queries, ParamRole::query);
        f(std::string("class_prototypes"), self.class_prototypes, ParamRole::class_prototype);
    }

    template <typename F>
    void for_each(F &&f) { visit(*this, f); }
    template <typename F>
    void for_each(F &&f) const { visit(*this, f); }
};

// Only decoder projection matrices are decayed.
inline bool decays(ParamRole role) { return role == ParamRole::weight; }

struct NamedParam {
    std::string name;
    ParamRole role;
};

template <typename P>
std::vector<NamedParam> param_names(const HeadParams<P> &params) {
    std::vector<NamedParam> out;
    params.for_each([&](const std::string &name, const P &, ParamRole role) { out.push_back({name, role}); });
    return out;
}

// Builds a HeadParams<Q> with the same layout, mapping each field through fn.
template <typename Q, typename P, typename Fn>
HeadParams<Q> map_params(const HeadParams<P> &src, Fn &&fn) {
    std::vector<const P *> fields;
    src.for_each([&](const std::string &, const P &p, ParamRole) { fields.push_back(&p); });
    HeadParams<Q> out;
    out.decoder.layers.resize(src.decoder.layers.size());
    std::size_t i = 0;
    out.for_each([&](const std::string &name, Q &q, ParamRole role) { q = fn(name, *fields[i++], role); });
    return out;
}

inline DecoderConfig decoder_config(const ModelConfig &cfg) {
    DecoderConfig d;
    d.layers = cfg.layers;
    d.heads = cfg.heads;
    d.d_model = cfg.dim;
    d.d_ff = cfg.resolved_d_ff();
    d.dropout = cfg.dropout;
    return d;
}

struct ComfeModel {
    ModelConfig config;
    AssociationLayout layout;
    Tensor<double> phi;
    HeadParams<Tensor<float>> params;

    std::size_t label_count() const { return layout.label_count(); }

    // Seeds are derived from one master seed so that each part is
    // reproducible on its own.
    static ComfeModel init(const ModelConfig &cfg, std::uint64_t seed) {
        cfg.validate();
        ComfeModel m;
        m.config = cfg;
        m.layout = cfg.layout();
        auto bank = ClassPrototypeBank::create(m.layout, cfg.dim, seed * 4 + 1);
        m.phi = std::move(bank.phi);
        m.params.decoder = init_decoder(decoder_config(cfg), seed * 4 + 2);
        m.params.queries = init_queries(cfg.n_prototypes, cfg.dim, seed * 4 + 3);
        m.params.class_prototypes = std::move(bank.prototypes);
        return m;
    }

    ClassPrototypeBank bank() const { return {params.class_prototypes, phi, layout}; }
};

// Shape and finiteness check of a loaded or trained model.
inline void validate_model(const ComfeModel &model) {
    const auto &cfg = model.config;
    try {
        cfg.validate();
    } catch (const ConfigError &e) {
        throw CheckpointError(std::string("invalid model config: ") + e.what());
    }
    const auto dcfg = decoder_config(cfg);
    if (model.params.decoder.layers.size() != cfg.layers) throw CheckpointError("decoder layer count mismatch");
    model.params.for_each([&](const std::string &name, const Tensor<float> &t, ParamRole role) {
        Shape want;
        if (role == ParamRole::query) want = {cfg.n_prototypes, cfg.dim};
        else if (role == ParamRole::class_prototype) want = {model.layout.total_prototypes(), cfg.dim};
        else want = decoder_param_shape(dcfg, name, role);
        if (t.shape() != want) {
            throw CheckpointError("parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                                  shape_str(want));
        }
        for (float x : t.data()) {
            if (!std::isfinite(x)) throw CheckpointError("parameter " + name + " holds non-finite values");
        }
    });
    if (model.phi.shape() != Shape{model.layout.total_prototypes(), model.layout.label_count()}) {
        throw CheckpointError("association matrix shape " + shape_str(model.phi.shape()) + " disagrees with layout");
    }
}

// Places every parameter on the tape as a leaf (converted to T).
template <typename T>
HeadParams<Var<T>> bind_params(Tape<T> &tape, const HeadParams<Tensor<float>> &params, bool requires_grad) {
    return map_params<Var<T>>(params, [&](const std::string &, const Tensor<float> &t, ParamRole) {
        if constexpr (std::is_same_v<T, float>) {
            return tape.leaf(t, requires_grad);
        } else {
            return tape.leaf(t.template cast<T>(), requires_grad);
        }
    });
}

template <typename T>
HeadParams<Var<T>> bind_params(Tape<T> &tape, const HeadParams<Tensor<T>> &params, bool requires_grad)
    requires(!std::is_same_v<T, float>)
{
    return map_params<Var<T>>(params,
                              [&](const std::string &, const Tensor<T> &t, ParamRole) { return tape.leaf(t, requires_grad); });
}

}  // namespace comfe
