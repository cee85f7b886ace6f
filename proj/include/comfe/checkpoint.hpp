#pragma once

// COMF checkpoint container.
//
//   "COMF" | u32 version | u32 tensor count
//   per tensor: string name | u8 trainable | u32 rank | rank × u32 dims | f32 data
//   u64 optimizer step | u32 moment count
//   per moment: string name | u64 numel | f32 m | f32 v
//   string config echo (key=value lines)
//   string rng state
//   u32 epoch count | per epoch: u32 epoch | f64 train_loss | f64 eval_accuracy
//
// Strings carry a u32 length prefix. Everything is little-endian. The
// association matrix is stored as the non-trainable tensor "association".

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "comfe/binary_io.hpp"
#include "comfe/config.hpp"
#include "comfe/errors.hpp"
#include "comfe/train_state.hpp"

namespace comfe {

inline constexpr char kCheckpointMagic[4] = {'C', 'O', 'M', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const TrainState &s, std::ostream &os) {
    BinaryWriter w(os);
    w.bytes(std::string_view(kCheckpointMagic, 4));
    w.u32(kCheckpointVersion);
    std::uint32_t count = 1;
    s.model.params.for_each([&](const std::string &, const Tensor<float> &, ParamRole) { ++count; });
    w.u32(count);
    auto put_tensor = [&](const std::string &name, bool trainable, const Tensor<float> &t) {
        w.string(name);
        w.u8(trainable ? 1 : 0);
        w.u32(std::uint32_t(t.rank()));
        for (auto d : t.shape()) w.u32(std::uint32_t(d));
        w.f32_array(t.data());
    };
    s.model.params.for_each([&](const std::string &name, const Tensor<float> &t, ParamRole) { put_tensor(name, true, t); });
    put_tensor("association", false, s.model.phi.cast<float>());

    w.u64(s.optimizer.step);
    const auto names = param_names(s.model.params);
    w.u32(std::uint32_t(s.optimizer.m.size()));
    for (std::size_t p = 0; p < s.optimizer.m.size(); ++p) {
        w.string(p < names.size() ? names[p].name : std::to_string(p));
        w.u64(s.optimizer.m[p].size());
        w.f32_array(s.optimizer.m[p]);
        w.f32_array(s.optimizer.v[p]);
    }
    w.string(to_key_values(s.config));
    std::ostringstream rng;
    rng << s.rng;
    w.string(rng.str());
    w.u32(std::uint32_t(s.history.size()));
    for (const auto &e : s.history) {
        w.u32(e.epoch);
        w.f64(e.train_loss);
        w.f64(e.eval_accuracy);
    }
    if (!w.ok()) throw CheckpointError("write failed");
}

inline void save_checkpoint(const TrainState &s, const std::string &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot create " + path);
    save_checkpoint(s, os);
}

inline TrainState load_checkpoint(std::istream &is) {
    BinaryReader r(is);
    try {
        if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) {
            throw FormatError(FormatError::Kind::bad_magic, 0, "expected COMF");
        }
        const auto version = r.u32();
        if (version != kCheckpointVersion) {
            throw FormatError(FormatError::Kind::version_mismatch, 4,
                              "checkpoint version " + std::to_string(version) + ", reader supports " +
                                  std::to_string(kCheckpointVersion));
        }
        struct Stored {
            bool trainable;
            Tensor<float> value;
        };
        std::map<std::string, Stored> tensors;
        std::vector<std::string> order;
        const auto count = r.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto at = r.offset();
            auto name = r.string(4096);
            const bool trainable = r.u8() != 0;
            const auto rank = r.u32();
            if (rank < 1 || rank > 4) {
                throw FormatError(FormatError::Kind::inconsistent, at, "tensor " + name + " has rank " + std::to_string(rank));
            }
            Shape shape(rank);
            std::uint64_t numel = 1;
            for (auto &d : shape) {
                d = r.u32();
                numel *= d;
            }
            if (numel == 0 || numel > (std::uint64_t(1) << 32)) {
                throw FormatError(FormatError::Kind::inconsistent, at, "tensor " + name + " has bad shape");
            }
            Tensor<float> t(shape);
            r.f32_array(t.data());
            if (!tensors.emplace(name, Stored{trainable, std::move(t)}).second) {
                throw FormatError(FormatError::Kind::inconsistent, at, "duplicate tensor " + name);
            }
            order.push_back(name);
        }

        TrainState s;
        AdamWState opt;
        opt.step = r.u64();
        const auto moments = r.u32();
        std::vector<std::string> moment_names;
        for (std::uint32_t i = 0; i < moments; ++i) {
            moment_names.push_back(r.string(4096));
            const auto n = r.u64();
            if (n > (std::uint64_t(1) << 32)) throw FormatError(FormatError::Kind::inconsistent, r.offset(), "moment too large");
            opt.m.emplace_back(n);
            opt.v.emplace_back(n);
            r.f32_array(opt.m.back());
            r.f32_array(opt.v.back());
        }
        const auto config_text = r.string();
        const auto rng_text = r.string();
        const auto epochs = r.u32();
        for (std::uint32_t i = 0; i < epochs; ++i) {
            EpochMetrics e;
            e.epoch = r.u32();
            e.train_loss = r.f64();
            e.eval_accuracy = r.f64();
            s.history.push_back(e);
        }
        if (is.peek() != std::char_traits<char>::eof()) {
            throw FormatError(FormatError::Kind::inconsistent, r.offset(), "trailing bytes after checkpoint");
        }

        std::istringstream cfg_in(config_text);
        try {
            s.config = train_config_from(parse_key_values(cfg_in, "checkpoint config"));
            s.config.validate();
        } catch (const ConfigError &e) {
            throw CheckpointError(std::string("bad config echo: ") + e.what());
        }
        std::istringstream rng_in(rng_text);
        rng_in >> s.rng;
        if (!rng_in) throw CheckpointError("bad rng state");

        // Rebuild the model skeleton from the config and fill it from the stored tensors.
        auto &m = s.model;
        m.config = s.config.model;
        m.layout = m.config.layout();
        m.phi = build_association_matrix(m.layout);
        m.params.decoder.layers.resize(m.config.layers);
        std::size_t expected = 1, slot = 0;
        m.params.for_each([&](const std::string &name, Tensor<float> &t, ParamRole) {
            ++expected;
            auto it = tensors.find(name);
            if (it == tensors.end()) throw CheckpointError("missing tensor " + name);
            if (!it->second.trainable) throw CheckpointError("tensor " + name + " should be trainable");
            if (order.size() <= slot || order[slot] != name) throw CheckpointError("tensor " + name + " out of order");
            t = std::move(it->second.value);
            ++slot;
        });
        if (count != expected) {
            throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                                  std::to_string(expected));
        }
        auto assoc = tensors.find("association");
        if (assoc == tensors.end()) throw CheckpointError("missing association matrix");
        if (assoc->second.value.shape() != m.phi.shape()) {
            throw CheckpointError("association matrix shape " + shape_str(assoc->second.value.shape()) +
                                  " disagrees with config " + shape_str(m.phi.shape()));
        }
        for (std::size_t i = 0; i < m.phi.size(); ++i) {
            if (assoc->second.value[i] != float(m.phi[i])) {
                throw CheckpointError("association matrix disagrees with the configured layout");
            }
        }
        validate_model(m);

        const auto names = param_names(m.params);
        if (moments != names.size()) throw CheckpointError("optimizer holds " + std::to_string(moments) + " moments");
        std::size_t p = 0;
        m.params.for_each([&](const std::string &name, const Tensor<float> &t, ParamRole) {
            if (moment_names[p] != name || opt.m[p].size() != t.size()) {
                throw CheckpointError("optimizer moment " + moment_names[p] + " does not match " + name);
            }
            ++p;
        });
        s.optimizer = std::move(opt);
        return s;
    } catch (const FormatError &e) {
        throw CheckpointError(e.what());
    }
}

inline TrainState load_checkpoint(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path);
    return load_checkpoint(is);
}

inline ComfeModel load_model(const std::string &path) { return load_checkpoint(path).model; }

}  // namespace comfe
