#pragma once

// Command-line front end. run_cli() takes its streams as arguments so the
// tests can drive it in-process.
//
// Exit codes: 0 success, 1 usage or config, 2 data, 3 numeric.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "comfe/comfe.hpp"

namespace comfe::cli {

namespace fs = std::filesystem;

inline const EmbeddedImage &image_at(const EmbeddingDataset &ds, std::size_t index) {
    if (index >= ds.size()) {
        throw DataError("image index " + std::to_string(index) + " out of range for " + std::to_string(ds.size()) +
                        " images");
    }
    return ds.images[index];
}

inline std::string label_name(std::size_t l, std::size_t num_classes) {
    return l < num_classes ? std::to_string(l) : std::string("background");
}

inline void cmd_synth(const std::string &spec_path, const std::string &out_dir, std::optional<std::uint64_t> seed,
                      std::ostream &out) {
    auto spec = synthetic_spec_from(read_key_values(spec_path));
    if (seed) spec.seed = *seed;
    const auto data = generate(spec);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create directory " + out_dir + ": " + ec.message());
    const auto at = [&](const char *name) { return (fs::path(out_dir) / name).string(); };
    write_embeddings(data.train, at("train.cfeb"));
    write_embeddings(data.eval, at("eval.cfeb"));
    write_masks(data.train_masks, at("train.masks"));
    write_masks(data.eval_masks, at("eval.masks"));
    out << "train_images=" << data.train.size() << "\n"
        << "eval_images=" << data.eval.size() << "\n"
        << "oracle_accuracy=" << detail::format_double(nearest_mean_oracle(data)) << "\n";
}

struct TrainArgs {
    std::string config, data, eval, out, log;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, threads;
};

inline void cmd_train(const TrainArgs &a, std::ostream &out) {
    TrainConfig cfg;
    if (!a.config.empty()) cfg = train_config_from(read_key_values(a.config));
    if (a.seed) cfg.seed = *a.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.threads) cfg.threads = *a.threads;
    const auto train_ds = read_embeddings(a.data);
    std::optional<EmbeddingDataset> eval_ds;
    if (!a.eval.empty()) eval_ds = read_embeddings(a.eval);

    std::ofstream log_file;
    std::ostream *log = nullptr;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) throw DataError("cannot create " + a.log);
        log = &log_file;
    }
    const auto state = train(train_ds, cfg, eval_ds ? &*eval_ds : nullptr, log);
    save_checkpoint(state, a.out);
    const auto &last = state.history.back();
    out << "epochs=" << state.history.size() << "\n"
        << "steps=" << state.optimizer.step << "\n"
        << "train_loss=" << detail::format_double(last.train_loss) << "\n";
    if (eval_ds) out << "eval_accuracy=" << detail::format_double(last.eval_accuracy) << "\n";
}

inline void cmd_eval(const std::string &ckpt, const std::string &data, const std::string &masks_path,
                     std::ostream &out) {
    const auto model = load_model(ckpt);
    const auto ds = read_embeddings(data);
    std::optional<PatchMasks> masks;
    if (!masks_path.empty()) masks = read_masks(masks_path);
    write_report(evaluate(model, ds, masks ? &*masks : nullptr), out);
}

inline void cmd_predict(const std::string &ckpt, const std::string &data, std::size_t index,
                        std::optional<double> threshold, std::ostream &out) {
    const auto model = load_model(ckpt);
    const auto ds = read_embeddings(data);
    require_label_space(model, ds);
    const auto &img = image_at(ds, index);
    const auto p = predict(model, img.view, threshold);
    out << "image=" << index << "\n"
        << "true_label=" << img.label << "\n"
        << "predicted=" << (p.label ? std::to_string(*p.label) : std::string("none")) << "\n";
    for (std::size_t l = 0; l < p.scores.size(); ++l) {
        out << "score." << label_name(l, model.config.num_classes) << "=" << detail::format_double(p.scores[l])
            << "\n";
    }
}

inline void cmd_explain(const std::string &ckpt, const std::string &data, std::size_t index,
                        const std::string &out_dir, std::optional<double> threshold, std::size_t resolution,
                        std::ostream &out) {
    const auto model = load_model(ckpt);
    const auto ds = read_embeddings(data);
    require_label_space(model, ds);
    const auto e = explain(model, image_at(ds, index).view, ds.grid_h, ds.grid_w, threshold);
    write_explanation(e, model.config.num_classes, out_dir, resolution);
    for (const auto &f : kExplanationFiles) out << (fs::path(out_dir) / f).string() << "\n";
}

inline void cmd_exemplars(const std::string &ckpt, const std::string &data, std::size_t k, std::ostream &out) {
    const auto model = load_model(ckpt);
    const auto ds = read_embeddings(data);
    require_label_space(model, ds);
    const auto index = extract_exemplars(model, ds, k);
    out << "k=" << index.k << "\n";
    for (std::size_t m = 0; m < index.per_prototype.size(); ++m) {
        out << "prototype=" << m << " label=" << label_name(index.prototype_label[m], model.config.num_classes)
            << "\n";
        for (std::size_t r = 0; r < index.per_prototype[m].size(); ++r) {
            const auto &e = index.per_prototype[m][r];
            out << "  rank=" << r << " image=" << e.image << " slot=" << e.slot
                << " cosine=" << detail::format_double(e.cosine) << "\n";
        }
    }
}

inline int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Prototype-based interpretable classification head on patch embeddings"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, ckpt, data, masks_path, eval_data;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::size_t index = 0, k = 1, resolution = 224;
    TrainArgs targs;

    auto *synth = app.add_subcommand("synth", "generate a synthetic dataset from a spec file");
    synth->add_option("--spec", spec_path, "key=value synthetic spec")->required();
    synth->add_option("--out-dir", out_dir, "directory for train/eval .cfeb and .masks")->required();
    synth->add_option("--seed", seed, "override the spec seed");

    auto *trn = app.add_subcommand("train", "train a head and write a checkpoint");
    trn->add_option("--config", targs.config, "key=value training config (defaults when omitted)");
    trn->add_option("--data", targs.data, "training embeddings (.cfeb)")->required();
    trn->add_option("--eval", targs.eval, "evaluation embeddings tracked per epoch");
    trn->add_option("--out", targs.out, "checkpoint path")->required();
    trn->add_option("--log", targs.log, "metrics log path");
    trn->add_option("--seed", targs.seed, "override the config seed");
    trn->add_option("--epochs", targs.epochs, "override the config epochs");
    trn->add_option("--threads", targs.threads, "worker threads for gradient computation");

    auto *ev = app.add_subcommand("eval", "accuracy and patch-assignment report");
    ev->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    ev->add_option("--data", eval_data, "embeddings (.cfeb)")->required();
    ev->add_option("--masks", masks_path, "ground-truth informative masks");

    auto *pred = app.add_subcommand("predict", "label and scores for one image");
    pred->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    pred->add_option("--data", data, "embeddings (.cfeb)")->required();
    pred->add_option("--index", index, "image index")->required();
    pred->add_option("--threshold", threshold, "report no class unless a score exceeds this");

    auto *exp = app.add_subcommand("explain", "write explanation maps for one image");
    exp->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    exp->add_option("--data", data, "embeddings (.cfeb)")->required();
    exp->add_option("--index", index, "image index")->required();
    exp->add_option("--out-dir", out_dir, "output directory")->required();
    exp->add_option("--threshold", threshold, "report no class unless a score exceeds this");
    exp->add_option("--resolution", resolution, "side of the upsampled maps in pixels")
        ->check(CLI::PositiveNumber);

    auto *exm = app.add_subcommand("exemplars", "nearest training image prototypes per class prototype");
    exm->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    exm->add_option("--data", data, "training embeddings (.cfeb)")->required();
    exm->add_option("--k", k, "exemplars per class prototype");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        if (code != 0) err << app.help();
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) cmd_synth(spec_path, out_dir, seed, out);
        else if (*trn) cmd_train(targs, out);
        else if (*ev) cmd_eval(ckpt, eval_data, masks_path, out);
        else if (*pred) cmd_predict(ckpt, data, index, threshold, out);
        else if (*exp) cmd_explain(ckpt, data, index, out_dir, threshold, resolution, out);
        else if (*exm) cmd_exemplars(ckpt, data, k, out);
    } catch (const Error &e) {
        err << "comfe: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception &e) {
        err << "comfe: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace comfe::cli
