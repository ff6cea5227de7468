#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dflat/checkpoint.hpp"
#include "dflat/complexity.hpp"
#include "dflat/config.hpp"
#include "dflat/data.hpp"
#include "dflat/errors.hpp"
#include "dflat/gradcheck.hpp"
#include "dflat/metrics.hpp"
#include "dflat/model.hpp"
#include "dflat/train.hpp"

namespace dflat::cli {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // repeated --set key=value
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

inline RunConfig resolve_config(const CommonOpts& opts, const RunConfig& defaults = {}) {
    RunConfig cfg = defaults;
    if (!opts.config_path.empty()) {
        cfg.load_file(opts.config_path);
    }
    for (const auto& kv : opts.overrides) {
        cfg.apply_override(kv);
    }
    if (opts.seed) {
        cfg.seed = *opts.seed;
    }
    return cfg;
}

inline void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/config.resolved";
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open for write: " + path);
    }
    os << cfg.serialize();
    if (!os) {
        throw IoError("write failed: " + path);
    }
}

// ---------------------------------------------------------------------------
// gradcheck: central differences over every parameter group of a tiny model.
// The built-in defaults are a 3x3 -> 6x6 decoder; larger configs are refused.
// ---------------------------------------------------------------------------

inline RunConfig gradcheck_defaults() {
    RunConfig cfg;
    cfg.H = 6;
    cfg.W = 6;
    cfg.h = 3;
    cfg.w = 3;
    cfg.d = 8;
    cfg.n_h = 2;
    cfg.L = 2;
    cfg.n_p = 3;
    cfg.n_w = 2;
    // Central differences are undefined at relu kinks; this seed puts every
    // pre-activation of the tiny model well clear of them, for all four
    // group-pool/interactive combinations.
    cfg.seed = 3;
    return cfg;
}

inline constexpr std::size_t gradcheck_param_limit = 5000;
inline constexpr double gradcheck_tolerance = 1e-3;
inline constexpr double gradcheck_step = 1e-4;

inline int cmd_gradcheck(const CommonOpts& opts) {
    const RunConfig cfg = resolve_config(opts, gradcheck_defaults());
    write_resolved_config(cfg, opts.out);
    Model model(cfg.model_config());
    const std::size_t n_params = model.store().total_parameters();
    if (n_params > gradcheck_param_limit) {
        throw ConfigError("gradcheck: " + std::to_string(n_params) + " parameters exceed the " +
                          std::to_string(gradcheck_param_limit) +
                          " limit; shrink H/W/h/w/d/L (the built-in defaults are a valid tiny "
                          "config)");
    }
    const auto samples = generate(task_from_name(cfg.task), 1, cfg.H, cfg.W, cfg.n_classes,
                                  cfg.seed);
    auto base_loss = make_sample_loss(model, samples[0]);
    const bool corrupt = std::getenv("DFLAT_TEST_CORRUPT_BACKWARD") != nullptr;
    auto loss_fn = [&](bool with_grad) {
        const double loss = base_loss(with_grad);
        if (with_grad && corrupt) {
            model.store().slots()[0].grad[0] += 1.0;
        }
        return loss;
    };
    const GradCheckReport report = gradcheck(model.store(), loss_fn, gradcheck_step);
    std::printf("%-28s %-12s %s\n", "parameter group", "elements", "max rel err");
    for (const auto& g : report.groups) {
        std::printf("%-28s %-12zu %.3e\n", g.name.c_str(), g.count, g.max_rel_err);
    }
    const bool ok = report.pass(gradcheck_tolerance);
    std::printf("worst %.3e over %zu groups (%zu parameters): %s\n", report.worst,
                report.groups.size(), n_params, ok ? "PASS" : "FAIL");
    return ok ? exit_ok : exit_check_failed;
}

// ---------------------------------------------------------------------------
// flops: closed-form cost reports cross-checked against the instrumented
// attention implementation, as a table on stdout and JSONL records on disk.
// ---------------------------------------------------------------------------

inline nlohmann::json cost_report_json(const CostReport& r, std::uint64_t enumerated,
                                       std::uint64_t enumerated_interactive, bool match) {
    nlohmann::json j;
    j["variant"] = cost_variant_name(r.variant);
    j["h"] = r.params.h;
    j["w"] = r.params.w;
    j["H"] = r.params.H;
    j["W"] = r.params.W;
    j["d"] = r.params.d;
    j["n_h"] = r.params.n_h;
    j["L"] = r.params.L;
    j["n_p"] = r.params.n_p;
    j["n_w"] = r.params.n_w;
    j["scores_per_layer_per_head"] = r.scores_per_layer;
    j["interactive_scores_per_layer"] = r.interactive_scores_per_layer;
    j["mac_count"] = r.mac_count;
    j["beta_g"] = r.beta_g.str();
    j["beta_p"] = r.beta_p.str();
    j["enumerated_scores_per_layer_per_head"] = enumerated;
    j["enumerated_interactive_scores_per_layer"] = enumerated_interactive;
    j["match"] = match;
    return j;
}

inline int cmd_flops(const CommonOpts& opts, std::size_t sweep_points) {
    const RunConfig cfg = resolve_config(opts);
    write_resolved_config(cfg, opts.out);
    std::filesystem::create_directories(opts.out);
    std::ofstream records(opts.out + "/flops.jsonl");
    if (!records) {
        throw IoError("cannot open for write: " + opts.out + "/flops.jsonl");
    }

    std::vector<CostParams> points;
    // Fixed showcase rows first: the 8x reduction of the dual decoder and the
    // halving with n_p = n_w = 4.
    points.push_back(CostParams{4, 4, 16, 16, 8, 2, 1, 4, 4});
    points.push_back(CostParams{8, 8, 32, 32, 8, 2, 2, 4, 4});
    Rng rng(cfg.seed);
    while (points.size() < sweep_points + 2) {
        CostParams p;
        p.h = 1 + rng.below(8);
        p.w = 1 + rng.below(8);
        p.H = p.h + rng.below(33 - p.h);
        p.W = p.w + rng.below(33 - p.w);
        p.d = 8;
        p.n_h = rng.below(2) ? 2 : 1;
        p.L = 1 + rng.below(3);
        std::vector<std::size_t> divisors;
        for (std::size_t k = 1; k <= std::min(p.h, p.w); ++k) {
            if (p.h % k == 0 && p.w % k == 0) {
                divisors.push_back(k);
            }
        }
        p.n_p = divisors[rng.below(divisors.size())];
        p.n_w = 1 + rng.below(std::max(p.h, p.w));
        points.push_back(p);
    }

    std::printf("%-18s %3s %3s %3s %3s %4s %4s %12s %12s %12s %7s %7s %6s\n", "variant", "h",
                "w", "H", "W", "n_p", "n_w", "scores/l/h", "enumerated", "macs", "beta_g",
                "beta_p", "match");
    bool all_match = true;
    for (const auto& p : points) {
        for (CostVariant v :
             {CostVariant::naive, CostVariant::full_dflat, CostVariant::group_pool_dflat}) {
            const CostReport r = count_scores(v, p);
            const EnumeratedScores e = enumerate_scores(v, p);
            const bool match = e.per_layer_per_head == r.scores_per_layer &&
                               e.interactive_per_layer == r.interactive_scores_per_layer;
            all_match = all_match && match;
            std::printf("%-18s %3zu %3zu %3zu %3zu %4zu %4zu %12llu %12llu %12llu %7s %7s %6s\n",
                        cost_variant_name(v), p.h, p.w, p.H, p.W, p.n_p, p.n_w,
                        static_cast<unsigned long long>(r.scores_per_layer),
                        static_cast<unsigned long long>(e.per_layer_per_head),
                        static_cast<unsigned long long>(r.mac_count), r.beta_g.str().c_str(),
                        r.beta_p.str().c_str(), match ? "yes" : "NO");
            records << cost_report_json(r, e.per_layer_per_head, e.interactive_per_layer, match)
                    << "\n";
        }
    }
    if (!all_match) {
        std::printf("closed-form / enumeration MISMATCH\n");
        return exit_check_failed;
    }
    std::printf("all %zu sweep points match exactly\n", points.size());
    return exit_ok;
}

// ---------------------------------------------------------------------------
// train / eval / dump-attn / render
// ---------------------------------------------------------------------------

inline void write_metrics(const std::string& path, const std::vector<MetricsRecord>& history) {
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open for write: " + path);
    }
    for (const auto& rec : history) {
        nlohmann::json j;
        j["step"] = rec.step;
        j["loss"] = rec.loss;
        if (rec.miou) {
            j["miou"] = *rec.miou;
        }
        os << j << "\n";
    }
    if (!os) {
        throw IoError("write failed: " + path);
    }
}

inline int cmd_train(const CommonOpts& opts) {
    const RunConfig cfg = resolve_config(opts);
    write_resolved_config(cfg, opts.out);
    Model model(cfg.model_config());
    const TrainResult result = train(model, cfg.train_config());
    write_metrics(opts.out + "/metrics.jsonl", result.history);
    save_checkpoint(model.store(), opts.out + "/ckpt");
    std::printf("trained %s on %s for %zu steps: final loss %.6f, held-out mIoU %.4f\n",
                cfg.variant.c_str(), cfg.task.c_str(), cfg.steps, result.final_loss,
                result.final_miou);
    return exit_ok;
}

inline int cmd_eval(const CommonOpts& opts, std::string checkpoint) {
    const RunConfig cfg = resolve_config(opts);
    write_resolved_config(cfg, opts.out);
    if (checkpoint.empty()) {
        checkpoint = opts.out + "/ckpt";
    }
    Model model(cfg.model_config());
    load_checkpoint(model.store(), checkpoint);
    const auto holdout = generate(task_from_name(cfg.task), cfg.holdout_samples, cfg.H, cfg.W,
                                  cfg.n_classes, holdout_seed(cfg.seed));
    const EvalResult result = evaluate(model, holdout);
    for (std::size_t i = 0; i < result.predictions.size(); ++i) {
        write_mask_ppm(opts.out + "/eval_pred_" + std::to_string(i) + ".ppm",
                       result.predictions[i], cfg.H, cfg.W, cfg.n_classes);
        write_mask_ppm(opts.out + "/eval_true_" + std::to_string(i) + ".ppm", holdout[i].mask,
                       cfg.H, cfg.W, cfg.n_classes);
    }
    {
        nlohmann::json j;
        j["miou"] = result.miou;
        j["loss"] = result.mean_loss;
        j["samples"] = holdout.size();
        std::ofstream os(opts.out + "/eval.json");
        if (!os) {
            throw IoError("cannot open for write: " + opts.out + "/eval.json");
        }
        os << j << "\n";
    }
    std::printf("eval %s on %s: held-out mIoU %.6f, loss %.6f (%zu samples)\n",
                cfg.variant.c_str(), cfg.task.c_str(), result.miou, result.mean_loss,
                holdout.size());
    return exit_ok;
}

inline int cmd_dump_attn(const CommonOpts& opts, const std::string& checkpoint) {
    const RunConfig cfg = resolve_config(opts);
    write_resolved_config(cfg, opts.out);
    Model model(cfg.model_config());
    if (!checkpoint.empty()) {
        load_checkpoint(model.store(), checkpoint);
    }
    const auto samples = generate(task_from_name(cfg.task), 1, cfg.H, cfg.W, cfg.n_classes,
                                  holdout_seed(cfg.seed));
    Graph g(model.store());
    AttnRecorder recorder;
    model.forward(g, samples[0].image, nullptr, &recorder);

    // The grouped and pooled maps of one head merge into a single tensor
    // (grouped weights scattered over the full sequence, pooled columns
    // appended), keeping one file per layer/head.
    std::vector<std::pair<std::string, Tensor>> files;
    std::map<std::string, std::size_t> index;
    auto strip = [](const std::string& tag, const char* suffix) {
        const std::string s(suffix);
        return tag.size() > s.size() && tag.compare(tag.size() - s.size(), s.size(), s) == 0
                   ? tag.substr(0, tag.size() - s.size())
                   : std::string{};
    };
    for (auto& [tag, tensor] : recorder.maps) {
        std::string base = tag;
        if (auto b = strip(tag, ".grouped"); !b.empty()) {
            base = b;
        } else if (auto b2 = strip(tag, ".pooled"); !b2.empty()) {
            base = b2;
        }
        auto it = index.find(base);
        if (it == index.end()) {
            index[base] = files.size();
            files.emplace_back(base, std::move(tensor));
            continue;
        }
        Tensor& dst = files[it->second].second;
        Tensor merged({dst.rows(), dst.cols() + tensor.cols()});
        for (std::size_t i = 0; i < dst.rows(); ++i) {
            for (std::size_t j = 0; j < dst.cols(); ++j) {
                merged.at(i, j) = dst.at(i, j);
            }
            for (std::size_t j = 0; j < tensor.cols(); ++j) {
                merged.at(i, dst.cols() + j) = tensor.at(i, j);
            }
        }
        dst = std::move(merged);
    }
    std::filesystem::create_directories(opts.out);
    for (const auto& [tag, tensor] : files) {
        save_tensor(opts.out + "/attn_" + tag + ".dflt", tensor);
    }
    std::printf("wrote %zu attention tensors to %s\n", files.size(), opts.out.c_str());
    return exit_ok;
}

inline int cmd_render(const CommonOpts& opts, std::size_t count) {
    const RunConfig cfg = resolve_config(opts);
    write_resolved_config(cfg, opts.out);
    const auto samples =
        generate(task_from_name(cfg.task), count, cfg.H, cfg.W, cfg.n_classes, cfg.seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        write_image_ppm(opts.out + "/render_img_" + std::to_string(i) + ".ppm",
                        samples[i].image);
        write_mask_ppm(opts.out + "/render_mask_" + std::to_string(i) + ".ppm", samples[i].mask,
                       cfg.H, cfg.W, cfg.n_classes);
    }
    std::printf("rendered %zu %s samples to %s\n", samples.size(), cfg.task.c_str(),
                opts.out.c_str());
    return exit_ok;
}

}  // namespace dflat::cli
