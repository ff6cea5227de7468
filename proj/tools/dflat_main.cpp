#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "dflat/cli.hpp"
#include "dflat/errors.hpp"

namespace {

void add_common(CLI::App* cmd, dflat::cli::CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key=value config file");
    cmd->add_option("--set", opts.overrides, "override a config key (repeatable)");
    cmd->add_option("--seed", opts.seed, "override the seed");
    cmd->add_option("--out", opts.out, "output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DFlatFormer decoder: dual-flattening transformer upsampling at desk scale"};
    app.require_subcommand(1);

    dflat::cli::CommonOpts gradcheck_opts, flops_opts, train_opts, eval_opts, dump_opts,
        render_opts;
    std::size_t flops_points = 20;
    std::string eval_checkpoint, dump_checkpoint;
    std::size_t render_count = 8;

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "check analytic gradients against central differences");
    add_common(gradcheck, gradcheck_opts);

    CLI::App* flops =
        app.add_subcommand("flops", "attention cost reports vs instrumented counts");
    add_common(flops, flops_opts);
    flops->add_option("--points", flops_points, "random sweep size")->capture_default_str();

    CLI::App* train = app.add_subcommand("train", "train on a synthetic task");
    add_common(train, train_opts);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out set");
    add_common(eval, eval_opts);
    eval->add_option("--checkpoint", eval_checkpoint,
                     "checkpoint prefix (default: <out>/ckpt)");

    CLI::App* dump =
        app.add_subcommand("dump-attn", "write per-layer/head attention tensors");
    add_common(dump, dump_opts);
    dump->add_option("--checkpoint", dump_checkpoint, "optional checkpoint prefix");

    CLI::App* render = app.add_subcommand("render", "render synthetic samples as PPM images");
    add_common(render, render_opts);
    render->add_option("--count", render_count, "samples to render")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (gradcheck->parsed()) {
            return dflat::cli::cmd_gradcheck(gradcheck_opts);
        }
        if (flops->parsed()) {
            return dflat::cli::cmd_flops(flops_opts, flops_points);
        }
        if (train->parsed()) {
            return dflat::cli::cmd_train(train_opts);
        }
        if (eval->parsed()) {
            return dflat::cli::cmd_eval(eval_opts, eval_checkpoint);
        }
        if (dump->parsed()) {
            return dflat::cli::cmd_dump_attn(dump_opts, dump_checkpoint);
        }
        if (render->parsed()) {
            return dflat::cli::cmd_render(render_opts, render_count);
        }
        return dflat::exit_config_error;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        app.exit(e);
        return dflat::exit_config_error;
    } catch (const dflat::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return dflat::exit_io_error;
    } catch (const dflat::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return dflat::exit_config_error;
    } catch (const dflat::DivergenceError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return dflat::exit_check_failed;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return dflat::exit_check_failed;
    }
}
