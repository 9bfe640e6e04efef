#include <iostream>

#include <CLI11.hpp>

#include <ordchange/app.hpp>

namespace oc = ordchange;
namespace app = ordchange::app;

int main(int argc, char** argv) {
    CLI::App cli{"ordinal change classification toolkit"};
    cli.require_subcommand(1);
    cli.set_version_flag("--version", app::kVersion);

    std::string task_str, loss_str, mode_str = "mean";
    std::uint64_t seed = 0;
    int folds = 0;

    app::GenOptions gen;
    auto* gen_cmd = cli.add_subcommand("gen", "generate a synthetic dataset");
    gen_cmd->add_option("--config", gen.config, "generator config (key = value)")->required();
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
    auto* gen_seed = gen_cmd->add_option("--seed", seed, "override the config seed");
    auto* gen_task = gen_cmd->add_option("--task", task_str, "t1 or t2");

    app::TrainOptions tr;
    std::string train_config;
    auto* train_cmd = cli.add_subcommand("train", "train a model (or one per fold)");
    train_cmd->add_option("--dataset", tr.dataset, "dataset CSV")->required();
    auto* train_cfg = train_cmd->add_option("--config", train_config, "training config (key = value)");
    train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
    auto* train_seed = train_cmd->add_option("--seed", seed, "override the config seed");
    auto* train_loss = train_cmd->add_option("--loss", loss_str, "ce, focal, emd or combined");
    auto* train_folds = train_cmd->add_option("--folds", folds, "patient-disjoint folds");

    app::PredictOptions pr;
    auto* pred_cmd = cli.add_subcommand("predict", "score a dataset with a checkpoint");
    pred_cmd->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
    pred_cmd->add_option("--dataset", pr.dataset, "dataset CSV")->required();
    pred_cmd->add_option("--out", pr.out, "predictions CSV")->required();

    app::EnsembleOptions en;
    auto* ens_cmd = cli.add_subcommand("ensemble", "combine prediction files");
    ens_cmd->add_option("inputs", en.inputs, "prediction CSVs")->required();
    ens_cmd->add_option("--mode", mode_str, "mean or unanimity")->check(CLI::IsMember({"mean", "unanimity"}));
    ens_cmd->add_flag("--postprocess", en.postprocess, "enforce per-volume consistency");
    ens_cmd->add_option("--out", en.out, "output CSV")->required();

    app::EvalOptions ev;
    std::string eval_out;
    auto* eval_cmd = cli.add_subcommand("eval", "score predictions against ground truth");
    eval_cmd->add_option("--pred", ev.predictions, "predictions CSV")->required();
    eval_cmd->add_option("--truth", ev.truth, "ground-truth CSV")->required();
    auto* eval_task = eval_cmd->add_option("--task", task_str, "t1 or t2");
    auto* eval_out_opt = eval_cmd->add_option("--out", eval_out, "report CSV");

    app::GradcheckOptions gc;
    auto* gc_cmd = cli.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    gc_cmd->add_option("--loss", gc.losses, "losses to check (default: all)");
    gc_cmd->add_option("--trials", gc.trials, "random cases per loss and topology")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--seed", gc.seed, "random seed");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = cli.exit(e);
        return rc == 0 ? 0 : app::kConfig;
    }

    auto parse_task = [&]() -> std::optional<oc::Task> {
        if (task_str.empty()) return std::nullopt;
        return oc::parse_task(task_str);
    };
    const unsigned threads = app::threads_from_env();

    return app::guarded(std::cerr, [&]() -> int {
        if (*gen_cmd) {
            if (*gen_seed) gen.seed = seed;
            if (*gen_task) gen.task = parse_task();
            return app::cmd_gen(gen, std::cout, std::cerr);
        }
        if (*train_cmd) {
            if (*train_cfg) tr.config = train_config;
            if (*train_seed) tr.seed = seed;
            if (*train_loss) tr.loss = oc::parse_loss_kind(loss_str);
            if (*train_folds) tr.folds = folds;
            tr.threads = threads;
            return app::cmd_train(tr, std::cout, std::cerr);
        }
        if (*pred_cmd) {
            pr.threads = threads;
            return app::cmd_predict(pr, std::cout, std::cerr);
        }
        if (*ens_cmd) {
            en.mode = mode_str == "unanimity" ? app::EnsembleMode::Unanimity : app::EnsembleMode::Mean;
            return app::cmd_ensemble(en, std::cout, std::cerr);
        }
        if (*eval_cmd) {
            if (*eval_task) ev.task = parse_task();
            if (*eval_out_opt) ev.out = eval_out;
            return app::cmd_eval(ev, std::cout, std::cerr);
        }
        return app::cmd_gradcheck(gc, std::cout, std::cerr);
    });
}
