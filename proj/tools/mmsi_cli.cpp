// Command-line front end for the multidefendant judgment pipeline: synthetic
// corpus generation, preprocessing, training, protocol evaluation,
// attribution, sweeps, and report consolidation.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmsi/experiment.hpp"

namespace {

mmsi::ExperimentConfig load_config(const std::string& config_path, const std::string& output_dir,
                                   const std::string& task, std::int64_t seed) {
    mmsi::ExperimentConfig cfg = mmsi::ExperimentConfig::from_file(config_path);
    // Flags override file keys.
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (!task.empty()) {
        cfg.task = task;
        if (task != "guilt_inference" && task != "guilt_identification" && task != "prison" &&
            task != "joint")
            throw std::runtime_error("unknown task: \"" + task + "\"");
    }
    if (seed >= 0) cfg.base_seed = static_cast<std::uint64_t>(seed);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMSI multidefendant judgment pipeline"};
    app.require_subcommand(1);

    std::string config_path, output_dir, task, predictions_path, checkpoint_path, sweep_path;
    std::vector<std::string> run_dirs;
    std::int64_t seed = -1;
    int prison_max = 180;

    auto add_common = [&](CLI::App* sub, bool config_required = true) {
        sub->add_option("--config", config_path, "experiment config file (JSON)")
            ->required(config_required);
        sub->add_option("--output", output_dir, "output directory (overrides the config)");
        sub->add_option("--seed", seed, "protocol base seed (overrides the config)");
    };

    auto* generate = app.add_subcommand("generate", "write a synthetic corpus");
    add_common(generate);

    auto* preprocess = app.add_subcommand("preprocess", "derive and mask sample sets");
    add_common(preprocess);
    preprocess->add_option("--task", task, "task to preprocess for");

    auto* train = app.add_subcommand("train", "train one model and save a checkpoint");
    add_common(train);
    train->add_option("--task", task, "task to train");

    auto* evaluate = app.add_subcommand("evaluate", "run the resampling protocol or score a predictions file");
    add_common(evaluate);
    evaluate->add_option("--task", task, "task to evaluate");
    evaluate->add_option("--predictions", predictions_path, "score an existing predictions file");
    evaluate->add_option("--prison-max", prison_max, "prison_max for predictions-file scoring");

    auto* attribute = app.add_subcommand("attribute", "integrated-gradients attributions, COMP, token frequencies");
    add_common(attribute);
    attribute->add_option("--checkpoint", checkpoint_path, "trained model checkpoint")->required();
    attribute->add_option("--task", task, "task the checkpoint was trained for");

    auto* sweep = app.add_subcommand("sweep", "grid of runs over hyperparameter or loss-weight axes");
    add_common(sweep);
    sweep->add_option("--grid", sweep_path, "sweep grid file (JSON); defaults to the alpha/beta preset");

    auto* report = app.add_subcommand("report", "consolidate run directories into tables and plot data");
    report->add_option("--runs", run_dirs, "run directories to consolidate")->required();
    report->add_option("--output", output_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return mmsi::cmd_generate(load_config(config_path, output_dir, "", seed));
        if (preprocess->parsed())
            return mmsi::cmd_preprocess(load_config(config_path, output_dir, task, seed));
        if (train->parsed()) return mmsi::cmd_train(load_config(config_path, output_dir, task, seed));
        if (evaluate->parsed())
            return mmsi::cmd_evaluate(load_config(config_path, output_dir, task, seed),
                                      predictions_path, prison_max);
        if (attribute->parsed())
            return mmsi::cmd_attribute(load_config(config_path, output_dir, task, seed),
                                       checkpoint_path);
        if (sweep->parsed()) {
            nlohmann::json grid;
            if (sweep_path.empty())
                grid = {{"preset", "alpha_beta"}};
            else
                grid = nlohmann::json::parse(mmsi::read_text_file(sweep_path));
            return mmsi::cmd_sweep(load_config(config_path, output_dir, "", seed), grid);
        }
        if (report->parsed()) return mmsi::cmd_report(run_dirs, output_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
