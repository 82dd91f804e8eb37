#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sitfuse/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "Pipeline config file (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides,
                    "Override a config key, e.g. --set tree.k=5 (repeatable)");
    cmd->add_option("--out", args.out_dir, "Override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sitfuse: self-supervised smoke/fire segmentation pipeline"};
    app.require_subcommand(1);

    struct Command {
        const char* name;
        const char* help;
        void (*run)(const sitfuse::pipeline::PipelineConfig&);
    };
    const Command commands[] = {
        {"gen", "Generate synthetic scenes, ground truth, and polygon labels",
         sitfuse::pipeline::cmd_gen},
        {"train-encoder", "Train the DBN feature encoder", sitfuse::pipeline::cmd_train_encoder},
        {"train-tree", "Train the hierarchical clustering tree", sitfuse::pipeline::cmd_train_tree},
        {"predict", "Emit label maps, context subset, and per-target masks",
         sitfuse::pipeline::cmd_predict},
        {"evaluate", "Score masks against reference truth", sitfuse::pipeline::cmd_evaluate},
        {"fuse", "Fuse stream masks into a certainty mask (and restore retrievals)",
         sitfuse::pipeline::cmd_fuse},
        {"track", "Track mask instances across the scene sequence", sitfuse::pipeline::cmd_track},
    };

    CommonArgs args;
    std::vector<std::pair<CLI::App*, const Command*>> wired;
    for (const Command& command : commands) {
        CLI::App* sub = app.add_subcommand(command.name, command.help);
        add_common(sub, args);
        wired.emplace_back(sub, &command);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const std::optional<std::string> out =
            args.out_dir.empty() ? std::nullopt : std::optional<std::string>(args.out_dir);
        const sitfuse::pipeline::PipelineConfig cfg =
            sitfuse::pipeline::load_config(args.config, args.overrides, out);
        for (const auto& [sub, command] : wired)
            if (sub->parsed()) command->run(cfg);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
