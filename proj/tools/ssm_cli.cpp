// Command-line driver for the atrial shape model pipeline.

#include "ssm/config.hpp"
#include "ssm/pipeline.hpp"
#include "ssm/svg.hpp"

#include <CLI11.hpp>

#include <iostream>

#ifndef SSM_DEFAULT_DATA_DIR
#define SSM_DEFAULT_DATA_DIR "data"
#endif

namespace {

enum Exit : int { ok = 0, config_error = 2, stage_failure = 3, validation_failure = 4 };

struct Globals
{
    std::string config;
    std::string data_dir = SSM_DEFAULT_DATA_DIR;
    std::uint64_t seed = 0;
    int jobs = -1;
    std::string out;
    bool quiet = false;
};

ssm::PipelineConfig make_config(const Globals& g, const CLI::App& app)
{
    ssm::PipelineConfig c;
    if (!g.config.empty()) {
        c = ssm::load_config(g.config, g.data_dir);
    } else {
        c = ssm::parse_config("", std::filesystem::current_path(), g.data_dir, "<defaults>");
    }
    if (app.count("--seed")) {
        c.seed = g.seed;
        c.synth.seed = g.seed;
    }
    if (app.count("--jobs")) {
        c.jobs = static_cast<unsigned>(g.jobs);
    }
    if (app.count("--out")) {
        c.output = g.out;
    }
    return c;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Bi-atrial statistical shape model and P-wave simulation pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "INI configuration file");
    app.add_option("--data-dir", g.data_dir, "Directory holding the default region rules, electrodes and AP template");
    app.add_option("--seed", g.seed, "Master seed (overrides [run] seed)");
    app.add_option("--jobs", g.jobs, "Worker threads; 0 uses all cores")->check(CLI::NonNegativeNumber);
    app.add_option("--out", g.out, "Output directory (overrides [paths] output)");
    app.add_flag("-q,--quiet", g.quiet, "Only report errors");

    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with ground truth");
    std::string synth_dir;
    synth->add_option("--corpus", synth_dir, "Target directory (default: [paths] corpus)");

    struct StageCmd
    {
        const char* cli;
        const char* stage;
        const char* help;
    };
    const StageCmd stage_cmds[] = {
        {"align", "align", "Rigidly align the corpus to the reference shape"},
        {"correspond", "correspond", "Fit the Gaussian process models to every aligned shape"},
        {"build-pdm", "build-pdm", "Build the point distribution model"},
        {"eval", "evaluate", "Generalization, specificity and compactness"},
        {"sample", "sample", "Draw random instances from the model"},
        {"extrude", "extrude", "Build tetrahedral walls with regions and fibres"},
        {"simulate", "simulate", "Compute activation times"},
        {"ecg", "ecg", "Compute 12-lead ECGs and P-wave durations"},
    };
    std::vector<std::pair<CLI::App*, const char*>> stage_apps;
    for (const auto& s : stage_cmds) {
        stage_apps.emplace_back(app.add_subcommand(s.cli, s.help), s.stage);
    }

    auto* run = app.add_subcommand("run", "Run every stage, skipping those that are up to date");
    bool run_synth = false;
    run->add_flag("--synth", run_synth, "Generate the synthetic corpus first if the corpus directory is missing");

    auto* plot = app.add_subcommand("plot", "Render an artifact as SVG");
    std::string plot_in;
    std::string plot_kind;
    std::string plot_out;
    double plot_threshold = 0.05;
    plot->add_option("artifact", plot_in, "CSV artifact")->required()->check(CLI::ExistingFile);
    plot->add_option("--kind", plot_kind, "generalization, compactness or traces")
        ->required()
        ->check(CLI::IsMember({"generalization", "compactness", "traces"}));
    plot->add_option("-o,--output", plot_out, "SVG file (default: artifact with .svg extension)");
    plot->add_option("--threshold", plot_threshold, "P-wave threshold for trace plots");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : config_error;
    }

    std::ostream* log = g.quiet ? nullptr : &std::cout;
    try {
        if (plot->parsed()) {
            const auto svg = ssm::svg::plot_artifact(plot_in, plot_kind, plot_threshold);
            std::filesystem::path dst = plot_out.empty() ? std::filesystem::path(plot_in).replace_extension(".svg")
                                                         : std::filesystem::path(plot_out);
            ssm::io::write_file_atomic(dst, svg);
            if (log) {
                *log << "wrote " << dst.string() << '\n';
            }
            return ok;
        }

        auto cfg = make_config(g, app);
        if (synth->parsed()) {
            cfg.validate(false);
            const std::filesystem::path dir = synth_dir.empty() ? cfg.corpus : std::filesystem::path(synth_dir);
            const auto corpus = ssm::write_synthetic_corpus(cfg.synth, dir);
            if (log) {
                *log << "wrote " << corpus.shapes.size() << " shapes to " << dir.string() << '\n';
            }
            return ok;
        }

        if (run->parsed() && run_synth && !std::filesystem::exists(cfg.corpus)) {
            cfg.validate(false);
            ssm::write_synthetic_corpus(cfg.synth, cfg.corpus);
        }
        ssm::Pipeline pipeline(cfg, log);
        if (run->parsed()) {
            pipeline.run_all();
        } else {
            for (const auto& [sub, stage] : stage_apps) {
                if (sub->parsed()) {
                    pipeline.run(stage);
                }
            }
        }
        return ok;
    } catch (const ssm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const ssm::ValidationError& e) {
        std::cerr << e.what() << '\n';
        return validation_failure;
    } catch (const ssm::StageError& e) {
        std::cerr << e.what() << '\n';
        return stage_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return stage_failure;
    }
}
