// Command-line front end: dedtwin <subcommand> [--config PATH] [--out DIR] ...

#include <CLI11.hpp>
#include <iostream>

#include "dedtwin/config.hpp"
#include "dedtwin/error.hpp"
#include "dedtwin/pipeline.hpp"
#include "dedtwin/text_util.hpp"

namespace {

struct Common {
    std::string config;
    std::string out;
    bool force = false;
    std::optional<std::uint64_t> seed;
    std::optional<int> latent;
    bool full_scale = false;
    std::vector<std::string> settings;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key = value config file");
    app->add_option("--out", c.out, "output directory (overrides output.dir)");
    app->add_flag("--force", c.force, "rerun stages that are up to date");
    app->add_option("--seed", c.seed, "training seed");
    app->add_option("--latent", c.latent, "latent dimension n_l");
    app->add_flag("--full-scale", c.full_scale, "refined grid with the 1836-point read-out set");
    app->add_option("--set", c.settings, "extra key=value setting, repeatable");
}

dedtwin::RunConfig build_config(const Common& c) {
    dedtwin::RunConfig cfg = c.config.empty() ? dedtwin::RunConfig{} : dedtwin::load_config(c.config);
    if (c.full_scale) dedtwin::apply_full_scale(cfg);
    for (const auto& s : c.settings) {
        const auto p = s.find('=');
        if (p == std::string::npos) throw dedtwin::FormatError("--set expects key=value, got '" + s + "'");
        dedtwin::apply_setting(cfg, dedtwin::text::trim(s.substr(0, p)), dedtwin::text::trim(s.substr(p + 1)));
    }
    if (!c.out.empty()) cfg.out = c.out;
    if (c.seed) cfg.train.seed = *c.seed;
    if (c.latent) cfg.surrogate.n_l = *c.latent;
    return cfg;
}

int run_stages(const Common& c, const std::vector<dedtwin::Stage>& stages, const std::string& input = {}) {
    const dedtwin::RunConfig cfg = build_config(c);
    dedtwin::PipelineOptions opt;
    opt.force = c.force;
    opt.predict_input = input;
    opt.log = [](const std::string& s) { std::cerr << s << std::endl; };
    const auto outcomes = dedtwin::run_pipeline(cfg, stages, opt);
    for (const auto& o : outcomes) {
        std::cout << dedtwin::stage_name(o.stage) << ": " << (o.skipped ? "up to date" : "done");
        for (const auto& f : o.written) std::cout << " " << f;
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Thermo-mechanical deposition simulator and latent-dynamics surrogate"};
    app.require_subcommand(1);
    Common common;

    std::vector<std::string> stage_names;
    auto* run = app.add_subcommand("run", "run a list of pipeline stages (default: all six)");
    add_common(run, common);
    run->add_option("--stage", stage_names, "stage name, repeatable")->delimiter(',');

    std::map<CLI::App*, dedtwin::Stage> single;
    for (auto s : {dedtwin::Stage::simulate, dedtwin::Stage::mechanics, dedtwin::Stage::sample, dedtwin::Stage::train,
                   dedtwin::Stage::evaluate, dedtwin::Stage::report, dedtwin::Stage::bench, dedtwin::Stage::sweep,
                   dedtwin::Stage::richardson}) {
        auto* sub = app.add_subcommand(dedtwin::stage_name(s), "run the " + dedtwin::stage_name(s) + " stage");
        add_common(sub, common);
        single[sub] = s;
    }
    std::string predict_input;
    auto* predict = app.add_subcommand("predict", "chained surrogate prediction from a heat-source trajectory");
    add_common(predict, common);
    predict->add_option("--input", predict_input, "heat-source DTRJ at the read-out points");

    auto* verify = app.add_subcommand("verify", "check artifact checksums against the manifest");
    add_common(verify, common);

    std::string artifact, format = "csv", selector, target;
    auto* exp = app.add_subcommand("export", "export a snapshot, probe trace or table");
    exp->add_option("artifact", artifact, "DTRJ trajectory or sweep CSV")->required();
    exp->add_option("--format", format, "csv or svg-plot");
    exp->add_option("--select", selector, "time=K | time=Ss | component=C | probe=X,Y,Z | table (join with ';')")
        ->required();
    exp->add_option("-o,--output", target, "output file")->required();

    auto* show = app.add_subcommand("config", "print the effective configuration");
    add_common(show, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            std::vector<dedtwin::Stage> stages;
            for (const auto& n : stage_names) stages.push_back(dedtwin::parse_stage(n));
            if (stages.empty()) stages = dedtwin::default_stages();
            return run_stages(common, stages);
        }
        for (const auto& [sub, stage] : single) {
            if (sub->parsed()) return run_stages(common, {stage});
        }
        if (predict->parsed()) return run_stages(common, {dedtwin::Stage::predict}, predict_input);
        if (verify->parsed()) {
            const auto cfg = build_config(common);
            const auto r = dedtwin::verify_outputs(cfg.out);
            for (const auto& f : r.ok) std::cout << "ok        " << f << "\n";
            for (const auto& f : r.corrupted) std::cout << "corrupted " << f << "\n";
            for (const auto& f : r.missing) std::cout << "missing   " << f << "\n";
            return r.clean() ? 0 : static_cast<int>(dedtwin::ErrorKind::dependency);
        }
        if (exp->parsed()) {
            dedtwin::export_artifact(artifact, format, selector, target);
            return 0;
        }
        if (show->parsed()) {
            std::cout << dedtwin::format_config(build_config(common));
            return 0;
        }
    } catch (const dedtwin::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(dedtwin::ErrorKind::numerical);
    }
    return 0;
}
