#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "atlas/commands.hpp"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw atlas::Error(atlas::ErrorKind::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    using namespace atlas;
    CLI::App app{"Bellman/HJB solution enumeration and value-learning experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::vector<std::uint64_t> seeds;
    cli::Request req;
    std::string system_path, model, kind, thrust, checkpoints;
    int family_samples = -1;

    std::map<std::string, CLI::App*> subs;
    const std::map<std::string, std::string> help{
        {"enumerate", "enumerate Riccati solutions of a linear-quadratic problem"},
        {"failure-mode", "train generic value networks on the toy problem and classify what they learn"},
        {"train", "train value networks on cartpole, drone2d or a linear system"},
        {"eval", "evaluate trained checkpoints"},
        {"tabular", "value-iteration contraction study on random finite MDPs"},
    };
    for (const auto& name : cli::command_names()) {
        auto* sub = app.add_subcommand(name, help.at(name));
        sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seeds, "seeds (override the config)");
        subs[name] = sub;
    }
    subs["enumerate"]->add_option("--system", system_path, "system JSON file")->check(CLI::ExistingFile);
    subs["enumerate"]->add_option("--family-samples", family_samples, "continuum members to sample per family");
    for (const char* name : {"train", "eval"}) {
        subs[name]->add_option("--model", model, "cartpole | drone2d | linear:<sys.json>");
        subs[name]->add_option("--kind", kind, "generic | positive_definite");
        subs[name]->add_option("--thrust-limit", thrust, "drone thrust cap: per | total");
    }
    subs["eval"]->add_option("--checkpoints", checkpoints, "directory written by train");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::exit_validation;
    }

    std::string command;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) command = name;

    const std::string started = cli::utc_now();
    try {
        if (!config_path.empty()) {
            req.config_text = slurp(config_path);
            try {
                req.config = io::json::parse(*req.config_text);
            } catch (const io::json::exception& e) {
                throw Error(ErrorKind::invalid_config, std::string("malformed config: ") + e.what());
            }
            req.base_dir = std::filesystem::absolute(config_path).parent_path();
        }
        req.seeds = seeds;
        if (!system_path.empty()) req.system_path = system_path;
        if (family_samples >= 0) req.family_samples = family_samples;
        if (!model.empty()) req.model = model;
        if (!kind.empty()) req.kind = kind;
        if (!thrust.empty()) req.thrust_limit = thrust;
        if (!checkpoints.empty()) req.checkpoints = checkpoints;
        req.threads = cli::thread_budget();

        cli::FileSet files = cli::run_command(command, req);
        if (req.config_text) {
            files["config.json"] = *req.config_text;
        } else {
            io::json echo = req.config;
            if (req.system_path) echo["system"] = *req.system_path;
            if (req.family_samples) echo["family_samples"] = *req.family_samples;
            if (req.model) echo["model"] = *req.model;
            if (req.kind) echo["train"]["kind"] = *req.kind;
            if (req.thrust_limit) echo["thrust_limit"] = *req.thrust_limit;
            if (req.checkpoints) echo["checkpoints"] = *req.checkpoints;
            if (!seeds.empty()) echo["seeds"] = seeds;
            files["config.json"] = io::dump(echo);
        }
        files["meta.json"] = io::dump(cli::meta_json(command, started, req.threads));
        cli::commit(out_dir, files);
        if (auto it = files.find("summary.txt"); it != files.end()) std::cout << it->second;
        std::cout << "wrote " << files.size() << " files to " << out_dir << "\n";
        return cli::exit_ok;
    } catch (const Error& e) {
        std::cerr << "atlas: " << e.what() << "\n";
        return cli::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "atlas: " << e.what() << "\n";
        return cli::exit_failure;
    }
}
