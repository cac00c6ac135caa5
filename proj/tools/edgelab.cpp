// edgelab: sparse-matrix edge experiments driven by a key-value config.
//
//   edgelab run.cfg                  run the config as written
//   edgelab run.cfg --N 500 --M 60   same keys given as flags override the file
//   edgelab --command density --Z 1,0 --output out
//
// Exit status: 0 pass, 2 contract violation, 1 error.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "edgelab/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Sparse random matrix edge experiments"};
    std::string config_path;
    bool print_config = false;
    app.add_option("config", config_path, "key = value config file");
    app.add_flag("--print-config", print_config, "print the resolved config and exit");
    std::map<std::string, std::string> overrides;
    for (const auto& key : edgelab::config_keys()) app.add_option("--" + key, overrides[key], "override '" + key + "'");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        edgelab::RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw edgelab::ValidationError("cannot read config '" + config_path + "'");
            std::stringstream ss;
            ss << f.rdbuf();
            cfg = edgelab::parse_config(ss.str());
        }
        for (const auto& key : edgelab::config_keys()) {
            if (app.count("--" + key)) edgelab::set_config_key(cfg, key, overrides[key], "--" + key);
        }
        if (print_config) {
            std::cout << edgelab::to_config_text(cfg);
            return 0;
        }
        const auto outcome = edgelab::run(cfg, std::cerr);
        for (const auto& f : outcome.files) std::cout << f << "\n";
        if (outcome.exit_status == 2) std::cerr << "contract violated\n";
        return outcome.exit_status;
    } catch (const std::exception& e) {
        std::cerr << "edgelab: " << e.what() << "\n";
        return 1;
    }
}
