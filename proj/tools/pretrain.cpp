// Regenerates the shipped model files from the built-in pretraining.

#include <iostream>

#include "CLI11.hpp"
#include "microcep/scenario.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Pretrain the scenario models"};
    std::string out_dir = "models";
    std::uint64_t seed = microcep::scenario::kPretrainSeed;
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--seed", seed, "Pretraining seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    try {
        std::filesystem::create_directories(out_dir);
        const auto ae = microcep::scenario::pretrain_anomaly_model(seed);
        const auto occ = microcep::scenario::pretrain_occupancy_model(seed);
        microcep::tinyol::save_model_file(ae, std::filesystem::path(out_dir) / "anomaly_ae.json");
        microcep::tinyol::save_model_file(occ, std::filesystem::path(out_dir) / "occupancy.json");
        std::cout << "wrote " << out_dir << "/anomaly_ae.json and " << out_dir << "/occupancy.json\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
