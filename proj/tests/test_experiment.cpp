#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fluxsim/experiment.hpp"

using namespace fluxsim;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const std::string& name, const std::string& body) {
    const fs::path dir = fs::temp_directory_path() / "fluxsim_cfg";
    fs::create_directories(dir);
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << body;
    return path;
}

const char* kDeviceSection =
    "[circuit]\n"
    "ec_ghz = 1.30\n"
    "el_ghz = 0.59\n"
    "ej_ghz = 5.71\n";

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("experiment registry is complete and unique") {
    const auto experiments = list_experiments();
    std::set<std::string> names;
    for (const auto& [name, desc] : experiments) {
        CHECK(!desc.empty());
        names.insert(name);
    }
    CHECK(names.size() == experiments.size());
    for (const char* required :
         {"rabi-phase-sweep", "rotation-vs-start", "rotation-range",
          "calibrate", "rb", "rb-duration-sweep", "trajectory"})
        CHECK(names.count(required) == 1);
}

TEST_CASE("well-formed config validates cleanly") {
    const fs::path path = write_config(
        "good.ini", std::string(kDeviceSection) +
                        "[drive]\n"
                        "scheme = circular\n"
                        "t_x_tau_l = 1.0\n"
                        "[experiment]\n"
                        "name = rotation-range\n");
    CHECK(validate(path.string()).empty());
}

TEST_CASE("missing unit suffix is rejected with the key name") {
    const fs::path path = write_config(
        "bad_key.ini", "[circuit]\n"
                       "ec = 1.30\n"
                       "[experiment]\n"
                       "name = rotation-range\n");
    try {
        ExperimentConfig::parse(path.string());
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key == "ec");
        CHECK(e.line == 2);
        CHECK(std::string(e.what()).find("ec") != std::string::npos);
    }
}

TEST_CASE("physics checks surface as validation errors") {
    SUBCASE("echo time beyond the T1 limit") {
        const fs::path path = write_config(
            "bad_coh.ini", std::string(kDeviceSection) +
                               "[drive]\n"
                               "t_x_tau_l = 1.0\n"
                               "[coherence]\n"
                               "t1_ns = 1000\n"
                               "t2e_ns = 3000\n"
                               "[experiment]\n"
                               "name = rb\n");
        const auto errors = validate(path.string());
        REQUIRE(errors.size() == 1);
        CHECK(errors[0].find("coherence") != std::string::npos);
    }
    SUBCASE("incommensurate duration in commensurate mode") {
        const fs::path path = write_config(
            "bad_lattice.ini", std::string(kDeviceSection) +
                                   "[drive]\n"
                                   "lattice = commensurate\n"
                                   "t_x_tau_l = 1.2\n"
                                   "[experiment]\n"
                                   "name = rb\n");
        const auto errors = validate(path.string());
        REQUIRE(errors.size() == 1);
        CHECK(errors[0].find("tau_L/2") != std::string::npos);
    }
    SUBCASE("unknown experiment name") {
        const fs::path path = write_config(
            "bad_name.ini", std::string(kDeviceSection) +
                                "[drive]\n"
                                "t_x_tau_l = 1.0\n"
                                "[experiment]\n"
                                "name = frobnicate\n");
        const auto errors = validate(path.string());
        REQUIRE(errors.size() == 1);
        CHECK(errors[0].find("frobnicate") != std::string::npos);
    }
}

TEST_CASE("rotation-range run writes a monotone artifact set") {
    const fs::path out_root = fs::temp_directory_path() / "fluxsim_runs";
    fs::remove_all(out_root);
    const fs::path path = write_config(
        "range.ini", std::string(kDeviceSection) +
                         "[drive]\n"
                         "scheme = circular\n"
                         "t_x_tau_l = 1.0\n"
                         "[experiment]\n"
                         "name = rotation-range\n"
                         "durations_tau_l = 1, 1.5, 2, 3\n"
                         "output_dir = " +
                         out_root.string() + "\n");

    const ResultBundle bundle = run(path.string());
    REQUIRE(fs::exists(bundle.manifest_path));
    for (const auto& f : bundle.files)
        CHECK(fs::exists(fs::path(bundle.directory) / f));
    CHECK(bundle.files.back() == "manifest.json");

    // Manifest lists every artifact except itself.
    const std::string manifest = read_file(bundle.manifest_path);
    for (const auto& f : bundle.files)
        if (f != "manifest.json")
            CHECK(manifest.find("\"" + f + "\"") != std::string::npos);

    // Start-time spread of the rotation angle shrinks with gate duration.
    std::ifstream csv(fs::path(bundle.directory) / "rotation_range.csv");
    std::string line;
    std::getline(csv, line);  // header
    std::vector<double> ranges;
    while (std::getline(csv, line)) {
        const std::size_t comma = line.find(',');
        REQUIRE(comma != std::string::npos);
        ranges.push_back(std::stod(line.substr(comma + 1)));
    }
    REQUIRE(ranges.size() == 4);
    for (std::size_t k = 1; k < ranges.size(); ++k)
        CHECK(ranges[k] < ranges[k - 1]);

    // A rerun reproduces every artifact byte for byte (timestamps differ only
    // in the directory name).
    const ResultBundle again = run(path.string());
    for (const auto& f : bundle.files) {
        if (f == "manifest.json") continue;
        CHECK(read_file(fs::path(bundle.directory) / f) ==
              read_file(fs::path(again.directory) / f));
    }
}

TEST_CASE("trajectory run produces a Bloch path ending near +X rotation") {
    const fs::path out_root = fs::temp_directory_path() / "fluxsim_runs";
    const fs::path path = write_config(
        "traj.ini", std::string(kDeviceSection) +
                        "[drive]\n"
                        "scheme = circular\n"
                        "t_x_tau_l = 2.0\n"
                        "[experiment]\n"
                        "name = trajectory\n"
                        "output_dir = " +
                        out_root.string() + "\n");
    const ResultBundle bundle = run(path.string());
    std::ifstream csv(fs::path(bundle.directory) / "trajectory.csv");
    std::string line, last;
    std::getline(csv, line);
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        last = line;
    }
    CHECK(rows > 100);
    // X+ is a quarter turn about x: |0> ends on the equator, z near 0.
    std::stringstream ss(last);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    REQUIRE(vals.size() == 4);
    CHECK(std::abs(vals[3]) < 0.2);
}
