#include "elab/pipeline.hpp"
#include "elab/report.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace elab;

namespace {

nlohmann::json tiny_config() {
    nlohmann::json j;
    j["seed"] = 0;
    j["world"] = {{"concepts", 4}, {"radius", 1.5}};
    j["schedule"] = {{"T", 50}, {"beta_start", 1e-3}, {"beta_end", 0.1}};
    j["train"] = {{"steps", 200}, {"batch", 16}, {"val_draws", 64}};
    j["sampler"] = {{"steps", 8}};
    j["eval"] = {{"samples_per_category", 12}, {"frechet_samples", 12}};
    j["attacks"] = {"disa"};
    j["erasures"] = {"uce"};
    j["attack_overrides"] = {{"disa", {{"steps", 40}}}};
    j["grid"] = {{"triggers", {{20}}}, {"targets", {0}}};
    return j;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("pipeline produces the counting contract") {
    fs::path out = fs::temp_directory_path() / "elab_pipe_a";
    fs::remove_all(out);
    PipelineOptions opts;
    opts.out_dir = out.string();
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);

    // 4 snapshots: base (clean), poisoned, erased-from-clean, erased-from-poisoned
    CHECK(fs::exists(out / "checkpoints/base.json"));
    CHECK(fs::exists(out / "checkpoints/s0-pois-disa-t0-g20.json"));
    CHECK(fs::exists(out / "checkpoints/s0-er-uce-clean-t0.json"));
    CHECK(fs::exists(out / "checkpoints/s0-er-uce-disa-t0-g20.json"));
    CHECK(fs::exists(out / "world.json"));
    CHECK(fs::exists(out / "manifest.json"));

    auto rows = csv_parse(slurp(out / "results.csv"));
    CHECK(rows.size() >= 4);
    int clean = 0, pois = 0, erased_clean = 0, erased_pois = 0;
    for (const auto& r : rows) {
        if (r.phase == "clean") ++clean;
        if (r.phase == "poisoned") ++pois;
        if (r.phase == "erased_clean") ++erased_clean;
        if (r.phase == "erased_poisoned") ++erased_pois;
    }
    CHECK(clean == 1);
    CHECK(pois == 1);
    CHECK(erased_clean == 1);
    CHECK(erased_pois == 1);
}

TEST_CASE("pipeline rerun is idempotent") {
    fs::path out = fs::temp_directory_path() / "elab_pipe_b";
    fs::remove_all(out);
    PipelineOptions opts;
    opts.out_dir = out.string();
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);
    std::string csv1 = slurp(out / "results.csv");
    auto t1 = fs::last_write_time(out / "checkpoints/s0-pois-disa-t0-g20.json");
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);
    std::string csv2 = slurp(out / "results.csv");
    CHECK(csv1 == csv2);
    CHECK(fs::last_write_time(out / "checkpoints/s0-pois-disa-t0-g20.json") == t1);
}

TEST_CASE("interrupted pipeline resumes to the same artifacts") {
    fs::path full = fs::temp_directory_path() / "elab_pipe_full";
    fs::path part = fs::temp_directory_path() / "elab_pipe_part";
    fs::remove_all(full);
    fs::remove_all(part);
    PipelineOptions opts;

    opts.out_dir = full.string();
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);

    nlohmann::json cut = tiny_config();
    cut["_max_cells"] = 2; // emulate an interruption after two cells
    opts.out_dir = part.string();
    CHECK(run_pipeline(cut, opts) == 2);
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);

    CHECK(slurp(part / "results.csv") == slurp(full / "results.csv"));
    for (const char* f : {"checkpoints/base.json", "checkpoints/s0-pois-disa-t0-g20.json",
                          "checkpoints/s0-er-uce-clean-t0.json",
                          "checkpoints/s0-er-uce-disa-t0-g20.json"})
        CHECK(slurp(part / f) == slurp(full / f));
}

TEST_CASE("empty grid succeeds with a manifest only") {
    fs::path out = fs::temp_directory_path() / "elab_pipe_empty";
    fs::remove_all(out);
    nlohmann::json cfg = tiny_config();
    cfg["grid"] = {{"triggers", nlohmann::json::array()}, {"targets", nlohmann::json::array()}};
    PipelineOptions opts;
    opts.out_dir = out.string();
    CHECK(run_pipeline(cfg, opts) == 0);
    CHECK(fs::exists(out / "manifest.json"));
    auto rows = csv_parse(slurp(out / "results.csv"));
    CHECK(rows.empty());
    CHECK_FALSE(fs::exists(out / "checkpoints/base.json")); // nothing trained
}

TEST_CASE("manifest records the materialized config") {
    fs::path out = fs::temp_directory_path() / "elab_pipe_manifest";
    fs::remove_all(out);
    PipelineOptions opts;
    opts.out_dir = out.string();
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);
    nlohmann::json manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(manifest.contains("config"));
    CHECK(manifest["config"]["train"]["steps"] == 200);
    CHECK(manifest["config"]["sampler"]["guidance"].is_number());
    CHECK(manifest.contains("world_hash"));
    for (const auto& cell : manifest["cells"]) CHECK(cell["status"] == "done");

    // a rerun from the materialized config reproduces the results
    fs::path out2 = fs::temp_directory_path() / "elab_pipe_manifest2";
    fs::remove_all(out2);
    opts.out_dir = out2.string();
    REQUIRE(run_pipeline(manifest["config"], opts) == 0);
    CHECK(slurp(out2 / "results.csv") == slurp(out / "results.csv"));
}

TEST_CASE("parallel jobs give the same results") {
    fs::path out = fs::temp_directory_path() / "elab_pipe_jobs";
    fs::remove_all(out);
    PipelineOptions opts;
    opts.out_dir = out.string();
    opts.jobs = 4;
    REQUIRE(run_pipeline(tiny_config(), opts) == 0);
    fs::path ref = fs::temp_directory_path() / "elab_pipe_a";
    if (fs::exists(ref / "results.csv")) CHECK(slurp(out / "results.csv") == slurp(ref / "results.csv"));
}

TEST_CASE("report rendering") {
    fs::path out = fs::temp_directory_path() / "elab_pipe_a";
    if (!fs::exists(out / "results.csv")) {
        PipelineOptions opts;
        opts.out_dir = out.string();
        REQUIRE(run_pipeline(tiny_config(), opts) == 0);
    }
    std::string csv = slurp(out / "results.csv");

    SUBCASE("table emits text and json") {
        fs::path base = fs::temp_directory_path() / "elab_report_table";
        report_emit(csv, "table", base.string());
        CHECK(fs::exists(base.string() + ".txt"));
        CHECK(fs::exists(base.string() + ".json"));
        auto j = nlohmann::json::parse(slurp(base.string() + ".json"));
        CHECK(j.is_array());
        CHECK(j.size() >= 4);
    }
    SUBCASE("svg output is deterministic") {
        fs::path b1 = fs::temp_directory_path() / "elab_report_bar1";
        fs::path b2 = fs::temp_directory_path() / "elab_report_bar2";
        report_emit(csv, "bar-chart", b1.string());
        report_emit(csv, "bar-chart", b2.string());
        CHECK(slurp(b1.string() + ".svg") == slurp(b2.string() + ".svg"));
    }
    SUBCASE("trajectory plot carries four series") {
        fs::path base = fs::temp_directory_path() / "elab_report_traj";
        report_emit(csv, "trajectory-plot", base.string());
        std::string svg = slurp(base.string() + ".svg");
        CHECK(svg.find("acc_e") != std::string::npos);
        CHECK(svg.find("acc_dagger") != std::string::npos);
        CHECK(svg.find("acc_r") != std::string::npos);
        CHECK(svg.find("acc_o") != std::string::npos);
        size_t count = 0, pos = 0;
        while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
            ++count;
            pos += 1;
        }
        CHECK(count == 4);
    }
    SUBCASE("roc plot from a scores csv") {
        std::string scores = scores_csv_header() + "\n"
                             "r,1,0.9\nr,0,0.2\nr,1,0.8\nr,0,0.4\n";
        fs::path base = fs::temp_directory_path() / "elab_report_roc";
        report_emit(scores, "roc-plot", base.string());
        CHECK(fs::exists(base.string() + ".svg"));
    }
    SUBCASE("unknown kind rejected") {
        CHECK_THROWS(report_emit(csv, "pie-chart", "/tmp/elab_report_bad"));
    }
}
