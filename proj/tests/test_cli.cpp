// End-to-end smoke over the CLI binary: render, dataset build/split/stats,
// qc filters, a short train run, sampling, and report aggregation. The path
// to the binary arrives as argv[1] via ctest.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "vispflow/canvas.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string g_cli;
std::string g_dir;

int run(const std::string& args, const std::string& stdout_file = "") {
    std::string cmd = g_cli + " " + args;
    if (!stdout_file.empty()) cmd += " > " + stdout_file;
    cmd += " 2> " + g_dir + "/stderr.txt";
    return std::system(cmd.c_str()) / 256;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    f << content;
}

}  // namespace

TEST_CASE("cli pipeline smoke") {
    REQUIRE_FALSE(g_cli.empty());
    g_dir = (fs::temp_directory_path() / "vispflow_cli_smoke").string();
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);

    SECTION("render is deterministic and reports placements") {
        const json spec = {
            {"width", 128},
            {"height", 128},
            {"seed", 7},
            {"texts", json::array({{{"text", "add a cat"}}})},
            {"markers", json::array({{{"type", "arrow"},
                                      {"origin", {20, 64}},
                                      {"angle", 0.0},
                                      {"magnitude", 0.5},
                                      {"color", {200, 0, 0}},
                                      {"width", 3}}})},
        };
        write_file(g_dir + "/spec.json", spec.dump());
        REQUIRE(run("render --spec " + g_dir + "/spec.json --out " + g_dir + "/a.ppm",
                    g_dir + "/place1.json") == 0);
        REQUIRE(run("render --spec " + g_dir + "/spec.json --out " + g_dir + "/b.ppm",
                    g_dir + "/place2.json") == 0);
        REQUIRE(slurp(g_dir + "/a.ppm") == slurp(g_dir + "/b.ppm"));

        const json placements = json::parse(slurp(g_dir + "/place1.json"));
        // Default arrow range is 20..100 px, so m = 0.5 gives 60.
        REQUIRE(placements["markers"][0]["shaft_length"].get<double>() == 60.0);
        REQUIRE(placements["texts"][0].contains("box"));
    }

    SECTION("unlayoutable text exits with code 5") {
        const json spec = {{"width", 24},
                           {"height", 24},
                           {"texts", json::array({{{"text", std::string(300, 'w')}}})}};
        write_file(g_dir + "/bad.json", spec.dump());
        REQUIRE(run("render --spec " + g_dir + "/bad.json --out " + g_dir + "/bad.ppm") == 5);
        const json err = json::parse(slurp(g_dir + "/stderr.txt"));
        REQUIRE(err["error"] == "unlayoutable");
    }

    SECTION("unknown config key exits with code 2") {
        write_file(g_dir + "/bad.cfg", "not_a_key=1\n");
        REQUIRE(run("dataset build --config " + g_dir + "/bad.cfg --out " + g_dir + "/x") == 2);
    }

    SECTION("dataset, qc, train, sample, eval chain") {
        write_file(g_dir + "/toy.cfg",
                   "image_side=32\npatch=8\nwidth=16\nenc_width=16\nlayers=1\nheads=2\n"
                   "time_embed_dim=16\npairs_per_category=6\n"
                   "categories=C2I,FU\ntrain_steps=6\nbatch=4\nlr=0.001\nwarmup=2\n"
                   "ckpt_every=0\nseed=1\n");
        REQUIRE(run("dataset build --config " + g_dir + "/toy.cfg --out " + g_dir + "/data") == 0);
        REQUIRE(fs::exists(g_dir + "/data/train.vpk"));
        REQUIRE(fs::exists(g_dir + "/data/config.snapshot"));
        REQUIRE(slurp(g_dir + "/data/run.txt").find("version=") != std::string::npos);

        REQUIRE(run("dataset stats --shards " + g_dir + "/data", g_dir + "/stats.json") == 0);
        const json stats = json::parse(slurp(g_dir + "/stats.json"));
        REQUIRE(stats["records"] == 12);
        REQUIRE(stats["per_category"]["C2I"] == 6);

        REQUIRE(run("dataset split --config " + g_dir + "/toy.cfg --shards " + g_dir +
                        "/data --out " + g_dir + "/manifest.json",
                    g_dir + "/split.json") == 0);
        const json manifest = json::parse(slurp(g_dir + "/manifest.json"));
        REQUIRE(manifest.contains("train_roots"));

        write_file(g_dir + "/cer.jsonl",
                   R"({"id": 1, "source": "abc", "hypothesis": "axc"})" "\n");
        REQUIRE(run("qc cer --in " + g_dir + "/cer.jsonl", g_dir + "/cer_out.jsonl") == 0);
        REQUIRE(json::parse(slurp(g_dir + "/cer_out.jsonl"))["cer"].get<double>() ==
                Catch::Approx(1.0 / 3.0));

        write_file(g_dir + "/score.jsonl", R"({"p_yes": 0.8, "p_no": 0.2})" "\n");
        REQUIRE(run("qc score --in " + g_dir + "/score.jsonl", g_dir + "/score_out.jsonl") == 0);
        REQUIRE(json::parse(slurp(g_dir + "/score_out.jsonl"))["score"].get<double>() ==
                Catch::Approx(3.0));

        REQUIRE(run("train --config " + g_dir + "/toy.cfg --shards " + g_dir + "/data --out " +
                        g_dir + "/run1",
                    g_dir + "/train1.json") == 0);
        REQUIRE(fs::exists(g_dir + "/run1/checkpoint.vpw"));
        REQUIRE(fs::exists(g_dir + "/run1/loss.csv"));

        // Identical config and seed reproduce identical artifacts.
        REQUIRE(run("train --config " + g_dir + "/toy.cfg --shards " + g_dir + "/data --out " +
                        g_dir + "/run2",
                    g_dir + "/train2.json") == 0);
        REQUIRE(slurp(g_dir + "/run1/checkpoint.vpw") == slurp(g_dir + "/run2/checkpoint.vpw"));
        REQUIRE(slurp(g_dir + "/run1/loss.csv") == slurp(g_dir + "/run2/loss.csv"));

        // Sample one canvas from the trained checkpoint.
        vispflow::save_ppm(vispflow::Canvas(32, 32, {255, 255, 255, 255}), g_dir + "/in.ppm");
        REQUIRE(run("sample --config " + g_dir + "/toy.cfg --ckpt " + g_dir +
                        "/run1/checkpoint.vpw --input " + g_dir + "/in.ppm --out " + g_dir +
                        "/out.ppm --steps 5 --cfg 2",
                    g_dir + "/sample.json") == 0);
        REQUIRE(fs::exists(g_dir + "/out.ppm"));

        // qc dedup over two identical and one distinct canvas.
        vispflow::save_ppm(vispflow::Canvas(32, 32, {0, 0, 0, 255}), g_dir + "/black.ppm");
        write_file(g_dir + "/dedup.jsonl",
                   json({{"id", 0}, {"image", g_dir + "/in.ppm"}}).dump() + "\n" +
                       json({{"id", 1}, {"image", g_dir + "/in.ppm"}}).dump() + "\n" +
                       json({{"id", 2}, {"image", g_dir + "/black.ppm"}}).dump() + "\n");
        REQUIRE(run("qc dedup --tau 0.9 --in " + g_dir + "/dedup.jsonl",
                    g_dir + "/dedup_out.jsonl") == 0);
        std::istringstream lines(slurp(g_dir + "/dedup_out.jsonl"));
        std::string line;
        std::vector<bool> retained;
        while (std::getline(lines, line)) retained.push_back(json::parse(line)["retained"].get<bool>());
        REQUIRE(retained == std::vector<bool>{true, false, true});

        // eval report over hand-written scores.
        std::string scores;
        for (int c = 0; c < 8; ++c) {
            const char* names[] = {"C2I", "T2I", "TIE", "TBE", "VME", "DE", "FU", "TU"};
            scores += json({{"id", c},
                            {"category", names[c]},
                            {"fidelity", c < 4 ? 4.0 : 2.5},
                            {"consistency", 4.0},
                            {"realism", 4.0},
                            {"spatial", 4.0}})
                          .dump() +
                      "\n";
        }
        write_file(g_dir + "/scores.jsonl", scores);
        REQUIRE(run("eval report --scores " + g_dir + "/scores.jsonl", g_dir + "/report.json") == 0);
        const json report = json::parse(slurp(g_dir + "/report.json"));
        REQUIRE(report["total"].get<double>() == 0.5);
        REQUIRE(report["rates"]["C2I"].get<double>() == 1.0);
        REQUIRE(report["rates"]["TU"].get<double>() == 0.0);

        // eval metrics over a generated/ground-truth pair.
        fs::create_directories(g_dir + "/pairs");
        write_file(g_dir + "/pairs/s0.json",
                   json({{"id", "s0"},
                         {"category", "TIE"},
                         {"src_caption", "a white square"},
                         {"tgt_caption", "a black square"},
                         {"input", g_dir + "/in.ppm"},
                         {"gen", g_dir + "/black.ppm"},
                         {"gt", g_dir + "/black.ppm"}})
                       .dump());
        REQUIRE(run("eval metrics --pairs " + g_dir + "/pairs", g_dir + "/metrics.jsonl") == 0);
        const json metrics = json::parse(slurp(g_dir + "/metrics.jsonl"));
        REQUIRE(metrics["dinov3_sim"].get<double>() == Catch::Approx(1.0));
        REQUIRE(metrics.contains("dir_clip"));
    }
}

int main(int argc, char** argv) {
    if (argc > 1) {
        g_cli = argv[1];
        // Hand only the remaining args to the test framework.
        argc = 1;
    }
    return Catch::Session().run(argc, argv);
}
