// vispflow: render visual-prompt canvases, build/split datasets, run QC
// filters, train the flow model, sample images, and score results.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vispflow/config.hpp"
#include "vispflow/dataset.hpp"
#include "vispflow/eval.hpp"
#include "vispflow/model.hpp"
#include "vispflow/qc.hpp"
#include "vispflow/render.hpp"
#include "vispflow/synth.hpp"
#include "vispflow/train.hpp"
#include "vispflow/version.hpp"

namespace vf = vispflow;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitUnlayoutable = 5;

int resolve_threads(int cli_threads) {
    if (cli_threads > 0) return cli_threads;
    if (const char* env = std::getenv("VISPFLOW_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

// Every run directory records the effective config, seed, and version.
void write_run_stamp(const std::string& out_dir, const vf::RunConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    std::ofstream snap(out_dir + "/config.snapshot");
    snap << cfg.snapshot();
    std::ofstream run(out_dir + "/run.txt");
    run << "version=" << vf::kVersion << "\n";
    run << "seed=" << cfg.get_int("seed") << "\n";
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw vf::format_error("cannot open: " + path, 0);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw vf::format_error("unparsable JSON in " + path + ": " + e.what(), 0);
    }
}

vf::Color color_from_json(const json& j) {
    if (!j.is_array() || j.size() < 3) throw vf::format_error("color must be [r,g,b]", 0);
    return {j[0].get<std::uint8_t>(), j[1].get<std::uint8_t>(), j[2].get<std::uint8_t>(), 255};
}

std::vector<std::string> collect_shards(const std::vector<std::string>& inputs) {
    std::vector<std::string> shards;
    for (const auto& in : inputs) {
        if (std::filesystem::is_directory(in)) {
            std::vector<std::string> found;
            for (const auto& entry : std::filesystem::directory_iterator(in))
                if (entry.path().extension() == ".vpk") found.push_back(entry.path().string());
            std::sort(found.begin(), found.end());
            shards.insert(shards.end(), found.begin(), found.end());
        } else {
            shards.push_back(in);
        }
    }
    if (shards.empty()) throw vf::format_error("no shard files found", 0);
    return shards;
}

std::vector<vf::PairRecord> load_records(const std::vector<std::string>& shard_args) {
    std::vector<vf::PairRecord> records;
    for (const auto& path : collect_shards(shard_args)) {
        auto part = vf::read_shard(path);
        records.insert(records.end(), part.begin(), part.end());
    }
    return records;
}

// Reads JSON lines from a file or stdin when the path is "-".
std::vector<json> read_jsonl(const std::string& path) {
    std::vector<json> rows;
    std::istream* in = &std::cin;
    std::ifstream file;
    if (path != "-") {
        file.open(path);
        if (!file) throw vf::format_error("cannot open: " + path, 0);
        in = &file;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(*in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw vf::format_error("bad JSON line " + std::to_string(line_no) + ": " + e.what(), 0);
        }
    }
    return rows;
}

// ----------------------------------------------------------------- render

int cmd_render(const std::string& spec_path, const std::string& out_path) {
    const json spec = load_json_file(spec_path);
    const int width = spec.value("width", 256);
    const int height = spec.value("height", 256);
    vf::Canvas canvas =
        spec.contains("base")
            ? vf::load_ppm(spec.at("base").get<std::string>())
            : vf::Canvas(width, height,
                         spec.contains("background") ? color_from_json(spec.at("background"))
                                                     : vf::Color{255, 255, 255, 255});
    vf::Rng rng(spec.value("seed", 0ULL));

    json placements;
    placements["texts"] = json::array();
    placements["markers"] = json::array();

    for (const auto& t : spec.value("texts", json::array())) {
        vf::TextConstraints cons;
        if (t.contains("box")) {
            const auto& b = t.at("box");
            cons.box = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
        }
        cons.size_min = t.value("size_min", cons.size_min);
        cons.size_max = t.value("size_max", cons.size_max);
        vf::TextPlacement rec;
        canvas = vf::render_text_instruction(canvas, t.at("text").get<std::string>(), rng, cons, &rec);
        placements["texts"].push_back({{"box", {rec.box.x, rec.box.y, rec.box.w, rec.box.h}},
                                       {"font_size", rec.font_size},
                                       {"fallback", rec.fallback},
                                       {"dark_text", rec.style.dark_text},
                                       {"lines", rec.lines}});
    }

    for (const auto& mj : spec.value("markers", json::array())) {
        const std::string type = mj.at("type").get<std::string>();
        vf::MarkerConfig mc;
        vf::MarkerOutcome outcome;
        std::optional<vf::MarkerSpec> marker;
        if (type == "arrow") {
            vf::ArrowSpec a;
            a.origin = {mj.at("origin")[0].get<int>(), mj.at("origin")[1].get<int>()};
            a.angle = mj.at("angle").get<double>();
            a.magnitude = mj.at("magnitude").get<double>();
            if (mj.contains("color")) a.color = color_from_json(mj.at("color"));
            a.width = mj.value("width", 0);
            marker = a;
        } else if (type == "bbox") {
            vf::BBoxSpec b;
            const auto& r = mj.at("rect");
            b.rect = {r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
            b.label = mj.value("label", std::string());
            if (mj.contains("color")) b.color = color_from_json(mj.at("color"));
            marker = b;
        } else if (type == "trajectory") {
            vf::TrajectorySpec t;
            for (const auto& p : mj.at("points")) t.points.push_back({p[0].get<int>(), p[1].get<int>()});
            t.thickness = mj.value("thickness", 0);
            if (mj.contains("color")) t.color = color_from_json(mj.at("color"));
            marker = t;
        } else if (type == "doodle") {
            vf::DoodleSpec d;
            for (const auto& s : mj.at("strokes")) {
                std::vector<vf::Point> stroke;
                for (const auto& p : s) stroke.push_back({p[0].get<int>(), p[1].get<int>()});
                d.strokes.push_back(std::move(stroke));
            }
            d.thickness = mj.value("thickness", 0);
            if (mj.contains("color")) d.color = color_from_json(mj.at("color"));
            marker = d;
        } else {
            throw vf::format_error("unknown marker type: " + type, 0);
        }
        canvas = vf::render_marker(canvas, *marker, rng, mc, &outcome);
        json rec = {{"type", type}, {"clipped", outcome.clipped}};
        if (type == "arrow") {
            rec["tip"] = {outcome.arrow_tip.x, outcome.arrow_tip.y};
            rec["shaft_length"] = outcome.shaft_length;
        }
        placements["markers"].push_back(rec);
    }

    vf::save_ppm(canvas, out_path);
    placements["canvas"] = out_path;
    std::cout << placements.dump() << "\n";
    return kExitOk;
}

// ----------------------------------------------------------------- dataset

int cmd_dataset_build(const vf::RunConfig& cfg, const std::string& out_dir, int threads) {
    vf::synth::SynthConfig sc;
    sc.image_side = static_cast<int>(cfg.get_int("image_side"));
    sc.pairs_per_category = static_cast<int>(cfg.get_int("pairs_per_category"));
    sc.categories = cfg.get_categories();
    sc.seed = cfg.get_seed();
    sc.threads = threads;
    const auto records = vf::synth::build_pairs(sc);
    write_run_stamp(out_dir, cfg);
    const std::string shard_path = out_dir + "/train.vpk";
    const std::size_t n = vf::write_shard(records, shard_path);
    std::cout << json({{"shard", shard_path}, {"records", n}}).dump() << "\n";
    return kExitOk;
}

int cmd_dataset_split(const vf::RunConfig& cfg, const std::vector<std::string>& shard_args,
                      const std::string& out_path) {
    const auto records = load_records(shard_args);
    const auto manifest = vf::split_by_root(records, vf::qc::global_embedding,
                                            cfg.get_double("tau_split"),
                                            cfg.get_double("bench_fraction"), cfg.get_seed());
    std::ofstream f(out_path);
    if (!f) throw vf::format_error("cannot open for writing: " + out_path, 0);
    f << manifest.to_json().dump(2) << "\n";
    std::cout << json({{"train", manifest.train_records.size()},
                       {"bench", manifest.bench_records.size()},
                       {"dropped", manifest.dropped_pairs}})
                     .dump()
              << "\n";
    return kExitOk;
}

int cmd_dataset_stats(const std::vector<std::string>& shard_args) {
    const auto records = load_records(shard_args);
    json per_category;
    for (int c = 0; c < vf::kNumCategories; ++c) per_category[vf::category_names()[c]] = 0;
    std::set<std::string> roots;
    for (const auto& r : records) {
        per_category[vf::to_string(r.category)] = per_category[vf::to_string(r.category)].get<int>() + 1;
        roots.insert(r.root_id);
    }
    std::cout << json({{"records", records.size()},
                       {"roots", roots.size()},
                       {"per_category", per_category}})
                     .dump()
              << "\n";
    return kExitOk;
}

// --------------------------------------------------------------------- qc

int cmd_qc_cer(const std::string& in_path) {
    for (const auto& row : read_jsonl(in_path)) {
        const double value =
            vf::qc::cer(row.at("source").get<std::string>(), row.at("hypothesis").get<std::string>());
        json out = {{"cer", value}};
        if (row.contains("id")) out["id"] = row.at("id");
        std::cout << out.dump() << "\n";
    }
    return kExitOk;
}

int cmd_qc_dedup(const std::string& in_path, double tau, int threads) {
    const auto rows = read_jsonl(in_path);
    std::vector<std::vector<double>> embeddings(rows.size());
    vf::synth::parallel_for(rows.size(), threads, [&](std::size_t i) {
        embeddings[i] = vf::qc::global_embedding(vf::load_ppm(rows[i].at("image").get<std::string>()));
    });
    const auto retained = vf::qc::diversity_filter(embeddings, tau);
    std::vector<bool> keep(rows.size(), false);
    for (auto i : retained) keep[i] = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        json out = {{"retained", static_cast<bool>(keep[i])}};
        if (rows[i].contains("id")) out["id"] = rows[i].at("id");
        std::cout << out.dump() << "\n";
    }
    return kExitOk;
}

int cmd_qc_score(const std::string& in_path, double threshold) {
    for (const auto& row : read_jsonl(in_path)) {
        const double score =
            vf::qc::logit_score(row.at("p_yes").get<double>(), row.at("p_no").get<double>());
        json out = {{"score", score}, {"retain", score >= threshold}};
        if (row.contains("id")) out["id"] = row.at("id");
        std::cout << out.dump() << "\n";
    }
    return kExitOk;
}

// ------------------------------------------------------------ train/sample

int cmd_train(const vf::RunConfig& cfg, const std::vector<std::string>& shard_args,
              const std::string& out_dir) {
    const auto records = load_records(shard_args);
    vf::FlowModel model = vf::FlowModel::init(cfg.model_config(), cfg.get_seed());
    vf::TrainConfig tc = cfg.train_config();
    tc.out_dir = out_dir;
    write_run_stamp(out_dir, cfg);
    const auto result = vf::train(model, records, tc);
    std::cout << json({{"checkpoint", result.checkpoint_path},
                       {"loss_curve", result.curve_path},
                       {"final_total", result.curve.back().parts.total}})
                     .dump()
              << "\n";
    return kExitOk;
}

int cmd_sample(const vf::RunConfig& cfg, const std::string& ckpt, const std::string& in_path,
               const std::string& out_path, int steps, double cfg_scale, bool edit) {
    vf::FlowModel model = vf::FlowModel::init(cfg.model_config(), cfg.get_seed());
    vf::load_params(ckpt, model.params);
    const vf::Canvas input = vf::load_ppm(in_path);
    vf::Rng rng(cfg.get_seed());
    const int use_steps = steps > 0 ? steps : model.cfg.sampler_steps;
    const double use_cfg = cfg_scale >= 0.0 ? cfg_scale : model.cfg.cfg_scale;
    const vf::Canvas out = model.sample(input, use_steps, use_cfg, rng, edit);
    vf::save_ppm(out, out_path);
    std::cout << json({{"output", out_path}, {"steps", use_steps}, {"cfg_scale", use_cfg}}).dump()
              << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------- eval

int cmd_eval_metrics(const std::string& pairs_dir) {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(pairs_dir))
        if (entry.path().extension() == ".json") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw vf::format_error("no .json sample descriptors in " + pairs_dir, 0);

    for (const auto& file : files) {
        const json j = load_json_file(file);
        json out;
        out["id"] = j.value("id", std::filesystem::path(file).stem().string());
        if (j.contains("category")) out["category"] = j.at("category");
        const vf::Canvas in_img = vf::load_ppm(j.at("input").get<std::string>());
        const vf::Canvas gen_img = vf::load_ppm(j.at("gen").get<std::string>());
        try {
            if (j.contains("src_caption") && j.contains("tgt_caption")) {
                out["dir_clip"] = vf::eval::dir_clip(
                    j.at("src_caption").get<std::string>(), j.at("tgt_caption").get<std::string>(),
                    in_img, gen_img, vf::qc::text_embedding, vf::qc::global_embedding);
            }
            if (j.contains("gt")) {
                const vf::Canvas gt_img = vf::load_ppm(j.at("gt").get<std::string>());
                out["dinov3_sim"] =
                    vf::eval::dinov3_dir_sim(in_img, gen_img, gt_img, vf::qc::dense_embedding);
            }
        } catch (const vf::degenerate_edit_error& e) {
            out["error"] = std::string("degenerate_edit: ") + e.what();
        }
        std::cout << out.dump() << "\n";
    }
    return kExitOk;
}

int cmd_eval_report(const std::string& scores_path, bool allow_absent, const std::string& total_mode) {
    std::vector<vf::eval::SampleVerdict> verdicts;
    for (const auto& row : read_jsonl(scores_path)) {
        vf::eval::ScoreCard card;
        card.fidelity = row.at("fidelity").get<double>();
        card.consistency = row.at("consistency").get<double>();
        card.realism = row.at("realism").get<double>();
        card.spatial = row.at("spatial").get<double>();
        verdicts.push_back({vf::category_from_string(row.at("category").get<std::string>()),
                            vf::eval::verdict(card)});
    }
    const auto mode = total_mode == "weighted" ? vf::eval::TotalMode::sample_weighted
                                               : vf::eval::TotalMode::mean_of_category_rates;
    const auto report = vf::eval::aggregate(verdicts, allow_absent, mode);

    json out;
    out["total"] = report.total;
    for (const auto& [cat, rate] : report.category_rates) out["rates"][vf::to_string(cat)] = rate;
    std::cout << out.dump() << "\n";

    // Aligned table mirroring the benchmark row shape.
    std::fprintf(stderr, "%-8s", "");
    for (int c = 0; c < vf::kNumCategories; ++c) std::fprintf(stderr, "%8s", vf::category_names()[c]);
    std::fprintf(stderr, "%8s\n", "Total");
    std::fprintf(stderr, "%-8s", "rate");
    for (int c = 0; c < vf::kNumCategories; ++c) {
        const auto cat = static_cast<vf::Category>(c);
        if (report.category_rates.count(cat))
            std::fprintf(stderr, "%8.3f", report.category_rates.at(cat));
        else
            std::fprintf(stderr, "%8s", "-");
    }
    std::fprintf(stderr, "%8.3f\n", report.total);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("vispflow ") + vf::kVersion +
                 " - visual-prompt flow-matching pipeline"};
    app.require_subcommand(1);

    std::string config_path, spec_path, out_path, in_path, ckpt_path, pairs_dir, total_mode = "mean";
    std::vector<std::string> shard_args;
    int threads = 0, steps = 0;
    double tau = 0.92, cfg_scale = -1.0, score_threshold = 1.0;
    bool edit = false, allow_absent = false;
    std::vector<std::string> overrides;

    const auto add_config = [&](CLI::App* sub, const std::string& keys) {
        sub->add_option("--config", config_path, "run config file (key=value); consumes keys: " + keys);
        sub->add_option("--set", overrides,
                        "override a single config key, e.g. --set seed=3 (repeatable)")
            ->type_name("KEY=VALUE");
    };

    auto* render = app.add_subcommand("render", "render an instruction spec onto a canvas");
    render->add_option("--spec", spec_path, "instruction spec JSON")->required();
    render->add_option("--out", out_path, "output PPM path")->required();

    auto* dataset = app.add_subcommand("dataset", "build, split, and inspect pair shards");
    auto* ds_build = dataset->add_subcommand("build", "generate a synthetic pair shard");
    add_config(ds_build,
               "image_side, pairs_per_category, categories, seed, threads");
    ds_build->add_option("--out", out_path, "output directory")->required();
    ds_build->add_option("--threads", threads, "worker threads (or VISPFLOW_THREADS)");
    auto* ds_split = dataset->add_subcommand("split", "leakage-safe train/bench split by root id");
    add_config(ds_split, "tau_split, bench_fraction, seed");
    ds_split->add_option("--shards", shard_args, "shard files or directories")->required();
    ds_split->add_option("--tau", tau, "override tau_split");
    ds_split->add_option("--out", out_path, "manifest JSON path")->required();
    auto* ds_stats = dataset->add_subcommand("stats", "per-category record counts");
    ds_stats->add_option("--shards", shard_args, "shard files or directories")->required();

    auto* qc = app.add_subcommand("qc", "quality-control filters");
    auto* qc_cer = qc->add_subcommand("cer", "character error rate per JSONL row");
    qc_cer->add_option("--in", in_path, "JSONL {source, hypothesis} ('-' for stdin)")->required();
    auto* qc_dedup = qc->add_subcommand("dedup", "greedy diversity filter over image embeddings");
    qc_dedup->add_option("--in", in_path, "JSONL {id, image} ('-' for stdin)")->required();
    qc_dedup->add_option("--tau", tau, "diversity threshold")->required();
    qc_dedup->add_option("--threads", threads, "worker threads (or VISPFLOW_THREADS)");
    auto* qc_score = qc->add_subcommand("score", "logit-based confidence score");
    qc_score->add_option("--in", in_path, "JSONL {p_yes, p_no} ('-' for stdin)")->required();
    qc_score->add_option("--threshold", score_threshold, "retention threshold");

    auto* train = app.add_subcommand("train", "train the flow model on pair shards");
    add_config(train,
               "image_side, patch, width, enc_width, layers, heads, time_embed_dim, sigma_min, "
               "beta1, beta2, p_drop, tau_init, tau_frozen, train_steps, batch, lr, warmup, "
               "weight_decay, ckpt_every, seed");
    train->add_option("--shards", shard_args, "shard files or directories")->required();
    train->add_option("--out", out_path, "output directory")->required();

    auto* sample = app.add_subcommand("sample", "image-in image-out generation from a checkpoint");
    add_config(sample,
               "image_side, patch, width, enc_width, layers, heads, time_embed_dim, sigma_min, "
               "cfg_scale, steps, seed");
    sample->add_option("--ckpt", ckpt_path, "checkpoint (VPW1)")->required();
    sample->add_option("--input", in_path, "input canvas PPM")->required();
    sample->add_option("--out", out_path, "output PPM")->required();
    sample->add_option("--steps", steps, "Euler steps (default from config)");
    sample->add_option("--cfg", cfg_scale, "guidance scale (default from config)");
    sample->add_flag("--edit", edit, "treat the input as an editing instruction (uses z_src)");

    auto* eval_cmd = app.add_subcommand("eval", "directional metrics and benchmark reports");
    auto* ev_metrics = eval_cmd->add_subcommand("metrics", "directional similarities for sample pairs");
    ev_metrics->add_option("--pairs", pairs_dir, "directory of per-sample JSON descriptors")
        ->required();
    auto* ev_report = eval_cmd->add_subcommand("report", "category pass rates from a scores file");
    ev_report->add_option("--scores", in_path, "JSONL {id, category, fidelity, consistency, realism, spatial}")
        ->required();
    ev_report->add_flag("--allow-absent", allow_absent, "exclude empty categories instead of failing");
    ev_report->add_option("--total-mode", total_mode, "mean (category mean) or weighted (pooled)");

    CLI11_PARSE(app, argc, argv);

    try {
        vf::RunConfig cfg = config_path.empty() ? vf::RunConfig() : vf::RunConfig::from_file(config_path);
        for (const auto& kv : overrides) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos) throw vf::config_error("--set expects KEY=VALUE, got: " + kv);
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        const int nthreads = resolve_threads(threads);

        if (render->parsed()) return cmd_render(spec_path, out_path);
        if (ds_build->parsed()) return cmd_dataset_build(cfg, out_path, nthreads);
        if (ds_split->parsed()) {
            if (ds_split->count("--tau")) cfg.set("tau_split", std::to_string(tau));
            return cmd_dataset_split(cfg, shard_args, out_path);
        }
        if (ds_stats->parsed()) return cmd_dataset_stats(shard_args);
        if (qc_cer->parsed()) return cmd_qc_cer(in_path);
        if (qc_dedup->parsed()) return cmd_qc_dedup(in_path, tau, nthreads);
        if (qc_score->parsed()) return cmd_qc_score(in_path, score_threshold);
        if (train->parsed()) return cmd_train(cfg, shard_args, out_path);
        if (sample->parsed()) return cmd_sample(cfg, ckpt_path, in_path, out_path, steps, cfg_scale, edit);
        if (ev_metrics->parsed()) return cmd_eval_metrics(pairs_dir);
        if (ev_report->parsed()) return cmd_eval_report(in_path, allow_absent, total_mode);
        std::cerr << app.help() << "\n";
        return kExitUsage;
    } catch (const vf::unlayoutable_error& e) {
        std::cerr << json({{"error", "unlayoutable"}, {"message", e.what()}}).dump() << "\n";
        return kExitUnlayoutable;
    } catch (const vf::numeric_error& e) {
        std::cerr << json({{"error", "numeric"}, {"message", e.what()}}).dump() << "\n";
        return kExitNumeric;
    } catch (const vf::config_error& e) {
        std::cerr << json({{"error", "config"}, {"message", e.what()}}).dump() << "\n";
        return kExitUsage;
    } catch (const vf::contract_error& e) {
        std::cerr << json({{"error", "contract"}, {"message", e.what()}}).dump() << "\n";
        return kExitUsage;
    } catch (const vf::format_error& e) {
        std::cerr << json({{"error", "format"}, {"message", e.what()}}).dump() << "\n";
        return kExitData;
    } catch (const vf::dim_error& e) {
        std::cerr << json({{"error", "dimension"}, {"message", e.what()}}).dump() << "\n";
        return kExitData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << json({{"error", "json"}, {"message", e.what()}}).dump() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << json({{"error", "internal"}, {"message", e.what()}}).dump() << "\n";
        return kExitData;
    }
}
