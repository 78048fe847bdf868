#include "featdistill/cli.hpp"

#include "featdistill/augment.hpp"
#include "featdistill/cli_config.hpp"
#include "featdistill/distill.hpp"
#include "featdistill/embedstore.hpp"
#include "featdistill/evalbench.hpp"
#include "featdistill/fileio.hpp"
#include "featdistill/robustness.hpp"
#include "featdistill/simmetrics.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace featdistill::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct Artifact {
    std::string role;
    fs::path path;
};

/// What a subcommand consumed and produced, for the run manifest.
struct RunRecord {
    std::vector<Artifact> inputs;
    std::vector<Artifact> outputs;
};

struct CommonOptions {
    std::uint64_t seed = 0;
    std::string out;
    unsigned threads = 1;
};

void add_common(CLI::App& sub, CommonOptions& common, bool out_required = true) {
    sub.add_option("--seed", common.seed, "Random seed");
    auto* out = sub.add_option("--out", common.out, "Output directory");
    if (out_required) out->required();
    sub.add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
}

// An embedding set directory may also hold report.json and run.json, so only
// its three data files are hashed. That keeps the checksum recorded by the
// producing stage equal to the one recorded by the consuming stage.
std::string checksum_text(const fs::path& path) {
    if (fs::is_directory(path) && fs::exists(path / "manifest.json") && fs::exists(path / "emb.bin")) {
        std::uint64_t h = kFnvOffsetBasis;
        for (const char* name : {"manifest.json", "meta.jsonl", "emb.bin"}) {
            h = fnv1a64(name, h);
            h = fnv1a64(read_file(path / name), h);
        }
        return "fnv1a64:" + to_hex(h);
    }
    return "fnv1a64:" + to_hex(path_checksum(path));
}

void write_json(const fs::path& path, const ordered_json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// --- ingest -----------------------------------------------------------------

struct IngestOptions {
    std::string csv;
    std::vector<std::string> class_names;
    std::string provenance;
    std::string tiles;
};

RunRecord run_ingest(const IngestOptions& o, const CommonOptions& common, std::ostream& out) {
    std::ifstream in(o.csv);
    if (!in) throw DataError("cannot open CSV: " + o.csv);
    EmbeddingSet set = parse_embedding_csv(in, {o.class_names, o.provenance});

    RunRecord record;
    record.inputs.push_back({"csv", o.csv});
    if (!o.tiles.empty()) {
        ordered_json manifest;
        try {
            manifest = ordered_json::parse(read_file(o.tiles));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(o.tiles + ": " + e.what());
        }
        std::map<std::string, std::string> source_of;
        for (const auto& t : manifest.at("tiles")) source_of[t.at("id").get<std::string>()] = t.at("source").get<std::string>();
        for (SampleMeta& m : set.meta) {
            const auto it = source_of.find(m.sample_id);
            if (it == source_of.end()) throw DataError("sample '" + m.sample_id + "' is not listed in " + o.tiles);
            if (m.bag_id.empty()) m.bag_id = it->second;
        }
        record.inputs.push_back({"tiles", o.tiles});
    }
    write_embedding_set(set, common.out);
    write_json(fs::path(common.out) / "report.json",
               {{"n", set.n}, {"d", set.d}, {"n_classes", set.class_names.size()},
                {"checksum", "fnv1a64:" + to_hex(embedding_checksum(set))}});
    record.outputs.push_back({"embedding_set", common.out});
    out << "ingest: " << set.n << " rows x " << set.d << " dims -> " << common.out << "\n";
    return record;
}

// --- tile -------------------------------------------------------------------

struct TileOptions {
    std::vector<std::string> inputs;
    int tile = 256;
    double saturation_threshold = 0.07;
    double min_fraction = 0.25;
    std::string format = "png";
    bool augment = false;
    AugmentConfig aug;
};

RunRecord run_tile(const TileOptions& o, const CommonOptions& common, std::ostream& out) {
    AugmentConfig aug = o.aug;
    aug.tile = o.tile;
    aug.seed = common.seed;
    if (o.augment) aug.validate();

    const fs::path out_dir = common.out;
    const fs::path patch_dir = out_dir / "patches";
    fs::create_directories(patch_dir);

    RunRecord record;
    ordered_json tiles = ordered_json::array();
    std::uint64_t sample_index = 0;
    for (const std::string& input : o.inputs) {
        const RasterImage img = read_image(input);
        record.inputs.push_back({"raster", input});
        const std::string stem = fs::path(input).stem().string();
        for (const Tile& t : tile_image(img, o.tile, o.saturation_threshold, o.min_fraction)) {
            const std::string id = stem + "_x" + std::to_string(t.x) + "_y" + std::to_string(t.y);
            const std::string file = "patches/" + id + "." + o.format;
            write_image(t.image, out_dir / file);
            ordered_json entry{{"id", id}, {"source", stem}, {"x", t.x}, {"y", t.y}, {"size", o.tile}, {"file", file}};
            if (o.augment) {
                Rng rng = sample_rng(aug.seed, sample_index);
                const AugmentResult r = augment_pipeline(t.image, aug, rng);
                const std::string aug_file = "patches/" + id + "_aug." + o.format;
                write_image(r.image, out_dir / aug_file);
                entry["augmented"] = {{"file", aug_file},      {"crop_x", r.trace.crop_x}, {"crop_y", r.trace.crop_y},
                                      {"hflip", r.trace.hflip}, {"vflip", r.trace.vflip},   {"jitter", r.trace.jitter},
                                      {"blur", r.trace.blur}};
            }
            tiles.push_back(std::move(entry));
            ++sample_index;
        }
    }
    ordered_json manifest{{"tile", o.tile},
                          {"saturation_threshold", o.saturation_threshold},
                          {"min_fraction", o.min_fraction},
                          {"tiles", tiles}};
    write_json(out_dir / "tiles.json", manifest);
    write_json(out_dir / "report.json", {{"n_images", o.inputs.size()}, {"n_tiles", tiles.size()}, {"augmented", o.augment}});
    record.outputs.push_back({"patches", patch_dir});
    record.outputs.push_back({"tiles", out_dir / "tiles.json"});
    out << "tile: " << tiles.size() << " tiles from " << o.inputs.size() << " image(s)\n";
    return record;
}

// --- distill ----------------------------------------------------------------

struct DistillOptions {
    std::string student;
    std::string teacher;
    DistillConfig config;
    std::string student_arch = "identity";
    std::string violation_count = "cumulative";
};

RunRecord run_distill(DistillOptions o, const CommonOptions& common, std::ostream& out) {
    o.config.seed = common.seed;
    o.config.student_arch = StudentArch::parse(o.student_arch);
    o.config.violation_count =
        o.violation_count == "consecutive" ? ViolationCount::consecutive : ViolationCount::cumulative;
    o.config.validate();

    const EmbeddingSet student = read_embedding_set(o.student);
    const EmbeddingSet teacher = read_embedding_set(o.teacher);
    const PairAlignment alignment = align_pairs(student, teacher);
    const DistillResult result = distill_fit(student, teacher, o.config);

    const fs::path out_dir = common.out;
    fs::create_directories(out_dir);
    save_model(result.model, out_dir / "model.json");

    std::string trace;
    for (const TraceRecord& r : result.trace) {
        trace += ordered_json{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wd", r.wd}, {"violations", r.violations}}
                     .dump();
        trace += '\n';
    }
    write_file_atomic(out_dir / "trace.jsonl", trace);

    EmbeddingSet projected = make_embedding_set(project(result.model, student.to_matrix()), student.meta,
                                                student.class_names, "projected:" + student.provenance);
    write_embedding_set(projected, out_dir / "projected");

    ordered_json report{{"n_pairs", alignment.pairs.size()},
                        {"student_only", alignment.student_only},
                        {"teacher_only", alignment.teacher_only},
                        {"steps_run", result.steps_run},
                        {"total_steps", result.total_steps},
                        {"early_stopped", result.early_stopped},
                        {"initial_loss", result.trace.empty() ? 0.0 : result.trace.front().loss},
                        {"final_loss", result.trace.empty() ? 0.0 : result.trace.back().loss},
                        {"violations", result.trace.empty() ? 0 : result.trace.back().violations}};
    write_json(out_dir / "report.json", report);

    for (const TraceRecord& r : result.trace) {
        if (r.step % 100 == 0) out << "step " << r.step << " loss " << r.loss << "\n";
    }
    out << "distill: " << result.steps_run << " steps" << (result.early_stopped ? " (early stop)" : "") << "\n";
    return {{{"student", o.student}, {"teacher", o.teacher}},
            {{"model", out_dir / "model.json"},
             {"trace", out_dir / "trace.jsonl"},
             {"projected", out_dir / "projected"},
             {"report", out_dir / "report.json"}}};
}

// --- eval-knn ---------------------------------------------------------------

struct EvalOptions {
    std::string set;
    std::string level = "patch";
    BenchConfig config;
};

RunRecord run_eval(EvalOptions o, const CommonOptions& common, std::ostream& out) {
    o.config.seed = common.seed;
    o.config.threads = common.threads;
    o.config.level = o.level == "bag" ? BenchLevel::bag : BenchLevel::patch;
    o.config.validate();
    const EmbeddingSet set = read_embedding_set(o.set);
    const BenchmarkResult result = run_benchmark(set, o.config);

    ordered_json repeats = ordered_json::array();
    for (const RepeatOutcome& r : result.repeats) {
        repeats.push_back({{"accuracy", r.accuracy}, {"n_test", r.test_units.size()}, {"pca_rank", r.pca_rank}});
    }
    ordered_json report{{"level", o.level},
                        {"n_units", result.n_units},
                        {"n_components", o.config.n_components},
                        {"k", o.config.k},
                        {"n_repeats", o.config.n_repeats},
                        {"train_fraction", o.config.train_fraction},
                        {"seed", o.config.seed},
                        {"per_repeat_accuracy", result.per_repeat_accuracy},
                        {"mean", result.mean},
                        {"std", result.std},
                        {"repeats", repeats}};
    const fs::path out_dir = common.out;
    fs::create_directories(out_dir);
    write_json(out_dir / "report.json", report);
    out << "eval-knn: accuracy " << result.mean << " +- " << result.std << "\n";
    return {{{"set", o.set}}, {{"report", out_dir / "report.json"}}};
}

// --- cka --------------------------------------------------------------------

struct CkaOptions {
    std::string x;
    std::string y;
    std::size_t n_subsamples = 10;
    std::size_t subsample_size = 0;
};

RunRecord run_cka(const CkaOptions& o, const CommonOptions& common, std::ostream& out) {
    const EmbeddingSet x = read_embedding_set(o.x);
    const EmbeddingSet y = read_embedding_set(o.y);
    const CkaReport r = cka_report(x, y, o.n_subsamples, o.subsample_size, common.seed, common.threads);
    ordered_json report{{"method", "linear_cka"},
                        {"spread", "population std over seeded row subsamples"},
                        {"n_aligned", r.n_aligned},
                        {"n_subsamples", r.n_subsamples},
                        {"subsample_size", r.subsample_size},
                        {"seed", r.seed},
                        {"n_degenerate", r.n_degenerate},
                        {"values", r.values},
                        {"mean", r.mean},
                        {"std", r.std}};
    const fs::path out_dir = common.out;
    fs::create_directories(out_dir);
    write_json(out_dir / "report.json", report);
    out << "cka: " << r.mean << " +- " << r.std << "\n";
    return {{{"x", o.x}, {"y", o.y}}, {{"report", out_dir / "report.json"}}};
}

// --- robustness -------------------------------------------------------------

struct RobustnessOptions {
    std::string set;
    RobustnessConfig config;
};

RunRecord run_robustness(RobustnessOptions o, const CommonOptions& common, std::ostream& out) {
    o.config.seed = common.seed;
    o.config.threads = common.threads;
    const EmbeddingSet set = read_embedding_set(o.set);
    const RobustnessResult result = robustness_cv(set, o.config);

    // JSON has no infinity; a fold without center matches reports null.
    auto finite_or_null = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
    ordered_json folds = ordered_json::array();
    for (const RobustnessIndex& f : result.folds) {
        folds.push_back({{"index", finite_or_null(f.index)},
                         {"tissue_match_total", f.tissue_matches},
                         {"center_match_total", f.center_matches},
                         {"n_queries", f.n_queries},
                         {"duplicate_rows", f.duplicate_rows}});
    }
    ordered_json report{{"ratio", "aggregate tissue matches / aggregate center matches per fold"},
                        {"per_class", o.config.per_class},
                        {"k_neighbors", o.config.k_neighbors},
                        {"n_folds", o.config.n_folds},
                        {"seed", o.config.seed},
                        {"folds", folds},
                        {"mean", finite_or_null(result.mean)},
                        {"std", finite_or_null(result.std)}};
    const fs::path out_dir = common.out;
    fs::create_directories(out_dir);
    write_json(out_dir / "report.json", report);
    out << "robustness: " << result.mean << " +- " << result.std << "\n";
    return {{{"set", o.set}}, {{"report", out_dir / "report.json"}}};
}

ordered_json artifacts_json(const std::vector<Artifact>& artifacts) {
    ordered_json j = ordered_json::array();
    for (const Artifact& a : artifacts) {
        j.push_back({{"role", a.role}, {"path", a.path.string()}, {"checksum", checksum_text(a.path)}});
    }
    return j;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Embedding-space distillation and evaluation toolkit", "featdistill"};
    app.option_defaults()->always_capture_default();
    app.config_formatter(std::make_shared<JsonConfig>(&app));
    app.set_config("--config", "", "JSON config file (flags override it)");
    app.allow_config_extras(CLI::config_extras_mode::ignore_all);
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    CommonOptions common;

    IngestOptions ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Convert a CSV of embeddings into an embedding set directory");
    ingest_cmd->add_option("--csv", ingest.csv, "CSV: sample_id,bag_id,label,center_id,tissue_class,v0,...")->required();
    ingest_cmd->add_option("--class-names", ingest.class_names, "Ordered class names")->delimiter(',');
    ingest_cmd->add_option("--provenance", ingest.provenance, "Free-text provenance");
    ingest_cmd->add_option("--tiles", ingest.tiles, "tiles.json from the tile subcommand; validates sample ids");
    add_common(*ingest_cmd, common);

    TileOptions tile;
    auto* tile_cmd = app.add_subcommand("tile", "Cut foreground tiles (optionally augmented) from raster images");
    tile_cmd->add_option("--input", tile.inputs, "PNG or PPM images")->required();
    tile_cmd->add_option("--tile", tile.tile, "Tile side in pixels")->check(CLI::PositiveNumber);
    tile_cmd->add_option("--saturation-threshold", tile.saturation_threshold, "Foreground HSV saturation threshold");
    tile_cmd->add_option("--min-fraction", tile.min_fraction, "Minimum foreground pixel fraction");
    tile_cmd->add_option("--format", tile.format, "Patch file format")->check(CLI::IsMember({"png", "ppm"}));
    tile_cmd->add_flag("--augment", tile.augment, "Also write one augmented crop per tile");
    tile_cmd->add_option("--crop", tile.aug.crop, "Augmentation crop side");
    tile_cmd->add_option("--p-hflip", tile.aug.p_hflip, "Horizontal flip probability");
    tile_cmd->add_option("--p-vflip", tile.aug.p_vflip, "Vertical flip probability");
    tile_cmd->add_option("--p-jitter", tile.aug.p_jitter, "Color jitter probability");
    tile_cmd->add_option("--brightness", tile.aug.jitter.brightness, "Brightness jitter strength");
    tile_cmd->add_option("--contrast", tile.aug.jitter.contrast, "Contrast jitter strength");
    tile_cmd->add_option("--saturation", tile.aug.jitter.saturation, "Saturation jitter strength");
    tile_cmd->add_option("--hue", tile.aug.jitter.hue, "Hue jitter strength (turns)");
    tile_cmd->add_option("--p-blur", tile.aug.p_blur, "Gaussian blur probability");
    tile_cmd->add_option("--blur-kernel", tile.aug.blur_kernel, "Odd blur kernel size");
    tile_cmd->add_option("--blur-sigma-min", tile.aug.blur_sigma_min, "Lower bound of the blur sigma draw");
    tile_cmd->add_option("--blur-sigma-max", tile.aug.blur_sigma_max, "Upper bound of the blur sigma draw");
    add_common(*tile_cmd, common);

    DistillOptions distill;
    DistillConfig& dc = distill.config;
    auto* distill_cmd = app.add_subcommand("distill", "Train a projection head that maps student onto teacher embeddings");
    distill_cmd->add_option("--student", distill.student, "Student embedding set")->required();
    distill_cmd->add_option("--teacher", distill.teacher, "Teacher embedding set")->required();
    distill_cmd->add_option("--alpha", dc.alpha, "Exponent of the log-sum loss");
    distill_cmd->add_option("--eps-loss", dc.eps_loss, "Floor inside the logarithm");
    distill_cmd->add_option("--batch-size", dc.batch_size, "Mini-batch size");
    distill_cmd->add_option("--lr-start", dc.lr_start, "Initial learning rate");
    distill_cmd->add_option("--lr-end", dc.lr_end, "Final learning rate");
    distill_cmd->add_option("--wd-start", dc.wd_start, "Initial weight decay");
    distill_cmd->add_option("--wd-end", dc.wd_end, "Final weight decay");
    distill_cmd->add_option("--total-steps", dc.total_steps, "Schedule length (0: ten epochs)");
    distill_cmd->add_option("--beta1", dc.beta1, "Adam first-moment decay");
    distill_cmd->add_option("--beta2", dc.beta2, "Adam second-moment decay");
    distill_cmd->add_option("--eps-adam", dc.eps_adam, "Adam denominator stabilizer");
    distill_cmd->add_option("--window", dc.window, "Early-stop window length");
    distill_cmd->add_option("--max-violations", dc.max_violations, "Early-stop violation budget");
    distill_cmd->add_option("--violation-count", distill.violation_count, "cumulative or consecutive")
        ->check(CLI::IsMember({"cumulative", "consecutive"}));
    distill_cmd->add_option("--bn-momentum", dc.bn_momentum, "Batch-norm running-stat momentum");
    distill_cmd->add_option("--bn-eps", dc.bn_eps, "Batch-norm variance epsilon");
    distill_cmd->add_option("--student-arch", distill.student_arch, "identity or mlp:h1,h2,...");
    add_common(*distill_cmd, common);

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval-knn", "PCA + kNN benchmark over repeated random splits");
    eval_cmd->add_option("--set", eval.set, "Embedding set")->required();
    eval_cmd->add_option("--level", eval.level, "patch or bag")->check(CLI::IsMember({"patch", "bag"}));
    eval_cmd->add_option("--n-components", eval.config.n_components, "PCA components");
    eval_cmd->add_option("--k", eval.config.k, "Neighbors");
    eval_cmd->add_option("--n-repeats", eval.config.n_repeats, "Random splits");
    eval_cmd->add_option("--train-fraction", eval.config.train_fraction, "Training share of each split");
    add_common(*eval_cmd, common);

    CkaOptions cka;
    auto* cka_cmd = app.add_subcommand("cka", "Linear CKA between two embedding sets");
    cka_cmd->add_option("--x", cka.x, "First embedding set")->required();
    cka_cmd->add_option("--y", cka.y, "Second embedding set")->required();
    cka_cmd->add_option("--n-subsamples", cka.n_subsamples, "Row subsamples");
    cka_cmd->add_option("--subsample-size", cka.subsample_size, "Rows per subsample (0: min(n, 2048))");
    add_common(*cka_cmd, common);

    RobustnessOptions robust;
    auto* robust_cmd = app.add_subcommand("robustness", "Tissue-over-center neighbor consistency index");
    robust_cmd->add_option("--set", robust.set, "Embedding set with tissue_class and center_id")->required();
    robust_cmd->add_option("--per-class", robust.config.per_class, "Samples per tissue class");
    robust_cmd->add_option("--k-neighbors", robust.config.k_neighbors, "Neighbors per query");
    robust_cmd->add_option("--n-folds", robust.config.n_folds, "Independent resamplings");
    add_common(*robust_cmd, common);

    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) sub->fallthrough();

    std::vector<std::string> argv_storage{"featdistill"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        return kExitUsage;
    }

    CLI::App* selected = app.get_subcommands().front();
    const std::string name = selected->get_name();
    const auto started = std::chrono::steady_clock::now();
    try {
        RunRecord record;
        if (name == "ingest") {
            record = run_ingest(ingest, common, out);
        } else if (name == "tile") {
            record = run_tile(tile, common, out);
        } else if (name == "distill") {
            record = run_distill(distill, common, out);
        } else if (name == "eval-knn") {
            record = run_eval(eval, common, out);
        } else if (name == "cka") {
            record = run_cka(cka, common, out);
        } else {
            record = run_robustness(robust, common, out);
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        ordered_json manifest{{"tool", "featdistill"},
                              {"tool_version", kToolVersion},
                              {"subcommand", name},
                              {"seed", common.seed},
                              {"config", resolved_options(*selected)},
                              {"inputs", artifacts_json(record.inputs)},
                              {"outputs", artifacts_json(record.outputs)},
                              {"duration_seconds", seconds}};
        write_json(fs::path(common.out) / "run.json", manifest);
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "featdistill " << name << ": invalid configuration: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericalError& e) {
        err << "featdistill " << name << ": numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const DataError& e) {
        err << "featdistill " << name << ": " << e.what() << "\n";
        return kExitData;
    } catch (const nlohmann::json::exception& e) {
        err << "featdistill " << name << ": malformed JSON input: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "featdistill " << name << ": " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "featdistill " << name << ": " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace featdistill::cli
