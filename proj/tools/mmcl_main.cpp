// mmcl command line: train / eval / ablate / inspect / gradcheck / synth /
// infogain. Exit codes: 0 success, 1 configuration error, 2 data error,
// 3 numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mmcl/checkpoint.hpp"
#include "mmcl/config.hpp"
#include "mmcl/dataset.hpp"
#include "mmcl/gradcheck_suite.hpp"
#include "mmcl/infogain.hpp"
#include "mmcl/metrics.hpp"
#include "mmcl/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

json load_json_file(const std::string& path, const char* kind) {
    std::ifstream f(path);
    if (!f) throw mmcl::DataError(std::string("cannot open ") + kind + " file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw mmcl::ConfigError(std::string(kind) + " file " + path +
                                " is not valid JSON: " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const json& j) {
    if (fs::path(path).has_parent_path())
        fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw mmcl::DataError("cannot write " + path);
    f << j.dump(2) << "\n";
}

json history_to_json(const std::vector<mmcl::EpochStats>& history) {
    json h = json::array();
    for (std::size_t e = 0; e < history.size(); ++e) {
        h.push_back({{"epoch", e},
                     {"total", history[e].total},
                     {"lp", history[e].lp},
                     {"lpolicy", history[e].lpolicy},
                     {"lcritic", history[e].lcritic},
                     {"q", history[e].q},
                     {"reward", history[e].reward}});
    }
    return h;
}

json evaluate_model(const mmcl::MmclModel& model, const mmcl::Dataset& data) {
    if (model.cfg.task.task != data.task)
        throw mmcl::ConfigError("model task does not match dataset task");
    if (data.task == mmcl::TaskKind::Regression) {
        std::vector<double> preds = mmcl::predict_dataset(model, data);
        std::vector<double> labels;
        for (const mmcl::Sample& s : data.samples) labels.push_back(s.label);
        return mmcl::metrics_to_json(mmcl::regression_metrics(preds, labels));
    }
    if (model.cfg.task.num_classes != data.num_classes)
        throw mmcl::ConfigError("model num_classes does not match dataset");
    std::vector<mmcl::Tensor> logits;
    mmcl::predict_dataset(model, data, &logits);
    std::vector<int> preds, labels;
    for (const mmcl::Tensor& l : logits) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < l.size(); ++c)
            if (l[c] > l[best]) best = c;
        preds.push_back(static_cast<int>(best));
    }
    for (const mmcl::Sample& s : data.samples) labels.push_back(static_cast<int>(s.label));
    return mmcl::metrics_to_json(
        mmcl::classification_metrics(preds, labels, data.num_classes));
}

struct TrainOutput {
    mmcl::TrainResult result;
    json report;
};

TrainOutput run_training(const mmcl::MmclConfig& cfg, const mmcl::Dataset& data) {
    const auto start = std::chrono::steady_clock::now();
    mmcl::TrainResult result = mmcl::train(cfg, data);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json report;
    report["config"] = mmcl::config_to_json(cfg);
    report["in_dims"] = {{"v", data.dims[0]}, {"a", data.dims[1]}, {"t", data.dims[2]}};
    report["seed"] = cfg.seed;
    report["wall_clock_s"] = secs;
    report["history"] = history_to_json(result.history);
    report["final_metrics"] = evaluate_model(result.model, data);
    return {std::move(result), std::move(report)};
}

const std::vector<std::string> kVariants{
    "full",        "no-csd",        "no-cce",     "no-csm",     "fvs-major",
    "fvs-mean",    "common-only",   "specific-only"};

mmcl::MmclConfig apply_variant(mmcl::MmclConfig cfg, const std::string& variant) {
    if (variant == "full") return cfg;
    if (variant == "no-csd") cfg.ablation.no_csd = true;
    else if (variant == "no-cce") cfg.ablation.no_cce = true;
    else if (variant == "no-csm") cfg.ablation.no_csm = true;
    else if (variant == "fvs-major") cfg.compare_mode = mmcl::CompareMode::Major;
    else if (variant == "fvs-mean") cfg.compare_mode = mmcl::CompareMode::Mean;
    else if (variant == "common-only") cfg.ablation.branch = mmcl::BranchMode::CommonOnly;
    else if (variant == "specific-only")
        cfg.ablation.branch = mmcl::BranchMode::SpecificOnly;
    else if (variant.rfind("modality:", 0) == 0)
        cfg.modality_mask = mmcl::detail::parse_mask(variant.substr(9));
    else {
        std::string valid;
        for (const std::string& v : kVariants) valid += v + " ";
        throw mmcl::ConfigError("unknown variant '" + variant + "'; valid: " + valid +
                                "modality:<mask>");
    }
    return cfg;
}

std::string csv_escape(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    if (fs::path(path).has_parent_path())
        fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw mmcl::DataError("cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i)
        f << (i ? "," : "") << header[i];
    f << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << csv_escape(row[i]);
        f << "\n";
    }
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, std::optional<std::uint64_t> seed) {
    mmcl::MmclConfig cfg = mmcl::config_from_json(load_json_file(config_path, "config"));
    if (seed) cfg.seed = *seed;
    mmcl::Dataset data = mmcl::load_dataset(data_path);
    TrainOutput out = run_training(cfg, data);
    fs::create_directories(out_dir);
    mmcl::save_checkpoint((fs::path(out_dir) / "checkpoint.mmck").string(),
                          out.result.model);
    write_json_file((fs::path(out_dir) / "report.json").string(), out.report);
    std::cout << "trained " << cfg.epochs << " epochs; report under " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& out_path) {
    mmcl::MmclModel model = mmcl::load_checkpoint(model_path);
    mmcl::Dataset data = mmcl::load_dataset(data_path);
    for (std::size_t m = 0; m < 3; ++m)
        if (model.modality_active(m) && model.in_dims[m] != data.dims[m])
            throw mmcl::ConfigError("checkpoint expects modality dim " +
                                    std::to_string(model.in_dims[m]) + ", dataset has " +
                                    std::to_string(data.dims[m]));
    write_json_file(out_path, evaluate_model(model, data));
    std::cout << "metrics written to " << out_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_path,
               const std::string& val_path, const std::vector<std::string>& variants,
               bool sweep_all, const std::string& out_path) {
    mmcl::MmclConfig base = mmcl::config_from_json(load_json_file(config_path, "config"));
    mmcl::Dataset data = mmcl::load_dataset(data_path);
    std::optional<mmcl::Dataset> val;
    if (!val_path.empty()) val = mmcl::load_dataset(val_path);

    std::vector<std::string> selected = variants;
    if (sweep_all) {
        selected = kVariants;
        selected.push_back("modality:v");
        selected.push_back("modality:a");
        selected.push_back("modality:t");
        selected.push_back("modality:va");
        selected.push_back("modality:vt");
        selected.push_back("modality:at");
    }
    if (selected.empty()) throw mmcl::ConfigError("ablate: no variant given (or use --all)");

    json rows = json::array();
    for (const std::string& variant : selected) {
        mmcl::MmclConfig cfg = apply_variant(base, variant);
        mmcl::TrainResult result = mmcl::train(cfg, data);
        json row;
        row["variant"] = variant;
        row["metrics"] = evaluate_model(result.model, val ? *val : data);
        rows.push_back(std::move(row));
        std::cout << "variant " << variant << " done\n";
    }
    write_json_file(out_path, rows);

    // companion CSV next to the JSON
    std::ofstream csv(out_path + ".csv", std::ios::trunc);
    if (base.task.task == mmcl::TaskKind::Regression) {
        csv << "variant,mae,rmse,pearson,acc2,acc7,f1\n";
        for (const auto& row : rows) {
            const auto& m = row["metrics"];
            csv << row["variant"].get<std::string>() << "," << m["mae"] << "," << m["rmse"]
                << "," << m["pearson"] << "," << m["acc2"] << "," << m["acc7"] << ","
                << m["f1"] << "\n";
        }
    } else {
        csv << "variant,macro_acc,macro_f1\n";
        for (const auto& row : rows) {
            const auto& m = row["metrics"];
            csv << row["variant"].get<std::string>() << "," << m["macro_acc"] << ","
                << m["macro_f1"] << "\n";
        }
    }
    return 0;
}

int cmd_inspect(const std::string& model_path, const std::string& data_path,
                const std::string& what, const std::string& out_dir,
                std::vector<std::string> sample_ids) {
    mmcl::MmclModel model = mmcl::load_checkpoint(model_path);
    mmcl::Dataset data = mmcl::load_dataset(data_path);
    fs::create_directories(out_dir);
    mmcl::MmclModel frozen = model.detached();

    std::vector<const mmcl::Sample*> picked;
    if (sample_ids.empty()) {
        for (const mmcl::Sample& s : data.samples) picked.push_back(&s);
    } else {
        for (const std::string& id : sample_ids) {
            const mmcl::Sample* found = nullptr;
            for (const mmcl::Sample& s : data.samples)
                if (s.id == id) found = &s;
            if (!found) throw mmcl::DataError("sample id '" + id + "' not found");
            picked.push_back(found);
        }
    }

    const std::vector<std::size_t> idx = mmcl::active_indices(model.cfg);
    const std::array<const char*, 3> mod_names{"v", "a", "t"};
    for (const mmcl::Sample* s : picked) {
        mmcl::ForwardTrace tr = mmcl::forward(frozen, s->mods);
        const std::size_t L = s->mods[idx[0]].rows();
        if (what == "actions") {
            if (model.cfg.ablation.no_csm)
                throw mmcl::ConfigError("inspect actions: model was trained without CSM");
            std::vector<std::string> header{"step"};
            for (std::size_t m : idx) header.push_back(std::string("action_") + mod_names[m]);
            std::vector<std::vector<double>> rows(L);
            for (std::size_t t = 0; t < L; ++t) {
                rows[t].push_back(static_cast<double>(t));
                for (std::size_t m : idx) rows[t].push_back((*tr.actions[m]).value()[t]);
            }
            write_csv((fs::path(out_dir) / (s->id + "_actions.csv")).string(), header, rows);
        } else if (what == "weights") {
            if (!tr.decoupled[idx[0]].has_value())
                throw mmcl::ConfigError("inspect weights: decoupling is disabled here");
            for (std::size_t m : idx) {
                std::vector<std::string> header;
                for (std::size_t j = 0; j < L; ++j) header.push_back("w" + std::to_string(j));
                for (const auto& [tag, mat] :
                     {std::pair{"wc", &tr.decoupled[m]->w_common},
                      std::pair{"ws", &tr.decoupled[m]->w_specific}}) {
                    std::vector<std::vector<double>> rows(L, std::vector<double>(L));
                    for (std::size_t i = 0; i < L; ++i)
                        for (std::size_t j = 0; j < L; ++j)
                            rows[i][j] = mat->value().at(i, j);
                    write_csv((fs::path(out_dir) /
                               (s->id + "_" + tag + "_" + mod_names[m] + ".csv"))
                                  .string(),
                              header, rows);
                }
            }
        } else if (what == "features") {
            std::vector<std::string> header{"modality", "family"};
            for (std::size_t j = 0; j < model.cfg.d; ++j)
                header.push_back("f" + std::to_string(j));
            std::ofstream f((fs::path(out_dir) / (s->id + "_features.csv")).string(),
                            std::ios::trunc);
            for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
            f << "\n";
            for (std::size_t m : idx) {
                for (const auto& [family, var] :
                     {std::pair{"common", &tr.common[m]},
                      std::pair{"specific", &tr.specific[m]},
                      std::pair{"complementary", &tr.complementary[m]}}) {
                    mmcl::Tensor pooled = mmcl::mean_pool_time(*var).value();
                    f << mod_names[m] << "," << family;
                    for (std::size_t j = 0; j < pooled.size(); ++j)
                        f << "," << csv_escape(pooled[j]);
                    f << "\n";
                }
            }
        } else {
            throw mmcl::ConfigError("inspect: --what must be actions, weights or features");
        }
    }
    std::cout << "inspect dumps written under " << out_dir << "\n";
    return 0;
}

int cmd_gradcheck() {
    bool ok = true;
    for (const mmcl::GradCheckEntry& e : mmcl::catalog_gradcheck()) {
        const bool pass = e.max_rel_error < 1e-5;
        ok = ok && pass;
        std::printf("%-14s max_rel_error %.3e %s\n", e.op.c_str(), e.max_rel_error,
                    pass ? "ok" : "FAIL");
    }
    const double e2e = mmcl::end_to_end_gradcheck();
    const bool pass = e2e < 1e-4;
    ok = ok && pass;
    std::printf("%-14s max_rel_error %.3e %s\n", "end-to-end", e2e, pass ? "ok" : "FAIL");
    return ok ? 0 : kExitNumeric;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    mmcl::SyntheticSpec spec =
        mmcl::synthetic_spec_from_json(load_json_file(spec_path, "synthetic spec"));
    mmcl::SyntheticData data = mmcl::generate_synthetic(spec);
    mmcl::write_dataset(data.dataset, out_dir);
    write_json_file((fs::path(out_dir) / "spec.json").string(),
                    mmcl::synthetic_spec_to_json(spec));
    std::vector<std::string> header{"step", "informative_v", "informative_a",
                                    "informative_t"};
    std::vector<std::vector<double>> rows(spec.length);
    for (std::size_t t = 0; t < spec.length; ++t) {
        rows[t] = {static_cast<double>(t), data.informative_mask.at(t, 0),
                   data.informative_mask.at(t, 1), data.informative_mask.at(t, 2)};
    }
    write_csv((fs::path(out_dir) / "informative_mask.csv").string(), header, rows);
    std::cout << "synthetic dataset (" << spec.n_samples << " samples) under " << out_dir
              << "\n";
    return 0;
}

int cmd_infogain(const std::string& model_path, const std::string& data_path,
                 const std::string& out_path, std::size_t probe_epochs, double probe_lr,
                 std::uint64_t probe_seed) {
    mmcl::MmclModel model = mmcl::load_checkpoint(model_path);
    mmcl::Dataset data = mmcl::load_dataset(data_path);
    mmcl::ProbeConfig pc;
    pc.epochs = probe_epochs;
    pc.lr = probe_lr;
    pc.seed = probe_seed;
    mmcl::InfoGainReport rep = mmcl::info_gain_protocol(model, data, pc);
    write_json_file(out_path, mmcl::info_gain_to_json(rep));
    std::cout << "information gain matrix written to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal collaborative learning pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_path, val_path, model_path, out_path, what, spec_path;
    std::vector<std::string> variants, sample_ids;
    bool sweep_all = false;
    std::optional<std::uint64_t> seed;
    std::size_t probe_epochs = 100;
    double probe_lr = 0.05;
    std::uint64_t probe_seed = 0;

    CLI::App* train = app.add_subcommand("train", "train a model from a config and manifest");
    train->add_option("--config", config_path)->required();
    train->add_option("--data", data_path)->required();
    train->add_option("--out", out_path)->required();
    train->add_option("--seed", seed);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--model", model_path)->required();
    eval->add_option("--data", data_path)->required();
    eval->add_option("--out", out_path)->required();

    CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate ablation variants");
    ablate->add_option("--config", config_path)->required();
    ablate->add_option("--data", data_path)->required();
    ablate->add_option("--val-data", val_path);
    ablate->add_option("--variant", variants);
    ablate->add_flag("--all", sweep_all);
    ablate->add_option("--out", out_path)->required();

    CLI::App* inspect = app.add_subcommand("inspect", "dump actions/weights/features as CSV");
    inspect->add_option("--model", model_path)->required();
    inspect->add_option("--data", data_path)->required();
    inspect->add_option("--what", what)->required();
    inspect->add_option("--out", out_path)->required();
    inspect->add_option("--sample", sample_ids);

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every primitive");

    CLI::App* synth = app.add_subcommand("synth", "materialize a synthetic dataset");
    synth->add_option("--spec", spec_path)->required();
    synth->add_option("--out", out_path)->required();

    CLI::App* infogain =
        app.add_subcommand("infogain", "information gain rate over feature families");
    infogain->add_option("--model", model_path)->required();
    infogain->add_option("--data", data_path)->required();
    infogain->add_option("--out", out_path)->required();
    infogain->add_option("--probe-epochs", probe_epochs);
    infogain->add_option("--probe-lr", probe_lr);
    infogain->add_option("--probe-seed", probe_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? kExitConfig : 0;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, data_path, out_path, seed);
        if (eval->parsed()) return cmd_eval(model_path, data_path, out_path);
        if (ablate->parsed())
            return cmd_ablate(config_path, data_path, val_path, variants, sweep_all,
                              out_path);
        if (inspect->parsed())
            return cmd_inspect(model_path, data_path, what, out_path, sample_ids);
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (synth->parsed()) return cmd_synth(spec_path, out_path);
        if (infogain->parsed())
            return cmd_infogain(model_path, data_path, out_path, probe_epochs, probe_lr,
                                probe_seed);
    } catch (const mmcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mmcl::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mmcl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const mmcl::MmfError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const mmcl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
