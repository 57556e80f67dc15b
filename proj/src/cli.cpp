#include "bolt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bolt/experiment.hpp"

namespace bolt {

namespace {

namespace fs = std::filesystem;

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

/// One appended record per CLI run: command, config snapshot, metrics, seed.
void append_record(const std::string& log_path, const std::string& command,
                   const std::map<std::string, std::string>& config,
                   const std::map<std::string, double>& metrics, std::uint64_t seed) {
    nlohmann::json record;
    record["command"] = command;
    record["config"] = config;
    record["metrics"] = metrics;
    record["seed"] = seed;
    record["timestamp"] = iso8601_now();
    std::ofstream out(log_path, std::ios::app);
    if (!out) throw IoError("cannot append to log '" + log_path + "'");
    out << record.dump() << "\n";
}

bool wildcard_match(const std::string& text, const std::string& pattern) {
    std::size_t ti = 0, pi = 0, star = std::string::npos, star_ti = 0;
    while (ti < text.size()) {
        if (pi < pattern.size() && (pattern[pi] == text[ti])) {
            ++ti;
            ++pi;
        } else if (pi < pattern.size() && pattern[pi] == '*') {
            star = pi++;
            star_ti = ti;
        } else if (star != std::string::npos) {
            pi = star + 1;
            ti = ++star_ti;
        } else {
            return false;
        }
    }
    while (pi < pattern.size() && pattern[pi] == '*') ++pi;
    return pi == pattern.size();
}

/// Expand '*' patterns against the filesystem; plain paths pass through.
/// The result is sorted so source ordering is canonical.
std::vector<std::string> expand_sources(const std::vector<std::string>& patterns) {
    std::vector<std::string> out;
    for (const auto& pattern : patterns) {
        if (pattern.find('*') == std::string::npos) {
            out.push_back(pattern);
            continue;
        }
        const fs::path p(pattern);
        const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
        const std::string stem = p.filename().string();
        if (!fs::is_directory(dir))
            throw ValidationError("no such directory: '" + dir.string() + "'");
        for (const auto& item : fs::directory_iterator(dir))
            if (item.is_regular_file() && wildcard_match(item.path().filename().string(), stem))
                out.push_back(item.path().string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ValidationError("source pattern matched no files");
    return out;
}

std::vector<double> parse_csv_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw ValidationError("empty list: '" + text + "'");
    return out;
}

std::vector<int> parse_csv_ints(const std::string& text) {
    std::vector<int> out;
    for (const double v : parse_csv_doubles(text)) out.push_back(static_cast<int>(v));
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
}

std::vector<TaskVector> task_vectors_from_files(const TensorContainer& base,
                                                const std::vector<std::string>& source_paths) {
    std::vector<TaskVector> out;
    out.reserve(source_paths.size());
    for (const auto& path : source_paths)
        out.push_back(compute_task_vector(load_container(path), base));
    return out;
}

struct SharedFlags {
    std::uint64_t seed = 0;
    std::string out;
    std::string log = "bolt_log.jsonl";
};

void add_shared(CLI::App* cmd, SharedFlags& flags, bool needs_out = true) {
    cmd->add_option("--seed", flags.seed, "run seed");
    auto* out = cmd->add_option("--out", flags.out, "output path");
    if (needs_out) out->required();
    cmd->add_option("--log", flags.log, "results log (JSON lines, appended)");
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"spectral-basis transfer pipeline for the synthetic task family"};
    app.require_subcommand(1);

    int exit_code = 0;
    std::function<void()> action;

    // ---- gen ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a task family and its datasets");
    SharedFlags gen_flags;
    add_shared(gen, gen_flags);
    auto gen_cfg = std::make_shared<ExperimentConfig>();
    gen->add_option("--n-tasks", gen_cfg->family.n_source_tasks, "number of source tasks");
    gen->add_option("--dim", gen_cfg->family.input_dim, "input dimension");
    gen->add_option("--classes", gen_cfg->family.classes, "class count");
    gen->add_option("--hidden", gen_cfg->family.hidden, "hidden width");
    gen->add_option("--noise", gen_cfg->family.noise_sigma, "sample noise scale");
    gen->add_option("--n-train", gen_cfg->n_train, "train samples per task");
    gen->add_option("--n-test", gen_cfg->n_test, "test samples per task");
    gen->callback([&, gen_cfg] {
        action = [&, gen_cfg] {
            const auto& f = gen_flags;
            fs::create_directories(f.out);
            const TaskFamily family = make_task_family(f.seed, gen_cfg->family);
            save_container(family_to_container(family), fs::path(f.out) / "family.btc");

            const auto save_ds = [&](const Dataset& d, const std::string& name) {
                save_container(dataset_to_container(d, name), fs::path(f.out) / (name + ".btc"));
            };
            save_ds(sample_batch(family, Eigen::Vector4d::Zero(), gen_cfg->n_train,
                                 derived_seed(f.seed, seed_tags::anchor_train)),
                    "anchor_train");
            save_ds(sample_batch(family, Eigen::Vector4d::Zero(), gen_cfg->n_test,
                                 derived_seed(f.seed, seed_tags::anchor_test)),
                    "anchor_test");
            for (int t = 0; t < gen_cfg->family.n_source_tasks; ++t)
                save_ds(sample_batch(family, t, gen_cfg->n_train,
                                     derived_seed(f.seed, seed_tags::source_train_base +
                                                              static_cast<std::uint64_t>(t))),
                        "src" + std::to_string(t) + "_train");
            save_ds(sample_batch(family, family.target_angles, gen_cfg->n_train,
                                 derived_seed(f.seed, seed_tags::target_train)),
                    "target_train");
            save_ds(sample_batch(family, family.target_angles, gen_cfg->n_test,
                                 derived_seed(f.seed, seed_tags::target_test)),
                    "target_test");

            append_record(f.log, "gen",
                          {{"out", f.out},
                           {"n_tasks", std::to_string(gen_cfg->family.n_source_tasks)},
                           {"n_train", std::to_string(gen_cfg->n_train)},
                           {"n_test", std::to_string(gen_cfg->n_test)}},
                          {{"datasets_written",
                            static_cast<double>(gen_cfg->family.n_source_tasks + 4)}},
                          f.seed);
        };
    });

    // ---- pretrain ----------------------------------------------------------
    auto* pretrain = app.add_subcommand("pretrain", "train the base model on the anchor task");
    SharedFlags pre_flags;
    add_shared(pretrain, pre_flags);
    auto pre_opts = std::make_shared<std::map<std::string, std::string>>();
    auto pre_epochs = std::make_shared<int>(30);
    auto pre_lr = std::make_shared<double>(5e-3);
    auto pre_family = std::make_shared<std::string>();
    auto pre_data = std::make_shared<std::string>();
    pretrain->add_option("--family", *pre_family, "family container")->required();
    pretrain->add_option("--data", *pre_data, "anchor training dataset")->required();
    pretrain->add_option("--epochs", *pre_epochs, "training epochs");
    pretrain->add_option("--lr", *pre_lr, "peak learning rate");
    pretrain->callback([&, pre_epochs, pre_lr, pre_family, pre_data] {
        action = [&, pre_epochs, pre_lr, pre_family, pre_data] {
            const auto& f = pre_flags;
            const TaskFamily family = family_from_container(load_container(*pre_family));
            const Dataset data = dataset_from_container(load_container(*pre_data));
            const ToyModel initial =
                init_toy_model(family.config.input_dim, family.config.hidden,
                               family.config.classes,
                               derived_seed(f.seed, seed_tags::pretrain_init));
            const ToyModel trained =
                finetune_full(initial, data, *pre_epochs, *pre_lr,
                              derived_seed(f.seed, seed_tags::pretrain_shuffle));
            const TensorContainer out = toy_model_to_container(trained, "theta0");
            save_container(out, f.out);
            append_record(f.log, "pretrain",
                          {{"family", *pre_family},
                           {"data", *pre_data},
                           {"epochs", std::to_string(*pre_epochs)},
                           {"lr", format_double(*pre_lr)},
                           {"out", f.out}},
                          {{"train_acc", evaluate(out, data)}}, f.seed);
        };
    });

    // ---- finetune-sources ----------------------------------------------------
    auto* ft = app.add_subcommand("finetune-sources",
                                  "fine-tune the base model on every source task");
    SharedFlags ft_flags;
    add_shared(ft, ft_flags);
    auto ft_base = std::make_shared<std::string>();
    auto ft_data_dir = std::make_shared<std::string>();
    auto ft_epochs = std::make_shared<int>(12);
    auto ft_lr = std::make_shared<double>(2e-3);
    ft->add_option("--base", *ft_base, "base checkpoint")->required();
    ft->add_option("--data-dir", *ft_data_dir, "directory with src<i>_train.btc")->required();
    ft->add_option("--epochs", *ft_epochs, "training epochs");
    ft->add_option("--lr", *ft_lr, "peak learning rate");
    ft->callback([&, ft_base, ft_data_dir, ft_epochs, ft_lr] {
        action = [&, ft_base, ft_data_dir, ft_epochs, ft_lr] {
            const auto& f = ft_flags;
            const TensorContainer base = load_container(*ft_base);
            const ToyModel base_model = toy_model_from_container(base);
            fs::create_directories(f.out);
            std::map<std::string, double> metrics;
            for (int t = 0;; ++t) {
                const fs::path data_path =
                    fs::path(*ft_data_dir) / ("src" + std::to_string(t) + "_train.btc");
                if (!fs::exists(data_path)) {
                    if (t == 0) throw ValidationError("no src0_train.btc in " + *ft_data_dir);
                    break;
                }
                const Dataset data = dataset_from_container(load_container(data_path));
                const ToyModel tuned = finetune_full(
                    base_model, data, *ft_epochs, *ft_lr,
                    derived_seed(f.seed,
                                 seed_tags::finetune_base + static_cast<std::uint64_t>(t)));
                const std::string id = "src_" + std::to_string(t);
                const TensorContainer out = toy_model_to_container(tuned, id);
                save_container(out, fs::path(f.out) / (id + ".btc"));
                metrics[id + "_train_acc"] = evaluate(out, data);
            }
            append_record(f.log, "finetune-sources",
                          {{"base", *ft_base},
                           {"data_dir", *ft_data_dir},
                           {"epochs", std::to_string(*ft_epochs)},
                           {"lr", format_double(*ft_lr)},
                           {"out", f.out}},
                          metrics, f.seed);
        };
    });

    // ---- build-basis ---------------------------------------------------------
    auto* bb = app.add_subcommand("build-basis", "build shared spectral bases from checkpoints");
    SharedFlags bb_flags;
    add_shared(bb, bb_flags);
    auto bb_base = std::make_shared<std::string>();
    auto bb_sources = std::make_shared<std::vector<std::string>>();
    auto bb_k = std::make_shared<int>(1);
    auto bb_cap = std::make_shared<int>(0);
    auto bb_eps = std::make_shared<double>(1e-8);
    bb->add_option("--base", *bb_base, "base checkpoint")->required();
    bb->add_option("--sources", *bb_sources, "source checkpoints (glob ok)")->required();
    bb->add_option("--per-task-k", *bb_k, "singular directions kept per source");
    bb->add_option("--rank-cap", *bb_cap, "truncate the stacked basis to this rank");
    bb->add_option("--eps", *bb_eps, "whitening regularizer recorded with the basis");
    bb->callback([&, bb_base, bb_sources, bb_k, bb_cap, bb_eps] {
        action = [&, bb_base, bb_sources, bb_k, bb_cap, bb_eps] {
            const auto& f = bb_flags;
            const TensorContainer base = load_container(*bb_base);
            const auto paths = expand_sources(*bb_sources);
            const auto task_vectors = task_vectors_from_files(base, paths);
            const std::optional<int> cap =
                *bb_cap > 0 ? std::optional<int>(*bb_cap) : std::nullopt;
            const BasisSet bases = build_basis_set(task_vectors, *bb_k, *bb_eps, cap);

            std::map<std::string, double> metrics;
            std::string sources_meta;
            for (const auto& tv : task_vectors) {
                if (!sources_meta.empty()) sources_meta += ",";
                sources_meta += tv.source_id;
            }
            for (const auto& [layer, basis] : bases) {
                metrics["r::" + layer] = basis.r;
                metrics["eff_rank_u::" + layer] = basis.effective_rank_u;
                metrics["eff_rank_v::" + layer] = basis.effective_rank_v;
                if (basis.effective_rank_u < basis.r || basis.effective_rank_v < basis.r)
                    std::cerr << "warning: layer '" << layer << "' stack is rank deficient ("
                              << basis.effective_rank_u << "/" << basis.effective_rank_v << " of "
                              << basis.r << "); consider --rank-cap\n";
            }
            std::map<std::string, std::string> meta = {
                {"eps", format_double(*bb_eps)},
                {"per_task_k", std::to_string(*bb_k)},
                {"sources", sources_meta}};
            save_container(basis_set_to_container(bases, meta), f.out);
            append_record(f.log, "build-basis",
                          {{"base", *bb_base},
                           {"per_task_k", std::to_string(*bb_k)},
                           {"rank_cap", std::to_string(*bb_cap)},
                           {"eps", format_double(*bb_eps)},
                           {"sources", sources_meta},
                           {"out", f.out}},
                          metrics, f.seed);
        };
    });

    // ---- init ----------------------------------------------------------------
    auto* init = app.add_subcommand("init",
                                    "pool source coefficients and pick the global scale");
    SharedFlags init_flags;
    add_shared(init, init_flags);
    auto init_base = std::make_shared<std::string>();
    auto init_basis = std::make_shared<std::string>();
    auto init_sources = std::make_shared<std::vector<std::string>>();
    auto init_probe = std::make_shared<std::string>();
    auto init_grid = std::make_shared<std::string>("1,3,5,7,10");
    auto init_probe_batches = std::make_shared<int>(4);
    auto init_batch = std::make_shared<int>(32);
    init->add_option("--base", *init_base, "base checkpoint")->required();
    init->add_option("--basis", *init_basis, "basis container")->required();
    init->add_option("--sources", *init_sources, "source checkpoints (glob ok)")->required();
    init->add_option("--probe", *init_probe, "labeled probe dataset")->required();
    init->add_option("--alpha-grid", *init_grid, "comma list of candidate scales");
    init->add_option("--probe-batches", *init_probe_batches, "mini-batches for the sweep");
    init->add_option("--batch", *init_batch, "probe batch size");
    init->callback([&, init_base, init_basis, init_sources, init_probe, init_grid,
                    init_probe_batches, init_batch] {
        action = [&, init_base, init_basis, init_sources, init_probe, init_grid,
                  init_probe_batches, init_batch] {
            const auto& f = init_flags;
            const TensorContainer base = load_container(*init_base);
            const BasisSet bases = basis_set_from_container(load_container(*init_basis));
            const auto task_vectors =
                task_vectors_from_files(base, expand_sources(*init_sources));
            const SigmaSet pooled = pooled_sigma(base, task_vectors, bases);
            const Dataset probe_data = dataset_from_container(load_container(*init_probe));
            const auto probe = make_probe_batches(probe_data, *init_probe_batches, *init_batch,
                                                  derived_seed(f.seed, seed_tags::probe));
            const AlphaSweepResult sweep =
                alpha_sweep(base, bases, pooled, parse_csv_doubles(*init_grid), probe, evaluate);
            const SigmaSet sigma0 =
                scale_sigma_set(pooled, sweep.alpha_hat, SigmaOrigin::rescaled);

            std::map<std::string, std::string> meta = {
                {"alpha_hat", format_double(sweep.alpha_hat)}, {"origin", "rescaled"}};
            save_container(sigma_set_to_container(sigma0, meta), f.out);

            std::map<std::string, double> metrics{{"alpha_hat", sweep.alpha_hat}};
            for (std::size_t i = 0; i < sweep.grid.size(); ++i)
                metrics["score_alpha_" + format_double(sweep.grid[i])] = sweep.scores[i];
            append_record(f.log, "init",
                          {{"base", *init_base},
                           {"basis", *init_basis},
                           {"probe", *init_probe},
                           {"alpha_grid", *init_grid},
                           {"probe_batches", std::to_string(*init_probe_batches)},
                           {"out", f.out}},
                          metrics, f.seed);
        };
    });

    // ---- adapt -----------------------------------------------------------------
    auto* adapt = app.add_subcommand("adapt", "few-shot sigma-only adaptation");
    SharedFlags adapt_flags;
    add_shared(adapt, adapt_flags);
    auto ad_base = std::make_shared<std::string>();
    auto ad_basis = std::make_shared<std::string>();
    auto ad_sigma = std::make_shared<std::string>();
    auto ad_train = std::make_shared<std::string>();
    auto ad_test = std::make_shared<std::string>();
    auto ad_report = std::make_shared<std::string>();
    auto ad_opt = std::make_shared<OptimState>();
    auto ad_shots = std::make_shared<int>(16);
    adapt->add_option("--base", *ad_base, "base checkpoint")->required();
    adapt->add_option("--basis", *ad_basis, "basis container")->required();
    adapt->add_option("--sigma", *ad_sigma, "initial sigma container")->required();
    adapt->add_option("--train", *ad_train, "target training dataset")->required();
    adapt->add_option("--test", *ad_test, "target test dataset");
    adapt->add_option("--shots", *ad_shots, "labeled examples per class")
        ->check(CLI::IsMember({1, 2, 4, 8, 16}));
    adapt->add_option("--epochs", ad_opt->epochs, "training epochs");
    adapt->add_option("--lr", ad_opt->lr_max, "peak learning rate");
    adapt->add_option("--batch", ad_opt->batch_size, "batch size");
    adapt->add_option("--warmup-epochs", ad_opt->warmup_epochs, "warmup epochs");
    adapt->add_option("--report", *ad_report, "write the per-epoch JSONL report here");
    adapt->callback([&, ad_base, ad_basis, ad_sigma, ad_train, ad_test, ad_report, ad_opt,
                     ad_shots] {
        action = [&, ad_base, ad_basis, ad_sigma, ad_train, ad_test, ad_report, ad_opt,
                  ad_shots] {
            const auto& f = adapt_flags;
            const TensorContainer base = load_container(*ad_base);
            const BasisSet bases = basis_set_from_container(load_container(*ad_basis));
            const SigmaSet sigma0 = sigma_set_from_container(load_container(*ad_sigma));
            const Dataset train = dataset_from_container(load_container(*ad_train));
            const Dataset support =
                kshot_support(train, *ad_shots, derived_seed(f.seed, seed_tags::kshot));

            const auto [trained, report] =
                train_sigma(base, bases, sigma0, support, *ad_opt,
                            derived_seed(f.seed, seed_tags::adapt_train));

            std::map<std::string, std::string> meta = {{"origin", "trained"}};
            save_container(sigma_set_to_container(trained, meta), f.out);
            const std::string jsonl = train_report_to_jsonl(report);
            if (ad_report->empty())
                std::cout << jsonl;
            else
                write_text(*ad_report, jsonl);

            std::map<std::string, double> metrics{
                {"support_acc", report.final_accuracy},
                {"sigma_param_count", static_cast<double>(report.sigma_param_count)},
                {"init_support_acc", evaluate(compose_model(base, bases, sigma0), support)}};
            if (!ad_test->empty()) {
                const Dataset test = dataset_from_container(load_container(*ad_test));
                metrics["test_acc"] =
                    evaluate(compose_model(base, bases, trained), test);
                metrics["init_test_acc"] =
                    evaluate(compose_model(base, bases, sigma0), test);
            }
            append_record(f.log, "adapt",
                          {{"base", *ad_base},
                           {"basis", *ad_basis},
                           {"sigma", *ad_sigma},
                           {"train", *ad_train},
                           {"test", *ad_test},
                           {"shots", std::to_string(*ad_shots)},
                           {"epochs", std::to_string(ad_opt->epochs)},
                           {"lr", format_double(ad_opt->lr_max)},
                           {"batch", std::to_string(ad_opt->batch_size)},
                           {"warmup_epochs", std::to_string(ad_opt->warmup_epochs)},
                           {"out", f.out}},
                          metrics, f.seed);
        };
    });

    // ---- tta -------------------------------------------------------------------
    auto* tta_cmd = app.add_subcommand("tta", "label-free test-time adaptation");
    SharedFlags tta_flags;
    add_shared(tta_cmd, tta_flags);
    auto tt_base = std::make_shared<std::string>();
    auto tt_basis = std::make_shared<std::string>();
    auto tt_sigma = std::make_shared<std::string>();
    auto tt_data = std::make_shared<std::string>();
    auto tt_report = std::make_shared<std::string>();
    auto tt_cfg = std::make_shared<TtaConfig>();
    auto tt_mode = std::make_shared<std::string>("temperature");
    tta_cmd->add_option("--base", *tt_base, "base checkpoint")->required();
    tta_cmd->add_option("--basis", *tt_basis, "basis container")->required();
    tta_cmd->add_option("--sigma", *tt_sigma, "initial sigma container")->required();
    tta_cmd->add_option("--data", *tt_data, "target dataset (labels ignored for adaptation)")
        ->required();
    tta_cmd->add_option("--tau", tt_cfg->tau, "confidence threshold");
    tta_cmd->add_option("--temperature", tt_cfg->temperature, "sharpening temperature");
    tta_cmd->add_option("--sharpen-mode", *tt_mode, "temperature|literal");
    tta_cmd->add_option("--aug-sigma", tt_cfg->aug_noise_sigma, "strong-view noise scale");
    tta_cmd->add_option("--epochs", tt_cfg->epochs, "adaptation epochs");
    tta_cmd->add_option("--batch", tt_cfg->batch_size, "two-stream batch size (even)");
    tta_cmd->add_option("--report", *tt_report, "write the per-epoch JSONL report here");
    tta_cmd->callback([&, tt_base, tt_basis, tt_sigma, tt_data, tt_report, tt_cfg, tt_mode] {
        action = [&, tt_base, tt_basis, tt_sigma, tt_data, tt_report, tt_cfg, tt_mode] {
            const auto& f = tta_flags;
            tt_cfg->sharpen_mode = sharpen_mode_from_string(*tt_mode);
            const TensorContainer base = load_container(*tt_base);
            const BasisSet bases = basis_set_from_container(load_container(*tt_basis));
            const SigmaSet sigma0 = sigma_set_from_container(load_container(*tt_sigma));
            const Dataset data = dataset_from_container(load_container(*tt_data));

            const auto [adapted, report] =
                tta_run(base, bases, sigma0, data.features, *tt_cfg,
                        derived_seed(f.seed, seed_tags::tta));

            std::map<std::string, std::string> meta = {{"origin", "trained"}};
            save_container(sigma_set_to_container(adapted, meta), f.out);
            const std::string jsonl = tta_report_to_jsonl(report);
            if (tt_report->empty())
                std::cout << jsonl;
            else
                write_text(*tt_report, jsonl);

            std::map<std::string, double> metrics{
                {"trusted_count", static_cast<double>(report.trusted_count)},
                {"k_per_class", static_cast<double>(report.k_per_class)},
                {"init_acc", evaluate(compose_model(base, bases, sigma0), data)},
                {"tta_acc", evaluate(compose_model(base, bases, adapted), data)}};
            append_record(f.log, "tta",
                          {{"base", *tt_base},
                           {"basis", *tt_basis},
                           {"sigma", *tt_sigma},
                           {"data", *tt_data},
                           {"tau", format_double(tt_cfg->tau)},
                           {"temperature", format_double(tt_cfg->temperature)},
                           {"sharpen_mode", *tt_mode},
                           {"aug_sigma", format_double(tt_cfg->aug_noise_sigma)},
                           {"epochs", std::to_string(tt_cfg->epochs)},
                           {"out", f.out}},
                          metrics, f.seed);
        };
    });

    // ---- merge -----------------------------------------------------------------
    auto* merge = app.add_subcommand("merge", "task-arithmetic baseline");
    SharedFlags merge_flags;
    add_shared(merge, merge_flags);
    auto mg_base = std::make_shared<std::string>();
    auto mg_sources = std::make_shared<std::vector<std::string>>();
    auto mg_alphas = std::make_shared<std::string>();
    merge->add_option("--base", *mg_base, "base checkpoint")->required();
    merge->add_option("--sources", *mg_sources, "source checkpoints (glob ok)")->required();
    merge->add_option("--alphas", *mg_alphas, "comma list of blending coefficients")->required();
    merge->callback([&, mg_base, mg_sources, mg_alphas] {
        action = [&, mg_base, mg_sources, mg_alphas] {
            const auto& f = merge_flags;
            const TensorContainer base = load_container(*mg_base);
            const auto task_vectors =
                task_vectors_from_files(base, expand_sources(*mg_sources));
            const auto alphas = parse_csv_doubles(*mg_alphas);
            TensorContainer merged = apply_task_arithmetic(base, task_vectors, alphas);
            merged.model_id = "merged";
            save_container(merged, f.out);
            append_record(f.log, "merge",
                          {{"base", *mg_base}, {"alphas", *mg_alphas}, {"out", f.out}},
                          {{"n_sources", static_cast<double>(task_vectors.size())}}, f.seed);
        };
    });

    // ---- ablate ----------------------------------------------------------------
    auto* ablate = app.add_subcommand("ablate", "rank / source-count ablation grid");
    SharedFlags ab_flags;
    add_shared(ablate, ab_flags);
    auto ab_ranks = std::make_shared<std::string>("1,2,4,8");
    auto ab_ntasks = std::make_shared<std::string>("2,4,8");
    auto ab_seeds = std::make_shared<int>(3);
    auto ab_cfg = std::make_shared<ExperimentConfig>();
    ablate->add_option("--ranks", *ab_ranks, "comma list of basis ranks");
    ablate->add_option("--n-tasks", *ab_ntasks, "comma list of source counts");
    ablate->add_option("--seeds", *ab_seeds, "number of seeds");
    ablate->add_option("--shots", ab_cfg->shots, "support shots per class")
        ->check(CLI::IsMember({1, 2, 4, 8, 16}));
    ablate->callback([&, ab_ranks, ab_ntasks, ab_seeds, ab_cfg] {
        action = [&, ab_ranks, ab_ntasks, ab_seeds, ab_cfg] {
            const auto& f = ab_flags;
            const auto cells = run_ablation(f.seed, *ab_seeds, parse_csv_ints(*ab_ranks),
                                            parse_csv_ints(*ab_ntasks), *ab_cfg);
            std::ostringstream csv;
            csv << "rank,n_tasks,seed,init_acc,adapted_acc,zero_init_acc\n";
            for (const auto& cell : cells)
                csv << cell.rank << "," << cell.n_tasks << "," << cell.seed << ","
                    << format_double(cell.init_acc) << "," << format_double(cell.adapted_acc)
                    << "," << format_double(cell.zero_init_acc) << "\n";
            write_text(f.out, csv.str());
            append_record(f.log, "ablate",
                          {{"ranks", *ab_ranks},
                           {"n_tasks", *ab_ntasks},
                           {"seeds", std::to_string(*ab_seeds)},
                           {"shots", std::to_string(ab_cfg->shots)},
                           {"out", f.out}},
                          {{"rows", static_cast<double>(cells.size())}}, f.seed);
        };
    });

    // ---- inspect ---------------------------------------------------------------
    auto* inspect = app.add_subcommand("inspect", "print a container's manifest");
    SharedFlags in_flags;
    add_shared(inspect, in_flags, /*needs_out=*/false);
    auto in_path = std::make_shared<std::string>();
    inspect->add_option("--in", *in_path, "container path")->required();
    inspect->callback([&, in_path] {
        action = [&, in_path] {
            const auto& f = in_flags;
            const TensorContainer c = load_container(*in_path);
            nlohmann::json manifest;
            manifest["format_version"] = c.format_version;
            manifest["model_id"] = c.model_id;
            manifest["role"] = role_to_string(c.role);
            manifest["metadata"] = c.metadata;
            nlohmann::json entries = nlohmann::json::array();
            for (const auto& e : c.entries) {
                nlohmann::json je;
                je["name"] = e.name;
                je["shape"] = e.shape;
                je["dtype"] = "f64";
                je["byte_len"] = e.numel() * 8;
                entries.push_back(std::move(je));
            }
            manifest["entries"] = std::move(entries);
            std::cout << manifest.dump(2) << "\n";
            append_record(f.log, "inspect", {{"in", *in_path}},
                          {{"entries", static_cast<double>(c.entries.size())}}, f.seed);
        };
    });

    try {
        std::vector<std::string> argv_str = args;
        std::vector<char*> argv;
        std::string program = "bolt";
        argv.push_back(program.data());
        for (auto& s : argv_str) argv.push_back(s.data());
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (action) action();
    } catch (const CLI::ParseError& e) {
        exit_code = app.exit(e);
        return exit_code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}

} // namespace bolt
