#include "bolt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bolt {

SourceLibrary build_source_library(std::uint64_t seed, const ExperimentConfig& cfg) {
    SourceLibrary lib;
    lib.family = make_task_family(seed, cfg.family);

    lib.anchor_train = sample_batch(lib.family, Eigen::Vector4d::Zero(), cfg.n_train,
                                    derived_seed(seed, seed_tags::anchor_train));
    lib.target_train = sample_batch(lib.family, lib.family.target_angles, cfg.n_train,
                                    derived_seed(seed, seed_tags::target_train));
    lib.target_test = sample_batch(lib.family, lib.family.target_angles, cfg.n_test,
                                   derived_seed(seed, seed_tags::target_test));

    const ToyModel initial =
        init_toy_model(cfg.family.input_dim, cfg.family.hidden, cfg.family.classes,
                       derived_seed(seed, seed_tags::pretrain_init));
    const ToyModel pretrained =
        finetune_full(initial, lib.anchor_train, cfg.pretrain_epochs, cfg.pretrain_lr,
                      derived_seed(seed, seed_tags::pretrain_shuffle));
    lib.theta0 = toy_model_to_container(pretrained, "theta0");

    // Fine-tune from the stored checkpoint, exactly as the CLI path does.
    const ToyModel theta0_model = toy_model_from_container(lib.theta0);
    for (int t = 0; t < cfg.family.n_source_tasks; ++t) {
        const Dataset task_data =
            sample_batch(lib.family, t, cfg.n_train,
                         derived_seed(seed, seed_tags::source_train_base +
                                                static_cast<std::uint64_t>(t)));
        const ToyModel tuned = finetune_full(
            theta0_model, task_data, cfg.finetune_epochs, cfg.finetune_lr,
            derived_seed(seed, seed_tags::finetune_base + static_cast<std::uint64_t>(t)));
        lib.source_checkpoints.push_back(
            toy_model_to_container(tuned, "src_" + std::to_string(t)));
    }
    return lib;
}

std::vector<TaskVector> library_task_vectors(const SourceLibrary& lib,
                                             const std::vector<int>& subset) {
    std::vector<int> chosen = subset;
    if (chosen.empty())
        for (int i = 0; i < static_cast<int>(lib.source_checkpoints.size()); ++i)
            chosen.push_back(i);

    std::vector<TaskVector> out;
    out.reserve(chosen.size());
    for (const int idx : chosen)
        out.push_back(compute_task_vector(
            lib.source_checkpoints[static_cast<std::size_t>(idx)], lib.theta0));
    return out;
}

BasisSet library_basis(const SourceLibrary& lib, int per_task_k, double eps,
                       std::optional<int> rank_cap, const std::vector<int>& subset) {
    return build_basis_set(library_task_vectors(lib, subset), per_task_k, eps, rank_cap);
}

SigmaSet pooled_sigma(const TensorContainer& theta0,
                      const std::vector<TaskVector>& task_vectors, const BasisSet& bases) {
    std::vector<SigmaSet> sets;
    sets.reserve(task_vectors.size());
    for (const auto& tv : task_vectors) sets.push_back(extract_sigma_set(tv, bases));
    return pool_sigma_sets(sets);
}

std::vector<Dataset> make_probe_batches(const Dataset& data, int n_batches, int batch_size,
                                        std::uint64_t seed) {
    if (data.empty()) throw ValidationError("make_probe_batches: empty dataset");
    if (n_batches < 1 || batch_size < 1)
        throw ValidationError("make_probe_batches: counts must be >= 1");

    Pcg64 rng(seed);
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    std::size_t pos = 0;

    std::vector<Dataset> batches;
    batches.reserve(static_cast<std::size_t>(n_batches));
    for (int b = 0; b < n_batches; ++b) {
        Dataset batch;
        batch.features.resize(batch_size, data.features.cols());
        batch.labels.resize(static_cast<std::size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
            if (pos == order.size()) {
                rng.shuffle(order);
                pos = 0;
            }
            const int src = order[pos++];
            batch.features.row(i) = data.features.row(src);
            batch.labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

InitResult initialize_sigma(const TensorContainer& theta0, const BasisSet& bases,
                            const SigmaSet& pooled, const Dataset& support,
                            const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto probe = make_probe_batches(support, cfg.probe_batches, cfg.adapt_opt.batch_size,
                                          derived_seed(seed, seed_tags::probe));
    InitResult out;
    out.sweep = alpha_sweep(theta0, bases, pooled, cfg.alpha_grid, probe, evaluate);
    out.sigma0 = scale_sigma_set(pooled, out.sweep.alpha_hat, SigmaOrigin::rescaled);
    return out;
}

BasisSet random_basis_like(const BasisSet& bases, std::uint64_t seed) {
    Pcg64 rng(seed);
    BasisSet random;
    for (const auto& [layer, basis] : bases) {
        StackedDirections stack;
        stack.r = basis.r;
        stack.u_stack = gaussian_matrix(rng, basis.u_orth.rows(), basis.r);
        stack.v_stack = gaussian_matrix(rng, basis.v_orth.rows(), basis.r);
        for (int j = 0; j < basis.r; ++j) stack.provenance.emplace_back("random", j);
        auto rb = orthogonalize(stack, 0.0);
        rb.layer_name = layer;
        random.emplace(layer, std::move(rb));
    }
    return random;
}

FewShotMetrics few_shot_experiment(std::uint64_t seed, const ExperimentConfig& cfg,
                                   bool with_full_ft, bool with_control) {
    const SourceLibrary lib = build_source_library(seed, cfg);
    const auto task_vectors = library_task_vectors(lib);
    const BasisSet bases = build_basis_set(task_vectors, cfg.per_task_k, cfg.eps, cfg.rank_cap);

    FewShotMetrics metrics;
    metrics.theta0_acc = evaluate(lib.theta0, lib.target_test);

    const Dataset support =
        kshot_support(lib.target_train, cfg.shots, derived_seed(seed, seed_tags::kshot));

    const SigmaSet pooled = pooled_sigma(lib.theta0, task_vectors, bases);
    const InitResult init = initialize_sigma(lib.theta0, bases, pooled, support, cfg, seed);
    metrics.alpha_hat = init.sweep.alpha_hat;
    metrics.init_acc = evaluate(compose_model(lib.theta0, bases, init.sigma0), lib.target_test);

    const auto [trained, report] =
        train_sigma(lib.theta0, bases, init.sigma0, support, cfg.adapt_opt,
                    derived_seed(seed, seed_tags::adapt_train));
    metrics.adapted_acc = evaluate(compose_model(lib.theta0, bases, trained), lib.target_test);
    metrics.sigma_param_count = report.sigma_param_count;

    if (with_full_ft) {
        const ToyModel tuned =
            finetune_full(toy_model_from_container(lib.theta0), support, cfg.adapt_opt.epochs,
                          cfg.adapt_opt.lr_max, derived_seed(seed, seed_tags::full_ft));
        metrics.full_ft_acc =
            evaluate(toy_model_to_container(tuned, "full_ft"), lib.target_test);
    }

    if (with_control) {
        const BasisSet control =
            random_basis_like(bases, derived_seed(seed, seed_tags::random_basis));
        const SigmaSet control_pooled = pooled_sigma(lib.theta0, task_vectors, control);
        const InitResult control_init =
            initialize_sigma(lib.theta0, control, control_pooled, support, cfg, seed);
        metrics.control_init_acc =
            evaluate(compose_model(lib.theta0, control, control_init.sigma0), lib.target_test);
        const auto [control_trained, control_report] =
            train_sigma(lib.theta0, control, control_init.sigma0, support, cfg.adapt_opt,
                        derived_seed(seed, seed_tags::adapt_train));
        metrics.control_adapted_acc =
            evaluate(compose_model(lib.theta0, control, control_trained), lib.target_test);
    }
    return metrics;
}

std::vector<AblationCell> run_ablation(std::uint64_t base_seed, int n_seeds,
                                       const std::vector<int>& ranks,
                                       const std::vector<int>& n_tasks_list,
                                       const ExperimentConfig& cfg) {
    if (n_seeds < 1 || ranks.empty() || n_tasks_list.empty())
        throw ValidationError("run_ablation: empty grid");
    for (const int n : n_tasks_list)
        if (n < 1 || n > cfg.family.n_source_tasks)
            throw ValidationError("run_ablation: n_tasks out of range");
    for (const int r : ranks)
        if (r < 1) throw ValidationError("run_ablation: rank must be >= 1");

    // Library and target support are per-seed; grid cells reuse them.
    struct SeedContext {
        SourceLibrary lib;
        Dataset support;
    };
    std::vector<SeedContext> contexts;
    contexts.reserve(static_cast<std::size_t>(n_seeds));
    for (int s = 0; s < n_seeds; ++s) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
        SeedContext ctx{build_source_library(seed, cfg), {}};
        ctx.support =
            kshot_support(ctx.lib.target_train, cfg.shots, derived_seed(seed, seed_tags::kshot));
        contexts.push_back(std::move(ctx));
    }

    std::vector<AblationCell> cells;
    for (const int rank : ranks) {
        for (const int n_tasks : n_tasks_list) {
            for (int s = 0; s < n_seeds; ++s) {
                const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
                const auto& ctx = contexts[static_cast<std::size_t>(s)];

                // Random source subset of the requested size, shared across ranks.
                std::vector<int> all(static_cast<std::size_t>(cfg.family.n_source_tasks));
                for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
                Pcg64 subset_rng(derived_seed(
                    seed, seed_tags::subset_base + static_cast<std::uint64_t>(n_tasks)));
                subset_rng.shuffle(all);
                const std::vector<int> subset(all.begin(), all.begin() + n_tasks);

                const int per_task_k = (rank + n_tasks - 1) / n_tasks;
                const auto task_vectors = library_task_vectors(ctx.lib, subset);
                const BasisSet bases =
                    build_basis_set(task_vectors, per_task_k, cfg.eps, rank);

                AblationCell cell;
                cell.rank = rank;
                cell.n_tasks = n_tasks;
                cell.seed = seed;

                const SigmaSet pooled = pooled_sigma(ctx.lib.theta0, task_vectors, bases);
                const InitResult init =
                    initialize_sigma(ctx.lib.theta0, bases, pooled, ctx.support, cfg, seed);
                cell.init_acc = evaluate(compose_model(ctx.lib.theta0, bases, init.sigma0),
                                         ctx.lib.target_test);

                const auto [trained, report] =
                    train_sigma(ctx.lib.theta0, bases, init.sigma0, ctx.support, cfg.adapt_opt,
                                derived_seed(seed, seed_tags::adapt_train));
                cell.adapted_acc = evaluate(compose_model(ctx.lib.theta0, bases, trained),
                                            ctx.lib.target_test);

                SigmaSet zeros;
                for (const auto& [layer, basis] : bases) {
                    SigmaVector sv;
                    sv.s = Eigen::VectorXd::Zero(basis.r);
                    sv.layer_name = layer;
                    sv.origin = SigmaOrigin::pooled;
                    zeros.emplace(layer, std::move(sv));
                }
                const auto [zero_trained, zero_report] =
                    train_sigma(ctx.lib.theta0, bases, zeros, ctx.support, cfg.adapt_opt,
                                derived_seed(seed, seed_tags::adapt_train));
                cell.zero_init_acc = evaluate(
                    compose_model(ctx.lib.theta0, bases, zero_trained), ctx.lib.target_test);

                cells.push_back(cell);
            }
        }
    }
    return cells;
}

TtaMetrics tta_experiment(std::uint64_t seed, const ExperimentConfig& cfg,
                          const TtaConfig& tta_cfg) {
    const SourceLibrary lib = build_source_library(seed, cfg);
    const auto task_vectors = library_task_vectors(lib);
    const BasisSet bases = build_basis_set(task_vectors, cfg.per_task_k, cfg.eps, cfg.rank_cap);

    const Dataset support =
        kshot_support(lib.target_train, cfg.shots, derived_seed(seed, seed_tags::kshot));
    const SigmaSet pooled = pooled_sigma(lib.theta0, task_vectors, bases);
    const InitResult init = initialize_sigma(lib.theta0, bases, pooled, support, cfg, seed);

    TtaMetrics metrics;
    metrics.init_acc =
        evaluate(compose_model(lib.theta0, bases, init.sigma0), lib.target_test);

    // The adaptation itself sees features only.
    const auto [adapted, report] = tta_run(lib.theta0, bases, init.sigma0,
                                           lib.target_test.features, tta_cfg,
                                           derived_seed(seed, seed_tags::tta));
    metrics.report = report;
    metrics.tta_acc =
        evaluate(compose_model(lib.theta0, bases, adapted), lib.target_test);
    return metrics;
}

} // namespace bolt
