#include "bolt/taskgen.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "bolt/adapt.hpp"
#include "bolt/rng.hpp"

namespace bolt {

namespace {

double spectral_norm(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

Eigen::MatrixXd random_skew(Pcg64& rng, int dim) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) {
        for (int j = i + 1; j < dim; ++j) {
            const double g = rng.normal();
            a(i, j) = g;
            a(j, i) = -g;
        }
    }
    return a / spectral_norm(a); // unit spectral norm; stays skew entry-wise
}

} // namespace

TaskFamily make_task_family(std::uint64_t seed, const FamilyConfig& config) {
    if (config.input_dim < 2 || config.classes < 2 || config.hidden < 1 ||
        config.n_source_tasks < 1)
        throw ValidationError("make_task_family: dimensions must be positive (input_dim >= 2)");
    if (config.noise_sigma < 0.0 || config.angle_min > config.angle_max)
        throw ValidationError("make_task_family: bad noise or angle range");

    Pcg64 rng(seed);
    TaskFamily family;
    family.config = config;
    family.seed = seed;

    family.anchor_means = gaussian_matrix(rng, config.classes, config.input_dim);
    for (int c = 0; c < config.classes; ++c)
        family.anchor_means.row(c) *= config.anchor_norm / family.anchor_means.row(c).norm();

    family.shared_generators.reserve(kFamilyGenerators);
    for (int g = 0; g < kFamilyGenerators; ++g)
        family.shared_generators.push_back(random_skew(rng, config.input_dim));

    const auto draw_angles = [&]() {
        Eigen::Vector4d angles;
        for (int j = 0; j < kFamilyGenerators; ++j)
            angles(j) = config.angle_min + rng.uniform() * (config.angle_max - config.angle_min);
        return angles;
    };
    family.task_angles.reserve(config.n_source_tasks);
    for (int t = 0; t < config.n_source_tasks; ++t) family.task_angles.push_back(draw_angles());
    family.target_angles = draw_angles();
    return family;
}

Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a, double tol) {
    if (a.rows() != a.cols()) throw ValidationError("matrix_exponential: matrix must be square");

    Eigen::MatrixXd scaled = a;
    int squarings = 0;
    while (scaled.norm() > 0.5) {
        scaled *= 0.5;
        ++squarings;
    }

    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    Eigen::MatrixXd result = identity;
    Eigen::MatrixXd term = identity;
    for (int k = 1; k <= 64; ++k) {
        term = (term * scaled) / static_cast<double>(k);
        result += term;
        if (term.norm() <= tol * result.norm()) break;
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

Eigen::MatrixXd rotation_matrix(const TaskFamily& family, const Eigen::Vector4d& angles) {
    Eigen::MatrixXd skew =
        Eigen::MatrixXd::Zero(family.config.input_dim, family.config.input_dim);
    for (int j = 0; j < kFamilyGenerators; ++j)
        skew += angles(j) * family.shared_generators[static_cast<std::size_t>(j)];
    return matrix_exponential(skew);
}

Dataset sample_batch(const TaskFamily& family, const Eigen::Vector4d& angles, int n,
                     std::uint64_t seed) {
    if (n < 1) throw ValidationError("sample_batch: n must be >= 1");

    const Eigen::MatrixXd rotation = rotation_matrix(family, angles);
    const int d = family.config.input_dim;
    const int classes = family.config.classes;

    Pcg64 rng(seed);
    Dataset out;
    out.features.resize(n, d);
    out.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(classes)));
        out.labels[static_cast<std::size_t>(i)] = label;
        Eigen::VectorXd x = rotation * family.anchor_means.row(label).transpose();
        for (int j = 0; j < d; ++j) x(j) += family.config.noise_sigma * rng.normal();
        out.features.row(i) = x.transpose();
    }
    return out;
}

Dataset sample_batch(const TaskFamily& family, int task_index, int n, std::uint64_t seed) {
    if (task_index < 0 || task_index >= static_cast<int>(family.task_angles.size()))
        throw ValidationError("sample_batch: task index out of range");
    return sample_batch(family, family.task_angles[static_cast<std::size_t>(task_index)], n, seed);
}

Dataset kshot_support(const Dataset& dataset, int k, std::uint64_t seed) {
    if (dataset.empty()) throw ValidationError("kshot_support: empty dataset");
    if (k < 1) throw ValidationError("kshot_support: k must be >= 1");

    int classes = 0;
    for (const int y : dataset.labels) classes = std::max(classes, y + 1);

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(classes));
    for (int i = 0; i < static_cast<int>(dataset.labels.size()); ++i)
        by_class[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])].push_back(i);

    Pcg64 rng(seed);
    std::vector<int> picked;
    picked.reserve(static_cast<std::size_t>(classes) * static_cast<std::size_t>(k));
    for (int c = 0; c < classes; ++c) {
        auto& indices = by_class[static_cast<std::size_t>(c)];
        if (static_cast<int>(indices.size()) < k)
            throw ValidationError("kshot_support: class " + std::to_string(c) + " has only " +
                                  std::to_string(indices.size()) + " samples, need " +
                                  std::to_string(k));
        rng.shuffle(indices);
        picked.insert(picked.end(), indices.begin(), indices.begin() + k);
    }

    Dataset support;
    support.features.resize(static_cast<Eigen::Index>(picked.size()), dataset.features.cols());
    support.labels.resize(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
        support.features.row(static_cast<Eigen::Index>(i)) = dataset.features.row(picked[i]);
        support.labels[i] = dataset.labels[static_cast<std::size_t>(picked[i])];
    }
    return support;
}

ToyModel init_toy_model(int input_dim, int hidden, int classes, std::uint64_t seed) {
    Pcg64 rng(seed);
    ToyModel model;
    model.w1 = gaussian_matrix(rng, hidden, input_dim) / std::sqrt(static_cast<double>(input_dim));
    model.b1 = Eigen::VectorXd::Zero(hidden);
    model.w2 = gaussian_matrix(rng, classes, hidden) / std::sqrt(static_cast<double>(hidden));
    model.b2 = Eigen::VectorXd::Zero(classes);
    return model;
}

TensorContainer toy_model_to_container(const ToyModel& model, const std::string& model_id) {
    const auto snap = [](const auto& block) {
        return block.unaryExpr([](double x) { return round_to_binary32_grid(x); }).eval();
    };
    TensorContainer c;
    c.role = Role::checkpoint;
    c.model_id = model_id;
    c.add_matrix("W1", snap(model.w1));
    c.add_vector("b1", snap(model.b1));
    c.add_matrix("W2", snap(model.w2));
    c.add_vector("b2", snap(model.b2));
    return c;
}

ToyModel toy_model_from_container(const TensorContainer& container) {
    ToyModel model;
    model.w1 = container.matrix("W1");
    model.b1 = container.vector("b1");
    model.w2 = container.matrix("W2");
    model.b2 = container.vector("b2");
    if (model.w1.rows() != model.b1.size() || model.w2.rows() != model.b2.size() ||
        model.w2.cols() != model.w1.rows())
        throw ArchitectureError("container '" + container.model_id +
                                "' does not hold a consistent two-layer MLP");
    return model;
}

Eigen::MatrixXd mlp_logits(const ToyModel& model, const Eigen::MatrixXd& x) {
    if (x.cols() != model.w1.cols())
        throw ValidationError("mlp_logits: feature dimension mismatch");
    const Eigen::MatrixXd hidden =
        ((x * model.w1.transpose()).rowwise() + model.b1.transpose()).array().tanh();
    return (hidden * model.w2.transpose()).rowwise() + model.b2.transpose();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
    Eigen::MatrixXd expd = shifted.array().exp();
    return expd.array().colwise() / expd.rowwise().sum().array();
}

int argmax_row(const Eigen::RowVectorXd& row) {
    int best = 0;
    for (int j = 1; j < row.size(); ++j)
        if (row(j) > row(best)) best = j;
    return best;
}

ForwardBackward mlp_forward_backward_soft(const ToyModel& model, const Eigen::MatrixXd& x,
                                          const Eigen::MatrixXd& soft_targets,
                                          const Eigen::VectorXd& row_weights) {
    const Eigen::Index n = x.rows();
    if (soft_targets.rows() != n || row_weights.size() != n)
        throw ValidationError("mlp_forward_backward_soft: row count mismatch");

    const Eigen::MatrixXd pre_act =
        (x * model.w1.transpose()).rowwise() + model.b1.transpose();
    const Eigen::MatrixXd hidden = pre_act.array().tanh();
    const Eigen::MatrixXd logits =
        (hidden * model.w2.transpose()).rowwise() + model.b2.transpose();
    if (!logits.allFinite())
        throw NumericError("mlp_forward_backward_soft: non-finite activations");

    // log softmax with max-shift; loss_i = -sum_c q_ic * log p_ic
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    const Eigen::MatrixXd shifted = logits.colwise() - row_max;
    const Eigen::VectorXd log_z = shifted.array().exp().rowwise().sum().log();
    const Eigen::MatrixXd log_probs = shifted.colwise() - log_z;

    ForwardBackward out;
    out.loss = -(row_weights.asDiagonal() * (soft_targets.array() * log_probs.array()).matrix())
                    .sum();

    const Eigen::MatrixXd probs = log_probs.array().exp();
    const Eigen::MatrixXd d_logits = row_weights.asDiagonal() * (probs - soft_targets);

    out.grads.w2 = d_logits.transpose() * hidden;
    out.grads.b2 = d_logits.colwise().sum().transpose();
    const Eigen::MatrixXd d_hidden = d_logits * model.w2;
    const Eigen::MatrixXd d_pre_act =
        d_hidden.array() * (1.0 - hidden.array().square());
    out.grads.w1 = d_pre_act.transpose() * x;
    out.grads.b1 = d_pre_act.colwise().sum().transpose();
    return out;
}

ForwardBackward mlp_forward_backward(const ToyModel& model, const Dataset& batch) {
    if (batch.empty()) throw ValidationError("mlp_forward_backward: empty batch");

    const Eigen::Index n = batch.features.rows();
    const Eigen::Index classes = model.w2.rows();
    Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(n, classes);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = batch.labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= classes)
            throw ValidationError("mlp_forward_backward: label out of range");
        one_hot(i, y) = 1.0;
    }
    const Eigen::VectorXd weights =
        Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    return mlp_forward_backward_soft(model, batch.features, one_hot, weights);
}

namespace {

struct FlatModel {
    Eigen::VectorXd values;
    int hidden, input_dim, classes;

    static FlatModel pack(const ToyModel& m) {
        FlatModel f;
        f.hidden = static_cast<int>(m.w1.rows());
        f.input_dim = static_cast<int>(m.w1.cols());
        f.classes = static_cast<int>(m.w2.rows());
        f.values.resize(m.w1.size() + m.b1.size() + m.w2.size() + m.b2.size());
        Eigen::Index at = 0;
        const auto put = [&](const Eigen::VectorXd& block) {
            f.values.segment(at, block.size()) = block;
            at += block.size();
        };
        put(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.w1.data(), m.w1.size())));
        put(m.b1);
        put(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.w2.data(), m.w2.size())));
        put(m.b2);
        return f;
    }

    ToyModel unpack() const {
        ToyModel m;
        Eigen::Index at = 0;
        m.w1 = Eigen::Map<const Eigen::MatrixXd>(values.data() + at, hidden, input_dim);
        at += static_cast<Eigen::Index>(hidden) * input_dim;
        m.b1 = values.segment(at, hidden);
        at += hidden;
        m.w2 = Eigen::Map<const Eigen::MatrixXd>(values.data() + at, classes, hidden);
        at += static_cast<Eigen::Index>(classes) * hidden;
        m.b2 = values.segment(at, classes);
        return m;
    }

    Eigen::VectorXd pack_grads(const MlpGradients& g) const {
        Eigen::VectorXd flat(values.size());
        Eigen::Index at = 0;
        flat.segment(at, g.w1.size()) = Eigen::Map<const Eigen::VectorXd>(g.w1.data(), g.w1.size());
        at += g.w1.size();
        flat.segment(at, g.b1.size()) = g.b1;
        at += g.b1.size();
        flat.segment(at, g.w2.size()) = Eigen::Map<const Eigen::VectorXd>(g.w2.data(), g.w2.size());
        at += g.w2.size();
        flat.segment(at, g.b2.size()) = g.b2;
        return flat;
    }
};

} // namespace

ToyModel finetune_full(const ToyModel& init, const Dataset& data, int epochs, double lr,
                       std::uint64_t seed) {
    if (data.empty()) throw ValidationError("finetune_full: empty dataset");
    if (epochs < 0) throw ValidationError("finetune_full: negative epochs");
    if (epochs == 0) return init;

    const OptimState defaults;
    const int batch_size = defaults.batch_size;
    const long n = data.size();
    const long steps_per_epoch = (n + batch_size - 1) / batch_size;
    const long total_steps = steps_per_epoch * epochs;
    const long warmup_steps =
        std::min<long>(defaults.warmup_epochs * steps_per_epoch, total_steps - 1);

    FlatModel flat = FlatModel::pack(init);
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(flat.values.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(flat.values.size());

    Pcg64 rng(seed);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);

    long step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (long start = 0; start < n; start += batch_size) {
            const long count = std::min<long>(batch_size, n - start);
            Dataset batch;
            batch.features.resize(count, data.features.cols());
            batch.labels.resize(static_cast<std::size_t>(count));
            for (long i = 0; i < count; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                batch.features.row(i) = data.features.row(src);
                batch.labels[static_cast<std::size_t>(i)] =
                    data.labels[static_cast<std::size_t>(src)];
            }

            const ToyModel current = flat.unpack();
            const auto fb = mlp_forward_backward(current, batch);
            const Eigen::VectorXd grad = flat.pack_grads(fb.grads);
            if (!grad.allFinite())
                throw NumericError("finetune_full: non-finite gradient");

            const double step_lr = lr_schedule(step, total_steps, warmup_steps, lr);
            ++step;
            adamw_update_flat(flat.values, m1, m2, grad, step, step_lr, defaults.beta1,
                              defaults.beta2, defaults.eps_adam, defaults.weight_decay);
        }
    }
    return flat.unpack();
}

TensorContainer family_to_container(const TaskFamily& family) {
    TensorContainer c;
    c.role = Role::family;
    c.model_id = "family-" + std::to_string(family.seed);
    c.add_matrix("anchor_means", family.anchor_means);
    for (int g = 0; g < kFamilyGenerators; ++g)
        c.add_matrix("generator::" + std::to_string(g),
                     family.shared_generators[static_cast<std::size_t>(g)]);
    Eigen::MatrixXd angles(static_cast<Eigen::Index>(family.task_angles.size()),
                           kFamilyGenerators);
    for (std::size_t t = 0; t < family.task_angles.size(); ++t)
        angles.row(static_cast<Eigen::Index>(t)) = family.task_angles[t].transpose();
    c.add_matrix("task_angles", angles);
    c.add_vector("target_angles", family.target_angles);

    c.metadata["input_dim"] = std::to_string(family.config.input_dim);
    c.metadata["classes"] = std::to_string(family.config.classes);
    c.metadata["hidden"] = std::to_string(family.config.hidden);
    c.metadata["n_source_tasks"] = std::to_string(family.config.n_source_tasks);
    c.metadata["seed"] = std::to_string(family.seed);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", family.config.noise_sigma);
    c.metadata["noise_sigma"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", family.config.anchor_norm);
    c.metadata["anchor_norm"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", family.config.angle_min);
    c.metadata["angle_min"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", family.config.angle_max);
    c.metadata["angle_max"] = buf;
    return c;
}

TaskFamily family_from_container(const TensorContainer& container) {
    if (container.role != Role::family)
        throw ValidationError("container '" + container.model_id + "' is not a task family");

    TaskFamily family;
    family.config.input_dim = std::stoi(container.metadata.at("input_dim"));
    family.config.classes = std::stoi(container.metadata.at("classes"));
    family.config.hidden = std::stoi(container.metadata.at("hidden"));
    family.config.n_source_tasks = std::stoi(container.metadata.at("n_source_tasks"));
    family.config.noise_sigma = std::stod(container.metadata.at("noise_sigma"));
    family.config.anchor_norm = std::stod(container.metadata.at("anchor_norm"));
    family.config.angle_min = std::stod(container.metadata.at("angle_min"));
    family.config.angle_max = std::stod(container.metadata.at("angle_max"));
    family.seed = std::stoull(container.metadata.at("seed"));

    family.anchor_means = container.matrix("anchor_means");
    for (int g = 0; g < kFamilyGenerators; ++g)
        family.shared_generators.push_back(container.matrix("generator::" + std::to_string(g)));
    const Eigen::MatrixXd angles = container.matrix("task_angles");
    for (Eigen::Index t = 0; t < angles.rows(); ++t)
        family.task_angles.push_back(angles.row(t).transpose());
    family.target_angles = container.vector("target_angles");
    return family;
}

TensorContainer dataset_to_container(const Dataset& dataset, const std::string& id) {
    TensorContainer c;
    c.role = Role::dataset;
    c.model_id = id;
    c.add_matrix("x", dataset.features);
    Eigen::VectorXd labels(dataset.labels.size());
    for (std::size_t i = 0; i < dataset.labels.size(); ++i)
        labels(static_cast<Eigen::Index>(i)) = static_cast<double>(dataset.labels[i]);
    c.add_vector("y", labels);
    return c;
}

Dataset dataset_from_container(const TensorContainer& container) {
    if (container.role != Role::dataset)
        throw ValidationError("container '" + container.model_id + "' is not a dataset");
    Dataset d;
    d.features = container.matrix("x");
    const Eigen::VectorXd labels = container.vector("y");
    if (labels.size() != d.features.rows())
        throw ValidationError("dataset '" + container.model_id + "': label/feature count mismatch");
    d.labels.resize(static_cast<std::size_t>(labels.size()));
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        d.labels[static_cast<std::size_t>(i)] = static_cast<int>(labels(i));
    return d;
}

} // namespace bolt
