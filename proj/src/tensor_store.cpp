#include "bolt/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bolt {

namespace {

constexpr char kMagic[8] = {'B', 'O', 'L', 'T', 'T', 'C', '0', '1'};

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void put_f64_le(std::string& out, double x) {
    put_u64_le(out, std::bit_cast<std::uint64_t>(x));
}

double get_f64_le(const unsigned char* p) {
    return std::bit_cast<double>(get_u64_le(p));
}

} // namespace

std::string role_to_string(Role role) {
    switch (role) {
        case Role::checkpoint: return "checkpoint";
        case Role::task_vector: return "task_vector";
        case Role::basis: return "basis";
        case Role::sigma: return "sigma";
        case Role::dataset: return "dataset";
        case Role::family: return "family";
    }
    throw ValidationError("unknown role value");
}

Role role_from_string(const std::string& text) {
    if (text == "checkpoint") return Role::checkpoint;
    if (text == "task_vector") return Role::task_vector;
    if (text == "basis") return Role::basis;
    if (text == "sigma") return Role::sigma;
    if (text == "dataset") return Role::dataset;
    if (text == "family") return Role::family;
    throw ParseError("unknown role: " + text);
}

std::int64_t TensorEntry::numel() const {
    std::int64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

Eigen::MatrixXd TensorEntry::as_matrix() const {
    if (shape.size() != 2)
        throw ValidationError("entry '" + name + "' is not a matrix");
    Eigen::MatrixXd m(shape[0], shape[1]);
    for (std::int64_t i = 0; i < shape[0]; ++i)
        for (std::int64_t j = 0; j < shape[1]; ++j)
            m(i, j) = data[static_cast<std::size_t>(i * shape[1] + j)];
    return m;
}

Eigen::VectorXd TensorEntry::as_vector() const {
    if (shape.size() != 1)
        throw ValidationError("entry '" + name + "' is not a vector");
    Eigen::VectorXd v(shape[0]);
    for (std::int64_t i = 0; i < shape[0]; ++i) v(i) = data[static_cast<std::size_t>(i)];
    return v;
}

TensorEntry TensorEntry::from_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    TensorEntry e;
    e.name = name;
    e.shape = {m.rows(), m.cols()};
    e.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            e.data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    return e;
}

TensorEntry TensorEntry::from_vector(const std::string& name, const Eigen::VectorXd& v) {
    TensorEntry e;
    e.name = name;
    e.shape = {v.size()};
    e.data.assign(v.data(), v.data() + v.size());
    return e;
}

bool TensorContainer::has(const std::string& name) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const TensorEntry& e) { return e.name == name; });
}

const TensorEntry& TensorContainer::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw ValidationError("no entry named '" + name + "' in container '" + model_id + "'");
}

TensorEntry& TensorContainer::at(const std::string& name) {
    for (auto& e : entries)
        if (e.name == name) return e;
    throw ValidationError("no entry named '" + name + "' in container '" + model_id + "'");
}

void TensorContainer::add(TensorEntry entry) {
    entries.push_back(std::move(entry));
}

void TensorContainer::add_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    add(TensorEntry::from_matrix(name, m));
}

void TensorContainer::add_vector(const std::string& name, const Eigen::VectorXd& v) {
    add(TensorEntry::from_vector(name, v));
}

std::map<std::string, std::vector<std::int64_t>> TensorContainer::layer_shapes() const {
    std::map<std::string, std::vector<std::int64_t>> out;
    for (const auto& e : entries) out[e.name] = e.shape;
    return out;
}

void TensorContainer::validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
        if (e.name.empty()) throw ValidationError("entry with empty name");
        if (!seen.insert(e.name).second)
            throw ValidationError("duplicate entry name '" + e.name + "'");
        if (e.shape.empty())
            throw ValidationError("entry '" + e.name + "' has empty shape");
        for (const auto d : e.shape)
            if (d < 1)
                throw ValidationError("entry '" + e.name + "' has zero-size shape");
        if (e.numel() != static_cast<std::int64_t>(e.data.size()))
            throw ValidationError("entry '" + e.name + "' shape/data length mismatch");
    }
}

bool containers_equal(const TensorContainer& a, const TensorContainer& b) {
    if (a.format_version != b.format_version || a.model_id != b.model_id ||
        a.role != b.role || a.metadata != b.metadata ||
        a.entries.size() != b.entries.size())
        return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        const auto& ea = a.entries[i];
        const auto& eb = b.entries[i];
        if (ea.name != eb.name || ea.shape != eb.shape || ea.data.size() != eb.data.size())
            return false;
        for (std::size_t k = 0; k < ea.data.size(); ++k)
            if (std::bit_cast<std::uint64_t>(ea.data[k]) != std::bit_cast<std::uint64_t>(eb.data[k]))
                return false;
    }
    return true;
}

void save_container(const TensorContainer& container, const std::filesystem::path& path) {
    container.validate();

    nlohmann::json manifest;
    manifest["format_version"] = container.format_version;
    manifest["model_id"] = container.model_id;
    manifest["role"] = role_to_string(container.role);
    manifest["metadata"] = container.metadata;

    nlohmann::json entries = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const auto& e : container.entries) {
        const std::int64_t byte_len = e.numel() * 8;
        nlohmann::json je;
        je["name"] = e.name;
        je["shape"] = e.shape;
        je["dtype"] = "f64";
        je["offset"] = offset;
        je["byte_len"] = byte_len;
        entries.push_back(std::move(je));
        offset += byte_len;
    }
    manifest["entries"] = std::move(entries);

    const std::string manifest_text = manifest.dump();

    std::string blob;
    blob.reserve(16 + manifest_text.size() + static_cast<std::size_t>(offset));
    blob.append(kMagic, sizeof(kMagic));
    put_u64_le(blob, manifest_text.size());
    blob.append(manifest_text);
    for (const auto& e : container.entries)
        for (const double x : e.data) put_f64_le(blob, x);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TensorContainer load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for '" + path.string() + "'");

    if (blob.size() < 16) throw ParseError("truncated header");
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError("bad magic");

    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    const std::uint64_t manifest_len = get_u64_le(bytes + 8);
    if (16 + manifest_len > blob.size()) throw ParseError("truncated manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(blob.begin() + 16,
                                         blob.begin() + 16 + static_cast<std::ptrdiff_t>(manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad manifest: ") + e.what());
    }

    TensorContainer c;
    try {
        c.format_version = manifest.at("format_version").get<int>();
        c.model_id = manifest.at("model_id").get<std::string>();
        c.role = role_from_string(manifest.at("role").get<std::string>());
        c.metadata = manifest.at("metadata").get<std::map<std::string, std::string>>();
        if (c.format_version != 1)
            throw ParseError("unsupported format_version " + std::to_string(c.format_version));

        const std::size_t payload_begin = 16 + manifest_len;
        const std::size_t payload_size = blob.size() - payload_begin;

        std::int64_t expected = 0;
        for (const auto& je : manifest.at("entries")) {
            TensorEntry e;
            e.name = je.at("name").get<std::string>();
            e.shape = je.at("shape").get<std::vector<std::int64_t>>();
            if (je.at("dtype").get<std::string>() != "f64")
                throw ParseError("unsupported dtype for entry '" + e.name + "'");
            const auto offset = je.at("offset").get<std::int64_t>();
            const auto byte_len = je.at("byte_len").get<std::int64_t>();
            if (offset != expected || byte_len != e.numel() * 8 || byte_len % 8 != 0)
                throw ParseError("manifest-payload length mismatch");
            expected += byte_len;

            if (static_cast<std::size_t>(offset + byte_len) > payload_size)
                throw ParseError("truncated payload");

            const unsigned char* src = bytes + payload_begin + static_cast<std::size_t>(offset);
            e.data.resize(static_cast<std::size_t>(e.numel()));
            for (std::size_t k = 0; k < e.data.size(); ++k)
                e.data[k] = get_f64_le(src + 8 * k);
            c.entries.push_back(std::move(e));
        }
        if (static_cast<std::size_t>(expected) != payload_size)
            throw ParseError("manifest-payload length mismatch");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad manifest: ") + e.what());
    }

    c.validate();
    return c;
}

bool TaskVector::has(const std::string& name) const {
    return std::any_of(layers.begin(), layers.end(),
                       [&](const TensorEntry& e) { return e.name == name; });
}

const TensorEntry& TaskVector::at(const std::string& name) const {
    for (const auto& e : layers)
        if (e.name == name) return e;
    throw ValidationError("no layer named '" + name + "' in task vector '" + source_id + "'");
}

TaskVector compute_task_vector(const TensorContainer& theta_i, const TensorContainer& theta_0) {
    const auto shapes_i = theta_i.layer_shapes();
    const auto shapes_0 = theta_0.layer_shapes();
    if (shapes_i != shapes_0) {
        std::ostringstream msg;
        msg << "layer sets differ:";
        for (const auto& [name, shape] : shapes_i) {
            const auto it = shapes_0.find(name);
            if (it == shapes_0.end())
                msg << " '" << name << "' only in " << theta_i.model_id << ";";
            else if (it->second != shape)
                msg << " '" << name << "' shape mismatch;";
        }
        for (const auto& [name, shape] : shapes_0)
            if (!shapes_i.count(name))
                msg << " '" << name << "' only in " << theta_0.model_id << ";";
        throw ArchitectureError(msg.str());
    }

    TaskVector tv;
    tv.source_id = theta_i.model_id;
    for (const auto& e0 : theta_0.entries) {
        const auto& ei = theta_i.at(e0.name);
        TensorEntry delta;
        delta.name = e0.name;
        delta.shape = e0.shape;
        delta.data.resize(e0.data.size());
        for (std::size_t k = 0; k < e0.data.size(); ++k)
            delta.data[k] = ei.data[k] - e0.data[k];
        tv.layers.push_back(std::move(delta));
    }
    std::sort(tv.layers.begin(), tv.layers.end(),
              [](const TensorEntry& a, const TensorEntry& b) { return a.name < b.name; });
    return tv;
}

TensorContainer apply_task_arithmetic(const TensorContainer& theta_0,
                                      const std::vector<TaskVector>& deltas,
                                      const std::vector<double>& alphas) {
    if (deltas.empty() || deltas.size() != alphas.size())
        throw ValidationError("apply_task_arithmetic: need |deltas| == |alphas| >= 1");

    const auto base_shapes = theta_0.layer_shapes();
    for (const auto& tv : deltas) {
        std::map<std::string, std::vector<std::int64_t>> tv_shapes;
        for (const auto& e : tv.layers) tv_shapes[e.name] = e.shape;
        if (tv_shapes != base_shapes)
            throw ArchitectureError("task vector '" + tv.source_id +
                                    "' does not match the base architecture");
    }

    // Canonical order: sort by source_id so any input permutation sums identically.
    std::vector<std::size_t> order(deltas.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return deltas[a].source_id < deltas[b].source_id;
    });

    TensorContainer merged = theta_0;
    for (const std::size_t idx : order) {
        const double alpha = alphas[idx];
        for (const auto& layer : deltas[idx].layers) {
            auto& target = merged.at(layer.name);
            for (std::size_t k = 0; k < target.data.size(); ++k)
                target.data[k] += alpha * layer.data[k];
        }
    }
    return merged;
}

} // namespace bolt
