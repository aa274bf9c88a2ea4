#include "t2p/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace t2p {

namespace {
constexpr char kMagic[8] = {'T', '2', 'P', 'C', 'K', 'P', 'T', '\x01'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_array(std::ostream& os, const Array& a) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (int e : a.shape) write_pod<std::int32_t>(os, e);
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(double)));
}

Array read_array(std::istream& is) {
    const auto rank = read_pod<std::uint32_t>(is);
    std::vector<int> shape(rank);
    for (auto& e : shape) e = read_pod<std::int32_t>(is);
    Array a(shape);
    is.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated array data");
    return a;
}
}  // namespace

Array& ParameterStore::ensure(const std::string& name, const std::vector<int>& shape, Rng& rng,
                              Init init) {
    auto it = slots_.find(name);
    if (it != slots_.end()) {
        if (it->second.value.shape != shape)
            throw std::invalid_argument("parameter '" + name + "' exists with shape " +
                                        it->second.value.shape_str() + ", requested " +
                                        shape_to_string(shape));
        return it->second.value;
    }
    ParamSlot slot;
    slot.value = Array(shape);
    slot.grad = Array(shape);
    slot.m = Array(shape);
    slot.v = Array(shape);
    switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            std::fill(slot.value.data.begin(), slot.value.data.end(), 1.0);
            break;
        case Init::XavierUniform: {
            // fan_in/fan_out from the trailing two extents; vectors count as fan_in 1
            const int fan_out = shape.empty() ? 1 : shape.back();
            const int fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : 1;
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (double& x : slot.value.data) x = rng.uniform(-bound, bound);
            break;
        }
    }
    return slots_.emplace(name, std::move(slot)).first->second.value;
}

Array& ParameterStore::value(const std::string& name) { return slot(name).value; }

const Array& ParameterStore::value(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second.value;
}

Array& ParameterStore::grad(const std::string& name) { return slot(name).grad; }

ParamSlot& ParameterStore::slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
}

void ParameterStore::zero_grads() {
    for (auto& [name, s] : slots_) std::fill(s.grad.data.begin(), s.grad.data.end(), 0.0);
}

void ParameterStore::adamw_step(const AdamwConfig& cfg) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& [name, s] : slots_) {
        const std::int64_t n = s.value.size();
        double* value = s.value.data.data();
        double* mom = s.m.data.data();
        double* vel = s.v.data.data();
        const double* grad = s.grad.data.data();
#pragma omp simd
        for (std::int64_t i = 0; i < n; ++i) {
            const double g = grad[i];
            mom[i] = cfg.beta1 * mom[i] + (1.0 - cfg.beta1) * g;
            vel[i] = cfg.beta2 * vel[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = mom[i] / bc1;
            const double vhat = vel[i] / bc2;
            value[i] -= cfg.lr * cfg.weight_decay * value[i];  // decoupled decay
            value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

std::int64_t ParameterStore::total_parameters() const {
    std::int64_t n = 0;
    for (const auto& [name, s] : slots_) n += s.value.size();
    return n;
}

void ParameterStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(os, config_hash_);
    write_pod<std::int64_t>(os, step_);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(slots_.size()));
    for (const auto& [name, s] : slots_) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_array(os, s.value);
        write_array(os, s.m);  // optimizer slots ride along so resume is bit-exact
        write_array(os, s.v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

ParameterStore ParameterStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic/version in '" + path + "'");
    ParameterStore store;
    store.config_hash_ = read_pod<std::uint64_t>(is);
    store.step_ = read_pod<std::int64_t>(is);
    const auto count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = read_pod<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        ParamSlot s;
        s.value = read_array(is);
        s.m = read_array(is);
        s.v = read_array(is);
        s.grad = Array(s.value.shape);
        store.slots_.emplace(std::move(name), std::move(s));
    }
    return store;
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace t2p
