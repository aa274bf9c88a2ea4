#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "t2p/array.hpp"
#include "t2p/rng.hpp"

namespace t2p {

struct ParamSlot {
    Array value;
    Array grad;
    Array m;  // AdamW first moment
    Array v;  // AdamW second moment
};

enum class Init { XavierUniform, Zeros, Ones };

struct AdamwConfig {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Named, versioned collection of learnable arrays with gradient and optimizer
// slots. Mutation (gradient accumulation, optimizer step) follows a
// single-writer contract; concurrent reads of frozen values are safe.
class ParameterStore {
public:
    // Creates the slot on first call; later calls validate the shape.
    Array& ensure(const std::string& name, const std::vector<int>& shape, Rng& rng,
                  Init init = Init::XavierUniform);

    bool has(const std::string& name) const { return slots_.count(name) != 0; }
    Array& value(const std::string& name);
    const Array& value(const std::string& name) const;
    Array& grad(const std::string& name);
    ParamSlot& slot(const std::string& name);

    void zero_grads();
    void adamw_step(const AdamwConfig& cfg);

    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }
    std::uint64_t config_hash() const { return config_hash_; }
    void set_config_hash(std::uint64_t h) { config_hash_ = h; }

    const std::map<std::string, ParamSlot>& slots() const { return slots_; }
    std::map<std::string, ParamSlot>& slots() { return slots_; }

    std::int64_t total_parameters() const;

    void save(const std::string& path) const;
    static ParameterStore load(const std::string& path);

private:
    std::map<std::string, ParamSlot> slots_;
    std::int64_t step_ = 0;
    std::uint64_t config_hash_ = 0;
};

std::uint64_t fnv1a64(const std::string& s);

}  // namespace t2p
