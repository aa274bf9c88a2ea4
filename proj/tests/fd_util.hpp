#pragma once

// Finite-difference gradient harness shared by the unit suites and the
// acceptance runner. The oracle is a central difference on individual
// parameter coordinates, independent of the tape's backward path.

#include <functional>
#include <string>
#include <vector>

#include "t2p/params.hpp"
#include "t2p/rng.hpp"
#include "t2p/tape.hpp"

namespace t2p::testing {

struct FdReport {
    double max_rel_err = 0.0;
    int checked = 0;
    std::string worst_param;
    std::int64_t worst_index = -1;
};

// `run(want_grad)` evaluates the scalar forward; when want_grad it must also
// zero store grads, run backward and accumulate parameter gradients.
inline FdReport fd_check(ParameterStore& store, const std::vector<std::string>& names,
                         const std::function<double(bool)>& run, int samples_per_param,
                         std::uint64_t seed, double h = 1e-5) {
    FdReport rep;
    const double f0 = run(true);
    Rng pick(seed);
    for (const auto& name : names) {
        Array analytic = store.grad(name);  // copy before perturbation runs
        Array& value = store.value(name);
        const std::int64_t n = value.size();
        for (int s = 0; s < samples_per_param && s < n; ++s) {
            const std::int64_t i = samples_per_param >= n
                                       ? s
                                       : static_cast<std::int64_t>(pick.next_below(static_cast<std::uint64_t>(n)));
            const double a = analytic[i];
            double rel = 1e300;
            bool resolvable = false;
            // a marginal result is retried at shifted steps: finite-difference
            // noise and activation-kink crossings move with h, true gradient
            // errors do not
            for (double hh : {h, 10.0 * h, h / 10.0}) {
                const double numeric =
                    central_difference([&] { return run(false); }, &value[i], hh);
                const double denom = std::max(std::abs(a), std::abs(numeric));
                if (denom < std::max(1e-8, 1e-12 / hh) * std::max(1.0, std::abs(f0))) continue;
                resolvable = true;
                rel = std::min(rel, std::abs(a - numeric) / denom);
                if (rel < 1e-5) break;
            }
            ++rep.checked;
            if (!resolvable) continue;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = i;
            }
        }
    }
    return rep;
}

inline Array random_array(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Array a(std::move(shape));
    for (double& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

}  // namespace t2p::testing
