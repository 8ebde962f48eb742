#pragma once

// Independent reference computations for the training-control state machines.

#include <cstddef>
#include <optional>
#include <vector>

namespace ftk::testing {

// Per value: does it beat every earlier value (strictly, per mode)?
inline std::vector<bool> improvement_flags(const std::vector<double>& seq, bool minimize) {
    std::vector<bool> flags;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        bool better = true;
        for (std::size_t j = 0; j < i; ++j) {
            if (minimize ? !(seq[i] < seq[j]) : !(seq[i] > seq[j])) {
                better = false;
                break;
            }
        }
        flags.push_back(better);
    }
    return flags;
}

// Plateau reductions: each maximal run of L non-improving values contributes
// floor(L / (patience + 1)), since the counter restarts after every reduction.
inline std::size_t plateau_reductions(const std::vector<double>& seq, std::size_t patience, bool minimize) {
    std::size_t total = 0, run = 0;
    for (bool improved : improvement_flags(seq, minimize)) {
        if (improved) {
            total += run / (patience + 1);
            run = 0;
        } else {
            ++run;
        }
    }
    return total + run / (patience + 1);
}

struct StopOracle {
    // 1-based position of the value that triggers the stop, if any.
    std::optional<std::size_t> stop_at;
    // 1-based position of the best value seen up to the stop.
    std::size_t best_at = 0;
};

inline StopOracle early_stop(const std::vector<double>& seq, std::size_t patience, bool minimize) {
    StopOracle out;
    const auto flags = improvement_flags(seq, minimize);
    std::size_t last_best = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (flags[i]) last_best = i + 1;
        if (i + 1 - last_best > patience) {
            out.stop_at = i + 1;
            break;
        }
    }
    out.best_at = last_best;
    return out;
}

} // namespace ftk::testing
