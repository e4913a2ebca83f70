#pragma once

#include <cstdint>
#include <string>

namespace ModFL {

struct GradCheckReport {
    std::size_t instances = 0;
    std::size_t failures = 0;
    std::size_t redraws = 0;
    double max_rel_error = 0.0;
    std::string detail;

    bool ok() const { return failures == 0; }
};

// Central finite-difference verification of every analytic gradient on
// random small models cycling through all layer kinds. An instance that
// fails is redrawn up to twice before it counts as a failure, which filters
// the rare draw where a perturbation crosses a ReLU kink or flips a maxpool
// winner; a genuine gradient defect fails every redraw.
GradCheckReport run_gradient_checks(std::uint64_t seed, std::size_t instances);

std::string render_gradcheck(const GradCheckReport& report);

}  // namespace ModFL
