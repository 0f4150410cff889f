#pragma once

#include <string>
#include <vector>

#include "foresee/tape.hpp"

namespace fse {

struct GradCheckGroup {
    std::string name;
    long checked = 0;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    long checked = 0;
    bool pass = false;
    std::vector<GradCheckGroup> groups; // one entry per checked input, in call order
};

/// Central-difference check of a recorded scalar computation. For every
/// element of every listed input, perturb by +-h, recompute the tape, and
/// compare the difference quotient against the analytic gradient with
/// relative error |a - n| / max(1e-12, |a| + |n|). Restores inputs and
/// gradients so the tape stays usable.
///
/// The default step balances truncation against f64 roundoff for deep
/// composite graphs; single ops tolerate much smaller steps. The check point
/// must keep relu/maxpool switching margins above h, and every coordinate's
/// true gradient above roughly ulp(loss)/h, or the quotient reports noise
/// rather than the derivative.
GradCheckReport finite_difference_check(Tape& tape, Var root, const std::vector<Var>& inputs,
                                        double h = 3e-4, double tol = 1e-5);

} // namespace fse
