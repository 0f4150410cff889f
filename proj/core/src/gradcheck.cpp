#include "foresee/gradcheck.hpp"

#include <cmath>

namespace fse {

GradCheckReport finite_difference_check(Tape& tape, Var root, const std::vector<Var>& inputs,
                                        double h, double tol) {
    if (tape.value(root).size() != 1) {
        throw ContractError("gradient check root must be scalar");
    }
    tape.recompute();
    tape.backward(root);

    // Snapshot analytic gradients before the finite-difference sweeps
    // overwrite the tape's values.
    std::vector<Array> analytic;
    analytic.reserve(inputs.size());
    for (Var v : inputs) analytic.push_back(tape.grad(v));

    GradCheckReport report;
    for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
        Var v = inputs[vi];
        GradCheckGroup group;
        group.name = tape.node(v).name;
        Array base = tape.value(v);
        Array probe = base;
        for (std::size_t i = 0; i < base.size(); ++i) {
            probe[i] = base[i] + h;
            tape.set_input(v, probe);
            tape.recompute();
            const double up = tape.value(root)[0];

            probe[i] = base[i] - h;
            tape.set_input(v, probe);
            tape.recompute();
            const double down = tape.value(root)[0];

            probe[i] = base[i];

            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[vi][i];
            const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
            ++group.checked;
            if (rel > group.max_rel_err) {
                group.max_rel_err = rel;
                group.worst_index = i;
                group.worst_analytic = a;
                group.worst_numeric = numeric;
            }
        }
        tape.set_input(v, base);

        report.checked += group.checked;
        if (group.max_rel_err > report.max_rel_err || report.groups.empty()) {
            report.max_rel_err = group.max_rel_err;
            report.worst_param = group.name;
            report.worst_index = group.worst_index;
            report.worst_analytic = group.worst_analytic;
            report.worst_numeric = group.worst_numeric;
        }
        report.groups.push_back(std::move(group));
    }
    tape.recompute();
    tape.backward(root);
    report.pass = report.max_rel_err < tol;
    return report;
}

} // namespace fse
