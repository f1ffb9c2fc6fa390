#include "hetpeer/model_selection.hpp"

#include "hetpeer/error.hpp"
#include "hetpeer/panel_io.hpp"
#include "hetpeer/version.hpp"

#include <cmath>
#include <ostream>

namespace hetpeer {

double default_ic_lambda(double mean_group_size) {
    if (!(mean_group_size > std::exp(1.0))) return 0.0;
    return 0.25 * std::log(std::log(mean_group_size)) / mean_group_size;
}

const IcRecord& IcTable::selected() const {
    for (const auto& r : records) {
        if (r.k == selected_k) return r;
    }
    throw ConvergenceError("model selection: no K could be fitted");
}

double ic_fit_term(const Panel& panel, const PerGroupFits& first_step,
                   const std::vector<int>& membership,
                   const std::vector<std::optional<NplFit>>& post_fits, double mu_bound) {
    double total = 0.0;
    double count = 0.0;
    for (std::size_t g = 0; g < panel.size(); ++g) {
        const int c = membership[g];
        if (c < 0 || static_cast<std::size_t>(c) >= post_fits.size() || !post_fits[static_cast<std::size_t>(c)]) {
            continue;
        }
        const auto& group = panel.group(g);
        const auto& fit = first_step.fits[g];
        const Eigen::VectorXd ccp = fit.ccp.empty() ? default_initial_ccp(group) : fit.ccp[0];
        // profile_nll is a per-individual mean; weight by group size
        total += group.size() *
                 profile_nll(group, post_fits[static_cast<std::size_t>(c)]->slope, ccp, mu_bound);
        count += group.size();
    }
    if (count == 0.0) throw ValidationError("ic_fit_term: no classified groups");
    return total / count;
}

double compute_ic(const Panel& panel, const PerGroupFits& first_step,
                  const std::vector<int>& membership,
                  const std::vector<std::optional<NplFit>>& post_fits, int k, double lambda,
                  double mu_bound) {
    const double p = 1.0 + panel.covariate_dim();
    return ic_fit_term(panel, first_step, membership, post_fits, mu_bound) + lambda * p * k;
}

int argmin_ic(const std::vector<IcRecord>& records) {
    int best = 0;
    double best_ic = 0.0;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        if (best == 0 || r.ic < best_ic || (r.ic == best_ic && r.k < best)) {
            best = r.k;
            best_ic = r.ic;
        }
    }
    return best;
}

IcRecord evaluate_k(const Panel& panel, const PerGroupFits& first_step, int k, double lambda,
                    const SelectionConfig& config) {
    IcRecord rec;
    rec.k = k;
    if (static_cast<std::size_t>(k) > first_step.usable_groups().size()) {
        rec.failure = "fewer usable groups than clusters";
        return rec;
    }
    try {
        rec.solution = classo_fit(panel, first_step, k, config.classo);
        rec.post_fits =
            post_classification_fit(panel, rec.solution.membership, k, config.npl, &first_step);
        rec.fit_term = ic_fit_term(panel, first_step, rec.solution.membership, rec.post_fits,
                                   config.npl.mu_bound);
        rec.penalty = lambda * (1.0 + panel.covariate_dim()) * k;
        rec.ic = rec.fit_term + rec.penalty;
    } catch (const Error& e) {
        rec.failure = e.what();
    }
    return rec;
}

IcTable select_k(const Panel& panel, const PerGroupFits& first_step,
                 const SelectionConfig& config) {
    if (config.k_max < 1) throw ValidationError("select_k: k_max must be at least 1");
    IcTable table;
    table.lambda = config.lambda ? *config.lambda : default_ic_lambda(panel.mean_group_size());
    if (!(table.lambda >= 0.0)) throw ValidationError("select_k: lambda must be >= 0");
    table.slope_dim = 1 + panel.covariate_dim();
    for (int k = 1; k <= config.k_max; ++k) {
        table.records.push_back(evaluate_k(panel, first_step, k, table.lambda, config));
    }
    table.selected_k = argmin_ic(table.records);
    if (table.selected_k == 0) throw ConvergenceError("select_k: no K could be fitted");
    return table;
}

void write_ic_csv(std::ostream& out, const IcTable& table) {
    out << "k,ic,fit_term,penalty,format_version\n";
    for (const auto& r : table.records) {
        if (!r.ok()) continue;
        out << r.k << ',' << format_double(r.ic) << ',' << format_double(r.fit_term) << ','
            << format_double(r.penalty) << ',' << kFormatVersion << '\n';
    }
}

} // namespace hetpeer
