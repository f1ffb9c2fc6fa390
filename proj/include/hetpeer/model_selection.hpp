#pragma once
#include "hetpeer/classo.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hetpeer {

/// 1/4 log(log n) / n at the mean group size; 0 when n <= e.
double default_ic_lambda(double mean_group_size);

struct IcRecord {
    int k = 0;
    ClusterSolution solution;
    std::vector<std::optional<NplFit>> post_fits;
    double fit_term = 0.0;
    double penalty = 0.0;
    double ic = 0.0;
    /// Non-empty when this K failed and is excluded from the argmin.
    std::string failure;

    bool ok() const { return failure.empty(); }
};

struct IcTable {
    std::vector<IcRecord> records;
    double lambda = 0.0;
    int slope_dim = 0;
    int selected_k = 0;

    const IcRecord& selected() const;
};

/// Mean over individuals of the usable groups of the negative log-likelihood
/// at each group's cluster slope, with the fixed effect profiled out at the
/// first-step beliefs. Groups in an empty cluster or with membership -1 are skipped.
double ic_fit_term(const Panel& panel, const PerGroupFits& first_step,
                   const std::vector<int>& membership,
                   const std::vector<std::optional<NplFit>>& post_fits, double mu_bound = 10.0);

/// fit_term + lambda * p * K.
double compute_ic(const Panel& panel, const PerGroupFits& first_step,
                  const std::vector<int>& membership,
                  const std::vector<std::optional<NplFit>>& post_fits, int k, double lambda,
                  double mu_bound = 10.0);

struct SelectionConfig {
    int k_max = 4;
    /// Defaults to default_ic_lambda(mean group size).
    std::optional<double> lambda;
    ClassoConfig classo;
    NplConfig npl;
};

/// C-Lasso, post-classification fits and IC at one K; failures are recorded
/// in the returned record rather than thrown.
IcRecord evaluate_k(const Panel& panel, const PerGroupFits& first_step, int k, double lambda,
                    const SelectionConfig& config);

/// C-Lasso and post-classification fits for every K in 1..k_max, then the
/// IC argmin (ties to the smaller K).
IcTable select_k(const Panel& panel, const PerGroupFits& first_step,
                 const SelectionConfig& config = {});

/// Argmin over the successful records, smallest K on ties; 0 if none succeeded.
int argmin_ic(const std::vector<IcRecord>& records);

/// CSV with header `k,ic,fit_term,penalty,format_version`; failed K rows are omitted.
void write_ic_csv(std::ostream& out, const IcTable& table);

} // namespace hetpeer
