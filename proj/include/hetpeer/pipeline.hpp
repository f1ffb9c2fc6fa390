#pragma once
#include "hetpeer/bootstrap.hpp"
#include "hetpeer/model_selection.hpp"
#include "hetpeer/version.hpp"

#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace hetpeer {

struct PipelineConfig {
    int k_max = 4;
    /// Fix K instead of selecting it by the information criterion.
    std::optional<int> fixed_k;
    std::optional<double> lambda;
    std::optional<double> rho;
    double rho_scale = 0.5;
    double ccp_tol = 1e-5;
    double eq_tol = 1e-10;
    int max_outer = 500;
    /// 0 skips inference.
    int boot_reps = 500;
    double alpha = 0.05;
    double mu_bound = 10.0;
    std::uint64_t seed = 0;
    int threads = 1;

    /// Throws ValidationError.
    void validate() const;
    NplConfig npl() const;
    ClassoConfig classo() const;
    BootstrapConfig bootstrap(int cluster) const;
};

struct ClusterReport {
    int cluster = 0;
    std::vector<std::size_t> groups;
    std::optional<NplFit> fit;
    std::vector<InferenceReport> inference;
    std::string failure;
};

struct PipelineReport {
    PerGroupFits first_step;
    IcTable ic;
    int selected_k = 0;
    std::vector<int> membership;
    std::vector<ClusterReport> clusters;
    std::vector<std::string> warnings;
};

/// Per-group NPL, C-Lasso and post fits for K in 1..k_max, IC selection,
/// then bootstrap inference per selected cluster. Errors carry a stage tag.
PipelineReport run_pipeline(const Panel& panel, const PipelineConfig& config);

nlohmann::json config_to_json(const PipelineConfig& config);
nlohmann::json report_to_json(const Panel& panel, const PipelineReport& report,
                              const PipelineConfig& config);
/// Aligned text summary of the selected clusters.
void write_text_report(std::ostream& out, const Panel& panel, const PipelineReport& report);

} // namespace hetpeer
