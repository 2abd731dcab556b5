#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "palm/eval/controller.hpp"

namespace palm::eval {

struct EpisodeResult {
    int completed = 0; // leading consecutively completed subtasks
    int chain_length = 0;
    int steps = 0;
    std::vector<double> progress_trace; // predicted progress per executed step
    std::vector<int> injection_steps;
    std::vector<SwitchEvent> switches;
};

struct EvalReport {
    int chain_length = 0;
    std::vector<double> success_rates; // SR(1..K)
    double avg_len = 0.0;
    std::vector<int> completed_counts;
    std::string perturbation; // empty when unperturbed
    double phi = 0.9;
    std::vector<EpisodeResult> episodes;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

/// SR(k) = fraction of episodes with completed >= k; Avg. Len. = sum_k SR(k).
EvalReport success_in_row_metrics(const std::vector<EpisodeResult>& results, int chain_length);

/// Builds a report directly from per-depth success rates (Avg. Len. is their
/// sum); used to check published tables arithmetically.
EvalReport report_from_rates(const std::vector<double>& rates);

/// Writes report.json, report.md and the SVG plots; throws (writing nothing)
/// on an empty report.
void emit_report(const EvalReport& report, const std::string& out_dir);

} // namespace palm::eval
