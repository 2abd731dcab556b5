#include "palm/eval/metrics.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace palm::eval {

namespace fs = std::filesystem;
using nlohmann::json;

json EvalReport::to_json() const {
    json j;
    j["chain_length"] = chain_length;
    j["success_rates"] = success_rates;
    j["avg_len"] = avg_len;
    j["completed_counts"] = completed_counts;
    j["perturbation"] = perturbation;
    j["phi"] = phi;
    j["episodes"] = json::array();
    for (const auto& e : episodes) {
        json ej;
        ej["completed"] = e.completed;
        ej["chain_length"] = e.chain_length;
        ej["steps"] = e.steps;
        ej["progress_trace"] = e.progress_trace;
        ej["injection_steps"] = e.injection_steps;
        json sw = json::array();
        for (const auto& s : e.switches) sw.push_back({{"step", s.step}, {"from", s.from}, {"to", s.to}});
        ej["switches"] = sw;
        j["episodes"].push_back(ej);
    }
    return j;
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    r.chain_length = j.at("chain_length").get<int>();
    r.success_rates = j.at("success_rates").get<std::vector<double>>();
    r.avg_len = j.at("avg_len").get<double>();
    r.completed_counts = j.at("completed_counts").get<std::vector<int>>();
    r.perturbation = j.at("perturbation").get<std::string>();
    r.phi = j.at("phi").get<double>();
    for (const auto& ej : j.at("episodes")) {
        EpisodeResult e;
        e.completed = ej.at("completed").get<int>();
        e.chain_length = ej.at("chain_length").get<int>();
        e.steps = ej.at("steps").get<int>();
        e.progress_trace = ej.at("progress_trace").get<std::vector<double>>();
        e.injection_steps = ej.at("injection_steps").get<std::vector<int>>();
        for (const auto& sj : ej.at("switches"))
            e.switches.push_back({sj.at("step").get<int>(), sj.at("from").get<int>(),
                                  sj.at("to").get<int>()});
        r.episodes.push_back(std::move(e));
    }
    return r;
}

EvalReport success_in_row_metrics(const std::vector<EpisodeResult>& results, int chain_length) {
    if (results.empty())
        throw std::invalid_argument("empty-results: metrics need at least one episode");
    EvalReport r;
    r.chain_length = chain_length;
    r.episodes = results;
    for (const auto& e : results) r.completed_counts.push_back(e.completed);
    for (int k = 1; k <= chain_length; ++k) {
        int hits = 0;
        for (int c : r.completed_counts)
            if (c >= k) ++hits;
        r.success_rates.push_back(static_cast<double>(hits) / results.size());
    }
    double sum = 0.0;
    for (double s : r.success_rates) sum += s;
    r.avg_len = sum;
    return r;
}

EvalReport report_from_rates(const std::vector<double>& rates) {
    if (rates.empty()) throw std::invalid_argument("empty-results: no rates given");
    EvalReport r;
    r.chain_length = static_cast<int>(rates.size());
    r.success_rates = rates;
    for (double s : rates) r.avg_len += s;
    return r;
}

namespace {

std::string svg_success_bars(const EvalReport& r) {
    const int w = 440, h = 280, pad = 40;
    std::string s = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(w) +
                    "' height='" + std::to_string(h) + "'>\n";
    s += "<rect width='100%' height='100%' fill='white'/>\n";
    const int n = static_cast<int>(r.success_rates.size());
    const double bw = static_cast<double>(w - 2 * pad) / std::max(1, n);
    for (int k = 0; k < n; ++k) {
        const double v = r.success_rates[static_cast<std::size_t>(k)];
        const double bh = v * (h - 2 * pad);
        const double x = pad + k * bw + 6;
        const double y = h - pad - bh;
        s += "<rect x='" + std::to_string(x) + "' y='" + std::to_string(y) + "' width='" +
             std::to_string(bw - 12) + "' height='" + std::to_string(bh) +
             "' fill='#4878cf'/>\n";
        s += "<text x='" + std::to_string(x + (bw - 12) / 2) + "' y='" + std::to_string(h - pad + 16) +
             "' font-size='12' text-anchor='middle'>" + std::to_string(k + 1) + "</text>\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", v);
        s += "<text x='" + std::to_string(x + (bw - 12) / 2) + "' y='" + std::to_string(y - 4) +
             "' font-size='11' text-anchor='middle'>" + buf + "</text>\n";
    }
    char avg[64];
    std::snprintf(avg, sizeof(avg), "Avg. Len. %.3f", r.avg_len);
    s += "<text x='" + std::to_string(pad) + "' y='20' font-size='13'>success in a row (" +
         std::string(avg) + ")</text>\n";
    s += "</svg>\n";
    return s;
}

std::string svg_progress_traces(const EvalReport& r, std::size_t max_traces = 8) {
    const int w = 640, h = 320, pad = 40;
    std::string s = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(w) +
                    "' height='" + std::to_string(h) + "'>\n";
    s += "<rect width='100%' height='100%' fill='white'/>\n";
    s += "<text x='" + std::to_string(pad) + "' y='20' font-size='13'>predicted progress</text>\n";
    const char* colors[8] = {"#4878cf", "#ee854a", "#6acc65", "#d65f5f",
                             "#956cb4", "#8c613c", "#dc7ec0", "#797979"};
    int longest = 1;
    for (const auto& e : r.episodes) longest = std::max(longest, static_cast<int>(e.progress_trace.size()));
    const std::size_t n = std::min(max_traces, r.episodes.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = r.episodes[i];
        if (e.progress_trace.empty()) continue;
        std::string pts;
        for (std::size_t t = 0; t < e.progress_trace.size(); ++t) {
            const double x = pad + (w - 2.0 * pad) * static_cast<double>(t) / longest;
            const double y = h - pad - (h - 2.0 * pad) * e.progress_trace[t];
            pts += std::to_string(x) + "," + std::to_string(y) + " ";
        }
        s += "<polyline fill='none' stroke='" + std::string(colors[i % 8]) +
             "' stroke-width='1.2' points='" + pts + "'/>\n";
        for (int inj : e.injection_steps) {
            const double x = pad + (w - 2.0 * pad) * static_cast<double>(inj) / longest;
            s += "<line x1='" + std::to_string(x) + "' y1='" + std::to_string(pad) + "' x2='" +
                 std::to_string(x) + "' y2='" + std::to_string(h - pad) +
                 "' stroke='#888' stroke-dasharray='4,3'/>\n";
        }
    }
    s += "</svg>\n";
    return s;
}

} // namespace

void emit_report(const EvalReport& report, const std::string& out_dir) {
    if (report.success_rates.empty() || (report.episodes.empty() && report.completed_counts.empty()))
        throw std::invalid_argument("empty-results: refusing to emit a report without episodes");
    fs::create_directories(out_dir);

    {
        std::ofstream out(fs::path(out_dir) / "report.json");
        if (!out) throw std::runtime_error("io-failure: cannot write report.json");
        out << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / "report.md");
        if (!out) throw std::runtime_error("io-failure: cannot write report.md");
        out << "# Evaluation report\n\n";
        if (!report.perturbation.empty())
            out << "Perturbation: `" << report.perturbation << "`\n\n";
        out << "| depth k | SR(k) |\n|---|---|\n";
        for (std::size_t k = 0; k < report.success_rates.size(); ++k) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", report.success_rates[k]);
            out << "| " << (k + 1) << " | " << buf << " |\n";
        }
        char avg[32];
        std::snprintf(avg, sizeof(avg), "%.4f", report.avg_len);
        out << "\nAvg. Len.: **" << avg << "** over " << report.completed_counts.size()
            << " episodes (phi = " << report.phi << ")\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / "success_bars.svg");
        out << svg_success_bars(report);
    }
    {
        std::ofstream out(fs::path(out_dir) / "progress_traces.svg");
        out << svg_progress_traces(report);
    }
}

} // namespace palm::eval
