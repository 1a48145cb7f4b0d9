#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "selmo/agent.hpp"
#include "selmo/core.hpp"
#include "selmo/csv.hpp"
#include "selmo/envs.hpp"
#include "selmo/hierarchy.hpp"
#include "selmo/orchestrator.hpp"
#include "selmo/rng.hpp"

namespace selmo {

inline constexpr const char* kEvalHeader = "snapshot_episode,task,mean,std,n_eval";

struct EvalRow {
    std::int64_t snapshot_episode = 0;
    std::string task;
    double mean = 0.0;
    double std = 0.0;  ///< population standard deviation over the evaluation episodes
    int n_eval = 0;

    bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
    std::vector<EvalRow> rows;        ///< sorted by (snapshot_episode, task)
    std::vector<std::string> warnings;  ///< snapshots that could not be evaluated

    bool operator==(const EvalReport& o) const { return rows == o.rows; }
};

inline std::string emit_eval_csv(const EvalReport& report) {
    std::string out = std::string(kEvalHeader) + "\n";
    for (const auto& r : report.rows)
        out += std::to_string(r.snapshot_episode) + "," + r.task + "," + csv::format_double(r.mean) + "," +
               csv::format_double(r.std) + "," + std::to_string(r.n_eval) + "\n";
    return out;
}

inline EvalReport parse_eval_csv(std::string_view text) {
    const csv::Table t = csv::parse(text);
    if (t.header != csv::split(kEvalHeader)) throw FormatError("eval report: unexpected header");
    EvalReport report;
    for (const auto& row : t.rows)
        report.rows.push_back({csv::parse_int(row[0]), row[1], csv::parse_double(row[2]), csv::parse_double(row[3]),
                               static_cast<int>(csv::parse_int(row[4]))});
    return report;
}

/// Sum of each task reward over one deterministic (mean-action) episode.
inline std::map<std::string, double> rollout_returns(envs::Environment& env, const GaussianPolicy& policy,
                                                     const std::vector<std::string>& tasks, std::uint64_t seed) {
    std::map<std::string, double> returns;
    for (const auto& t : tasks) returns[t] = 0.0;
    Vec s = normalize(env.reset(seed), env.spec());
    while (!env.done()) {
        envs::StepResult r = env.step(act_mean(policy, s));
        s = normalize(r.observation, env.spec());
        const auto rewards = env.eval_rewards();
        for (const auto& t : tasks) returns[t] += rewards.at(t);
    }
    return returns;
}

/// Runs every snapshot in `directory` for `n_eval` seeded deterministic episodes and reports per-task
/// mean/std of the episode returns. Unloadable snapshots are skipped and listed in `warnings`.
inline EvalReport eval_snapshots(const std::filesystem::path& directory, const std::string& env_name,
                                 const std::vector<std::string>& tasks, int n_eval = 20, std::uint64_t seed = 0) {
    if (n_eval < 1) throw InvalidInput("eval_snapshots: n_eval must be positive");
    auto env = envs::make_env(env_name);
    for (const auto& t : tasks)
        if (!env->has_task(t)) throw InvalidInput("eval_snapshots: unknown task '" + t + "' for " + env_name);
    EvalReport report;
    for (std::int64_t idx : list_snapshots(directory)) {
        PolicySnapshot snap;
        try {
            snap = load_policy(snapshot_stem(directory, idx));
            if (snap.policy.state_dim() != env->spec().state_dim || snap.policy.action_dim() != env->spec().action_dim)
                throw FormatError("dimension mismatch with " + env_name);
        } catch (const std::exception& e) {
            report.warnings.push_back("snapshot " + std::to_string(idx) + " skipped: " + e.what());
            continue;
        }
        std::map<std::string, std::vector<double>> samples;
        for (int i = 0; i < n_eval; ++i) {
            const auto returns = rollout_returns(*env, snap.policy, tasks, derive_seed(seed, static_cast<std::uint64_t>(i)));
            for (const auto& [task, value] : returns) samples[task].push_back(value);
        }
        for (const auto& [task, values] : samples) {
            const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
            double var = 0.0;
            for (double v : values) var += (v - mean) * (v - mean);
            var /= static_cast<double>(values.size());
            report.rows.push_back({idx, task, mean, std::sqrt(var), n_eval});
        }
    }
    std::sort(report.rows.begin(), report.rows.end(), [](const EvalRow& a, const EvalRow& b) {
        return a.snapshot_episode != b.snapshot_episode ? a.snapshot_episode < b.snapshot_episode : a.task < b.task;
    });
    return report;
}

/// Gaussian kernel smoothing. The kernel is truncated at 4 sigma and renormalized where it overhangs
/// the series ends, so constant series pass through unchanged.
inline std::vector<double> smooth(const std::vector<double>& series, double sigma = 1.5) {
    if (!(sigma > 0.0)) throw InvalidInput("smooth: sigma must be positive");
    const auto n = static_cast<std::ptrdiff_t>(series.size());
    const auto radius = static_cast<std::ptrdiff_t>(std::floor(4.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(radius + 1));
    for (std::ptrdiff_t k = 0; k <= radius; ++k)
        kernel[static_cast<std::size_t>(k)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    std::vector<double> out(series.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        double norm = 0.0;
        for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - radius); j <= std::min(n - 1, i + radius); ++j) {
            const double w = kernel[static_cast<std::size_t>(std::abs(j - i))];
            acc += w * series[static_cast<std::size_t>(j)];
            norm += w;
        }
        out[static_cast<std::size_t>(i)] = acc / norm;
    }
    return out;
}

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Turns a CSV table into plottable series. The first column is the x axis, the first remaining numeric
/// column (ignoring seed, n_eval and std) is the y axis, and non-numeric columns split rows into series.
/// Rows sharing a series and x value (for example several seeds) are averaged, then smoothed.
inline std::vector<PlotSeries> series_from_table(const csv::Table& table, double sigma) {
    if (table.header.size() < 2 || table.rows.empty()) throw FormatError("plot: need a header and at least one row");
    const std::set<std::string> ignored{"seed", "n_eval", "std"};
    std::vector<std::size_t> key_cols;
    std::optional<std::size_t> y_col;
    for (std::size_t c = 1; c < table.header.size(); ++c) {
        const bool numeric = std::all_of(table.rows.begin(), table.rows.end(),
                                         [&](const auto& row) { return csv::is_number(row.at(c)); });
        if (!numeric)
            key_cols.push_back(c);
        else if (!y_col && !ignored.contains(table.header[c]))
            y_col = c;
    }
    if (!y_col) throw FormatError("plot: no numeric value column");
    std::map<std::string, std::map<double, std::pair<double, int>>> grouped;
    for (const auto& row : table.rows) {
        std::string key;
        for (std::size_t c : key_cols) key += (key.empty() ? "" : " ") + row.at(c);
        if (key.empty()) key = table.header[*y_col];
        auto& cell = grouped[key][csv::parse_double(row.at(0))];
        cell.first += csv::parse_double(row.at(*y_col));
        cell.second += 1;
    }
    std::vector<PlotSeries> out;
    for (const auto& [label, points] : grouped) {
        PlotSeries s{label, {}, {}};
        for (const auto& [x, acc] : points) {
            s.x.push_back(x);
            s.y.push_back(acc.first / acc.second);
        }
        s.y = smooth(s.y, sigma);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::string render_svg(const std::vector<PlotSeries>& series, const std::string& x_label,
                              const std::string& y_label) {
    constexpr double W = 640, H = 400, L = 60, R = 160, T = 20, B = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

    std::ostringstream o;
    o.precision(6);
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << xv
          << "</text>\n"
          << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << yv
          << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" font-size=\"12\" text-anchor=\"middle\">"
      << x_label << "</text>\n"
      << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = colors[i % std::size(colors)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < series[i].x.size(); ++k)
            o << (k ? " " : "") << px(series[i].x[k]) << ',' << py(series[i].y[k]);
        o << "\"/>\n"
          << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 14 + 16.0 * static_cast<double>(i) << "\" font-size=\"11\" fill=\""
          << color << "\">" << series[i].label << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline std::string plot_csv(std::string_view csv_text, double sigma = 1.5) {
    const csv::Table table = csv::parse(csv_text);
    const auto series = series_from_table(table, sigma);
    std::string y_label;
    for (std::size_t c = 1; c < table.header.size() && y_label.empty(); ++c)
        if (table.header[c] != "seed" && table.header[c] != "n_eval" && table.header[c] != "std" &&
            csv::is_number(table.rows.front().at(c)))
            y_label = table.header[c];
    return render_svg(series, table.header.front(), y_label);
}

}  // namespace selmo
