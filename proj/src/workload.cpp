#include "msim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "msim/rng.hpp"

namespace msim::workload {

namespace {

TraceEvent parse_line(const std::string& line, const std::string& origin, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
    }
    TraceEvent ev;
    try {
        ev.arrival_s = j.at("t").get<double>();
        ev.model_id = j.at("model").get<std::string>();
        ev.prompt_tokens = j.at("prompt").get<int>();
        ev.output_tokens = j.at("output").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": missing/typed field: " + e.what());
    }
    if (!(ev.arrival_s >= 0.0)) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": negative arrival time");
    }
    if (ev.model_id.empty()) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": empty model id");
    }
    if (ev.prompt_tokens < 1) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": prompt_tokens must be >= 1");
    }
    if (ev.output_tokens < 1) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": output_tokens must be >= 1");
    }
    return ev;
}

}  // namespace

std::vector<TraceEvent> parse_trace_lines(const std::string& content, const std::string& origin) {
    std::vector<TraceEvent> out;
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        TraceEvent ev = parse_line(line, origin, line_no);
        if (!out.empty() && ev.arrival_s < out.back().arrival_s) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": arrival times out of order");
        }
        out.push_back(std::move(ev));
    }
    return out;
}

std::vector<TraceEvent> parse_trace(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open trace file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_trace_lines(buf.str(), path);
}

void write_trace(const std::string& path, const std::vector<TraceEvent>& trace) {
    std::ofstream f(path);
    if (!f) throw ParseError("cannot open trace file for writing: " + path);
    for (const auto& ev : trace) {
        nlohmann::json j;
        j["t"] = ev.arrival_s;
        j["model"] = ev.model_id;
        j["prompt"] = ev.prompt_tokens;
        j["output"] = ev.output_tokens;
        f << j.dump() << '\n';
    }
}

std::vector<TraceEvent> scale_trace(const std::vector<TraceEvent>& trace, int n,
                                    std::uint64_t seed, double jitter_window_s) {
    if (n < 1) throw UsageError("scale_trace: factor must be >= 1");
    if (n == 1) return trace;
    Rng rng(substream_seed(seed, "jitter"));
    std::vector<TraceEvent> out;
    out.reserve(trace.size() * static_cast<std::size_t>(n));
    for (const auto& ev : trace) {
        out.push_back(ev);
        for (int r = 1; r < n; ++r) {
            TraceEvent rep = ev;
            rep.arrival_s += rng.uniform01() * jitter_window_s;
            out.push_back(std::move(rep));
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.arrival_s < b.arrival_s; });
    return out;
}

WorkloadStats compute_stats(const std::vector<TraceEvent>& trace, double idle_threshold_s) {
    if (trace.empty()) throw UsageError("compute_stats: empty trace");
    WorkloadStats stats;
    stats.idle_threshold_s = idle_threshold_s;
    const double t0 = trace.front().arrival_s;
    double t_last = t0;
    std::map<std::string, std::vector<double>> arrivals;
    for (const auto& ev : trace) {
        arrivals[ev.model_id].push_back(ev.arrival_s);
        t_last = std::max(t_last, ev.arrival_s);
    }
    stats.span_s = t_last - t0;
    const std::size_t minute_bins = static_cast<std::size_t>(std::floor(stats.span_s / 60.0)) + 1;
    const double span_hours = stats.span_s / 3600.0;

    for (auto& [model, times] : arrivals) {
        ModelStats ms;
        ms.request_count = times.size();

        std::vector<double> per_min(minute_bins, 0.0);
        for (double t : times) {
            auto bin = static_cast<std::size_t>(std::floor((t - t0) / 60.0));
            if (bin >= minute_bins) bin = minute_bins - 1;
            per_min[bin] += 1.0;
        }
        double mean = 0.0;
        for (double c : per_min) mean += c;
        mean /= static_cast<double>(minute_bins);
        if (mean > 0.0) {
            double var = 0.0;
            for (double c : per_min) var += (c - mean) * (c - mean);
            var /= static_cast<double>(minute_bins);
            ms.cv_defined = true;
            ms.cv_req_per_min = std::sqrt(var) / mean;
        }

        if (times.size() >= 2) {
            ms.idle_defined = true;
            for (std::size_t i = 1; i < times.size(); ++i) {
                ms.idle_intervals_s.push_back(times[i] - times[i - 1]);
            }
            std::vector<double> sorted = ms.idle_intervals_s;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t k = sorted.size();
            ms.median_idle_s = (k % 2 == 1) ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
            for (double gap : ms.idle_intervals_s) {
                if (gap > idle_threshold_s) ++ms.idle_over_threshold;
            }
            if (span_hours > 0.0) {
                ms.idle_over_threshold_per_hour =
                    static_cast<double>(ms.idle_over_threshold) / span_hours;
            }
        }
        stats.models.emplace(model, std::move(ms));
    }
    return stats;
}

std::vector<TraceEvent> synth_trace(const SynthSpec& spec, std::uint64_t seed) {
    std::vector<TraceEvent> out;
    for (const auto& profile : spec.models) {
        Rng rng(substream_seed(seed, "trace:" + profile.model_id));
        for (const auto& seg : profile.segments) {
            if (seg.rate_per_s < 0.0) throw UsageError("synth_trace: negative rate");
            if (seg.end_s < seg.start_s) throw UsageError("synth_trace: segment ends before it starts");
            if (seg.rate_per_s == 0.0) continue;
            double t = seg.start_s;
            while (true) {
                t += rng.exponential(seg.rate_per_s);
                if (t >= seg.end_s) break;
                TraceEvent ev;
                ev.arrival_s = t;
                ev.model_id = profile.model_id;
                ev.prompt_tokens =
                    std::max(1, static_cast<int>(std::lround(rng.lognormal(profile.prompt_median, profile.prompt_sigma))));
                ev.output_tokens =
                    std::max(1, static_cast<int>(std::lround(rng.lognormal(profile.output_median, profile.output_sigma))));
                out.push_back(std::move(ev));
            }
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.arrival_s < b.arrival_s; });
    return out;
}

}  // namespace msim::workload
