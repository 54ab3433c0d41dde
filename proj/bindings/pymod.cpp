#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "splitflow/scenario.hpp"
#include "splitflow/wire.hpp"

namespace py = pybind11;
using namespace splitflow;

namespace {

ScenarioConfig resolve_scenario(const std::string& name_or_json) {
  for (const auto& b : builtin_scenarios()) {
    if (b == name_or_json) return builtin_scenario(name_or_json);
  }
  return config_from_json(name_or_json);
}

Variant resolve_variant(const std::string& v) {
  auto parsed = variant_from_name(v);
  if (!parsed) throw std::invalid_argument("unknown variant: " + v);
  return *parsed;
}

py::dict result_to_dict(const ScenarioResult& r) {
  py::dict out;
  py::list samples;
  for (const auto& m : r.samples) {
    py::dict s;
    s["t_s"] = m.t_s;
    s["flow_id"] = m.flow_id;
    s["goodput_bps"] = m.goodput_bps;
    s["e2e_delay_ms"] = m.e2e_delay_ms;
    s["cum_bytes"] = m.cum_bytes;
    samples.append(s);
  }
  out["samples"] = samples;
  py::dict flows;
  for (const auto& [id, o] : r.flows) {
    py::dict f;
    f["delivered_bytes"] = o.delivered_bytes;
    f["written_bytes"] = o.written_bytes;
    f["digest_checked"] = o.digest_checked;
    f["digest_ok"] = o.digest_ok;
    f["completed"] = o.completed;
    f["completion_s"] = o.completion_s;
    f["stall_s"] = o.stall_s;
    f["rebuilt_s"] = o.rebuilt_s;
    f["resume_s"] = o.resume_s;
    flows[py::str(id)] = f;
  }
  out["flows"] = flows;
  out["csv"] = samples_to_csv(r.samples);
  out["report"] = r.report.to_string();
  if (!r.event_log_tsv.empty()) out["event_log"] = r.event_log_tsv;
  return out;
}

}  // namespace

PYBIND11_MODULE(_splitflow, m) {
  m.doc() = "layered split-transport stack and deterministic network simulator";

  m.def("builtin_scenarios", &builtin_scenarios, "names of the built-in scenarios");

  m.def(
      "scenario_json",
      [](const std::string& name) { return to_json(builtin_scenario(name)); },
      py::arg("name"), "built-in scenario as a JSON config string");

  m.def(
      "run_scenario",
      [](const std::string& scenario, std::uint64_t seed, const std::string& variant,
         double duration_s, bool capture_log) {
        ScenarioConfig cfg = resolve_scenario(scenario);
        if (duration_s > 0) cfg.duration_s = duration_s;
        ScenarioResult r = run_scenario(cfg, seed, resolve_variant(variant), capture_log);
        return result_to_dict(r);
      },
      py::arg("scenario"), py::arg("seed") = 1, py::arg("variant") = "split",
      py::arg("duration_s") = -1.0, py::arg("capture_log") = false,
      "run a built-in scenario (by name) or a JSON config (by content); returns samples, "
      "per-flow outcomes and the link report");

  m.def(
      "compare",
      [](const std::string& scenario, std::uint64_t seed, double window_start_s,
         double window_end_s, double duration_s) {
        ScenarioConfig cfg = resolve_scenario(scenario);
        if (duration_s > 0) cfg.duration_s = duration_s;
        double w1 = window_end_s > 0 ? window_end_s : cfg.duration_s;
        double w0 = window_start_s >= 0 ? window_start_s : w1 * 3 / 4;
        auto rows = compare_runs(cfg, seed,
                                 {Variant::split, Variant::e2e_newreno, Variant::e2e_vegas},
                                 w0, w1);
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["variant"] = r.variant;
          d["mean_goodput_bps"] = r.mean_goodput_bps;
          d["mean_delay_ms"] = r.mean_delay_ms;
          d["final_cum_bytes"] = r.final_cum_bytes;
          out.append(d);
        }
        return out;
      },
      py::arg("scenario"), py::arg("seed") = 1, py::arg("window_start_s") = -1.0,
      py::arg("window_end_s") = -1.0, py::arg("duration_s") = -1.0,
      "run the three variants of a scenario and summarize the observed flow");

  m.attr("HEADER_BYTES_ENDPOINT") = kEndpointHeaderSize;
  m.attr("HEADER_BYTES_FLOW") = kFlowHeaderSize;
  m.attr("HEADER_BYTES_ISOLATION") = kIsolationHeaderSize;
  m.attr("HEADER_BYTES_FRAME") = kFrameHeaderSize;
}
