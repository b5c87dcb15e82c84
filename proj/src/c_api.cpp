#include "nhsync.h"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "nhsync/chaos.hpp"
#include "nhsync/error.hpp"
#include "nhsync/experiment.hpp"
#include "nhsync/invariant_graph.hpp"
#include "nhsync/models.hpp"

struct nhsync_config {
  nhsync::experiment::Config config;
};

struct nhsync_graph {
  nhsync::TorusGraph graph;
};

namespace {

thread_local std::string g_last_error;

int set_error(int status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

// Runs fn, translating exceptions into status codes and the thread's last error.
template <class Fn>
int guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return NHSYNC_OK;
  } catch (const nhsync::Error& e) {
    return set_error(static_cast<int>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(NHSYNC_INTERNAL_CONSISTENCY, "out of memory");
  } catch (const std::exception& e) {
    return set_error(NHSYNC_INTERNAL_CONSISTENCY, e.what());
  } catch (...) {
    return set_error(NHSYNC_INTERNAL_CONSISTENCY, "unknown failure");
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

#define NHSYNC_REQUIRE_ARG(cond, what) \
  if (!(cond)) return set_error(NHSYNC_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* nhsync_version(void) { return NHSYNC_VERSION; }

const char* nhsync_last_error(void) { return g_last_error.c_str(); }

const char* nhsync_status_name(int status) {
  if (status < 0 || status > NHSYNC_IO) return "Unknown";
  return nhsync::error_code_name(static_cast<nhsync::ErrorCode>(status));
}

void nhsync_string_free(char* s) { std::free(s); }

int nhsync_config_parse(const char* json_text, nhsync_config** out) {
  NHSYNC_REQUIRE_ARG(json_text && out, "json_text and out must be non-null");
  *out = nullptr;
  return guarded([&] { *out = new nhsync_config{nhsync::experiment::Config::parse(json_text)}; });
}

int nhsync_config_load(const char* path, nhsync_config** out) {
  NHSYNC_REQUIRE_ARG(path && out, "path and out must be non-null");
  *out = nullptr;
  return guarded([&] { *out = new nhsync_config{nhsync::experiment::Config::load(path)}; });
}

void nhsync_config_free(nhsync_config* config) { delete config; }

int nhsync_config_normalized(const nhsync_config* config, char** out) {
  NHSYNC_REQUIRE_ARG(config && out, "config and out must be non-null");
  *out = nullptr;
  return guarded([&] { *out = dup_string(config->config.normalized()); });
}

int nhsync_config_set_seed(nhsync_config* config, uint64_t seed) {
  NHSYNC_REQUIRE_ARG(config, "config must be non-null");
  return guarded([&] { config->config.set_seed(seed); });
}

int nhsync_config_set_threads(nhsync_config* config, size_t threads) {
  NHSYNC_REQUIRE_ARG(config, "config must be non-null");
  return guarded([&] { config->config.set_threads(threads); });
}

int nhsync_config_set_output_dir(nhsync_config* config, const char* dir) {
  NHSYNC_REQUIRE_ARG(config && dir, "config and dir must be non-null");
  return guarded([&] { config->config.set_output_dir(dir); });
}

int nhsync_run(const nhsync_config* config, int* exit_code, char** summary) {
  NHSYNC_REQUIRE_ARG(config && exit_code, "config and exit_code must be non-null");
  if (summary) *summary = nullptr;
  return guarded([&] {
    const auto r = nhsync::experiment::run(config->config);
    *exit_code = r.exit_code;
    if (r.exit_code != 0) g_last_error = r.message;
    if (summary) {
      nlohmann::ordered_json j = {{"exit_code", r.exit_code},
                                  {"output_dir", r.output_dir},
                                  {"artifacts", r.artifacts},
                                  {"error", r.error_name.empty() ? nullptr : nlohmann::ordered_json(r.error_name)},
                                  {"message", r.message}};
      *summary = dup_string(j.dump());
    }
  });
}

int nhsync_persistence_threshold(double alpha, double a, double* out) {
  NHSYNC_REQUIRE_ARG(out, "out must be non-null");
  return guarded([&] { *out = nhsync::persistence_threshold(alpha, a); });
}

int nhsync_coherence(const double* crossing_times, size_t n, double* mean_return, double* spread,
                     double* coherence_index) {
  NHSYNC_REQUIRE_ARG(crossing_times || n == 0, "crossing_times must be non-null");
  return guarded([&] {
    const auto r = nhsync::coherence(std::span<const double>(crossing_times, n));
    if (mean_return) *mean_return = r.c;
    if (spread) *spread = r.spread;
    if (coherence_index) *coherence_index = r.coherence_index;
  });
}

int nhsync_poincare_graph_solve(double alpha, double a, double omega, double gamma, int forcing,
                                double forcing_frequency, size_t grid, double tol,
                                nhsync_graph** out) {
  NHSYNC_REQUIRE_ARG(out, "out must be non-null");
  NHSYNC_REQUIRE_ARG(forcing >= 0 && forcing <= 2, "forcing must be 0, 1 or 2");
  *out = nullptr;
  return guarded([&] {
    nhsync::models::PoincareParams p;
    p.alpha = alpha;
    p.a = a;
    p.omega = omega;
    p.gamma = gamma;
    p.forcing = forcing == 0 ? nhsync::models::Forcing::Zero
                             : (forcing == 1 ? nhsync::models::Forcing::SingleTone
                                             : nhsync::models::Forcing::TwoTone);
    p.forcing_frequency = forcing_frequency;
    const auto chart = nhsync::models::poincare_polar(p);
    nhsync::SolveOptions so;
    so.tol = tol;
    auto sol = nhsync::solve_graph(nhsync::reference_graph(*chart, grid), *chart, so);
    *out = new nhsync_graph{std::move(sol.graph)};
  });
}

void nhsync_graph_free(nhsync_graph* graph) { delete graph; }

size_t nhsync_graph_torus_dim(const nhsync_graph* graph) { return graph ? graph->graph.torus_dim() : 0; }

size_t nhsync_graph_normal_dim(const nhsync_graph* graph) { return graph ? graph->graph.normal_dim() : 0; }

int nhsync_graph_eval(const nhsync_graph* graph, const double* angles, double* out) {
  NHSYNC_REQUIRE_ARG(graph && angles && out, "graph, angles and out must be non-null");
  return guarded([&] {
    graph->graph.evaluate(std::span<const double>(angles, graph->graph.torus_dim()),
                          std::span<double>(out, graph->graph.normal_dim()));
  });
}

}  // extern "C"
