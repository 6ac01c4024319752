#include "sce/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace sce::cli {

namespace {

const std::vector<std::string> kKnownMethods = {"ED", "LP", "SDP2", "SDP3"};

std::string fmt(Real x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

Index binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  Index r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

kssce::Backend backend_of(const std::string& method) {
  if (method == "LP") return kssce::Backend::LP;
  if (method == "SDP2") return kssce::Backend::SDP2;
  return kssce::Backend::SDP3;
}

}  // namespace

std::vector<std::string> validate_config(const json& j) {
  std::vector<std::string> errs;
  if (!j.is_object()) return {"config: top level must be an object"};

  if (!j.contains("model") || !j["model"].is_object()) {
    errs.push_back("model: section required");
    return errs;
  }
  const json& m = j["model"];
  const std::string family = m.value("family", "");
  if (family != "spinless_chain" && family != "spinful_lattice")
    errs.push_back("model.family: must be 'spinless_chain' or 'spinful_lattice'");

  const bool has_u = m.contains("U"), has_ugrid = m.contains("U_grid");
  if (!has_u && !has_ugrid) errs.push_back("model.U or model.U_grid: required");
  if (has_u && has_ugrid) errs.push_back("model.U and model.U_grid: give one, not both");
  if (has_ugrid && (!m["U_grid"].is_array() || m["U_grid"].empty()))
    errs.push_back("model.U_grid: must be a nonempty array");

  if (family == "spinless_chain") {
    const bool has_l = m.contains("L"), has_lgrid = m.contains("L_grid");
    if (!has_l && !has_lgrid) errs.push_back("model.L or model.L_grid: required");
    if (has_l && has_lgrid) errs.push_back("model.L and model.L_grid: give one, not both");
    if (has_lgrid && (!m["L_grid"].is_array() || m["L_grid"].empty()))
      errs.push_back("model.L_grid: must be a nonempty array");
    const std::string prof = m.value("profile", "");
    if (prof != "NN" && prof != "NNN" && prof != "NNNN")
      errs.push_back("model.profile: must be 'NN', 'NNN' or 'NNNN'");
    if (has_lgrid && has_ugrid) errs.push_back("model: sweep over U_grid or L_grid, not both");
  } else if (family == "spinful_lattice") {
    if (!m.contains("Lx") || !m.contains("Ly")) errs.push_back("model.Lx and model.Ly: required");
    if (m.contains("L_grid")) errs.push_back("model.L_grid: only supported for spinless_chain");
    if (m.contains("V") && m.contains("V_ratio"))
      errs.push_back("model.V and model.V_ratio: give one, not both");
  }

  const bool has_n = m.contains("N"), has_fill = m.contains("filling");
  if (!has_n && !has_fill) errs.push_back("model.N or model.filling: required");
  if (has_n && has_fill) errs.push_back("model.N and model.filling: give one, not both");
  if (has_fill) {
    const Real f = m["filling"].get<Real>();
    if (!(f > 0 && f < 1)) errs.push_back("model.filling: must lie in (0,1)");
  }

  if (!j.contains("methods") || !j["methods"].is_array() || j["methods"].empty())
    errs.push_back("methods: nonempty list required");
  else
    for (const auto& method : j["methods"]) {
      const std::string s = method.get<std::string>();
      if (std::find(kKnownMethods.begin(), kKnownMethods.end(), s) == kKnownMethods.end())
        errs.push_back("methods: unknown method '" + s + "'");
    }

  if (j.contains("scf")) {
    const json& s = j["scf"];
    if (s.contains("alpha")) {
      const Real a = s["alpha"].get<Real>();
      if (!(a > 0 && a <= 1)) errs.push_back("scf.alpha: must lie in (0,1]");
    }
    if (s.contains("mixing")) {
      const std::string mx = s["mixing"].get<std::string>();
      if (mx != "simple" && mx != "anderson") errs.push_back("scf.mixing: 'simple' or 'anderson'");
    }
    if (s.contains("tolerance") && !(s["tolerance"].get<Real>() > 0))
      errs.push_back("scf.tolerance: must be positive");
  }
  if (j.contains("solver") && j["solver"].contains("tolerance") &&
      !(j["solver"]["tolerance"].get<Real>() > 0))
    errs.push_back("solver.tolerance: must be positive");
  return errs;
}

ExperimentConfig parse_config(const json& j) {
  const auto errs = validate_config(j);
  if (!errs.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  ExperimentConfig cfg;
  cfg.raw = j;
  const json& m = j["model"];
  cfg.model.family = m["family"].get<std::string>();
  cfg.model.profile = m.value("profile", "");
  cfg.model.L = m.value("L", 0);
  if (m.contains("L_grid")) cfg.model.L_grid = m["L_grid"].get<std::vector<int>>();
  cfg.model.Lx = m.value("Lx", 0);
  cfg.model.Ly = m.value("Ly", 0);
  if (m.contains("U"))
    cfg.model.U_grid = {m["U"].get<Real>()};
  else
    cfg.model.U_grid = m["U_grid"].get<std::vector<Real>>();
  if (m.contains("V")) cfg.model.V = m["V"].get<Real>();
  if (m.contains("V_ratio")) cfg.model.V_ratio = m["V_ratio"].get<Real>();
  cfg.model.N = m.value("N", -1);
  cfg.model.filling = m.value("filling", -1.0);

  cfg.methods = j["methods"].get<std::vector<std::string>>();
  cfg.seed = j.value("seed", 0u);
  cfg.ed_cap = j.value("ed_cap", 200000);
  if (j.contains("output") && j["output"].contains("dir"))
    cfg.out_dir = j["output"]["dir"].get<std::string>();

  if (j.contains("scf")) {
    const json& s = j["scf"];
    if (s.contains("mixing"))
      cfg.scf.mixing = s["mixing"].get<std::string>() == "simple" ? kssce::Mixing::simple
                                                                  : kssce::Mixing::anderson;
    cfg.scf.alpha = s.value("alpha", cfg.scf.alpha);
    cfg.scf.anderson_depth = s.value("history", cfg.scf.anderson_depth);
    cfg.scf.density_tolerance = s.value("tolerance", cfg.scf.density_tolerance);
    cfg.scf.max_iterations = s.value("max_iterations", cfg.scf.max_iterations);
    cfg.scf.boundary_clamp = s.value("clamp", cfg.scf.boundary_clamp);
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    cfg.scf.solver.tolerance = s.value("tolerance", cfg.scf.solver.tolerance);
    cfg.scf.solver.max_iterations = s.value("max_iterations", cfg.scf.solver.max_iterations);
    cfg.scf.solver.penalty = s.value("penalty", cfg.scf.solver.penalty);
    cfg.scf.solver.over_relaxation = s.value("over_relaxation", cfg.scf.solver.over_relaxation);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    size_t line = 1;
    for (size_t i = 0; i < std::min(text.size(), e.byte); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(path + ":" + std::to_string(line) + ": " + e.what());
  }
  return parse_config(j);
}

std::vector<GridPoint> grid_points(const ExperimentConfig& cfg) {
  std::vector<GridPoint> pts;
  const auto& m = cfg.model;
  auto fill_n = [&](int L) {
    return m.N >= 0 ? m.N : (int)std::lround(m.filling * L);
  };
  if (m.family == "spinless_chain") {
    const std::vector<int> ls = m.L_grid.empty() ? std::vector<int>{m.L} : m.L_grid;
    for (int L : ls)
      for (Real U : m.U_grid) {
        GridPoint p;
        p.L = L;
        p.N = fill_n(L);
        p.U = U;
        pts.push_back(p);
      }
  } else {
    const int L = 2 * m.Lx * m.Ly;
    for (Real U : m.U_grid) {
      GridPoint p;
      p.Lx = m.Lx;
      p.Ly = m.Ly;
      p.L = L;
      p.N = fill_n(L);
      p.U = U;
      p.V = m.V_ratio ? (*m.V_ratio * U) : m.V.value_or(0.0);
      pts.push_back(p);
    }
  }
  return pts;
}

model::HamiltonianSpec build_model(const ExperimentConfig& cfg, const GridPoint& pt) {
  if (cfg.model.family == "spinless_chain") {
    model::Profile prof = model::Profile::NN;
    if (cfg.model.profile == "NNN") prof = model::Profile::NNN;
    if (cfg.model.profile == "NNNN") prof = model::Profile::NNNN;
    return model::build_spinless_chain(pt.L, pt.U, prof);
  }
  return model::build_spinful_lattice(pt.Lx, pt.Ly, pt.U, pt.V);
}

namespace {

ResultRow run_task(const ExperimentConfig& cfg, const GridPoint& pt, const std::string& method,
                   std::vector<std::string>& warnings, std::mutex& warn_mutex) {
  ResultRow row;
  row.method = method;
  row.point = pt;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const model::HamiltonianSpec h = build_model(cfg, pt);
    if (method == "ED") {
      const Index dim = binomial(h.L, pt.N);
      if (dim > cfg.ed_cap) {
        std::scoped_lock lk(warn_mutex);
        warnings.push_back("ED omitted at L=" + std::to_string(pt.L) + " N=" +
                           std::to_string(pt.N) + ": sector dimension " + std::to_string(dim) +
                           " exceeds cap " + std::to_string(cfg.ed_cap));
        return row;
      }
      const auto ed = model::exact_ground_state(h, pt.N);
      row.energy = ed.energy;
      row.converged = true;
    } else {
      kssce::SCFConfig scf = cfg.scf;
      scf.backend = backend_of(method);
      const auto r = kssce::scf_iterate(h, pt.N, scf);
      row.energy = r.e_total;
      row.converged = r.converged && !r.backend_failed;
      row.scf_iterations = r.iterations;
      row.solver_iterations = r.backend_iterations;
      row.v_sce = r.v_sce;
    }
  } catch (const std::exception& e) {
    std::scoped_lock lk(warn_mutex);
    warnings.push_back(method + " failed at L=" + std::to_string(pt.L) + " U=" + fmt(pt.U) +
                       ": " + e.what());
    row.converged = false;
  }
  row.wall_seconds =
      std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

}  // namespace

RunOutput run_points(const ExperimentConfig& cfg, int jobs) {
  RunOutput out;
  const auto pts = grid_points(cfg);
  struct Task {
    size_t point;
    size_t method;
  };
  std::vector<Task> tasks;
  for (size_t p = 0; p < pts.size(); ++p)
    for (size_t m = 0; m < cfg.methods.size(); ++m) tasks.push_back({p, m});
  out.rows.resize(tasks.size());

  std::mutex warn_mutex;
  std::atomic<size_t> next{0};
  const int n_workers = std::max(1, std::min<int>(jobs > 0 ? jobs : (int)std::thread::hardware_concurrency(),
                                                  (int)tasks.size()));
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      out.rows[i] =
          run_task(cfg, pts[tasks[i].point], cfg.methods[tasks[i].method], out.warnings, warn_mutex);
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Energy differences against ED, per grid point.
  for (size_t p = 0; p < pts.size(); ++p) {
    std::optional<Real> ed_energy;
    for (size_t m = 0; m < cfg.methods.size(); ++m)
      if (cfg.methods[m] == "ED" && out.rows[p * cfg.methods.size() + m].energy)
        ed_energy = out.rows[p * cfg.methods.size() + m].energy;
    if (!ed_energy) continue;
    for (size_t m = 0; m < cfg.methods.size(); ++m) {
      auto& row = out.rows[p * cfg.methods.size() + m];
      if (row.energy) row.diff_vs_ed = *row.energy - *ed_energy;
    }
  }

  // Structured summary.
  json points = json::array();
  for (size_t p = 0; p < pts.size(); ++p) {
    json jp;
    jp["L"] = pts[p].L;
    jp["N"] = pts[p].N;
    jp["U"] = pts[p].U;
    jp["V"] = pts[p].V;
    if (pts[p].Lx > 0) {
      jp["Lx"] = pts[p].Lx;
      jp["Ly"] = pts[p].Ly;
    }
    json methods;
    for (size_t m = 0; m < cfg.methods.size(); ++m) {
      const auto& row = out.rows[p * cfg.methods.size() + m];
      json jm;
      if (row.energy) jm["energy"] = *row.energy;
      if (row.diff_vs_ed) jm["diff_vs_ed"] = *row.diff_vs_ed;
      jm["converged"] = row.converged;
      jm["scf_iterations"] = row.scf_iterations;
      jm["solver_iterations"] = row.solver_iterations;
      jm["wall_seconds"] = row.wall_seconds;
      methods[row.method] = jm;
    }
    jp["methods"] = methods;
    points.push_back(jp);
  }
  out.summary["config"] = cfg.raw;
  out.summary["seed"] = cfg.seed;
  out.summary["points"] = points;
  out.summary["warnings"] = out.warnings;
  return out;
}

std::string results_header() {
  return "method\tfamily\tprofile\tLx\tLy\tL\tN\tU\tV\tenergy\tenergy_per_U\tdiff_vs_ED\t"
         "converged\tscf_iterations\tsolver_iterations\twall_seconds\tv_sce";
}

std::string format_row(const ExperimentConfig& cfg, const ResultRow& row) {
  std::ostringstream os;
  const auto& p = row.point;
  os << row.method << '\t' << cfg.model.family << '\t'
     << (cfg.model.profile.empty() ? "-" : cfg.model.profile) << '\t' << p.Lx << '\t' << p.Ly
     << '\t' << p.L << '\t' << p.N << '\t' << fmt(p.U) << '\t' << fmt(p.V) << '\t';
  os << (row.energy ? fmt(*row.energy) : "") << '\t';
  os << (row.energy && p.U != 0 ? fmt(*row.energy / p.U) : "") << '\t';
  os << (row.diff_vs_ed ? fmt(*row.diff_vs_ed) : "") << '\t';
  os << (row.converged ? "true" : "false") << '\t' << row.scf_iterations << '\t'
     << row.solver_iterations << '\t' << fmt(row.wall_seconds) << '\t';
  for (Index i = 0; i < row.v_sce.size(); ++i) {
    if (i) os << ',';
    os << fmt(row.v_sce[i]);
  }
  return os.str();
}

void write_output(const RunOutput& out, const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream tsv(out_dir + "/results.tsv");
    tsv << results_header() << '\n';
    for (const auto& row : out.rows) tsv << format_row(cfg, row) << '\n';
  }
  {
    std::ofstream js(out_dir + "/summary.json");
    js << out.summary.dump(2) << '\n';
  }
}

std::vector<std::vector<std::string>> parse_table(const std::string& tsv_text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(tsv_text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    for (;;) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace sce::cli
