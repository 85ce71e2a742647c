#include "sgsw/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "sgsw/error.hpp"
#include "sgsw/numerics.hpp"
#include "sgsw/saddle.hpp"

namespace sgsw {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---- value parsing -------------------------------------------------------

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ValidationError(key, "expected a number, got '" + raw + "'");
  return v;
}

long parse_long(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ValidationError(key, "expected an integer, got '" + raw + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& raw) {
  const long v = parse_long(key, raw);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ValidationError(key, "out of range");
  return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ValidationError(key, "expected true or false, got '" + raw + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw ValidationError(key, "expected a comma-separated list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

BumpParams& bump_of(RunConfig& cfg) {
  if (!cfg.scenario.bump) cfg.scenario.bump = BumpParams{};
  return *cfg.scenario.bump;
}

// ---- files ---------------------------------------------------------------

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string step_tag(long step) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06ld", step);
  return buf;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw ValidationError("output", "cannot write " + p.string());
  os << std::setprecision(17);
  return os;
}

std::ifstream open_in(const fs::path& p, bool binary = false) {
  std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
  if (!is) throw ValidationError("input", "cannot read " + p.string());
  return is;
}

/// Removes artifacts a previous run may have left, so the manifest stays
/// complete for the directory.
void prepare_dir(const fs::path& dir, const std::vector<std::string>& owned) {
  fs::create_directories(dir);
  for (const auto& name : owned) fs::remove_all(dir / name);
}

json config_json(const RunConfig& cfg) {
  std::istringstream is(to_ini(cfg));
  boost::property_tree::ptree pt;
  boost::property_tree::read_ini(is, pt);
  json j = json::object();
  for (const auto& [section, body] : pt)
    for (const auto& [key, value] : body) j[section][key] = value.data();
  return j;
}

void write_json(const fs::path& p, const json& j) {
  auto os = open_out(p);
  os << j.dump(2) << '\n';
}

std::string header_line(const RunConfig& cfg) {
  std::ostringstream os;
  os << "# scenario = " << cfg.scenario.name << ", mode = " << to_string(cfg.mode) << ", eps = " << fmt(cfg.solver.eps)
     << ", grid = " << cfg.n1 << "x" << cfg.n2 << ", stepper = " << to_string(cfg.stepper.kind)
     << ", dt = " << fmt(cfg.stepper.dt) << '\n';
  return os.str();
}

}  // namespace

// ---- config --------------------------------------------------------------

void RunConfig::validate() const {
  scenario.domain.validate();
  scenario.jet.validate();
  if (scenario.bump) scenario.bump->validate();
  params.validate();
  if (n1 < 1) throw ValidationError("grid.n1", "must be >= 1");
  if (n2 < 1) throw ValidationError("grid.n2", "must be >= 1");
  solver.validate();
  if (!(saddle_relaxation > 0.0 && saddle_relaxation <= 1.0))
    throw ValidationError("solver.relaxation", "must lie in (0, 1]");
  stepper.validate();
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("time.T", "must be >= 0");
  if (snapshot_every < 1) throw ValidationError("time.snapshot_every", "must be >= 1");
  if (output.empty()) throw ValidationError("run.output", "must not be empty");

  for (double e : study.eps_list)
    if (!(e > 0.0)) throw ValidationError("study.eps_list", "entries must be positive");
  if (study.reference_n < 1) throw ValidationError("study.reference_n", "must be >= 1");
  if (!(study.loss_eps > 0.0)) throw ValidationError("study.loss_eps", "must be positive");
  if (!(study.loss_tol > 0.0)) throw ValidationError("study.loss_tol", "must be positive");
  for (std::size_t i = 0; i < study.pseudo_eps_list.size(); ++i) {
    if (!(study.pseudo_eps_list[i] > 0.0)) throw ValidationError("study.pseudo_eps_list", "entries must be positive");
    if (i > 0 && !(study.pseudo_eps_list[i] < study.pseudo_eps_list[i - 1]))
      throw ValidationError("study.pseudo_eps_list", "must be strictly descending");
  }
  if (!(study.pseudo_reference_eps > 0.0)) throw ValidationError("study.pseudo_reference_eps", "must be positive");
  for (double e : study.pseudo_eps_list)
    if (std::lround(1.0 / e) >= std::lround(1.0 / study.pseudo_reference_eps))
      throw ValidationError("study.pseudo_reference_eps", "reference grid must be finer than every study grid");
  for (double t : study.pseudo_times)
    if (!(t >= 0.0)) throw ValidationError("study.pseudo_times", "entries must be >= 0");
}

FlowModel RunConfig::model() const {
  FlowModel m;
  m.grid_measure = grid().uniform_measure();
  m.params = params;
  m.cfg = solver;
  m.mode = mode;
  m.domain = scenario.domain;
  m.saddle_relaxation = saddle_relaxation;
  return m;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "scenario.name") {
    const Scenario s = make_scenario(v);
    cfg.scenario = s;
  } else if (key == "scenario.a") {
    cfg.scenario.jet.a = parse_double(key, v);
  } else if (key == "scenario.b") {
    cfg.scenario.jet.b = parse_double(key, v);
  } else if (key == "scenario.c") {
    cfg.scenario.jet.c = parse_double(key, v);
  } else if (key == "scenario.d") {
    cfg.scenario.jet.d = parse_double(key, v);
  } else if (key == "scenario.bump") {
    if (parse_bool(key, v))
      bump_of(cfg);
    else
      cfg.scenario.bump.reset();
  } else if (key == "scenario.mu1") {
    bump_of(cfg).mu1 = parse_double(key, v);
  } else if (key == "scenario.mu2") {
    bump_of(cfg).mu2 = parse_double(key, v);
  } else if (key == "scenario.sigma0") {
    bump_of(cfg).sigma0 = parse_double(key, v);
  } else if (key == "scenario.alpha") {
    bump_of(cfg).alpha = parse_double(key, v);
  } else if (key == "physics.f") {
    cfg.params.f = parse_double(key, v);
  } else if (key == "physics.g") {
    cfg.params.g = parse_double(key, v);
  } else if (key == "grid.n1") {
    cfg.n1 = parse_int(key, v);
  } else if (key == "grid.n2") {
    cfg.n2 = parse_int(key, v);
  } else if (key == "grid.n") {
    cfg.n1 = cfg.n2 = parse_int(key, v);
  } else if (key == "solver.eps") {
    cfg.solver.eps = parse_double(key, v);
  } else if (key == "solver.tol") {
    cfg.solver.tol = parse_double(key, v);
  } else if (key == "solver.max_iters") {
    cfg.solver.max_iters = parse_int(key, v);
  } else if (key == "solver.warm_start") {
    cfg.solver.warm_start = parse_bool(key, v);
  } else if (key == "solver.relaxation") {
    cfg.saddle_relaxation = parse_double(key, v);
  } else if (key == "time.stepper") {
    cfg.stepper.kind = parse_stepper(v, key);
  } else if (key == "time.dt") {
    cfg.stepper.dt = parse_double(key, v);
  } else if (key == "time.T") {
    cfg.horizon = parse_double(key, v);
  } else if (key == "time.snapshot_every") {
    cfg.snapshot_every = parse_int(key, v);
  } else if (key == "run.mode") {
    cfg.mode = parse_velocity_mode(v, key);
  } else if (key == "run.output") {
    cfg.output = v;
  } else if (key == "run.binary") {
    cfg.binary = parse_bool(key, v);
  } else if (key == "run.seed") {
    const long s = parse_long(key, v);
    if (s < 0) throw ValidationError(key, "must be >= 0");
    cfg.seed = static_cast<unsigned long>(s);
  } else if (key == "study.eps_list") {
    cfg.study.eps_list = parse_list(key, v);
  } else if (key == "study.reference_n") {
    cfg.study.reference_n = parse_int(key, v);
  } else if (key == "study.loss_eps") {
    cfg.study.loss_eps = parse_double(key, v);
  } else if (key == "study.loss_tol") {
    cfg.study.loss_tol = parse_double(key, v);
  } else if (key == "study.pseudo_eps_list") {
    cfg.study.pseudo_eps_list = parse_list(key, v);
  } else if (key == "study.pseudo_reference_eps") {
    cfg.study.pseudo_reference_eps = parse_double(key, v);
  } else if (key == "study.pseudo_times") {
    cfg.study.pseudo_times = parse_list(key, v);
  } else {
    throw ValidationError(key, "unknown configuration key");
  }
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream os;
  const auto& sc = cfg.scenario;
  os << "[scenario]\n"
     << "name = " << sc.name << '\n'
     << "a = " << fmt(sc.jet.a) << '\n'
     << "b = " << fmt(sc.jet.b) << '\n'
     << "c = " << fmt(sc.jet.c) << '\n'
     << "d = " << fmt(sc.jet.d) << '\n'
     << "bump = " << (sc.bump ? "true" : "false") << '\n';
  if (sc.bump)
    os << "mu1 = " << fmt(sc.bump->mu1) << '\n'
       << "mu2 = " << fmt(sc.bump->mu2) << '\n'
       << "sigma0 = " << fmt(sc.bump->sigma0) << '\n'
       << "alpha = " << fmt(sc.bump->alpha) << '\n';
  os << "\n[physics]\n"
     << "f = " << fmt(cfg.params.f) << '\n'
     << "g = " << fmt(cfg.params.g) << '\n'
     << "\n[grid]\n"
     << "n1 = " << cfg.n1 << '\n'
     << "n2 = " << cfg.n2 << '\n'
     << "\n[solver]\n"
     << "eps = " << fmt(cfg.solver.eps) << '\n'
     << "tol = " << fmt(cfg.solver.tol) << '\n'
     << "max_iters = " << cfg.solver.max_iters << '\n'
     << "warm_start = " << (cfg.solver.warm_start ? "true" : "false") << '\n'
     << "relaxation = " << fmt(cfg.saddle_relaxation) << '\n'
     << "\n[time]\n"
     << "stepper = " << to_string(cfg.stepper.kind) << '\n'
     << "dt = " << fmt(cfg.stepper.dt) << '\n'
     << "T = " << fmt(cfg.horizon) << '\n'
     << "snapshot_every = " << cfg.snapshot_every << '\n'
     << "\n[run]\n"
     << "mode = " << to_string(cfg.mode) << '\n'
     << "output = " << cfg.output.string() << '\n'
     << "binary = " << (cfg.binary ? "true" : "false") << '\n'
     << "seed = " << cfg.seed << '\n'
     << "\n[study]\n"
     << "eps_list = " << fmt_list(cfg.study.eps_list) << '\n'
     << "reference_n = " << cfg.study.reference_n << '\n'
     << "loss_eps = " << fmt(cfg.study.loss_eps) << '\n'
     << "loss_tol = " << fmt(cfg.study.loss_tol) << '\n'
     << "pseudo_eps_list = " << fmt_list(cfg.study.pseudo_eps_list) << '\n'
     << "pseudo_reference_eps = " << fmt(cfg.study.pseudo_reference_eps) << '\n'
     << "pseudo_times = " << fmt_list(cfg.study.pseudo_times) << '\n';
  return os.str();
}

RunConfig config_from_ini(std::istream& is) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError("config", e.what());
  }
  RunConfig cfg;
  // The scenario preset must land before its parameter overrides.
  if (auto sc = pt.get_child_optional("scenario"))
    if (auto name = sc->get_optional<std::string>("name")) set_config_value(cfg, "scenario.name", *name);
  for (const auto& [section, body] : pt) {
    if (body.empty() && !body.data().empty()) throw ValidationError(section, "key outside of any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (full != "scenario.name") set_config_value(cfg, full, value.data());
    }
  }
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  auto is = open_in(path);
  return config_from_ini(is);
}

// ---- tables ----------------------------------------------------------------

void write_snapshot_table(std::ostream& os, const Snapshot& snap) {
  const auto& p = snap.state.particles;
  const auto& pots = snap.state.pots;
  os << std::setprecision(17);
  os << "# t = " << snap.state.t << '\n' << "# step = " << snap.state.step_index << '\n';
  os << "# x1 x2 weight psi psi_sym v1 v2\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < p.size(); ++j) {
    const Point2 v = j < snap.velocity.size() ? snap.velocity[j] : Point2{nan, nan};
    os << p.points[j].x1 << ' ' << p.points[j].x2 << ' ' << p.weights[j] << ' '
       << (j < pots.psi.size() ? pots.psi[j] : nan) << ' ' << (pots.has_psi_sym() ? pots.psi_sym[j] : nan) << ' '
       << v.x1 << ' ' << v.x2 << '\n';
  }
}

namespace {

double read_token(std::istringstream& ls, const std::string& what) {
  std::string tok;
  if (!(ls >> tok)) throw ValidationError(what, "missing column");
  if (tok == "nan" || tok == "-nan") return std::numeric_limits<double>::quiet_NaN();
  return parse_double(what, tok);
}

std::optional<std::string> header_value(const std::string& line, const std::string& key) {
  const std::string prefix = "# " + key + " = ";
  if (line.rfind(prefix, 0) != 0) return std::nullopt;
  return line.substr(prefix.size());
}

}  // namespace

SnapshotTable read_snapshot_table(std::istream& is) {
  SnapshotTable t;
  std::string line;
  bool any_sym = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (auto v = header_value(line, "t")) t.t = parse_double("snapshot.t", *v);
      if (auto v = header_value(line, "step")) t.step_index = parse_long("snapshot.step", *v);
      continue;
    }
    std::istringstream ls(line);
    const double x1 = read_token(ls, "snapshot"), x2 = read_token(ls, "snapshot"), w = read_token(ls, "snapshot");
    const double psi = read_token(ls, "snapshot"), sym = read_token(ls, "snapshot");
    const double v1 = read_token(ls, "snapshot"), v2 = read_token(ls, "snapshot");
    t.particles.points.push_back({x1, x2});
    t.particles.weights.push_back(w);
    t.psi.push_back(psi);
    t.psi_sym.push_back(sym);
    any_sym = any_sym || !std::isnan(sym);
    t.velocity.push_back({v1, v2});
  }
  if (!any_sym) t.psi_sym.clear();
  return t;
}

void write_snapshot_binary(std::ostream& os, const Snapshot& snap) {
  const auto& p = snap.state.particles;
  const auto& pots = snap.state.pots;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto put = [&](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
  os.write("SGSWSNP1", 8);
  put(snap.state.t);
  const std::int64_t step = snap.state.step_index, n = static_cast<std::int64_t>(p.size());
  put(step);
  put(n);
  for (std::size_t j = 0; j < p.size(); ++j) {
    const Point2 v = j < snap.velocity.size() ? snap.velocity[j] : Point2{nan, nan};
    const double row[7] = {p.points[j].x1, p.points[j].x2, p.weights[j], j < pots.psi.size() ? pots.psi[j] : nan,
                           pots.has_psi_sym() ? pots.psi_sym[j] : nan, v.x1, v.x2};
    os.write(reinterpret_cast<const char*>(row), sizeof row);
  }
}

SnapshotTable read_snapshot_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "SGSWSNP1")
    throw ValidationError("snapshot", "not a binary snapshot");
  const auto get = [&](auto& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError("snapshot", "truncated binary snapshot");
  };
  SnapshotTable t;
  std::int64_t step = 0, n = 0;
  get(t.t);
  get(step);
  get(n);
  if (n < 0) throw ValidationError("snapshot", "negative row count");
  t.step_index = step;
  bool any_sym = false;
  for (std::int64_t j = 0; j < n; ++j) {
    double row[7];
    get(row);
    t.particles.points.push_back({row[0], row[1]});
    t.particles.weights.push_back(row[2]);
    t.psi.push_back(row[3]);
    t.psi_sym.push_back(row[4]);
    any_sym = any_sym || !std::isnan(row[4]);
    t.velocity.push_back({row[5], row[6]});
  }
  if (!any_sym) t.psi_sym.clear();
  return t;
}

void write_potential_table(std::ostream& os, const Grid& grid, const Snapshot& snap, const FlowModel& model) {
  const auto& pots = snap.state.pots;
  const GridField h = snapshot_height(snap, model);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  os << std::setprecision(17);
  os << "# t = " << snap.state.t << '\n' << "# step = " << snap.state.step_index << '\n';
  os << "# x1 x2 phi h u\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Point2 x = grid.node(i);
    os << x.x1 << ' ' << x.x2 << ' ' << pots.phi[i] << ' ' << h[i] << ' ' << (pots.has_u() ? pots.u[i] : nan)
       << '\n';
  }
}

PotentialTable read_potential_table(std::istream& is) {
  PotentialTable t;
  std::string line;
  bool any_u = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    read_token(ls, "potentials");
    read_token(ls, "potentials");
    t.phi.push_back(read_token(ls, "potentials"));
    t.h.push_back(read_token(ls, "potentials"));
    const double u = read_token(ls, "potentials");
    t.u.push_back(u);
    any_u = any_u || !std::isnan(u);
  }
  if (!any_u) t.u.clear();
  return t;
}

// ---- simulate --------------------------------------------------------------

CommandResult cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = cfg.output;
  prepare_dir(dir, {"snapshots", "potentials", "config.ini", "stats.tsv", "residuals.tsv", "energy.tsv",
                    "manifest.json"});
  fs::create_directories(dir / "snapshots");
  fs::create_directories(dir / "potentials");

  const Grid grid = cfg.grid();
  const FlowModel model = cfg.model();
  json manifest;
  manifest["format"] = "sgsw-run/1";
  manifest["version"] = kVersion;
  manifest["config"] = config_json(cfg);
  manifest["started"] = iso_now();
  std::vector<std::string> files{"config.ini", "stats.tsv", "residuals.tsv", "energy.tsv"};
  json snaps = json::array();

  {
    auto os = open_out(dir / "config.ini");
    os << to_ini(cfg);
  }
  auto stats = open_out(dir / "stats.tsv");
  stats << "step\tt\tstage\titerations\tfinal_residual\tconverged\tlarge_lambert\n";
  auto residuals = open_out(dir / "residuals.tsv");
  residuals << "step\tstage\titeration\tresidual\n";
  auto energy = open_out(dir / "energy.tsv");
  energy << header_line(cfg) << "t\tstep\tkinetic\tpotential\ttotal\tnormalized_error\tentropy_term\n";

  long solves = 0, total_iters = 0;
  int max_iters = 0;
  double max_residual = 0.0;
  EnergyReport e0;
  double floor = 0.0;
  bool have_baseline = false;

  const auto record_stats = [&](long step, double t, const std::vector<SolveStats>& stages) {
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      stats << step << '\t' << t << '\t' << s + 1 << '\t' << st.iterations << '\t' << st.final_residual << '\t'
            << (st.converged ? 1 : 0) << '\t' << st.large_lambert_arguments << '\n';
      for (std::size_t k = 0; k < st.residual_history.size(); ++k)
        residuals << step << '\t' << s + 1 << '\t' << k + 1 << '\t' << st.residual_history[k] << '\n';
      ++solves;
      total_iters += st.iterations;
      max_iters = std::max(max_iters, st.iterations);
      max_residual = std::max(max_residual, st.final_residual);
    }
  };

  RunOptions ro;
  ro.horizon = cfg.horizon;
  ro.snapshot_every = cfg.snapshot_every;
  ro.keep_snapshots = false;
  ro.on_step = [&](const StepRecord& r) { record_stats(r.step_index, r.t, r.stage_stats); };
  ro.on_snapshot = [&](const Snapshot& s) {
    const std::string tag = step_tag(s.state.step_index);
    json entry{{"t", s.state.t}, {"step", s.state.step_index}};
    const std::string table = "snapshots/snap_" + tag + ".txt";
    {
      auto os = open_out(dir / table);
      write_snapshot_table(os, s);
    }
    files.push_back(table);
    entry["particles"] = table;
    if (cfg.binary) {
      const std::string bin = "snapshots/snap_" + tag + ".bin";
      auto os = open_out(dir / bin, true);
      write_snapshot_binary(os, s);
      files.push_back(bin);
      entry["binary"] = bin;
    }
    const std::string pot = "potentials/pot_" + tag + ".txt";
    {
      auto os = open_out(dir / pot);
      write_potential_table(os, grid, s, model);
    }
    files.push_back(pot);
    entry["potentials"] = pot;
    snaps.push_back(entry);

    if (!have_baseline) {
      e0 = energy_report(s, model);
      floor = uniform_energy_floor(s.state.particles, model.grid_measure, model.params);
      have_baseline = true;
    }
    const auto e = energy_report(s, model, &e0, floor);
    energy << e.t << '\t' << s.state.step_index << '\t' << e.kinetic << '\t' << e.potential << '\t' << e.total
           << '\t' << e.normalized_error << '\t' << e.entropy_term << '\n';
  };

  const auto r = run(initial_state(grid, cfg.scenario, cfg.params), model, cfg.stepper, ro);
  stats.close();
  residuals.close();
  energy.close();

  manifest["finished"] = iso_now();
  manifest["completed"] = r.completed;
  manifest["failure"] = r.failure;
  manifest["snapshots"] = snaps;
  manifest["stats"] = {{"steps", static_cast<long>(r.steps.size())},
                       {"solves", solves},
                       {"total_iterations", total_iters},
                       {"max_iterations", max_iters},
                       {"mean_iterations", solves ? static_cast<double>(total_iters) / solves : 0.0},
                       {"max_final_residual", max_residual}};
  files.push_back("manifest.json");
  manifest["files"] = files;
  write_json(dir / "manifest.json", manifest);

  CommandResult out;
  out.output = dir;
  if (r.completed) {
    out.message = "run complete: " + std::to_string(snaps.size()) + " snapshots in " + dir.string();
  } else {
    out.exit_code = exit_solver;
    out.message = "run stopped after " + std::to_string(r.steps.size()) + " steps: " + r.failure;
  }
  return out;
}

// ---- studies -----------------------------------------------------------------

namespace {

struct StudyTable {
  std::ostringstream body;
  json fits = json::array();
  int ok_rows = 0;
  int failed_rows = 0;
};

std::string clean(const std::string& s) {
  std::string r = s;
  std::replace(r.begin(), r.end(), '\t', ' ');
  std::replace(r.begin(), r.end(), '\n', ' ');
  return r;
}

void energy_study(const RunConfig& cfg, StudyTable& tab, std::string& failure) {
  const FlowModel model = cfg.model();
  tab.body << "t\tstep\tkinetic\tpotential\ttotal\tnormalized_error\tentropy_term\n";
  EnergyReport e0;
  double floor = 0.0;
  bool first = true;
  RunOptions ro;
  ro.horizon = cfg.horizon;
  ro.snapshot_every = cfg.snapshot_every;
  ro.keep_snapshots = false;
  ro.on_snapshot = [&](const Snapshot& s) {
    if (first) {
      e0 = energy_report(s, model);
      floor = uniform_energy_floor(s.state.particles, model.grid_measure, model.params);
      first = false;
    }
    const auto e = energy_report(s, model, &e0, floor);
    tab.body << e.t << '\t' << s.state.step_index << '\t' << e.kinetic << '\t' << e.potential << '\t' << e.total
             << '\t' << e.normalized_error << '\t' << e.entropy_term << '\n';
    ++tab.ok_rows;
  };
  const auto r = run(initial_state(cfg.grid(), cfg.scenario, cfg.params), model, cfg.stepper, ro);
  if (!r.completed) {
    ++tab.failed_rows;
    failure = r.failure;
  }
}

void ageostrophic_study(const RunConfig& cfg, StudyTable& tab, std::string& failure) {
  const FlowModel model = cfg.model();
  tab.body << "t\tstep\tratio\n";
  RunOptions ro;
  ro.horizon = cfg.horizon;
  ro.snapshot_every = 1;
  std::vector<Snapshot> window;  // last three snapshots
  ro.keep_snapshots = false;
  ro.on_snapshot = [&](const Snapshot& s) {
    window.push_back(s);
    if (window.size() > 3) window.erase(window.begin());
    if (window.size() < 3) return;
    const long mid = window[1].state.step_index;
    if (mid % cfg.snapshot_every != 0) return;
    const double ratio = ageostrophic_ratio(window[0], window[1], window[2], model);
    tab.body << window[1].state.t << '\t' << mid << '\t' << ratio << '\n';
    ++tab.ok_rows;
  };
  const auto r = run(initial_state(cfg.grid(), cfg.scenario, cfg.params), model, cfg.stepper, ro);
  if (!r.completed) {
    ++tab.failed_rows;
    failure = r.failure;
  }
}

void eps_study(const RunConfig& cfg, StudyTable& tab) {
  EpsConvergenceOptions o;
  o.eps_list = cfg.study.eps_list;
  o.reference_n = cfg.study.reference_n;
  o.loss_eps = cfg.study.loss_eps;
  o.loss_tol = cfg.study.loss_tol;
  o.solver_tol = cfg.solver.tol;
  o.max_iters = cfg.solver.max_iters;
  o.saddle_relaxation = cfg.saddle_relaxation;
  const auto res = eps_convergence_study(cfg.scenario, cfg.params, o);
  tab.body << "eps\tn\teh_biased\teh_saddle\teh_potential\tl2_biased\tl2_saddle\teu_biased\teu_debiased"
              "\tsinkhorn_iterations\tsaddle_iterations\tok\tfailure\n";
  for (const auto& r : res.rows) {
    tab.body << r.eps << '\t' << r.n << '\t' << r.eh_biased << '\t' << r.eh_saddle << '\t' << r.eh_potential << '\t'
             << r.l2_biased << '\t' << r.l2_saddle << '\t' << r.eu_biased << '\t' << r.eu_debiased << '\t'
             << r.sinkhorn_iterations << '\t' << r.saddle_iterations << '\t' << (r.ok ? 1 : 0) << '\t'
             << clean(r.failure) << '\n';
    (r.ok ? tab.ok_rows : tab.failed_rows)++;
  }
  const auto& s = res.slopes;
  for (const auto& [name, v] : {std::pair{"eh_biased", s.eh_biased}, {"eh_saddle", s.eh_saddle},
                                {"eh_potential", s.eh_potential}, {"eu_biased", s.eu_biased},
                                {"eu_debiased", s.eu_debiased}}) {
    tab.body << "# fit " << name << " slope = " << v << '\n';
    tab.fits.push_back({{"quantity", name}, {"slope", std::isfinite(v) ? json(v) : json(nullptr)}});
  }
}

void pseudo_study(const RunConfig& cfg, StudyTable& tab) {
  PseudoconvergenceOptions o;
  o.eps_list = cfg.study.pseudo_eps_list;
  o.reference_eps = cfg.study.pseudo_reference_eps;
  o.times = cfg.study.pseudo_times;
  o.stepper = cfg.stepper;
  o.modes = {VelocityMode::biased, VelocityMode::debiased};
  if (cfg.mode == VelocityMode::saddle) o.modes.push_back(VelocityMode::saddle);
  o.loss_eps = cfg.study.loss_eps;
  o.loss_tol = cfg.study.loss_tol;
  o.solver_tol = cfg.solver.tol;
  o.max_iters = cfg.solver.max_iters;
  const auto res = pseudoconvergence_study(cfg.scenario, cfg.params, o);
  tab.body << "mode\teps\tn\tt\te_sigma\te_h\te_h_l2\tok\tfailure\n";
  for (const auto& r : res.rows) {
    tab.body << r.mode << '\t' << r.eps << '\t' << r.n << '\t' << r.t << '\t' << r.e_sigma << '\t' << r.e_h << '\t'
             << r.e_h_l2 << '\t' << (r.ok ? 1 : 0) << '\t' << clean(r.failure) << '\n';
    (r.ok ? tab.ok_rows : tab.failed_rows)++;
  }
  for (const auto& f : res.fits) {
    tab.body << "# fit mode = " << f.mode << " t = " << f.t << " sigma_slope = " << f.sigma_slope
             << " h_slope = " << f.h_slope << '\n';
    const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    tab.fits.push_back({{"mode", f.mode}, {"t", f.t}, {"sigma_slope", num(f.sigma_slope)}, {"h_slope", num(f.h_slope)}});
  }
}

}  // namespace

CommandResult cmd_study(const RunConfig& cfg, const std::string& kind) {
  if (kind != "energy" && kind != "eps_convergence" && kind != "pseudoconvergence" && kind != "ageostrophic")
    throw ValidationError("study", "unknown study kind '" + kind +
                                       "' (energy | eps_convergence | pseudoconvergence | ageostrophic)");
  cfg.validate();
  const fs::path dir = cfg.output;
  const std::string table = kind + ".tsv";
  prepare_dir(dir, {table, "manifest.json"});

  json manifest;
  manifest["format"] = "sgsw-study/1";
  manifest["version"] = kVersion;
  manifest["study"] = kind;
  manifest["config"] = config_json(cfg);
  manifest["started"] = iso_now();

  StudyTable tab;
  std::string failure;
  tab.body << std::setprecision(17);
  tab.body << "# study = " << kind << '\n' << header_line(cfg);
  try {
    if (kind == "energy") energy_study(cfg, tab, failure);
    if (kind == "ageostrophic") ageostrophic_study(cfg, tab, failure);
    if (kind == "eps_convergence") eps_study(cfg, tab);
    if (kind == "pseudoconvergence") pseudo_study(cfg, tab);
  } catch (const SolverError& e) {
    ++tab.failed_rows;
    failure = e.what();
  }
  {
    auto os = open_out(dir / table);
    os << tab.body.str();
  }
  manifest["finished"] = iso_now();
  manifest["rows"] = tab.ok_rows;
  manifest["failed_rows"] = tab.failed_rows;
  manifest["failure"] = failure;
  manifest["fits"] = tab.fits;
  manifest["files"] = {table, "manifest.json"};
  write_json(dir / "manifest.json", manifest);

  CommandResult out;
  out.output = dir;
  if (tab.failed_rows == 0) {
    out.message = kind + ": " + std::to_string(tab.ok_rows) + " rows in " + (dir / table).string();
  } else if (tab.ok_rows > 0) {
    out.exit_code = exit_partial;
    out.message = kind + ": partial, " + std::to_string(tab.failed_rows) + " failed" +
                  (failure.empty() ? std::string() : " (" + failure + ")");
  } else {
    out.exit_code = exit_solver;
    out.message = kind + ": no rows completed" + (failure.empty() ? std::string() : " (" + failure + ")");
  }
  return out;
}

// ---- verify ------------------------------------------------------------------

namespace {

long double reference_w0(long double z) {
  // Bisection on w e^w = z over [-1, max(1, log(1 + z))].
  long double lo = -1.0L, hi = std::max(1.0L, std::log1p(std::max(z, 0.0L)));
  while (hi * std::exp(hi) < z) hi *= 2;
  for (int k = 0; k < 400; ++k) {
    const long double mid = 0.5L * (lo + hi);
    if (mid * std::exp(mid) < z)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5L * (lo + hi);
}

// Damped Newton on the height-coupled regularised dual, from zero.
std::vector<double> dense_dual_phi(const DiscreteMeasure& mu, const DiscreteMeasure& sigma,
                                   const PhysicalParams& params, double eps) {
  const std::size_t m = mu.size(), n = sigma.size(), dim = m + n;
  const double k = params.height_factor();
  std::vector<double> x(dim, 0.0);
  const auto value = [&](const std::vector<double>& z) {
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += sigma.weights[j] * z[m + j];
    for (std::size_t i = 0; i < m; ++i) v -= 0.5 * k * mu.weights[i] * z[i] * z[i];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        v -= eps * mu.weights[i] * sigma.weights[j] *
             (std::exp((z[i] + z[m + j] - periodic_cost(mu.points[i], sigma.points[j], {})) / eps) - 1.0);
    return v;
  };
  for (int it = 0; it < 500; ++it) {
    std::vector<double> grad(dim, 0.0), negh(dim * dim, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      grad[i] -= k * mu.weights[i] * x[i];
      negh[i * dim + i] += k * mu.weights[i];
    }
    for (std::size_t j = 0; j < n; ++j) grad[m + j] += sigma.weights[j];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double e = mu.weights[i] * sigma.weights[j] *
                         std::exp((x[i] + x[m + j] - periodic_cost(mu.points[i], sigma.points[j], {})) / eps);
        grad[i] -= e;
        grad[m + j] -= e;
        negh[i * dim + i] += e / eps;
        negh[(m + j) * dim + m + j] += e / eps;
        negh[i * dim + m + j] += e / eps;
        negh[(m + j) * dim + i] += e / eps;
      }
    double gnorm = 0.0;
    for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
    if (gnorm < 1e-15) break;
    auto d = grad;
    if (!detail::cholesky_solve(negh, d, dim)) throw SolverError("dense oracle: Hessian is not definite");
    const double v0 = value(x);
    double step = 1.0;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      std::vector<double> y(dim);
      for (std::size_t a = 0; a < dim; ++a) y[a] = x[a] + step * d[a];
      if (value(y) >= v0 - 1e-15) {
        x = y;
        break;
      }
    }
  }
  return {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(m)};
}

DiscreteMeasure random_measure(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DiscreteMeasure m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.points.push_back({u(rng), u(rng)});
    m.weights.push_back(0.5 + u(rng));
    s += m.weights.back();
  }
  for (double& w : m.weights) w /= s;
  return m;
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

}  // namespace

CommandResult cmd_verify(const VerifyOptions& opts, std::ostream& out) {
  json checks = json::array();
  bool all = true;
  const auto add = [&](const std::string& name, double value, double tolerance) {
    const bool pass = std::isfinite(value) && value <= tolerance;
    all = all && pass;
    checks.push_back({{"name", name}, {"pass", pass}, {"value", value}, {"tolerance", tolerance}});
  };
  const auto guarded = [&](const std::string& name, double tolerance, const std::function<double()>& body) {
    try {
      add(name, body(), tolerance);
    } catch (const Error& e) {
      all = false;
      checks.push_back({{"name", name}, {"pass", false}, {"error", e.what()}, {"tolerance", tolerance}});
    }
  };
  const PhysicalParams params{1.0, 0.1};
  std::mt19937_64 rng(12345);

  guarded("lambert_w0", 1e-12, [&] {
    const auto w0 = opts.lambert ? opts.lambert : [](double z) { return lambert_w0(z); };
    double worst = 0.0;
    for (double z : {-0.367, -0.3, -0.1, 0.0, 1e-8, 0.5, 1.0, 2.718281828459045, 10.0, 1e3, 1e8}) {
      const double ref = static_cast<double>(reference_w0(z));
      worst = std::max(worst, std::abs(w0(z) - ref) / std::max(1.0, std::abs(ref)));
    }
    return worst;
  });

  guarded("one_point_closed_form", 1e-9, [&] {
    const DiscreteMeasure x{{{0.5, 0.5}}, {1.0}}, y{{{0.5, 0.6}}, {1.0}};
    SolverConfig c;
    c.eps = 0.01;
    c.tol = 1e-12;
    c.max_iters = 100000;
    const auto s = solve_swsg_dual(x, y, params, c);
    const double cost = 0.01;
    return std::max({std::abs(s.pots.phi[0] + params.g), std::abs(s.pots.psi[0] - params.g - cost),
                     std::abs(height_from_phi(s.pots.phi, params)[0] - 1.0)});
  });

  guarded("dense_dual_oracle", 1e-7, [&] {
    double worst = 0.0;
    for (int k = 0; k < 4; ++k) {
      const auto mu = random_measure(rng, 4 + k);
      const auto sigma = random_measure(rng, 6 - k);
      const double eps = k % 2 ? 0.05 : 0.1;
      SolverConfig c;
      c.eps = eps;
      c.tol = 1e-13;
      c.max_iters = 200000;
      const auto s = solve_swsg_dual(mu, sigma, params, c);
      worst = std::max(worst, sup_diff(s.pots.phi, dense_dual_phi(mu, sigma, params, eps)));
    }
    return worst;
  });

  guarded("saddle_gradient_fd", 1e-6, [&] {
    const auto mu = random_measure(rng, 4), sigma = random_measure(rng, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SaddleState s;
    for (int i = 0; i < 4; ++i) {
      s.h.push_back(0.5 + u(rng));
      s.u.push_back(0.5 + u(rng));
      s.phi.push_back(-0.1 + 0.05 * u(rng));
    }
    for (int j = 0; j < 3; ++j) s.psi.push_back(0.05 * u(rng));
    const double eps = 0.1, hs = 1e-5;
    const auto g = saddle_gradient(s, mu, sigma, params, eps);
    double worst = 0.0;
    for (auto field : {&SaddleState::h, &SaddleState::u, &SaddleState::phi, &SaddleState::psi}) {
      const auto& grad = g.*field;
      for (std::size_t i = 0; i < grad.size(); ++i) {
        SaddleState p = s, m = s;
        (p.*field)[i] += hs;
        (m.*field)[i] -= hs;
        const double fd =
            (saddle_functional(p, mu, sigma, params, eps) - saddle_functional(m, mu, sigma, params, eps)) / (2 * hs);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(grad[i])));
      }
    }
    return worst;
  });

  SaddleResiduals res;
  guarded("saddle_residuals", 1e-9, [&] {
    const auto mu = random_measure(rng, 16), sigma = random_measure(rng, 16);
    SolverConfig c;
    c.eps = 0.1;
    c.tol = 1e-13;
    c.max_iters = 200000;
    const auto s = saddle_sinkhorn(mu, sigma, params, c);
    res = saddle_residuals(s.state, mu, sigma, params, c.eps);
    return res.max();
  });

  guarded("sinkhorn_divergence_self", 1e-9, [&] {
    const auto nu = random_measure(rng, 10);
    return std::abs(sinkhorn_divergence(nu, nu, 0.05, 1e-12));
  });

  json report{{"checks", checks},
              {"residuals", {{"dpsi", res.dpsi}, {"dphi", res.dphi}, {"dh", res.dh}, {"du", res.du}}},
              {"passed", all},
              {"version", kVersion}};
  out << report.dump(2) << '\n';
  if (!opts.report.empty()) write_json(opts.report, report);

  CommandResult r;
  r.exit_code = all ? exit_ok : exit_solver;
  r.message = all ? "all checks passed" : "verification failed";
  r.output = opts.report;
  return r;
}

// ---- render-data -------------------------------------------------------------

CommandResult cmd_render_data(const fs::path& run_dir, const fs::path& bundle_dir) {
  if (!fs::exists(run_dir / "manifest.json")) throw ValidationError("run_dir", "no manifest.json in " + run_dir.string());
  json manifest;
  {
    auto is = open_in(run_dir / "manifest.json");
    try {
      is >> manifest;
    } catch (const json::exception& e) {
      throw ValidationError("run_dir", std::string("unreadable manifest: ") + e.what());
    }
  }
  const RunConfig cfg = load_config(run_dir / "config.ini");
  cfg.validate();
  const FlowModel model = cfg.model();
  const Grid grid = cfg.grid();

  fs::create_directories(bundle_dir);
  std::vector<std::string> files;
  json snaps = json::array();
  std::vector<double> initial_y1;

  for (const auto& entry : manifest.at("snapshots")) {
    const long step = entry.at("step").get<long>();
    auto sis = open_in(run_dir / entry.at("particles").get<std::string>());
    const auto table = read_snapshot_table(sis);
    auto pis = open_in(run_dir / entry.at("potentials").get<std::string>());
    const auto pot = read_potential_table(pis);
    if (pot.phi.size() != grid.size()) throw ValidationError("run_dir", "potential table does not match the grid");
    if (initial_y1.empty())
      for (const auto& p : table.particles.points) initial_y1.push_back(p.x1);

    SimulationState state;
    state.t = table.t;
    state.step_index = table.step_index;
    state.particles = table.particles;
    state.pots.phi = pot.phi;
    state.pots.psi = table.psi;
    state.pots.psi_sym = table.psi_sym;
    const auto x = reconstruct_physical_positions(state, model);

    const std::string tag = step_tag(step);
    const std::string proj = "projection_" + tag + ".tsv";
    {
      auto os = open_out(bundle_dir / proj);
      os << "# t = " << table.t << "\n# step = " << step << '\n';
      os << "y1\ty2\tx1\tx2\tweight\tv1\tv2\ty1_initial\n";
      for (std::size_t j = 0; j < table.particles.size(); ++j)
        os << table.particles.points[j].x1 << '\t' << table.particles.points[j].x2 << '\t' << x.points[j].x1 << '\t'
           << x.points[j].x2 << '\t' << table.particles.weights[j] << '\t' << table.velocity[j].x1 << '\t'
           << table.velocity[j].x2 << '\t' << (j < initial_y1.size() ? initial_y1[j] : table.particles.points[j].x1)
           << '\n';
    }
    const std::string height = "height_" + tag + ".tsv";
    {
      auto os = open_out(bundle_dir / height);
      os << "# t = " << table.t << "\n# step = " << step << '\n';
      os << "x1\tx2\th\n";
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const Point2 p = grid.node(i);
        os << p.x1 << '\t' << p.x2 << '\t' << pot.h[i] << '\n';
      }
    }
    files.push_back(proj);
    files.push_back(height);
    snaps.push_back({{"t", table.t}, {"step", step}, {"projection", proj}, {"height", height}});
  }
  for (const char* name : {"stats.tsv", "residuals.tsv", "energy.tsv", "config.ini"}) {
    if (!fs::exists(run_dir / name)) continue;
    fs::copy_file(run_dir / name, bundle_dir / name, fs::copy_options::overwrite_existing);
    files.push_back(name);
  }
  files.push_back("manifest.json");
  json out{{"format", "sgsw-bundle/1"},
           {"version", kVersion},
           {"source", fs::absolute(run_dir).string()},
           {"grid", {{"n1", grid.n1()}, {"n2", grid.n2()}}},
           {"snapshots", snaps},
           {"files", files}};
  write_json(bundle_dir / "manifest.json", out);

  CommandResult r;
  r.output = bundle_dir;
  r.message = "bundle with " + std::to_string(snaps.size()) + " snapshots in " + bundle_dir.string();
  return r;
}

}  // namespace sgsw
