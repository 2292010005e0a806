#pragma once

#include <fstream>
#include <sstream>

#include "lusin/parser.hpp"
#include "lusin/verify.hpp"

namespace lusin {

// Schema violations name the offending field.
struct SchemaError : Error {
  SchemaError(const std::string& field, const std::string& msg) : Error("scenario field '" + field + "': " + msg), field(field) {}
  std::string field;
};

enum class DatumKind { Divergence, Jacobian, PerturbDiv, PerturbJac };

inline std::string to_string(DatumKind k) {
  switch (k) {
    case DatumKind::Divergence: return "divergence";
    case DatumKind::Jacobian: return "jacobian";
    case DatumKind::PerturbDiv: return "perturb-div";
    case DatumKind::PerturbJac: return "perturb-jac";
  }
  return "?";
}

struct Scenario {
  std::string name;
  Json source;
  int d = 0;
  Box omega;
  ModelMeasure measure;
  DatumKind kind = DatumKind::Divergence;
  Expr f, g;                  // divergence datum / Jacobian datum
  VectorField background;     // perturb-div
  AffineMap F;                // perturb-jac
  double eps = 0.0, delta = 0.0;
  SolveOptions opt;
  int grid = 200;
  std::string out_report = "report.json", out_grid = "grid.csv", out_atoms = "atoms.csv", out_solution = "solution.json";
};

namespace schema {

inline const Json& field(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(path.empty() ? key : path + "." + key, "missing");
  return *it;
}
inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline double number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path, "expected a number");
  double x = v.get<double>();
  if (!std::isfinite(x)) throw SchemaError(path, "must be finite");
  return x;
}
inline double positive(const Json& v, const std::string& path) {
  double x = number(v, path);
  if (!(x > 0.0)) throw SchemaError(path, "must be > 0, got " + fmt_g(x));
  return x;
}
inline long integer(const Json& v, const std::string& path, long lo, long hi) {
  if (!v.is_number_integer()) throw SchemaError(path, "expected an integer");
  long x = v.get<long>();
  if (x < lo || x > hi) throw SchemaError(path, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}
inline Vec vec(const Json& v, const std::string& path, int n) {
  if (!v.is_array()) throw SchemaError(path, "expected an array of numbers");
  if (n >= 0 && static_cast<int>(v.size()) != n) throw SchemaError(path, "expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
  Vec out;
  for (size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}
inline Box box(const Json& v, const std::string& path, int n) {
  Vec lo = vec(field(v, "lo", path), join(path, "lo"), n), hi = vec(field(v, "hi", path), join(path, "hi"), n);
  for (int k = 0; k < n; ++k)
    if (!(lo[k] <= hi[k])) throw SchemaError(path, "lo must not exceed hi");
  return Box(lo, hi);
}
inline std::string string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(path, "expected a string");
  return v.get<std::string>();
}
inline Expr expression(const Json& v, const std::string& path, int d) {
  std::string s = string(v, path);
  try {
    return parse_expr(s, d);
  } catch (const ParseError& e) {
    throw SchemaError(path, e.what());
  }
}
inline void only(const Json& j, const std::string& path, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) throw SchemaError(join(path, k), "unknown field");
  }
}

}  // namespace schema

inline ModelMeasure measure_from_json(const Json& arr, int d, const std::string& path = "measure") {
  if (!arr.is_array() || arr.empty()) throw SchemaError(path, "expected a nonempty array of pieces");
  ModelMeasure m;
  for (size_t i = 0; i < arr.size(); ++i) {
    const Json& p = arr[i];
    const std::string pp = path + "[" + std::to_string(i) + "]";
    std::string kind = schema::string(schema::field(p, "kind", pp), pp + ".kind");
    double w = schema::positive(schema::field(p, "weight", pp), pp + ".weight");
    try {
      if (kind == "graph") {
        schema::only(p, pp, {"kind", "weight", "axis", "origin", "profile", "domain"});
        Vec axis = schema::vec(schema::field(p, "axis", pp), pp + ".axis", d);
        Vec origin = schema::vec(schema::field(p, "origin", pp), pp + ".origin", d);
        const Json& prof = schema::field(p, "profile", pp);
        Expr profile = schema::expression(prof, pp + ".profile", d - 1);
        Box dom = schema::box(schema::field(p, "domain", pp), pp + ".domain", d - 1);
        m.add(GraphCarrier::make(axis, origin, profile, dom, prof.get<std::string>()), w);
      } else if (kind == "ifs") {
        schema::only(p, pp, {"kind", "weight", "ratios", "translations", "base", "axis", "depth"});
        Vec ratios = schema::vec(schema::field(p, "ratios", pp), pp + ".ratios", -1);
        const Json& tr = schema::field(p, "translations", pp);
        if (!tr.is_array() || tr.size() != ratios.size()) throw SchemaError(pp + ".translations", "expected one translation per ratio");
        std::vector<Vec> ts;
        for (size_t k = 0; k < tr.size(); ++k) ts.push_back(schema::vec(tr[k], pp + ".translations[" + std::to_string(k) + "]", d));
        Box base = schema::box(schema::field(p, "base", pp), pp + ".base", d);
        Vec axis = schema::vec(schema::field(p, "axis", pp), pp + ".axis", d);
        int depth = static_cast<int>(schema::integer(schema::field(p, "depth", pp), pp + ".depth", 0, 20));
        m.add(IFSCarrier::make(ratios, ts, base, axis, depth), w);
      } else {
        throw SchemaError(pp + ".kind", "expected 'graph' or 'ifs', got '" + kind + "'");
      }
    } catch (const SchemaError&) {
      throw;
    } catch (const Error& e) {
      throw SchemaError(pp, e.what());
    }
  }
  return m;
}

inline Scenario parse_scenario(const Json& j, const std::string& name = "scenario") {
  Scenario s;
  s.name = name;
  s.source = j;
  if (!j.is_object()) throw SchemaError("<root>", "expected an object");
  schema::only(j, "", {"name", "description", "d", "omega", "measure", "datum", "f", "g", "background", "map", "eps", "delta", "resolution",
                       "residual_tol", "max_stage", "seed", "grid", "outputs"});
  if (j.contains("name")) s.name = schema::string(j["name"], "name");
  s.d = static_cast<int>(schema::integer(schema::field(j, "d", ""), "d", 2, kMaxDim));
  s.omega = schema::box(schema::field(j, "omega", ""), "omega", s.d);
  for (int k = 0; k < s.d; ++k)
    if (!(s.omega.lo[k] < s.omega.hi[k])) throw SchemaError("omega", "must have positive extent in every coordinate");
  s.measure = measure_from_json(schema::field(j, "measure", ""), s.d);

  std::string kind = schema::string(schema::field(j, "datum", ""), "datum");
  if (kind == "divergence") s.kind = DatumKind::Divergence;
  else if (kind == "jacobian") s.kind = DatumKind::Jacobian;
  else if (kind == "perturb-div") s.kind = DatumKind::PerturbDiv;
  else if (kind == "perturb-jac") s.kind = DatumKind::PerturbJac;
  else throw SchemaError("datum", "expected divergence, jacobian, perturb-div or perturb-jac, got '" + kind + "'");

  const bool div = s.kind == DatumKind::Divergence || s.kind == DatumKind::PerturbDiv;
  if (div) s.f = schema::expression(schema::field(j, "f", ""), "f", s.d);
  else s.g = schema::expression(schema::field(j, "g", ""), "g", s.d);
  if (s.kind == DatumKind::PerturbDiv) {
    const Json& w = schema::field(j, "background", "");
    if (!w.is_array() || static_cast<int>(w.size()) != s.d) throw SchemaError("background", "expected " + std::to_string(s.d) + " component expressions");
    s.background.d = s.d;
    for (int k = 0; k < s.d; ++k) {
      Vec e(s.d, 0.0);
      e[k] = 1.0;
      s.background.terms.push_back({{schema::expression(w[k], "background[" + std::to_string(k) + "]", s.d), whole_space(s.d)}, e});
    }
  }
  if (s.kind == DatumKind::PerturbJac) {
    const Json& m = schema::field(j, "map", "");
    schema::only(m, "map", {"A", "c"});
    const Json& A = schema::field(m, "A", "map");
    if (!A.is_array() || static_cast<int>(A.size()) != s.d) throw SchemaError("map.A", "expected " + std::to_string(s.d) + " rows");
    s.F = AffineMap::identity(s.d);
    for (int i = 0; i < s.d; ++i) {
      Vec row = schema::vec(A[i], "map.A[" + std::to_string(i) + "]", s.d);
      std::copy(row.begin(), row.end(), s.F.A.begin() + i * s.d);
    }
    s.F.c = m.contains("c") ? schema::vec(m["c"], "map.c", s.d) : Vec(s.d, 0.0);
    if (!(std::abs(determinant(s.F.A, s.d)) > 1e-12)) throw SchemaError("map.A", "must be invertible");
  }
  s.eps = schema::positive(schema::field(j, "eps", ""), "eps");
  s.delta = schema::positive(schema::field(j, "delta", ""), "delta");
  if (j.contains("resolution")) s.opt.resolution = static_cast<int>(schema::integer(j["resolution"], "resolution", 1, 100000));
  if (j.contains("residual_tol")) s.opt.scheme.residual_tol = schema::positive(j["residual_tol"], "residual_tol");
  if (j.contains("max_stage")) s.opt.scheme.max_stage = static_cast<int>(schema::integer(j["max_stage"], "max_stage", 1, 1000));
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw SchemaError("seed", "expected a nonnegative integer");
    s.opt.seed = j["seed"].get<uint64_t>();
  }
  if (j.contains("grid")) s.grid = static_cast<int>(schema::integer(j["grid"], "grid", 2, 4000));
  if (j.contains("outputs")) {
    const Json& o = j["outputs"];
    schema::only(o, "outputs", {"report", "grid", "atoms", "solution"});
    if (o.contains("report")) s.out_report = schema::string(o["report"], "outputs.report");
    if (o.contains("grid")) s.out_grid = schema::string(o["grid"], "outputs.grid");
    if (o.contains("atoms")) s.out_atoms = schema::string(o["atoms"], "outputs.atoms");
    if (o.contains("solution")) s.out_solution = schema::string(o["solution"], "outputs.solution");
  }
  return s;
}

// Parse errors carry the byte position; schema errors the field.
inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw Error("'" + path + "': JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

inline Scenario load_scenario(const std::string& path) {
  std::string stem = path.substr(path.find_last_of('/') == std::string::npos ? 0 : path.find_last_of('/') + 1);
  if (auto dot = stem.rfind(".json"); dot != std::string::npos) stem = stem.substr(0, dot);
  return parse_scenario(read_json_file(path), stem);
}

// Named measures used by the demos and tests.
inline ModelMeasure catalog_measure(const std::string& name) {
  ModelMeasure m;
  auto seg = [](Vec axis, Vec origin, const char* prof, double a, double b) {
    return GraphCarrier::make(std::move(axis), std::move(origin), parse_expr(prof, 1), Box({a}, {b}), prof);
  };
  if (name == "segment") m.add(seg({0, 1}, {0, 0}, "0", 0, 1), 1.0);
  else if (name == "sine") m.add(seg({0, 1}, {0, 0}, "0.5*sin(x1)", 0, 1), 1.0);
  else if (name == "cantor") m.add(IFSCarrier::make({1.0 / 3, 1.0 / 3}, {{0, 0}, {2.0 / 3, 0}}, Box({0, 0}, {1, 0}), {1, 0}, 10), 1.0);
  else if (name == "union") {
    m.add(seg({0, 1}, {0, 0}, "0", 0, 1), 0.7);
    m.add(seg({1, 0}, {1.5, 0}, "0", -0.5, 0.5), 0.3);
  } else if (name == "cross") {
    // two segments crossing at (0.5, 0): separation drops atoms near the crossing
    m.add(seg({0, 1}, {0, 0}, "0", 0, 1), 0.5);
    m.add(seg({1, 0}, {0.5, 0}, "0", -0.5, 0.5), 0.5);
  } else if (name == "cantor3") {
    // three maps of ratio 1/4 on the unit interval, raised off the x-axis
    m.add(IFSCarrier::make({0.25, 0.25, 0.25}, {{0, 0.15}, {0.375, 0.15}, {0.75, 0.15}}, Box({0, 0.2}, {1, 0.2}), {1, 0}, 10), 1.0);
  } else if (name == "tilted") {
    // a segment along (0.8, -0.6), off the coordinate axes
    m.add(seg({0.6, 0.8}, {0.1, 0.5}, "0", 0, 1), 1.0);
  } else {
    throw Error("unknown catalog measure '" + name + "' (segment, sine, cantor, cantor3, union, cross, tilted)");
  }
  return m;
}

// ---- solution dumps ----

inline Json cloud_ids(const AtomCloud& c) { return Json(c.id); }

inline AtomCloud cloud_by_ids(const AtomCloud& cloud, const Json& ids, const std::string& what) {
  std::unordered_map<int, size_t> at;
  for (size_t i = 0; i < cloud.size(); ++i) at[cloud.id[i]] = i;
  std::vector<size_t> keep;
  for (const Json& v : ids) {
    auto it = at.find(v.get<int>());
    require(it != at.end(), what + ": atom id " + std::to_string(v.get<int>()) + " is not in the sampled cloud");
    keep.push_back(it->second);
  }
  return cloud.subset(keep);
}

inline SchemeResult scheme_from_json(const Json& j, const AtomCloud& cloud) {
  SchemeResult r;
  r.M = j.at("M");
  r.t = j.at("t");
  r.tau = j.at("tau");
  r.eta = j.at("eta");
  r.delta = j.at("delta");
  r.c_alpha = j.at("c_alpha");
  r.lip_lambda = j.at("lip_lambda");
  r.W = box_from_json(j.at("working_box"));
  r.initial_dropped = j.at("initial_dropped");
  r.initial_dropped_ids = j.at("initial_dropped_ids").get<std::vector<int>>();
  for (const Json& s : j.at("stages")) r.stages.push_back(StageLog::from_json(s));
  r.N = j.at("N");
  r.residual_bound = j.at("residual_bound");
  r.residual_max = j.at("residual_max");
  r.residual_tol = j.at("residual_tol");
  r.certified_grad = j.at("certified_grad");
  r.certified_sup = j.at("certified_sup");
  r.truncated = j.at("truncated");
  r.u = ScalarField::from_json(j.at("u"));
  r.K = cloud_by_ids(cloud, j.at("K_ids"), "scheme");
  return r;
}

inline Json solution_to_json(const Solution& s) {
  Json groups = Json::array();
  for (const GroupSolution& g : s.groups) {
    Json log = g.scheme.log_json();
    log["u"] = g.scheme.u.to_json();
    log["K_ids"] = cloud_ids(g.scheme.K);
    groups.push_back({{"direction", g.direction}, {"v", g.v}, {"piece", g.piece}, {"U", box_to_json(g.U)}, {"inner", box_to_json(g.inner)},
                      {"lambda", g.lambda.to_json()}, {"scheme", log}});
  }
  return Json{{"d", s.d}, {"eps", s.eps}, {"delta", s.delta}, {"alpha", s.alpha}, {"deltatilde", s.deltatilde}, {"net_size", s.net_size},
              {"M", s.M}, {"lusin_dropped", s.lusin_dropped}, {"partition_dropped", s.partition_dropped},
              {"partition_dropped_ids", s.partition_dropped_ids}, {"certified_lip", s.certified_lip}, {"certified_sup", s.certified_sup},
              {"residual_tol", s.residual_tol}, {"clamp_width", s.clamp_width}, {"K_ids", cloud_ids(s.K)}, {"V", s.V.to_json()},
              {"groups", groups}};
}

inline Solution solution_from_json(const Json& j, const AtomCloud& cloud) {
  Solution s;
  s.d = j.at("d");
  s.eps = j.at("eps");
  s.delta = j.at("delta");
  s.alpha = j.at("alpha");
  s.deltatilde = j.at("deltatilde");
  s.net_size = j.at("net_size");
  s.M = j.at("M");
  s.lusin_dropped = j.at("lusin_dropped");
  s.partition_dropped = j.at("partition_dropped");
  s.partition_dropped_ids = j.at("partition_dropped_ids").get<std::vector<int>>();
  s.certified_lip = j.at("certified_lip");
  s.certified_sup = j.at("certified_sup");
  s.residual_tol = j.at("residual_tol");
  s.clamp_width = j.at("clamp_width");
  s.cloud = cloud;
  s.K = cloud_by_ids(cloud, j.at("K_ids"), "solution");
  s.V = VectorField::from_json(j.at("V"));
  for (const Json& g : j.at("groups")) {
    GroupSolution gs;
    gs.direction = g.at("direction");
    gs.v = g.at("v").get<Vec>();
    gs.piece = g.at("piece");
    gs.U = box_from_json(g.at("U"));
    gs.inner = box_from_json(g.at("inner"));
    gs.lambda = ScalarField::from_json(g.at("lambda"));
    gs.scheme = scheme_from_json(g.at("scheme"), cloud);
    s.groups.push_back(std::move(gs));
  }
  return s;
}

inline Json affine_to_json(const AffineMap& F) { return Json{{"d", F.d}, {"A", F.A}, {"c", F.c}}; }
inline AffineMap affine_from_json(const Json& j) { return AffineMap{j.at("d").get<int>(), j.at("A").get<std::vector<double>>(), j.at("c").get<Vec>()}; }

inline Json map_solution_to_json(const MapSolution& m) {
  return Json{{"L", m.L}, {"diffeo_flag", m.diffeo_flag}, {"inverse_lip_bound", std::isfinite(m.inverse_lip_bound) ? Json(m.inverse_lip_bound) : Json(nullptr)},
              {"solution", solution_to_json(m.sol)}};
}
inline MapSolution map_solution_from_json(const Json& j, const AtomCloud& cloud) {
  MapSolution m;
  m.L = j.at("L");
  m.diffeo_flag = j.at("diffeo_flag");
  m.inverse_lip_bound = j.at("inverse_lip_bound").is_null() ? std::numeric_limits<double>::infinity() : j.at("inverse_lip_bound").get<double>();
  m.sol = solution_from_json(j.at("solution"), cloud);
  return m;
}

inline Json diffeo_to_json(const DiffeoSolution& D) {
  return Json{{"F", affine_to_json(D.F)}, {"det_F", D.det_F}, {"lip_F", D.lip_F}, {"lip_F_inv", D.lip_F_inv},
              {"image_box", box_to_json(D.image_box)}, {"image_margin", D.image_margin}, {"eps_image", D.eps_image},
              {"h", D.h->to_json()}, {"h_minus_one", D.h_minus_one}, {"certified_lip", D.certified_lip}, {"lip_bound", D.lip_bound},
              {"K_ids", cloud_ids(D.K)}, {"psi", map_solution_to_json(D.psi)}};
}
inline DiffeoSolution diffeo_from_json(const Json& j, const AtomCloud& cloud) {
  DiffeoSolution D;
  D.F = affine_from_json(j.at("F"));
  D.det_F = j.at("det_F");
  D.lip_F = j.at("lip_F");
  D.lip_F_inv = j.at("lip_F_inv");
  D.image_box = box_from_json(j.at("image_box"));
  D.image_margin = j.at("image_margin");
  D.eps_image = j.at("eps_image");
  D.h = expr_from_json(j.at("h"));
  D.h_minus_one = j.at("h_minus_one");
  D.certified_lip = j.at("certified_lip");
  D.lip_bound = j.at("lip_bound");
  D.cloud = cloud;
  D.K = cloud_by_ids(cloud, j.at("K_ids"), "diffeomorphism");
  D.psi = map_solution_from_json(j.at("psi"), push_atoms(cloud, D.F));
  return D;
}

// ---- pipeline ----

// Everything a run produces; `solution` is the reloadable dump.
struct RunOutput {
  Json report;
  Json solution;
  std::string grid_csv;
  std::string atoms_csv;
  bool pass = false;
};

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Json ledger_json(const Solution& s) {
  Json per = Json::array();
  for (const auto& g : s.groups) per.push_back(g.scheme.dropped_total());
  return Json{{"budget", s.eps}, {"lusin", s.lusin_dropped}, {"partition", s.partition_dropped}, {"scheme", per},
              {"total", s.dropped_total()}, {"cloud_mass", s.cloud.mass()}, {"retained_mass", s.K.mass()}};
}

inline Json groups_json(const Solution& s) {
  Json a = Json::array();
  for (const auto& g : s.groups)
    a.push_back({{"direction", g.direction}, {"v", g.v}, {"piece", g.piece}, {"U", box_to_json(g.U)}, {"inner", box_to_json(g.inner)},
                 {"K_size", g.scheme.K.size()}, {"log", g.scheme.log_json()}});
  return a;
}

inline Json solution_summary(const Solution& s) {
  return Json{{"eps", s.eps}, {"delta", s.delta}, {"alpha", s.alpha}, {"deltatilde", s.deltatilde}, {"net_size", s.net_size}, {"N", s.N()},
              {"M", s.M}, {"clamp_width", s.clamp_width}, {"residual_tol", s.residual_tol}, {"cloud_size", s.cloud.size()},
              {"K_size", s.K.size()}, {"certified_lip", s.certified_lip}, {"certified_sup", s.certified_sup}};
}

template <class Map, class Scalar>
std::string grid_dump(const Box& omega, int grid, int d, const char* vname, const char* sname, Map&& map, Scalar&& scalar) {
  std::string out;
  for (int k = 0; k < d; ++k) out += "x" + std::to_string(k + 1) + ",";
  for (int k = 0; k < d; ++k) out += std::string(vname) + std::to_string(k + 1) + ",";
  out += std::string(sname) + "\n";
  std::vector<double> v(d);
  for_grid(omega, grid, [&](const double* x) {
    map(x, v.data());
    for (int k = 0; k < d; ++k) out += g17(x[k]) + ",";
    for (int k = 0; k < d; ++k) out += g17(v[k]) + ",";
    out += g17(scalar(x)) + "\n";
  });
  return out;
}

template <class Value>
std::string atoms_dump(const AtomCloud& K, const std::unordered_map<int, int>& owner, const char* vname, Value&& value) {
  const int d = K.d;
  std::string out = "id,";
  for (int k = 0; k < d; ++k) out += "x" + std::to_string(k + 1) + ",";
  out += "weight,group," + std::string(vname) + ",residual\n";
  for (size_t i = 0; i < K.size(); ++i) {
    double v, r;
    value(K.point(i), v, r);
    auto it = owner.find(K.id[i]);
    out += std::to_string(K.id[i]) + ",";
    for (int k = 0; k < d; ++k) out += g17(K.point(i)[k]) + ",";
    out += g17(K.w[i]) + "," + std::to_string(it == owner.end() ? -1 : it->second) + "," + g17(v) + "," + g17(r) + "\n";
  }
  return out;
}

}  // namespace detail

struct VerifySettings {
  int grid = 200;
  uint64_t seed = 7;
};

// Builds report and dumps from a solved (or reloaded) solution.
inline RunOutput report_divergence(const Scenario& sc, const Solution& s, const VerifySettings& vs) {
  RunOutput o;
  Report rep = verify_divergence(s, sc.f, sc.omega, vs.grid, vs.seed);
  o.pass = rep.pass();
  o.report = Json{{"scenario", sc.name}, {"datum", to_string(sc.kind)}, {"pass", o.pass}, {"parameters", detail::solution_summary(s)},
                  {"certified", {{"lip", s.certified_lip}, {"lip_bound", (1.0 + s.delta) * s.M}, {"sup", s.certified_sup}, {"sup_bound", s.eps}}},
                  {"ledger", detail::ledger_json(s)}, {"groups", detail::groups_json(s)}, {"verification", rep.to_json()}};
  o.grid_csv = detail::grid_dump(sc.omega, vs.grid, s.d, "V", "divV", [&](const double* x, double* v) { s.V.value(x, v); },
                                 [&](const double* x) { return s.V.divergence(x); });
  o.atoms_csv = detail::atoms_dump(s.K, s.owner_of_K(), "divV", [&](const double* x, double& v, double& r) {
    v = s.V.divergence(x);
    r = v - sc.f->value(x);
  });
  return o;
}

inline RunOutput report_jacobian(const Scenario& sc, const MapSolution& m, const VerifySettings& vs) {
  RunOutput o;
  const Solution& s = m.sol;
  Report rep = verify_jacobian(m, sc.g, sc.omega, vs.grid, vs.seed);
  o.pass = rep.pass();
  Json par = detail::solution_summary(s);
  par["L"] = m.L;
  par["diffeo_flag"] = m.diffeo_flag;
  par["inverse_lip_bound"] = std::isfinite(m.inverse_lip_bound) ? Json(m.inverse_lip_bound) : Json(nullptr);
  o.report = Json{{"scenario", sc.name}, {"datum", to_string(sc.kind)}, {"pass", o.pass}, {"parameters", par},
                  {"certified", {{"lip", s.certified_lip}, {"lip_bound", (1.0 + s.delta) * m.L}, {"sup", s.certified_sup}, {"sup_bound", s.eps}}},
                  {"ledger", detail::ledger_json(s)}, {"groups", detail::groups_json(s)}, {"verification", rep.to_json()}};
  const MapField phi = m.phi();
  o.grid_csv = detail::grid_dump(sc.omega, vs.grid, s.d, "Phi", "detDPhi", [&](const double* x, double* v) { phi.value(x, v); },
                                 [&](const double* x) { return det_direct(phi, x); });
  o.atoms_csv = detail::atoms_dump(s.K, s.owner_of_K(), "detDPhi", [&](const double* x, double& v, double& r) {
    v = det_direct(phi, x);
    r = v - sc.g->value(x);
  });
  return o;
}

// V = W + Z: the divergence identity for the sum and |Z| <= eps, on top of the
// full verification of Z against the datum f - div W.
inline Report verify_background(const BackgroundSolution& b, const Expr& f, const Box& omega, int grid, uint64_t seed) {
  Report r;
  const Solution& z = b.Z;
  const int d = z.d;
  Worst w;
  for (size_t i = 0; i < z.K.size(); ++i) {
    const double* x = z.K.point(i);
    w.offer(std::abs(b.V.divergence(x) - f->value(x)), x, d);
  }
  r.upper("div_total", z.K.empty() ? 0.0 : w.value, kExactRelTol * std::max(z.M, detail::max_abs_on(z.K, f)), w.at);
  Expr q = make_sum(f, make_scale(-1.0, b.div_W));
  r.merge(verify_divergence(z, q, omega, grid, seed), "Z_");
  return r;
}

inline RunOutput report_background(const Scenario& sc, const BackgroundSolution& b, const VerifySettings& vs) {
  RunOutput o;
  const Solution& s = b.Z;
  Report rep = verify_background(b, sc.f, sc.omega, vs.grid, vs.seed);
  o.pass = rep.pass();
  o.report = Json{{"scenario", sc.name}, {"datum", to_string(sc.kind)}, {"pass", o.pass}, {"parameters", detail::solution_summary(s)},
                  {"background", b.W.to_json()}, {"div_background", b.div_W->to_json()},
                  {"certified", {{"lip_Z", s.certified_lip}, {"lip_bound", (1.0 + s.delta) * s.M}, {"sup_Z", s.certified_sup}, {"sup_bound", s.eps}}},
                  {"ledger", detail::ledger_json(s)}, {"groups", detail::groups_json(s)}, {"verification", rep.to_json()}};
  o.grid_csv = detail::grid_dump(sc.omega, vs.grid, s.d, "V", "divV", [&](const double* x, double* v) { b.V.value(x, v); },
                                 [&](const double* x) { return b.V.divergence(x); });
  o.atoms_csv = detail::atoms_dump(s.K, s.owner_of_K(), "divV", [&](const double* x, double& v, double& r) {
    v = b.V.divergence(x);
    r = v - sc.f->value(x);
  });
  return o;
}

inline RunOutput report_diffeo(const Scenario& sc, const DiffeoSolution& D, const VerifySettings& vs) {
  RunOutput o;
  Report rep = verify_diffeomorphism(D, sc.g, sc.omega, sc.eps, vs.grid, vs.seed);
  o.pass = rep.pass();
  const Solution& s = D.psi.sol;
  Json par = detail::solution_summary(s);
  par["eps"] = sc.eps;
  par["eps_image"] = D.eps_image;
  par["det_F"] = D.det_F;
  par["lip_F"] = D.lip_F;
  par["lip_F_inv"] = D.lip_F_inv;
  par["image_box"] = box_to_json(D.image_box);
  par["image_margin"] = D.image_margin;
  par["h_minus_one"] = D.h_minus_one;
  o.report = Json{{"scenario", sc.name}, {"datum", to_string(sc.kind)}, {"pass", o.pass}, {"parameters", par},
                  {"certified", {{"lip", D.certified_lip}, {"lip_bound", D.lip_bound}}},
                  {"ledger", detail::ledger_json(s)}, {"groups", detail::groups_json(s)}, {"verification", rep.to_json()}};
  const int d = sc.d;
  auto det = [&](const double* x) {
    std::vector<double> J(d * d);
    D.jacobian(x, J.data());
    return determinant(J, d);
  };
  o.grid_csv = detail::grid_dump(sc.omega, vs.grid, d, "Phi", "detDPhi", [&](const double* x, double* v) { D.value(x, v); }, det);
  std::unordered_map<int, int> owner = s.owner_of_K();
  o.atoms_csv = detail::atoms_dump(D.K, owner, "detDPhi", [&](const double* x, double& v, double& r) {
    v = det(x);
    r = v - sc.g->value(x);
  });
  return o;
}

inline Json dump_header(const Scenario& sc, const VerifySettings& vs) {
  return Json{{"format", "lusin-solution/1"}, {"scenario_name", sc.name}, {"scenario", sc.source},
              {"seed", sc.opt.seed}, {"verification", {{"grid", vs.grid}, {"seed", vs.seed}}}};
}

inline RunOutput run_scenario(const Scenario& sc, const VerifySettings& vs) {
  Json dump = dump_header(sc, vs);
  RunOutput o;
  switch (sc.kind) {
    case DatumKind::Divergence: {
      Solution s = solve_divergence({sc.measure, sc.omega, sc.f, sc.eps, sc.delta, sc.opt});
      o = report_divergence(sc, s, vs);
      dump["solution"] = solution_to_json(s);
      break;
    }
    case DatumKind::Jacobian: {
      MapSolution m = solve_jacobian({sc.measure, sc.omega, sc.g, sc.eps, sc.delta, sc.opt});
      o = report_jacobian(sc, m, vs);
      dump["solution"] = map_solution_to_json(m);
      break;
    }
    case DatumKind::PerturbDiv: {
      BackgroundSolution b = perturb_background(sc.background, {sc.measure, sc.omega, sc.f, sc.eps, sc.delta, sc.opt});
      o = report_background(sc, b, vs);
      dump["solution"] = solution_to_json(b.Z);
      break;
    }
    case DatumKind::PerturbJac: {
      DiffeoSolution D = perturb_diffeomorphism(sc.F, sc.g, sc.eps, sc.delta, sc.measure, sc.omega, sc.opt);
      o = report_diffeo(sc, D, vs);
      dump["solution"] = diffeo_to_json(D);
      break;
    }
  }
  o.solution = std::move(dump);
  return o;
}

// Re-verifies a dump written by run_scenario; the scenario embedded in the
// dump rebuilds the measure and its sampled cloud.
inline RunOutput verify_dump(const Json& dump) {
  require(dump.is_object() && dump.value("format", "") == "lusin-solution/1", "not a solution dump (format lusin-solution/1 expected)");
  Scenario sc = parse_scenario(dump.at("scenario"), dump.at("scenario_name").get<std::string>());
  sc.opt.seed = dump.at("seed").get<uint64_t>();
  VerifySettings vs{dump.at("verification").at("grid").get<int>(), dump.at("verification").at("seed").get<uint64_t>()};
  const Json& js = dump.at("solution");
  AtomCloud cloud = sample_atoms(sc.measure, sc.opt.resolution);
  RunOutput o;
  switch (sc.kind) {
    case DatumKind::Divergence: o = report_divergence(sc, solution_from_json(js, cloud), vs); break;
    case DatumKind::Jacobian: o = report_jacobian(sc, map_solution_from_json(js, cloud), vs); break;
    case DatumKind::PerturbDiv: {
      BackgroundSolution b;
      b.W = sc.background;
      b.div_W = divergence_expr(sc.background);
      b.Z = solution_from_json(js, cloud);
      b.V = b.W;
      for (const auto& t : b.Z.V.terms) b.V.terms.push_back(t);
      o = report_background(sc, b, vs);
      break;
    }
    case DatumKind::PerturbJac: o = report_diffeo(sc, diffeo_from_json(js, cloud), vs); break;
  }
  o.solution = dump;
  return o;
}

}  // namespace lusin
