// Scenario-driven front end: run, net, width-demo, verify.
// Exit codes: 0 all checks pass, 1 some check fails, 2 usage/parse/schema error.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "lusin/scenario.hpp"

namespace fs = std::filesystem;
using namespace lusin;

namespace {

std::string resolve_scenario(const std::string& p) {
  if (fs::exists(p)) return p;
#ifdef LUSIN_SCENARIO_DIR
  fs::path bundled = fs::path(LUSIN_SCENARIO_DIR) / p;
  if (fs::exists(bundled)) return bundled.string();
  bundled += ".json";
  if (fs::exists(bundled)) return bundled.string();
#endif
  throw Error("scenario '" + p + "' not found");
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
}

void summarize(const std::string& what, const Json& report, bool quiet) {
  if (quiet) return;
  const Json& checks = report.at("verification").at("checks");
  int failed = 0;
  for (const Json& c : checks) failed += c.at("pass").get<bool>() ? 0 : 1;
  std::cout << (failed == 0 ? "PASS " : "FAIL ") << what << " (" << checks.size() - failed << "/" << checks.size() << " checks)\n";
  for (const Json& c : checks)
    if (!c.at("pass").get<bool>())
      std::cout << "  failed " << c.at("name").get<std::string>() << ": value " << fmt_g(c.at("value").get<double>()) << ", limit "
                << fmt_g(c.at("limit").get<double>()) << "\n";
}

int emit(const RunOutput& o, const fs::path& out, const Scenario& sc, bool quiet) {
  write_file(out / sc.out_report, o.report.dump(2) + "\n");
  write_file(out / sc.out_grid, o.grid_csv);
  write_file(out / sc.out_atoms, o.atoms_csv);
  write_file(out / sc.out_solution, o.solution.dump() + "\n");
  summarize(sc.name, o.report, quiet);
  return o.pass ? 0 : 1;
}

Vec parse_list(const std::string& s) {
  Vec v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw Error("malformed number '" + item + "' in list '" + s + "'");
    v.push_back(x);
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lipschitz fields with prescribed divergence or Jacobian on singular measures"};
  app.require_subcommand(1);
  std::string out_dir = "lusin_out";
  bool quiet = false;

  std::string scenario_path;
  int grid = 0;
  uint64_t seed = 0;
  bool seed_set = false;
  auto* run = app.add_subcommand("run", "solve a scenario, verify it and write report, grid, atoms and solution dumps");
  run->add_option("--scenario,scenario", scenario_path, "scenario JSON (path or bundled name)")->required();
  run->add_option("--grid", grid, "grid resolution per axis (overrides the scenario)")->check(CLI::Range(2, 4000));
  run->add_option_function<uint64_t>("--seed", [&](const uint64_t& s) { seed = s, seed_set = true; }, "seed for nets and sampling");
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--quiet", quiet, "suppress the summary on stdout");

  int net_d = 2;
  double net_alpha = 0.785;
  auto* net = app.add_subcommand("net", "print a verified direction net as JSON");
  net->add_option("--d,d", net_d, "dimension")->check(CLI::Range(2, kMaxDim));
  net->add_option("--alpha,alpha", net_alpha, "cone half-angle in radians")->check(CLI::Range(1e-3, kPi / 2 - 1e-9));
  net->add_option_function<uint64_t>("--seed", [&](const uint64_t& s) { seed = s, seed_set = true; }, "seed");
  net->add_flag("--quiet", quiet, "omit the verification line on stderr");

  std::string carrier = "cantor", axis_s;
  double alpha = kPi / 4, zeta = 0.1;
  auto* width = app.add_subcommand("width-demo", "dump phi and d_e phi of a width function on a grid");
  width->add_option("--carrier", carrier, "catalog measure: segment, sine, cantor")->capture_default_str();
  width->add_option("--axis", axis_s, "cone axis as a comma list (default: the carrier's axis)");
  width->add_option("--alpha", alpha, "cone half-angle in radians")->check(CLI::Range(1e-3, kPi / 2 - 1e-9));
  width->add_option("--zeta", zeta, "width scale")->check(CLI::PositiveNumber);
  width->add_option("--grid", grid, "grid resolution per axis")->check(CLI::Range(2, 4000));
  width->add_option("--out", out_dir, "output directory");
  width->add_flag("--quiet", quiet, "suppress the summary on stdout");

  std::string solution_path;
  auto* verify = app.add_subcommand("verify", "re-verify a solution dump written by run");
  verify->add_option("--solution,solution", solution_path, "solution JSON")->required();
  verify->add_option("--out", out_dir, "output directory for the report");
  verify->add_flag("--quiet", quiet, "suppress the summary on stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) {
      Scenario sc = load_scenario(resolve_scenario(scenario_path));
      if (seed_set) sc.opt.seed = seed;
      if (grid > 0) sc.grid = grid;
      RunOutput o = run_scenario(sc, {sc.grid, sc.opt.seed});
      return emit(o, out_dir, sc, quiet);
    }
    if (*net) {
      DirectionNet n = build_direction_net(net_d, net_alpha, seed_set ? seed : 7);
      NetReport rep = verify_net(n, net_d, 10000, seed_set ? seed : 11);
      Json j{{"d", net_d}, {"alpha", net_alpha}, {"size", n.directions.size()}, {"directions", n.directions},
             {"verified", rep.pass()}, {"failures", rep.failures}};
      std::cout << j.dump(2) << "\n";
      if (!quiet) std::cerr << (rep.pass() ? "PASS" : "FAIL") << " net d=" << net_d << " alpha=" << net_alpha << " (" << n.directions.size() << " directions)\n";
      return rep.pass() ? 0 : 1;
    }
    if (*width) {
      ModelMeasure m = catalog_measure(carrier);
      require(m.pieces.size() == 1, "width-demo needs a single-piece carrier (segment, sine, cantor)");
      const Carrier& car = m.pieces[0].carrier;
      Vec axis = axis_s.empty() ? std::visit([](const auto& c) { return c.place.linear(c.axis); }, car) : normalized(parse_list(axis_s));
      require(static_cast<int>(axis.size()) == m.d, "--axis must have " + std::to_string(m.d) + " entries");
      Cone cone(axis, alpha);
      Certificate cert = cone_null_certificate(car, cone);
      if (!cert.ok) throw Error("carrier is not null for this cone: " + cert.reason);
      AtomCloud E = sample_atoms(m, 200);
      WidthFunction w = WidthFactory::for_carrier(car, cert).build(E, zeta);
      const int res = grid > 0 ? grid : 200;
      Report rep = verify_width(w, res);
      Box bb = E.bbox().inflated(0.25);
      std::string csv = "x1,x2,phi,de_phi,target\n";
      std::array<double, kMaxDim> g{};
      auto row = [&](const double* x, int target) {
        double v = w.phi.value_grad(x, g.data());
        csv += detail::g17(x[0]) + "," + detail::g17(x[1]) + "," + detail::g17(v) + "," + detail::g17(dot(g.data(), axis.data(), 2)) + "," +
               std::to_string(target) + "\n";
      };
      detail::for_grid(bb, res, [&](const double* x) { row(x, 0); });
      for (size_t i = 0; i < E.size(); ++i) row(E.point(i), 1);
      write_file(fs::path(out_dir) / "width.csv", csv);
      Json j{{"carrier", carrier}, {"axis", axis}, {"alpha", alpha}, {"zeta", zeta}, {"generation", w.generation}, {"verification", rep.to_json()}};
      write_file(fs::path(out_dir) / "width_report.json", j.dump(2) + "\n");
      summarize("width-demo " + carrier, j, quiet);
      return rep.pass() ? 0 : 1;
    }
    if (*verify) {
      Json dump = read_json_file(solution_path);
      RunOutput o = verify_dump(dump);
      Scenario sc = parse_scenario(dump.at("scenario"), dump.at("scenario_name").get<std::string>());
      write_file(fs::path(out_dir) / sc.out_report, o.report.dump(2) + "\n");
      summarize("verify " + sc.name, o.report, quiet);
      return o.pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
