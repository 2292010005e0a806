#pragma once

#include "lusin/fn1.hpp"

namespace lusin {

// One verified inequality: `value` must stay on the allowed side of `limit`.
struct Check {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  bool pass = true;
  Vec witness;
  std::string note;

  Json to_json() const {
    Json j{{"name", name}, {"value", value}, {"limit", limit}, {"pass", pass}};
    if (!witness.empty()) j["witness"] = witness;
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

struct Report {
  std::vector<Check> checks;

  bool pass() const {
    for (const Check& c : checks)
      if (!c.pass) return false;
    return true;
  }
  const Check* find(const std::string& name) const {
    for (const Check& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
  const Check& at(const std::string& name) const {
    const Check* c = find(name);
    require(c != nullptr, "report has no entry '" + name + "'");
    return *c;
  }
  // value <= limit
  Check& upper(const std::string& name, double value, double limit, Vec witness = {}) {
    checks.push_back({name, value, limit, value <= limit, std::move(witness), ""});
    return checks.back();
  }
  // value < limit
  Check& below(const std::string& name, double value, double limit, Vec witness = {}) {
    checks.push_back({name, value, limit, value < limit, std::move(witness), ""});
    return checks.back();
  }
  // value >= limit
  Check& lower(const std::string& name, double value, double limit, Vec witness = {}) {
    checks.push_back({name, value, limit, value >= limit, std::move(witness), ""});
    return checks.back();
  }
  void merge(const Report& o, const std::string& prefix = "") {
    for (Check c : o.checks) {
      c.name = prefix + c.name;
      checks.push_back(std::move(c));
    }
  }
  // an entry that does not apply to this input; passes by definition
  Check& skipped(const std::string& name, const std::string& why) {
    checks.push_back({name, 0.0, 0.0, true, {}, "not applicable: " + why});
    return checks.back();
  }
  Json to_json() const {
    Json a = Json::array();
    for (const Check& c : checks) a.push_back(c.to_json());
    return Json{{"pass", pass()}, {"checks", a}};
  }
};

// Tracks the worst value of a quantity together with where it occurred.
struct Worst {
  double value = -std::numeric_limits<double>::infinity();
  Vec at;
  void offer(double v, const double* x, int d) {
    if (v > value || std::isnan(v)) {
      value = std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
      at.assign(x, x + d);
    }
  }
};

}  // namespace lusin
