#pragma once

#include <unordered_map>

#include "lusin/width.hpp"

namespace lusin {

inline double t_condition(double t) { return 1.0 / (1.0 - t) + std::pow(t, 4) / (1.0 - t * t); }

// Largest t in {0.49, 0.48, ..., 0.01} with t_condition(t) < 1 + min(delta, eta).
inline double choose_t(double delta, double eta) {
  require(delta > 0.0 && eta > 0.0, "choose_t: delta and eta must be positive");
  const double slack = 1.0 + std::min(delta, eta);
  for (int k = 49; k >= 1; --k) {
    double t = k / 100.0;
    if (t_condition(t) < slack) return t;
  }
  // the left side tends to 1, so only absurdly small slacks land here
  double t = 0.01;
  while (!(t_condition(t) < slack)) t *= 0.5;
  return t;
}

struct Modulus {
  double rho = 0.0;
  double lip = 0.0;
};

// rho with |lambda(x) - lambda(y)| <= bound whenever |x - y| <= rho, x, y in W.
inline Modulus modulus_radius(const ScalarField& lambda, const Box& W, double bound) {
  require(bound > 0.0, "modulus_radius: bound must be positive");
  Modulus m;
  m.lip = grad_sup_certificate(lambda, W);
  // radii beyond the box diameter all give one cluster; capping keeps rho finite
  const double cap = std::max(2.0 * W.diameter(), std::numeric_limits<double>::min());
  m.rho = m.lip > 0.0 ? std::min(bound / m.lip, cap) : cap;
  return m;
}

using Cluster = std::vector<size_t>;

// Farthest-point centers at radius rho/2 over `members` (indices into c);
// each atom joins the first center within rho/2.
inline std::vector<Cluster> greedy_cover_partition(const AtomCloud& c, const Cluster& members, double rho) {
  require(rho > 0.0, "greedy_cover_partition: rho must be positive");
  require(!members.empty(), "greedy_cover_partition: empty cloud");
  const int d = c.d;
  const double r = rho / 2.0;
  auto dist = [&](size_t a, size_t b) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
      double t = c.point(a)[k] - c.point(b)[k];
      s += t * t;
    }
    return std::sqrt(s);
  };
  const size_t n = members.size();
  std::vector<double> near(n, std::numeric_limits<double>::infinity());
  std::vector<size_t> centers;
  size_t next = 0;
  for (;;) {
    centers.push_back(next);
    double far = -1.0;
    size_t arg = 0;
    for (size_t i = 0; i < n; ++i) {
      near[i] = std::min(near[i], dist(members[i], members[next]));
      if (near[i] > far) {
        far = near[i];
        arg = i;
      }
    }
    if (far <= r) break;
    next = arg;
  }
  std::vector<Cluster> out(centers.size());
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < centers.size(); ++k)
      if (dist(members[i], members[centers[k]]) <= r) {
        out[k].push_back(members[i]);
        break;
      }
  out.erase(std::remove_if(out.begin(), out.end(), [](const Cluster& q) { return q.empty(); }), out.end());
  return out;
}

inline Box cluster_bbox(const AtomCloud& c, const Cluster& q) {
  Box b = Box::empty(c.d);
  for (size_t i : q) b.expand(c.point(i));
  return b;
}

inline double cluster_mass(const AtomCloud& c, const Cluster& q) {
  double s = 0.0;
  for (size_t i : q) s += c.w[i];
  return s;
}

// Smallest signed L-infinity gap over pairs of boxes, with the pair; sweep on axis 0.
inline double min_box_gap(const std::vector<Box>& boxes, size_t* ia = nullptr, size_t* ib = nullptr) {
  std::vector<size_t> ord(boxes.size());
  std::iota(ord.begin(), ord.end(), size_t{0});
  std::sort(ord.begin(), ord.end(), [&](size_t a, size_t b) { return boxes[a].lo[0] < boxes[b].lo[0] || (boxes[a].lo[0] == boxes[b].lo[0] && a < b); });
  double best = std::numeric_limits<double>::infinity();
  for (size_t p = 0; p < ord.size(); ++p)
    for (size_t q = p + 1; q < ord.size(); ++q) {
      const Box &a = boxes[ord[p]], &b = boxes[ord[q]];
      if (b.lo[0] - a.hi[0] >= best) break;
      double g = box_gap(a, b);
      if (g < best) {
        best = g;
        if (ia) *ia = ord[p];
        if (ib) *ib = ord[q];
      }
    }
  return best;
}

struct Separation {
  std::vector<Cluster> clusters;
  std::vector<Box> bbox, outer, inner;
  double d_min = 0.0;
  double dropped_mass = 0.0;
  std::vector<int> dropped_ids;
};

// Drops atoms until cluster bounding boxes are pairwise separated, then builds
// O = bbox + gamma and an inner box bbox + gamma/2 with
// gamma = min(d_min / 3, clearance in W / 2).
inline Separation refine_and_separate(const AtomCloud& c, std::vector<Cluster> clusters, double budget, const Box& W) {
  Separation s;
  std::vector<Box> boxes;
  for (const Cluster& q : clusters) boxes.push_back(cluster_bbox(c, q));
  for (;;) {
    size_t a = 0, b = 0;
    double gap = clusters.size() > 1 ? min_box_gap(boxes, &a, &b) : std::numeric_limits<double>::infinity();
    if (gap > 0.0) {
      s.d_min = gap;
      break;
    }
    // lighter cluster gives up the atoms closest to the heavier one's box
    if (cluster_mass(c, clusters[a]) < cluster_mass(c, clusters[b]) || (cluster_mass(c, clusters[a]) == cluster_mass(c, clusters[b]) && a > b))
      std::swap(a, b);
    Cluster& light = clusters[b];
    const Box& heavy = boxes[a];
    Cluster keep;
    std::vector<size_t> drop;
    for (size_t i : light) (heavy.contains(c.point(i)) ? drop : keep).push_back(i);
    if (drop.empty()) {
      size_t arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < light.size(); ++k) {
        double g = box_gap(heavy, Box::point(c.point(light[k]), c.d));
        if (g < best) {
          best = g;
          arg = k;
        }
      }
      drop.push_back(light[arg]);
      keep.clear();
      for (size_t k = 0; k < light.size(); ++k)
        if (k != arg) keep.push_back(light[k]);
    }
    for (size_t i : drop) {
      s.dropped_mass += c.w[i];
      s.dropped_ids.push_back(c.id[i]);
    }
    if (!(s.dropped_mass < budget))
      throw Error("refine_and_separate: separating clusters needs dropped mass " + std::to_string(s.dropped_mass) + " >= stage budget " +
                  std::to_string(budget) + "; increase the resolution");
    light = std::move(keep);
    if (light.empty()) {
      clusters.erase(clusters.begin() + b);
      boxes.erase(boxes.begin() + b);
    } else {
      boxes[b] = cluster_bbox(c, light);
    }
  }
  s.clusters = std::move(clusters);
  s.bbox = std::move(boxes);
  for (const Box& b : s.bbox) {
    double gamma = std::min(s.d_min / 3.0, W.clearance(b) / 2.0);
    require(gamma > 0.0, "refine_and_separate: cluster touches the working box boundary");
    s.outer.push_back(b.inflated(gamma));
    s.inner.push_back(b.inflated(gamma / 2.0));
  }
  return s;
}

// u_{n+1} = sum_i a_i chi_i phi_i with pairwise disjoint cutoff supports.
// A uniform grid over the supports finds the (at most one) active term.
class StageCorrectionNode final : public Node {
 public:
  struct Term {
    double a;
    std::shared_ptr<const BumpNode> chi;
    Expr phi;
  };

  StageCorrectionNode(int d, std::vector<Term> terms) : Node(d), terms_(std::move(terms)) { index(); }

  double value(const double* x) const override {
    const Term* t = find(x);
    return t ? t->a * t->chi->value(x) * t->phi->value(x) : 0.0;
  }
  double value_grad(const double* x, double* g) const override {
    const Term* t = find(x);
    if (!t) {
      std::fill(g, g + d_, 0.0);
      return 0.0;
    }
    std::array<double, kMaxDim> gc, gp;
    double c = t->chi->value_grad(x, gc.data());
    double p = t->phi->value_grad(x, gp.data());
    for (int k = 0; k < d_; ++k) g[k] = t->a * (c * gp[k] + p * gc[k]);
    return t->a * c * p;
  }
  Interval range(const Box& b) const override {
    Interval r(0.0);
    for (const Term& t : terms_)
      if (boxes_intersect(b, t.chi->outer())) r = hull(r, Interval(t.a) * term_range(t, b));
    return r;
  }
  void grad_range(const Box& b, Interval* out) const override {
    std::fill(out, out + d_, Interval(0.0));
    std::array<Interval, kMaxDim> gc, gp;
    for (const Term& t : terms_) {
      if (!boxes_intersect(b, t.chi->outer())) continue;
      Box cb = b.clipped(t.chi->outer());
      t.chi->grad_range(cb, gc.data());
      t.phi->grad_range(cb, gp.data());
      Interval rc = t.chi->range(cb), rp = t.phi->range(cb);
      for (int k = 0; k < d_; ++k) out[k] = hull(out[k], Interval(t.a) * (rc * gp[k] + rp * gc[k]));
    }
  }
  // supports are disjoint, so the sup is a max over terms
  double grad_bound(const Box& b) const override {
    double m = 0.0;
    for (const Term& t : terms_)
      if (boxes_intersect(b, t.chi->outer())) m = std::max(m, term_grad_bound(t, b.clipped(t.chi->outer())));
    return m;
  }
  Json to_json() const override {
    Json ts = Json::array();
    for (const Term& t : terms_)
      ts.push_back({{"a", t.a}, {"outer", box_to_json(t.chi->outer())}, {"inner", box_to_json(t.chi->inner())}, {"phi", t.phi->to_json()}});
    return Json{{"op", "stage"}, {"d", d_}, {"terms", ts}};
  }
  static Expr from_json(const Json& j) {
    std::vector<Term> ts;
    for (const Json& t : j.at("terms"))
      ts.push_back({t.at("a").get<double>(), bump(box_from_json(t.at("outer")), box_from_json(t.at("inner"))), expr_from_json(t.at("phi"))});
    return std::make_shared<StageCorrectionNode>(j.at("d").get<int>(), std::move(ts));
  }

  const std::vector<Term>& terms() const { return terms_; }
  static Interval term_range(const Term& t, const Box& b) {
    Box cb = b.clipped(t.chi->outer());
    return t.chi->range(cb) * t.phi->range(cb);
  }
  static double term_grad_bound(const Term& t, const Box& cb) {
    double v = std::abs(t.a) * (t.phi->range(cb).mag() * t.chi->grad_bound(cb) + t.chi->range(cb).mag() * t.phi->grad_bound(cb));
    return widen(Interval(v)).hi;
  }

 private:
  void index() {
    if (terms_.size() < 8) return;
    span_ = Box::empty(d_);
    for (const Term& t : terms_) {
      span_.expand(t.chi->outer().lo.data());
      span_.expand(t.chi->outer().hi.data());
    }
    // about one term per cell along the longest direction
    const int per_axis = std::max(1, static_cast<int>(std::ceil(std::pow(static_cast<double>(terms_.size()), 1.0 / d_))));
    cells_.assign(d_, 1);
    long total = 1;
    double longest = 0.0;
    for (int k = 0; k < d_; ++k) longest = std::max(longest, span_.hi[k] - span_.lo[k]);
    for (int k = 0; k < d_; ++k) {
      double frac = longest > 0.0 ? (span_.hi[k] - span_.lo[k]) / longest : 1.0;
      cells_[k] = std::clamp(static_cast<int>(std::ceil(frac * per_axis * 2)), 1, 4096);
      total *= cells_[k];
    }
    if (total > 4000000) {
      cells_.clear();
      return;
    }
    buckets_.assign(static_cast<size_t>(total), {});
    for (size_t i = 0; i < terms_.size(); ++i) {
      std::array<int, kMaxDim> lo{}, hi{};
      for (int k = 0; k < d_; ++k) {
        lo[k] = cell_of(terms_[i].chi->outer().lo[k], k);
        hi[k] = cell_of(terms_[i].chi->outer().hi[k], k);
      }
      std::array<int, kMaxDim> c = lo;
      for (;;) {
        buckets_[flat(c.data())].push_back(static_cast<uint32_t>(i));
        int k = 0;
        for (; k < d_; ++k) {
          if (++c[k] <= hi[k]) break;
          c[k] = lo[k];
        }
        if (k == d_) break;
      }
    }
  }
  int cell_of(double v, int k) const {
    double w = span_.hi[k] - span_.lo[k];
    if (w <= 0.0) return 0;
    int c = static_cast<int>(std::floor((v - span_.lo[k]) / w * cells_[k]));
    return std::clamp(c, 0, cells_[k] - 1);
  }
  size_t flat(const int* c) const {
    size_t f = 0;
    for (int k = d_ - 1; k >= 0; --k) f = f * cells_[k] + c[k];
    return f;
  }
  const Term* find(const double* x) const {
    if (cells_.empty()) {
      for (const Term& t : terms_)
        if (t.chi->outer().contains_open(x)) return &t;
      return nullptr;
    }
    if (!span_.contains(x)) return nullptr;
    std::array<int, kMaxDim> c{};
    for (int k = 0; k < d_; ++k) c[k] = cell_of(x[k], k);
    for (uint32_t i : buckets_[flat(c.data())])
      if (terms_[i].chi->outer().contains_open(x)) return &terms_[i];
    return nullptr;
  }

  std::vector<Term> terms_;
  Box span_;
  std::vector<int> cells_;
  std::vector<std::vector<uint32_t>> buckets_;
};

inline const bool kStageRegistered = (register_node_reader("stage", StageCorrectionNode::from_json), true);

struct SchemeOptions {
  double t = 0.0;                // 0 selects choose_t
  double residual_tol = 1e-9;    // relative to M
  int max_stage = 60;
};

struct StageLog {
  int n = 0;
  double bound = 0.0;         // t^n M
  double residual_max = 0.0;  // max |r_n| over K_n
  double rho = 0.0;
  int clusters = 0;
  int active = 0;
  double zeta = 0.0;
  double chi_lip = 0.0;
  double budget = 0.0;
  double dropped_mass = 0.0;
  std::vector<int> dropped_ids;
  double grad_cert = 0.0, grad_bound = 0.0;  // certified, and t^n M (c_alpha + t^{n+4})
  double sup_cert = 0.0, sup_bound = 0.0;    // certified, and tau t^{2n+4} M
  int retained = 0;

  Json to_json() const {
    return Json{{"n", n}, {"bound", bound}, {"residual_max", residual_max}, {"rho", rho}, {"clusters", clusters}, {"active", active},
                {"zeta", zeta}, {"chi_lip", chi_lip}, {"budget", budget}, {"dropped_mass", dropped_mass}, {"dropped_ids", dropped_ids},
                {"grad_cert", grad_cert}, {"grad_bound", grad_bound}, {"sup_cert", sup_cert}, {"sup_bound", sup_bound}, {"retained", retained}};
  }
  static StageLog from_json(const Json& j) {
    StageLog s;
    s.n = j.at("n");
    s.bound = j.at("bound");
    s.residual_max = j.at("residual_max");
    s.rho = j.at("rho");
    s.clusters = j.at("clusters");
    s.active = j.at("active");
    s.zeta = j.at("zeta");
    s.chi_lip = j.at("chi_lip");
    s.budget = j.at("budget");
    s.dropped_mass = j.at("dropped_mass");
    s.dropped_ids = j.at("dropped_ids").get<std::vector<int>>();
    s.grad_cert = j.at("grad_cert");
    s.grad_bound = j.at("grad_bound");
    s.sup_cert = j.at("sup_cert");
    s.sup_bound = j.at("sup_bound");
    s.retained = j.at("retained");
    return s;
  }
};

struct SchemeResult {
  ScalarField u;
  AtomCloud K;
  Box W;
  double M = 0.0, t = 0.0, tau = 0.0, eta = 0.0, delta = 0.0, c_alpha = 0.0;
  double lip_lambda = 0.0;
  double initial_dropped = 0.0;
  std::vector<int> initial_dropped_ids;
  std::vector<StageLog> stages;
  int N = 0;
  double residual_bound = 0.0;  // t^N M
  double residual_max = 0.0;    // max |r_N| over K
  double residual_tol = 0.0;    // absolute
  double certified_grad = 0.0;
  double certified_sup = 0.0;
  bool truncated = false;

  double dropped_total() const {
    double s = initial_dropped;
    for (const StageLog& st : stages) s += st.dropped_mass;
    return s;
  }
  Json log_json() const {
    Json st = Json::array();
    for (const StageLog& s : stages) st.push_back(s.to_json());
    return Json{{"M", M}, {"t", t}, {"tau", tau}, {"eta", eta}, {"delta", delta}, {"c_alpha", c_alpha}, {"lip_lambda", lip_lambda},
                {"working_box", box_to_json(W)}, {"initial_dropped", initial_dropped}, {"initial_dropped_ids", initial_dropped_ids},
                {"stages", st}, {"N", N}, {"residual_bound", residual_bound}, {"residual_max", residual_max}, {"residual_tol", residual_tol},
                {"certified_grad", certified_grad}, {"certified_sup", certified_sup}, {"truncated", truncated}};
  }
};

// Realizes lambda as d_e u on a retained sub-cloud K of nu with
// |Du| <= (1 + delta) c_alpha M, |u| <= eta and nu(U \ K) < eta.
inline SchemeResult run_scheme(const Box& U, const AtomCloud& nu, const Cone& cone, const ScalarField& lambda, double eta, double delta,
                               const WidthFactory& width, const SchemeOptions& opt = {}) {
  require(eta > 0.0 && delta > 0.0, "run_scheme: eta and delta must be positive");
  require(!nu.empty(), "run_scheme: empty cloud");
  const int d = nu.d;
  const Vec& e = cone.axis;
  SchemeResult res;
  res.eta = eta;
  res.delta = delta;
  res.c_alpha = c_alpha(cone.half_angle);

  // K_0: atoms strictly inside U
  DropResult k0 = inner_regular_refine(nu, eta / 2.0, [&](size_t i) { return !U.contains_open(nu.point(i)); }, "outside U");
  res.initial_dropped = k0.dropped_mass;
  res.initial_dropped_ids = k0.dropped_ids;
  const AtomCloud& K0 = k0.kept;
  require(!K0.empty(), "run_scheme: no atoms inside U");

  Box bb = K0.bbox();
  double infl = std::min(0.1 * bb.diameter() > 0.0 ? 0.1 * bb.diameter() : std::numeric_limits<double>::infinity(), 0.45 * U.clearance(bb));
  res.W = bb.inflated(infl);

  for (size_t i = 0; i < K0.size(); ++i) res.M = std::max(res.M, std::abs(lambda.value(K0.point(i))));
  const double M = res.M;
  std::vector<Expr> stage_fields;
  res.u = {make_const(d, 0.0), res.W};
  if (M == 0.0) {
    res.K = K0;
    return res;
  }
  res.t = opt.t > 0.0 ? opt.t : choose_t(delta, eta);
  require(res.t > 0.0 && res.t < 0.5, "run_scheme: t must lie in (0, 1/2)");
  const double t = res.t;
  res.tau = std::min({1.0, delta / M, eta / M});
  res.residual_tol = opt.residual_tol * M;

  const Modulus mod0 = modulus_radius(lambda, res.W, 1.0);
  res.lip_lambda = mod0.lip;
  const double spacing = min_atom_spacing(K0);

  std::vector<double> r(K0.size());
  for (size_t i = 0; i < K0.size(); ++i) r[i] = lambda.value(K0.point(i));
  std::vector<char> alive(K0.size(), 1);
  Cluster all(K0.size());
  std::iota(all.begin(), all.end(), size_t{0});
  std::vector<Cluster> prev{all};

  int n = 0;
  for (; std::pow(t, n) * M > res.residual_tol && n < opt.max_stage; ++n) {
    StageLog log;
    log.n = n;
    log.bound = std::pow(t, n) * M;
    log.budget = eta / std::pow(2.0, n + 2);
    log.grad_bound = std::pow(t, n) * M * (res.c_alpha + std::pow(t, n + 4));
    log.sup_bound = res.tau * std::pow(t, 2 * n + 4) * M;
    const double next_bound = std::pow(t, n + 1) * M;
    for (size_t i = 0; i < K0.size(); ++i)
      if (alive[i]) log.residual_max = std::max(log.residual_max, std::abs(r[i]));

    if (log.residual_max <= next_bound) {
      // already below the next stage's bound everywhere: no correction needed
      log.clusters = static_cast<int>(prev.size());
      log.retained = static_cast<int>(std::count(alive.begin(), alive.end(), 1));
      res.stages.push_back(std::move(log));
      continue;
    }

    log.rho = mod0.lip > 0.0 ? std::min(next_bound / mod0.lip, 2.0 * res.W.diameter()) : 2.0 * res.W.diameter();
    std::vector<Cluster> parts;
    for (const Cluster& q : prev) {
      if (log.rho < spacing) {
        for (size_t i : q) parts.push_back({i});
      } else {
        for (Cluster& c : greedy_cover_partition(K0, q, log.rho)) parts.push_back(std::move(c));
      }
    }
    Separation sep = refine_and_separate(K0, std::move(parts), log.budget, res.W);
    log.dropped_mass = sep.dropped_mass;
    log.dropped_ids = sep.dropped_ids;
    {
      std::unordered_map<int, size_t> by_id;
      for (size_t i = 0; i < K0.size(); ++i) by_id[K0.id[i]] = i;
      for (int id : sep.dropped_ids) alive[by_id.at(id)] = 0;
    }
    log.clusters = static_cast<int>(sep.clusters.size());

    std::vector<size_t> act;
    for (size_t k = 0; k < sep.clusters.size(); ++k) {
      double m = 0.0;
      for (size_t i : sep.clusters[k]) m = std::max(m, std::abs(r[i]));
      if (m > next_bound) act.push_back(k);
    }
    log.active = static_cast<int>(act.size());

    std::vector<std::shared_ptr<const BumpNode>> chis;
    for (size_t k : act) {
      chis.push_back(bump(sep.outer[k], sep.inner[k]));
      log.chi_lip = std::max(log.chi_lip, chis.back()->lipschitz());
    }
    log.zeta = res.tau * std::pow(t, n + 4) / (1.0 + log.chi_lip);

    std::vector<StageCorrectionNode::Term> terms;
    for (size_t a = 0; a < act.size(); ++a) {
      const Cluster& q = sep.clusters[act[a]];
      size_t y = q.front();
      for (size_t i : q)
        if (K0.w[i] > K0.w[y] || (K0.w[i] == K0.w[y] && i < y)) y = i;
      WidthFunction wf;
      try {
        wf = width.build(K0.subset(q), log.zeta);
      } catch (const Error& ex) {
        throw Error(std::string(ex.what()) + " [stage " + std::to_string(n) + ", zeta " + fmt_g(log.zeta) + ", chi lip " + fmt_g(log.chi_lip) + ", t " + fmt_g(t) + ", tau " + fmt_g(res.tau) + "]");
      }
      StageCorrectionNode::Term term{r[y], chis[a], wf.phi.expr};
      const Box& O = sep.outer[act[a]];
      log.grad_cert = std::max(log.grad_cert, StageCorrectionNode::term_grad_bound(term, O));
      log.sup_cert = std::max(log.sup_cert, std::abs(term.a) * StageCorrectionNode::term_range(term, O).mag());
      terms.push_back(std::move(term));
    }
    if (!(log.grad_cert <= log.grad_bound * (1.0 + 1e-12)))
      throw Error("run_scheme: stage " + std::to_string(n) + " gradient certificate " + fmt_g(log.grad_cert) + " exceeds " + fmt_g(log.grad_bound));
    if (!(log.sup_cert <= log.sup_bound * (1.0 + 1e-12)))
      throw Error("run_scheme: stage " + std::to_string(n) + " sup certificate " + fmt_g(log.sup_cert) + " exceeds " + fmt_g(log.sup_bound));
    res.certified_grad += log.grad_cert;
    res.certified_sup += log.sup_cert;

    auto node = std::make_shared<StageCorrectionNode>(d, std::move(terms));
    stage_fields.push_back(node);
    std::array<double, kMaxDim> g;
    for (size_t i = 0; i < K0.size(); ++i) {
      if (!alive[i]) continue;
      node->value_grad(K0.point(i), g.data());
      r[i] -= dot(g.data(), e.data(), d);
    }
    prev.clear();
    for (Cluster& q : sep.clusters) prev.push_back(std::move(q));
    log.retained = static_cast<int>(std::count(alive.begin(), alive.end(), 1));
    res.stages.push_back(std::move(log));
  }
  res.N = n;
  res.residual_bound = std::pow(t, n) * M;
  res.truncated = res.residual_bound > res.residual_tol;

  std::vector<size_t> kept;
  for (size_t i = 0; i < K0.size(); ++i)
    if (alive[i]) {
      kept.push_back(i);
      res.residual_max = std::max(res.residual_max, std::abs(r[i]));
    }
  res.K = K0.subset(kept);
  if (!stage_fields.empty()) res.u = {stage_fields.size() == 1 ? stage_fields[0] : make_sum(stage_fields), res.W};
  return res;
}

}  // namespace lusin
