#pragma once

#include <functional>
#include <memory>
#include <numeric>

#include "lusin/fn1.hpp"

namespace lusin {

inline Json box_to_json(const Box& b) { return Json{{"lo", b.lo}, {"hi", b.hi}}; }
inline Box box_from_json(const Json& j) { return Box(j.at("lo").get<Vec>(), j.at("hi").get<Vec>()); }

// Expression node over R^d. value_grad writes d gradient entries.
class Node {
 public:
  explicit Node(int d) : d_(d) { require(d >= 1 && d <= kMaxDim, "expression dimension out of range"); }
  virtual ~Node() = default;

  int dim() const { return d_; }
  virtual double value(const double* x) const = 0;
  virtual double value_grad(const double* x, double* g) const = 0;
  // enclosure of the value over a box
  virtual Interval range(const Box& b) const = 0;
  // enclosures of the partial derivatives over a box
  virtual void grad_range(const Box& b, Interval* out) const = 0;
  // upper bound on the Euclidean norm of the gradient over a box
  virtual double grad_bound(const Box& b) const {
    std::array<Interval, kMaxDim> g;
    grad_range(b, g.data());
    double s = 0.0;
    for (int k = 0; k < d_; ++k) s += g[k].mag() * g[k].mag();
    return widen(Interval(std::sqrt(s))).hi;
  }
  virtual Json to_json() const = 0;

 protected:
  int d_;
};
using Expr = std::shared_ptr<const Node>;

class ConstNode final : public Node {
 public:
  ConstNode(int d, double c) : Node(d), c_(c) {}
  double value(const double*) const override { return c_; }
  double value_grad(const double*, double* g) const override {
    std::fill(g, g + d_, 0.0);
    return c_;
  }
  Interval range(const Box&) const override { return c_; }
  void grad_range(const Box&, Interval* out) const override { std::fill(out, out + d_, Interval(0.0)); }
  double grad_bound(const Box&) const override { return 0.0; }
  Json to_json() const override { return Json{{"op", "const"}, {"d", d_}, {"c", c_}}; }
  double constant() const { return c_; }

 private:
  double c_;
};

class CoordNode final : public Node {
 public:
  CoordNode(int d, int k) : Node(d), k_(k) { require(k >= 0 && k < d, "coordinate index out of range"); }
  double value(const double* x) const override { return x[k_]; }
  double value_grad(const double* x, double* g) const override {
    std::fill(g, g + d_, 0.0);
    g[k_] = 1.0;
    return x[k_];
  }
  Interval range(const Box& b) const override { return {b.lo[k_], b.hi[k_]}; }
  void grad_range(const Box&, Interval* out) const override {
    std::fill(out, out + d_, Interval(0.0));
    out[k_] = 1.0;
  }
  double grad_bound(const Box&) const override { return 1.0; }
  Json to_json() const override { return Json{{"op", "coord"}, {"d", d_}, {"k", k_}}; }
  int index() const { return k_; }

 private:
  int k_;
};

// x . g + c
class AffineNode final : public Node {
 public:
  AffineNode(Vec g, double c) : Node(static_cast<int>(g.size())), g_(std::move(g)), c_(c) {}
  double value(const double* x) const override { return dot(x, g_.data(), d_) + c_; }
  double value_grad(const double* x, double* g) const override {
    std::copy(g_.begin(), g_.end(), g);
    return value(x);
  }
  Interval range(const Box& b) const override {
    Interval s(c_);
    for (int k = 0; k < d_; ++k) s = s + Interval(g_[k]) * Interval(b.lo[k], b.hi[k]);
    return s;
  }
  void grad_range(const Box&, Interval* out) const override {
    for (int k = 0; k < d_; ++k) out[k] = g_[k];
  }
  Json to_json() const override { return Json{{"op", "affine"}, {"d", d_}, {"g", g_}, {"c", c_}}; }
  const Vec& gradient() const { return g_; }
  double offset() const { return c_; }

 private:
  Vec g_;
  double c_;
};

class SumNode final : public Node {
 public:
  explicit SumNode(std::vector<Expr> args) : Node(args.at(0)->dim()), args_(std::move(args)) {
    for (const Expr& a : args_) require(a->dim() == d_, "sum of expressions with different dimensions");
  }
  double value(const double* x) const override {
    double s = 0.0;
    for (const Expr& a : args_) s += a->value(x);
    return s;
  }
  double value_grad(const double* x, double* g) const override {
    std::fill(g, g + d_, 0.0);
    std::array<double, kMaxDim> t;
    double s = 0.0;
    for (const Expr& a : args_) {
      s += a->value_grad(x, t.data());
      for (int k = 0; k < d_; ++k) g[k] += t[k];
    }
    return s;
  }
  Interval range(const Box& b) const override {
    Interval s(0.0);
    for (const Expr& a : args_) s = s + a->range(b);
    return s;
  }
  void grad_range(const Box& b, Interval* out) const override {
    std::fill(out, out + d_, Interval(0.0));
    std::array<Interval, kMaxDim> t;
    for (const Expr& a : args_) {
      a->grad_range(b, t.data());
      for (int k = 0; k < d_; ++k) out[k] = out[k] + t[k];
    }
  }
  double grad_bound(const Box& b) const override {
    double s = 0.0;
    for (const Expr& a : args_) s += a->grad_bound(b);
    return std::min(widen(Interval(s)).hi, Node::grad_bound(b));
  }
  Json to_json() const override {
    Json a = Json::array();
    for (const Expr& e : args_) a.push_back(e->to_json());
    return Json{{"op", "sum"}, {"d", d_}, {"args", a}};
  }
  const std::vector<Expr>& args() const { return args_; }

 private:
  std::vector<Expr> args_;
};

class ScaleNode final : public Node {
 public:
  ScaleNode(double c, Expr a) : Node(a->dim()), c_(c), a_(std::move(a)) {}
  double value(const double* x) const override { return c_ * a_->value(x); }
  double value_grad(const double* x, double* g) const override {
    double v = a_->value_grad(x, g);
    for (int k = 0; k < d_; ++k) g[k] *= c_;
    return c_ * v;
  }
  Interval range(const Box& b) const override { return Interval(c_) * a_->range(b); }
  void grad_range(const Box& b, Interval* out) const override {
    a_->grad_range(b, out);
    for (int k = 0; k < d_; ++k) out[k] = Interval(c_) * out[k];
  }
  double grad_bound(const Box& b) const override { return widen(Interval(std::abs(c_) * a_->grad_bound(b))).hi; }
  Json to_json() const override { return Json{{"op", "scale"}, {"d", d_}, {"c", c_}, {"a", a_->to_json()}}; }
  double factor() const { return c_; }
  const Expr& arg() const { return a_; }

 private:
  double c_;
  Expr a_;
};

class ProductNode final : public Node {
 public:
  ProductNode(Expr a, Expr b) : Node(a->dim()), a_(std::move(a)), b_(std::move(b)) {
    require(a_->dim() == b_->dim(), "product of expressions with different dimensions");
  }
  double value(const double* x) const override { return a_->value(x) * b_->value(x); }
  double value_grad(const double* x, double* g) const override {
    std::array<double, kMaxDim> ga, gb;
    double va = a_->value_grad(x, ga.data()), vb = b_->value_grad(x, gb.data());
    for (int k = 0; k < d_; ++k) g[k] = va * gb[k] + vb * ga[k];
    return va * vb;
  }
  Interval range(const Box& b) const override { return a_->range(b) * b_->range(b); }
  void grad_range(const Box& b, Interval* out) const override {
    std::array<Interval, kMaxDim> ga, gb;
    a_->grad_range(b, ga.data());
    b_->grad_range(b, gb.data());
    Interval ra = a_->range(b), rb = b_->range(b);
    for (int k = 0; k < d_; ++k) out[k] = ra * gb[k] + rb * ga[k];
  }
  // Leibniz: |D(ab)| <= sup|a| |Db| + sup|b| |Da|
  double grad_bound(const Box& b) const override {
    double leib = a_->range(b).mag() * b_->grad_bound(b) + b_->range(b).mag() * a_->grad_bound(b);
    return std::min(widen(Interval(leib)).hi, Node::grad_bound(b));
  }
  Json to_json() const override { return Json{{"op", "mul"}, {"d", d_}, {"a", a_->to_json()}, {"b", b_->to_json()}}; }
  const Expr& lhs() const { return a_; }
  const Expr& rhs() const { return b_; }

 private:
  Expr a_, b_;
};

class QuotientNode final : public Node {
 public:
  QuotientNode(Expr a, Expr b) : Node(a->dim()), a_(std::move(a)), b_(std::move(b)) {
    require(a_->dim() == b_->dim(), "quotient of expressions with different dimensions");
  }
  double value(const double* x) const override { return a_->value(x) / b_->value(x); }
  double value_grad(const double* x, double* g) const override {
    std::array<double, kMaxDim> ga, gb;
    double va = a_->value_grad(x, ga.data()), vb = b_->value_grad(x, gb.data());
    for (int k = 0; k < d_; ++k) g[k] = (ga[k] * vb - va * gb[k]) / (vb * vb);
    return va / vb;
  }
  Interval range(const Box& b) const override { return a_->range(b) / b_->range(b); }
  void grad_range(const Box& b, Interval* out) const override {
    std::array<Interval, kMaxDim> ga, gb;
    a_->grad_range(b, ga.data());
    b_->grad_range(b, gb.data());
    Interval ra = a_->range(b), rb = b_->range(b);
    Interval inv = reciprocal(rb), inv2 = sqr(inv);
    for (int k = 0; k < d_; ++k) out[k] = ga[k] * inv - ra * gb[k] * inv2;
  }
  Json to_json() const override { return Json{{"op", "div"}, {"d", d_}, {"a", a_->to_json()}, {"b", b_->to_json()}}; }
  const Expr& lhs() const { return a_; }
  const Expr& rhs() const { return b_; }

 private:
  Expr a_, b_;
};

// fn(a(x)) for a one-dimensional primitive fn
class ApplyNode final : public Node {
 public:
  ApplyNode(Fn1Ptr fn, Expr a) : Node(a->dim()), fn_(std::move(fn)), a_(std::move(a)) {}
  double value(const double* x) const override { return fn_->f(a_->value(x)); }
  double value_grad(const double* x, double* g) const override {
    double s = a_->value_grad(x, g);
    double fp = fn_->fp(s);
    for (int k = 0; k < d_; ++k) g[k] *= fp;
    return fn_->f(s);
  }
  Interval range(const Box& b) const override { return fn_->range(a_->range(b)); }
  void grad_range(const Box& b, Interval* out) const override {
    Interval dp = fn_->drange(a_->range(b));
    a_->grad_range(b, out);
    for (int k = 0; k < d_; ++k) out[k] = dp * out[k];
  }
  double grad_bound(const Box& b) const override {
    double chain = fn_->drange(a_->range(b)).mag() * a_->grad_bound(b);
    return std::min(widen(Interval(chain)).hi, Node::grad_bound(b));
  }
  Json to_json() const override { return Json{{"op", "apply"}, {"d", d_}, {"fn", fn_->to_json()}, {"a", a_->to_json()}}; }
  const Fn1Ptr& fn() const { return fn_; }
  const Expr& arg() const { return a_; }

 private:
  Fn1Ptr fn_;
  Expr a_;
};

// g(m_1(x), ..., m_k(x)) where g lives on R^k and each m_i on R^d.
class ComposeNode final : public Node {
 public:
  ComposeNode(Expr g, std::vector<Expr> map) : Node(map.at(0)->dim()), g_(std::move(g)), m_(std::move(map)) {
    require(static_cast<int>(m_.size()) == g_->dim(), "composition: map arity does not match outer dimension");
    for (const Expr& e : m_) require(e->dim() == d_, "composition: map components differ in dimension");
  }
  double value(const double* x) const override {
    std::array<double, kMaxDim> y;
    for (size_t i = 0; i < m_.size(); ++i) y[i] = m_[i]->value(x);
    return g_->value(y.data());
  }
  double value_grad(const double* x, double* g) const override {
    const int k = static_cast<int>(m_.size());
    std::array<double, kMaxDim> y, gy;
    std::array<double, kMaxDim * kMaxDim> jac;
    for (int i = 0; i < k; ++i) y[i] = m_[i]->value_grad(x, jac.data() + i * d_);
    double v = g_->value_grad(y.data(), gy.data());
    for (int j = 0; j < d_; ++j) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += gy[i] * jac[i * d_ + j];
      g[j] = s;
    }
    return v;
  }
  Interval range(const Box& b) const override { return g_->range(image_box(b)); }
  void grad_range(const Box& b, Interval* out) const override {
    const int k = static_cast<int>(m_.size());
    std::array<Interval, kMaxDim> gy;
    g_->grad_range(image_box(b), gy.data());
    std::fill(out, out + d_, Interval(0.0));
    std::array<Interval, kMaxDim> jm;
    for (int i = 0; i < k; ++i) {
      m_[i]->grad_range(b, jm.data());
      for (int j = 0; j < d_; ++j) out[j] = out[j] + gy[i] * jm[j];
    }
  }
  Json to_json() const override {
    Json mm = Json::array();
    for (const Expr& e : m_) mm.push_back(e->to_json());
    return Json{{"op", "compose"}, {"d", d_}, {"g", g_->to_json()}, {"map", mm}};
  }

 private:
  Box image_box(const Box& b) const {
    Box r = Box::empty(static_cast<int>(m_.size()));
    for (size_t i = 0; i < m_.size(); ++i) {
      Interval iv = m_[i]->range(b);
      r.lo[i] = iv.lo;
      r.hi[i] = iv.hi;
    }
    return r;
  }
  Expr g_;
  std::vector<Expr> m_;
};

// One axis of a tensor-product cutoff: 0 outside [olo, ohi], 1 on [ilo, ihi],
// cubic smoothstep ramps between.
struct Ramp1 {
  double olo, ilo, ihi, ohi;

  double value(double x) const {
    if (x <= olo || x >= ohi) return 0.0;
    if (x < ilo) return smoothstep((x - olo) / (ilo - olo));
    if (x > ihi) return smoothstep((ohi - x) / (ohi - ihi));
    return 1.0;
  }
  double value_slope(double x, double& dv) const {
    if (x <= olo || x >= ohi) {
      dv = 0.0;
      return 0.0;
    }
    if (x < ilo) {
      double m = ilo - olo, u = (x - olo) / m;
      dv = smoothstep_slope(u) / m;
      return smoothstep(u);
    }
    if (x > ihi) {
      double m = ohi - ihi, u = (ohi - x) / m;
      dv = -smoothstep_slope(u) / m;
      return smoothstep(u);
    }
    dv = 0.0;
    return 1.0;
  }
  Interval range(Interval x) const {
    if (x.hi <= olo || x.lo >= ohi) return 0.0;
    if (x.lo >= ilo && x.hi <= ihi) return 1.0;
    double a = value(x.lo), b = value(x.hi);
    double hi = (x.lo <= ihi && x.hi >= ilo) ? 1.0 : std::max(a, b);
    double lo = std::min(a, b);
    return {std::max(0.0, widen(Interval(lo)).lo), std::min(1.0, widen(Interval(hi)).hi)};
  }
  Interval drange(Interval x) const {
    Interval r(0.0);
    if (x.lo < ilo && x.hi > olo) r = hull(r, Interval(0.0, kSmoothstepSlope / (ilo - olo)));
    if (x.hi > ihi && x.lo < ohi) r = hull(r, Interval(-kSmoothstepSlope / (ohi - ihi), 0.0));
    return widen(r);
  }
  double margin() const { return std::min(ilo - olo, ohi - ihi); }
};

// Tensor-product cutoff: 1 on `inner`, 0 outside `outer`, values in [0,1].
class BumpNode final : public Node {
 public:
  BumpNode(const Box& outer, const Box& inner) : Node(outer.dim()), outer_(outer), inner_(inner) {
    require(inner.dim() == outer.dim(), "bump boxes differ in dimension");
    for (int k = 0; k < d_; ++k) {
      require(inner.lo[k] - outer.lo[k] > 0.0 && outer.hi[k] - inner.hi[k] > 0.0 && inner.lo[k] <= inner.hi[k],
              "bump: inner box must sit strictly inside outer box");
      r_[k] = {outer.lo[k], inner.lo[k], inner.hi[k], outer.hi[k]};
    }
  }
  double value(const double* x) const override {
    double v = 1.0;
    for (int k = 0; k < d_ && v != 0.0; ++k) v *= r_[k].value(x[k]);
    return v;
  }
  double value_grad(const double* x, double* g) const override {
    std::array<double, kMaxDim> v, dv;
    for (int k = 0; k < d_; ++k) v[k] = r_[k].value_slope(x[k], dv[k]);
    double p = 1.0;
    for (int k = 0; k < d_; ++k) {
      double q = dv[k];
      for (int m = 0; m < d_; ++m)
        if (m != k) q *= v[m];
      g[k] = q;
      p *= v[k];
    }
    return p;
  }
  Interval range(const Box& b) const override {
    Interval p(1.0);
    for (int k = 0; k < d_; ++k) p = p * r_[k].range({b.lo[k], b.hi[k]});
    return {std::max(0.0, p.lo), std::min(1.0, p.hi)};
  }
  void grad_range(const Box& b, Interval* out) const override {
    for (int k = 0; k < d_; ++k) {
      Interval q = r_[k].drange({b.lo[k], b.hi[k]});
      for (int m = 0; m < d_; ++m)
        if (m != k) q = q * r_[m].range({b.lo[m], b.hi[m]});
      out[k] = q;
    }
  }
  // closed form: |D chi| <= max_k 1.5 / margin_k
  double grad_bound(const Box& b) const override {
    for (int k = 0; k < d_; ++k)
      if (b.hi[k] <= outer_.lo[k] || b.lo[k] >= outer_.hi[k]) return 0.0;
    return std::min(lipschitz(), Node::grad_bound(b));
  }
  double lipschitz() const {
    double m = 0.0;
    for (int k = 0; k < d_; ++k) m = std::max(m, kSmoothstepSlope / r_[k].margin());
    return widen(Interval(m)).hi;
  }
  Json to_json() const override { return Json{{"op", "bump"}, {"d", d_}, {"outer", box_to_json(outer_)}, {"inner", box_to_json(inner_)}}; }
  const Box& outer() const { return outer_; }
  const Box& inner() const { return inner_; }

 private:
  Box outer_, inner_;
  std::array<Ramp1, kMaxDim> r_{};
};

inline Expr make_const(int d, double c) { return std::make_shared<ConstNode>(d, c); }
inline Expr make_coord(int d, int k) { return std::make_shared<CoordNode>(d, k); }
inline Expr make_affine(Vec g, double c) { return std::make_shared<AffineNode>(std::move(g), c); }
inline Expr make_sum(std::vector<Expr> a) { return std::make_shared<SumNode>(std::move(a)); }
inline Expr make_sum(Expr a, Expr b) { return make_sum(std::vector<Expr>{std::move(a), std::move(b)}); }
inline Expr make_scale(double c, Expr a) { return std::make_shared<ScaleNode>(c, std::move(a)); }
inline Expr make_product(Expr a, Expr b) { return std::make_shared<ProductNode>(std::move(a), std::move(b)); }
inline Expr make_quotient(Expr a, Expr b) { return std::make_shared<QuotientNode>(std::move(a), std::move(b)); }
inline Expr make_apply(Fn1Ptr f, Expr a) { return std::make_shared<ApplyNode>(std::move(f), std::move(a)); }
inline Expr make_sin(Expr a) { return make_apply(std::make_shared<SinFn>(), std::move(a)); }
inline Expr make_cos(Expr a) { return make_apply(std::make_shared<CosFn>(), std::move(a)); }
inline Expr make_exp(Expr a) { return make_apply(std::make_shared<ExpFn>(), std::move(a)); }
inline Expr make_poly(std::vector<double> c, Expr a) { return make_apply(std::make_shared<PolyFn>(std::move(c)), std::move(a)); }
inline Expr make_compose(Expr g, std::vector<Expr> m) { return std::make_shared<ComposeNode>(std::move(g), std::move(m)); }
inline std::shared_ptr<const BumpNode> bump(const Box& outer, const Box& inner) {
  return std::make_shared<BumpNode>(outer, inner);
}

inline double eval(const Expr& e, const Vec& x) { return e->value(x.data()); }
inline Vec grad(const Expr& e, const Vec& x) {
  Vec g(e->dim());
  e->value_grad(x.data(), g.data());
  return g;
}

// Registry so that nodes defined in later headers can be deserialized.
using NodeReader = std::function<Expr(const Json&)>;
inline std::vector<std::pair<std::string, NodeReader>>& node_readers() {
  static std::vector<std::pair<std::string, NodeReader>> r;
  return r;
}
inline void register_node_reader(const std::string& op, NodeReader f) {
  for (auto& [k, v] : node_readers())
    if (k == op) {
      v = std::move(f);
      return;
    }
  node_readers().emplace_back(op, std::move(f));
}

inline Expr expr_from_json(const Json& j) {
  const std::string op = j.at("op").get<std::string>();
  const int d = j.at("d").get<int>();
  auto sub = [&](const char* key) { return expr_from_json(j.at(key)); };
  if (op == "const") return make_const(d, j.at("c").get<double>());
  if (op == "coord") return make_coord(d, j.at("k").get<int>());
  if (op == "affine") return make_affine(j.at("g").get<Vec>(), j.at("c").get<double>());
  if (op == "sum") {
    std::vector<Expr> a;
    for (const Json& e : j.at("args")) a.push_back(expr_from_json(e));
    return make_sum(std::move(a));
  }
  if (op == "scale") return make_scale(j.at("c").get<double>(), sub("a"));
  if (op == "mul") return make_product(sub("a"), sub("b"));
  if (op == "div") return make_quotient(sub("a"), sub("b"));
  if (op == "apply") return make_apply(fn1_from_json(j.at("fn")), sub("a"));
  if (op == "compose") {
    std::vector<Expr> m;
    for (const Json& e : j.at("map")) m.push_back(expr_from_json(e));
    return make_compose(sub("g"), std::move(m));
  }
  if (op == "bump") return bump(box_from_json(j.at("outer")), box_from_json(j.at("inner")));
  for (const auto& [k, f] : node_readers())
    if (k == op) return f(j);
  throw Error("unknown expression node '" + op + "'");
}

// Scalar field: the expression restricted to a support box, identically zero outside.
struct ScalarField {
  Expr expr;
  Box support;

  int dim() const { return expr->dim(); }
  double value(const double* x) const { return support.contains(x) ? expr->value(x) : 0.0; }
  double value_grad(const double* x, double* g) const {
    if (!support.contains(x)) {
      std::fill(g, g + dim(), 0.0);
      return 0.0;
    }
    return expr->value_grad(x, g);
  }
  Json to_json() const { return Json{{"support", box_to_json(support)}, {"expr", expr->to_json()}}; }
  static ScalarField from_json(const Json& j) { return {expr_from_json(j.at("expr")), box_from_json(j.at("support"))}; }
};

inline bool boxes_intersect(const Box& a, const Box& b) {
  for (int k = 0; k < a.dim(); ++k)
    if (a.hi[k] < b.lo[k] || b.hi[k] < a.lo[k]) return false;
  return true;
}

// Certified upper bound for sup |f| over `b`.
inline double sup_certificate(const ScalarField& f, const Box& b) {
  if (!boxes_intersect(b, f.support)) return 0.0;
  return f.expr->range(b.clipped(f.support)).mag();
}
// Certified upper bound for sup |Df| over `b`.
inline double grad_sup_certificate(const ScalarField& f, const Box& b) {
  if (!boxes_intersect(b, f.support)) return 0.0;
  return f.expr->grad_bound(b.clipped(f.support));
}

// V(x) = sum_i s_i(x) dir_i
struct VectorField {
  struct Term {
    ScalarField scalar;
    Vec direction;
  };
  int d = 0;
  std::vector<Term> terms;

  void value(const double* x, double* out) const {
    std::fill(out, out + d, 0.0);
    for (const Term& t : terms) {
      double s = t.scalar.value(x);
      if (s != 0.0)
        for (int k = 0; k < d; ++k) out[k] += s * t.direction[k];
    }
  }
  // row-major Jacobian J[i*d+k] = d V_i / d x_k
  void jacobian(const double* x, double* jac) const {
    std::fill(jac, jac + d * d, 0.0);
    std::array<double, kMaxDim> g;
    for (const Term& t : terms) {
      t.scalar.value_grad(x, g.data());
      for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) jac[i * d + k] += t.direction[i] * g[k];
    }
  }
  double divergence(const double* x) const {
    std::array<double, kMaxDim> g;
    double s = 0.0;
    for (const Term& t : terms) {
      t.scalar.value_grad(x, g.data());
      s += dot(t.direction.data(), g.data(), d);
    }
    return s;
  }
  Json to_json() const {
    Json ts = Json::array();
    for (const Term& t : terms) ts.push_back({{"direction", t.direction}, {"field", t.scalar.to_json()}});
    return Json{{"d", d}, {"terms", ts}};
  }
  static VectorField from_json(const Json& j) {
    VectorField v;
    v.d = j.at("d").get<int>();
    for (const Json& t : j.at("terms")) v.terms.push_back({ScalarField::from_json(t.at("field")), t.at("direction").get<Vec>()});
    return v;
  }
};

// Phi = Id + displacement
struct MapField {
  VectorField displacement;

  int dim() const { return displacement.d; }
  void value(const double* x, double* out) const {
    displacement.value(x, out);
    for (int k = 0; k < dim(); ++k) out[k] += x[k];
  }
  void jacobian(const double* x, double* jac) const {
    displacement.jacobian(x, jac);
    for (int k = 0; k < dim(); ++k) jac[k * dim() + k] += 1.0;
  }
};

}  // namespace lusin
