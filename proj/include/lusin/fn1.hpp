#pragma once

#include <memory>

#include "lusin/interval.hpp"
#include "json.hpp"

namespace lusin {

using Json = nlohmann::ordered_json;

inline double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }
inline double smoothstep_slope(double u) { return 6.0 * u * (1.0 - u); }
inline constexpr double kSmoothstepSlope = 1.5;

// One-dimensional C^1 primitive applied to a scalar expression.
class Fn1 {
 public:
  virtual ~Fn1() = default;
  virtual double f(double s) const = 0;
  virtual double fp(double s) const = 0;
  virtual Interval range(Interval s) const = 0;
  virtual Interval drange(Interval s) const = 0;
  virtual Json to_json() const = 0;
};
using Fn1Ptr = std::shared_ptr<const Fn1>;

class SinFn final : public Fn1 {
 public:
  double f(double s) const override { return std::sin(s); }
  double fp(double s) const override { return std::cos(s); }
  Interval range(Interval s) const override { return isin(s); }
  Interval drange(Interval s) const override { return icos(s); }
  Json to_json() const override { return {{"fn", "sin"}}; }
};

class CosFn final : public Fn1 {
 public:
  double f(double s) const override { return std::cos(s); }
  double fp(double s) const override { return -std::sin(s); }
  Interval range(Interval s) const override { return icos(s); }
  Interval drange(Interval s) const override { return -isin(s); }
  Json to_json() const override { return {{"fn", "cos"}}; }
};

class ExpFn final : public Fn1 {
 public:
  double f(double s) const override { return std::exp(s); }
  double fp(double s) const override { return std::exp(s); }
  Interval range(Interval s) const override { return iexp(s); }
  Interval drange(Interval s) const override { return iexp(s); }
  Json to_json() const override { return {{"fn", "exp"}}; }
};

// sum_i c_i s^i
class PolyFn final : public Fn1 {
 public:
  explicit PolyFn(std::vector<double> c) : c_(std::move(c)) { require(!c_.empty(), "empty polynomial"); }
  double f(double s) const override {
    double v = 0.0;
    for (size_t i = c_.size(); i-- > 0;) v = v * s + c_[i];
    return v;
  }
  double fp(double s) const override {
    double v = 0.0;
    for (size_t i = c_.size(); i-- > 1;) v = v * s + static_cast<double>(i) * c_[i];
    return v;
  }
  Interval range(Interval s) const override {
    Interval v(0.0);
    for (size_t i = c_.size(); i-- > 0;) v = v * s + Interval(c_[i]);
    return v;
  }
  Interval drange(Interval s) const override {
    Interval v(0.0);
    for (size_t i = c_.size(); i-- > 1;) v = v * s + Interval(static_cast<double>(i) * c_[i]);
    return v;
  }
  Json to_json() const override { return {{"fn", "poly"}, {"c", c_}}; }
  const std::vector<double>& coefficients() const { return c_; }

 private:
  std::vector<double> c_;
};

// Identity on [-m, m]; beyond, the excess x is replaced by w*sigma(x/w) with
// sigma(u) = u - u^2/2 on [0,1] and 1/2 after, so the output never leaves
// [-m - w/2, m + w/2].
class SmoothClampFn final : public Fn1 {
 public:
  SmoothClampFn(double m, double w) : m_(m), w_(w) {
    require(m >= 0.0 && w > 0.0 && std::isfinite(m) && std::isfinite(w), "smooth clamp needs m >= 0, w > 0");
  }
  double f(double s) const override {
    if (s > m_) return m_ + w_ * sigma((s - m_) / w_);
    if (s < -m_) return -m_ - w_ * sigma((-s - m_) / w_);
    return s;
  }
  double fp(double s) const override {
    double e = std::abs(s) - m_;
    if (e <= 0.0) return 1.0;
    double u = e / w_;
    return u >= 1.0 ? 0.0 : 1.0 - u;
  }
  Interval range(Interval s) const override { return widen({f(s.lo), f(s.hi)}); }
  Interval drange(Interval s) const override {
    double a = fp(s.lo), b = fp(s.hi);
    double hi = (s.lo <= m_ && s.hi >= -m_) ? 1.0 : std::max(a, b);
    return {std::min(a, b), hi};
  }
  Json to_json() const override { return {{"fn", "clamp"}, {"m", m_}, {"w", w_}}; }
  double level() const { return m_; }
  double width() const { return w_; }
  double sup() const { return m_ + 0.5 * w_; }

 private:
  static double sigma(double u) { return u >= 1.0 ? 0.5 : u - 0.5 * u * u; }
  double m_, w_;
};

// Nondecreasing function whose slope is 1 on a union of disjoint intervals
// [l_k, r_k], falls to 0 through cubic smoothstep ramps of width wl_k / wr_k,
// and is 0 elsewhere. The value is the integral of the slope from -infinity.
class PlateauFn final : public Fn1 {
 public:
  struct Piece {
    double l, r, wl, wr;
  };

  explicit PlateauFn(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
    require(!pieces_.empty(), "plateau profile needs at least one interval");
    double prev = -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (const Piece& p : pieces_) {
      require(p.l <= p.r && p.wl > 0.0 && p.wr > 0.0, "plateau interval malformed");
      require(p.l - p.wl >= prev, "plateau ramps overlap");
      prev = p.r + p.wr;
      base_.push_back(acc);
      acc += (p.r - p.l) + 0.5 * (p.wl + p.wr);
    }
    rise_ = acc;
    rise_ = std::max(acc, f(pieces_.back().r + pieces_.back().wr));
  }

  double rise() const { return rise_; }
  const std::vector<Piece>& pieces() const { return pieces_; }

  double f(double s) const override {
    size_t k = locate(s);
    if (k == npos) return 0.0;
    const Piece& p = pieces_[k];
    double v = base_[k];
    // plateau first: ramps narrower than an ulp must not shadow it
    if (s >= p.l && s <= p.r) return v + 0.5 * p.wl + (s - p.l);
    double a = p.l - p.wl;
    if (s <= a) return v;
    if (s < p.l) {
      double u = (s - a) / p.wl;
      return v + p.wl * (u * u * u - 0.5 * u * u * u * u);
    }
    v += 0.5 * p.wl;
    if (s <= p.r) return v + (s - p.l);
    v += p.r - p.l;
    if (s < p.r + p.wr) {
      double u = (s - p.r) / p.wr;
      return v + p.wr * (u - u * u * u + 0.5 * u * u * u * u);
    }
    return v + 0.5 * p.wr;
  }

  double fp(double s) const override {
    size_t k = locate(s);
    if (k == npos) return 0.0;
    const Piece& p = pieces_[k];
    if (s >= p.l && s <= p.r) return 1.0;
    double a = p.l - p.wl;
    if (s <= a) return 0.0;
    if (s < p.l) return smoothstep((s - a) / p.wl);
    if (s <= p.r) return 1.0;
    if (s < p.r + p.wr) return 1.0 - smoothstep((s - p.r) / p.wr);
    return 0.0;
  }

  Interval range(Interval s) const override {
    Interval r = widen({f(s.lo), f(s.hi)});
    return {std::max(0.0, r.lo), std::min(rise_, r.hi)};
  }
  Interval drange(Interval s) const override {
    // slope is 0 on gaps and 1 on plateaus; anything touching a ramp gets [0,1]
    size_t ka = locate(s.lo), kb = locate(s.hi);
    if (ka != kb) return {0.0, 1.0};
    if (ka == npos) return {0.0, 0.0};
    const Piece& p = pieces_[ka];
    if (s.lo >= p.l && s.hi <= p.r) return {1.0, 1.0};
    if (s.lo >= p.r + p.wr || s.hi <= p.l - p.wl) return {0.0, 0.0};
    return {0.0, 1.0};
  }

  Json to_json() const override {
    Json ps = Json::array();
    for (const Piece& p : pieces_) ps.push_back({p.l, p.r, p.wl, p.wr});
    return {{"fn", "plateau"}, {"pieces", ps}};
  }

 private:
  static constexpr size_t npos = static_cast<size_t>(-1);
  // index of the last piece whose left ramp starts at or before s
  size_t locate(double s) const {
    auto it = std::upper_bound(pieces_.begin(), pieces_.end(), s,
                               [](double v, const Piece& p) { return v < p.l - p.wl; });
    if (it == pieces_.begin()) return npos;
    return static_cast<size_t>(it - pieces_.begin()) - 1;
  }

  std::vector<Piece> pieces_;
  std::vector<double> base_;
  double rise_ = 0.0;
};

// Single slope-1 interval [-plateau, plateau] with ramps of width `transition`.
inline std::shared_ptr<const PlateauFn> plateau_profile(double zeta, double plateau, double transition) {
  require(zeta > 0.0 && plateau > 0.0 && transition > 0.0, "plateau_profile needs positive parameters");
  require(2.0 * plateau + transition <= zeta, "plateau_profile: total rise exceeds zeta");
  return std::make_shared<PlateauFn>(std::vector<PlateauFn::Piece>{{-plateau, plateau, transition, transition}});
}
inline std::shared_ptr<const PlateauFn> plateau_profile(double zeta) {
  return plateau_profile(zeta, zeta / 4.0, zeta / 4.0);
}

inline Fn1Ptr fn1_from_json(const Json& j) {
  const std::string fn = j.at("fn").get<std::string>();
  if (fn == "sin") return std::make_shared<SinFn>();
  if (fn == "cos") return std::make_shared<CosFn>();
  if (fn == "exp") return std::make_shared<ExpFn>();
  if (fn == "poly") return std::make_shared<PolyFn>(j.at("c").get<std::vector<double>>());
  if (fn == "clamp") return std::make_shared<SmoothClampFn>(j.at("m").get<double>(), j.at("w").get<double>());
  if (fn == "plateau") {
    std::vector<PlateauFn::Piece> ps;
    for (const Json& p : j.at("pieces")) ps.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>()});
    return std::make_shared<PlateauFn>(std::move(ps));
  }
  throw Error("unknown 1d primitive '" + fn + "'");
}

}  // namespace lusin
