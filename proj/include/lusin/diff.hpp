#pragma once

#include "lusin/expr.hpp"

namespace lusin {

namespace detail {

inline bool is_zero(const Expr& e) {
  auto c = std::dynamic_pointer_cast<const ConstNode>(e);
  return c && c->constant() == 0.0;
}
inline Expr add(const Expr& a, const Expr& b) {
  if (is_zero(a)) return b;
  if (is_zero(b)) return a;
  return make_sum(a, b);
}
inline Expr mul(const Expr& a, const Expr& b) {
  if (is_zero(a) || is_zero(b)) return make_const(a->dim(), 0.0);
  return make_product(a, b);
}

}  // namespace detail

// Symbolic partial derivative d/dx_k for the node types the parser emits,
// plus affine maps and polynomials.
inline Expr differentiate(const Expr& e, int k) {
  const int d = e->dim();
  require(k >= 0 && k < d, "differentiate: coordinate out of range");
  auto zero = [&] { return make_const(d, 0.0); };
  if (std::dynamic_pointer_cast<const ConstNode>(e)) return zero();
  if (auto c = std::dynamic_pointer_cast<const CoordNode>(e)) return make_const(d, c->index() == k ? 1.0 : 0.0);
  if (auto a = std::dynamic_pointer_cast<const AffineNode>(e)) return make_const(d, a->gradient()[k]);
  if (auto s = std::dynamic_pointer_cast<const SumNode>(e)) {
    Expr out = zero();
    for (const Expr& t : s->args()) out = detail::add(out, differentiate(t, k));
    return out;
  }
  if (auto s = std::dynamic_pointer_cast<const ScaleNode>(e)) {
    Expr da = differentiate(s->arg(), k);
    return detail::is_zero(da) ? da : make_scale(s->factor(), da);
  }
  if (auto p = std::dynamic_pointer_cast<const ProductNode>(e))
    return detail::add(detail::mul(differentiate(p->lhs(), k), p->rhs()), detail::mul(p->lhs(), differentiate(p->rhs(), k)));
  if (auto q = std::dynamic_pointer_cast<const QuotientNode>(e)) {
    // (a'b - ab') / b^2
    Expr num = detail::add(detail::mul(differentiate(q->lhs(), k), q->rhs()),
                           make_scale(-1.0, detail::mul(q->lhs(), differentiate(q->rhs(), k))));
    return detail::is_zero(num) ? num : make_quotient(num, make_product(q->rhs(), q->rhs()));
  }
  if (auto a = std::dynamic_pointer_cast<const ApplyNode>(e)) {
    Expr da = differentiate(a->arg(), k);
    if (detail::is_zero(da)) return da;
    const Fn1* f = a->fn().get();
    Expr outer;
    if (dynamic_cast<const SinFn*>(f)) outer = make_cos(a->arg());
    else if (dynamic_cast<const CosFn*>(f)) outer = make_scale(-1.0, make_sin(a->arg()));
    else if (dynamic_cast<const ExpFn*>(f)) outer = e;
    else if (auto p = dynamic_cast<const PolyFn*>(f)) {
      const auto& c = p->coefficients();
      std::vector<double> dc;
      for (size_t i = 1; i < c.size(); ++i) dc.push_back(static_cast<double>(i) * c[i]);
      if (dc.empty()) return zero();
      outer = make_poly(dc, a->arg());
    } else {
      throw Error("differentiate: unsupported primitive " + f->to_json().dump());
    }
    return detail::mul(outer, da);
  }
  throw Error("differentiate: unsupported node " + e->to_json().at("op").get<std::string>());
}

// sum_i dir_i . grad s_i for a field whose scalars carry no support cutoff inside Omega
inline Expr divergence_expr(const VectorField& W) {
  require(!W.terms.empty(), "divergence_expr: empty field");
  Expr out = make_const(W.d, 0.0);
  for (const auto& t : W.terms)
    for (int k = 0; k < W.d; ++k)
      if (t.direction[k] != 0.0) {
        Expr dk = differentiate(t.scalar.expr, k);
        if (!detail::is_zero(dk)) out = detail::add(out, t.direction[k] == 1.0 ? dk : make_scale(t.direction[k], dk));
      }
  return out;
}

}  // namespace lusin
