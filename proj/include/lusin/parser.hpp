#pragma once

#include <cctype>
#include <string>

#include "lusin/expr.hpp"

namespace lusin {

struct ParseError : Error {
  size_t position;
  ParseError(size_t pos, const std::string& msg)
      : Error("parse error at position " + std::to_string(pos) + ": " + msg), position(pos) {}
};

// Grammar:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('+' | '-') unary | primary
//   primary := number | 'x' index | func '(' expr ')' | '(' expr ')'
//   func    := 'sin' | 'cos' | 'exp'
// Coordinates are x1..xd (1-based).
class Parser {
 public:
  Parser(std::string src, int d) : s_(std::move(src)), d_(d) {}

  Expr parse() {
    Expr e = expr();
    skip();
    if (p_ != s_.size()) throw ParseError(p_, std::string("unexpected '") + s_[p_] + "'");
    return e;
  }

 private:
  void skip() {
    while (p_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[p_]))) ++p_;
  }
  bool eat(char c) {
    skip();
    if (p_ < s_.size() && s_[p_] == c) {
      ++p_;
      return true;
    }
    return false;
  }

  Expr expr() {
    Expr e = term();
    for (;;) {
      if (eat('+')) e = make_sum(e, term());
      else if (eat('-')) e = make_sum(e, make_scale(-1.0, term()));
      else return e;
    }
  }
  Expr term() {
    Expr e = unary();
    for (;;) {
      if (eat('*')) e = multiply(e, unary());
      else if (eat('/')) e = make_quotient(e, unary());
      else return e;
    }
  }
  static Expr multiply(const Expr& a, const Expr& b) {
    if (auto c = std::dynamic_pointer_cast<const ConstNode>(a)) return make_scale(c->constant(), b);
    if (auto c = std::dynamic_pointer_cast<const ConstNode>(b)) return make_scale(c->constant(), a);
    return make_product(a, b);
  }
  Expr unary() {
    if (eat('-')) {
      Expr e = unary();
      if (auto c = std::dynamic_pointer_cast<const ConstNode>(e)) return make_const(d_, -c->constant());
      return make_scale(-1.0, e);
    }
    if (eat('+')) return unary();
    return primary();
  }
  Expr primary() {
    skip();
    if (p_ >= s_.size()) throw ParseError(p_, "unexpected end of expression");
    const size_t start = p_;
    char c = s_[p_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* b = s_.c_str() + p_;
      char* end = nullptr;
      double v = std::strtod(b, &end);
      if (end == b) throw ParseError(start, "malformed number");
      p_ += static_cast<size_t>(end - b);
      return make_const(d_, v);
    }
    if (eat('(')) {
      Expr e = expr();
      if (!eat(')')) throw ParseError(p_, "expected ')'");
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t q = p_;
      while (q < s_.size() && std::isalnum(static_cast<unsigned char>(s_[q]))) ++q;
      std::string word = s_.substr(p_, q - p_);
      if (word == "sin" || word == "cos" || word == "exp") {
        p_ = q;
        if (!eat('(')) throw ParseError(p_, "expected '(' after " + word);
        Expr a = expr();
        if (!eat(')')) throw ParseError(p_, "expected ')'");
        if (word == "sin") return make_sin(a);
        if (word == "cos") return make_cos(a);
        return make_exp(a);
      }
      if (word.size() >= 2 && word[0] == 'x' &&
          std::all_of(word.begin() + 1, word.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
        int k = std::stoi(word.substr(1));
        if (k < 1 || k > d_)
          throw ParseError(start, "coordinate '" + word + "' out of range for dimension " + std::to_string(d_));
        p_ = q;
        return make_coord(d_, k - 1);
      }
      throw ParseError(start, "unknown symbol '" + word + "'");
    }
    throw ParseError(start, std::string("unexpected '") + c + "'");
  }

  std::string s_;
  int d_;
  size_t p_ = 0;
};

inline Expr parse_expr(const std::string& src, int d) { return Parser(src, d).parse(); }

}  // namespace lusin
