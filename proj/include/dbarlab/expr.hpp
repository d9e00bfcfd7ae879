#ifndef DBARLAB_EXPR_HPP
#define DBARLAB_EXPR_HPP

/* Closed-form coefficient expressions over complex variables z1..zn and real
   parameters t1..tm.  Functions: conj, re, im, exp, abs2, sqrt, pow(expr, int),
   powr(expr, real) = exp(real*log(expr)) with the principal branch.
   Operations: + - * / and unary minus; precedence pow > unary- > * / > + -.
   The printer emits a fully parenthesized canonical form whose re-parse is
   structurally identical (round-trip property). */

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbarlab/dual.hpp"

namespace dbarlab {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind {
    Const, VarZ, VarT, Neg, Add, Sub, Mul, Div, Conj, Re, Im, Exp, Abs2, Sqrt, Pow, PowR
  };
  Kind kind = Kind::Const;
  cdouble cval{};     // Const
  int index = 0;      // VarZ/VarT (0-based)
  int ipow = 0;       // Pow exponent
  double rexp = 0.0;  // PowR exponent
  ExprPtr a, b;
};

struct ExprError : std::runtime_error {
  std::size_t offset;
  ExprError(std::size_t off, const std::string& msg)
      : std::runtime_error(msg + " (byte " + std::to_string(off) + ")"), offset(off) {}
};

ExprPtr expr_const(cdouble c);
ExprPtr expr_var_z(int idx);
ExprPtr expr_var_t(int idx);

// throws ExprError with byte offset on malformed input
ExprPtr parse_expr(const std::string& text);

std::string print_expr(const ExprPtr& e);

bool expr_equal(const ExprPtr& a, const ExprPtr& b);

// largest z/t indices referenced (0 if none); for config validation
void expr_var_extent(const ExprPtr& e, int& max_z, int& max_t);

template <class S>
S eval_expr(const Expr& e, const S* z, const S* t) {
  using K = Expr::Kind;
  switch (e.kind) {
    case K::Const: return S(e.cval);
    case K::VarZ:  return z[e.index];
    case K::VarT:  return t[e.index];
    case K::Neg:   return -eval_expr(*e.a, z, t);
    case K::Add:   return eval_expr(*e.a, z, t) + eval_expr(*e.b, z, t);
    case K::Sub:   return eval_expr(*e.a, z, t) - eval_expr(*e.b, z, t);
    case K::Mul:   return eval_expr(*e.a, z, t) * eval_expr(*e.b, z, t);
    case K::Div:   return eval_expr(*e.a, z, t) / eval_expr(*e.b, z, t);
    case K::Conj:  return conj_s(eval_expr(*e.a, z, t));
    case K::Re:    return re_s(eval_expr(*e.a, z, t));
    case K::Im:    return im_s(eval_expr(*e.a, z, t));
    case K::Exp:   return exp_s(eval_expr(*e.a, z, t));
    case K::Abs2:  return abs2_s(eval_expr(*e.a, z, t));
    case K::Sqrt:  return sqrt_s(eval_expr(*e.a, z, t));
    case K::Pow:   return pow_int(eval_expr(*e.a, z, t), e.ipow);
    case K::PowR:  return exp_s(S(e.rexp) * log_s(eval_expr(*e.a, z, t)));
  }
  return S(0.0);
}

}  // namespace dbarlab

#endif
