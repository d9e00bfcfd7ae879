#include "dbarlab/expr.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>

namespace dbarlab {

ExprPtr expr_const(cdouble c) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Const;
  e->cval = c;
  return e;
}
ExprPtr expr_var_z(int idx) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::VarZ;
  e->index = idx;
  return e;
}
ExprPtr expr_var_t(int idx) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::VarT;
  e->index = idx;
  return e;
}

namespace {

ExprPtr make1(Expr::Kind k, ExprPtr a) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->a = std::move(a);
  return e;
}
ExprPtr make2(Expr::Kind k, ExprPtr a, ExprPtr b) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->a = std::move(a);
  e->b = std::move(b);
  return e;
}

struct Parser {
  const std::string& s;
  std::size_t pos = 0;

  explicit Parser(const std::string& text) : s(text) {}

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) { ++pos; return true; }
    return false;
  }
  void expect(char c, const char* what) {
    if (!eat(c)) throw ExprError(pos, std::string("expected '") + c + "' " + what);
  }

  ExprPtr parse_full() {
    ExprPtr e = parse_sum();
    skip_ws();
    if (pos != s.size()) throw ExprError(pos, "trailing input");
    return e;
  }

  ExprPtr parse_sum() {
    ExprPtr e = parse_product();
    for (;;) {
      skip_ws();
      if (eat('+')) e = make2(Expr::Kind::Add, e, parse_product());
      else if (eat('-')) e = make2(Expr::Kind::Sub, e, parse_product());
      else return e;
    }
  }

  ExprPtr parse_product() {
    ExprPtr e = parse_unary();
    for (;;) {
      skip_ws();
      if (eat('*')) e = make2(Expr::Kind::Mul, e, parse_unary());
      else if (eat('/')) e = make2(Expr::Kind::Div, e, parse_unary());
      else return e;
    }
  }

  ExprPtr parse_unary() {
    skip_ws();
    if (eat('-')) return make1(Expr::Kind::Neg, parse_unary());
    return parse_primary();
  }

  ExprPtr parse_primary() {
    skip_ws();
    if (pos >= s.size()) throw ExprError(pos, "unexpected end of input");
    char c = s[pos];
    if (c == '(') {
      ++pos;
      ExprPtr e = parse_sum();
      expect(')', "to close group");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    throw ExprError(pos, std::string("unexpected character '") + c + "'");
  }

  ExprPtr parse_number() {
    std::size_t start = pos;
    while (pos < s.size() &&
           (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.')) ++pos;
    if (pos < s.size() && (s[pos] == 'e' || s[pos] == 'E')) {
      std::size_t epos = pos + 1;
      if (epos < s.size() && (s[epos] == '+' || s[epos] == '-')) ++epos;
      if (epos < s.size() && std::isdigit(static_cast<unsigned char>(s[epos]))) {
        pos = epos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      }
    }
    std::string num = s.substr(start, pos - start);
    char* end = nullptr;
    double v = std::strtod(num.c_str(), &end);
    if (end == num.c_str() || *end != '\0') throw ExprError(start, "malformed number");
    if (pos < s.size() && s[pos] == 'i') {
      ++pos;
      return expr_const(cdouble(0.0, v));
    }
    return expr_const(cdouble(v, 0.0));
  }

  ExprPtr parse_ident() {
    std::size_t start = pos;
    while (pos < s.size() &&
           (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
    std::string id = s.substr(start, pos - start);
    if (id == "i") return expr_const(cdouble(0.0, 1.0));
    if (id == "pi") return expr_const(cdouble(3.14159265358979323846, 0.0));
    static const struct { const char* name; Expr::Kind kind; } funcs[] = {
        {"conj", Expr::Kind::Conj}, {"re", Expr::Kind::Re},     {"im", Expr::Kind::Im},
        {"exp", Expr::Kind::Exp},   {"abs2", Expr::Kind::Abs2}, {"sqrt", Expr::Kind::Sqrt}};
    for (const auto& f : funcs)
      if (id == f.name) {
        expect('(', "after function name");
        ExprPtr a = parse_sum();
        expect(')', "to close argument list");
        return make1(f.kind, a);
      }
    if (id == "pow") {
      expect('(', "after function name");
      ExprPtr a = parse_sum();
      expect(',', "between pow arguments");
      skip_ws();
      std::size_t ip = pos;
      bool neg = eat('-');
      skip_ws();
      std::size_t dstart = pos;
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      if (pos == dstart) throw ExprError(ip, "pow exponent must be an integer literal");
      int k = std::stoi(s.substr(dstart, pos - dstart));
      expect(')', "to close argument list");
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Pow;
      e->a = std::move(a);
      e->ipow = neg ? -k : k;
      return e;
    }
    if (id == "powr") {
      expect('(', "after function name");
      ExprPtr a = parse_sum();
      expect(',', "between powr arguments");
      skip_ws();
      std::size_t ip = pos;
      bool neg = eat('-');
      skip_ws();
      std::size_t dstart = pos;
      while (pos < s.size() &&
             (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.' ||
              s[pos] == 'e' || s[pos] == 'E' ||
              ((s[pos] == '+' || s[pos] == '-') && pos > dstart &&
               (s[pos - 1] == 'e' || s[pos - 1] == 'E'))))
        ++pos;
      if (pos == dstart) throw ExprError(ip, "powr exponent must be a real literal");
      double k = 0.0;
      try {
        k = std::stod(s.substr(dstart, pos - dstart));
      } catch (const std::exception&) {
        throw ExprError(ip, "powr exponent must be a real literal");
      }
      expect(')', "to close argument list");
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::PowR;
      e->a = std::move(a);
      e->rexp = neg ? -k : k;
      return e;
    }
    if ((id[0] == 'z' || id[0] == 't') && id.size() > 1) {
      bool digits = true;
      for (std::size_t k = 1; k < id.size(); ++k)
        if (!std::isdigit(static_cast<unsigned char>(id[k]))) digits = false;
      if (digits) {
        int idx = std::stoi(id.substr(1));
        if (idx < 1) throw ExprError(start, "variable indices start at 1");
        return id[0] == 'z' ? expr_var_z(idx - 1) : expr_var_t(idx - 1);
      }
    }
    throw ExprError(start, "unknown identifier '" + id + "'");
  }
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ExprPtr parse_expr(const std::string& text) {
  Parser p(text);
  return p.parse_full();
}

std::string print_expr(const ExprPtr& e) {
  using K = Expr::Kind;
  switch (e->kind) {
    case K::Const: {
      double re = e->cval.real(), im = e->cval.imag();
      if (im == 0.0) return re < 0.0 ? "(" + fmt_double(re) + ")" : fmt_double(re);
      if (re == 0.0) {
        std::string s = fmt_double(im) + "i";
        return im < 0.0 ? "(" + s + ")" : s;
      }
      return "(" + fmt_double(re) + "+" + fmt_double(im) + "i)";
    }
    case K::VarZ: return "z" + std::to_string(e->index + 1);
    case K::VarT: return "t" + std::to_string(e->index + 1);
    case K::Neg:  return "(-" + print_expr(e->a) + ")";
    case K::Add:  return "(" + print_expr(e->a) + "+" + print_expr(e->b) + ")";
    case K::Sub:  return "(" + print_expr(e->a) + "-" + print_expr(e->b) + ")";
    case K::Mul:  return "(" + print_expr(e->a) + "*" + print_expr(e->b) + ")";
    case K::Div:  return "(" + print_expr(e->a) + "/" + print_expr(e->b) + ")";
    case K::Conj: return "conj(" + print_expr(e->a) + ")";
    case K::Re:   return "re(" + print_expr(e->a) + ")";
    case K::Im:   return "im(" + print_expr(e->a) + ")";
    case K::Exp:  return "exp(" + print_expr(e->a) + ")";
    case K::Abs2: return "abs2(" + print_expr(e->a) + ")";
    case K::Sqrt: return "sqrt(" + print_expr(e->a) + ")";
    case K::Pow:  return "pow(" + print_expr(e->a) + "," + std::to_string(e->ipow) + ")";
    case K::PowR: return "powr(" + print_expr(e->a) + "," + fmt_double(e->rexp) + ")";
  }
  return "";
}

bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (!a || !b) return a == b;
  if (a->kind != b->kind) return false;
  using K = Expr::Kind;
  switch (a->kind) {
    case K::Const: return a->cval == b->cval;
    case K::VarZ:
    case K::VarT:  return a->index == b->index;
    case K::Pow:   return a->ipow == b->ipow && expr_equal(a->a, b->a);
    case K::PowR:  return a->rexp == b->rexp && expr_equal(a->a, b->a);
    case K::Neg:
    case K::Conj:
    case K::Re:
    case K::Im:
    case K::Exp:
    case K::Abs2:
    case K::Sqrt:  return expr_equal(a->a, b->a);
    default:       return expr_equal(a->a, b->a) && expr_equal(a->b, b->b);
  }
}

void expr_var_extent(const ExprPtr& e, int& max_z, int& max_t) {
  if (!e) return;
  if (e->kind == Expr::Kind::VarZ) max_z = std::max(max_z, e->index + 1);
  if (e->kind == Expr::Kind::VarT) max_t = std::max(max_t, e->index + 1);
  expr_var_extent(e->a, max_z, max_t);
  expr_var_extent(e->b, max_z, max_t);
}

}  // namespace dbarlab
