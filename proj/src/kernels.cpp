#include "dbarlab/kernels.hpp"

#include <json.hpp>

namespace dbarlab {

std::string kernel_family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::Omega0: return "Omega0";
    case KernelFamily::Omega1: return "Omega1";
    case KernelFamily::Omega01: return "Omega01";
  }
  return "?";
}

KernelComponent kernel_component(KernelFamily family, int n, int q) {
  KernelComponent c;
  c.family = family;
  c.n = n;
  c.q = q;
  c.zeta_p = n;
  c.zeta_pbar = (family == KernelFamily::Omega01) ? n - 2 - q : n - 1 - q;
  c.zero = (q < 0) || (c.zeta_pbar < 0);
  if (!c.zero) {
    if (family == KernelFamily::Omega01) {
      for (int a = 0; a + 2 <= n; ++a) c.denom_powers.push_back({a + 1, n - 1 - a});
    } else if (family == KernelFamily::Omega0) {
      c.denom_powers.push_back({n, 0});
    } else {
      c.denom_powers.push_back({0, n});
    }
  }
  return c;
}

Form<cdouble> prune_form(const Form<cdouble>& f, double tol) {
  Form<cdouble> r(f.n);
  for (const auto& [m, c] : f.terms)
    if (std::abs(c) > tol) r.terms.push_back({m, c});
  return r;
}

std::vector<std::string> generator_names(Mask m, int n) {
  std::vector<std::string> names;
  auto emit = [&](Mask group, int base, const char* tag) {
    for (int j = 0; j < n; ++j)
      if (m & (Mask(1) << (base + j))) names.push_back(std::string(tag) + std::to_string(j + 1));
    (void)group;
  };
  emit(group_dz(n), 0, "dz_");
  emit(group_dzbar(n), n, "dzbar_");
  emit(group_dzeta(n), 2 * n, "dzeta_");
  emit(group_dzetabar(n), 3 * n, "dzetabar_");
  return names;
}

std::string form_dump_json(const Form<cdouble>& f, int n, double tol) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [m, c] : f.terms) {
    if (tol > 0.0 && std::abs(c) <= tol) continue;
    nlohmann::json t;
    t["gens"] = generator_names(m, n);
    t["re"] = c.real();
    t["im"] = c.imag();
    t["deg"] = {{"dz", deg_dz(m, n)},
                {"dzbar", deg_dzbar(m, n)},
                {"dzeta", deg_dzeta(m, n)},
                {"dzetabar", deg_dzetabar(m, n)}};
    terms.push_back(std::move(t));
  }
  nlohmann::json out;
  out["n"] = n;
  out["terms"] = std::move(terms);
  return out.dump(2);
}

}  // namespace dbarlab
