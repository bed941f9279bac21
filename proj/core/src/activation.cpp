#include "tslab/activation.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "tslab/io.hpp"

namespace tslab {

namespace {

// tanh(u) rounds to +-1 in double beyond |u| = 20; past that point sech^2 is
// evaluated in exponential form so it underflows instead of producing inf*0.
constexpr double kSaturation = 20.0;

// exp(t) below this is zero against every term it multiplies here.
constexpr double kNegligibleExponent = -50.0;

void require_finite(double x) {
  if (!std::isfinite(x)) throw std::domain_error("activation input must be finite");
}

// ln(delta + e^x) without overflow; exact x when delta = 0.
double softplus_delta(double x, double delta) {
  if (delta == 0.0) return x;
  if (x > 0.0) return x + std::log1p(delta * std::exp(-x));
  return std::log(delta + std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// The family math lives here so the scalar ops and the tensor maps share one
// bit-exact code path, with no per-element revalidation.
struct FamilyKernel {
  double alpha, beta, gamma, delta;

  explicit FamilyKernel(const Hyperparams& h)
      : alpha(h.alpha), beta(h.beta), gamma(h.gamma), delta(h.delta) {}

  // u = alpha*x + beta*e^(gamma*x); beta = 0 short-circuits so an overflowed
  // exp never meets the zero coefficient.
  double arg(double x, double& exp_gx) const {
    if (beta == 0.0) {
      exp_gx = 0.0;
      return alpha * x;
    }
    exp_gx = std::exp(gamma * x);
    return alpha * x + beta * exp_gx;
  }

  // ln(delta + e^x) and e^x/(delta + e^x) from one shared exponential.
  void softplus_and_gate(double x, double& s, double& sig) const {
    if (delta == 0.0) {
      s = x;
      sig = 1.0;
      return;
    }
    if (x > 0.0) {
      double demx = delta * std::exp(-x);  // may round to inf; limits are correct
      s = x + std::log1p(demx);
      sig = 1.0 / (1.0 + demx);
      return;
    }
    double ex = std::exp(x);
    s = std::log(delta + ex);
    sig = ex / (delta + ex);
  }

  // tanh(u) = sign(u) (1-e)/(1+e) with e = e^(-2|u|); one exponential. The
  // gamma = 0 linear family keeps std::tanh so tanh(beta)*x holds to 1 ulp.
  double fast_tanh(double u) const {
    if (u > kSaturation) return 1.0;
    if (u < -kSaturation) return -1.0;
    if (gamma == 0.0) return std::tanh(u);
    double e2 = std::exp(-2.0 * std::abs(u));
    double t = (1.0 - e2) / (1.0 + e2);
    return u < 0.0 ? -t : t;
  }

  // noinline+noclone keep one machine-code instance of the kernels, so every
  // caller (scalar ops, tensor maps, subfamily wrappers) is bit-identical
  // regardless of how the optimizer contracts surrounding code.
  [[gnu::noinline, gnu::noclone]] double eval(double x) const {
    double eg;
    double u = arg(x, eg);
    double s, sig;
    softplus_and_gate(x, s, sig);
    return fast_tanh(u) * s;
  }

  [[gnu::noinline, gnu::noclone]] double deriv(double x) const {
    double eg;
    double u = arg(x, eg);
    double s, sig;
    softplus_and_gate(x, s, sig);

    double t, alpha_part, beta_part;
    if (std::abs(u) <= kSaturation) {
      // tanh and sech^2 from one exponential:
      // tanh(u) = (1-e)/(1+e), sech^2(u) = 4e/(1+e)^2, e = e^(-2|u|).
      double e2 = std::exp(-2.0 * std::abs(u));
      double onep = 1.0 + e2;
      double tm = (1.0 - e2) / onep;
      t = u < 0.0 ? -tm : tm;
      double sech2 = 4.0 * e2 / (onep * onep);
      alpha_part = alpha == 0.0 ? 0.0 : alpha * sech2;
      beta_part = beta == 0.0 ? 0.0 : beta * gamma * eg * sech2;
    } else {
      // Saturated: fold e^(gamma*x) into the exponent so the beta term
      // underflows cleanly instead of producing inf * 0.
      t = u > 0.0 ? 1.0 : -1.0;
      if (alpha == 0.0) {
        alpha_part = 0.0;
      } else {
        double t2 = -2.0 * std::abs(u);
        alpha_part = t2 < kNegligibleExponent ? 0.0 : alpha * 4.0 * std::exp(t2);
      }
      if (beta == 0.0) {
        beta_part = 0.0;
      } else {
        double t2 = gamma * x - 2.0 * std::abs(u);
        beta_part = t2 < kNegligibleExponent ? 0.0 : 4.0 * beta * gamma * std::exp(t2);
      }
    }
    return t * sig + (alpha_part + beta_part) * s;
  }
};

}  // namespace

// --- Hyperparams -------------------------------------------------------------

Hyperparams::Hyperparams(double alpha, double beta, double gamma, double delta)
    : alpha(alpha), beta(beta), gamma(gamma), delta(delta) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma) ||
      !std::isfinite(delta)) {
    throw std::invalid_argument("hyperparameters must be finite");
  }
  if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
  if (delta < 0.0 || delta > 1.0) throw std::invalid_argument("delta must be in [0, 1]");
}

Hyperparams Hyperparams::search_range(double alpha, double beta, double gamma, double delta) {
  Hyperparams h(alpha, beta, gamma, delta);
  if (alpha < 0.0 || alpha > 3.0) throw std::invalid_argument("search range requires 0 <= alpha <= 3");
  if (beta >= 2.0) throw std::invalid_argument("search range requires 0 <= beta < 2");
  if (gamma <= 0.0 || gamma >= 4.0) throw std::invalid_argument("search range requires 0 < gamma < 4");
  if (delta != 0.0 && delta != 1.0) throw std::invalid_argument("search range requires delta in {0, 1}");
  return h;
}

// --- Family ------------------------------------------------------------------

double tanhsoft_eval(const Hyperparams& h, double x) {
  require_finite(x);
  return FamilyKernel(h).eval(x);
}

double tanhsoft_deriv(const Hyperparams& h, double x) {
  require_finite(x);
  return FamilyKernel(h).deriv(x);
}

double tanhsoft1_eval(double alpha, double x) {
  return tanhsoft_eval(Hyperparams(alpha, 0.0, 1.0, 1.0), x);
}

double tanhsoft1_deriv(double alpha, double x) {
  return tanhsoft_deriv(Hyperparams(alpha, 0.0, 1.0, 1.0), x);
}

double tanhsoft2_eval(double beta, double gamma, double x) {
  return tanhsoft_eval(Hyperparams(0.0, beta, gamma, 0.0), x);
}

double tanhsoft2_deriv(double beta, double gamma, double x) {
  return tanhsoft_deriv(Hyperparams(0.0, beta, gamma, 0.0), x);
}

// --- Baselines ---------------------------------------------------------------

[[gnu::noinline, gnu::noclone]] double baseline_eval(const ActivationSpec& spec, double x) {
  switch (spec.kind()) {
    case ActKind::Sigmoid:
      return stable_sigmoid(x);
    case ActKind::Tanh:
      return std::tanh(x);
    case ActKind::ReLU:
      return x > 0.0 ? x : 0.0;
    case ActKind::LeakyReLU:
      return x > 0.0 ? x : 0.01 * x;
    case ActKind::PReLU:
      return x > 0.0 ? x : spec.param() * x;
    case ActKind::Swish:
      return x * stable_sigmoid(x);
    case ActKind::ESwish:
      return spec.param() * x * stable_sigmoid(x);
    case ActKind::ELiSH: {
      double s = stable_sigmoid(x);
      return x >= 0.0 ? x * s : std::expm1(x) * s;
    }
    case ActKind::Softsign:
      return x / (1.0 + std::abs(x));
    case ActKind::ELU:
      return x > 0.0 ? x : spec.param() * std::expm1(x);
    case ActKind::Softplus:
      return stable_softplus(x);
    default:
      break;
  }
  throw std::invalid_argument("baseline_eval: spec is a TanhSoft family kind");
}

[[gnu::noinline, gnu::noclone]] double baseline_deriv(const ActivationSpec& spec, double x) {
  switch (spec.kind()) {
    case ActKind::Sigmoid: {
      double s = stable_sigmoid(x);
      return s * (1.0 - s);
    }
    case ActKind::Tanh: {
      double c = std::cosh(x);
      double inv = 1.0 / c;
      return inv * inv;  // cosh overflows to inf for |x| > ~710; 1/inf^2 = 0
    }
    case ActKind::ReLU:
      return x >= 0.0 ? 1.0 : 0.0;  // right derivative at the kink
    case ActKind::LeakyReLU:
      return x >= 0.0 ? 1.0 : 0.01;
    case ActKind::PReLU:
      return x >= 0.0 ? 1.0 : spec.param();
    case ActKind::Swish: {
      double s = stable_sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case ActKind::ESwish: {
      double s = stable_sigmoid(x);
      return spec.param() * s * (1.0 + x * (1.0 - s));
    }
    case ActKind::ELiSH: {
      double s = stable_sigmoid(x);
      if (x >= 0.0) return s * (1.0 + x * (1.0 - s));
      double ex = std::exp(x);
      return s * (ex + std::expm1(x) * (1.0 - s));
    }
    case ActKind::Softsign: {
      double d = 1.0 + std::abs(x);
      return 1.0 / (d * d);
    }
    case ActKind::ELU:
      return x > 0.0 ? 1.0 : spec.param() * std::exp(x);
    case ActKind::Softplus:
      return stable_sigmoid(x);
    default:
      break;
  }
  throw std::invalid_argument("baseline_deriv: spec is a TanhSoft family kind");
}

// --- ActivationSpec ----------------------------------------------------------

ActivationSpec ActivationSpec::family(const Hyperparams& h) {
  ActivationSpec s;
  s.kind_ = ActKind::TanhSoftFamily;
  s.h_ = h;
  return s;
}

ActivationSpec ActivationSpec::tanhsoft1(double alpha) {
  ActivationSpec s;
  s.kind_ = ActKind::TanhSoft1;
  s.h_ = Hyperparams(alpha, 0.0, 1.0, 1.0);
  return s;
}

ActivationSpec ActivationSpec::tanhsoft2(double beta, double gamma) {
  ActivationSpec s;
  s.kind_ = ActKind::TanhSoft2;
  s.h_ = Hyperparams(0.0, beta, gamma, 0.0);
  if (gamma == 0.0) throw std::invalid_argument("tanhsoft2 requires gamma > 0");
  return s;
}

ActivationSpec ActivationSpec::sigmoid() {
  ActivationSpec s;
  s.kind_ = ActKind::Sigmoid;
  return s;
}
ActivationSpec ActivationSpec::tanh() {
  ActivationSpec s;
  s.kind_ = ActKind::Tanh;
  return s;
}
ActivationSpec ActivationSpec::relu() {
  ActivationSpec s;
  s.kind_ = ActKind::ReLU;
  return s;
}
ActivationSpec ActivationSpec::leaky_relu() {
  ActivationSpec s;
  s.kind_ = ActKind::LeakyReLU;
  s.param_ = 0.01;
  return s;
}
ActivationSpec ActivationSpec::prelu(double slope) {
  if (!std::isfinite(slope) || slope > 1.0) {
    throw std::invalid_argument("prelu slope must be finite and <= 1");
  }
  ActivationSpec s;
  s.kind_ = ActKind::PReLU;
  s.param_ = slope;
  return s;
}
ActivationSpec ActivationSpec::swish() {
  ActivationSpec s;
  s.kind_ = ActKind::Swish;
  return s;
}
ActivationSpec ActivationSpec::eswish(double beta) {
  if (!std::isfinite(beta)) throw std::invalid_argument("eswish beta must be finite");
  ActivationSpec s;
  s.kind_ = ActKind::ESwish;
  s.param_ = beta;
  return s;
}
ActivationSpec ActivationSpec::elish() {
  ActivationSpec s;
  s.kind_ = ActKind::ELiSH;
  return s;
}
ActivationSpec ActivationSpec::softsign() {
  ActivationSpec s;
  s.kind_ = ActKind::Softsign;
  return s;
}
ActivationSpec ActivationSpec::elu(double alpha) {
  if (!std::isfinite(alpha)) throw std::invalid_argument("elu alpha must be finite");
  ActivationSpec s;
  s.kind_ = ActKind::ELU;
  s.param_ = alpha;
  return s;
}
ActivationSpec ActivationSpec::softplus() {
  ActivationSpec s;
  s.kind_ = ActKind::Softplus;
  return s;
}

double ActivationSpec::eval(double x) const {
  switch (kind_) {
    case ActKind::TanhSoftFamily:
      return tanhsoft_eval(h_, x);
    case ActKind::TanhSoft1:
      return tanhsoft_eval(h_, x);
    case ActKind::TanhSoft2:
      return tanhsoft_eval(h_, x);
    default:
      return baseline_eval(*this, x);
  }
}

double ActivationSpec::deriv(double x) const {
  switch (kind_) {
    case ActKind::TanhSoftFamily:
    case ActKind::TanhSoft1:
    case ActKind::TanhSoft2:
      return tanhsoft_deriv(h_, x);
    default:
      return baseline_deriv(*this, x);
  }
}

std::string_view act_kind_name(ActKind kind) {
  switch (kind) {
    case ActKind::TanhSoftFamily: return "tanhsoft";
    case ActKind::TanhSoft1: return "tanhsoft1";
    case ActKind::TanhSoft2: return "tanhsoft2";
    case ActKind::Sigmoid: return "sigmoid";
    case ActKind::Tanh: return "tanh";
    case ActKind::ReLU: return "relu";
    case ActKind::LeakyReLU: return "lrelu";
    case ActKind::PReLU: return "prelu";
    case ActKind::Swish: return "swish";
    case ActKind::ESwish: return "eswish";
    case ActKind::ELiSH: return "elish";
    case ActKind::Softsign: return "softsign";
    case ActKind::ELU: return "elu";
    case ActKind::Softplus: return "softplus";
  }
  return "?";
}

std::string ActivationSpec::to_string() const {
  std::string name(act_kind_name(kind_));
  switch (kind_) {
    case ActKind::TanhSoftFamily:
      return name + "(" + format_double(h_.alpha) + "," + format_double(h_.beta) + "," +
             format_double(h_.gamma) + "," + format_double(h_.delta) + ")";
    case ActKind::TanhSoft1:
      return name + "(" + format_double(h_.alpha) + ")";
    case ActKind::TanhSoft2:
      return name + "(" + format_double(h_.beta) + "," + format_double(h_.gamma) + ")";
    case ActKind::PReLU:
    case ActKind::ESwish:
    case ActKind::ELU:
      return name + "(" + format_double(param_) + ")";
    default:
      return name;
  }
}

SpecParseError::SpecParseError(const std::string& msg, std::size_t pos)
    : std::invalid_argument(msg + " (at position " + std::to_string(pos) + ")"), position(pos) {}

namespace {

struct SpecParser {
  std::string_view text;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  }

  std::string name() {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_')) ++pos;
    if (pos == start) throw SpecParseError("expected activation name", start);
    return std::string(text.substr(start, pos - start));
  }

  std::vector<double> args() {
    skip_ws();
    std::vector<double> out;
    if (pos == text.size()) return out;
    if (text[pos] != '(') throw SpecParseError("expected '(' or end of input", pos);
    ++pos;
    while (true) {
      skip_ws();
      std::size_t start = pos;
      while (pos < text.size() && text[pos] != ',' && text[pos] != ')') ++pos;
      std::string token(text.substr(start, pos - start));
      char* end = nullptr;
      double v = std::strtod(token.c_str(), &end);
      if (token.empty() || end != token.c_str() + token.size()) {
        throw SpecParseError("expected a number", start);
      }
      out.push_back(v);
      if (pos == text.size()) throw SpecParseError("expected ',' or ')'", pos);
      if (text[pos] == ')') {
        ++pos;
        break;
      }
      ++pos;  // consume ','
    }
    skip_ws();
    if (pos != text.size()) throw SpecParseError("trailing characters after spec", pos);
    return out;
  }
};

[[noreturn]] void arity_error(const std::string& name, std::size_t want, std::size_t got) {
  throw SpecParseError(name + " takes " + std::to_string(want) + " parameter(s), got " +
                           std::to_string(got),
                       0);
}

}  // namespace

ActivationSpec ActivationSpec::parse(std::string_view text) {
  SpecParser p{text};
  std::string name = p.name();
  std::vector<double> a = p.args();

  auto want = [&](std::size_t n) {
    if (a.size() != n) arity_error(name, n, a.size());
  };

  if (name == "tanhsoft") {
    want(4);
    return family(Hyperparams(a[0], a[1], a[2], a[3]));
  }
  if (name == "tanhsoft1") {
    want(1);
    return tanhsoft1(a[0]);
  }
  if (name == "tanhsoft2") {
    want(2);
    return tanhsoft2(a[0], a[1]);
  }
  if (name == "sigmoid") { want(0); return sigmoid(); }
  if (name == "tanh") { want(0); return tanh(); }
  if (name == "relu") { want(0); return relu(); }
  if (name == "lrelu") {
    if (a.empty()) return leaky_relu();
    if (a.size() == 1 && a[0] == 0.01) return leaky_relu();
    throw SpecParseError("lrelu slope is fixed at 0.01; use prelu(a) for other slopes", 0);
  }
  if (name == "prelu") { want(1); return prelu(a[0]); }
  if (name == "swish") { want(0); return swish(); }
  if (name == "eswish") { want(1); return eswish(a[0]); }
  if (name == "elish") { want(0); return elish(); }
  if (name == "softsign") { want(0); return softsign(); }
  if (name == "elu") {
    if (a.empty()) return elu();
    want(1);
    return elu(a[0]);
  }
  if (name == "softplus") { want(0); return softplus(); }
  throw SpecParseError("unknown activation '" + name + "'", 0);
}

// --- Tensor maps --------------------------------------------------------------

namespace {

bool is_family_kind(ActKind kind) {
  return kind == ActKind::TanhSoftFamily || kind == ActKind::TanhSoft1 ||
         kind == ActKind::TanhSoft2;
}

}  // namespace

void eval_map_into(const ActivationSpec& spec, std::span<const float> in, std::span<float> out) {
  if (is_family_kind(spec.kind())) {
    FamilyKernel k(spec.hyperparams());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = float(k.eval(double(in[i])));
    return;
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = float(spec.eval(double(in[i])));
}

void deriv_map_into(const ActivationSpec& spec, std::span<const float> in, std::span<float> out) {
  if (is_family_kind(spec.kind())) {
    FamilyKernel k(spec.hyperparams());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = float(k.deriv(double(in[i])));
    return;
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = float(spec.deriv(double(in[i])));
}

Tensor eval_map(const ActivationSpec& spec, const Tensor& t) {
  Tensor out(t.shape());
  eval_map_into(spec, t.values(), out.values());
  return out;
}

Tensor deriv_map(const ActivationSpec& spec, const Tensor& t) {
  Tensor out(t.shape());
  deriv_map_into(spec, t.values(), out.values());
  return out;
}

}  // namespace tslab
