#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "tslab/tensor.hpp"

namespace tslab {

// The four knobs of the tanh(alpha*x + beta*e^(gamma*x)) * ln(delta + e^x)
// family. delta acts as a switch: 0 turns the second factor into plain x.
struct Hyperparams {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 1.0;
  double delta = 0.0;

  // Accepts any finite alpha, beta >= 0, gamma >= 0 (gamma = 0 is the
  // degenerate linear family and only valid through explicit construction),
  // delta in [0, 1].
  Hyperparams(double alpha, double beta, double gamma, double delta);

  // Additionally enforces the experimental search ranges:
  // 0 <= alpha <= 3, 0 <= beta < 2, 0 < gamma < 4, delta in {0, 1}.
  static Hyperparams search_range(double alpha, double beta, double gamma, double delta);

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
  // Lexicographic (alpha, beta, gamma, delta); used for stable tie-breaking.
  friend auto operator<=>(const Hyperparams&, const Hyperparams&) = default;
};

enum class ActKind {
  TanhSoftFamily,
  TanhSoft1,
  TanhSoft2,
  Sigmoid,
  Tanh,
  ReLU,
  LeakyReLU,
  PReLU,
  Swish,
  ESwish,
  ELiSH,
  Softsign,
  ELU,
  Softplus,
};

inline constexpr int kActKindCount = 14;
std::string_view act_kind_name(ActKind kind);

// One activation choice: a kind plus its kind-specific parameters.
class ActivationSpec {
 public:
  ActivationSpec() = default;  // ReLU

  static ActivationSpec family(const Hyperparams& h);
  static ActivationSpec tanhsoft1(double alpha);
  static ActivationSpec tanhsoft2(double beta, double gamma);
  static ActivationSpec sigmoid();
  static ActivationSpec tanh();
  static ActivationSpec relu();
  static ActivationSpec leaky_relu();        // fixed slope 0.01
  static ActivationSpec prelu(double slope);
  static ActivationSpec swish();
  static ActivationSpec eswish(double beta);
  static ActivationSpec elish();
  static ActivationSpec softsign();
  static ActivationSpec elu(double alpha = 1.0);
  static ActivationSpec softplus();

  ActKind kind() const { return kind_; }
  // Family coefficients; only meaningful for the three family kinds.
  const Hyperparams& hyperparams() const { return h_; }
  // PReLU slope / E-Swish beta / ELU alpha / LeakyReLU 0.01.
  double param() const { return param_; }

  double eval(double x) const;
  double deriv(double x) const;

  // Canonical text, e.g. "tanhsoft2(0.6,1)"; parse() round-trips it.
  std::string to_string() const;
  static ActivationSpec parse(std::string_view text);

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;

 private:
  ActKind kind_ = ActKind::ReLU;
  Hyperparams h_{0.0, 0.0, 1.0, 0.0};
  double param_ = 0.0;
};

// Raised by parse() with the offending position in the message.
struct SpecParseError : std::invalid_argument {
  SpecParseError(const std::string& msg, std::size_t position);
  std::size_t position;
};

// --- TanhSoft family, values and exact first derivatives -------------------
//
// All are total on finite x with no NaN/inf escape; non-finite x raises
// std::domain_error. The delta = 0 branch computes ln(delta + e^x) literally
// as x and its derivative factor as 1.

double tanhsoft_eval(const Hyperparams& h, double x);
double tanhsoft_deriv(const Hyperparams& h, double x);

// tanh(alpha*x) * ln(1 + e^x); equals the family at (alpha, 0, *, 1).
double tanhsoft1_eval(double alpha, double x);
double tanhsoft1_deriv(double alpha, double x);

// x * tanh(beta*e^(gamma*x)); equals the family at (0, beta, gamma, 0).
double tanhsoft2_eval(double beta, double gamma, double x);
double tanhsoft2_deriv(double beta, double gamma, double x);

// --- Baselines --------------------------------------------------------------

double baseline_eval(const ActivationSpec& spec, double x);
double baseline_deriv(const ActivationSpec& spec, double x);

// --- Elementwise tensor application -----------------------------------------
//
// Bit-identical to applying the scalar op per element (double math, then
// rounded to the tensor's 32-bit storage).

Tensor eval_map(const ActivationSpec& spec, const Tensor& t);
Tensor deriv_map(const ActivationSpec& spec, const Tensor& t);

void eval_map_into(const ActivationSpec& spec, std::span<const float> in, std::span<float> out);
void deriv_map_into(const ActivationSpec& spec, std::span<const float> in, std::span<float> out);

}  // namespace tslab
