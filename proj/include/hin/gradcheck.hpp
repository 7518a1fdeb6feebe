#pragma once

// Central finite-difference check of tape gradients. This is the oracle for
// every backward rule, so it only ever reads loss *values* from fresh tapes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "hin/autodiff.hpp"
#include "hin/errors.hpp"
#include "hin/params.hpp"
#include "hin/random.hpp"

namespace hin {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  // Probes abandoned because every retry straddled a ReLU kink.
  std::size_t skipped = 0;
  // Finite-difference and tape values at the worst probe.
  double worst_fd = 0.0;
  double worst_analytic = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
  }

  std::vector<std::string> failing(double tolerance) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (!(e.max_rel_error < tolerance)) out.push_back(e.name);
    return out;
  }
};

struct GradCheckOptions {
  double eps = 1e-5;
  // 2: (f(x+h) - f(x-h)) / 2h. 4: adds the f(x+-2h) terms, cancelling the
  // h^2 truncation error so a larger h can be used against round-off.
  int stencil = 2;
  // Tensors larger than this are checked on a seeded sample of elements.
  std::size_t max_probes = 64;
  std::uint64_t seed = 0;
  // Optional fault injection applied to the analytic pass only.
  std::string fault_op;
  double fault_factor = 1.5;
};

using LossFn = std::function<ad::Var(ad::Tape&)>;

inline double relative_error(double fd, double analytic) {
  return std::abs(fd - analytic) / std::max(1e-8, std::abs(fd) + std::abs(analytic));
}

inline GradCheckReport finite_diff_check(ParameterSet& params, const LossFn& f,
                                         const GradCheckOptions& opt = {}) {
  if (!(opt.eps >= 1e-7 && opt.eps <= 1e-3)) {
    throw ConfigError("finite_diff_check: eps " + std::to_string(opt.eps) +
                      " outside [1e-7, 1e-3]");
  }
  if (opt.stencil != 2 && opt.stencil != 4) {
    throw ConfigError("finite_diff_check: stencil must be 2 or 4, got " + std::to_string(opt.stencil));
  }

  params.zero_grad();
  std::uint64_t base_signature = 0;
  {
    ad::Tape tape;
    if (!opt.fault_op.empty()) tape.inject_fault(opt.fault_op, opt.fault_factor);
    ad::Var loss = f(tape);
    base_signature = tape.kink_signature();
    tape.backward(loss);
  }

  struct Probe {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&]() {
    ad::Tape tape;
    ad::Var loss = f(tape);
    const double v = loss.value().item();
    if (std::isnan(v)) throw Error("finite_diff_check: loss is NaN at a probe point");
    return Probe{v, tape.kink_signature()};
  };

  // Returns false when the probe straddles a ReLU kink at every step size.
  auto probe = [&](Parameter& p, std::size_t idx, double& rel, double& fd_out) {
    double& slot = p.value[idx];
    const double original = slot;
    const double analytic = p.grad[idx];
    for (double eps = opt.eps; eps >= 1e-8; eps /= 10.0) {
      auto at = [&](double offset) {
        slot = original + offset;
        const Probe r = evaluate();
        slot = original;
        return r;
      };
      const Probe plus = at(eps), minus = at(-eps);
      if (plus.signature != base_signature || minus.signature != base_signature) continue;
      double fd = (plus.value - minus.value) / (2.0 * eps);
      if (opt.stencil == 4) {
        const Probe plus2 = at(2.0 * eps), minus2 = at(-2.0 * eps);
        if (plus2.signature != base_signature || minus2.signature != base_signature) continue;
        fd = (8.0 * (plus.value - minus.value) - (plus2.value - minus2.value)) / (12.0 * eps);
      }
      rel = relative_error(fd, analytic);
      fd_out = fd;
      return true;
    }
    return false;
  };

  auto record = [](GradCheckEntry& e, double rel, double fd, double analytic) {
    if (e.probes == 0 || rel > e.max_rel_error) {
      e.max_rel_error = rel;
      e.worst_fd = fd;
      e.worst_analytic = analytic;
    }
    ++e.probes;
  };

  GradCheckReport report;
  for (Parameter& p : params) {
    if (p.frozen) continue;
    GradCheckEntry entry{p.name};
    const std::size_t n = p.size();
    if (n <= opt.max_probes) {
      for (std::size_t i = 0; i < n; ++i) {
        double rel = 0.0, fd = 0.0;
        if (probe(p, i, rel, fd)) {
          record(entry, rel, fd, p.grad[i]);
        } else {
          ++entry.skipped;
        }
      }
    } else {
      // Sample distinct elements; kinked probes are replaced by fresh draws.
      SeedStream rng = SeedStream::derive(opt.seed, p.name);
      std::set<std::size_t> tried;
      while (entry.probes < opt.max_probes && tried.size() < n) {
        const std::size_t i = rng.below(n);
        if (!tried.insert(i).second) continue;
        double rel = 0.0, fd = 0.0;
        if (probe(p, i, rel, fd)) {
          record(entry, rel, fd, p.grad[i]);
        } else {
          ++entry.skipped;
        }
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace hin
