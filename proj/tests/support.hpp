#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "hin/hin.hpp"

namespace hin::testing {

inline Tensor random_tensor(Shape shape, SeedStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Central differences of a scalar function of one tensor, computed from
// plain values only; used as the oracle for every backward rule.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double eps = 1e-6) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// A small model configuration that trains in well under a second per epoch.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.word_dim = 6;
  c.type_dim = 3;
  c.coref_dim = 3;
  c.distance_dim = 3;
  c.hidden = 4;
  c.subspaces = 2;
  c.dropout = 0.0;
  c.freeze_word_embeddings = false;
  return c;
}

struct TinyData {
  SyntheticCorpus corpus;
  Vocabulary vocab;
  ModelConfig config;
};

inline TinyData tiny_data(std::size_t documents = 3, std::uint64_t seed = 11) {
  SyntheticSpec spec;
  spec.documents = documents;
  spec.entities = 3;
  spec.relations = 3;
  spec.sentences = 3;
  spec.vocab = 40;
  spec.seed = seed;
  TinyData d{gen_synthetic(spec), {}, {}};
  d.vocab = build_vocab(d.corpus.documents, 1);
  d.vocab.relations = d.corpus.relations;
  d.config = sized_for(tiny_config(), d.vocab);
  return d;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hin-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return child.empty() ? path_.string() : (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace hin::testing
