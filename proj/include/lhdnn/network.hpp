#pragma once

// Multi-head feedforward stack for hierarchical targets: a shared dense
// trunk producing the representation z, one linear head per hierarchy level,
// and per-sample projection blocks that route each lower level's trunk
// gradient into the orthogonal complement of the constraint rows built from
// all coarser heads.  Forward values are identical with routing on or off;
// only the backward pass changes.  Optional advantage links feed each head
// the raw logits of the coarser levels as gradient-blocked constants.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhdnn/linalg.hpp"
#include "lhdnn/rng.hpp"
#include "lhdnn/tensor.hpp"

namespace lhdnn {

struct LabelOutOfRange : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct ConfigMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Activation { kRelu, kSoftplus };
enum class MaskMode { kPerSample, kBatchMean };

// softplus twin used for smooth finite-difference checks
constexpr double kSoftplusBeta = 20.0;

inline double activate(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? x : 0.0;
  const double bx = kSoftplusBeta * x;
  if (bx > 30.0) return x;
  return std::log1p(std::exp(bx)) / kSoftplusBeta;
}

// derivative at 0 is defined as 0 for relu, keeping masks in {0,1}
inline double activate_deriv(Activation a, double x) {
  if (a == Activation::kRelu) return x > 0.0 ? 1.0 : 0.0;
  const double bx = kSoftplusBeta * x;
  if (bx > 30.0) return 1.0;
  if (bx < -30.0) return 0.0;
  return 1.0 / (1.0 + std::exp(-bx));
}

struct TrunkConfig {
  std::vector<int> widths;  // layer widths, back() = dim z
  Activation activation = Activation::kRelu;
};

struct LhNetworkConfig {
  int input_dim = 0;
  TrunkConfig trunk;
  std::vector<int> level_classes;  // coarsest first
  bool projection_enabled = true;
  bool advantage_enabled = true;
  MaskMode mask_mode = MaskMode::kPerSample;
  std::uint64_t seed = 0;
};

struct DenseLayer {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
};

struct Head {
  int level = 0;    // 0-based
  int classes = 0;
  int z_cols = 0;   // first z_cols weight columns read z
  int adv_cols = 0; // remaining columns read detached coarser logits
  Tensor weights;   // [classes, z_cols + adv_cols]
  Tensor bias;      // [classes]
};

class LhNetwork {
 public:
  explicit LhNetwork(LhNetworkConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.input_dim <= 0) throw ConfigMismatch("input_dim must be positive");
    if (cfg_.trunk.widths.empty()) throw ConfigMismatch("trunk needs at least one layer");
    for (int w : cfg_.trunk.widths)
      if (w <= 0) throw ConfigMismatch("trunk widths must be positive");
    if (cfg_.level_classes.empty()) throw ConfigMismatch("at least one level required");
    for (int c : cfg_.level_classes)
      if (c < 2) throw ConfigMismatch("each level needs >= 2 classes");
    int upper_rows = 0;
    for (std::size_t i = 0; i + 1 < cfg_.level_classes.size(); ++i)
      upper_rows += cfg_.level_classes[i];
    if (cfg_.projection_enabled && cfg_.trunk.widths.back() <= upper_rows)
      throw ConfigMismatch("dim z (" + std::to_string(cfg_.trunk.widths.back()) +
                           ") must exceed the constraint rows of the deepest head (" +
                           std::to_string(upper_rows) + ")");

    std::mt19937_64 rng(derive_seed(cfg_.seed, "init"));
    int in = cfg_.input_dim;
    for (std::size_t l = 0; l < cfg_.trunk.widths.size(); ++l) {
      const int out = cfg_.trunk.widths[l];
      DenseLayer layer;
      layer.w = init_weight(out, in, rng);
      layer.b = Tensor({static_cast<std::size_t>(out)}, true);
      trunk_.push_back(std::move(layer));
      in = out;
    }
    const int d = cfg_.trunk.widths.back();
    int adv = 0;
    for (std::size_t i = 0; i < cfg_.level_classes.size(); ++i) {
      Head h;
      h.level = static_cast<int>(i);
      h.classes = cfg_.level_classes[i];
      h.z_cols = d;
      h.adv_cols = cfg_.advantage_enabled ? adv : 0;
      h.weights = init_weight(h.classes, d + h.adv_cols, rng);
      h.bias = Tensor({static_cast<std::size_t>(h.classes)}, true);
      heads_.push_back(std::move(h));
      adv += h.classes;
    }
  }

  const LhNetworkConfig& config() const { return cfg_; }
  int input_dim() const { return cfg_.input_dim; }
  int z_dim() const { return cfg_.trunk.widths.back(); }
  int levels() const { return static_cast<int>(heads_.size()); }
  Activation activation() const { return cfg_.trunk.activation; }
  bool projection_enabled() const { return cfg_.projection_enabled; }
  void set_projection_enabled(bool on) { cfg_.projection_enabled = on; }

  std::vector<DenseLayer>& trunk() { return trunk_; }
  const std::vector<DenseLayer>& trunk() const { return trunk_; }
  std::vector<Head>& heads() { return heads_; }
  const std::vector<Head>& heads() const { return heads_; }

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      out.emplace_back("trunk" + std::to_string(l) + ".w", &trunk_[l].w);
      out.emplace_back("trunk" + std::to_string(l) + ".b", &trunk_[l].b);
    }
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      out.emplace_back("head" + std::to_string(i) + ".w", &heads_[i].weights);
      out.emplace_back("head" + std::to_string(i) + ".b", &heads_[i].bias);
    }
    return out;
  }

  void zero_grad() {
    for (auto& l : trunk_) {
      l.w.zero_grad();
      l.b.zero_grad();
    }
    for (auto& h : heads_) {
      h.weights.zero_grad();
      h.bias.zero_grad();
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t->count();
    return n;
  }

 private:
  static Tensor init_weight(int out, int in, std::mt19937_64& rng) {
    Tensor t({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}, true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.values) v = u(rng);
    return t;
  }

  LhNetworkConfig cfg_;
  std::vector<DenseLayer> trunk_;
  std::vector<Head> heads_;
};

struct ForwardTrace {
  std::size_t batch = 0;
  Matrix input;
  std::vector<Matrix> preacts;  // k per trunk layer
  std::vector<Matrix> acts;     // z per trunk layer; acts.back() = z
  Matrix rho_prime;             // activation derivative at the last preact
  std::vector<Matrix> logits;   // per level
  // constraints[i-1] holds A^(i) for level i >= 1 (0-based): one entry per
  // sample, or a single shared entry in batch-mean mask mode
  std::vector<std::vector<ConstraintRows>> constraints;
  bool has_constraints = false;

  const Matrix& z() const { return acts.back(); }
  const ConstraintRows& constraint_for(int level, std::size_t sample) const {
    const auto& per_level = constraints[level - 1];
    return per_level.size() == 1 ? per_level[0] : per_level[sample];
  }
};

namespace detail {

inline Eigen::Map<const EigenRowMat> wmap(const Tensor& t) {
  return {t.values.data(), static_cast<Eigen::Index>(t.shape[0]),
          static_cast<Eigen::Index>(t.shape[1])};
}
inline Eigen::Map<EigenRowMat> gmap(Tensor& t) {
  return {t.grad.data(), static_cast<Eigen::Index>(t.shape[0]),
          static_cast<Eigen::Index>(t.shape[1])};
}

}  // namespace detail

// Runs the trunk and all heads over a batch (rows = samples).  Forward
// values never depend on the projection flag; when `training` is set and
// projection is enabled the per-sample constraint rows are built and cached
// for the backward pass.
inline ForwardTrace forward(const LhNetwork& net, const Matrix& x, bool training = true) {
  if (x.cols() != static_cast<std::size_t>(net.input_dim()))
    throw DimensionMismatch("forward: batch has " + std::to_string(x.cols()) +
                            " features, network expects " +
                            std::to_string(net.input_dim()));
  if (!x.all_finite()) throw std::invalid_argument("forward: non-finite input");

  const std::size_t B = x.rows();
  const Activation act = net.activation();
  ForwardTrace tr;
  tr.batch = B;
  tr.input = x;

  const Matrix* cur = &tr.input;
  for (const DenseLayer& layer : net.trunk()) {
    const std::size_t out = layer.w.shape[0];
    Matrix k(B, out);
    emap(k).noalias() = emap(*cur) * detail::wmap(layer.w).transpose();
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < out; ++j) k(i, j) += layer.b.values[j];
    Matrix z(B, out);
    for (std::size_t i = 0; i < k.size(); ++i)
      z.data()[i] = activate(act, k.data()[i]);
    tr.preacts.push_back(std::move(k));
    tr.acts.push_back(std::move(z));
    cur = &tr.acts.back();
  }

  const Matrix& z = tr.acts.back();
  const std::size_t d = z.cols();
  tr.rho_prime = Matrix(B, d);
  for (std::size_t i = 0; i < tr.rho_prime.size(); ++i)
    tr.rho_prime.data()[i] = activate_deriv(act, tr.preacts.back().data()[i]);

  for (const Head& h : net.heads()) {
    Matrix y(B, h.classes);
    auto w = detail::wmap(h.weights);
    emap(y).noalias() = emap(z) * w.block(0, 0, h.classes, d).transpose();
    if (h.adv_cols > 0) {
      int off = static_cast<int>(d);
      for (int j = 0; j < h.level; ++j) {
        const Matrix& prev = tr.logits[j];
        const int c = static_cast<int>(prev.cols());
        emap(y).noalias() += emap(prev) * w.block(0, off, h.classes, c).transpose();
        off += c;
      }
    }
    for (std::size_t i = 0; i < B; ++i)
      for (int j = 0; j < h.classes; ++j) y(i, j) += h.bias.values[j];
    tr.logits.push_back(std::move(y));
  }

  if (training && net.projection_enabled() && net.levels() > 1) {
    tr.has_constraints = true;
    tr.constraints.resize(net.levels() - 1);
    const bool per_sample = net.config().mask_mode == MaskMode::kPerSample;
    std::vector<double> mean_mask;
    if (!per_sample) {
      mean_mask.assign(d, 0.0);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < d; ++j) mean_mask[j] += tr.rho_prime(i, j);
      for (double& v : mean_mask) v /= static_cast<double>(B);
    }
    for (int lvl = 1; lvl < net.levels(); ++lvl) {
      std::vector<Matrix> blocks;
      for (int j = 0; j < lvl; ++j) {
        const Head& h = net.heads()[j];
        Matrix zb(h.classes, d);
        for (int c = 0; c < h.classes; ++c)
          std::memcpy(zb.row(c), h.weights.values.data() + c * (d + h.adv_cols),
                      d * sizeof(double));
        blocks.push_back(std::move(zb));
      }
      auto& slot = tr.constraints[lvl - 1];
      if (per_sample) {
        slot.reserve(B);
        for (std::size_t s = 0; s < B; ++s)
          slot.push_back(build_constraint_rows(
              blocks, std::span<const double>(tr.rho_prime.row(s), d)));
      } else {
        slot.push_back(build_constraint_rows(blocks, mean_mask));
      }
    }
  }
  return tr;
}

// Projection-block output for one sample: the value contract is exact
// pass-through of z (the filtered part re-enters as a constant), so forward
// values are independent of the routing.
inline std::vector<double> projected_head_input(const LhNetwork& net,
                                                const ForwardTrace& tr, int level,
                                                std::size_t sample) {
  (void)net;
  const Matrix& z = tr.z();
  return std::vector<double>(z.row(sample), z.row(sample) + z.cols());
}

// The gradient-carrying component w = P_{A^(level)} v for one sample.
inline std::vector<double> project_trace_vector(const ForwardTrace& tr, int level,
                                                std::size_t sample,
                                                std::span<const double> v) {
  if (level < 1 || !tr.has_constraints) return {v.begin(), v.end()};
  return project_complement(tr.constraint_for(level, sample), v);
}

inline void check_labels(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows())
    throw DimensionMismatch("labels/batch size mismatch");
  for (int l : labels)
    if (l < 0 || l >= static_cast<int>(logits.cols()))
      throw LabelOutOfRange("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(logits.cols()) + ")");
}

inline std::vector<double> per_sample_cross_entropy(const Matrix& logits,
                                                    const std::vector<int>& labels) {
  check_labels(logits, labels);
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double* r = logits.row(i);
    double m = r[0];
    for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) sum += std::exp(r[j] - m);
    out[i] = m + std::log(sum) - r[labels[i]];
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label].
inline double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  auto per = per_sample_cross_entropy(logits, labels);
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

// Reverse pass for total = sum_i weight[i] * mean-cross-entropy(level i).
// Gradients accumulate into the parameter grad slots.  Head gradients are
// the plain unprojected ones (value invariance); each level's trunk
// contribution is routed through its per-sample projector, so it stays
// orthogonal to every coarser constraint row.  Advantage inputs are
// constants: no gradient flows through them into coarser levels.
inline void backward(LhNetwork& net, const ForwardTrace& tr,
                     const std::vector<std::vector<int>>& labels,
                     std::span<const double> level_weights) {
  const std::size_t B = tr.batch;
  const int n = net.levels();
  if (static_cast<int>(labels.size()) != n || level_weights.size() != static_cast<std::size_t>(n))
    throw DimensionMismatch("backward: one label vector and weight per level");
  const bool project = net.projection_enabled() && tr.has_constraints;
  const std::size_t d = tr.z().cols();

  Matrix dz_top(B, tr.z().cols());
  for (int i = 0; i < n; ++i) {
    if (level_weights[i] == 0.0) continue;
    Head& h = net.heads()[i];
    const Matrix& y = tr.logits[i];
    check_labels(y, labels[i]);
    const double scale = level_weights[i] / static_cast<double>(B);

    Matrix dy(B, h.classes);
    for (std::size_t s = 0; s < B; ++s) {
      const double* r = y.row(s);
      double m = r[0];
      for (int j = 1; j < h.classes; ++j) m = std::max(m, r[j]);
      double sum = 0.0;
      for (int j = 0; j < h.classes; ++j) sum += std::exp(r[j] - m);
      for (int j = 0; j < h.classes; ++j) dy(s, j) = std::exp(r[j] - m) / sum * scale;
      dy(s, labels[i][s]) -= scale;
    }

    auto gw = detail::gmap(h.weights);
    gw.block(0, 0, h.classes, d).noalias() += emap(dy).transpose() * emap(tr.z());
    if (h.adv_cols > 0) {
      int off = static_cast<int>(d);
      for (int j = 0; j < h.level; ++j) {
        const Matrix& prev = tr.logits[j];
        const int c = static_cast<int>(prev.cols());
        gw.block(0, off, h.classes, c).noalias() += emap(dy).transpose() * emap(prev);
        off += c;
      }
    }
    for (std::size_t s = 0; s < B; ++s)
      for (int j = 0; j < h.classes; ++j) h.bias.grad[j] += dy(s, j);

    Matrix gz(B, d);
    emap(gz).noalias() =
        emap(dy) * detail::wmap(h.weights).block(0, 0, h.classes, d);
    if (project && i >= 1) {
      std::vector<double> routed(d);
      for (std::size_t s = 0; s < B; ++s) {
        try {
          project_complement(tr.constraint_for(i, s),
                             std::span<const double>(gz.row(s), d),
                             std::span<double>(routed.data(), d));
        } catch (const RankExhausted& e) {
          throw RankExhausted("level " + std::to_string(i + 1) + ": " + e.what());
        }
        std::memcpy(gz.row(s), routed.data(), d * sizeof(double));
      }
    }
    emap(dz_top) += emap(gz);
  }

  // trunk reverse accumulation
  Matrix dz = std::move(dz_top);
  for (std::size_t l = net.trunk().size(); l-- > 0;) {
    DenseLayer& layer = net.trunk()[l];
    const Matrix& k = tr.preacts[l];
    const std::size_t out = k.cols();
    Matrix dk(B, out);
    for (std::size_t i = 0; i < dk.size(); ++i)
      dk.data()[i] = dz.data()[i] * activate_deriv(net.activation(), k.data()[i]);
    const Matrix& in = l == 0 ? tr.input : tr.acts[l - 1];
    detail::gmap(layer.w).noalias() += emap(dk).transpose() * emap(in);
    for (std::size_t s = 0; s < B; ++s)
      for (std::size_t j = 0; j < out; ++j) layer.b.grad[j] += dk(s, j);
    if (l > 0) {
      Matrix prev(B, in.cols());
      emap(prev).noalias() = emap(dk) * detail::wmap(layer.w);
      dz = std::move(prev);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic "LHDN", u32 version, then per tensor
//   u32 name length, name bytes, u32 rank, u64 dims..., f64 values...
// all little-endian; round-trips bit-exactly.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return true;
}
inline bool get_u64(std::istream& is, std::uint64_t& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return true;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(LhNetwork& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write("LHDN", 4);
  detail::put_u32(os, kCheckpointVersion);
  for (auto& [name, t] : net.named_parameters()) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t dim : t->shape) detail::put_u64(os, dim);
    static_assert(sizeof(double) == 8);
    for (double v : t->values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u64(os, bits);
    }
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LHDN", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  std::uint32_t version = 0;
  if (!detail::get_u32(is, version) || version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  std::vector<std::pair<std::string, Tensor>> out;
  std::uint32_t name_len = 0;
  while (detail::get_u32(is, name_len)) {
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("truncated checkpoint");
    std::uint32_t rank = 0;
    if (!detail::get_u32(is, rank)) throw std::runtime_error("truncated checkpoint");
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) {
      std::uint64_t v = 0;
      if (!detail::get_u64(is, v)) throw std::runtime_error("truncated checkpoint");
      dim = static_cast<std::size_t>(v);
    }
    Tensor t(shape);
    for (double& v : t.values) {
      std::uint64_t bits = 0;
      if (!detail::get_u64(is, bits)) throw std::runtime_error("truncated checkpoint");
      std::memcpy(&v, &bits, 8);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline void load_checkpoint(LhNetwork& net, const std::string& path) {
  auto stored = read_checkpoint(path);
  auto params = net.named_parameters();
  if (stored.size() != params.size())
    throw ConfigMismatch("checkpoint holds " + std::to_string(stored.size()) +
                         " tensors, network has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (stored[i].first != params[i].first || stored[i].second.shape != params[i].second->shape)
      throw ConfigMismatch("checkpoint tensor " + stored[i].first +
                           " does not match network parameter " + params[i].first);
    params[i].second->values = std::move(stored[i].second.values);
  }
}

// Flat views used by the finite-difference oracles and the descent sweeps.

inline std::vector<double> flatten_values(LhNetwork& net, bool trunk_only = false) {
  std::vector<double> out;
  for (auto& [name, t] : net.named_parameters()) {
    if (trunk_only && name.rfind("trunk", 0) != 0) continue;
    out.insert(out.end(), t->values.begin(), t->values.end());
  }
  return out;
}

inline std::vector<double> flatten_grads(LhNetwork& net, bool trunk_only = false) {
  std::vector<double> out;
  for (auto& [name, t] : net.named_parameters()) {
    if (trunk_only && name.rfind("trunk", 0) != 0) continue;
    out.insert(out.end(), t->grad.begin(), t->grad.end());
  }
  return out;
}

inline void unflatten_values(LhNetwork& net, std::span<const double> flat,
                             bool trunk_only = false) {
  std::size_t off = 0;
  for (auto& [name, t] : net.named_parameters()) {
    if (trunk_only && name.rfind("trunk", 0) != 0) continue;
    if (off + t->count() > flat.size()) throw DimensionMismatch("unflatten: short vector");
    std::copy(flat.begin() + off, flat.begin() + off + t->count(), t->values.begin());
    off += t->count();
  }
  if (off != flat.size()) throw DimensionMismatch("unflatten: length mismatch");
}

}  // namespace lhdnn
