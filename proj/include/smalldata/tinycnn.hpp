#pragma once

// Desk-scale CNN with three ordered layer groups:
//   group 1: conv 3x3x8, conv 3x3x16      (closest to the image)
//   group 2: conv 3x3x32, conv 3x3x32
//   group 3: fully-connected head
// Every conv is followed by relu; the first three also by 2x2 max pooling and
// the last by global average pooling. The head feeds a per-label sigmoid.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smalldata/ndtensor.hpp"

namespace smalldata::cnn {

struct Layer {
  std::string name;
  nd::Tensor weight;
  nd::Tensor bias;
};

struct LayerGroup {
  int index = 0;
  std::vector<Layer> layers;
  bool frozen = false;
};

struct ModelParams {
  std::array<LayerGroup, 3> groups;
  std::size_t n_labels = 0;
  std::size_t image_size = 0;

  Layer& head() { return groups[2].layers.back(); }
  const Layer& head() const { return groups[2].layers.back(); }

  template <class F>
  void for_each_layer(F&& f) {
    for (auto& g : groups)
      for (auto& l : g.layers) f(g, l);
  }
  template <class F>
  void for_each_layer(F&& f) const {
    for (const auto& g : groups)
      for (const auto& l : g.layers) f(g, l);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_layer([&](const LayerGroup&, const Layer& l) { n += l.weight.size() + l.bias.size(); });
    return n;
  }

  /// Mirrors the group frozen flags onto the tensors' requires_grad.
  void sync_requires_grad() {
    for_each_layer([](const LayerGroup& g, Layer& l) {
      l.weight.set_requires_grad(!g.frozen);
      l.bias.set_requires_grad(!g.frozen);
    });
  }

  void zero_grad() {
    for_each_layer([](const LayerGroup&, Layer& l) {
      l.weight.zero_grad();
      l.bias.zero_grad();
    });
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.n_labels != b.n_labels || a.image_size != b.image_size) return false;
    for (std::size_t g = 0; g < 3; ++g) {
      const auto& la = a.groups[g].layers;
      const auto& lb = b.groups[g].layers;
      if (la.size() != lb.size()) return false;
      for (std::size_t i = 0; i < la.size(); ++i)
        if (la[i].name != lb[i].name || !(la[i].weight == lb[i].weight) || !(la[i].bias == lb[i].bias)) return false;
    }
    return true;
  }
};

inline std::size_t fan_in(const nd::Tensor& weight) {
  // conv [O,C,kh,kw] -> C*kh*kw; dense [in,out] -> in
  if (weight.rank() == 4) return weight.dim(1) * weight.dim(2) * weight.dim(3);
  return weight.dim(0);
}

inline double init_bound(const nd::Tensor& weight) { return 1.0 / std::sqrt(static_cast<double>(fan_in(weight))); }

inline void init_layer(Layer& layer, std::mt19937_64& rng) {
  const double b = init_bound(layer.weight);
  std::uniform_real_distribution<double> dist(-b, b);
  for (auto& w : layer.weight.data()) w = dist(rng);
  for (auto& v : layer.bias.data()) v = 0.0;
}

/// Scaled-uniform fan-in initialization: weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases 0.
inline void init_default(ModelParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params.for_each_layer([&](const LayerGroup&, Layer& l) { init_layer(l, rng); });
}

inline ModelParams build_model(std::size_t image_size, std::size_t n_labels, std::uint64_t seed) {
  if (image_size < 16)
    throw std::invalid_argument("build_model: image_size " + std::to_string(image_size) +
                                " < 16 would underflow the pooling stack");
  if (n_labels < 1) throw std::invalid_argument("build_model: n_labels must be >= 1");
  auto conv = [](std::string name, std::size_t in, std::size_t out) {
    return Layer{std::move(name), nd::Tensor({out, in, 3, 3}), nd::Tensor({out})};
  };
  ModelParams m;
  m.n_labels = n_labels;
  m.image_size = image_size;
  m.groups[0] = {1, {conv("g1.conv1", 1, 8), conv("g1.conv2", 8, 16)}, false};
  m.groups[1] = {2, {conv("g2.conv3", 16, 32), conv("g2.conv4", 32, 32)}, false};
  m.groups[2] = {3, {Layer{"g3.head", nd::Tensor({32, n_labels}), nd::Tensor({n_labels})}}, false};
  init_default(m, seed);
  return m;
}

/// Appends the forward pass to `graph` and returns the node holding per-label
/// probabilities [N, n_labels]. `input` is [N,1,H,W]. With `track` set,
/// parameters enter as leaves so backward() reaches them.
inline nd::NodeId forward(nd::Graph& graph, ModelParams& params, const nd::Tensor& input, bool track = true) {
  auto param = [&](nd::Tensor& t) { return track ? graph.leaf(t) : graph.constant(nd::Tensor(t.shape(), t.data())); };
  nd::NodeId x = graph.constant(input);
  std::size_t conv_index = 0;
  for (std::size_t g = 0; g < 2; ++g)
    for (auto& layer : params.groups[g].layers) {
      x = graph.conv2d(x, param(layer.weight));
      x = graph.add_bias(x, param(layer.bias));
      x = graph.relu(x);
      x = (++conv_index < 4) ? graph.max_pool_2x2(x) : graph.global_avg_pool(x);
    }
  Layer& head = params.head();
  x = graph.matmul(x, param(head.weight));
  x = graph.add_bias(x, param(head.bias));
  return graph.sigmoid(x);
}

/// Inference only; returns row-major [N, n_labels] probabilities.
inline std::vector<double> predict(const ModelParams& params, const nd::Tensor& input) {
  nd::Graph graph;
  auto node = forward(graph, const_cast<ModelParams&>(params), input, /*track=*/false);
  return graph.value(node).data();
}

/// Copies every non-head tensor from `source` and re-initializes the head for
/// this model's label count.
inline void load_pretrained(ModelParams& params, const ModelParams& source, std::uint64_t seed) {
  for (std::size_t g = 0; g < 3; ++g) {
    auto& dst = params.groups[g].layers;
    const auto& src = source.groups[g].layers;
    const std::size_t n = (g == 2) ? dst.size() - 1 : dst.size();
    if (src.size() != dst.size()) throw std::invalid_argument("load_pretrained: group " + std::to_string(g + 1) + " layer count differs");
    for (std::size_t i = 0; i < n; ++i) {
      if (dst[i].weight.shape() != src[i].weight.shape() || dst[i].bias.shape() != src[i].bias.shape())
        throw std::invalid_argument("load_pretrained: shape mismatch in layer " + dst[i].name + ": " +
                                    nd::to_string(dst[i].weight.shape()) + " vs " + nd::to_string(src[i].weight.shape()));
      dst[i].weight = nd::Tensor(src[i].weight.shape(), src[i].weight.data());
      dst[i].bias = nd::Tensor(src[i].bias.shape(), src[i].bias.data());
    }
  }
  if (params.head().weight.dim(0) != source.head().weight.dim(0))
    throw std::invalid_argument("load_pretrained: head input width differs");
  std::mt19937_64 rng(seed);
  init_layer(params.head(), rng);
}

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

inline Moments moments(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

/// Replaces every transferred (non-head) tensor with i.i.d. normal draws,
/// shifted and scaled so the new sample has exactly the old tensor's mean and
/// standard deviation.
inline void reinit_moment_preserving(ModelParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto redraw = [&](nd::Tensor& t) {
    const Moments m = moments(t.data());
    if (m.stddev == 0.0 || t.size() < 2) {
      for (auto& x : t.data()) x = m.mean;
      return;
    }
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : t.data()) x = dist(rng);
    const Moments z = moments(t.data());
    for (auto& x : t.data()) x = m.mean + m.stddev * (x - z.mean) / z.stddev;
  };
  for (std::size_t g = 0; g < 2; ++g)
    for (auto& l : params.groups[g].layers) {
      redraw(l.weight);
      redraw(l.bias);
    }
}

// Checkpoint text format (hex floats keep values bit-exact):
//
//   smalldata-checkpoint 1
//   model <image_size> <n_labels> <tensor count>
//   tensor <name> <rank> <d0> ... <dk>
//   <values, whitespace separated, row-major>
//
// Tensor names are "<layer>.weight" / "<layer>.bias".

inline void save_checkpoint(std::ostream& os, const ModelParams& params) {
  std::size_t count = 0;
  params.for_each_layer([&](const LayerGroup&, const Layer&) { count += 2; });
  os << "smalldata-checkpoint 1\n";
  os << "model " << params.image_size << ' ' << params.n_labels << ' ' << count << '\n';
  auto put = [&](const std::string& name, const nd::Tensor& t) {
    os << "tensor " << name << ' ' << t.rank();
    for (auto d : t.shape()) os << ' ' << d;
    os << '\n' << std::hexfloat;
    for (std::size_t i = 0; i < t.size(); ++i) os << t[i] << ((i + 1) % 8 == 0 || i + 1 == t.size() ? '\n' : ' ');
    os << std::defaultfloat;
  };
  params.for_each_layer([&](const LayerGroup&, const Layer& l) {
    put(l.name + ".weight", l.weight);
    put(l.name + ".bias", l.bias);
  });
}

inline ModelParams load_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "smalldata-checkpoint" || version != 1)
    throw std::runtime_error("checkpoint: bad header");
  std::string tag;
  std::size_t image_size = 0, n_labels = 0, count = 0;
  if (!(is >> tag >> image_size >> n_labels >> count) || tag != "model") throw std::runtime_error("checkpoint: bad model line");
  ModelParams m = build_model(image_size, n_labels, 0);
  std::size_t seen = 0;
  auto read_tensor = [&](const std::string& expected, nd::Tensor& into) {
    std::string name;
    std::size_t rank = 0;
    if (!(is >> tag >> name >> rank) || tag != "tensor") throw std::runtime_error("checkpoint: expected tensor " + expected);
    if (name != expected) throw std::runtime_error("checkpoint: expected tensor " + expected + ", found " + name);
    nd::Shape shape(rank);
    for (auto& d : shape)
      if (!(is >> d)) throw std::runtime_error("checkpoint: bad shape for " + name);
    if (shape != into.shape())
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + nd::to_string(shape) + ", model expects " +
                               nd::to_string(into.shape()));
    std::vector<double> values(into.size());
    std::string token;
    for (auto& v : values) {
      if (!(is >> token)) throw std::runtime_error("checkpoint: truncated values for " + name);
      std::size_t used = 0;
      v = std::stod(token, &used);
      if (used != token.size()) throw std::runtime_error("checkpoint: bad value '" + token + "' in " + name);
    }
    into = nd::Tensor(shape, std::move(values));
    ++seen;
  };
  m.for_each_layer([&](const LayerGroup&, Layer& l) {
    read_tensor(l.name + ".weight", l.weight);
    read_tensor(l.name + ".bias", l.bias);
  });
  if (seen != count) throw std::runtime_error("checkpoint: tensor count mismatch");
  return m;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  save_checkpoint(os, params);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace smalldata::cnn
