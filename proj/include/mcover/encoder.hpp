#ifndef MCOVER_ENCODER_HPP
#define MCOVER_ENCODER_HPP

// Convolutional track encoder. Five blocks of
//   batchnorm -> 3x3 conv (ReLU) -> 3x2 mean pool [-> dropout]
// take a 1024x36 single-channel input down to 4x1 spatial cells with 16K
// channels; a global mean over time and frequency, a dense layer to E and an
// L2 normalisation give the unit-norm embedding.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcover/error.hpp"
#include "mcover/frontend.hpp"
#include "mcover/nn/checkpoint.hpp"
#include "mcover/nn/layers.hpp"
#include "mcover/nn/random.hpp"
#include "mcover/nn/tensor.hpp"
#include "mcover/preprocess.hpp"

namespace mcover {

inline constexpr std::size_t kEncoderBlocks = 5;

struct EncoderConfig {
  int kernels = 64;         // K: first-layer kernel count, doubled per block
  int embedding_dim = 512;  // E
  std::array<double, kEncoderBlocks> dropout_rates{0.0, 0.1, 0.1, 0.2, 0.3};

  std::size_t in_channels(std::size_t block) const {
    return block == 0 ? 1 : static_cast<std::size_t>(kernels) << (block - 1);
  }
  std::size_t out_channels(std::size_t block) const { return static_cast<std::size_t>(kernels) << block; }
  std::size_t feature_width() const { return out_channels(kEncoderBlocks - 1); }

  void validate() const {
    require(kernels >= 1, ErrorKind::kConfig, "K (kernel count) must be >= 1");
    require(embedding_dim >= 1, ErrorKind::kConfig, "E (embedding dimension) must be >= 1");
    for (double r : dropout_rates) require(r >= 0.0 && r < 1.0, ErrorKind::kConfig, "dropout rates must lie in [0, 1)");
  }
};

struct Embedding {
  std::string track_id;
  std::vector<float> vector;
};

template <typename T>
struct ConvBlockParams {
  nn::Tensor<T> bn_gamma, bn_beta, bn_running_mean, bn_running_var;
  nn::Tensor<T> conv_kernel, conv_bias;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  std::array<ConvBlockParams<T>, kEncoderBlocks> blocks;
  nn::Tensor<T> dense_weight, dense_bias;

  // All tensors allocated and zeroed; also serves as a gradient accumulator.
  static EncoderParams zeros(const EncoderConfig& config) {
    config.validate();
    EncoderParams p;
    p.config = config;
    for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
      const std::size_t cin = config.in_channels(b), cout = config.out_channels(b);
      auto& blk = p.blocks[b];
      blk.bn_gamma = nn::Tensor<T>({cin});
      blk.bn_beta = nn::Tensor<T>({cin});
      blk.bn_running_mean = nn::Tensor<T>({cin});
      blk.bn_running_var = nn::Tensor<T>({cin});
      blk.conv_kernel = nn::Tensor<T>({3, 3, cin, cout});
      blk.conv_bias = nn::Tensor<T>({cout});
    }
    p.dense_weight = nn::Tensor<T>({config.feature_width(), static_cast<std::size_t>(config.embedding_dim)});
    p.dense_bias = nn::Tensor<T>({static_cast<std::size_t>(config.embedding_dim)});
    return p;
  }

  // He-normal weights, zero biases, identity batchnorm.
  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed) {
    auto p = zeros(config);
    nn::Rng rng(seed);
    auto he = [&rng](nn::Tensor<T>& w, std::size_t fan_in) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : w.values()) v = static_cast<T>(rng.normal() * stddev);
    };
    for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
      auto& blk = p.blocks[b];
      blk.bn_gamma.fill(T{1});
      blk.bn_running_var.fill(T{1});
      he(blk.conv_kernel, 9 * config.in_channels(b));
    }
    he(p.dense_weight, config.feature_width());
    return p;
  }

  // Visits (name, tensor, trainable) in a fixed order shared by checkpoints and the optimizer.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
      auto& blk = self.blocks[b];
      const std::string prefix = "block" + std::to_string(b + 1) + ".";
      fn(prefix + "bn.gamma", blk.bn_gamma, true);
      fn(prefix + "bn.beta", blk.bn_beta, true);
      fn(prefix + "bn.running_mean", blk.bn_running_mean, false);
      fn(prefix + "bn.running_var", blk.bn_running_var, false);
      fn(prefix + "conv.kernel", blk.conv_kernel, true);
      fn(prefix + "conv.bias", blk.conv_bias, true);
    }
    fn(std::string("dense.weight"), self.dense_weight, true);
    fn(std::string("dense.bias"), self.dense_bias, true);
  }
  template <typename Fn>
  void for_each(Fn&& fn) { visit(*this, fn); }
  template <typename Fn>
  void for_each(Fn&& fn) const { visit(*this, fn); }

  std::vector<nn::Tensor<T>*> trainable() {
    std::vector<nn::Tensor<T>*> out;
    for_each([&](const std::string&, nn::Tensor<T>& t, bool trainable) {
      if (trainable) out.push_back(&t);
    });
    return out;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for_each([&](const std::string& name, const nn::Tensor<T>&, bool trainable) {
      if (trainable) out.push_back(name);
    });
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const nn::Tensor<T>& t, bool trainable) {
      if (trainable) n += t.size();
    });
    return n;
  }

  template <typename U>
  EncoderParams<U> cast() const {
    auto out = EncoderParams<U>::zeros(config);
    std::vector<const nn::Tensor<T>*> src;
    for_each([&](const std::string&, const nn::Tensor<T>& t, bool) { src.push_back(&t); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, nn::Tensor<U>& t, bool) { t = src[i++]->template cast<U>(); });
    return out;
  }

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint ckpt;
    ckpt.k = static_cast<std::uint32_t>(config.kernels);
    ckpt.e = static_cast<std::uint32_t>(config.embedding_dim);
    for_each([&](const std::string& name, const nn::Tensor<T>& t, bool) {
      ckpt.tensors.push_back({name, t.template cast<float>()});
    });
    return ckpt;
  }

  static EncoderParams from_checkpoint(const nn::Checkpoint& ckpt) {
    EncoderConfig config;
    config.kernels = static_cast<int>(ckpt.k);
    config.embedding_dim = static_cast<int>(ckpt.e);
    require(config.kernels >= 1 && config.embedding_dim >= 1, ErrorKind::kFormat, "checkpoint has K or E of zero");
    auto p = zeros(config);
    p.for_each([&](const std::string& name, nn::Tensor<T>& t, bool) {
      const auto* stored = ckpt.find(name);
      require(stored != nullptr, ErrorKind::kFormat, "checkpoint lacks tensor " + name);
      require(stored->value.shape() == t.shape(), ErrorKind::kFormat,
              "checkpoint tensor " + name + " has shape " + nn::shape_string(stored->value.shape()) + ", expected " +
                  nn::shape_string(t.shape()));
      t = stored->value.template cast<T>();
    });
    return p;
  }
};

// Activations kept by a forward pass for the backward pass.
template <typename T>
struct EncoderCache {
  struct Block {
    nn::BatchNormCache<T> bn;
    nn::Tensor<T> conv_input;  // batchnorm output
    nn::Tensor<T> activation;  // ReLU output, pool input
    nn::Tensor<T> dropout_mask;
  };
  std::array<Block, kEncoderBlocks> blocks;
  nn::Shape last_block_shape;
  nn::Tensor<T> features;  // [B, 16K]
  nn::Tensor<T> embeddings;
  std::vector<double> norms;
};

inline nn::Shape encoder_input_shape(std::size_t batch) { return {batch, kInputFrames, kInputBins, 1}; }

template <typename T>
nn::Tensor<T> make_input_batch(std::span<const PreprocessedInput* const> inputs) {
  nn::Tensor<T> batch(encoder_input_shape(inputs.size()));
  const std::size_t per = kInputFrames * kInputBins;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i]->validate();
    std::copy(inputs[i]->values.values().begin(), inputs[i]->values.values().end(), batch.data() + i * per);
  }
  return batch;
}

// Train mode uses batch statistics and dropout (driven by `rng`); eval mode
// uses running statistics and no dropout, and each output row then depends
// only on its own input row. `cache` is only needed for a later backward pass.
template <typename T>
nn::Tensor<T> encoder_forward(const EncoderParams<T>& params, const nn::Tensor<T>& input, nn::Mode mode,
                              nn::Rng* rng = nullptr, EncoderCache<T>* cache = nullptr) {
  require(input.rank() == 4 && input.dim(1) == kInputFrames && input.dim(2) == kInputBins && input.dim(3) == 1,
          ErrorKind::kShape, "encoder input must be [B, 1024, 36, 1], got " + nn::shape_string(input.shape()));
  require(input.dim(0) >= 1, ErrorKind::kShape, "encoder input batch is empty");
  const bool train = mode == nn::Mode::kTrain;
  require(!train || input.dim(0) >= 2, ErrorKind::kInvalidInput, "train mode needs a batch of at least 2");
  require(!train || rng != nullptr, ErrorKind::kInvalidInput, "train mode needs a dropout RNG");

  nn::Tensor<T> x = input;
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
    const auto& blk = params.blocks[b];
    nn::BatchNormCache<T> bn_cache;
    nn::Tensor<T> normed = train ? nn::batchnorm_forward_train(x, blk.bn_gamma, blk.bn_beta, bn_cache)
                                 : nn::batchnorm_forward_eval(x, blk.bn_gamma, blk.bn_beta, blk.bn_running_mean,
                                                              blk.bn_running_var);
    nn::Tensor<T> act = nn::relu_forward(nn::conv2d_forward(normed, blk.conv_kernel, blk.conv_bias));
    nn::Tensor<T> pooled = nn::meanpool_forward(act);
    nn::Tensor<T> mask;
    nn::Rng eval_rng(0);
    x = nn::dropout_forward(pooled, params.config.dropout_rates[b], mode, rng ? *rng : eval_rng, mask);
    if (cache) {
      auto& c = cache->blocks[b];
      c.bn = std::move(bn_cache);
      c.conv_input = std::move(normed);
      c.activation = std::move(act);
      c.dropout_mask = std::move(mask);
    }
  }
  nn::Tensor<T> features = nn::global_meanpool_forward(x);
  nn::Tensor<T> hidden = nn::dense_forward(features, params.dense_weight, params.dense_bias);
  std::vector<double> norms;
  nn::Tensor<T> embeddings = nn::l2_normalize_forward(hidden, norms);
  if (cache) {
    cache->last_block_shape = x.shape();
    cache->features = std::move(features);
    cache->embeddings = embeddings;
    cache->norms = std::move(norms);
  }
  return embeddings;
}

// Gradients of a scalar loss w.r.t. every trainable tensor, given dL/d(embeddings).
// When `input_grad` is non-null it receives dL/d(input).
template <typename T>
EncoderParams<T> encoder_backward(const EncoderParams<T>& params, const EncoderCache<T>& cache,
                                  const nn::Tensor<T>& embedding_grad, nn::Tensor<T>* input_grad = nullptr) {
  auto grads = EncoderParams<T>::zeros(params.config);
  nn::Tensor<T> g = nn::l2_normalize_backward(cache.embeddings, cache.norms, embedding_grad);
  g = nn::dense_backward(cache.features, params.dense_weight, g, grads.dense_weight, grads.dense_bias);
  g = nn::global_meanpool_backward(g, cache.last_block_shape);
  for (std::size_t i = kEncoderBlocks; i-- > 0;) {
    const auto& c = cache.blocks[i];
    const auto& blk = params.blocks[i];
    auto& gb = grads.blocks[i];
    g = nn::dropout_backward(c.dropout_mask, g);
    g = nn::meanpool_backward(g, c.activation.shape());
    g = nn::relu_backward(c.activation, g);
    require(c.bn.normalized.size() > 0, ErrorKind::kInvalidInput, "encoder_backward needs a train-mode forward cache");
    nn::Tensor<T> d_normed;
    nn::conv2d_backward(c.conv_input, blk.conv_kernel, g, &d_normed, gb.conv_kernel, gb.conv_bias);
    if (i == 0 && input_grad == nullptr) {
      // Only the batchnorm parameter gradients are needed for the raw input block.
      nn::Tensor<T> unused = nn::batchnorm_backward(c.bn, blk.bn_gamma, d_normed, gb.bn_gamma, gb.bn_beta);
      (void)unused;
    } else {
      g = nn::batchnorm_backward(c.bn, blk.bn_gamma, d_normed, gb.bn_gamma, gb.bn_beta);
    }
  }
  if (input_grad) *input_grad = std::move(g);
  return grads;
}

template <typename T>
void update_running_stats(EncoderParams<T>& params, const EncoderCache<T>& cache) {
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
    nn::batchnorm_update_running(cache.blocks[b].bn, params.blocks[b].bn_running_mean,
                                 params.blocks[b].bn_running_var);
  }
}

inline EncoderParams<float> load_encoder(const std::filesystem::path& path) {
  return EncoderParams<float>::from_checkpoint(nn::load_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Batch inference over many tracks.

struct TrackSource {
  std::string track_id;
  std::function<PreprocessedInput()> load;
};

struct TrackFailure {
  std::string track_id;
  std::string reason;
  ErrorKind kind = ErrorKind::kData;  // non-library exceptions count as data errors
};

namespace detail {

inline TrackFailure failure_of(const std::string& track_id, const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  return {track_id, e.what(), err ? err->kind() : ErrorKind::kData};
}

}  // namespace detail

struct EmbedResult {
  std::vector<Embedding> embeddings;  // input order, failed tracks omitted
  std::vector<TrackFailure> failures;
};

struct EmbedOptions {
  std::size_t batch_size = 32;
  int parallelism = 1;
};

// Eval-mode forward over fixed chunks of the input list. Eval rows are
// independent of batch composition, so the output does not depend on
// parallelism or chunking.
inline EmbedResult embed_tracks(std::span<const TrackSource> sources, const EncoderParams<float>& params,
                                const EmbedOptions& options = {}) {
  require(options.batch_size >= 1, ErrorKind::kConfig, "inference batch size must be >= 1");
  const std::size_t n = sources.size();
  std::vector<std::optional<Embedding>> slots(n);
  std::vector<std::optional<TrackFailure>> failures(n);
  const std::size_t chunks = (n + options.batch_size - 1) / options.batch_size;

  detail::parallel_for(chunks, options.parallelism, [&](std::size_t chunk) {
    const std::size_t begin = chunk * options.batch_size;
    const std::size_t end = std::min(n, begin + options.batch_size);
    std::vector<PreprocessedInput> inputs;
    std::vector<std::size_t> index;
    for (std::size_t i = begin; i < end; ++i) {
      try {
        inputs.push_back(sources[i].load());
        inputs.back().validate();
        index.push_back(i);
      } catch (const std::exception& e) {
        failures[i] = detail::failure_of(sources[i].track_id, e);
      }
    }
    if (inputs.empty()) return;
    std::vector<const PreprocessedInput*> ptrs;
    for (const auto& in : inputs) ptrs.push_back(&in);
    try {
      const auto out = encoder_forward(params, make_input_batch<float>(ptrs), nn::Mode::kEval);
      const std::size_t e = out.dim(1);
      for (std::size_t r = 0; r < index.size(); ++r) {
        Embedding emb;
        emb.track_id = sources[index[r]].track_id;
        emb.vector.assign(out.data() + r * e, out.data() + (r + 1) * e);
        slots[index[r]] = std::move(emb);
      }
    } catch (const std::exception& e) {
      for (auto i : index) failures[i] = detail::failure_of(sources[i].track_id, e);
    }
  });

  EmbedResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) result.embeddings.push_back(std::move(*slots[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

}  // namespace mcover

#endif  // MCOVER_ENCODER_HPP
