#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmca/features.hpp"
#include "mmca/tensor.hpp"

namespace mmca {

struct ModelConfig {
  int n_segments = 0;
  int H = 12;
  int F = 12;
  int d_f = 24;
  int d_dow = 2;
  int d_tod = 2;
  int d_a = 80;
  int layers = 3;  // stacked spatial and temporal layer count
  int heads = 4;
  double dropout = 0.1;
  int steps_per_day = 192;
  int ff_mult = 4;  // position-wise feed-forward hidden width multiplier

  // Ablation switches; everything is one code path routed by flags.
  bool use_spatial = true;
  bool use_temporal = true;
  bool use_cross_attention = true;
  bool use_micro = true;
  std::array<bool, kNumMicro> micro_feature_mask = {true, true, true, true,
                                                    true, true, true};

  int d_hidden() const { return d_f + d_dow + d_tod + d_a; }
  // Throws on inconsistent settings (called at parameter construction).
  void validate() const;
};

// Ordered, named parameter registry. Order is fixed by construction and is
// the checkpoint payload order.
class ModelParams {
 public:
  Tensor& add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  int64_t parameter_count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

ModelParams init_params(const ModelConfig& config, uint64_t seed);

// Softmax score tensors captured during a forward pass, one entry per stacked
// layer. Spatial scores are (B, H, heads, N, N); temporal (B, N, heads, H, H).
struct AttentionScores {
  struct LayerScores {
    Tensor spatial_self, spatial_cross, temporal_self, temporal_cross;
  };
  std::vector<LayerScores> layers;
};

struct BatchInput {
  int B = 0;
  Tensor macro;  // (B, H, N, d_M), normalized
  Tensor micro;  // (B, H, N, d_m), normalized
  std::vector<int> tod_index;  // B*H
  std::vector<int> dow_index;  // B*H
  Tensor target;               // (B, N, F), normalized
};

BatchInput make_batch(const std::vector<const NormalizedWindow*>& windows,
                      const ModelConfig& config);

struct ForwardResult {
  Tensor mean;    // (B, N, F)
  Tensor scale2;  // (B, N, F), > 0
  Tensor df;      // (B, N, F), >= 2
  AttentionScores scores;
};

ForwardResult forward_model(const BatchInput& input, const ModelParams& params,
                            const ModelConfig& config, bool train,
                            std::mt19937_64& dropout_rng);

// Checkpoint: "MMCK" magic, uint64 JSON manifest length, JSON manifest
// (config, parameter names/shapes, norm stats), flat little-endian doubles.
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams& params, const NormStats& stats);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  NormStats stats;
};

Checkpoint load_checkpoint(const std::string& path);

// CSV export of attention scores for one forward pass (batch index 0):
// `layer,kind,head,axis_index,query,key,score`.
void export_attention_csv(const std::string& path,
                          const AttentionScores& scores);

}  // namespace mmca
