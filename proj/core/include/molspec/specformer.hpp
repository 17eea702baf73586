#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "molspec/ops.hpp"
#include "molspec/spectra.hpp"
#include "molspec/tensor.hpp"

namespace molspec::specformer {

struct SpecFormerConfig {
  std::size_t num_layers = 3;
  std::size_t heads = 16;       // H
  std::size_t width = 256;      // d
  std::size_t key_width = 256;  // d_k
  std::size_t ffn_hidden = 0;   // 0 selects 2 * width
  double mask_ratio = 0.10;     // alpha
  spectra::GridSet grids = spectra::GridSet::standard();
  spectra::PatchSet patches = spectra::PatchSet::uniform(20, 10);

  static SpecFormerConfig paper();  // Appendix-style defaults, full grids
  static SpecFormerConfig desk();   // d=32, H=4, 2 layers, short grids
  static SpecFormerConfig toy();    // gradient-check scale

  std::size_t head_width() const { return width / heads; }
  std::size_t ffn() const { return ffn_hidden ? ffn_hidden : 2 * width; }
  std::array<std::size_t, 3> patch_counts() const;
  std::size_t total_tokens() const;
  // Token offsets of each spectrum block plus the total, e.g. [0,59,408,757].
  std::array<std::size_t, 4> block_offsets() const;
  void validate() const;
};

struct TokenInfo {
  spectra::SpectrumKind kind;
  std::size_t patch_index;
};

struct AttentionMap {
  std::size_t tokens = 0;
  // weights[layer][head] is a row-major tokens x tokens row-stochastic matrix.
  std::vector<std::vector<std::vector<double>>> weights;
  std::array<std::size_t, 4> block_offsets{};
};

struct EncodeResult {
  numerics::Tensor tokens;  // (B*T) x d final token states
  numerics::Tensor z_s;     // B x d
  std::vector<TokenInfo> provenance;  // length T, shared by all batch items
  std::size_t batch = 0;
  std::size_t tokens_per_item = 0;
  std::optional<AttentionMap> attention;  // batch item 0 when requested
};

// Single attention head: out = Softmax(Q K^T / sqrt(d_k)) V with Q = X Wq,
// K = X Wk, V = X Wv. Returns (output, attention matrix).
std::pair<numerics::Tensor, numerics::Tensor> attention_head(
    const numerics::Tensor& tokens, const numerics::Tensor& wq,
    const numerics::Tensor& wk, const numerics::Tensor& wv);

class SpecFormer {
 public:
  SpecFormer(const SpecFormerConfig& cfg, std::uint64_t seed);

  const SpecFormerConfig& config() const { return cfg_; }
  numerics::ParamSet& params() { return params_; }
  const numerics::ParamSet& params() const { return params_; }
  // Batch-norm running statistics, named for checkpointing.
  std::vector<std::pair<std::string, numerics::BatchNormState*>> bn_states();

  // Patch + position encoding for one molecule (pre-layer token states).
  numerics::Tensor embed(const std::array<spectra::PatchSequence, 3>& item) const;

  EncodeResult encode_batch(
      const std::vector<std::array<spectra::PatchSequence, 3>>& batch,
      numerics::BatchNormMode bn_mode, bool want_attention = false);
  EncodeResult encode(const std::array<spectra::PatchSequence, 3>& item,
                      numerics::BatchNormMode bn_mode,
                      bool want_attention = false);

  // Applies the spectrum-specific heads to the token states at each masked
  // (kind, patch) position. Row order: batch item major, plan order minor.
  std::array<numerics::Tensor, 3> reconstruct_masked(
      const EncodeResult& result,
      const std::vector<const spectra::MaskPlan*>& plans) const;
  std::array<numerics::Tensor, 3> reconstruct_masked(
      const EncodeResult& result, const spectra::MaskPlan& plan) const;

 private:
  SpecFormerConfig cfg_;
  numerics::ParamSet params_;
  std::vector<numerics::BatchNormState> bn1_, bn2_;
};

void export_attention(const AttentionMap& map, const SpecFormerConfig& cfg,
                      const std::string& csv_path);
AttentionMap read_attention_csv(const std::string& csv_path);

}  // namespace molspec::specformer
