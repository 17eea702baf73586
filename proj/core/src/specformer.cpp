#include "molspec/specformer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "molspec/rng.hpp"

#include "json.hpp"

namespace molspec::specformer {

using namespace molspec::numerics;
using spectra::PatchSequence;
using spectra::SpectrumKind;

SpecFormerConfig SpecFormerConfig::paper() { return SpecFormerConfig{}; }

SpecFormerConfig SpecFormerConfig::desk() {
  SpecFormerConfig c;
  c.num_layers = 2;
  c.heads = 4;
  c.width = 32;
  c.key_width = 32;
  c.grids = spectra::GridSet::desk();
  c.patches = spectra::PatchSet::uniform(12, 6);
  return c;
}

SpecFormerConfig SpecFormerConfig::toy() {
  SpecFormerConfig c;
  c.num_layers = 1;
  c.heads = 2;
  c.width = 8;
  c.key_width = 8;
  c.grids = spectra::GridSet::toy();
  c.patches = spectra::PatchSet::uniform(4, 2);
  return c;
}

std::array<std::size_t, 3> SpecFormerConfig::patch_counts() const {
  std::array<std::size_t, 3> counts{};
  for (std::size_t k = 0; k < 3; ++k) {
    counts[k] = spectra::patch_count(grids.grids[k].length,
                                     patches.configs[k].patch_len,
                                     patches.configs[k].stride);
  }
  return counts;
}

std::size_t SpecFormerConfig::total_tokens() const {
  const auto c = patch_counts();
  return c[0] + c[1] + c[2];
}

std::array<std::size_t, 4> SpecFormerConfig::block_offsets() const {
  const auto c = patch_counts();
  return {0, c[0], c[0] + c[1], c[0] + c[1] + c[2]};
}

void SpecFormerConfig::validate() const {
  if (width == 0 || heads == 0 || num_layers == 0) {
    throw std::invalid_argument("specformer config: zero extent");
  }
  if (width % heads != 0) {
    throw std::invalid_argument("specformer config: width must divide by heads");
  }
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("specformer config: mask ratio outside [0,1)");
  }
  patch_counts();  // validates the patch configs against the grids
}

std::pair<Tensor, Tensor> attention_head(const Tensor& tokens, const Tensor& wq,
                                         const Tensor& wk, const Tensor& wv) {
  const std::size_t dk = wq.cols();
  Tensor q = matmul(tokens, wq);
  Tensor k = matmul(tokens, wk);
  Tensor v = matmul(tokens, wv);
  Tensor scores = scale(matmul(q, transpose(k)),
                        1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor attn = softmax_row(scores);
  return {matmul(attn, v), attn};
}

SpecFormer::SpecFormer(const SpecFormerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.width;
  const auto counts = cfg_.patch_counts();
  Rng rng(derive_seed(seed, "init/specformer"));

  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t p = cfg_.patches.configs[k].patch_len;
    const double bound = std::sqrt(1.0 / static_cast<double>(p));
    params_.add("spec/patch" + std::to_string(k) + "/w",
                Tensor::uniform({p, d}, -bound, bound, rng));
    params_.add("spec/pos" + std::to_string(k),
                Tensor::normal({counts[k], d}, 0.0, 0.02, rng));
  }
  const double dbound = std::sqrt(1.0 / static_cast<double>(d));
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "spec/layer" + std::to_string(l);
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const std::string hb = base + "/head" + std::to_string(h);
      params_.add(hb + "/q", Tensor::uniform({d, cfg_.key_width}, -dbound, dbound, rng));
      params_.add(hb + "/k", Tensor::uniform({d, cfg_.key_width}, -dbound, dbound, rng));
      params_.add(hb + "/v", Tensor::uniform({d, cfg_.head_width()}, -dbound, dbound, rng));
    }
    params_.add(base + "/out/w", Tensor::uniform({d, d}, -dbound, dbound, rng));
    params_.add(base + "/bn1/gamma", Tensor::full({d}, 1.0, true));
    params_.add(base + "/bn1/beta", Tensor::zeros({d}, true));
    const std::size_t f = cfg_.ffn();
    params_.add(base + "/ffn1/w", Tensor::uniform({d, f}, -dbound, dbound, rng));
    params_.add(base + "/ffn1/b", Tensor::zeros({f}, true));
    const double fbound = std::sqrt(1.0 / static_cast<double>(f));
    // No bias on the second projection: the following BatchNorm subtracts any
    // per-feature constant, which would leave the bias without gradient.
    params_.add(base + "/ffn2/w", Tensor::uniform({f, d}, -fbound, fbound, rng));
    params_.add(base + "/bn2/gamma", Tensor::full({d}, 1.0, true));
    params_.add(base + "/bn2/beta", Tensor::zeros({d}, true));
    bn1_.emplace_back(d);
    bn2_.emplace_back(d);
  }
  const std::size_t flat = cfg_.total_tokens() * d;
  const double fbound = std::sqrt(1.0 / static_cast<double>(flat));
  params_.add("spec/flatten/w", Tensor::uniform({flat, d}, -fbound, fbound, rng));
  for (std::size_t k = 0; k < 3; ++k) {
    params_.add("spec/recon" + std::to_string(k) + "/w",
                Tensor::uniform({d, cfg_.patches.configs[k].patch_len}, -dbound,
                                dbound, rng));
  }
}

std::vector<std::pair<std::string, BatchNormState*>> SpecFormer::bn_states() {
  std::vector<std::pair<std::string, BatchNormState*>> out;
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "spec/layer" + std::to_string(l);
    out.emplace_back(base + "/bn1", &bn1_[l]);
    out.emplace_back(base + "/bn2", &bn2_[l]);
  }
  return out;
}

Tensor SpecFormer::embed(const std::array<PatchSequence, 3>& item) const {
  const auto counts = cfg_.patch_counts();
  std::vector<Tensor> blocks;
  for (std::size_t k = 0; k < 3; ++k) {
    const PatchSequence& p = item[k];
    if (p.kind != spectra::kAllKinds[k]) {
      throw std::invalid_argument("embed: spectra must arrive as UV-Vis, IR, Raman");
    }
    if (p.num_patches != counts[k] ||
        p.patch_len != cfg_.patches.configs[k].patch_len) {
      throw std::invalid_argument(
          "embed: patch sequence extents do not match the position encoding");
    }
    Tensor raw = Tensor::from_data({p.num_patches, p.patch_len}, p.values);
    Tensor proj = matmul(raw, params_.get("spec/patch" + std::to_string(k) + "/w"));
    blocks.push_back(add(proj, params_.get("spec/pos" + std::to_string(k))));
  }
  return concat_rows(blocks);
}

EncodeResult SpecFormer::encode_batch(
    const std::vector<std::array<PatchSequence, 3>>& batch,
    BatchNormMode bn_mode, bool want_attention) {
  if (batch.empty()) throw std::invalid_argument("encode: empty batch");
  const std::size_t t = cfg_.total_tokens();
  const std::size_t d = cfg_.width;
  const std::size_t b = batch.size();

  std::vector<Tensor> per_item;
  per_item.reserve(b);
  for (const auto& item : batch) per_item.push_back(embed(item));
  Tensor x = b == 1 ? per_item[0] : concat_rows(per_item);

  EncodeResult out;
  out.batch = b;
  out.tokens_per_item = t;
  const auto offs = cfg_.block_offsets();
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < offs[k + 1] - offs[k]; ++j) {
      out.provenance.push_back({spectra::kAllKinds[k], j});
    }
  }
  if (want_attention) {
    out.attention.emplace();
    out.attention->tokens = t;
    out.attention->block_offsets = offs;
    out.attention->weights.resize(cfg_.num_layers);
  }

  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "spec/layer" + std::to_string(l);
    if (want_attention) out.attention->weights[l].resize(cfg_.heads);

    // Per-item attention (tokens attend within their own molecule), heads
    // concatenated to width d, then mixed.
    std::vector<Tensor> item_rows(b);
    std::vector<std::vector<Tensor>> head_outs(b, std::vector<Tensor>(cfg_.heads));
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const std::string hb = base + "/head" + std::to_string(h);
      const Tensor& wq = params_.get(hb + "/q");
      const Tensor& wk = params_.get(hb + "/k");
      const Tensor& wv = params_.get(hb + "/v");
      for (std::size_t i = 0; i < b; ++i) {
        Tensor xi = b == 1 ? x : slice_rows(x, i * t, t);
        auto [o, attn] = attention_head(xi, wq, wk, wv);
        head_outs[i][h] = o;
        if (want_attention && i == 0) out.attention->weights[l][h] = attn.data();
      }
    }
    for (std::size_t i = 0; i < b; ++i) item_rows[i] = concat_cols(head_outs[i]);
    Tensor merged = b == 1 ? item_rows[0] : concat_rows(item_rows);
    Tensor attn_out = matmul(merged, params_.get(base + "/out/w"));

    Tensor h1 = batchnorm(attn_out, params_.get(base + "/bn1/gamma"),
                          params_.get(base + "/bn1/beta"), bn1_[l], bn_mode);
    Tensor ffn = matmul(gelu(add_rowvec(matmul(h1, params_.get(base + "/ffn1/w")),
                                        params_.get(base + "/ffn1/b"))),
                        params_.get(base + "/ffn2/w"));
    Tensor h2 = add(h1, ffn);  // residual around the feed-forward block
    x = batchnorm(h2, params_.get(base + "/bn2/gamma"),
                  params_.get(base + "/bn2/beta"), bn2_[l], bn_mode);
  }

  out.tokens = x;
  std::vector<Tensor> flat_rows(b);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor xi = b == 1 ? x : slice_rows(x, i * t, t);
    flat_rows[i] = reshape(xi, {1, t * d});
  }
  Tensor flat = b == 1 ? flat_rows[0] : concat_rows(flat_rows);
  out.z_s = matmul(flat, params_.get("spec/flatten/w"));
  return out;
}

EncodeResult SpecFormer::encode(const std::array<PatchSequence, 3>& item,
                                BatchNormMode bn_mode, bool want_attention) {
  return encode_batch({item}, bn_mode, want_attention);
}

std::array<Tensor, 3> SpecFormer::reconstruct_masked(
    const EncodeResult& result,
    const std::vector<const spectra::MaskPlan*>& plans) const {
  if (plans.size() != result.batch) {
    throw std::invalid_argument("reconstruct_masked: one mask plan per batch item");
  }
  std::size_t total = 0;
  for (const auto* p : plans) total += p->total_masked();
  if (total == 0) {
    throw std::invalid_argument("reconstruct_masked: empty mask plan");
  }
  const auto offs = cfg_.block_offsets();
  const std::size_t t = cfg_.total_tokens();

  std::array<Tensor, 3> out;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      for (std::size_t j : plans[i]->masked[k]) {
        if (j >= offs[k + 1] - offs[k]) {
          throw std::invalid_argument("reconstruct_masked: masked index out of range");
        }
        rows.push_back(i * t + offs[k] + j);
      }
    }
    if (rows.empty()) continue;
    Tensor picked = gather_rows(result.tokens, rows);
    out[k] = matmul(picked, params_.get("spec/recon" + std::to_string(k) + "/w"));
  }
  return out;
}

std::array<Tensor, 3> SpecFormer::reconstruct_masked(
    const EncodeResult& result, const spectra::MaskPlan& plan) const {
  return reconstruct_masked(result, std::vector<const spectra::MaskPlan*>{&plan});
}

void export_attention(const AttentionMap& map, const SpecFormerConfig& cfg,
                      const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot open " + csv_path + " for writing");
  out << "layer,head,query_token,key_token,weight\n";
  char buf[96];
  const std::size_t t = map.tokens;
  for (std::size_t l = 0; l < map.weights.size(); ++l) {
    for (std::size_t h = 0; h < map.weights[l].size(); ++h) {
      const auto& w = map.weights[l][h];
      for (std::size_t q = 0; q < t; ++q) {
        for (std::size_t k = 0; k < t; ++k) {
          std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%zu,%.17g\n", l, h, q, k,
                        w[q * t + k]);
          out << buf;
        }
      }
    }
  }
  if (!out.good()) throw std::runtime_error("failed writing " + csv_path);

  nlohmann::json meta;
  meta["tokens"] = map.tokens;
  meta["block_offsets"] = map.block_offsets;
  meta["layers"] = map.weights.size();
  meta["heads"] = map.weights.empty() ? 0 : map.weights[0].size();
  meta["config"] = {{"num_layers", cfg.num_layers},
                    {"heads", cfg.heads},
                    {"width", cfg.width},
                    {"key_width", cfg.key_width},
                    {"mask_ratio", cfg.mask_ratio}};
  std::ofstream mout(csv_path + ".meta.json");
  if (!mout) throw std::runtime_error("cannot open attention sidecar for writing");
  mout << meta.dump(2) << "\n";
  if (!mout.good()) throw std::runtime_error("failed writing attention sidecar");
}

AttentionMap read_attention_csv(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  std::ifstream min(csv_path + ".meta.json");
  if (!min) throw std::runtime_error("cannot open " + csv_path + ".meta.json");
  nlohmann::json meta = nlohmann::json::parse(min);

  AttentionMap map;
  map.tokens = meta.at("tokens").get<std::size_t>();
  const auto offs = meta.at("block_offsets").get<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < 4 && i < offs.size(); ++i) map.block_offsets[i] = offs[i];
  const std::size_t layers = meta.at("layers").get<std::size_t>();
  const std::size_t heads = meta.at("heads").get<std::size_t>();
  map.weights.assign(layers, std::vector<std::vector<double>>(
                                 heads, std::vector<double>(map.tokens * map.tokens)));

  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t l, h, q, k;
    double w;
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%zu,%lg", &l, &h, &q, &k, &w) != 5) {
      throw std::runtime_error("malformed attention row: " + line);
    }
    map.weights.at(l).at(h).at(q * map.tokens + k) = w;
  }
  return map;
}

}  // namespace molspec::specformer
