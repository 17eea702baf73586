#include "molspec/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "molspec/ops.hpp"
#include "molspec/rng.hpp"

namespace molspec::pipeline {

using namespace molspec::numerics;
using objectives::LossBreakdown;
using spectra::MaskPlan;
using spectra::PatchSequence;

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.spec = specformer::SpecFormerConfig::paper();
  c.enc = encoder3d::Encoder3DConfig{};
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.spec = specformer::SpecFormerConfig::desk();
  c.enc = encoder3d::Encoder3DConfig::desk();
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.spec = specformer::SpecFormerConfig::toy();
  c.enc = encoder3d::Encoder3DConfig::toy();
  return c;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  enc_ = std::make_unique<encoder3d::Encoder3D>(cfg.enc, seed);
  spec_ = std::make_unique<specformer::SpecFormer>(cfg.spec, seed);
}

std::vector<std::pair<std::string, Tensor>> Model::trainable() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [n, t] : enc_->params().items()) out.emplace_back(n, t);
  for (auto& [n, t] : spec_->params().items()) out.emplace_back(n, t);
  return out;
}

void Model::zero_grad() {
  enc_->params().zero_grad();
  spec_->params().zero_grad();
}

void Model::sgd_step(double lr) {
  enc_->params().sgd_step(lr);
  spec_->params().sgd_step(lr);
}

std::vector<std::pair<std::string, Tensor>> Model::state_tensors() {
  auto out = trainable();
  for (auto& [name, state] : spec_->bn_states()) {
    out.emplace_back(name + "/running_mean",
                     Tensor::from_data({state->running_mean.size()},
                                       state->running_mean));
    out.emplace_back(name + "/running_var",
                     Tensor::from_data({state->running_var.size()},
                                       state->running_var));
  }
  return out;
}

void Model::load_state(const Checkpoint& ckpt) {
  for (auto& [name, t] : trainable()) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (src->shape() != t.shape()) {
      auto fmt = [](const std::vector<std::size_t>& s) {
        std::string o = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
          o += (i ? "," : "") + std::to_string(s[i]);
        }
        return o + "]";
      };
      throw std::runtime_error("tensor " + name + ": checkpoint shape " +
                               fmt(src->shape()) + " does not match model shape " +
                               fmt(t.shape()));
    }
    t.mutable_data() = src->data();
  }
  for (auto& [name, state] : spec_->bn_states()) {
    const Tensor* mean = ckpt.find(name + "/running_mean");
    const Tensor* var = ckpt.find(name + "/running_var");
    if (!mean || !var) {
      throw std::runtime_error("checkpoint is missing tensor " + name +
                               "/running_mean");
    }
    if (mean->size() != state->running_mean.size() ||
        var->size() != state->running_var.size()) {
      throw std::runtime_error("tensor " + name +
                               ": running statistics width mismatch");
    }
    state->running_mean = mean->data();
    state->running_var = var->data();
  }
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) {
    throw std::invalid_argument("train config: stage must be 1 or 2");
  }
  if (stage == 1 && (weights.mpr != 0.0 || weights.contrast != 0.0)) {
    throw std::invalid_argument(
        "train config: stage 1 trains without spectra; beta_mpr and "
        "beta_contrast must be 0");
  }
  if (weights.denoising == 0.0 && weights.mpr == 0.0 && weights.contrast == 0.0) {
    throw std::invalid_argument("train config: at least one loss weight must be nonzero");
  }
  if (batch_size == 0) throw std::invalid_argument("train config: batch size is zero");
  if (noise_tau < 0.0) throw std::invalid_argument("train config: negative noise scale");
  if (lr <= 0.0) throw std::invalid_argument("train config: learning rate must be positive");
}

Checkpoint TrainSession::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.stage = cfg.stage;
  ckpt.step = step;
  ckpt.global_step = global_step;
  ckpt.seed = cfg.seed;
  ckpt.config_json = cfg.config_json;
  ckpt.tensors = const_cast<Model&>(*model).state_tensors();
  return ckpt;
}

TrainSession start_stage1(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != 1) {
    throw std::invalid_argument("start_stage1 requires a stage-1 config");
  }
  TrainSession s;
  s.cfg = cfg;
  s.model = std::make_unique<Model>(cfg.model, cfg.seed);
  return s;
}

TrainSession resume_from(const Checkpoint& ckpt, const TrainConfig& cfg) {
  cfg.validate();
  TrainSession s;
  s.cfg = cfg;
  s.model = std::make_unique<Model>(cfg.model, cfg.seed);
  s.model->load_state(ckpt);
  s.global_step = ckpt.global_step;
  if (ckpt.stage == cfg.stage) {
    s.step = ckpt.step;  // resumption of an interrupted run
  } else if (ckpt.stage == 1 && cfg.stage == 2) {
    s.step = 0;
  } else {
    throw std::invalid_argument("cannot start a stage-" + std::to_string(cfg.stage) +
                                " run from a stage-" + std::to_string(ckpt.stage) +
                                " checkpoint");
  }
  return s;
}

namespace {

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "shuffle", epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

struct PatchedRecord {
  std::array<PatchSequence, 3> patches;
};

std::vector<PatchedRecord> patchify_dataset(
    const std::vector<MoleculeRecord>& dataset,
    const specformer::SpecFormerConfig& cfg) {
  std::vector<PatchedRecord> out(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].has_spectra()) {
      throw std::invalid_argument("record " + dataset[i].id +
                                  " lacks spectra required by stage 2");
    }
    for (std::size_t k = 0; k < 3; ++k) {
      out[i].patches[k] =
          spectra::patchify((*dataset[i].spectra_set)[k], cfg.patches.configs[k]);
    }
  }
  return out;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
    out_ << "step,denoising,mpr,contrast,total\n";
  }
  void append(const LossBreakdown& b) {
    if (!out_.is_open()) return;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", b.step,
                  b.denoising, b.mpr, b.contrast, b.total);
    out_ << buf;
  }
  ~MetricsWriter() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace

TrainResult run_training(TrainSession& session,
                         const std::vector<MoleculeRecord>& dataset) {
  const TrainConfig& cfg = session.cfg;
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  const std::size_t bpe = dataset.size() / cfg.batch_size;
  if (bpe == 0) {
    throw std::invalid_argument("dataset is smaller than one batch");
  }

  const bool spectra_branch =
      cfg.stage == 2 && (cfg.weights.mpr != 0.0 || cfg.weights.contrast != 0.0);
  std::vector<PatchedRecord> patched;
  std::array<std::size_t, 3> patch_counts{};
  if (spectra_branch) {
    patched = patchify_dataset(dataset, cfg.model.spec);
    patch_counts = cfg.model.spec.patch_counts();
  }

  Model& model = *session.model;
  MetricsWriter metrics(cfg.metrics_path);
  TrainResult result;

  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm;

  while (session.step < cfg.steps) {
    const std::uint64_t epoch = session.global_step / bpe;
    const std::size_t pos = static_cast<std::size_t>(session.global_step % bpe);
    if (epoch != cached_epoch) {
      perm = epoch_permutation(dataset.size(), cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const std::size_t* batch_idx = perm.data() + pos * cfg.batch_size;

    // Noise draws for the whole batch come from one per-step stream.
    Rng noise_rng(derive_seed(cfg.seed, "noise", session.global_step));
    std::vector<encoder3d::MoleculeView> views;
    std::vector<std::vector<double>> noisy(cfg.batch_size);
    std::vector<double> targets;
    std::vector<std::size_t> offsets{0};
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const MoleculeRecord& rec = dataset[batch_idx[i]];
      auto sample = encoder3d::add_coord_noise(rec.molecule.coords, cfg.noise_tau,
                                               noise_rng);
      noisy[i] = std::move(sample.noisy);
      targets.insert(targets.end(), sample.noise.begin(), sample.noise.end());
      offsets.push_back(offsets.back() + rec.molecule.num_atoms());
    }
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      views.push_back({dataset[batch_idx[i]].molecule.atoms, noisy[i]});
    }

    auto enc_out = model.encoder().encode_batch(views);
    Tensor loss_d = objectives::loss_denoising(enc_out.node_pred, targets, offsets);

    Tensor loss_m, loss_c;
    if (spectra_branch) {
      const std::uint64_t mask_base = derive_seed(cfg.seed, "mask", session.global_step);
      std::vector<MaskPlan> plans(cfg.batch_size);
      std::vector<std::array<PatchSequence, 3>> masked(cfg.batch_size);
      std::array<std::vector<double>, 3> mpr_targets;
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const PatchedRecord& pr = patched[batch_idx[i]];
        plans[i] = spectra::make_mask_plan(patch_counts, cfg.model.spec.mask_ratio,
                                           derive_seed(mask_base, "item", i));
        for (std::size_t k = 0; k < 3; ++k) {
          masked[i][k] = spectra::apply_mask(pr.patches[k], plans[i].masked[k]);
        }
      }
      auto spec_out =
          model.spectrum_encoder().encode_batch(masked, BatchNormMode::kTrain);
      std::vector<const MaskPlan*> plan_ptrs;
      for (const auto& p : plans) plan_ptrs.push_back(&p);
      auto recon = model.spectrum_encoder().reconstruct_masked(spec_out, plan_ptrs);
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
          const PatchedRecord& pr = patched[batch_idx[i]];
          for (std::size_t j : plans[i].masked[k]) {
            mpr_targets[k].insert(mpr_targets[k].end(), pr.patches[k].row(j),
                                  pr.patches[k].row(j) + pr.patches[k].patch_len);
          }
        }
      }
      loss_m = objectives::loss_mpr(recon, mpr_targets);
      loss_c = objectives::loss_infonce(enc_out.z_x, spec_out.z_s);
    }

    Tensor total = objectives::loss_total(loss_d, loss_m, loss_c, cfg.weights);
    model.zero_grad();
    total.backward();
    model.sgd_step(cfg.lr);

    ++session.step;
    ++session.global_step;
    LossBreakdown b = objectives::make_breakdown(
        loss_d.value(), loss_m.defined() ? loss_m.value() : 0.0,
        loss_c.defined() ? loss_c.value() : 0.0, cfg.weights, session.step);
    metrics.append(b);
    result.history.push_back(b);
  }
  return result;
}

RetrievalResult eval_retrieval(Model& model,
                               const std::vector<MoleculeRecord>& records,
                               std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 2) {
    throw std::invalid_argument("eval_retrieval: batch size must be at least 2");
  }
  if (records.size() < batch_size) {
    throw std::invalid_argument("eval_retrieval: fewer records than one batch");
  }
  auto patched = patchify_dataset(records, model.config().spec);

  std::vector<std::size_t> perm(records.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "retrieval"));
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.below(i)]);
  }

  RetrievalResult res;
  std::size_t hit_x = 0, hit_s = 0, trials = 0;
  for (std::size_t b = 0; b + batch_size <= records.size(); b += batch_size) {
    std::vector<encoder3d::MoleculeView> views;
    std::vector<std::array<PatchSequence, 3>> items;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const MoleculeRecord& rec = records[perm[b + i]];
      views.push_back({rec.molecule.atoms, rec.molecule.coords});
      items.push_back(patched[perm[b + i]].patches);
    }
    auto zx = model.encoder().encode_batch(views).z_x;
    auto zs = model.spectrum_encoder()
                  .encode_batch(items, BatchNormMode::kEval)
                  .z_s;
    const std::size_t d = zx.cols();
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::size_t best_col = 0, best_row = 0;
      double best_col_score = -1e300, best_row_score = -1e300;
      for (std::size_t j = 0; j < batch_size; ++j) {
        double s_ij = 0.0, s_ji = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          s_ij += zx.at(i, c) * zs.at(j, c);
          s_ji += zx.at(j, c) * zs.at(i, c);
        }
        if (s_ij > best_col_score) {
          best_col_score = s_ij;
          best_col = j;
        }
        if (s_ji > best_row_score) {
          best_row_score = s_ji;
          best_row = j;
        }
      }
      hit_x += best_col == i ? 1 : 0;
      hit_s += best_row == i ? 1 : 0;
      ++trials;
    }
    ++res.batches;
  }
  res.x_to_s = static_cast<double>(hit_x) / static_cast<double>(trials);
  res.s_to_x = static_cast<double>(hit_s) / static_cast<double>(trials);
  return res;
}

// --- ablation ---------------------------------------------------------------

namespace {

std::vector<MoleculeRecord> drop_modality(const std::vector<MoleculeRecord>& in,
                                          spectra::SpectrumKind kind) {
  std::vector<MoleculeRecord> out = in;
  for (auto& rec : out) {
    if (!rec.spectra_set) continue;
    auto& s = (*rec.spectra_set)[static_cast<std::size_t>(kind)];
    std::fill(s.intensities.begin(), s.intensities.end(), 0.0);
  }
  return out;
}

AblationCell run_cell(const std::string& variant, const TrainConfig& base,
                      const std::vector<MoleculeRecord>& train,
                      const std::vector<MoleculeRecord>& holdout,
                      std::size_t stage1_steps, std::size_t stage2_steps,
                      std::size_t retrieval_batch) {
  TrainConfig s1 = base;
  s1.stage = 1;
  s1.steps = stage1_steps;
  s1.weights = {base.weights.denoising, 0.0, 0.0};
  s1.metrics_path.clear();
  TrainSession sess1 = start_stage1(s1);
  run_training(sess1, train);
  Checkpoint mid = sess1.to_checkpoint();

  TrainConfig s2 = base;
  s2.stage = 2;
  s2.steps = stage2_steps;
  s2.metrics_path.clear();
  TrainSession sess2 = resume_from(mid, s2);
  TrainResult r = run_training(sess2, train);

  AblationCell cell;
  cell.variant = variant;
  cell.final_loss = r.history.empty() ? LossBreakdown{} : r.history.back();
  cell.retrieval =
      eval_retrieval(*sess2.model, holdout, retrieval_batch, base.seed + 1);
  return cell;
}

}  // namespace

std::vector<AblationCell> run_ablation(const std::string& table,
                                       const TrainConfig& base,
                                       const std::vector<MoleculeRecord>& train,
                                       const std::vector<MoleculeRecord>& holdout,
                                       std::size_t stage1_steps,
                                       std::size_t stage2_steps,
                                       std::size_t retrieval_batch) {
  std::vector<AblationCell> cells;
  if (table == "patch") {
    // stride/patch pairs
    const std::pair<std::size_t, std::size_t> combos[] = {
        {5, 20}, {10, 20}, {15, 20}, {20, 20}, {8, 16}, {15, 30}};
    for (auto [stride, patch] : combos) {
      TrainConfig cfg = base;
      cfg.model.spec.patches = spectra::PatchSet::uniform(patch, stride);
      char label[32];
      std::snprintf(label, sizeof(label), "D%zu/P%zu", stride, patch);
      cells.push_back(run_cell(label, cfg, train, holdout, stage1_steps,
                               stage2_steps, retrieval_batch));
    }
  } else if (table == "mask") {
    for (double alpha : {0.05, 0.10, 0.15, 0.20, 0.25, 0.30}) {
      TrainConfig cfg = base;
      cfg.model.spec.mask_ratio = alpha;
      char label[32];
      std::snprintf(label, sizeof(label), "alpha=%.2f", alpha);
      cells.push_back(run_cell(label, cfg, train, holdout, stage1_steps,
                               stage2_steps, retrieval_batch));
    }
  } else if (table == "objective") {
    cells.push_back(run_cell("full", base, train, holdout, stage1_steps,
                             stage2_steps, retrieval_batch));
    TrainConfig no_mpr = base;
    no_mpr.weights.mpr = 0.0;
    cells.push_back(run_cell("wo_mpr", no_mpr, train, holdout, stage1_steps,
                             stage2_steps, retrieval_batch));
    TrainConfig denoise_only = base;
    denoise_only.weights.mpr = 0.0;
    denoise_only.weights.contrast = 0.0;
    cells.push_back(run_cell("wo_mpr_contrast", denoise_only, train, holdout,
                             stage1_steps, stage2_steps, retrieval_batch));
  } else if (table == "modality") {
    cells.push_back(run_cell("all", base, train, holdout, stage1_steps,
                             stage2_steps, retrieval_batch));
    const char* names[3] = {"drop_uv_vis", "drop_ir", "drop_raman"};
    for (std::size_t k = 0; k < 3; ++k) {
      auto train_k = drop_modality(train, spectra::kAllKinds[k]);
      auto hold_k = drop_modality(holdout, spectra::kAllKinds[k]);
      cells.push_back(run_cell(names[k], base, train_k, hold_k, stage1_steps,
                               stage2_steps, retrieval_batch));
    }
  } else {
    throw std::invalid_argument(
        "unknown ablation table: " + table +
        " (expected patch, mask, objective, or modality)");
  }
  return cells;
}

void write_ablation_csv(const std::string& table,
                        const std::vector<AblationCell>& cells,
                        std::size_t stage1_steps, std::size_t stage2_steps,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "table,variant,stage1_steps,stage2_steps,denoising,mpr,contrast,total,"
         "retrieval_x2s,retrieval_s2x\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%zu,%.8g,%.8g,%.8g,%.8g,%.4f,%.4f\n",
                  table.c_str(), c.variant.c_str(), stage1_steps, stage2_steps,
                  c.final_loss.denoising, c.final_loss.mpr, c.final_loss.contrast,
                  c.final_loss.total, c.retrieval.x_to_s, c.retrieval.s_to_x);
    out << buf;
  }
  if (!out.good()) throw std::runtime_error("failed writing " + path);
}

}  // namespace molspec::pipeline
