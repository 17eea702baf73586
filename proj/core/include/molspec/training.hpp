#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "molspec/checkpoint.hpp"
#include "molspec/dataset.hpp"
#include "molspec/encoder3d.hpp"
#include "molspec/objectives.hpp"
#include "molspec/specformer.hpp"

namespace molspec::pipeline {

struct ModelConfig {
  specformer::SpecFormerConfig spec;
  encoder3d::Encoder3DConfig enc;

  static ModelConfig paper();
  static ModelConfig desk();
  static ModelConfig toy();
};

// The two jointly trained encoders plus their persistent state, with a
// canonical tensor naming used by gradient checks and checkpoints.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  encoder3d::Encoder3D& encoder() { return *enc_; }
  specformer::SpecFormer& spectrum_encoder() { return *spec_; }

  std::vector<std::pair<std::string, numerics::Tensor>> trainable();
  void zero_grad();
  void sgd_step(double lr);

  // Trainable tensors plus batch-norm running statistics.
  std::vector<std::pair<std::string, numerics::Tensor>> state_tensors();
  void load_state(const Checkpoint& ckpt);

 private:
  ModelConfig cfg_;
  std::unique_ptr<encoder3d::Encoder3D> enc_;
  std::unique_ptr<specformer::SpecFormer> spec_;
};

struct TrainConfig {
  int stage = 1;
  std::size_t steps = 300;
  std::size_t batch_size = 128;  // published default; desk runs use 16
  double lr = 1e-3;
  std::uint64_t seed = 0;
  objectives::LossWeights weights;
  double noise_tau = 0.04;
  ModelConfig model;
  std::string metrics_path;  // per-step CSV when non-empty
  std::string config_json;   // run-config snapshot stored in checkpoints

  void validate() const;
};

struct TrainSession {
  std::unique_ptr<Model> model;
  TrainConfig cfg;
  std::uint64_t step = 0;         // completed steps in the current stage
  std::uint64_t global_step = 0;  // across stages; drives all RNG counters

  Checkpoint to_checkpoint() const;
};

// Stage 1: fresh model, denoising objective only.
TrainSession start_stage1(const TrainConfig& cfg);
// Stage 2 from a stage-1 checkpoint, or resumption of either stage.
TrainSession resume_from(const Checkpoint& ckpt, const TrainConfig& cfg);

struct TrainResult {
  std::vector<objectives::LossBreakdown> history;
};

// Runs until cfg.steps, appending one row per step to the metrics CSV.
TrainResult run_training(TrainSession& session,
                         const std::vector<MoleculeRecord>& dataset);

struct RetrievalResult {
  double x_to_s = 0.0;  // structure -> spectra top-1 accuracy
  double s_to_x = 0.0;
  std::size_t batches = 0;
};

RetrievalResult eval_retrieval(Model& model,
                               const std::vector<MoleculeRecord>& records,
                               std::size_t batch_size, std::uint64_t seed);

// --- ablation harness ------------------------------------------------------

struct AblationCell {
  std::string variant;
  objectives::LossBreakdown final_loss;
  RetrievalResult retrieval;
};

// Tables: "patch" (stride/patch pairs), "mask" (mask ratios), "objective"
// (dropped sub-objectives), "modality" (zero-filled spectrum streams).
std::vector<AblationCell> run_ablation(const std::string& table,
                                       const TrainConfig& base,
                                       const std::vector<MoleculeRecord>& train,
                                       const std::vector<MoleculeRecord>& holdout,
                                       std::size_t stage1_steps,
                                       std::size_t stage2_steps,
                                       std::size_t retrieval_batch);

void write_ablation_csv(const std::string& table,
                        const std::vector<AblationCell>& cells,
                        std::size_t stage1_steps, std::size_t stage2_steps,
                        const std::string& path);

}  // namespace molspec::pipeline
