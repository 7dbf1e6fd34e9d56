#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrr/checkpoint.hpp"
#include "lrr/dataio.hpp"
#include "lrr/model.hpp"

namespace lrr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StageSpec {
  std::vector<std::size_t> branches{32};  // active branch strides
  std::size_t iterations = 0;
  double lr = 0.01;
  bool de = false;  // dilation/erosion objectives on
};

struct TrainConfig {
  std::string train_manifest;
  std::string checkpoint = "lrr.lrrc";
  std::string loss_csv;
  std::string bases;   // optional extract-bases container; PCA runs in-process otherwise
  std::string resume;  // optional checkpoint to continue from

  std::size_t classes = 5;
  std::uint64_t seed = 1;
  std::vector<StageSpec> stages{{{32}, 1500, 1e-2, false}, {{32, 16, 8, 4}, 1500, 1e-3, true}};
  std::size_t batch = 8;
  double momentum = 0.9;
  double weight_decay = 0.0005;

  bool augment = true;
  AugmentSpec aug{96, 224, 128, 0};

  int de_radius = 10;
  double de_weight = 1.0;
  std::array<double, 4> branch_weights{1, 1, 1, 1};
  bool supervise_raw = false;

  bool masking = true;
  double tau = 0.0;
  std::size_t mask_pool = 9;
  std::size_t basis_count = 10;
  std::size_t pca_patches = 10000;
  double pca_min_coverage = 0.02;
  bool learn_bases = false;

  std::array<std::size_t, 4> widths{16, 32, 64, 128};
  std::size_t convs_per_stage = 2;

  bool deterministic = true;
  std::string precision = "f32";
  std::size_t checkpoint_every = 0;

  void validate() const;
  ModelConfig model_config() const;
  /// Canonical key = value text; its FNV-1a hash is the config digest.
  std::string canonical() const;
  std::uint64_t digest() const;
  std::size_t total_iterations() const;
};

/// Plain-text `key = value` lines, `#` comments. Unknown keys throw ConfigError.
TrainConfig parse_config(std::istream& is);
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);

/// v <- m v - lr (g + wd p); p <- p + v. Throws NumericError on non-finite grads.
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr,
              double momentum, double weight_decay);

template <typename T>
struct OptimState {
  std::map<std::string, Tensor<T>> velocity;
};

/// Per-class PCA bases extracted from training truth.
std::vector<PcaBasis> extract_bases(std::span<const Sample> samples, std::size_t classes,
                                    std::size_t K, std::size_t count, std::size_t patch,
                                    double min_coverage, std::uint64_t seed);
Checkpoint bases_to_checkpoint(const std::vector<PcaBasis>& bases);
std::vector<PcaBasis> bases_from_checkpoint(const Checkpoint& ck);

template <typename T>
Checkpoint to_checkpoint(const ModelParams<T>& params, const ModelConfig& config,
                         const OptimState<T>* optim, std::uint64_t iteration, std::uint64_t digest);
ModelConfig model_config_from_checkpoint(const Checkpoint& ck);
template <typename T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ck, const ModelConfig& config);

struct IterationLog {
  std::uint64_t iteration = 0;
  std::size_t stage = 0;  // 1-based
  std::size_t active_levels = 1;
  bool de = false;
  LossReport report;
};

std::string loss_csv_header();
std::string loss_csv_row(const IterationLog& log);

/// Stage-wise SGD over an in-memory training set. Every random draw is keyed
/// by (seed, iteration), so a run restored from a checkpoint continues
/// exactly as the uninterrupted run would.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<Sample> train, ModelParams<T> init);

  /// PCA bases from the training truth (or config.bases), then init_model.
  static ModelParams<T> initial_params(const TrainConfig& config, std::span<const Sample> train);

  IterationLog step();
  /// Steps until `iteration` reaches `until` (or the schedule ends).
  void run(std::uint64_t until, const std::function<void(const IterationLog&)>& on_step = {});

  Checkpoint checkpoint() const;
  /// Throws ConfigError when the checkpoint's config digest differs, unless
  /// check_digest is false.
  void restore(const Checkpoint& ck, bool check_digest = true);

  std::uint64_t iteration() const { return iteration_; }
  /// 0-based stage index for the next step; stages().size() when finished.
  std::size_t current_stage() const;
  const ModelParams<T>& params() const { return params_; }
  const TrainConfig& config() const { return config_; }
  /// Changing the config (e.g. masking) mid-run is allowed; the model
  /// structure must stay the same.
  void set_config(TrainConfig config);

 private:
  TrainConfig config_;
  ModelConfig model_;
  std::vector<Sample> train_;
  ModelParams<T> params_;
  OptimState<T> optim_;
  std::uint64_t iteration_ = 0;
};

struct TrainResult {
  std::uint64_t iterations = 0;
  std::vector<IterationLog> log;
  std::string checkpoint;
};

/// Full CLI training flow: load data, initialise or resume, run every stage,
/// write checkpoints (stage boundaries, every checkpoint_every iterations,
/// final) and the loss CSV. Divergence writes <checkpoint>.last-good and throws.
TrainResult train(const TrainConfig& config);

}  // namespace lrr
