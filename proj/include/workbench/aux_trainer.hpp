#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "workbench/augment.hpp"
#include "workbench/image.hpp"
#include "workbench/manifest.hpp"
#include "workbench/nn/layers.hpp"

namespace wb::aux {

enum class Architecture { truncated_resnet50, small_cnn };
std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

struct ModelConfig {
  Architecture architecture = Architecture::small_cnn;
  int input_height = 32;
  int input_width = 32;
  int channels = 1;
  int num_classes = 10;
  /// ResNet50 cut point; conv2_block1_out .. conv2_block3_out.
  std::string truncation_layer = "conv2_block3_out";
  /// Base channel width; 0 means 64 for the ResNet stem, 16 for small_cnn.
  int width = 0;
  std::uint64_t init_seed = 0;

  void validate() const;
  int effective_width() const;
};

/// Convolutional feature extractor followed by global average pooling and a
/// dense softmax head. forward() returns logits.
class Classifier : public nn::Module {
 public:
  explicit Classifier(ModelConfig config);

  nn::Tensor forward(const nn::Tensor& input, nn::Mode mode) override;
  nn::Tensor backward(const nn::Tensor& grad_output) override;
  std::string name() const override { return "Classifier"; }
  void collect_parameters(std::vector<nn::Parameter*>& out) override;
  void collect_buffers(std::vector<nn::Tensor*>& out) override;

  /// Softmax probabilities (N, C) in eval mode.
  nn::Tensor predict(const nn::Tensor& input);

  const ModelConfig& config() const noexcept { return config_; }
  nn::Sequential& features() { return features_; }
  nn::Dense& head() { return *head_; }

 private:
  ModelConfig config_;
  nn::Sequential features_;
  nn::GlobalAvgPool pool_;
  std::unique_ptr<nn::Dense> head_;
};

/// Throws ValidationError for an unknown architecture or truncation layer.
Classifier build_model(const ModelConfig& config);

struct Sample {
  std::string id;
  ImageTensor image;  // canonical size, values in [0,1]
  int label = 0;
};

/// Stacks images into an (N, C, H, W) batch.
nn::Tensor make_batch(std::span<const Sample> samples, std::span<const std::size_t> order);
nn::Tensor make_batch(std::span<const ImageTensor> images);

struct EarlyStopping {
  bool enabled = true;
  int patience = 20;
  std::string monitor = "val_accuracy";  // or "val_loss"
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  double learning_rate = 1e-3;
  EarlyStopping early_stopping{};
  bool augment_enabled = true;
  augment::AugmentConfig augment{};
  std::uint64_t seed = 0;
  long n_max = 10000;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;  // over augmented training batches
  double val_loss = 0;
  double val_accuracy = 0;
};

struct EvalStats {
  double loss = 0;
  double accuracy = 0;
  std::size_t count = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;  // index into history of the returned weights
  bool stopped_early = false;
  EvalStats train_eval;       // returned weights on un-augmented train data
  EvalStats validation_eval;  // returned weights on validation data
  std::vector<std::string> warnings;
};

EvalStats evaluate(Classifier& model, std::span<const Sample> samples, int batch_size = 64);

/// Adam on softmax cross-entropy. With early stopping the best-validation
/// weights are restored before returning.
TrainResult train(Classifier& model, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& config);

struct LossEntry {
  std::string id;
  int label = 0;
  double loss = 0;
  int predicted = 0;
  double confidence = 0;
  std::vector<double> probabilities;
  std::optional<std::string> error;  // set when the sample could not be scored

  bool ok() const noexcept { return !error.has_value(); }
};

struct LossReport {
  std::vector<std::string> classes;
  std::vector<LossEntry> entries;
};

LossReport infer_losses(Classifier& model, std::span<const Sample> samples, int batch_size = 64);

/// Loads each record's image; undecodable ones become error entries.
LossReport infer_losses(Classifier& model, const DatasetManifest& manifest,
                        const std::vector<std::string>& ids, const std::filesystem::path& image_root);

std::string loss_report_to_json(const LossReport& report);
LossReport loss_report_from_json(const std::string& text);

/// Canonical-size samples for the given ids, labels from the manifest.
std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                 const std::filesystem::path& image_root, const ModelConfig& config);

void save_model(Classifier& model, const std::filesystem::path& path);
Classifier load_model(const std::filesystem::path& path);

}  // namespace wb::aux
