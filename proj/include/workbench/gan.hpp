#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "workbench/aux_trainer.hpp"
#include "workbench/manifest.hpp"
#include "workbench/nn/layers.hpp"

namespace wb::gan {

struct GeneratorSpec {
  int noise_length = 64;
  int embedding_dim = 16;
  int base_width = 64;
  int num_classes = 10;

  void validate() const;
};

struct DiscriminatorSpec {
  double alpha = 0.2;
  int embedding_dim = 16;
  int base_width = 64;
  int num_classes = 10;

  void validate() const;
};

struct GanTrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double delta = 1.0;
  double gamma_max = 0.5;
  std::optional<long> gamma_ramp_iterations;  // unset: max_iterations
  long max_iterations = 200000;
  long log_interval = 100;
  long checksum_interval = 1000;
  /// When false the classifier is never consulted: a plain conditional GAN.
  bool classifier_feedback = true;
  std::uint64_t seed = 0;

  void validate() const;
  long ramp() const { return gamma_ramp_iterations.value_or(max_iterations); }
};

struct SamplerConfig {
  double mean = 0.0;
  double std = 1.0;
  double truncation = 0.7;  // in units of std; infinity disables truncation
  int count = 1;

  void validate() const;
};

/// Eight convolutional layers from (noise ++ label embedding) to a 32x32x1
/// image in [0,1].
class Generator : public nn::Module {
 public:
  Generator(const GeneratorSpec& spec, Rng& rng);

  /// noise (N, noise_length); returns (N, 1, 32, 32).
  nn::Tensor generate(const nn::Tensor& noise, std::span<const int> labels, nn::Mode mode);
  /// Returns the gradient w.r.t. the noise.
  nn::Tensor backward(const nn::Tensor& grad_output) override;
  nn::Tensor forward(const nn::Tensor& input, nn::Mode mode) override;  // unconditioned: label 0
  std::string name() const override { return "Generator"; }
  void collect_parameters(std::vector<nn::Parameter*>& out) override;
  void collect_buffers(std::vector<nn::Tensor*>& out) override;

  const GeneratorSpec& spec() const noexcept { return spec_; }
  int conv_layers() const noexcept { return 8; }

 private:
  GeneratorSpec spec_;
  nn::Dense embed_;  // over one-hot labels
  nn::Sequential body_;
  int batch_ = 0;
};

/// Five convolutional layers over the image (mapped to [-1,1]) stacked with
/// broadcast label-embedding planes; outputs P(real) per sample.
class Discriminator : public nn::Module {
 public:
  Discriminator(const DiscriminatorSpec& spec, Rng& rng);

  /// images (N, 1, 32, 32) in [0,1]; returns (N) probabilities.
  nn::Tensor score(const nn::Tensor& images, std::span<const int> labels, nn::Mode mode);
  /// grad (N) w.r.t. the probabilities; returns the gradient w.r.t. images.
  nn::Tensor backward(const nn::Tensor& grad_output) override;
  nn::Tensor forward(const nn::Tensor& input, nn::Mode mode) override;
  std::string name() const override { return "Discriminator"; }
  void collect_parameters(std::vector<nn::Parameter*>& out) override;
  void collect_buffers(std::vector<nn::Tensor*>& out) override;

  const DiscriminatorSpec& spec() const noexcept { return spec_; }
  int conv_layers() const noexcept { return 5; }

 private:
  DiscriminatorSpec spec_;
  nn::Dense embed_;
  nn::Sequential body_;
  int batch_ = 0, height_ = 0, width_ = 0;
};

/// delta * mean(-ln p_disc) - gamma * mean(-ln p_class[label]), with
/// probabilities clamped to [1e-7, 1 - 1e-7].
double generator_loss(std::span<const double> disc_probs, const nn::Tensor& class_probs,
                      std::span<const int> labels, double gamma, double delta);

/// mean(-ln p_real) + mean(-ln(1 - p_fake)), clamped as above.
double discriminator_loss(std::span<const double> real_probs, std::span<const double> fake_probs);

double gamma_schedule(long iteration, const GanTrainConfig& config);

/// (count, dim) coordinates drawn from N(mean, std^2) conditioned on
/// |z - mean| <= truncation * std by rejection.
nn::Tensor sample_noise(const SamplerConfig& config, int dim, Rng& rng);

struct GeneratorObjective {
  double loss = 0;
  double bce = 0;  // mean(-ln p_disc)
  double cce = 0;  // mean(-ln p_class[label])
};

/// Forward pass of the generator objective for a fixed noise batch. Both
/// networks run in train mode; the classifier in eval mode.
GeneratorObjective generator_objective(Generator& gen, Discriminator& disc,
                                       aux::Classifier* classifier, const nn::Tensor& noise,
                                       std::span<const int> labels, double gamma, double delta);

/// As generator_objective, then backpropagates into the generator's
/// parameter gradients (accumulating; zero them first).
GeneratorObjective generator_gradient(Generator& gen, Discriminator& disc,
                                      aux::Classifier* classifier, const nn::Tensor& noise,
                                      std::span<const int> labels, double gamma, double delta);

struct GanLogEntry {
  long iteration = 0;
  double generator_loss = 0;
  double discriminator_loss = 0;
  double gamma = 0;
};

struct GanBundle {
  GeneratorSpec generator_spec;
  DiscriminatorSpec discriminator_spec;
  GanTrainConfig train_config;
  std::vector<std::string> classes;
  std::string classifier_checksum;
  long iterations = 0;
  std::unique_ptr<Generator> generator;
  std::unique_ptr<Discriminator> discriminator;

  /// First 8 hex digits of the generator state checksum.
  std::string version();
};

struct GanResult {
  GanBundle bundle;
  std::vector<GanLogEntry> history;
  bool aborted = false;  // non-finite loss; bundle holds the last good weights
  std::string message;
};

struct GanDataset {
  std::vector<aux::Sample> samples;  // 32x32x1, values in [0,1]
  std::vector<std::string> classes;
};

/// Alternating discriminator / generator updates against a frozen
/// classifier. Throws InvariantError if the classifier's weights change.
GanResult train_gan(const GanDataset& data, aux::Classifier& classifier,
                    const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec,
                    const GanTrainConfig& config);

/// Generator output for one class, eval mode; (count, 1, 32, 32).
nn::Tensor generate_images(GanBundle& bundle, int label, const SamplerConfig& sampler,
                           std::uint64_t seed);

struct SynthesisResult {
  DatasetManifest manifest;
  std::vector<std::string> ids;
};

/// Writes `count` PNGs for `label` under manifest_dir / image_subdir and adds
/// certified train records carrying provenance. Checks the size limit
/// before writing anything (BudgetError).
SynthesisResult synthesize(GanBundle& bundle, DatasetManifest manifest, int label, int count,
                           const SamplerConfig& sampler, std::uint64_t seed,
                           const std::filesystem::path& manifest_dir,
                           const std::string& image_subdir = "synthetic");

void save_bundle(GanBundle& bundle, const std::filesystem::path& path);
GanBundle load_bundle(const std::filesystem::path& path);

}  // namespace wb::gan
