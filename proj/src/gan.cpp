#include "workbench/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "workbench/dedup.hpp"
#include "workbench/image.hpp"
#include "workbench/nn/loss.hpp"
#include "workbench/nn/optim.hpp"

namespace wb::gan {

using nn::Mode;
using nn::Scalar;
using nn::Tensor;
using nlohmann::json;

namespace {

constexpr int kImageSize = 32;

double clamp_prob(double p) { return std::clamp(p, nn::kProbClamp, 1.0 - nn::kProbClamp); }
bool inside_clamp(double p) { return p > nn::kProbClamp && p < 1.0 - nn::kProbClamp; }

Tensor one_hot(std::span<const int> labels, int classes) {
  Tensor t({static_cast<int>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
    t[i * classes + labels[i]] = 1.0;
  }
  return t;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (noise_length < 1 || embedding_dim < 1 || base_width < 1)
    throw ValidationError("generator dimensions must be positive");
  if (num_classes < 2) throw ValidationError("generator needs >= 2 classes");
}

void DiscriminatorSpec::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("leaky ReLU alpha must be in (0,1)");
  if (embedding_dim < 1 || base_width < 1)
    throw ValidationError("discriminator dimensions must be positive");
  if (num_classes < 2) throw ValidationError("discriminator needs >= 2 classes");
}

void GanTrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (delta < 0 || gamma_max < 0) throw ValidationError("delta and gamma_max must be >= 0");
  if (max_iterations < 0) throw ValidationError("max_iterations must be >= 0");
  if (gamma_ramp_iterations) {
    if (*gamma_ramp_iterations < 1) throw ValidationError("gamma_ramp_iterations must be >= 1");
    if (*gamma_ramp_iterations > max_iterations)
      throw ValidationError("gamma_ramp_iterations exceeds max_iterations");
  }
  if (log_interval < 1 || checksum_interval < 1)
    throw ValidationError("log and checksum intervals must be >= 1");
}

void SamplerConfig::validate() const {
  if (!(truncation > 0)) throw ValidationError("truncation must be > 0");
  if (!(std > 0)) throw ValidationError("std must be > 0");
  if (count < 0) throw ValidationError("count must be >= 0");
}

// ------------------------------------------------------------ Generator

Generator::Generator(const GeneratorSpec& spec, Rng& rng)
    : spec_(spec), embed_((spec.validate(), spec.num_classes), spec.embedding_dim, rng) {
  const int g = spec.base_width;
  const int in = spec.noise_length + spec.embedding_dim;
  auto block = [&](nn::ModulePtr conv, int channels) {
    body_.add(std::move(conv));
    body_.emplace<nn::BatchNorm2d>(channels);
    body_.emplace<nn::ReLU>();
  };
  block(std::make_unique<nn::ConvTranspose2d>(in, 4 * g, 4, 1, 0, false, rng), 4 * g);   // 4x4
  block(std::make_unique<nn::Conv2d>(4 * g, 4 * g, 3, 1, 1, false, rng), 4 * g);
  block(std::make_unique<nn::ConvTranspose2d>(4 * g, 2 * g, 4, 2, 1, false, rng), 2 * g);  // 8x8
  block(std::make_unique<nn::Conv2d>(2 * g, 2 * g, 3, 1, 1, false, rng), 2 * g);
  block(std::make_unique<nn::ConvTranspose2d>(2 * g, g, 4, 2, 1, false, rng), g);  // 16x16
  block(std::make_unique<nn::Conv2d>(g, g, 3, 1, 1, false, rng), g);
  block(std::make_unique<nn::ConvTranspose2d>(g, g, 4, 2, 1, false, rng), g);  // 32x32
  body_.emplace<nn::Conv2d>(g, 1, 3, 1, 1, true, rng);
  body_.emplace<nn::UnitTanh>();
}

Tensor Generator::generate(const Tensor& noise, std::span<const int> labels, Mode mode) {
  if (noise.rank() != 2 || noise.dim(1) != spec_.noise_length)
    throw ValidationError("generator noise must be (N, " + std::to_string(spec_.noise_length) +
                          "), got " + nn::shape_string(noise.shape()));
  batch_ = noise.dim(0);
  if (static_cast<int>(labels.size()) != batch_)
    throw ValidationError("generator: label count does not match the noise batch");
  const Tensor e = embed_.forward(one_hot(labels, spec_.num_classes), mode);
  const int nz = spec_.noise_length, ne = spec_.embedding_dim;
  Tensor x({batch_, nz + ne, 1, 1});
  for (int i = 0; i < batch_; ++i) {
    std::copy_n(noise.data() + static_cast<std::size_t>(i) * nz, nz,
                x.data() + static_cast<std::size_t>(i) * (nz + ne));
    std::copy_n(e.data() + static_cast<std::size_t>(i) * ne, ne,
                x.data() + static_cast<std::size_t>(i) * (nz + ne) + nz);
  }
  return body_.forward(x, mode);
}

Tensor Generator::forward(const Tensor&, Mode) {
  throw Error("Generator needs class labels; call generate()");
}

Tensor Generator::backward(const Tensor& grad_output) {
  const Tensor gx = body_.backward(grad_output);
  const int nz = spec_.noise_length, ne = spec_.embedding_dim;
  Tensor gz({batch_, nz}), ge({batch_, ne});
  for (int i = 0; i < batch_; ++i) {
    const Scalar* row = gx.data() + static_cast<std::size_t>(i) * (nz + ne);
    std::copy_n(row, nz, gz.data() + static_cast<std::size_t>(i) * nz);
    std::copy_n(row + nz, ne, ge.data() + static_cast<std::size_t>(i) * ne);
  }
  embed_.backward(ge);
  return gz;
}

void Generator::collect_parameters(std::vector<nn::Parameter*>& out) {
  embed_.collect_parameters(out);
  body_.collect_parameters(out);
}

void Generator::collect_buffers(std::vector<Tensor*>& out) { body_.collect_buffers(out); }

// ------------------------------------------------------------ Discriminator

Discriminator::Discriminator(const DiscriminatorSpec& spec, Rng& rng)
    : spec_(spec), embed_((spec.validate(), spec.num_classes), spec.embedding_dim, rng) {
  const int d = spec.base_width;
  body_.emplace<nn::Conv2d>(1 + spec.embedding_dim, d, 4, 2, 1, true, rng);  // 16x16
  body_.emplace<nn::LeakyReLU>(spec.alpha);
  body_.emplace<nn::Conv2d>(d, 2 * d, 4, 2, 1, false, rng);  // 8x8
  body_.emplace<nn::BatchNorm2d>(2 * d);
  body_.emplace<nn::LeakyReLU>(spec.alpha);
  body_.emplace<nn::Conv2d>(2 * d, 4 * d, 4, 2, 1, false, rng);  // 4x4
  body_.emplace<nn::BatchNorm2d>(4 * d);
  body_.emplace<nn::LeakyReLU>(spec.alpha);
  body_.emplace<nn::Conv2d>(4 * d, 4 * d, 3, 1, 1, false, rng);
  body_.emplace<nn::BatchNorm2d>(4 * d);
  body_.emplace<nn::LeakyReLU>(spec.alpha);
  body_.emplace<nn::Conv2d>(4 * d, 1, 4, 1, 0, true, rng);  // 1x1
  body_.emplace<nn::Sigmoid>();
}

Tensor Discriminator::score(const Tensor& images, std::span<const int> labels, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != kImageSize ||
      images.dim(3) != kImageSize)
    throw ValidationError("discriminator expects (N, 1, 32, 32), got " +
                          nn::shape_string(images.shape()));
  batch_ = images.dim(0);
  height_ = images.dim(2);
  width_ = images.dim(3);
  if (static_cast<int>(labels.size()) != batch_)
    throw ValidationError("discriminator: label count does not match the batch");
  const Tensor e = embed_.forward(one_hot(labels, spec_.num_classes), mode);
  const int ne = spec_.embedding_dim;
  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  Tensor x({batch_, 1 + ne, height_, width_});
  for (int i = 0; i < batch_; ++i) {
    Scalar* dst = x.data() + static_cast<std::size_t>(i) * (1 + ne) * plane;
    const Scalar* src = images.data() + static_cast<std::size_t>(i) * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = 2.0 * src[p] - 1.0;
    for (int c = 0; c < ne; ++c)
      std::fill_n(dst + (1 + c) * plane, plane, e[static_cast<std::size_t>(i) * ne + c]);
  }
  Tensor y = body_.forward(x, mode);
  y.reshape({batch_});
  return y;
}

Tensor Discriminator::forward(const Tensor&, Mode) {
  throw Error("Discriminator needs class labels; call score()");
}

Tensor Discriminator::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  g.reshape({batch_, 1, 1, 1});
  const Tensor gx = body_.backward(g);
  const int ne = spec_.embedding_dim;
  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  Tensor gimg({batch_, 1, height_, width_}), ge({batch_, ne});
  for (int i = 0; i < batch_; ++i) {
    const Scalar* src = gx.data() + static_cast<std::size_t>(i) * (1 + ne) * plane;
    Scalar* dst = gimg.data() + static_cast<std::size_t>(i) * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = 2.0 * src[p];
    for (int c = 0; c < ne; ++c) {
      const Scalar* s = src + (1 + c) * plane;
      ge[static_cast<std::size_t>(i) * ne + c] = std::accumulate(s, s + plane, 0.0);
    }
  }
  embed_.backward(ge);
  return gimg;
}

void Discriminator::collect_parameters(std::vector<nn::Parameter*>& out) {
  embed_.collect_parameters(out);
  body_.collect_parameters(out);
}

void Discriminator::collect_buffers(std::vector<Tensor*>& out) { body_.collect_buffers(out); }

// ------------------------------------------------------------ objectives

double generator_loss(std::span<const double> disc_probs, const Tensor& class_probs,
                      std::span<const int> labels, double gamma, double delta) {
  const std::size_t n = disc_probs.size();
  if (n == 0) throw ValidationError("generator_loss: empty batch");
  if (labels.size() != n || class_probs.rank() != 2 || class_probs.dim(0) != static_cast<int>(n))
    throw ValidationError("generator_loss: batch sizes differ");
  const int c = class_probs.dim(1);
  double bce = 0, cce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bce -= std::log(clamp_prob(disc_probs[i]));
    cce -= std::log(clamp_prob(class_probs[i * c + labels[i]]));
  }
  return delta * (bce / n) - gamma * (cce / n);
}

double discriminator_loss(std::span<const double> real_probs, std::span<const double> fake_probs) {
  if (real_probs.empty() || fake_probs.empty())
    throw ValidationError("discriminator_loss: empty batch");
  double real = 0, fake = 0;
  for (double p : real_probs) real -= std::log(clamp_prob(p));
  for (double p : fake_probs) fake -= std::log(1.0 - clamp_prob(p));
  return real / real_probs.size() + fake / fake_probs.size();
}

double gamma_schedule(long iteration, const GanTrainConfig& config) {
  if (iteration < 0) throw ValidationError("iteration must be >= 0");
  const long ramp = config.ramp();
  if (ramp <= 0) return config.gamma_max;
  if (iteration >= ramp) return config.gamma_max;
  return config.gamma_max * (static_cast<double>(iteration) / static_cast<double>(ramp));
}

Tensor sample_noise(const SamplerConfig& config, int dim, Rng& rng) {
  config.validate();
  if (dim < 1) throw ValidationError("noise dimension must be >= 1");
  Tensor z({config.count, dim});
  std::normal_distribution<double> normal(0.0, 1.0);
  const double bound = config.truncation;
  for (auto& v : z.values()) {
    double s;
    do s = normal(rng);
    while (std::isfinite(bound) && std::abs(s) > bound);
    v = config.mean + config.std * s;
  }
  return z;
}

namespace {

struct GeneratorPass {
  GeneratorObjective objective;
  Tensor disc_probs;
  Tensor class_probs;
};

GeneratorPass generator_pass(Generator& gen, Discriminator& disc, aux::Classifier* classifier,
                             const Tensor& noise, std::span<const int> labels, double gamma,
                             double delta, Tensor* images_out) {
  GeneratorPass pass;
  Tensor images = gen.generate(noise, labels, Mode::train);
  pass.disc_probs = disc.score(images, labels, Mode::train);
  const std::size_t n = labels.size();
  if (classifier) {
    pass.class_probs = nn::softmax(classifier->forward(images, Mode::eval));
  } else {
    // Uniform stand-in; contributes only through gamma, which is unused.
    const int c = gen.spec().num_classes;
    pass.class_probs = Tensor({static_cast<int>(n), c}, 1.0 / c);
  }
  auto& o = pass.objective;
  o.loss = generator_loss(pass.disc_probs.values(), pass.class_probs, labels,
                          classifier ? gamma : 0.0, delta);
  const int c = pass.class_probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    o.bce -= std::log(clamp_prob(pass.disc_probs[i]));
    o.cce -= std::log(clamp_prob(pass.class_probs[i * c + labels[i]]));
  }
  o.bce /= n;
  o.cce /= n;
  if (images_out) *images_out = std::move(images);
  return pass;
}

}  // namespace

GeneratorObjective generator_objective(Generator& gen, Discriminator& disc,
                                       aux::Classifier* classifier, const Tensor& noise,
                                       std::span<const int> labels, double gamma, double delta) {
  return generator_pass(gen, disc, classifier, noise, labels, gamma, delta, nullptr).objective;
}

GeneratorObjective generator_gradient(Generator& gen, Discriminator& disc,
                                      aux::Classifier* classifier, const Tensor& noise,
                                      std::span<const int> labels, double gamma, double delta) {
  Tensor images;
  auto pass = generator_pass(gen, disc, classifier, noise, labels, gamma, delta, &images);
  const std::size_t n = labels.size();

  Tensor g_disc({static_cast<int>(n)});
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pass.disc_probs[i];
    g_disc[i] = inside_clamp(p) ? -delta / (static_cast<double>(n) * p) : 0.0;
  }
  Tensor g_images = disc.backward(g_disc);

  if (classifier && gamma != 0.0) {
    const int c = pass.class_probs.dim(1);
    Tensor g_probs(pass.class_probs.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const double q = pass.class_probs[i * c + labels[i]];
      if (inside_clamp(q)) g_probs[i * c + labels[i]] = gamma / (static_cast<double>(n) * q);
    }
    const Tensor g_class = classifier->backward(nn::softmax_backward(pass.class_probs, g_probs));
    for (std::size_t k = 0; k < g_images.size(); ++k) g_images[k] += g_class[k];
  }
  gen.backward(g_images);
  return pass.objective;
}

// ------------------------------------------------------------ training

std::string GanBundle::version() {
  if (!generator) throw Error("empty GAN bundle");
  return nn::checksum(*generator).substr(0, 8);
}

namespace {

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch draw_real(const GanDataset& data, std::vector<std::size_t>& order, std::size_t& cursor,
                int batch_size, Rng& rng) {
  Batch b;
  std::vector<std::size_t> picks;
  for (int i = 0; i < batch_size; ++i) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    picks.push_back(order[cursor++]);
  }
  b.images = aux::make_batch(data.samples, picks);
  for (auto p : picks) b.labels.push_back(data.samples[p].label);
  return b;
}

std::vector<int> random_labels(int n, int classes, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<int> out(n);
  for (auto& l : out) l = pick(rng);
  return out;
}

}  // namespace

GanResult train_gan(const GanDataset& data, aux::Classifier& classifier,
                    const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec,
                    const GanTrainConfig& config) {
  config.validate();
  gen_spec.validate();
  disc_spec.validate();
  const int classes = static_cast<int>(data.classes.size());
  if (data.samples.empty()) throw ValidationError("GAN training set is empty");
  if (gen_spec.num_classes != classes || disc_spec.num_classes != classes ||
      classifier.config().num_classes != classes)
    throw ValidationError("class counts of dataset, networks and classifier differ");
  std::vector<bool> seen(classes, false);
  for (const auto& s : data.samples) {
    if (s.label < 0 || s.label >= classes) throw ValidationError("sample label out of range", s.id);
    if (s.image.height != kImageSize || s.image.width != kImageSize || s.image.channels != 1)
      throw ValidationError("GAN samples must be 32x32x1", s.id);
    seen[s.label] = true;
  }
  for (int c = 0; c < classes; ++c)
    if (!seen[c]) throw ValidationError("class '" + data.classes[c] + "' has no samples");

  GanResult result;
  auto& bundle = result.bundle;
  bundle.generator_spec = gen_spec;
  bundle.discriminator_spec = disc_spec;
  bundle.train_config = config;
  bundle.classes = data.classes;

  Rng init_rng = derive_rng({config.seed, 1});
  bundle.generator = std::make_unique<Generator>(gen_spec, init_rng);
  bundle.discriminator = std::make_unique<Discriminator>(disc_spec, init_rng);
  Generator& gen = *bundle.generator;
  Discriminator& disc = *bundle.discriminator;

  std::vector<bool> trainable_before;
  for (auto* p : classifier.parameters()) trainable_before.push_back(p->trainable);
  classifier.set_trainable(false);
  const std::string frozen = nn::checksum(classifier);
  bundle.classifier_checksum = frozen;
  auto verify_frozen = [&](long it) {
    if (nn::checksum(classifier) != frozen)
      throw InvariantError("classifier weights changed during GAN training (iteration " +
                           std::to_string(it) + ")");
  };

  nn::AdamOptions opts{config.learning_rate, config.beta1, config.beta2, 1e-8};
  nn::Adam gen_opt(gen.parameters(), opts);
  nn::Adam disc_opt(disc.parameters(), opts);

  Rng rng = derive_rng({config.seed, 2});
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const SamplerConfig train_noise{0.0, 1.0, std::numeric_limits<double>::infinity(),
                                  config.batch_size};

  nn::StateSnapshot good_gen = nn::snapshot(gen), good_disc = nn::snapshot(disc);
  long good_iterations = 0;
  aux::Classifier* feedback = config.classifier_feedback ? &classifier : nullptr;

  long it = 0;
  for (; it < config.max_iterations; ++it) {
    // Discriminator: real batch then fake batch, one optimizer step.
    disc_opt.zero_grad();
    const Batch real = draw_real(data, order, cursor, config.batch_size, rng);
    const Tensor p_real = disc.score(real.images, real.labels, Mode::train);
    Tensor g({config.batch_size});
    for (int i = 0; i < config.batch_size; ++i)
      g[i] = inside_clamp(p_real[i]) ? -1.0 / (config.batch_size * p_real[i]) : 0.0;
    disc.backward(g);

    const Tensor z_d = sample_noise(train_noise, gen_spec.noise_length, rng);
    const auto fake_labels = random_labels(config.batch_size, classes, rng);
    const Tensor fake = gen.generate(z_d, fake_labels, Mode::train);
    const Tensor p_fake = disc.score(fake, fake_labels, Mode::train);
    for (int i = 0; i < config.batch_size; ++i)
      g[i] = inside_clamp(p_fake[i]) ? 1.0 / (config.batch_size * (1.0 - p_fake[i])) : 0.0;
    disc.backward(g);
    const double d_loss = discriminator_loss(p_real.values(), p_fake.values());
    disc_opt.step();

    // Generator against the updated discriminator.
    const double gamma = gamma_schedule(it, config);
    gen_opt.zero_grad();
    disc.zero_grad();
    const Tensor z_g = sample_noise(train_noise, gen_spec.noise_length, rng);
    const auto gen_labels = random_labels(config.batch_size, classes, rng);
    const auto obj =
        generator_gradient(gen, disc, feedback, z_g, gen_labels, gamma, config.delta);

    if (!std::isfinite(obj.loss) || !std::isfinite(d_loss)) {
      nn::restore(gen, good_gen);
      nn::restore(disc, good_disc);
      result.aborted = true;
      result.message = "non-finite loss at iteration " + std::to_string(it) +
                       "; restored weights from iteration " + std::to_string(good_iterations);
      it = good_iterations;
      break;
    }
    gen_opt.step();

    if ((it + 1) % config.log_interval == 0 || it == 0 || it + 1 == config.max_iterations) {
      result.history.push_back({it + 1, obj.loss, d_loss, gamma});
      good_gen = nn::snapshot(gen);
      good_disc = nn::snapshot(disc);
      good_iterations = it + 1;
    }
    if ((it + 1) % config.checksum_interval == 0) verify_frozen(it + 1);
  }
  verify_frozen(it);
  auto params = classifier.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->trainable = trainable_before[i];
  bundle.iterations = it;
  return result;
}

Tensor generate_images(GanBundle& bundle, int label, const SamplerConfig& sampler,
                       std::uint64_t seed) {
  if (!bundle.generator) throw Error("empty GAN bundle");
  if (label < 0 || label >= bundle.generator_spec.num_classes)
    throw ValidationError("class index " + std::to_string(label) + " out of range");
  Rng rng = derive_rng({seed, static_cast<std::uint64_t>(label)});
  const Tensor z = sample_noise(sampler, bundle.generator_spec.noise_length, rng);
  const std::vector<int> labels(sampler.count, label);
  return bundle.generator->generate(z, labels, Mode::eval);
}

SynthesisResult synthesize(GanBundle& bundle, DatasetManifest manifest, int label, int count,
                           const SamplerConfig& sampler, std::uint64_t seed,
                           const std::filesystem::path& manifest_dir,
                           const std::string& image_subdir) {
  SynthesisResult out;
  if (count < 0) throw ValidationError("count must be >= 0");
  if (label < 0 || label >= manifest.num_classes())
    throw ValidationError("class index " + std::to_string(label) + " out of range");
  if (bundle.classes != manifest.classes)
    throw ValidationError("bundle classes do not match the manifest");
  if (count == 0) {
    out.manifest = std::move(manifest);
    return out;
  }
  const auto budget = validate_size_constraint(manifest);
  const long after = static_cast<long>(budget.train + budget.validation) + count;
  if (after >= manifest.n_max)
    throw BudgetError("synthesizing " + std::to_string(count) +
                      " samples would give |train| + |validation| = " + std::to_string(after) +
                      ", not below n_max = " + std::to_string(manifest.n_max));

  const std::string version = bundle.version();
  SamplerConfig s = sampler;
  s.count = count;
  const Tensor images = generate_images(bundle, label, s, seed);
  const auto& cls = manifest.class_name(label);
  std::filesystem::create_directories(manifest_dir / image_subdir);
  const std::size_t plane = static_cast<std::size_t>(kImageSize) * kImageSize;
  for (int i = 0; i < count; ++i) {
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "%05d", i);
    const std::string id = "gan_" + version + "_" + cls + "_s" + std::to_string(seed) + "_" + suffix;
    if (manifest.contains(id)) throw ConflictError("sample '" + id + "' already exists", id);
    ImageTensor t(kImageSize, kImageSize, 1);
    t.pixels.assign(images.data() + i * plane, images.data() + (i + 1) * plane);
    PngWriteOptions png;
    png.text = {{"provenance", "gan:" + version}};
    const auto bytes = encode_png(to_image8(t), png);
    const std::string rel = image_subdir + "/" + id + ".png";
    write_file_bytes(manifest_dir / rel, bytes);

    SampleRecord r;
    r.id = id;
    r.image_path = rel;
    const auto h = dedup::compute_hashes_from_bytes(bytes, dedup::DedupConfig{});
    r.byte_hash = h.byte_hash;
    r.pixel_hash = h.pixel_hash;
    r.phash = h.phash;
    r.label = label;
    r.status = Status::certified;
    r.split = Split::train;
    r.provenance = "gan:" + version + ":seed=" + std::to_string(seed);
    manifest.add(std::move(r));
    out.ids.push_back(id);
  }
  require_size_constraint(manifest, "synthesize");
  out.manifest = std::move(manifest);
  return out;
}

// ------------------------------------------------------------ persistence

namespace {

constexpr char kBundleMagic[8] = {'W', 'B', 'G', 'A', 'N', '\0', '\0', '\0'};
constexpr std::uint32_t kBundleFormat = 1;

json header_json(const GanBundle& b) {
  const auto& g = b.generator_spec;
  const auto& d = b.discriminator_spec;
  const auto& c = b.train_config;
  json cfg{{"batch_size", c.batch_size},   {"learning_rate", c.learning_rate},
           {"beta1", c.beta1},             {"beta2", c.beta2},
           {"delta", c.delta},             {"gamma_max", c.gamma_max},
           {"max_iterations", c.max_iterations}, {"log_interval", c.log_interval},
           {"checksum_interval", c.checksum_interval},
           {"classifier_feedback", c.classifier_feedback}, {"seed", c.seed}};
  cfg["gamma_ramp_iterations"] =
      c.gamma_ramp_iterations ? json(*c.gamma_ramp_iterations) : json(nullptr);
  return {{"generator",
           {{"noise_length", g.noise_length},
            {"embedding_dim", g.embedding_dim},
            {"base_width", g.base_width},
            {"num_classes", g.num_classes}}},
          {"discriminator",
           {{"alpha", d.alpha},
            {"embedding_dim", d.embedding_dim},
            {"base_width", d.base_width},
            {"num_classes", d.num_classes}}},
          {"train", cfg},
          {"classes", b.classes},
          {"classifier_checksum", b.classifier_checksum},
          {"iterations", b.iterations}};
}

}  // namespace

void save_bundle(GanBundle& bundle, const std::filesystem::path& path) {
  if (!bundle.generator || !bundle.discriminator) throw Error("empty GAN bundle");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::string header = header_json(bundle).dump();
    out.write(kBundleMagic, sizeof kBundleMagic);
    out.write(reinterpret_cast<const char*>(&kBundleFormat), sizeof kBundleFormat);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(len));
    nn::write_state(out, *bundle.generator);
    nn::write_state(out, *bundle.discriminator);
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

GanBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open GAN bundle " + path.string());
  char magic[8];
  std::uint32_t format = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&format), sizeof format);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kBundleMagic, sizeof magic) != 0)
    throw ParseError(path.string() + ": not a GAN bundle");
  if (format != kBundleFormat)
    throw ParseError(path.string() + ": unsupported bundle format " + std::to_string(format));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  GanBundle b;
  try {
    const json h = json::parse(text);
    const auto& g = h.at("generator");
    b.generator_spec = {g.at("noise_length"), g.at("embedding_dim"), g.at("base_width"),
                        g.at("num_classes")};
    const auto& d = h.at("discriminator");
    b.discriminator_spec = {d.at("alpha"), d.at("embedding_dim"), d.at("base_width"),
                            d.at("num_classes")};
    const auto& c = h.at("train");
    auto& t = b.train_config;
    t.batch_size = c.at("batch_size");
    t.learning_rate = c.at("learning_rate");
    t.beta1 = c.at("beta1");
    t.beta2 = c.at("beta2");
    t.delta = c.at("delta");
    t.gamma_max = c.at("gamma_max");
    t.max_iterations = c.at("max_iterations");
    t.log_interval = c.at("log_interval");
    t.checksum_interval = c.at("checksum_interval");
    t.classifier_feedback = c.at("classifier_feedback");
    t.seed = c.at("seed");
    if (!c.at("gamma_ramp_iterations").is_null())
      t.gamma_ramp_iterations = c.at("gamma_ramp_iterations").get<long>();
    b.classes = h.at("classes").get<std::vector<std::string>>();
    b.classifier_checksum = h.at("classifier_checksum");
    b.iterations = h.at("iterations");
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Rng rng(0);
  b.generator = std::make_unique<Generator>(b.generator_spec, rng);
  b.discriminator = std::make_unique<Discriminator>(b.discriminator_spec, rng);
  nn::read_state(in, *b.generator);
  nn::read_state(in, *b.discriminator);
  return b;
}

}  // namespace wb::gan
