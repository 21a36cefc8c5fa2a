#include "workbench/aux_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "workbench/nn/loss.hpp"
#include "workbench/nn/optim.hpp"

namespace wb::aux {

using nlohmann::json;
using nn::Mode;
using nn::Tensor;

std::string to_string(Architecture a) {
  return a == Architecture::truncated_resnet50 ? "truncated_resnet50" : "small_cnn";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "truncated_resnet50") return Architecture::truncated_resnet50;
  if (s == "small_cnn") return Architecture::small_cnn;
  throw ValidationError("unknown architecture '" + s + "'");
}

namespace {

int resnet_blocks(const std::string& layer) {
  if (layer == "conv2_block1_out") return 1;
  if (layer == "conv2_block2_out") return 2;
  if (layer == "conv2_block3_out") return 3;
  throw ValidationError("unsupported truncation layer '" + layer + "'");
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (input_height <= 0 || input_width <= 0 || channels <= 0)
    throw ValidationError("input dimensions must be positive");
  if (width < 0) throw ValidationError("width must be >= 0");
  if (architecture == Architecture::truncated_resnet50) resnet_blocks(truncation_layer);
}

int ModelConfig::effective_width() const {
  if (width > 0) return width;
  return architecture == Architecture::truncated_resnet50 ? 64 : 16;
}

Classifier::Classifier(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng = derive_rng({config_.init_seed, 0xC1A55ULL});
  const int w = config_.effective_width();
  int out_channels = 0;
  if (config_.architecture == Architecture::small_cnn) {
    int in = config_.channels;
    const int widths[] = {w, 2 * w, 4 * w, 4 * w};
    for (int i = 0; i < 4; ++i) {
      features_.emplace<nn::Conv2d>(in, widths[i], 3, 1, 1, false, rng);
      features_.emplace<nn::BatchNorm2d>(widths[i]);
      features_.emplace<nn::ReLU>();
      if (i < 3) features_.emplace<nn::MaxPool2d>(2, 2);
      in = widths[i];
    }
    out_channels = in;
  } else {
    // Stem: 7x7/2 conv, 3x3/2 max-pool; then stage conv2 bottlenecks.
    features_.emplace<nn::Conv2d>(config_.channels, w, 7, 2, 3, false, rng);
    features_.emplace<nn::BatchNorm2d>(w);
    features_.emplace<nn::ReLU>();
    features_.emplace<nn::MaxPool2d>(3, 2, 1);
    const int blocks = resnet_blocks(config_.truncation_layer);
    for (int b = 0; b < blocks; ++b)
      features_.emplace<nn::Bottleneck>(b == 0 ? w : 4 * w, w, 4 * w, 1, rng);
    out_channels = 4 * w;
  }
  head_ = std::make_unique<nn::Dense>(out_channels, config_.num_classes, rng);
}

Tensor Classifier::forward(const Tensor& input, Mode mode) {
  return head_->forward(pool_.forward(features_.forward(input, mode), mode), mode);
}

Tensor Classifier::backward(const Tensor& grad_output) {
  return features_.backward(pool_.backward(head_->backward(grad_output)));
}

void Classifier::collect_parameters(std::vector<nn::Parameter*>& out) {
  features_.collect_parameters(out);
  head_->collect_parameters(out);
}

void Classifier::collect_buffers(std::vector<Tensor*>& out) { features_.collect_buffers(out); }

Tensor Classifier::predict(const Tensor& input) { return nn::softmax(forward(input, Mode::eval)); }

Classifier build_model(const ModelConfig& config) { return Classifier(config); }

Tensor make_batch(std::span<const Sample> samples, std::span<const std::size_t> order) {
  if (order.empty()) throw ValidationError("empty batch");
  const auto& first = samples[order[0]].image;
  Tensor t({static_cast<int>(order.size()), first.channels, first.height, first.width});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& img = samples[order[i]].image;
    if (img.size() != per) throw ValidationError("batch images differ in size");
    // HWC -> CHW
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          t[i * per + (static_cast<std::size_t>(c) * img.height + y) * img.width + x] = img.at(y, x, c);
  }
  return t;
}

Tensor make_batch(std::span<const ImageTensor> images) {
  std::vector<Sample> samples;
  samples.reserve(images.size());
  for (const auto& img : images) samples.push_back({"", img, 0});
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  return make_batch(samples, order);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (early_stopping.monitor != "val_accuracy" && early_stopping.monitor != "val_loss")
    throw ValidationError("early_stopping.monitor must be val_accuracy or val_loss");
  if (early_stopping.patience < 1) throw ValidationError("early_stopping.patience must be >= 1");
  if (augment_enabled) augment.validate();
}

namespace {

int argmax_row(const Tensor& probs, int row) {
  const int c = probs.dim(1);
  const double* p = probs.data() + static_cast<std::size_t>(row) * c;
  return static_cast<int>(std::max_element(p, p + c) - p);
}

}  // namespace

EvalStats evaluate(Classifier& model, std::span<const Sample> samples, int batch_size) {
  EvalStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<std::size_t> order(end - start);
    std::iota(order.begin(), order.end(), start);
    std::vector<int> labels;
    for (auto i : order) labels.push_back(samples[i].label);
    auto ce = nn::softmax_cross_entropy(model.forward(make_batch(samples, order), Mode::eval), labels);
    loss += ce.loss * order.size();
    for (std::size_t i = 0; i < order.size(); ++i)
      if (argmax_row(ce.probabilities, static_cast<int>(i)) == labels[i]) ++correct;
  }
  s.loss = loss / samples.size();
  s.accuracy = static_cast<double>(correct) / samples.size();
  return s;
}

TrainResult train(Classifier& model, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& config) {
  config.validate();
  TrainResult result;
  if (config.epochs == 0) return result;
  if (train_set.empty()) throw ValidationError("training split is empty");
  if (val_set.empty()) throw ValidationError("validation split is empty");
  if (static_cast<long>(train_set.size() + val_set.size()) >= config.n_max)
    throw BudgetError("training data violates |train| + |validation| < n_max");

  const int classes = model.config().num_classes;
  std::vector<std::size_t> per_class(classes, 0);
  for (const auto& s : train_set) {
    if (s.label < 0 || s.label >= classes) throw ValidationError("label out of range", s.id);
    ++per_class[s.label];
  }
  for (int c = 0; c < classes; ++c)
    if (per_class[c] == 0)
      result.warnings.push_back("class " + std::to_string(c) + " has no training samples");

  nn::Adam optimizer(model.parameters(), {config.learning_rate});
  Rng shuffle_rng = derive_rng({config.seed, 0x5EEDULL});
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  const bool monitor_acc = config.early_stopping.monitor == "val_accuracy";
  double best_metric = monitor_acc ? -1.0 : std::numeric_limits<double>::infinity();
  nn::StateSnapshot best_state;
  int since_best = 0;
  std::uint64_t counter = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Sample> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train_set[order[i]];
        batch.push_back({s.id,
                         config.augment_enabled
                             ? augment::augment(s.image, config.augment, counter)
                             : s.image,
                         s.label});
        labels.push_back(s.label);
        ++counter;
      }
      std::vector<std::size_t> idx(batch.size());
      std::iota(idx.begin(), idx.end(), 0);
      optimizer.zero_grad();
      auto ce = nn::softmax_cross_entropy(model.forward(make_batch(batch, idx), Mode::train), labels);
      model.backward(ce.grad_logits);
      optimizer.step();
      loss_sum += ce.loss * batch.size();
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (argmax_row(ce.probabilities, static_cast<int>(i)) == labels[i]) ++correct;
    }
    EpochStats st;
    st.epoch = epoch + 1;
    st.train_loss = loss_sum / train_set.size();
    st.train_accuracy = static_cast<double>(correct) / train_set.size();
    const auto val = evaluate(model, val_set);
    st.val_loss = val.loss;
    st.val_accuracy = val.accuracy;
    result.history.push_back(st);

    const double metric = monitor_acc ? st.val_accuracy : st.val_loss;
    const bool improved = monitor_acc ? metric > best_metric : metric < best_metric;
    if (improved) {
      best_metric = metric;
      result.best_epoch = epoch;
      since_best = 0;
      if (config.early_stopping.enabled) best_state = nn::snapshot(model);
    } else if (config.early_stopping.enabled && ++since_best >= config.early_stopping.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (config.early_stopping.enabled && !best_state.empty()) {
    nn::restore(model, best_state);
  } else {
    result.best_epoch = static_cast<int>(result.history.size()) - 1;
  }
  result.train_eval = evaluate(model, train_set);
  result.validation_eval = evaluate(model, val_set);
  return result;
}

LossReport infer_losses(Classifier& model, std::span<const Sample> samples, int batch_size) {
  LossReport report;
  const int classes = model.config().num_classes;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<std::size_t> order(end - start);
    std::iota(order.begin(), order.end(), start);
    const Tensor logits = model.forward(make_batch(samples, order), Mode::eval);
    const Tensor probs = nn::softmax(logits);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& s = samples[order[i]];
      if (s.label < 0 || s.label >= classes) throw ValidationError("label out of range", s.id);
      LossEntry e;
      e.id = s.id;
      e.label = s.label;
      const double* z = logits.data() + i * classes;
      const double mx = *std::max_element(z, z + classes);
      double sum = 0;
      for (int c = 0; c < classes; ++c) sum += std::exp(z[c] - mx);
      e.loss = std::max(0.0, mx + std::log(sum) - z[s.label]);
      e.probabilities.assign(probs.data() + i * classes, probs.data() + (i + 1) * classes);
      e.predicted = argmax_row(probs, static_cast<int>(i));
      e.confidence = e.probabilities[e.predicted];
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                 const std::filesystem::path& image_root, const ModelConfig& config) {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto& r = manifest.at(id);
    out.push_back({id,
                   load_canonical_gray(image_root / r.image_path, config.input_width,
                                       config.input_height),
                   r.label});
  }
  return out;
}

LossReport infer_losses(Classifier& model, const DatasetManifest& manifest,
                        const std::vector<std::string>& ids, const std::filesystem::path& image_root) {
  std::vector<Sample> ok;
  std::vector<LossEntry> failed;
  const auto& cfg = model.config();
  for (const auto& id : ids) {
    const auto& r = manifest.at(id);
    try {
      ok.push_back({id, load_canonical_gray(image_root / r.image_path, cfg.input_width, cfg.input_height),
                    r.label});
    } catch (const Error& e) {
      LossEntry bad;
      bad.id = id;
      bad.label = r.label;
      bad.error = e.what();
      failed.push_back(std::move(bad));
    }
  }
  auto report = infer_losses(model, ok);
  report.classes = manifest.classes;
  for (auto& f : failed) report.entries.push_back(std::move(f));
  return report;
}

std::string loss_report_to_json(const LossReport& report) {
  json j;
  j["classes"] = report.classes;
  j["entries"] = json::array();
  for (const auto& e : report.entries) {
    json je;
    je["id"] = e.id;
    je["label"] = e.label;
    if (e.error) {
      je["error"] = *e.error;
    } else {
      je["loss"] = e.loss;
      je["predicted"] = e.predicted;
      je["confidence"] = e.confidence;
      je["probabilities"] = e.probabilities;
    }
    j["entries"].push_back(std::move(je));
  }
  return j.dump(1);
}

LossReport loss_report_from_json(const std::string& text) {
  LossReport r;
  try {
    const json j = json::parse(text);
    r.classes = j.value("classes", std::vector<std::string>{});
    for (const auto& je : j.at("entries")) {
      LossEntry e;
      e.id = je.at("id").get<std::string>();
      e.label = je.at("label").get<int>();
      if (je.contains("error")) {
        e.error = je["error"].get<std::string>();
      } else {
        e.loss = je.at("loss").get<double>();
        e.predicted = je.at("predicted").get<int>();
        e.confidence = je.at("confidence").get<double>();
        e.probabilities = je.at("probabilities").get<std::vector<double>>();
      }
      r.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("loss report: ") + e.what());
  }
  return r;
}

namespace {

constexpr char kModelMagic[8] = {'W', 'B', 'M', 'O', 'D', 'E', 'L', '\0'};
constexpr std::uint32_t kModelFormat = 1;

json config_to_json(const ModelConfig& c) {
  return {{"architecture", to_string(c.architecture)},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"channels", c.channels},
          {"num_classes", c.num_classes},
          {"truncation_layer", c.truncation_layer},
          {"width", c.width},
          {"init_seed", c.init_seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.architecture = parse_architecture(j.at("architecture").get<std::string>());
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.truncation_layer = j.at("truncation_layer").get<std::string>();
  c.width = j.at("width").get<int>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_model(Classifier& model, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::string header = config_to_json(model.config()).dump();
    out.write(kModelMagic, sizeof kModelMagic);
    out.write(reinterpret_cast<const char*>(&kModelFormat), sizeof kModelFormat);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(len));
    nn::write_state(out, model);
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Classifier load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  char magic[8];
  std::uint32_t format = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&format), sizeof format);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw ParseError(path.string() + ": not a workbench model");
  if (format != kModelFormat)
    throw ParseError(path.string() + ": unsupported model format " + std::to_string(format));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  Classifier model(config_from_json(json::parse(header)));
  nn::read_state(in, model);
  return model;
}

}  // namespace wb::aux
