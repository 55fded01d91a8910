#include "mtsc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mtsc {

void ModelConfig::validate() const {
  if (semantic_dim != kSemanticDim)
    throw std::invalid_argument("semantic_dim is fixed at " +
                                std::to_string(kSemanticDim) +
                                " by the block layout");
  if (image_hidden == 0 || fusion_hidden == 0 || token_dim == 0 ||
      audio_bins == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (size_t(kAudioLen) % audio_bins != 0)
    throw std::invalid_argument("audio_bins must divide the waveform length");
  if (lora_enabled) {
    size_t cap = std::min(3 * semantic_dim, fusion_hidden);
    cap = std::min(cap, semantic_dim);
    if (lora_rank == 0 || lora_rank > cap)
      throw std::invalid_argument("lora_rank outside the fusion layer caps");
    if (lora_alpha <= 0.0)
      throw std::invalid_argument("lora_alpha must be positive");
  }
}

const std::vector<TaskId>& all_tasks() {
  static const std::vector<TaskId> tasks = {
      TaskId::Classify, TaskId::Reconstruct, TaskId::Vqa, TaskId::Caption};
  return tasks;
}

std::string task_name(TaskId task) {
  switch (task) {
    case TaskId::Classify: return "classify";
    case TaskId::Reconstruct: return "reconstruct";
    case TaskId::Vqa: return "vqa";
    case TaskId::Caption: return "caption";
  }
  throw std::invalid_argument("unknown task id");
}

size_t task_output_dim(TaskId task) {
  switch (task) {
    case TaskId::Classify: return kNumClasses;
    case TaskId::Reconstruct: return kImagePixels;
    case TaskId::Vqa: return kVqaClasses;
    case TaskId::Caption: return size_t(kCaptionSlots) * kVocabSize;
  }
  throw std::invalid_argument("unknown task id");
}

ModelBundle ModelBundle::init(const ModelConfig& config, RngStream& rng) {
  config.validate();
  ModelBundle b;
  b.config = config;
  uint64_t tag = 0;
  auto next = [&]() { return rng.substream(++tag); };

  size_t d = config.semantic_dim;
  auto s = next();
  b.device.enc.img1 = DenseLayer::init(config.image_hidden, kImagePixels, s);
  s = next();
  b.device.enc.img2 = DenseLayer::init(d, config.image_hidden, s);
  s = next();
  b.device.enc.text_embed =
      Tensor::randn({size_t(kVocabSize), config.token_dim}, s,
                    1.0 / std::sqrt(double(config.token_dim)), true);
  s = next();
  b.device.enc.text_proj = DenseLayer::init(d, config.token_dim, s);
  s = next();
  b.device.enc.audio_proj = DenseLayer::init(d, config.audio_bins, s);

  s = next();
  b.device.fusion.l1 = DenseLayer::init(config.fusion_hidden, 3 * d, s);
  s = next();
  b.device.fusion.l2 = DenseLayer::init(d, config.fusion_hidden, s);
  if (config.lora_enabled) {
    s = next();
    b.device.fusion.a1 = LoraAdapter::init(config.fusion_hidden, 3 * d,
                                           config.lora_rank,
                                           config.lora_alpha, s);
    s = next();
    b.device.fusion.a2 = LoraAdapter::init(d, config.fusion_hidden,
                                           config.lora_rank,
                                           config.lora_alpha, s);
  }

  for (size_t t = 1; t <= 4; ++t) {
    s = next();
    b.device.jsc.tier[t - 1] = DenseLayer::init(2 * t, kBlockSize, s);
    s = next();
    b.server.jsc.tier[t - 1] = DenseLayer::init(kBlockSize, 2 * t, s);
  }

  s = next();
  b.device.heads.classify =
      DenseLayer::init(task_output_dim(TaskId::Classify), d, s);
  s = next();
  b.device.heads.reconstruct =
      DenseLayer::init(task_output_dim(TaskId::Reconstruct), d, s);
  s = next();
  b.device.heads.vqa = DenseLayer::init(task_output_dim(TaskId::Vqa), d, s);
  s = next();
  b.device.heads.caption =
      DenseLayer::init(task_output_dim(TaskId::Caption), d, s);

  s = next();
  b.server.fusion_l1 = DenseLayer::init(config.fusion_hidden, d, s);
  s = next();
  b.server.fusion_l2 = DenseLayer::init(d, config.fusion_hidden, s);

  apply_identity_tier4(b);
  return b;
}

namespace {

void push_layer(NamedTensors& out, const std::string& name,
                const DenseLayer& l) {
  out.emplace_back(name + ".W", l.W);
  out.emplace_back(name + ".b", l.b);
}

}  // namespace

NamedTensors ModelBundle::named_device_params() const {
  NamedTensors out;
  push_layer(out, "dev.img1", device.enc.img1);
  push_layer(out, "dev.img2", device.enc.img2);
  out.emplace_back("dev.text_embed", device.enc.text_embed);
  push_layer(out, "dev.text_proj", device.enc.text_proj);
  push_layer(out, "dev.audio_proj", device.enc.audio_proj);
  push_layer(out, "dev.fusion.l1", device.fusion.l1);
  push_layer(out, "dev.fusion.l2", device.fusion.l2);
  if (config.lora_enabled) {
    out.emplace_back("dev.fusion.a1.A", device.fusion.a1.A);
    out.emplace_back("dev.fusion.a1.B", device.fusion.a1.B);
    out.emplace_back("dev.fusion.a2.A", device.fusion.a2.A);
    out.emplace_back("dev.fusion.a2.B", device.fusion.a2.B);
  }
  for (size_t t = 1; t <= 4; ++t)
    push_layer(out, "dev.jsc.t" + std::to_string(t), device.jsc.tier[t - 1]);
  push_layer(out, "dev.head.classify", device.heads.classify);
  push_layer(out, "dev.head.reconstruct", device.heads.reconstruct);
  push_layer(out, "dev.head.vqa", device.heads.vqa);
  push_layer(out, "dev.head.caption", device.heads.caption);
  return out;
}

NamedTensors ModelBundle::named_server_params() const {
  NamedTensors out;
  for (size_t t = 1; t <= 4; ++t)
    push_layer(out, "srv.jsc.t" + std::to_string(t), server.jsc.tier[t - 1]);
  push_layer(out, "srv.fusion.l1", server.fusion_l1);
  push_layer(out, "srv.fusion.l2", server.fusion_l2);
  return out;
}

NamedTensors ModelBundle::named_all_params() const {
  NamedTensors out = named_device_params();
  NamedTensors srv = named_server_params();
  out.insert(out.end(), srv.begin(), srv.end());
  return out;
}

void ModelBundle::load_values(const NamedTensors& values) {
  NamedTensors mine = named_all_params();
  for (const auto& [name, incoming] : values) {
    auto it = std::find_if(mine.begin(), mine.end(),
                           [&](const auto& p) { return p.first == name; });
    if (it == mine.end())
      throw std::invalid_argument("unknown tensor '" + name + "' in values");
    if (it->second.shape() != incoming.shape())
      throw std::invalid_argument("shape mismatch loading '" + name + "': " +
                                  shape_str(it->second.shape()) + " vs " +
                                  shape_str(incoming.shape()));
    auto dst = it->second.values_mut();
    auto src = incoming.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (values.size() != mine.size())
    throw std::invalid_argument("value directory has " +
                                std::to_string(values.size()) +
                                " tensors, model has " +
                                std::to_string(mine.size()));
}

void ModelBundle::freeze_pretrained_core() {
  device.fusion.l1.set_frozen(true);
  device.fusion.l2.set_frozen(true);
  server.fusion_l1.set_frozen(true);
  server.fusion_l2.set_frozen(true);
}

ModelBundle ModelBundle::clone() const {
  RngStream scratch(0, 0);
  ModelBundle copy = ModelBundle::init(config, scratch);
  copy.load_values(named_all_params());
  copy.device.fusion.l1.set_frozen(device.fusion.l1.frozen);
  copy.device.fusion.l2.set_frozen(device.fusion.l2.frozen);
  copy.server.fusion_l1.set_frozen(server.fusion_l1.frozen);
  copy.server.fusion_l2.set_frozen(server.fusion_l2.frozen);
  return copy;
}

void apply_identity_tier4(ModelBundle& bundle) {
  auto& enc = bundle.device.jsc.tier[3];
  auto enc_w = enc.W.values_mut();  // [8 x 4]
  std::fill(enc_w.begin(), enc_w.end(), 0.0);
  for (size_t k = 0; k < kBlockSize; ++k) enc_w[(2 * k) * kBlockSize + k] = 1.0;
  std::fill(enc.b.values_mut().begin(), enc.b.values_mut().end(), 0.0);

  auto& dec = bundle.server.jsc.tier[3];
  auto dec_w = dec.W.values_mut();  // [4 x 8]
  std::fill(dec_w.begin(), dec_w.end(), 0.0);
  for (size_t k = 0; k < kBlockSize; ++k) dec_w[k * (2 * kBlockSize) + 2 * k] = 1.0;
  std::fill(dec.b.values_mut().begin(), dec.b.values_mut().end(), 0.0);
}

std::vector<double> audio_energy_bins(std::span<const double> wave,
                                      size_t bins) {
  if (bins == 0 || wave.size() % bins != 0)
    throw std::invalid_argument("bins must evenly divide the waveform");
  size_t width = wave.size() / bins;
  std::vector<double> out(bins, 0.0);
  for (size_t b = 0; b < bins; ++b) {
    for (size_t i = 0; i < width; ++i) {
      double v = wave[b * width + i];
      out[b] += v * v;
    }
    out[b] /= double(width);
  }
  return out;
}

Tensor encode_image(const DeviceModel& device,
                    std::span<const double> pixels) {
  if (pixels.size() != kImagePixels)
    throw std::invalid_argument("image must have " +
                                std::to_string(kImagePixels) + " pixels");
  for (double p : pixels)
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("pixel outside [0, 1]");
  Tensor x = Tensor::from_values({size_t(kImagePixels)},
                                 {pixels.begin(), pixels.end()});
  Tensor h = tanh_op(dense_forward(x, device.enc.img1));
  return tanh_op(dense_forward(h, device.enc.img2));
}

Tensor encode_text(const DeviceModel& device, std::span<const int> tokens) {
  if (tokens.size() != kTextLen)
    throw std::invalid_argument("text must have " + std::to_string(kTextLen) +
                                " token slots");
  Tensor mean = embed_rows_mean(device.enc.text_embed, tokens);
  return tanh_op(dense_forward(mean, device.enc.text_proj));
}

Tensor encode_audio(const DeviceModel& device, std::span<const double> wave,
                    size_t bins) {
  if (wave.size() != kAudioLen)
    throw std::invalid_argument("audio must have " +
                                std::to_string(kAudioLen) + " samples");
  for (double v : wave)
    if (v < -1.0 || v > 1.0)
      throw std::invalid_argument("audio sample outside [-1, 1]");
  auto energy = audio_energy_bins(wave, bins);
  Tensor x = Tensor::from_values({bins}, std::move(energy));
  return tanh_op(dense_forward(x, device.enc.audio_proj));
}

Tensor fuse_semantics(const DeviceModel& device, const ModelConfig& config,
                      const std::vector<std::pair<Modality, Tensor>>& feats) {
  if (feats.empty()) throw std::invalid_argument("no features to fuse");
  size_t d = config.semantic_dim;
  std::array<Tensor, 3> slots;  // canonical order: image, text, audio
  for (const auto& [mod, feat] : feats) {
    size_t idx = size_t(mod);
    if (slots[idx].defined())
      throw std::invalid_argument("duplicate modality in fusion input");
    if (feat.numel() != d)
      throw std::invalid_argument("feature length " +
                                  std::to_string(feat.numel()) +
                                  " does not match semantic_dim");
    slots[idx] = feat;
  }
  std::vector<Tensor> parts;
  for (auto& slot : slots)
    parts.push_back(slot.defined() ? slot : Tensor::zeros({d}));
  Tensor x = concat(parts);

  const auto& f = device.fusion;
  Tensor h1 = config.lora_enabled ? lora_forward(x, f.l1, f.a1)
                                  : dense_forward(x, f.l1);
  h1 = tanh_op(h1);
  Tensor h2 = config.lora_enabled ? lora_forward(h1, f.l2, f.a2)
                                  : dense_forward(h1, f.l2);
  Tensor sem = tanh_op(h2);

  const std::array<double, kNumBlocks> profile = semantic_emphasis();
  std::vector<double> gains(d);
  for (size_t k = 0; k < d; ++k) gains[k] = profile[k / kBlockSize];
  return mul(sem, Tensor::from_values({d}, std::move(gains)));
}

std::array<double, kNumBlocks> semantic_emphasis() {
  // Linear taper 1.8 -> 0.45: the score spread it induces is wide enough
  // that largest-remainder allocation genuinely diverges from a uniform
  // split at reduced budgets.
  std::array<double, kNumBlocks> g{};
  for (size_t b = 0; b < kNumBlocks; ++b) {
    g[b] = 1.8 - 1.35 * double(b) / double(kNumBlocks - 1);
  }
  return g;
}

Tensor encode_sample(const DeviceModel& device, const ModelConfig& config,
                     const Sample& sample) {
  std::vector<std::pair<Modality, Tensor>> feats;
  feats.emplace_back(Modality::Image, encode_image(device, sample.image));
  feats.emplace_back(Modality::Text, encode_text(device, sample.text));
  feats.emplace_back(Modality::Audio,
                     encode_audio(device, sample.audio, config.audio_bins));
  return fuse_semantics(device, config, feats);
}

Tensor jsc_encode_concat(const DeviceModel& device, const Tensor& semantic,
                         const RateAllocation& alloc) {
  if (semantic.numel() != kSemanticDim)
    throw std::invalid_argument("semantic vector must have " +
                                std::to_string(kSemanticDim) + " entries");
  std::vector<Tensor> parts;
  for (size_t b = 0; b < kNumBlocks; ++b) {
    int s = alloc.symbols[b];
    if (s < 0 || s > kMaxSymbolsPerBlock)
      throw std::invalid_argument("allocation outside the per-block cap");
    if (s == 0) continue;
    Tensor block = slice(semantic, b * kBlockSize, kBlockSize);
    parts.push_back(dense_forward(block, device.jsc.tier[size_t(s) - 1]));
  }
  if (parts.empty()) return Tensor();  // nothing to transmit
  return concat(parts);
}

ChannelHop transmit(const Tensor& tx_reals, const RateAllocation& alloc,
                    ChannelState* channel) {
  ChannelHop hop;
  hop.symbols = alloc.total();
  if (hop.symbols == 0) {
    if (tx_reals.defined())
      throw std::invalid_argument("payload present for a zero allocation");
    return hop;
  }
  if (!tx_reals.defined() || tx_reals.numel() != size_t(2 * hop.symbols))
    throw std::invalid_argument("payload length does not match allocation");
  if (!channel) {
    hop.rx = tx_reals;
    return hop;
  }
  hop.used_channel = true;
  auto tv = tx_reals.values();
  std::vector<Cx> x(size_t(hop.symbols));
  for (size_t i = 0; i < x.size(); ++i) x[i] = {tv[2 * i], tv[2 * i + 1]};

  auto norm = power_normalize(x);
  hop.zero_power = norm.zero_power;
  auto use = apply_channel(x, *channel);
  hop.h = use.h;
  hop.sigma2 = use.sigma2;
  auto eq = equalize(use);
  hop.erased = eq.erased;

  double undo = norm.zero_power ? 1.0 : 1.0 / norm.scale;
  std::vector<double> offset(tv.size());
  for (size_t i = 0; i < x.size(); ++i) {
    offset[2 * i] = eq.x_hat[i].real() * undo - tv[2 * i];
    offset[2 * i + 1] = eq.x_hat[i].imag() * undo - tv[2 * i + 1];
  }
  hop.rx = add_constant_offset(tx_reals, offset);
  return hop;
}

Tensor jsc_decode_concat(const ServerModel& server, const Tensor& rx_reals,
                         const RateAllocation& alloc) {
  int total = alloc.total();
  if (total == 0) {
    if (rx_reals.defined())
      throw std::invalid_argument("payload present for a zero allocation");
    return Tensor::zeros({kSemanticDim});
  }
  if (!rx_reals.defined() || rx_reals.numel() != size_t(2 * total))
    throw std::invalid_argument("received length does not match allocation");
  std::vector<Tensor> blocks;
  size_t offset = 0;
  for (size_t b = 0; b < kNumBlocks; ++b) {
    int s = alloc.symbols[b];
    if (s == 0) {
      blocks.push_back(Tensor::zeros({kBlockSize}));
      continue;
    }
    Tensor piece = slice(rx_reals, offset, size_t(2 * s));
    offset += size_t(2 * s);
    blocks.push_back(dense_forward(piece, server.jsc.tier[size_t(s) - 1]));
  }
  return concat(blocks);
}

Tensor fusion_decode(const ServerModel& server, const Tensor& semantic_est) {
  Tensor h = tanh_op(dense_forward(semantic_est, server.fusion_l1));
  return tanh_op(dense_forward(h, server.fusion_l2));
}

Tensor task_decode(const DeviceModel& device, const Tensor& rep, TaskId task) {
  switch (task) {
    case TaskId::Classify: return dense_forward(rep, device.heads.classify);
    case TaskId::Reconstruct:
      return sigmoid_op(dense_forward(rep, device.heads.reconstruct));
    case TaskId::Vqa: return dense_forward(rep, device.heads.vqa);
    case TaskId::Caption: return dense_forward(rep, device.heads.caption);
  }
  throw std::invalid_argument("unknown task id");
}

Tensor task_loss(const DeviceModel& device, const Tensor& rep,
                 const Sample& sample, std::span<const TaskId> tasks) {
  if (tasks.empty()) throw std::invalid_argument("no tasks requested");
  Tensor total;
  for (TaskId task : tasks) {
    Tensor out = task_decode(device, rep, task);
    Tensor loss;
    switch (task) {
      case TaskId::Classify: {
        std::vector<int> label = {sample.cls};
        loss = cross_entropy_loss(out, label);
        break;
      }
      case TaskId::Reconstruct:
        loss = mse_loss(out, sample.image);
        break;
      case TaskId::Vqa: {
        std::vector<int> label = {sample.vqa_answer};
        loss = cross_entropy_loss(out, label);
        break;
      }
      case TaskId::Caption: {
        Tensor acc;
        for (int slot = 0; slot < kCaptionSlots; ++slot) {
          std::vector<int> label = {sample.caption[size_t(slot)]};
          Tensor piece = cross_entropy_loss(
              slice(out, size_t(slot) * kVocabSize, kVocabSize), label);
          acc = acc.defined() ? add(acc, piece) : piece;
        }
        loss = scale(acc, 1.0 / double(kCaptionSlots));
        break;
      }
    }
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / double(tasks.size()));
}

int argmax_of(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty vector");
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return int(best);
}

std::vector<int> caption_readout(std::span<const double> slot_logits) {
  if (slot_logits.size() != size_t(kCaptionSlots) * kVocabSize)
    throw std::invalid_argument("caption logits must cover 8 slots of 64");
  std::vector<int> tokens(kCaptionSlots);
  for (int s = 0; s < kCaptionSlots; ++s)
    tokens[size_t(s)] = argmax_of(
        slot_logits.subspan(size_t(s) * kVocabSize, kVocabSize));
  return tokens;
}

RateAllocation uniform_allocation(int total_budget) {
  if (total_budget < 0) throw std::invalid_argument("negative symbol budget");
  RateAllocation alloc;
  alloc.budget_clamped = total_budget > kMaxBudget;
  alloc.total_budget = std::min(total_budget, kMaxBudget);
  int base = alloc.total_budget / int(kNumBlocks);
  int extra = alloc.total_budget % int(kNumBlocks);
  for (size_t b = 0; b < kNumBlocks; ++b)
    alloc.symbols[b] = base + (int(b) < extra ? 1 : 0);
  return alloc;
}

namespace {

bool all_zero(std::span<const double> v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

std::vector<double> maybe_augment(std::span<const double> vec,
                                  const KnowledgeBase* kb, double gate,
                                  size_t k) {
  std::vector<double> out(vec.begin(), vec.end());
  if (!kb || all_zero(vec)) return out;
  auto hits = kb->retrieve(out, k);
  return augment_semantics(out, *kb, hits, gate);
}

}  // namespace

PipelineResult forward_pipeline(const ModelBundle& bundle,
                                const Sample& sample,
                                std::span<const TaskId> tasks,
                                const PipelineOptions& options) {
  PipelineResult result;
  Tensor sv_t = encode_sample(bundle.device, bundle.config, sample);
  result.semantic =
      maybe_augment(sv_t.values(), options.tx_kb, options.rag_gate,
                    options.rag_k);
  Tensor sv = Tensor::from_values({kSemanticDim}, result.semantic);

  double snr = options.channel ? options.channel->snr_db
                               : std::numeric_limits<double>::infinity();
  result.alloc = options.importance_allocation
                     ? allocate_rates(score_importance(result.semantic), snr,
                                      options.symbol_budget)
                     : uniform_allocation(options.symbol_budget);

  Tensor tx = jsc_encode_concat(bundle.device, sv, result.alloc);
  ChannelHop hop = transmit(tx, result.alloc, options.channel);
  result.symbols_sent = hop.symbols;

  Tensor sv_hat = jsc_decode_concat(bundle.server, hop.rx, result.alloc);
  result.semantic_est.assign(sv_hat.values().begin(), sv_hat.values().end());

  Tensor rep_t = fusion_decode(bundle.server, sv_hat);
  std::vector<double> rep =
      maybe_augment(rep_t.values(), options.rx_kb, options.rag_gate,
                    options.rag_k);
  Tensor rep_leaf = Tensor::from_values({bundle.config.semantic_dim}, rep);

  for (TaskId task : tasks) {
    Tensor out = task_decode(bundle.device, rep_leaf, task);
    result.outputs[task].assign(out.values().begin(), out.values().end());
  }
  return result;
}

}  // namespace mtsc
