// The end-to-end transmission pipeline: modality encoders, a fusion encoder
// with low-rank adapter slots (the frozen pre-trained core), tiered
// joint source-channel codecs, a fusion decoder, and per-task heads.
// Device side lives at the client, server side at the edge.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtsc/allocation.hpp"
#include "mtsc/channel.hpp"
#include "mtsc/checkpoint.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/kb.hpp"
#include "mtsc/nn.hpp"

namespace mtsc {

struct ModelConfig {
  size_t semantic_dim = kSemanticDim;  // 32, fixed by the block layout
  size_t image_hidden = 64;
  size_t fusion_hidden = 64;  // the "no large core" ablation shrinks this
  size_t token_dim = 32;
  size_t audio_bins = 8;
  size_t lora_rank = 4;
  double lora_alpha = 8.0;
  bool lora_enabled = true;

  void validate() const;
};

enum class Modality { Image, Text, Audio };
enum class TaskId { Classify, Reconstruct, Vqa, Caption };

const std::vector<TaskId>& all_tasks();
std::string task_name(TaskId task);
size_t task_output_dim(TaskId task);

struct ModalityEncoders {
  DenseLayer img1, img2;   // 256 -> hidden -> 32
  Tensor text_embed;       // [vocab x token_dim]
  DenseLayer text_proj;    // token_dim -> 32
  DenseLayer audio_proj;   // energy bins -> 32
};

struct FusionEncoder {
  DenseLayer l1, l2;   // 96 -> hidden -> 32
  LoraAdapter a1, a2;  // residual adapters on l1/l2
};

struct JscCoder {
  // tier[s-1] maps 4 features to 2s reals (encoder) or back (decoder);
  // the zero tier transmits nothing and is imputed as zeros at the receiver
  std::array<DenseLayer, 4> tier;
};

struct TaskHeads {
  DenseLayer classify;     // 32 -> 10
  DenseLayer reconstruct;  // 32 -> 256, sigmoid
  DenseLayer vqa;          // 32 -> 10
  DenseLayer caption;      // 32 -> 8*64 slot logits
};

struct DeviceModel {
  ModalityEncoders enc;
  FusionEncoder fusion;
  JscCoder jsc;  // encoder direction
  TaskHeads heads;
};

struct ServerModel {
  JscCoder jsc;  // decoder direction
  DenseLayer fusion_l1, fusion_l2;  // 32 -> hidden -> 32
};

struct ModelBundle {
  ModelConfig config;
  DeviceModel device;
  ServerModel server;

  static ModelBundle init(const ModelConfig& config, RngStream& rng);

  // Stable name -> tensor directory used by checkpoints and aggregation.
  NamedTensors named_device_params() const;
  NamedTensors named_server_params() const;
  NamedTensors named_all_params() const;

  // Copies values into existing tensors by name; unknown or missing names
  // and shape mismatches throw.
  void load_values(const NamedTensors& values);

  // Freezes the pre-trained core for fine-tuning: fusion encoder base
  // weights (adapters stay trainable) and the whole fusion decoder.
  void freeze_pretrained_core();

  ModelBundle clone() const;
};

// Sets the full-rate codec pair to exact mutual inverses: encoder tier 4
// pairs feature k into the real part of symbol k, decoder tier 4 reads it
// back. Applied at init so full-rate transmission starts lossless.
void apply_identity_tier4(ModelBundle& bundle);

// Fixed per-block emphasis applied to the fusion encoder output: a
// prioritized latent layout where early blocks carry more energy by
// construction. The norm-based importance scorer then sees a real ranking,
// reduced budgets protect the heavy blocks first, and the fusion decoder
// learns the inverse scaling.
std::array<double, kNumBlocks> semantic_emphasis();

std::vector<double> audio_energy_bins(std::span<const double> wave,
                                      size_t bins);

// Per-modality feature extractors, each returning 32 graph-connected floats.
Tensor encode_image(const DeviceModel& device, std::span<const double> pixels);
Tensor encode_text(const DeviceModel& device, std::span<const int> tokens);
Tensor encode_audio(const DeviceModel& device, std::span<const double> wave,
                    size_t bins);

// Concatenates present features in canonical order (image, text, audio),
// zero-filling absent slots, then applies the adapter-equipped fusion
// layers. Duplicate modalities throw.
Tensor fuse_semantics(const DeviceModel& device, const ModelConfig& config,
                      const std::vector<std::pair<Modality, Tensor>>& feats);

// All three modalities of one sample fused into the semantic vector.
Tensor encode_sample(const DeviceModel& device, const ModelConfig& config,
                     const Sample& sample);

// Per-block tier projections, concatenated in block order; blocks with zero
// symbols contribute nothing. Output length = 2 * alloc.total().
Tensor jsc_encode_concat(const DeviceModel& device, const Tensor& semantic,
                         const RateAllocation& alloc);

// One channel use. Power normalization and its receiver-side inverse are
// treated as constant multipliers for the backward pass; fading and noise
// enter as a constant offset after perfect-CSI equalization, so gradients
// flow straight through to the transmitted reals. channel == nullptr is the
// clean bypass (rx == tx).
struct ChannelHop {
  Tensor rx;              // graph-connected received reals
  int symbols = 0;
  bool used_channel = false;
  Cx h{1.0, 0.0};
  double sigma2 = 0.0;
  bool erased = false;
  bool zero_power = false;
};

ChannelHop transmit(const Tensor& tx_reals, const RateAllocation& alloc,
                    ChannelState* channel);

// Tier-matched reconstruction of the 32-dim semantic estimate; zero-symbol
// blocks are imputed as zeros. rx length must equal 2 * alloc.total().
Tensor jsc_decode_concat(const ServerModel& server, const Tensor& rx_reals,
                         const RateAllocation& alloc);

Tensor fusion_decode(const ServerModel& server, const Tensor& semantic_est);

Tensor task_decode(const DeviceModel& device, const Tensor& rep, TaskId task);

// Unweighted mean of the requested per-task losses for one sample.
Tensor task_loss(const DeviceModel& device, const Tensor& rep,
                 const Sample& sample, std::span<const TaskId> tasks);

// Greedy task readouts used by metrics.
int argmax_of(std::span<const double> v);
std::vector<int> caption_readout(std::span<const double> slot_logits);

struct PipelineOptions {
  int symbol_budget = kMaxBudget;
  ChannelState* channel = nullptr;       // null = noiseless bypass
  const KnowledgeBase* tx_kb = nullptr;  // transmitter-side augmentation
  const KnowledgeBase* rx_kb = nullptr;  // receiver-side augmentation
  double rag_gate = 0.3;
  size_t rag_k = 3;
  bool importance_allocation = true;     // false = uniform split of budget
};

struct PipelineResult {
  std::vector<double> semantic;      // transmitted semantic vector
  std::vector<double> semantic_est;  // receiver estimate
  RateAllocation alloc;
  int symbols_sent = 0;
  std::map<TaskId, std::vector<double>> outputs;
};

// encode -> (augment) -> score/allocate -> jsc encode -> channel ->
// jsc decode -> fusion decode -> (augment) -> every requested task head,
// all from one transmission.
PipelineResult forward_pipeline(const ModelBundle& bundle,
                                const Sample& sample,
                                std::span<const TaskId> tasks,
                                const PipelineOptions& options);

// Uniform split of a symbol budget across blocks (round-robin remainder),
// the no-importance control arm.
RateAllocation uniform_allocation(int total_budget);

}  // namespace mtsc
