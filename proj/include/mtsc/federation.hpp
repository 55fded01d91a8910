#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtsc/allocation.hpp"
#include "mtsc/channel.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/model.hpp"
#include "mtsc/nn.hpp"

namespace mtsc {

// Federated split fine-tuning. Devices keep encoders, JSC encoders, task
// heads, and adapters; the server keeps the JSC decoder and fusion decoder.
// Forward activations optionally cross the noisy channel; gradients and
// parameter updates always use the reliable link.

struct RoundConfig {
  int rounds = 20;          // R
  int num_clients = 4;      // C
  int local_steps = 1;      // E
  int batch_size = 8;
  bool train_with_channel_noise = false;
  ChannelState channel;     // template; per-client streams derive from seed
  uint64_t seed = 1;
  int symbol_budget = kMaxBudget;
  std::vector<TaskId> tasks = all_tasks();
  OptimizerConfig device_opt;
  OptimizerConfig server_opt;
  std::vector<double> client_weights;  // empty: proportional to shard size
  std::string trace_path;              // empty: no protocol trace

  void validate() const;
};

// Flattened tensor payload used by update and broadcast messages.
struct NamedVector {
  std::string name;
  Shape shape;
  std::vector<double> values;
};
using NamedVectors = std::vector<NamedVector>;

// Device -> server: equalized JSC symbols for one batch plus the allocation
// side information. Carries opaque sample ids only, never labels.
struct ActivationMessage {
  int client_id = 0;
  int round = 0;
  std::vector<uint32_t> sample_ids;
  std::vector<uint8_t> alloc_meta;
  std::vector<double> activations;  // batch * (2 * symbols) reals
};

// Server -> device: fusion-decoder output, 32 floats per sample.
struct FeatureMessage {
  int client_id = 0;
  int round = 0;
  size_t n_samples = 0;
  std::vector<double> features;
};

// Either gradient boundary of the split. The device emits gradients w.r.t.
// the server output; the server replies with gradients w.r.t. its own input.
enum class GradBoundary : uint8_t { ServerOutput, DecoderInput };

struct GradientMessage {
  int client_id = 0;
  int round = 0;
  GradBoundary boundary = GradBoundary::ServerOutput;
  size_t n_samples = 0;
  std::vector<double> grads;
};

// Device -> server: trainable device parameters after local steps.
struct UpdateMessage {
  int client_id = 0;
  int round = 0;
  uint64_t sample_count = 0;
  NamedVectors params;
};

// Server -> device: aggregated global device parameters.
struct BroadcastMessage {
  int round = 0;
  NamedVectors params;
};

// Schema-level privacy contract: no protocol message can carry raw samples
// or labels, only activations, gradients, and parameters.
template <typename T>
concept PrivateMessageSchema =
    !requires(T m) { m.image; } && !requires(T m) { m.text; } &&
    !requires(T m) { m.audio; } && !requires(T m) { m.caption; } &&
    !requires(T m) { m.cls; } && !requires(T m) { m.vqa_answer; } &&
    !requires(T m) { m.labels; } && !requires(T m) { m.samples; } &&
    !requires(T m) { m.batch; };

static_assert(PrivateMessageSchema<ActivationMessage>);
static_assert(PrivateMessageSchema<FeatureMessage>);
static_assert(PrivateMessageSchema<GradientMessage>);
static_assert(PrivateMessageSchema<UpdateMessage>);
static_assert(PrivateMessageSchema<BroadcastMessage>);

// Serialized payload bytes of each message, used for the exchanged-bytes
// accounting and the protocol trace.
std::vector<uint8_t> message_payload(const ActivationMessage& m);
std::vector<uint8_t> message_payload(const FeatureMessage& m);
std::vector<uint8_t> message_payload(const GradientMessage& m);
std::vector<uint8_t> message_payload(const UpdateMessage& m);
std::vector<uint8_t> message_payload(const BroadcastMessage& m);

// Device-side state machine for one client.
class FedClient {
 public:
  FedClient(int id, ModelBundle model, std::vector<Sample> shard,
            const RoundConfig& cfg);

  // Encodes the next local batch and transmits it. Applies the channel only
  // when the config enables noisy activations.
  ActivationMessage client_forward(int round);

  // Computes the multi-task loss against local labels and returns the
  // gradient at the server-output boundary.
  GradientMessage client_loss_backward(const FeatureMessage& features);

  // Finishes backprop from the decoder-input boundary through the channel
  // (straight-through) into the encoders, then steps the device optimizer.
  void client_update(const GradientMessage& boundary);

  UpdateMessage make_update(int round) const;
  void apply_global(const NamedVectors& params);

  double last_loss() const { return last_loss_; }
  const std::map<TaskId, double>& last_task_losses() const {
    return last_task_losses_;
  }
  const ModelBundle& model() const { return model_; }
  size_t shard_size() const { return shard_.size(); }
  int id() const { return id_; }

 private:
  int id_;
  ModelBundle model_;
  std::vector<Sample> shard_;
  RoundConfig cfg_;
  Optimizer opt_;
  ChannelState channel_;
  size_t cursor_ = 0;

  // Forward tape kept between stages of one exchange.
  std::vector<const Sample*> pending_batch_;
  std::vector<Tensor> pending_boundary_;  // per-sample channel outputs
  RateAllocation pending_alloc_;
  double last_loss_ = 0.0;
  std::map<TaskId, double> last_task_losses_;
};

// Server-side state machine shared by all clients.
class FedServer {
 public:
  FedServer(ModelBundle model, const RoundConfig& cfg);

  FeatureMessage server_forward(const ActivationMessage& msg);

  // Backprops through the fusion and JSC decoders, steps the server
  // optimizer, and returns the gradient at the decoder input.
  GradientMessage server_backward(const GradientMessage& rep_grads);

  const ModelBundle& model() const { return model_; }

 private:
  ModelBundle model_;
  RoundConfig cfg_;
  Optimizer opt_;

  int pending_client_ = -1;
  std::vector<Tensor> pending_inputs_;  // per-sample decoder-input leaves
  std::vector<Tensor> pending_reps_;
};

// FedAvg: weighted mean per tensor, accumulated in ascending client-id
// order. Weights must be non-negative and sum to 1.
NamedVectors aggregate_updates(const std::vector<UpdateMessage>& updates,
                               std::span<const double> weights);

// One monolithic fine-tuning step over a batch: the oracle the split
// protocol must match on a noiseless link. Steps both optimizers.
double centralized_step(ModelBundle& bundle, Optimizer& device_opt,
                        Optimizer& server_opt,
                        std::span<const Sample* const> batch,
                        std::span<const TaskId> tasks, int symbol_budget,
                        ChannelState* channel);

struct TrainLogRow {
  int round = 0;
  double mean_loss = 0.0;
  std::map<TaskId, double> task_losses;
  uint64_t bytes_up = 0;
  uint64_t bytes_down = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  uint64_t total_bytes_up = 0;
  uint64_t total_bytes_down = 0;
};

void write_trainlog_csv(const TrainLog& log, const std::string& path);

struct FedTrainResult {
  ModelBundle model;
  TrainLog log;
};

// Runs R rounds of {every client: E exchanges; aggregate; broadcast}.
// Clients are processed in ascending id order; shards are assigned
// round-robin by sample position.
FedTrainResult run_training(const ModelBundle& init, const RoundConfig& cfg,
                            std::span<const Sample> train);

// Reads a binary protocol trace (one record per message: u8 type tag,
// u32 client id, u32 round, u64 payload length, payload, newline).
struct TraceRecord {
  uint8_t type = 0;
  uint32_t client_id = 0;
  uint32_t round = 0;
  std::vector<uint8_t> payload;
};
std::vector<TraceRecord> read_trace(const std::string& path);

inline constexpr uint8_t kTraceActivation = 1;
inline constexpr uint8_t kTraceFeatures = 2;
inline constexpr uint8_t kTraceGradUp = 3;
inline constexpr uint8_t kTraceGradDown = 4;
inline constexpr uint8_t kTraceUpdate = 5;
inline constexpr uint8_t kTraceBroadcast = 6;

}  // namespace mtsc
