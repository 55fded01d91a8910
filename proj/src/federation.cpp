#include "mtsc/federation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace mtsc {

void RoundConfig::validate() const {
  if (rounds < 0) throw std::invalid_argument("rounds must be non-negative");
  if (num_clients < 1) throw std::invalid_argument("need at least one client");
  if (local_steps < 1) throw std::invalid_argument("need at least one local step");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (tasks.empty()) throw std::invalid_argument("no training tasks configured");
  if (symbol_budget < 0 || symbol_budget > kMaxBudget)
    throw std::invalid_argument("symbol budget outside [0, 32]");
  if (!client_weights.empty()) {
    if (client_weights.size() != size_t(num_clients))
      throw std::invalid_argument("client weight count mismatch");
    double sum = 0.0;
    for (double w : client_weights) {
      if (w < 0.0) throw std::invalid_argument("negative client weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("client weights must sum to 1");
  }
  device_opt.validate();
  server_opt.validate();
}

namespace {

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void append_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  append_u64(out, bits);
}

void append_named_vectors(std::vector<uint8_t>& out, const NamedVectors& nv) {
  append_u32(out, uint32_t(nv.size()));
  for (const auto& t : nv) {
    append_u32(out, uint32_t(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    append_u32(out, uint32_t(t.shape.size()));
    for (size_t d : t.shape) append_u32(out, uint32_t(d));
    for (double v : t.values) append_f64(out, v);
  }
}

}  // namespace

std::vector<uint8_t> message_payload(const ActivationMessage& m) {
  std::vector<uint8_t> out;
  for (uint32_t id : m.sample_ids) append_u32(out, id);
  out.insert(out.end(), m.alloc_meta.begin(), m.alloc_meta.end());
  for (double v : m.activations) append_f64(out, v);
  return out;
}

std::vector<uint8_t> message_payload(const FeatureMessage& m) {
  std::vector<uint8_t> out;
  for (double v : m.features) append_f64(out, v);
  return out;
}

std::vector<uint8_t> message_payload(const GradientMessage& m) {
  std::vector<uint8_t> out;
  out.push_back(uint8_t(m.boundary));
  for (double v : m.grads) append_f64(out, v);
  return out;
}

std::vector<uint8_t> message_payload(const UpdateMessage& m) {
  std::vector<uint8_t> out;
  append_u64(out, m.sample_count);
  append_named_vectors(out, m.params);
  return out;
}

std::vector<uint8_t> message_payload(const BroadcastMessage& m) {
  std::vector<uint8_t> out;
  append_named_vectors(out, m.params);
  return out;
}

FedClient::FedClient(int id, ModelBundle model, std::vector<Sample> shard,
                     const RoundConfig& cfg)
    : id_(id), model_(std::move(model)), shard_(std::move(shard)), cfg_(cfg),
      opt_(cfg.device_opt) {
  if (shard_.empty()) throw std::invalid_argument("client shard is empty");
  for (const auto& [name, t] : model_.named_device_params())
    opt_.add_param(name, t);
  channel_ = cfg_.channel;
  channel_.rng = RngStream(cfg_.seed, stream_id_of('f', 'c', 'h', 0) +
                                          uint64_t(id_));
}

ActivationMessage FedClient::client_forward(int round) {
  pending_batch_.clear();
  pending_boundary_.clear();
  for (int k = 0; k < cfg_.batch_size; ++k) {
    pending_batch_.push_back(&shard_[cursor_]);
    cursor_ = (cursor_ + 1) % shard_.size();
  }
  pending_alloc_ = uniform_allocation(cfg_.symbol_budget);

  ActivationMessage msg;
  msg.client_id = id_;
  msg.round = round;
  msg.alloc_meta = encode_alloc_meta(pending_alloc_);
  ChannelState* channel = cfg_.train_with_channel_noise ? &channel_ : nullptr;
  for (const Sample* s : pending_batch_) {
    msg.sample_ids.push_back(uint32_t(s->sample_id));
    Tensor sv = encode_sample(model_.device, model_.config, *s);
    Tensor tx = jsc_encode_concat(model_.device, sv, pending_alloc_);
    ChannelHop hop = transmit(tx, pending_alloc_, channel);
    pending_boundary_.push_back(hop.rx);
    if (hop.rx.defined()) {
      auto v = hop.rx.values();
      msg.activations.insert(msg.activations.end(), v.begin(), v.end());
    }
  }
  return msg;
}

GradientMessage FedClient::client_loss_backward(const FeatureMessage& features) {
  size_t n = pending_batch_.size();
  if (n == 0) throw std::runtime_error("no forward tape for this exchange");
  if (features.n_samples != n ||
      features.features.size() != n * model_.config.semantic_dim)
    throw std::invalid_argument("feature batch does not match the forward tape");

  size_t d = model_.config.semantic_dim;
  opt_.zero_grad();
  std::vector<Tensor> rep_leaves;
  std::vector<Tensor> sample_losses;
  last_task_losses_.clear();
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> chunk(features.features.begin() + long(i * d),
                              features.features.begin() + long((i + 1) * d));
    Tensor rep = Tensor::from_values({d}, std::move(chunk));
    rep.set_requires_grad(true);
    rep_leaves.push_back(rep);

    Tensor per_sample;
    for (TaskId t : cfg_.tasks) {
      std::array<TaskId, 1> one = {t};
      Tensor piece = task_loss(model_.device, rep, *pending_batch_[i], one);
      last_task_losses_[t] += piece.scalar() / double(n);
      per_sample = per_sample.defined() ? add(per_sample, piece) : piece;
    }
    sample_losses.push_back(
        scale(per_sample, 1.0 / double(cfg_.tasks.size())));
  }
  Tensor total;
  for (const Tensor& s : sample_losses)
    total = total.defined() ? add(total, s) : s;
  Tensor loss = scale(total, 1.0 / double(n));
  last_loss_ = loss.scalar();
  if (!std::isfinite(last_loss_))
    throw std::runtime_error("non-finite training loss");
  backward(loss);

  GradientMessage out;
  out.client_id = id_;
  out.round = features.round;
  out.boundary = GradBoundary::ServerOutput;
  out.n_samples = n;
  for (const Tensor& rep : rep_leaves) {
    auto g = rep.grad();
    out.grads.insert(out.grads.end(), g.begin(), g.end());
  }
  return out;
}

void FedClient::client_update(const GradientMessage& boundary) {
  size_t n = pending_batch_.size();
  if (n == 0) throw std::runtime_error("no forward tape for this exchange");
  if (boundary.boundary != GradBoundary::DecoderInput)
    throw std::invalid_argument("expected decoder-input gradients");
  if (boundary.n_samples != n)
    throw std::invalid_argument("gradient batch does not match the forward tape");
  size_t per = n == 0 ? 0 : boundary.grads.size() / n;
  if (per * n != boundary.grads.size())
    throw std::invalid_argument("gradient payload not divisible by batch");

  for (size_t i = 0; i < n; ++i) {
    if (!pending_boundary_[i].defined()) continue;  // zero-symbol exchange
    if (pending_boundary_[i].numel() != per)
      throw std::invalid_argument("gradient length does not match the tape");
    std::span<const double> chunk(boundary.grads.data() + i * per, per);
    backward_from(pending_boundary_[i], chunk);
  }
  opt_.step();
  pending_batch_.clear();
  pending_boundary_.clear();
}

UpdateMessage FedClient::make_update(int round) const {
  UpdateMessage msg;
  msg.client_id = id_;
  msg.round = round;
  msg.sample_count = shard_.size();
  for (const auto& [name, t] : model_.named_device_params()) {
    if (!t.requires_grad()) continue;  // frozen base stays local
    NamedVector nv;
    nv.name = name;
    nv.shape = t.shape();
    nv.values.assign(t.values().begin(), t.values().end());
    msg.params.push_back(std::move(nv));
  }
  return msg;
}

void FedClient::apply_global(const NamedVectors& params) {
  NamedTensors mine = model_.named_device_params();
  for (const auto& nv : params) {
    auto it = std::find_if(mine.begin(), mine.end(),
                           [&](const auto& p) { return p.first == nv.name; });
    if (it == mine.end())
      throw std::invalid_argument("unknown tensor '" + nv.name +
                                  "' in broadcast");
    if (!it->second.requires_grad())
      throw std::invalid_argument("broadcast touches frozen tensor '" +
                                  nv.name + "'");
    if (it->second.shape() != nv.shape)
      throw std::invalid_argument("shape mismatch for '" + nv.name + "'");
    auto dst = it->second.values_mut();
    std::copy(nv.values.begin(), nv.values.end(), dst.begin());
  }
}

FedServer::FedServer(ModelBundle model, const RoundConfig& cfg)
    : model_(std::move(model)), cfg_(cfg), opt_(cfg.server_opt) {
  for (const auto& [name, t] : model_.named_server_params())
    opt_.add_param(name, t);
}

FeatureMessage FedServer::server_forward(const ActivationMessage& msg) {
  RateAllocation alloc = decode_alloc_meta(msg.alloc_meta);
  size_t n = msg.sample_ids.size();
  size_t per = size_t(2 * alloc.total());
  if (msg.activations.size() != n * per)
    throw std::invalid_argument("activation payload does not match allocation");

  pending_client_ = msg.client_id;
  pending_inputs_.clear();
  pending_reps_.clear();

  FeatureMessage out;
  out.client_id = msg.client_id;
  out.round = msg.round;
  out.n_samples = n;
  for (size_t i = 0; i < n; ++i) {
    Tensor input;
    if (per > 0) {
      std::vector<double> chunk(msg.activations.begin() + long(i * per),
                                msg.activations.begin() + long((i + 1) * per));
      input = Tensor::from_values({per}, std::move(chunk));
      input.set_requires_grad(true);
    }
    Tensor rep = fusion_decode(model_.server,
                               jsc_decode_concat(model_.server, input, alloc));
    pending_inputs_.push_back(input);
    pending_reps_.push_back(rep);
    auto v = rep.values();
    out.features.insert(out.features.end(), v.begin(), v.end());
  }
  return out;
}

GradientMessage FedServer::server_backward(const GradientMessage& rep_grads) {
  if (pending_client_ < 0)
    throw std::runtime_error("no forward tape on the server");
  if (rep_grads.client_id != pending_client_)
    throw std::invalid_argument("gradient from an unexpected client");
  if (rep_grads.boundary != GradBoundary::ServerOutput)
    throw std::invalid_argument("expected server-output gradients");
  size_t n = pending_reps_.size();
  size_t d = model_.config.semantic_dim;
  if (rep_grads.n_samples != n || rep_grads.grads.size() != n * d)
    throw std::invalid_argument("gradient batch does not match the forward tape");

  opt_.zero_grad();
  GradientMessage out;
  out.client_id = rep_grads.client_id;
  out.round = rep_grads.round;
  out.boundary = GradBoundary::DecoderInput;
  out.n_samples = n;
  for (size_t i = 0; i < n; ++i) {
    std::span<const double> chunk(rep_grads.grads.data() + i * d, d);
    backward_from(pending_reps_[i], chunk);
    if (pending_inputs_[i].defined()) {
      auto g = pending_inputs_[i].grad();
      out.grads.insert(out.grads.end(), g.begin(), g.end());
    }
  }
  opt_.step();
  pending_client_ = -1;
  pending_inputs_.clear();
  pending_reps_.clear();
  return out;
}

NamedVectors aggregate_updates(const std::vector<UpdateMessage>& updates,
                               std::span<const double> weights) {
  if (updates.empty()) throw std::invalid_argument("no updates to aggregate");
  if (weights.size() != updates.size())
    throw std::invalid_argument("weight count does not match update count");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("negative aggregation weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("aggregation weights must sum to 1");

  std::vector<size_t> order(updates.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });
  for (size_t i = 1; i < order.size(); ++i)
    if (updates[order[i]].client_id == updates[order[i - 1]].client_id)
      throw std::invalid_argument("duplicate client id in updates");

  const auto& first = updates[order[0]].params;
  NamedVectors out;
  out.reserve(first.size());
  for (const auto& t : first) {
    NamedVector nv;
    nv.name = t.name;
    nv.shape = t.shape;
    nv.values.assign(t.values.size(), 0.0);
    out.push_back(std::move(nv));
  }
  for (size_t rank = 0; rank < order.size(); ++rank) {
    const UpdateMessage& u = updates[order[rank]];
    double w = weights[order[rank]];
    if (u.params.size() != out.size())
      throw std::invalid_argument("update tensor count mismatch");
    for (size_t j = 0; j < out.size(); ++j) {
      const NamedVector& src = u.params[j];
      if (src.name != out[j].name)
        throw std::invalid_argument("update tensor order mismatch at '" +
                                    src.name + "'");
      if (src.shape != out[j].shape)
        throw std::invalid_argument("shape mismatch for '" + src.name + "'");
      for (size_t k = 0; k < src.values.size(); ++k)
        out[j].values[k] += w * src.values[k];
    }
  }
  return out;
}

double centralized_step(ModelBundle& bundle, Optimizer& device_opt,
                        Optimizer& server_opt,
                        std::span<const Sample* const> batch,
                        std::span<const TaskId> tasks, int symbol_budget,
                        ChannelState* channel) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  RateAllocation alloc = uniform_allocation(symbol_budget);
  Tensor total;
  for (const Sample* s : batch) {
    Tensor sv = encode_sample(bundle.device, bundle.config, *s);
    Tensor tx = jsc_encode_concat(bundle.device, sv, alloc);
    ChannelHop hop = transmit(tx, alloc, channel);
    Tensor rep = fusion_decode(
        bundle.server, jsc_decode_concat(bundle.server, hop.rx, alloc));

    Tensor per_sample;
    for (TaskId t : tasks) {
      std::array<TaskId, 1> one = {t};
      Tensor piece = task_loss(bundle.device, rep, *s, one);
      per_sample = per_sample.defined() ? add(per_sample, piece) : piece;
    }
    per_sample = scale(per_sample, 1.0 / double(tasks.size()));
    total = total.defined() ? add(total, per_sample) : per_sample;
  }
  Tensor loss = scale(total, 1.0 / double(batch.size()));
  double value = loss.scalar();
  device_opt.zero_grad();
  server_opt.zero_grad();
  backward(loss);
  server_opt.step();
  device_opt.step();
  return value;
}

void write_trainlog_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "round,mean_loss,loss_classify,loss_reconstruct,loss_vqa,"
         "loss_caption,bytes_up,bytes_down\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& row : log.rows) {
    out << row.round << ',' << fmt(row.mean_loss);
    for (TaskId t : all_tasks()) {
      auto it = row.task_losses.find(t);
      out << ',' << (it == row.task_losses.end() ? "" : fmt(it->second));
    }
    out << ',' << row.bytes_up << ',' << row.bytes_down << '\n';
  }
}

namespace {

class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::binary);
    if (!out_) throw std::runtime_error("cannot open trace file '" + path + "'");
  }
  void record(uint8_t type, uint32_t client, uint32_t round,
              const std::vector<uint8_t>& payload) {
    if (!out_.is_open()) return;
    std::vector<uint8_t> head;
    head.push_back(type);
    append_u32(head, client);
    append_u32(head, round);
    append_u64(head, uint64_t(payload.size()));
    out_.write(reinterpret_cast<const char*>(head.data()), long(head.size()));
    out_.write(reinterpret_cast<const char*>(payload.data()),
               long(payload.size()));
    out_.put('\n');
  }

 private:
  std::ofstream out_;
};

}  // namespace

FedTrainResult run_training(const ModelBundle& init, const RoundConfig& cfg,
                            std::span<const Sample> train) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("empty training set");
  size_t C = size_t(cfg.num_clients);
  if (train.size() < C)
    throw std::invalid_argument("fewer samples than clients");

  std::vector<std::vector<Sample>> shards(C);
  for (size_t i = 0; i < train.size(); ++i)
    shards[i % C].push_back(train[i]);

  std::vector<double> weights(cfg.client_weights);
  if (weights.empty()) {
    weights.resize(C);
    for (size_t c = 0; c < C; ++c)
      weights[c] = double(shards[c].size()) / double(train.size());
  }

  FedServer server(init.clone(), cfg);
  std::vector<FedClient> clients;
  clients.reserve(C);
  for (size_t c = 0; c < C; ++c)
    clients.emplace_back(int(c), init.clone(), std::move(shards[c]), cfg);

  TraceWriter trace(cfg.trace_path);
  FedTrainResult result{init.clone(), {}};
  NamedVectors last_global;

  for (int r = 0; r < cfg.rounds; ++r) {
    TrainLogRow row;
    row.round = r;
    for (size_t c = 0; c < C; ++c) {
      for (int e = 0; e < cfg.local_steps; ++e) {
        ActivationMessage am = clients[c].client_forward(r);
        auto am_bytes = message_payload(am);
        trace.record(kTraceActivation, uint32_t(c), uint32_t(r), am_bytes);
        row.bytes_up += am_bytes.size();

        FeatureMessage fm = server.server_forward(am);
        auto fm_bytes = message_payload(fm);
        trace.record(kTraceFeatures, uint32_t(c), uint32_t(r), fm_bytes);
        row.bytes_down += fm_bytes.size();

        GradientMessage gm = clients[c].client_loss_backward(fm);
        auto gm_bytes = message_payload(gm);
        trace.record(kTraceGradUp, uint32_t(c), uint32_t(r), gm_bytes);
        row.bytes_up += gm_bytes.size();

        GradientMessage bm = server.server_backward(gm);
        auto bm_bytes = message_payload(bm);
        trace.record(kTraceGradDown, uint32_t(c), uint32_t(r), bm_bytes);
        row.bytes_down += bm_bytes.size();

        clients[c].client_update(bm);
        row.mean_loss += clients[c].last_loss();
        for (const auto& [task, value] : clients[c].last_task_losses())
          row.task_losses[task] += value;
      }
    }
    double exchanges = double(C) * double(cfg.local_steps);
    row.mean_loss /= exchanges;
    for (auto& [task, value] : row.task_losses) value /= exchanges;

    std::vector<UpdateMessage> updates;
    updates.reserve(C);
    for (size_t c = 0; c < C; ++c) {
      updates.push_back(clients[c].make_update(r));
      auto bytes = message_payload(updates.back());
      trace.record(kTraceUpdate, uint32_t(c), uint32_t(r), bytes);
      row.bytes_up += bytes.size();
    }
    last_global = aggregate_updates(updates, weights);
    BroadcastMessage bc{r, last_global};
    auto bc_bytes = message_payload(bc);
    for (size_t c = 0; c < C; ++c) {
      trace.record(kTraceBroadcast, uint32_t(c), uint32_t(r), bc_bytes);
      row.bytes_down += bc_bytes.size();
      clients[c].apply_global(last_global);
    }

    result.log.total_bytes_up += row.bytes_up;
    result.log.total_bytes_down += row.bytes_down;
    result.log.rows.push_back(std::move(row));
  }

  // Assemble the final global model: aggregated device side over the
  // server's trained decoders; frozen tensors keep their initial values.
  if (cfg.rounds > 0) {
    NamedTensors dst_srv = result.model.named_server_params();
    NamedTensors src_srv = server.model().named_server_params();
    for (size_t i = 0; i < dst_srv.size(); ++i) {
      auto d = dst_srv[i].second.values_mut();
      auto s = src_srv[i].second.values();
      std::copy(s.begin(), s.end(), d.begin());
    }
    NamedTensors dst_dev = result.model.named_device_params();
    for (const auto& nv : last_global) {
      auto it = std::find_if(dst_dev.begin(), dst_dev.end(),
                             [&](const auto& p) { return p.first == nv.name; });
      if (it == dst_dev.end())
        throw std::logic_error("aggregated tensor missing from the model");
      auto d = it->second.values_mut();
      std::copy(nv.values.begin(), nv.values.end(), d.begin());
    }
  }
  return result;
}

std::vector<TraceRecord> read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file '" + path + "'");
  std::vector<TraceRecord> records;
  while (true) {
    int first = in.get();
    if (first == EOF) break;
    TraceRecord rec;
    rec.type = uint8_t(first);
    uint8_t buf[8];
    auto read_u32 = [&]() {
      in.read(reinterpret_cast<char*>(buf), 4);
      return uint32_t(buf[0]) | uint32_t(buf[1]) << 8 |
             uint32_t(buf[2]) << 16 | uint32_t(buf[3]) << 24;
    };
    rec.client_id = read_u32();
    rec.round = read_u32();
    in.read(reinterpret_cast<char*>(buf), 8);
    uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | buf[i];
    rec.payload.resize(len);
    if (len > 0)
      in.read(reinterpret_cast<char*>(rec.payload.data()), long(len));
    if (in.get() != '\n' || !in)
      throw std::runtime_error("malformed trace record");
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace mtsc
