#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "mtsc/federation.hpp"
#include "mtsc/metrics.hpp"

using namespace mtsc;

namespace {

ModelBundle make_bundle(uint64_t seed = 5) {
  RngStream rng(seed, stream_id_of('f', 'e', 'd', 0));
  return ModelBundle::init(ModelConfig{}, rng);
}

std::vector<Sample> make_train(int n, uint64_t seed = 9) {
  DatasetSpec spec;
  spec.n_train = n;
  spec.n_val = 1;
  spec.n_test = 1;
  spec.seed = seed;
  return generate_dataset(spec).train;
}

RoundConfig adam_config() {
  RoundConfig cfg;
  cfg.device_opt.kind = OptimizerKind::Adam;
  cfg.device_opt.learning_rate = 3e-3;
  cfg.server_opt.kind = OptimizerKind::Adam;
  cfg.server_opt.learning_rate = 3e-3;
  return cfg;
}

double max_param_diff(const ModelBundle& a, const ModelBundle& b) {
  NamedTensors pa = a.named_all_params();
  NamedTensors pb = b.named_all_params();
  REQUIRE(pa.size() == pb.size());
  double worst = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    auto va = pa[i].second.values();
    auto vb = pb[i].second.values();
    for (size_t k = 0; k < va.size(); ++k)
      worst = std::max(worst, std::abs(va[k] - vb[k]));
  }
  return worst;
}

UpdateMessage toy_update(int client_id, std::vector<double> values) {
  UpdateMessage u;
  u.client_id = client_id;
  u.sample_count = 1;
  NamedVector nv;
  nv.name = "w";
  nv.shape = {values.size()};
  nv.values = std::move(values);
  u.params.push_back(std::move(nv));
  return u;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("split protocol reproduces centralized fine-tuning over 10 steps") {
  ModelBundle init = make_bundle();
  init.freeze_pretrained_core();
  std::vector<Sample> train = make_train(10);

  RoundConfig cfg = adam_config();
  cfg.rounds = 10;
  cfg.num_clients = 1;
  cfg.local_steps = 1;
  cfg.batch_size = 4;
  cfg.tasks = all_tasks();
  auto fed = run_training(init, cfg, train);

  ModelBundle central = init.clone();
  Optimizer dev_opt(cfg.device_opt), srv_opt(cfg.server_opt);
  for (const auto& [name, t] : central.named_device_params())
    dev_opt.add_param(name, t);
  for (const auto& [name, t] : central.named_server_params())
    srv_opt.add_param(name, t);
  size_t cursor = 0;
  for (int step = 0; step < 10; ++step) {
    std::vector<const Sample*> batch;
    for (int k = 0; k < cfg.batch_size; ++k) {
      batch.push_back(&train[cursor]);
      cursor = (cursor + 1) % train.size();
    }
    centralized_step(central, dev_opt, srv_opt, batch, cfg.tasks,
                     cfg.symbol_budget, nullptr);
  }
  CHECK(max_param_diff(fed.model, central) < 1e-6);
}

TEST_CASE("boundary gradients match the un-split composite model") {
  ModelBundle init = make_bundle(11);
  std::vector<Sample> train = make_train(4, 3);
  RoundConfig cfg = adam_config();
  cfg.batch_size = 3;

  FedClient client(0, init.clone(), train, cfg);
  FedServer server(init.clone(), cfg);
  ActivationMessage am = client.client_forward(0);
  FeatureMessage fm = server.server_forward(am);
  GradientMessage gm = client.client_loss_backward(fm);
  REQUIRE(gm.boundary == GradBoundary::ServerOutput);
  REQUIRE(gm.grads.size() == 3 * 32);
  GradientMessage bm = server.server_backward(gm);
  REQUIRE(bm.boundary == GradBoundary::DecoderInput);
  REQUIRE(bm.grads.size() == 3 * 64);

  // Composite oracle: identical math in a single graph.
  ModelBundle comp = init.clone();
  RateAllocation alloc = uniform_allocation(cfg.symbol_budget);
  std::vector<Tensor> tx_nodes, rep_nodes;
  Tensor total;
  for (int i = 0; i < 3; ++i) {
    const Sample& s = train[size_t(i)];
    Tensor sv = encode_sample(comp.device, comp.config, s);
    Tensor tx = jsc_encode_concat(comp.device, sv, alloc);
    Tensor rep = fusion_decode(comp.server,
                               jsc_decode_concat(comp.server, tx, alloc));
    tx_nodes.push_back(tx);
    rep_nodes.push_back(rep);
    Tensor per;
    for (TaskId t : cfg.tasks) {
      std::array<TaskId, 1> one = {t};
      Tensor piece = task_loss(comp.device, rep, s, one);
      per = per.defined() ? add(per, piece) : piece;
    }
    per = scale(per, 1.0 / double(cfg.tasks.size()));
    total = total.defined() ? add(total, per) : per;
  }
  backward(scale(total, 1.0 / 3.0));

  for (int i = 0; i < 3; ++i) {
    auto g_rep = rep_nodes[size_t(i)].grad();
    auto g_tx = tx_nodes[size_t(i)].grad();
    for (size_t k = 0; k < g_rep.size(); ++k)
      CHECK(std::abs(g_rep[k] - gm.grads[size_t(i) * 32 + k]) < 1e-10);
    for (size_t k = 0; k < g_tx.size(); ++k)
      CHECK(std::abs(g_tx[k] - bm.grads[size_t(i) * 64 + k]) < 1e-10);
  }
}

TEST_CASE("aggregation matches the documented examples exactly") {
  auto a = toy_update(0, {0.0, 0.0});
  auto b = toy_update(1, {2.0, 4.0});
  std::vector<double> equal = {0.5, 0.5};
  auto mid = aggregate_updates({a, b}, equal);
  CHECK(mid[0].values[0] == 1.0);
  CHECK(mid[0].values[1] == 2.0);

  std::vector<double> first_only = {1.0, 0.0};
  auto first = aggregate_updates({a, b}, first_only);
  CHECK(first[0].values[0] == 0.0);
  CHECK(first[0].values[1] == 0.0);

  // Identical updates aggregate to themselves for dyadic weights.
  auto c = toy_update(0, {3.0, -7.0});
  auto d = toy_update(1, {3.0, -7.0});
  std::vector<double> w = {0.25, 0.75};
  auto same = aggregate_updates({c, d}, w);
  CHECK(same[0].values[0] == 3.0);
  CHECK(same[0].values[1] == -7.0);
}

TEST_CASE("aggregation is linear in the updates") {
  RngStream rng(31, 7);
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = size_t(rng.uniform_int(1, 6));
    std::vector<double> u0(n), u1(n), v0(n), v1(n);
    for (size_t i = 0; i < n; ++i) {
      u0[i] = double(rng.uniform_int(-8, 8));
      u1[i] = double(rng.uniform_int(-8, 8));
      v0[i] = double(rng.uniform_int(-8, 8));
      v1[i] = double(rng.uniform_int(-8, 8));
    }
    // Dyadic weights and alpha keep every operation exact in binary floats.
    double w0 = double(rng.uniform_int(0, 8)) / 8.0;
    std::vector<double> w = {w0, 1.0 - w0};
    double alpha = double(rng.uniform_int(0, 4)) / 4.0;

    std::vector<double> mix0(n), mix1(n);
    for (size_t i = 0; i < n; ++i) {
      mix0[i] = alpha * u0[i] + (1.0 - alpha) * v0[i];
      mix1[i] = alpha * u1[i] + (1.0 - alpha) * v1[i];
    }
    auto agg_mix = aggregate_updates(
        {toy_update(0, mix0), toy_update(1, mix1)}, w);
    auto agg_u = aggregate_updates({toy_update(0, u0), toy_update(1, u1)}, w);
    auto agg_v = aggregate_updates({toy_update(0, v0), toy_update(1, v1)}, w);
    for (size_t i = 0; i < n; ++i) {
      double expect = alpha * agg_u[0].values[i] +
                      (1.0 - alpha) * agg_v[0].values[i];
      CHECK(agg_mix[0].values[i] == expect);
    }
  }
}

TEST_CASE("aggregation orders by client id and validates shapes") {
  auto hi = toy_update(7, {10.0});
  auto lo = toy_update(2, {0.0});
  std::vector<double> w = {0.5, 0.5};  // applies to (hi, lo) as given
  auto out = aggregate_updates({hi, lo}, w);
  CHECK(out[0].values[0] == 5.0);

  auto bad_shape = toy_update(9, {1.0, 2.0});
  CHECK_THROWS_WITH_AS(
      aggregate_updates({lo, bad_shape}, w), doctest::Contains("'w'"),
      std::invalid_argument);
  auto dup = toy_update(2, {1.0});
  CHECK_THROWS(aggregate_updates({lo, dup}, w));
  std::vector<double> bad_w = {0.9, 0.3};
  CHECK_THROWS(aggregate_updates({lo, hi}, bad_w));
}

TEST_CASE("frozen fusion base stays bit-identical across rounds") {
  ModelBundle init = make_bundle(17);
  init.freeze_pretrained_core();
  std::vector<double> dev_l1(init.device.fusion.l1.W.values().begin(),
                             init.device.fusion.l1.W.values().end());
  std::vector<double> srv_l2(init.server.fusion_l2.W.values().begin(),
                             init.server.fusion_l2.W.values().end());

  RoundConfig cfg = adam_config();
  cfg.rounds = 3;
  cfg.num_clients = 3;
  cfg.batch_size = 2;
  auto fed = run_training(init, cfg, make_train(9));

  auto after_dev = fed.model.device.fusion.l1.W.values();
  auto after_srv = fed.model.server.fusion_l2.W.values();
  for (size_t i = 0; i < dev_l1.size(); ++i) CHECK(after_dev[i] == dev_l1[i]);
  for (size_t i = 0; i < srv_l2.size(); ++i) CHECK(after_srv[i] == srv_l2[i]);
  // The trainable parts did move.
  CHECK(max_param_diff(fed.model, init) > 0.0);
}

TEST_CASE("zero rounds leave the model untouched") {
  ModelBundle init = make_bundle(23);
  RoundConfig cfg = adam_config();
  cfg.rounds = 0;
  auto fed = run_training(init, cfg, make_train(8));
  CHECK(max_param_diff(fed.model, init) == 0.0);
  CHECK(fed.log.rows.empty());
}

TEST_CASE("training loss falls over twenty rounds on every seed") {
  std::vector<double> first_losses, last_losses;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    ModelBundle init = make_bundle(seed);
    init.freeze_pretrained_core();
    RoundConfig cfg = adam_config();
    cfg.rounds = 20;
    cfg.num_clients = 2;
    cfg.batch_size = 4;
    cfg.seed = seed;
    auto fed = run_training(init, cfg, make_train(16, 40 + seed));
    first_losses.push_back(fed.log.rows.front().mean_loss);
    last_losses.push_back(fed.log.rows.back().mean_loss);
  }
  CHECK(mean_of(last_losses) < mean_of(first_losses));
}

TEST_CASE("repeat runs produce bitwise-identical messages") {
  ModelBundle init = make_bundle(29);
  std::vector<Sample> train = make_train(6);
  RoundConfig cfg = adam_config();
  cfg.batch_size = 3;
  cfg.train_with_channel_noise = true;
  cfg.channel.snr_db = 6.0;

  FedClient c1(0, init.clone(), train, cfg);
  FedClient c2(0, init.clone(), train, cfg);
  ActivationMessage m1 = c1.client_forward(0);
  ActivationMessage m2 = c2.client_forward(0);
  CHECK(message_payload(m1) == message_payload(m2));

  // Noise enabled vs disabled: payloads differ, schema identical.
  RoundConfig clean = cfg;
  clean.train_with_channel_noise = false;
  FedClient c3(0, init.clone(), train, clean);
  ActivationMessage m3 = c3.client_forward(0);
  CHECK(m3.activations != m1.activations);
  CHECK(m3.sample_ids == m1.sample_ids);
}

TEST_CASE("noise-disabled activations equal the clean coder output") {
  ModelBundle init = make_bundle(31);
  std::vector<Sample> train = make_train(2);
  RoundConfig cfg = adam_config();
  cfg.batch_size = 1;
  FedClient client(0, init.clone(), train, cfg);
  ActivationMessage am = client.client_forward(0);

  Tensor sv = encode_sample(init.device, init.config, train[0]);
  Tensor tx = jsc_encode_concat(init.device, sv,
                                uniform_allocation(cfg.symbol_budget));
  auto expect = tx.values();
  REQUIRE(am.activations.size() == expect.size());
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(am.activations[i] == expect[i]);
}

TEST_CASE("zero-symbol exchanges still complete deterministically") {
  ModelBundle init = make_bundle(37);
  std::vector<Sample> train = make_train(4);
  RoundConfig cfg = adam_config();
  cfg.batch_size = 2;
  cfg.symbol_budget = 0;
  FedClient client(0, init.clone(), train, cfg);
  FedServer server(init.clone(), cfg);

  ActivationMessage am = client.client_forward(0);
  CHECK(am.activations.empty());
  FeatureMessage fm = server.server_forward(am);
  CHECK(fm.features.size() == 2 * 32);
  FeatureMessage fm2 = server.server_forward(am);
  CHECK(fm.features == fm2.features);  // zero-input response is deterministic

  GradientMessage gm = client.client_loss_backward(fm2);
  GradientMessage bm = server.server_backward(gm);
  CHECK(bm.grads.empty());
  CHECK_NOTHROW(client.client_update(bm));
}

TEST_CASE("protocol traces account for every exchanged byte") {
  ModelBundle init = make_bundle(41);
  RoundConfig cfg = adam_config();
  cfg.rounds = 2;
  cfg.num_clients = 2;
  cfg.batch_size = 2;
  cfg.trace_path = "fed_trace.bin";
  auto fed = run_training(init, cfg, make_train(8));

  auto records = read_trace(cfg.trace_path);
  std::remove(cfg.trace_path.c_str());
  // Per round: 4 messages per exchange per client + C updates + C broadcasts.
  size_t per_round = 2 * 4 + 2 + 2;
  REQUIRE(records.size() == 2 * per_round);

  uint64_t up = 0, down = 0;
  for (const auto& rec : records) {
    switch (rec.type) {
      case kTraceActivation:
      case kTraceGradUp:
      case kTraceUpdate: up += rec.payload.size(); break;
      case kTraceFeatures:
      case kTraceGradDown:
      case kTraceBroadcast: down += rec.payload.size(); break;
      default: FAIL("unknown trace record type");
    }
  }
  CHECK(up == fed.log.total_bytes_up);
  CHECK(down == fed.log.total_bytes_down);
  uint64_t sum_up = 0, sum_down = 0;
  for (const auto& row : fed.log.rows) {
    sum_up += row.bytes_up;
    sum_down += row.bytes_down;
  }
  CHECK(sum_up == fed.log.total_bytes_up);
  CHECK(sum_down == fed.log.total_bytes_down);
}

TEST_CASE("update messages carry parameters only") {
  ModelBundle init = make_bundle(43);
  init.freeze_pretrained_core();
  RoundConfig cfg = adam_config();
  std::vector<Sample> train = make_train(4);
  FedClient client(0, init.clone(), train, cfg);
  UpdateMessage u = client.make_update(0);
  CHECK(u.sample_count == train.size());

  // Frozen fusion base is not shipped; all trainable tensors are.
  size_t trainable = 0;
  for (const auto& [name, t] : init.named_device_params())
    if (t.requires_grad()) ++trainable;
  CHECK(u.params.size() == trainable);
  for (const auto& nv : u.params) {
    CHECK(nv.name != "dev.fusion.l1.W");
    CHECK(nv.name != "dev.fusion.l2.W");
  }

  // Payload accounting: sample count header plus the named tensor blob.
  auto payload = message_payload(u);
  size_t expect = 8 + 4;
  for (const auto& nv : u.params)
    expect += 4 + nv.name.size() + 4 + 4 * nv.shape.size() +
              8 * nv.values.size();
  CHECK(payload.size() == expect);
}

TEST_CASE("trainlog csv has the documented schema") {
  ModelBundle init = make_bundle(47);
  RoundConfig cfg = adam_config();
  cfg.rounds = 2;
  cfg.num_clients = 2;
  cfg.batch_size = 2;
  auto fed = run_training(init, cfg, make_train(8));
  std::string path = "fed_trainlog.csv";
  write_trainlog_csv(fed.log, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "round,mean_loss,loss_classify,loss_reconstruct,loss_vqa,"
        "loss_caption,bytes_up,bytes_down");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  in.close();
  std::remove(path.c_str());
  CHECK(rows == 2);
}

TEST_CASE("config validation rejects malformed settings") {
  RoundConfig cfg;
  cfg.num_clients = 0;
  CHECK_THROWS(cfg.validate());
  cfg = RoundConfig{};
  cfg.local_steps = 0;
  CHECK_THROWS(cfg.validate());
  cfg = RoundConfig{};
  cfg.client_weights = {0.5, 0.6};
  cfg.num_clients = 2;
  CHECK_THROWS(cfg.validate());
  cfg = RoundConfig{};
  cfg.symbol_budget = 40;
  CHECK_THROWS(cfg.validate());
  cfg = RoundConfig{};
  cfg.tasks.clear();
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("server rejects gradients without a matching tape") {
  ModelBundle init = make_bundle(53);
  RoundConfig cfg = adam_config();
  FedServer server(init.clone(), cfg);
  GradientMessage gm;
  gm.client_id = 0;
  gm.boundary = GradBoundary::ServerOutput;
  gm.n_samples = 1;
  gm.grads.assign(32, 0.0);
  CHECK_THROWS(server.server_backward(gm));
}

}  // TEST_SUITE
