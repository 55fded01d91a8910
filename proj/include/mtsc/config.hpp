#pragma once

#include <cstdint>
#include <limits>
#include <string>

#include "mtsc/dataset.hpp"
#include "mtsc/model.hpp"

namespace mtsc {

// Application settings parsed from a dotted key/value text file:
//
//   # comment
//   model.fusion_hidden = 64
//   channel.snr_db = 6
//
// Unknown keys and malformed values are rejected. Every key is optional;
// omitted keys keep the defaults below.
struct AppConfig {
  ModelConfig model;

  // channel.*
  double channel_snr_db = 6.0;
  double channel_k_factor = 100.0;  // strong line of sight by default

  // data.*
  DatasetSpec data;  // n_train/n_val/n_test/seed/jitter

  // pretrain.*  (Phase I, centralized, clean link)
  int pretrain_epochs = 120;
  int pretrain_batch = 8;
  double pretrain_lr = 3e-3;

  // fed.*  (Phase II, federated split fine-tuning)
  int fed_rounds = 20;
  int fed_clients = 4;
  int fed_local_steps = 1;
  int fed_batch = 8;
  bool fed_noisy_activations = true;
  double fed_snr_db = 3.0;
  double fed_device_lr = 1e-3;
  double fed_server_lr = 1e-3;

  // sweep.*
  double sweep_snr_min = -6.0;
  double sweep_snr_max = 12.0;
  double sweep_snr_step = 3.0;
  int sweep_seeds = 5;
  int sweep_budget = kMaxBudget;

  // rag.*
  double rag_gate = 0.3;
  int rag_k = 3;

  // compress.*
  uint64_t compress_mem_budget = std::numeric_limits<uint64_t>::max();
  double compress_mac_budget = std::numeric_limits<double>::infinity();
  double compress_acc_floor = 0.0;

  void validate() const;
};

// Parses config text / a config file into settings. Throws on unknown keys,
// malformed lines, or invalid values, naming the offending line.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::string& path);

}  // namespace mtsc
