#include "mtsc/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string_view>

namespace mtsc {
namespace {

std::string trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& raw) {
  throw std::runtime_error("config: bad value '" + raw + "' for key '" + key + "'");
}

double parse_f64(const std::string& key, const std::string& raw) {
  size_t idx = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &idx);
  } catch (const std::exception&) {
    bad_value(key, raw);
  }
  if (idx != raw.size()) bad_value(key, raw);
  return v;
}

int64_t parse_i64(const std::string& key, const std::string& raw) {
  size_t idx = 0;
  int64_t v = 0;
  try {
    v = std::stoll(raw, &idx);
  } catch (const std::exception&) {
    bad_value(key, raw);
  }
  if (idx != raw.size()) bad_value(key, raw);
  return v;
}

uint64_t parse_u64(const std::string& key, const std::string& raw) {
  int64_t v = parse_i64(key, raw);
  if (v < 0) bad_value(key, raw);
  return static_cast<uint64_t>(v);
}

int parse_int(const std::string& key, const std::string& raw) {
  int64_t v = parse_i64(key, raw);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    bad_value(key, raw);
  }
  return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  bad_value(key, raw);
}

size_t parse_dim(const std::string& key, const std::string& raw) {
  int64_t v = parse_i64(key, raw);
  if (v <= 0) bad_value(key, raw);
  return static_cast<size_t>(v);
}

void apply(AppConfig& cfg, const std::string& key, const std::string& raw) {
  if (key == "model.fusion_hidden") {
    cfg.model.fusion_hidden = parse_dim(key, raw);
  } else if (key == "model.image_hidden") {
    cfg.model.image_hidden = parse_dim(key, raw);
  } else if (key == "model.token_dim") {
    cfg.model.token_dim = parse_dim(key, raw);
  } else if (key == "model.audio_bins") {
    cfg.model.audio_bins = parse_dim(key, raw);
  } else if (key == "model.lora_enabled") {
    cfg.model.lora_enabled = parse_bool(key, raw);
  } else if (key == "model.lora_rank") {
    cfg.model.lora_rank = parse_dim(key, raw);
  } else if (key == "model.lora_alpha") {
    cfg.model.lora_alpha = parse_f64(key, raw);
  } else if (key == "channel.snr_db") {
    cfg.channel_snr_db = parse_f64(key, raw);
  } else if (key == "channel.k_factor") {
    cfg.channel_k_factor = parse_f64(key, raw);
  } else if (key == "data.n_train") {
    cfg.data.n_train = parse_dim(key, raw);
  } else if (key == "data.n_val") {
    cfg.data.n_val = parse_dim(key, raw);
  } else if (key == "data.n_test") {
    cfg.data.n_test = parse_dim(key, raw);
  } else if (key == "data.seed") {
    cfg.data.seed = parse_u64(key, raw);
  } else if (key == "data.jitter") {
    cfg.data.jitter = parse_f64(key, raw);
  } else if (key == "pretrain.epochs") {
    cfg.pretrain_epochs = parse_int(key, raw);
  } else if (key == "pretrain.batch_size") {
    cfg.pretrain_batch = parse_int(key, raw);
  } else if (key == "pretrain.lr") {
    cfg.pretrain_lr = parse_f64(key, raw);
  } else if (key == "fed.rounds") {
    cfg.fed_rounds = parse_int(key, raw);
  } else if (key == "fed.clients") {
    cfg.fed_clients = parse_int(key, raw);
  } else if (key == "fed.local_steps") {
    cfg.fed_local_steps = parse_int(key, raw);
  } else if (key == "fed.batch_size") {
    cfg.fed_batch = parse_int(key, raw);
  } else if (key == "fed.noisy_activations") {
    cfg.fed_noisy_activations = parse_bool(key, raw);
  } else if (key == "fed.snr_db") {
    cfg.fed_snr_db = parse_f64(key, raw);
  } else if (key == "fed.device_lr") {
    cfg.fed_device_lr = parse_f64(key, raw);
  } else if (key == "fed.server_lr") {
    cfg.fed_server_lr = parse_f64(key, raw);
  } else if (key == "sweep.snr_min") {
    cfg.sweep_snr_min = parse_f64(key, raw);
  } else if (key == "sweep.snr_max") {
    cfg.sweep_snr_max = parse_f64(key, raw);
  } else if (key == "sweep.snr_step") {
    cfg.sweep_snr_step = parse_f64(key, raw);
  } else if (key == "sweep.seeds") {
    cfg.sweep_seeds = parse_int(key, raw);
  } else if (key == "sweep.symbol_budget") {
    cfg.sweep_budget = parse_int(key, raw);
  } else if (key == "rag.gate") {
    cfg.rag_gate = parse_f64(key, raw);
  } else if (key == "rag.k") {
    cfg.rag_k = parse_int(key, raw);
  } else if (key == "compress.mem_budget_bytes") {
    cfg.compress_mem_budget = parse_u64(key, raw);
  } else if (key == "compress.mac_budget") {
    cfg.compress_mac_budget = parse_f64(key, raw);
  } else if (key == "compress.acc_floor") {
    cfg.compress_acc_floor = parse_f64(key, raw);
  } else {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
}

}  // namespace

void AppConfig::validate() const {
  model.validate();
  if (!(channel_k_factor >= 0.0)) {
    throw std::invalid_argument("config: channel.k_factor must be >= 0");
  }
  if (data.n_train == 0 || data.n_val == 0 || data.n_test == 0) {
    throw std::invalid_argument("config: dataset sizes must be positive");
  }
  if (!(data.jitter >= 0.0)) {
    throw std::invalid_argument("config: data.jitter must be >= 0");
  }
  if (pretrain_epochs < 0 || pretrain_batch <= 0 || !(pretrain_lr > 0.0)) {
    throw std::invalid_argument("config: bad pretrain settings");
  }
  if (fed_rounds < 0 || fed_clients <= 0 || fed_local_steps <= 0 || fed_batch <= 0) {
    throw std::invalid_argument("config: bad federation settings");
  }
  if (!(fed_device_lr > 0.0) || !(fed_server_lr > 0.0)) {
    throw std::invalid_argument("config: federation learning rates must be > 0");
  }
  if (!(sweep_snr_step > 0.0) || sweep_snr_max < sweep_snr_min) {
    throw std::invalid_argument("config: bad sweep grid");
  }
  if (sweep_seeds <= 0) {
    throw std::invalid_argument("config: sweep.seeds must be positive");
  }
  if (sweep_budget < 0 || sweep_budget > kMaxBudget) {
    throw std::invalid_argument("config: sweep.symbol_budget out of range");
  }
  if (!(rag_gate >= 0.0) || rag_k <= 0) {
    throw std::invalid_argument("config: bad retrieval settings");
  }
  if (!(compress_mac_budget > 0.0)) {
    throw std::invalid_argument("config: compress.mac_budget must be > 0");
  }
  if (!(compress_acc_floor >= 0.0 && compress_acc_floor <= 1.0)) {
    throw std::invalid_argument("config: compress.acc_floor must be in [0, 1]");
  }
}

AppConfig parse_config(const std::string& text) {
  AppConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: line " + std::to_string(line_no) +
                               " is not 'key = value': '" + stripped + "'");
    }
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::runtime_error("config: line " + std::to_string(line_no) +
                               " has an empty key or value");
    }
    apply(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace mtsc
