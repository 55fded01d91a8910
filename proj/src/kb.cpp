#include "mtsc/kb.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mtsc {

namespace {

constexpr char kMagic[7] = {'M', 'T', 'S', 'C', 'K', 'B', '1'};

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b,
              double norm_a, double norm_b) {
  double dot = 0.0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (norm_a * norm_b);
}

void check_dim(std::span<const double> v, const char* what) {
  if (v.size() != kKbDim)
    throw std::invalid_argument(std::string(what) + " must have " +
                                std::to_string(kKbDim) + " entries");
}

}  // namespace

void KnowledgeBase::insert(std::span<const double> key,
                           std::span<const double> value, std::string tag) {
  check_dim(key, "kb key");
  check_dim(value, "kb value");
  if (norm_of(key) == 0.0)
    throw std::invalid_argument("kb key must be non-zero");
  KbEntry e;
  e.key.assign(key.begin(), key.end());
  e.value.assign(value.begin(), value.end());
  e.tag = std::move(tag);
  e.insert_index = next_index_++;
  entries_.push_back(std::move(e));
}

RetrievalResult KnowledgeBase::retrieve(std::span<const double> query,
                                        size_t k) const {
  if (k == 0) throw std::invalid_argument("retrieval needs k >= 1");
  check_dim(query, "kb query");
  double qn = norm_of(query);
  if (qn == 0.0) throw std::invalid_argument("kb query must be non-zero");

  RetrievalResult out;
  if (entries_.empty()) {
    out.empty_kb = true;
    return out;
  }
  out.hits.reserve(entries_.size());
  for (size_t pos = 0; pos < entries_.size(); ++pos) {
    const KbEntry& e = entries_[pos];
    out.hits.push_back({pos, cosine(query, e.key, qn, norm_of(e.key))});
  }
  auto better = [&](const RetrievedHit& a, const RetrievedHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return entries_[a.entry_pos].insert_index <
           entries_[b.entry_pos].insert_index;
  };
  size_t keep = std::min(k, out.hits.size());
  std::partial_sort(out.hits.begin(), out.hits.begin() + std::ptrdiff_t(keep),
                    out.hits.end(), better);
  out.hits.resize(keep);
  return out;
}

void KnowledgeBase::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open kb file " + path);
  out.write(kMagic, sizeof(kMagic));
  uint64_t count = entries_.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const KbEntry& e : entries_) {
    out.write(reinterpret_cast<const char*>(e.key.data()),
              kKbDim * sizeof(double));
    out.write(reinterpret_cast<const char*>(e.value.data()),
              kKbDim * sizeof(double));
    uint32_t tag_len = uint32_t(e.tag.size());
    out.write(reinterpret_cast<const char*>(&tag_len), sizeof(tag_len));
    out.write(e.tag.data(), tag_len);
    out.write(reinterpret_cast<const char*>(&e.insert_index),
              sizeof(e.insert_index));
  }
  if (!out) throw std::runtime_error("kb write failure " + path);
}

KnowledgeBase KnowledgeBase::load(const std::string& path, Scope scope) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open kb file " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("bad kb magic in " + path);
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  KnowledgeBase kb(scope);
  for (uint64_t i = 0; i < count; ++i) {
    KbEntry e;
    e.key.resize(kKbDim);
    e.value.resize(kKbDim);
    in.read(reinterpret_cast<char*>(e.key.data()), kKbDim * sizeof(double));
    in.read(reinterpret_cast<char*>(e.value.data()), kKbDim * sizeof(double));
    uint32_t tag_len = 0;
    in.read(reinterpret_cast<char*>(&tag_len), sizeof(tag_len));
    e.tag.resize(tag_len);
    in.read(e.tag.data(), tag_len);
    in.read(reinterpret_cast<char*>(&e.insert_index), sizeof(e.insert_index));
    if (!in) throw std::runtime_error("truncated kb file " + path);
    kb.entries_.push_back(std::move(e));
    kb.next_index_ = std::max(kb.next_index_, kb.entries_.back().insert_index + 1);
  }
  return kb;
}

std::vector<double> augment_semantics(std::span<const double> sv,
                                      const KnowledgeBase& kb,
                                      const RetrievalResult& retrieved,
                                      double lambda_gate) {
  check_dim(sv, "semantic vector");
  if (lambda_gate < 0.0 || lambda_gate > 1.0)
    throw std::invalid_argument("lambda_gate must lie in [0, 1]");
  std::vector<double> out(sv.begin(), sv.end());
  if (retrieved.hits.empty()) return out;

  // softmax over similarities, max-shifted for stability
  double mx = retrieved.hits[0].similarity;
  for (const auto& h : retrieved.hits) mx = std::max(mx, h.similarity);
  std::vector<double> w(retrieved.hits.size());
  double total = 0.0;
  for (size_t j = 0; j < w.size(); ++j)
    total += (w[j] = std::exp(retrieved.hits[j].similarity - mx));
  for (double& x : w) x /= total;

  for (size_t i = 0; i < kKbDim; ++i) {
    double mix = 0.0;
    for (size_t j = 0; j < w.size(); ++j)
      mix += w[j] * kb.entry(retrieved.hits[j].entry_pos).value[i];
    out[i] = (1.0 - lambda_gate) * sv[i] + lambda_gate * mix;
  }
  return out;
}

}  // namespace mtsc
