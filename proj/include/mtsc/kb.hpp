// Plug-in vector knowledge bases: exact top-k cosine retrieval over
// insert-ordered entries, and a gated convex blend of retrieved values into
// a semantic vector. No model parameter is ever touched by these paths.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mtsc {

inline constexpr size_t kKbDim = 32;

struct KbEntry {
  std::vector<double> key;    // 32 floats, never all-zero
  std::vector<double> value;  // 32 floats
  std::string tag;
  uint64_t insert_index = 0;
};

struct RetrievedHit {
  size_t entry_pos = 0;  // position in the kb's entry list
  double similarity = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievedHit> hits;  // descending similarity, ties by age
  bool empty_kb = false;
};

class KnowledgeBase {
 public:
  enum class Scope { Local, Global };

  explicit KnowledgeBase(Scope scope = Scope::Local) : scope_(scope) {}

  Scope scope() const { return scope_; }
  size_t size() const { return entries_.size(); }
  const KbEntry& entry(size_t pos) const { return entries_.at(pos); }

  // Appends with the next insert index. Zero keys are rejected because
  // cosine similarity is undefined for them.
  void insert(std::span<const double> key, std::span<const double> value,
              std::string tag = {});

  // Exact top-k by cosine similarity; ties broken by lower insert index.
  // Empty kb returns an empty result with the flag set. Zero queries throw.
  RetrievalResult retrieve(std::span<const double> query, size_t k) const;

  void save(const std::string& path) const;
  static KnowledgeBase load(const std::string& path,
                            Scope scope = Scope::Local);

 private:
  Scope scope_;
  std::vector<KbEntry> entries_;
  uint64_t next_index_ = 0;
};

// sv' = (1 - gate)*sv + gate * sum_j softmax(sim)_j * value_j.
// Empty retrieval returns sv unchanged (no arithmetic applied).
std::vector<double> augment_semantics(std::span<const double> sv,
                                      const KnowledgeBase& kb,
                                      const RetrievalResult& retrieved,
                                      double lambda_gate);

}  // namespace mtsc
