// Synthetic aligned multi-modal corpus: class-parametrized shape images,
// template-grammar token text, class-frequency sinusoid audio, and the
// per-task labels derived from them.

#pragma once

#include <cstdint>
#include <vector>

#include "mtsc/rng.hpp"

namespace mtsc {

inline constexpr int kNumClasses = 10;
inline constexpr int kNumTemplates = 4;
inline constexpr int kVocabSize = 64;
inline constexpr int kTextLen = 16;       // padded token slots, pad id 0
inline constexpr int kImageSide = 16;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr int kAudioLen = 64;
inline constexpr int kCaptionSlots = 8;
inline constexpr int kVqaClasses = 10;

struct Sample {
  int sample_id = 0;
  int cls = 0;          // [0, 10)
  int template_id = 0;  // caption grammar / question template, [0, 4)
  std::vector<double> image;   // 256 values in [0, 1]
  std::vector<int> text;       // 16 ids, vocab 64, zero-padded at the tail
  std::vector<double> audio;   // 64 values in [-1, 1]
  std::vector<int> caption;    // 8 reference tokens, zero-padded
  int vqa_answer = 0;          // (cls + 3*template_id) mod 10
};

struct DatasetSpec {
  size_t n_train = 200;
  size_t n_val = 50;
  size_t n_test = 100;
  uint64_t seed = 1;
  double jitter = 0.05;  // intra-class variation strength
};

struct Dataset {
  std::vector<Sample> train, val, test;
};

// Deterministic in the spec; the three splits draw from disjoint substreams.
// Classes are assigned round-robin within each split, so per-split class
// counts differ by at most one.
Dataset generate_dataset(const DatasetSpec& spec);

// Caption token sequence for a (class, template) pair: a template marker
// followed by 3 + template_id body tokens, never the pad id.
std::vector<int> caption_tokens(int cls, int template_id);

// Structural range checks; throws naming the violated field.
void validate_sample(const Sample& sample);

uint64_t dataset_hash(const Dataset& data);

}  // namespace mtsc
