#include "mtsc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mtsc {

namespace {

// shape kind = cls % 5, size tier = cls / 5
enum Kind { kDisk = 0, kSquare, kDiamond, kRing, kStripes };

std::vector<double> render_image(int cls, double jitter, RngStream& rng) {
  std::vector<double> img(kImagePixels, 0.05);
  int kind = cls % 5;
  double radius = (cls < 5 ? 5.5 : 3.4);
  double cx = 7.5 + (rng.uniform() - 0.5) * 3.0;
  double cy = 7.5 + (rng.uniform() - 0.5) * 3.0;
  double angle = rng.uniform() * std::numbers::pi;

  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      double dx = x - cx, dy = y - cy;
      double dist = std::sqrt(dx * dx + dy * dy);
      bool on = false;
      switch (kind) {
        case kDisk:
          on = dist <= radius;
          break;
        case kSquare:
          on = std::max(std::fabs(dx), std::fabs(dy)) <= radius * 0.85;
          break;
        case kDiamond:
          on = std::fabs(dx) + std::fabs(dy) <= radius * 1.2;
          break;
        case kRing:
          on = dist <= radius && dist >= radius * 0.55;
          break;
        case kStripes: {
          double along = dx * std::cos(angle) + dy * std::sin(angle);
          on = dist <= radius * 1.1 &&
               std::fmod(std::fabs(along), 4.0) < 2.0;
          break;
        }
      }
      double v = on ? 0.9 : 0.05;
      v += jitter * rng.normal();
      img[y * kImageSide + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

std::vector<double> render_audio(int cls, double jitter, RngStream& rng) {
  std::vector<double> wave(kAudioLen);
  double cycles = 2.0 + cls;
  double phase = rng.uniform() * 2.0 * std::numbers::pi;
  for (int i = 0; i < kAudioLen; ++i) {
    double v = 0.8 * std::sin(2.0 * std::numbers::pi * cycles * i / kAudioLen +
                              phase);
    v += jitter * rng.normal();
    wave[i] = std::clamp(v, -1.0, 1.0);
  }
  return wave;
}

std::vector<Sample> make_split(size_t n, double jitter, RngStream rng,
                               int id_base) {
  std::vector<Sample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Sample s;
    s.sample_id = id_base + int(i);
    s.cls = int(i % kNumClasses);
    s.template_id = int(rng.uniform_int(0, kNumTemplates - 1));
    s.image = render_image(s.cls, jitter, rng);
    s.audio = render_audio(s.cls, jitter, rng);
    s.caption = caption_tokens(s.cls, s.template_id);
    s.caption.resize(kCaptionSlots, 0);
    s.text.assign(kTextLen, 0);
    auto toks = caption_tokens(s.cls, s.template_id);
    std::copy(toks.begin(), toks.end(), s.text.begin());
    s.vqa_answer = (s.cls + 3 * s.template_id) % kVqaClasses;
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

void hash_bytes(uint64_t& h, const void* data, size_t len) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

}  // namespace

std::vector<int> caption_tokens(int cls, int template_id) {
  if (cls < 0 || cls >= kNumClasses || template_id < 0 ||
      template_id >= kNumTemplates)
    throw std::invalid_argument("caption_tokens: class/template out of range");
  std::vector<int> toks;
  toks.push_back(48 + template_id);  // template marker, ids 48..51
  int body = 3 + template_id;
  for (int j = 0; j < body; ++j)
    toks.push_back(1 + (7 * cls + 13 * template_id + 5 * j) % 47);
  return toks;
}

void validate_sample(const Sample& s) {
  auto fail = [&](const std::string& field) {
    throw std::runtime_error("sample " + std::to_string(s.sample_id) +
                             ": invalid " + field);
  };
  if (s.cls < 0 || s.cls >= kNumClasses) fail("class");
  if (s.image.size() != kImagePixels) fail("image size");
  for (double v : s.image)
    if (v < 0.0 || v > 1.0) fail("pixel range");
  if (s.audio.size() != kAudioLen) fail("audio size");
  for (double v : s.audio)
    if (v < -1.0 || v > 1.0) fail("audio range");
  if (s.text.size() != kTextLen) fail("text size");
  bool padding = false;
  for (int t : s.text) {
    if (t < 0 || t >= kVocabSize) fail("token id");
    if (t == 0) padding = true;
    if (padding && t != 0) fail("text padding placement");
  }
  if (s.caption.size() != kCaptionSlots) fail("caption size");
  for (int t : s.caption)
    if (t < 0 || t >= kVocabSize) fail("caption token");
  if (s.vqa_answer < 0 || s.vqa_answer >= kVqaClasses) fail("vqa answer");
}

Dataset generate_dataset(const DatasetSpec& spec) {
  RngStream root(spec.seed, stream_id_of('d', 'a', 't', 0));
  Dataset data;
  data.train = make_split(spec.n_train, spec.jitter, root.substream(1), 0);
  data.val = make_split(spec.n_val, spec.jitter, root.substream(2), 1000000);
  data.test = make_split(spec.n_test, spec.jitter, root.substream(3), 2000000);
  return data;
}

uint64_t dataset_hash(const Dataset& data) {
  uint64_t h = 14695981039346656037ull;
  auto eat_split = [&](const std::vector<Sample>& split) {
    for (const Sample& s : split) {
      hash_bytes(h, &s.cls, sizeof(s.cls));
      hash_bytes(h, &s.template_id, sizeof(s.template_id));
      hash_bytes(h, s.image.data(), s.image.size() * sizeof(double));
      hash_bytes(h, s.text.data(), s.text.size() * sizeof(int));
      hash_bytes(h, s.audio.data(), s.audio.size() * sizeof(double));
      hash_bytes(h, s.caption.data(), s.caption.size() * sizeof(int));
      hash_bytes(h, &s.vqa_answer, sizeof(s.vqa_answer));
    }
  };
  eat_split(data.train);
  eat_split(data.val);
  eat_split(data.test);
  return h;
}

}  // namespace mtsc
