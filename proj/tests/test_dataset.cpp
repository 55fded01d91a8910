#include <array>
#include <set>

#include "doctest.h"
#include "mtsc/dataset.hpp"

using namespace mtsc;

TEST_SUITE("dataset") {

TEST_CASE("identical specs generate identical datasets") {
  DatasetSpec spec;
  spec.n_train = 40;
  spec.n_val = 10;
  spec.n_test = 20;
  spec.seed = 99;
  auto a = generate_dataset(spec);
  auto b = generate_dataset(spec);
  CHECK(dataset_hash(a) == dataset_hash(b));

  spec.seed = 100;
  auto c = generate_dataset(spec);
  CHECK(dataset_hash(a) != dataset_hash(c));
}

TEST_CASE("splits are disjoint streams, not shifted copies") {
  DatasetSpec spec;
  spec.n_train = 10;
  spec.n_val = 10;
  spec.n_test = 10;
  auto data = generate_dataset(spec);
  CHECK(data.train[0].image != data.val[0].image);
  CHECK(data.train[0].image != data.test[0].image);
  CHECK(data.val[0].image != data.test[0].image);
}

TEST_CASE("round-robin assignment balances classes within one sample") {
  DatasetSpec spec;
  spec.n_train = 47;  // deliberately not a multiple of 10
  spec.n_val = 0;
  spec.n_test = 0;
  auto data = generate_dataset(spec);
  std::array<int, kNumClasses> counts{};
  for (const auto& s : data.train) ++counts[size_t(s.cls)];
  int lo = counts[0], hi = counts[0];
  for (int c : counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  CHECK(hi - lo <= 1);
}

TEST_CASE("every sample passes structural validation with jitter applied") {
  DatasetSpec spec;
  spec.n_train = 60;
  spec.n_val = 20;
  spec.n_test = 20;
  spec.jitter = 0.2;  // strong noise still clamps into range
  auto data = generate_dataset(spec);
  for (const auto& split : {data.train, data.val, data.test})
    for (const auto& s : split) CHECK_NOTHROW(validate_sample(s));
}

TEST_CASE("captions are a pure function of class and template") {
  auto a = caption_tokens(3, 2);
  auto b = caption_tokens(3, 2);
  CHECK(a == b);
  CHECK(a.size() == 1 + 3 + 2);  // marker plus body
  CHECK(a[0] == 50);             // marker 48 + template
  for (int t : a) {
    CHECK(t > 0);
    CHECK(t < kVocabSize);
  }
  CHECK(caption_tokens(3, 1) != caption_tokens(4, 1));
  CHECK(caption_tokens(3, 1) != caption_tokens(3, 2));
  CHECK_THROWS(caption_tokens(10, 0));
  CHECK_THROWS(caption_tokens(0, 4));
}

TEST_CASE("text payload carries the caption and pads only at the tail") {
  DatasetSpec spec;
  spec.n_train = 30;
  auto data = generate_dataset(spec);
  for (const auto& s : data.train) {
    auto want = caption_tokens(s.cls, s.template_id);
    for (size_t i = 0; i < want.size(); ++i) CHECK(s.text[i] == want[i]);
    for (size_t i = want.size(); i < kTextLen; ++i) CHECK(s.text[i] == 0);
    CHECK(s.vqa_answer == (s.cls + 3 * s.template_id) % kVqaClasses);
  }
}

TEST_CASE("images vary within a class but share the class signature") {
  DatasetSpec spec;
  spec.n_train = 50;
  auto data = generate_dataset(spec);
  // samples 0 and 10 are both class 0 with different jitter
  CHECK(data.train[0].cls == data.train[10].cls);
  CHECK(data.train[0].image != data.train[10].image);
  // distinct audio frequency classes produce distinct waveforms
  CHECK(data.train[0].audio != data.train[1].audio);
}

TEST_CASE("template ids span the configured grammar range") {
  DatasetSpec spec;
  spec.n_train = 200;
  auto data = generate_dataset(spec);
  std::set<int> seen;
  for (const auto& s : data.train) seen.insert(s.template_id);
  CHECK(seen.size() == kNumTemplates);
}

}  // TEST_SUITE
