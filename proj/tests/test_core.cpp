#include <set>

#include "doctest.h"
#include "mio/config.hpp"
#include "mio/image.hpp"
#include "mio/rng.hpp"
#include "mio/task.hpp"

using namespace mio;

TEST_CASE("task letters round-trip") {
  CHECK(kNumTasks == 7);
  for (TaskId t : kAllTasks) {
    CHECK(task_from_letter(task_letter(t)) == t);
    CHECK(task_from_index(task_index(t)) == t);
  }
  CHECK(task_letters(parse_task_letters("SBNJRHL")) == "SBNJRHL");
  CHECK(task_letters(parse_task_letters("N,L")) == "NL");
  CHECK(task_letters(parse_task_letters("n l")) == "NL");
  CHECK_THROWS_AS(parse_task_letters("SX"), std::invalid_argument);
  CHECK(task_category(TaskId::kHaze) == TaskCategory::kLuminanceAdjustment);
  CHECK(task_category(TaskId::kLowLight) == TaskCategory::kLuminanceAdjustment);
  CHECK(task_category(TaskId::kNoise) == TaskCategory::kDetailEnhancement);
  CHECK(task_label(TaskId::kLowLight) == "Low-Light");
  CHECK(parse_group("in") == Group::kInDis);
  CHECK(parse_group("out_dis") == Group::kOutDis);
  CHECK(group_name(Group::kOutDis) == "out_dis");
  CHECK_THROWS_AS(parse_group("middle"), std::invalid_argument);
}

TEST_CASE("image buffer basics") {
  ImageBuffer im(3, 4, 0.25);
  CHECK(im.size() == 36);
  im.at(1, 2, 0) = 2.0;
  im.at(0, 0, 1) = -1.0;
  im.at(2, 3, 2) = std::nan("");
  im.clip();
  CHECK(im.at(1, 2, 0) == 1.0);
  CHECK(im.at(0, 0, 1) == 0.0);
  CHECK(im.at(2, 3, 2) == 0.0);
  auto c = im.crop(1, 1, 2, 3);
  CHECK(c.height() == 2);
  CHECK(c.at(0, 1, 0) == 1.0);
  CHECK_THROWS(im.crop(2, 2, 2, 2));
  CHECK_THROWS(ImageBuffer(0, 3));
}

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(42, 1), b(42, 1), c(42, 2);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);

  RngStream r(7, 0);
  double sum = 0, sq = 0;
  const int n = 200000;
  std::set<std::int64_t> seen;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
    const auto k = r.uniform_int(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
    seen.insert(k);
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  CHECK(seen.size() == 6);
  CHECK(hash_bytes("abc") != hash_bytes("abd"));
  CHECK(hash_combine(1, 2) != hash_combine(2, 1));
}

TEST_CASE("config round-trip") {
  Config c = Config::parse("[train]\nstrategy = sequential\niters = 500\n[eval]\nfast = yes\n");
  CHECK(c.get_or<std::string>("train.strategy", "") == "sequential");
  CHECK(c.get_or("train.iters", 0) == 500);
  CHECK(c.get_or("eval.fast", false));
  CHECK(c.get_or("eval.missing", 3.5) == 3.5);
  c.set("train.lr", 2e-4);
  Config d = Config::parse(c.to_ini());
  CHECK(d.get_or("train.lr", 0.0) == 2e-4);
  Config o = Config::parse("[train]\niters = 10\n");
  d.merge(o);
  CHECK(d.get_or("train.iters", 0) == 10);
  CHECK(d.get_or<std::string>("train.strategy", "") == "sequential");
  CHECK_THROWS_AS(d.get_or("train.strategy", 0), std::invalid_argument);
}
