#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "enap/lstar_classic.hpp"

using namespace enap;
using namespace enap::classic;

namespace {

bool even_even(const Word& w) {
  return std::count(w.begin(), w.end(), 'a') % 2 == 0 && std::count(w.begin(), w.end(), 'b') % 2 == 0;
}

ObservationTable filled(std::vector<Word> upper, std::vector<Word> suffixes) {
  ObservationTable t;
  t.alphabet = "ab";
  t.upper = std::move(upper);
  t.suffixes = std::move(suffixes);
  BruteForceTeacher teacher(even_even, "ab");
  t.fill(teacher);
  return t;
}

}  // namespace

TEST(ClassicTable, InitialTableViolatesOnA) {
  auto t = filled({""}, {""});
  EXPECT_EQ(t.row(""), std::vector<bool>{true});
  EXPECT_EQ(t.row("a"), std::vector<bool>{false});
  EXPECT_EQ(t.row("b"), std::vector<bool>{false});
  EXPECT_EQ(is_closed(t), Word("a"));
}

TEST(ClassicTable, PromotingAClosesIt) {
  auto t = filled({"", "a"}, {""});
  EXPECT_FALSE(is_closed(t));
  EXPECT_FALSE(is_consistent(t));
  auto m1 = build_hypothesis(t);
  EXPECT_EQ(m1.size(), 2);
}

TEST(ClassicTable, CounterexampleRowsNeedSuffixA) {
  auto t = filled({"", "a", "b", "bb"}, {""});
  EXPECT_FALSE(is_closed(t));
  EXPECT_EQ(is_consistent(t), Word("a"));
  t.suffixes.push_back("a");
  BruteForceTeacher teacher(even_even, "ab");
  t.fill(teacher);
  EXPECT_NE(t.row("a"), t.row("b"));
  EXPECT_EQ(t.row("bb"), (std::vector<bool>{true, false}));
}

TEST(ClassicTable, SingleStateAndUnfilled) {
  auto t = filled({""}, {""});
  t.entries["a"] = true;
  t.entries["b"] = true;
  t.entries[""] = true;
  EXPECT_FALSE(is_closed(t));
  EXPECT_FALSE(is_consistent(t));
  auto d = build_hypothesis(t);
  EXPECT_EQ(d.size(), 1);
  EXPECT_TRUE(d.accepts("abba"));

  ObservationTable empty;
  empty.alphabet = "ab";
  try {
    is_closed(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnfilledTable);
  }
}

TEST(ClassicTable, BuildRefusesOpenTable) {
  auto t = filled({""}, {""});
  try {
    build_hypothesis(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotClosed);
  }
  auto u = filled({"", "a", "b", "bb"}, {""});
  try {
    build_hypothesis(u);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotConsistent);
  }
}

TEST(ClassicLearn, EvenEven) {
  BruteForceTeacher teacher(even_even, "ba", 8);
  auto res = learn(teacher, "ab");
  EXPECT_EQ(res.dfa.size(), 4);
  EXPECT_TRUE(res.dfa.accepts(""));
  EXPECT_TRUE(res.dfa.accepts("aabb"));
  EXPECT_FALSE(res.dfa.accepts("ba"));
  for (const auto& w : enumerate_words("ab", 8)) ASSERT_EQ(res.dfa.accepts(w), even_even(w)) << w;
  // the first counterexample under this enumeration order is "bb"
  auto ce = std::find_if(res.events.begin(), res.events.end(),
                         [](const LearnEvent& e) { return e.kind == LearnEvent::Kind::Counterexample; });
  ASSERT_NE(ce, res.events.end());
  EXPECT_EQ(ce->word, "bb");
}

TEST(ClassicLearn, AcceptAll) {
  BruteForceTeacher teacher([](const Word&) { return true; }, "ab");
  auto res = learn(teacher, "ab");
  EXPECT_EQ(res.dfa.size(), 1);
  EXPECT_EQ(teacher.equivalence_calls, 1);
}

TEST(ClassicLearn, EndsWithA) {
  auto lang = [](const Word& w) { return !w.empty() && w.back() == 'a'; };
  BruteForceTeacher teacher(lang, "ab");
  auto res = learn(teacher, "ab");
  EXPECT_EQ(res.dfa.size(), 2);
  for (const auto& w : enumerate_words("ab", 6)) EXPECT_EQ(res.dfa.accepts(w), lang(w));
}

TEST(ClassicLearn, InconsistentTeacher) {
  class Flaky : public Teacher {
   public:
    int n = 0;
    bool membership(const Word&) override { return (n++ % 2) == 0; }
    std::optional<Word> equivalence(const Dfa&) override { return Word("a"); }
  } flaky;
  try {
    learn(flaky, "ab");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TeacherInconsistent);
  }
}

TEST(ClassicLearn, RandomTargetsAreMinimalAndEquivalent) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    int n = 1 + static_cast<int>(rng() % 5);
    Dfa target;
    target.alphabet = "ab";
    target.accepting.resize(n);
    target.delta.resize(n);
    for (int q = 0; q < n; ++q) {
      target.accepting[q] = rng() % 2;
      target.delta[q]['a'] = static_cast<int>(rng() % n);
      target.delta[q]['b'] = static_cast<int>(rng() % n);
    }
    BruteForceTeacher teacher([&](const Word& w) { return target.accepts(w); }, "ab", 8);
    auto res = learn(teacher, "ab");
    EXPECT_LE(res.dfa.size(), n);
    for (const auto& w : enumerate_words("ab", 2 * n)) ASSERT_EQ(res.dfa.accepts(w), target.accepts(w));
    // distinct upper signatures, one per state
    std::set<std::vector<bool>> sigs;
    for (const auto& u : res.table.upper) sigs.insert(res.table.row(u));
    EXPECT_EQ(static_cast<int>(sigs.size()), res.dfa.size());
    // each counterexample round adds a state
    int last = 0;
    for (const auto& e : res.events)
      if (e.kind == LearnEvent::Kind::Hypothesis) {
        EXPECT_GT(e.states, last);
        last = e.states;
      }
  }
}

TEST(ClassicDfa, JsonAndDot) {
  BruteForceTeacher teacher(even_even, "ab");
  auto res = learn(teacher, "ab");
  Json j = dfa_to_json(res.dfa);
  EXPECT_EQ(j["states"].size(), 4u);
  EXPECT_EQ(j["edges"].size(), 8u);
  EXPECT_NE(dfa_to_dot(res.dfa).find("shape=doublecircle"), std::string::npos);
}
