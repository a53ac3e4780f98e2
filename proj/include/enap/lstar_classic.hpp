#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "enap/io.hpp"

namespace enap::classic {

// Words are plain strings over single-character symbols.
using Word = std::string;

struct Dfa {
  std::string alphabet;
  int initial = 0;
  std::vector<bool> accepting;
  std::vector<std::map<char, int>> delta;

  int size() const { return static_cast<int>(accepting.size()); }
  int run(const Word& w) const;
  bool accepts(const Word& w) const;
};

Json dfa_to_json(const Dfa& dfa);
std::string dfa_to_dot(const Dfa& dfa);

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual bool membership(const Word& w) = 0;
  virtual std::optional<Word> equivalence(const Dfa& hyp) = 0;
};

// Equivalence by exhaustive comparison over all words up to max_len,
// enumerated shortlex in the order the characters appear in `order`.
class BruteForceTeacher : public Teacher {
 public:
  BruteForceTeacher(std::function<bool(const Word&)> lang, std::string order, int max_len = 8);
  bool membership(const Word& w) override;
  std::optional<Word> equivalence(const Dfa& hyp) override;

  int membership_calls = 0;
  int equivalence_calls = 0;

 private:
  std::function<bool(const Word&)> lang_;
  std::string order_;
  int max_len_;
};

// All words over `alphabet` with length <= max_len, shortlex.
std::vector<Word> enumerate_words(const std::string& alphabet, int max_len);

struct ObservationTable {
  std::string alphabet;
  std::vector<Word> upper{""};
  std::vector<Word> suffixes{""};
  std::map<Word, bool> entries;  // keyed by the concatenated word

  std::vector<Word> lower() const;
  bool has(const Word& u) const;
  // Throws UnfilledTable when a cell is missing.
  std::vector<bool> row(const Word& u) const;
  // Issues membership queries for every missing cell; a repeated word whose
  // answer changes raises TeacherInconsistent.
  void fill(Teacher& teacher);
};

// First lower row (lexicographic) whose signature matches no upper row.
std::optional<Word> is_closed(const ObservationTable& tbl);
// Shortest, then lexicographically smallest, suffix sigma.e separating two
// equal upper rows.
std::optional<Word> is_consistent(const ObservationTable& tbl);
Dfa build_hypothesis(const ObservationTable& tbl);

struct LearnEvent {
  enum class Kind { Promote, AddSuffix, Hypothesis, Counterexample } kind;
  Word word;      // promoted row, added suffix or counterexample
  int states = 0; // for Hypothesis
};

struct LearnResult {
  Dfa dfa;
  ObservationTable table;
  std::vector<LearnEvent> events;
};

LearnResult learn(Teacher& teacher, const std::string& alphabet, int max_rounds = 100);

}  // namespace enap::classic
