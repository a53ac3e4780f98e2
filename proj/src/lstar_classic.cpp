#include "enap/lstar_classic.hpp"

#include <algorithm>
#include <set>

namespace enap::classic {

int Dfa::run(const Word& w) const {
  int q = initial;
  for (char c : w) {
    auto it = delta.at(q).find(c);
    if (it == delta.at(q).end())
      throw Error(ErrorKind::SymbolOutOfRange, std::string("symbol '") + c + "' not in alphabet");
    q = it->second;
  }
  return q;
}

bool Dfa::accepts(const Word& w) const { return accepting.at(run(w)); }

Json dfa_to_json(const Dfa& dfa) {
  Json j;
  j["alphabet"] = dfa.alphabet;
  j["initial"] = dfa.initial;
  Json states = Json::array();
  for (int q = 0; q < dfa.size(); ++q) {
    Json s;
    s["id"] = q;
    s["accepting"] = static_cast<bool>(dfa.accepting[q]);
    states.push_back(s);
  }
  j["states"] = states;
  Json edges = Json::array();
  for (int q = 0; q < dfa.size(); ++q)
    for (const auto& [c, d] : dfa.delta[q]) {
      Json e;
      e["src"] = q;
      e["input"] = std::string(1, c);
      e["dst"] = d;
      edges.push_back(e);
    }
  j["edges"] = edges;
  return j;
}

std::string dfa_to_dot(const Dfa& dfa) {
  std::string out = "digraph dfa {\n";
  for (int q = 0; q < dfa.size(); ++q) {
    out += "  q" + std::to_string(q) + " [label=\"q" + std::to_string(q) + "\"";
    if (dfa.accepting[q]) out += ", shape=doublecircle";
    out += "];\n";
  }
  for (int q = 0; q < dfa.size(); ++q)
    for (const auto& [c, d] : dfa.delta[q])
      out += "  q" + std::to_string(q) + " -> q" + std::to_string(d) + " [label=\"" + c + "\"];\n";
  out += "}\n";
  return out;
}

std::vector<Word> enumerate_words(const std::string& alphabet, int max_len) {
  std::vector<Word> out{""};
  std::size_t begin = 0;
  for (int len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (char c : alphabet) out.push_back(out[i] + c);
    begin = end;
  }
  return out;
}

BruteForceTeacher::BruteForceTeacher(std::function<bool(const Word&)> lang, std::string order,
                                     int max_len)
    : lang_(std::move(lang)), order_(std::move(order)), max_len_(max_len) {}

bool BruteForceTeacher::membership(const Word& w) {
  ++membership_calls;
  return lang_(w);
}

std::optional<Word> BruteForceTeacher::equivalence(const Dfa& hyp) {
  ++equivalence_calls;
  for (const auto& w : enumerate_words(order_, max_len_))
    if (hyp.accepts(w) != lang_(w)) return w;
  return std::nullopt;
}

std::vector<Word> ObservationTable::lower() const {
  std::set<Word> up(upper.begin(), upper.end());
  std::vector<Word> out;
  for (const auto& u : upper)
    for (char c : alphabet) {
      Word w = u + c;
      if (!up.count(w) && std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    }
  return out;
}

bool ObservationTable::has(const Word& u) const {
  return std::find(upper.begin(), upper.end(), u) != upper.end();
}

std::vector<bool> ObservationTable::row(const Word& u) const {
  std::vector<bool> r;
  r.reserve(suffixes.size());
  for (const auto& e : suffixes) {
    auto it = entries.find(u + e);
    if (it == entries.end()) throw Error(ErrorKind::UnfilledTable, "no entry for '" + u + e + "'");
    r.push_back(it->second);
  }
  return r;
}

void ObservationTable::fill(Teacher& teacher) {
  auto ask = [&](const Word& w) {
    bool ans = teacher.membership(w);
    auto [it, fresh] = entries.emplace(w, ans);
    if (!fresh && it->second != ans)
      throw Error(ErrorKind::TeacherInconsistent, "membership answer for '" + w + "' changed");
  };
  std::vector<Word> rows = upper;
  for (const auto& w : lower()) rows.push_back(w);
  for (const auto& u : rows)
    for (const auto& e : suffixes)
      if (!entries.count(u + e)) ask(u + e);
}

std::optional<Word> is_closed(const ObservationTable& tbl) {
  std::set<std::vector<bool>> sigs;
  for (const auto& u : tbl.upper) sigs.insert(tbl.row(u));
  std::vector<Word> low = tbl.lower();
  std::sort(low.begin(), low.end());
  for (const auto& w : low)
    if (!sigs.count(tbl.row(w))) return w;
  return std::nullopt;
}

std::optional<Word> is_consistent(const ObservationTable& tbl) {
  std::optional<Word> best;
  auto better = [](const Word& a, const Word& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  };
  for (std::size_t i = 0; i < tbl.upper.size(); ++i)
    for (std::size_t j = i + 1; j < tbl.upper.size(); ++j) {
      const Word& u = tbl.upper[i];
      const Word& v = tbl.upper[j];
      if (tbl.row(u) != tbl.row(v)) continue;
      for (char c : tbl.alphabet)
        for (const auto& e : tbl.suffixes) {
          auto a = tbl.entries.find(u + c + e);
          auto b = tbl.entries.find(v + c + e);
          if (a == tbl.entries.end() || b == tbl.entries.end())
            throw Error(ErrorKind::UnfilledTable, "extension rows not filled");
          if (a->second != b->second) {
            Word cand = c + e;
            if (!best || better(cand, *best)) best = cand;
          }
        }
    }
  return best;
}

Dfa build_hypothesis(const ObservationTable& tbl) {
  if (is_closed(tbl)) throw Error(ErrorKind::NotClosed, "table is not closed");
  if (is_consistent(tbl)) throw Error(ErrorKind::NotConsistent, "table is not consistent");
  Dfa dfa;
  dfa.alphabet = tbl.alphabet;
  std::map<std::vector<bool>, int> ids;
  for (const auto& u : tbl.upper) {
    auto sig = tbl.row(u);
    if (ids.emplace(sig, static_cast<int>(ids.size())).second) dfa.accepting.push_back(sig[0]);
  }
  dfa.delta.resize(ids.size());
  for (const auto& u : tbl.upper) {
    int q = ids.at(tbl.row(u));
    for (char c : tbl.alphabet) dfa.delta[q][c] = ids.at(tbl.row(u + c));
  }
  dfa.initial = ids.at(tbl.row(""));
  return dfa;
}

LearnResult learn(Teacher& teacher, const std::string& alphabet, int max_rounds) {
  LearnResult res;
  auto& tbl = res.table;
  tbl.alphabet = alphabet;
  for (int round = 0; round < max_rounds; ++round) {
    for (;;) {
      tbl.fill(teacher);
      if (auto w = is_closed(tbl)) {
        tbl.upper.push_back(*w);
        res.events.push_back({LearnEvent::Kind::Promote, *w});
        continue;
      }
      if (auto e = is_consistent(tbl)) {
        tbl.suffixes.push_back(*e);
        res.events.push_back({LearnEvent::Kind::AddSuffix, *e});
        continue;
      }
      break;
    }
    res.dfa = build_hypothesis(tbl);
    res.events.push_back({LearnEvent::Kind::Hypothesis, "", res.dfa.size()});
    auto ce = teacher.equivalence(res.dfa);
    if (!ce) return res;
    res.events.push_back({LearnEvent::Kind::Counterexample, *ce});
    const bool truth = teacher.membership(*ce);
    auto cached = tbl.entries.find(*ce);
    if (truth == res.dfa.accepts(*ce) || (cached != tbl.entries.end() && cached->second != truth))
      throw Error(ErrorKind::TeacherInconsistent, "counterexample '" + *ce + "' contradicts membership");
    for (std::size_t k = 1; k <= ce->size(); ++k) {
      Word p = ce->substr(0, k);
      if (!tbl.has(p)) tbl.upper.push_back(p);
    }
  }
  throw Error(ErrorKind::MaxRoundsExceeded, "L* did not converge");
}

}  // namespace enap::classic
