// include/axvec/metrics.h

// Copyright 2026  The axvec Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "axvec/common.h"
#include "axvec/data.h"

namespace axvec {

struct LabeledScores {
  std::vector<double> target;
  std::vector<double> nontarget;

  void Validate() const {
    if (target.empty()) throw Error("metrics: no target scores");
    if (nontarget.empty()) throw Error("metrics: no nontarget scores");
    for (double s : target)
      if (!std::isfinite(s)) throw Error("metrics: non-finite target score");
    for (double s : nontarget)
      if (!std::isfinite(s)) throw Error("metrics: non-finite nontarget score");
  }
};

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;

  void Validate() const {
    if (!(p_target > 0.0 && p_target < 1.0)) throw Error("dcf: p_target must lie in (0, 1)");
    if (!(c_miss > 0.0 && c_fa > 0.0)) throw Error("dcf: costs must be positive");
  }
  double Normalizer() const { return std::min(c_miss * p_target, c_fa * (1.0 - p_target)); }
  double Cost(double p_miss, double p_fa) const {
    return (c_miss * p_target * p_miss + c_fa * (1.0 - p_target) * p_fa) / Normalizer();
  }
  /// Bayes decision threshold for log-likelihood-ratio scores.
  double BayesThreshold() const { return std::log(c_fa * (1.0 - p_target) / (c_miss * p_target)); }
};

struct DetPoint {
  double threshold = 0.0;  // accept iff score >= threshold
  double p_fa = 0.0;
  double p_miss = 0.0;
};

struct ErrorRates {
  double p_fa = 0.0;
  double p_miss = 0.0;
};

inline ErrorRates ErrorRatesAt(const LabeledScores& s, double threshold) {
  s.Validate();
  double miss = 0.0, fa = 0.0;
  for (double x : s.target) miss += x < threshold ? 1.0 : 0.0;
  for (double x : s.nontarget) fa += x >= threshold ? 1.0 : 0.0;
  return {fa / static_cast<double>(s.nontarget.size()),
          miss / static_cast<double>(s.target.size())};
}

/// Operating points at every distinct score value in increasing order, plus
/// the reject-all point at +inf.  The first point accepts everything
/// (P_fa = 1, P_miss = 0).
inline std::vector<DetPoint> DetPoints(const LabeledScores& s) {
  s.Validate();
  std::vector<std::pair<double, int>> all;  // (score, is_target)
  all.reserve(s.target.size() + s.nontarget.size());
  for (double x : s.target) all.emplace_back(x, 1);
  for (double x : s.nontarget) all.emplace_back(x, 0);
  std::sort(all.begin(), all.end());
  const double nt = static_cast<double>(s.target.size());
  const double nn = static_cast<double>(s.nontarget.size());
  std::vector<DetPoint> points;
  size_t below_tar = 0, below_non = 0;  // counts strictly below the threshold
  for (size_t i = 0; i < all.size();) {
    const double v = all[i].first;
    points.push_back({v, (nn - static_cast<double>(below_non)) / nn,
                      static_cast<double>(below_tar) / nt});
    for (; i < all.size() && all[i].first == v; ++i) (all[i].second ? below_tar : below_non)++;
  }
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return points;
}

/// Equal error rate, linearly interpolated between the two DET points that
/// bracket P_miss = P_fa.
inline double EerFromPoints(const std::vector<DetPoint>& pts) {
  for (size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].p_miss - pts[i].p_fa;
    if (d == 0.0) return pts[i].p_miss;
    if (d > 0.0) {
      if (i == 0) return pts[0].p_miss;  // unreachable: the first point has d = -1
      const double d0 = pts[i - 1].p_miss - pts[i - 1].p_fa;
      const double w = -d0 / (d - d0);
      return pts[i - 1].p_fa + w * (pts[i].p_fa - pts[i - 1].p_fa);
    }
  }
  throw Error("eer: DET curve does not cross the diagonal");
}

inline double Eer(const LabeledScores& s) { return EerFromPoints(DetPoints(s)); }

inline double MinDcf(const LabeledScores& s, const DcfParams& p) {
  p.Validate();
  double best = std::numeric_limits<double>::infinity();
  for (const DetPoint& pt : DetPoints(s)) best = std::min(best, p.Cost(pt.p_miss, pt.p_fa));
  return best;
}

/// Normalized cost at the Bayes threshold; not clipped.
inline double ActDcf(const LabeledScores& s, const DcfParams& p) {
  p.Validate();
  const ErrorRates r = ErrorRatesAt(s, p.BayesThreshold());
  return p.Cost(r.p_miss, r.p_fa);
}

/// actDCF as reported next to the raw value: a system that rejects every
/// trial costs 1, so larger values are clipped to that ceiling.
inline constexpr double kActDcfCeiling = 1.0;

struct MetricSet {
  double eer = 0.0;
  double dcf2 = 0.0;  // minDCF at P_tar = 1e-2
  double dcf3 = 0.0;  // minDCF at P_tar = 1e-3
  double act_dcf = 0.0;
  double act_dcf_clipped = 0.0;
  size_t targets = 0;
  size_t nontargets = 0;
};

struct MetricOptions {
  double c_miss = 1.0;
  double c_fa = 1.0;
  double act_p_target = 0.01;
};

inline MetricSet ComputeMetrics(const LabeledScores& s, const MetricOptions& opt = {}) {
  MetricSet m;
  m.eer = Eer(s);
  m.dcf2 = MinDcf(s, {1e-2, opt.c_miss, opt.c_fa});
  m.dcf3 = MinDcf(s, {1e-3, opt.c_miss, opt.c_fa});
  m.act_dcf = ActDcf(s, {opt.act_p_target, opt.c_miss, opt.c_fa});
  m.act_dcf_clipped = std::min(m.act_dcf, kActDcfCeiling);
  m.targets = s.target.size();
  m.nontargets = s.nontarget.size();
  return m;
}

// ---------------------------------------------------------------------------
// Score files: "enroll test score" with six decimals.

struct ScoreEntry {
  std::string enroll;
  std::string test;
  double score = 0.0;
};

inline std::string FormatScore(double s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", s);
  return buf;
}

inline void SaveScores(const std::filesystem::path& path, const std::vector<ScoreEntry>& scores) {
  AtomicWrite(
      path,
      [&](std::ostream& os) {
        for (const ScoreEntry& e : scores)
          os << e.enroll << ' ' << e.test << ' ' << FormatScore(e.score) << '\n';
      },
      false);
}

inline std::vector<ScoreEntry> LoadScores(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path, false);
  std::vector<ScoreEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = SplitFields(line);
    if (f.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 3) throw Error(where + ": expected 'enroll test score'");
    ScoreEntry e{f[0], f[1], 0.0};
    try {
      size_t used = 0;
      e.score = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(where + ": bad score '" + f[2] + "'");
    }
    if (!std::isfinite(e.score)) throw Error(where + ": non-finite score");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string TrialKey(const std::string& enroll, const std::string& test) {
  return enroll + ' ' + test;
}

// ---------------------------------------------------------------------------
// Evaluation: join scores with trial labels and the condition of the test
// utterance.

struct Evaluation {
  MetricSet overall;
  std::map<std::string, std::optional<MetricSet>> by_condition;  // nullopt: one class missing
};

inline Evaluation Evaluate(const std::vector<ScoreEntry>& scores, const std::vector<Trial>& trials,
                           const std::map<std::string, std::string>& utt2cond,
                           const MetricOptions& opt = {}) {
  std::map<std::string, double> by_key;
  for (const ScoreEntry& e : scores)
    if (!by_key.emplace(TrialKey(e.enroll, e.test), e.score).second)
      throw Error("duplicate score for trial '" + TrialKey(e.enroll, e.test) + "'");
  if (by_key.size() != trials.size())
    throw Error("score list has " + std::to_string(by_key.size()) + " trials, trial list has " +
                std::to_string(trials.size()));
  LabeledScores all;
  std::map<std::string, LabeledScores> per;
  for (const Trial& t : trials) {
    auto it = by_key.find(TrialKey(t.enroll, t.test));
    if (it == by_key.end()) throw Error("no score for trial '" + TrialKey(t.enroll, t.test) + "'");
    (t.target ? all.target : all.nontarget).push_back(it->second);
    if (!utt2cond.empty()) {
      auto c = utt2cond.find(t.test);
      if (c == utt2cond.end()) throw Error("no condition for utterance '" + t.test + "'");
      LabeledScores& ls = per[c->second];
      (t.target ? ls.target : ls.nontarget).push_back(it->second);
    }
  }
  Evaluation ev;
  ev.overall = ComputeMetrics(all, opt);
  for (auto& [cond, ls] : per)
    ev.by_condition[cond] = ls.target.empty() || ls.nontarget.empty()
                                ? std::nullopt
                                : std::optional<MetricSet>(ComputeMetrics(ls, opt));
  return ev;
}

// ---------------------------------------------------------------------------
// Reports

namespace internal {

inline std::string Cell(const std::string& s, size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

inline std::string Num(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace internal

using SystemResults = std::vector<std::pair<std::string, Evaluation>>;

/// Human-readable report: one overall table with a row per system and, per
/// metric, a table of systems by condition.
inline std::string FormatReport(const SystemResults& systems) {
  using internal::Cell;
  using internal::Num;
  size_t w = 10;
  for (const auto& [name, ev] : systems) w = std::max(w, name.size() + 2);
  std::ostringstream os;
  os << "Overall\n";
  os << Cell("System", w) << Cell("EER(%)", 10) << Cell("DCF(1e-2)", 11) << Cell("DCF(1e-3)", 11)
     << Cell("actDCF", 11) << Cell("actDCF(clip)", 13) << Cell("#tgt", 7) << "#non\n";
  for (const auto& [name, ev] : systems) {
    const MetricSet& m = ev.overall;
    os << Cell(name, w) << Cell(Num(100.0 * m.eer, 3), 10) << Cell(Num(m.dcf2, 4), 11)
       << Cell(Num(m.dcf3, 4), 11) << Cell(Num(m.act_dcf, 4), 11)
       << Cell(Num(m.act_dcf_clipped, 4), 13) << Cell(std::to_string(m.targets), 7)
       << m.nontargets << "\n";
  }
  std::vector<std::string> conds;
  for (const auto& [name, ev] : systems)
    for (const auto& [c, m] : ev.by_condition)
      if (std::find(conds.begin(), conds.end(), c) == conds.end()) conds.push_back(c);
  std::sort(conds.begin(), conds.end());
  if (conds.empty()) return os.str();
  const std::vector<std::pair<std::string, std::function<std::string(const MetricSet&)>>> tables{
      {"EER(%)", [](const MetricSet& m) { return Num(100.0 * m.eer, 3); }},
      {"DCF(1e-2)", [](const MetricSet& m) { return Num(m.dcf2, 4); }},
      {"DCF(1e-3)", [](const MetricSet& m) { return Num(m.dcf3, 4); }},
      {"actDCF", [](const MetricSet& m) { return Num(m.act_dcf, 4); }},
  };
  for (const auto& [title, get] : tables) {
    os << "\n" << title << " by condition\n" << Cell("System", w);
    for (size_t i = 0; i < conds.size(); ++i)
      os << (i + 1 < conds.size() ? Cell(conds[i], 10) : conds[i]);
    os << "\n";
    for (const auto& [name, ev] : systems) {
      os << Cell(name, w);
      for (size_t i = 0; i < conds.size(); ++i) {
        auto it = ev.by_condition.find(conds[i]);
        const std::string v = it != ev.by_condition.end() && it->second ? get(*it->second) : "-";
        os << (i + 1 < conds.size() ? Cell(v, 10) : v);
      }
      os << "\n";
    }
  }
  return os.str();
}

/// Machine-readable report: "system.scope.metric=value" per line.
inline std::string FormatKeyValues(const SystemResults& systems) {
  std::ostringstream os;
  auto emit = [&](const std::string& prefix, const MetricSet& m) {
    os << prefix << ".eer=" << internal::Num(m.eer, 6) << "\n";
    os << prefix << ".dcf_1e-2=" << internal::Num(m.dcf2, 6) << "\n";
    os << prefix << ".dcf_1e-3=" << internal::Num(m.dcf3, 6) << "\n";
    os << prefix << ".act_dcf=" << internal::Num(m.act_dcf, 6) << "\n";
    os << prefix << ".act_dcf_clipped=" << internal::Num(m.act_dcf_clipped, 6) << "\n";
    os << prefix << ".targets=" << m.targets << "\n";
    os << prefix << ".nontargets=" << m.nontargets << "\n";
  };
  for (const auto& [name, ev] : systems) {
    emit(name + ".overall", ev.overall);
    for (const auto& [cond, m] : ev.by_condition)
      if (m) emit(name + "." + cond, *m);
  }
  return os.str();
}

inline std::map<std::string, std::string> ParseKeyValues(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace axvec
