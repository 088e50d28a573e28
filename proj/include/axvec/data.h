// include/axvec/data.h

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
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "axvec/model.h"
#include "axvec/numerics.h"

namespace axvec {

inline const std::vector<std::string>& KnownConditions() {
  static const std::vector<std::string> names{"clean", "noise", "codec", "reverb"};
  return names;
}

/// Parameters of the synthetic speaker corpus.  Each frame is
///   x_t = m_s + c_u + n_t,  n_t = rho n_{t-1} + sqrt(1 - rho^2) eps_t,
/// with speaker means m_s ~ N(0, sigma_between^2 I), per-utterance session
/// offsets c_u ~ N(0, sigma_session^2 I), then a condition corruption.
struct CorpusSpec {
  int num_speakers = 32;
  int utts_per_speaker = 20;
  int feature_dim = 30;
  int frames_min = 80;
  int frames_max = 300;
  double sigma_between = 1.0;
  double sigma_session = 0.3;
  double frame_noise = 1.0;  // scale of eps_t; 0 gives noiseless frames
  double ar_coefficient = 0.7;
  std::vector<std::string> conditions{"clean", "noise", "codec", "reverb"};
  double noise_scale = 0.7;  // "noise": additive white noise std
  double codec_gain = 0.8;   // "codec": channel filter gain
  double codec_mix = 0.25;   // "codec": leakage into neighbouring channels
  int reverb_taps = 5;       // "reverb": causal moving-average length
  std::string speaker_prefix = "spk";
  uint64_t seed = 1;

  void Validate(int min_frames = 15) const {
    if (num_speakers < 1 || utts_per_speaker < 1) throw Error("corpus: need speakers and utterances");
    if (feature_dim < 1) throw Error("corpus: feature_dim must be positive");
    if (frames_min < min_frames)
      throw Error("corpus: frames_min must be >= " + std::to_string(min_frames) +
                  " (model receptive field)");
    if (frames_max < frames_min) throw Error("corpus: frames_max < frames_min");
    if (sigma_between < 0 || sigma_session < 0 || frame_noise < 0 || noise_scale < 0)
      throw Error("corpus: scales must be >= 0");
    if (!(ar_coefficient >= 0.0 && ar_coefficient < 1.0))
      throw Error("corpus: ar_coefficient must be in [0, 1)");
    if (conditions.empty()) throw Error("corpus: empty condition set");
    for (const std::string& c : conditions)
      if (std::find(KnownConditions().begin(), KnownConditions().end(), c) ==
          KnownConditions().end())
        throw Error("corpus: unknown condition '" + c + "'");
    if (reverb_taps < 1) throw Error("corpus: reverb_taps must be >= 1");
  }

  json ToJson() const {
    return json{{"num_speakers", num_speakers},     {"utts_per_speaker", utts_per_speaker},
                {"feature_dim", feature_dim},       {"frames_min", frames_min},
                {"frames_max", frames_max},         {"sigma_between", sigma_between},
                {"sigma_session", sigma_session},   {"frame_noise", frame_noise},
                {"ar_coefficient", ar_coefficient}, {"conditions", conditions},
                {"noise_scale", noise_scale},       {"codec_gain", codec_gain},
                {"codec_mix", codec_mix},           {"reverb_taps", reverb_taps},
                {"speaker_prefix", speaker_prefix}, {"seed", seed}};
  }

  static CorpusSpec FromJson(const json& j) { return FromJson(j, CorpusSpec()); }
  static CorpusSpec FromJson(const json& j, CorpusSpec base) {
    RejectUnknownKeys(j,
                      {"num_speakers", "utts_per_speaker", "feature_dim", "frames_min",
                       "frames_max", "sigma_between", "sigma_session", "frame_noise",
                       "ar_coefficient", "conditions", "noise_scale", "codec_gain", "codec_mix",
                       "reverb_taps", "speaker_prefix", "seed"},
                      "corpus");
    ReadKey(j, "num_speakers", base.num_speakers);
    ReadKey(j, "utts_per_speaker", base.utts_per_speaker);
    ReadKey(j, "feature_dim", base.feature_dim);
    ReadKey(j, "frames_min", base.frames_min);
    ReadKey(j, "frames_max", base.frames_max);
    ReadKey(j, "sigma_between", base.sigma_between);
    ReadKey(j, "sigma_session", base.sigma_session);
    ReadKey(j, "frame_noise", base.frame_noise);
    ReadKey(j, "ar_coefficient", base.ar_coefficient);
    ReadKey(j, "conditions", base.conditions);
    ReadKey(j, "noise_scale", base.noise_scale);
    ReadKey(j, "codec_gain", base.codec_gain);
    ReadKey(j, "codec_mix", base.codec_mix);
    ReadKey(j, "reverb_taps", base.reverb_taps);
    ReadKey(j, "speaker_prefix", base.speaker_prefix);
    ReadKey(j, "seed", base.seed);
    return base;
  }
};

struct Utterance {
  std::string id;
  std::string speaker;
  std::string condition;
  Matrix features;  // T x D
};

struct Corpus {
  std::vector<Utterance> utterances;

  /// Sorted distinct speaker ids; a speaker's label is its index here.
  std::vector<std::string> Speakers() const {
    std::set<std::string> s;
    for (const Utterance& u : utterances) s.insert(u.speaker);
    return {s.begin(), s.end()};
  }

  std::map<std::string, int> SpeakerLabels() const {
    std::map<std::string, int> labels;
    int next = 0;
    for (const std::string& s : Speakers()) labels[s] = next++;
    return labels;
  }

  const Utterance& Find(const std::string& id) const {
    for (const Utterance& u : utterances)
      if (u.id == id) return u;
    throw Error("utterance '" + id + "' not in corpus");
  }
};

// ---------------------------------------------------------------------------
// Condition corruptions

/// Deterministic given (features, condition parameters, rng state).
inline Matrix ApplyCondition(const Matrix& clean, const std::string& condition,
                             const CorpusSpec& spec, Rng& rng) {
  if (condition == "clean") return clean;
  if (condition == "noise") {
    Matrix out = clean;
    for (Index i = 0; i < out.size(); ++i) out.data()[i] += spec.noise_scale * rng.Normal();
    return out;
  }
  if (condition == "codec") {
    // Fixed channel-wise filter: gain on the channel plus leakage from its
    // neighbours.
    const Index d = clean.cols();
    Matrix filter = Matrix::Zero(d, d);
    for (Index i = 0; i < d; ++i) {
      filter(i, i) = spec.codec_gain * (1.0 - 2.0 * spec.codec_mix);
      if (i > 0) filter(i - 1, i) = spec.codec_gain * spec.codec_mix;
      if (i + 1 < d) filter(i + 1, i) = spec.codec_gain * spec.codec_mix;
    }
    return clean * filter;
  }
  if (condition == "reverb") {
    Matrix out(clean.rows(), clean.cols());
    for (Index t = 0; t < clean.rows(); ++t) {
      const Index start = std::max<Index>(0, t - spec.reverb_taps + 1);
      out.row(t) = clean.middleRows(start, t - start + 1).colwise().mean();
    }
    return out;
  }
  throw Error("unknown condition '" + condition + "'");
}

/// Builds the corpus in memory.  Features are rounded to 32-bit floats so
/// the in-memory copy equals what the feature files hold.
inline Corpus SynthesizeCorpus(const CorpusSpec& spec, int min_frames = 15) {
  spec.Validate(min_frames);
  Corpus corpus;
  const Index d = spec.feature_dim;
  const double innovation = std::sqrt(1.0 - spec.ar_coefficient * spec.ar_coefficient);
  for (int s = 0; s < spec.num_speakers; ++s) {
    Rng spk_rng(DeriveSeed(spec.seed, static_cast<uint64_t>(s)));
    Vector mean(d);
    for (Index j = 0; j < d; ++j) mean[j] = spec.sigma_between * spk_rng.Normal();
    char spk_id[64];
    std::snprintf(spk_id, sizeof(spk_id), "%s%03d", spec.speaker_prefix.c_str(), s);
    for (int k = 0; k < spec.utts_per_speaker; ++k) {
      const uint64_t stream = (uint64_t{1} << 32) + static_cast<uint64_t>(s) * 100003ULL + k;
      Rng rng(DeriveSeed(spec.seed, stream));
      const Index frames = rng.Between(spec.frames_min, spec.frames_max);
      const std::string condition =
          spec.conditions[static_cast<size_t>(rng.Below(spec.conditions.size()))];
      Vector offset(d);
      for (Index j = 0; j < d; ++j) offset[j] = spec.sigma_session * rng.Normal();
      Matrix x(frames, d);
      Vector noise(d);
      for (Index j = 0; j < d; ++j) noise[j] = spec.frame_noise * rng.Normal();  // stationary start
      for (Index t = 0; t < frames; ++t) {
        if (t > 0)
          for (Index j = 0; j < d; ++j)
            noise[j] = spec.ar_coefficient * noise[j] + innovation * spec.frame_noise * rng.Normal();
        x.row(t) = (mean + offset + noise).transpose();
      }
      Matrix corrupted = ApplyCondition(x, condition, spec, rng);
      for (Index i = 0; i < corrupted.size(); ++i)
        corrupted.data()[i] = static_cast<double>(static_cast<float>(corrupted.data()[i]));
      char utt_id[96];
      std::snprintf(utt_id, sizeof(utt_id), "%s-%03d", spk_id, k);
      corpus.utterances.push_back({utt_id, spk_id, condition, std::move(corrupted)});
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Feature files: "AXVF", u32 version=1, u32 T, u32 D, T*D little-endian f32.

inline void WriteFeatures(std::ostream& os, const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1) throw Error("feature matrix must be non-empty");
  os.write("AXVF", 4);
  WriteU32(os, 1);
  WriteU32(os, static_cast<uint32_t>(m.rows()));
  WriteU32(os, static_cast<uint32_t>(m.cols()));
  for (Index t = 0; t < m.rows(); ++t)
    for (Index j = 0; j < m.cols(); ++j) WriteF32(os, static_cast<float>(m(t, j)));
}

inline Matrix ReadFeatures(std::istream& is) {
  char magic[4];
  ReadExact(is, magic, 4, "feature magic");
  if (std::string(magic, 4) != "AXVF") throw Error("not a feature file (bad magic)");
  const uint32_t version = ReadU32(is, "feature version");
  if (version != 1) throw Error("unsupported feature file version " + std::to_string(version));
  const uint32_t frames = ReadU32(is, "feature header");
  const uint32_t dim = ReadU32(is, "feature header");
  if (frames == 0 || dim == 0) throw Error("feature file declares an empty matrix");
  if (static_cast<uint64_t>(frames) * dim > (uint64_t{1} << 31))
    throw Error("feature file declares an implausible size");
  std::vector<char> raw(static_cast<size_t>(frames) * dim * 4);
  ReadExact(is, raw.data(), raw.size(), "feature payload");
  Matrix m(frames, dim);
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
  for (Index i = 0; i < m.size(); ++i) {
    const unsigned char* b = bytes + 4 * i;
    const uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                       (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return m;
}

inline void SaveFeatures(const std::filesystem::path& path, const Matrix& m) {
  AtomicWrite(path, [&](std::ostream& os) { WriteFeatures(os, m); });
}

inline Matrix LoadFeatures(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path);
  try {
    return ReadFeatures(is);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Corpus directories: utt2spk, utt2cond, feats/<utt>.axvf

inline void WriteKeyValueFile(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string, std::string>>& rows) {
  AtomicWrite(
      path,
      [&](std::ostream& os) {
        for (const auto& [k, v] : rows) os << k << ' ' << v << '\n';
      },
      false);
}

inline std::vector<std::pair<std::string, std::string>> ReadKeyValueFile(
    const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path, false);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = SplitFields(line);
    if (f.empty()) continue;
    if (f.size() != 2)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected two fields");
    rows.emplace_back(f[0], f[1]);
  }
  return rows;
}

inline void SaveCorpus(const std::filesystem::path& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "feats", ec);
  if (ec) throw Error("cannot create corpus directory " + dir.string() + ": " + ec.message());
  std::vector<std::pair<std::string, std::string>> spk, cond;
  for (const Utterance& u : corpus.utterances) {
    SaveFeatures(dir / "feats" / (u.id + ".axvf"), u.features);
    spk.emplace_back(u.id, u.speaker);
    cond.emplace_back(u.id, u.condition);
  }
  WriteKeyValueFile(dir / "utt2cond", cond);
  WriteKeyValueFile(dir / "utt2spk", spk);
}

inline Corpus LoadCorpus(const std::filesystem::path& dir) {
  Corpus corpus;
  std::map<std::string, std::string> cond;
  if (std::filesystem::exists(dir / "utt2cond"))
    for (auto& [k, v] : ReadKeyValueFile(dir / "utt2cond")) cond[k] = v;
  std::set<std::string> seen;
  for (auto& [utt, spk] : ReadKeyValueFile(dir / "utt2spk")) {
    if (!seen.insert(utt).second) throw Error("duplicate utterance id '" + utt + "' in utt2spk");
    Utterance u;
    u.id = utt;
    u.speaker = spk;
    auto it = cond.find(utt);
    u.condition = it != cond.end() ? it->second : "clean";
    u.features = LoadFeatures(dir / "feats" / (utt + ".axvf"));
    corpus.utterances.push_back(std::move(u));
  }
  if (corpus.utterances.empty()) throw Error("corpus " + dir.string() + " is empty");
  return corpus;
}

/// Synthesizes and writes a corpus; returns the in-memory copy.
inline Corpus GenerateCorpus(const CorpusSpec& spec, const std::filesystem::path& dir,
                             int min_frames = 15) {
  Corpus corpus = SynthesizeCorpus(spec, min_frames);
  SaveCorpus(dir, corpus);
  return corpus;
}

// ---------------------------------------------------------------------------
// Trials

struct Trial {
  std::string enroll;
  std::string test;
  bool target = false;
};

/// Samples distinct unordered utterance pairs.  Each pair is oriented by
/// corpus order (earlier utterance enrolls) and stratified over the
/// condition of the test utterance so that every condition present gets its
/// share of target and nontarget trials.
inline std::vector<Trial> GenerateTrials(const Corpus& corpus, uint64_t seed, int n_target,
                                         int n_nontarget) {
  if (n_target < 0 || n_nontarget < 0) throw Error("trial counts must be >= 0");
  const auto& utts = corpus.utterances;
  std::vector<std::string> conds;
  for (const Utterance& u : utts)
    if (std::find(conds.begin(), conds.end(), u.condition) == conds.end())
      conds.push_back(u.condition);
  std::sort(conds.begin(), conds.end());
  std::map<std::string, std::vector<std::pair<size_t, size_t>>> tgt_pool, non_pool;
  for (size_t i = 0; i < utts.size(); ++i)
    for (size_t j = i + 1; j < utts.size(); ++j) {
      auto& pool = utts[i].speaker == utts[j].speaker ? tgt_pool : non_pool;
      pool[utts[j].condition].emplace_back(i, j);
    }
  auto total = [](const auto& pools) {
    size_t n = 0;
    for (const auto& [c, v] : pools) n += v.size();
    return n;
  };
  if (static_cast<size_t>(n_target) > total(tgt_pool))
    throw Error("requested " + std::to_string(n_target) + " target trials but only " +
                std::to_string(total(tgt_pool)) + " same-speaker pairs exist");
  if (static_cast<size_t>(n_nontarget) > total(non_pool))
    throw Error("requested " + std::to_string(n_nontarget) + " nontarget trials but only " +
                std::to_string(total(non_pool)) + " different-speaker pairs exist");
  Rng rng(seed);
  auto draw = [&](std::map<std::string, std::vector<std::pair<size_t, size_t>>>& pools, int n,
                  bool target, std::vector<Trial>& out) {
    for (auto& [c, v] : pools) rng.Shuffle(v);
    // Round-robin over conditions until the quota is met.
    std::map<std::string, size_t> used;
    int taken = 0;
    while (taken < n) {
      bool progressed = false;
      for (const std::string& c : conds) {
        if (taken >= n) break;
        auto& v = pools[c];
        size_t& k = used[c];
        if (k < v.size()) {
          out.push_back({utts[v[k].first].id, utts[v[k].second].id, target});
          ++k;
          ++taken;
          progressed = true;
        }
      }
      if (!progressed) break;
    }
  };
  std::vector<Trial> trials;
  draw(tgt_pool, n_target, true, trials);
  draw(non_pool, n_nontarget, false, trials);
  return trials;
}

inline void SaveTrials(const std::filesystem::path& path, const std::vector<Trial>& trials) {
  AtomicWrite(
      path,
      [&](std::ostream& os) {
        for (const Trial& t : trials)
          os << t.enroll << ' ' << t.test << ' ' << (t.target ? "target" : "nontarget") << '\n';
      },
      false);
}

inline std::vector<Trial> LoadTrials(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path, false);
  std::vector<Trial> trials;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = SplitFields(line);
    if (f.empty()) continue;
    if (f.size() != 3 || (f[2] != "target" && f[2] != "nontarget"))
      throw Error(path.string() + ":" + std::to_string(lineno) +
                  ": expected 'enroll test target|nontarget'");
    trials.push_back({f[0], f[1], f[2] == "target"});
  }
  return trials;
}

}  // namespace axvec
