// include/axvec/pipeline.h

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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "axvec/backend.h"
#include "axvec/data.h"
#include "axvec/det_plot.h"
#include "axvec/metrics.h"
#include "axvec/model.h"
#include "axvec/training.h"

namespace axvec {

// ---------------------------------------------------------------------------
// Run configuration.  One JSON file defines a whole experiment; every stage
// seed is derived from the top-level seed so that a single value (or the
// --seed flag) pins the run.

struct TrialSpec {
  int num_target = 600;
  int num_nontarget = 3000;
};

struct FusionSpec {
  std::string name = "fusion";
  std::vector<std::string> members{"acnn", "abn"};
};

struct SweepSpec {
  std::string variant = "acnn";
  std::vector<int> values{2, 4, 6, 8};
};

struct RunConfig {
  std::string name = "run";
  uint64_t seed = 1;
  CorpusSpec corpus;
  CorpusSpec eval_corpus;  // held-out speakers; stage seed overrides the seed field
  TrialSpec trials;
  ArchConfig arch;
  TrainConfig train;
  BackendConfig backend;
  MetricOptions metrics;
  std::vector<std::string> systems{"baseline", "acnn", "abn", "acnn-abn"};
  FusionSpec fusion;
  SweepSpec n_sweep;
  int threads = 1;

  // Stage seeds.
  uint64_t CorpusSeed() const { return DeriveSeed(seed, 1); }
  uint64_t EvalCorpusSeed() const { return DeriveSeed(seed, 2); }
  uint64_t TrialSeed() const { return DeriveSeed(seed, 3); }
  uint64_t ModelSeed() const { return DeriveSeed(seed, 4); }
  uint64_t TrainSeed() const { return DeriveSeed(seed, 5); }

  CorpusSpec TrainCorpusSpec() const {
    CorpusSpec s = corpus;
    s.seed = CorpusSeed();
    return s;
  }
  CorpusSpec EvalCorpusSpec() const {
    CorpusSpec s = eval_corpus;
    s.seed = EvalCorpusSeed();
    return s;
  }
  TrainConfig TrainSettings() const {
    TrainConfig t = train;
    t.seed = TrainSeed();
    return t;
  }
  /// Architecture for one system; the output layer matches the training speakers.
  ArchConfig ArchFor(Variant v, int pool_size = 0) const {
    ArchConfig a = arch;
    a.input_dim = corpus.feature_dim;
    a.num_speakers = corpus.num_speakers;
    a.variant = v;
    if (pool_size > 0) a.pool_size = pool_size;
    return a;
  }

  void Validate() const {
    if (name.empty() || name.find('/') != std::string::npos)
      throw Error("config: name must be a non-empty file-name component");
    const int min_frames = ArchFor(Variant::kBaseline).MinFrames();
    TrainCorpusSpec().Validate(min_frames);
    EvalCorpusSpec().Validate(min_frames);
    if (eval_corpus.feature_dim != corpus.feature_dim)
      throw Error("config: eval_corpus.feature_dim must equal corpus.feature_dim");
    if (eval_corpus.speaker_prefix == corpus.speaker_prefix)
      throw Error("config: eval_corpus.speaker_prefix must differ from corpus.speaker_prefix "
                  "(held-out speakers)");
    for (Variant v : {Variant::kBaseline, Variant::kAcnn, Variant::kAbn, Variant::kAcnnAbn})
      ArchFor(v).Validate();
    TrainSettings().Validate();
    if (train.crop_frames_min < min_frames)
      throw Error("config: train.crop_frames_min must be >= " + std::to_string(min_frames));
    backend.Validate();
    if (trials.num_target < 1 || trials.num_nontarget < 1)
      throw Error("config: trials need at least one target and one nontarget");
    if (!(metrics.c_miss > 0 && metrics.c_fa > 0 && metrics.act_p_target > 0 &&
          metrics.act_p_target < 1))
      throw Error("config: invalid metric options");
    if (systems.empty()) throw Error("config: no systems");
    for (size_t i = 0; i < systems.size(); ++i) {
      ParseVariant(systems[i]);
      for (size_t j = 0; j < i; ++j)
        if (systems[i] == systems[j]) throw Error("config: duplicate system '" + systems[i] + "'");
    }
    if (!fusion.members.empty()) {
      if (fusion.members.size() < 2) throw Error("config: fusion needs at least two members");
      for (const std::string& m : fusion.members)
        if (std::find(systems.begin(), systems.end(), m) == systems.end())
          throw Error("config: fusion member '" + m + "' is not a configured system");
      if (std::find(systems.begin(), systems.end(), fusion.name) != systems.end())
        throw Error("config: fusion name collides with a system");
    }
    ParseVariant(n_sweep.variant);
    if (n_sweep.values.empty()) throw Error("config: n_sweep.values is empty");
    for (int n : n_sweep.values)
      if (n < 1) throw Error("config: n_sweep values must be >= 1");
    if (threads < 1) throw Error("config: threads must be >= 1");
  }

  /// Fully resolved configuration, including derived stage seeds.
  json ToJson() const {
    json c = TrainCorpusSpec().ToJson();
    json e = EvalCorpusSpec().ToJson();
    json a = ArchFor(arch.variant).ToJson();
    return json{{"name", name},
                {"seed", seed},
                {"corpus", c},
                {"eval_corpus", e},
                {"trials", {{"num_target", trials.num_target},
                            {"num_nontarget", trials.num_nontarget},
                            {"seed", TrialSeed()}}},
                {"arch", a},
                {"model_seed", ModelSeed()},
                {"train", TrainSettings().ToJson()},
                {"backend", backend.ToJson()},
                {"metrics", {{"c_miss", metrics.c_miss},
                             {"c_fa", metrics.c_fa},
                             {"act_p_target", metrics.act_p_target}}},
                {"systems", systems},
                {"fusion", {{"name", fusion.name}, {"members", fusion.members}}},
                {"n_sweep", {{"variant", n_sweep.variant}, {"values", n_sweep.values}}},
                {"threads", threads}};
  }

  /// Parses a user config.  Seeds inside sections are rejected because they
  /// are derived from the top-level seed; input_dim and num_speakers follow
  /// the training corpus.
  static RunConfig FromJson(const json& j) {
    RejectUnknownKeys(j,
                      {"name", "seed", "corpus", "eval_corpus", "trials", "arch", "train",
                       "backend", "metrics", "systems", "fusion", "n_sweep", "threads"},
                      "top level");
    RunConfig r;
    ReadKey(j, "name", r.name);
    ReadKey(j, "seed", r.seed);
    auto no_key = [](const json& s, const char* key, const char* section, const char* why) {
      if (s.contains(key))
        throw Error(std::string("config key '") + section + "." + key + "' is not allowed: " +
                    why);
    };
    if (j.contains("corpus")) {
      no_key(j["corpus"], "seed", "corpus", "derived from the top-level seed");
      r.corpus = CorpusSpec::FromJson(j["corpus"]);
    }
    // The eval corpus inherits everything but the speaker prefix and size.
    r.eval_corpus = r.corpus;
    r.eval_corpus.speaker_prefix = "evl";
    r.eval_corpus.num_speakers = 16;
    r.eval_corpus.utts_per_speaker = 10;
    if (j.contains("eval_corpus")) {
      no_key(j["eval_corpus"], "seed", "eval_corpus", "derived from the top-level seed");
      r.eval_corpus = CorpusSpec::FromJson(j["eval_corpus"], r.eval_corpus);
    }
    if (j.contains("trials")) {
      RejectUnknownKeys(j["trials"], {"num_target", "num_nontarget"}, "trials");
      ReadKey(j["trials"], "num_target", r.trials.num_target);
      ReadKey(j["trials"], "num_nontarget", r.trials.num_nontarget);
    }
    if (j.contains("arch")) {
      no_key(j["arch"], "num_speakers", "arch", "set by the training corpus");
      no_key(j["arch"], "input_dim", "arch", "set by corpus.feature_dim");
      r.arch = ArchConfig::FromJson(j["arch"]);
    }
    if (j.contains("train")) {
      no_key(j["train"], "seed", "train", "derived from the top-level seed");
      r.train = TrainConfig::FromJson(j["train"]);
    }
    if (j.contains("backend")) r.backend = BackendConfig::FromJson(j["backend"]);
    if (j.contains("metrics")) {
      RejectUnknownKeys(j["metrics"], {"c_miss", "c_fa", "act_p_target"}, "metrics");
      ReadKey(j["metrics"], "c_miss", r.metrics.c_miss);
      ReadKey(j["metrics"], "c_fa", r.metrics.c_fa);
      ReadKey(j["metrics"], "act_p_target", r.metrics.act_p_target);
    }
    ReadKey(j, "systems", r.systems);
    if (j.contains("fusion")) {
      RejectUnknownKeys(j["fusion"], {"name", "members"}, "fusion");
      ReadKey(j["fusion"], "name", r.fusion.name);
      ReadKey(j["fusion"], "members", r.fusion.members);
    }
    if (j.contains("n_sweep")) {
      RejectUnknownKeys(j["n_sweep"], {"variant", "values"}, "n_sweep");
      ReadKey(j["n_sweep"], "variant", r.n_sweep.variant);
      ReadKey(j["n_sweep"], "values", r.n_sweep.values);
    }
    ReadKey(j, "threads", r.threads);
    return r;
  }
};

inline RunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path, false);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    RunConfig r = RunConfig::FromJson(j);
    r.Validate();
    return r;
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void WriteText(const std::filesystem::path& path, const std::string& text) {
  AtomicWrite(path, [&](std::ostream& os) { os << text; }, false);
}

inline std::map<std::string, std::string> Utt2Cond(const Corpus& corpus) {
  std::map<std::string, std::string> m;
  for (const Utterance& u : corpus.utterances) m[u.id] = u.condition;
  return m;
}

inline std::map<std::string, std::string> LoadUtt2Cond(const std::filesystem::path& path) {
  std::map<std::string, std::string> m;
  for (auto& [k, v] : ReadKeyValueFile(path))
    if (!m.emplace(k, v).second) throw Error(path.string() + ": duplicate id '" + k + "'");
  return m;
}

/// Integer labels of a table's ids through an utt2spk map; speakers are
/// numbered in sorted order.
inline std::vector<int> LabelsFor(const EmbeddingTable& table,
                                  const std::map<std::string, std::string>& utt2spk) {
  std::map<std::string, int> index;
  for (const auto& [u, s] : utt2spk) index.emplace(s, 0);
  int next = 0;
  for (auto& [s, k] : index) k = next++;
  std::vector<int> labels;
  for (const std::string& id : table.ids) {
    auto it = utt2spk.find(id);
    if (it == utt2spk.end()) throw Error("no speaker for utterance '" + id + "'");
    labels.push_back(index.at(it->second));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Experiment layout:
//   <out>/config.json             resolved configuration
//   <out>/data/{train,eval}/      corpora (feats/, utt2spk, utt2cond)
//   <out>/data/eval/trials
//   <out>/<system>/               model.axvm, train.log, train.axve, eval.axve, backend.axvb
//   <out>/scores/<system>.scores  one per system plus the fusion
//   <out>/report.txt, report.kv
//   <out>/det/<system>.csv, det/det.svg

struct ExperimentPaths {
  std::filesystem::path root;
  std::filesystem::path TrainData() const { return root / "data" / "train"; }
  std::filesystem::path EvalData() const { return root / "data" / "eval"; }
  std::filesystem::path Trials() const { return EvalData() / "trials"; }
  std::filesystem::path System(const std::string& s) const { return root / s; }
  std::filesystem::path Scores(const std::string& s) const {
    return root / "scores" / (s + ".scores");
  }
};

struct Data {
  Corpus train;
  Corpus eval;
  std::vector<Trial> trials;
};

inline Data GenerateData(const RunConfig& cfg) {
  const int min_frames = cfg.ArchFor(Variant::kBaseline).MinFrames();
  Data d;
  d.train = SynthesizeCorpus(cfg.TrainCorpusSpec(), min_frames);
  d.eval = SynthesizeCorpus(cfg.EvalCorpusSpec(), min_frames);
  d.trials = GenerateTrials(d.eval, cfg.TrialSeed(), cfg.trials.num_target,
                            cfg.trials.num_nontarget);
  return d;
}

inline void SaveData(const ExperimentPaths& p, const Data& d) {
  SaveCorpus(p.TrainData(), d.train);
  SaveCorpus(p.EvalData(), d.eval);
  SaveTrials(p.Trials(), d.trials);
}

struct TrainSummary {
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  double last_epoch_accuracy = 0.0;
  int steps = 0;
  int64_t params = 0;
  double seconds = 0.0;  // wall clock; never written to deterministic outputs
};

inline TrainSummary Summarize(const TrainLog& log, const Model& m) {
  TrainSummary s;
  s.first_epoch_loss = log.EpochMeanLoss(0);
  s.last_epoch_loss = log.EpochMeanLoss(log.LastEpoch());
  s.last_epoch_accuracy = log.EpochMeanAccuracy(log.LastEpoch());
  s.steps = static_cast<int>(log.steps.size());
  s.params = CountParams(m);
  return s;
}

/// Trains one system, writing the model (atomically) and the step log.
inline TrainSummary TrainSystem(const RunConfig& cfg, const ArchConfig& arch, const Corpus& corpus,
                                const std::filesystem::path& model_path,
                                const std::filesystem::path& log_path) {
  const auto t0 = std::chrono::steady_clock::now();
  Model model = BuildModel(arch, cfg.ModelSeed());
  std::ostringstream log;
  const TrainLog tl = Train(model, corpus, cfg.TrainSettings(), &log,
                            [&](int, const Model& m) { SaveModel(model_path, m); });
  WriteText(log_path, log.str());
  TrainSummary s = Summarize(tl, model);
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

/// Extraction, backend training on the training corpus, and trial scoring
/// for a trained model stored in `dir`.
inline std::vector<ScoreEntry> ScoreSystem(const RunConfig& cfg, const Data& d,
                                           const std::filesystem::path& dir) {
  const Model model = LoadModel(dir / "model.axvm");
  const EmbeddingTable train = ExtractEmbeddings(model, d.train, cfg.threads);
  const EmbeddingTable eval = ExtractEmbeddings(model, d.eval, cfg.threads);
  SaveEmbeddings(dir / "train.axve", train);
  SaveEmbeddings(dir / "eval.axve", eval);
  const BackendFit fit = FitBackend(train, CorpusLabels(d.train), cfg.backend);
  SaveBackend(dir / "backend.axvb", fit.backend);
  return ScoreTrials(fit.backend, eval, d.trials);
}

/// One DET CSV per system plus an SVG overlay, named by system.
inline void ExportDet(const std::filesystem::path& dir,
                      const std::vector<std::pair<std::string, LabeledScores>>& systems) {
  std::vector<DetCurve> curves;
  for (const auto& [name, s] : systems) {
    DetCurve c{name, DetPoints(s)};
    WriteText(dir / (name + ".csv"), DetCsv(c.points));
    curves.push_back(std::move(c));
  }
  WriteText(dir / "det.svg", DetSvg(curves));
}

inline LabeledScores JoinLabels(const std::vector<ScoreEntry>& scores,
                                const std::vector<Trial>& trials) {
  std::map<std::string, bool> label;
  for (const Trial& t : trials) label[TrialKey(t.enroll, t.test)] = t.target;
  LabeledScores out;
  for (const ScoreEntry& e : scores) {
    auto it = label.find(TrialKey(e.enroll, e.test));
    if (it == label.end())
      throw Error("score for unknown trial '" + TrialKey(e.enroll, e.test) + "'");
    (it->second ? out.target : out.nontarget).push_back(e.score);
  }
  return out;
}

struct ExperimentResult {
  std::vector<std::pair<std::string, TrainSummary>> training;
  SystemResults results;
  std::string report;
  std::string key_values;
};

/// Training summary table; deterministic (no timings).
inline std::string FormatTrainingSummary(
    const std::vector<std::pair<std::string, TrainSummary>>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %8s %12s %12s %10s\n", "System", "Params", "Steps",
                "Loss(first)", "Loss(last)", "Acc(last)");
  os << "Training\n" << buf;
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %10lld %8d %12.4f %12.4f %10.4f\n", name.c_str(),
                  static_cast<long long>(s.params), s.steps, s.first_epoch_loss,
                  s.last_epoch_loss, s.last_epoch_accuracy);
    os << buf;
  }
  return os.str();
}

/// The whole experiment: data, every configured system, the fusion, the
/// report and DET export.  Progress lines go to `progress`.
inline ExperimentResult RunExperiment(const RunConfig& cfg, const std::filesystem::path& out,
                                      std::ostream& progress) {
  cfg.Validate();
  const ExperimentPaths p{out};
  WriteText(out / "config.json", cfg.ToJson().dump(2) + "\n");
  progress << "generating data\n" << std::flush;
  const Data d = GenerateData(cfg);
  SaveData(p, d);
  const auto utt2cond = Utt2Cond(d.eval);
  ExperimentResult r;
  std::map<std::string, std::vector<ScoreEntry>> scores;
  std::vector<std::pair<std::string, LabeledScores>> det;
  for (const std::string& sys : cfg.systems) {
    progress << "training " << sys << "\n" << std::flush;
    const ArchConfig arch = cfg.ArchFor(ParseVariant(sys));
    const TrainSummary ts = TrainSystem(cfg, arch, d.train, p.System(sys) / "model.axvm",
                                        p.System(sys) / "train.log");
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %s: %d steps in %.1f s, loss %.4f -> %.4f, acc %.4f\n",
                  sys.c_str(), ts.steps, ts.seconds, ts.first_epoch_loss, ts.last_epoch_loss,
                  ts.last_epoch_accuracy);
    progress << buf << std::flush;
    r.training.emplace_back(sys, ts);
    // Downstream stages read the score file back, as the fuse and evaluate
    // subcommands do, so both paths see the same rounded scores.
    SaveScores(p.Scores(sys), ScoreSystem(cfg, d, p.System(sys)));
    scores[sys] = LoadScores(p.Scores(sys));
    r.results.emplace_back(sys, Evaluate(scores[sys], d.trials, utt2cond, cfg.metrics));
    det.emplace_back(sys, JoinLabels(scores[sys], d.trials));
  }
  if (!cfg.fusion.members.empty()) {
    std::vector<std::vector<ScoreEntry>> lists;
    for (const std::string& m : cfg.fusion.members) lists.push_back(scores.at(m));
    SaveScores(p.Scores(cfg.fusion.name), FuseScores(lists));
    const std::vector<ScoreEntry> fused = LoadScores(p.Scores(cfg.fusion.name));
    r.results.emplace_back(cfg.fusion.name, Evaluate(fused, d.trials, utt2cond, cfg.metrics));
    det.emplace_back(cfg.fusion.name, JoinLabels(fused, d.trials));
  }
  r.report = FormatTrainingSummary(r.training) + "\n" + FormatReport(r.results);
  r.key_values = FormatKeyValues(r.results);
  WriteText(out / "report.txt", r.report);
  WriteText(out / "report.kv", r.key_values);
  ExportDet(out / "det", det);
  return r;
}

// ---------------------------------------------------------------------------
// Sweep over the filter-pool size N for one adaptive variant.

struct SweepRow {
  int n = 0;
  TrainSummary training;
  MetricSet metrics;
};

inline std::string FormatSweepTable(const std::string& variant, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  char buf[256];
  os << "Pool size sweep (" << variant << ")\n";
  std::snprintf(buf, sizeof(buf), "%-4s %10s %9s %10s %10s %9s\n", "N", "Params", "EER(%)",
                "DCF(1e-2)", "DCF(1e-3)", "actDCF");
  os << buf;
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-4d %10lld %9.3f %10.4f %10.4f %9.4f\n", r.n,
                  static_cast<long long>(r.training.params), 100.0 * r.metrics.eer,
                  r.metrics.dcf2, r.metrics.dcf3, r.metrics.act_dcf);
    os << buf;
  }
  return os.str();
}

inline std::vector<SweepRow> RunSweep(const RunConfig& cfg, const std::filesystem::path& out,
                                      std::ostream& progress) {
  cfg.Validate();
  const ExperimentPaths p{out};
  WriteText(out / "config.json", cfg.ToJson().dump(2) + "\n");
  progress << "generating data\n" << std::flush;
  const Data d = GenerateData(cfg);
  SaveData(p, d);
  const Variant v = ParseVariant(cfg.n_sweep.variant);
  std::vector<SweepRow> rows;
  for (int n : cfg.n_sweep.values) {
    const std::string tag = cfg.n_sweep.variant + "-n" + std::to_string(n);
    progress << "training " << tag << "\n" << std::flush;
    SweepRow row;
    row.n = n;
    row.training = TrainSystem(cfg, cfg.ArchFor(v, n), d.train, p.System(tag) / "model.axvm",
                               p.System(tag) / "train.log");
    SaveScores(p.Scores(tag), ScoreSystem(cfg, d, p.System(tag)));
    const std::vector<ScoreEntry> s = LoadScores(p.Scores(tag));
    row.metrics = Evaluate(s, d.trials, {}, cfg.metrics).overall;
    rows.push_back(row);
  }
  WriteText(out / "n_sweep.txt", FormatSweepTable(cfg.n_sweep.variant, rows));
  return rows;
}

}  // namespace axvec
