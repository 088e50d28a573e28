// tools/axvec.cpp

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

// Command-line driver: one pipeline stage per subcommand.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "axvec/pipeline.h"

namespace fs = std::filesystem;
using namespace axvec;

namespace {

constexpr const char* kOutputRootEnv = "AXVEC_OUTPUT_ROOT";

fs::path OutputRoot() {
  const char* v = std::getenv(kOutputRootEnv);
  return v != nullptr && *v != '\0' ? fs::path(v) : fs::path("runs");
}

void LogConfig(const std::string& command, const json& settings) {
  std::cerr << "axvec " << command << ": config " << settings.dump() << "\n";
}

void RequireFile(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error("missing file " + p.string());
}

RunConfig LoadConfigWithOverrides(const std::string& path, const std::optional<uint64_t>& seed,
                                  const std::optional<int>& threads) {
  RequireFile(path);
  RunConfig cfg = LoadRunConfig(path);
  if (seed) cfg.seed = *seed;
  if (threads) cfg.threads = *threads;
  cfg.Validate();
  return cfg;
}

/// Runs `body` against a scratch sibling of `out` and moves it into place on
/// success, so a failed run leaves no partial directory.  An existing `out`
/// is replaced only if it holds a previous run (config.json present).
template <typename F>
void WithStagedDirectory(const fs::path& out, F&& body) {
  if (fs::exists(out) && !fs::is_empty(out) && !fs::exists(out / "config.json"))
    throw Error("refusing to replace " + out.string() + ": not an axvec run directory");
  fs::path stage = out;
  stage += ".partial." + std::to_string(::getpid());
  fs::remove_all(stage);
  try {
    fs::create_directories(stage);
    body(stage);
    fs::remove_all(out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    fs::rename(stage, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage, ec);
    throw;
  }
}

fs::path RunDirectory(const std::string& flag, const RunConfig& cfg) {
  return flag.empty() ? OutputRoot() / cfg.name : fs::path(flag);
}

std::vector<std::string> Stems(const std::vector<std::string>& files) {
  std::vector<std::string> names;
  for (const std::string& f : files) {
    names.push_back(fs::path(f).stem().string());
    for (size_t i = 0; i + 1 < names.size(); ++i)
      if (names[i] == names.back()) throw Error("two score files share the name '" + names[i] + "'");
  }
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"axvec: adaptive x-vector speaker verification toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer(std::string("Default output root for run directories: $") + kOutputRootEnv +
             " (else ./runs).");

  std::string config, out, data, model_path, log_path, arch, emb_path, backend_path, trials_path,
      utt2spk_path, utt2cond_path, report_path, kv_path, values_flag;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> inputs;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Override the top-level seed"); };
  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", threads, "Extraction threads")->check(CLI::PositiveNumber);
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Synthesize train/eval corpora and trials");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out, "Run directory (default: $" + std::string(kOutputRootEnv) + "/<name>)");
  add_seed(gen);

  CLI::App* train = app.add_subcommand("train", "Train one system");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--arch", arch, "baseline|acnn|abn|acnn-abn")
      ->required()
      ->check(CLI::IsMember({"baseline", "acnn", "abn", "acnn-abn"}));
  train->add_option("--data", data, "Training corpus directory")->required();
  train->add_option("--out", model_path, "Model file")->required();
  train->add_option("--log", log_path, "Step log (default: <out>.log)");
  add_seed(train);

  CLI::App* extract = app.add_subcommand("extract", "Extract embeddings for a corpus");
  extract->add_option("--model", model_path, "Model file")->required();
  extract->add_option("--data", data, "Corpus directory")->required();
  extract->add_option("--out", emb_path, "Embedding file")->required();
  add_threads(extract);

  CLI::App* bfit = app.add_subcommand("backend-fit", "Fit LDA + length norm + PLDA");
  bfit->add_option("--embeddings", emb_path, "Training embeddings")->required();
  bfit->add_option("--utt2spk", utt2spk_path, "Speaker labels")->required();
  bfit->add_option("--out", backend_path, "Backend file")->required();
  bfit->add_option("--config", config, "Run config supplying the backend section");

  CLI::App* score = app.add_subcommand("score", "Score a trial list");
  score->add_option("--backend", backend_path, "Backend file")->required();
  score->add_option("--embeddings", emb_path, "Evaluation embeddings")->required();
  score->add_option("--trials", trials_path, "Trial list")->required();
  score->add_option("--out", out, "Score file")->required();

  CLI::App* fuse = app.add_subcommand("fuse", "Equal-weight score fusion");
  fuse->add_option("scores", inputs, "Score files")->required()->expected(2, -1);
  fuse->add_option("--out", out, "Fused score file")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "EER/minDCF/actDCF report");
  evaluate->add_option("scores", inputs, "Score files (system name = file stem)")
      ->required()
      ->expected(1, -1);
  evaluate->add_option("--trials", trials_path, "Trial list")->required();
  evaluate->add_option("--utt2cond", utt2cond_path, "Conditions for the per-condition tables");
  evaluate->add_option("--report", report_path, "Write the text report here");
  evaluate->add_option("--kv", kv_path, "Write key=value metrics here");
  evaluate->add_option("--config", config, "Run config supplying the metrics section");

  CLI::App* det = app.add_subcommand("det-export", "DET CSVs plus a probit SVG overlay");
  det->add_option("scores", inputs, "Score files (legend = file stem)")->required()->expected(1, -1);
  det->add_option("--trials", trials_path, "Trial list")->required();
  det->add_option("--out", out, "Output directory")->required();

  CLI::App* exp = app.add_subcommand("experiment", "Full pipeline for every configured system");
  exp->add_option("--config", config, "Run config (JSON)")->required();
  exp->add_option("--out", out, "Run directory (default: $" + std::string(kOutputRootEnv) + "/<name>)");
  add_seed(exp);
  add_threads(exp);

  CLI::App* sweep = app.add_subcommand("n-sweep", "Filter-pool size sweep with a comparison table");
  sweep->add_option("--config", config, "Run config (JSON)")->required();
  sweep->add_option("--out", out, "Run directory (default: $" + std::string(kOutputRootEnv) + "/<name>-nsweep)");
  sweep->add_option("--values", values_flag, "Comma-separated N values (overrides n_sweep.values)");
  add_seed(sweep);
  add_threads(sweep);

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const CLI::App* c : app.get_subcommands({})) known |= c->get_name() == argv[1];
    if (!known) {
      std::cerr << "axvec: error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "axvec: error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      const RunConfig cfg = LoadConfigWithOverrides(config, seed, std::nullopt);
      const fs::path dir = RunDirectory(out, cfg);
      LogConfig("gen-data", cfg.ToJson());
      WithStagedDirectory(dir, [&](const fs::path& stage) {
        WriteText(stage / "config.json", cfg.ToJson().dump(2) + "\n");
        SaveData(ExperimentPaths{stage}, GenerateData(cfg));
      });
      std::cerr << "axvec gen-data: wrote " << dir.string() << "\n";
    } else if (*train) {
      const RunConfig cfg = LoadConfigWithOverrides(config, seed, std::nullopt);
      const Corpus corpus = LoadCorpus(data);
      ArchConfig a = cfg.ArchFor(ParseVariant(arch));
      a.num_speakers = static_cast<int>(corpus.Speakers().size());
      if (!corpus.utterances.empty())
        a.input_dim = static_cast<int>(corpus.utterances.front().features.cols());
      const fs::path log = log_path.empty() ? fs::path(model_path + ".log") : fs::path(log_path);
      LogConfig("train", json{{"arch", a.ToJson()},
                              {"train", cfg.TrainSettings().ToJson()},
                              {"model_seed", cfg.ModelSeed()},
                              {"data", data},
                              {"out", model_path},
                              {"log", log.string()}});
      const TrainSummary s = TrainSystem(cfg, a, corpus, model_path, log);
      std::printf("steps=%d params=%lld first_epoch_loss=%.6f last_epoch_loss=%.6f "
                  "last_epoch_accuracy=%.4f\n",
                  s.steps, static_cast<long long>(s.params), s.first_epoch_loss,
                  s.last_epoch_loss, s.last_epoch_accuracy);
    } else if (*extract) {
      RequireFile(model_path);
      const int t = threads.value_or(1);
      LogConfig("extract", json{{"model", model_path}, {"data", data}, {"out", emb_path},
                                {"threads", t}});
      const Model m = LoadModel(model_path);
      SaveEmbeddings(emb_path, ExtractEmbeddings(m, LoadCorpus(data), t));
    } else if (*bfit) {
      RequireFile(emb_path);
      RequireFile(utt2spk_path);
      BackendConfig bc;
      if (!config.empty()) bc = LoadConfigWithOverrides(config, std::nullopt, std::nullopt).backend;
      LogConfig("backend-fit", json{{"backend", bc.ToJson()}, {"embeddings", emb_path},
                                    {"utt2spk", utt2spk_path}, {"out", backend_path}});
      const EmbeddingTable table = LoadEmbeddings(emb_path);
      const BackendFit fit = FitBackend(table, LabelsFor(table, LoadUtt2Cond(utt2spk_path)), bc);
      for (const std::string& w : fit.warnings) std::cerr << "axvec backend-fit: warning: " << w << "\n";
      SaveBackend(backend_path, fit.backend);
    } else if (*score) {
      for (const std::string& f : {backend_path, emb_path, trials_path}) RequireFile(f);
      LogConfig("score", json{{"backend", backend_path}, {"embeddings", emb_path},
                              {"trials", trials_path}, {"out", out}});
      SaveScores(out, ScoreTrials(LoadBackend(backend_path), LoadEmbeddings(emb_path),
                                  LoadTrials(trials_path)));
    } else if (*fuse) {
      LogConfig("fuse", json{{"scores", inputs}, {"out", out}});
      std::vector<std::vector<ScoreEntry>> lists;
      for (const std::string& f : inputs) lists.push_back(LoadScores(f));
      SaveScores(out, FuseScores(lists));
    } else if (*evaluate) {
      MetricOptions mo;
      if (!config.empty()) mo = LoadConfigWithOverrides(config, std::nullopt, std::nullopt).metrics;
      LogConfig("evaluate", json{{"scores", inputs}, {"trials", trials_path},
                                 {"utt2cond", utt2cond_path},
                                 {"metrics", {{"c_miss", mo.c_miss}, {"c_fa", mo.c_fa},
                                              {"act_p_target", mo.act_p_target}}}});
      const std::vector<Trial> trials = LoadTrials(trials_path);
      const auto cond = utt2cond_path.empty() ? std::map<std::string, std::string>{}
                                              : LoadUtt2Cond(utt2cond_path);
      const std::vector<std::string> names = Stems(inputs);
      SystemResults results;
      for (size_t i = 0; i < inputs.size(); ++i)
        results.emplace_back(names[i], Evaluate(LoadScores(inputs[i]), trials, cond, mo));
      const std::string report = FormatReport(results);
      if (!report_path.empty()) WriteText(report_path, report);
      if (!kv_path.empty()) WriteText(kv_path, FormatKeyValues(results));
      std::cout << report;
    } else if (*det) {
      LogConfig("det-export", json{{"scores", inputs}, {"trials", trials_path}, {"out", out}});
      const std::vector<Trial> trials = LoadTrials(trials_path);
      const std::vector<std::string> names = Stems(inputs);
      std::vector<std::pair<std::string, LabeledScores>> systems;
      for (size_t i = 0; i < inputs.size(); ++i) {
        const auto s = LoadScores(inputs[i]);
        Evaluate(s, trials, {});  // same completeness checks as evaluate
        systems.emplace_back(names[i], JoinLabels(s, trials));
      }
      ExportDet(out, systems);
    } else if (*exp) {
      const RunConfig cfg = LoadConfigWithOverrides(config, seed, threads);
      const fs::path dir = RunDirectory(out, cfg);
      LogConfig("experiment", cfg.ToJson());
      ExperimentResult r;
      WithStagedDirectory(dir, [&](const fs::path& stage) { r = RunExperiment(cfg, stage, std::cerr); });
      std::cout << r.report;
      std::cerr << "axvec experiment: wrote " << dir.string() << "\n";
    } else if (*sweep) {
      RunConfig cfg = LoadConfigWithOverrides(config, seed, threads);
      if (!values_flag.empty()) {
        cfg.n_sweep.values.clear();
        std::stringstream ss(values_flag);
        std::string item;
        while (std::getline(ss, item, ',')) {
          size_t pos = 0;
          int v = 0;
          try {
            v = std::stoi(item, &pos);
          } catch (const std::exception&) {
            pos = 0;
          }
          if (pos == 0 || pos != item.size()) throw Error("--values: bad entry '" + item + "'");
          cfg.n_sweep.values.push_back(v);
        }
        cfg.Validate();
      }
      const fs::path dir = out.empty() ? OutputRoot() / (cfg.name + "-nsweep") : fs::path(out);
      LogConfig("n-sweep", cfg.ToJson());
      std::vector<SweepRow> rows;
      WithStagedDirectory(dir, [&](const fs::path& stage) { rows = RunSweep(cfg, stage, std::cerr); });
      std::cout << FormatSweepTable(cfg.n_sweep.variant, rows);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "axvec: error: " << msg << "\n";
    return 1;
  }
  return 0;
}
