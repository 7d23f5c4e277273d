// Copyright 2026 The CMI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cmi/cli.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <system_error>

#include "CLI11.hpp"
#include "cmi/checkpoint.h"
#include "cmi/error.h"

namespace cmi {
namespace {

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T ParseNumber(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" +
                      std::string(text) + "'");
  }
  return value;
}

double ParseReal(std::string_view key, std::string_view text) {
  // from_chars for double is missing from older libstdc++.
  const std::string s(text);
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + s + "'");
  }
  return value;
}

bool ParseBool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad value for " + std::string(key) + ": '" +
                    std::string(text) + "' (expected true or false)");
}

std::string FormatReal(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string Fixed(double x, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field SizeField(T RunConfig::*outer) {
  return {[outer](RunConfig& c, std::string_view v) {
            c.*outer = ParseNumber<T>("", v);
          },
          [outer](const RunConfig& c) { return std::to_string(c.*outer); }};
}

Field HyperSize(std::size_t Hyperparams::*member) {
  return {[member](RunConfig& c, std::string_view v) {
            c.hyper.*member = ParseNumber<std::size_t>("", v);
          },
          [member](const RunConfig& c) {
            return std::to_string(c.hyper.*member);
          }};
}

Field HyperReal(double Hyperparams::*member) {
  return {[member](RunConfig& c, std::string_view v) {
            c.hyper.*member = ParseReal("", v);
          },
          [member](const RunConfig& c) { return FormatReal(c.hyper.*member); }};
}

Field PathField(std::filesystem::path RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view v) {
            c.*member = std::filesystem::path(std::string(v));
          },
          [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::map<std::string, Field, std::less<>>& Fields() {
  static const std::map<std::string, Field, std::less<>> fields = {
      {"m", HyperSize(&Hyperparams::num_interests)},
      {"d", HyperSize(&Hyperparams::dim)},
      {"epsilon", HyperReal(&Hyperparams::epsilon)},
      {"tau", HyperReal(&Hyperparams::tau)},
      {"mu", HyperReal(&Hyperparams::sample_ratio)},
      {"f", HyperSize(&Hyperparams::max_length)},
      {"lambda_cl", HyperReal(&Hyperparams::lambda_cl)},
      {"lambda_orth", HyperReal(&Hyperparams::lambda_orth)},
      {"n", HyperSize(&Hyperparams::num_negatives)},
      {"top_k", HyperSize(&Hyperparams::top_k)},
      {"batch_size", HyperSize(&Hyperparams::batch_size)},
      {"lr", HyperReal(&Hyperparams::learning_rate)},
      {"beta1", HyperReal(&Hyperparams::beta1)},
      {"beta2", HyperReal(&Hyperparams::beta2)},
      {"adam_epsilon", HyperReal(&Hyperparams::adam_epsilon)},
      {"patience", HyperSize(&Hyperparams::patience)},
      {"use_general_interest",
       {[](RunConfig& c, std::string_view v) {
          c.hyper.use_general_interest = ParseBool("", v);
        },
        [](const RunConfig& c) {
          return std::string(c.hyper.use_general_interest ? "true" : "false");
        }}},
      {"interactions", PathField(&RunConfig::interactions)},
      {"checkpoint", PathField(&RunConfig::checkpoint)},
      {"output_dir", PathField(&RunConfig::output_dir)},
      {"delimiter",
       {[](RunConfig& c, std::string_view v) {
          if (v == "tab" || v == "\\t") {
            c.delimiter = '\t';
          } else if (v.size() == 1) {
            c.delimiter = v[0];
          } else {
            throw ConfigError("delimiter must be one character or 'tab'");
          }
        },
        [](const RunConfig& c) {
          return c.delimiter == '\t' ? std::string("tab")
                                     : std::string(1, c.delimiter);
        }}},
      {"span_days",
       {[](RunConfig& c, std::string_view v) {
          c.span_days = ParseNumber<int>("", v);
        },
        [](const RunConfig& c) { return std::to_string(c.span_days); }}},
      {"day_length",
       {[](RunConfig& c, std::string_view v) {
          c.day_length = ParseNumber<Timestamp>("", v);
        },
        [](const RunConfig& c) { return std::to_string(c.day_length); }}},
      {"rank_mode",
       {[](RunConfig& c, std::string_view v) {
          c.rank_mode = ParseRankMode(v);
        },
        [](const RunConfig& c) {
          return std::string(RankModeName(c.rank_mode));
        }}},
      {"seed", SizeField(&RunConfig::seed)},
      {"threads", SizeField(&RunConfig::threads)},
      {"max_epochs", SizeField(&RunConfig::max_epochs)},
      {"instances_per_user", SizeField(&RunConfig::instances_per_user)},
  };
  return fields;
}

InteractionLog LoadLog(const RunConfig& config) {
  return ParseInteractions(config.interactions, {config.delimiter});
}

InteractionLog Concatenate(const InteractionLog& a, const InteractionLog& b) {
  InteractionLog out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  return out;
}

ModelParameters LoadCompatible(const std::filesystem::path& path,
                               const InteractionLog& log, RunConfig& config) {
  auto params = LoadCheckpoint(path);
  const auto dims = params.dims();
  if (dims.num_items != log.num_items) {
    throw ConfigError("checkpoint " + path.string() + " has " +
                      std::to_string(dims.num_items) +
                      " items but the interaction log has " +
                      std::to_string(log.num_items));
  }
  config.hyper.num_interests = dims.num_interests;
  config.hyper.dim = dims.dim;
  return params;
}

int CmdTrain(const RunConfig& config, std::ostream& out) {
  config.Validate(true);
  const auto log = LoadLog(config);
  const auto split = ChronologicalSplit(log, config.span_days,
                                        config.day_length);

  TrainConfig train;
  train.hyper = config.hyper;
  train.max_epochs = config.max_epochs;
  train.instances_per_user = config.instances_per_user;
  train.seed = config.seed;
  train.threads = config.threads;
  train.rank_mode = config.rank_mode;
  train.eval_k = config.hyper.top_k;
  train.checkpoint_path = config.CheckpointPath();
  train.Validate();

  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
  }
  if (train.checkpoint_path.has_parent_path()) {
    std::filesystem::create_directories(train.checkpoint_path.parent_path());
  }
  std::ofstream epoch_log(config.EpochLogPath(), std::ios::binary);
  if (!epoch_log) {
    throw ConfigError("cannot write " + config.EpochLogPath().string());
  }
  WriteEpochLogHeader(epoch_log);

  out << "epoch\tmain\tcontrastive\torthogonality\ttotal\trecall@"
      << train.eval_k << "\tseconds\n";
  FitCallbacks callbacks;
  callbacks.on_epoch = [&](const EpochStats& s) {
    WriteEpochLogRow(epoch_log, s);
    epoch_log.flush();
    out << s.epoch << '\t' << Fixed(s.main, 6) << '\t'
        << Fixed(s.contrastive, 6) << '\t' << Fixed(s.orthogonality, 6)
        << '\t' << Fixed(s.total, 6) << '\t' << Fixed(s.validation_recall, 6)
        << '\t' << Fixed(s.elapsed_seconds, 1) << '\n';
    out.flush();
  };
  const auto result = Fit(split, train, callbacks);
  if (!epoch_log) {
    throw ConfigError("failed writing " + config.EpochLogPath().string());
  }

  const auto report =
      EvaluateSplit(split.train, split.validation, result.best, config.hyper,
                    DefaultMetricKs(), config.rank_mode, config.threads);
  out << "best_epoch " << result.best_epoch << '\n';
  out << "checkpoint " << train.checkpoint_path.string() << '\n';
  out << "validation\n";
  WriteMetricsTsv(out, report);
  return kExitOk;
}

int CmdEval(RunConfig config, const std::string& split_name,
            std::ostream& out) {
  config.Validate(true);
  const auto log = LoadLog(config);
  const auto params = LoadCompatible(config.CheckpointPath(), log, config);
  const auto split = ChronologicalSplit(log, config.span_days,
                                        config.day_length);
  MetricsReport report;
  if (split_name == "validation") {
    report = EvaluateSplit(split.train, split.validation, params, config.hyper,
                           DefaultMetricKs(), config.rank_mode,
                           config.threads);
  } else {
    report = EvaluateSplit(Concatenate(split.train, split.validation),
                           split.test, params, config.hyper, DefaultMetricKs(),
                           config.rank_mode, config.threads);
  }
  out << split_name << '\n';
  WriteMetricsTsv(out, report);
  return kExitOk;
}

int CmdRecommend(RunConfig config, const std::vector<std::string>& users,
                 std::size_t k, std::ostream& out, std::ostream& err) {
  config.Validate(true);
  if (k < 1) throw ConfigError("k must be >= 1");
  if (users.empty()) throw ConfigError("no users requested");
  const auto log = LoadLog(config);
  const auto params = LoadCompatible(config.CheckpointPath(), log, config);
  const auto sequences = BuildSequences(log, config.hyper.max_length);
  const auto seen = UserItemSets(log);
  const Retriever retriever(params, config.hyper);

  std::size_t served = 0;
  for (const auto& name : users) {
    std::int64_t raw = 0;
    const auto* end = name.data() + name.size();
    const auto [ptr, ec] = std::from_chars(name.data(), end, raw);
    const auto it = std::lower_bound(log.raw_user_ids.begin(),
                                     log.raw_user_ids.end(), raw);
    if (ec != std::errc() || ptr != end || it == log.raw_user_ids.end() ||
        *it != raw) {
      err << "warning: unknown user " << name << '\n';
      continue;
    }
    const auto user = static_cast<UserId>(it - log.raw_user_ids.begin());
    const auto rec = retriever.Recall(sequences[user], seen[user], k,
                                      config.rank_mode);
    if (rec.truncated) {
      err << "warning: user " << name << " has only " << rec.items.size()
          << " eligible items\n";
    }
    out << FormatRecommendation(rec, log) << '\n';
    ++served;
  }
  return served > 0 ? kExitOk : kExitPartial;
}

void WriteFile(const std::filesystem::path& path,
               const std::function<void(std::ostream&)>& body) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ConfigError("cannot write " + path.string());
  body(file);
  file.flush();
  if (!file) throw ConfigError("failed writing " + path.string());
}

int CmdSynth(const SyntheticSpec& spec, const std::filesystem::path& dir,
             std::ostream& out) {
  spec.Validate();
  const auto data = GenerateSynthetic(spec);
  std::filesystem::create_directories(dir);
  WriteFile(dir / "interactions.csv",
            [&](std::ostream& o) { WriteInteractions(o, data.log); });
  WriteFile(dir / "item_categories.tsv",
            [&](std::ostream& o) { WriteItemCategories(o, data); });
  WriteFile(dir / "user_categories.tsv",
            [&](std::ostream& o) { WriteUserCategories(o, data); });
  out << "wrote " << data.log.records.size() << " interactions for "
      << data.log.num_users << " users and " << data.log.num_items
      << " items to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

std::filesystem::path RunConfig::CheckpointPath() const {
  return checkpoint.empty() ? output_dir / "model.cmi" : checkpoint;
}

std::filesystem::path RunConfig::EpochLogPath() const {
  return output_dir / "epochs.tsv";
}

void RunConfig::Validate(bool require_interactions) const {
  hyper.Validate();
  if (span_days < 3) throw ConfigError("span_days must be >= 3");
  if (day_length < 1) throw ConfigError("day_length must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (require_interactions) {
    if (interactions.empty()) {
      throw ConfigError("no interactions file configured");
    }
    if (!std::filesystem::is_regular_file(interactions)) {
      throw ConfigError("interactions file not found: " +
                        interactions.string());
    }
  }
}

void ApplySetting(RunConfig& config, std::string_view key,
                  std::string_view value) {
  const auto it = Fields().find(key);
  if (it == Fields().end()) {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
  try {
    it->second.set(config, value);
  } catch (const ConfigError&) {
    throw ConfigError("bad value for " + std::string(key) + ": '" +
                      std::string(value) + "'");
  }
}

RunConfig ParseRunConfig(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const auto body = Trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected 'key = value'", number);
    }
    try {
      ApplySetting(base, Trim(std::string_view(body).substr(0, eq)),
                   Trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), number);
    }
  }
  return base;
}

RunConfig LoadRunConfig(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return ParseRunConfig(in, std::move(base));
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void WriteRunConfig(std::ostream& out, const RunConfig& config) {
  for (const auto& [key, field] : Fields()) {
    out << key << " = " << field.get(config) << '\n';
  }
}

void WriteEpochLogHeader(std::ostream& out) {
  out << "epoch\tmain\tcontrastive\torthogonality\ttotal\tvalidation_recall\n";
}

void WriteEpochLogRow(std::ostream& out, const EpochStats& s) {
  out << s.epoch << '\t' << FormatReal(s.main) << '\t'
      << FormatReal(s.contrastive) << '\t' << FormatReal(s.orthogonality)
      << '\t' << FormatReal(s.total) << '\t'
      << FormatReal(s.validation_recall) << '\n';
}

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"CMI multi-interest recommender", "cmi"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> settings;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  auto* threads_opt =
      app.add_option("--threads", threads, "Worker threads (1 is reproducible)");
  app.add_option("--config", config_path, "Flat key = value config file");
  app.add_option("--set", settings, "Override a config key (KEY=VALUE)")
      ->allow_extra_args(false);

  auto* train = app.add_subcommand("train", "Train and write a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint;
  std::string split_name = "test";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path");
  eval->add_option("--split", split_name, "test or validation")
      ->check(CLI::IsMember({"test", "validation"}));

  auto* recommend =
      app.add_subcommand("recommend", "Top-K items for listed users");
  std::vector<std::string> users;
  std::size_t k = 50;
  recommend->add_option("--checkpoint", checkpoint, "Checkpoint path");
  recommend->add_option("--users", users, "User ids")
      ->delimiter(',')
      ->required();
  recommend->add_option("-k,--k", k, "Items per user");

  auto* synth = app.add_subcommand("synth", "Generate a planted dataset");
  SyntheticSpec spec;
  std::string synth_dir;
  synth->add_option("--out", synth_dir, "Output directory")->required();
  synth->add_option("--users", spec.num_users);
  synth->add_option("--items", spec.num_items);
  synth->add_option("--categories", spec.num_planted_categories);
  synth->add_option("--interests-per-user", spec.interests_per_user);
  synth->add_option("--interactions-per-user", spec.interactions_per_user);
  synth->add_option("--noise-rate", spec.noise_rate);
  synth->add_option("--subtopics", spec.subtopics_per_category);
  synth->add_option("--affinity", spec.subtopic_affinity);
  synth->add_option("--span-days", spec.span_days);
  synth->add_option("--day-length", spec.day_length);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      if (seed_opt->count()) spec.seed = seed;
      return CmdSynth(spec, synth_dir, out);
    }
    RunConfig config;
    if (!config_path.empty()) config = LoadRunConfig(config_path);
    for (const auto& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      }
      ApplySetting(config, Trim(std::string_view(s).substr(0, eq)),
                   Trim(std::string_view(s).substr(eq + 1)));
    }
    if (seed_opt->count()) config.seed = seed;
    if (threads_opt->count()) config.threads = threads;
    if (!checkpoint.empty()) config.checkpoint = checkpoint;

    if (train->parsed()) return CmdTrain(config, out);
    if (eval->parsed()) return CmdEval(config, split_name, out);
    if (recommend->parsed()) {
      return CmdRecommend(config, users, k, out, err);
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cmi
