#pragma once

// Command-level workflow shared by the xlprompt tool and the acceptance runner:
// manifests, content-addressed artifacts, training runs and sweeps.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/inference/logit_dump.hpp"
#include "xlprompt/model/attach.hpp"
#include "xlprompt/model/backend.hpp"
#include "xlprompt/model/pretrain.hpp"
#include "xlprompt/protocol/dataset_io.hpp"
#include "xlprompt/protocol/evaluate.hpp"
#include "xlprompt/protocol/results.hpp"
#include "xlprompt/protocol/run_config.hpp"
#include "xlprompt/protocol/shots.hpp"
#include "xlprompt/protocol/trainer.hpp"
#include "xlprompt/synth/desk.hpp"

namespace xlprompt::cli {

namespace fs = std::filesystem;

inline constexpr const char* out_dir_env = "XLPROMPT_OUT_DIR";
inline constexpr const char* default_out_dir = "xlprompt-out";

// ---------------------------------------------------------------- hashing

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw environment_error("cannot read " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_digest(const fs::path& path) { return hex(fnv1a(read_bytes(path))); }

/// Digest of a JSON value; nlohmann::json keeps object keys sorted, so equal content hashes equally.
inline std::string json_digest(const nlohmann::json& j) { return hex(fnv1a(j.dump())); }

/// Write through a temporary file so readers never observe a half-written artifact.
inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  const fs::path tmp = path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw environment_error("cannot write " + tmp.string());
    }
    out << text;
    if (!out) {
      throw environment_error("failed writing " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------- manifest

/// Labeled data read from dataset files instead of the synthetic generator.
struct FileData {
  fs::path lexicon;
  fs::path train;
  fs::path dev;
  std::vector<std::pair<LanguageCode, fs::path>> test; ///< report column order
};

struct SweepSpec {
  std::vector<Method> methods{Method::ft, Method::up, Method::ours, Method::ours_no_mv, Method::ours_no_mixup};
  std::vector<std::size_t> ks{16};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t workers = 1;
  bool all_strategies = false; ///< one checkpoint per run, evaluated under all five strategies
};

/// Everything a command needs. Paths are absolute once loaded.
struct Manifest {
  synth::DeskConfig desk;
  std::optional<FileData> files;
  RunConfig run;
  std::optional<fs::path> backend; ///< checkpoint or descriptor; unset = pretrain the toy on the desk corpus
  SweepSpec sweep;
  fs::path out_dir;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return fs::absolute(path.is_absolute() ? path : base / path).lexically_normal();
}

inline fs::path default_out() {
  if (const char* env = std::getenv(out_dir_env); env != nullptr && *env != '\0') {
    return fs::absolute(env);
  }
  return fs::absolute(default_out_dir);
}

} // namespace detail

/// Parse a manifest document. Relative paths resolve against `base`.
///
///   { "desk": {...}, "data": {"lexicon", "train", "dev", "test": [{"language", "path"}, ...]},
///     "run": {...}, "sweep": {"methods", "k", "seeds", "workers", "all_strategies"},
///     "backend": "model.ckpt", "out_dir": "out" }
inline Manifest parse_manifest(const nlohmann::json& doc, const fs::path& base) {
  if (!doc.is_object()) {
    throw configuration_error("a manifest must be a JSON object");
  }
  static const std::vector<std::string> known{"desk", "data", "run", "sweep", "backend", "out_dir"};
  for (const auto& [key, value] : doc.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw configuration_error("unknown manifest key '" + key + "'");
    }
  }
  Manifest m;
  m.out_dir = detail::default_out();
  try {
    if (doc.contains("desk")) {
      m.desk = doc.at("desk").get<synth::DeskConfig>();
    }
    if (doc.contains("data")) {
      const auto& d = doc.at("data");
      FileData f;
      f.lexicon = detail::resolve(base, d.at("lexicon").get<std::string>());
      f.train = detail::resolve(base, d.at("train").get<std::string>());
      f.dev = detail::resolve(base, d.at("dev").get<std::string>());
      for (const auto& entry : d.at("test")) {
        f.test.emplace_back(entry.at("language").get<std::string>(),
                            detail::resolve(base, entry.at("path").get<std::string>()));
      }
      if (f.test.empty()) {
        throw configuration_error("manifest data section lists no test files");
      }
      m.files = std::move(f);
    }
    if (doc.contains("run")) {
      merge_json(doc.at("run"), m.run);
    }
    if (doc.contains("sweep")) {
      const auto& s = doc.at("sweep");
      if (s.contains("methods")) {
        m.sweep.methods.clear();
        for (const auto& name : s.at("methods")) {
          m.sweep.methods.push_back(parse_method(name.get<std::string>()));
        }
      }
      if (s.contains("k")) m.sweep.ks = s.at("k").get<std::vector<std::size_t>>();
      if (s.contains("seeds")) m.sweep.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
      if (s.contains("workers")) m.sweep.workers = s.at("workers").get<std::size_t>();
      if (s.contains("all_strategies")) m.sweep.all_strategies = s.at("all_strategies").get<bool>();
    }
    if (doc.contains("backend")) {
      m.backend = detail::resolve(base, doc.at("backend").get<std::string>());
    }
    if (doc.contains("out_dir")) {
      m.out_dir = detail::resolve(base, doc.at("out_dir").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw configuration_error(std::string("bad manifest: ") + e.what());
  }
  return m;
}

inline Manifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const input_error& e) {
    throw configuration_error(std::string("manifest: ") + e.what());
  }
  return parse_manifest(j, fs::absolute(path).parent_path());
}

/// Identity of the labeled data and lexicon a manifest points at.
inline nlohmann::json data_identity(const Manifest& m) {
  if (!m.files) {
    return {{"desk", m.desk}};
  }
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& [lang, path] : m.files->test) {
    tests.push_back({lang, file_digest(path)});
  }
  return {{"files",
           {{"lexicon", file_digest(m.files->lexicon)},
            {"train", file_digest(m.files->train)},
            {"dev", file_digest(m.files->dev)},
            {"test", tests}}}};
}

/// Digest of everything that determines a run except its seed.
inline std::string run_digest(const Manifest& m, const RunConfig& run, const std::string& extra = {}) {
  nlohmann::json rc = run;
  rc.erase("seed");
  nlohmann::json id{{"data", data_identity(m)}, {"run", rc}, {"extra", extra}};
  id["backend"] = m.backend ? file_digest(*m.backend) : std::string("desk-pretrained");
  return json_digest(id);
}

// ---------------------------------------------------------------- workbench

/// Data, lexicon and base backend resolved from a manifest; read-only once built.
class Workbench {
public:
  explicit Workbench(Manifest manifest, std::ostream* log = nullptr) : manifest_(std::move(manifest)), log_(log) {
    if (manifest_.files) {
      load_files();
    } else {
      desk_ = synth::make_desk_data(manifest_.desk);
      lexicon_ = desk_->lexicon;
      train_pool_ = desk_->source.train;
      dev_pool_ = desk_->source.dev;
      test_sets_ = desk_->test_sets;
    }
  }

  const Manifest& manifest() const noexcept { return manifest_; }
  const TaskLexicon& lexicon() const noexcept { return lexicon_; }
  const std::vector<LabeledPair>& train_pool() const noexcept { return train_pool_; }
  const std::vector<LabeledPair>& dev_pool() const noexcept { return dev_pool_; }
  const LanguageTestSets& test_sets() const noexcept { return test_sets_; }
  const std::optional<synth::DeskData>& desk() const noexcept { return desk_; }
  std::size_t num_classes() const { return lexicon_.verbalizers.num_classes(); }

  std::string desk_digest() const { return json_digest(nlohmann::json(manifest_.desk)); }

  fs::path pretrained_path() const { return manifest_.out_dir / "backends" / (desk_digest() + ".ckpt"); }

  /// Pretrain the toy on the desk corpus, or reuse the content-addressed checkpoint.
  fs::path ensure_pretrained() const {
    if (!desk_) {
      throw configuration_error("pretraining needs a synthetic desk setup; this manifest reads dataset files");
    }
    const fs::path path = pretrained_path();
    if (fs::exists(path)) {
      return path;
    }
    say("pretraining toy backend (" + std::to_string(manifest_.desk.pretrain.steps) + " steps)");
    PretrainReport report;
    ToyBackend backend = synth::make_pretrained_backend(*desk_, &report);
    const auto eval = evaluate_masked_lm(backend, desk_->corpus, manifest_.desk.pretrain.mask_probability, 1);
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".partial";
    save_checkpoint(backend, tmp);
    fs::rename(tmp, path);
    nlohmann::ordered_json summary;
    summary["desk"] = nlohmann::json(manifest_.desk);
    summary["step_losses"] = report.step_losses;
    summary["masked_lm_accuracy"] = eval.accuracy;
    summary["masked_lm_loss"] = eval.loss;
    write_text_atomic(path.parent_path() / (desk_digest() + ".pretrain.json"), summary.dump(2) + "\n");
    return path;
  }

  /// The backend every run starts from.
  ToyBackend base_backend() const {
    if (manifest_.backend) {
      return attach_external_backend(*manifest_.backend, &lexicon_.verbalizers);
    }
    ToyBackend b = load_checkpoint(ensure_pretrained());
    validate_against(lexicon_.verbalizers, b.tokenizer());
    return b;
  }

  void say(const std::string& msg) const {
    if (log_ != nullptr) {
      std::lock_guard lock(log_mutex_);
      *log_ << msg << '\n';
    }
  }

private:
  void load_files() {
    const auto& f = *manifest_.files;
    lexicon_ = load_task_lexicon(f.lexicon);
    train_pool_ = read_dataset(f.train);
    dev_pool_ = read_dataset(f.dev);
    for (const auto& [lang, path] : f.test) {
      test_sets_.emplace_back(lang, read_dataset(path));
    }
  }

  Manifest manifest_;
  std::ostream* log_;
  mutable std::mutex log_mutex_;
  std::optional<synth::DeskData> desk_;
  TaskLexicon lexicon_;
  std::vector<LabeledPair> train_pool_;
  std::vector<LabeledPair> dev_pool_;
  LanguageTestSets test_sets_;
};

// ---------------------------------------------------------------- data export

/// Write the synthetic setup as plain files under out/data/<digest>/.
inline fs::path export_desk_data(const Workbench& wb) {
  if (!wb.desk()) {
    throw configuration_error("gen-data needs a synthetic desk setup; this manifest reads dataset files");
  }
  const auto& data = *wb.desk();
  const fs::path dir = wb.manifest().out_dir / "data" / wb.desk_digest();
  fs::create_directories(dir);
  write_dataset(data.source.train, dir / "train.jsonl");
  write_dataset(data.source.dev, dir / "dev.jsonl");
  nlohmann::ordered_json tests = nlohmann::ordered_json::array();
  for (const auto& [lang, pairs] : data.test_sets) {
    const std::string name = "test-" + lang + ".jsonl";
    write_dataset(pairs, dir / name);
    tests.push_back({{"language", lang}, {"path", name}});
  }
  write_text_atomic(dir / "lexicon.json", to_json(data.lexicon).dump(2) + "\n");
  save_vocabulary_file(data.vocabulary, dir / "vocab.txt");
  std::ostringstream corpus;
  for (const auto& line : data.corpus.lines) {
    corpus << line.language << '\t' << line.group << '\t' << join_tokens(line.tokens) << '\n';
  }
  write_text_atomic(dir / "corpus.tsv", corpus.str());
  BackendConfig bc = data.config.backend;
  bc.vocabulary_size = data.vocabulary.size();
  bc.num_classes = data.config.task.num_classes;
  nlohmann::ordered_json descriptor;
  descriptor["kind"] = "toy";
  descriptor["vocabulary"] = "vocab.txt";
  descriptor["config"] = nlohmann::json(bc);
  write_text_atomic(dir / "backend.json", descriptor.dump(2) + "\n");
  nlohmann::ordered_json data_section;
  data_section["lexicon"] = "lexicon.json";
  data_section["train"] = "train.jsonl";
  data_section["dev"] = "dev.jsonl";
  data_section["test"] = tests;
  nlohmann::ordered_json manifest;
  manifest["data"] = data_section;
  manifest["desk_config"] = nlohmann::json(data.config);
  write_text_atomic(dir / "data.json", manifest.dump(2) + "\n");
  return dir;
}

// ---------------------------------------------------------------- runs

inline std::string strategy_row_name(Method m, StrategyId s) {
  return std::string(to_string(m)) + "/S" + std::to_string(to_int(s));
}

/// Content-addressed directory of one run: runs/<digest>-s<seed>.
inline fs::path run_directory(const Manifest& m, const std::string& digest, std::uint64_t seed) {
  return m.out_dir / "runs" / (digest + "-s" + std::to_string(seed));
}

struct RunOutcome {
  std::vector<ResultRow> rows;
  std::vector<fs::path> row_files;
  fs::path directory;
  std::optional<exit_code> failure; ///< category of the error that stopped the run
};

inline nlohmann::ordered_json step_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["real_loss"] = r.loss.real_loss;
  j["mixup_loss"] = r.loss.mixup_loss;
  j["total"] = r.loss.total;
  j["lambdas"] = r.loss.lambdas;
  return j;
}

/// Train one (method, K, seed) configuration and evaluate it on every test language.
/// With `all_strategies` the selected checkpoint is scored under each of the five strategies.
/// Failures become failure rows; the error is not rethrown.
inline RunOutcome execute_run(const Workbench& wb, const ToyBackend& base, const RunConfig& run,
                              bool all_strategies = false) {
  const Manifest& m = wb.manifest();
  const std::string digest = run_digest(m, run, all_strategies ? "all-strategies" : "");
  RunOutcome outcome;
  outcome.directory = run_directory(m, digest, run.seed);

  std::vector<StrategyId> strategies{run.strategy};
  if (all_strategies) {
    strategies.assign(xlprompt::all_strategies.begin(), xlprompt::all_strategies.end());
  }
  auto name_for = [&](StrategyId s) {
    return all_strategies ? strategy_row_name(run.method, s) : std::string(to_string(run.method));
  };
  auto blank_row = [&](StrategyId s) {
    ResultRow row;
    row.name = name_for(s);
    row.method = std::string(to_string(run.method));
    row.k = run.k;
    row.seed = run.seed;
    row.strategy = to_int(s);
    row.manifest_hash = digest;
    return row;
  };

  try {
    fs::create_directories(outcome.directory);
    nlohmann::ordered_json config;
    config["run"] = nlohmann::json(run);
    config["data"] = data_identity(m);
    config["all_strategies"] = all_strategies;
    write_text_atomic(outcome.directory / "config.json", config.dump(2) + "\n");

    const auto shots = sample_shots(wb.train_pool(), wb.dev_pool(), run.k, wb.num_classes(), run.seed);
    std::ostringstream log;
    auto result = train_run(run, shots, base, wb.lexicon(),
                            [&](const StepRecord& r) { log << step_json(r).dump() << '\n'; });
    write_text_atomic(outcome.directory / "train_log.jsonl", log.str());
    save_checkpoint(result.checkpoint, outcome.directory / "checkpoint.ckpt");

    for (StrategyId s : strategies) {
      ResultRow row = blank_row(s);
      row.accuracies = evaluate(result.checkpoint, wb.test_sets(), run.method, s, wb.lexicon(), run.max_length);
      row.dev_curve = result.dev_curve;
      row.best_epoch = result.best_epoch;
      outcome.rows.push_back(std::move(row));
    }
  } catch (const error& e) {
    outcome.failure = e.code();
    outcome.rows.clear();
    for (StrategyId s : strategies) {
      ResultRow row = blank_row(s);
      row.failure = e.what();
      outcome.rows.push_back(std::move(row));
    }
  }

  for (const auto& row : outcome.rows) {
    const fs::path file = outcome.directory /
                          (all_strategies ? "row-S" + std::to_string(row.strategy) + ".json" : std::string("row.json"));
    write_text_atomic(file, to_json(row).dump(2) + "\n");
    outcome.row_files.push_back(file);
  }
  return outcome;
}

// ---------------------------------------------------------------- sweep

struct SweepOutcome {
  std::vector<ResultRow> rows; ///< grid order: method, K, seed (then strategy)
  fs::path directory;
  fs::path report_tsv;
  std::string report_pretty;
  std::size_t failed_runs = 0;
};

/// Run the method x K x seed grid over a worker pool. Rows come back in grid order
/// regardless of which worker finished first.
inline SweepOutcome run_sweep(const Workbench& wb) {
  const Manifest& m = wb.manifest();
  const SweepSpec& spec = m.sweep;
  if (spec.methods.empty() || spec.ks.empty() || spec.seeds.empty()) {
    throw configuration_error("sweep needs at least one method, K and seed");
  }
  std::vector<RunConfig> grid;
  for (Method method : spec.methods) {
    for (std::size_t k : spec.ks) {
      for (std::uint64_t seed : spec.seeds) {
        RunConfig rc = m.run;
        rc.method = method;
        rc.k = k;
        rc.seed = seed;
        rc.validate();
        grid.push_back(rc);
      }
    }
  }

  const ToyBackend base = wb.base_backend();
  std::vector<RunOutcome> outcomes(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      const auto& rc = grid[i];
      outcomes[i] = execute_run(wb, base, rc, spec.all_strategies);
      const auto& first = outcomes[i].rows.front();
      wb.say(std::string(to_string(rc.method)) + " K=" + std::to_string(rc.k) + " seed=" + std::to_string(rc.seed) +
             (first.ok() ? " done" : " FAILED: " + *first.failure));
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(spec.workers, grid.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto& t : pool) {
    t.join();
  }

  SweepOutcome out;
  std::string ids;
  for (const auto& o : outcomes) {
    ids += o.directory.filename().string() + "\n";
    if (!o.rows.front().ok()) {
      ++out.failed_runs;
    }
    out.rows.insert(out.rows.end(), o.rows.begin(), o.rows.end());
  }
  out.directory = m.out_dir / "sweeps" / hex(fnv1a(ids));
  fs::create_directories(out.directory);
  write_text_atomic(out.directory / "runs.txt", ids);
  if (out.failed_runs == grid.size()) {
    return out; // nothing to tabulate
  }
  const auto table = make_report(out.rows);
  out.report_tsv = out.directory / "report.tsv";
  write_text_atomic(out.report_tsv, to_tsv(table));
  out.report_pretty = to_pretty(table);
  write_text_atomic(out.directory / "report.txt", out.report_pretty);
  return out;
}

// ---------------------------------------------------------------- report

/// Row files named directly or found (recursively) under directories, in a stable order.
inline std::vector<ResultRow> collect_rows(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::recursive_directory_iterator(in)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("row") && entry.path().extension() == ".json") {
          files.push_back(entry.path());
        }
      }
    } else if (fs::exists(in)) {
      files.push_back(in);
    } else {
      throw environment_error("no such row file or directory: " + in.string());
    }
  }
  std::vector<ResultRow> rows;
  for (const auto& f : files) {
    rows.push_back(read_row(f));
  }
  auto method_rank = [](const ResultRow& r) {
    for (std::size_t i = 0; i < all_methods.size(); ++i) {
      if (to_string(all_methods[i]) == r.method) {
        return i;
      }
    }
    return all_methods.size();
  };
  std::sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) {
    return std::make_tuple(method_rank(a), a.name, a.k, a.seed) < std::make_tuple(method_rank(b), b.name, b.k, b.seed);
  });
  return rows;
}

} // namespace xlprompt::cli
