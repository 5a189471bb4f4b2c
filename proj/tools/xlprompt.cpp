// xlprompt: data generation, pretraining, training, evaluation, strategy
// comparison, sweeps and reports.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "xlprompt/cli/workflow.hpp"

namespace fs = std::filesystem;
using namespace xlprompt;
using namespace xlprompt::cli;

namespace {

/// Flags that mirror RunConfig and manifest fields. Unset flags leave the manifest value.
struct Overrides {
  std::string manifest;
  std::string out_dir;
  std::string backend;
  std::vector<std::string> methods;
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> seeds;
  std::optional<double> alpha;
  std::optional<int> strategy;
  std::vector<std::string> languages;
  std::optional<double> mixup_weight;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> grad_accum;
  std::optional<std::size_t> max_length;
  std::optional<std::size_t> workers;
  bool all_strategies = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--manifest", o.manifest, "JSON manifest; flags override its values");
  cmd->add_option("--out-dir", o.out_dir, std::string("artifact root (default $") + out_dir_env + " or ./" +
                                              default_out_dir + ")");
}

void add_run_flags(CLI::App* cmd, Overrides& o, bool lists) {
  add_common(cmd, o);
  cmd->add_option("--backend", o.backend, "checkpoint or backend descriptor (default: pretrained desk toy)");
  auto* method = cmd->add_option("--method", o.methods, "FT, UP, OURS, OURS_NO_MV, OURS_NO_MIXUP or a pilot variant");
  auto* k = cmd->add_option("--k", o.ks, "shots per class");
  auto* seed = cmd->add_option("--seed", o.seeds, "run seed");
  if (lists) {
    method->delimiter(',');
    k->delimiter(',');
    seed->delimiter(',');
  } else {
    method->expected(1);
    k->expected(1);
    seed->expected(1);
  }
  cmd->add_option("--alpha", o.alpha, "Beta(alpha, alpha) parameter for mixup");
  cmd->add_option("--strategy", o.strategy, "inference strategy 1..5")->check(CLI::Range(1, 5));
  cmd->add_option("--languages", o.languages, "multilingual verbalizer languages, comma separated")->delimiter(',');
  cmd->add_option("--mixup-weight", o.mixup_weight, "weight of the mixup loss");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--grad-accum", o.grad_accum, "micro-batches per optimizer step");
  cmd->add_option("--max-length", o.max_length, "prompt length limit in tokens");
}

Manifest build_manifest(const Overrides& o) {
  Manifest m = o.manifest.empty() ? parse_manifest(nlohmann::json::object(), fs::current_path())
                                  : load_manifest(o.manifest);
  if (!o.out_dir.empty()) m.out_dir = fs::absolute(o.out_dir);
  if (!o.backend.empty()) m.backend = fs::absolute(o.backend);
  RunConfig& r = m.run;
  if (o.methods.size() == 1) r.method = parse_method(o.methods.front());
  if (o.ks.size() == 1) r.k = o.ks.front();
  if (o.seeds.size() == 1) r.seed = o.seeds.front();
  if (o.alpha) r.alpha = *o.alpha;
  if (o.strategy) r.strategy = strategy_from_int(*o.strategy);
  if (!o.languages.empty()) r.languages = o.languages;
  if (o.mixup_weight) r.mixup_weight = *o.mixup_weight;
  if (o.epochs) r.epochs = *o.epochs;
  if (o.lr) r.learning_rate = *o.lr;
  if (o.batch_size) r.batch_size = *o.batch_size;
  if (o.grad_accum) r.grad_accumulation = *o.grad_accum;
  if (o.max_length) r.max_length = *o.max_length;
  if (!o.methods.empty()) {
    m.sweep.methods.clear();
    for (const auto& name : o.methods) m.sweep.methods.push_back(parse_method(name));
  }
  if (!o.ks.empty()) m.sweep.ks = o.ks;
  if (!o.seeds.empty()) m.sweep.seeds = o.seeds;
  if (o.workers) m.sweep.workers = *o.workers;
  if (o.all_strategies) m.sweep.all_strategies = true;
  r.validate();
  return m;
}

void print_accuracies(const ResultRow& row) {
  std::cout << row.name << " K=" << row.k << " seed=" << row.seed << " best_epoch=" << row.best_epoch;
  for (const auto& a : row.accuracies) {
    std::cout << ' ' << a.language << '=' << a.accuracy;
  }
  std::cout << " avg=" << row.average() << '\n';
}

int cmd_gen_data(const Overrides& o) {
  const Workbench wb(build_manifest(o));
  std::cout << export_desk_data(wb).string() << '\n';
  return 0;
}

int cmd_pretrain(const Overrides& o) {
  const Workbench wb(build_manifest(o), &std::cerr);
  const fs::path ckpt = wb.ensure_pretrained();
  const auto summary = read_json_file(ckpt.parent_path() / (wb.desk_digest() + ".pretrain.json"));
  std::cout << ckpt.string() << '\n'
            << "masked-token accuracy " << summary.at("masked_lm_accuracy").get<double>() << '\n';
  return 0;
}

int cmd_train(const Overrides& o) {
  const Workbench wb(build_manifest(o), &std::cerr);
  const auto outcome = execute_run(wb, wb.base_backend(), wb.manifest().run, wb.manifest().sweep.all_strategies);
  const auto& row = outcome.rows.front();
  if (!row.ok()) {
    std::cerr << "error: " << *row.failure << '\n' << outcome.row_files.front().string() << '\n';
    return static_cast<int>(*outcome.failure);
  }
  print_accuracies(row);
  std::cout << outcome.row_files.front().string() << '\n';
  return 0;
}

int cmd_eval(const Overrides& o, const std::string& dump, const std::string& dump_mode) {
  const Manifest m = build_manifest(o);
  if (!m.backend) {
    throw configuration_error("eval needs --backend (a trained checkpoint)");
  }
  const Workbench wb(m, &std::cerr);
  const ToyBackend backend = wb.base_backend();
  const RunConfig& rc = m.run;
  const DumpMode mode = dump_mode == "restricted" ? DumpMode::restricted : DumpMode::full;
  std::vector<LogitRecord> records;
  ResultRow row;
  row.name = std::string(to_string(rc.method));
  row.method = row.name;
  row.k = rc.k;
  row.seed = rc.seed;
  row.strategy = to_int(rc.strategy);
  row.manifest_hash = run_digest(m, rc, "eval");
  row.accuracies = evaluate(backend, wb.test_sets(), rc.method, rc.strategy, wb.lexicon(), rc.max_length,
                            dump.empty() ? nullptr : &records, mode);
  const fs::path dir = m.out_dir / "evals" / (row.manifest_hash + "-s" + std::to_string(rc.seed));
  write_text_atomic(dir / "row.json", to_json(row).dump(2) + "\n");
  if (!dump.empty()) {
    write_logit_dump(records, dump);
  }
  print_accuracies(row);
  std::cout << (dir / "row.json").string() << '\n';
  return 0;
}

int cmd_compare(const Overrides& o, const std::string& dump) {
  const auto records = read_logit_dump(dump);
  std::optional<VerbalizerIds> ids;
  const bool needs_ids = std::any_of(records.begin(), records.end(), [](const auto& r) { return !r.label_token_probabilities; });
  if (needs_ids) {
    const Manifest m = build_manifest(o);
    if (!m.backend) {
      throw configuration_error("full-logit dumps need --backend to map verbalizer tokens");
    }
    const Workbench wb(m);
    ids.emplace(wb.lexicon().verbalizers, wb.base_backend().tokenizer());
  }
  const auto cmp = compare_strategies(records, ids ? &*ids : nullptr);
  nlohmann::ordered_json j;
  j["records"] = cmp.records;
  j["accuracy"] = cmp.accuracy;
  j["agreement"] = cmp.agreement;
  std::cout << "strategy\taccuracy";
  for (int s = 1; s <= 5; ++s) std::cout << "\tagree_S" << s;
  std::cout << '\n';
  for (std::size_t a = 0; a < 5; ++a) {
    std::cout << 'S' << a + 1 << '\t' << cmp.accuracy[a];
    for (std::size_t b = 0; b < 5; ++b) std::cout << '\t' << cmp.agreement[a][b];
    std::cout << '\n';
  }
  const fs::path out_root = o.out_dir.empty() ? build_manifest(o).out_dir : fs::absolute(o.out_dir);
  const fs::path out = out_root / "compare" / (file_digest(dump) + ".json");
  write_text_atomic(out, j.dump(2) + "\n");
  std::cerr << out.string() << '\n';
  return 0;
}

int cmd_sweep(const Overrides& o) {
  const Workbench wb(build_manifest(o), &std::cerr);
  const auto out = run_sweep(wb);
  if (out.failed_runs > 0) {
    std::cerr << out.failed_runs << " run(s) failed; their cells are marked missing\n";
  }
  if (out.report_tsv.empty()) {
    std::cerr << "every run failed\n";
    return static_cast<int>(exit_code::generation);
  }
  std::cout << out.report_pretty << out.report_tsv.string() << '\n';
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, const std::string& output) {
  std::vector<fs::path> paths(inputs.begin(), inputs.end());
  const auto table = make_report(collect_rows(paths));
  const std::string tsv = to_tsv(table);
  if (!output.empty()) {
    write_text_atomic(output, tsv);
  }
  std::cout << (format == "pretty" ? to_pretty(table) : tsv);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual prompt-based few-shot learning toolkit"};
  app.require_subcommand(1);
  Overrides o;
  std::string dump;
  std::string dump_mode = "full";
  std::vector<std::string> report_inputs;
  std::string report_format = "tsv";
  std::string report_output;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic task, test sets, lexicon and corpus");
  add_common(gen, o);
  auto* pre = app.add_subcommand("pretrain", "pretrain the toy backend on the synthetic corpus");
  add_common(pre, o);
  auto* train = app.add_subcommand("train", "train one run and evaluate it on every test language");
  add_run_flags(train, o, false);
  train->add_flag("--all-strategies", o.all_strategies, "evaluate the checkpoint under all five strategies");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, optionally dumping mask-slot logits");
  add_run_flags(eval, o, false);
  eval->add_option("--dump", dump, "write a logit dump here");
  eval->add_option("--dump-mode", dump_mode, "full logits or the restricted label-token block")
      ->check(CLI::IsMember({"full", "restricted"}));
  auto* cmp = app.add_subcommand("compare-strategies", "score a logit dump under all five strategies");
  add_common(cmp, o);
  cmp->add_option("--dump", dump, "logit dump from eval")->required();
  cmp->add_option("--backend", o.backend, "backend used to map verbalizer tokens (full dumps)");
  auto* sweep = app.add_subcommand("sweep", "run the method x K x seed grid and tabulate it");
  add_run_flags(sweep, o, true);
  sweep->add_option("--workers", o.workers, "concurrent runs");
  sweep->add_flag("--all-strategies", o.all_strategies, "evaluate each checkpoint under all five strategies");
  auto* report = app.add_subcommand("report", "aggregate row files into a mean±std table");
  report->add_option("inputs", report_inputs, "row files or directories")->required();
  report->add_option("--format", report_format)->check(CLI::IsMember({"tsv", "pretty"}));
  report->add_option("--output", report_output, "also write the tab-separated table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(exit_code::configuration);
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*pre) return cmd_pretrain(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o, dump, dump_mode);
    if (*cmp) return cmd_compare(o, dump);
    if (*sweep) return cmd_sweep(o);
    if (*report) return cmd_report(report_inputs, report_format, report_output);
  } catch (const xlprompt::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code::input);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code::environment);
  }
  return 1;
}
