// natreg: corpus generation, training, distillation, decoding, evaluation,
// and latency benchmarking from the command line.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "manifest.hpp"
#include "natreg/checkpoint.hpp"
#include "natreg/errors.hpp"
#include "natreg/inference.hpp"
#include "natreg/metrics.hpp"
#include "natreg/training.hpp"

namespace fs = std::filesystem;
using namespace natreg;
using natreg::cli::RunManifest;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for flag combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

fs::path suffixed(const fs::path& p, const char* suffix) { return with_suffix(p, suffix); }

fs::path manifest_path(const std::string& flag, const fs::path& out) {
  return flag.empty() ? suffixed(out, ".manifest.json") : fs::path(flag);
}

std::vector<std::string> read_raw_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// Runs a stage body, finalizing the manifest either way.
template <class Body>
int run_stage(RunManifest& manifest, Body&& body) {
  manifest.begin();
  try {
    body();
  } catch (const std::exception& e) {
    manifest.finish(false, e.what());
    throw;
  }
  manifest.finish(true);
  return kExitOk;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string task = "copy";
  std::size_t vocab_size = 20;
  std::size_t pairs = 1000;
  std::size_t len_min = 3;
  std::size_t len_max = 12;
  std::uint64_t seed = 1;
  bool allow_adjacent_repeats = false;
  std::string out;
  std::string manifest;
};

int cmd_gen(const GenArgs& a, const std::vector<std::string>& argv) {
  if (a.len_min < 1 || a.len_min > a.len_max) {
    throw UsageError("--len-min must be at least 1 and not exceed --len-max");
  }
  if (a.vocab_size < 2) throw UsageError("--vocab-size must be at least 2");
  if (a.len_max + 2 > ModelConfig{}.max_len) {
    throw UsageError("--len-max must leave room for BOS/EOS within " + std::to_string(ModelConfig{}.max_len) +
                     " positions");
  }
  SyntheticSpec spec;
  try {
    spec.task = parse_task(a.task);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  spec.vocab_size = a.vocab_size;
  spec.n_pairs = a.pairs;
  spec.min_len = a.len_min;
  spec.max_len = a.len_max;
  spec.seed = a.seed;
  spec.distinct_neighbors = !a.allow_adjacent_repeats;

  const fs::path out = a.out;
  RunManifest manifest(manifest_path(a.manifest, out), "gen", argv);
  manifest.set_seed(a.seed);
  manifest.set_config("task", a.task);
  manifest.set_config("vocab_size", std::to_string(a.vocab_size));
  manifest.set_config("pairs", std::to_string(a.pairs));
  manifest.set_config("len_min", std::to_string(a.len_min));
  manifest.set_config("len_max", std::to_string(a.len_max));
  manifest.set_config("distinct_neighbors", spec.distinct_neighbors ? "true" : "false");
  for (const char* s : {".src", ".tgt", ".provenance", ".vocab"}) manifest.add_artifact(s + 1, suffixed(out, s));

  return run_stage(manifest, [&] {
    const auto vocab = Vocabulary::synthetic(spec.vocab_size);
    const auto corpus = gen_synthetic_corpus(spec);
    write_corpus(out, corpus, vocab);
    vocab.save(suffixed(out, ".vocab"));
    if (corpus.empty()) std::cerr << "warning: pairs=0, wrote empty corpus files\n";
    std::cout << "pairs=" << corpus.size() << "\n";
  });
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string role;
  std::string corpus;
  std::string dev_corpus;
  std::string vocab;
  std::string config;
  std::string mode = "both";
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
  std::vector<std::string> overrides;
  bool allow_raw = false;
  bool sever = false;
  std::string out;
  std::string manifest;
};

TrainConfig assemble_config(const TrainArgs& a, std::size_t vocab_size) {
  TrainConfig c;
  if (!a.config.empty()) c = load_train_config(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    if (!apply_train_key(c, kv.substr(0, eq), kv.substr(eq + 1))) {
      throw UsageError("unknown config key '" + kv.substr(0, eq) + "'");
    }
  }
  if (a.role == "nat") {
    const bool sever = c.mode.sever_rec_embedding || a.sever;
    c.mode = parse_loss_mode(a.mode);
    c.mode.sever_rec_embedding = sever;
  } else {
    c.mode = LossMode::base();
  }
  if (a.alpha) c.weights.alpha = static_cast<real>(*a.alpha);
  if (a.beta) c.weights.beta = static_cast<real>(*a.beta);
  if (a.seed) c.seed = *a.seed;
  if (a.max_steps) c.max_steps = *a.max_steps;
  c.model.src_vocab_size = c.model.tgt_vocab_size = vocab_size;
  c.validate();
  c.model.validate();
  return c;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  if (a.role != "teacher" && a.role != "nat") throw UsageError("--role must be teacher or nat");
  try {
    parse_loss_mode(a.mode);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const fs::path corpus_prefix = a.corpus;
  const fs::path vocab_path = a.vocab.empty() ? suffixed(corpus_prefix, ".vocab") : fs::path(a.vocab);
  const auto vocab = Vocabulary::load(vocab_path);
  const TrainConfig config = assemble_config(a, vocab.size());
  const auto corpus = read_corpus(corpus_prefix, vocab);
  if (a.role == "nat" && corpus.provenance != Provenance::Distilled && !a.allow_raw) {
    throw UsageError("corpus " + corpus_prefix.string() +
                     " is not teacher-distilled; run `distill` first or pass --allow-raw");
  }

  CorpusSplit split;
  if (!a.dev_corpus.empty()) {
    split.train = corpus;
    split.dev = read_corpus(a.dev_corpus, vocab);
  } else {
    split = split_dev(corpus, config.dev_fraction, config.seed);
  }

  const fs::path out = a.out;
  RunManifest manifest(manifest_path(a.manifest, out), "train", argv);
  manifest.set_seed(config.seed);
  manifest.set_config("role", a.role);
  manifest.set_config("corpus", corpus_prefix.string());
  manifest.set_config("provenance", std::string(provenance_name(corpus.provenance)));
  manifest.set_config("vocab", vocab_path.string());
  manifest.set_config("train_config", format_train_config(config));
  manifest.add_artifact("checkpoint", out);
  manifest.add_artifact("checkpoint_config", suffixed(out, ".cfg"));
  if (a.role == "nat") {
    manifest.add_artifact("backward_checkpoint", suffixed(out, ".backward"));
  }

  TrainCallbacks cb;
  cb.on_step = [](const StepLog& s) {
    std::cout << "step=" << s.step << " l_ce=" << fmt6(s.loss.l_ce) << " l_sim=" << fmt6(s.loss.l_sim)
              << " l_rec=" << fmt6(s.loss.l_rec) << " total=" << fmt6(s.loss.total) << " lr=" << fmt6(s.lr)
              << "\n";
  };
  cb.on_eval = [](const EvalLog& e) {
    std::cout << "eval step=" << e.step << " dev_loss=" << fmt6(e.dev_loss)
              << " best=" << (e.improved ? "yes" : "no") << "\n";
  };

  return run_stage(manifest, [&] {
    std::cout << "train role=" << a.role << " mode=" << loss_mode_name(config.mode)
              << " alpha=" << fmt6(config.weights.alpha) << " beta=" << fmt6(config.weights.beta)
              << " pairs=" << split.train.size() << " dev=" << split.dev.size() << "\n";
    if (a.role == "teacher") {
      auto r = train_teacher(split.train, split.dev, config, cb, out);
      save_model(r.model, out);
      std::cout << "done best_step=" << r.best_step << " best_dev_loss=" << fmt6(r.best_dev_loss)
                << " dev_accuracy=" << fmt6(next_token_accuracy(r.model, split.dev)) << "\n";
    } else {
      auto r = train_nat(split.train, split.dev, config, a.allow_raw, cb, out);
      save_model(r.nat, out);
      save_model(r.backward, suffixed(out, ".backward"));
      std::cout << "done best_step=" << r.best_step << " best_dev_l_ce=" << fmt6(r.best_dev_ce) << "\n";
    }
  });
}

// ---------------------------------------------------------------- distill

struct DistillArgs {
  std::string teacher;
  std::string corpus;
  std::string vocab;
  std::size_t beam = 4;
  std::string out;
  std::string manifest;
};

int cmd_distill(const DistillArgs& a, const std::vector<std::string>& argv) {
  if (a.beam < 1) throw UsageError("--beam must be at least 1");
  const fs::path corpus_prefix = a.corpus;
  const fs::path vocab_path = a.vocab.empty() ? suffixed(corpus_prefix, ".vocab") : fs::path(a.vocab);
  const fs::path out = a.out;
  RunManifest manifest(manifest_path(a.manifest, out), "distill", argv);
  manifest.set_config("teacher", a.teacher);
  manifest.set_config("corpus", corpus_prefix.string());
  manifest.set_config("beam", std::to_string(a.beam));
  manifest.set_config("provenance", "distilled");
  for (const char* s : {".src", ".tgt", ".provenance", ".vocab"}) manifest.add_artifact(s + 1, suffixed(out, s));

  return run_stage(manifest, [&] {
    const auto vocab = Vocabulary::load(vocab_path);
    const auto teacher = load_model(a.teacher);
    const auto corpus = read_corpus(corpus_prefix, vocab);
    std::size_t dropped = 0;
    const auto distilled = distill(teacher, corpus, a.beam, [&](std::size_t i) {
      ++dropped;
      std::cout << "dropped line=" << i + 1 << " reason=empty_output\n";
    });
    write_corpus(out, distilled, vocab);
    vocab.save(suffixed(out, ".vocab"));
    std::cout << "pairs_in=" << corpus.size() << " pairs_out=" << distilled.size() << " dropped=" << dropped
              << " beam=" << a.beam << "\n";
  });
}

// ---------------------------------------------------------------- translate

struct TranslateArgs {
  std::string nat;
  std::string teacher;
  std::string input;
  std::string vocab;
  int delta_t = 0;
  int b = 4;
  bool no_rescore = false;
  bool dedup = false;
  bool unnormalized = false;
  std::string out;
  std::string manifest;
};

int cmd_translate(const TranslateArgs& a, const std::vector<std::string>& argv) {
  if (a.b < 0) throw UsageError("--b must be non-negative");
  if (a.b > 0 && a.no_rescore) throw UsageError("--b > 0 needs teacher rescoring to select a candidate");
  if (a.b > 0 && a.teacher.empty()) throw UsageError("--b > 0 requires --teacher");
  const fs::path out = a.out;
  RunManifest manifest(manifest_path(a.manifest, out), "translate", argv);
  manifest.set_config("nat", a.nat);
  manifest.set_config("teacher", a.b > 0 ? a.teacher : "");
  manifest.set_config("input", a.input);
  manifest.set_config("delta_t", std::to_string(a.delta_t));
  manifest.set_config("b", std::to_string(a.b));
  manifest.set_config("dedup", a.dedup ? "true" : "false");
  manifest.set_config("normalized_rescoring", a.unnormalized ? "false" : "true");
  manifest.add_artifact("translations", out);

  return run_stage(manifest, [&] {
    const auto vocab = Vocabulary::load(a.vocab);
    const auto nat = load_model(a.nat);
    std::optional<Transformer> teacher;
    if (a.b > 0) teacher = load_model(a.teacher);  // b == 0 never touches the teacher
    const LengthRule rule{a.delta_t, a.b};
    const auto lines = read_raw_lines(a.input);
    std::ofstream os(out);
    if (!os) throw FormatError("cannot write " + out.string());
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto src = tokenize(lines[i], vocab);
      if (src.empty()) {
        std::cout << "sentence=" << i + 1 << " candidates=0 note=empty_source\n";
        os << '\n';
        continue;
      }
      const auto r = translate_npd(src, rule, nat, teacher ? &*teacher : nullptr, !a.unnormalized);
      std::vector<TokenId> tokens = r.best.tokens;
      std::size_t ops = 0;
      if (a.dedup) {
        auto d = dedup_postprocess(tokens);
        tokens = std::move(d.tokens);
        ops = d.n_ops;
      }
      std::cout << "sentence=" << i + 1 << " candidates=" << r.all.size() << " length=" << r.best.length;
      if (a.dedup) std::cout << " dedup_ops=" << ops;
      std::cout << "\n";
      os << detokenize(tokens, vocab) << '\n';
    }
  });
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string hyp;
  std::string ref;
  std::string src;
  std::string task;
  bool strict = false;
  bool lines = false;
};

int cmd_eval(const EvalArgs& a) {
  if (a.src.empty() != a.task.empty()) throw UsageError("--src and --task must be given together");
  std::optional<SyntheticTask> task;
  if (!a.task.empty()) {
    try {
      task = parse_task(a.task);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  const auto hyp_lines = read_raw_lines(a.hyp);
  const auto ref_lines = read_raw_lines(a.ref);
  if (hyp_lines.size() != ref_lines.size()) {
    throw ContractError("misaligned files: " + std::to_string(hyp_lines.size()) + " hypotheses vs " +
                        std::to_string(ref_lines.size()) + " references");
  }
  // Token strings are interned on the fly; BLEU only compares identities.
  Vocabulary vocab;
  auto intern = [&](const std::vector<std::string>& lines) {
    std::vector<Sentence> out;
    for (const auto& l : lines) {
      Sentence s;
      std::istringstream in(l);
      std::string tok;
      while (in >> tok) s.push_back(vocab.add(tok));
      out.push_back(std::move(s));
    }
    return out;
  };
  const auto hyps = intern(hyp_lines);
  const auto refs = intern(ref_lines);

  EvalReport report;
  report.sentences = hyps.size();
  report.bleu = bleu(hyps, refs, BleuOptions{!a.strict});
  const auto rep = repetition_stats(hyps);
  report.per_sentence_dedup_ops = rep.mean_dedup_ops;
  report.pct_sentences_with_repeats = rep.pct_with_repeats;
  if (task) {
    const auto srcs = intern(read_raw_lines(a.src));
    if (srcs.size() != hyps.size()) throw ContractError("misaligned files: --src line count differs");
    std::vector<TokenId> perm;
    if (*task == SyntheticTask::Cipher) perm = infer_permutation(srcs, refs, vocab.size());
    report.coverage_ratio = coverage_ratio(hyps, srcs, *task, perm);
  }
  std::cout << (a.lines ? format_report_lines(report) : format_report(report));
  return kExitOk;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string nat;
  std::string teacher;
  std::string corpus;
  std::string vocab;
  int delta_t = 0;
  int b = 4;
  std::size_t beam = 4;
  std::size_t limit = 0;
};

int cmd_bench(const BenchArgs& a) {
  if (a.b < 1) throw UsageError("--b must be at least 1 for the rescoring row");
  const fs::path corpus_prefix = a.corpus;
  const fs::path vocab_path = a.vocab.empty() ? suffixed(corpus_prefix, ".vocab") : fs::path(a.vocab);
  const auto vocab = Vocabulary::load(vocab_path);
  const auto nat = load_model(a.nat);
  const auto teacher = load_model(a.teacher);
  std::vector<std::vector<TokenId>> sources;
  for (const auto& p : read_corpus(corpus_prefix, vocab).pairs) {
    if (a.limit != 0 && sources.size() >= a.limit) break;
    sources.push_back(p.src);
  }
  const LengthRule plain{a.delta_t, 0};
  const LengthRule npd{a.delta_t, a.b};
  const auto nat_b0 = measure_latency(sources, [&](auto s) { (void)translate_npd(s, plain, nat, nullptr); });
  const auto nat_npd = measure_latency(sources, [&](auto s) { (void)translate_npd(s, npd, nat, &teacher); });
  const auto at = measure_latency(sources, [&](auto s) { (void)beam_search(s, teacher, a.beam); });

  auto row = [&](const char* name, const LatencyReport& r) {
    std::cout << "system=" << name << " mean_ms=" << fmt6(r.mean_ms) << " std_ms=" << fmt6(r.stddev_ms)
              << " speedup=" << fmt6(at.mean_ms / r.mean_ms) << "\n";
  };
  std::cout << "note=warm-up of " << nat_b0.warmup_sentences
            << " sentences excluded from timing; batch size 1; sentences=" << sources.size() << "\n";
  row("nat_b0", nat_b0);
  row(("nat_rescore" + std::to_string(2 * a.b + 1)).c_str(), nat_npd);
  row(("at_beam" + std::to_string(a.beam)).c_str(), at);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-autoregressive translation toolkit with similarity and reconstruction regularizers"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic parallel corpus");
  g->add_option("--task", gen.task, "copy, reverse, or cipher")->capture_default_str();
  g->add_option("--vocab-size", gen.vocab_size, "Content tokens")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--pairs", gen.pairs, "Sentence pairs")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--len-min", gen.len_min)->capture_default_str();
  g->add_option("--len-max", gen.len_max)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_flag("--allow-adjacent-repeats", gen.allow_adjacent_repeats,
              "Let sources contain equal neighbouring tokens");
  g->add_option("--out", gen.out, "Output prefix")->required();
  g->add_option("--manifest", gen.manifest, "Manifest path (default <out>.manifest.json)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the autoregressive teacher or the NAT model");
  t->add_option("--role", train.role, "teacher or nat")->required();
  t->add_option("--corpus", train.corpus, "Corpus prefix")->required();
  t->add_option("--dev-corpus", train.dev_corpus, "Dev corpus prefix (default: split from --corpus)");
  t->add_option("--vocab", train.vocab, "Vocabulary (default <corpus>.vocab)");
  t->add_option("--config", train.config, "key = value config file");
  t->add_option("--set", train.overrides, "Config override key=value (repeatable)");
  t->add_option("--mode", train.mode, "base, sim, rec, both, universal")->capture_default_str();
  t->add_option("--alpha", train.alpha, "Similarity weight (default 2)");
  t->add_option("--beta", train.beta, "Reconstruction weight (default 0.5)");
  t->add_option("--seed", train.seed);
  t->add_option("--max-steps", train.max_steps);
  t->add_flag("--allow-raw", train.allow_raw, "Train the NAT on a ground-truth corpus");
  t->add_flag("--sever-rec-embedding", train.sever,
              "Stop reconstruction gradients at the shared source embedding");
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--manifest", train.manifest);

  DistillArgs dist;
  auto* d = app.add_subcommand("distill", "Replace targets by teacher beam-search output");
  d->add_option("--teacher", dist.teacher)->required();
  d->add_option("--corpus", dist.corpus)->required();
  d->add_option("--vocab", dist.vocab);
  d->add_option("--beam", dist.beam)->capture_default_str();
  d->add_option("--out", dist.out)->required();
  d->add_option("--manifest", dist.manifest);

  TranslateArgs tr;
  auto* x = app.add_subcommand("translate", "Noisy parallel decoding with optional teacher rescoring");
  x->add_option("--nat", tr.nat)->required();
  x->add_option("--teacher", tr.teacher);
  x->add_option("--input", tr.input)->required();
  x->add_option("--vocab", tr.vocab)->required();
  x->add_option("--delta-t", tr.delta_t, "Target length offset")->capture_default_str();
  x->add_option("--b", tr.b, "Half window: 2B+1 candidate lengths")->capture_default_str();
  x->add_flag("--no-rescore", tr.no_rescore, "Skip the teacher (only valid with --b 0)");
  x->add_flag("--dedup", tr.dedup, "Collapse repeated adjacent tokens");
  x->add_flag("--unnormalized", tr.unnormalized, "Rank candidates by total log-likelihood");
  x->add_option("--out", tr.out)->required();
  x->add_option("--manifest", tr.manifest);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "BLEU and repetition diagnostics");
  e->add_option("--hyp", ev.hyp)->required();
  e->add_option("--ref", ev.ref)->required();
  e->add_option("--src", ev.src);
  e->add_option("--task", ev.task);
  e->add_flag("--strict", ev.strict, "Disable BLEU smoothing");
  e->add_flag("--lines", ev.lines, "One metric=<key> value=<v> line per metric");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Per-sentence decoding latency");
  b->add_option("--nat", bench.nat)->required();
  b->add_option("--teacher", bench.teacher)->required();
  b->add_option("--corpus", bench.corpus)->required();
  b->add_option("--vocab", bench.vocab);
  b->add_option("--delta-t", bench.delta_t)->capture_default_str();
  b->add_option("--b", bench.b)->capture_default_str();
  b->add_option("--beam", bench.beam)->capture_default_str();
  b->add_option("--limit", bench.limit, "Use at most this many sentences (0: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen, args);
    if (*t) return cmd_train(train, args);
    if (*d) return cmd_distill(dist, args);
    if (*x) return cmd_translate(tr, args);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_bench(bench);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
