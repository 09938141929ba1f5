// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. The default-config pipeline is run
// through the CLI twice (criterion 9); its model, logs and timings feed
// criteria 4, 5, 7 and 8.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;
using namespace laso;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "laso");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

// Wall time of one CLI command; a nonzero status is fatal for the run.
double timed_cli(const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = cli(args);
  if (rc != 0) {
    std::string line;
    for (const auto& a : args) line += a + " ";
    throw std::runtime_error("command failed (" + std::to_string(rc) + "): " + line);
  }
  return seconds_since(t0);
}

struct PipelineRun {
  fs::path dir;
  double train_seconds = 0.0;
  double fewshot_seconds = 0.0;
};

const std::vector<std::string> kPipelineCsvs = {"pretrain_log.csv", "train_log.csv",
                                                "eval_class.csv", "eval_retrieval.csv",
                                                "fewshot.csv"};

PipelineRun run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  const std::string out = dir.string();
  PipelineRun r{dir};
  timed_cli({"gen", "--out", out});
  timed_cli({"pretrain-classifier", "--out", out});
  r.train_seconds = timed_cli({"train", "--out", out});
  timed_cli({"eval-class", "--out", out});
  timed_cli({"eval-retrieval", "--out", out});
  r.fewshot_seconds = timed_cli({"fewshot", "--out", out});
  return r;
}

cli::RunConfig resolved(const fs::path& dir, const std::string& command) {
  return cli::from_json(json::parse(slurp(dir / (command + ".config.json"))));
}

// --------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto rep = run_gradcheck(GradCheckConfig{});
  double worst = 0.0;
  for (const auto& r : rep.results) worst = std::max(worst, r.max_rel_error);
  Outcome o;
  o.pass = rep.passed() && rep.instances() >= 100 && rep.seconds < 60.0;
  o.detail = std::to_string(rep.results.size()) + " checks, " + std::to_string(rep.instances()) +
             " instances, max rel error " + num(worst * 1e6, 3) + "e-6 (tol 1e-4), " +
             num(rep.seconds, 1) + " s";
  return o;
}

Outcome analytic_oracle() {
  const GeneratorSpec spec = GeneratorSpec::clean();
  const FeatureBank bank =
      generate_bank(spec, SplitSizes{.train = 0, .test = 2000, .reserve = 0}, 2);
  const std::uint64_t pairing = 3;
  const auto pairs = random_pairs(bank.indices(Split::kTest), pairing);

  std::size_t exact = 0;
  for (auto [x, y] : pairs) {
    bool all = true;
    for (SetOp op : kAllSetOps) {
      const auto z =
          analytic_op(op, AnalyticVariant::kMinMax, bank.feature_f64(x), bank.feature_f64(y));
      const auto want = op == SetOp::kUnion ? set_union(bank.labels(x), bank.labels(y))
                        : op == SetOp::kIntersection
                            ? set_intersection(bank.labels(x), bank.labels(y))
                            : set_subtraction(bank.labels(x), bank.labels(y));
      all = all && oracle_decode(spec, z) == want;
    }
    exact += all ? 1 : 0;
  }

  const auto clf = oracle_classifier(spec);
  const auto ev = classification_eval(PairOperators::analytic(), bank, clf, &clf, pairing);
  double min_map = 1.0;
  for (const auto& r : ev.rows) min_map = std::min({min_map, r.map_seen(), r.map_unseen()});

  const auto rv = retrieval_eval(PairOperators::analytic(), bank,
                                 testing::oracle_gallery(spec, bank, pairing), pairing,
                                 {.ks = {1}});
  double min_top1 = 1.0;
  for (const auto& r : rv.rows) min_top1 = std::min(min_top1, r.miou[0]);

  Outcome o;
  o.pass = pairs.size() == 1000 && exact == pairs.size() && min_map == 1.0 && min_top1 == 1.0;
  o.detail = std::to_string(exact) + "/" + std::to_string(pairs.size()) +
             " pairs decode exactly, min mAP " + num(min_map, 6) + ", min top-1 mIoU " +
             num(min_top1, 6);
  return o;
}

Outcome metric_oracles() {
  const auto orderings = testing::ap_all_orderings(8);
  const auto ties = testing::ap_all_tied_scorings(5);
  const auto algebra = testing::label_algebra_exhaustive(6);
  Outcome o;
  o.pass = orderings.mismatches == 0 && ties.mismatches == 0 && algebra.mismatches == 0;
  o.detail = "AP " + std::to_string(orderings.cases) + " orderings/labelings (N<=8) + " +
             std::to_string(ties.cases) + " tied scorings, label algebra " +
             std::to_string(algebra.cases) + " set pairs (L<=6), mismatches " +
             std::to_string(orderings.mismatches + ties.mismatches + algebra.mismatches);
  return o;
}

// Mean AP of a constant scorer: the label prevalence among the expected sets.
double prevalence(const FeatureBank& bank, SetOp op, std::uint64_t pairing, const LabelVec& mask) {
  const auto pb = split_pairs(random_pairs(bank.indices(Split::kTest), pairing));
  const auto expected =
      apply_set_op(op, bank.gather_labels(pb.left), bank.gather_labels(pb.right));
  const Tensor zeros = Tensor::matrix(expected.size(), bank.label_count());
  return class_aps(zeros, expected, mask).mean();
}

Outcome learned_classification(const PipelineRun& run, std::string& subtraction_note) {
  const auto cfg = resolved(run.dir, "eval-class");
  const FeatureBank bank = load_bank(cfg.bank_path());
  const LasoModel model = load_model(cfg.checkpoint_path());
  const auto unseen_clf = unseen_classifier_train(bank, bank.unseen_mask(), cfg.eval.unseen);
  const auto ev = classification_eval(PairOperators::learned(model), bank, model.classifier,
                                      &unseen_clf, cfg.eval.pairing_seed);

  Outcome o;
  o.pass = run.train_seconds < 300.0;
  for (SetOp op : {SetOp::kIntersection, SetOp::kUnion}) {
    const auto& r = ev.row(set_op_name(op));
    const double base = prevalence(bank, op, cfg.eval.pairing_seed, bank.unseen_mask());
    const bool ok = r.map_seen() >= 0.90 && r.map_unseen() - base >= 0.15;
    o.pass = o.pass && ok;
    o.detail += std::string(set_op_name(op)) + " seen " + num(r.map_seen(), 3) + ", unseen " +
                num(r.map_unseen(), 3) + " vs prevalence " + num(base, 3) + "; ";
  }
  const auto& s = ev.row("sub");
  subtraction_note = "sub seen " + num(s.map_seen(), 3) + ", unseen " + num(s.map_unseen(), 3) +
                     " (prevalence " +
                     num(prevalence(bank, SetOp::kSubtraction, cfg.eval.pairing_seed,
                                    bank.unseen_mask()),
                         3) +
                     "); original seen " + num(ev.row("original").map_seen(), 3);
  o.detail += "train " + num(run.train_seconds, 1) + " s";
  return o;
}

Outcome decoupling(const std::vector<PipelineRun>& runs) {
  Outcome o{true, ""};
  for (const auto& run : runs) {
    const auto s = json::parse(slurp(run.dir / "train_summary.json"));
    const std::size_t a = s["classifier_moved_by_laso_steps"];
    const std::size_t b = s["operators_moved_by_classifier_steps"];
    const std::size_t steps = s["steps"];
    o.pass = o.pass && s["decoupling_checked"].get<bool>() && steps > 0 && a == 0 && b == 0;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += run.dir.filename().string() + ": " + std::to_string(steps) +
                " steps checked, C moved by LaSO steps " + std::to_string(a) +
                ", operators moved by C steps " + std::to_string(b);
  }
  return o;
}

// Mean over pairs of ||M_uni(x,y) - M_uni(y,x)|| / ||M_uni(x,y)||, eval mode.
double symmetry_ratio(const LasoModel& model, const FeatureBank& bank, std::uint64_t pairing,
                      std::size_t count) {
  auto pb = split_pairs(random_pairs(bank.indices(Split::kTest), pairing));
  pb.left.resize(std::min(count, pb.left.size()));
  pb.right.resize(pb.left.size());
  const Tensor fx = bank.gather(pb.left), fy = bank.gather(pb.right);
  const auto ops = PairOperators::learned(model);
  const Tensor a = ops.apply(SetOp::kUnion, fx, fy);
  const Tensor b = ops.apply(SetOp::kUnion, fy, fx);
  double sum = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      diff += (a.at(r, j) - b.at(r, j)) * (a.at(r, j) - b.at(r, j));
      norm += a.at(r, j) * a.at(r, j);
    }
    sum += std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
  }
  return sum / static_cast<double>(a.rows());
}

Outcome symmetry_effect(const PipelineRun& with_sym, const fs::path& without_dir) {
  const auto cfg = resolved(with_sym.dir, "eval-class");
  const FeatureBank bank = load_bank(cfg.bank_path());
  const double r1 =
      symmetry_ratio(load_model(with_sym.dir / "model.laso"), bank, cfg.eval.pairing_seed, 200);
  const double r0 =
      symmetry_ratio(load_model(without_dir / "model.laso"), bank, cfg.eval.pairing_seed, 200);
  Outcome o;
  o.pass = r1 <= 0.5 * r0;
  o.detail = "asymmetry w_sym=1 " + num(r1, 4) + " vs w_sym=0 " + num(r0, 4) + " (ratio " +
             num(r1 / r0, 3) + ", needs <= 0.5), 200 test pairs";
  return o;
}

Outcome fewshot_ordering(const PipelineRun& run) {
  const auto summary = json::parse(slurp(run.dir / "fewshot_summary.json"));
  auto mean = [&](std::size_t shot, const std::string& method) {
    for (const auto& s : summary) {
      if (s["n_shot"] == shot && s["method"] == method) return s["mean_map"].get<double>();
    }
    throw std::runtime_error("fewshot summary lacks " + method);
  };
  Outcome o;
  o.pass = run.fewshot_seconds < 600.0;
  for (std::size_t shot : {1u, 5u}) {
    const double none = mean(shot, "none"), learned = mean(shot, "learned_uni"),
                 analytic = mean(shot, "analytic_uni");
    o.pass = o.pass && learned > none && analytic > none;
    o.detail += std::to_string(shot) + "-shot none " + num(none, 3) + ", learned_uni " +
                num(learned, 3) + ", analytic_uni " + num(analytic, 3) + ", mixup " +
                num(mean(shot, "mixup"), 3) + "; ";
  }
  o.detail += "benchmark " + num(run.fewshot_seconds, 1) + " s";
  return o;
}

// Runs `f` and reports whether it threw exactly the expected error type.
template <typename E>
bool throws(const std::function<void()>& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome persistence(const PipelineRun& run, const fs::path& scratch) {
  const auto bank_bytes = io::read_file(run.dir / "bank.lbnk");
  const auto model_bytes = io::read_file(run.dir / "model.laso");
  const FeatureBank bank = decode_bank(bank_bytes);
  const LasoModel model = decode_model(model_bytes);

  bool ok = encode_bank(bank) == bank_bytes && encode_model(model) == model_bytes;
  save_bank(bank, scratch / "copy.lbnk");
  save_model(model, scratch / "copy.laso");
  ok = ok && load_bank(scratch / "copy.lbnk") == bank &&
       io::read_file(scratch / "copy.laso") == model_bytes &&
       encode_model(load_model(scratch / "copy.laso")) == model_bytes;

  std::size_t checks = 0, typed = 0;
  auto expect = [&](bool b) {
    ++checks;
    typed += b ? 1 : 0;
  };
  using Bytes = std::vector<std::uint8_t>;
  auto corruptions = [&](const Bytes& good, auto decode) {
    Bytes b = good;
    b[0] ^= 0x5a;
    expect(throws<FormatError>([&] { decode(b); }));
    b = good;
    b[4] += 7;
    expect(throws<VersionError>([&] { decode(b); }));
    // 64 evenly spaced truncation points plus the first 32 bytes.
    for (std::size_t i = 0; i < 96; ++i) {
      const std::size_t cut = i < 32 ? i : (i - 32) * good.size() / 64;
      if (cut >= good.size()) continue;
      expect(throws<TruncationError>([&] { decode(Bytes(good.begin(), good.begin() + cut)); }));
    }
    b = good;
    b.push_back(0);
    expect(throws<FormatError>([&] { decode(b); }));
  };
  corruptions(bank_bytes, [](const Bytes& b) { decode_bank(b); });
  corruptions(model_bytes, [](const Bytes& b) { decode_model(b); });
  // A split tag outside {train, test, reserve}: header is 4+4+3*8 bytes, then L mask bytes.
  Bytes bad_tag = bank_bytes;
  bad_tag[32 + bank.label_count()] = 7;
  expect(throws<FormatError>([&] { decode_bank(bad_tag); }));
  Bytes bad_label = bank_bytes;
  bad_label.back() = 2;
  expect(throws<FormatError>([&] { decode_bank(bad_label); }));
  expect(throws<IoError>([&] { load_bank(scratch / "missing.lbnk"); }));

  Outcome o;
  o.pass = ok && typed == checks;
  o.detail = std::string("round trip ") + (ok ? "bit-exact" : "MISMATCH") + " (" +
             std::to_string(bank_bytes.size()) + " + " + std::to_string(model_bytes.size()) +
             " bytes), " + std::to_string(typed) + "/" + std::to_string(checks) +
             " corruptions raised the typed error";
  return o;
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
  std::size_t same = 0;
  std::string diff;
  std::vector<std::string> files = kPipelineCsvs;
  files.insert(files.end(), {"bank.lbnk", "model.laso"});
  for (const auto& f : files) {
    const auto x = slurp(a.dir / f);
    if (!x.empty() && x == slurp(b.dir / f)) {
      ++same;
    } else {
      diff += " " + f;
    }
  }
  Outcome o;
  o.pass = same == files.size();
  o.detail = std::to_string(same) + "/" + std::to_string(files.size()) +
             " outputs byte-identical across two runs" + (diff.empty() ? "" : "; differ:" + diff);
  return o;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / "laso_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  struct Line {
    int id;
    std::string name;
    Outcome outcome;
  };
  std::vector<Line> lines;
  auto record = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    lines.push_back({id, name, o});
    std::cerr << "[acceptance] criterion " << id << " done after " << num(seconds_since(t0), 1)
              << " s\n";
  };

  record(1, "gradient suite", gradient_suite);
  record(2, "analytic oracle", analytic_oracle);
  record(3, "metric oracles", metric_oracles);

  std::vector<PipelineRun> runs;
  std::string pipeline_error;
  try {
    runs.push_back(run_pipeline(root / "run_a"));
    runs.push_back(run_pipeline(root / "run_b"));
    // Same seeds and pre-trained classifier, symmetry term switched off.
    const std::string nosym = (root / "no_sym").string();
    fs::create_directories(nosym);
    timed_cli({"pretrain-classifier", "--bank", (root / "run_a" / "bank.lbnk").string(), "--out",
               nosym});
    timed_cli({"train", "--bank", (root / "run_a" / "bank.lbnk").string(), "--w-sym", "0",
               "--out", nosym});
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto needs_pipeline = [&](std::size_t n, const std::function<Outcome()>& f) {
    return [&, n, f]() -> Outcome {
      if (runs.size() < n) return {false, "pipeline failed: " + pipeline_error};
      return f();
    };
  };

  std::string sub_note;
  record(4, "learned operators on synthetic data",
         needs_pipeline(1, [&] { return learned_classification(runs[0], sub_note); }));
  record(5, "decoupled updates", needs_pipeline(2, [&] { return decoupling(runs); }));
  record(6, "symmetry effect", needs_pipeline(2, [&] {
           if (!pipeline_error.empty()) return Outcome{false, "pipeline failed: " + pipeline_error};
           return symmetry_effect(runs[0], root / "no_sym");
         }));
  record(7, "few-shot ordering", needs_pipeline(1, [&] { return fewshot_ordering(runs[0]); }));
  record(8, "persistence", needs_pipeline(1, [&] { return persistence(runs[0], root); }));
  record(9, "determinism", needs_pipeline(2, [&] { return determinism(runs[0], runs[1]); }));

  bool all = true;
  std::cout << "\n";
  for (const auto& l : lines) {
    all = all && l.outcome.pass;
    std::cout << "criterion " << l.id << ": " << (l.outcome.pass ? "PASS" : "FAIL") << "  "
              << l.name << "  [" << l.outcome.detail << "]\n";
  }
  if (!sub_note.empty()) std::cout << "report only: " << sub_note << "\n";
  std::cout << "total " << num(seconds_since(t0), 1) << " s\n";
  fs::remove_all(root);
  return all ? 0 : 1;
}
