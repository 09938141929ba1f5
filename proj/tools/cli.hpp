#pragma once

// Command implementations behind the `laso` executable. Kept in a header so
// tests can drive the exact same code paths in-process.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "laso/laso.hpp"

namespace laso::cli {

using nlohmann::json;
namespace fs = std::filesystem;

struct EvalSettings {
  std::string operators = "learned";  // learned | analytic | analytic1
  std::uint64_t pairing_seed = 0;
  UnseenClassifierConfig unseen;
  RetrievalOptions retrieval;
};

struct ComposeSettings {
  std::string expression;
  std::map<std::string, std::size_t> bindings;
  std::size_t k = 5;
  bool analytic = false;  // default tag for untagged nodes
};

/// Everything a run depends on. One top-level seed feeds every component
/// through fixed derivation tags.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::string bank;        // defaults to <out>/bank.lbnk
  std::string checkpoint;  // defaults to <out>/model.laso
  std::string out = ".";
  GeneratorSpec generator;
  SplitSizes sizes;
  NetConfig net;
  PretrainConfig pretrain;
  TrainConfig train;
  EvalSettings eval;
  BenchmarkConfig fewshot;
  GradCheckConfig gradcheck;
  ComposeSettings compose;

  fs::path out_dir() const { return fs::path(out); }
  fs::path bank_path() const { return bank.empty() ? out_dir() / "bank.lbnk" : fs::path(bank); }
  fs::path checkpoint_path() const {
    return checkpoint.empty() ? out_dir() / "model.laso" : fs::path(checkpoint);
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

inline const char* prototype_mode_name(PrototypeMode m) {
  return m == PrototypeMode::kDisjointBlocks ? "disjoint_blocks" : "random_nonneg";
}

inline json to_json(const RunConfig& c) {
  json methods = json::array();
  for (auto m : c.fewshot.methods) methods.push_back(aug_method_name(m));
  const auto& g = c.generator;
  const auto& t = c.train;
  return json{
      {"seed", c.seed},
      {"bank", c.bank},
      {"checkpoint", c.checkpoint},
      {"out", c.out},
      {"generator",
       {{"feature_dim", g.feature_dim},
        {"label_count", g.label_count},
        {"seen_count", g.seen_count},
        {"prototype_mode", prototype_mode_name(g.prototype_mode)},
        {"prototype_density", g.prototype_density},
        {"amplitude_lo", g.amplitude_lo},
        {"amplitude_hi", g.amplitude_hi},
        {"noise_sigma", g.noise_sigma},
        {"labels_min", g.labels_min},
        {"labels_max", g.labels_max},
        {"clean_mode", g.clean_mode},
        {"filtered", g.filtered},
        {"train", c.sizes.train},
        {"test", c.sizes.test},
        {"reserve", c.sizes.reserve}}},
      {"net",
       {{"blocks", c.net.blocks},
        {"dropout", c.net.dropout},
        {"leaky_slope", c.net.leaky_slope},
        {"init", c.net.init == WeightInit::kIdentity ? "identity" : "uniform"},
        {"init_noise", c.net.init_noise}}},
      {"pretrain",
       {{"epochs", c.pretrain.epochs},
        {"batch_size", c.pretrain.batch_size},
        {"learning_rate", c.pretrain.learning_rate}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"plateau",
         {{"factor", t.plateau.factor},
          {"patience", t.plateau.patience},
          {"threshold", t.plateau.threshold}}},
        {"weights", {{"laso", t.loss.weights.laso}, {"sym", t.loss.weights.sym},
                     {"mc", t.loss.weights.mc}}},
        {"square_sym_norm", t.loss.square_sym_norm}}},
      {"eval",
       {{"operators", c.eval.operators},
        {"pairing_seed", c.eval.pairing_seed},
        {"unseen_classifier",
         {{"epochs", c.eval.unseen.epochs},
          {"batch_size", c.eval.unseen.batch_size},
          {"learning_rate", c.eval.unseen.learning_rate}}},
        {"ks", c.eval.retrieval.ks},
        {"distance", c.eval.retrieval.distance == Distance::kCosine ? "cosine" : "squared_l2"}}},
      {"fewshot",
       {{"n_shots", c.fewshot.n_shots},
        {"methods", methods},
        {"episodes", c.fewshot.episodes},
        {"epochs", c.fewshot.epochs},
        {"batch_size", c.fewshot.batch_size},
        {"learning_rate", c.fewshot.learning_rate},
        {"per_support", c.fewshot.augmentation.per_support},
        {"skip_empty", c.fewshot.augmentation.skip_empty},
        {"mixup_alpha", c.fewshot.augmentation.mixup_alpha}}},
      {"gradcheck",
       {{"instances_per_case", c.gradcheck.instances_per_case},
        {"composite_graphs", c.gradcheck.composite_graphs},
        {"tolerance", c.gradcheck.tolerance}}},
      {"compose",
       {{"expression", c.compose.expression},
        {"bindings", c.compose.bindings},
        {"k", c.compose.k},
        {"analytic", c.compose.analytic}}},
  };
}

namespace detail {

/// Rejects keys the defaults do not have, so typos fail loudly.
inline void check_keys(const json& defaults, const json& given, const std::string& path) {
  if (!given.is_object() || !defaults.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    const std::string here = path.empty() ? k : path + "." + k;
    if (!defaults.contains(k)) throw ConfigError("config: unknown key '" + here + "'");
    // Free-form maps carry arbitrary keys.
    if (here != "compose.bindings") check_keys(defaults[k], v, here);
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + path + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig from_json(const json& j) {
  using detail::get;
  detail::check_keys(to_json(RunConfig{}), j, "");
  // Start from defaults so a partial document is complete after merging.
  json m = to_json(RunConfig{});
  m.merge_patch(j);

  RunConfig c;
  c.seed = get<std::uint64_t>(m, "seed", "");
  c.bank = get<std::string>(m, "bank", "");
  c.checkpoint = get<std::string>(m, "checkpoint", "");
  c.out = get<std::string>(m, "out", "");

  const json& g = m["generator"];
  auto& gs = c.generator;
  gs.feature_dim = get<std::size_t>(g, "feature_dim", "generator");
  gs.label_count = get<std::size_t>(g, "label_count", "generator");
  gs.seen_count = get<std::size_t>(g, "seen_count", "generator");
  const auto mode = get<std::string>(g, "prototype_mode", "generator");
  if (mode == "disjoint_blocks") gs.prototype_mode = PrototypeMode::kDisjointBlocks;
  else if (mode == "random_nonneg") gs.prototype_mode = PrototypeMode::kRandomNonneg;
  else throw ConfigError("config: generator.prototype_mode must be disjoint_blocks or random_nonneg");
  gs.prototype_density = get<double>(g, "prototype_density", "generator");
  gs.amplitude_lo = get<double>(g, "amplitude_lo", "generator");
  gs.amplitude_hi = get<double>(g, "amplitude_hi", "generator");
  gs.noise_sigma = get<double>(g, "noise_sigma", "generator");
  gs.labels_min = get<std::size_t>(g, "labels_min", "generator");
  gs.labels_max = get<std::size_t>(g, "labels_max", "generator");
  gs.clean_mode = get<bool>(g, "clean_mode", "generator");
  gs.filtered = get<bool>(g, "filtered", "generator");
  c.sizes.train = get<std::size_t>(g, "train", "generator");
  c.sizes.test = get<std::size_t>(g, "test", "generator");
  c.sizes.reserve = get<std::size_t>(g, "reserve", "generator");

  const json& n = m["net"];
  c.net.blocks = get<std::size_t>(n, "blocks", "net");
  c.net.dropout = get<double>(n, "dropout", "net");
  c.net.leaky_slope = get<double>(n, "leaky_slope", "net");
  const auto init = get<std::string>(n, "init", "net");
  if (init == "identity") c.net.init = WeightInit::kIdentity;
  else if (init == "uniform") c.net.init = WeightInit::kUniform;
  else throw ConfigError("config: net.init must be identity or uniform");
  c.net.init_noise = get<double>(n, "init_noise", "net");

  const json& p = m["pretrain"];
  c.pretrain.epochs = get<std::size_t>(p, "epochs", "pretrain");
  c.pretrain.batch_size = get<std::size_t>(p, "batch_size", "pretrain");
  c.pretrain.learning_rate = get<double>(p, "learning_rate", "pretrain");

  const json& t = m["train"];
  c.train.epochs = get<std::size_t>(t, "epochs", "train");
  c.train.batch_size = get<std::size_t>(t, "batch_size", "train");
  c.train.learning_rate = get<double>(t, "learning_rate", "train");
  c.train.plateau.factor = get<double>(t["plateau"], "factor", "train.plateau");
  c.train.plateau.patience = get<std::size_t>(t["plateau"], "patience", "train.plateau");
  c.train.plateau.threshold = get<double>(t["plateau"], "threshold", "train.plateau");
  c.train.loss.weights.laso = get<double>(t["weights"], "laso", "train.weights");
  c.train.loss.weights.sym = get<double>(t["weights"], "sym", "train.weights");
  c.train.loss.weights.mc = get<double>(t["weights"], "mc", "train.weights");
  c.train.loss.square_sym_norm = get<bool>(t, "square_sym_norm", "train");

  const json& e = m["eval"];
  c.eval.operators = get<std::string>(e, "operators", "eval");
  if (c.eval.operators != "learned" && c.eval.operators != "analytic" &&
      c.eval.operators != "analytic1") {
    throw ConfigError("config: eval.operators must be learned, analytic or analytic1");
  }
  c.eval.pairing_seed = get<std::uint64_t>(e, "pairing_seed", "eval");
  const json& u = e["unseen_classifier"];
  c.eval.unseen.epochs = get<std::size_t>(u, "epochs", "eval.unseen_classifier");
  c.eval.unseen.batch_size = get<std::size_t>(u, "batch_size", "eval.unseen_classifier");
  c.eval.unseen.learning_rate = get<double>(u, "learning_rate", "eval.unseen_classifier");
  c.eval.retrieval.ks = get<std::vector<std::size_t>>(e, "ks", "eval");
  const auto dist = get<std::string>(e, "distance", "eval");
  if (dist == "squared_l2") c.eval.retrieval.distance = Distance::kSquaredEuclidean;
  else if (dist == "cosine") c.eval.retrieval.distance = Distance::kCosine;
  else throw ConfigError("config: eval.distance must be squared_l2 or cosine");

  const json& f = m["fewshot"];
  c.fewshot.n_shots = get<std::vector<std::size_t>>(f, "n_shots", "fewshot");
  c.fewshot.methods.clear();
  for (const auto& s : get<std::vector<std::string>>(f, "methods", "fewshot")) {
    c.fewshot.methods.push_back(parse_aug_method(s));
  }
  c.fewshot.episodes = get<std::size_t>(f, "episodes", "fewshot");
  c.fewshot.epochs = get<std::size_t>(f, "epochs", "fewshot");
  c.fewshot.batch_size = get<std::size_t>(f, "batch_size", "fewshot");
  c.fewshot.learning_rate = get<double>(f, "learning_rate", "fewshot");
  c.fewshot.augmentation.per_support = get<double>(f, "per_support", "fewshot");
  c.fewshot.augmentation.skip_empty = get<bool>(f, "skip_empty", "fewshot");
  c.fewshot.augmentation.mixup_alpha = get<double>(f, "mixup_alpha", "fewshot");

  const json& gc = m["gradcheck"];
  c.gradcheck.instances_per_case = get<std::size_t>(gc, "instances_per_case", "gradcheck");
  c.gradcheck.composite_graphs = get<std::size_t>(gc, "composite_graphs", "gradcheck");
  c.gradcheck.tolerance = get<double>(gc, "tolerance", "gradcheck");

  const json& cp = m["compose"];
  c.compose.expression = get<std::string>(cp, "expression", "compose");
  c.compose.bindings = get<std::map<std::string, std::size_t>>(cp, "bindings", "compose");
  c.compose.k = get<std::size_t>(cp, "k", "compose");
  c.compose.analytic = get<bool>(cp, "analytic", "compose");

  // Component seeds all come from the single run seed.
  c.pretrain.seed = derive_seed(c.seed, 101);
  c.train.seed = derive_seed(c.seed, 102);
  c.eval.unseen.seed = derive_seed(c.seed, 103);
  c.fewshot.seed = derive_seed(c.seed, 104);
  c.gradcheck.seed = derive_seed(c.seed, 105);
  return c;
}

// ---------------------------------------------------------------------------
// Shared helpers

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Resolved config next to the outputs; re-running with it as --config
/// reproduces them.
inline void write_resolved(const RunConfig& c) {
  json j = to_json(c);
  write_text(c.out_dir() / (c.command + ".config.json"), j.dump(2) + "\n");
}

inline LasoModel fresh_model(const RunConfig& c, const FeatureBank& bank) {
  NetConfig nc = c.net;
  nc.feature_dim = bank.feature_dim();
  Rng rng(derive_seed(c.seed, 100));
  return LasoModel::create(nc, bank.label_count(), rng);
}

inline PairOperators operators_for(const RunConfig& c, const LasoModel* model) {
  if (c.eval.operators == "analytic") return PairOperators::analytic(AnalyticVariant::kMinMax);
  if (c.eval.operators == "analytic1") return PairOperators::analytic(AnalyticVariant::kArithmetic);
  if (!model) throw ConfigError("learned operators need a checkpoint");
  return PairOperators::learned(*model);
}

inline void log(const std::string& msg) { std::cerr << msg << '\n'; }

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen(const RunConfig& c) {
  const FeatureBank bank = generate_bank(c.generator, c.sizes, c.seed);
  save_bank(bank, c.bank_path());
  write_resolved(c);
  log("wrote " + c.bank_path().string() + " (" + std::to_string(bank.size()) + " samples)");
  return 0;
}

inline int cmd_pretrain(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  LasoModel model = fresh_model(c, bank);
  const auto losses = pretrain_classifier(model.classifier, bank, c.pretrain);
  std::ostringstream csv;
  csv << "epoch,classifier_loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) {
    csv << e + 1 << ',' << laso::detail::fmt(losses[e]) << '\n';
  }
  write_text(c.out_dir() / "pretrain_log.csv", csv.str());
  save_model(model, c.checkpoint_path());
  write_resolved(c);
  log("wrote " + c.checkpoint_path().string());
  return 0;
}

inline int cmd_train(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  LasoModel model;
  if (fs::exists(c.checkpoint_path())) {
    model = load_model(c.checkpoint_path());
  } else {
    log("no checkpoint at " + c.checkpoint_path().string() + ", pre-training the classifier");
    model = fresh_model(c, bank);
    pretrain_classifier(model.classifier, bank, c.pretrain);
  }
  std::ostringstream csv;
  csv << "epoch,classifier_loss,laso,sym,mc,total,learning_rate\n";
  const auto res = train_laso(model, bank, c.train, [&](const EpochLog& l) {
    using laso::detail::fmt;
    csv << l.epoch << ',' << fmt(l.classifier_loss) << ',' << fmt(l.laso) << ',' << fmt(l.sym)
        << ',' << fmt(l.mc) << ',' << fmt(l.total) << ',' << l.learning_rate << '\n';
    log("epoch " + std::to_string(l.epoch) + " total " + fmt(l.total));
  });
  write_text(c.out_dir() / "train_log.csv", csv.str());
  json summary{{"steps", res.steps},
               {"classifier_moved_by_laso_steps", res.classifier_moved_by_laso_steps},
               {"operators_moved_by_classifier_steps", res.operators_moved_by_classifier_steps},
               {"decoupling_checked", res.decoupling_checked}};
  write_text(c.out_dir() / "train_summary.json", summary.dump(2) + "\n");
  save_model(model, c.checkpoint_path());
  write_resolved(c);
  if (res.classifier_moved_by_laso_steps || res.operators_moved_by_classifier_steps) {
    log("decoupling violated");
    return 1;
  }
  return 0;
}

inline std::optional<LasoModel> model_if_needed(const RunConfig& c) {
  if (c.eval.operators != "learned") return std::nullopt;
  return load_model(c.checkpoint_path());
}

/// The seen-label classifier: the model's own C when there is a model,
/// otherwise one pre-trained from scratch.
inline LinearClassifier seen_classifier(const RunConfig& c, const FeatureBank& bank,
                                        const std::optional<LasoModel>& model) {
  if (model) return model->classifier;
  if (fs::exists(c.checkpoint_path())) return load_model(c.checkpoint_path()).classifier;
  LasoModel m = fresh_model(c, bank);
  pretrain_classifier(m.classifier, bank, c.pretrain);
  return m.classifier;
}

inline int cmd_eval_class(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  const auto model = model_if_needed(c);
  const auto seen = seen_classifier(c, bank, model);
  const auto unseen = unseen_classifier_train(bank, bank.unseen_mask(), c.eval.unseen);
  const auto rep = classification_eval(operators_for(c, model ? &*model : nullptr), bank, seen,
                                       &unseen, c.eval.pairing_seed);
  std::ostringstream csv;
  write_eval_csv(csv, rep);
  write_text(c.out_dir() / "eval_class.csv", csv.str());
  write_resolved(c);
  for (const auto& r : rep.rows) {
    std::cout << rep.operators << ' ' << r.op << " seen mAP " << laso::detail::fmt(r.map_seen())
              << " unseen mAP " << laso::detail::fmt(r.map_unseen()) << '\n';
  }
  return 0;
}

inline int cmd_eval_retrieval(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  const auto model = model_if_needed(c);
  const auto rep = retrieval_eval(operators_for(c, model ? &*model : nullptr), bank,
                                  c.eval.pairing_seed, c.eval.retrieval);
  std::ostringstream csv;
  write_retrieval_csv(csv, rep);
  write_text(c.out_dir() / "eval_retrieval.csv", csv.str());
  write_resolved(c);
  std::cout << csv.str();
  return 0;
}

/// Learned operators against both analytic variants, classification mAP
/// and top-k retrieval side by side.
inline int cmd_ablate(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  const LasoModel model = load_model(c.checkpoint_path());
  const auto unseen = unseen_classifier_train(bank, bank.unseen_mask(), c.eval.unseen);
  std::ostringstream csv;
  csv << "operators,op,seen_map,unseen_map";
  for (auto k : c.eval.retrieval.ks) csv << ",all_top" << k;
  csv << '\n';
  for (const auto& ops : {PairOperators::learned(model),
                          PairOperators::analytic(AnalyticVariant::kMinMax),
                          PairOperators::analytic(AnalyticVariant::kArithmetic)}) {
    const auto ev = classification_eval(ops, bank, model.classifier, &unseen, c.eval.pairing_seed);
    const auto rv = retrieval_eval(ops, bank, c.eval.pairing_seed, c.eval.retrieval);
    for (SetOp op : kAllSetOps) {
      const auto& r = ev.row(set_op_name(op));
      csv << ops.name() << ',' << r.op << ',' << laso::detail::fmt(r.map_seen()) << ','
          << laso::detail::fmt(r.map_unseen());
      for (double v : rv.row(set_op_name(op), "all").miou) csv << ',' << laso::detail::fmt(v);
      csv << '\n';
    }
  }
  write_text(c.out_dir() / "ablation.csv", csv.str());
  write_resolved(c);
  std::cout << csv.str();
  return 0;
}

inline int cmd_fewshot(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  bool need_model = false;
  for (auto m : c.fewshot.methods) need_model = need_model || is_learned(m);
  std::optional<LasoModel> model;
  if (need_model) model = load_model(c.checkpoint_path());
  const auto res = run_benchmark(bank, model ? &*model : nullptr, c.fewshot);
  std::ostringstream csv;
  write_fewshot_csv(csv, res);
  write_text(c.out_dir() / "fewshot.csv", csv.str());
  json summary = json::array();
  for (const auto& s : res.summary) {
    summary.push_back({{"n_shot", s.n_shot},
                       {"method", aug_method_name(s.method)},
                       {"mean_map", s.mean},
                       {"std_map", s.std},
                       {"episodes", c.fewshot.episodes}});
    std::cout << s.n_shot << "-shot " << aug_method_name(s.method) << " mAP "
              << laso::detail::fmt(s.mean) << " +- " << laso::detail::fmt(s.std) << '\n';
  }
  write_text(c.out_dir() / "fewshot_summary.json", summary.dump(2) + "\n");
  write_resolved(c);
  return 0;
}

inline int cmd_gradcheck(const RunConfig& c) {
  const auto rep = run_gradcheck(c.gradcheck);
  std::ostringstream csv;
  csv << "check,instances,rejected,max_rel_error,passed\n";
  for (const auto& r : rep.results) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    csv << r.name << ',' << r.checked << ',' << r.rejected << ',' << err << ','
        << (r.passed(rep.tolerance) ? "yes" : "no") << '\n';
  }
  write_text(c.out_dir() / "gradcheck.csv", csv.str());
  write_resolved(c);
  std::cout << csv.str() << rep.instances() << " instances, "
            << (rep.passed() ? "all passed" : "FAILED") << '\n';
  return rep.passed() ? 0 : 1;
}

inline int cmd_compose(const RunConfig& c) {
  const FeatureBank bank = load_bank(c.bank_path());
  const auto expr =
      parse_set_expr(c.compose.expression, c.compose.analytic ? OpTag::kAnalytic : OpTag::kLearned);
  std::optional<LasoModel> model;
  std::function<bool(const SetExpr&)> any_learned = [&](const SetExpr& e) {
    return !e.is_leaf() && (e.tag == OpTag::kLearned || any_learned(*e.lhs) || any_learned(*e.rhs));
  };
  if (any_learned(*expr)) model = load_model(c.checkpoint_path());
  const auto r = compose_expression(*expr, bank, {.model = model ? &*model : nullptr},
                                    c.compose.bindings);
  const Gallery g = Gallery::test_split(bank);
  // Leaves are excluded from the neighbors, like the two sources of a pair.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < g.source.size(); ++i) {
    if (std::find(r.leaves.begin(), r.leaves.end(), g.source[i]) == r.leaves.end()) {
      keep.push_back(i);
    }
  }
  if (c.compose.k == 0 || c.compose.k > keep.size()) {
    throw ConfigError("compose: k must lie in [1, " + std::to_string(keep.size()) + "]");
  }
  std::vector<std::pair<double, std::size_t>> cand;
  for (auto i : keep) {
    cand.emplace_back(laso::detail::distance(r.feature, g.features.row_span(i),
                                             c.eval.retrieval.distance),
                      i);
  }
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(c.compose.k),
                    cand.end());
  std::ostringstream csv;
  csv << "rank,sample,distance,labels,iou\n";
  for (std::size_t k = 0; k < c.compose.k; ++k) {
    const auto i = cand[k].second;
    csv << k + 1 << ',' << g.source[i] << ',' << laso::detail::fmt(cand[k].first) << ','
        << g.labels[i].str() << ',' << laso::detail::fmt(iou(g.labels[i], r.expected)) << '\n';
  }
  std::cout << "expression " << to_string(*expr) << "\nexpected " << r.expected.str() << '\n'
            << csv.str();
  write_text(c.out_dir() / "compose.csv", csv.str());
  write_resolved(c);
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing

/// A convenience flag that overwrites one config path.
struct Override {
  std::string pointer;  // JSON pointer, e.g. /train/epochs
  enum Kind { kUint, kDouble, kString, kBool, kUintList, kStringList } kind;
  std::string value;  // lists are comma-separated
  bool flag = false;
  CLI::Option* opt = nullptr;
};

inline json override_value(const Override& o) {
  auto one = [&](const std::string& s) -> json {
    try {
      switch (o.kind) {
        case Override::kUint:
        case Override::kUintList: {
          std::size_t pos = 0;
          const auto v = std::stoull(s, &pos);
          if (pos != s.size() || s.front() == '-') throw std::invalid_argument(s);
          return v;
        }
        case Override::kDouble: {
          std::size_t pos = 0;
          const double v = std::stod(s, &pos);
          if (pos != s.size()) throw std::invalid_argument(s);
          return v;
        }
        default: return s;
      }
    } catch (const std::logic_error&) {
      throw ConfigError("flag " + o.opt->get_name() + ": cannot parse '" + s + "'");
    }
  };
  if (o.kind == Override::kBool) return o.flag;
  if (o.kind == Override::kUintList || o.kind == Override::kStringList) {
    json a = json::array();
    std::stringstream ss(o.value);
    for (std::string v; std::getline(ss, v, ',');) a.push_back(one(v));
    return a;
  }
  return one(o.value);
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Label-set operation networks on synthetic feature banks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "laso 1.0");

  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::string> binds;
  std::string expression;
  // Deques keep the storage CLI11 binds to stable.
  std::map<CLI::App*, std::deque<Override>> overrides;

  auto add_flag = [&](CLI::App* sub, const std::string& name, const std::string& ptr,
                      Override::Kind kind, const std::string& help) {
    auto& o = overrides[sub].emplace_back(Override{ptr, kind, {}, false, nullptr});
    if (kind == Override::kBool) {
      o.opt = sub->add_flag(name, o.flag, help);
    } else {
      o.opt = sub->add_option(name, o.value, help);
    }
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config; flags override its values");
    sub->add_option("--set", sets, "Override any config key: path.to.key=JSON")
        ->allow_extra_args(false);
    add_flag(sub, "--seed", "/seed", Override::kUint, "Run seed");
    add_flag(sub, "--out", "/out", Override::kString, "Output directory");
    add_flag(sub, "--bank", "/bank", Override::kString, "Bank file (default <out>/bank.lbnk)");
    add_flag(sub, "--checkpoint", "/checkpoint", Override::kString,
             "Model checkpoint (default <out>/model.laso)");
  };

  auto* gen = app.add_subcommand("gen", "Generate and save a synthetic feature bank");
  common(gen);
  add_flag(gen, "--feature-dim", "/generator/feature_dim", Override::kUint, "Feature dimension d");
  add_flag(gen, "--labels", "/generator/label_count", Override::kUint, "Label vocabulary size L");
  add_flag(gen, "--seen", "/generator/seen_count", Override::kUint, "Number of seen labels");
  add_flag(gen, "--train", "/generator/train", Override::kUint, "Train split size");
  add_flag(gen, "--test", "/generator/test", Override::kUint, "Test split size");
  add_flag(gen, "--reserve", "/generator/reserve", Override::kUint, "Reserve split size");
  add_flag(gen, "--noise-sigma", "/generator/noise_sigma", Override::kDouble, "Feature noise");
  add_flag(gen, "--clean", "/generator/clean_mode", Override::kBool,
           "Clean preset: disjoint-block prototypes, unit amplitudes, no noise");

  auto* pre = app.add_subcommand("pretrain-classifier", "Train C on the seen labels");
  common(pre);
  add_flag(pre, "--epochs", "/pretrain/epochs", Override::kUint, "Epochs");
  add_flag(pre, "--lr", "/pretrain/learning_rate", Override::kDouble, "Learning rate");

  auto* train = app.add_subcommand("train", "Train the operator networks");
  common(train);
  add_flag(train, "--epochs", "/train/epochs", Override::kUint, "Epochs");
  add_flag(train, "--lr", "/train/learning_rate", Override::kDouble, "Initial learning rate");
  add_flag(train, "--w-laso", "/train/weights/laso", Override::kDouble, "Set-operation loss weight");
  add_flag(train, "--w-sym", "/train/weights/sym", Override::kDouble, "Symmetry loss weight");
  add_flag(train, "--w-mc", "/train/weights/mc", Override::kDouble, "Reconstruction loss weight");
  add_flag(train, "--blocks", "/net/blocks", Override::kUint, "Blocks per network (3 or 4)");

  auto* evc = app.add_subcommand("eval-class", "Classification mAP of synthesized vectors");
  auto* evr = app.add_subcommand("eval-retrieval", "Top-k retrieval mIoU of synthesized vectors");
  for (auto* sub : {evc, evr}) {
    common(sub);
    add_flag(sub, "--operators", "/eval/operators", Override::kString,
             "learned, analytic (max/min/relu-diff) or analytic1 (sum/product/difference)");
    add_flag(sub, "--pairing-seed", "/eval/pairing_seed", Override::kUint, "Test pairing seed");
  }
  add_flag(evr, "--k", "/eval/ks", Override::kUintList, "Comma-separated k values");
  add_flag(evr, "--distance", "/eval/distance", Override::kString, "squared_l2 or cosine");

  auto* abl = app.add_subcommand("ablate", "Learned versus analytic operators");
  common(abl);
  add_flag(abl, "--pairing-seed", "/eval/pairing_seed", Override::kUint, "Test pairing seed");

  auto* few = app.add_subcommand("fewshot", "Few-shot benchmark on the unseen labels");
  common(few);
  add_flag(few, "--n-shot", "/fewshot/n_shots", Override::kUintList, "Comma-separated shots");
  add_flag(few, "--methods", "/fewshot/methods", Override::kStringList,
           "Comma-separated augmentation methods");
  add_flag(few, "--episodes", "/fewshot/episodes", Override::kUint, "Episodes per shot count");
  add_flag(few, "--epochs", "/fewshot/epochs", Override::kUint, "Classifier epochs per episode");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  common(gc);
  add_flag(gc, "--instances", "/gradcheck/instances_per_case", Override::kUint,
           "Instances per primitive and loss");
  add_flag(gc, "--composites", "/gradcheck/composite_graphs", Override::kUint,
           "Random composite graphs");

  auto* comp = app.add_subcommand("compose", "Evaluate a set expression and list its neighbors");
  common(comp);
  comp->add_option("expression", expression, "e.g. sub(A,int(B,C)); leaves are sample indices "
                                             "or names bound with --bind");
  comp->add_option("--bind", binds, "NAME=INDEX leaf binding")->allow_extra_args(false);
  add_flag(comp, "--k", "/compose/k", Override::kUint, "Neighbors to list");
  add_flag(comp, "--analytic", "/compose/analytic", Override::kBool,
           "Untagged operators are analytic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config '" + config_path + "'");
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError("config '" + config_path + "' is not valid JSON: " + e.what());
      }
      if (!doc.is_object()) throw ConfigError("config '" + config_path + "' must be an object");
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value: " + s);
      std::string ptr = "/" + s.substr(0, eq);
      std::replace(ptr.begin(), ptr.end(), '.', '/');
      json v;
      try {
        v = json::parse(s.substr(eq + 1));
      } catch (const json::parse_error&) {
        v = s.substr(eq + 1);  // bare strings need no quotes
      }
      doc[json::json_pointer(ptr)] = v;
    }
    for (const auto& o : overrides[sub]) {
      if (o.opt->count() > 0) doc[json::json_pointer(o.pointer)] = override_value(o);
    }
    if (sub == gen && doc.value(json::json_pointer("/generator/clean_mode"), false) &&
        !doc.contains(json::json_pointer("/generator/prototype_mode"))) {
      doc["generator"]["prototype_mode"] = "disjoint_blocks";
    }
    if (!expression.empty()) doc["compose"]["expression"] = expression;
    for (const auto& b : binds) {
      const auto eq = b.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--bind expects NAME=INDEX: " + b);
      Override tmp{"", Override::kUint, b.substr(eq + 1), false, comp->get_option("--bind")};
      doc["compose"]["bindings"][b.substr(0, eq)] = override_value(tmp);
    }

    RunConfig cfg = from_json(doc);
    cfg.command = sub->get_name();
    fs::create_directories(cfg.out_dir());
    if (cfg.command == "gen") return cmd_gen(cfg);
    if (cfg.command == "pretrain-classifier") return cmd_pretrain(cfg);
    if (cfg.command == "train") return cmd_train(cfg);
    if (cfg.command == "eval-class") return cmd_eval_class(cfg);
    if (cfg.command == "eval-retrieval") return cmd_eval_retrieval(cfg);
    if (cfg.command == "ablate") return cmd_ablate(cfg);
    if (cfg.command == "fewshot") return cmd_fewshot(cfg);
    if (cfg.command == "gradcheck") return cmd_gradcheck(cfg);
    if (cfg.command == "compose") {
      if (cfg.compose.expression.empty()) throw ConfigError("compose: missing expression");
      return cmd_compose(cfg);
    }
    throw ConfigError("unknown subcommand " + cfg.command);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace laso::cli
