#include "escape/debias.hpp"
#include "escape/report.hpp"
#include "escape/server.hpp"
#include "escape/synthetic.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace escape;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string bundle;
  std::uint64_t seed = 0;
  std::string pair = "0,1";
  std::string concepts_file;
  std::string out_dir;
  double frex_weight = kDefaultFrexWeight;
  double uu_threshold = kUnknownUnknownThreshold;
  bool mean_disparity = false;
  bool printed_rbr = false;
  bool logit_gradient = false;
  bool mlp = false;
  int subgroup_q = 50;
};

AnalysisOptions options_of(const Common& c) {
  AnalysisOptions o;
  o.head.seed = c.seed;
  if (c.mlp) {
    o.head.kind = HeadKind::mlp;
    o.head.lr = 0.5;
  }
  o.frex_weight = c.frex_weight;
  o.uu_threshold = c.uu_threshold;
  o.subgroup_q = c.subgroup_q;
  o.disparity = c.mean_disparity ? DisparityMode::mean : DisparityMode::sum;
  o.rbr = c.printed_rbr ? RbrFormula::printed : RbrFormula::ratio;
  o.influence_target = c.logit_gradient ? GradientTarget::logit : GradientTarget::probability;
  return o;
}

int class_index(const DatasetBundle& b, const std::string& token) {
  for (int k = 0; k < b.num_classes(); ++k)
    if (b.classes[std::size_t(k)] == token) return k;
  try {
    std::size_t used = 0;
    const int k = std::stoi(token, &used);
    if (used == token.size() && k >= 0 && k < b.num_classes()) return k;
  } catch (const std::exception&) {
  }
  throw UsageError("unknown class '" + token + "'");
}

ClassPair parse_pair(const DatasetBundle& b, const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw UsageError("--pair expects negative,positive");
  ClassPair p{class_index(b, text.substr(0, comma)), class_index(b, text.substr(comma + 1))};
  if (p.negative == p.positive) throw UsageError("--pair needs two distinct classes");
  return p;
}

std::vector<Concept> build_concepts(const Workbench& wb, const std::string& file) {
  if (file.empty()) throw UsageError("--concepts is required");
  std::vector<Concept> out;
  std::size_t i = 0;
  for (auto& spec : load_concept_specs(file)) out.push_back(wb.make_concept("c" + std::to_string(++i), spec.name, spec.segment_ids));
  if (out.empty()) throw UsageError("concepts file defines no concepts");
  return out;
}

Index pick_concept(const std::vector<Concept>& concepts, const std::string& ref) {
  for (std::size_t i = 0; i < concepts.size(); ++i)
    if (concepts[i].name == ref || concepts[i].id == ref) return Index(i);
  throw UsageError("no concept named '" + ref + "'");
}

// Writes to <out>/<name> when --out is given, stdout otherwise.
template <typename Fn>
void emit(const Common& c, const std::string& name, Fn&& body) {
  if (c.out_dir.empty()) {
    body(std::cout);
    return;
  }
  fs::create_directories(c.out_dir);
  std::ofstream f(fs::path(c.out_dir) / name, std::ios::trunc);
  if (!f) throw Error(ErrorKind::io, "cannot write " + (fs::path(c.out_dir) / name).string());
  body(f);
}

std::shared_ptr<const DatasetBundle> open_bundle(const std::string& dir) {
  return std::make_shared<const DatasetBundle>(load_bundle(dir));
}

int run_validate(const Common& c) {
  const auto b = load_bundle(c.bundle);
  std::cout << "ok: " << b.instances.size() << " instances, " << b.segments.size() << " segments, dim " << b.dim
            << ", " << b.classes.size() << " classes\n";
  return 0;
}

int run_synth(const Common& c, const std::string& config) {
  if (c.out_dir.empty()) throw UsageError("--out is required");
  PlantConfig cfg;
  if (!config.empty()) cfg = load_plant_config(config, c.seed);
  cfg.seed = c.seed;
  const auto s = generate(cfg);
  write_bundle(s.bundle, c.out_dir);
  write_ground_truth(s, fs::path(c.out_dir) / "ground_truth.json");
  std::cerr << "wrote " << s.bundle.instances.size() << " instances and " << s.bundle.segments.size()
            << " segments to " << c.out_dir << '\n';
  return 0;
}

int run_diagnose(const Common& c) {
  const Workbench wb(open_bundle(c.bundle), options_of(c));
  const auto& b = wb.bundle();
  const auto rows = wb.evaluation_rows();
  const auto labels = b.labels(rows);
  const auto s = confusion_summary(wb.predictions(rows), labels, b.num_classes(), c.uu_threshold);
  emit(c, "diagnose.csv", [&](std::ostream& os) {
    CsvWriter csv(os);
    std::ostringstream header;
    header << "class,count,correct,accuracy,misclassified,unknown_unknowns";
    for (int k = 0; k < b.num_classes(); ++k) header << ",pred_" << k;
    for (int k = 0; k < b.num_classes(); ++k) header << ",uu_" << k;
    os << header.str() << '\n';
    auto line = [&](const std::string& name, int count, int correct, int mis, int uu, auto pred, auto uu_cell) {
      os << CsvWriter::quote(name) << ',' << count << ',' << correct << ','
         << CsvWriter::format(count ? double(correct) / count : 0.0) << ',' << mis << ',' << uu;
      for (int k = 0; k < b.num_classes(); ++k) os << ',' << pred(k);
      for (int k = 0; k < b.num_classes(); ++k) os << ',' << uu_cell(k);
      os << '\n';
    };
    for (int k = 0; k < b.num_classes(); ++k)
      line(b.classes[std::size_t(k)], s.matrix.row(k).sum(), s.matrix(k, k), s.misclassified[std::size_t(k)],
           s.unknown_unknowns[std::size_t(k)], [&](int j) { return s.matrix(k, j); },
           [&](int j) { return s.uu_cells(k, j); });
    line("all", s.total(), int(s.matrix.trace()), s.total() - int(s.matrix.trace()), s.uu_cells.sum(),
         [&](int j) { return s.matrix.col(j).sum(); }, [&](int j) { return s.uu_cells.col(j).sum(); });
  });
  if (!c.out_dir.empty()) save_head(wb.head(), fs::path(c.out_dir) / "head.json");
  return 0;
}

int run_associate(const Common& c, const std::string& split_name) {
  const Workbench wb(open_bundle(c.bundle), options_of(c));
  const auto pair = parse_pair(wb.bundle(), c.pair);
  const auto concepts = build_concepts(wb, c.concepts_file);
  Split split;
  try {
    split = parse_split(split_name);
  } catch (const Error&) {
    throw UsageError("--split must be train or test");
  }
  const auto rows = wb.bundle().rows(split, pair);
  if (rows.empty()) throw Error(ErrorKind::invalid_argument, "no instances in the selected split and pair");
  const auto t = wb.associations(rows, concepts);
  emit(c, "associations.csv", [&](std::ostream& os) {
    CsvWriter csv(os);
    csv.row("instance_id", "label", "concept_id", "concept", "raw_score", "z_score", "raw_rank", "ex_rank", "frex",
            "comb_rank", "top_concept");
    for (Index i = 0; i < t.size(); ++i)
      for (Index k = 0; k < t.concept_count(); ++k)
        csv.row(t.instance_ids[std::size_t(i)], wb.bundle().instances[std::size_t(rows[std::size_t(i)])].label,
                concepts[std::size_t(k)].id, concepts[std::size_t(k)].name, t.raw(i, k), t.z(i, k), t.raw_rank(i, k),
                t.ex_rank(i, k), t.frex(i, k), t.comb_rank(i, k), concepts[std::size_t(t.top_concept[std::size_t(i)])].id);
  });
  return 0;
}

int run_disparity(const Common& c) {
  const Workbench wb(open_bundle(c.bundle), options_of(c));
  const auto pair = parse_pair(wb.bundle(), c.pair);
  const auto concepts = build_concepts(wb, c.concepts_file);
  const auto rows = wb.bundle().rows(Split::train, pair);
  const auto labels = wb.bundle().labels(rows);
  const auto t = wb.associations(rows, concepts);
  emit(c, "disparity.csv", [&](std::ostream& os) {
    CsvWriter csv(os);
    csv.row("concept_id", "concept", "disparity", "positive_sum", "negative_sum", "positive_mean", "negative_mean",
            "positive_count", "negative_count");
    for (std::size_t k = 0; k < concepts.size(); ++k) {
      const auto d = disparity_terms(t.frex_column(Index(k)), labels, pair);
      csv.row(concepts[k].id, concepts[k].name, d.disparity(wb.options().disparity), d.positive_sum, d.negative_sum,
              d.positive_mean(), d.negative_mean(), d.positive_count, d.negative_count);
    }
  });
  return 0;
}

int run_influence(const Common& c) {
  const Workbench wb(open_bundle(c.bundle), options_of(c));
  const auto& b = wb.bundle();
  const auto pair = parse_pair(b, c.pair);
  const auto concepts = build_concepts(wb, c.concepts_file);
  const auto rows = wb.evaluation_rows();
  const auto members = pair_subset(wb.predictions(rows), b.labels(rows), pair);
  std::vector<Index> fn, fp;
  for (const auto& m : members) {
    if (m.confusion == ConfusionCase::FN) fn.push_back(rows[m.position]);
    if (m.confusion == ConfusionCase::FP) fp.push_back(rows[m.position]);
  }
  emit(c, "influence.csv", [&](std::ostream& os) {
    CsvWriter csv(os);
    csv.row("concept_id", "concept", "group", "target_class", "size", "positive_fraction", "mean_derivative");
    for (const auto& concept_ : concepts) {
      for (const auto& [group, members_rows, target] :
           {std::tuple{"FN", &fn, pair.negative}, std::tuple{"FP", &fp, pair.positive}}) {
        if (members_rows->empty()) {
          csv.row(concept_.id, concept_.name, group, b.classes[std::size_t(target)], 0, "", "");
          continue;
        }
        const auto f = concept_influence(wb.head(), wb.gather(*members_rows), concept_.vector, target,
                                         wb.options().influence_target);
        csv.row(concept_.id, concept_.name, group, b.classes[std::size_t(target)], f.size, f.positive_fraction,
                f.mean_derivative);
      }
    }
  });
  return 0;
}

std::vector<int> parse_grid(const std::string& text) {
  std::vector<int> grid;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      grid.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw UsageError("--grid expects comma-separated integers");
    }
  }
  return grid;
}

int run_curve(const Common& c, const std::string& concept_ref, bool evaluate, const std::string& grid_text) {
  if (concept_ref.empty()) throw UsageError("--concept is required");
  const Workbench wb(open_bundle(c.bundle), options_of(c));
  const auto pair = parse_pair(wb.bundle(), c.pair);
  const auto concepts = build_concepts(wb, c.concepts_file);
  const Index target = pick_concept(concepts, concept_ref);
  const auto curve = grid_text.empty() ? debias_curve(wb, concepts, target, pair, evaluate)
                                       : debias_curve(wb, concepts, target, pair, parse_grid(grid_text), evaluate);
  emit(c, "curve.csv", [&](std::ostream& os) { write_curve_csv(os, curve); });
  return 0;
}

int run_evaluate(const Common& c, const std::string& concept_ref, int n, double tolerance, const std::string& control) {
  if (concept_ref.empty()) throw UsageError("--concept is required");
  if (!control.empty() && control != "random") throw UsageError("--control supports only 'random'");
  const Workbench wb(open_bundle(c.bundle), options_of(c));
  const auto pair = parse_pair(wb.bundle(), c.pair);
  const auto concepts = build_concepts(wb, c.concepts_file);
  const Index target = pick_concept(concepts, concept_ref);
  if (n < 0) n = recommend_n(debias_curve(wb, concepts, target, pair, false), tolerance);

  std::vector<DebiasEvaluation> results{evaluate_debias(wb, concepts, target, pair, n, CandidateSource::ranked)};
  if (!control.empty())
    results.push_back(evaluate_debias(wb, concepts, target, pair, n, CandidateSource::random, c.seed + 1));
  emit(c, "evaluate.csv", [&](std::ostream& os) {
    CsvWriter csv(os);
    csv.row("source", "concept", "n", "acc_before", "acc_after", "subgroup_before", "subgroup_after",
            "disparity_before", "disparity_after", "pct_bias_mitigated");
    for (const auto& e : results)
      csv.row(e.source == CandidateSource::ranked ? "concept" : "random", concepts[std::size_t(target)].name, e.n,
              e.acc_before, e.acc_after, e.subgroup_before, e.subgroup_after, e.disparity_before, e.disparity_after,
              e.pct_bias_mitigated);
  });
  return 0;
}

HttpServer* g_server = nullptr;

int run_serve(const Common& c, const std::string& host, int port) {
  Session session(open_bundle(c.bundle), options_of(c));
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    save_head(session.head(), fs::path(c.out_dir) / "head.json");
  }
  HttpServer server(session);
  const int bound = server.bind(host, port);
  if (bound < 0) throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving on http://" << host << ':' << bound << " (seed " << c.seed << ")\n";
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Error diagnostics over activation bundles"};
  app.require_subcommand(1);
  Common c;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", c.seed, "Seed for head training and controls")->envname("ESCAPE_SEED");
  };
  auto add_analysis = [&](CLI::App* cmd) {
    add_seed(cmd);
    cmd->add_option("--pair", c.pair, "Class pair as negative,positive (index or name)");
    cmd->add_option("--out", c.out_dir, "Write results into this directory instead of stdout");
    cmd->add_option("--frex-weight", c.frex_weight, "Weight of the exclusive ranking")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--uu-threshold", c.uu_threshold, "Brier threshold for unknown-unknowns")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--subgroup-q", c.subgroup_q, "Size of the concept-associated test subgroup")->check(CLI::PositiveNumber);
    cmd->add_flag("--mean-disparity", c.mean_disparity, "Use class means instead of sums for disparity");
    cmd->add_flag("--printed-rbr", c.printed_rbr, "Use the 1-(after-before)/before ratio form");
    cmd->add_flag("--logit-gradient", c.logit_gradient, "Differentiate logits instead of probabilities");
    cmd->add_flag("--mlp", c.mlp, "Use the one-hidden-layer head");
  };
  auto add_concepts = [&](CLI::App* cmd) {
    cmd->add_option("--concepts", c.concepts_file, "JSON list of {name, segment_ids}")->required();
  };

  auto* validate = app.add_subcommand("validate", "Check a bundle directory");
  validate->add_option("bundle", c.bundle)->required();

  std::string config;
  auto* synth = app.add_subcommand("synth", "Generate a planted-bias bundle");
  add_seed(synth);
  synth->add_option("--out", c.out_dir, "Output bundle directory")->required();
  synth->add_option("--config", config, "JSON plant configuration");

  auto* diagnose = app.add_subcommand("diagnose", "Accuracy, confusion and unknown-unknown counts");
  diagnose->add_option("bundle", c.bundle)->required();
  add_analysis(diagnose);

  std::string split = "train";
  auto* associate = app.add_subcommand("associate", "Association table");
  associate->add_option("bundle", c.bundle)->required();
  add_analysis(associate);
  add_concepts(associate);
  associate->add_option("--split", split, "train or test");

  auto* disparity = app.add_subcommand("disparity", "Between-class disparity per concept");
  disparity->add_option("bundle", c.bundle)->required();
  add_analysis(disparity);
  add_concepts(disparity);

  auto* influence = app.add_subcommand("influence", "Concept influence on FN and FP groups");
  influence->add_option("bundle", c.bundle)->required();
  add_analysis(influence);
  add_concepts(influence);

  std::string concept_ref, grid;
  bool evaluate_flag = false;
  auto* curve = app.add_subcommand("curve", "Remaining-bias curve for one concept");
  curve->add_option("bundle", c.bundle)->required();
  add_analysis(curve);
  add_concepts(curve);
  curve->add_option("--concept", concept_ref, "Concept name or id")->required();
  curve->add_flag("--evaluate", evaluate_flag, "Retrain and report accuracies per point");
  curve->add_option("--grid", grid, "Comma-separated instance counts, starting at 0");

  int n = -1;
  double tolerance = 0.5;
  std::string control;
  auto* evaluate = app.add_subcommand("evaluate", "Before/after accuracy for one debias run");
  evaluate->add_option("bundle", c.bundle)->required();
  add_analysis(evaluate);
  add_concepts(evaluate);
  evaluate->add_option("--concept", concept_ref, "Concept name or id")->required();
  evaluate->add_option("--n", n, "Instances to debias (default: recommended)");
  evaluate->add_option("--t", tolerance, "Tolerance used when --n is omitted")->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--control", control, "Also run a control: random");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--bundle", c.bundle)->required();
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve->add_option("--host", host);
  add_analysis(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*validate) return run_validate(c);
    if (*synth) return run_synth(c, config);
    if (*diagnose) return run_diagnose(c);
    if (*associate) return run_associate(c, split);
    if (*disparity) return run_disparity(c);
    if (*influence) return run_influence(c);
    if (*curve) return run_curve(c, concept_ref, evaluate_flag, grid);
    if (*evaluate) return run_evaluate(c, concept_ref, n, tolerance, control);
    if (*serve) return run_serve(c, host, port);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
