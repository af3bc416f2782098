#include "support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args, const std::string& env = {}) {
  TempDir tmp("cliout");
  const auto out = tmp.path / "stdout";
  const std::string cmd = env + " \"" ESCAPE_CLI "\" " + args + " > \"" + out.string() + "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  std::ifstream f(out);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, std::string(std::istreambuf_iterator<char>(f), {})};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

struct SynthBundle {
  TempDir dir{"clibundle"};
  std::string path = (dir.path / "b").string();
  std::string concepts = "--concepts \"" + path + "/ground_truth.json\"";
  SynthBundle() { REQUIRE(run("synth --seed 4 --out \"" + path + "\"").code == 0); }
};

}  // namespace

TEST_CASE("validate exit codes") {
  SynthBundle b;
  const auto ok = run("validate \"" + b.path + "\"");
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("ok: 1200 instances", 0) == 0);

  fs::resize_file(fs::path(b.path) / "instances.f32", 1000);
  CHECK(run("validate \"" + b.path + "\"").code == 1);
  CHECK(run("validate").code == 2);
  CHECK(run("no-such-command").code == 2);
  CHECK(run("").code == 2);
}

TEST_CASE("diagnose matches the library and honours ESCAPE_SEED") {
  SynthBundle b;
  const auto r = run("diagnose \"" + b.path + "\" --seed 8");
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "class,count,correct,accuracy,misclassified,unknown_unknowns,pred_0,pred_1,uu_0,uu_1");

  auto bundle = std::make_shared<const DatasetBundle>(load_bundle(b.path));
  AnalysisOptions o;
  o.head.seed = 8;
  const Workbench wb(bundle, o);
  const auto eval = wb.evaluation_rows();
  const auto s = confusion_summary(wb.predictions(eval), bundle->labels(eval), 2);
  std::ostringstream expected;
  expected << "all," << s.total() << ',' << s.matrix.trace() << ',' << CsvWriter::format(s.accuracy());
  CHECK(rows[3].rfind(expected.str(), 0) == 0);

  CHECK(run("diagnose \"" + b.path + "\"", "ESCAPE_SEED=8").out == r.out);
  // the flag wins over the environment
  const auto out = b.dir.path / "flag";
  REQUIRE(run("diagnose \"" + b.path + "\" --seed 8 --out \"" + out.string() + "\"", "ESCAPE_SEED=9").code == 0);
  CHECK(load_head(out / "head.json").meta.seed == 8);
}

TEST_CASE("analysis subcommands produce headed csv") {
  SynthBundle b;
  const auto assoc = run("associate \"" + b.path + "\" " + b.concepts + " --split test");
  REQUIRE(assoc.code == 0);
  const auto a = lines(assoc.out);
  CHECK(a[0] == "instance_id,label,concept_id,concept,raw_score,z_score,raw_rank,ex_rank,frex,comb_rank,top_concept");
  CHECK(a.size() == 1 + 400 * 3);

  const auto disp = run("disparity \"" + b.path + "\" " + b.concepts);
  REQUIRE(disp.code == 0);
  const auto d = lines(disp.out);
  REQUIRE(d.size() == 4);
  CHECK(d[1].rfind("c1,planted,", 0) == 0);
  CHECK(d[1].find(",-") == std::string::npos);  // planted disparity is positive toward class1

  const auto inf = run("influence \"" + b.path + "\" " + b.concepts + " --pair class0,class1");
  REQUIRE(inf.code == 0);
  CHECK(lines(inf.out).size() == 1 + 3 * 2);

  const auto curve = run("curve \"" + b.path + "\" " + b.concepts + " --concept planted --grid 0,10,20");
  REQUIRE(curve.code == 0);
  CHECK(lines(curve.out).size() == 4);
  CHECK(lines(curve.out)[1].rfind("0,1,", 0) == 0);

  const auto ev = run("evaluate \"" + b.path + "\" " + b.concepts + " --concept planted --control random");
  REQUIRE(ev.code == 0);
  const auto e = lines(ev.out);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == "source,concept,n,acc_before,acc_after,subgroup_before,subgroup_after,disparity_before,disparity_after,"
                "pct_bias_mitigated");
  CHECK(e[1].rfind("concept,planted,", 0) == 0);
  CHECK(e[2].rfind("random,planted,", 0) == 0);

  CHECK(run("curve \"" + b.path + "\" " + b.concepts + " --concept missing").code == 2);
  CHECK(run("disparity \"" + b.path + "\" " + b.concepts + " --pair 0,0").code == 2);
  CHECK(run("disparity \"" + b.path + "\" " + b.concepts + " --pair 0,7").code == 2);
  CHECK(run("disparity \"" + b.path + "\"").code == 2);
  CHECK(run("evaluate \"" + b.path + "\" " + b.concepts + " --concept planted --n 99999").code == 1);
}

TEST_CASE("diagnose writes files and the head under --out") {
  SynthBundle b;
  const auto out = b.dir.path / "diag";
  REQUIRE(run("diagnose \"" + b.path + "\" --seed 2 --out \"" + out.string() + "\"").code == 0);
  CHECK(fs::exists(out / "diagnose.csv"));
  const auto head = load_head(out / "head.json");
  CHECK(head.meta.seed == 2);
  CHECK(head.num_classes() == 2);
}
