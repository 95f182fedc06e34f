// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Pass --skip-ablation to train only the default row for criterion 6.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "shcanet/cli/checks.hpp"
#include "shcanet/cli/commands.hpp"
#include "shcanet/data/dataset.hpp"
#include "shcanet/data/synthetic.hpp"

using namespace shcanet;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  void add(const checks::Outcome& o) {
    pass = pass && o.pass;
    if (!o.pass) notes.push_back(o.name + ": " + o.detail);
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& title, const Verdict& v, const std::string& summary) {
  if (!v.pass) ++failures;
  std::printf("%s  criterion %d: %s (%s)\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), summary.c_str());
  for (const auto& n : v.notes) std::printf("      %s\n", n.c_str());
  std::fflush(stdout);
}

void single(int id, const std::string& title, const std::function<checks::Outcome()>& fn) {
  Verdict v;
  const auto o = fn();
  v.add(o);
  report(id, title, v, o.detail);
}

void gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  const auto outcomes = checks::gradient_suite();
  for (const auto& o : outcomes) v.add(o);
  const double secs = seconds_since(t0);
  if (secs >= 120) {
    v.pass = false;
    v.notes.push_back("runtime over 2 min");
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu checks, %.1f s", outcomes.size(), secs);
  report(1, "gradient suite", v, buf);
}

void overfit(bool all_rows) {
  Verdict v;
  std::string summary;
  const cli::AblationRow main_row{};
  std::vector<cli::AblationRow> rows{main_row};
  if (all_rows)
    for (const auto& r : cli::all_rows())
      if (!(r == main_row)) rows.push_back(r);
  for (const auto& row : rows) {
    const auto r = checks::overfit(row);
    const double ratio = r.step10_loss > 0 ? r.final_loss / r.step10_loss : 1.0;
    const bool is_main = row == main_row;
    bool ok = r.best_map == 1.0 && r.steps <= 500;
    if (is_main) ok = ok && ratio <= 0.10 && r.seconds < 300;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s: best mAP %.4f, first 1.0 at epoch %d, loss ratio %.3f, %zu steps, %.1f s",
                  r.row.c_str(), r.best_map, r.first_perfect_epoch, ratio, r.steps, r.seconds);
    std::printf("      %s %s\n", ok ? "ok  " : "bad ", buf);
    std::fflush(stdout);
    v.pass = v.pass && ok;
    if (is_main) summary = buf;
  }
  if (!all_rows) summary += "; ablation rows skipped";
  report(6, "overfit sanity and ablation rows", v, summary);
}

struct Run {
  int code;
  std::string out, err;
};

Run cli_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void determinism() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / ("shcanet_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto set = data::make_rectangles(data::SyntheticConfig{}, 5);
  const auto manifest = data::write_dataset(root / "data", set, {{"face", "mask"}, {}});
  {
    std::ofstream f(root / "run.json");
    f << R"({"data": {"train": "data/manifest.tsv"}, "model": {"input_size": 64},
      "optim": {"batch_size": 4, "epochs": 3, "warmup_epochs": 1}, "seed": 17})";
  }
  const std::string cfg = (root / "run.json").string();
  auto step = [&](const std::string& what, std::vector<std::string> args) {
    const auto r = cli_run(std::move(args));
    if (r.code != 0) {
      v.pass = false;
      v.notes.push_back(what + " exited " + std::to_string(r.code) + ": " + r.err);
    }
  };
  for (const char* d : {"t1", "t2"}) step("train", {"train", "--config", cfg, "--out", (root / d).string()});
  const std::string w = (root / "t1/last.weights").string();
  for (const char* d : {"e1", "e2"})
    step("eval", {"eval", "--config", cfg, "--weights", w, "--out", (root / d).string()});
  for (const char* d : {"d1", "d2"})
    step("detect", {"detect", "--config", cfg, "--weights", w, "--conf", "0.01", "--manifest", manifest.string(), "--out",
                    (root / d).string()});

  int compared = 0;
  auto same_tree = [&](const char* a, const char* b) {
    for (const auto& e : fs::directory_iterator(root / a)) {
      const fs::path other = root / b / e.path().filename();
      ++compared;
      if (!fs::exists(other) || data::read_text(e.path()) != data::read_text(other)) {
        v.pass = false;
        v.notes.push_back(e.path().filename().string() + " differs between " + a + " and " + b);
      }
    }
  };
  if (v.pass) {
    same_tree("t1", "t2");
    same_tree("e1", "e2");
    same_tree("d1", "d2");
  }
  fs::remove_all(root);
  report(9, "CLI determinism", v, std::to_string(compared) + " output files compared byte for byte");
}

}  // namespace

int main(int argc, char** argv) {
  bool all_rows = true;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--skip-ablation") all_rows = false;

  gradients();
  single(2, "loss oracles", checks::loss_oracles);
  single(3, "IoU oracle", checks::iou_oracle);
  single(4, "metric oracles", checks::metric_oracles);
  single(5, "NMS equivalence", checks::nms_equivalence);
  overfit(all_rows);
  single(7, "anchor clustering", checks::anchor_recovery);
  single(8, "structural parity", checks::structural_parity);
  determinism();
  single(10, "letterbox and mosaic invariants", checks::letterbox_mosaic);

  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
