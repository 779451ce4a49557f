#include "critloop/report.hpp"

#include <cstdio>

#include "critloop/store.hpp"

namespace critloop {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

std::string curve_csv(const EvalReport& r) {
  std::string out = std::string(kCurveHeader) + "\n";
  for (const auto& [k, maj] : r.maj_at_k) {
    auto p = r.pass_at_k.find(k);
    out += r.mode + "," + std::to_string(k) + "," + format_number(maj) + "," +
           (p == r.pass_at_k.end() ? std::string{} : format_number(p->second)) + "\n";
  }
  return out;
}

std::string difficulty_csv(const EvalReport& r) {
  std::string out = std::string(kDifficultyHeader) + "\n";
  for (std::size_t l = 0; l < 5; ++l) {
    if (!r.per_difficulty[l]) continue;
    out += r.mode + "," + std::to_string(l + 1) + "," + std::to_string(r.per_difficulty_n[l]) + "," +
           format_number(*r.per_difficulty[l]) + "\n";
  }
  return out;
}

std::string histogram_csv(const EvalReport& r) {
  std::string out = std::string(kHistogramHeader) + "\n";
  std::size_t total = 0;
  for (auto n : r.correct_fraction_histogram) total += n;
  if (total == 0) return out;
  for (std::size_t b = 0; b < 10; ++b)
    out += format_number(b / 10.0) + "," + format_number((b + 1) / 10.0) + "," +
           std::to_string(r.correct_fraction_histogram[b]) + "\n";
  return out;
}

std::string ledger_csv(const std::vector<IterationLedger>& ledgers) {
  std::string out = std::string(kLedgerHeader) + "\n";
  for (const auto& l : ledgers) {
    const auto& c = l.counts;
    out += std::to_string(l.t) + "," + l.actor_id;
    for (auto v : {c.sampled, c.correct_initial, c.incorrect_initial, c.critiques_issued, c.refinements_issued,
                   c.refinements_correct, c.failures, c.duplicate_solutions})
      out += "," + std::to_string(v);
    for (auto v : l.solutions_per_level) out += "," + std::to_string(v);
    for (auto v : l.proportion_per_level) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

std::string tail_csv(const std::vector<std::array<double, 5>>& deltas) {
  std::string out = std::string(kTailHeader) + "\n";
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    out += std::to_string(t + 1);
    for (double d : deltas[t]) out += "," + format_number(d);
    out += "\n";
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files{dir / "curves.csv", dir / "difficulty.csv", dir / "histogram.csv",
                                           dir / "report.json"};
  write_file_atomic(files[0], curve_csv(r));
  write_file_atomic(files[1], difficulty_csv(r));
  write_file_atomic(files[2], histogram_csv(r));
  write_file_atomic(files[3], make_record(to_json(r)).dump(2) + "\n");
  return files;
}

std::vector<std::filesystem::path> emit_ledgers(const std::vector<IterationLedger>& ledgers,
                                                const std::vector<IterationLedger>& baseline,
                                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files{dir / "ledgers.csv", dir / "ledgers.json"};
  write_file_atomic(files[0], ledger_csv(ledgers));
  json arr = json::array();
  for (const auto& l : ledgers) arr.push_back(to_json(l));
  write_file_atomic(files[1], arr.dump(2) + "\n");
  if (!baseline.empty()) {
    files.push_back(dir / "tail.csv");
    write_file_atomic(files.back(), tail_csv(tail_narrowing_report(ledgers, baseline)));
  }
  return files;
}

}  // namespace critloop
