#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "critloop/self_improve.hpp"
#include "critloop/test_time.hpp"

namespace critloop {

/// Fixed 6 decimal places, so reruns produce the same bytes.
std::string format_number(double v);

// Column order is part of the contract.
inline constexpr const char* kCurveHeader = "mode,K,maj_at_k,pass_at_k";
inline constexpr const char* kDifficultyHeader = "mode,level,queries,accuracy";
inline constexpr const char* kHistogramHeader = "bin_low,bin_high,queries";
inline constexpr const char* kLedgerHeader =
    "t,actor_id,sampled,correct_initial,incorrect_initial,critiques_issued,refinements_issued,"
    "refinements_correct,failures,duplicate_solutions,solutions_l1,solutions_l2,solutions_l3,solutions_l4,"
    "solutions_l5,proportion_l1,proportion_l2,proportion_l3,proportion_l4,proportion_l5";
inline constexpr const char* kTailHeader = "t,delta_l1,delta_l2,delta_l3,delta_l4,delta_l5";

std::string curve_csv(const EvalReport& r);
std::string difficulty_csv(const EvalReport& r);
std::string histogram_csv(const EvalReport& r);
std::string ledger_csv(const std::vector<IterationLedger>& ledgers);
std::string tail_csv(const std::vector<std::array<double, 5>>& deltas);

/// curves.csv, difficulty.csv, histogram.csv and report.json under `dir`.
std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& dir);
/// ledgers.csv and ledgers.json under `dir`; tail.csv too when a baseline is given.
std::vector<std::filesystem::path> emit_ledgers(const std::vector<IterationLedger>& ledgers,
                                                const std::vector<IterationLedger>& baseline,
                                                const std::filesystem::path& dir);

}  // namespace critloop
