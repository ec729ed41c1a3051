#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omdpg/baselines.hpp"

namespace omdpg::harness {

// Everything a training run needs. Config files are flat JSON carrying
// exactly these keys (any subset; missing keys keep the defaults below);
// unknown keys are an error so a typo never silently trains the wrong thing.
// The agent grouping itself travels implicitly: the env defines groups and
// ordering, the algorithm variant's sharing regime rewrites the assignment.
struct RunConfig {
  std::string env = "signal_lever";
  int horizon = 0;  // 0 keeps the env default
  std::string algo = "omdpg";
  int heads = 0;  // 0 picks the variant default
  double beta = 0.5;
  double lambda_pu = 0.1;
  double smooth_sigma = 0.2;
  double smooth_clip = 0.5;
  double tau = 0.005;
  double gamma = 0.95;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::vector<int> actor_hidden = {64, 64};
  std::vector<int> critic_hidden = {128, 128};
  double expl_sigma = 0.1;
  double expl_clip = 0.5;
  double st_temp_start = 1.0;  // relaxed one-hot temperature, annealed
  double st_temp_end = 0.5;    // linearly over the run
  long buffer_capacity = 100000;
  long batch_size = 64;
  long total_steps = 50000;
  long warmup_steps = 1000;  // env steps before updates begin
  long train_interval = 1;   // env steps between updates
  long eval_interval = 1000;
  int eval_episodes = 10;
  double drift_lr = 0.1;  // ascent step for the ratio diagnostic
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs";

  void validate() const;
};

// Strict parse of a flat JSON object; wrong types and unknown keys throw.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

struct RunResult {
  std::string metrics_path;
  long evals = 0;
  long updates = 0;
  double last_return = 0.0;   // mean greedy return at the final eval
  double last_success = 0.0;  // optimum-hit fraction (exact game only)
  bool has_success = false;
  double wall_clock_s = 0.0;
};

// One seeded run: explore rollouts into the buffer, an update every
// train_interval steps past warmup, greedy evaluation every eval_interval.
// Writes <out_dir>/metrics_<algo>_seed<seed>.jsonl (schema line first, one
// JSON object per eval) plus a .meta.json sidecar holding wall-clock, which
// keeps the metrics bytes identical across reruns of the same config+seed.
RunResult run_training(const RunConfig& cfg, std::uint64_t seed);

struct SweepFailure {
  std::uint64_t seed = 0;
  int exit_code = 1;  // 2 config, 3 numeric, 1 anything else
  std::string message;
};

struct SweepResult {
  std::vector<RunResult> runs;  // completed runs, seed order
  std::vector<SweepFailure> failures;
};

// Independent runs over the seed list, at most `jobs` in flight. Runs share
// nothing, so concurrent and serial execution write identical files. A
// failed seed is recorded and the rest continue.
SweepResult sweep(const RunConfig& cfg,
                  const std::vector<std::uint64_t>& seeds, int jobs);

// Mean curve with a +-1 population-std band per algorithm, read from metrics
// files; writes a self-contained SVG. Throws ConfigError when no metrics
// line contributes a point.
void emit_plot(const std::vector<std::string>& metrics_files,
               const std::string& out_path);

// Ratio diagnostic on the configured exact game at cfg.drift_lr, from zero
// logits. Writes drift.csv (one row per scheme and agent) and drift.txt (a
// short human summary) into out_dir; returns the CSV path.
std::string drift_report(const RunConfig& cfg, const std::string& out_dir);

// Max relative finite-difference error over the repo's gradient surfaces:
// raw networks, the ensemble critic loss with its out-of-distribution term,
// and both actor objectives; `rounds` random configurations each.
double gradcheck_suite(int rounds, std::uint64_t seed);

// CLI entry (train / sweep / plot / drift / gradcheck). Returns the process
// exit code: 0 ok, 2 config or usage error, 3 numeric abort.
int cli_main(int argc, const char* const* argv);

}  // namespace omdpg::harness
