#include "omdpg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "omdpg/oracle.hpp"
#include "omdpg/snapshot.hpp"

namespace omdpg::harness {

using nlohmann::json;

void RunConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw ConfigError("gamma must lie in [0,1)");
  if (actor_lr <= 0.0 || critic_lr <= 0.0)
    throw ConfigError("learning rates must be positive");
  if (tau <= 0.0 || tau > 1.0) throw ConfigError("tau must lie in (0,1]");
  if (beta < 0.0 || lambda_pu < 0.0)
    throw ConfigError("pessimism weights must be nonnegative");
  if (smooth_sigma < 0.0 || smooth_clip < 0.0)
    throw ConfigError("smoothing parameters must be nonnegative");
  if (expl_sigma < 0.0 || expl_clip <= 0.0)
    throw ConfigError("exploration noise parameters invalid");
  if (st_temp_start <= 0.0 || st_temp_end <= 0.0)
    throw ConfigError("temperatures must be positive");
  if (buffer_capacity <= 0) throw ConfigError("buffer capacity must be positive");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (total_steps < 0 || warmup_steps < 0)
    throw ConfigError("step counts must be nonnegative");
  if (train_interval <= 0 || eval_interval <= 0 || eval_episodes <= 0)
    throw ConfigError("intervals and eval episodes must be positive");
  if (horizon < 0) throw ConfigError("horizon must be nonnegative");
  if (heads < 0 || heads == 1)
    throw ConfigError("head count must be 0 (variant default) or at least 2");
  for (int h : actor_hidden)
    if (h <= 0) throw ConfigError("actor hidden widths must be positive");
  for (int h : critic_hidden)
    if (h <= 0) throw ConfigError("critic hidden widths must be positive");
  if (drift_lr < 0.0) throw ConfigError("drift_lr must be nonnegative");
  if (seeds.empty()) throw ConfigError("at least one seed required");
  std::vector<std::uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("seeds must be distinct");
  if (out_dir.empty()) throw ConfigError("output directory must be set");
  baselines::parse_algo(algo);
  envs::make_env(env, horizon);
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  auto num = [](const json& v, const std::string& key) -> double {
    if (!v.is_number())
      throw ConfigError("config key '" + key + "' must be a number");
    return v.get<double>();
  };
  auto integer = [](const json& v, const std::string& key) -> long {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError("config key '" + key + "' must be an integer");
    return v.get<long>();
  };
  auto str = [](const json& v, const std::string& key) -> std::string {
    if (!v.is_string())
      throw ConfigError("config key '" + key + "' must be a string");
    return v.get<std::string>();
  };
  auto int_list = [&](const json& v, const std::string& key) {
    if (!v.is_array())
      throw ConfigError("config key '" + key + "' must be an array");
    std::vector<int> out;
    for (const auto& e : v) out.push_back(static_cast<int>(integer(e, key)));
    return out;
  };
  auto seed_list = [](const json& v, const std::string& key) {
    if (!v.is_array())
      throw ConfigError("config key '" + key + "' must be an array");
    std::vector<std::uint64_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0))
        throw ConfigError("config key '" + key + "' holds a bad seed");
      out.push_back(e.get<std::uint64_t>());
    }
    return out;
  };

  RunConfig cfg;
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    const json& v = item.value();
    if (key == "env") cfg.env = str(v, key);
    else if (key == "horizon") cfg.horizon = static_cast<int>(integer(v, key));
    else if (key == "algo") cfg.algo = str(v, key);
    else if (key == "heads") cfg.heads = static_cast<int>(integer(v, key));
    else if (key == "beta") cfg.beta = num(v, key);
    else if (key == "lambda_pu") cfg.lambda_pu = num(v, key);
    else if (key == "smooth_sigma") cfg.smooth_sigma = num(v, key);
    else if (key == "smooth_clip") cfg.smooth_clip = num(v, key);
    else if (key == "tau") cfg.tau = num(v, key);
    else if (key == "gamma") cfg.gamma = num(v, key);
    else if (key == "actor_lr") cfg.actor_lr = num(v, key);
    else if (key == "critic_lr") cfg.critic_lr = num(v, key);
    else if (key == "actor_hidden") cfg.actor_hidden = int_list(v, key);
    else if (key == "critic_hidden") cfg.critic_hidden = int_list(v, key);
    else if (key == "expl_sigma") cfg.expl_sigma = num(v, key);
    else if (key == "expl_clip") cfg.expl_clip = num(v, key);
    else if (key == "st_temp_start") cfg.st_temp_start = num(v, key);
    else if (key == "st_temp_end") cfg.st_temp_end = num(v, key);
    else if (key == "buffer_capacity") cfg.buffer_capacity = integer(v, key);
    else if (key == "batch_size") cfg.batch_size = integer(v, key);
    else if (key == "total_steps") cfg.total_steps = integer(v, key);
    else if (key == "warmup_steps") cfg.warmup_steps = integer(v, key);
    else if (key == "train_interval") cfg.train_interval = integer(v, key);
    else if (key == "eval_interval") cfg.eval_interval = integer(v, key);
    else if (key == "eval_episodes")
      cfg.eval_episodes = static_cast<int>(integer(v, key));
    else if (key == "drift_lr") cfg.drift_lr = num(v, key);
    else if (key == "seeds") cfg.seeds = seed_list(v, key);
    else if (key == "out_dir") cfg.out_dir = str(v, key);
    else throw ConfigError("unknown config key: " + key);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

RunResult run_training(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();

  auto env = envs::make_env(cfg.env, cfg.horizon);
  envs::ActionCodec codec = env->codec();
  baselines::AlgoSpec algo = baselines::parse_algo(cfg.algo);
  const int heads = cfg.heads > 0 ? cfg.heads : algo.default_heads;
  envs::GroupSpec shared = baselines::apply_sharing(env->groups(), algo.sharing);

  auto actors = ccga::GroupedActors::make(
      shared, env->discrete_actions(), env->obs_dim(), env->action_dim(),
      cfg.actor_hidden, cfg.actor_lr, seed);
  actors.expl_sigma = cfg.expl_sigma;
  actors.expl_clip = cfg.expl_clip;
  actors.st_temp = cfg.st_temp_start;
  auto ensemble = gqc::CriticEnsemble::make(heads, env->state_dim(),
                                            codec.joint_dim(),
                                            cfg.critic_hidden, cfg.critic_lr,
                                            seed);
  replay::Buffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  gqc::PUConfig pu{cfg.beta, cfg.lambda_pu, cfg.smooth_sigma, cfg.smooth_clip};
  pu.validate();

  // every stochastic draw descends from the run seed through a named stream
  RngStream reset_rng = RngStream::named(seed, "env/reset");
  RngStream explore_rng = RngStream::named(seed, "explore");
  RngStream eval_rng = RngStream::named(seed, "eval");
  auto streams = baselines::UpdateStreams::make(seed, heads);

  double opt_return = 0.0;
  bool has_success = false;
  if (const auto* lever =
          dynamic_cast<const envs::SignalLeverEnv*>(env.get())) {
    opt_return = envs::enumerate_game(lever->game()).max_value *
                 static_cast<double>(env->horizon());
    has_success = true;
  }

  std::filesystem::create_directories(cfg.out_dir);
  const std::string metrics_path = cfg.out_dir + "/metrics_" + algo.name +
                                   "_seed" + std::to_string(seed) + ".jsonl";
  std::ofstream mf(metrics_path, std::ios::trunc);
  if (!mf) throw ConfigError("cannot open metrics file: " + metrics_path);
  {
    json hdr;
    hdr["schema"] = "omdpg-metrics-1";
    hdr["algo"] = algo.name;
    hdr["env"] = cfg.env;
    hdr["seed"] = seed;
    hdr["heads"] = heads;
    hdr["eval_interval"] = cfg.eval_interval;
    hdr["eval_episodes"] = cfg.eval_episodes;
    hdr["total_steps"] = cfg.total_steps;
    mf << hdr.dump() << "\n";
  }

  RunResult res;
  res.metrics_path = metrics_path;
  res.has_success = has_success;
  baselines::UpdateLosses last;

  // wall-clock lives in the sidecar so metrics bytes replay exactly
  auto write_meta = [&](bool finished, const std::string& err) {
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    json meta;
    meta["finished"] = finished;
    meta["wall_clock_s"] = secs;
    if (!err.empty()) meta["error"] = err;
    std::ofstream out(metrics_path + ".meta.json", std::ios::trunc);
    out << meta.dump() << "\n";
    res.wall_clock_s = secs;
  };

  auto uniform_action = [&](RngStream& rng) {
    envs::JointAction a;
    if (codec.discrete) {
      a.disc.resize(env->n_agents());
      for (int i = 0; i < env->n_agents(); ++i)
        a.disc[i] = static_cast<int>(rng.next_u64() % codec.slot_dim);
    } else {
      a.cont.resize(env->n_agents());
      for (int i = 0; i < env->n_agents(); ++i) {
        a.cont[i].resize(codec.slot_dim);
        for (int d = 0; d < codec.slot_dim; ++d)
          a.cont[i](d) = rng.uniform(-1.0, 1.0);
      }
    }
    return a;
  };

  try {
    envs::EnvState state = env->reset(reset_rng.next_u64());
    for (long step = 1; step <= cfg.total_steps; ++step) {
      envs::JointObservation obs = env->observe(state);
      // until the first update the buffer fills from uniform play, so the
      // critics meet a spread of the reachable space instead of whatever the
      // untrained actors happen to orbit
      envs::JointAction action =
          step <= cfg.warmup_steps
              ? uniform_action(explore_rng)
              : ccga::act(actors, obs, ccga::Mode::Explore, gqc::Which::Online,
                          &explore_rng);
      envs::StepResult sr = env->step(state, action);
      // episodes here end by time limit only, never by reaching an absorbing
      // state, so the stored flag stays false and targets bootstrap across
      // the reset; gating on the horizon would alias value by time-to-go,
      // which the observations cannot express
      buffer.push(replay::Transition{env->state_vec(state),
                                     env->state_vec(sr.next), obs,
                                     env->observe(sr.next), action, sr.reward,
                                     false});
      state = sr.done ? env->reset(reset_rng.next_u64()) : sr.next;

      double frac = static_cast<double>(step) / cfg.total_steps;
      actors.st_temp =
          cfg.st_temp_start + (cfg.st_temp_end - cfg.st_temp_start) * frac;

      if (step > cfg.warmup_steps && step % cfg.train_interval == 0 &&
          buffer.ready(static_cast<std::size_t>(cfg.batch_size))) {
        last = baselines::update_step(
            algo, actors, ensemble, buffer,
            static_cast<std::size_t>(cfg.batch_size), codec, pu, cfg.gamma,
            cfg.tau, shared.ordering, streams);
        ++res.updates;
      }

      if (step % cfg.eval_interval == 0) {
        double sum = 0.0;
        int hits = 0;
        for (int e = 0; e < cfg.eval_episodes; ++e) {
          envs::EnvState es = env->reset(eval_rng.next_u64());
          double ep = 0.0;
          bool done = false;
          while (!done) {
            envs::JointAction a = ccga::act(actors, env->observe(es),
                                            ccga::Mode::Greedy,
                                            gqc::Which::Online);
            envs::StepResult esr = env->step(es, a);
            ep += esr.reward;
            done = esr.done;
            es = esr.next;
          }
          sum += ep;
          if (has_success && ep >= opt_return - 1e-9) ++hits;
        }
        double mean_ret = sum / cfg.eval_episodes;
        double success =
            has_success ? static_cast<double>(hits) / cfg.eval_episodes : 0.0;
        json line;
        line["step"] = step;
        line["eval_return"] = mean_ret;
        if (has_success)
          line["success"] = success;
        else
          line["success"] = nullptr;
        line["critic_true"] = last.critic_true;
        line["critic_pu"] = last.critic_pu;
        line["actor"] = last.actor;
        line["uncertainty"] = last.uncertainty;
        line["updates"] = res.updates;
        mf << line.dump() << "\n";
        mf.flush();
        ++res.evals;
        res.last_return = mean_ret;
        res.last_success = success;
      }
    }
  } catch (const NumericError& e) {
    mf.close();
    write_meta(false, e.what());
    throw;
  }

  mf.close();
  if (!mf) throw ConfigError("metrics write failed: " + metrics_path);
  write_meta(true, "");
  return res;
}

SweepResult sweep(const RunConfig& cfg,
                  const std::vector<std::uint64_t>& seeds, int jobs) {
  cfg.validate();
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  std::vector<std::uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("sweep seeds must be distinct");
  if (jobs < 1) jobs = 1;

  struct Slot {
    bool ok = false;
    bool failed = false;
    RunResult run;
    SweepFailure fail;
  };
  std::vector<Slot> slots(seeds.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) return;
      try {
        slots[i].run = run_training(cfg, seeds[i]);
        slots[i].ok = true;
      } catch (const ConfigError& e) {
        slots[i].failed = true;
        slots[i].fail = {seeds[i], 2, e.what()};
      } catch (const NumericError& e) {
        slots[i].failed = true;
        slots[i].fail = {seeds[i], 3, e.what()};
      } catch (const std::exception& e) {
        slots[i].failed = true;
        slots[i].fail = {seeds[i], 1, e.what()};
      }
    }
  };

  const int n_threads =
      static_cast<int>(std::min<std::size_t>(jobs, seeds.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SweepResult out;
  for (const auto& s : slots) {
    if (s.ok) out.runs.push_back(s.run);
    if (s.failed) out.failures.push_back(s.fail);
  }
  return out;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fnum(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string gnum(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct Band {
  std::vector<long> steps;
  std::vector<double> mean, lo, hi;
};

}  // namespace

void emit_plot(const std::vector<std::string>& metrics_files,
               const std::string& out_path) {
  if (metrics_files.empty()) throw ConfigError("no metrics files given");

  std::map<std::string, std::vector<std::map<long, double>>> by_algo;
  for (const auto& path : metrics_files) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(in, line))
      throw ConfigError("empty metrics file: " + path);
    json hdr;
    try {
      hdr = json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError("bad metrics header in " + path + ": " + e.what());
    }
    if (hdr.value("schema", std::string()) != "omdpg-metrics-1")
      throw ConfigError("unrecognized metrics schema in " + path);
    std::string algo = hdr.value("algo", std::string("unknown"));
    std::map<long, double> pts;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const std::exception& e) {
        throw ConfigError("bad metrics line in " + path + ": " + e.what());
      }
      pts[j.at("step").get<long>()] = j.at("eval_return").get<double>();
    }
    by_algo[algo].push_back(std::move(pts));
  }

  std::map<std::string, Band> bands;
  long total_points = 0;
  for (const auto& [algo, runs] : by_algo) {
    Band b;
    for (const auto& [s, v] : runs[0]) {
      (void)v;
      bool everywhere = true;
      for (const auto& r : runs)
        if (!r.count(s)) everywhere = false;
      if (everywhere) b.steps.push_back(s);
    }
    for (long s : b.steps) {
      double m = 0.0;
      for (const auto& r : runs) m += r.at(s);
      m /= static_cast<double>(runs.size());
      double var = 0.0;
      for (const auto& r : runs) {
        double d = r.at(s) - m;
        var += d * d;
      }
      double sd = std::sqrt(var / static_cast<double>(runs.size()));
      b.mean.push_back(m);
      b.lo.push_back(m - sd);
      b.hi.push_back(m + sd);
    }
    total_points += static_cast<long>(b.steps.size());
    if (!b.steps.empty()) bands[algo] = std::move(b);
  }
  if (total_points == 0)
    throw ConfigError("metrics files contain no data rows");

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& [algo, b] : bands) {
    (void)algo;
    xmin = std::min(xmin, static_cast<double>(b.steps.front()));
    xmax = std::max(xmax, static_cast<double>(b.steps.back()));
    for (std::size_t i = 0; i < b.steps.size(); ++i) {
      ymin = std::min(ymin, b.lo[i]);
      ymax = std::max(ymax, b.hi[i]);
    }
  }
  if (xmax <= xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  if (ymax <= ymin) {
    ymin -= 1.0;
    ymax += 1.0;
  } else {
    double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
  }

  const double W = 880, H = 520;
  const double x0 = 70, x1 = 650, y0 = 30, y1 = 470;
  auto sx = [&](double step) {
    return x0 + (step - xmin) * (x1 - x0) / (xmax - xmin);
  };
  auto sy = [&](double v) { return y1 - (v - ymin) * (y1 - y0) / (ymax - ymin); };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  const int n_colors = 6;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
      << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<line x1=\"" << fnum(x0) << "\" y1=\"" << fnum(y1) << "\" x2=\""
      << fnum(x1) << "\" y2=\"" << fnum(y1)
      << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << fnum(x0) << "\" y1=\"" << fnum(y0) << "\" x2=\""
      << fnum(x0) << "\" y2=\"" << fnum(y1)
      << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    double fx = xmin + (xmax - xmin) * t / 5.0;
    double fy = ymin + (ymax - ymin) * t / 5.0;
    svg << "<line x1=\"" << fnum(sx(fx)) << "\" y1=\"" << fnum(y1)
        << "\" x2=\"" << fnum(sx(fx)) << "\" y2=\"" << fnum(y1 + 5)
        << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << fnum(sx(fx)) << "\" y=\"" << fnum(y1 + 20)
        << "\" font-size=\"11\" font-family=\"sans-serif\" "
           "text-anchor=\"middle\" fill=\"#333333\">"
        << xml_escape(gnum(fx)) << "</text>\n";
    svg << "<line x1=\"" << fnum(x0 - 5) << "\" y1=\"" << fnum(sy(fy))
        << "\" x2=\"" << fnum(x0) << "\" y2=\"" << fnum(sy(fy))
        << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << fnum(x0 - 8) << "\" y=\"" << fnum(sy(fy) + 4)
        << "\" font-size=\"11\" font-family=\"sans-serif\" "
           "text-anchor=\"end\" fill=\"#333333\">"
        << xml_escape(gnum(fy)) << "</text>\n";
  }
  svg << "<text x=\"" << fnum((x0 + x1) / 2) << "\" y=\"" << fnum(y1 + 40)
      << "\" font-size=\"13\" font-family=\"sans-serif\" "
         "text-anchor=\"middle\" fill=\"#333333\">env steps</text>\n";
  svg << "<text x=\"18\" y=\"" << fnum((y0 + y1) / 2)
      << "\" font-size=\"13\" font-family=\"sans-serif\" "
         "text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 18 "
      << fnum((y0 + y1) / 2) << ")\">eval return</text>\n";

  int color_idx = 0;
  double legend_y = y0 + 12;
  for (const auto& [algo, b] : bands) {
    const char* color = palette[color_idx % n_colors];
    ++color_idx;
    if (b.steps.size() >= 2) {
      svg << "<polygon points=\"";
      for (std::size_t i = 0; i < b.steps.size(); ++i)
        svg << fnum(sx(static_cast<double>(b.steps[i]))) << ","
            << fnum(sy(b.hi[i])) << " ";
      for (std::size_t i = b.steps.size(); i-- > 0;)
        svg << fnum(sx(static_cast<double>(b.steps[i]))) << ","
            << fnum(sy(b.lo[i])) << " ";
      svg << "\" fill=\"" << color << "\" fill-opacity=\"0.18\"/>\n";
      svg << "<polyline points=\"";
      for (std::size_t i = 0; i < b.steps.size(); ++i)
        svg << fnum(sx(static_cast<double>(b.steps[i]))) << ","
            << fnum(sy(b.mean[i])) << " ";
      svg << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
    }
    for (std::size_t i = 0; i < b.steps.size(); ++i)
      svg << "<circle cx=\"" << fnum(sx(static_cast<double>(b.steps[i])))
          << "\" cy=\"" << fnum(sy(b.mean[i])) << "\" r=\"2.5\" fill=\""
          << color << "\"/>\n";
    svg << "<rect x=\"" << fnum(x1 + 16) << "\" y=\"" << fnum(legend_y - 9)
        << "\" width=\"14\" height=\"14\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << fnum(x1 + 36) << "\" y=\"" << fnum(legend_y + 3)
        << "\" font-size=\"12\" font-family=\"sans-serif\" fill=\"#333333\">"
        << xml_escape(algo) << "</text>\n";
    legend_y += 22;
  }
  svg << "</svg>\n";

  std::filesystem::path out(out_path);
  if (out.has_parent_path())
    std::filesystem::create_directories(out.parent_path());
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw ConfigError("cannot open plot output: " + out_path);
  f << svg.str();
  if (!f) throw ConfigError("plot write failed: " + out_path);
}

std::string drift_report(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  auto env = envs::make_env(cfg.env, cfg.horizon);
  const auto* lever = dynamic_cast<const envs::SignalLeverEnv*>(env.get());
  if (!lever)
    throw ConfigError("the ratio diagnostic needs the exact-game env");
  const envs::ExactGame& g = lever->game();

  std::vector<Eigen::VectorXd> init(g.groups.n_groups(),
                                    Eigen::VectorXd::Zero(g.m));
  oracle::RatioReport rep = oracle::ratio_diagnostic(g, init, cfg.drift_lr);

  std::filesystem::create_directories(out_dir);
  auto fmt = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
  };

  const std::string csv_path = out_dir + "/drift.csv";
  {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw ConfigError("cannot open " + csv_path);
    csv << "scheme,agent,ratio,log_gap_vs_fpb\n";
    for (int i = 0; i < rep.n_agents; ++i)
      csv << "nops," << i << "," << fmt(rep.f_nops[i]) << ","
          << fmt(rep.gap_nops_fpb[i]) << "\n";
    for (int i = 0; i < rep.n_agents; ++i)
      csv << "drift," << i << "," << fmt(rep.f_drift[i]) << ","
          << fmt(rep.gap_drift_fpb[i]) << "\n";
    for (int i = 0; i < rep.n_agents; ++i)
      csv << "fpb," << i << "," << fmt(rep.f_fpb[i]) << ",0\n";
    if (!csv) throw ConfigError("drift csv write failed");
  }

  {
    std::ofstream txt(out_dir + "/drift.txt", std::ios::trunc);
    txt << "compound sequential-ratio diagnostic, lr " << fmt(rep.lr) << "\n";
    txt << "eval action:";
    for (int a : rep.eval_action) txt << " " << a;
    txt << "\n\nagent  F_private  F_shared_drifted  F_shared_frozen  "
           "|log gap|\n";
    for (int i = 0; i < rep.n_agents; ++i) {
      txt << i << "  " << fmt(rep.f_nops[i]) << "  " << fmt(rep.f_drift[i])
          << "  " << fmt(rep.f_fpb[i]) << "  " << fmt(rep.gap_drift_fpb[i])
          << "\n";
    }
    txt << "\nheadline gap (last agent, drifted vs frozen): "
        << fmt(rep.headline_gap) << "\n";
    txt << "Shared-group bookkeeping corrupts the last agent's ratio once an "
           "earlier groupmate has moved the shared parameters; private nets "
           "or a frozen round-start record keep every ratio exact.\n";
  }
  return csv_path;
}

namespace {

gqc::CriticEnsemble tanh_ensemble(int c_k, int state_dim, int action_dim,
                                  int hidden, std::uint64_t seed,
                                  std::uint64_t salt) {
  gqc::CriticEnsemble e;
  e.state_dim = state_dim;
  e.joint_action_dim = action_dim;
  std::vector<int> dims = {state_dim + action_dim, hidden, 1};
  std::vector<numkit::Activation> acts = {numkit::Activation::Tanh,
                                          numkit::Activation::Identity};
  for (int c = 0; c < c_k; ++c) {
    RngStream rng = RngStream::named(seed, "gradcheck/head", salt * 64 + c);
    e.online.push_back(numkit::make_mlp(dims, acts, rng));
    e.target.push_back(e.online.back());
    e.opt.push_back(numkit::OptState::for_params(e.online.back(), 1e-3));
  }
  return e;
}

Eigen::MatrixXd rand_mat(long rows, long cols, RngStream& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
  return m;
}

std::vector<envs::JointObservation> rand_obs(int batch, int n, int dim,
                                             RngStream& rng) {
  std::vector<envs::JointObservation> obs(batch);
  for (auto& jo : obs) {
    jo.resize(n);
    for (auto& o : jo) {
      o.resize(dim);
      for (int d = 0; d < dim; ++d) o(d) = rng.uniform(-1.0, 1.0);
    }
  }
  return obs;
}

}  // namespace

double gradcheck_suite(int rounds, std::uint64_t seed) {
  if (rounds <= 0) throw ConfigError("rounds must be positive");
  double worst = 0.0;
  const double h = 1e-5;

  for (int r = 0; r < rounds; ++r) {
    RngStream data = RngStream::named(seed, "gradcheck/data", r);

    {  // raw network: d(sum of outputs)/d(params)
      RngStream init = RngStream::named(seed, "gradcheck/net", r);
      numkit::MlpParams p = numkit::make_mlp(
          {4, 8, 3},
          {numkit::Activation::Tanh, numkit::Activation::Tanh}, init);
      Eigen::MatrixXd x = rand_mat(3, 4, data);
      auto f = [&](const Eigen::VectorXd& flat) {
        numkit::MlpParams q = p;
        numkit::unflatten(flat, q);
        numkit::ForwardCache cache;
        Eigen::MatrixXd out = numkit::forward(q, x, &cache);
        numkit::MlpGrads gr = numkit::MlpGrads::zeros_like(q);
        numkit::backward(q, cache,
                         Eigen::MatrixXd::Ones(out.rows(), out.cols()), &gr);
        return std::make_pair(out.sum(), numkit::flatten_grads(gr));
      };
      worst = std::max(worst, numkit::fd_gradcheck(f, numkit::flatten(p), h));
    }

    {  // ensemble head regression including the out-of-distribution term
      auto e = tanh_ensemble(2, 2, 4, 6, seed, static_cast<std::uint64_t>(r));
      Eigen::MatrixXd states = rand_mat(4, 2, data);
      Eigen::MatrixXd acts = rand_mat(4, 4, data);
      Eigen::MatrixXd ood_states = rand_mat(3, 2, data);
      Eigen::MatrixXd ood_acts = rand_mat(3, 4, data);
      Eigen::VectorXd y_true = rand_mat(4, 1, data);
      Eigen::VectorXd y_pu = rand_mat(3, 1, data);
      auto f = [&](const Eigen::VectorXd& flat) {
        gqc::CriticEnsemble probe = e;
        numkit::unflatten(flat, probe.online[0]);
        auto out = gqc::gqc_loss(probe, 0, states, acts, y_true, ood_states,
                                 ood_acts, y_pu, 0.1);
        return std::make_pair(out.loss, numkit::flatten_grads(out.grads));
      };
      worst =
          std::max(worst, numkit::fd_gradcheck(f, numkit::flatten(e.online[0]), h));
    }

    {  // both actor objectives, alternating action types
      const bool discrete = (r % 2) == 1;
      const int n = 2, obs_dim = 3, adim = discrete ? 3 : 2;
      envs::GroupSpec spec = envs::GroupSpec::identity_order({0, 0});
      auto actors = ccga::GroupedActors::make(spec, discrete, obs_dim, adim,
                                              {6}, 1e-3,
                                              seed * 1000003ull + r);
      actors.st_temp = 0.8;
      envs::ActionCodec codec{discrete, n, adim};
      auto e = tanh_ensemble(2, 2, codec.joint_dim(), 6, seed,
                             4096ull + static_cast<std::uint64_t>(r));
      gqc::EnsembleCritic critic(e, gqc::Which::Online);
      auto obs = rand_obs(4, n, obs_dim, data);
      Eigen::MatrixXd states = rand_mat(4, 2, data);

      // completions are stop-gradients; the probe must hold them fixed
      Eigen::MatrixXd comp =
          ccga::greedy_joint_encoded(actors, obs, codec, gqc::Which::Online);
      for (int g = 0; g < actors.n_groups(); ++g) {
        auto f = [&, g](const Eigen::VectorXd& flat) {
          ccga::GroupedActors probe = actors;
          numkit::unflatten(flat, probe.nets[g]);
          auto out = ccga::actor_loss(probe, critic, codec, states, obs,
                                      spec.ordering, &comp);
          return std::make_pair(out.loss, numkit::flatten_grads(out.grads[g]));
        };
        worst = std::max(worst,
                         numkit::fd_gradcheck(f, numkit::flatten(actors.nets[g]), h));
      }

      Eigen::MatrixXd batch_actions;
      if (discrete) {
        batch_actions = Eigen::MatrixXd::Zero(4, codec.joint_dim());
        for (int row = 0; row < 4; ++row)
          for (int j = 0; j < n; ++j)
            batch_actions(row, j * adim + data.uniform_int(adim)) = 1.0;
      } else {
        batch_actions = rand_mat(4, codec.joint_dim(), data);
      }
      for (int g = 0; g < actors.n_groups(); ++g) {
        auto f = [&, g](const Eigen::VectorXd& flat) {
          ccga::GroupedActors probe = actors;
          numkit::unflatten(flat, probe.nets[g]);
          auto out = baselines::plain_actor_loss(probe, critic, codec, states,
                                                 obs, batch_actions);
          return std::make_pair(out.loss, numkit::flatten_grads(out.grads[g]));
        };
        worst = std::max(worst,
                         numkit::fd_gradcheck(f, numkit::flatten(actors.nets[g]), h));
      }
    }
  }

  if (!std::isfinite(worst))
    throw NumericError("gradient check produced a non-finite error");
  return worst;
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"grouped-actor marginal-value training laboratory"};
  app.require_subcommand(1);

  std::string cfg_path, out_dir, out_file;
  std::vector<std::string> in_specs;
  std::int64_t seed = -1;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
  int rounds = 20;
  std::uint64_t gc_seed = 1;

  auto* train = app.add_subcommand("train", "one seeded training run");
  train->add_option("--config", cfg_path, "JSON config file")->required();
  train->add_option("--seed", seed, "run seed (default: first config seed)");
  train->add_option("--out", out_dir, "output directory override");

  auto* sw = app.add_subcommand("sweep", "independent runs over a seed list");
  sw->add_option("--config", cfg_path, "JSON config file")->required();
  sw->add_option("--seeds", seeds, "comma-separated seeds")->delimiter(',');
  sw->add_option("--out", out_dir, "output directory override");
  sw->add_option("--jobs", jobs, "max concurrent runs");

  auto* plot = app.add_subcommand("plot", "learning curves to SVG");
  plot->add_option("--in", in_specs, "metrics file or directory (repeatable)")
      ->required();
  plot->add_option("--out", out_file, "output SVG path")->required();

  auto* drift = app.add_subcommand("drift", "sequential-ratio drift report");
  drift->add_option("--config", cfg_path, "JSON config file")->required();
  drift->add_option("--out", out_dir, "output directory override");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification");
  gc->add_option("--rounds", rounds, "random configurations per surface");
  gc->add_option("--seed", gc_seed, "suite seed");

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) {
      RunConfig cfg = load_config(cfg_path);
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      std::uint64_t s =
          seed >= 0 ? static_cast<std::uint64_t>(seed) : cfg.seeds.front();
      RunResult r = run_training(cfg, s);
      std::printf("metrics: %s\n", r.metrics_path.c_str());
      std::printf("evals %ld  updates %ld  last return %.6g", r.evals,
                  r.updates, r.last_return);
      if (r.has_success) std::printf("  success %.3f", r.last_success);
      std::printf("  wall %.1fs\n", r.wall_clock_s);
      return 0;
    }
    if (*sw) {
      RunConfig cfg = load_config(cfg_path);
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      const std::vector<std::uint64_t>& use = seeds.empty() ? cfg.seeds : seeds;
      SweepResult res = sweep(cfg, use, jobs);
      for (const auto& r : res.runs)
        std::printf("ok: %s (last return %.6g)\n", r.metrics_path.c_str(),
                    r.last_return);
      for (const auto& f : res.failures)
        std::fprintf(stderr, "failed: seed %llu: %s\n",
                     static_cast<unsigned long long>(f.seed),
                     f.message.c_str());
      if (res.failures.empty()) return 0;
      if (res.runs.empty()) return res.failures.front().exit_code;
      return 1;
    }
    if (*plot) {
      std::vector<std::string> files;
      for (const auto& spec : in_specs) {
        std::filesystem::path p(spec);
        if (std::filesystem::is_directory(p)) {
          std::vector<std::string> found;
          for (const auto& ent : std::filesystem::directory_iterator(p))
            if (ent.path().extension() == ".jsonl")
              found.push_back(ent.path().string());
          std::sort(found.begin(), found.end());
          files.insert(files.end(), found.begin(), found.end());
        } else {
          files.push_back(spec);
        }
      }
      if (files.empty())
        throw ConfigError("no metrics files under the given inputs");
      emit_plot(files, out_file);
      std::printf("plot: %s\n", out_file.c_str());
      return 0;
    }
    if (*drift) {
      RunConfig cfg = load_config(cfg_path);
      std::string dir = out_dir.empty() ? cfg.out_dir : out_dir;
      std::string csv = drift_report(cfg, dir);
      std::printf("drift report: %s\n", csv.c_str());
      return 0;
    }
    if (*gc) {
      double err = gradcheck_suite(rounds, gc_seed);
      std::printf("max relative gradient error %.3g over %d rounds\n", err,
                  rounds);
      return err < 1e-4 ? 0 : 3;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace omdpg::harness
