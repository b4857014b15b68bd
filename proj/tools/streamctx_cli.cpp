// streamctx command-line driver: run, sweep, report, validate, gen-synthetic, profile.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "streamctx/streamctx.hpp"

namespace fs = std::filesystem;
using namespace streamctx;

namespace {

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_config, "not a count: '" + item + "'");
    }
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path.string());
  out << text;
}

struct RunFlags {
  std::string config;
  std::string policy;
  std::optional<std::size_t> n;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> concurrency;
  std::string reference;
  bool strict = false;
  bool no_resume = false;

  void add_to(CLI::App* app, bool window_option = true) {
    app->add_option("--config", config, "Run config (TOML or JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--policy", policy, "Context policy: recency, visual_rag, keep_all");
    if (window_option) app->add_option("--n", n, "Recent window size N");
    app->add_option("--backend", backend, "Backend: mock or http");
    app->add_option("--seed", seed, "Seed for the mock backend");
    app->add_option("--out", out, "Output directory");
    app->add_option("--concurrency", concurrency, "Worker count");
    app->add_option("--reference", reference, "Reference results.json for delta_p / delta_m");
    app->add_flag("--strict", strict, "Abort on the first backend failure");
    app->add_flag("--no-resume", no_resume, "Ignore responses.jsonl from an earlier run");
  }

  RunConfig load() const {
    std::map<std::string, std::string> o;
    if (!policy.empty()) o["policy.kind"] = '"' + policy + '"';
    if (n) o["policy.n_recent"] = std::to_string(*n);
    if (!backend.empty()) o["backend"] = backend;
    if (seed) o["seed"] = std::to_string(*seed);
    if (!out.empty()) o["out"] = '"' + out + '"';
    if (concurrency) o["concurrency"] = std::to_string(*concurrency);
    if (!reference.empty()) o["reference"] = '"' + reference + '"';
    if (strict) o["strict"] = "true";
    if (no_resume) o["resume"] = "false";
    return load_run_config(config, o);
  }
};

void print_summary(const RunSummary& s, const RunConfig& cfg) {
  std::cout << "run " << s.results.run_id << ": " << s.answered << " answered, " << s.failed << " failed";
  if (s.resumed) std::cout << " (" << s.resumed << " resumed)";
  std::cout << " -> " << cfg.out_dir << "\n";
  const std::vector<RunResults> one{s.results};
  std::cout << results_markdown(one);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming video QA context engine and causal evaluation harness"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Evaluate one configuration");
  run_flags.add_to(run_cmd);

  RunFlags sweep_flags;
  std::string sweep_n;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate several recent-window sizes");
  sweep_flags.add_to(sweep_cmd, false);
  sweep_cmd->add_option("--n", sweep_n, "Comma-separated window sizes, e.g. 2,4,8,16");

  std::vector<std::string> report_files;
  std::string report_reference, report_out;
  auto* report_cmd = app.add_subcommand("report", "Compare result files");
  report_cmd->add_option("results", report_files, "results.json files")->check(CLI::ExistingFile);
  report_cmd->add_option("--reference", report_reference, "Reference results.json")->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report_out, "Directory for report.md / report.csv / tradeoff.csv");

  std::string validate_path, validate_format = "native";
  bool validate_official = false;
  auto* validate_cmd = app.add_subcommand("validate", "Check a benchmark file");
  validate_cmd->add_option("--benchmark", validate_path, "Benchmark file")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--format", validate_format, "native, ovo or streamingbench");
  validate_cmd->add_flag("--official", validate_official, "Also check the official release size");

  SyntheticParams syn;
  std::uint64_t syn_seed = 0;
  std::string syn_out, syn_distance = "uniform:10,100";
  auto* syn_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic benchmark with grounding");
  syn_cmd->add_option("--seed", syn_seed, "Generator seed");
  syn_cmd->add_option("--questions", syn.n_questions, "Number of questions");
  syn_cmd->add_option("--distance", syn_distance, "fixed:D or uniform:LO,HI (seconds)");
  syn_cmd->add_option("--stream-len", syn.stream_len_s, "Stream length in seconds");
  syn_cmd->add_option("--window-truth", syn.recent_window_truth_s, "Real-time evidence horizon in seconds");
  syn_cmd->add_option("--fps", syn.fps, "Sampling rate");
  syn_cmd->add_option("--beta", syn.beta, "Distraction coefficient");
  syn_cmd->add_option("--memory-fraction", syn.memory_fraction, "Share of SYN-MEM questions");
  syn_cmd->add_flag("--regenerate", syn.regenerate_on_overflow, "Redraw distances that do not fit");
  syn_cmd->add_option("--out", syn_out, "Output file")->required();

  std::string prof_config, prof_lengths = "16,64,256", prof_out = "profile";
  std::string prof_policy;
  std::optional<std::size_t> prof_n;
  double stub_fixed_ms = -1.0, stub_per_frame_ms = 0.0;
  int prof_reps = 5;
  auto* prof_cmd = app.add_subcommand("profile", "Memory curve and TTFT at several observed-frame counts");
  prof_cmd->add_option("--config", prof_config, "Run config supplying policy, accounting and backend")
      ->check(CLI::ExistingFile);
  prof_cmd->add_option("--policy", prof_policy, "Context policy");
  prof_cmd->add_option("--n", prof_n, "Recent window size N");
  prof_cmd->add_option("--lengths", prof_lengths, "Comma-separated observed-frame counts");
  prof_cmd->add_option("--stub-delay-ms", stub_fixed_ms, "Time a scripted in-process stub instead of the backend");
  prof_cmd->add_option("--stub-per-frame-ms", stub_per_frame_ms, "Per-frame delay of the stub");
  prof_cmd->add_option("--repetitions", prof_reps, "Repetitions per point (median reported)");
  prof_cmd->add_option("--out", prof_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto cfg = run_flags.load();
      const auto summary = run(cfg);
      print_summary(summary, cfg);
      return summary.failed == 0 || !cfg.strict ? 0 : 1;
    }
    if (*sweep_cmd) {
      auto cfg = sweep_flags.load();
      const auto windows = sweep_n.empty() ? cfg.sweep_n : parse_list(sweep_n);
      const auto summary = sweep(cfg, windows);
      std::vector<RunResults> rows;
      for (const auto& [n, r] : summary.runs) rows.push_back(r);
      std::cout << results_markdown(rows);
      return 0;
    }
    if (*report_cmd) {
      if (report_files.empty()) {
        std::cerr << "usage: report <results.json>... [--reference <results.json>]\n";
        return 2;
      }
      std::vector<RunResults> runs;
      for (const auto& f : report_files) runs.push_back(load_results(f));
      std::optional<RunResults> reference;
      if (!report_reference.empty()) reference = load_results(report_reference);
      const auto r = report(std::move(runs), reference);
      std::cout << r.markdown;
      if (!report_out.empty()) {
        write_file(fs::path(report_out) / "report.md", r.markdown);
        write_file(fs::path(report_out) / "report.csv", r.csv);
        write_file(fs::path(report_out) / "tradeoff.csv", r.tradeoff_csv);
        if (r.ablation_csv) write_file(fs::path(report_out) / "ablation.csv", *r.ablation_csv);
      }
      return 0;
    }
    if (*validate_cmd) {
      const auto format = parse_format(validate_format);
      try {
        const auto set = load_benchmark(validate_path, format);
        std::cout << set.questions.size() << " questions, " << set.category_map.size() << " tracks";
        if (!set.excluded.empty()) std::cout << ", " << set.excluded.size() << " excluded";
        std::cout << "\n";
        if (validate_official) {
          const auto findings = check_official_size(set, format);
          for (const auto& f : findings) std::cout << f.describe() << "\n";
          if (!findings.empty()) return 1;
        }
        return 0;
      } catch (const ValidationError& e) {
        for (const auto& f : e.findings()) std::cout << f.describe() << "\n";
        return 1;
      }
    }
    if (*syn_cmd) {
      const auto colon = syn_distance.find(':');
      const auto kind = syn_distance.substr(0, colon);
      const auto args = colon == std::string::npos ? std::string() : syn_distance.substr(colon + 1);
      if (kind == "fixed") {
        syn.distance = DistanceDistribution::fixed(std::stod(args));
      } else if (kind == "uniform") {
        const auto comma = args.find(',');
        if (comma == std::string::npos) throw Error(ErrorKind::invalid_config, "uniform:LO,HI expected");
        syn.distance = DistanceDistribution::uniform(std::stod(args.substr(0, comma)), std::stod(args.substr(comma + 1)));
      } else {
        throw Error(ErrorKind::invalid_config, "unknown distance distribution '" + syn_distance + "'");
      }
      const auto set = gen_synthetic(syn_seed, syn);
      if (fs::path(syn_out).has_parent_path()) fs::create_directories(fs::path(syn_out).parent_path());
      save_benchmark(syn_out, set);
      std::cout << "wrote " << set.questions.size() << " questions to " << syn_out << "\n";
      return 0;
    }
    if (*prof_cmd) {
      RunConfig cfg;
      if (!prof_config.empty()) cfg = load_run_config(prof_config);
      if (!prof_policy.empty()) cfg.policy.kind = parse_policy(prof_policy);
      if (prof_n) cfg.policy.n_recent = *prof_n;
      const auto lengths64 = [&] {
        std::vector<std::uint64_t> v;
        for (auto x : parse_list(prof_lengths)) v.push_back(x);
        return v;
      }();

      auto samples = memory_curve(cfg.policy, lengths64, cfg.accounting, {cfg.embedding_dim, true});
      EchoBackend echo;
      std::unique_ptr<Backend> timed;
      if (stub_fixed_ms >= 0.0)
        timed = std::make_unique<DelayedBackend>(echo, stub_fixed_ms, stub_per_frame_ms);
      else if (cfg.backend == BackendKind::http)
        timed = std::make_unique<HttpBackend>(cfg.http);
      if (timed) {
        HashEmbedder embedder(cfg.embedding_dim);
        const auto query = embedder.embed_query("ttft", "What is happening now?");
        const RetrievalInputs retrieval{&embedder, query, nullptr, "curve"};
        auto t = ttft_series(*timed, cfg.policy, lengths64, retrieval, cfg.accounting, prof_reps);
        samples.insert(samples.end(), t.begin(), t.end());
      }
      const auto report = efficiency_report(samples);
      write_file(fs::path(prof_out) / "efficiency.csv", report.csv);
      write_file(fs::path(prof_out) / "efficiency.md", report.markdown);
      write_file(fs::path(prof_out) / "efficiency_plot.json", report.plot_data.dump(2) + "\n");
      std::cout << report.markdown;
      return 0;
    }
  } catch (const ValidationError& e) {
    for (const auto& f : e.findings()) std::cerr << f.describe() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
