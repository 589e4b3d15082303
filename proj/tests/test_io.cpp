#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "overtrain/experiments.hpp"

using namespace overtrain;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("overtrain_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OVERTRAIN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

SpikeSession tiny_session() {
  SpikeSession s;
  s.session_id = "sess1";
  s.subject_id = "m1";
  s.trials.push_back({0, kTarget, {{"a", {10.0, 2100.0}}, {"b", {}}}});
  s.trials.push_back({1, kNontarget, {{"a", {1999.9, 2000.0, 2499.9}}, {"b", {2500.0}}}});
  return s;
}

SurrogateSpec simple_spec(double separation, std::uint64_t seed) {
  SurrogateSpec spec;
  spec.n_target = 60;
  spec.n_nontarget = 60;
  spec.rates_target_hz = {12, 8, 20, 5, 9, 14};
  spec.rates_nontarget_hz = {6, 10, 12, 9, 9, 7};
  spec.separation = separation;
  spec.seed = seed;
  return spec;
}

}  // namespace

// ---------------------------------------------------------------- spike files

TEST(SpikeFile, RoundTrip) {
  const auto s = tiny_session();
  std::stringstream ss;
  write_spike_file(s, ss);
  EXPECT_EQ(parse_spike_stream(ss), s);
}

TEST(SpikeFile, ErrorsNameTheLine) {
  std::istringstream bad(
      "{\"session\":\"s\",\"subject\":\"m\",\"trial\":0,\"label\":\"target\",\"spikes_ms\":{\"a\":[1]}}\n"
      "{\"session\":\"s\",\"subject\":\"m\",\"trial\":1,\"label\":\"target\",\"spikes_ms\":{\"a\":[1]},\"x\":1}\n");
  try {
    parse_spike_stream(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream garbage("{not json\n");
  EXPECT_THROW(parse_spike_stream(garbage), Error);
}

TEST(SpikeFile, ValidationRules) {
  auto s = tiny_session();
  s.trials[0].label = "probe";
  EXPECT_THROW(validate(s), Error);
  s = tiny_session();
  s.trials[0].spikes_ms["a"] = {5.0, 3.0};
  EXPECT_THROW(validate(s), Error);
  s = tiny_session();
  s.trials[0].spikes_ms["a"] = {2500.5};
  EXPECT_THROW(validate(s), Error);
  s = tiny_session();
  s.trials[1].spikes_ms.erase("b");
  EXPECT_THROW(validate(s), Error);
  s.trials.clear();
  EXPECT_THROW(validate(s), Error);
  std::istringstream mixed(
      "{\"session\":\"s\",\"subject\":\"m\",\"trial\":0,\"label\":\"target\",\"spikes_ms\":{\"a\":[1]}}\n"
      "{\"session\":\"t\",\"subject\":\"m\",\"trial\":1,\"label\":\"target\",\"spikes_ms\":{\"a\":[1]}}\n");
  EXPECT_THROW(parse_spike_stream(mixed), Error);
}

TEST(Counts, HalfOpenWindow) {
  const auto m = window_counts(tiny_session());
  EXPECT_EQ(m.neuron_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(m.counts(0, 0), 1);  // 2100
  EXPECT_EQ(m.counts(1, 0), 2);  // 2000 and 2499.9; 1999.9 excluded
  EXPECT_EQ(m.counts(1, 1), 0);  // 2500 is the open end
  EXPECT_THROW(window_counts(tiny_session(), 2000, 2600), Error);
  EXPECT_THROW(window_counts(tiny_session(), 2000, 2000), Error);
}

TEST(Counts, DropThresholdBoundary) {
  CountMatrix m;
  m.counts.resize(2, 3);
  m.counts << 1, 2, 0, 2, 2, 0;  // totals 3, 4, 0
  m.neuron_ids = {"x", "y", "z"};
  m.labels = {kTarget, kNontarget};
  m.trial_ids = {0, 1};
  const auto r = drop_unresponsive(m, 4);
  EXPECT_EQ(r.filtered.neuron_ids, std::vector<std::string>{"y"});
  EXPECT_EQ(r.dropped, (std::vector<std::string>{"x", "z"}));
  try {
    drop_unresponsive(m, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_matrix);
  }
}

// ---------------------------------------------------------------- surrogates

TEST(Surrogate, DeterministicAndValid) {
  const auto a = surrogate_session(simple_spec(1.0, 3));
  const auto b = surrogate_session(simple_spec(1.0, 3));
  EXPECT_EQ(a, b);
  EXPECT_NO_THROW(validate(a));
  EXPECT_EQ(a.trials.size(), 120u);
  EXPECT_EQ(a.neuron_ids().front(), "n0");
  EXPECT_NE(a, surrogate_session(simple_spec(1.0, 4)));
}

TEST(Surrogate, RatesMatchPoissonMean) {
  auto spec = simple_spec(1.0, 5);
  spec.n_target = 400;
  spec.n_nontarget = 0;
  const auto s = surrogate_session(spec);
  const auto m = window_counts(s, 0.0, 2500.0);
  for (Eigen::Index j = 0; j < m.counts.cols(); ++j) {
    const double mean = m.counts.col(j).cast<double>().mean();
    const double expected = spec.rates_target_hz[static_cast<std::size_t>(j)] * 2.5;
    EXPECT_NEAR(mean, expected, 4.0 * std::sqrt(expected / 400.0));
  }
}

TEST(Surrogate, SeparationScalesDifference) {
  const auto [t0, n0] = class_rates(simple_spec(0.0, 0));
  EXPECT_EQ(t0, n0);
  const auto [t2, n2] = class_rates(simple_spec(2.0, 0));
  EXPECT_DOUBLE_EQ(t2[0] - n2[0], 12.0);
  EXPECT_GE(*std::min_element(n2.begin(), n2.end()), 0.0);
}

TEST(Surrogate, SpecJson) {
  const auto spec = simple_spec(1.5, 7);
  const auto back = surrogate_spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(back), to_json(spec));
  auto j = to_json(spec);
  j["bogus"] = 1;
  EXPECT_THROW(surrogate_spec_from_json(j), Error);
  j = to_json(spec);
  j["rates_target_hz"] = {1.0};
  EXPECT_THROW(surrogate_spec_from_json(j), Error);
}

// ---------------------------------------------------------------- smoothing

TEST(Smoothing, CenteredTruncatedWindow) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto s = smooth_series(v, 3);
  EXPECT_EQ(s.values, (std::vector<double>{1.5, 2, 3, 4, 4.5}));
  EXPECT_NEAR(s.standard_errors[2], 1.0 / std::sqrt(3.0), 1e-15);
  const auto even = smooth_series(v, 2);  // [i, i+1]
  EXPECT_EQ(even.values, (std::vector<double>{1.5, 2.5, 3.5, 4.5, 5}));
  EXPECT_EQ(even.standard_errors.back(), 0.0);
  EXPECT_EQ(smooth_series(v, 1, 2).values, (std::vector<double>{1, 3, 5}));
  EXPECT_THROW(smooth_series(v, 0), Error);
}

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAndEcho) {
  const auto c = config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.task.k, 100);
  EXPECT_EQ(c.model.widths, std::vector<int>{512});
  EXPECT_EQ(c.train.learning_rate, 0.5);
  const auto again = config_from_json(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(Config, BioDefaults) {
  const auto c = config_from_json({{"model", {{"kind", "bio"}}}});
  EXPECT_EQ(c.model.widths, (std::vector<int>{256, 64}));
  EXPECT_EQ(c.train.learning_rate, 1e-2);
  const auto d = config_from_json({{"model", {{"kind", "bio"}}}, {"train", {{"lr", 0.2}}}});
  EXPECT_EQ(d.train.learning_rate, 0.2);
}

TEST(Config, RejectsBadInput) {
  auto expect_validation = [](const nlohmann::json& j) {
    try {
      config_from_json(j);
      ADD_FAILURE() << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::validation) << j.dump();
    }
  };
  expect_validation({{"tusk", {}}});
  expect_validation({{"train", {{"epoch", 3}}}});
  expect_validation({{"train", {{"loss", "mse"}}}});
  expect_validation({{"train", {{"lr", "fast"}}}});
  expect_validation({{"task", {{"probes", {{"one", 3}}}}}});
  expect_validation({{"task", {{"n", 0}}}});
  expect_validation({{"analysis", {{"folds", 1}}}});
  expect_validation({{"model", {{"kind", "transformer"}}}});
}

TEST(Artifacts, ManifestHashesContent) {
  const auto dir = scratch("manifest");
  Artifacts a;
  a.put("x.csv", "1,2\n");
  a.put_json("y.json", {{"k", 1}});
  a.flush(dir, "test", 9, {{"cfg", 1}});
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["seed"], 9);
  EXPECT_EQ(m["artifacts"]["x.csv"]["bytes"], 4);
  EXPECT_EQ(m["artifacts"]["x.csv"]["fnv1a64"], hex64(fnv1a64("1,2\n")));
  EXPECT_EQ(slurp(dir / "x.csv"), "1,2\n");
}

// ---------------------------------------------------------------- decode pipeline

TEST(Decode, SeparatedSurrogateDecodesWell) {
  const auto counts = window_counts(surrogate_session(simple_spec(3.0, 11)), 0.0, 2500.0);
  AnalysisSection a;
  a.iterations = 3;
  a.baseline_draws = 50;
  const auto o = analyze_counts(counts, a, 1);
  EXPECT_GT(o.decode.mean_accuracy, 0.9);
  EXPECT_LT(o.baseline.z, 0.0);
}

// ---------------------------------------------------------------- CLI

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("synth --help"), 0);
  EXPECT_EQ(run_cli(""), kExitUsage);
  EXPECT_EQ(run_cli("synth --bogus 1 --out /tmp/x"), kExitUsage);
  EXPECT_EQ(run_cli("synth"), kExitUsage);
  EXPECT_EQ(run_cli("frobnicate"), kExitUsage);
}

TEST(Cli, SurrogateThenDecode) {
  const auto dir = scratch("cli_decode");
  spit(dir / "spec.json", to_json(simple_spec(2.0, 1)).dump());
  spit(dir / "cfg.json", R"({"analysis": {"iterations": 2, "baseline_draws": 20}})");
  ASSERT_EQ(run_cli("surrogate --spec " + (dir / "spec.json").string() + " --out " + (dir / "s.ndjson").string()), 0);
  const auto session = parse_spike_file((dir / "s.ndjson").string());
  EXPECT_EQ(session, surrogate_session(simple_spec(2.0, 1)));

  const std::string base = "decode --spikes " + (dir / "s.ndjson").string() + " --config " + (dir / "cfg.json").string();
  ASSERT_EQ(run_cli(base + " --out " + (dir / "d1").string()), 0);
  ASSERT_EQ(run_cli(base + " --out " + (dir / "d2").string()), 0);
  for (const char* f : {"counts.csv", "decode.csv", "decode.json", "rsa.json", "margin.json", "baseline.json",
                        "config.json", "manifest.json"}) {
    ASSERT_TRUE(fs::exists(dir / "d1" / f)) << f;
    EXPECT_EQ(slurp(dir / "d1" / f), slurp(dir / "d2" / f)) << f;
  }
  EXPECT_EQ(run_cli(base + " --out " + (dir / "d3").string() + " --exclude surrogate"), kExitExcluded);
  EXPECT_FALSE(fs::exists(dir / "d3"));
}

TEST(Cli, InvalidInputsMapToExitCodes) {
  const auto dir = scratch("cli_invalid");
  spit(dir / "bad_spec.json", R"({"rates_target_hz": [1], "rates_nontarget_hz": [1, 2]})");
  EXPECT_EQ(run_cli("surrogate --spec " + (dir / "bad_spec.json").string() + " --out " + (dir / "x").string()),
            kExitUsage);
  spit(dir / "bad_cfg.json", R"({"train": {"epochs": -1}})");
  EXPECT_EQ(run_cli("synth --config " + (dir / "bad_cfg.json").string() + " --out " + (dir / "o").string()),
            kExitValidation);
  EXPECT_FALSE(fs::exists(dir / "o"));
  spit(dir / "bad.ndjson", "{\"session\": 1}\n");
  EXPECT_EQ(run_cli("decode --spikes " + (dir / "bad.ndjson").string() + " --out " + (dir / "o").string()),
            kExitValidation);
  spit(dir / "blowup.json", R"({"train": {"epochs": 5, "lr": 1e30}, "model": {"widths": [16]}})");
  EXPECT_EQ(run_cli("synth --config " + (dir / "blowup.json").string() + " --out " + (dir / "o").string()),
            kExitNumeric);
  EXPECT_FALSE(fs::exists(dir / "o"));
}

TEST(Cli, SynthAndReversalByteIdentical) {
  const auto dir = scratch("cli_determinism");
  spit(dir / "synth.json",
       R"({"task": {"k": 40, "n": 4, "m_nontargets": 20, "probes": {"1": 5, "2": 5}, "d_embed": 10},
           "model": {"widths": [16]}, "train": {"epochs": 60, "eval_every": 5, "target_upweight": 20},
           "analysis": {"baseline_draws": 20}})");
  spit(dir / "rev.json", R"({"reversal": {"N": 200, "T_list": [0.5, 1.0], "horizon": 5}})");
  for (const char* run : {"a", "b"}) {
    ASSERT_EQ(run_cli("synth --config " + (dir / "synth.json").string() + " --seed 3 --out " + (dir / run).string()), 0);
    ASSERT_EQ(run_cli("reversal --config " + (dir / "rev.json").string() + " --out " + (dir / run / "rev").string()), 0);
  }
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
  }
  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(m["seed"], 3);
  EXPECT_TRUE(m["artifacts"].contains("trainlog.csv"));
}

TEST(Config, ShippedConfigsLoad) {
  int seen = 0;
  for (const auto& e : fs::directory_iterator(OVERTRAIN_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    ++seen;
    if (e.path().filename() == "surrogate_spec.json") {
      EXPECT_NO_THROW(load_surrogate_spec(e.path().string()));
    } else {
      EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    }
  }
  EXPECT_GE(seen, 5);
}
