#include "fairgc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "fairgc/artifacts.hpp"
#include "fairgc/io.hpp"
#include "json.hpp"

namespace fairgc::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Rethrows phase failures with the phase name attached, preserving the error
// class so the CLI exit code survives.
template <typename F>
decltype(auto) phase(const char* name, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("phase ") + name + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string("phase ") + name + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string("phase ") + name + ": " + e.what());
  }
}

// Work happens in <out>.partial; commit() swaps it into place. Anything left
// behind by a failed run is removed on construction or destruction, so no
// partial artifact survives.
class StageDir {
 public:
  explicit StageDir(const std::string& out)
      : final_(out), partial_(out + ".partial") {
    if (fs::exists(final_) && !fs::is_empty(final_) &&
        !fs::exists(final_ / "run.json"))
      throw ConfigError("output directory " + out +
                        " exists and is not a previous run output");
    std::error_code ec;
    fs::remove_all(partial_, ec);
    fs::create_directories(partial_);
  }

  ~StageDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(partial_, ec);
    }
  }

  std::string path() const { return partial_.string(); }

  void commit() {
    std::error_code ec;
    fs::remove_all(final_, ec);
    fs::create_directories(final_.parent_path().empty() ? fs::path(".")
                                                        : final_.parent_path());
    fs::rename(partial_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, partial_;
  bool committed_ = false;
};

class PhaseTimer {
 public:
  void start() { t0_ = std::chrono::steady_clock::now(); }
  void stop(const std::string& name) {
    const auto t1 = std::chrono::steady_clock::now();
    seconds_.emplace_back(name, std::chrono::duration<double>(t1 - t0_).count());
    t0_ = t1;
  }
  std::string to_json(const std::string& command) const {
    json j;
    j["command"] = command;
    double total = 0;
    json phases = json::object();
    for (const auto& [name, sec] : seconds_) {
      phases[name] = sec;
      total += sec;
    }
    j["phases"] = phases;
    j["total_seconds"] = total;
    return j.dump(2) + "\n";
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> seconds_;
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cur = trim(cur);
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

double parse_double_value(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: " + v);
  }
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a nonnegative integer: " + v);
  }
}

std::size_t parse_size_value(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64_value(key, v));
}

bool parse_bool_value(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false: " + v);
}

fairnet::FairNetConfig make_net_config(const PipelineConfig& cfg) {
  fairnet::FairNetConfig nc;
  nc.layers = cfg.layers;
  nc.hidden = cfg.hidden;
  nc.dropout = cfg.dropout;
  nc.epochs = cfg.epochs;
  nc.lr_max = cfg.lr_max;
  nc.lr_min = cfg.lr_min;
  nc.weight_decay = cfg.weight_decay;
  nc.smoothing = cfg.smoothing;
  nc.curriculum_epochs = cfg.curriculum_epochs;
  nc.d_enc = cfg.d_enc;
  nc.heads = cfg.heads;
  nc.disable_fairness = cfg.disable_fairness;
  nc.frozen_spectral = cfg.frozen_spectral;
  nc.seed = cfg.seed;
  return nc;
}

std::map<std::string, std::string> collect_artifacts(const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel =
        fs::relative(entry.path(), fs::path(dir)).generic_string();
    out[rel] = hash_hex(io::file_hash(entry.path().string()));
  }
  return out;
}

void write_run_manifest(const std::string& dir, const std::string& command,
                        const json& config_snapshot, const PhaseTimer& timer) {
  json run;
  run["type"] = "run";
  run["tool_version"] = kToolVersion;
  run["format_version"] = 1;
  run["command"] = command;
  run["config"] = config_snapshot;
  json artifacts = json::object();
  for (const auto& [name, hash] : collect_artifacts(dir)) artifacts[name] = hash;
  run["artifacts"] = artifacts;
  io::write_text_file_atomic(dir + "/run.json", run.dump(2) + "\n");
  // Wall-clock times vary run to run; keeping them out of run.json keeps
  // every hashed artifact byte-deterministic.
  io::write_text_file_atomic(dir + "/timings.json", timer.to_json(command));
}

graph::Graph load_raw(const PipelineConfig& cfg) {
  graph::NodeTableSchema schema;
  schema.id_column = cfg.id_column;
  schema.label_column = cfg.label_column;
  schema.sensitive_column = cfg.sensitive_column;
  schema.feature_columns = cfg.feature_columns;
  return graph::load_graph(cfg.nodes_path, cfg.edges_path, schema);
}

graph::Graph with_split(const PipelineConfig& cfg, const graph::Graph& raw) {
  if (!cfg.split_file.empty()) {
    graph::Graph g = raw;
    graph::apply_split_file(g, cfg.split_file);
    return g;
  }
  graph::SplitFractions f;
  f.train = cfg.train_frac;
  f.val = cfg.val_frac;
  f.test = cfg.test_frac;
  return graph::split_graph(raw, f, cfg.seed);
}

spectral::SpectralBasis compute_basis(const PipelineConfig& cfg,
                                      const condense::CondensedGraph& cg) {
  const std::size_t k = cfg.spectral_k != 0
                            ? cfg.spectral_k
                            : std::min<std::size_t>(32, cg.num_syn);
  const num::EigenWhich which = cfg.spectral_largest ? num::EigenWhich::Largest
                                                     : num::EigenWhich::Smallest;
  num::Tensor2 lap = spectral::normalized_laplacian(cg.adjacency);
  spectral::SpectralBasis basis = spectral::spectral_basis(lap, k, which);
  basis.source_hash = cg.content_hash();
  return basis;
}

struct SeedResult {
  std::uint64_t seed = 0;
  real_t accuracy = 0, delta_sp = 0, delta_eo = 0;
};

metrics::FairnessReport evaluate_on_test(const PipelineConfig& cfg,
                                         const graph::Graph& g,
                                         const condense::CondensedGraph& cg,
                                         const fairnet::FairNetParams& params) {
  if (g.test_idx.empty()) throw DataError("test split is empty");
  if (g.features.cols != params.input_dim ||
      g.num_classes != params.num_classes)
    throw DataError("dataset shape does not match the checkpoint");
  num::Tensor2 raw(g.test_idx.size(), g.features.cols);
  std::vector<int> y, s;
  for (std::size_t r = 0; r < g.test_idx.size(); ++r) {
    const std::uint32_t idx = g.test_idx[r];
    for (std::size_t j = 0; j < raw.cols; ++j) raw(r, j) = g.features(idx, j);
    y.push_back(g.labels[idx]);
    s.push_back(g.sensitive[idx]);
  }
  const num::Tensor2 x =
      fairnet::standardize(raw, cg.feature_mean, cg.feature_std);
  const std::vector<int> preds =
      fairnet::argmax_labels(fairnet::predict(params, x, nullptr));
  return metrics::evaluate_predictions(preds, y, s, cfg.positive_class,
                                       cfg.group_partition);
}

std::string percent_cell(real_t fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * fraction;
  return os.str();
}

std::string render_single(const metrics::FairnessReport& r) {
  std::ostringstream os;
  os << std::setw(10) << "ACC(%)" << std::setw(10) << "dSP(%)" << std::setw(10)
     << "dEO(%)" << '\n'
     << std::setw(10) << percent_cell(r.accuracy) << std::setw(10)
     << percent_cell(r.delta_sp) << std::setw(10) << percent_cell(r.delta_eo)
     << '\n';
  return os.str();
}

std::string render_seeds(const std::vector<SeedResult>& rows,
                         const SeedResult& mean, const SeedResult& stdev) {
  std::ostringstream os;
  os << std::setw(8) << "seed" << std::setw(10) << "ACC(%)" << std::setw(10)
     << "dSP(%)" << std::setw(10) << "dEO(%)" << '\n';
  for (const SeedResult& r : rows)
    os << std::setw(8) << r.seed << std::setw(10) << percent_cell(r.accuracy)
       << std::setw(10) << percent_cell(r.delta_sp) << std::setw(10)
       << percent_cell(r.delta_eo) << '\n';
  os << std::setw(8) << "mean" << std::setw(10) << percent_cell(mean.accuracy)
     << std::setw(10) << percent_cell(mean.delta_sp) << std::setw(10)
     << percent_cell(mean.delta_eo) << '\n'
     << std::setw(8) << "std" << std::setw(10) << percent_cell(stdev.accuracy)
     << std::setw(10) << percent_cell(stdev.delta_sp) << std::setw(10)
     << percent_cell(stdev.delta_eo) << '\n';
  return os.str();
}

}  // namespace

void PipelineConfig::validate() const {
  if (nodes_path.empty() || edges_path.empty())
    throw ConfigError("dataset paths (nodes, edges) must be set");
  if (train_frac <= 0 || val_frac < 0 || test_frac < 0 ||
      train_frac + val_frac + test_frac > 1.0 + 1e-9)
    throw ConfigError("split fractions must be nonnegative, train > 0, sum <= 1");
  if (!(rho > 0 && rho < 1)) throw ConfigError("rho must lie in (0,1)");
  if (proxy_steps < 1) throw ConfigError("proxy_steps must be >= 1");
  if (!(proxy_lr > 0)) throw ConfigError("proxy_lr must be positive");
  if (!(proxy_clip > 0)) throw ConfigError("proxy_clip must be positive");
  if (proxy_hidden < 1) throw ConfigError("proxy_hidden must be >= 1");
  if (k_sparse < 1) throw ConfigError("k_sparse must be >= 1");
  if (sparse_threshold < 1) throw ConfigError("sparse_threshold must be >= 1");
  if (positive_class < 0) throw ConfigError("positive_class must be >= 0");
  for (int v : group_partition)
    if (v != 0 && v != 1)
      throw ConfigError("group_partition entries must be 0 or 1");
  if (eval_seeds < 1) throw ConfigError("eval_seeds must be >= 1");
  make_net_config(*this).validate();
}

std::string PipelineConfig::to_json() const {
  json j;
  j["nodes"] = nodes_path;
  j["edges"] = edges_path;
  j["split_file"] = split_file;
  j["id_column"] = id_column;
  j["label_column"] = label_column;
  j["sensitive_column"] = sensitive_column;
  j["feature_columns"] = feature_columns;
  j["train_frac"] = train_frac;
  j["val_frac"] = val_frac;
  j["test_frac"] = test_frac;
  j["seed"] = seed;
  j["rho"] = rho;
  j["proxy_steps"] = proxy_steps;
  j["proxy_lr"] = proxy_lr;
  j["proxy_clip"] = proxy_clip;
  j["proxy_hidden"] = proxy_hidden;
  j["k_sparse"] = k_sparse;
  j["k_dense"] = k_dense;
  j["sparse_threshold"] = sparse_threshold;
  j["joint_allocation"] = joint_allocation;
  j["random_coreset"] = random_coreset;
  j["spectral_k"] = spectral_k;
  j["d_enc"] = d_enc;
  j["heads"] = heads;
  j["spectral_largest"] = spectral_largest;
  j["frozen_spectral"] = frozen_spectral;
  j["layers"] = layers;
  j["hidden"] = hidden;
  j["dropout"] = dropout;
  j["epochs"] = epochs;
  j["lr_max"] = lr_max;
  j["lr_min"] = lr_min;
  j["weight_decay"] = weight_decay;
  j["smoothing"] = smoothing;
  j["curriculum_epochs"] = curriculum_epochs;
  j["disable_fairness"] = disable_fairness;
  j["positive_class"] = positive_class;
  j["group_partition"] = group_partition;
  j["eval_seeds"] = eval_seeds;
  return j.dump(2);
}

void apply_override(PipelineConfig& cfg, const std::string& key,
                    const std::string& value) {
  if (key == "nodes") cfg.nodes_path = value;
  else if (key == "edges") cfg.edges_path = value;
  else if (key == "split_file") cfg.split_file = value;
  else if (key == "id_column") cfg.id_column = value;
  else if (key == "label_column") cfg.label_column = value;
  else if (key == "sensitive_column") cfg.sensitive_column = value;
  else if (key == "feature_columns") cfg.feature_columns = split_list(value);
  else if (key == "train_frac") cfg.train_frac = parse_double_value(key, value);
  else if (key == "val_frac") cfg.val_frac = parse_double_value(key, value);
  else if (key == "test_frac") cfg.test_frac = parse_double_value(key, value);
  else if (key == "seed") cfg.seed = parse_u64_value(key, value);
  else if (key == "rho") cfg.rho = parse_double_value(key, value);
  else if (key == "proxy_steps") cfg.proxy_steps = parse_size_value(key, value);
  else if (key == "proxy_lr") cfg.proxy_lr = parse_double_value(key, value);
  else if (key == "proxy_clip") cfg.proxy_clip = parse_double_value(key, value);
  else if (key == "proxy_hidden") cfg.proxy_hidden = parse_size_value(key, value);
  else if (key == "k_sparse") cfg.k_sparse = parse_size_value(key, value);
  else if (key == "k_dense") cfg.k_dense = parse_size_value(key, value);
  else if (key == "sparse_threshold")
    cfg.sparse_threshold = parse_size_value(key, value);
  else if (key == "joint_allocation")
    cfg.joint_allocation = parse_bool_value(key, value);
  else if (key == "random_coreset")
    cfg.random_coreset = parse_bool_value(key, value);
  else if (key == "spectral_k") cfg.spectral_k = parse_size_value(key, value);
  else if (key == "d_enc") cfg.d_enc = parse_size_value(key, value);
  else if (key == "heads") cfg.heads = parse_size_value(key, value);
  else if (key == "spectral_largest")
    cfg.spectral_largest = parse_bool_value(key, value);
  else if (key == "frozen_spectral")
    cfg.frozen_spectral = parse_bool_value(key, value);
  else if (key == "layers") cfg.layers = parse_size_value(key, value);
  else if (key == "hidden") cfg.hidden = parse_size_value(key, value);
  else if (key == "dropout") cfg.dropout = parse_double_value(key, value);
  else if (key == "epochs") cfg.epochs = parse_size_value(key, value);
  else if (key == "lr_max") cfg.lr_max = parse_double_value(key, value);
  else if (key == "lr_min") cfg.lr_min = parse_double_value(key, value);
  else if (key == "weight_decay")
    cfg.weight_decay = parse_double_value(key, value);
  else if (key == "smoothing") cfg.smoothing = parse_double_value(key, value);
  else if (key == "curriculum_epochs")
    cfg.curriculum_epochs = parse_size_value(key, value);
  else if (key == "disable_fairness")
    cfg.disable_fairness = parse_bool_value(key, value);
  else if (key == "positive_class")
    cfg.positive_class = static_cast<int>(parse_u64_value(key, value));
  else if (key == "group_partition") {
    cfg.group_partition.clear();
    for (const std::string& tok : split_list(value))
      cfg.group_partition.push_back(
          static_cast<int>(parse_u64_value(key, tok)));
  } else if (key == "eval_seeds") {
    cfg.eval_seeds = parse_size_value(key, value);
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

PipelineConfig load_config(const std::string& path) {
  const std::string text = io::read_text_file(path);
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    try {
      apply_override(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void make_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  if (spec.n < 50) throw ConfigError("make-synthetic: n must be >= 50");
  if (!(spec.gamma >= 0 && spec.gamma <= 1))
    throw ConfigError("make-synthetic: gamma must lie in [0,1]");
  if (!(spec.homophily >= 0 && spec.homophily <= 1))
    throw ConfigError("make-synthetic: homophily must lie in [0,1]");
  if (spec.feature_dim < 2)
    throw ConfigError("make-synthetic: feature_dim must be >= 2");
  if (!(spec.mean_degree > 0))
    throw ConfigError("make-synthetic: mean_degree must be positive");

  PhaseTimer timer;
  const std::size_t n = spec.n;
  const std::size_t d = spec.feature_dim;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<int> y(n), s(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = unit(rng) < 0.5 ? 0 : 1;
  const double agree_p = (1.0 + spec.gamma) / 2.0;
  for (std::size_t i = 0; i < n; ++i)
    s[i] = unit(rng) < agree_p ? y[i] : 1 - y[i];

  // The first quarter of the dims separates the classes; the rest carries a
  // one-sided group shift, so the sensitive attribute is readable only from
  // features that are label-redundant given s. Per-dim amplitudes shrink as
  // the blocks widen, keeping the collective class separation and group
  // readout (in d' units) fixed: wider benchmarks trade per-dim signal for
  // breadth at the same Bayes operating point.
  constexpr double kClassSeparation = 2.83;
  constexpr double kGroupReadout = 2.42;
  const std::size_t d_class = std::max<std::size_t>(1, d / 4);
  const double class_amp =
      kClassSeparation / (2.0 * std::sqrt(static_cast<double>(d_class)));
  const double group_amp =
      kGroupReadout / std::sqrt(static_cast<double>(d - d_class));
  num::Tensor2 x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double class_shift =
          j < d_class ? (y[i] == 1 ? class_amp : -class_amp) : 0.0;
      const double group_shift = j >= d_class && s[i] == 1 ? group_amp : 0.0;
      x(i, j) = gauss(rng) + class_shift + group_shift;
    }
  }

  // Calibrate the block model so the expected mean degree hits the target:
  // a quarter of node pairs share a (y,s) block, so
  // E[deg] ~ n/4 * a*h + 3n/4 * a*(1-h) = a*n*(3-2h)/4.
  const double a = 4.0 * spec.mean_degree /
                   (static_cast<double>(n) * (3.0 - 2.0 * spec.homophily));
  const double p_in = std::min(1.0, a * spec.homophily);
  const double p_out = std::min(1.0, a * (1.0 - spec.homophily));
  std::ostringstream edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same = y[i] == y[j] && s[i] == s[j];
      if (unit(rng) < (same ? p_in : p_out))
        edges << i << ' ' << j << '\n';
    }
  }

  std::ostringstream nodes;
  nodes << "id";
  for (std::size_t j = 0; j < d; ++j) nodes << ",f" << j;
  nodes << ",label,sensitive\n";
  for (std::size_t i = 0; i < n; ++i) {
    nodes << i;
    for (std::size_t j = 0; j < d; ++j) nodes << ',' << format_real(x(i, j));
    nodes << ',' << y[i] << ',' << s[i] << '\n';
  }
  timer.stop("generate");

  StageDir stage(out_dir);
  io::write_text_file_atomic(stage.path() + "/nodes.csv", nodes.str());
  io::write_text_file_atomic(stage.path() + "/edges.txt", edges.str());
  timer.stop("persist");

  json snapshot;
  snapshot["n"] = spec.n;
  snapshot["gamma"] = spec.gamma;
  snapshot["homophily"] = spec.homophily;
  snapshot["seed"] = spec.seed;
  snapshot["feature_dim"] = spec.feature_dim;
  snapshot["mean_degree"] = spec.mean_degree;
  write_run_manifest(stage.path(), "make-synthetic", snapshot, timer);
  stage.commit();
}

graph::Graph load_dataset(const PipelineConfig& cfg) {
  return phase("load-dataset",
               [&] { return with_split(cfg, load_raw(cfg)); });
}

condense::CondensedGraph condense_graph(const PipelineConfig& cfg,
                                        const graph::Graph& g) {
  condense::CondensedGraph cg;
  cg.seed = cfg.seed;
  cg.rho = cfg.rho;
  cg.num_classes = g.num_classes;
  cg.num_groups = g.num_groups;
  cg.source_stats = phase("stats", [&] { return graph::empirical_stats(g); });
  const std::size_t n_syn =
      phase("budget", [&] { return condense::compute_budget(g.num_nodes, cfg.rho); });
  cg.num_syn = n_syn;

  if (cfg.random_coreset) {
    phase("coreset", [&] {
      if (n_syn > g.train_idx.size())
        throw DataError("random coreset larger than the training split");
      std::vector<std::uint32_t> pool = g.train_idx;
      std::mt19937_64 rng(cfg.seed);
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(n_syn);
      num::Tensor2 block(n_syn, g.features.cols);
      for (std::size_t i = 0; i < n_syn; ++i) {
        for (std::size_t j = 0; j < g.features.cols; ++j)
          block(i, j) = g.features(pool[i], j);
        cg.labels.push_back(g.labels[pool[i]]);
        cg.sensitive.push_back(g.sensitive[pool[i]]);
      }
      cg.feature_mean.assign(block.cols, 0);
      cg.feature_std.assign(block.cols, 0);
      for (std::size_t j = 0; j < block.cols; ++j) {
        real_t m = 0;
        for (std::size_t i = 0; i < n_syn; ++i) m += block(i, j);
        m /= static_cast<real_t>(n_syn);
        real_t v = 0;
        for (std::size_t i = 0; i < n_syn; ++i) {
          const real_t dlt = block(i, j) - m;
          v += dlt * dlt;
        }
        cg.feature_mean[j] = m;
        cg.feature_std[j] = std::sqrt(v / static_cast<real_t>(n_syn));
      }
      cg.features = num::Tensor2(n_syn, block.cols);
      for (std::size_t i = 0; i < n_syn; ++i)
        for (std::size_t j = 0; j < block.cols; ++j)
          cg.features(i, j) =
              (block(i, j) - cg.feature_mean[j]) / (cg.feature_std[j] + real_t(1e-8));
      cg.notes.push_back(
          "random coreset: allocation and feature distillation skipped");
    });
  } else {
    condense::Allocation alloc = phase("allocate", [&] {
      return condense::allocate_attributes(cg.source_stats, n_syn, cfg.seed,
                                           cfg.joint_allocation);
    });
    condense::InitResult init = phase("init-features", [&] {
      return condense::init_features(g, alloc.labels, alloc.sensitive, cfg.seed);
    });
    condense::DistillResult dist = phase("distill", [&] {
      condense::ProxyNet proxy(g.features.cols, cfg.proxy_hidden, g.num_classes,
                               cfg.seed);
      return condense::distill_features(init.features, alloc.labels, proxy,
                                        cfg.proxy_steps, cfg.proxy_lr,
                                        cfg.proxy_clip);
    });
    cg.labels = std::move(alloc.labels);
    cg.sensitive = std::move(alloc.sensitive);
    cg.features = std::move(dist.features);
    cg.feature_mean = std::move(init.mean);
    cg.feature_std = std::move(init.stddev);
    cg.loss_trace = std::move(dist.loss_trace);
    cg.distill_best_step = dist.best_step;
    for (auto* notes : {&alloc.notes, &init.notes, &dist.notes})
      cg.notes.insert(cg.notes.end(), notes->begin(), notes->end());
  }

  phase("adjacency", [&] {
    condense::AdjacencyOptions opts;
    opts.k_sparse = cfg.k_sparse;
    opts.k_dense = cfg.k_dense;
    opts.source_mean_degree = g.mean_degree();
    opts.sparse_threshold = cfg.sparse_threshold;
    condense::Adjacency adj = condense::build_adjacency(cg.features, opts);
    cg.adjacency = std::move(adj.matrix);
    cg.edges = std::move(adj.edges);
    cg.knn_k = adj.k_used;
    cg.sparse_track = adj.sparse_track;
    cg.notes.insert(cg.notes.end(), adj.notes.begin(), adj.notes.end());
  });
  return cg;
}

std::string basis_cache_dir(const std::string& condensed_dir) {
  if (const char* env = std::getenv("FAIRGC_CACHE_DIR"); env && *env)
    return std::string(env);
  return condensed_dir + "/basis";
}

spectral::SpectralBasis spectral_phase(const PipelineConfig& cfg,
                                       const condense::CondensedGraph& cg,
                                       const std::string& cache_dir) {
  return phase("spectral", [&]() -> spectral::SpectralBasis {
    if (cfg.disable_fairness) return {};
    const std::size_t k = cfg.spectral_k != 0
                              ? cfg.spectral_k
                              : std::min<std::size_t>(32, cg.num_syn);
    const num::EigenWhich which = cfg.spectral_largest
                                      ? num::EigenWhich::Largest
                                      : num::EigenWhich::Smallest;
    std::uint64_t key = cg.content_hash();
    key = fnv1a64(&k, sizeof(k), key);
    key = fnv1a64(&which, sizeof(which), key);
    const std::string dir = cache_dir + "/" + hash_hex(key);
    if (io::file_exists(dir + "/manifest.json")) {
      try {
        spectral::SpectralBasis cached = spectral::load_basis(dir);
        if (cached.source_hash == cg.content_hash() && cached.K == k &&
            cached.which == which)
          return cached;
      } catch (const std::exception&) {
        // Unreadable cache entries are recomputed below.
      }
    }
    spectral::SpectralBasis basis = compute_basis(cfg, cg);
    spectral::save_basis(basis, dir);
    return basis;
  });
}

fairnet::TrainLog train_phase(const PipelineConfig& cfg,
                              const condense::CondensedGraph& cg,
                              const spectral::SpectralBasis& basis,
                              const graph::Graph& g,
                              fairnet::FairNetParams& params) {
  return phase("train", [&] {
    params = fairnet::FairNetParams(cg.features.cols, cg.num_classes,
                                    make_net_config(cfg));
    fairnet::TrainOptions opts;
    opts.positive_class = cfg.positive_class;
    opts.group_partition = cfg.group_partition;
    return fairnet::train(params, cg, basis, g, opts);
  });
}

void run_condense(const PipelineConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  PhaseTimer timer;
  const graph::Graph g = load_dataset(cfg);
  timer.stop("load-dataset");
  const condense::CondensedGraph cg = condense_graph(cfg, g);
  timer.stop("condense");
  StageDir stage(out_dir);
  phase("persist", [&] { condense::save_condensed(cg, stage.path()); });
  timer.stop("persist");
  write_run_manifest(stage.path(), "condense", json::parse(cfg.to_json()), timer);
  stage.commit();
}

void run_train(const PipelineConfig& cfg, const std::string& condensed_dir,
               const std::string& out_dir) {
  cfg.validate();
  PhaseTimer timer;
  const condense::CondensedGraph cg = phase(
      "load-condensed", [&] { return condense::load_condensed(condensed_dir); });
  const graph::Graph g = load_dataset(cfg);
  timer.stop("load");
  const spectral::SpectralBasis basis =
      spectral_phase(cfg, cg, basis_cache_dir(condensed_dir));
  timer.stop("spectral");
  fairnet::FairNetParams params;
  const fairnet::TrainLog log = train_phase(cfg, cg, basis, g, params);
  timer.stop("train");
  StageDir stage(out_dir);
  phase("persist", [&] {
    fairnet::save_checkpoint(params, log, cg.content_hash(), stage.path());
  });
  timer.stop("persist");
  write_run_manifest(stage.path(), "train", json::parse(cfg.to_json()), timer);
  stage.commit();
}

EvalOutcome run_evaluate(const PipelineConfig& cfg,
                         const std::string& checkpoint_dir,
                         const std::string& condensed_dir,
                         const std::string& out_dir) {
  cfg.validate();
  PhaseTimer timer;
  const condense::CondensedGraph cg = phase(
      "load-condensed", [&] { return condense::load_condensed(condensed_dir); });
  fairnet::Checkpoint ck = phase(
      "load-checkpoint", [&] { return fairnet::load_checkpoint(checkpoint_dir); });
  if (ck.condensed_hash != cg.content_hash())
    throw DataError(
        "checkpoint was trained on a different condensed graph (stale artifacts)");
  const graph::Graph g = load_dataset(cfg);
  timer.stop("load");
  const metrics::FairnessReport report =
      phase("evaluate", [&] { return evaluate_on_test(cfg, g, cg, ck.params); });
  timer.stop("evaluate");

  EvalOutcome out;
  out.table = render_single(report);
  out.json = report.to_json();
  if (!out_dir.empty()) {
    StageDir stage(out_dir);
    io::write_text_file_atomic(stage.path() + "/report.json", out.json + "\n");
    io::write_text_file_atomic(stage.path() + "/report.txt", out.table);
    timer.stop("persist");
    write_run_manifest(stage.path(), "evaluate", json::parse(cfg.to_json()), timer);
    stage.commit();
  }
  return out;
}

EvalOutcome run_evaluate_seeds(const PipelineConfig& cfg,
                               const std::string& out_dir) {
  cfg.validate();
  PhaseTimer timer;
  const graph::Graph raw = phase("load-dataset", [&] { return load_raw(cfg); });
  timer.stop("load");

  std::vector<SeedResult> rows;
  json per_seed = json::array();
  for (std::size_t i = 0; i < cfg.eval_seeds; ++i) {
    PipelineConfig sub = cfg;
    sub.seed = cfg.seed + i;
    const graph::Graph g =
        phase("split", [&] { return with_split(sub, raw); });
    const condense::CondensedGraph cg = condense_graph(sub, g);
    const spectral::SpectralBasis basis =
        phase("spectral", [&] { return sub.disable_fairness
                                           ? spectral::SpectralBasis{}
                                           : compute_basis(sub, cg); });
    fairnet::FairNetParams params;
    train_phase(sub, cg, basis, g, params);
    const metrics::FairnessReport report =
        phase("evaluate", [&] { return evaluate_on_test(sub, g, cg, params); });
    SeedResult row;
    row.seed = sub.seed;
    row.accuracy = report.accuracy;
    row.delta_sp = report.delta_sp;
    row.delta_eo = report.delta_eo;
    rows.push_back(row);
    json jr;
    jr["seed"] = row.seed;
    jr["accuracy"] = row.accuracy;
    jr["delta_sp"] = row.delta_sp;
    jr["delta_eo"] = row.delta_eo;
    per_seed.push_back(jr);
    timer.stop("seed-" + std::to_string(sub.seed));
  }

  auto agg = [&](auto field) {
    const std::size_t m = rows.size();
    real_t mean = 0;
    for (const SeedResult& r : rows) mean += r.*field;
    mean /= static_cast<real_t>(m);
    real_t var = 0;
    for (const SeedResult& r : rows) {
      const real_t d = r.*field - mean;
      var += d * d;
    }
    const real_t stdev =
        m > 1 ? std::sqrt(var / static_cast<real_t>(m - 1)) : real_t(0);
    return std::pair<real_t, real_t>(mean, stdev);
  };
  SeedResult mean, stdev;
  std::tie(mean.accuracy, stdev.accuracy) = agg(&SeedResult::accuracy);
  std::tie(mean.delta_sp, stdev.delta_sp) = agg(&SeedResult::delta_sp);
  std::tie(mean.delta_eo, stdev.delta_eo) = agg(&SeedResult::delta_eo);

  EvalOutcome out;
  out.table = render_seeds(rows, mean, stdev);
  json j;
  j["eval_seeds"] = cfg.eval_seeds;
  j["base_seed"] = cfg.seed;
  j["per_seed"] = per_seed;
  j["mean"] = {{"accuracy", mean.accuracy},
               {"delta_sp", mean.delta_sp},
               {"delta_eo", mean.delta_eo}};
  j["std"] = {{"accuracy", stdev.accuracy},
              {"delta_sp", stdev.delta_sp},
              {"delta_eo", stdev.delta_eo}};
  out.json = j.dump(2);
  if (!out_dir.empty()) {
    StageDir stage(out_dir);
    io::write_text_file_atomic(stage.path() + "/report.json", out.json + "\n");
    io::write_text_file_atomic(stage.path() + "/report.txt", out.table);
    timer.stop("persist");
    write_run_manifest(stage.path(), "evaluate", json::parse(cfg.to_json()), timer);
    stage.commit();
  }
  return out;
}

AuditOutcome run_audit(const PipelineConfig& cfg, const std::string& condensed_dir,
                       const std::string& out_dir) {
  cfg.validate();
  PhaseTimer timer;
  const condense::CondensedGraph cg = phase(
      "load-condensed", [&] { return condense::load_condensed(condensed_dir); });
  const graph::Graph g = load_dataset(cfg);
  timer.stop("load");
  const metrics::DriftTable table =
      phase("audit", [&] { return metrics::audit_condensation(g, cg); });
  timer.stop("audit");

  AuditOutcome out;
  out.table = table.render();
  out.json = table.to_json();
  out.ok = table.violations.empty();
  if (!out_dir.empty()) {
    StageDir stage(out_dir);
    io::write_text_file_atomic(stage.path() + "/audit.json", out.json + "\n");
    io::write_text_file_atomic(stage.path() + "/audit.txt", out.table);
    timer.stop("persist");
    write_run_manifest(stage.path(), "audit", json::parse(cfg.to_json()), timer);
    stage.commit();
  }
  return out;
}

}  // namespace fairgc::pipeline
