#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mixpinn::cli {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"seed", "0"},
      {"jobs", "1"},
      {"workdir", "run"},
      {"phantom.size", "160 80 80"},
      {"phantom.cells", "16 8 8"},
      {"phantom.inclusions", "25 20 35 75 60 65; 85 20 35 135 60 65"},
      {"material.young_modulus", "25400"},
      {"material.poisson_ratio", "0.45"},
      {"sweep.positions", "6 4"},
      {"sweep.grid_spacing", "10"},
      {"sweep.footprint", "20 5"},
      {"sweep.depth_steps", "10"},
      {"sweep.step_depth", "1"},
      {"sweep.linear_only", "false"},
      {"split.ratios", "0.7 0.2 0.1"},
      {"split.seed", "0"},
      {"graph.vn", "false"},
      {"graph.ve", "false"},
      {"model.layers", "8"},
      {"model.heads", "2"},
      {"model.hidden", "32"},
      {"model.edge_features", "false"},
      {"model.negative_slope", "0.01"},
      {"train.batch_size", "4"},
      {"train.lr", "0.0005"},
      {"train.plateau_factor", "0.1"},
      {"train.plateau_patience", "5"},
      {"train.min_lr", "1e-8"},
      {"train.early_stop_patience", "15"},
      {"train.weight_decay", "0.01"},
      {"train.rel", "false"},
      {"train.lambda", "1"},
      {"train.rel_virtual_edges", "true"},
      {"train.max_epochs", "100"},
      {"eval.split", "test"},
      {"predict.sample", "0"},
      {"profile.samples", "60"},
      {"profile.warmup", "5"},
  };
  return table;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("config: unknown key '" + key + "'");
  it->second = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("config: unknown key '" + key + "'");
  return it->second;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw UsageError(path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(text).substr(0, eq));
    if (!values_.contains(key))
      throw UsageError(path.string() + ":" + std::to_string(number) + ": unknown key '" + key + "'");
    set(key, text.substr(eq + 1));
  }
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

int RunConfig::integer(const std::string& key) const {
  const std::string& s = get(key);
  long long v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || v < std::numeric_limits<int>::min() ||
      v > std::numeric_limits<int>::max())
    throw UsageError("config: " + key + " = '" + s + "' is not an integer");
  return static_cast<int>(v);
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw UsageError("config: " + key + " = '" + s + "' is not a number");
  return v;
}

bool RunConfig::boolean(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError("config: " + key + " = '" + s + "' is not a boolean");
}

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::string s = get(key);
  for (char& c : s)
    if (c == ';' || c == ',') c = ' ';
  std::vector<double> out;
  std::istringstream in(s);
  std::string token;
  while (in >> token) {
    double v = 0;
    const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || end != token.data() + token.size())
      throw UsageError("config: " + key + " contains '" + token + "', not a number");
    out.push_back(v);
  }
  return out;
}

namespace {

std::vector<double> exactly(const RunConfig& c, const std::string& key, std::size_t count) {
  auto v = c.reals(key);
  if (v.size() != count) throw UsageError("config: " + key + " needs " + std::to_string(count) + " values");
  return v;
}

}  // namespace

std::uint64_t RunConfig::seed() const {
  const int s = integer("seed");
  if (s < 0) throw UsageError("config: seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

int RunConfig::jobs() const {
  const int j = integer("jobs");
  if (j < 1) throw UsageError("config: jobs must be >= 1");
  return j;
}

std::filesystem::path RunConfig::workdir() const { return get("workdir"); }

PhantomConfig RunConfig::phantom() const {
  PhantomConfig p;
  const auto size = exactly(*this, "phantom.size", 3);
  p.dimensions = Vec3(size[0], size[1], size[2]);
  const auto cells = exactly(*this, "phantom.cells", 3);
  for (int k = 0; k < 3; ++k) {
    const double c = cells[static_cast<std::size_t>(k)];
    if (c != std::floor(c)) throw UsageError("config: phantom.cells must be integers");
    p.cells[static_cast<std::size_t>(k)] = static_cast<int>(c);
  }
  const auto boxes = reals("phantom.inclusions");
  if (boxes.size() % 6 != 0) throw UsageError("config: phantom.inclusions needs 6 values per box");
  for (std::size_t b = 0; b < boxes.size(); b += 6)
    p.inclusions.push_back(Box{Vec3(boxes[b], boxes[b + 1], boxes[b + 2]), Vec3(boxes[b + 3], boxes[b + 4], boxes[b + 5])});
  p.seed = seed();
  p.validate();
  return p;
}

SweepConfig RunConfig::sweep() const {
  SweepConfig s;
  s.material.young_modulus = real("material.young_modulus");
  s.material.poisson_ratio = real("material.poisson_ratio");
  s.material.validate();
  const auto positions = exactly(*this, "sweep.positions", 2);
  s.probe.positions_x = static_cast<int>(positions[0]);
  s.probe.positions_y = static_cast<int>(positions[1]);
  s.probe.grid_spacing = real("sweep.grid_spacing");
  const auto footprint = exactly(*this, "sweep.footprint", 2);
  s.probe.half_long = footprint[0];
  s.probe.half_short = footprint[1];
  s.probe.depth_steps = integer("sweep.depth_steps");
  s.probe.step_depth = real("sweep.step_depth");
  s.probe.validate();
  s.geometry_update = !boolean("sweep.linear_only");
  s.jobs = jobs();
  return s;
}

std::array<double, 3> RunConfig::split_ratios() const {
  const auto r = exactly(*this, "split.ratios", 3);
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw UsageError("config: split.ratios must sum to 1");
  return {r[0], r[1], r[2]};
}

std::uint64_t RunConfig::split_seed() const {
  const int s = integer("split.seed");
  if (s < 0) throw UsageError("config: split.seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

ExperimentConfig RunConfig::experiment(int rigid_count) const {
  ExperimentConfig e;
  e.model.layers = integer("model.layers");
  e.model.heads = integer("model.heads");
  e.model.hidden = integer("model.hidden");
  e.model.use_edge_features = boolean("model.edge_features");
  e.model.negative_slope = real("model.negative_slope");
  e.model.rigid_count = rigid_count;
  e.model.seed = seed();
  e.model.validate();
  TrainConfig& t = e.train;
  t.batch_size = integer("train.batch_size");
  t.initial_lr = real("train.lr");
  t.plateau_factor = real("train.plateau_factor");
  t.plateau_patience = integer("train.plateau_patience");
  t.min_lr = real("train.min_lr");
  t.early_stop_patience = integer("train.early_stop_patience");
  t.weight_decay = real("train.weight_decay");
  t.rel = boolean("train.rel");
  t.rel_weight = real("train.lambda");
  t.rel_virtual_edges = boolean("train.rel_virtual_edges");
  t.max_epochs = integer("train.max_epochs");
  t.seed = seed();
  t.validate();
  e.augment.virtual_nodes = boolean("graph.vn");
  e.augment.virtual_edges = boolean("graph.ve");
  return e;
}

void RunConfig::validate() const {
  (void)workdir();
  (void)phantom();
  (void)sweep();
  (void)split_ratios();
  (void)split_seed();
  (void)experiment(static_cast<int>(phantom().inclusions.size()));
  const std::string& split = get("eval.split");
  if (split != "train" && split != "val" && split != "test")
    throw UsageError("config: eval.split must be train, val or test");
  if (integer("predict.sample") < 0) throw UsageError("config: predict.sample must be >= 0");
  if (integer("profile.samples") < 1 || integer("profile.warmup") < 0)
    throw UsageError("config: profile.samples must be >= 1 and profile.warmup >= 0");
}

}  // namespace mixpinn::cli
