#include "twinforge/runconfig.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace twinforge::cli {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, TomlValue> parse_toml(const std::string& text) {
  std::map<std::string, TomlValue> out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::runtime_error("toml line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw std::runtime_error("toml line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("toml line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw std::runtime_error("toml line " + std::to_string(lineno) + ": empty key or value");

    TomlValue v;
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') throw std::runtime_error("toml line " + std::to_string(lineno) + ": unterminated string");
      v.kind = TomlValue::Kind::string;
      v.str = value.substr(1, value.size() - 2);
    } else if (value == "true" || value == "false") {
      v.kind = TomlValue::Kind::boolean;
      v.flag = value == "true";
    } else {
      char* end = nullptr;
      v.num = std::strtod(value.c_str(), &end);
      if (end != value.c_str() + value.size()) throw std::runtime_error("toml line " + std::to_string(lineno) + ": bad value '" + value + "'");
      v.kind = TomlValue::Kind::number;
    }
    out[section.empty() ? key : section + "." + key] = v;
  }
  return out;
}

RunConfig RunConfig::defaults_for(gan::ScalePreset preset) {
  RunConfig c;
  c.apply_preset(preset);
  return c;
}

void RunConfig::apply_preset(gan::ScalePreset preset) {
  gan.apply_preset(preset);
  preprocess.segment_length = gan.signal_length;
}

namespace {

double expect_num(const TomlValue& v, const std::string& key) {
  if (v.kind != TomlValue::Kind::number) throw std::runtime_error("config key " + key + " must be a number");
  return v.num;
}

bool expect_bool(const TomlValue& v, const std::string& key) {
  if (v.kind != TomlValue::Kind::boolean) throw std::runtime_error("config key " + key + " must be a boolean");
  return v.flag;
}

std::string expect_str(const TomlValue& v, const std::string& key) {
  if (v.kind != TomlValue::Kind::string) throw std::runtime_error("config key " + key + " must be a string");
  return v.str;
}

}  // namespace

void RunConfig::apply_config_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  if (path.extension() == ".json" || text.starts_with("{")) {
    // manifest rerun path: lift the embedded config
    const json j = json::parse(text);
    *this = from_json_string(j.contains("config") ? j.at("config").dump() : text);
    return;
  }
  const auto kv = parse_toml(text);
  for (const auto& [key, v] : kv) {
    if (key == "gan.preset") {
      apply_preset(gan::preset_from_name(expect_str(v, key)));
    } else if (key == "gan.latent_dim") gan.latent_dim = int(expect_num(v, key));
    else if (key == "gan.signal_length") gan.signal_length = int(expect_num(v, key));
    else if (key == "gan.lr") gan.lr = expect_num(v, key);
    else if (key == "gan.beta1") gan.beta1 = expect_num(v, key);
    else if (key == "gan.beta2") gan.beta2 = expect_num(v, key);
    else if (key == "gan.epochs") gan.epochs = int(expect_num(v, key));
    else if (key == "gan.batch_size") gan.batch_size = int(expect_num(v, key));
    else if (key == "gan.leaky_slope") gan.leaky_slope = expect_num(v, key);
    else if (key == "preprocess.segment_length") preprocess.segment_length = int(expect_num(v, key));
    else if (key == "preprocess.overlap") preprocess.overlap = int(expect_num(v, key));
    else if (key == "preprocess.detrend") preprocess.detrend = expect_bool(v, key);
    else if (key == "preprocess.detrend_whole_record") preprocess.detrend_whole_record = expect_bool(v, key);
    else if (key == "preprocess.standardize") preprocess.standardize = expect_bool(v, key);
    else if (key == "preprocess.augmentation_noise_std") preprocess.augmentation_noise_std = expect_num(v, key);
    else if (key == "convergence.smoothing_window") convergence.smoothing_window = int(expect_num(v, key));
    else if (key == "convergence.threshold") convergence.threshold = expect_num(v, key);
    else if (key == "convergence.source") convergence.source = convergence::source_from_name(expect_str(v, key));
    else if (key == "convergence.ratio_threshold") ratio_threshold = expect_num(v, key);
    else if (key == "classifier.c") classifier.c = expect_num(v, key);
    else if (key == "classifier.epochs") classifier.epochs = int(expect_num(v, key));
    else if (key == "classifier.holdout_fraction") classifier.holdout_fraction = expect_num(v, key);
    else if (key == "classifier.generated_per_class") classifier.generated_per_class = int(expect_num(v, key));
    else if (key == "run.seed") seed = std::uint64_t(expect_num(v, key));
    else if (key == "run.threads") threads = int(expect_num(v, key));
    else throw std::runtime_error("unknown config key: " + key);
  }
}

void RunConfig::finalize() {
  gan.seed = seed;
  gan.validate();
  preprocess.validate();
  convergence.validate();
  if (preprocess.segment_length != gan.signal_length) {
    throw std::runtime_error("preprocess.segment_length must equal gan.signal_length (" +
                             std::to_string(preprocess.segment_length) + " vs " +
                             std::to_string(gan.signal_length) + ")");
  }
  if (!(ratio_threshold > 0.0)) throw std::runtime_error("ratio_threshold must be positive");
  if (classifier.generated_per_class < 1) throw std::runtime_error("generated_per_class must be >= 1");
}

std::string RunConfig::to_json_string() const {
  json j{{"gan", json::parse(gan.to_json_string())},
         {"preprocess",
          {{"segment_length", preprocess.segment_length},
           {"overlap", preprocess.overlap},
           {"detrend", preprocess.detrend},
           {"detrend_whole_record", preprocess.detrend_whole_record},
           {"standardize", preprocess.standardize},
           {"augmentation_noise_std", preprocess.augmentation_noise_std}}},
         {"convergence",
          {{"smoothing_window", convergence.smoothing_window},
           {"threshold", convergence.threshold},
           {"source", convergence::source_name(convergence.source)},
           {"ratio_threshold", ratio_threshold}}},
         {"classifier",
          {{"c", classifier.c},
           {"epochs", classifier.epochs},
           {"holdout_fraction", classifier.holdout_fraction},
           {"generated_per_class", classifier.generated_per_class}}},
         {"seed", seed},
         {"threads", threads}};
  return j.dump();
}

RunConfig RunConfig::from_json_string(const std::string& s) {
  const json j = json::parse(s);
  RunConfig c;
  c.gan = gan::GanConfig::from_json_string(j.at("gan").dump());
  const auto& p = j.at("preprocess");
  c.preprocess.segment_length = p.at("segment_length").get<int>();
  c.preprocess.overlap = p.at("overlap").get<int>();
  c.preprocess.detrend = p.at("detrend").get<bool>();
  c.preprocess.detrend_whole_record = p.at("detrend_whole_record").get<bool>();
  c.preprocess.standardize = p.at("standardize").get<bool>();
  c.preprocess.augmentation_noise_std = p.at("augmentation_noise_std").get<double>();
  const auto& cv = j.at("convergence");
  c.convergence.smoothing_window = cv.at("smoothing_window").get<int>();
  c.convergence.threshold = cv.at("threshold").get<double>();
  c.convergence.source = convergence::source_from_name(cv.at("source").get<std::string>());
  c.ratio_threshold = cv.at("ratio_threshold").get<double>();
  const auto& cl = j.at("classifier");
  c.classifier.c = cl.at("c").get<double>();
  c.classifier.epochs = cl.at("epochs").get<int>();
  c.classifier.holdout_fraction = cl.at("holdout_fraction").get<double>();
  c.classifier.generated_per_class = cl.at("generated_per_class").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.threads = j.at("threads").get<int>();
  return c;
}

int RunConfig::effective_threads() const {
  int t = threads > 0 ? threads : int(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  if (const char* cap = std::getenv("TWINFORGE_THREADS")) {
    const int c = std::atoi(cap);
    if (c >= 1) t = std::min(t, c);
  }
  return t;
}

void Manifest::add_input(const std::string& role, const std::filesystem::path& file,
                         const std::filesystem::path& base) {
  inputs.push_back({role, std::filesystem::relative(file, base).generic_string(),
                    hex64(hash_file(file))});
}

void Manifest::add_output(const std::string& role, const std::filesystem::path& file,
                          const std::filesystem::path& base) {
  outputs.push_back({role, std::filesystem::relative(file, base).generic_string(),
                     hex64(hash_file(file))});
}

void Manifest::write(const std::filesystem::path& path) const {
  json j{{"kind", "twinforge-manifest"},
         {"command", command},
         {"config", json::parse(config.to_json_string())}};
  auto dump_entries = [](const std::vector<ManifestEntry>& v) {
    json arr = json::array();
    for (const auto& e : v) arr.push_back({{"role", e.role}, {"path", e.path}, {"fnv64", e.fnv64}});
    return arr;
  };
  j["inputs"] = dump_entries(inputs);
  j["outputs"] = dump_entries(outputs);
  write_text_file(path, j.dump(2) + "\n");
}

Manifest Manifest::read(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path));
  if (j.value("kind", "") != "twinforge-manifest")
    throw std::runtime_error("not a twinforge manifest: " + path.string());
  Manifest m;
  m.command = j.at("command").get<std::string>();
  m.config = RunConfig::from_json_string(j.at("config").dump());
  auto load_entries = [](const json& arr, std::vector<ManifestEntry>& v) {
    for (const auto& e : arr) {
      v.push_back({e.at("role").get<std::string>(), e.at("path").get<std::string>(),
                   e.at("fnv64").get<std::string>()});
    }
  };
  load_entries(j.at("inputs"), m.inputs);
  load_entries(j.at("outputs"), m.outputs);
  return m;
}

namespace {
std::filesystem::path resolve_entry(const std::vector<ManifestEntry>& entries,
                                    const std::string& role, const std::filesystem::path& base,
                                    const char* what) {
  for (const auto& e : entries) {
    if (e.role != role) continue;
    const auto path = base / e.path;
    if (!std::filesystem::exists(path))
      throw std::runtime_error(std::string("missing upstream ") + what + ": " + path.string());
    if (hex64(hash_file(path)) != e.fnv64)
      throw std::runtime_error(std::string("stale upstream ") + what + " (hash mismatch): " +
                               path.string());
    return path;
  }
  throw std::runtime_error(std::string("manifest has no ") + what + " with role '" + role + "'");
}
}  // namespace

std::filesystem::path Manifest::resolve_input(const std::string& role,
                                              const std::filesystem::path& base) const {
  return resolve_entry(inputs, role, base, "input");
}

std::filesystem::path Manifest::resolve_output(const std::string& role,
                                               const std::filesystem::path& base) const {
  return resolve_entry(outputs, role, base, "output");
}

}  // namespace twinforge::cli
