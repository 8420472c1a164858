#include "boxboot/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace boxboot {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("bad numeric value for '" + key + "': " + v);
  }
  return out;
}

long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long out = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("bad integer value for '" + key + "': " + v);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("bad boolean value for '" + key + "': " + v);
}

LossVariant parse_variant(const std::string& v) {
  if (v == "BcePlain") return LossVariant::BcePlain;
  if (v == "L2Unc") return LossVariant::L2Unc;
  if (v == "BceUncBootstrap") return LossVariant::BceUncBootstrap;
  if (v == "MultiClass") return LossVariant::MultiClass;
  throw ConfigError("unknown loss_variant: " + v);
}

RegionMode parse_region(const std::string& v) {
  if (v == "UncAll") return RegionMode::UncAll;
  if (v == "UncBoxOnly") return RegionMode::UncBoxOnly;
  throw ConfigError("unknown region_mode: " + v);
}

// "a..b" inclusive range, or a single integer.
void parse_range(const std::string& key, const std::string& v, int* lo,
                 int* hi) {
  const std::size_t dots = v.find("..");
  if (dots == std::string::npos) {
    *lo = *hi = static_cast<int>(parse_int(key, v));
    return;
  }
  *lo = static_cast<int>(parse_int(key, v.substr(0, dots)));
  *hi = static_cast<int>(parse_int(key, v.substr(dots + 2)));
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": empty key or value");
    }

    if (key == "width") {
      cfg.scene.width = static_cast<int>(parse_int(key, value));
    } else if (key == "height") {
      cfg.scene.height = static_cast<int>(parse_int(key, value));
    } else if (key == "classes") {
      cfg.scene.classes = static_cast<int>(parse_int(key, value));
    } else if (key == "objects_per_image") {
      parse_range(key, value, &cfg.scene.objects_min, &cfg.scene.objects_max);
    } else if (key == "jitter_max") {
      cfg.scene.jitter_max = static_cast<int>(parse_int(key, value));
    } else if (key == "seed") {
      const long seed = parse_int(key, value);
      if (seed < 0) throw ConfigError("seed must be >= 0");
      cfg.scene.seed = static_cast<std::uint64_t>(seed);
      cfg.train.seed = static_cast<std::uint64_t>(seed);
    } else if (key == "pp_ratio") {
      cfg.pp_ratio = parse_real(key, value);
    } else if (key == "export_masks") {
      cfg.export_masks = parse_bool(key, value);
    } else if (key == "loss_variant") {
      cfg.train.loss_variant = parse_variant(value);
    } else if (key == "region_mode") {
      cfg.train.region_mode = parse_region(value);
    } else if (key == "tau") {
      cfg.train.tau = parse_real(key, value);
    } else if (key == "slope") {
      cfg.train.slope = parse_real(key, value);
    } else if (key == "lr") {
      cfg.train.lr = parse_real(key, value);
    } else if (key == "batch_size") {
      cfg.train.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "pp_sampling_chance") {
      cfg.train.pp_sampling_chance = parse_real(key, value);
    } else if (key == "t_samples") {
      cfg.train.t_samples = static_cast<int>(parse_int(key, value));
    } else if (key == "steps") {
      cfg.train.steps = static_cast<int>(parse_int(key, value));
    } else if (key == "eval_every") {
      cfg.train.eval_every = static_cast<int>(parse_int(key, value));
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

}  // namespace boxboot
