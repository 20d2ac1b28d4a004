#pragma once

// Flat `key = value` run configuration. Every key has a default; unknown keys
// are rejected. Values from a config file are overridden by command-line flags.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "asldn/error.hpp"

namespace asldn {

// Per-frame noise std that puts the pseudo gold standard's ROI SNR near 6 on
// 64x64 phantoms.
inline constexpr double kDefaultSigma = 125.0;

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "1", "master seed; all subsystem seeds derive from it"},
      {"out", "", "output directory"},
      {"dataset", "", "dataset directory (train/eval)"},
      {"weights", "", "weight file (eval)"},
      // simulate
      {"subjects", "35", "number of subjects; must equal the split total"},
      {"split", "20,5,10", "train,val,test subject counts"},
      {"height", "64", "slice height in pixels"},
      {"width", "64", "slice width in pixels"},
      {"sigma", "125", "per-frame noise std (mL/100g/min)"},
      {"outlier_rate", "0", "fraction of outlier frames per series"},
      {"outlier_scale", "10", "noise multiplier and spike height (in sigmas) on outlier frames"},
      {"noise_corr_px", "0", "Gaussian correlation length of the noise field; 0 = white"},
      {"fwhm_px", "1.5", "pseudo gold standard smoothing FWHM in pixels"},
      // network
      {"base_channels", "32", "feature channels between blocks"},
      {"expansion_channels", "128", "channels inside each wide-activation block"},
      {"blocks", "4", "residual blocks per pathway"},
      {"dilations", "2,4,8,16", "dilation of the first conv in each global block"},
      // train
      {"mode", "lfn", "lfn: noisy segment references; gold: pseudo gold standard references"},
      {"loss", "l1", "l1 or l2"},
      {"batch_size", "64", "samples per optimizer step"},
      {"micro_batch", "8", "samples per forward/backward graph"},
      {"epochs", "50", "training epochs"},
      {"lr", "0.001", "ADAM learning rate"},
      {"shuffle", "true", "reshuffle samples every epoch"},
      {"checkpoint_every", "10", "epochs between checkpoints and validation"},
      {"intensity_scale", "64", "CBF values are divided by this before entering the network"},
      // eval
      {"method", "dwan", "method label used in report rows"},
      {"display_max", "120", "upper end of the 0..display_max CBF window for PGM panels"},
      {"corr_threshold", "0.3", "correlation map threshold"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_keys())
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    require(known(key), ErrorCode::Config, "unknown config key '" + key + "'");
    values_[key] = value;
  }

  void parse(std::istream& is, const std::string& source = "config") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      const auto key = trim(line.substr(0, eq));
      if (key.empty() && eq == std::string::npos) continue;
      require(eq != std::string::npos && !key.empty(), ErrorCode::Config,
              source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      set(key, trim(line.substr(eq + 1)));
    }
  }

  void load(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorCode::Io, "cannot open config " + path.string());
    parse(is, path.string());
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::Config, "unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::Config, key + ": expected a number, got '" + s + "'");
  }

  std::uint64_t integer(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      if (!s.empty() && s[0] != '-') {
        auto v = std::stoull(s, &used);
        if (used == s.size()) return v;
      }
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::Config, key + ": expected a non-negative integer, got '" + s + "'");
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error(ErrorCode::Config, key + ": expected true/false, got '" + s + "'");
  }

  std::vector<std::uint64_t> integer_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      try {
        std::size_t used = 0;
        if (!item.empty() && item[0] != '-') {
          out.push_back(std::stoull(item, &used));
          if (used == item.size()) continue;
        }
      } catch (const std::exception&) {
      }
      throw Error(ErrorCode::Config, key + ": bad list element '" + item + "'");
    }
    return out;
  }

  std::filesystem::path path(const std::string& key) const {
    const auto& s = str(key);
    require(!s.empty(), ErrorCode::Config, "'" + key + "' must be set");
    return s;
  }

  // Resolved configuration in file syntax, keys in declaration order.
  void echo(std::ostream& os) const {
    for (const auto& k : config_keys()) os << k.name << " = " << str(k.name) << '\n';
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace asldn
