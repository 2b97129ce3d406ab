#include "mio/config.hpp"

#include <fstream>

#include <boost/property_tree/ini_parser.hpp>

namespace mio {

namespace pt = boost::property_tree;

namespace {
pt::ptree::path_type key_path(std::string_view key) {
  return pt::ptree::path_type(std::string(key), '.');
}
}  // namespace

Config Config::load(const std::filesystem::path& path) {
  Config cfg;
  try {
    pt::read_ini(path.string(), cfg.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw std::runtime_error("cannot read config " + path.string() + ": " + e.message());
  }
  return cfg;
}

Config Config::parse(std::string_view ini_text) {
  Config cfg;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, cfg.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument("malformed config: " + e.message());
  }
  return cfg;
}

bool Config::has(std::string_view key) const { return get(key).has_value(); }

std::optional<std::string> Config::get(std::string_view key) const {
  auto v = tree_.get_optional<std::string>(key_path(key));
  if (!v) return std::nullopt;
  return *v;
}

void Config::set(std::string_view key, std::string value) {
  tree_.put(key_path(key), std::move(value));
}

void Config::merge(const Config& overrides) {
  for (const auto& [section, children] : overrides.tree_) {
    if (children.empty()) {
      tree_.put(key_path(section), children.data());
      continue;
    }
    for (const auto& [key, value] : children) {
      tree_.put(key_path(section + "." + key), value.data());
    }
  }
}

std::string Config::to_ini() const {
  std::ostringstream out;
  pt::write_ini(out, tree_);
  return out.str();
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_ini();
}

}  // namespace mio
