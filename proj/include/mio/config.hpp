#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <boost/property_tree/ptree.hpp>

namespace mio {

// Key/value configuration with sections, stored as INI text:
//
//   [train]
//   strategy = sequential
//
// Keys are addressed as "section.key".
class Config {
 public:
  static Config load(const std::filesystem::path& path);
  static Config parse(std::string_view ini_text);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;

  template <typename T>
  T get_or(std::string_view key, T fallback) const {
    auto raw = get(key);
    if (!raw) return fallback;
    if constexpr (std::is_same_v<T, std::string>) {
      return *raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      return *raw == "true" || *raw == "1" || *raw == "yes" || *raw == "on";
    } else {
      std::istringstream in(*raw);
      T value{};
      in >> value;
      if (in.fail()) {
        throw std::invalid_argument("config key '" + std::string(key) +
                                    "' has unparsable value '" + *raw + "'");
      }
      return value;
    }
  }

  void set(std::string_view key, std::string value);
  template <typename T>
  void set(std::string_view key, const T& value) {
    if constexpr (std::is_convertible_v<T, std::string>) {
      set(key, std::string(value));
    } else {
      std::ostringstream out;
      out.precision(17);
      out << value;
      set(key, out.str());
    }
  }

  // Values from `overrides` replace values here.
  void merge(const Config& overrides);

  std::string to_ini() const;
  void save(const std::filesystem::path& path) const;

 private:
  boost::property_tree::ptree tree_;
};

}  // namespace mio
