#ifndef SOFTPL_TOOLS_JSON_CONFIG_HPP
#define SOFTPL_TOOLS_JSON_CONFIG_HPP

// CLI11 config reader for JSON files: {"fuse": {"theta": 0.7}, "threads": 4}.
// Nested objects name subcommands; arrays become repeated values.

#include <algorithm>
#include <istream>
#include <iterator>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace softpl::cli {

class JsonConfig : public CLI::Config {
public:
  /// Top-level keys that are documentation only (e.g. preset listings).
  std::vector<std::string> skipped_keys{"release_preset"};

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json root;
    try {
      root = nlohmann::json::parse(std::string(std::istreambuf_iterator<char>(input), {}));
    } catch (const nlohmann::json::parse_error& e) {
      throw CLI::ConversionError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!root.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(root, {}, items);
    return items;
  }

private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  void collect(const nlohmann::json& obj, const std::vector<std::string>& parents,
               std::vector<CLI::ConfigItem>& items) const {
    for (const auto& [key, value] : obj.items()) {
      if (parents.empty() &&
          std::find(skipped_keys.begin(), skipped_keys.end(), key) != skipped_keys.end())
        continue;
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      items.push_back(std::move(item));
    }
  }

  static nlohmann::json dump(const CLI::App* app, bool default_also) {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (!opt->get_configurable() || opt->get_single_name().empty()) continue;
      const std::string name = opt->get_single_name();
      if (opt->count() > 0) {
        const auto& res = opt->results();
        if (res.size() == 1) j[name] = res.front();
        else j[name] = res;
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      auto nested = dump(sub, default_also);
      if (!nested.empty()) j[sub->get_name()] = std::move(nested);
    }
    return j;
  }
};

} // namespace softpl::cli

#endif // SOFTPL_TOOLS_JSON_CONFIG_HPP
