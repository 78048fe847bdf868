#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace featdistill::cli {

/// CLI11 config formatter for JSON files.
///
/// Top-level scalar keys apply to the subcommand being run, nested objects
/// address a subcommand by name, and a run manifest (an object carrying
/// "subcommand" and "config") replays its recorded "config" block. Other
/// keys are ignored by the caller's extras policy. Underscores in keys are
/// read as dashes, so "n_components" sets --n-components.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(const CLI::App* root = nullptr) : root_(root) {}

    std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                          std::string prefix) const override;
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override;

private:
    const CLI::App* root_;
};

/// Resolved option values of `app` (given, or captured defaults) keyed by
/// long option name. Values are strings, string arrays, or booleans for flags.
nlohmann::ordered_json resolved_options(const CLI::App& app);

}  // namespace featdistill::cli
